//! Fixtures shared by the benchmarks.

use dsf_core::cvae::TrajectoryShape;
use dsf_core::dpp::{build_kernel, quality_vector, similarity_from_vectors};
use dsf_core::linalg::Matrix;
use dsf_core::seeding::{rng_from_seed, standard_normal_vec};
use dsf_core::synthdata::{generate, DataExample};
use dsf_core::{CvaeConfig, CvaeModel, DsfModel, DsfTrainConfig, QualityConfig, ScenarioConfig, SimilarityMode};

/// Quality-similarity kernel over `n` random latent codes in the plane.
pub fn latent_kernel(n: usize, seed: u64) -> Matrix {
    let mut rng = rng_from_seed(seed);
    let codes: Vec<Vec<f64>> = (0..n).map(|_| standard_normal_vec(&mut rng, 2)).collect();
    let items: Vec<&[f64]> = codes.iter().map(Vec::as_slice).collect();
    let s = similarity_from_vectors(&items, 1.0, SimilarityMode::Gaussian).unwrap();
    let q = QualityConfig::new(2.0, 90.0, 2).unwrap();
    build_kernel(s, quality_vector(&codes, &q)).unwrap().kernel
}

/// Untrained default-sized cVAE and sampler with one scenario example.
pub fn default_models(n_samples: usize, seed: u64) -> (CvaeModel, DsfModel, DataExample) {
    let ex = generate(&ScenarioConfig::balanced(), 1, seed).unwrap().remove(0);
    let shape = TrajectoryShape {
        future_steps: ex.future.steps(),
        past_steps: ex.past.steps(),
        dim: ex.future.dim(),
    };
    let cvae = CvaeModel::new(&CvaeConfig::default(), shape, seed).unwrap();
    let cfg = DsfTrainConfig {
        n_samples,
        ..DsfTrainConfig::default()
    };
    let dsf = DsfModel::for_cvae(&cfg, &cvae, seed + 1).unwrap();
    (cvae, dsf, ex)
}
