//! Diversity sampling function.
//!
//! A network maps the past trajectory to `N` latent codes at once. The codes
//! are decoded by a frozen cVAE decoder into a ground set, a DPP kernel is
//! built over that set (similarity in trajectory space, quality in latent
//! space) and the network is trained to maximize the kernel's expected
//! cardinality. At inference the ground set is pruned by greedy MAP.
//!
//! The same sampler architecture also backs the multiple-choice-learning
//! baseline ([`train_mcl`]) and the NLL / cosine variants selected through
//! [`DsfTrainConfig`]. [`forecast_cvae_ldpp`] runs MAP inference directly on
//! prior latent samples instead.

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::cvae::CvaeModel;
use crate::dpp::{self, QualityConfig, SimilarityMode};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nn::{adam_step, AdamConfig, AdamState, Checkpoint, DenseNet, ForwardTrace, NetworkRecord, ParamStore};
use crate::seeding::{derive_seed, rng_from_seed, standard_normal_vec};
use crate::synthdata::DataExample;
use crate::trajectory::Trajectory;

pub const DSF_CHECKPOINT_KIND: &str = "dsf";

const STREAM_INIT: u64 = 11;
const STREAM_SHUFFLE: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DsfLossMode {
    /// Negative expected cardinality.
    #[default]
    Cardinality,
    /// Negative log-likelihood of the whole ground set.
    Nll,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DsfTrainConfig {
    /// Sampling budget `N`.
    pub n_samples: usize,
    pub hidden: usize,
    /// Similarity scale `k`.
    pub k: f64,
    /// Base quality used while training.
    pub omega: f64,
    /// Percentile of prior mass inside the quality sphere.
    pub percentile: f64,
    pub lr: f64,
    pub epochs: usize,
    pub loss: DsfLossMode,
    pub similarity: SimilarityMode,
    /// Diagonal offset for the NLL loss.
    pub nll_diag_eps: f64,
}

impl Default for DsfTrainConfig {
    fn default() -> Self {
        Self {
            n_samples: 10,
            hidden: 128,
            k: 1.0,
            omega: 1.0,
            percentile: 90.0,
            lr: 1e-4,
            epochs: 20,
            loss: DsfLossMode::Cardinality,
            similarity: SimilarityMode::Gaussian,
            nll_diag_eps: 0.0,
        }
    }
}

impl DsfTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.hidden == 0 {
            return Err(Error::config("n_samples and hidden must be positive"));
        }
        if !(self.k > 0.0) || !(self.omega > 0.0) || !(self.lr > 0.0) {
            return Err(Error::config("k, omega and lr must be positive"));
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::config("percentile must lie in (0, 100)"));
        }
        if !(self.nll_diag_eps >= 0.0) {
            return Err(Error::config("nll_diag_eps must be non-negative"));
        }
        Ok(())
    }

    pub fn quality(&self, latent_dim: usize) -> Result<QualityConfig> {
        QualityConfig::new(self.omega, self.percentile, latent_dim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsfHeader {
    pub n_samples: usize,
    pub latent_dim: usize,
    pub context_dim: usize,
    pub config: DsfTrainConfig,
}

/// Sampler network plus the kernel settings it was trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct DsfModel {
    pub net: DenseNet,
    pub params: ParamStore,
    pub latent_dim: usize,
    pub config: DsfTrainConfig,
    init_seed: u64,
}

impl DsfModel {
    pub fn new(cfg: &DsfTrainConfig, context_dim: usize, latent_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let net = DenseNet::mlp(vec![context_dim, cfg.hidden, cfg.n_samples * latent_dim])?;
        let init_seed = derive_seed(seed, STREAM_INIT, 0);
        let mut rng = rng_from_seed(init_seed);
        let mut params = net.init_params(&mut rng);
        // output bias drawn from the prior so the initial codes spread like prior samples
        let bias = net.bias_name(net.num_layers() - 1).to_string();
        let bias = params.get_mut(&bias).expect("output bias exists");
        bias.data = standard_normal_vec(&mut rng, bias.data.len());
        Ok(Self {
            net,
            params,
            latent_dim,
            config: cfg.clone(),
            init_seed,
        })
    }

    /// Sampler matching a trained cVAE's context and latent sizes.
    pub fn for_cvae(cfg: &DsfTrainConfig, cvae: &CvaeModel, seed: u64) -> Result<Self> {
        Self::new(cfg, cvae.shape.past_len(), cvae.latent_dim, seed)
    }

    pub fn n_samples(&self) -> usize {
        self.config.n_samples
    }

    pub fn context_dim(&self) -> usize {
        self.net.input_dim()
    }

    fn split_codes(&self, out: &[f64]) -> Vec<Vec<f64>> {
        out.chunks_exact(self.latent_dim).map(<[f64]>::to_vec).collect()
    }

    /// The `N` latent codes for a context; output `i·D_z + j` is code `i`, component `j`.
    pub fn propose_latents(&self, h: &Trajectory) -> Result<Vec<Vec<f64>>> {
        let out = self.net.forward(&self.params, h.as_flat())?;
        Ok(self.split_codes(&out))
    }

    /// Decodes every proposed code under the same context.
    pub fn ground_set(&self, cvae: &CvaeModel, h: &Trajectory) -> Result<Vec<Trajectory>> {
        self.check_cvae(cvae)?;
        self.propose_latents(h)?.iter().map(|z| cvae.decode(z, h)).collect()
    }

    fn check_cvae(&self, cvae: &CvaeModel) -> Result<()> {
        if cvae.latent_dim != self.latent_dim || cvae.shape.past_len() != self.context_dim() {
            return Err(Error::config(format!(
                "sampler (D_z = {}, context {}) does not fit cVAE (D_z = {}, context {})",
                self.latent_dim,
                self.context_dim(),
                cvae.latent_dim,
                cvae.shape.past_len()
            )));
        }
        Ok(())
    }

    pub fn header(&self) -> DsfHeader {
        DsfHeader {
            n_samples: self.n_samples(),
            latent_dim: self.latent_dim,
            context_dim: self.context_dim(),
            config: self.config.clone(),
        }
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint<DsfHeader>> {
        Ok(Checkpoint::new(DSF_CHECKPOINT_KIND, self.header()).with_network(
            "sampler",
            NetworkRecord::new(self.net.clone(), self.init_seed, self.params.clone())?,
        ))
    }

    pub fn from_checkpoint(ckpt: &Checkpoint<DsfHeader>) -> Result<Self> {
        let rec = ckpt.network("sampler")?;
        let h = &ckpt.header;
        if rec.architecture.input_dim() != h.context_dim
            || rec.architecture.output_dim() != h.n_samples * h.latent_dim
            || h.config.n_samples != h.n_samples
        {
            return Err(Error::parse("dsf checkpoint", "network sizes disagree with header"));
        }
        Ok(Self {
            net: rec.architecture.clone(),
            params: rec.params.clone(),
            latent_dim: h.latent_dim,
            config: h.config.clone(),
            init_seed: rec.init_seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path, DSF_CHECKPOINT_KIND)?)
    }
}

/// Loss for one context and, when it is finite, the sampler gradient.
#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Option<ParamStore>,
}

struct GroundSetTrace {
    sampler: ForwardTrace,
    codes: Vec<Vec<f64>>,
    decoded: Vec<ForwardTrace>,
}

fn trace_ground_set(model: &DsfModel, cvae: &CvaeModel, h: &Trajectory) -> Result<GroundSetTrace> {
    model.check_cvae(cvae)?;
    let sampler = model.net.forward_trace(&model.params, h.as_flat())?;
    let codes = model.split_codes(sampler.output());
    let decoded = codes
        .iter()
        .map(|z| cvae.decode_trace(z, h))
        .collect::<Result<Vec<_>>>()?;
    let outputs = codes
        .iter()
        .map(Vec::as_slice)
        .chain(decoded.iter().map(ForwardTrace::output));
    if outputs.flatten().any(|v| !v.is_finite()) {
        return Err(Error::optimization("dsf", "sampler produced a non-finite ground set"));
    }
    Ok(GroundSetTrace {
        sampler,
        codes,
        decoded,
    })
}

/// `∂S_ij/∂x_i` for the configured similarity.
fn similarity_grad(mode: SimilarityMode, k: f64, s_ij: f64, xi: &[f64], xj: &[f64]) -> Vec<f64> {
    match mode {
        SimilarityMode::Gaussian => xi.iter().zip(xj).map(|(a, b)| -2.0 * k * s_ij * (a - b)).collect(),
        SimilarityMode::Cosine => {
            let ni = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nj = xj.iter().map(|v| v * v).sum::<f64>().sqrt();
            xi.iter()
                .zip(xj)
                .map(|(a, b)| b / (ni * nj) - s_ij * a / (ni * ni))
                .collect()
        }
    }
}

/// Diversity loss of the decoded ground set and its gradient with respect to
/// the sampler parameters only; the decoder is held fixed.
///
/// The kernel gradient `G = ∂loss/∂L` is pushed back through
/// `L_ij = r_i S_ij r_j`, the similarity (`∂S_ij/∂x_i = −2k S_ij (x_i − x_j)` in
/// Gaussian mode), the decoder Jacobian and the quality branch
/// (`∂r_i/∂z_i = −2 z_i r_i` outside the sphere, zero inside).
pub fn dsf_loss_and_grad(model: &DsfModel, cvae: &CvaeModel, h: &Trajectory) -> Result<LossAndGrad> {
    let cfg = &model.config;
    let trace = trace_ground_set(model, cvae, h)?;
    let xs: Vec<&[f64]> = trace.decoded.iter().map(ForwardTrace::output).collect();
    let quality_cfg = cfg.quality(model.latent_dim)?;
    let similarity = dpp::similarity_from_vectors(&xs, cfg.k, cfg.similarity)?;
    let quality = dpp::quality_vector(&trace.codes, &quality_cfg);
    let kernel = dpp::build_kernel(similarity, quality)?;
    let l = &kernel.kernel;

    let (loss, g) = match cfg.loss {
        DsfLossMode::Cardinality => {
            let loss = dpp::diversity_loss(l)?;
            if !loss.is_finite() {
                return Err(Error::optimization("dsf", format!("non-finite diversity loss {loss}")));
            }
            (loss, dpp::diversity_loss_grad(l)?)
        }
        DsfLossMode::Nll => {
            let loss = dpp::nll_loss(l, cfg.nll_diag_eps)?;
            if !loss.is_finite() {
                return Ok(LossAndGrad { loss, grads: None });
            }
            match dpp::nll_loss_grad(l, cfg.nll_diag_eps) {
                Ok(g) => (loss, g),
                Err(Error::Numerical(_)) => {
                    return Ok(LossAndGrad {
                        loss: f64::INFINITY,
                        grads: None,
                    })
                }
                Err(e) => return Err(e),
            }
        }
    };

    let grads = backprop_kernel(model, cvae, &trace, &kernel, &g, &quality_cfg)?;
    if grads.first_non_finite().is_some() {
        if cfg.loss == DsfLossMode::Nll {
            return Ok(LossAndGrad { loss, grads: None });
        }
        return Err(Error::optimization("dsf", "non-finite sampler gradient"));
    }
    Ok(LossAndGrad {
        loss,
        grads: Some(grads),
    })
}

fn backprop_kernel(
    model: &DsfModel,
    cvae: &CvaeModel,
    trace: &GroundSetTrace,
    kernel: &dpp::DppKernel,
    g: &Matrix,
    quality_cfg: &QualityConfig,
) -> Result<ParamStore> {
    let cfg = &model.config;
    let n = trace.codes.len();
    let s = &kernel.similarity;
    let r = &kernel.quality;
    let xs: Vec<&[f64]> = trace.decoded.iter().map(ForwardTrace::output).collect();

    let mut upstream = Vec::with_capacity(n * model.latent_dim);
    for i in 0..n {
        let mut dx = vec![0.0; xs[i].len()];
        for j in (0..n).filter(|&j| j != i) {
            // S_ij and S_ji are the same function of x_i
            let weight = 2.0 * g[(i, j)] * r[i] * r[j];
            if weight == 0.0 {
                continue;
            }
            let ds = similarity_grad(cfg.similarity, cfg.k, s[(i, j)], xs[i], xs[j]);
            dx.iter_mut().zip(ds).for_each(|(d, v)| *d += weight * v);
        }
        let mut dz = cvae.decoder_latent_grad(&trace.decoded[i], &dx)?;
        let dr: f64 = 2.0 * (0..n).map(|j| g[(i, j)] * s[(i, j)] * r[j]).sum::<f64>();
        for (d, q) in dz.iter_mut().zip(quality_cfg.quality_grad(&trace.codes[i])) {
            *d += dr * q;
        }
        upstream.extend(dz);
    }
    let mut grads = model.params.zeros_like();
    model
        .net
        .backward_trace(&model.params, &trace.sampler, &upstream, &mut grads)?;
    Ok(grads)
}

/// Expected cardinality of the training-time kernel for one context.
pub fn expected_cardinality(model: &DsfModel, cvae: &CvaeModel, h: &Trajectory) -> Result<f64> {
    let cfg = &model.config;
    let codes = model.propose_latents(h)?;
    let set = model.ground_set(cvae, h)?;
    let s = dpp::similarity_matrix(&set, cfg.k, cfg.similarity)?;
    let r = dpp::quality_vector(&codes, &cfg.quality(model.latent_dim)?);
    dpp::expected_cardinality(&dpp::build_kernel(s, r)?.kernel)
}

pub fn mean_expected_cardinality(model: &DsfModel, cvae: &CvaeModel, data: &[DataExample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::config("no contexts to average over"));
    }
    let mut total = 0.0;
    for ex in data {
        total += expected_cardinality(model, cvae, &ex.past)?;
    }
    Ok(total / data.len() as f64)
}

/// A trained sampler with its per-epoch mean loss and the number of
/// skipped steps whose loss was not finite.
#[derive(Debug, Clone)]
pub struct DsfTraining {
    pub model: DsfModel,
    pub loss_trace: Vec<f64>,
    pub instability_events: usize,
}

/// Per-context Adam steps on the diversity loss. Only the sampler is updated.
///
/// In NLL mode a non-finite loss is counted as an instability event and the
/// step is skipped; the epoch mean then covers the finite steps only.
pub fn train_dsf(data: &[DataExample], cvae: &CvaeModel, cfg: &DsfTrainConfig, seed: u64) -> Result<DsfTraining> {
    let model = DsfModel::for_cvae(cfg, cvae, seed)?;
    run_training(model, data, seed, |m, ex| dsf_loss_and_grad(m, cvae, &ex.past))
}

/// Multiple-choice loss `min_i ‖x_i − x‖²` over the ground set, with the
/// gradient routed through the closest sample (lowest index on ties).
pub fn mcl_loss_and_grad(
    model: &DsfModel,
    cvae: &CvaeModel,
    h: &Trajectory,
    target: &Trajectory,
) -> Result<LossAndGrad> {
    let trace = trace_ground_set(model, cvae, h)?;
    let mut best: Option<(usize, f64)> = None;
    for (i, dec) in trace.decoded.iter().enumerate() {
        let d2: f64 = dec
            .output()
            .iter()
            .zip(target.as_flat())
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if best.is_none_or(|(_, b)| d2 < b) {
            best = Some((i, d2));
        }
    }
    let (winner, loss) = best.ok_or_else(|| Error::config("empty ground set"))?;
    let mut upstream = vec![0.0; trace.codes.len() * model.latent_dim];
    let dx: Vec<f64> = trace.decoded[winner]
        .output()
        .iter()
        .zip(target.as_flat())
        .map(|(a, b)| 2.0 * (a - b))
        .collect();
    let dz = cvae.decoder_latent_grad(&trace.decoded[winner], &dx)?;
    upstream[winner * model.latent_dim..(winner + 1) * model.latent_dim].copy_from_slice(&dz);
    let mut grads = model.params.zeros_like();
    model
        .net
        .backward_trace(&model.params, &trace.sampler, &upstream, &mut grads)?;
    Ok(LossAndGrad {
        loss,
        grads: Some(grads),
    })
}

pub fn train_mcl(data: &[DataExample], cvae: &CvaeModel, cfg: &DsfTrainConfig, seed: u64) -> Result<DsfTraining> {
    let model = DsfModel::for_cvae(cfg, cvae, seed)?;
    run_training(model, data, seed, |m, ex| {
        mcl_loss_and_grad(m, cvae, &ex.past, &ex.future)
    })
}

fn run_training<F>(mut model: DsfModel, data: &[DataExample], seed: u64, mut step: F) -> Result<DsfTraining>
where
    F: FnMut(&DsfModel, &DataExample) -> Result<LossAndGrad>,
{
    if data.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    let adam = AdamConfig::with_lr(model.config.lr);
    let mut state = AdamState::new(&model.params);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut loss_trace = Vec::with_capacity(model.config.epochs);
    let mut instability_events = 0;
    for epoch in 0..model.config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_from_seed(derive_seed(seed, STREAM_SHUFFLE, epoch as u64)));
        let (mut total, mut count) = (0.0, 0usize);
        for &i in &order {
            let out = step(&model, &data[i]).map_err(|e| match e {
                Error::Optimization { location, message } => Error::Optimization {
                    location: format!("sampler epoch {epoch}: {location}"),
                    message,
                },
                other => other,
            })?;
            match out.grads {
                Some(grads) if out.loss.is_finite() => {
                    adam_step(&mut model.params, &grads, &mut state, &adam)?;
                    total += out.loss;
                    count += 1;
                }
                _ => instability_events += 1,
            }
        }
        loss_trace.push(if count > 0 { total / count as f64 } else { f64::NAN });
    }
    Ok(DsfTraining {
        model,
        loss_trace,
        instability_events,
    })
}

/// Greedy-MAP forecast: the selected trajectories and their ground-set indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DiverseForecast {
    pub trajectories: Vec<Trajectory>,
    pub indices: Vec<usize>,
}

/// Decodes the ground set, builds the kernel with test-time base quality
/// `omega_test` and keeps the greedy MAP subset in selection order.
pub fn forecast_diverse(
    model: &DsfModel,
    cvae: &CvaeModel,
    h: &Trajectory,
    omega_test: f64,
) -> Result<DiverseForecast> {
    let cfg = &model.config;
    let codes = model.propose_latents(h)?;
    let set = model.ground_set(cvae, h)?;
    let quality_cfg = cfg.quality(model.latent_dim)?.with_base(omega_test)?;
    let s = dpp::similarity_matrix(&set, cfg.k, cfg.similarity)?;
    let kernel = dpp::build_kernel(s, dpp::quality_vector(&codes, &quality_cfg))?;
    let selection = dpp::greedy_map(&kernel.kernel)?;
    Ok(DiverseForecast {
        trajectories: selection.selected.iter().map(|&i| set[i].clone()).collect(),
        indices: selection.selected,
    })
}

/// Settings for MAP inference over prior latent samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LatentDppConfig {
    pub pool: usize,
    /// Gaussian similarity scale on latent distances.
    pub k: f64,
    pub percentile: f64,
    pub omega: f64,
}

impl Default for LatentDppConfig {
    fn default() -> Self {
        Self {
            pool: 100,
            k: 1.0,
            percentile: 90.0,
            omega: 1.0,
        }
    }
}

/// Draws `pool` prior codes, selects at most `n` of them by greedy MAP on a
/// latent-space kernel and decodes the selection.
pub fn forecast_cvae_ldpp(
    cvae: &CvaeModel,
    h: &Trajectory,
    n: usize,
    cfg: &LatentDppConfig,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    select_latents_ldpp(cvae.latent_dim, n, cfg, seed)?
        .iter()
        .map(|z| cvae.decode(z, h))
        .collect()
}

/// Latent codes picked by [`forecast_cvae_ldpp`], before decoding.
pub fn select_latents_ldpp(latent_dim: usize, n: usize, cfg: &LatentDppConfig, seed: u64) -> Result<Vec<Vec<f64>>> {
    if cfg.pool == 0 || n == 0 {
        return Ok(Vec::new());
    }
    let mut rng = rng_from_seed(seed);
    let codes: Vec<Vec<f64>> = (0..cfg.pool)
        .map(|_| standard_normal_vec(&mut rng, latent_dim))
        .collect();
    let rows: Vec<&[f64]> = codes.iter().map(Vec::as_slice).collect();
    let s = dpp::similarity_from_vectors(&rows, cfg.k, SimilarityMode::Gaussian)?;
    let quality = QualityConfig::new(cfg.omega, cfg.percentile, latent_dim)?;
    let kernel = dpp::build_kernel(s, dpp::quality_vector(&codes, &quality))?;
    let selection = dpp::greedy_map_capped(&kernel.kernel, n.min(cfg.pool))?;
    Ok(selection.selected.iter().map(|&i| codes[i].clone()).collect())
}
