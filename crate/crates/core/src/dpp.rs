//! Determinantal point process kernels over trajectory sets.
//!
//! A kernel is assembled from a similarity matrix `S` and a per-item quality
//! vector `r` as `L = Diag(r) · S · Diag(r)`. Its expected cardinality
//! `Σ λ/(λ+1) = tr(I − (L+I)⁻¹)` is a smooth diversity measure that stays
//! finite when items repeat, unlike the log-likelihood `log det(L_Y) − log det(L+I)`.
//! MAP inference is approximated by greedy log-determinant maximization.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::special::chi_squared_ppf;
use crate::trajectory::Trajectory;

/// How pairwise similarity between items is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMode {
    /// `exp(-k · ‖a − b‖²)` on flattened items.
    #[default]
    Gaussian,
    /// Cosine of the angle between flattened items.
    Cosine,
}

/// Similarity matrix over trajectories, flattened to `T·D` vectors.
pub fn similarity_matrix(trajectories: &[Trajectory], k: f64, mode: SimilarityMode) -> Result<Matrix> {
    if trajectories.is_empty() {
        return Err(Error::config("similarity needs at least one trajectory"));
    }
    let shape = trajectories[0].shape();
    if trajectories.iter().any(|t| t.shape() != shape) {
        return Err(Error::config("all trajectories must share one shape"));
    }
    let rows: Vec<&[f64]> = trajectories.iter().map(Trajectory::as_flat).collect();
    similarity_from_vectors(&rows, k, mode)
}

/// Similarity matrix over arbitrary equal-length vectors.
pub fn similarity_from_vectors(items: &[&[f64]], k: f64, mode: SimilarityMode) -> Result<Matrix> {
    let n = items.len();
    if n == 0 {
        return Err(Error::config("similarity needs at least one item"));
    }
    if items.iter().any(|v| v.len() != items[0].len()) {
        return Err(Error::config("similarity items differ in length"));
    }
    if !(k > 0.0) && mode == SimilarityMode::Gaussian {
        return Err(Error::config(format!("similarity scale must be positive, got {k}")));
    }
    let mut s = Matrix::identity(n, n);
    match mode {
        SimilarityMode::Gaussian => {
            for i in 0..n {
                for j in (i + 1)..n {
                    let d2: f64 = items[i].iter().zip(items[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    let v = (-k * d2).exp();
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
        }
        SimilarityMode::Cosine => {
            let norms: Vec<f64> = items
                .iter()
                .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
                .collect();
            if let Some(i) = norms.iter().position(|&n| n == 0.0) {
                return Err(Error::Domain(format!(
                    "cosine similarity is undefined for zero-norm item {i}"
                )));
            }
            for i in 0..n {
                for j in (i + 1)..n {
                    let dot: f64 = items[i].iter().zip(items[j]).map(|(a, b)| a * b).sum();
                    let v = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
                    s[(i, j)] = v;
                    s[(j, i)] = v;
                }
            }
        }
    }
    Ok(s)
}

/// Radius `R` of the latent ball holding `percentile`% of standard normal mass
/// in `latent_dim` dimensions: `R² = χ²_ppf(percentile/100, latent_dim)`.
pub fn sphere_radius(percentile: f64, latent_dim: usize) -> Result<f64> {
    if !(percentile > 0.0 && percentile < 100.0) {
        return Err(Error::config(format!(
            "percentile must lie in (0, 100), got {percentile}"
        )));
    }
    Ok(chi_squared_ppf(percentile / 100.0, latent_dim)?.sqrt())
}

/// Latent-space quality: flat at `base` inside the radius-`R` ball, decaying
/// as `base · exp(R² − ‖z‖²)` outside it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityConfig {
    base: f64,
    percentile: f64,
    radius: f64,
}

impl QualityConfig {
    pub fn new(base: f64, percentile: f64, latent_dim: usize) -> Result<Self> {
        if !(base > 0.0) {
            return Err(Error::config(format!("base quality must be positive, got {base}")));
        }
        Ok(Self {
            base,
            percentile,
            radius: sphere_radius(percentile, latent_dim)?,
        })
    }

    /// Same sphere, different base quality.
    pub fn with_base(self, base: f64) -> Result<Self> {
        if !(base > 0.0) {
            return Err(Error::config(format!("base quality must be positive, got {base}")));
        }
        Ok(Self { base, ..self })
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn percentile(&self) -> f64 {
        self.percentile
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn quality(&self, z: &[f64]) -> f64 {
        let norm2: f64 = z.iter().map(|v| v * v).sum();
        let r2 = self.radius * self.radius;
        if norm2 <= r2 {
            self.base
        } else {
            self.base * (r2 - norm2).exp()
        }
    }

    /// `∂r/∂z`: zero inside the ball, `−2 z · r` outside.
    pub fn quality_grad(&self, z: &[f64]) -> Vec<f64> {
        let norm2: f64 = z.iter().map(|v| v * v).sum();
        if norm2 <= self.radius * self.radius {
            vec![0.0; z.len()]
        } else {
            let r = self.quality(z);
            z.iter().map(|v| -2.0 * v * r).collect()
        }
    }
}

pub fn quality_vector(latents: &[Vec<f64>], cfg: &QualityConfig) -> DVector<f64> {
    DVector::from_iterator(latents.len(), latents.iter().map(|z| cfg.quality(z)))
}

/// Similarity, quality and the assembled kernel `L = Diag(r) · S · Diag(r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DppKernel {
    pub similarity: Matrix,
    pub quality: DVector<f64>,
    pub kernel: Matrix,
}

pub fn build_kernel(similarity: Matrix, quality: DVector<f64>) -> Result<DppKernel> {
    linalg::check_symmetric(&similarity, "similarity matrix")?;
    let n = similarity.nrows();
    if quality.len() != n {
        return Err(Error::config(format!(
            "quality vector has {} entries for a {n}x{n} similarity",
            quality.len()
        )));
    }
    if let Some(i) = quality.iter().position(|&r| !(r > 0.0)) {
        return Err(Error::config(format!(
            "quality must be positive, r[{i}] = {}",
            quality[i]
        )));
    }
    let kernel = Matrix::from_fn(n, n, |i, j| quality[i] * similarity[(i, j)] * quality[j]);
    Ok(DppKernel {
        similarity,
        quality,
        kernel,
    })
}

fn plus_identity(l: &Matrix, shift: f64) -> Matrix {
    let mut m = l.clone();
    for i in 0..m.nrows() {
        m[(i, i)] += shift;
    }
    m
}

/// `tr(I − (L+I)⁻¹)`.
pub fn expected_cardinality(l: &Matrix) -> Result<f64> {
    linalg::check_symmetric(l, "DPP kernel")?;
    let inv = linalg::inverse_spd(&plus_identity(l, 1.0))?;
    Ok(l.nrows() as f64 - inv.trace())
}

/// `Σ λ/(λ+1)` over the eigenvalues of `L`, clipping round-off negatives.
///
/// Eigenvalues in `[−1e-9·‖L‖, 0)` are treated as zero.
pub fn expected_cardinality_spectral(l: &Matrix) -> Result<f64> {
    linalg::check_symmetric(l, "DPP kernel")?;
    let eig = linalg::symmetric_eigenvalues(l);
    let scale = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let floor = -1e-9 * scale;
    Ok(eig
        .into_iter()
        .map(|lam| if lam < 0.0 && lam >= floor { 0.0 } else { lam })
        .map(|lam| lam / (lam + 1.0))
        .sum())
}

/// Negative expected cardinality.
pub fn diversity_loss(l: &Matrix) -> Result<f64> {
    Ok(-expected_cardinality(l)?)
}

/// `∂ diversity_loss / ∂L = −(L+I)⁻²`.
pub fn diversity_loss_grad(l: &Matrix) -> Result<Matrix> {
    linalg::check_symmetric(l, "DPP kernel")?;
    let inv = linalg::inverse_spd(&plus_identity(l, 1.0))?;
    let mut g = -(&inv * &inv);
    // the product of a symmetric matrix with itself; remove round-off asymmetry
    g = (&g + g.transpose()) * 0.5;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("diversity gradient is not finite".into()));
    }
    Ok(g)
}

/// `log P(Y) = log det(L_Y) − log det(L+I)`; `-inf` when `L_Y` is singular.
pub fn dpp_log_likelihood(l: &Matrix, subset: &[usize]) -> Result<f64> {
    linalg::check_symmetric(l, "DPP kernel")?;
    let n = l.nrows();
    let mut seen = vec![false; n];
    for &i in subset {
        if i >= n {
            return Err(Error::config(format!("subset index {i} out of range for N = {n}")));
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(Error::config(format!("subset index {i} repeated")));
        }
    }
    let log_norm = linalg::log_det_spd(&plus_identity(l, 1.0));
    let log_det = linalg::log_det_spd(&linalg::submatrix(l, subset));
    Ok(log_det - log_norm)
}

/// Negative log-likelihood of the full ground set with `diag_eps` added to the
/// diagonal of the numerator: `−log det(L + εI) + log det(L + I)`.
///
/// The result is `+inf` when `L + εI` is singular; callers decide what to do.
pub fn nll_loss(l: &Matrix, diag_eps: f64) -> Result<f64> {
    linalg::check_symmetric(l, "DPP kernel")?;
    if diag_eps < 0.0 {
        return Err(Error::config(format!(
            "diagonal epsilon must be non-negative, got {diag_eps}"
        )));
    }
    Ok(-linalg::log_det_spd(&plus_identity(l, diag_eps)) + linalg::log_det_spd(&plus_identity(l, 1.0)))
}

/// `∂ nll_loss / ∂L = −(L + εI)⁻¹ + (L + I)⁻¹`.
pub fn nll_loss_grad(l: &Matrix, diag_eps: f64) -> Result<Matrix> {
    linalg::check_symmetric(l, "DPP kernel")?;
    let a = linalg::inverse_spd(&plus_identity(l, diag_eps))?;
    let b = linalg::inverse_spd(&plus_identity(l, 1.0))?;
    let g = b - a;
    Ok((&g + g.transpose()) * 0.5)
}

/// Result of greedy MAP inference.
#[derive(Debug, Clone, PartialEq)]
pub struct GreedySelection {
    /// Selected indices in selection order.
    pub selected: Vec<usize>,
    /// Log-determinant gain of each accepted pick.
    pub gains: Vec<f64>,
    /// `log det(L_Y)` of the final selection.
    pub log_det: f64,
}

/// Greedy log-determinant maximization, stopping when the best marginal gain
/// turns negative or every item is selected.
///
/// The first pick is always accepted so the result is never empty for `N ≥ 1`.
pub fn greedy_map(l: &Matrix) -> Result<GreedySelection> {
    greedy_map_capped(l, usize::MAX)
}

/// [`greedy_map`] that additionally stops after `max_items` picks.
pub fn greedy_map_capped(l: &Matrix, max_items: usize) -> Result<GreedySelection> {
    linalg::check_symmetric(l, "DPP kernel")?;
    let n = l.nrows();
    let mut selected: Vec<usize> = Vec::new();
    let mut gains = Vec::new();
    let mut current = 0.0;
    let mut remaining: Vec<usize> = (0..n).collect();
    while !remaining.is_empty() && selected.len() < max_items {
        let mut best: Option<(usize, f64)> = None;
        for (pos, &cand) in remaining.iter().enumerate() {
            let mut idx = selected.clone();
            idx.push(cand);
            let ld = linalg::log_det_spd(&linalg::submatrix(l, &idx));
            match best {
                Some((_, b)) if !(ld > b) => {}
                _ => best = Some((pos, ld)),
            }
        }
        let (pos, ld) = best.expect("remaining is non-empty");
        let gain = ld - current;
        if !selected.is_empty() && !(gain >= 0.0) {
            break;
        }
        selected.push(remaining.remove(pos));
        gains.push(gain);
        current = ld;
    }
    Ok(GreedySelection {
        selected,
        gains,
        log_det: current,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> Matrix {
        Matrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    fn traj(data: Vec<f64>) -> Trajectory {
        Trajectory::from_flat(data.len() / 2, 2, data).unwrap()
    }

    #[test]
    fn gaussian_similarity_values() {
        let a = traj(vec![0.0, 0.0, 1.0, 1.0]);
        let b = traj(vec![0.0, 1.0, 1.0, 1.0]);
        let s = similarity_matrix(&[a.clone(), a.clone(), b], 1.0, SimilarityMode::Gaussian).unwrap();
        assert_eq!(s[(0, 1)], 1.0);
        assert!((s[(0, 2)] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((s[(0, 2)] - 0.367879).abs() < 1e-6);
        assert_eq!(s[(2, 2)], 1.0);
    }

    #[test]
    fn cosine_similarity_orthogonal_and_zero() {
        let a = traj(vec![1.0, 0.0, 0.0, 0.0]);
        let b = traj(vec![0.0, 1.0, 0.0, 0.0]);
        let s = similarity_matrix(&[a.clone(), b], 1.0, SimilarityMode::Cosine).unwrap();
        assert_eq!(s[(0, 1)], 0.0);
        assert_eq!(s[(1, 1)], 1.0);
        let zero = traj(vec![0.0; 4]);
        assert!(matches!(
            similarity_matrix(&[a, zero], 1.0, SimilarityMode::Cosine),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn mismatched_shapes_rejected() {
        let a = traj(vec![0.0; 4]);
        let b = traj(vec![0.0; 6]);
        assert!(similarity_matrix(&[a, b], 1.0, SimilarityMode::Gaussian).is_err());
        assert!(similarity_matrix(&[], 1.0, SimilarityMode::Gaussian).is_err());
    }

    #[test]
    fn radius_for_two_dims() {
        let r = sphere_radius(90.0, 2).unwrap();
        assert!((r * r - 2.0 * 10f64.ln()).abs() < 1e-8);
        assert!((r - 2.145966).abs() < 1e-6);
        assert!(sphere_radius(0.0, 2).is_err());
        assert!(sphere_radius(100.0, 2).is_err());
    }

    #[test]
    fn radius_shrinks_with_percentile() {
        let mut prev = f64::INFINITY;
        for p in [50.0, 10.0, 1.0, 1e-2, 1e-4, 1e-6] {
            let r = sphere_radius(p, 2).unwrap();
            assert!(r < prev);
            prev = r;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn quality_branches() {
        let cfg = QualityConfig::new(1.0, 90.0, 2).unwrap();
        assert_eq!(cfg.quality(&[0.0, 0.0]), 1.0);
        let r = cfg.radius();
        let outside = (r * r + 1.0).sqrt();
        let q = cfg.quality(&[outside, 0.0]);
        assert!((q - (-1.0f64).exp()).abs() < 1e-12);

        let cfg2 = cfg.with_base(2.0).unwrap();
        let on = [r / 2f64.sqrt(), r / 2f64.sqrt()];
        assert!((cfg2.quality(&on) - 2.0).abs() < 1e-12);
        let just_out = [r * (1.0 + 1e-12), 0.0];
        assert!((cfg2.quality(&just_out) - 2.0).abs() < 1e-9);
        assert_eq!(cfg.quality_grad(&[0.5, 0.5]), vec![0.0, 0.0]);
    }

    #[test]
    fn kernel_assembly() {
        let s = Matrix::identity(2, 2);
        let k = build_kernel(s.clone(), DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert_eq!(k.kernel, m2(4.0, 0.0, 0.0, 4.0));
        let k = build_kernel(m2(1.0, 0.5, 0.5, 1.0), DVector::from_element(2, 1.0)).unwrap();
        assert_eq!(k.kernel, m2(1.0, 0.5, 0.5, 1.0));
        let mut eig = linalg::symmetric_eigenvalues(&k.kernel);
        eig.sort_by(f64::total_cmp);
        assert!((eig[0] - 0.5).abs() < 1e-12 && (eig[1] - 1.5).abs() < 1e-12);
        assert!(build_kernel(s.clone(), DVector::from_element(3, 1.0)).is_err());
        assert!(build_kernel(s, DVector::from_vec(vec![1.0, 0.0])).is_err());
    }

    #[test]
    fn expected_cardinality_examples() {
        assert_eq!(expected_cardinality(&Matrix::identity(2, 2)).unwrap(), 1.0);
        let ones = Matrix::from_element(2, 2, 1.0);
        assert!((expected_cardinality(&ones).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(expected_cardinality(&Matrix::zeros(3, 3)).unwrap(), 0.0);
        assert!(expected_cardinality(&m2(1.0, 0.2, 0.3, 1.0)).is_err());
        assert_eq!(diversity_loss(&Matrix::identity(2, 2)).unwrap(), -1.0);
        assert!(diversity_loss(&ones).unwrap().is_finite());
    }

    #[test]
    fn loss_gradient_closed_forms() {
        assert_eq!(
            diversity_loss_grad(&Matrix::zeros(2, 2)).unwrap(),
            -Matrix::identity(2, 2)
        );
        let g = diversity_loss_grad(&Matrix::identity(2, 2)).unwrap();
        assert!((g - Matrix::identity(2, 2) * -0.25).amax() < 1e-15);
    }

    #[test]
    fn log_likelihood_examples() {
        let ll = dpp_log_likelihood(&Matrix::identity(2, 2), &[0]).unwrap();
        assert!((ll + 4f64.ln()).abs() < 1e-15);
        assert_eq!(dpp_log_likelihood(&Matrix::zeros(2, 2), &[]).unwrap(), 0.0);
        let ones = Matrix::from_element(2, 2, 1.0);
        assert_eq!(dpp_log_likelihood(&ones, &[0, 1]).unwrap(), f64::NEG_INFINITY);
        assert!(dpp_log_likelihood(&ones, &[0, 0]).is_err());
        assert!(dpp_log_likelihood(&ones, &[2]).is_err());
    }

    #[test]
    fn nll_examples() {
        let v = nll_loss(&Matrix::identity(2, 2), 0.0).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-15);
        assert!((v - 1.386294).abs() < 1e-6);
        let ones = Matrix::from_element(2, 2, 1.0);
        assert!(!nll_loss(&ones, 0.0).unwrap().is_finite());
        let with_eps = nll_loss(&ones, 1e-3).unwrap();
        assert!(with_eps.is_finite() && with_eps > 5.0);
        // moving the rows apart lowers the loss
        let mut prev = with_eps;
        for s in [0.99, 0.9, 0.5] {
            let v = nll_loss(&m2(1.0, s, s, 1.0), 1e-3).unwrap();
            assert!(v < prev);
            prev = v;
        }
        assert!(nll_loss(&ones, -1.0).is_err());
    }

    #[test]
    fn greedy_examples() {
        let sel = greedy_map(&m2(4.0, 0.0, 0.0, 4.0)).unwrap();
        assert_eq!(sel.selected, vec![0, 1]);
        assert!((sel.gains[0] - 4f64.ln()).abs() < 1e-12);
        assert!((sel.gains[1] - 4f64.ln()).abs() < 1e-12);

        let sel = greedy_map(&m2(1.0, 0.99, 0.99, 1.0)).unwrap();
        assert_eq!(sel.selected.len(), 1);

        let dup = Matrix::from_element(4, 4, 2.0);
        assert_eq!(greedy_map(&dup).unwrap().selected, vec![0]);
    }

    #[test]
    fn greedy_always_returns_an_item() {
        let small = Matrix::identity(3, 3) * 0.5;
        assert_eq!(greedy_map(&small).unwrap().selected.len(), 1);
        assert_eq!(greedy_map(&Matrix::zeros(2, 2)).unwrap().selected, vec![0]);
        assert!(greedy_map(&Matrix::zeros(0, 0)).unwrap().selected.is_empty());
    }

    #[test]
    fn greedy_cap() {
        let l = Matrix::identity(5, 5) * 9.0;
        assert_eq!(greedy_map_capped(&l, 3).unwrap().selected, vec![0, 1, 2]);
    }
}
