#![allow(dead_code, clippy::needless_range_loop)]

use dsf_core::cvae::{CvaeConfig, CvaeModel, TrajectoryShape};
use dsf_core::linalg::Matrix;
use dsf_core::seeding::rng_from_seed;
use dsf_core::{DsfModel, DsfTrainConfig, ScenarioConfig};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    rng_from_seed(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `B Bᵀ` with `B` of size n×m; rank-deficient when `m < n`.
pub fn random_psd(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Matrix {
    let b = Matrix::from_fn(n, m, |_, _| gaussian(rng) / (m as f64).sqrt());
    &b * b.transpose()
}

/// Quality-similarity kernel from random points in the plane.
pub fn random_qd_kernel(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let pts: Vec<[f64; 2]> = (0..n).map(|_| [gaussian(rng), gaussian(rng)]).collect();
    let r: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..2.0)).collect();
    Matrix::from_fn(n, n, |i, j| {
        let d2 = (pts[i][0] - pts[j][0]).powi(2) + (pts[i][1] - pts[j][1]).powi(2);
        r[i] * (-d2).exp() * r[j]
    })
}

/// Gauss-Jordan inverse with partial pivoting; makes no symmetry assumption.
pub fn gj_inverse(m: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        for v in a[col].iter_mut() {
            *v /= p;
        }
        for row in 0..n {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in 0..2 * n {
                        a[row][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    a.into_iter().map(|r| r[n..].to_vec()).collect()
}

/// Determinant by LU elimination with partial pivoting.
pub fn lu_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    let mut a = m.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if piv != col {
            a.swap(col, piv);
            det = -det;
        }
        let p = a[col][col];
        if p == 0.0 {
            return 0.0;
        }
        det *= p;
        for row in col + 1..n {
            let f = a[row][col] / p;
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    det
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix.
pub fn jacobi_eigenvalues(m: &[Vec<f64>]) -> Vec<f64> {
    let n = m.len();
    let mut a = m.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

pub fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Oracle for the diversity loss: `tr((L+I)⁻¹) − N`, entry-wise differentiable.
pub fn oracle_diversity_loss(l: &[Vec<f64>]) -> f64 {
    let n = l.len();
    let a: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| l[i][j] + if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let inv = gj_inverse(&a);
    (0..n).map(|i| inv[i][i]).sum::<f64>() - n as f64
}

/// `|a − b| / max(|a|, |b|)`, or the absolute error when both are below `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < floor {
        (a - b).abs()
    } else {
        (a - b).abs() / scale
    }
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`.
pub fn vec_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

/// Central differences of `f` around `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + h;
            let up = f(&x);
            x[i] = orig - h;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn small_shape() -> TrajectoryShape {
    TrajectoryShape {
        future_steps: 3,
        past_steps: 2,
        dim: 2,
    }
}

pub fn small_cvae(hidden: usize, seed: u64) -> CvaeModel {
    CvaeModel::new(
        &CvaeConfig {
            hidden,
            ..CvaeConfig::default()
        },
        small_shape(),
        seed,
    )
    .unwrap()
}

pub fn small_dsf(cvae: &CvaeModel, n: usize, hidden: usize, seed: u64) -> DsfModel {
    let cfg = DsfTrainConfig {
        n_samples: n,
        hidden,
        ..DsfTrainConfig::default()
    };
    DsfModel::for_cvae(&cfg, cvae, seed).unwrap()
}

pub fn balanced() -> ScenarioConfig {
    ScenarioConfig::balanced()
}
