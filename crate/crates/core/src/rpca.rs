//! Robust PCA (low rank + sparse) by the inexact augmented Lagrange
//! multiplier method, with support for unobserved entries.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baseline::{run_baseline_on, BaselineResult};
use crate::error::Result;
use crate::lowrank::{shrink, soft_threshold, svd};
use crate::photometric::ObservationSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RpcaConfig {
    /// Weight of the L1 term; `None` selects [`default_lambda`].
    pub lambda: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    /// Penalty growth factor per iteration.
    pub rho: f64,
    /// Honour the observation mask: unobserved entries are absorbed by `E`
    /// without cost. When false every entry is treated as observed.
    pub use_mask: bool,
}

impl Default for RpcaConfig {
    fn default() -> Self {
        Self {
            lambda: None,
            tol: 1e-7,
            max_iter: 500,
            rho: 1.5,
            use_mask: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RpcaResult {
    /// Low-rank component.
    pub a: DMatrix<f64>,
    /// Sparse component.
    pub e: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `||W.(M - A - E)||_F / ||W.M||_F` after each iteration.
    pub residual_trace: Vec<f64>,
    pub lambda: f64,
}

impl RpcaResult {
    /// `||A||_* + lambda ||E||_1` with the L1 term over observed entries.
    pub fn objective(&self, w: &DMatrix<bool>) -> f64 {
        let l1: f64 = self.e.iter().zip(w.iter()).filter(|(_, &o)| o).map(|(v, _)| v.abs()).sum();
        svd(&self.a).s.sum() + self.lambda * l1
    }
}

/// Margin over the rank-3 certificate bound in [`default_lambda`].
pub const CERTIFICATE_MARGIN: f64 = 1.25;

/// `max(1 / sqrt(max(m, p)), 1.25 ||U3 V3^T||_max)` where `U3 S3 V3^T` is
/// the rank-3 truncated SVD of the observed entries of `m`.
///
/// For a matrix of exact rank 3, `E = 0` is optimal whenever
/// `lambda >= ||U3 V3^T||_max` (`U3 V3^T` is then a dual certificate). On
/// the short, wide matrices of photometric stereo that bound usually exceeds
/// `1 / sqrt(max(m, p))`, so the plain rule would alter clean images.
pub fn default_lambda(m: &DMatrix<f64>, w: &DMatrix<bool>) -> f64 {
    let masked = DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| if w[(i, j)] { m[(i, j)] } else { 0.0 });
    default_lambda_from(&svd(&masked), m.nrows(), m.ncols())
}

fn default_lambda_from(d: &crate::lowrank::SvdTriple, rows: usize, cols: usize) -> f64 {
    let base = 1.0 / (rows.max(cols) as f64).sqrt();
    let r = d.s.len().min(3);
    if r == 0 || d.s[0] == 0.0 {
        return base;
    }
    let certificate = d.u.columns(0, r) * d.v.columns(0, r).transpose();
    base.max(CERTIFICATE_MARGIN * certificate.amax())
}

/// Approximately solves `min ||A||_* + lambda ||E||_1` s.t.
/// `W.M = W.(A + E)`.
pub fn rpca(m: &DMatrix<f64>, w: &DMatrix<bool>, cfg: &RpcaConfig) -> RpcaResult {
    let (rows, cols) = m.shape();
    let observed = |i: usize, j: usize| w[(i, j)];
    let masked_m = DMatrix::from_fn(rows, cols, |i, j| if observed(i, j) { m[(i, j)] } else { 0.0 });
    let norm_m = masked_m.norm();
    let decomposition = svd(&masked_m);
    let lambda = cfg.lambda.unwrap_or_else(|| default_lambda_from(&decomposition, rows, cols));

    let mut a = DMatrix::zeros(rows, cols);
    let mut e = DMatrix::zeros(rows, cols);
    if norm_m == 0.0 {
        return RpcaResult {
            a,
            e,
            iterations: 0,
            converged: true,
            residual_trace: vec![],
            lambda,
        };
    }

    let spectral = decomposition.s[0];
    let inf = masked_m.amax();
    let mut y = &masked_m / spectral.max(inf / lambda);
    let mut mu = 1.25 / spectral;
    let mu_max = mu * 1e7;

    let mut residual_trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        // E update: soft threshold on observed entries, exact absorption
        // elsewhere.
        for j in 0..cols {
            for i in 0..rows {
                let t = masked_m[(i, j)] - a[(i, j)] + y[(i, j)] / mu;
                e[(i, j)] = if observed(i, j) { soft_threshold(t, lambda / mu) } else { t };
            }
        }
        let target = &masked_m - &e + &y / mu;
        a = shrink(&target, 1.0 / mu);

        let mut z = &masked_m - &a - &e;
        for j in 0..cols {
            for i in 0..rows {
                if !observed(i, j) {
                    z[(i, j)] = 0.0;
                }
            }
        }
        y += &z * mu;
        mu = (mu * cfg.rho).min(mu_max);

        let res = z.norm() / norm_m;
        residual_trace.push(res);
        if res <= cfg.tol {
            converged = true;
            break;
        }
    }
    RpcaResult {
        a,
        e,
        iterations,
        converged,
        residual_trace,
        lambda,
    }
}

#[derive(Debug, Clone)]
pub struct RpcaBaselineResult {
    pub baseline: BaselineResult,
    pub rpca: RpcaResult,
}

/// Robust PCA on the measurements followed by the baseline pipeline on the
/// recovered low-rank matrix.
pub fn run_rpca_baseline(obs: &ObservationSet, cfg: &RpcaConfig) -> Result<RpcaBaselineResult> {
    let w = if cfg.use_mask {
        obs.check_columns()?;
        obs.w.clone()
    } else {
        DMatrix::from_element(obs.images(), obs.pixels(), true)
    };
    let r = rpca(&obs.m, &w, cfg);
    if !r.converged {
        log::warn!("robust PCA stopped after {} iterations without converging", r.iterations);
    }
    let baseline = run_baseline_on(&r.a, &obs.grid)?;
    Ok(RpcaBaselineResult { baseline, rpca: r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rank3(rng: &mut ChaCha8Rng, m: usize, p: usize) -> DMatrix<f64> {
        let l = DMatrix::from_fn(m, 3, |_, _| rng.random_range(-1.0..1.0));
        let s = DMatrix::from_fn(3, p, |_, _| rng.random_range(-0.3..0.3));
        l * s
    }

    fn all(m: &DMatrix<f64>) -> DMatrix<bool> {
        DMatrix::from_element(m.nrows(), m.ncols(), true)
    }

    #[test]
    fn clean_low_rank_input_passes_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = rank3(&mut rng, 40, 300);
        let r = rpca(&m, &all(&m), &RpcaConfig::default());
        assert!(r.converged);
        assert!(r.e.amax() <= 1e-6 * m.max(), "{}", r.e.amax());
        assert!((&r.a - &m).amax() <= 1e-6 * m.max());
    }

    #[test]
    fn zero_input() {
        let m = DMatrix::zeros(4, 9);
        let r = rpca(&m, &all(&m), &RpcaConfig::default());
        assert!(r.converged);
        assert_eq!(r.a, m);
        assert_eq!(r.e, m);
    }

    #[test]
    fn sparse_corruption_lands_in_error_term() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (rows, cols) = (40, 2000);
        let clean = rank3(&mut rng, rows, cols);
        let mut m = clean.clone();
        let mut truth = DMatrix::from_element(rows, cols, false);
        for j in 0..cols {
            for i in 0..rows {
                if rng.random_bool(0.05) {
                    m[(i, j)] = 1.0;
                    truth[(i, j)] = true;
                }
            }
        }
        let r = rpca(&m, &all(&m), &RpcaConfig::default());
        assert!(r.converged);
        let thresh = 1e-3;
        let mut tp = 0;
        let mut fp = 0;
        let mut fneg = 0;
        for (e, &t) in r.e.iter().zip(truth.iter()) {
            match (e.abs() > thresh, t) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = tp as f64 / (tp + fneg) as f64;
        assert!(precision >= 0.95 && recall >= 0.95, "precision {precision} recall {recall}");
    }

    #[test]
    fn converged_residual_within_tolerance_and_better_than_trivial_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = rank3(&mut rng, 8, 200);
        for k in 0..40 {
            m[(k % 8, (k * 37) % 200)] += 0.8;
        }
        let mut w = all(&m);
        for k in 0..30 {
            w[((k * 3) % 8, (k * 11) % 200)] = false;
        }
        let r = rpca(&m, &w, &RpcaConfig::default());
        assert!(r.converged);
        assert!(*r.residual_trace.last().unwrap() <= 1e-7);
        // A = W.M, E = 0 is feasible; the solution must not be worse.
        let trivial = svd(&DMatrix::from_fn(8, 200, |i, j| if w[(i, j)] { m[(i, j)] } else { 0.0 })).s.sum();
        assert!(r.objective(&w) <= trivial + 1e-6);
    }
}
