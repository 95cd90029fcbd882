//! SVD-based low-rank primitives: truncated nuclear norm, its linear
//! majorizer and singular value shrinkage.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Number of leading singular values left unpenalized by the truncated
/// nuclear norm.
pub const TRUNCATION_RANK: usize = 3;

/// Thin singular value decomposition `X = U diag(S) V^T` with singular values
/// sorted in non-increasing order.
#[derive(Debug, Clone)]
pub struct SvdTriple {
    pub u: DMatrix<f64>,
    pub s: DVector<f64>,
    pub v: DMatrix<f64>,
}

impl SvdTriple {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (k, mut col) in us.column_iter_mut().enumerate() {
            col *= self.s[k];
        }
        us * self.v.transpose()
    }

    /// Count of singular values above `1e-12 * sigma_1`.
    pub fn rank(&self) -> usize {
        let Some(&s1) = self.s.as_slice().first() else {
            return 0;
        };
        if s1 == 0.0 {
            return 0;
        }
        self.s.iter().filter(|&&s| s > 1e-12 * s1).count()
    }
}

/// Thin SVD computed through a QR factorization along the long dimension,
/// which is considerably cheaper than a direct bidiagonalization of the
/// very wide matrices used by the joint solver.
pub fn svd(x: &DMatrix<f64>) -> SvdTriple {
    let (r, c) = x.shape();
    if r == 0 || c == 0 {
        return SvdTriple {
            u: DMatrix::zeros(r, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(c, 0),
        };
    }
    let (u, s, v) = if r < c {
        // X^T = Q R  =>  X = R^T Q^T,  R^T = U S W^T  =>  V = Q W.
        let qr = x.transpose().qr();
        let q = qr.q();
        let rt = qr.r().transpose();
        let inner = rt.svd(true, true);
        let w = inner.v_t.expect("requested").transpose();
        (inner.u.expect("requested"), inner.singular_values, q * w)
    } else {
        let qr = x.clone().qr();
        let q = qr.q();
        let inner = qr.r().svd(true, true);
        let u = q * inner.u.expect("requested");
        (u, inner.singular_values, inner.v_t.expect("requested").transpose())
    };
    sorted(u, s, v)
}

fn sorted(u: DMatrix<f64>, s: DVector<f64>, v: DMatrix<f64>) -> SvdTriple {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));
    if order.iter().enumerate().all(|(i, &o)| i == o) {
        return SvdTriple { u, s, v };
    }
    SvdTriple {
        u: u.select_columns(&order),
        s: DVector::from_iterator(s.len(), order.iter().map(|&i| s[i])),
        v: v.select_columns(&order),
    }
}

pub fn nuclear_norm(x: &DMatrix<f64>) -> f64 {
    svd(x).s.sum()
}

/// `||X||_* - (sigma_1 + sigma_2 + sigma_3)`: zero exactly when rank <= 3.
pub fn tnn(x: &DMatrix<f64>) -> f64 {
    tnn_from_singular_values(svd(x).s.as_slice())
}

pub fn tnn_from_singular_values(s: &[f64]) -> f64 {
    s.iter().skip(TRUNCATION_RANK).sum()
}

/// Leading singular vectors of a frozen iterate, held fixed while the
/// surrogate `||X||_* - tr(U3^T X V3)` is minimized.
#[derive(Debug, Clone)]
pub struct MajorizerFactors {
    pub u3: DMatrix<f64>,
    pub v3: DMatrix<f64>,
}

impl MajorizerFactors {
    pub fn from_matrix(x: &DMatrix<f64>) -> Result<Self> {
        Self::from_svd(&svd(x))
    }

    pub fn from_svd(svd: &SvdTriple) -> Result<Self> {
        if svd.s.len() < TRUNCATION_RANK {
            return Err(Error::Dimension(format!(
                "majorizer needs at least {TRUNCATION_RANK} singular vectors, matrix has {}",
                svd.s.len()
            )));
        }
        Ok(Self {
            u3: svd.u.columns(0, TRUNCATION_RANK).into_owned(),
            v3: svd.v.columns(0, TRUNCATION_RANK).into_owned(),
        })
    }

    /// `U3 V3^T`
    pub fn outer(&self) -> DMatrix<f64> {
        &self.u3 * self.v3.transpose()
    }
}

/// `||X||_* - trace(U3^T X V3)`, an upper bound on [`tnn`] that is tight at
/// the matrix the factors came from.
pub fn majorizer_value(x: &DMatrix<f64>, f: &MajorizerFactors) -> Result<f64> {
    if f.u3.nrows() != x.nrows() || f.v3.nrows() != x.ncols() {
        return Err(Error::Dimension(format!(
            "majorizer factors {}x{} / {}x{} incompatible with {}x{} matrix",
            f.u3.nrows(),
            f.u3.ncols(),
            f.v3.nrows(),
            f.v3.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let trace = (f.u3.transpose() * x * &f.v3).trace();
    Ok(nuclear_norm(x) - trace)
}

/// Scalar soft threshold `sign(s) max(|s| - t, 0)`.
pub fn soft_threshold(s: f64, t: f64) -> f64 {
    s.signum() * (s.abs() - t).max(0.0)
}

/// Singular value shrinkage `D_t(C)`: the proximal operator of `t ||.||_*`.
pub fn shrink(c: &DMatrix<f64>, t: f64) -> DMatrix<f64> {
    debug_assert!(t >= 0.0);
    let mut d = svd(c);
    d.s.apply(|s| *s = soft_threshold(*s, t));
    let keep = d.s.iter().take_while(|&&s| s > 0.0).count();
    if keep == 0 {
        return DMatrix::zeros(c.nrows(), c.ncols());
    }
    let mut us = d.u.columns(0, keep).into_owned();
    for (k, mut col) in us.column_iter_mut().enumerate() {
        col *= d.s[k];
    }
    us * d.v.columns(0, keep).transpose()
}
