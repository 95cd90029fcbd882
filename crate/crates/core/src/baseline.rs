//! Classical uncalibrated pipeline: rank-3 factorization, ambiguity
//! reduction through integrability, and depth reconstruction.

use nalgebra::{DMatrix, Matrix3, Matrix6, RowVector3, Vector3, Vector6};

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, DerivativeOperators, Integrator, PixelGrid};
use crate::lowrank::svd;
use crate::photometric::ObservationSet;

/// `M ~ L S` with `L` the `m x 3` pseudo-lights and `S` the `3 x p`
/// pseudo-normals.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub lights: DMatrix<f64>,
    pub normals: DMatrix<f64>,
    /// All singular values of the factorized matrix.
    pub singular_values: Vec<f64>,
}

/// Invertible `3 x 3` mixing between pseudo-normals and integrable normals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguityMatrix(pub Matrix3<f64>);

impl AmbiguityMatrix {
    pub fn new(a: Matrix3<f64>) -> Result<Self> {
        let scale = a.norm();
        if !(a.determinant().abs() > 1e-10 * scale.powi(3)) {
            return Err(Error::InvalidArgument(format!("ambiguity matrix is degenerate: {a}")));
        }
        Ok(Self(a))
    }

    pub fn inverse(&self) -> Matrix3<f64> {
        self.0.try_inverse().expect("checked at construction")
    }
}

/// Result of the integrability step.
#[derive(Debug, Clone)]
pub struct IntegrableNormals {
    pub ambiguity: AmbiguityMatrix,
    /// `3 x p`, `A S_tilde` with row 3 of positive mean.
    pub normals: DMatrix<f64>,
    /// Singular values of the homogeneous curl system, non-increasing.
    pub system_singular_values: Vec<f64>,
    /// The unit 6-vector `(a1 x a3, a2 x a3)` minimizing the curl residual.
    pub solution: [f64; 6],
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub depth: DepthMap,
    /// `3 x p` integrable scaled normals.
    pub normals: DMatrix<f64>,
    /// `m x 3`
    pub lights: DMatrix<f64>,
    /// Pixels left out of the integration data term because of grazing
    /// normals.
    pub excluded_pixels: usize,
}

/// Symmetric rank-3 split of the SVD: `L = U3 S3^(1/2)`, `S = S3^(1/2) V3^T`.
pub fn factorize_rank3(m: &DMatrix<f64>) -> Result<Factorization> {
    let (rows, cols) = m.shape();
    if rows < 3 || cols < 3 {
        return Err(Error::Dimension(format!("need at least 3 images and 3 pixels, got {rows}x{cols}")));
    }
    if let Some(row) = m.row_iter().position(|r| r.iter().all(|&v| v == 0.0)) {
        return Err(Error::ZeroRow { row });
    }
    let d = svd(m);
    let s1 = d.s[0];
    let ratio = d.s[2] / s1;
    if !(ratio >= 1e-10) {
        return Err(Error::RankDeficient { ratio });
    }
    let mut lights = d.u.columns(0, 3).into_owned();
    let mut normals = d.v.columns(0, 3).transpose();
    for k in 0..3 {
        let r = d.s[k].sqrt();
        lights.column_mut(k).scale_mut(r);
        normals.row_mut(k).scale_mut(r);
    }
    Ok(Factorization {
        lights,
        normals,
        singular_values: d.s.iter().copied().collect(),
    })
}

fn column(s: &DMatrix<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(s[(0, j)], s[(1, j)], s[(2, j)])
}

/// Rows of the homogeneous system in `v = (a1 x a3, a2 x a3)` whose null
/// vector makes `A S` integrable. Only pixels `j` with `j + x`, `j + y` and
/// `j + x + y` inside the mask contribute.
pub fn curl_system(normals: &DMatrix<f64>, grid: &PixelGrid) -> DMatrix<f64> {
    curl_system_weighted(normals, grid, None)
}

/// With `a3` given, the two difference terms of each row are divided by
/// `a3 . s_(j+y)` and `a3 . s_(j+x)` respectively, which turns the row into
/// the exact discrete curl of `(-s1 / s3, -s2 / s3)` scaled by `a3 . s_j`.
/// Rows with a near-grazing neighbor are dropped.
pub fn curl_system_weighted(normals: &DMatrix<f64>, grid: &PixelGrid, a3: Option<&Vector3<f64>>) -> DMatrix<f64> {
    let floor = a3.map(|a| {
        let max = (0..grid.len()).map(|j| a.dot(&column(normals, j)).abs()).fold(0.0, f64::max);
        1e-3 * max
    });
    let mut rows: Vec<[f64; 6]> = Vec::new();
    for j in 0..grid.len() {
        let (Some(jx), Some(jy), Some(_)) = (grid.neighbor(j, 1, 0), grid.neighbor(j, 0, 1), grid.neighbor(j, 1, 1)) else {
            continue;
        };
        let s = column(normals, j);
        let snx = column(normals, jx);
        let sny = column(normals, jy);
        let (wx, wy) = match (a3, floor) {
            (Some(a), Some(floor)) => {
                let (dx, dy) = (a.dot(&snx), a.dot(&sny));
                if dx.abs() <= floor || dy.abs() <= floor {
                    continue;
                }
                (1.0 / dx, 1.0 / dy)
            }
            _ => (1.0, 1.0),
        };
        // a1^T [s x s_y]_x a3 - a2^T [s x s_x]_x a3 in terms of the cross
        // products v1 = a1 x a3, v2 = a2 x a3.
        let ky = -s.cross(&(sny - s)) * wy;
        let kx = s.cross(&(snx - s)) * wx;
        rows.push([ky[0], ky[1], ky[2], kx[0], kx[1], kx[2]]);
    }
    DMatrix::from_fn(rows.len(), 6, |i, k| rows[i][k])
}

/// Sum over pixels of the squared curl residual of a normal field, using
/// the same stencil as [`curl_system`] with `A = I`.
pub fn curl_residual(normals: &DMatrix<f64>, grid: &PixelGrid) -> f64 {
    let mut r = 0.0;
    for j in 0..grid.len() {
        let (Some(jx), Some(jy), Some(_)) = (grid.neighbor(j, 1, 0), grid.neighbor(j, 0, 1), grid.neighbor(j, 1, 1)) else {
            continue;
        };
        let s = column(normals, j);
        let sx = column(normals, jx) - s;
        let sy = column(normals, jy) - s;
        let c = s[2] * sy[0] - s[0] * sy[2] - s[2] * sx[1] + s[1] * sx[2];
        r += c * c;
    }
    r
}

/// Gram matrix `B^T B` of [`curl_system_weighted`], minus the expected
/// contribution of pseudo-normal noise with column covariance `q`. Each row
/// is a product of two noisy columns, so its Gram picks up a positive bias
/// that pulls the smallest eigenvector away from the true solution once the
/// noise is comparable to neighboring differences. The compensation is zero
/// for `q = 0`.
pub fn curl_gram(
    normals: &DMatrix<f64>,
    grid: &PixelGrid,
    a3: Option<&Vector3<f64>>,
    q: &Matrix3<f64>,
) -> CurlGram {
    let floor = a3.map(|a| {
        let max = (0..grid.len()).map(|j| a.dot(&column(normals, j)).abs()).fold(0.0, f64::max);
        1e-3 * max
    });
    let noisy = q.iter().any(|&x| x != 0.0);
    // E[[e]x Q [e]x^T] for e ~ N(0, Q).
    let quartic = if noisy {
        let eig = q.symmetric_eigen();
        (0..3).fold(Matrix3::zeros(), |acc, k| {
            let u = eig.eigenvectors.column(k).cross_matrix();
            acc + u * q * u.transpose() * eig.eigenvalues[k].max(0.0)
        })
    } else {
        Matrix3::zeros()
    };
    let spread = |v: &Vector3<f64>| {
        let c = v.cross_matrix();
        c * q * c.transpose()
    };
    let mut gram = Matrix6::zeros();
    let mut compensation = Matrix6::zeros();
    let mut rows = 0;
    for j in 0..grid.len() {
        let (Some(jx), Some(jy), Some(_)) = (grid.neighbor(j, 1, 0), grid.neighbor(j, 0, 1), grid.neighbor(j, 1, 1)) else {
            continue;
        };
        let s = column(normals, j);
        let snx = column(normals, jx);
        let sny = column(normals, jy);
        let (wx, wy) = match (a3, floor) {
            (Some(a), Some(floor)) => {
                let (dx, dy) = (a.dot(&snx), a.dot(&sny));
                if dx.abs() <= floor || dy.abs() <= floor {
                    continue;
                }
                (1.0 / dx, 1.0 / dy)
            }
            _ => (1.0, 1.0),
        };
        let ky = -s.cross(&(sny - s)) * wy;
        let kx = s.cross(&(snx - s)) * wx;
        let r = Vector6::new(ky[0], ky[1], ky[2], kx[0], kx[1], kx[2]);
        gram += r * r.transpose();
        rows += 1;
        if noisy {
            let own = spread(&s) - quartic;
            let yy = (spread(&sny) + own) * (wy * wy);
            let xx = (spread(&snx) + own) * (wx * wx);
            let yx = -(sny.cross_matrix() * q * snx.cross_matrix().transpose()) * (wy * wx);
            let mut c = Matrix6::zeros();
            c.fixed_view_mut::<3, 3>(0, 0).copy_from(&yy);
            c.fixed_view_mut::<3, 3>(3, 3).copy_from(&xx);
            c.fixed_view_mut::<3, 3>(0, 3).copy_from(&yx);
            c.fixed_view_mut::<3, 3>(3, 0).copy_from(&yx.transpose());
            compensation += c;
        }
    }
    CurlGram {
        gram: gram - compensation,
        rows,
        compensation: compensation.norm(),
    }
}

pub struct CurlGram {
    /// Compensated `B^T B`.
    pub gram: Matrix6<f64>,
    pub rows: usize,
    /// Frobenius norm of the subtracted noise term.
    pub compensation: f64,
}

/// Robust per-entry noise variance of `M` from the residual of its rank-3
/// factorization. Under iid noise each column's squared residual is
/// `sigma^2` times a chi-square variable with `m - 3` degrees of freedom;
/// matching medians ignores the sparse columns hit by shadows or highlights.
pub fn estimate_noise_variance(m: &DMatrix<f64>, f: &Factorization) -> f64 {
    let rows = m.nrows();
    if rows <= 3 || m.ncols() == 0 {
        return 0.0;
    }
    let residual = m - &f.lights * &f.normals;
    let mut norms: Vec<f64> = residual.column_iter().map(|c| c.norm_squared()).collect();
    let mid = norms.len() / 2;
    let (_, median, _) = norms.select_nth_unstable_by(mid, f64::total_cmp);
    let dof = (rows - 3) as f64;
    let chi2 = ChiSquared::new(dof).expect("positive degrees of freedom");
    *median / chi2.inverse_cdf(0.5)
}

/// Column covariance of the pseudo-normals of `f` under iid noise of
/// variance `noise_var` in `M`.
pub fn pseudo_normal_covariance(f: &Factorization, noise_var: f64) -> Matrix3<f64> {
    if noise_var == 0.0 {
        return Matrix3::zeros();
    }
    Matrix3::from_diagonal(&Vector3::from_fn(|k, _| noise_var / f.singular_values[k]))
}

/// Finds `A` making `A S_tilde` integrable, treating `S_tilde` as exact.
///
/// The uniform system gives a first estimate of `a3`; the system is then
/// rebuilt with per-term weights from that estimate (see
/// [`curl_system_weighted`]) until the null vector settles. On exactly
/// integrable data the weighted system has the true GBR orbit as its null
/// space, so the fixed point is exact.
///
/// The returned representative is `a3 = unit(v1 x v2)`, `a1 = v1 x a3`,
/// `a2 = v2 x a3`; the remaining freedom is exactly the GBR group. Row 3 of
/// the result is flipped, if needed, to have positive mean.
pub fn resolve_integrability(
    f: &Factorization,
    grid: &PixelGrid,
    _ops: &DerivativeOperators,
) -> Result<IntegrableNormals> {
    resolve_integrability_with_noise(f, grid, 0.0)
}

/// [`resolve_integrability`] for pseudo-normals computed from `M` with iid
/// noise of variance `noise_var`.
///
/// Per-pixel differences of noisy pseudo-normals bias the curl system, so
/// the expected noise contribution is removed from its Gram matrix (see
/// [`curl_gram`]). When the compensated system still cannot single out a
/// solution, the pseudo-normals are averaged over `2 x 2`, then `4 x 4`, then
/// `8 x 8` blocks, which raises the signal of the differences and lowers
/// their noise at the price of a small discretization bias. With
/// `noise_var = 0` the full-resolution system is always used.
pub fn resolve_integrability_with_noise(f: &Factorization, grid: &PixelGrid, noise_var: f64) -> Result<IntegrableNormals> {
    if f.normals.nrows() != 3 || f.normals.ncols() != grid.len() {
        return Err(Error::Dimension(format!(
            "pseudo-normals are {}x{}, grid has {} pixels",
            f.normals.nrows(),
            f.normals.ncols(),
            grid.len()
        )));
    }
    let q = pseudo_normal_covariance(f, noise_var);
    let mut fallback = None;
    let mut last_error = None;
    for k in BLOCK_SIZES {
        let (normals, coarse) = block_average(&f.normals, grid, k)?;
        match solve_curl_system(&normals, &coarse, &(q / (k * k) as f64)) {
            Ok(sys) if sys.resolved => return assemble(f, grid, sys),
            Ok(sys) => {
                log::debug!("curl system unresolved at block size {k}");
                fallback = Some(sys);
            }
            Err(e) => last_error = Some(e),
        }
        if noise_var == 0.0 {
            break;
        }
    }
    match (fallback, last_error) {
        (Some(sys), _) => assemble(f, grid, sys),
        // Over-compensation can leave no usable system at any scale; the
        // plain system still has a well-defined least-squares solution.
        (None, Some(_)) if noise_var > 0.0 => assemble(f, grid, solve_curl_system(&f.normals, grid, &Matrix3::zeros())?),
        (None, Some(e)) => Err(e),
        (None, None) => unreachable!("at least one block size is tried"),
    }
}

const BLOCK_SIZES: [usize; 4] = [1, 2, 4, 8];

/// Second-smallest eigenvalue of the compensated Gram, relative to the size
/// of the compensation, above which the smallest eigenvector is trusted.
const RESOLVED_MARGIN: f64 = 0.1;

fn solve_curl_system(normals: &DMatrix<f64>, grid: &PixelGrid, q: &Matrix3<f64>) -> Result<NullVector> {
    let mut system = null_vector(curl_gram(normals, grid, None, q))?;
    for _ in 0..REWEIGHT_ITERATIONS {
        let next = null_vector(curl_gram(normals, grid, Some(&system.a3), q))?;
        let change = next.v.iter().zip(&system.v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        let change_flipped = next.v.iter().zip(&system.v).map(|(x, y)| (x + y).abs()).fold(0.0, f64::max);
        system = next;
        if change.min(change_flipped) <= 1e-14 {
            break;
        }
    }
    Ok(system)
}

fn assemble(f: &Factorization, grid: &PixelGrid, system: NullVector) -> Result<IntegrableNormals> {
    let NullVector { sv, v, mut a3, .. } = system;
    let v1 = Vector3::new(v[0], v[1], v[2]);
    let v2 = Vector3::new(v[3], v[4], v[5]);
    let a1 = v1.cross(&a3);
    let a2 = v2.cross(&a3);

    let mean3 = (0..grid.len()).map(|j| a3.dot(&column(&f.normals, j))).sum::<f64>();
    if mean3 < 0.0 {
        a3 = -a3;
    }
    let a = Matrix3::from_rows(&[
        RowVector3::from(a1.transpose()),
        RowVector3::from(a2.transpose()),
        RowVector3::from(a3.transpose()),
    ]);
    let ambiguity = AmbiguityMatrix::new(a)?;
    let normals = DMatrix::from_fn(3, 3, |r, c| a[(r, c)]) * &f.normals;
    Ok(IntegrableNormals {
        ambiguity,
        normals,
        system_singular_values: sv,
        solution: v,
    })
}

/// Means of `S` over the `k x k` blocks lying entirely inside the mask.
pub fn block_average(normals: &DMatrix<f64>, grid: &PixelGrid, k: usize) -> Result<(DMatrix<f64>, PixelGrid)> {
    if k <= 1 {
        return Ok((normals.clone(), grid.clone()));
    }
    let (h, w) = (grid.height() / k, grid.width() / k);
    let block = |bx: usize, by: usize| -> Option<Vec<usize>> {
        (0..k * k).map(|i| grid.column(bx * k + i % k, by * k + i / k)).collect()
    };
    let coarse = PixelGrid::from_fn(h, w, |x, y| block(x, y).is_some())?;
    let mut out = DMatrix::zeros(3, coarse.len());
    for (c, &(x, y)) in coarse.pixels().iter().enumerate() {
        for j in block(x, y).expect("inside") {
            for r in 0..3 {
                out[(r, c)] += normals[(r, j)];
            }
        }
    }
    out /= (k * k) as f64;
    Ok((out, coarse))
}

/// Reweighting passes after the uniform solve.
const REWEIGHT_ITERATIONS: usize = 20;

struct NullVector {
    sv: Vec<f64>,
    v: [f64; 6],
    /// `unit(v1 x v2)`
    a3: Vector3<f64>,
    /// Whether the second-smallest eigenvalue clears the noise margin.
    resolved: bool,
}

fn null_vector(system: CurlGram) -> Result<NullVector> {
    let CurlGram { gram, rows, compensation } = system;
    if rows < 6 {
        return Err(Error::InvalidArgument(format!(
            "only {rows} pixels have the required neighbors; need at least 6"
        )));
    }
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    // Compensation can push eigenvalues below zero.
    let sv: Vec<f64> = order.iter().map(|&k| eig.eigenvalues[k].max(0.0).sqrt()).collect();
    let (smallest, second) = (sv[5], sv[4]);
    if second - smallest <= 1e-6 * sv[0] {
        return Err(Error::AmbiguousIntegrability { smallest, second });
    }
    let mut v = [0.0; 6];
    v.iter_mut().zip(eig.eigenvectors.column(order[5]).iter()).for_each(|(o, &x)| *o = x);
    let a3 = Vector3::new(v[0], v[1], v[2]).cross(&Vector3::new(v[3], v[4], v[5]));
    let n3 = a3.norm();
    if !(n3 > 0.0) {
        return Err(Error::AmbiguousIntegrability { smallest, second });
    }
    let resolved = eig.eigenvalues[order[4]] > RESOLVED_MARGIN * compensation;
    Ok(NullVector { sv, v, a3: a3 / n3, resolved })
}

/// Threshold on `|S_3j|` below which a pixel's gradient is not trusted.
pub const GRAZING_EPS: f64 = 1e-8;

/// Gradients `p = -S1/S3`, `q = -S2/S3` and integration weights (zero where
/// the normal is grazing).
pub fn normals_to_gradients(normals: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let p = normals.ncols();
    let mut gx = vec![0.0; p];
    let mut gy = vec![0.0; p];
    let mut w = vec![1.0; p];
    for j in 0..p {
        let s3 = normals[(2, j)];
        if s3.abs() < GRAZING_EPS {
            w[j] = 0.0;
            continue;
        }
        gx[j] = -normals[(0, j)] / s3;
        gy[j] = -normals[(1, j)] / s3;
    }
    (gx, gy, w)
}

/// Factorize, resolve integrability and integrate, treating every entry of
/// `M` as observed.
pub fn run_baseline(obs: &ObservationSet) -> Result<BaselineResult> {
    run_baseline_on(&obs.m, &obs.grid)
}

/// [`run_baseline`] on a bare matrix. The noise level used by the
/// integrability step is estimated from `m` itself.
pub fn run_baseline_on(m: &DMatrix<f64>, grid: &PixelGrid) -> Result<BaselineResult> {
    run_baseline_with_noise(m, grid, None)
}

/// [`run_baseline_on`] with the per-entry noise variance supplied instead of
/// estimated, for inputs that are already cleaned.
pub fn run_baseline_with_noise(m: &DMatrix<f64>, grid: &PixelGrid, noise_var: Option<f64>) -> Result<BaselineResult> {
    let ops = crate::grid::build_derivative_operators(grid);
    let f = factorize_rank3(m)?;
    let noise_var = noise_var.unwrap_or_else(|| estimate_noise_variance(m, &f));
    let resolved = resolve_integrability_with_noise(&f, grid, noise_var)?;
    let (gx, gy, weights) = normals_to_gradients(&resolved.normals);
    let excluded_pixels = weights.iter().filter(|&&w| w == 0.0).count();
    let depth = Integrator::with_weights(grid, &ops, weights)?.integrate(&gx, &gy)?;
    let a_inv = resolved.ambiguity.inverse();
    let a_inv = DMatrix::from_fn(3, 3, |r, c| a_inv[(r, c)]);
    Ok(BaselineResult {
        depth,
        normals: resolved.normals,
        lights: &f.lights * a_inv,
        excluded_pixels,
    })
}
