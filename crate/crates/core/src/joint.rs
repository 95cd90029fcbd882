//! Joint rank + integrability solver.
//!
//! The unknown is the block matrix
//!
//! ```text
//!     X = [ XI  XN ]   (3 + m) x (3 + p)
//!         [ XL  XM ]
//! ```
//!
//! with `XI = I`, `XN = [Dx z; Dy z; -1]`, `XL` the lights and
//! `XM diag(lambda) ~ M`. A truncated nuclear norm penalty drives `X`
//! towards rank 3. The outer loop freezes the leading singular vectors of the
//! current iterate (a majorizer of the penalty); the inner loop runs scaled
//! ADMM on the surrogate with a split copy `Y` and scaled multipliers
//! `Gamma`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{build_derivative_operators, DepthMap, DerivativeOperators, Integrator};
use crate::lowrank::{shrink, svd, tnn_from_singular_values, MajorizerFactors, SvdTriple};
use crate::photometric::ObservationSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Matrix completion: unobserved entries excluded from the data term.
    Mc,
    /// No completion: every entry treated as observed.
    Nc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Baseline,
    Rpca,
}

impl std::str::FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mc" => Ok(Mode::Mc),
            "nc" => Ok(Mode::Nc),
            _ => Err(Error::InvalidArgument(format!("unknown mode {s:?} (expected mc or nc)"))),
        }
    }
}

impl std::str::FromStr for Init {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Init::Baseline),
            "rpca" => Ok(Init::Rpca),
            _ => Err(Error::InvalidArgument(format!("unknown init {s:?} (expected baseline or rpca)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointConfig {
    /// Weight of the truncated nuclear norm.
    pub c: f64,
    /// ADMM penalty.
    pub tau: f64,
    pub admm_tol: f64,
    pub admm_max: usize,
    pub outer_tol: f64,
    pub outer_max: usize,
    pub inner_tol: f64,
    pub inner_max: usize,
    pub mode: Mode,
    pub init: Init,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tau: 1.0,
            admm_tol: 1e-6,
            admm_max: 500,
            outer_tol: 1e-7,
            outer_max: 15_000,
            inner_tol: 1e-8,
            inner_max: 10,
            mode: Mode::Mc,
            init: Init::Rpca,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!("c and tau must be positive, got c={} tau={}", self.c, self.tau)));
        }
        if self.admm_max == 0 || self.outer_max == 0 || self.inner_max == 0 {
            return Err(Error::InvalidArgument("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

/// Primal unknowns.
#[derive(Debug, Clone)]
pub struct FactorState {
    pub xi: DMatrix<f64>,
    /// `m x 3`
    pub xl: DMatrix<f64>,
    /// `3 x p`
    pub xn: DMatrix<f64>,
    /// `m x p`
    pub xm: DMatrix<f64>,
    pub lambda: Vec<f64>,
    pub z: DepthMap,
}

impl FactorState {
    pub fn images(&self) -> usize {
        self.xl.nrows()
    }

    pub fn pixels(&self) -> usize {
        self.xn.ncols()
    }

    pub fn assemble(&self) -> DMatrix<f64> {
        let (m, p) = (self.images(), self.pixels());
        let mut x = DMatrix::zeros(3 + m, 3 + p);
        x.view_mut((0, 0), (3, 3)).copy_from(&self.xi);
        x.view_mut((0, 3), (3, p)).copy_from(&self.xn);
        x.view_mut((3, 0), (m, 3)).copy_from(&self.xl);
        x.view_mut((3, 3), (m, p)).copy_from(&self.xm);
        x
    }

    /// Seeds the state from lights `L` (`m x 3`) and integrable scaled
    /// normals `S` (`3 x p`): `XN_j = -S_j / S_3j` (or `(0, 0, -1)` at
    /// near-grazing pixels), `XL = L max_j S_3j` so that the implied
    /// `lambda_j = -S_3j / max S_3` lies in `[-1, 0]`, `XM = -M`,
    /// `lambda = -1`.
    pub fn initial(obs: &ObservationSet, lights: &DMatrix<f64>, normals: &DMatrix<f64>, integrator: &Integrator) -> Result<Self> {
        let (m, p) = (obs.images(), obs.pixels());
        if lights.shape() != (m, 3) || normals.shape() != (3, p) {
            return Err(Error::Dimension(format!(
                "initial lights {}x{} / normals {}x{} do not match {m} images and {p} pixels",
                lights.nrows(),
                lights.ncols(),
                normals.nrows(),
                normals.ncols()
            )));
        }
        let mut xn = DMatrix::zeros(3, p);
        for j in 0..p {
            let s3 = normals[(2, j)];
            if s3.abs() < 1e-6 {
                xn[(2, j)] = -1.0;
            } else {
                xn[(0, j)] = -normals[(0, j)] / s3;
                xn[(1, j)] = -normals[(1, j)] / s3;
                xn[(2, j)] = -1.0;
            }
        }
        let s3_max = normals.row(2).max();
        let scale = if s3_max > 0.0 { s3_max } else { 1.0 };
        let z = integrator.integrate(
            &xn.row(0).iter().copied().collect::<Vec<_>>(),
            &xn.row(1).iter().copied().collect::<Vec<_>>(),
        )?;
        Ok(Self {
            xi: DMatrix::identity(3, 3),
            xl: lights * scale,
            xn,
            xm: -&obs.m,
            lambda: vec![-1.0; p],
            z,
        })
    }

    /// Checks the hard constraints: `XI = I`, `XN = [Dx z; Dy z; -1]`
    /// exactly, `lambda` in `[-1, 0]`.
    pub fn check_constraints(&self, ops: &DerivativeOperators) -> std::result::Result<(), String> {
        if self.xi != DMatrix::<f64>::identity(3, 3) {
            return Err(format!("XI is not the identity: {}", self.xi));
        }
        if let Some(j) = self.xn.row(2).iter().position(|&v| v != -1.0) {
            return Err(format!("XN row 3 at column {j} is {}", self.xn[(2, j)]));
        }
        let zx = ops.dx.apply(self.z.values());
        let zy = ops.dy.apply(self.z.values());
        for j in 0..self.pixels() {
            if self.xn[(0, j)] != zx[j] || self.xn[(1, j)] != zy[j] {
                return Err(format!("XN column {j} is not the gradient of z"));
            }
        }
        if let Some(j) = self.lambda.iter().position(|l| !(-1.0..=0.0).contains(l)) {
            return Err(format!("lambda[{j}] = {} outside [-1, 0]", self.lambda[j]));
        }
        Ok(())
    }
}

/// Split copy, scaled multipliers and frozen majorizer factors.
#[derive(Debug, Clone)]
pub struct AdmmState {
    pub y: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub tau: f64,
    pub c: f64,
    pub maj: MajorizerFactors,
}

impl AdmmState {
    /// `Y = X`, `Gamma = 0`, factors from the SVD of `X`.
    pub fn new(x: &DMatrix<f64>, tau: f64, c: f64) -> Result<Self> {
        Ok(Self {
            y: x.clone(),
            gamma: DMatrix::zeros(x.nrows(), x.ncols()),
            tau,
            c,
            maj: MajorizerFactors::from_matrix(x)?,
        })
    }

    fn block_sum(&self, rows: (usize, usize), cols: (usize, usize)) -> DMatrix<f64> {
        self.y.view(rows, cols) + self.gamma.view(rows, cols)
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolverReport {
    pub outer_iterations: usize,
    /// ADMM iterations spent in each outer iteration.
    pub inner_iterations: Vec<usize>,
    /// Whether each outer iteration's ADMM loop met `admm_tol`.
    pub inner_converged: Vec<bool>,
    /// `f_data + c f_tnn` at the start and after each outer iteration.
    pub objective: Vec<f64>,
    /// `f_tnn(X)` at the same points as `objective`.
    pub tnn: Vec<f64>,
    /// `||Y - X||_F / max(1, ||X||_F)` after every ADMM iteration.
    pub primal_residual: Vec<f64>,
    pub converged: bool,
    /// Columns where the lambda update was undefined (`X~_j = 0`).
    pub degenerate_columns: usize,
    pub final_f_data: f64,
}

/// `1/2 ||W.(M - XM diag(lambda))||_F^2`
pub fn f_data(state: &FactorState, obs: &ObservationSet) -> f64 {
    let mut acc = 0.0;
    for j in 0..obs.pixels() {
        let l = state.lambda[j];
        for i in 0..obs.images() {
            if obs.w[(i, j)] {
                acc += (obs.m[(i, j)] - state.xm[(i, j)] * l).powi(2);
            }
        }
    }
    0.5 * acc
}

pub fn update_xi(state: &mut FactorState) {
    state.xi = DMatrix::identity(3, 3);
}

/// `XL = YL + GammaL`
pub fn update_xl(state: &mut FactorState, admm: &AdmmState) {
    let m = state.images();
    state.xl = admm.block_sum((3, 0), (m, 3));
}

/// Projects `YN + GammaN` onto integrable fields: `z` is the least-squares
/// integral of its first two rows and `XN = [Dx z; Dy z; -1]`.
pub fn update_xn_and_z(state: &mut FactorState, admm: &AdmmState, integrator: &Integrator) -> Result<()> {
    let p = state.pixels();
    let t = admm.block_sum((0, 3), (3, p));
    let gx: Vec<f64> = t.row(0).iter().copied().collect();
    let gy: Vec<f64> = t.row(1).iter().copied().collect();
    let z = integrator.integrate(&gx, &gy)?;
    let ops = integrator.operators();
    let zx = ops.dx.apply(z.values());
    let zy = ops.dy.apply(z.values());
    for j in 0..p {
        state.xn[(0, j)] = zx[j];
        state.xn[(1, j)] = zy[j];
        state.xn[(2, j)] = -1.0;
    }
    state.z = z;
    Ok(())
}

/// Outcome of the per-column `(XM_j, lambda_j)` alternation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ColumnUpdateStats {
    pub degenerate_columns: usize,
    pub unobserved_columns: usize,
}

/// Block minimization over `(XM, lambda)`.
///
/// Unobserved entries take `YM + GammaM`. On each column with observed
/// entries the alternation
/// `x = (lambda M + tau A) / (lambda^2 + tau)` (observed rows) and
/// `lambda = clamp(x.M / |x|^2, -1, 0)` runs until the change drops below
/// `inner_tol` or `inner_max` sweeps. Columns are independent.
pub fn update_xm_and_lambda(
    state: &mut FactorState,
    admm: &AdmmState,
    obs: &ObservationSet,
    inner_tol: f64,
    inner_max: usize,
) -> ColumnUpdateStats {
    let (m, p) = (state.images(), state.pixels());
    let target = admm.block_sum((3, 3), (m, p));
    let tau = admm.tau;
    let outcomes: Vec<ColumnOutcome> = state
        .xm
        .as_mut_slice()
        .par_chunks_mut(m)
        .zip(state.lambda.par_iter_mut())
        .enumerate()
        .map(|(j, (xcol, lam))| {
            update_column(
                xcol,
                lam,
                obs.m.column(j).as_slice(),
                obs.w.column(j).as_slice(),
                target.column(j).as_slice(),
                tau,
                inner_tol,
                inner_max,
            )
        })
        .collect();
    let mut stats = ColumnUpdateStats::default();
    for o in outcomes {
        match o {
            ColumnOutcome::Unobserved => stats.unobserved_columns += 1,
            ColumnOutcome::Degenerate => stats.degenerate_columns += 1,
            ColumnOutcome::Ok => {}
        }
    }
    stats
}

enum ColumnOutcome {
    Ok,
    Unobserved,
    Degenerate,
}

#[allow(clippy::too_many_arguments)]
fn update_column(
    x: &mut [f64],
    lambda: &mut f64,
    mcol: &[f64],
    wcol: &[bool],
    target: &[f64],
    tau: f64,
    inner_tol: f64,
    inner_max: usize,
) -> ColumnOutcome {
    for i in 0..x.len() {
        if !wcol[i] {
            x[i] = target[i];
        }
    }
    if wcol.iter().all(|&o| !o) {
        return ColumnOutcome::Unobserved;
    }
    let mut lam = *lambda;
    let mut degenerate = false;
    for _ in 0..inner_max {
        let mut change: f64 = 0.0;
        let denom = lam * lam + tau;
        let mut xm = 0.0;
        let mut xx = 0.0;
        for i in 0..x.len() {
            if wcol[i] {
                let v = (lam * mcol[i] + tau * target[i]) / denom;
                change = change.max((v - x[i]).abs());
                x[i] = v;
                xm += v * mcol[i];
                xx += v * v;
            }
        }
        if xx > 0.0 {
            let new = (xm / xx).clamp(-1.0, 0.0);
            change = change.max((new - lam).abs());
            lam = new;
            degenerate = false;
        } else {
            degenerate = true;
        }
        if change < inner_tol {
            break;
        }
    }
    *lambda = lam;
    if degenerate {
        ColumnOutcome::Degenerate
    } else {
        ColumnOutcome::Ok
    }
}

/// `Y = D_{c/tau}(X - Gamma + (c/tau) U3 V3^T)`
pub fn update_y(x: &DMatrix<f64>, admm: &mut AdmmState) {
    let t = admm.c / admm.tau;
    let c = x - &admm.gamma + admm.maj.outer() * t;
    admm.y = shrink(&c, t);
}

/// `Gamma += Y - X`
pub fn update_gamma(x: &DMatrix<f64>, admm: &mut AdmmState) {
    admm.gamma += &admm.y - x;
}

/// Lights and integrable scaled normals used to seed the solver.
#[derive(Debug, Clone)]
pub struct InitialFactors {
    /// `m x 3`
    pub lights: DMatrix<f64>,
    /// `3 x p`
    pub normals: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct JointResult {
    pub state: FactorState,
    pub report: SolverReport,
}

impl JointResult {
    /// Scaled normals `XN diag(lambda)`: with `XN_j = (z_x, z_y, -1)` and
    /// `lambda_j = -rho_j / |n_j|` this is `rho_j n_hat_j`.
    pub fn normals(&self) -> DMatrix<f64> {
        let mut s = self.state.xn.clone();
        for (j, mut col) in s.column_iter_mut().enumerate() {
            col *= self.state.lambda[j];
        }
        s
    }

    /// Lights matching [`normals`](Self::normals), since
    /// `XM diag(lambda) ~ XL XN diag(lambda)`.
    pub fn lights(&self) -> DMatrix<f64> {
        self.state.xl.clone()
    }
}

/// Observation set the solver actually fits: the full mask in NC mode.
pub fn effective_observations(obs: &ObservationSet, mode: Mode) -> ObservationSet {
    match mode {
        Mode::Mc => obs.clone(),
        Mode::Nc => obs.with_full_mask(),
    }
}

/// Runs the nested majorization / ADMM iteration.
pub fn solve_joint(obs: &ObservationSet, init: &InitialFactors, cfg: &JointConfig) -> Result<JointResult> {
    cfg.validate()?;
    let obs = effective_observations(obs, cfg.mode);
    obs.check_columns()?;
    let ops = build_derivative_operators(&obs.grid);
    let integrator = Integrator::new(&obs.grid, &ops)?;
    let mut state = FactorState::initial(&obs, &init.lights, &init.normals, &integrator)?;
    let mut report = SolverReport::default();
    run_iterations(&mut state, &obs, &integrator, cfg, &mut report, |_, _| {})?;
    Ok(JointResult { state, report })
}

/// Same as [`solve_joint`] but starting from an explicit state and calling
/// `observer` after every ADMM iteration.
pub fn solve_joint_from(
    state: FactorState,
    obs: &ObservationSet,
    cfg: &JointConfig,
    observer: impl FnMut(&FactorState, &AdmmState),
) -> Result<JointResult> {
    cfg.validate()?;
    let obs = effective_observations(obs, cfg.mode);
    obs.check_columns()?;
    let ops = build_derivative_operators(&obs.grid);
    let integrator = Integrator::new(&obs.grid, &ops)?;
    let mut state = state;
    let mut report = SolverReport::default();
    run_iterations(&mut state, &obs, &integrator, cfg, &mut report, observer)?;
    Ok(JointResult { state, report })
}

fn objective_parts(state: &FactorState, obs: &ObservationSet, x: &DMatrix<f64>) -> (f64, f64, SvdTriple) {
    let d = svd(x);
    let s: Vec<f64> = d.s.iter().copied().collect();
    (f_data(state, obs), tnn_from_singular_values(&s), d)
}

fn run_iterations(
    state: &mut FactorState,
    obs: &ObservationSet,
    integrator: &Integrator,
    cfg: &JointConfig,
    report: &mut SolverReport,
    mut observer: impl FnMut(&FactorState, &AdmmState),
) -> Result<()> {
    let mut x = state.assemble();
    let (fd, ft, mut decomposition) = objective_parts(state, obs, &x);
    let initial = fd + cfg.c * ft;
    report.objective.push(initial);
    report.tnn.push(ft);
    // Guard against a zero initial objective (exact initialization).
    let divergence_base = initial.max(1e-12 * obs.m.norm_squared());

    let mut admm = AdmmState::new(&x, cfg.tau, cfg.c)?;
    let mut prev = initial;
    for outer in 0..cfg.outer_max {
        admm.maj = MajorizerFactors::from_svd(&decomposition)?;
        let mut inner = 0;
        let mut inner_ok = false;
        while inner < cfg.admm_max {
            inner += 1;
            update_xi(state);
            update_xl(state, &admm);
            update_xn_and_z(state, &admm, integrator)?;
            let stats = update_xm_and_lambda(state, &admm, obs, cfg.inner_tol, cfg.inner_max);
            report.degenerate_columns = stats.degenerate_columns;
            x = state.assemble();
            update_y(&x, &mut admm);
            update_gamma(&x, &mut admm);
            let res = (&admm.y - &x).norm() / x.norm().max(1.0);
            report.primal_residual.push(res);
            observer(state, &admm);
            if !res.is_finite() {
                return Err(Error::Divergence {
                    outer,
                    objective: f64::NAN,
                    initial,
                    trace: report.objective.clone(),
                });
            }
            if res <= cfg.admm_tol {
                inner_ok = true;
                break;
            }
        }
        report.inner_iterations.push(inner);
        report.inner_converged.push(inner_ok);
        report.outer_iterations = outer + 1;

        let (fd, ft, d) = objective_parts(state, obs, &x);
        decomposition = d;
        let obj = fd + cfg.c * ft;
        report.objective.push(obj);
        report.tnn.push(ft);
        log::debug!("outer {outer}: {inner} ADMM iterations, f_data {fd:e}, f_tnn {ft:e}");
        if !(obj <= 1e3 * divergence_base) {
            return Err(Error::Divergence {
                outer,
                objective: obj,
                initial,
                trace: report.objective.clone(),
            });
        }
        if (prev - obj).abs() <= cfg.outer_tol * prev.abs() {
            report.converged = true;
            break;
        }
        prev = obj;
    }
    report.final_f_data = f_data(state, obs);
    Ok(())
}
