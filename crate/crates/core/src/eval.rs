//! Ground-truth alignment up to GBR, error metrics and the randomized trial
//! harness.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector, Matrix3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{DepthMap, PixelGrid};
use crate::joint::JointConfig;
use crate::photometric::{derive_seed, generate_scene, SceneSpec, Shape};
use crate::pipeline::{run_method, Method};
use crate::rpca::RpcaConfig;

/// Depth-space GBR `z' = lam z + mu x + nu y + c0`, with `(x, y)` the pixel
/// coordinates centered over the mask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GbrTransform {
    pub lam: f64,
    pub mu: f64,
    pub nu: f64,
    pub c0: f64,
}

impl GbrTransform {
    pub fn apply(&self, z: &DepthMap, grid: &PixelGrid) -> DepthMap {
        let (xs, ys) = grid.centered_coordinates();
        DepthMap(
            z.values()
                .iter()
                .zip(xs.iter().zip(&ys))
                .map(|(&v, (&x, &y))| self.lam * v + self.mu * x + self.nu * y + self.c0)
                .collect(),
        )
    }
}

#[derive(Debug, Clone)]
pub struct GbrFit {
    pub transform: GbrTransform,
    pub aligned: DepthMap,
    /// `||z_true - aligned||_2`
    pub residual: f64,
    /// `z_rec` is (numerically) affine in the pixel coordinates, so `lam`
    /// is not identifiable.
    pub degenerate: bool,
}

/// Least-squares fit of `(lam, mu, nu, c0)` mapping `z_rec` onto `z_true`.
pub fn fit_gbr_depth(z_rec: &DepthMap, z_true: &DepthMap, grid: &PixelGrid) -> Result<GbrFit> {
    let p = grid.len();
    if z_rec.len() != p || z_true.len() != p {
        return Err(Error::Dimension(format!(
            "depth maps have {} and {} pixels, grid has {p}",
            z_rec.len(),
            z_true.len()
        )));
    }
    let (xs, ys) = grid.centered_coordinates();
    let mut a = DMatrix::zeros(p, 4);
    for j in 0..p {
        a[(j, 0)] = z_rec.values()[j];
        a[(j, 1)] = xs[j];
        a[(j, 2)] = ys[j];
        a[(j, 3)] = 1.0;
    }
    let b = DVector::from_column_slice(z_true.values());

    // Affine part alone, to detect an unidentifiable lam.
    let affine = a.columns(1, 3).into_owned();
    let zr = DVector::from_column_slice(z_rec.values());
    let affine_fit = affine
        .clone()
        .svd(true, true)
        .solve(&zr, 1e-12)
        .map_err(|e| Error::InvalidArgument(e.into()))?;
    let detrended = (&zr - &affine * affine_fit).norm();
    let degenerate = !(detrended > 1e-10 * zr.norm().max(1e-300));

    let coef = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| Error::InvalidArgument(e.into()))?;
    let transform = GbrTransform {
        lam: coef[0],
        mu: coef[1],
        nu: coef[2],
        c0: coef[3],
    };
    let fitted = &a * &coef;
    let residual = (&b - &fitted).norm();
    if degenerate {
        log::warn!("reconstructed depth is affine in the pixel coordinates; GBR scale is unidentifiable");
    }
    Ok(GbrFit {
        transform,
        aligned: DepthMap(fitted.iter().copied().collect()),
        residual,
        degenerate,
    })
}

/// `100 ||z_true - z_aligned|| / ||z_true||`
pub fn z_err(z_aligned: &DepthMap, z_true: &DepthMap) -> Result<f64> {
    let norm: f64 = z_true.values().iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return Err(Error::InvalidArgument("ground-truth depth has zero norm".into()));
    }
    if z_aligned.len() != z_true.len() {
        return Err(Error::Dimension("depth maps differ in length".into()));
    }
    let diff: f64 = z_true
        .values()
        .iter()
        .zip(z_aligned.values())
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * diff / norm)
}

/// Mean of `(e_b - e_a) / e_b` in percent: how much `a` improves on `b`.
pub fn relative_improvement(errs_a: &[f64], errs_b: &[f64]) -> Result<f64> {
    check_pairs(errs_a, errs_b)?;
    if errs_b.iter().any(|&b| !(b > 0.0)) {
        return Err(Error::InvalidArgument("reference errors must be positive".into()));
    }
    let sum: f64 = errs_a.iter().zip(errs_b).map(|(a, b)| (b - a) / b).sum();
    Ok(100.0 * sum / errs_a.len() as f64)
}

/// Percentage of trials with `e_a < e_b` (ties do not count).
pub fn percent_improved_trials(errs_a: &[f64], errs_b: &[f64]) -> Result<f64> {
    check_pairs(errs_a, errs_b)?;
    let wins = errs_a.iter().zip(errs_b).filter(|(a, b)| a < b).count();
    Ok(100.0 * wins as f64 / errs_a.len() as f64)
}

fn check_pairs(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("{} vs {} trials", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("no trials".into()));
    }
    Ok(())
}

/// Normal-space GBR `[[a, 0, b], [0, a, c], [0, 0, d]]` fitted so that
/// `G s_true ~ s`.
#[derive(Debug, Clone)]
pub struct NormalGbrFit {
    pub g: Matrix3<f64>,
    /// `||s - G s_true||_F / ||s||_F`
    pub relative_residual: f64,
}

pub fn fit_gbr_normals(s: &DMatrix<f64>, s_true: &DMatrix<f64>) -> Result<NormalGbrFit> {
    if s.shape() != s_true.shape() || s.nrows() != 3 {
        return Err(Error::Dimension("normal fields must both be 3 x p".into()));
    }
    let p = s.ncols();
    let mut a = DMatrix::zeros(3 * p, 4);
    let mut b = DVector::zeros(3 * p);
    for j in 0..p {
        let (t1, t2, t3) = (s_true[(0, j)], s_true[(1, j)], s_true[(2, j)]);
        a[(3 * j, 0)] = t1;
        a[(3 * j, 1)] = t3;
        a[(3 * j + 1, 0)] = t2;
        a[(3 * j + 1, 2)] = t3;
        a[(3 * j + 2, 3)] = t3;
        b[3 * j] = s[(0, j)];
        b[3 * j + 1] = s[(1, j)];
        b[3 * j + 2] = s[(2, j)];
    }
    let coef = a
        .clone()
        .svd(true, true)
        .solve(&b, 1e-14)
        .map_err(|e| Error::InvalidArgument(e.into()))?;
    let g = Matrix3::new(coef[0], 0.0, coef[1], 0.0, coef[0], coef[2], 0.0, 0.0, coef[3]);
    let relative_residual = (&b - &a * &coef).norm() / s.norm();
    Ok(NormalGbrFit { g, relative_residual })
}

/// Grid of synthetic trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialPlan {
    pub shapes: Vec<Shape>,
    pub image_counts: Vec<usize>,
    pub noise_levels: Vec<f64>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// Template for every scene; `shape`, `m` and `noise` are overridden per
    /// cell.
    pub scene: SceneSpec,
    pub rpca: RpcaConfig,
    pub joint: JointConfig,
}

impl Default for TrialPlan {
    fn default() -> Self {
        Self {
            shapes: vec![Shape::sphere()],
            image_counts: vec![4, 6, 8, 10],
            noise_levels: vec![0.01, 0.03, 0.05, 0.07],
            seeds: (0..5).collect(),
            methods: Method::ALL.to_vec(),
            scene: SceneSpec::default(),
            rpca: RpcaConfig::default(),
            joint: JointConfig::default(),
        }
    }
}

/// One synthetic scene of the grid; every method runs on it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialCell {
    pub shape_index: usize,
    pub shape: String,
    pub m: usize,
    pub noise: f64,
    pub seed: u64,
}

impl TrialCell {
    /// Seed for scene generation, distinct per cell.
    pub fn scene_seed(&self) -> u64 {
        let mut s = derive_seed(self.seed, self.shape_index as u64);
        s = derive_seed(s, self.m as u64);
        derive_seed(s, self.noise.to_bits())
    }
}

impl TrialPlan {
    pub fn cells(&self) -> Vec<TrialCell> {
        let mut cells = Vec::new();
        for (shape_index, shape) in self.shapes.iter().enumerate() {
            for &m in &self.image_counts {
                for &noise in &self.noise_levels {
                    for &seed in &self.seeds {
                        cells.push(TrialCell {
                            shape_index,
                            shape: shape.name(),
                            m,
                            noise,
                            seed,
                        });
                    }
                }
            }
        }
        cells
    }

    pub fn run_cell(&self, cell: &TrialCell) -> Vec<TrialRecord> {
        let spec = SceneSpec {
            shape: self.shapes[cell.shape_index].clone(),
            m: cell.m,
            noise: cell.noise,
            ..self.scene.clone()
        };
        let record = |method: Method, z_err: Option<f64>, error: Option<String>| TrialRecord {
            method,
            m: cell.m,
            noise: cell.noise,
            seed: cell.seed,
            z_err,
            shape: cell.shape.clone(),
            error,
        };
        let scene = match generate_scene(&spec, cell.scene_seed()) {
            Ok(s) => s,
            Err(e) => return self.methods.iter().map(|&m| record(m, None, Some(e.to_string()))).collect(),
        };
        self.methods
            .iter()
            .map(|&method| {
                let outcome = run_method(&scene.obs, method, &self.rpca, &self.joint).and_then(|out| {
                    let fit = fit_gbr_depth(&out.depth, &scene.surface.depth, &scene.obs.grid)?;
                    z_err(&fit.aligned, &scene.surface.depth)
                });
                match outcome {
                    Ok(v) => record(method, Some(v), None),
                    Err(e) => record(method, None, Some(e.to_string())),
                }
            })
            .collect()
    }
}

/// Per-trial outcome. `z_err` is absent when the method failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub m: usize,
    pub noise: f64,
    pub seed: u64,
    pub z_err: Option<f64>,
    pub shape: String,
    pub error: Option<String>,
}

impl TrialRecord {
    fn sort_key(&self) -> (String, usize, u64, u64, String) {
        (self.method.to_string(), self.m, self.noise.to_bits(), self.seed, self.shape.clone())
    }

    /// Identifies the scene the record was measured on.
    pub fn cell_key(&self) -> (String, usize, u64, u64) {
        (self.shape.clone(), self.m, self.noise.to_bits(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairAggregate {
    pub m: usize,
    /// The method being credited.
    pub method_a: Method,
    /// The reference method.
    pub method_b: Method,
    pub trials: usize,
    pub relative_improvement: Option<f64>,
    pub percent_improved_trials: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodAggregate {
    pub m: usize,
    pub method: Method,
    pub trials: usize,
    pub failures: usize,
    pub median_z_err: Option<f64>,
    pub mean_z_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub records: Vec<TrialRecord>,
    pub pairs: Vec<PairAggregate>,
    pub methods: Vec<MethodAggregate>,
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl EvalReport {
    /// Sorts records canonically and recomputes every aggregate from them.
    pub fn from_records(mut records: Vec<TrialRecord>) -> Self {
        records.sort_by_key(|r| r.sort_key());
        let mut by_m: BTreeMap<usize, BTreeMap<Method, BTreeMap<(String, usize, u64, u64), Option<f64>>>> = BTreeMap::new();
        for r in &records {
            by_m.entry(r.m)
                .or_default()
                .entry(r.method)
                .or_default()
                .insert(r.cell_key(), r.z_err);
        }
        let mut pairs = Vec::new();
        let mut methods = Vec::new();
        for (&m, per_method) in &by_m {
            for (&method, trials) in per_method {
                let ok: Vec<f64> = trials.values().flatten().copied().collect();
                methods.push(MethodAggregate {
                    m,
                    method,
                    trials: trials.len(),
                    failures: trials.len() - ok.len(),
                    median_z_err: median(&ok),
                    mean_z_err: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
                });
            }
            for (&a, ta) in per_method {
                for (&b, tb) in per_method {
                    if a == b {
                        continue;
                    }
                    let (ea, eb): (Vec<f64>, Vec<f64>) = ta
                        .iter()
                        .filter_map(|(k, va)| Some(((*va)?, (*tb.get(k)?)?)))
                        .unzip();
                    pairs.push(PairAggregate {
                        m,
                        method_a: a,
                        method_b: b,
                        trials: ea.len(),
                        relative_improvement: relative_improvement(&ea, &eb).ok(),
                        percent_improved_trials: percent_improved_trials(&ea, &eb).ok(),
                    });
                }
            }
        }
        Self { records, pairs, methods }
    }

    pub fn pair(&self, m: usize, a: Method, b: Method) -> Option<&PairAggregate> {
        self.pairs.iter().find(|p| p.m == m && p.method_a == a && p.method_b == b)
    }

    pub fn method(&self, m: usize, method: Method) -> Option<&MethodAggregate> {
        self.methods.iter().find(|p| p.m == m && p.method == method)
    }

    /// Tidy CSV: `method,m,noise,seed,z_err,shape,error`.
    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        write_records_csv(&self.records, out)
    }

    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            trials: usize,
            pairs: &'a [PairAggregate],
            methods: &'a [MethodAggregate],
        }
        serde_json::to_string_pretty(&Summary {
            trials: self.records.len(),
            pairs: &self.pairs,
            methods: &self.methods,
        })
        .expect("summary is serializable")
            + "\n"
    }
}

pub const CSV_HEADER: [&str; 7] = ["method", "m", "noise", "seed", "z_err", "shape", "error"];

pub fn write_records_csv(records: &[TrialRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.method.to_string(),
            r.m.to_string(),
            r.noise.to_string(),
            r.seed.to_string(),
            r.z_err.map(|v| v.to_string()).unwrap_or_default(),
            r.shape.clone(),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_records_csv(path: &Path) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let bad = |what: &str| Error::format(path, format!("bad {what} in row {row:?}"));
        let opt = |s: &str| (!s.is_empty()).then(|| s.to_string());
        out.push(TrialRecord {
            method: row[0].parse().map_err(|_| bad("method"))?,
            m: row[1].parse().map_err(|_| bad("m"))?,
            noise: row[2].parse().map_err(|_| bad("noise"))?,
            seed: row[3].parse().map_err(|_| bad("seed"))?,
            z_err: match &row[4] {
                "" => None,
                s => Some(s.parse().map_err(|_| bad("z_err"))?),
            },
            shape: row[5].to_string(),
            error: opt(&row[6]),
        });
    }
    Ok(out)
}

/// Runs every cell of the plan (in parallel) and aggregates. Cells listed
/// in `done` are not rerun; their records are taken from `done`.
pub fn run_trial_grid_resuming(
    plan: &TrialPlan,
    done: Vec<TrialRecord>,
    on_cell: impl Fn(&[TrialRecord]) + Sync,
) -> EvalReport {
    let finished: std::collections::HashSet<(String, usize, u64, u64)> = {
        let mut per_cell: BTreeMap<(String, usize, u64, u64), Vec<Method>> = BTreeMap::new();
        for r in &done {
            per_cell.entry(r.cell_key()).or_default().push(r.method);
        }
        per_cell
            .into_iter()
            .filter(|(_, ms)| plan.methods.iter().all(|m| ms.contains(m)))
            .map(|(k, _)| k)
            .collect()
    };
    let cells = plan.cells();
    let keep: Vec<TrialRecord> = done
        .into_iter()
        .filter(|r| finished.contains(&r.cell_key()) && plan.methods.contains(&r.method))
        .collect();
    let fresh: Vec<TrialRecord> = cells
        .par_iter()
        .filter(|c| !finished.contains(&(c.shape.clone(), c.m, c.noise.to_bits(), c.seed)))
        .flat_map_iter(|c| {
            let recs = plan.run_cell(c);
            on_cell(&recs);
            recs
        })
        .collect();
    EvalReport::from_records(keep.into_iter().chain(fresh).collect())
}

pub fn run_trial_grid(plan: &TrialPlan) -> EvalReport {
    run_trial_grid_resuming(plan, Vec::new(), |_| {})
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid4() -> PixelGrid {
        PixelGrid::full(4, 4).unwrap()
    }

    fn bowl(g: &PixelGrid) -> DepthMap {
        DepthMap(g.pixels().iter().map(|&(x, y)| ((x * x + 2 * y * y) as f64) * 0.1 + 1.0).collect())
    }

    #[test]
    fn identity_fit() {
        let g = grid4();
        let z = bowl(&g);
        let fit = fit_gbr_depth(&z, &z, &g).unwrap();
        assert!((fit.transform.lam - 1.0).abs() < 1e-12);
        assert!(fit.transform.mu.abs() < 1e-12 && fit.transform.nu.abs() < 1e-12 && fit.transform.c0.abs() < 1e-12);
        assert!(fit.residual < 1e-12);
    }

    #[test]
    fn recovers_constructed_gbr() {
        let g = grid4();
        let zt = bowl(&g);
        let rec = DepthMap(
            zt.values()
                .iter()
                .zip(g.pixels())
                .map(|(&z, &(x, y))| (z - 3.0 * x as f64 + 2.0 * y as f64) / 5.0)
                .collect(),
        );
        let fit = fit_gbr_depth(&rec, &zt, &g).unwrap();
        assert!((fit.transform.lam - 5.0).abs() < 1e-10);
        assert!((fit.transform.mu - 3.0).abs() < 1e-10);
        assert!((fit.transform.nu + 2.0).abs() < 1e-10);
        assert!(fit.residual <= 1e-10);
    }

    #[test]
    fn orthogonal_reconstruction_leaves_projection_residual() {
        let g = grid4();
        let (xs, ys) = g.centered_coordinates();
        let zt = bowl(&g);
        // Build z_rec orthogonal to span{z_true, x, y, 1} by Gram-Schmidt.
        let basis: Vec<DVector<f64>> = vec![
            DVector::from_element(16, 1.0),
            DVector::from_vec(xs.clone()),
            DVector::from_vec(ys.clone()),
            DVector::from_column_slice(zt.values()),
        ];
        let mut q: Vec<DVector<f64>> = Vec::new();
        for b in &basis {
            let mut v = b.clone();
            for u in &q {
                v -= u * u.dot(b);
            }
            q.push(v.normalize());
        }
        let mut r = DVector::from_fn(16, |i, _| ((i * 5) % 7) as f64 - 3.0);
        let r0 = r.clone();
        for u in &q {
            r -= u * u.dot(&r0);
        }
        let fit = fit_gbr_depth(&DepthMap(r.iter().copied().collect()), &zt, &g).unwrap();
        // Best fit uses only the affine part; residual is z_true with its
        // projection onto span{1, x, y} removed.
        let zt_v = DVector::from_column_slice(zt.values());
        let mut proj = zt_v.clone();
        for u in &q[..3] {
            proj -= u * u.dot(&zt_v);
        }
        assert!((fit.residual - proj.norm()).abs() < 1e-10);
    }

    #[test]
    fn constant_reconstruction_is_flagged() {
        let g = grid4();
        let fit = fit_gbr_depth(&DepthMap(vec![2.0; 16]), &bowl(&g), &g).unwrap();
        assert!(fit.degenerate);
    }

    #[test]
    fn metric_fixtures() {
        let zt = DepthMap(vec![1.0, -2.0, 3.0]);
        assert_eq!(z_err(&zt, &zt).unwrap(), 0.0);
        assert_eq!(z_err(&DepthMap(vec![0.0; 3]), &zt).unwrap(), 100.0);
        let scaled = DepthMap(zt.values().iter().map(|v| 1.01 * v).collect());
        assert!((z_err(&scaled, &zt).unwrap() - 1.0).abs() < 1e-12);

        assert_eq!(relative_improvement(&[2.0, 3.0], &[2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(relative_improvement(&[1.0, 1.0], &[2.0, 4.0]).unwrap(), 62.5);
        assert!(relative_improvement(&[3.0, 5.0], &[2.0, 4.0]).unwrap() < 0.0);

        assert_eq!(percent_improved_trials(&[1.0, 1.0], &[2.0, 2.0]).unwrap(), 100.0);
        assert_eq!(percent_improved_trials(&[2.0, 2.0], &[2.0, 2.0]).unwrap(), 0.0);
        assert_eq!(percent_improved_trials(&[1.0, 3.0], &[2.0, 2.0]).unwrap(), 50.0);
    }

    #[test]
    fn normal_gbr_fit_recovers_transform() {
        let st = DMatrix::from_fn(3, 20, |r, j| if r == 2 { 1.0 + 0.1 * j as f64 } else { ((r * 7 + j * 3) % 5) as f64 - 2.0 });
        let g = Matrix3::new(-1.5, 0.0, 0.3, 0.0, -1.5, -0.2, 0.0, 0.0, 0.7);
        let s = DMatrix::from_fn(3, 3, |r, c| g[(r, c)]) * &st;
        let fit = fit_gbr_normals(&s, &st).unwrap();
        assert!(fit.relative_residual < 1e-12);
        assert!((fit.g - g).norm() < 1e-10);
    }

    #[test]
    fn aggregates_are_recomputable() {
        let rec = |method, seed, z| TrialRecord {
            method,
            m: 4,
            noise: 0.03,
            seed,
            z_err: z,
            shape: "sphere".into(),
            error: None,
        };
        let records = vec![
            rec(Method::JointMc, 0, Some(1.0)),
            rec(Method::Baseline, 0, Some(2.0)),
            rec(Method::JointMc, 1, Some(3.0)),
            rec(Method::Baseline, 1, Some(2.0)),
            rec(Method::JointMc, 2, None),
            rec(Method::Baseline, 2, Some(5.0)),
        ];
        let report = EvalReport::from_records(records.clone());
        let p = report.pair(4, Method::JointMc, Method::Baseline).unwrap();
        assert_eq!(p.trials, 2);
        assert_eq!(p.percent_improved_trials, Some(50.0));
        assert_eq!(p.relative_improvement, Some(100.0 * (0.5 + -0.5) / 2.0));
        let again = EvalReport::from_records(report.records.clone());
        assert_eq!(again, report);
        assert_eq!(report.method(4, Method::JointMc).unwrap().failures, 1);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        report.write_csv(std::fs::File::create(&path).unwrap()).unwrap();
        assert_eq!(read_records_csv(&path).unwrap(), report.records);
    }

    #[test]
    fn plan_cell_enumeration() {
        let plan = TrialPlan {
            image_counts: vec![4, 6, 8, 10],
            noise_levels: vec![0.01, 0.03, 0.05, 0.07],
            seeds: vec![0],
            ..Default::default()
        };
        let cells = plan.cells();
        assert_eq!(cells.len(), 16);
        let ms: std::collections::BTreeSet<usize> = cells.iter().map(|c| c.m).collect();
        assert_eq!(ms.into_iter().collect::<Vec<_>>(), vec![4, 6, 8, 10]);
    }
}
