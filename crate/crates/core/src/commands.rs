//! Library side of the command-line subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::eval::{fit_gbr_depth, run_trial_grid_resuming, z_err, EvalReport, GbrTransform, TrialRecord};
use crate::io::{
    load_observations, read_depth_pfm, read_lines_if_exists, read_mask, write_depth_pfm, write_lights_csv,
    write_normals_pfm, write_scene,
};
use crate::grid::{DepthMap, PixelGrid};
use crate::photometric::generate_scene;
use crate::pipeline::{run_method, Method, MethodOutput};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Renders the configured scene into `out`.
pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let scene = generate_scene(&cfg.scene, cfg.seed)?;
    create_dir(out)?;
    write_scene(out, &scene)?;
    cfg.save(&out.join("config.toml"))?;
    log::info!(
        "wrote {} images of {} pixels ({:.2}% unobserved) to {}",
        scene.obs.images(),
        scene.obs.pixels(),
        100.0 * scene.obs.missing_fraction(),
        out.display()
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    method: Method,
    images: usize,
    pixels: usize,
    missing_fraction: f64,
    outer_iterations: Option<usize>,
    converged: Option<bool>,
    final_f_data: Option<f64>,
    final_tnn: Option<f64>,
    degenerate_columns: Option<usize>,
}

/// Reconstructs the dataset in `data` with `method` and writes `depth.pfm`,
/// `normals.pfm`, `lights.csv`, `report.csv` and `summary.json` into `out`.
pub fn cmd_solve(data: &Path, cfg: &RunConfig, method: Method, out: &Path) -> Result<MethodOutput> {
    cfg.validate()?;
    let obs = load_observations(data, cfg.scene.missing_low, cfg.scene.missing_high)?;
    let result = run_method(&obs, method, &cfg.rpca, &cfg.joint)?;
    create_dir(out)?;
    write_depth_pfm(&out.join("depth.pfm"), &obs.grid, &result.depth)?;
    write_normals_pfm(&out.join("normals.pfm"), &obs.grid, &result.normals)?;
    write_lights_csv(&out.join("lights.csv"), &result.lights)?;

    let report_path = out.join("report.csv");
    let mut w = csv::Writer::from_path(&report_path)?;
    w.write_record(["outer", "objective", "tnn", "admm_iterations", "admm_converged"])?;
    if let Some(r) = &result.report {
        for k in 0..r.objective.len() {
            let inner = k.checked_sub(1);
            w.write_record([
                k.to_string(),
                r.objective[k].to_string(),
                r.tnn[k].to_string(),
                inner.map(|i| r.inner_iterations[i].to_string()).unwrap_or_default(),
                inner.map(|i| r.inner_converged[i].to_string()).unwrap_or_default(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&report_path, e))?;

    let r = result.report.as_ref();
    let summary = SolveSummary {
        method,
        images: obs.images(),
        pixels: obs.pixels(),
        missing_fraction: obs.missing_fraction(),
        outer_iterations: r.map(|r| r.outer_iterations),
        converged: r.map(|r| r.converged),
        final_f_data: r.map(|r| r.final_f_data),
        final_tnn: r.and_then(|r| r.tnn.last().copied()),
        degenerate_columns: r.map(|r| r.degenerate_columns),
    };
    write_file(&out.join("summary.json"), serde_json::to_string_pretty(&summary).expect("serializable") + "\n")?;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutcome {
    pub z_err: f64,
    pub transform: GbrTransform,
    pub residual: f64,
    pub degenerate: bool,
}

/// Compares `result/depth.pfm` against `truth/depth.pfm` over `truth/mask.png`
/// and writes `metrics.csv`, `depth_aligned.pfm` and `abs_error.pfm`.
pub fn cmd_eval(result: &Path, truth: &Path, out: &Path) -> Result<EvalOutcome> {
    let mask_path = truth.join("mask.png");
    let (w, h, mask) = read_mask(&mask_path)?;
    let grid = PixelGrid::new(h, w, mask)?;
    let z_true = read_depth_pfm(&truth.join("depth.pfm"), &grid)?;
    let z_rec = read_depth_pfm(&result.join("depth.pfm"), &grid)?;
    let fit = fit_gbr_depth(&z_rec, &z_true, &grid)?;
    let err = z_err(&fit.aligned, &z_true)?;
    create_dir(out)?;
    write_depth_pfm(&out.join("depth_aligned.pfm"), &grid, &fit.aligned)?;
    let abs = DepthMap(
        fit.aligned
            .values()
            .iter()
            .zip(z_true.values())
            .map(|(a, b)| (a - b).abs())
            .collect(),
    );
    write_depth_pfm(&out.join("abs_error.pfm"), &grid, &abs)?;
    let t = fit.transform;
    let metrics_path = out.join("metrics.csv");
    let mut wtr = csv::Writer::from_path(&metrics_path)?;
    wtr.write_record(["z_err", "lam", "mu", "nu", "c0", "residual", "degenerate"])?;
    wtr.write_record([
        err.to_string(),
        t.lam.to_string(),
        t.mu.to_string(),
        t.nu.to_string(),
        t.c0.to_string(),
        fit.residual.to_string(),
        fit.degenerate.to_string(),
    ])?;
    wtr.flush().map_err(|e| Error::io(&metrics_path, e))?;
    Ok(EvalOutcome {
        z_err: err,
        transform: t,
        residual: fit.residual,
        degenerate: fit.degenerate,
    })
}

pub const BENCH_RESULTS: &str = "results.csv";
pub const BENCH_SUMMARY: &str = "summary.json";
pub const BENCH_PROGRESS: &str = "progress.jsonl";
pub const BENCH_CONFIG: &str = "config.toml";

/// Runs the configured trial grid. Completed cells are appended to
/// `progress.jsonl` as they finish, so an interrupted run resumes where it
/// stopped; progress from a different configuration is discarded. The final
/// `results.csv` is sorted and independent of scheduling.
pub fn cmd_bench(cfg: &RunConfig, out: &Path) -> Result<EvalReport> {
    cfg.validate()?;
    create_dir(out)?;
    let config_text = cfg.to_toml_string()?;
    let config_path = out.join(BENCH_CONFIG);
    let progress_path = out.join(BENCH_PROGRESS);
    let same_config = fs::read_to_string(&config_path).is_ok_and(|s| s == config_text);
    let done: Vec<TrialRecord> = if same_config {
        read_lines_if_exists(&progress_path)?
            .iter()
            .filter(|l| !l.trim().is_empty())
            // A torn final line from an interrupted write is skipped; its
            // cell is incomplete and gets rerun.
            .filter_map(|l| serde_json::from_str(l).ok())
            .collect()
    } else {
        write_file(&config_path, &config_text)?;
        Vec::new()
    };
    // Rewrite progress with only the parsed records so appends start clean.
    let mut file = fs::File::create(&progress_path).map_err(|e| Error::io(&progress_path, e))?;
    for r in &done {
        writeln!(file, "{}", serde_json::to_string(r).expect("serializable")).map_err(|e| Error::io(&progress_path, e))?;
    }
    let file = Mutex::new(file);
    let plan = cfg.trial_plan();
    let total = plan.cells().len();
    let finished = Mutex::new(0usize);
    let report = run_trial_grid_resuming(&plan, done, |records| {
        let mut f = file.lock().expect("progress lock");
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).expect("serializable"));
            buf.push('\n');
        }
        if let Err(e) = f.write_all(buf.as_bytes()).and_then(|_| f.flush()) {
            log::warn!("could not record progress: {e}");
        }
        let mut n = finished.lock().expect("counter lock");
        *n += 1;
        log::info!("bench: {} / {total} fresh cells finished", *n);
    });
    let results_path: PathBuf = out.join(BENCH_RESULTS);
    let f = fs::File::create(&results_path).map_err(|e| Error::io(&results_path, e))?;
    report.write_csv(f)?;
    write_file(&out.join(BENCH_SUMMARY), report.summary_json())?;
    Ok(report)
}
