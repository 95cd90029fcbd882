//! End-to-end runs of the library-side subcommands on small datasets.

use std::fs;
use std::path::Path;

use photostereo::commands::{cmd_bench, cmd_eval, cmd_solve, cmd_synth};
use photostereo::grid::{build_derivative_operators, Integrator};
use photostereo::io::load_observations_default;
use photostereo::joint::{f_data, FactorState, Init};
use photostereo::{run_baseline, Error, Method, RunConfig};

fn small_config(m: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.seed = 7;
    cfg.scene.width = 20;
    cfg.scene.height = 18;
    cfg.scene.m = m;
    cfg.scene.shadow_free = true;
    cfg.joint.outer_max = 2000;
    cfg
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            let bytes = if e.path().is_dir() { Vec::new() } else { fs::read(e.path()).unwrap() };
            (e.file_name().to_string_lossy().into_owned(), bytes)
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_is_reproducible_and_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(10);
    cmd_synth(&cfg, &dir.path().join("a")).unwrap();
    cmd_synth(&cfg, &dir.path().join("b")).unwrap();
    let a = files(&dir.path().join("a"));
    assert_eq!(a, files(&dir.path().join("b")));
    let images = files(&dir.path().join("a/images"));
    assert_eq!(images, files(&dir.path().join("b/images")));
    assert_eq!(images.iter().filter(|(n, _)| n.ends_with(".pfm")).count(), 10);
    for name in ["depth.pfm", "normals.pfm", "albedo.pfm", "mask.png", "lights.csv", "config.toml"] {
        assert!(a.iter().any(|(n, _)| n == name), "missing {name}");
    }
    let saved = RunConfig::load(&dir.path().join("a/config.toml")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn synth_rejects_two_images() {
    let dir = tempfile::tempdir().unwrap();
    assert!(cmd_synth(&small_config(2), dir.path()).is_err());
}

#[test]
fn solve_and_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = small_config(6);
    cmd_synth(&cfg, &data).unwrap();

    // Ground truth scored against itself.
    let e = cmd_eval(&data, &data, &dir.path().join("self")).unwrap();
    assert!(e.z_err.abs() < 1e-6, "{}", e.z_err);

    let mut errs = Vec::new();
    for method in [Method::Baseline, Method::JointMc] {
        let out = dir.path().join(method.name());
        let r = cmd_solve(&data, &cfg, method, &out).unwrap();
        for name in ["depth.pfm", "normals.pfm", "lights.csv", "report.csv", "summary.json"] {
            assert!(out.join(name).exists(), "{method}: missing {name}");
        }
        assert_eq!(r.report.is_some(), method == Method::JointMc);
        let e = cmd_eval(&out, &data, &out.join("eval")).unwrap();
        for name in ["metrics.csv", "depth_aligned.pfm", "abs_error.pfm"] {
            assert!(out.join("eval").join(name).exists());
        }
        errs.push(e.z_err);
    }
    assert!(errs.iter().all(|e| *e < 1.0), "{errs:?}");
}

#[test]
fn eval_names_missing_truth() {
    let dir = tempfile::tempdir().unwrap();
    let err = cmd_eval(dir.path(), dir.path(), &dir.path().join("out")).unwrap_err();
    assert!(err.is_data_error());
    assert!(err.to_string().contains("mask.png"), "{err}");
}

#[test]
fn joint_initialization_reproduces_baseline_residual() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let mut cfg = small_config(6);
    cfg.scene.noise = 0.02;
    cfg.joint.init = Init::Baseline;
    cmd_synth(&cfg, &data).unwrap();
    let obs = load_observations_default(&data).unwrap();
    let b = run_baseline(&obs).unwrap();
    let fit = &b.lights * &b.normals;
    let mut residual = 0.0;
    for (k, (&v, &o)) in obs.m.iter().zip(obs.w.iter()).enumerate() {
        if o {
            residual += (v - fit[k]).powi(2);
        }
    }
    residual *= 0.5;

    let ops = build_derivative_operators(&obs.grid);
    let integrator = Integrator::new(&obs.grid, &ops).unwrap();
    let mut state = FactorState::initial(&obs, &b.lights, &b.normals, &integrator).unwrap();
    // The seeded factors with their implied scales give back L S.
    let s3_max = b.normals.row(2).max();
    state.lambda = b.normals.row(2).iter().map(|s3| -s3 / s3_max).collect();
    state.xm = &state.xl * &state.xn;
    let recomputed = f_data(&state, &obs);
    assert!((recomputed - residual).abs() <= 1e-8 * (1.0 + residual), "{recomputed} vs {residual}");
    assert!(residual > 0.0);
}

#[test]
fn empty_plan_gives_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(4);
    cfg.bench.image_counts.clear();
    let report = cmd_bench(&cfg, dir.path()).unwrap();
    assert!(report.records.is_empty());
    let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1, "{csv}");
}

#[test]
fn interrupted_bench_resumes_to_identical_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(4);
    cfg.bench.image_counts = vec![4];
    cfg.bench.noise_levels = vec![0.01];
    cfg.bench.trials = 3;
    cfg.bench.methods = vec![Method::Baseline, Method::Rpca];
    let full = dir.path().join("full");
    cmd_bench(&cfg, &full).unwrap();

    // Simulate an interruption: keep the first finished cell and a torn line.
    let part = dir.path().join("part");
    fs::create_dir_all(&part).unwrap();
    fs::copy(full.join("config.toml"), part.join("config.toml")).unwrap();
    let progress = fs::read_to_string(full.join("progress.jsonl")).unwrap();
    let lines: Vec<&str> = progress.lines().collect();
    let mut kept = lines[..2].join("\n");
    kept.push('\n');
    kept.push_str(&lines[2][..lines[2].len() / 2]);
    fs::write(part.join("progress.jsonl"), kept).unwrap();
    cmd_bench(&cfg, &part).unwrap();
    assert_eq!(
        fs::read(full.join("results.csv")).unwrap(),
        fs::read(part.join("results.csv")).unwrap()
    );
}

#[test]
fn unknown_method_is_rejected() {
    assert!(matches!("joint".parse::<Method>(), Err(Error::InvalidArgument(_))));
}
