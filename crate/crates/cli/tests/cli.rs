use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photostereo"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path) -> String {
    let path = dir.join("small.toml");
    fs::write(
        &path,
        "seed = 3\n\n[scene]\nwidth = 16\nheight = 16\nm = 5\nshadow_free = true\n\n[joint]\nouter_max = 500\n\n\
         [bench]\nimage_counts = [4]\nnoise_levels = [0.01]\ntrials = 1\nmethods = [\"baseline\"]\n",
    )
    .unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn help_and_version_succeed() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    let out = run(&["solve", "data", "--method", "magic", "--out", "x"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn missing_inputs_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nothing");
    let out = run(&["solve", missing.to_str().unwrap(), "--method", "baseline", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nothing"));
    let out = run(&["synth", "--config", missing.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_scene_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["synth", "--images", "2", "--out", dir.path().join("d").to_str().unwrap()]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn synth_solve_eval_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let data = dir.path().join("data");
    let data_s = data.to_str().unwrap();
    assert!(run(&["synth", "--config", &cfg, "--out", data_s]).status.success());
    assert_eq!(fs::read_dir(data.join("images")).unwrap().count(), 5);

    for (method, extra) in [("baseline", vec![]), ("joint", vec!["--mode", "nc", "--init", "baseline"])] {
        let out = dir.path().join(method);
        let out_s = out.to_str().unwrap();
        let mut args = vec!["solve", data_s, "--config", &cfg, "--method", method, "--out", out_s];
        args.extend(extra);
        let r = run(&args);
        assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
        let summary = fs::read_to_string(out.join("summary.json")).unwrap();
        if method == "joint" {
            assert!(summary.contains("joint-nc"), "{summary}");
        }
        let eval_dir = dir.path().join(format!("{method}-eval"));
        let r = run(&["eval", "--result", out_s, "--truth", data_s, "--out", eval_dir.to_str().unwrap()]);
        assert!(r.status.success());
        let stdout = String::from_utf8_lossy(&r.stdout);
        let z: f64 = stdout.trim().strip_prefix("z_err ").unwrap().parse().unwrap();
        assert!(z < 5.0, "{method}: {z}");
        assert!(eval_dir.join("metrics.csv").exists());
    }
}

#[test]
fn bench_writes_results_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path());
    let out = dir.path().join("bench");
    let out_s = out.to_str().unwrap();
    assert!(run(&["bench", "--config", &cfg, "--trials", "2", "--out", out_s]).status.success());
    let first = fs::read(out.join("results.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&first).lines().count(), 3);
    assert!(out.join("summary.json").exists());
    assert!(run(&["bench", "--config", &cfg, "--trials", "2", "--out", out_s]).status.success());
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), first);
}
