//! Randomized invariants across modules.

use nalgebra::{DMatrix, DVector};
use photostereo::baseline::{curl_residual, resolve_integrability, run_baseline_on, Factorization};
use photostereo::config::RunConfig;
use photostereo::eval::{fit_gbr_depth, z_err, GbrTransform};
use photostereo::grid::{build_derivative_operators, integrate_gradients, DepthMap, Integrator, PixelGrid};
use photostereo::io::{read_pfm, write_pfm, Pfm};
use photostereo::lowrank::{majorizer_value, shrink, svd, tnn, MajorizerFactors};
use photostereo::photometric::{generate_scene, render_lambertian, Lighting, SceneSpec, Surface};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-2.0..2.0f64, rows * cols).prop_map(move |v| DMatrix::from_vec(rows, cols, v))
}

fn sized_matrix() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..8, 1usize..8).prop_flat_map(|(r, c)| matrix(r, c))
}

/// Masked grid on at most 8 x 8 with every pixel in one 4-connected blob
/// grown from the center.
fn connected_grid() -> impl Strategy<Value = PixelGrid> {
    (3usize..9, 3usize..9, prop::collection::vec(any::<bool>(), 64)).prop_map(|(h, w, keep)| {
        let mut mask = vec![false; h * w];
        let mut stack = vec![(w / 2, h / 2)];
        mask[(h / 2) * w + w / 2] = true;
        while let Some((x, y)) = stack.pop() {
            let neighbors = [(x.wrapping_sub(1), y), (x + 1, y), (x, y.wrapping_sub(1)), (x, y + 1)];
            for (nx, ny) in neighbors {
                if nx < w && ny < h && !mask[ny * w + nx] && keep[(ny * w + nx) % 64] {
                    mask[ny * w + nx] = true;
                    stack.push((nx, ny));
                }
            }
        }
        PixelGrid::new(h, w, mask).unwrap()
    })
}

fn smooth_depth(grid: &PixelGrid, a: f64, b: f64, c: f64) -> DepthMap {
    let (xs, ys) = grid.centered_coordinates();
    DepthMap(
        xs.iter()
            .zip(&ys)
            .map(|(&x, &y)| a * (-(x * x + y * y) / 40.0).exp() + b * x * y / 10.0 + c * (x / 3.0).sin() * y / 5.0)
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_reconstructs_with_sorted_nonnegative_values(x in sized_matrix()) {
        let d = svd(&x);
        prop_assert!((d.reconstruct() - &x).norm() <= 1e-10 * (1.0 + x.norm()));
        prop_assert!(d.s.iter().all(|&s| s >= 0.0));
        prop_assert!(d.s.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn shrink_is_non_expansive(a in matrix(5, 6), b in matrix(5, 6), t in 0.0..2.0f64) {
        let lhs = (shrink(&a, t) - shrink(&b, t)).norm();
        prop_assert!(lhs <= (a - b).norm() + 1e-10);
    }

    #[test]
    fn shrink_reduces_each_singular_value(c in matrix(6, 4), t in 0.0..2.0f64) {
        let before = svd(&c).s;
        let after = svd(&shrink(&c, t)).s;
        for (s0, s1) in before.iter().zip(after.iter()) {
            prop_assert!((s1 - (s0 - s0.min(t))).abs() <= 1e-10);
        }
    }

    #[test]
    fn rank_certificate(u in matrix(7, 4), v in matrix(4, 9), eps in 0.0..1e-9f64) {
        // Rank at most 3 plus a tiny fourth direction.
        let mut x = u.columns(0, 3) * v.rows(0, 3);
        x += u.column(3) * v.row(3) * eps;
        let s = svd(&x).s;
        if tnn(&x) <= 1e-8 * s[0] {
            prop_assert!(s[3] <= 1e-7 * s[0]);
        }
    }

    #[test]
    fn majorizer_bounds_tnn(x0 in matrix(5, 7), x in matrix(5, 7)) {
        let f = MajorizerFactors::from_matrix(&x0).unwrap();
        prop_assert!(majorizer_value(&x, &f).unwrap() >= tnn(&x) - 1e-9);
        prop_assert!((majorizer_value(&x0, &f).unwrap() - tnn(&x0)).abs() <= 1e-9);
    }

    #[test]
    fn integration_round_trips(grid in connected_grid(), seed in 0u64..1000) {
        let ops = build_derivative_operators(&grid);
        prop_assume!(grid.len() >= 2 && Integrator::new_connected(&grid, &ops).is_ok());
        let z = DepthMap((0..grid.len()).map(|j| ((j as u64 * 2654435761 + seed) % 1000) as f64 / 500.0 - 1.0).collect()).centered();
        let rec = integrate_gradients(&grid, &ops, &ops.dx.apply(z.values()), &ops.dy.apply(z.values())).unwrap();
        for (a, b) in z.values().iter().zip(rec.values()) {
            prop_assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn integration_is_linear(grid in connected_grid(), k in -3.0..3.0f64) {
        let ops = build_derivative_operators(&grid);
        let n = grid.len();
        let p1: Vec<f64> = (0..n).map(|j| (j as f64 * 0.7).sin()).collect();
        let q1: Vec<f64> = (0..n).map(|j| (j as f64 * 1.3).cos()).collect();
        let p2: Vec<f64> = (0..n).map(|j| (j as f64 * 0.3).cos()).collect();
        let q2: Vec<f64> = (0..n).map(|j| (j as f64 * 2.1).sin()).collect();
        let combo = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x + k * y).collect() };
        let z1 = integrate_gradients(&grid, &ops, &p1, &q1).unwrap();
        let z2 = integrate_gradients(&grid, &ops, &p2, &q2).unwrap();
        let z = integrate_gradients(&grid, &ops, &combo(&p1, &p2), &combo(&q1, &q2)).unwrap();
        for j in 0..n {
            prop_assert!((z.values()[j] - (z1.values()[j] + k * z2.values()[j])).abs() <= 1e-9);
        }
    }

    #[test]
    fn rendering_is_nonnegative_and_scales_with_albedo(a in 0.5..3.0f64, b in -1.0..1.0f64, s in 0.1..1.0f64, l in matrix(4, 3)) {
        let grid = PixelGrid::full(6, 7).unwrap();
        let z = smooth_depth(&grid, a, b, 0.3);
        let lights = Lighting::new(l).unwrap();
        let base = Surface::from_depth(grid.clone(), z.clone(), vec![1.0; grid.len()]).unwrap();
        let scaled = Surface::from_depth(grid.clone(), z, vec![s; grid.len()]).unwrap();
        let m = render_lambertian(&base, &lights);
        prop_assert!(m.iter().all(|&v| v >= 0.0));
        prop_assert!((render_lambertian(&scaled, &lights) - m * s).norm() <= 1e-12);
    }

    #[test]
    fn surface_normals_integrate_back_to_depth(a in 0.5..3.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64) {
        let grid = PixelGrid::from_fn(9, 8, |x, y| (x as f64 - 3.5).powi(2) + (y as f64 - 4.0).powi(2) < 18.0).unwrap();
        let z = smooth_depth(&grid, a, b, c).centered();
        let s = Surface::from_depth(grid.clone(), z.clone(), vec![0.5; grid.len()]).unwrap();
        let p: Vec<f64> = s.normals.row(0).iter().map(|v| -v).collect();
        let q: Vec<f64> = s.normals.row(1).iter().map(|v| -v).collect();
        let rec = integrate_gradients(&grid, &s.ops, &p, &q).unwrap();
        for (u, v) in z.values().iter().zip(rec.values()) {
            prop_assert!((u - v).abs() <= 1e-10);
        }
    }

    #[test]
    fn gbr_fit_absorbs_any_gbr(lam in prop_oneof![0.2..5.0f64, -5.0..-0.2f64], mu in -3.0..3.0f64, nu in -3.0..3.0f64, c0 in -2.0..2.0f64, noise in 0.0..0.3f64) {
        let grid = PixelGrid::full(7, 9).unwrap();
        let zt = smooth_depth(&grid, 2.0, 0.5, 0.4);
        let zr = DepthMap(smooth_depth(&grid, 1.5, -0.2, 0.9).values().iter().enumerate().map(|(j, v)| v + noise * ((j * 7 % 5) as f64 - 2.0)).collect());
        let g = GbrTransform { lam, mu, nu, c0 };
        let base = fit_gbr_depth(&zr, &zt, &grid).unwrap().residual;
        let moved = fit_gbr_depth(&g.apply(&zr, &grid), &zt, &grid).unwrap().residual;
        prop_assert!((base - moved).abs() <= 1e-9 * (1.0 + base));
    }

    #[test]
    fn z_err_ignores_offsets(off_rec in -5.0..5.0f64, off_true in -5.0..5.0f64) {
        let grid = PixelGrid::full(6, 6).unwrap();
        let zt = smooth_depth(&grid, 2.0, 0.5, 0.4).centered();
        let zr = smooth_depth(&grid, 1.0, 0.3, -0.4);
        let err = |zr: &DepthMap, zt: &DepthMap| {
            let fit = fit_gbr_depth(zr, zt, &grid).unwrap();
            z_err(&fit.aligned, zt).unwrap()
        };
        let shifted_rec = DepthMap(zr.values().iter().map(|v| v + off_rec).collect());
        let shifted_true = DepthMap(zt.values().iter().map(|v| v + off_true).collect()).centered();
        let e0 = err(&zr, &zt);
        prop_assert!((err(&shifted_rec, &zt) - e0).abs() <= 1e-9);
        prop_assert!((err(&zr, &shifted_true) - e0).abs() <= 1e-9);
    }

    #[test]
    fn pfm_round_trip_is_bit_exact(w in 1usize..6, h in 1usize..6, rgb in any::<bool>(), bits in prop::collection::vec(any::<u32>(), 75)) {
        let channels = if rgb { 3 } else { 1 };
        let data: Vec<f32> = bits.iter().map(|&b| f32::from_bits(b)).map(|v| if v.is_finite() { v } else { 0.5 }).take(w * h * channels).collect();
        let img = Pfm::new(w, h, channels, data).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pfm");
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        prop_assert_eq!(back.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), img.data.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!((back.width, back.height, back.channels), (w, h, channels));
    }

    #[test]
    fn config_round_trips(seed in 0u64..(i64::MAX as u64), m in 3usize..20, noise in 0.0..0.1f64, c in 0.01..10.0f64, trials in 1u64..50) {
        let mut cfg = RunConfig::default();
        cfg.seed = seed;
        cfg.scene.m = m;
        cfg.scene.noise = noise;
        cfg.joint.c = c;
        cfg.bench.trials = trials;
        let text = cfg.to_toml_string().unwrap();
        prop_assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn integrability_solution_is_scale_invariant_and_never_worsens_curl(entries in prop::collection::vec(-1.0..1.0f64, 9), k in 0.05..20.0f64) {
        let a0 = DMatrix::from_vec(3, 3, entries);
        let sv = a0.clone().singular_values();
        prop_assume!(sv.min() > 0.05 * sv.max());
        let spec = SceneSpec { width: 14, height: 14, m: 3, shadow_free: true, ..Default::default() };
        let scene = generate_scene(&spec, 2).unwrap();
        let grid = scene.obs.grid.clone();
        let ops = build_derivative_operators(&grid);
        let s = a0 * &scene.surface.normals;
        let mk = |s: DMatrix<f64>| Factorization { lights: DMatrix::zeros(1, 3), normals: s, singular_values: vec![] };
        let r1 = resolve_integrability(&mk(s.clone()), &grid, &ops).unwrap();
        let r2 = resolve_integrability(&mk(&s * k), &grid, &ops).unwrap();
        let (v1, v2) = (DVector::from_row_slice(&r1.solution), DVector::from_row_slice(&r2.solution));
        let sign = if v1.dot(&v2) >= 0.0 { 1.0 } else { -1.0 };
        prop_assert!((v1 - v2 * sign).norm() <= 1e-8);
        // Compare at equal scale: the curl residual is homogeneous of degree 4.
        let scale = |m: &DMatrix<f64>| m / m.norm();
        prop_assert!(curl_residual(&scale(&r1.normals), &grid) <= curl_residual(&scale(&s), &grid) + 1e-12);
    }

    #[test]
    fn baseline_is_gbr_covariant_under_light_scaling(s in 0.2..5.0f64, seed in 0u64..50) {
        let spec = SceneSpec { width: 16, height: 16, m: 6, shadow_free: true, ..Default::default() };
        let scene = generate_scene(&spec, seed).unwrap();
        let grid = &scene.obs.grid;
        let z1 = run_baseline_on(&scene.obs.m, grid).unwrap().depth;
        let z2 = run_baseline_on(&(&scene.obs.m * s), grid).unwrap().depth;
        let fit = fit_gbr_depth(&z2, &z1, grid).unwrap();
        let norm = DVector::from_column_slice(z1.values()).norm();
        prop_assert!(fit.residual <= 1e-6 * norm, "{} vs {}", fit.residual, norm);
    }
}
