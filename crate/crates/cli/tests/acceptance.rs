//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rankcal::dataset::{rmse, RmseDomain};
use rankcal::gamut::{apply_lattice, fit_lattice, trilinear_weights, LatticeConfig};
use rankcal::model::MONOTONE_CHECK_GRID;
use rankcal::monotone::{fit_polynomial, FitConfig};
use rankcal::pipeline::{calibrate, predict_backward, predict_forward, CalibrationConfig};
use rankcal::qp::{solve_qp, DEFAULT_TOL};
use rankcal::rank::{estimate_matrix, sample_sphere, RankConfig};
use rankcal::simulator::{default_exposures, default_illuminants, make_corpus, CameraConfig, GamutMode, SyntheticCamera};
use rankcal::{Channel, CurveDirection, Lattice3, Rgb, ToneCurve};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rankcal(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_rankcal")).args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("`rankcal {}` failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn report_value(report: &str, key: &str) -> Option<f64> {
    report.lines().find_map(|l| l.strip_prefix(key)?.trim().parse().ok())
}

/// Evaluate the command's reporting contract: the units line and the ±25%
/// comparison against a reference figure. A user-supplied corpus and model
/// can be scored by setting `RANKCAL_CORPUS` and `RANKCAL_MODEL`.
fn criterion_1(dir: &Path) -> Outcome {
    let (data, model) = match (std::env::var("RANKCAL_CORPUS"), std::env::var("RANKCAL_MODEL")) {
        (Ok(d), Ok(m)) => (d, m),
        _ => {
            let data = p(dir, "c1.csv");
            let model = p(dir, "c1.model");
            rankcal(&["simulate", "--out", &data, "--patches", "140", "--seed", "11"])?;
            rankcal(&["calibrate", "--data", &data, "--out", &model])?;
            (data, model)
        }
    };
    let mut lines = Vec::new();
    for (direction, reference, units) in [("forward", "2.56", "rendered (0-255)"), ("backward", "0.060", "raw (normalized)")] {
        let report = p(dir, &format!("c1-{direction}.txt"));
        rankcal(&[
            "evaluate", "--model", &model, "--data", &data, "--direction", direction, "--report", &report, "--reference",
            reference,
        ])?;
        let text = fs::read_to_string(&report).map_err(|e| e.to_string())?;
        if !text.contains(&format!("units: {units}")) || !text.contains("within_25_percent:") {
            return Err(format!("{direction} report lacks units or reference comparison"));
        }
        let v = report_value(&text, "rmse_precise:").ok_or("no rmse line")?;
        lines.push(format!("{direction} {v:.4} vs reference {reference}"));
    }
    Ok(format!("informative only (no reference corpus); evaluate reports standard units: {}", lines.join(", ")))
}

fn criterion_2() -> Outcome {
    let camera = SyntheticCamera::random(&CameraConfig::default(), 2024).map_err(|e| e.to_string())?;
    let data = make_corpus(&camera, 140, &default_illuminants(1), &[1.0], 2025).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let model = calibrate(&data, &CalibrationConfig::default()).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let mut rng = ChaCha8Rng::seed_from_u64(2026);
    let raws: Vec<Rgb> = (0..1000).map(|_| camera.sample_raw(&mut rng)).collect();
    let rendered: Vec<Rgb> = raws.iter().map(|r| camera.render(*r)).collect();
    let fwd = rmse(&predict_forward(&model, &raws), &rendered, RmseDomain::Rendered255).map_err(|e| e.to_string())?;
    let bwd = rmse(&predict_backward(&model, &rendered), &raws, RmseDomain::Raw01).map_err(|e| e.to_string())?;
    check(
        fwd <= 3.0 && bwd <= 0.012 && secs <= 60.0,
        format!("forward rmse {fwd:.3} (<= 3.0), backward rmse {bwd:.5} (<= 0.012), calibration {secs:.1} s (<= 60)"),
    )
}

fn worst_row_angle(noise: f64, exposures: usize, seeds: std::ops::Range<u64>) -> Result<f64, String> {
    let sphere = sample_sphere(100_000).map_err(|e| e.to_string())?;
    let mut worst = 0.0_f64;
    for seed in seeds {
        let cfg = CameraConfig { gamut: GamutMode::None, noise_sigma: noise, ..CameraConfig::default() };
        let camera = SyntheticCamera::random(&cfg, seed).map_err(|e| e.to_string())?;
        let data = make_corpus(&camera, 140, &default_illuminants(1), &default_exposures(exposures), seed + 100)
            .map_err(|e| e.to_string())?;
        let m = estimate_matrix(&data, &sphere, &RankConfig::default(), seed).map_err(|e| e.to_string())?;
        for k in 0..3 {
            worst = worst.max(support::angle_deg(m.row(k), camera.matrix.row(k)));
        }
    }
    Ok(worst)
}

fn criterion_3() -> Outcome {
    let clean = worst_row_angle(0.0, 1, 0..4)?;
    let noisy = worst_row_angle(2.0 / 255.0, 3, 0..4)?;
    check(
        clean <= 1.2 && noisy <= 3.0,
        format!(
            "worst row angle {clean:.2} deg noise-free (<= 1.2, 140 patches), {noisy:.2} deg at sigma 2/255 \
             (<= 3.0, 140 patches x 3 exposures), 4 cameras each"
        ),
    )
}

fn criterion_4() -> Outcome {
    let sphere = sample_sphere(100_000).map_err(|e| e.to_string())?;
    let gap = support::grid_max_gap(&sphere, 0.02);
    check(gap <= 1.15, format!("max nearest-neighbour gap {gap:.4} deg over 100000 points (<= 1.15)"))
}

fn criterion_5(dir: &Path) -> Outcome {
    let data = p(dir, "c5.csv");
    rankcal(&["simulate", "--out", &data, "--patches", "140", "--noise", "0.00784", "--seed", "5"])?;
    let stdout = rankcal(&["calibrate", "--data", &data, "--out", &p(dir, "c5.model")])?;
    let count = report_value(&stdout, "parameters:").ok_or("calibrate printed no parameter count")?;
    check(count == 408.0, format!("calibrate reports {count} forward parameters (== 408)"))
}

fn criterion_6() -> Outcome {
    let mut worst_kkt = 0.0_f64;
    let mut worst_gap = 0.0_f64;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 1 + (seed % 10) as usize;
        // Three in four programs are strictly convex with general half-spaces;
        // the rest are rank-deficient with box constraints.
        let (prog, reference) = if seed % 4 != 3 {
            let m = (seed * 7 % 21) as usize;
            let prog = support::random_strictly_convex(&mut rng, n, m);
            let (x, _) = support::dual_projected_gradient(&prog, 100_000);
            (prog, x)
        } else {
            let (prog, lo, hi) = support::random_singular_box(&mut rng, n, (seed as usize / 4) % (n + 1));
            let x = support::box_projected_gradient(&prog, &lo, &hi, 20_000);
            (prog, x)
        };
        let sol = solve_qp(&prog, DEFAULT_TOL).map_err(|e| format!("seed {seed}: {e}"))?;
        worst_kkt = worst_kkt.max(prog.kkt_residual(&sol.x, &sol.multipliers));
        let (a, b) = (sol.objective, prog.objective(&reference));
        worst_gap = worst_gap.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
    }
    check(
        worst_kkt <= 1e-8 && worst_gap <= 1e-5,
        format!("200 programs: worst KKT residual {worst_kkt:.2e} (<= 1e-8), worst objective gap {worst_gap:.2e} (<= 1e-5)"),
    )
}

fn criterion_7() -> Outcome {
    let cfg = FitConfig::default();
    let mut worst_slope = f64::INFINITY;
    for seed in 0..500u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(20..200);
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        // Every fifth dataset is strictly decreasing.
        let (slope, wiggle, noise) = if seed % 5 == 0 {
            (-rng.random_range(0.2..1.0), 0.0, 0.0)
        } else {
            (rng.random_range(-1.0..1.0), rng.random_range(0.0..0.3), rng.random_range(0.0..0.2))
        };
        let y: Vec<f64> = x
            .iter()
            .map(|t| 0.5 + slope * (t - 0.5) + wiggle * (9.0 * t).sin() + noise * (rng.random::<f64>() - 0.5))
            .collect();
        let coeffs = fit_polynomial(&x, &y, &cfg).map_err(|e| format!("dataset {seed}: {e}"))?;
        let curve = ToneCurve::new(coeffs, CurveDirection::Forward, Channel::Green)
            .map_err(|e| format!("dataset {seed} fails the grid check: {e}"))?;
        let min = (0..MONOTONE_CHECK_GRID)
            .map(|i| curve.derivative(i as f64 / (MONOTONE_CHECK_GRID - 1) as f64))
            .fold(f64::INFINITY, f64::min);
        worst_slope = worst_slope.min(min);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(140);
    let x: Vec<f64> = (0..140).map(|_| rng.random_range(0.02..1.0)).collect();
    let y: Vec<f64> = x.iter().map(|t| t.powf(1.0 / 2.2)).collect();
    let coeffs = fit_polynomial(&x, &y, &cfg).map_err(|e| e.to_string())?;
    let curve = ToneCurve::new(coeffs, CurveDirection::Forward, Channel::Green).map_err(|e| e.to_string())?;
    let rms = (x.iter().zip(&y).map(|(t, v)| (curve.eval(*t) - v).powi(2)).sum::<f64>() / 140.0).sqrt();
    check(
        worst_slope >= -1e-8 && rms <= 2e-3,
        format!("500 datasets (100 decreasing) pass the 1024-point grid, min slope {worst_slope:.2e}; gamma rms {rms:.2e} (<= 2e-3)"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let jitter = |rng: &mut ChaCha8Rng| Rgb::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05));
    let identity = Lattice3::identity(5).map_err(|e| e.to_string())?;
    let truth = Lattice3::new(5, identity.nodes().iter().map(|p| *p + jitter(&mut rng)).collect()).map_err(|e| e.to_string())?;

    let node_err = (0..truth.nodes().len())
        .map(|i| (apply_lattice(&truth, truth.position(i)) - truth.nodes()[i]).norm())
        .fold(0.0, f64::max);
    let mut unity_err = 0.0_f64;
    let mut identity_err = 0.0_f64;
    for _ in 0..10_000 {
        let v = Rgb::new(rng.random(), rng.random(), rng.random());
        let w = trilinear_weights(5, v);
        unity_err = unity_err.max((w.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs());
        identity_err = identity_err.max((apply_lattice(&identity, v) - v).norm());
    }

    let mut inputs = Vec::new();
    for cell in 0..64 {
        let (i, j, k) = (cell / 16, (cell / 4) % 4, cell % 4);
        for _ in 0..20 {
            let u = |c: usize, r: f64| (c as f64 + r) / 4.0;
            inputs.push(Rgb::new(u(i, rng.random()), u(j, rng.random()), u(k, rng.random())));
        }
    }
    let targets: Vec<Rgb> = inputs.iter().map(|v| apply_lattice(&truth, *v)).collect();
    let fitted = fit_lattice(&inputs, &targets, &LatticeConfig { resolution: 5, mu: 1e-6 }).map_err(|e| e.to_string())?;
    let recover_err = fitted.nodes().iter().zip(truth.nodes()).map(|(a, b)| (*a - *b).norm()).fold(0.0, f64::max);
    check(
        node_err <= 1e-12 && unity_err <= 1e-12 && identity_err <= 1e-12 && recover_err <= 1e-4,
        format!(
            "node reproduction {node_err:.1e}, partition of unity {unity_err:.1e}, identity {identity_err:.1e} (<= 1e-12); \
             recovery {recover_err:.1e} (<= 1e-4)"
        ),
    )
}

fn criterion_9(dir: &Path) -> Outcome {
    let image = p(dir, "c9-image.csv");
    let big = p(dir, "c9-8000.csv");
    let (w, h) = ("120", "100");
    rankcal(&["simulate", "--out", &image, "--width", w, "--height", h, "--quantize", "--seed", "9"])?;
    rankcal(&["simulate", "--out", &big, "--patches", "8000", "--quantize", "--seed", "9"])?;

    let one = p(dir, "c9-one.model");
    let many = p(dir, "c9-8000.model");
    rankcal(&["calibrate", "--data", &image, "--subset", "uniform:140", "--seed", "1", "--out", &one])?;
    rankcal(&["calibrate", "--data", &big, "--out", &many])?;

    let map = p(dir, "c9.ppm");
    let score = |model: &str, report: &str, errormap: bool| -> Result<f64, String> {
        let mut args = vec!["evaluate", "--model", model, "--data", &image, "--direction", "backward", "--report", report];
        if errormap {
            args.extend(["--errormap", &map, "--width", w, "--height", h]);
        }
        rankcal(&args)?;
        let text = fs::read_to_string(report).map_err(|e| e.to_string())?;
        report_value(&text, "rmse_precise:").ok_or_else(|| "no rmse in report".to_string())
    };
    let one_shot = score(&one, &p(dir, "c9-one.txt"), true)?;
    let reference = score(&many, &p(dir, "c9-8000.txt"), false)?;
    let ppm = fs::read(&map).map_err(|e| e.to_string())?;
    let header = format!("P6\n{w} {h}\n255\n");
    let ppm_ok = ppm.starts_with(header.as_bytes()) && ppm.len() == header.len() + 120 * 100 * 3;
    let ratio = one_shot / reference;
    check(
        ppm_ok && ratio <= 1.5,
        format!(
            "JPEG-to-RAW rmse {one_shot:.5} from 140 image pixels vs {reference:.5} from 8000 pairs, ratio {ratio:.3} (<= 1.5); \
             error map {}",
            if ppm_ok { "written (P6 120x100)" } else { "malformed" }
        ),
    )
}

fn end_to_end(dir: &Path, tag: &str) -> Result<(Vec<u8>, Vec<u8>), String> {
    let data = p(dir, &format!("{tag}.csv"));
    let model = p(dir, &format!("{tag}.model"));
    let report = p(dir, &format!("{tag}.txt"));
    rankcal(&["simulate", "--out", &data, "--patches", "140", "--noise", "0.00784", "--seed", "10"])?;
    rankcal(&["calibrate", "--data", &data, "--out", &model, "--seed", "3"])?;
    rankcal(&["evaluate", "--model", &model, "--data", &data, "--direction", "forward", "--report", &report])?;
    let read = |f: &str| fs::read(f).map_err(|e| e.to_string());
    Ok((read(&model)?, read(&report)?))
}

fn criterion_10(dir: &Path) -> Outcome {
    let a = end_to_end(dir, "c10-a")?;
    let b = end_to_end(dir, "c10-b")?;
    check(
        a == b,
        format!("two seeded runs: model files identical = {}, reports identical = {}", a.0 == b.0, a.1 == b.1),
    )
}

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let dir = dir.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("1 reference-scale reporting", Box::new(|| criterion_1(dir))),
        ("2 synthetic oracle suite", Box::new(criterion_2)),
        ("3 matrix recovery", Box::new(criterion_3)),
        ("4 sphere sampling", Box::new(criterion_4)),
        ("5 parameter budget", Box::new(|| criterion_5(dir))),
        ("6 QP kernel", Box::new(criterion_6)),
        ("7 monotone fit", Box::new(criterion_7)),
        ("8 lattice", Box::new(criterion_8)),
        ("9 one-shot protocol", Box::new(|| criterion_9(dir))),
        ("10 determinism", Box::new(|| criterion_10(dir))),
    ];
    let mut failed = 0;
    for (name, run) in &criteria {
        let start = Instant::now();
        let outcome = run();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{secs:.1} s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail} [{secs:.1} s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
