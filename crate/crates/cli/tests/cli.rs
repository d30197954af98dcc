use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rankcal::model::SolverSettings;
use rankcal::{serialize_model, PipelineModel};

fn rankcal(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rankcal")).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn identity_model(dir: &Path) -> String {
    let p = path(dir, "identity.model");
    fs::write(&p, serialize_model(&PipelineModel::identity(SolverSettings::default()))).unwrap();
    p
}

/// Corpus whose JPEG values equal its raw values after normalization.
fn mirrored_corpus(dir: &Path) -> String {
    let mut text = String::from("camera,illuminant,exposure,patch,raw_r,raw_g,raw_b,jpeg_r,jpeg_g,jpeg_b,white_level\n");
    for i in 0..40 {
        let (r, g, b) = (3 + i * 6, 250 - i * 5, 10 + (i * 37) % 240);
        text.push_str(&format!("cam,illu0,exp0,p{i},{r},{g},{b},{r},{g},{b},255\n"));
    }
    let p = path(dir, "mirrored.csv");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn identity_model_maps_inputs_to_themselves() {
    let dir = tempfile::tempdir().unwrap();
    let data = mirrored_corpus(dir.path());
    let model = identity_model(dir.path());
    for direction in ["forward", "backward"] {
        let out = path(dir.path(), "pred.csv");
        let run = rankcal(&["apply", "--model", &model, "--direction", direction, "--in", &data, "--out", &out]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert!(lines.next().unwrap().starts_with("camera,illuminant,exposure,patch,in_r"));
        let mut rows = 0;
        for line in lines {
            let v: Vec<f64> = line.split(',').skip(4).map(|s| s.parse().unwrap()).collect();
            for k in 0..3 {
                assert!((v[k] - v[k + 3]).abs() < 1e-12, "{line}");
            }
            rows += 1;
        }
        assert_eq!(rows, 40);
    }
}

#[test]
fn perfect_predictions_report_zero_rmse() {
    let dir = tempfile::tempdir().unwrap();
    let data = mirrored_corpus(dir.path());
    let model = identity_model(dir.path());
    let report = path(dir.path(), "report.txt");
    let map = path(dir.path(), "map.ppm");
    let run = rankcal(&[
        "evaluate", "--model", &model, "--data", &data, "--direction", "forward", "--report", &report, "--errormap", &map,
        "--width", "8", "--height", "5",
    ]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.contains("rmse: 0.000"), "{text}");
    assert!(text.contains("units: rendered (0-255)"));
    let ppm = fs::read(&map).unwrap();
    assert!(ppm.starts_with(b"P6\n8 5\n255\n"));
    assert_eq!(ppm.len(), b"P6\n8 5\n255\n".len() + 8 * 5 * 3);
}

#[test]
fn exit_codes_follow_the_convention() {
    let dir = tempfile::tempdir().unwrap();
    let data = mirrored_corpus(dir.path());
    let model = identity_model(dir.path());
    let report = path(dir.path(), "r.txt");

    let missing = path(dir.path(), "absent.model");
    let run = rankcal(&["apply", "--model", &missing, "--direction", "forward", "--in", &data, "--out", &report]);
    assert_eq!(run.status.code(), Some(1));
    assert!(!run.stderr.is_empty());

    let map = path(dir.path(), "m.ppm");
    let run = rankcal(&[
        "evaluate", "--model", &model, "--data", &data, "--direction", "forward", "--report", &report, "--errormap", &map,
        "--width", "7", "--height", "5",
    ]);
    assert_eq!(run.status.code(), Some(1));

    let out = path(dir.path(), "sim.csv");
    assert_eq!(rankcal(&["simulate", "--out", &out, "--patches", "0"]).status.code(), Some(2));
    assert_eq!(rankcal(&["simulate", "--out", &out, "--gamut", "cubic"]).status.code(), Some(2));
    assert_eq!(rankcal(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(rankcal(&["calibrate", "--data", &data, "--out", &out, "--subset", "half"]).status.code(), Some(2));

    // Ten rows cannot pass input validation.
    let few = path(dir.path(), "few.csv");
    let text = fs::read_to_string(&data).unwrap();
    fs::write(&few, text.lines().take(11).collect::<Vec<_>>().join("\n")).unwrap();
    let run = rankcal(&["calibrate", "--data", &few, "--out", &path(dir.path(), "few.model")]);
    assert_eq!(run.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&run.stderr).contains("validation"));
}

#[test]
fn simulate_is_deterministic_in_its_seed() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str, seed: &str| {
        let out = path(dir.path(), name);
        let r = rankcal(&["simulate", "--out", &out, "--patches", "50", "--noise", "0.01", "--seed", seed]);
        assert!(r.status.success());
        (fs::read(&out).unwrap(), fs::read(format!("{out}.camera")).unwrap())
    };
    let a = run("a.csv", "5");
    let b = run("b.csv", "5");
    let c = run("c.csv", "6");
    assert_eq!(a, b);
    assert_ne!(a.0, c.0);
}
