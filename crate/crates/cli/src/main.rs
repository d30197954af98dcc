use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use rankcal::dataset::{
    error_map, load_corpus, per_sample_rmse, rmse, select_subset, write_corpus, write_predictions, RmseDomain,
    SubsetKind, SubsetSpec,
};
use rankcal::model::{backward_parameter_count, parameter_count};
use rankcal::pipeline::{calibrate_timed, predict_backward, predict_forward, CalibrationConfig};
use rankcal::simulator::{
    default_exposures, default_illuminants, make_corpus, make_image, CameraConfig, GamutMode, SyntheticCamera,
    ToneFamily,
};
use rankcal::{deserialize_model, serialize_model, PipelineModel, PixelPairSet, Rgb};

#[derive(Parser)]
#[command(name = "rankcal", version, about = "Rank-based radiometric calibration of camera pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus and its ground-truth camera description.
    Simulate(SimulateArgs),
    /// Fit a pipeline model to a corpus.
    Calibrate(CalibrateArgs),
    /// Map every row of a corpus through a model.
    Apply(ApplyArgs),
    /// Report RMSE of a model on a corpus, optionally with an error map.
    Evaluate(EvaluateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Gamut {
    None,
    Affine,
    Warped,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Direction {
    Forward,
    Backward,
}

#[derive(Parser)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 140, value_parser = clap::value_parser!(u64).range(1..))]
    patches: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    illuminants: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    exposures: u64,
    /// Display gamma; the tone curve is t^(1/G).
    #[arg(long, default_value_t = 2.2)]
    gamma: f64,
    #[arg(long, value_enum, default_value_t = Gamut::Affine)]
    gamut: Gamut,
    /// Rendered-domain Gaussian noise sigma, in [0, 1] units.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Off-diagonal perturbation of the colour matrix.
    #[arg(long, default_value_t = 0.3)]
    perturbation: f64,
    /// Quantize rendered values to 8 bits.
    #[arg(long)]
    quantize: bool,
    #[arg(long, default_value_t = 16383.0)]
    white_level: f64,
    /// Emit a single shaded image of this width instead of a patch corpus.
    #[arg(long, requires = "height")]
    width: Option<usize>,
    #[arg(long, requires = "width")]
    height: Option<usize>,
}

#[derive(Parser)]
struct CalibrateArgs {
    #[arg(long)]
    data: PathBuf,
    /// `all`, `uniform:K` or `exp:N,illu:M`.
    #[arg(long, default_value = "all")]
    subset: SubsetKind,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Parser)]
struct ApplyArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum)]
    direction: Direction,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Parser)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    direction: Direction,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, requires_all = ["width", "height"])]
    errormap: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Score saturated rows too (they are excluded by default).
    #[arg(long)]
    include_saturated: bool,
    /// Published RMSE to compare against; results within 25% are flagged.
    #[arg(long)]
    reference: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Calibrate(a) => run_calibrate(a),
        Command::Apply(a) => apply(a),
        Command::Evaluate(a) => evaluate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".camera");
    PathBuf::from(name)
}

fn simulate(a: SimulateArgs) -> Result<()> {
    if !(a.gamma > 0.0 && a.gamma.is_finite()) {
        bail!("--gamma must be positive, got {}", a.gamma);
    }
    if !(a.white_level > 0.0 && a.white_level.is_finite()) {
        bail!("--white-level must be positive, got {}", a.white_level);
    }
    let cfg = CameraConfig {
        id: format!("synthetic-{}", a.seed),
        perturbation: a.perturbation,
        tone: ToneFamily::Gamma(1.0 / a.gamma),
        gamut: match a.gamut {
            Gamut::None => GamutMode::None,
            Gamut::Affine => GamutMode::Affine,
            Gamut::Warped => GamutMode::Warped,
        },
        noise_sigma: a.noise,
        quantize: a.quantize,
    };
    let camera = SyntheticCamera::random(&cfg, a.seed)?;
    let data_seed = a.seed.wrapping_add(1);
    let corpus = match (a.width, a.height) {
        (Some(w), Some(h)) => {
            if w == 0 || h == 0 {
                bail!("image dimensions must be positive");
            }
            make_image(&camera, w, h, data_seed)
        }
        _ => make_corpus(
            &camera,
            a.patches as usize,
            &default_illuminants(a.illuminants as usize),
            &default_exposures(a.exposures as usize),
            data_seed,
        )?,
    };
    write_file(&a.out, write_corpus(&corpus, a.white_level))?;
    let sidecar = sidecar_path(&a.out);
    write_file(&sidecar, camera.describe())?;
    eprintln!(
        "wrote {} rows ({} saturated) to {}; ground truth in {}",
        corpus.len(),
        corpus.len() - corpus.unsaturated_count(),
        a.out.display(),
        sidecar.display()
    );
    Ok(())
}

fn load(path: &Path) -> Result<PixelPairSet> {
    load_corpus(path).with_context(|| format!("loading {}", path.display()))
}

fn load_model(path: &Path) -> Result<PipelineModel> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read model {}", path.display()))?;
    deserialize_model(&text).with_context(|| format!("parsing model {}", path.display()))
}

fn run_calibrate(a: CalibrateArgs) -> Result<()> {
    let corpus = load(&a.data)?;
    let spec = SubsetSpec { kind: a.subset.clone(), rng_seed: a.seed };
    let training = select_subset(&corpus, &spec)?;
    eprintln!(
        "training on {} of {} rows ({} unsaturated), subset {}",
        training.len(),
        corpus.len(),
        training.unsaturated_count(),
        a.subset
    );
    let cfg = CalibrationConfig { rng_seed: a.seed, ..CalibrationConfig::default() };
    let (model, timings) = calibrate_timed(&training, &cfg).context("calibration failed")?;
    for (stage, elapsed) in &timings {
        eprintln!("  {:<22} {:>10.3} ms", stage.name(), elapsed.as_secs_f64() * 1e3);
    }
    write_file(&a.out, serialize_model(&model))?;
    println!("parameters: {}", parameter_count(&model));
    eprintln!("backward parameters: {}", backward_parameter_count(&model));
    eprintln!("model written to {}", a.out.display());
    Ok(())
}

/// Source and target triples of every row for the given direction.
fn split(set: &PixelPairSet, direction: Direction) -> (Vec<Rgb>, Vec<Rgb>) {
    set.entries
        .iter()
        .map(|e| match direction {
            Direction::Forward => (e.raw, e.rendered),
            Direction::Backward => (e.rendered, e.raw),
        })
        .unzip()
}

fn predict(model: &PipelineModel, direction: Direction, inputs: &[Rgb]) -> Vec<Rgb> {
    match direction {
        Direction::Forward => predict_forward(model, inputs),
        Direction::Backward => predict_backward(model, inputs),
    }
}

fn apply(a: ApplyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let corpus = load(&a.input)?;
    let (inputs, _) = split(&corpus, a.direction);
    let outputs = predict(&model, a.direction, &inputs);
    write_file(&a.out, write_predictions(&corpus, &inputs, &outputs)?)?;
    eprintln!("mapped {} rows to {}", corpus.len(), a.out.display());
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let corpus = load(&a.data)?;
    if let (Some(w), Some(h)) = (a.width, a.height) {
        if a.errormap.is_some() && w * h != corpus.len() {
            bail!("error map {w}x{h} does not match {} rows", corpus.len());
        }
    }
    let domain = match a.direction {
        Direction::Forward => RmseDomain::Rendered255,
        Direction::Backward => RmseDomain::Raw01,
    };
    let (inputs, truth) = split(&corpus, a.direction);
    let predictions = predict(&model, a.direction, &inputs);

    let scored: Vec<usize> =
        (0..corpus.len()).filter(|&i| a.include_saturated || !corpus.entries[i].saturated).collect();
    let pick = |v: &[Rgb]| scored.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let value = rmse(&pick(&predictions), &pick(&truth), domain).context("no unsaturated rows to score")?;

    let mut report = String::new();
    let direction = match a.direction {
        Direction::Forward => "forward",
        Direction::Backward => "backward",
    };
    writeln!(report, "direction: {direction}")?;
    writeln!(report, "units: {}", domain.label())?;
    writeln!(report, "samples: {}", scored.len())?;
    writeln!(report, "excluded_saturated: {}", corpus.len() - scored.len())?;
    writeln!(report, "rmse: {value:.3}")?;
    writeln!(report, "rmse_precise: {value:.6e}")?;
    if let Some(reference) = a.reference {
        let ratio = value / reference;
        writeln!(report, "reference_rmse: {reference}")?;
        writeln!(report, "reference_ratio: {ratio:.3}")?;
        let within = if (0.75..=1.25).contains(&ratio) { "yes" } else { "no" };
        writeln!(report, "within_25_percent: {within}")?;
    }
    if let (Some(path), Some(w), Some(h)) = (&a.errormap, a.width, a.height) {
        let map = error_map(&per_sample_rmse(&predictions, &truth, domain), w, h)?;
        write_file(path, &map.ppm)?;
        writeln!(report, "errormap: {w}x{h}")?;
        writeln!(report, "errormap_white: {:.6e}", map.scale)?;
    }
    write_file(&a.report, &report)?;
    eprint!("{report}");
    Ok(())
}
