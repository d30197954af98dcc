//! End-to-end calibration and application of a [`PipelineModel`].
//!
//! Forward: `P ≈ LUT_f(f(M·ρ))`. Backward: `ρ ≈ LUT_b(M⁻¹·f⁻¹(P))`, with the
//! backward lattice living in the linear raw domain.

use std::fmt;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::gamut::{apply_lattice, fit_lattice, GamutError, LatticeConfig};
use crate::model::{
    Channel, ColorMatrix, ModelError, ModelMetadata, PipelineModel, PixelPairSet, Rgb, SolverSettings, ToneCurve,
};
use crate::monotone::{fit_forward_tones, fit_inverse_tones, FitConfig, FitError};
use crate::rank::{estimate_matrix, rescale_achromatic, sample_sphere, RankConfig, RankError};

/// Minimum unsaturated pairs accepted by [`calibrate`].
pub const MIN_PAIRS: usize = 30;
/// Minimum distinct rendered values per channel accepted by [`calibrate`].
pub const MIN_DISTINCT_RENDERED: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Validation,
    RowEstimation,
    AchromaticRescale,
    ForwardTones,
    ForwardLut,
    InverseTones,
    BackwardLut,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Validation => "validation",
            Stage::RowEstimation => "row estimation",
            Stage::AchromaticRescale => "achromatic rescale",
            Stage::ForwardTones => "forward tone curves",
            Stage::ForwardLut => "forward lattice",
            Stage::InverseTones => "inverse tone curves",
            Stage::BackwardLut => "backward lattice",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("{stage}: need at least {MIN_PAIRS} unsaturated pairs, got {got}")]
    InsufficientData { stage: Stage, got: usize },
    #[error("{stage}: channel {channel} has only {got} distinct rendered values (need {MIN_DISTINCT_RENDERED})")]
    LowVariety { stage: Stage, channel: Channel, got: usize },
    #[error("{stage}: {source}")]
    Rank { stage: Stage, source: RankError },
    #[error("{stage}: {source}")]
    Fit { stage: Stage, source: FitError },
    #[error("{stage}: {source}")]
    Lattice { stage: Stage, source: GamutError },
    #[error("{stage}: colour matrix is singular: {source}")]
    SingularMatrix { stage: Stage, source: ModelError },
}

impl CalibrationError {
    pub fn stage(&self) -> Stage {
        match self {
            CalibrationError::InsufficientData { stage, .. }
            | CalibrationError::LowVariety { stage, .. }
            | CalibrationError::Rank { stage, .. }
            | CalibrationError::Fit { stage, .. }
            | CalibrationError::Lattice { stage, .. }
            | CalibrationError::SingularMatrix { stage, .. } => *stage,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationConfig {
    pub rank: RankConfig,
    pub fit: FitConfig,
    pub lattice: LatticeConfig,
    pub rng_seed: u64,
    /// Recorded in the model; defaults to the first entry's camera tag.
    pub camera_id: Option<String>,
}

impl CalibrationConfig {
    pub fn settings(&self) -> SolverSettings {
        SolverSettings {
            rank: self.rank.clone(),
            fit: self.fit.clone(),
            lattice: self.lattice.clone(),
            seed: self.rng_seed,
        }
    }
}

/// Wall-clock time spent in each stage.
pub type StageTimings = Vec<(Stage, Duration)>;

pub fn calibrate(pairs: &PixelPairSet, cfg: &CalibrationConfig) -> Result<PipelineModel, CalibrationError> {
    calibrate_timed(pairs, cfg).map(|(m, _)| m)
}

fn check_input(pairs: &PixelPairSet) -> Result<(), CalibrationError> {
    let stage = Stage::Validation;
    let got = pairs.unsaturated_count();
    if got < MIN_PAIRS {
        return Err(CalibrationError::InsufficientData { stage, got });
    }
    for c in Channel::ALL {
        let mut values: Vec<u64> = pairs.unsaturated().map(|p| p.rendered[c.index()].to_bits()).collect();
        values.sort_unstable();
        values.dedup();
        if values.len() < MIN_DISTINCT_RENDERED {
            return Err(CalibrationError::LowVariety { stage, channel: c, got: values.len() });
        }
    }
    Ok(())
}

/// Largest value `M_k·ρ` can take over the raw unit cube, across rows.
fn raw_cube_extent(m: &ColorMatrix) -> f64 {
    m.rows.iter().map(|row| row.iter().map(|v| v.max(0.0)).sum::<f64>()).fold(0.0, f64::max)
}

/// Runs every calibration stage in order and reports per-stage timings.
pub fn calibrate_timed(
    pairs: &PixelPairSet,
    cfg: &CalibrationConfig,
) -> Result<(PipelineModel, StageTimings), CalibrationError> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |stage: Stage, timings: &mut StageTimings| {
        let now = Instant::now();
        timings.push((stage, now - clock));
        clock = now;
    };

    check_input(pairs)?;
    lap(Stage::Validation, &mut timings);

    let stage = Stage::RowEstimation;
    let sphere = sample_sphere(cfg.rank.sphere_points).map_err(|source| CalibrationError::Rank { stage, source })?;
    let directions = estimate_matrix(pairs, &sphere, &cfg.rank, cfg.rng_seed)
        .map_err(|source| CalibrationError::Rank { stage, source })?;
    lap(stage, &mut timings);

    let stage = Stage::AchromaticRescale;
    let balanced = rescale_achromatic(&directions, pairs).map_err(|source| CalibrationError::Rank { stage, source })?;
    // Row ratios come from the grey reference; one common factor then maps
    // the whole raw cube into the tone-curve domain.
    let extent = raw_cube_extent(&balanced);
    let matrix = balanced
        .scale_rows([1.0 / extent; 3])
        .map_err(|source| CalibrationError::SingularMatrix { stage, source })?;
    let inverse = matrix.inverse().map_err(|source| CalibrationError::SingularMatrix { stage, source })?;
    lap(stage, &mut timings);

    let stage = Stage::ForwardTones;
    let forward_tones =
        fit_forward_tones(&matrix, pairs, &cfg.fit).map_err(|source| CalibrationError::Fit { stage, source })?;
    lap(stage, &mut timings);

    let stage = Stage::ForwardLut;
    let training: Vec<_> = pairs.unsaturated().collect();
    let (inputs, targets): (Vec<Rgb>, Vec<Rgb>) = training
        .iter()
        .map(|p| (tone_forward(&forward_tones, matrix.apply(p.raw)), p.rendered))
        .unzip();
    let forward_lut =
        fit_lattice(&inputs, &targets, &cfg.lattice).map_err(|source| CalibrationError::Lattice { stage, source })?;
    lap(stage, &mut timings);

    let stage = Stage::InverseTones;
    let inverse_tones =
        fit_inverse_tones(&matrix, pairs, &cfg.fit).map_err(|source| CalibrationError::Fit { stage, source })?;
    lap(stage, &mut timings);

    let stage = Stage::BackwardLut;
    let (inputs, targets): (Vec<Rgb>, Vec<Rgb>) = training
        .iter()
        .map(|p| (inverse.apply(tone_inverse(&inverse_tones, p.rendered)).clamp01(), p.raw))
        .unzip();
    let backward_lut =
        fit_lattice(&inputs, &targets, &cfg.lattice).map_err(|source| CalibrationError::Lattice { stage, source })?;
    lap(stage, &mut timings);

    let camera_id = cfg
        .camera_id
        .clone()
        .or_else(|| pairs.entries.first().map(|e| e.tags.camera.clone()))
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".into());
    let model = PipelineModel {
        matrix,
        forward_tones,
        forward_lut,
        inverse_tones,
        backward_lut,
        metadata: ModelMetadata { camera_id, sample_count: training.len(), settings: cfg.settings() },
    };
    Ok((model, timings))
}

/// `f(clamp₀¹(v))` per channel.
fn tone_forward(tones: &[ToneCurve; 3], v: Rgb) -> Rgb {
    let v = v.clamp01();
    Rgb::new(tones[0].eval(v.r), tones[1].eval(v.g), tones[2].eval(v.b))
}

/// `f⁻¹(clamp₀¹(v))` per channel.
fn tone_inverse(tones: &[ToneCurve; 3], v: Rgb) -> Rgb {
    tone_forward(tones, v)
}

/// RAW → rendered.
pub fn apply_forward(model: &PipelineModel, raw: Rgb) -> Rgb {
    let toned = tone_forward(&model.forward_tones, model.matrix.apply(raw));
    apply_lattice(&model.forward_lut, toned).clamp01()
}

fn backward_with(model: &PipelineModel, inverse: &ColorMatrix, rendered: Rgb) -> Rgb {
    let linear = inverse.apply(tone_inverse(&model.inverse_tones, rendered)).clamp01();
    apply_lattice(&model.backward_lut, linear).clamp01()
}

/// Rendered → RAW.
pub fn apply_backward(model: &PipelineModel, rendered: Rgb) -> Rgb {
    let inverse = model.matrix.inverse().expect("validated model has an invertible matrix");
    backward_with(model, &inverse, rendered)
}

pub fn predict_forward(model: &PipelineModel, raws: &[Rgb]) -> Vec<Rgb> {
    raws.par_iter().map(|&r| apply_forward(model, r)).collect()
}

pub fn predict_backward(model: &PipelineModel, rendered: &[Rgb]) -> Vec<Rgb> {
    let inverse = model.matrix.inverse().expect("validated model has an invertible matrix");
    rendered.par_iter().map(|&p| backward_with(model, &inverse, p)).collect()
}
