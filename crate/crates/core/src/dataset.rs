//! Corpus CSV ingestion, training-subset selection, RMSE and error maps.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{PairTags, PixelPair, PixelPairSet, Rgb};
use crate::rank::SATURATION_LEVEL;

pub const CSV_HEADER: [&str; 11] = [
    "camera",
    "illuminant",
    "exposure",
    "patch",
    "raw_r",
    "raw_g",
    "raw_b",
    "jpeg_r",
    "jpeg_g",
    "jpeg_b",
    "white_level",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("corpus contains no rows")]
    EmptyCorpus,
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("cannot read corpus: {0}")]
    Io(#[from] std::io::Error),
    #[error("requested {requested} distinct {what} but only {available} available")]
    InsufficientVariety { what: &'static str, requested: usize, available: usize },
    #[error("invalid subset spec `{0}` (expected `uniform:K`, `exp:N,illu:M` or `all`)")]
    BadSubsetSpec(String),
    #[error("prediction count {0} does not match truth count {1}")]
    LengthMismatch(usize, usize),
    #[error("no samples to evaluate")]
    NoSamples,
    #[error("error map {width}x{height} does not match {rows} rows")]
    MapShape { width: usize, height: usize, rows: usize },
}

fn malformed(line: u64, message: impl Into<String>) -> DatasetError {
    DatasetError::Malformed { line, message: message.into() }
}

/// Parses corpus CSV text. Raw columns are divided by `white_level`,
/// JPEG columns by 255. A row is flagged saturated when any JPEG value is 0
/// or 255 or any raw value reaches 0.995 of the white level.
pub fn parse_corpus(text: &str) -> Result<PixelPairSet, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let header_line = reader.position().line().max(1);
    if header.iter().collect::<Vec<_>>() != CSV_HEADER {
        return Err(malformed(header_line, format!("expected header `{}`", CSV_HEADER.join(","))));
    }
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            malformed(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let num = |i: usize| -> Result<f64, DatasetError> {
            let v: f64 = record[i].parse().map_err(|_| malformed(line, format!("{}: cannot parse `{}`", CSV_HEADER[i], &record[i])))?;
            if !v.is_finite() {
                return Err(malformed(line, format!("{}: non-finite value", CSV_HEADER[i])));
            }
            Ok(v)
        };
        let white = num(10)?;
        if white <= 0.0 {
            return Err(malformed(line, "white_level must be positive"));
        }
        let raw_abs = [num(4)?, num(5)?, num(6)?];
        let jpeg = [num(7)?, num(8)?, num(9)?];
        if raw_abs.iter().any(|&v| v < 0.0) {
            return Err(malformed(line, "negative raw value"));
        }
        if jpeg.iter().any(|&v| !(0.0..=255.0).contains(&v)) {
            return Err(malformed(line, "jpeg value outside [0, 255]"));
        }
        let saturated =
            jpeg.iter().any(|&v| v == 0.0 || v == 255.0) || raw_abs.iter().any(|&v| v >= SATURATION_LEVEL * white);
        entries.push(PixelPair {
            raw: Rgb::from_array(raw_abs.map(|v| v / white)),
            rendered: Rgb::from_array(jpeg.map(|v| v / 255.0)),
            tags: PairTags {
                camera: record[0].to_string(),
                illuminant: record[1].to_string(),
                exposure: record[2].to_string(),
                patch: record[3].to_string(),
            },
            saturated,
        });
    }
    if entries.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    Ok(PixelPairSet::new(entries))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<PixelPairSet, DatasetError> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

/// `v·scale`, nudged by a few ulps when needed so that dividing the result by
/// `scale` gives back exactly `v`. Not every `v` is reachable (for example
/// `x / 255` skips some doubles in `[0.5, 1)`); those land one ulp away.
fn scaled_exact(v: f64, scale: f64) -> f64 {
    let x = v * scale;
    if x / scale == v || !x.is_finite() {
        return x;
    }
    let (mut up, mut down) = (x, x);
    for _ in 0..8 {
        up = up.next_up();
        down = down.next_down();
        if up / scale == v {
            return up;
        }
        if down / scale == v {
            return down;
        }
    }
    x
}

/// Corpus CSV text with raw values scaled by `white_level`.
pub fn write_corpus(set: &PixelPairSet, white_level: f64) -> String {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    writer.write_record(CSV_HEADER).expect("in-memory write");
    for e in &set.entries {
        let t = &e.tags;
        let mut row = vec![t.camera.clone(), t.illuminant.clone(), t.exposure.clone(), t.patch.clone()];
        row.extend(e.raw.to_array().iter().map(|&v| format!("{}", scaled_exact(v, white_level))));
        row.extend(e.rendered.to_array().iter().map(|&v| format!("{}", scaled_exact(v, 255.0))));
        row.push(format!("{white_level}"));
        writer.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub const PREDICTION_HEADER: [&str; 10] =
    ["camera", "illuminant", "exposure", "patch", "in_r", "in_g", "in_b", "out_r", "out_g", "out_b"];

/// CSV of source triples next to their predictions, both normalized to `[0, 1]`.
pub fn write_predictions(sources: &PixelPairSet, inputs: &[Rgb], outputs: &[Rgb]) -> Result<String, DatasetError> {
    if inputs.len() != sources.len() || outputs.len() != sources.len() {
        return Err(DatasetError::LengthMismatch(outputs.len(), sources.len()));
    }
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    writer.write_record(PREDICTION_HEADER).expect("in-memory write");
    for ((e, i), o) in sources.entries.iter().zip(inputs).zip(outputs) {
        let t = &e.tags;
        let mut row = vec![t.camera.clone(), t.illuminant.clone(), t.exposure.clone(), t.patch.clone()];
        row.extend(i.to_array().iter().chain(o.to_array().iter()).map(|v| format!("{v:.17}")));
        writer.write_record(&row).expect("in-memory write");
    }
    Ok(String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 fields"))
}

/// How to draw a training subset.
#[derive(Debug, Clone, PartialEq)]
pub enum SubsetKind {
    All,
    Uniform(usize),
    ExposuresIlluminants { exposures: usize, illuminants: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSpec {
    pub kind: SubsetKind,
    pub rng_seed: u64,
}

impl FromStr for SubsetKind {
    type Err = DatasetError;

    /// `uniform:8000`, `exp:10,illu:1` or `all`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || DatasetError::BadSubsetSpec(s.to_string());
        let s = s.trim();
        if s == "all" {
            return Ok(SubsetKind::All);
        }
        if let Some(k) = s.strip_prefix("uniform:") {
            let k: usize = k.trim().parse().map_err(|_| bad())?;
            return if k >= 1 { Ok(SubsetKind::Uniform(k)) } else { Err(bad()) };
        }
        let (mut exposures, mut illuminants) = (None, None);
        for part in s.split(',') {
            let (key, value) = part.split_once(':').ok_or_else(bad)?;
            let value: usize = value.trim().parse().map_err(|_| bad())?;
            match key.trim() {
                "exp" => exposures = Some(value),
                "illu" => illuminants = Some(value),
                _ => return Err(bad()),
            }
        }
        match (exposures, illuminants) {
            (Some(e), Some(i)) if e >= 1 && i >= 1 => Ok(SubsetKind::ExposuresIlluminants { exposures: e, illuminants: i }),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for SubsetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SubsetKind::All => write!(f, "all"),
            SubsetKind::Uniform(k) => write!(f, "uniform:{k}"),
            SubsetKind::ExposuresIlluminants { exposures, illuminants } => write!(f, "exp:{exposures},illu:{illuminants}"),
        }
    }
}

fn distinct_ids<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut seen = HashSet::new();
    ids.filter(|id| seen.insert(*id)).collect()
}

/// Draws a training subset from `corpus`.
pub fn select_subset(corpus: &PixelPairSet, spec: &SubsetSpec) -> Result<PixelPairSet, DatasetError> {
    if corpus.is_empty() {
        return Err(DatasetError::EmptyCorpus);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    match spec.kind {
        SubsetKind::All => Ok(corpus.clone()),
        SubsetKind::Uniform(k) => {
            if k > corpus.len() {
                return Err(DatasetError::InsufficientVariety { what: "entries", requested: k, available: corpus.len() });
            }
            let picked = sample(&mut rng, corpus.len(), k);
            Ok(PixelPairSet::new(picked.iter().map(|i| corpus.entries[i].clone()).collect()))
        }
        SubsetKind::ExposuresIlluminants { exposures, illuminants } => {
            let exp_ids = distinct_ids(corpus.entries.iter().map(|e| e.tags.exposure.as_str()));
            let illu_ids = distinct_ids(corpus.entries.iter().map(|e| e.tags.illuminant.as_str()));
            if exposures > exp_ids.len() {
                return Err(DatasetError::InsufficientVariety {
                    what: "exposures",
                    requested: exposures,
                    available: exp_ids.len(),
                });
            }
            if illuminants > illu_ids.len() {
                return Err(DatasetError::InsufficientVariety {
                    what: "illuminants",
                    requested: illuminants,
                    available: illu_ids.len(),
                });
            }
            let chosen_exp: HashSet<&str> = sample(&mut rng, exp_ids.len(), exposures).iter().map(|i| exp_ids[i]).collect();
            let chosen_illu: HashSet<&str> =
                sample(&mut rng, illu_ids.len(), illuminants).iter().map(|i| illu_ids[i]).collect();
            Ok(PixelPairSet::new(
                corpus
                    .entries
                    .iter()
                    .filter(|e| chosen_exp.contains(e.tags.exposure.as_str()) && chosen_illu.contains(e.tags.illuminant.as_str()))
                    .cloned()
                    .collect(),
            ))
        }
    }
}

/// Units in which errors are reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmseDomain {
    /// Rendered values on the 0–255 scale.
    Rendered255,
    /// Normalized raw units.
    Raw01,
}

impl RmseDomain {
    pub fn scale(self) -> f64 {
        match self {
            RmseDomain::Rendered255 => 255.0,
            RmseDomain::Raw01 => 1.0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            RmseDomain::Rendered255 => "rendered (0-255)",
            RmseDomain::Raw01 => "raw (normalized)",
        }
    }
}

/// Root mean squared error over all samples and channels.
pub fn rmse(predictions: &[Rgb], truth: &[Rgb], domain: RmseDomain) -> Result<f64, DatasetError> {
    if predictions.len() != truth.len() {
        return Err(DatasetError::LengthMismatch(predictions.len(), truth.len()));
    }
    if predictions.is_empty() {
        return Err(DatasetError::NoSamples);
    }
    let s = domain.scale();
    let sse: f64 = predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = (*p - *t) * s;
            d.dot(d)
        })
        .sum();
    Ok((sse / (3 * predictions.len()) as f64).sqrt())
}

/// Per-sample RMSE across the three channels.
pub fn per_sample_rmse(predictions: &[Rgb], truth: &[Rgb], domain: RmseDomain) -> Vec<f64> {
    let s = domain.scale();
    predictions
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let d = (*p - *t) * s;
            (d.dot(d) / 3.0).sqrt()
        })
        .collect()
}

/// A rendered error map: binary PPM bytes and the error that maps to white.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMap {
    pub ppm: Vec<u8>,
    pub scale: f64,
}

/// Grey-ramp P6 image of per-pixel errors (row-major), linearly scaled so the
/// largest error is white.
pub fn error_map(errors: &[f64], width: usize, height: usize) -> Result<ErrorMap, DatasetError> {
    if width == 0 || height == 0 || width * height != errors.len() {
        return Err(DatasetError::MapShape { width, height, rows: errors.len() });
    }
    let max = errors.iter().copied().fold(0.0_f64, f64::max);
    let scale = if max > 0.0 { max } else { 1.0 };
    let mut ppm = format!("P6\n{width} {height}\n255\n").into_bytes();
    for &e in errors {
        let level = (255.0 * (e / scale).clamp(0.0, 1.0)).round() as u8;
        ppm.extend_from_slice(&[level, level, level]);
    }
    Ok(ErrorMap { ppm, scale })
}
