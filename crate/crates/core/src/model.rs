//! Shared value types: colour triples, pixel-pair sets, the colour matrix,
//! tone curves, lattices and the assembled pipeline model.

use std::fmt;
use std::ops::{Add, Index, Mul, Sub};

use nalgebra::Matrix3;
use thiserror::Error;

use crate::gamut::LatticeConfig;
use crate::monotone::FitConfig;
use crate::rank::RankConfig;

/// Number of points on the uniform grid used to validate tone-curve monotonicity.
pub const MONOTONE_CHECK_GRID: usize = 1024;
/// Allowed decrease between consecutive validation grid points.
pub const MONOTONE_CHECK_TOL: f64 = 1e-9;
/// Smallest `|det M|` accepted for an invertible colour matrix.
pub const MIN_DETERMINANT: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("colour matrix row {0} is zero")]
    ZeroRow(usize),
    #[error("colour matrix is singular (det {0:.3e})")]
    Singular(f64),
    #[error("tone curve for channel {channel} decreases by {drop:.3e} at t = {at:.4}")]
    NotMonotone { channel: Channel, at: f64, drop: f64 },
    #[error("tone curve needs at least 2 coefficients, got {0}")]
    TooFewCoefficients(usize),
    #[error("lattice resolution must be at least 2, got {0}")]
    BadResolution(usize),
    #[error("lattice of resolution {resolution} needs {expected} nodes, got {got}")]
    NodeCount { resolution: usize, expected: usize, got: usize },
    #[error("tone curve for {0} has the wrong direction or channel")]
    CurveMismatch(Channel),
}

/// A normalized colour triple.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Rgb {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl Rgb {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub const fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn from_array(v: [f64; 3]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn is_finite(self) -> bool {
        self.r.is_finite() && self.g.is_finite() && self.b.is_finite()
    }

    pub fn clamp01(self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.r), f(self.g), f(self.b))
    }

    pub fn max_component(self) -> f64 {
        self.r.max(self.g).max(self.b)
    }

    pub fn min_component(self) -> f64 {
        self.r.min(self.g).min(self.b)
    }

    pub fn dot(self, other: Rgb) -> f64 {
        self.r * other.r + self.g * other.g + self.b * other.b
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    /// True when every component lies in `[0, 1]`.
    pub fn in_unit_cube(self) -> bool {
        self.to_array().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

impl Index<usize> for Rgb {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.r,
            1 => &self.g,
            2 => &self.b,
            _ => panic!("channel index {i} out of range"),
        }
    }
}

impl Add for Rgb {
    type Output = Rgb;
    fn add(self, o: Rgb) -> Rgb {
        Rgb::new(self.r + o.r, self.g + o.g, self.b + o.b)
    }
}

impl Sub for Rgb {
    type Output = Rgb;
    fn sub(self, o: Rgb) -> Rgb {
        Rgb::new(self.r - o.r, self.g - o.g, self.b - o.b)
    }
}

impl Mul<f64> for Rgb {
    type Output = Rgb;
    fn mul(self, s: f64) -> Rgb {
        self.map(|v| v * s)
    }
}

/// Colour channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Channel {
    Red,
    Green,
    Blue,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Red, Channel::Green, Channel::Blue];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Channel::Red => "r",
            Channel::Green => "g",
            Channel::Blue => "b",
        }
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Provenance of a pixel pair.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairTags {
    pub camera: String,
    pub illuminant: String,
    pub exposure: String,
    pub patch: String,
}

/// One RAW / rendered correspondence.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPair {
    pub raw: Rgb,
    pub rendered: Rgb,
    pub tags: PairTags,
    pub saturated: bool,
}

impl PixelPair {
    pub fn new(raw: Rgb, rendered: Rgb) -> Self {
        Self { raw, rendered, tags: PairTags::default(), saturated: false }
    }
}

/// Corresponding RAW and rendered samples.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PixelPairSet {
    pub entries: Vec<PixelPair>,
}

impl PixelPairSet {
    pub fn new(entries: Vec<PixelPair>) -> Self {
        Self { entries }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (Rgb, Rgb)>) -> Self {
        Self::new(pairs.into_iter().map(|(raw, rendered)| PixelPair::new(raw, rendered)).collect())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries that may take part in matrix and tone-curve estimation.
    pub fn unsaturated(&self) -> impl Iterator<Item = &PixelPair> {
        self.entries.iter().filter(|e| !e.saturated)
    }

    pub fn unsaturated_count(&self) -> usize {
        self.unsaturated().count()
    }
}

/// A 3×3 colour correction matrix stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorMatrix {
    pub rows: [[f64; 3]; 3],
}

impl ColorMatrix {
    pub fn new(rows: [[f64; 3]; 3]) -> Result<Self, ModelError> {
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite("colour matrix".into()));
        }
        if let Some(k) = rows.iter().position(|r| r.iter().all(|&v| v == 0.0)) {
            return Err(ModelError::ZeroRow(k));
        }
        Ok(Self { rows })
    }

    pub fn identity() -> Self {
        Self { rows: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }

    pub fn row(&self, k: usize) -> Rgb {
        Rgb::from_array(self.rows[k])
    }

    pub fn apply(&self, v: Rgb) -> Rgb {
        Rgb::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }

    pub fn to_matrix3(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.rows[i][j])
    }

    pub fn from_matrix3(m: &Matrix3<f64>) -> Result<Self, ModelError> {
        Self::new([
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ])
    }

    pub fn determinant(&self) -> f64 {
        self.to_matrix3().determinant()
    }

    /// Inverse, or `Singular` when `|det| ≤ 1e-8`.
    pub fn inverse(&self) -> Result<ColorMatrix, ModelError> {
        let det = self.determinant();
        if det.abs() <= MIN_DETERMINANT {
            return Err(ModelError::Singular(det));
        }
        let inv = self.to_matrix3().try_inverse().ok_or(ModelError::Singular(det))?;
        Self::from_matrix3(&inv)
    }

    /// Scales row `k` by `scales[k]`.
    pub fn scale_rows(&self, scales: [f64; 3]) -> Result<ColorMatrix, ModelError> {
        let mut rows = self.rows;
        for (row, s) in rows.iter_mut().zip(scales) {
            row.iter_mut().for_each(|v| *v *= s);
        }
        Self::new(rows)
    }

    /// Rows rescaled to unit Euclidean length.
    pub fn normalized_rows(&self) -> ColorMatrix {
        let mut rows = self.rows;
        for row in rows.iter_mut() {
            let n = Rgb::from_array(*row).norm();
            row.iter_mut().for_each(|v| *v /= n);
        }
        ColorMatrix { rows }
    }
}

/// Whether a tone curve maps corrected RAW to rendered or back.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveDirection {
    Forward,
    Inverse,
}

impl CurveDirection {
    pub fn name(self) -> &'static str {
        match self {
            CurveDirection::Forward => "forward",
            CurveDirection::Inverse => "inverse",
        }
    }
}

/// A monotone polynomial in the power basis over `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToneCurve {
    coefficients: Vec<f64>,
    direction: CurveDirection,
    channel: Channel,
}

impl ToneCurve {
    /// Validates finiteness and non-decrease on the 1024-point grid.
    pub fn new(coefficients: Vec<f64>, direction: CurveDirection, channel: Channel) -> Result<Self, ModelError> {
        if coefficients.len() < 2 {
            return Err(ModelError::TooFewCoefficients(coefficients.len()));
        }
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err(ModelError::NonFinite(format!("{} tone curve {channel}", direction.name())));
        }
        let curve = Self { coefficients, direction, channel };
        if let Some((at, drop)) = curve.monotonicity_violation() {
            return Err(ModelError::NotMonotone { channel, at, drop });
        }
        Ok(curve)
    }

    /// The identity `f(t) = t` with `degree + 1` coefficients.
    pub fn identity(degree: usize, direction: CurveDirection, channel: Channel) -> Self {
        let mut coefficients = vec![0.0; degree.max(1) + 1];
        coefficients[1] = 1.0;
        Self { coefficients, direction, channel }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn degree(&self) -> usize {
        self.coefficients.len() - 1
    }

    pub fn direction(&self) -> CurveDirection {
        self.direction
    }

    pub fn channel(&self) -> Channel {
        self.channel
    }

    /// Evaluates the polynomial (no clamping of `t`).
    pub fn eval(&self, t: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }

    pub fn derivative(&self, t: f64) -> f64 {
        self.coefficients
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (i, &c)| acc * t + i as f64 * c)
    }

    /// First grid location where the curve drops by more than the
    /// validation tolerance, with the size of the drop.
    pub fn monotonicity_violation(&self) -> Option<(f64, f64)> {
        let step = 1.0 / (MONOTONE_CHECK_GRID - 1) as f64;
        let mut prev = self.eval(0.0);
        for i in 1..MONOTONE_CHECK_GRID {
            let t = i as f64 * step;
            let v = self.eval(t);
            if v < prev - MONOTONE_CHECK_TOL {
                return Some((t, prev - v));
            }
            prev = v;
        }
        None
    }
}

/// A cubic lattice of RGB nodes over `[0, 1]³`.
///
/// Node `(i, j, k)` sits at `(i, j, k) / (resolution − 1)` and is stored at
/// index `(i·res + j)·res + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice3 {
    resolution: usize,
    nodes: Vec<Rgb>,
}

impl Lattice3 {
    pub fn new(resolution: usize, nodes: Vec<Rgb>) -> Result<Self, ModelError> {
        if resolution < 2 {
            return Err(ModelError::BadResolution(resolution));
        }
        let expected = resolution.pow(3);
        if nodes.len() != expected {
            return Err(ModelError::NodeCount { resolution, expected, got: nodes.len() });
        }
        if let Some(i) = nodes.iter().position(|n| !n.is_finite()) {
            return Err(ModelError::NonFinite(format!("lattice node {i}")));
        }
        Ok(Self { resolution, nodes })
    }

    /// Lattice whose nodes equal their own grid coordinates.
    pub fn identity(resolution: usize) -> Result<Self, ModelError> {
        if resolution < 2 {
            return Err(ModelError::BadResolution(resolution));
        }
        let nodes = (0..resolution.pow(3)).map(|idx| grid_position(resolution, idx)).collect();
        Self::new(resolution, nodes)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn nodes(&self) -> &[Rgb] {
        &self.nodes
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> Rgb {
        self.nodes[self.index(i, j, k)]
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.resolution + j) * self.resolution + k
    }

    /// Grid coordinate of node `idx`.
    pub fn position(&self, idx: usize) -> Rgb {
        grid_position(self.resolution, idx)
    }

    pub fn apply(&self, v: Rgb) -> Rgb {
        crate::gamut::apply_lattice(self, v)
    }
}

pub(crate) fn grid_position(resolution: usize, idx: usize) -> Rgb {
    let step = 1.0 / (resolution - 1) as f64;
    let k = idx % resolution;
    let j = (idx / resolution) % resolution;
    let i = idx / (resolution * resolution);
    Rgb::new(i as f64 * step, j as f64 * step, k as f64 * step)
}

/// Calibration settings recorded with a model.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverSettings {
    pub rank: RankConfig,
    pub fit: FitConfig,
    pub lattice: LatticeConfig,
    pub seed: u64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            rank: RankConfig::default(),
            fit: FitConfig::default(),
            lattice: LatticeConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelMetadata {
    pub camera_id: String,
    pub sample_count: usize,
    pub settings: SolverSettings,
}

/// The complete bidirectional pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineModel {
    pub matrix: ColorMatrix,
    pub forward_tones: [ToneCurve; 3],
    pub forward_lut: Lattice3,
    pub inverse_tones: [ToneCurve; 3],
    pub backward_lut: Lattice3,
    pub metadata: ModelMetadata,
}

impl PipelineModel {
    /// `M = I`, identity curves of the configured degree and identity lattices.
    pub fn identity(settings: SolverSettings) -> Self {
        let degree = settings.fit.degree;
        let res = settings.lattice.resolution;
        let tones = |dir| Channel::ALL.map(|c| ToneCurve::identity(degree, dir, c));
        Self {
            matrix: ColorMatrix::identity(),
            forward_tones: tones(CurveDirection::Forward),
            forward_lut: Lattice3::identity(res).expect("resolution validated by LatticeConfig"),
            inverse_tones: tones(CurveDirection::Inverse),
            backward_lut: Lattice3::identity(res).expect("resolution validated by LatticeConfig"),
            metadata: ModelMetadata { camera_id: "identity".into(), sample_count: 0, settings },
        }
    }

    /// Structural validation: invertible matrix, curve directions and
    /// channels in order, monotone curves.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.matrix.inverse()?;
        for (dir, tones) in [
            (CurveDirection::Forward, &self.forward_tones),
            (CurveDirection::Inverse, &self.inverse_tones),
        ] {
            for (c, curve) in Channel::ALL.iter().zip(tones.iter()) {
                if curve.direction() != dir || curve.channel() != *c {
                    return Err(ModelError::CurveMismatch(*c));
                }
                if let Some((at, drop)) = curve.monotonicity_violation() {
                    return Err(ModelError::NotMonotone { channel: *c, at, drop });
                }
            }
        }
        Ok(())
    }

    /// Largest `|f⁻¹(f(t)) − t|` over a 256-point grid, restricted to points
    /// where the forward curve has slope at least 0.05. One value per channel.
    pub fn tone_consistency(&self) -> [f64; 3] {
        let mut worst = [0.0; 3];
        for k in 0..3 {
            let (f, finv) = (&self.forward_tones[k], &self.inverse_tones[k]);
            for i in 0..256 {
                let t = i as f64 / 255.0;
                if f.derivative(t) < 0.05 {
                    continue;
                }
                let err = (finv.eval(f.eval(t)) - t).abs();
                worst[k] = f64::max(worst[k], err);
            }
        }
        worst
    }
}

/// Forward parameter count: matrix, forward tone curves and forward lattice.
pub fn parameter_count(model: &PipelineModel) -> usize {
    9 + model.forward_tones.iter().map(|t| t.coefficients().len()).sum::<usize>()
        + 3 * model.forward_lut.nodes().len()
}

/// Parameters of the backward direction (inverse curves and backward lattice;
/// the matrix is shared with the forward model and not counted again).
pub fn backward_parameter_count(model: &PipelineModel) -> usize {
    model.inverse_tones.iter().map(|t| t.coefficients().len()).sum::<usize>() + 3 * model.backward_lut.nodes().len()
}

/// Forward parameter count implied by a tone-curve degree and lattice resolution.
pub fn forward_parameter_budget(degree: usize, resolution: usize) -> usize {
    9 + 3 * (degree + 1) + 3 * resolution.pow(3)
}
