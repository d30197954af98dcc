//! Synthetic cameras with known ground truth.
//!
//! A camera renders `quantize(noise(f(Γ(M·ρ))))`: a diagonally dominant
//! colour matrix, an optional affine (or affine plus warp) gamut map fitted
//! to the camera's own reference colours, and an analytic tone curve.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::gamut::{solve_affine_gamut, AffineGamutMap, GamutError};
use crate::model::{ColorMatrix, ModelError, PairTags, PixelPair, PixelPairSet, Rgb};
use crate::rank::SATURATION_LEVEL;

/// Amplitude bound of the nonlinear warp in [`GamutMode::Warped`].
pub const WARP_AMPLITUDE: f64 = 0.02;
/// Reference colours used to fit a camera's gamut map.
pub const GAMUT_REFERENCE_POINTS: usize = 2000;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("matrix perturbation {0} outside [0, 0.4]")]
    BadPerturbation(f64),
    #[error("invalid tone curve parameter: {0}")]
    BadTone(String),
    #[error("noise sigma must be finite and non-negative, got {0}")]
    BadNoise(f64),
    #[error("need at least one patch")]
    NoPatches,
    #[error(transparent)]
    Gamut(#[from] GamutError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Analytic tone curves, all strictly increasing maps of `[0, 1]` onto itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ToneFamily {
    /// `t^exponent`; display gamma 2.2 is `Gamma(1/2.2)`.
    Gamma(f64),
    /// The sRGB transfer function.
    SrgbLike,
    /// Gamma followed by the S-curve `s^c / (s^c + (1 − s)^c)`.
    Filmic { exponent: f64, contrast: f64 },
}

impl ToneFamily {
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        match *self {
            ToneFamily::Gamma(e) => t.powf(e),
            ToneFamily::SrgbLike => {
                if t <= 0.003_130_8 {
                    12.92 * t
                } else {
                    1.055 * t.powf(1.0 / 2.4) - 0.055
                }
            }
            ToneFamily::Filmic { exponent, contrast } => {
                let s = t.powf(exponent);
                let a = s.powf(contrast);
                let b = (1.0 - s).powf(contrast);
                if a + b == 0.0 {
                    0.0
                } else {
                    a / (a + b)
                }
            }
        }
    }

    /// Inverse on `[0, 1]` by bisection.
    pub fn invert(&self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    fn validate(&self) -> Result<(), SimError> {
        match *self {
            ToneFamily::Gamma(e) if !(e > 0.0 && e.is_finite()) => Err(SimError::BadTone(format!("exponent {e}"))),
            ToneFamily::Filmic { exponent, contrast } if !(exponent > 0.0 && contrast > 0.0) => {
                Err(SimError::BadTone(format!("filmic exponent {exponent}, contrast {contrast}")))
            }
            _ => Ok(()),
        }
    }

    fn describe(&self) -> String {
        match *self {
            ToneFamily::Gamma(e) => format!("gamma {e:.16e}"),
            ToneFamily::SrgbLike => "srgb".into(),
            ToneFamily::Filmic { exponent, contrast } => format!("filmic {exponent:.16e} {contrast:.16e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GamutMode {
    None,
    Affine,
    /// Affine map followed by a smooth warp bounded by [`WARP_AMPLITUDE`].
    Warped,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CameraConfig {
    pub id: String,
    /// Off-diagonal perturbation scale δ.
    pub perturbation: f64,
    pub tone: ToneFamily,
    pub gamut: GamutMode,
    pub noise_sigma: f64,
    pub quantize: bool,
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            id: "synthetic".into(),
            perturbation: 0.3,
            tone: ToneFamily::Gamma(1.0 / 2.2),
            gamut: GamutMode::Affine,
            noise_sigma: 0.0,
            quantize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCamera {
    pub id: String,
    pub matrix: ColorMatrix,
    pub tone: ToneFamily,
    pub gamut: Option<AffineGamutMap>,
    pub warp: bool,
    pub noise_sigma: f64,
    pub quantize: bool,
}

impl SyntheticCamera {
    /// Draws a random camera. Rows of `M` are `e_k` plus non-positive
    /// off-diagonal perturbations up to δ, rescaled to sum to one so white
    /// stays white; the result is diagonally dominant with a non-negative
    /// inverse.
    pub fn random(cfg: &CameraConfig, seed: u64) -> Result<Self, SimError> {
        if !(0.0..=0.4).contains(&cfg.perturbation) {
            return Err(SimError::BadPerturbation(cfg.perturbation));
        }
        cfg.tone.validate()?;
        if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
            return Err(SimError::BadNoise(cfg.noise_sigma));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = [[0.0; 3]; 3];
        for (k, row) in rows.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if j == k { 1.0 } else { -cfg.perturbation * rng.random::<f64>() };
            }
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        let matrix = ColorMatrix::new(rows)?;
        let mut camera = Self {
            id: cfg.id.clone(),
            matrix,
            tone: cfg.tone,
            gamut: None,
            warp: cfg.gamut == GamutMode::Warped,
            noise_sigma: cfg.noise_sigma,
            quantize: cfg.quantize,
        };
        if cfg.gamut != GamutMode::None {
            let reference: Vec<Rgb> =
                (0..GAMUT_REFERENCE_POINTS).map(|_| camera.matrix.apply(camera.sample_raw(&mut rng))).collect();
            camera.gamut = Some(solve_affine_gamut(&reference)?);
        }
        Ok(camera)
    }

    /// Camera with an explicit matrix and tone and no gamut step.
    pub fn with_matrix(matrix: ColorMatrix, tone: ToneFamily) -> Self {
        Self { id: "synthetic".into(), matrix, tone, gamut: None, warp: false, noise_sigma: 0.0, quantize: false }
    }

    /// Gamut-mapped linear value `Γ(M·ρ)` in the unit cube.
    pub fn linear(&self, raw: Rgb) -> Rgb {
        let mut v = self.matrix.apply(raw);
        if let Some(g) = &self.gamut {
            v = g.apply(v);
        }
        if self.warp {
            v = warp(v.clamp01());
        }
        v.clamp01()
    }

    /// Noise-free rendering (quantized when the camera quantizes).
    pub fn render(&self, raw: Rgb) -> Rgb {
        let out = self.linear(raw).map(|t| self.tone.eval(t));
        self.finish(out)
    }

    /// Rendering with the camera's rendered-domain Gaussian noise.
    pub fn render_noisy(&self, raw: Rgb, rng: &mut impl Rng) -> Rgb {
        let mut out = self.linear(raw).map(|t| self.tone.eval(t));
        if self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma).expect("sigma validated");
            out = Rgb::new(
                out.r + normal.sample(rng),
                out.g + normal.sample(rng),
                out.b + normal.sample(rng),
            );
        }
        self.finish(out)
    }

    fn finish(&self, v: Rgb) -> Rgb {
        let v = v.clamp01();
        if self.quantize {
            v.map(|x| (x * 255.0).round() / 255.0)
        } else {
            v
        }
    }

    /// A reflectance-like raw under the reference illuminant: a lightness in
    /// `[0.03, 0.9]` with a random chroma offset, taken through `M⁻¹` and
    /// clipped to the sensor range.
    pub fn sample_raw(&self, rng: &mut impl Rng) -> Rgb {
        let u: f64 = rng.random();
        let lightness = 0.03 + 0.87 * u * u;
        let angle = rng.random::<f64>() * 2.0 * PI;
        let chroma = 0.7 * rng.random::<f64>();
        // Orthonormal basis of the plane perpendicular to grey.
        let e1 = Rgb::new(1.0, -1.0, 0.0) * (1.0 / 2f64.sqrt());
        let e2 = Rgb::new(1.0, 1.0, -2.0) * (1.0 / 6f64.sqrt());
        let dir = e1 * angle.cos() + e2 * angle.sin();
        let c = (Rgb::splat(lightness) + dir * (lightness * chroma)).map(|v| v.max(0.005));
        let inv = self.matrix.inverse().expect("camera matrix is invertible");
        inv.apply(c).clamp01()
    }

    /// Keyed text description of the ground truth.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "format = rankcal-camera");
        let _ = writeln!(out, "version = 1");
        let _ = writeln!(out, "camera.id = {}", self.id);
        for (i, row) in self.matrix.rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let _ = writeln!(out, "camera.m{}{} = {v:.16e}", i + 1, j + 1);
            }
        }
        let _ = writeln!(out, "camera.tone = {}", self.tone.describe());
        let mode = match (&self.gamut, self.warp) {
            (None, _) => "none",
            (Some(_), false) => "affine",
            (Some(_), true) => "warped",
        };
        let _ = writeln!(out, "camera.gamut = {mode}");
        if let Some(g) = &self.gamut {
            for (i, row) in g.t.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    let _ = writeln!(out, "gamut.t{}{} = {v:.16e}", i + 1, j + 1);
                }
            }
            for (i, v) in g.offset.iter().enumerate() {
                let _ = writeln!(out, "gamut.o{} = {v:.16e}", i + 1);
            }
        }
        let _ = writeln!(out, "camera.noise_sigma = {:.16e}", self.noise_sigma);
        let _ = writeln!(out, "camera.quantize = {}", self.quantize);
        out
    }
}

fn warp(v: Rgb) -> Rgb {
    // Vanishes on the cube faces, so the warped point stays inside.
    let bump = |a: f64, b: f64| WARP_AMPLITUDE * (PI * a).sin() * (PI * b).sin();
    Rgb::new(v.r + bump(v.r, v.g), v.g + bump(v.g, v.b), v.b - bump(v.b, v.r))
}

/// A von Kries illuminant: per-channel raw gains.
#[derive(Debug, Clone, PartialEq)]
pub struct Illuminant {
    pub id: String,
    pub gains: [f64; 3],
}

impl Illuminant {
    pub fn neutral() -> Self {
        Self { id: "illu0".into(), gains: [1.0; 3] }
    }
}

/// `count` illuminants: a neutral one followed by warm/cool casts.
pub fn default_illuminants(count: usize) -> Vec<Illuminant> {
    (0..count)
        .map(|i| {
            if i == 0 {
                return Illuminant::neutral();
            }
            let warmth = ((i as f64 * 0.618_033_988_75).fract() - 0.5) * 0.6;
            Illuminant { id: format!("illu{i}"), gains: [1.0 + warmth, 1.0, 1.0 - warmth] }
        })
        .collect()
}

/// `count` exposure gains spread geometrically over two stops around 1.
pub fn default_exposures(count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![1.0];
    }
    (0..count).map(|i| 2f64.powf(-1.0 + 2.0 * i as f64 / (count - 1) as f64) * 0.75).collect()
}

fn flagged(raw: Rgb, rendered: Rgb) -> bool {
    // Same rule the CSV loader applies to clipped JPEG values.
    raw.max_component() >= SATURATION_LEVEL || rendered.max_component() >= 1.0 || rendered.min_component() <= 0.0
}

/// Patches × illuminants × exposures corpus; entries ordered illuminant,
/// then exposure, then patch.
pub fn make_corpus(
    camera: &SyntheticCamera,
    n_patches: usize,
    illuminants: &[Illuminant],
    exposures: &[f64],
    rng_seed: u64,
) -> Result<PixelPairSet, SimError> {
    if n_patches == 0 {
        return Err(SimError::NoPatches);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let patches: Vec<Rgb> = (0..n_patches).map(|_| camera.sample_raw(&mut rng)).collect();
    let mut entries = Vec::with_capacity(n_patches * illuminants.len() * exposures.len());
    for illum in illuminants {
        for (e, &gain) in exposures.iter().enumerate() {
            for (p, patch) in patches.iter().enumerate() {
                let raw = Rgb::new(
                    patch.r * illum.gains[0] * gain,
                    patch.g * illum.gains[1] * gain,
                    patch.b * illum.gains[2] * gain,
                )
                .clamp01();
                let rendered = camera.render_noisy(raw, &mut rng);
                entries.push(PixelPair {
                    raw,
                    rendered,
                    tags: PairTags {
                        camera: camera.id.clone(),
                        illuminant: illum.id.clone(),
                        exposure: format!("exp{e}"),
                        patch: format!("p{p}"),
                    },
                    saturated: flagged(raw, rendered),
                });
            }
        }
    }
    Ok(PixelPairSet::new(entries))
}

/// A `width × height` image (row-major) of smoothly shaded colour regions
/// under the neutral illuminant.
pub fn make_image(camera: &SyntheticCamera, width: usize, height: usize, rng_seed: u64) -> PixelPairSet {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let tiles_x = width.div_ceil(16).max(1);
    let tiles_y = height.div_ceil(16).max(1);
    let tiles: Vec<Rgb> = (0..tiles_x * tiles_y).map(|_| camera.sample_raw(&mut rng)).collect();
    let mut entries = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let base = tiles[(y / 16).min(tiles_y - 1) * tiles_x + (x / 16).min(tiles_x - 1)];
            // Shading across each tile plus a global illumination falloff.
            let fx = (x % 16) as f64 / 15.0;
            let fy = (y % 16) as f64 / 15.0;
            let shade = (0.55 + 0.45 * (1.0 - 0.5 * fx) * (1.0 - 0.3 * fy))
                * (1.0 - 0.3 * (x as f64 / width as f64 - 0.5).powi(2));
            let raw = (base * shade).clamp01();
            let rendered = camera.render_noisy(raw, &mut rng);
            entries.push(PixelPair {
                raw,
                rendered,
                tags: PairTags {
                    camera: camera.id.clone(),
                    illuminant: "illu0".into(),
                    exposure: "exp0".into(),
                    patch: format!("px{}", y * width + x),
                },
                saturated: flagged(raw, rendered),
            });
        }
    }
    PixelPairSet::new(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_camera_passes_raw_through() {
        let cam = SyntheticCamera::with_matrix(ColorMatrix::identity(), ToneFamily::Gamma(1.0));
        let raw = Rgb::new(0.1, 0.5, 0.9);
        assert!((cam.render(raw) - raw).norm() < 1e-15);
    }

    #[test]
    fn gamma_rendering_of_grey() {
        let cam = SyntheticCamera::with_matrix(ColorMatrix::identity(), ToneFamily::Gamma(1.0 / 2.2));
        let out = cam.render(Rgb::splat(0.25));
        // 0.25^(1/2.2) = exp(ln 0.25 / 2.2)
        let expect = (0.25f64.ln() / 2.2).exp();
        assert!((out.r - expect).abs() < 1e-15);
        assert!((expect - 0.5326).abs() < 1e-4);
    }

    #[test]
    fn random_camera_is_diagonally_dominant() {
        for seed in 0..20 {
            let cam = SyntheticCamera::random(&CameraConfig { gamut: GamutMode::None, ..Default::default() }, seed).unwrap();
            for (k, row) in cam.matrix.rows.iter().enumerate() {
                let off: f64 = row.iter().enumerate().filter(|(j, _)| *j != k).map(|(_, v)| v.abs()).sum();
                assert!(row[k] > off);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
            let inv = cam.matrix.inverse().unwrap();
            assert!(inv.rows.iter().flatten().all(|&v| v >= -1e-12));
        }
    }

    #[test]
    fn out_of_cube_colours_are_gamut_mapped() {
        let cam = SyntheticCamera::random(&CameraConfig::default(), 3).unwrap();
        let g = cam.gamut.expect("affine gamut");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut outside = 0;
        let mut worst = 0.0_f64;
        for _ in 0..500 {
            let raw = cam.sample_raw(&mut rng);
            let corrected = cam.matrix.apply(raw);
            if !corrected.in_unit_cube() {
                outside += 1;
                let mapped = g.apply(corrected);
                worst = mapped.to_array().iter().fold(worst, |w, &v| w.max(-v).max(v - 1.0));
            }
            assert!(cam.render(raw).in_unit_cube());
        }
        assert!(outside > 0, "reference cloud should exercise the gamut map");
        // Fresh samples were not part of the fit and may poke out slightly.
        assert!(worst < 0.05, "worst excursion {worst}");
    }

    #[test]
    fn corpus_shape_and_tags() {
        let cam = SyntheticCamera::random(&CameraConfig::default(), 1).unwrap();
        let corpus = make_corpus(&cam, 10, &default_illuminants(2), &default_exposures(3), 5).unwrap();
        assert_eq!(corpus.len(), 60);
        assert_eq!(corpus.entries[0].tags.illuminant, "illu0");
        assert_eq!(corpus.entries[59].tags.illuminant, "illu1");
        assert_eq!(corpus.entries[59].tags.exposure, "exp2");
        assert_eq!(corpus.entries[59].tags.patch, "p9");
        assert!(matches!(make_corpus(&cam, 0, &default_illuminants(1), &[1.0], 5), Err(SimError::NoPatches)));
    }

    #[test]
    fn zero_exposure_renders_black_level() {
        let cam = SyntheticCamera::random(&CameraConfig::default(), 2).unwrap();
        let corpus = make_corpus(&cam, 5, &default_illuminants(1), &[0.0], 1).unwrap();
        let black = cam.render(Rgb::default());
        for e in &corpus.entries {
            assert_eq!(e.raw, Rgb::default());
            assert_eq!(e.rendered, black);
        }
    }

    #[test]
    fn warp_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let v = Rgb::new(rng.random(), rng.random(), rng.random());
            let w = warp(v);
            assert!((w - v).to_array().iter().all(|d| d.abs() <= WARP_AMPLITUDE));
            assert!(w.in_unit_cube());
        }
    }

    #[test]
    fn tone_inverse() {
        for tone in [ToneFamily::Gamma(1.0 / 2.2), ToneFamily::SrgbLike, ToneFamily::Filmic { exponent: 0.5, contrast: 1.4 }] {
            for i in 0..=20 {
                let t = i as f64 / 20.0;
                assert!((tone.invert(tone.eval(t)) - t).abs() < 1e-9);
            }
        }
    }
}
