//! Rank-based estimation of colour-matrix rows.
//!
//! If rendered channel `k` of colour `a` exceeds that of colour `b`, the
//! matrix row `M_k` must satisfy `M_k·(ρᵃ − ρᵇ) > 0`. Every such difference
//! vector cuts the sphere of candidate row directions in half; the row is
//! taken as the sphere sample that satisfies the most half-spaces.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::isotonic::isotonic_rms;
use crate::model::{Channel, ColorMatrix, ModelError, PixelPair, PixelPairSet, Rgb};

/// Rendered differences below this are treated as ties.
pub const RANK_EPSILON: f64 = 2.0 / 255.0;
/// Any raw or rendered component at or above this marks a pixel as clipped.
pub const SATURATION_LEVEL: f64 = 0.995;

/// Points scored per work unit when scanning the sphere.
const SCORE_CHUNK: usize = 2048;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RankError {
    #[error("sphere sampling needs at least 6 points, got {0}")]
    TooFewSpherePoints(usize),
    #[error("need at least 2 unsaturated samples, got {0}")]
    InsufficientData(usize),
    #[error("channel {0} has fewer than 2 distinct rendered values")]
    DegenerateChannel(Channel),
    #[error("no near-achromatic sample with mid-range brightness")]
    NoAchromaticSample,
    #[error("achromatic reference maps to a non-positive value in channel {0}")]
    NonPositiveResponse(Channel),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Settings for row estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct RankConfig {
    pub sphere_points: usize,
    pub trials: usize,
    pub max_colors: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        Self { sphere_points: 100_000, trials: 25, max_colors: 50 }
    }
}

/// Unit vectors covering the whole sphere, stored component-wise.
#[derive(Debug, Clone)]
pub struct SphereSample {
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
}

impl SphereSample {
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn point(&self, i: usize) -> Rgb {
        Rgb::new(self.xs[i], self.ys[i], self.zs[i])
    }

    pub fn points(&self) -> impl Iterator<Item = Rgb> + '_ {
        (0..self.len()).map(|i| self.point(i))
    }
}

/// Deterministic near-uniform sphere sampling on a Fibonacci spiral.
/// `n = 6` returns the axis-aligned octahedron.
pub fn sample_sphere(n: usize) -> Result<SphereSample, RankError> {
    if n < 6 {
        return Err(RankError::TooFewSpherePoints(n));
    }
    let pts: Vec<[f64; 3]> = if n == 6 {
        vec![
            [1.0, 0.0, 0.0],
            [-1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, -1.0, 0.0],
            [0.0, 0.0, 1.0],
            [0.0, 0.0, -1.0],
        ]
    } else {
        let golden_angle = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n)
            .map(|i| {
                let z = 1.0 - (2 * i + 1) as f64 / n as f64;
                let r = (1.0 - z * z).max(0.0).sqrt();
                let phi = golden_angle * i as f64;
                let v = [r * phi.cos(), r * phi.sin(), z];
                let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / norm, v[1] / norm, v[2] / norm]
            })
            .collect()
    };
    Ok(SphereSample {
        xs: pts.iter().map(|p| p[0]).collect(),
        ys: pts.iter().map(|p| p[1]).collect(),
        zs: pts.iter().map(|p| p[2]).collect(),
    })
}

/// Oriented raw differences `ρᵃ − ρᵇ` with `P_k(a) > P_k(b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpaceSet {
    pub differences: Vec<Rgb>,
}

impl HalfSpaceSet {
    pub fn len(&self) -> usize {
        self.differences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.differences.is_empty()
    }
}

/// True when a pair may contribute rank evidence.
pub fn usable_for_ranking(p: &PixelPair) -> bool {
    !p.saturated && p.raw.max_component() < SATURATION_LEVEL && p.rendered.max_component() < SATURATION_LEVEL
}

/// Unsaturated entries with distinct raw triples, in corpus order.
fn unique_colors(pairs: &PixelPairSet) -> Vec<&PixelPair> {
    let mut seen = std::collections::HashSet::new();
    pairs
        .entries
        .iter()
        .filter(|p| usable_for_ranking(p))
        .filter(|p| seen.insert(p.raw.to_array().map(f64::to_bits)))
        .collect()
}

/// Builds half-space constraints for one channel from up to `max_colors`
/// randomly chosen unique colours.
pub fn build_half_spaces(
    pairs: &PixelPairSet,
    channel: Channel,
    max_colors: usize,
    rng_seed: u64,
) -> Result<HalfSpaceSet, RankError> {
    let colors = unique_colors(pairs);
    if colors.len() < 2 {
        return Err(RankError::InsufficientData(colors.len()));
    }
    let k = channel.index();
    let first = colors[0].rendered[k];
    if colors.iter().all(|p| p.rendered[k] == first) {
        return Err(RankError::DegenerateChannel(channel));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let take = max_colors.max(2).min(colors.len());
    let chosen: Vec<&PixelPair> = sample(&mut rng, colors.len(), take).iter().map(|i| colors[i]).collect();

    let mut differences = Vec::with_capacity(take * (take - 1) / 2);
    for (i, a) in chosen.iter().enumerate() {
        for b in &chosen[i + 1..] {
            let delta = a.rendered[k] - b.rendered[k];
            if delta.abs() < RANK_EPSILON {
                continue;
            }
            let d = if delta > 0.0 { a.raw - b.raw } else { b.raw - a.raw };
            if d.norm() > 0.0 {
                differences.push(d);
            }
        }
    }
    if differences.is_empty() {
        return Err(RankError::DegenerateChannel(channel));
    }
    Ok(HalfSpaceSet { differences })
}

/// Number of constraints strictly satisfied by `m`.
pub fn score_candidate(m: Rgb, hs: &HalfSpaceSet) -> usize {
    hs.differences.iter().filter(|d| m.dot(**d) > 0.0).count()
}

/// Scores of every sphere point. Chunks are independent so the result does
/// not depend on thread scheduling.
pub fn score_sphere(sphere: &SphereSample, hs: &HalfSpaceSet) -> Vec<u32> {
    let mut counts = vec![0u32; sphere.len()];
    counts.par_chunks_mut(SCORE_CHUNK).enumerate().for_each(|(chunk, out)| {
        let start = chunk * SCORE_CHUNK;
        let xs = &sphere.xs[start..start + out.len()];
        let ys = &sphere.ys[start..start + out.len()];
        let zs = &sphere.zs[start..start + out.len()];
        for d in &hs.differences {
            for (((c, &x), &y), &z) in out.iter_mut().zip(xs).zip(ys).zip(zs) {
                // Bounded by the constraint count; wrapping keeps the loop vectorizable.
                *c = c.wrapping_add((x * d.r + y * d.g + z * d.b > 0.0) as u32);
            }
        }
    });
    counts
}

/// Best-scoring sphere direction; ties resolved by the component-wise median
/// of all tied points, renormalized.
pub fn best_direction(sphere: &SphereSample, hs: &HalfSpaceSet) -> Rgb {
    let counts = score_sphere(sphere, hs);
    let best = counts.iter().copied().max().unwrap_or(0);
    let tied: Vec<Rgb> = counts.iter().enumerate().filter(|(_, &c)| c == best).map(|(i, _)| sphere.point(i)).collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let med = Rgb::new(
        median(tied.iter().map(|p| p.r).collect()),
        median(tied.iter().map(|p| p.g).collect()),
        median(tied.iter().map(|p| p.b).collect()),
    );
    let n = med.norm();
    if n > 1e-12 {
        med * (1.0 / n)
    } else {
        tied[0]
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// RMS residual of the best non-decreasing fit of rendered channel values on
/// `m·ρ` over the unsaturated pairs. Lower means the candidate row orders the
/// data more consistently.
pub fn monotonicity_score(pairs: &PixelPairSet, m: Rgb, channel: Channel) -> f64 {
    let k = channel.index();
    let mut pts: Vec<(f64, f64)> = pairs.unsaturated().map(|p| (m.dot(p.raw), p.rendered[k])).collect();
    isotonic_rms(&mut pts)
}

/// Estimates the unit direction of matrix row `channel`. Trial `t` draws
/// its colour subset with seed `rng_seed + t`; the trial whose direction
/// gives the lowest [`monotonicity_score`] on the full set wins, earliest
/// trial first on ties.
pub fn estimate_row(
    pairs: &PixelPairSet,
    channel: Channel,
    sphere: &SphereSample,
    cfg: &RankConfig,
    rng_seed: u64,
) -> Result<Rgb, RankError> {
    let trials = cfg.trials.max(1);
    let candidates = (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let hs = build_half_spaces(pairs, channel, cfg.max_colors, rng_seed.wrapping_add(t))?;
            let dir = best_direction(sphere, &hs);
            Ok((dir, monotonicity_score(pairs, dir, channel)))
        })
        .collect::<Result<Vec<_>, RankError>>()?;
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if c.1 < best.1 {
            best = *c;
        }
    }
    Ok(best.0)
}

/// Unit-row matrix from three independent row estimates.
pub fn estimate_matrix(
    pairs: &PixelPairSet,
    sphere: &SphereSample,
    cfg: &RankConfig,
    rng_seed: u64,
) -> Result<ColorMatrix, RankError> {
    let mut rows = [[0.0; 3]; 3];
    for c in Channel::ALL {
        rows[c.index()] = estimate_row(pairs, c, sphere, cfg, rng_seed)?.to_array();
    }
    Ok(ColorMatrix::new(rows)?)
}

/// Index of the near-achromatic, mid-brightness pair whose rendered triple
/// is closest to mid grey.
pub fn achromatic_reference(pairs: &PixelPairSet) -> Option<usize> {
    let grey = Rgb::splat(0.5);
    pairs
        .entries
        .iter()
        .enumerate()
        .filter(|(_, p)| usable_for_ranking(p))
        .filter(|(_, p)| {
            let r = p.rendered;
            let mean = (r.r + r.g + r.b) / 3.0;
            r.max_component() - r.min_component() <= 0.04 && (0.25..=0.75).contains(&mean)
        })
        .fold(None::<(usize, f64)>, |best, (i, p)| {
            let d = (p.rendered - grey).norm();
            match best {
                Some((_, bd)) if bd <= d => best,
                _ => Some((i, d)),
            }
        })
        .map(|(i, _)| i)
}

/// Rescales each row so the matrix maps the achromatic reference raw to its
/// rendered triple exactly.
pub fn rescale_achromatic(m: &ColorMatrix, pairs: &PixelPairSet) -> Result<ColorMatrix, RankError> {
    let idx = achromatic_reference(pairs).ok_or(RankError::NoAchromaticSample)?;
    let reference = &pairs.entries[idx];
    let mapped = m.apply(reference.raw);
    let mut scales = [0.0; 3];
    for c in Channel::ALL {
        let k = c.index();
        if mapped[k] <= 0.0 {
            return Err(RankError::NonPositiveResponse(c));
        }
        scales[k] = reference.rendered[k] / mapped[k];
    }
    Ok(m.scale_rows(scales)?)
}
