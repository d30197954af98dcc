//! Monotone, smoothness-regularized polynomial tone curves.
//!
//! A curve `f(t) = Σ cᵢ tⁱ` minimizes
//! `Σ (f(xᵢ) − yᵢ)² + λ ∫₀¹ f″(t)² dt` subject to `f′ ≥ 0` on a uniform
//! grid. The program is assembled in the shifted Legendre basis, which is far
//! better conditioned than the power basis at degree 7, and converted back
//! to power-basis coefficients at the end.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Channel, ColorMatrix, CurveDirection, ModelError, PixelPairSet, ToneCurve};
use crate::qp::{solve_qp_from, QpError, QuadProgram, DEFAULT_TOL};

/// Minimum spread of the fitted abscissae.
pub const MIN_SPAN: f64 = 0.2;
/// Density of the grid used to look for derivative dips between constraint points.
const REFINE_GRID: usize = 4097;
const REFINE_ROUNDS: usize = 30;
/// Derivative dips shallower than this are left to the solver tolerance.
const DIP_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {need} samples, got {got}")]
    InsufficientData { need: usize, got: usize },
    #[error("sample abscissae span only {span:.4} of [0, 1]")]
    DegenerateSpan { span: f64 },
    #[error("x and y lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("invalid fit configuration: {0}")]
    BadConfig(String),
    #[error("non-finite sample")]
    NonFinite,
    #[error("channel {channel}: {source}")]
    Channel { channel: Channel, source: Box<FitError> },
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub degree: usize,
    pub lambda: f64,
    /// Uniform grid points where `f′ ≥ 0` is enforced.
    pub constraint_grid: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self { degree: 7, lambda: 1e-5, constraint_grid: 257 }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<(), FitError> {
        if self.degree < 1 || self.degree > 20 {
            return Err(FitError::BadConfig(format!("degree {} outside 1..=20", self.degree)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(FitError::BadConfig(format!("lambda {} must be finite and non-negative", self.lambda)));
        }
        if self.constraint_grid < self.degree + 1 {
            return Err(FitError::BadConfig(format!(
                "constraint grid {} smaller than degree + 1",
                self.constraint_grid
            )));
        }
        Ok(())
    }
}

/// Power-basis coefficients of the shifted Legendre polynomials
/// `P̃ⱼ(t) = Pⱼ(2t − 1)`; column `j` holds `P̃ⱼ`.
fn legendre_to_power(degree: usize) -> DMatrix<f64> {
    let n = degree + 1;
    let mut t = DMatrix::zeros(n, n);
    for j in 0..n {
        // P̃ⱼ(t) = Σₖ (−1)^{j+k} C(j,k) C(j+k,k) tᵏ
        for k in 0..=j {
            let sign = if (j + k) % 2 == 0 { 1.0 } else { -1.0 };
            t[(k, j)] = sign * binomial(j, k) * binomial(j + k, k);
        }
    }
    t
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64).round()
}

/// Values and first derivatives of `P̃₀ … P̃_degree` at `t`.
fn legendre_row(degree: usize, t: f64) -> (Vec<f64>, Vec<f64>) {
    let u = 2.0 * t - 1.0;
    let mut p = vec![0.0; degree + 1];
    let mut dp = vec![0.0; degree + 1];
    p[0] = 1.0;
    if degree >= 1 {
        p[1] = u;
        dp[1] = 1.0;
    }
    for n in 1..degree {
        let nf = n as f64;
        p[n + 1] = ((2.0 * nf + 1.0) * u * p[n] - nf * p[n - 1]) / (nf + 1.0);
        dp[n + 1] = dp[n - 1] + (2.0 * nf + 1.0) * p[n];
    }
    // d/dt = 2 d/du
    dp.iter_mut().for_each(|v| *v *= 2.0);
    (p, dp)
}

/// `∫₀¹ f″(t)² dt = cᵀSc` for power-basis coefficients `c`.
pub fn smoothness_matrix(degree: usize) -> DMatrix<f64> {
    let n = degree + 1;
    DMatrix::from_fn(n, n, |i, j| {
        if i < 2 || j < 2 {
            0.0
        } else {
            (i * (i - 1) * j * (j - 1)) as f64 / (i + j - 3) as f64
        }
    })
}

/// Objective `Σ (f(xᵢ) − yᵢ)² + λ cᵀSc` for power coefficients.
pub fn fit_objective(coeffs: &[f64], x: &[f64], y: &[f64], lambda: f64) -> f64 {
    let eval = |t: f64| coeffs.iter().rev().fold(0.0, |acc, &c| acc * t + c);
    let data: f64 = x.iter().zip(y).map(|(&a, &b)| (eval(a) - b).powi(2)).sum();
    let c = DVector::from_column_slice(coeffs);
    data + lambda * c.dot(&(smoothness_matrix(coeffs.len() - 1) * &c))
}

fn check_samples(x: &[f64], y: &[f64], cfg: &FitConfig) -> Result<(), FitError> {
    cfg.validate()?;
    if x.len() != y.len() {
        return Err(FitError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < cfg.degree + 1 {
        return Err(FitError::InsufficientData { need: cfg.degree + 1, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min).max(0.0);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(1.0);
    if hi - lo < MIN_SPAN {
        return Err(FitError::DegenerateSpan { span: (hi - lo).max(0.0) });
    }
    Ok(())
}

/// Fits monotone power-basis coefficients of degree `cfg.degree` to samples
/// with `x` in `[0, 1]`. Derivative dips between constraint points found on
/// a fine check grid are added as extra constraints and the program re-solved.
pub fn fit_polynomial(x: &[f64], y: &[f64], cfg: &FitConfig) -> Result<Vec<f64>, FitError> {
    check_samples(x, y, cfg)?;
    let n = cfg.degree + 1;
    let to_power = legendre_to_power(cfg.degree);

    let mut gram = DMatrix::<f64>::zeros(n, n);
    let mut rhs = DVector::<f64>::zeros(n);
    for (&xi, &yi) in x.iter().zip(y) {
        let (row, _) = legendre_row(cfg.degree, xi);
        for a in 0..n {
            rhs[a] += row[a] * yi;
            for b in 0..n {
                gram[(a, b)] += row[a] * row[b];
            }
        }
    }
    let smooth = to_power.transpose() * smoothness_matrix(cfg.degree) * &to_power;
    let mut q = (gram + smooth * cfg.lambda) * 2.0;
    // Remove rounding asymmetry before validation.
    q = (&q + q.transpose()) * 0.5;
    let c = rhs * -2.0;

    let step = 1.0 / (cfg.constraint_grid - 1) as f64;
    let mut points: Vec<f64> = (0..cfg.constraint_grid).map(|i| i as f64 * step).collect();
    // Start from a strictly increasing line through the data mean. The zero
    // polynomial has every derivative constraint tight at once, a degenerate
    // vertex the active-set method is slow to leave.
    let mut interior = DVector::zeros(n);
    interior[0] = y.iter().sum::<f64>() / y.len() as f64;
    interior[1] = 0.25;
    let mut start = interior.clone();
    for _ in 0..REFINE_ROUNDS {
        let mut at = DMatrix::zeros(n, points.len());
        for (col, &t) in points.iter().enumerate() {
            let (_, d) = legendre_row(cfg.degree, t);
            for a in 0..n {
                at[(a, col)] = -d[a];
            }
        }
        let program = QuadProgram::from_transposed(q.clone(), c.clone(), at, DVector::zeros(points.len()))?;
        // The last solution breaks the new dip constraints. Back off toward
        // the interior line rather than run phase 1, whose optimum is a
        // highly degenerate vertex for these nearly parallel constraints.
        let warm = feasible_blend(&program, &interior, &start);
        let sol = solve_qp_from(&program, &warm, DEFAULT_TOL)?;
        let dips = derivative_dips(&sol.x, cfg.degree);
        start = sol.x;
        if dips.is_empty() {
            break;
        }
        points.extend(dips);
    }
    Ok((to_power * start).iter().copied().collect())
}

/// Furthest point from `inside` toward `target` that satisfies every
/// constraint of `p`. `inside` must be strictly feasible.
fn feasible_blend(p: &QuadProgram, inside: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
    let a = p.a();
    let (from, to) = (&a * inside - p.b(), &a * target - p.b());
    let mut theta = 1.0f64;
    for (f, t) in from.iter().zip(to.iter()) {
        if *t > 0.0 && *f < 0.0 {
            theta = theta.min(f / (f - t));
        }
    }
    // Stay a hair inside so no constraint starts out violated by rounding.
    let theta = if theta < 1.0 { theta * (1.0 - 1e-9) } else { theta };
    inside + (target - inside) * theta
}

/// Local minima of `f′` below zero. Grid minima are polished by a
/// golden-section search over the neighbouring interval, since a narrow dip
/// can sit between grid points.
fn derivative_dips(legendre_coeffs: &DVector<f64>, degree: usize) -> Vec<f64> {
    let fprime = |t: f64| -> f64 {
        let (_, d) = legendre_row(degree, t);
        d.iter().zip(legendre_coeffs.iter()).map(|(a, b)| a * b).sum()
    };
    let step = 1.0 / (REFINE_GRID - 1) as f64;
    let deriv: Vec<f64> = (0..REFINE_GRID).map(|i| fprime(i as f64 * step)).collect();
    let scale = deriv.iter().fold(1e-300_f64, |m, v| m.max(v.abs()));
    let mut dips = Vec::new();
    for i in 0..REFINE_GRID {
        let v = deriv[i];
        let left = if i > 0 { deriv[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < REFINE_GRID { deriv[i + 1] } else { f64::INFINITY };
        if v > left || v > right || v > 1e-3 * scale {
            continue;
        }
        let (mut a, mut b) = ((i as f64 - 1.0).max(0.0) * step, ((i + 1) as f64 * step).min(1.0));
        let ratio = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - ratio * (b - a);
            let d = a + ratio * (b - a);
            if fprime(c) < fprime(d) {
                b = d;
            } else {
                a = c;
            }
        }
        let t = 0.5 * (a + b);
        let (t, value) = if fprime(t) < v { (t, fprime(t)) } else { (i as f64 * step, v) };
        if value < -DIP_TOL {
            dips.push(t);
        }
    }
    dips
}

/// Fits a monotone tone curve to `(x, y)` samples.
pub fn fit_monotone(
    x: &[f64],
    y: &[f64],
    cfg: &FitConfig,
    direction: CurveDirection,
    channel: Channel,
) -> Result<ToneCurve, FitError> {
    let coeffs = fit_polynomial(x, y, cfg)?;
    Ok(ToneCurve::new(coeffs, direction, channel)?)
}

fn fit_channels(
    samples: impl Fn(usize) -> (Vec<f64>, Vec<f64>) + Sync,
    cfg: &FitConfig,
    direction: CurveDirection,
) -> Result<[ToneCurve; 3], FitError> {
    let curves = Channel::ALL
        .par_iter()
        .map(|&c| {
            let (x, y) = samples(c.index());
            fit_monotone(&x, &y, cfg, direction, c)
                .map_err(|e| FitError::Channel { channel: c, source: Box::new(e) })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(curves.try_into().expect("three channels"))
}

/// Per-channel curves mapping `clamp₀¹(M_k ρ)` to rendered values.
pub fn fit_forward_tones(m: &ColorMatrix, pairs: &PixelPairSet, cfg: &FitConfig) -> Result<[ToneCurve; 3], FitError> {
    let corrected: Vec<_> = pairs.unsaturated().map(|p| (m.apply(p.raw), p.rendered)).collect();
    fit_channels(
        |k| corrected.iter().map(|(c, r)| (c[k].clamp(0.0, 1.0), r[k])).unzip(),
        cfg,
        CurveDirection::Forward,
    )
}

/// Per-channel curves mapping rendered values to `M_k ρ`.
pub fn fit_inverse_tones(m: &ColorMatrix, pairs: &PixelPairSet, cfg: &FitConfig) -> Result<[ToneCurve; 3], FitError> {
    let corrected: Vec<_> = pairs.unsaturated().map(|p| (p.rendered, m.apply(p.raw))).collect();
    fit_channels(
        |k| corrected.iter().map(|(r, c)| (r[k].clamp(0.0, 1.0), c[k])).unzip(),
        cfg,
        CurveDirection::Inverse,
    )
}
