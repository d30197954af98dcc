//! Gamut handling: the affine gamut-mapping program and lattice regression
//! for the small residual LUT.

use nalgebra::{Cholesky, DMatrix, DVector, Matrix3};
use thiserror::Error;

use crate::model::{Lattice3, ModelError, Rgb};
use crate::qp::{solve_qp_from, QpError, QuadProgram, DEFAULT_TOL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GamutError {
    #[error("need at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("input points are coplanar")]
    DegenerateGeometry,
    #[error("non-finite input")]
    NonFinite,
    #[error("{0} inputs but {1} targets")]
    LengthMismatch(usize, usize),
    #[error("lattice fit needs at least one sample")]
    NoSamples,
    #[error("invalid lattice configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// `v ↦ T·v + o`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineGamutMap {
    pub t: [[f64; 3]; 3],
    pub offset: [f64; 3],
}

impl AffineGamutMap {
    pub fn identity() -> Self {
        Self { t: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], offset: [0.0; 3] }
    }

    pub fn apply(&self, v: Rgb) -> Rgb {
        let mut out = [0.0; 3];
        for (k, o) in out.iter_mut().enumerate() {
            *o = Rgb::from_array(self.t[k]).dot(v) + self.offset[k];
        }
        Rgb::from_array(out)
    }

    /// `Σ ‖T·vᵢ + o − vᵢ‖²`.
    pub fn objective(&self, points: &[Rgb]) -> f64 {
        points.iter().map(|&v| (self.apply(v) - v).dot(self.apply(v) - v)).sum()
    }
}

/// Best affine map keeping every point inside the unit cube:
/// `min Σ ‖T·vᵢ + o − vᵢ‖²  s.t.  0 ≤ T·vᵢ + o ≤ 1`.
///
/// Objective and constraints separate by output channel, so the 12-unknown
/// program is solved as three independent 4-unknown programs.
pub fn solve_affine_gamut(points: &[Rgb]) -> Result<AffineGamutMap, GamutError> {
    if points.iter().any(|p| !p.is_finite()) {
        return Err(GamutError::NonFinite);
    }
    if points.len() < 4 {
        return Err(GamutError::TooFewPoints(points.len()));
    }
    check_spread(points)?;
    if points.iter().all(|p| p.in_unit_cube()) {
        return Ok(AffineGamutMap::identity());
    }

    let n = points.len();
    let mut gram = DMatrix::<f64>::zeros(4, 4);
    for p in points {
        let h = [p.r, p.g, p.b, 1.0];
        for a in 0..4 {
            for b in 0..4 {
                gram[(a, b)] += h[a] * h[b];
            }
        }
    }
    let q = gram * 2.0;
    // Rows: +h·x ≤ 1 and −h·x ≤ 0 for every point.
    let mut at = DMatrix::<f64>::zeros(4, 2 * n);
    let mut b = DVector::<f64>::zeros(2 * n);
    for (i, p) in points.iter().enumerate() {
        let h = [p.r, p.g, p.b, 1.0];
        for a in 0..4 {
            at[(a, 2 * i)] = h[a];
            at[(a, 2 * i + 1)] = -h[a];
        }
        b[2 * i] = 1.0;
    }

    let mut map = AffineGamutMap::identity();
    for k in 0..3 {
        let mut c = DVector::<f64>::zeros(4);
        for p in points {
            let h = [p.r, p.g, p.b, 1.0];
            for a in 0..4 {
                c[a] -= 2.0 * h[a] * p[k];
            }
        }
        let program = QuadProgram::from_transposed(q.clone(), c, at.clone(), b.clone())?;
        // T_k = 0, o_k = ½ is always feasible.
        let start = DVector::from_column_slice(&[0.0, 0.0, 0.0, 0.5]);
        let sol = solve_qp_from(&program, &start, DEFAULT_TOL)?;
        map.t[k] = [sol.x[0], sol.x[1], sol.x[2]];
        map.offset[k] = sol.x[3];
    }
    Ok(map)
}

fn check_spread(points: &[Rgb]) -> Result<(), GamutError> {
    let n = points.len() as f64;
    let mean = points.iter().fold(Rgb::default(), |a, &p| a + p) * (1.0 / n);
    let mut cov = Matrix3::<f64>::zeros();
    for p in points {
        let d = (*p - mean).to_array();
        for a in 0..3 {
            for b in 0..3 {
                cov[(a, b)] += d[a] * d[b];
            }
        }
    }
    let eig = cov.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if hi <= 0.0 || lo <= 1e-12 * hi {
        return Err(GamutError::DegenerateGeometry);
    }
    Ok(())
}

/// Settings for lattice regression.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeConfig {
    pub resolution: usize,
    /// Weight of the Laplacian smoothness and identity-anchor terms.
    pub mu: f64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self { resolution: 5, mu: 1e-3 }
    }
}

/// The eight `(node index, weight)` pairs interpolating `v` (clamped to
/// the cube).
pub fn trilinear_weights(resolution: usize, v: Rgb) -> [(usize, f64); 8] {
    let cells = (resolution - 1) as f64;
    let mut base = [0usize; 3];
    let mut frac = [0.0; 3];
    for k in 0..3 {
        let u = v[k].clamp(0.0, 1.0) * cells;
        let i = (u.floor() as usize).min(resolution - 2);
        base[k] = i;
        frac[k] = u - i as f64;
    }
    let mut out = [(0usize, 0.0); 8];
    for (corner, slot) in out.iter_mut().enumerate() {
        let (di, dj, dk) = ((corner >> 2) & 1, (corner >> 1) & 1, corner & 1);
        let w = |d: usize, f: f64| if d == 1 { f } else { 1.0 - f };
        let idx = ((base[0] + di) * resolution + base[1] + dj) * resolution + base[2] + dk;
        *slot = (idx, w(di, frac[0]) * w(dj, frac[1]) * w(dk, frac[2]));
    }
    out
}

/// Trilinear interpolation of the lattice at `v` (clamped to the cube).
pub fn apply_lattice(lut: &Lattice3, v: Rgb) -> Rgb {
    trilinear_weights(lut.resolution(), v)
        .iter()
        .fold(Rgb::default(), |acc, &(idx, w)| acc + lut.nodes()[idx] * w)
}

/// Lattice regression: node values minimizing the interpolation error on the
/// samples plus `mu` times (a) the graph-Laplacian energy of the node
/// offsets from the identity over the 6-neighbour lattice and (b) the squared
/// offset of every node that no sample touches.
pub fn fit_lattice(inputs: &[Rgb], targets: &[Rgb], cfg: &LatticeConfig) -> Result<Lattice3, GamutError> {
    if inputs.len() != targets.len() {
        return Err(GamutError::LengthMismatch(inputs.len(), targets.len()));
    }
    if inputs.is_empty() {
        return Err(GamutError::NoSamples);
    }
    if cfg.resolution < 2 || cfg.resolution > 33 {
        return Err(GamutError::BadConfig(format!("resolution {}", cfg.resolution)));
    }
    if !(cfg.mu > 0.0 && cfg.mu.is_finite()) {
        return Err(GamutError::BadConfig(format!("mu {} must be positive", cfg.mu)));
    }
    if inputs.iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(GamutError::NonFinite);
    }

    let res = cfg.resolution;
    let count = res.pow(3);
    let identity = Lattice3::identity(res)?;
    let mut normal = DMatrix::<f64>::zeros(count, count);
    let mut rhs = DMatrix::<f64>::zeros(count, 3);
    let mut support = vec![0.0; count];

    for (v, y) in inputs.iter().zip(targets) {
        let w = trilinear_weights(res, *v);
        for &(a, wa) in &w {
            support[a] += wa;
            for k in 0..3 {
                rhs[(a, k)] += wa * y[k];
            }
            for &(b, wb) in &w {
                normal[(a, b)] += wa * wb;
            }
        }
    }

    // Regularizer R acts on offsets from the identity: mu·R·(n − g), so
    // the right-hand side gains mu·R·g.
    let mut reg = DMatrix::<f64>::zeros(count, count);
    for i in 0..res {
        for j in 0..res {
            for k in 0..res {
                let a = identity.index(i, j, k);
                let mut link = |b: usize| {
                    reg[(a, a)] += 1.0;
                    reg[(b, b)] += 1.0;
                    reg[(a, b)] -= 1.0;
                    reg[(b, a)] -= 1.0;
                };
                if i + 1 < res {
                    link(identity.index(i + 1, j, k));
                }
                if j + 1 < res {
                    link(identity.index(i, j + 1, k));
                }
                if k + 1 < res {
                    link(identity.index(i, j, k + 1));
                }
            }
        }
    }
    for (a, &s) in support.iter().enumerate() {
        if s <= 0.0 {
            reg[(a, a)] += 1.0;
        }
    }
    let grid = DMatrix::from_fn(count, 3, |a, k| identity.nodes()[a][k]);
    rhs += &reg * &grid * cfg.mu;
    normal += reg * cfg.mu;

    let chol = Cholesky::new(normal).ok_or_else(|| GamutError::BadConfig("lattice system is singular".into()))?;
    let solved = chol.solve(&rhs);
    let nodes = (0..count).map(|a| Rgb::new(solved[(a, 0)], solved[(a, 1)], solved[(a, 2)])).collect();
    Ok(Lattice3::new(res, nodes)?)
}

/// RMS interpolation error of `lut` on the samples.
pub fn lattice_rms(lut: &Lattice3, inputs: &[Rgb], targets: &[Rgb]) -> f64 {
    let sse: f64 = inputs
        .iter()
        .zip(targets)
        .map(|(v, y)| {
            let d = apply_lattice(lut, *v) - *y;
            d.dot(d)
        })
        .sum();
    (sse / (3 * inputs.len().max(1)) as f64).sqrt()
}
