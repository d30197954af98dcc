//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rankcal::qp::QuadProgram;
use rankcal::rank::SphereSample;
use rankcal::Rgb;

fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn normal_vector(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Strictly convex program with `m` random half-spaces around a strictly
/// feasible point.
pub fn random_strictly_convex(rng: &mut impl Rng, n: usize, m: usize) -> QuadProgram {
    let b = normal_matrix(rng, n, n);
    let q = b.transpose() * &b + DMatrix::identity(n, n) * 0.5;
    let c = normal_vector(rng, n) * 3.0;
    let a = normal_matrix(rng, m, n);
    let inner = normal_vector(rng, n);
    let slack = DVector::from_fn(m, |_, _| rng.random_range(0.05..1.0));
    let rhs = &a * inner + slack;
    QuadProgram::new(q, c, a, rhs).expect("valid program")
}

/// Rank-deficient PSD program over a box `lo ≤ x ≤ hi`.
pub fn random_singular_box(rng: &mut impl Rng, n: usize, rank: usize) -> (QuadProgram, Vec<f64>, Vec<f64>) {
    let b = normal_matrix(rng, rank, n);
    let q = b.transpose() * &b;
    let c = normal_vector(rng, n) * 3.0;
    let lo: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..-0.1)).collect();
    let hi: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    let mut a = DMatrix::zeros(2 * n, n);
    let mut rhs = DVector::zeros(2 * n);
    for i in 0..n {
        a[(2 * i, i)] = 1.0;
        rhs[2 * i] = hi[i];
        a[(2 * i + 1, i)] = -1.0;
        rhs[2 * i + 1] = -lo[i];
    }
    (QuadProgram::new(q, c, a, rhs).expect("valid program"), lo, hi)
}

fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
}

/// Accelerated projected gradient on the box-constrained primal.
pub fn box_projected_gradient(p: &QuadProgram, lo: &[f64], hi: &[f64], iterations: usize) -> DVector<f64> {
    let n = p.num_vars();
    let lip = spectral_norm(p.q()).max(1e-12);
    let project = |v: DVector<f64>| DVector::from_fn(n, |i, _| v[i].clamp(lo[i], hi[i]));
    let mut x = project(DVector::zeros(n));
    let mut y = x.clone();
    let mut t = 1.0_f64;
    let mut prev_obj = p.objective(&x);
    for _ in 0..iterations {
        let grad = p.q() * &y + p.c();
        let next = project(&y - grad / lip);
        let obj = p.objective(&next);
        if obj > prev_obj {
            // Restart momentum when the objective goes up.
            t = 1.0;
            y = x.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &x) * ((t - 1.0) / t_next);
        x = next;
        t = t_next;
        prev_obj = obj;
    }
    x
}

/// Accelerated projected gradient on the dual `max_{λ≥0} −½(c+Aᵀλ)ᵀQ⁻¹(c+Aᵀλ) − bᵀλ`
/// of a strictly convex program; returns the primal point and multipliers.
pub fn dual_projected_gradient(p: &QuadProgram, iterations: usize) -> (DVector<f64>, DVector<f64>) {
    let m = p.num_constraints();
    let a = p.a();
    let qinv = p.q().clone().try_inverse().expect("strictly convex");
    let primal = |lam: &DVector<f64>| -(&qinv * (p.c() + a.transpose() * lam));
    if m == 0 {
        return (primal(&DVector::zeros(0)), DVector::zeros(0));
    }
    let lip = spectral_norm(&(&a * &qinv * a.transpose())).max(1e-12);
    let dual_value = |lam: &DVector<f64>| {
        let g = p.c() + a.transpose() * lam;
        -0.5 * g.dot(&(&qinv * &g)) - p.b().dot(lam)
    };
    let mut lam = DVector::zeros(m);
    let mut y = lam.clone();
    let mut t = 1.0_f64;
    let mut prev = dual_value(&lam);
    for _ in 0..iterations {
        let grad = &a * primal(&y) - p.b();
        let next = (&y + grad / lip).map(|v| v.max(0.0));
        let val = dual_value(&next);
        if val < prev {
            t = 1.0;
            y = lam.clone();
            continue;
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &lam) * ((t - 1.0) / t_next);
        lam = next;
        t = t_next;
        prev = val;
    }
    (primal(&lam), lam)
}

/// Largest angle (degrees) from any sample point to its nearest other point,
/// by comparing every pair.
pub fn brute_force_max_gap(sphere: &SphereSample) -> f64 {
    let pts: Vec<Rgb> = sphere.points().collect();
    let mut worst = 0.0_f64;
    for (i, p) in pts.iter().enumerate() {
        let best = pts
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, q)| p.dot(*q))
            .fold(f64::NEG_INFINITY, f64::max);
        worst = worst.max(best.clamp(-1.0, 1.0).acos());
    }
    worst.to_degrees()
}

/// Same quantity using a uniform grid over `[-1, 1]³`; each query widens its
/// search shell until no unvisited cell can hold a closer point.
pub fn grid_max_gap(sphere: &SphereSample, cell: f64) -> f64 {
    let pts: Vec<Rgb> = sphere.points().collect();
    let key = |p: Rgb| {
        let f = |v: f64| ((v + 1.0) / cell).floor() as i64;
        (f(p.r), f(p.g), f(p.b))
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in pts.iter().enumerate() {
        grid.entry(key(*p)).or_default().push(i);
    }
    let max_ring = (2.0 / cell).ceil() as i64 + 1;
    let mut worst = 0.0_f64;
    for (i, p) in pts.iter().enumerate() {
        let (cx, cy, cz) = key(*p);
        let mut best = f64::INFINITY;
        let mut ring = 0_i64;
        loop {
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(bucket) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in bucket {
                                if j != i {
                                    best = best.min((*p - pts[j]).norm());
                                }
                            }
                        }
                    }
                }
            }
            // Anything outside the visited shells is at least `ring·cell` away.
            if best <= ring as f64 * cell || ring > max_ring {
                break;
            }
            ring += 1;
        }
        worst = worst.max(2.0 * (0.5 * best).min(1.0).asin());
    }
    worst.to_degrees()
}

/// Optimal isotonic RMS of `ys` (already ordered by x) by enumerating every
/// partition into contiguous blocks whose means do not decrease.
pub fn exhaustive_isotonic_rms(ys: &[f64]) -> f64 {
    let n = ys.len();
    assert!((1..=22).contains(&n));
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << (n - 1)) {
        let mut sse = 0.0;
        let mut prev_mean = f64::NEG_INFINITY;
        let mut start = 0;
        let mut ok = true;
        for end in 1..=n {
            if end == n || mask & (1 << (end - 1)) != 0 {
                let block = &ys[start..end];
                let mean = block.iter().sum::<f64>() / block.len() as f64;
                if mean < prev_mean {
                    ok = false;
                    break;
                }
                sse += block.iter().map(|y| (y - mean).powi(2)).sum::<f64>();
                prev_mean = mean;
                start = end;
            }
        }
        if ok {
            best = best.min(sse);
        }
    }
    (best / n as f64).sqrt()
}

/// RMSE computed channel by channel: first the per-channel mean squared
/// errors, then their average.
pub fn two_pass_rmse(pred: &[Rgb], truth: &[Rgb], scale: f64) -> f64 {
    let n = pred.len() as f64;
    let mut per_channel = [0.0; 3];
    for (k, acc) in per_channel.iter_mut().enumerate() {
        let mut sum = 0.0;
        let mut comp = 0.0;
        for (p, t) in pred.iter().zip(truth) {
            let e = (p[k] - t[k]) * scale;
            let y = e * e - comp;
            let s = sum + y;
            comp = (s - sum) - y;
            sum = s;
        }
        *acc = sum / n;
    }
    (per_channel.iter().sum::<f64>() / 3.0).sqrt()
}

/// Angle in degrees between two directions.
pub fn angle_deg(a: Rgb, b: Rgb) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).clamp(-1.0, 1.0).acos().to_degrees()
}
