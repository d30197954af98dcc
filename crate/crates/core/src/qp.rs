//! Dense convex quadratic programming.
//!
//! Solves `min ½ xᵀQx + cᵀx  s.t.  Ax ≤ b` with a primal active-set method.
//! Each iteration minimizes the objective on the manifold defined by the
//! working set using a null-space step. When the reduced Hessian is not
//! positive definite a fixed `1e-10·I` lift is applied, so the solver stays
//! deterministic for singular `Q` (including the pure LP case).
//!
//! Problem sizes in this crate are tiny in `n` (at most a few dozen unknowns)
//! but can carry tens of thousands of constraints, so constraints are stored
//! column-wise for cache-friendly ratio tests.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

/// Default feasibility / optimality tolerance shared by every caller.
pub const DEFAULT_TOL: f64 = 1e-8;

/// Diagonal lift applied when the reduced Hessian is singular.
pub const SINGULAR_LIFT: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("quadratic program is infeasible (phase-1 residual {residual:.3e})")]
    Infeasible { residual: f64 },
    #[error("active-set iteration limit reached after {iterations} steps")]
    MaxIterations { iterations: usize },
    #[error("invalid quadratic program: {0}")]
    Invalid(String),
}

/// A convex quadratic program `min ½ xᵀQx + cᵀx  s.t.  Ax ≤ b`.
#[derive(Debug, Clone)]
pub struct QuadProgram {
    q: DMatrix<f64>,
    c: DVector<f64>,
    /// Constraint normals stored as columns (`n × m`), i.e. `Aᵀ`.
    at: DMatrix<f64>,
    b: DVector<f64>,
}

impl QuadProgram {
    /// Builds and validates a program. `a` is `m × n`.
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = c.len();
        if a.ncols() != n && a.nrows() > 0 {
            return Err(QpError::Invalid(format!(
                "constraint matrix has {} columns, expected {n}",
                a.ncols()
            )));
        }
        Self::from_transposed(q, c, a.transpose(), b)
    }

    /// Builds a program from constraint normals stored column-wise (`n × m`).
    pub fn from_transposed(
        q: DMatrix<f64>,
        c: DVector<f64>,
        at: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, QpError> {
        let n = c.len();
        if n == 0 {
            return Err(QpError::Invalid("no unknowns".into()));
        }
        if q.nrows() != n || q.ncols() != n {
            return Err(QpError::Invalid(format!(
                "Q is {}x{}, expected {n}x{n}",
                q.nrows(),
                q.ncols()
            )));
        }
        let at = if at.ncols() == 0 { DMatrix::zeros(n, 0) } else { at };
        if at.nrows() != n {
            return Err(QpError::Invalid(format!(
                "constraint normals have dimension {}, expected {n}",
                at.nrows()
            )));
        }
        if at.ncols() != b.len() {
            return Err(QpError::Invalid(format!(
                "{} constraints but {} bounds",
                at.ncols(),
                b.len()
            )));
        }
        if q.iter().chain(c.iter()).chain(at.iter()).chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(QpError::Invalid("non-finite coefficient".into()));
        }
        let scale = q.amax().max(f64::MIN_POSITIVE);
        let asym = (&q - q.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(QpError::Invalid(format!("Q is not symmetric (asymmetry {asym:.3e})")));
        }
        let min_eig = q.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-8 * scale {
            return Err(QpError::Invalid(format!(
                "Q is not positive semidefinite (eigenvalue {min_eig:.3e})"
            )));
        }
        Ok(Self { q, c, at, b })
    }

    /// A program with no constraints.
    pub fn unconstrained(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self, QpError> {
        let n = c.len();
        Self::from_transposed(q, c, DMatrix::zeros(n, 0), DVector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// Constraint matrix `A` (`m × n`).
    pub fn a(&self) -> DMatrix<f64> {
        self.at.transpose()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }

    /// Largest constraint violation `max(0, max_i aᵢx − bᵢ)`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (0..self.num_constraints())
            .map(|i| self.at.column(i).dot(x) - self.b[i])
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// KKT residual of a candidate primal/dual pair: the largest of the
    /// stationarity error, primal violation, dual infeasibility and
    /// complementarity gap.
    pub fn kkt_residual(&self, x: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
        let stationarity = (&self.q * x + &self.c + &self.at * multipliers).amax();
        let mut worst = stationarity.max(self.max_violation(x));
        for (i, &lam) in multipliers.iter().enumerate() {
            worst = worst.max(-lam);
            let slack = self.b[i] - self.at.column(i).dot(x);
            worst = worst.max((lam * slack).abs());
        }
        worst
    }
}

/// Primal/dual solution of a [`QuadProgram`].
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per constraint; zero for constraints outside the final
    /// working set.
    pub multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Constraints in the final working set.
    pub active: Vec<usize>,
}

/// Solves `p` starting from the origin (running phase 1 if the origin is
/// infeasible).
pub fn solve_qp(p: &QuadProgram, tol: f64) -> Result<QpSolution, QpError> {
    solve_qp_from(p, &DVector::zeros(p.num_vars()), tol)
}

/// Solves `p` from a starting guess. If `x0` violates a constraint by more
/// than `tol`, a phase-1 problem finds a feasible start first.
pub fn solve_qp_from(p: &QuadProgram, x0: &DVector<f64>, tol: f64) -> Result<QpSolution, QpError> {
    if x0.len() != p.num_vars() {
        return Err(QpError::Invalid(format!(
            "start point has dimension {}, expected {}",
            x0.len(),
            p.num_vars()
        )));
    }
    let start = if p.is_feasible(x0, tol) {
        x0.clone()
    } else {
        phase_one(p, x0, tol)?
    };
    active_set(p, start, tol)
}

/// Finds a feasible point by solving
/// `min ½‖x − x0‖² + ω·t  s.t.  Ax − t ≤ b, t ≥ −1` for increasing penalties.
fn phase_one(p: &QuadProgram, x0: &DVector<f64>, tol: f64) -> Result<DVector<f64>, QpError> {
    let n = p.num_vars();
    let m = p.num_constraints();
    let mut at = DMatrix::zeros(n + 1, m + 1);
    at.view_mut((0, 0), (n, m)).copy_from(&p.at);
    for i in 0..m {
        at[(n, i)] = -1.0;
    }
    at[(n, m)] = -1.0;
    let mut b = DVector::zeros(m + 1);
    b.rows_mut(0, m).copy_from(&p.b);
    b[m] = 1.0;

    let mut q = DMatrix::identity(n + 1, n + 1);
    q[(n, n)] = 0.0;

    let mut start = DVector::zeros(n + 1);
    start.rows_mut(0, n).copy_from(x0);
    start[n] = p.max_violation(x0).max(0.0);

    let mut residual = start[n];
    for omega in [1e3, 1e6, 1e9] {
        let mut c = DVector::zeros(n + 1);
        c.rows_mut(0, n).copy_from(&(-x0));
        c[n] = omega;
        let aux = QuadProgram { q: q.clone(), c, at: at.clone(), b: b.clone() };
        let sol = active_set(&aux, start.clone(), tol)?;
        let x = sol.x.rows(0, n).into_owned();
        residual = p.max_violation(&x);
        if residual <= tol {
            return Ok(x);
        }
        start = sol.x;
    }
    Err(QpError::Infeasible { residual })
}

fn active_set(p: &QuadProgram, mut x: DVector<f64>, tol: f64) -> Result<QpSolution, QpError> {
    let n = p.num_vars();
    let m = p.num_constraints();
    let max_iter = 50 * (n + m);
    let mut working: Vec<usize> = Vec::with_capacity(n);
    let mut in_working = vec![false; m];
    // Set after an unblocked full step: x minimizes on the current manifold.
    let mut at_manifold_min = false;
    // Consecutive zero-length blocked steps.
    let mut degenerate_run = 0usize;

    for iter in 0..max_iter {
        let grad = &p.q * &x + &p.c;
        let step = if at_manifold_min { None } else { manifold_step(p, &working, &grad) };
        let step = step.filter(|s| s.amax() > 1e-14 * (1.0 + x.amax()));

        match step {
            None => {
                let lambda = working_multipliers(p, &working, &grad);
                let (worst_idx, worst) = lambda
                    .iter()
                    .enumerate()
                    .fold((usize::MAX, 0.0), |acc, (k, &l)| if l < acc.1 { (k, l) } else { acc });
                // At a degenerate vertex, Bland's rule (lowest constraint
                // index) instead of the most negative multiplier prevents cycling.
                let worst_idx = if degenerate_run > 0 && worst < -tol {
                    (0..working.len()).filter(|&k| lambda[k] < -tol).min_by_key(|&k| working[k]).unwrap_or(worst_idx)
                } else {
                    worst_idx
                };
                if worst >= -tol || worst_idx == usize::MAX {
                    let mut multipliers = DVector::zeros(m);
                    for (k, &i) in working.iter().enumerate() {
                        multipliers[i] = lambda[k].max(0.0);
                    }
                    let objective = p.objective(&x);
                    return Ok(QpSolution { x, multipliers, objective, iterations: iter, active: working });
                }
                let dropped = working.remove(worst_idx);
                in_working[dropped] = false;
                at_manifold_min = false;
            }
            Some(dir) => {
                let dir_norm = dir.norm();
                let mut alpha = 1.0;
                let mut blocking = None;
                // Cosine between the blocking normal and the step; among
                // tied ratios the steepest one keeps the working set well
                // conditioned at degenerate vertices.
                let mut steepness = 0.0;
                for i in 0..m {
                    if in_working[i] {
                        continue;
                    }
                    let col = p.at.column(i);
                    let col_norm = col.norm();
                    let rate = col.dot(&dir);
                    // Below this the normal is numerically inside the working span.
                    if rate <= 1e-10 * col_norm * dir_norm {
                        continue;
                    }
                    let slack = (p.b[i] - col.dot(&x)).max(0.0);
                    let ratio = slack / rate;
                    let cosine = rate / (col_norm * dir_norm);
                    let tie = blocking.is_some() && (ratio - alpha).abs() <= 1e-12 * alpha;
                    // Scanning in index order, keeping the first tied blocker
                    // completes Bland's rule on degenerate runs.
                    let better = if degenerate_run > 0 { false } else { cosine > steepness };
                    if (ratio < alpha && !tie) || (tie && better) {
                        alpha = ratio.min(alpha);
                        blocking = Some(i);
                        steepness = cosine;
                    } else if ratio < alpha {
                        alpha = ratio;
                    }
                }
                x.axpy(alpha, &dir, 1.0);
                if blocking.is_some() && alpha == 0.0 {
                    degenerate_run += 1;
                } else {
                    degenerate_run = 0;
                }
                match blocking {
                    Some(i) => {
                        working.push(i);
                        in_working[i] = true;
                        at_manifold_min = false;
                    }
                    None => at_manifold_min = true,
                }
            }
        }
    }
    Err(QpError::MaxIterations { iterations: max_iter })
}

/// Orthonormal basis for the null space of the working-set normals, and an
/// orthonormal basis of their span.
fn split_space(p: &QuadProgram, working: &[usize]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let n = p.num_vars();
    let mut span: Vec<DVector<f64>> = Vec::with_capacity(working.len());
    for &i in working {
        if let Some(v) = orthonormalize(p.at.column(i).into_owned(), &span) {
            span.push(v);
        }
    }
    let mut null: Vec<DVector<f64>> = Vec::with_capacity(n - span.len().min(n));
    for k in 0..n {
        if span.len() + null.len() == n {
            break;
        }
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        let e = project_out(project_out(e, &span), &null);
        if let Some(v) = orthonormalize(e, &span.iter().chain(null.iter()).cloned().collect::<Vec<_>>()) {
            null.push(v);
        }
    }
    (span, null)
}

fn project_out(mut v: DVector<f64>, basis: &[DVector<f64>]) -> DVector<f64> {
    for u in basis {
        let d = u.dot(&v);
        v.axpy(-d, u, 1.0);
    }
    v
}

/// Modified Gram-Schmidt with one re-orthogonalization pass.
fn orthonormalize(v: DVector<f64>, basis: &[DVector<f64>]) -> Option<DVector<f64>> {
    let norm0 = v.norm();
    if norm0 == 0.0 {
        return None;
    }
    let v = project_out(project_out(v, basis), basis);
    let norm = v.norm();
    if norm <= 1e-10 * norm0 {
        None
    } else {
        Some(v / norm)
    }
}

/// Minimizer of the quadratic model restricted to the working-set manifold.
fn manifold_step(p: &QuadProgram, working: &[usize], grad: &DVector<f64>) -> Option<DVector<f64>> {
    let (_, null) = split_space(p, working);
    if null.is_empty() {
        return None;
    }
    let n = p.num_vars();
    let z = DMatrix::from_columns(&null);
    let reduced_hess = z.transpose() * &p.q * &z;
    let reduced_grad = z.transpose() * grad;
    let chol = Cholesky::new(reduced_hess.clone()).or_else(|| {
        let k = reduced_hess.nrows();
        Cholesky::new(reduced_hess + DMatrix::identity(k, k) * SINGULAR_LIFT)
    })?;
    let coeffs = chol.solve(&(-reduced_grad));
    let step = z * coeffs;
    debug_assert_eq!(step.len(), n);
    if step.iter().all(|v| v.is_finite()) {
        Some(step)
    } else {
        None
    }
}

/// Least-squares multipliers for `Σ λᵢ aᵢ = −grad` over the working set.
fn working_multipliers(p: &QuadProgram, working: &[usize], grad: &DVector<f64>) -> Vec<f64> {
    if working.is_empty() {
        return Vec::new();
    }
    let cols: Vec<_> = working.iter().map(|&i| p.at.column(i).into_owned()).collect();
    let aw = DMatrix::from_columns(&cols);
    let qr = aw.qr();
    let (q, r) = (qr.q(), qr.r());
    let rhs = -(q.transpose() * grad);
    match r.solve_upper_triangular(&rhs) {
        Some(l) => l.iter().copied().collect(),
        None => vec![0.0; working.len()],
    }
}
