//! Convex programs with a separable objective, affine equalities and convex
//! inequalities:
//!
//! ```text
//! minimize  Σ_i f_i(x_i)   subject to   A x = b,   g_k(x) ≤ 0.
//! ```

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{check_len, Error, Result};
use crate::sparse::SparseMatrix;

/// Scalar convex function of a single agent variable.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveTerm {
    /// `a x² / 2`, `a ≥ 0`.
    Quadratic { a: f64 },
    /// `x⁴ / 4`.
    Quartic,
    /// `w |x|`, `w ≥ 0`.
    AbsValue { w: f64 },
    /// `c⁺ x² / 2` for `x ≥ 0`, `c⁻ x² / 2` for `x < 0`.
    PiecewiseQuadratic { c_plus: f64, c_minus: f64 },
    /// `Σ w_k t_k(x)` with nonnegative weights.
    LinearCombination(Vec<(f64, ObjectiveTerm)>),
}

impl ObjectiveTerm {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            ObjectiveTerm::Quadratic { a } => 0.5 * a * x * x,
            ObjectiveTerm::Quartic => 0.25 * x.powi(4),
            ObjectiveTerm::AbsValue { w } => w * x.abs(),
            ObjectiveTerm::PiecewiseQuadratic { c_plus, c_minus } => {
                let c = if x >= 0.0 { c_plus } else { c_minus };
                0.5 * c * x * x
            }
            ObjectiveTerm::LinearCombination(parts) => {
                parts.iter().map(|(w, t)| w * t.value(x)).sum()
            }
        }
    }

    /// Points where the term fails to be differentiable.
    pub fn kinks(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_kinks(&mut out);
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn collect_kinks(&self, out: &mut Vec<f64>) {
        match self {
            ObjectiveTerm::AbsValue { w } if *w > 0.0 => out.push(0.0),
            ObjectiveTerm::LinearCombination(parts) => {
                for (w, t) in parts {
                    if *w > 0.0 {
                        t.collect_kinks(out);
                    }
                }
            }
            _ => {}
        }
    }

    /// Whether the term is continuously differentiable with Lipschitz gradient.
    pub fn is_c11(&self) -> bool {
        match self {
            ObjectiveTerm::AbsValue { w } => *w == 0.0,
            ObjectiveTerm::LinearCombination(parts) => {
                parts.iter().all(|(w, t)| *w == 0.0 || t.is_c11())
            }
            _ => true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match self {
            ObjectiveTerm::Quadratic { a } if !(a.is_finite() && *a >= 0.0) => {
                bad(format!("quadratic weight must be >= 0, got {a}"))
            }
            ObjectiveTerm::AbsValue { w } if !(w.is_finite() && *w >= 0.0) => {
                bad(format!("absolute-value weight must be >= 0, got {w}"))
            }
            ObjectiveTerm::PiecewiseQuadratic { c_plus, c_minus }
                if !(c_plus.is_finite()
                    && c_minus.is_finite()
                    && *c_plus > 0.0
                    && *c_minus > 0.0) =>
            {
                bad(format!(
                    "piecewise-quadratic curvatures must be > 0, got ({c_plus}, {c_minus})"
                ))
            }
            ObjectiveTerm::LinearCombination(parts) => {
                for (w, t) in parts {
                    if !(w.is_finite() && *w >= 0.0) {
                        return bad(format!("combination weight must be >= 0, got {w}"));
                    }
                    t.validate()?;
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Value and gradient oracle for a smooth convex constraint, evaluated on the
/// constraint's support variables only (in support order).
pub trait ConvexOracle: Send + Sync + fmt::Debug {
    fn value(&self, local: &[f64]) -> f64;
    fn gradient(&self, local: &[f64]) -> Vec<f64>;
}

/// `‖x_S − c‖² − r² ≤ 0` over a support set `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct BallConstraint {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl ConvexOracle for BallConstraint {
    fn value(&self, local: &[f64]) -> f64 {
        local
            .iter()
            .zip(&self.center)
            .map(|(x, c)| (x - c) * (x - c))
            .sum::<f64>()
            - self.radius * self.radius
    }

    fn gradient(&self, local: &[f64]) -> Vec<f64> {
        local
            .iter()
            .zip(&self.center)
            .map(|(x, c)| 2.0 * (x - c))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub enum InequalityConstraint {
    /// `x_index − bound ≤ 0`.
    UpperBound { index: usize, bound: f64 },
    /// `⟨c, x⟩ − d ≤ 0` with `coeffs` sorted by index and free of zeros.
    AffineHalfspace { coeffs: Vec<(usize, f64)>, rhs: f64 },
    SmoothConvex {
        support: Vec<usize>,
        oracle: Arc<dyn ConvexOracle>,
    },
}

impl InequalityConstraint {
    pub fn upper_bound(index: usize, bound: f64) -> Self {
        InequalityConstraint::UpperBound { index, bound }
    }

    pub fn halfspace(coeffs: impl IntoIterator<Item = (usize, f64)>, rhs: f64) -> Result<Self> {
        let mut c: Vec<(usize, f64)> = coeffs.into_iter().collect();
        c.sort_by_key(|e| e.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(c.len());
        for (i, v) in c {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        if merged.is_empty() {
            return Err(Error::InvalidParameter(
                "halfspace needs at least one nonzero coefficient".into(),
            ));
        }
        Ok(InequalityConstraint::AffineHalfspace {
            coeffs: merged,
            rhs,
        })
    }

    pub fn smooth(support: Vec<usize>, oracle: Arc<dyn ConvexOracle>) -> Result<Self> {
        let mut sorted = support.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.is_empty() || sorted != support {
            return Err(Error::InvalidParameter(
                "smooth constraint support must be nonempty, sorted and distinct".into(),
            ));
        }
        Ok(InequalityConstraint::SmoothConvex { support, oracle })
    }

    /// Variables appearing in the constraint, ascending.
    pub fn support(&self) -> Vec<usize> {
        match self {
            InequalityConstraint::UpperBound { index, .. } => vec![*index],
            InequalityConstraint::AffineHalfspace { coeffs, .. } => {
                coeffs.iter().map(|e| e.0).collect()
            }
            InequalityConstraint::SmoothConvex { support, .. } => support.clone(),
        }
    }

    /// `g_k` evaluated on the support values (in support order).
    pub fn value_local(&self, local: &[f64]) -> f64 {
        match self {
            InequalityConstraint::UpperBound { bound, .. } => local[0] - bound,
            InequalityConstraint::AffineHalfspace { coeffs, rhs } => {
                coeffs
                    .iter()
                    .zip(local)
                    .map(|((_, c), x)| c * x)
                    .sum::<f64>()
                    - rhs
            }
            InequalityConstraint::SmoothConvex { oracle, .. } => oracle.value(local),
        }
    }

    /// `∇g_k` restricted to the support.
    pub fn gradient_local(&self, local: &[f64]) -> Vec<f64> {
        match self {
            InequalityConstraint::UpperBound { .. } => vec![1.0],
            InequalityConstraint::AffineHalfspace { coeffs, .. } => {
                coeffs.iter().map(|e| e.1).collect()
            }
            InequalityConstraint::SmoothConvex { oracle, .. } => oracle.gradient(local),
        }
    }

    pub fn gather(&self, x: &[f64]) -> Vec<f64> {
        self.support().iter().map(|&i| x[i]).collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            InequalityConstraint::UpperBound { index, bound } => x[*index] - bound,
            _ => self.value_local(&self.gather(x)),
        }
    }

    /// Dense gradient in ℝⁿ.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let support = self.support();
        let local = self.gradient_local(&self.gather(x));
        for (i, v) in support.into_iter().zip(local) {
            g[i] = v;
        }
        g
    }

    /// Move the support values onto `{g ≤ 0}`: exact for bounds and
    /// halfspaces, linearization steps for smooth constraints.
    pub fn project_local(&self, local: &mut [f64]) {
        match self {
            InequalityConstraint::UpperBound { bound, .. } => {
                if local[0] > *bound {
                    local[0] = *bound;
                }
            }
            InequalityConstraint::AffineHalfspace { coeffs, .. } => {
                let viol = self.value_local(local);
                if viol > 0.0 {
                    let norm2: f64 = coeffs.iter().map(|e| e.1 * e.1).sum();
                    for ((_, c), x) in coeffs.iter().zip(local.iter_mut()) {
                        *x -= viol * c / norm2;
                    }
                }
            }
            InequalityConstraint::SmoothConvex { oracle, .. } => {
                for _ in 0..64 {
                    let viol = oracle.value(local);
                    if viol <= 0.0 {
                        break;
                    }
                    let grad = oracle.gradient(local);
                    let norm2: f64 = grad.iter().map(|v| v * v).sum();
                    if norm2 == 0.0 {
                        break;
                    }
                    // slight overshoot so the loop terminates on the feasible side
                    let step = viol * (1.0 + 1e-12) / norm2 + f64::EPSILON;
                    for (x, gv) in local.iter_mut().zip(&grad) {
                        *x -= step * gv;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvexProgram {
    terms: Vec<ObjectiveTerm>,
    a: SparseMatrix,
    b: Vec<f64>,
    ineqs: Vec<InequalityConstraint>,
    slater_point: Option<Vec<f64>>,
}

impl ConvexProgram {
    pub fn new(
        terms: Vec<ObjectiveTerm>,
        a: SparseMatrix,
        b: Vec<f64>,
        ineqs: Vec<InequalityConstraint>,
        slater_point: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = terms.len();
        if n == 0 {
            return Err(Error::InvalidSize {
                what: "primal dimension",
                size: 0,
                min: 1,
            });
        }
        for t in &terms {
            t.validate()?;
        }
        check_len("equality matrix columns", n, a.cols())?;
        check_len("right-hand side b", a.rows(), b.len())?;
        if a.rows() > n {
            return Err(Error::InvalidParameter(format!(
                "more equality rows ({}) than variables ({n})",
                a.rows()
            )));
        }
        for (k, g) in ineqs.iter().enumerate() {
            let support = g.support();
            if support.is_empty() {
                return Err(Error::InvalidParameter(format!(
                    "inequality {k} has empty support"
                )));
            }
            if let Some(&i) = support.iter().find(|&&i| i >= n) {
                return Err(Error::DimensionMismatch {
                    what: "inequality support index",
                    expected: n,
                    got: i,
                });
            }
            if let InequalityConstraint::SmoothConvex { oracle, .. } = g {
                let probe = vec![0.0; support.len()];
                check_len(
                    "smooth constraint gradient",
                    support.len(),
                    oracle.gradient(&probe).len(),
                )?;
            }
        }
        if let Some(s) = &slater_point {
            check_len("slater point", n, s.len())?;
        }
        Ok(Self {
            terms,
            a,
            b,
            ineqs,
            slater_point,
        })
    }

    pub fn n(&self) -> usize {
        self.terms.len()
    }

    pub fn p(&self) -> usize {
        self.a.rows()
    }

    pub fn m(&self) -> usize {
        self.ineqs.len()
    }

    pub fn terms(&self) -> &[ObjectiveTerm] {
        &self.terms
    }

    pub fn a(&self) -> &SparseMatrix {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn inequalities(&self) -> &[InequalityConstraint] {
        &self.ineqs
    }

    pub fn slater_point(&self) -> Option<&[f64]> {
        self.slater_point.as_deref()
    }

    pub fn with_slater_point(mut self, point: Vec<f64>) -> Result<Self> {
        check_len("slater point", self.n(), point.len())?;
        self.slater_point = Some(point);
        Ok(self)
    }

    pub fn eval_h(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("primal state", self.n(), x.len())?;
        Ok((0..self.p())
            .map(|r| row_residual(self.a.row(r), self.b[r], |j| x[j]))
            .collect())
    }

    pub fn eval_g(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("primal state", self.n(), x.len())?;
        Ok(self.ineqs.iter().map(|g| g.value(x)).collect())
    }

    pub fn eval_f(&self, x: &[f64]) -> Result<f64> {
        check_len("primal state", self.n(), x.len())?;
        Ok(self.terms.iter().zip(x).map(|(t, &xi)| t.value(xi)).sum())
    }

    /// `max_k g_k(x)`, or `-inf` without inequalities.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.ineqs
            .iter()
            .map(|g| g.value(x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_c11(&self) -> bool {
        self.terms.iter().all(ObjectiveTerm::is_c11)
    }
}

/// `Σ_j a_ℓj x_j − b_ℓ`, accumulated in ascending column order. Shared by the
/// centralized and per-agent code paths so both round identically.
pub fn row_residual(
    row: impl Iterator<Item = (usize, f64)>,
    b: f64,
    mut x: impl FnMut(usize) -> f64,
) -> f64 {
    let mut acc = 0.0;
    for (j, a) in row {
        acc += a * x(j);
    }
    acc - b
}

/// Tridiagonal circulant `circ_n(a0, a1, a2)`: `a0` on the diagonal, `a1` on
/// the superdiagonal, `a2` on the subdiagonal, with wraparound corners.
pub fn generate_circulant(n: usize, a0: f64, a1: f64, a2: f64) -> Result<SparseMatrix> {
    if n < 3 {
        return Err(Error::InvalidSize {
            what: "circulant dimension",
            size: n,
            min: 3,
        });
    }
    let triplets =
        (0..n).flat_map(|i| [(i, i, a0), (i, (i + 1) % n, a1), (i, (i + n - 1) % n, a2)]);
    SparseMatrix::from_triplets(n, n, triplets)
}

/// Tridiagonal Toeplitz `trid_n(a, b, c)`: `b` on the diagonal, `c` above,
/// `a` below, no wraparound.
pub fn generate_tridiag_toeplitz(n: usize, a: f64, b: f64, c: f64) -> Result<SparseMatrix> {
    if n < 2 {
        return Err(Error::InvalidSize {
            what: "Toeplitz dimension",
            size: n,
            min: 2,
        });
    }
    let mut triplets = Vec::with_capacity(3 * n);
    for i in 0..n {
        triplets.push((i, i, b));
        if i + 1 < n {
            triplets.push((i, i + 1, c));
        }
        if i > 0 {
            triplets.push((i, i - 1, a));
        }
    }
    SparseMatrix::from_triplets(n, n, triplets)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssumptionReport {
    pub rank: usize,
    pub p: usize,
    /// Rows of `A` linearly independent.
    pub full_row_rank: bool,
    /// `None` when no Slater point was supplied.
    pub slater_holds: Option<bool>,
    pub slater_equality_residual: Option<f64>,
    pub slater_max_g: Option<f64>,
    /// Boundedness of the solution set is assumed, never checked.
    pub solution_set_bounded_verified: bool,
}

/// Check the strong Slater assumptions: full row rank of `A` (column-pivoted
/// QR with threshold `rank_tol · max column norm`) and strict feasibility of
/// the supplied Slater point.
pub fn validate_assumptions(prog: &ConvexProgram, rank_tol: f64) -> Result<AssumptionReport> {
    if rank_tol.is_nan() || rank_tol <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "rank tolerance must be positive, got {rank_tol}"
        )));
    }
    let rank = numerical_rank(&prog.a().to_dense(), rank_tol);
    let p = prog.p();

    let (slater_holds, eq_res, max_g) = match prog.slater_point() {
        None => (None, None, None),
        Some(s) => {
            let h = prog.eval_h(s)?;
            let res = h.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let scale = 1.0 + prog.b().iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let g = prog.eval_g(s)?;
            let mg = g.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let holds = res <= 1e-10 * scale && g.iter().all(|&v| v < 0.0);
            (Some(holds), Some(res), Some(mg))
        }
    };

    Ok(AssumptionReport {
        rank,
        p,
        full_row_rank: rank == p,
        slater_holds,
        slater_equality_residual: eq_res,
        slater_max_g: max_g,
        solution_set_bounded_verified: false,
    })
}

pub(crate) fn numerical_rank(a: &DMatrix<f64>, rank_tol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let max_col = a.column_iter().map(|c| c.norm()).fold(0.0f64, f64::max);
    if max_col == 0.0 {
        return 0;
    }
    let qr = a.clone().col_piv_qr();
    let r = qr.r();
    let k = r.nrows().min(r.ncols());
    (0..k)
        .filter(|&i| r[(i, i)].abs() > rank_tol * max_col)
        .count()
}

/// The two reference instances distributed with the library.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Builtin {
    /// `Σ x_i⁴/4 + |x_i|` s.t. `circ_n(0, 1, 1/2) x = 1/5`, `x_i ≤ 1/2`.
    QuarticAbsCirculant,
    /// `Σ f_i(x_i)` with `f_i = x²` for `x ≥ 0`, `x²/2` otherwise, s.t.
    /// `trid_n(1/2, 1, −1/10) x = 1`.
    PiecewiseToeplitz,
}

impl Builtin {
    pub fn build(self, n: usize) -> Result<ConvexProgram> {
        match self {
            Builtin::QuarticAbsCirculant => {
                let a = generate_circulant(n, 0.0, 1.0, 0.5)?;
                let term = ObjectiveTerm::LinearCombination(vec![
                    (1.0, ObjectiveTerm::Quartic),
                    (1.0, ObjectiveTerm::AbsValue { w: 1.0 }),
                ]);
                let ineqs = (0..n)
                    .map(|i| InequalityConstraint::upper_bound(i, 0.5))
                    .collect();
                // every row sums to 3/2, so the constant vector 2/15 solves A x = 1/5
                let slater = vec![2.0 / 15.0; n];
                ConvexProgram::new(vec![term; n], a, vec![0.2; n], ineqs, Some(slater))
            }
            Builtin::PiecewiseToeplitz => {
                let a = generate_tridiag_toeplitz(n, 0.5, 1.0, -0.1)?;
                let term = ObjectiveTerm::PiecewiseQuadratic {
                    c_plus: 2.0,
                    c_minus: 1.0,
                };
                ConvexProgram::new(vec![term; n], a, vec![1.0; n], Vec::new(), None)
            }
        }
    }
}
