//! Augmented Lagrangian, its saddle operator and the Lyapunov functions used to
//! monitor convergence.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::calculus::{subgradient_interval, Interval};
use crate::error::{check_len, Error, Result};
use crate::problem::{ConvexProgram, InequalityConstraint, ObjectiveTerm};
use crate::sparse::SparseMatrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianParams {
    kappa: f64,
    mu: f64,
}

impl LagrangianParams {
    /// `mu ∈ (0, 1)`, `kappa ≥ 0`. A zero penalty is accepted so that the
    /// effect of an inexact penalty can be demonstrated.
    pub fn new(kappa: f64, mu: f64) -> Result<Self> {
        check_mu(mu)?;
        if !(kappa.is_finite() && kappa >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "kappa must be finite and >= 0, got {kappa}"
            )));
        }
        Ok(Self { kappa, mu })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }
}

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "mu must lie in (0, 1), got {mu}"
        )))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrimalDualState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub t: f64,
}

impl PrimalDualState {
    pub fn new(x: Vec<f64>, lambda: Vec<f64>) -> Self {
        Self { x, lambda, t: 0.0 }
    }

    pub fn check_dims(&self, prog: &ConvexProgram) -> Result<()> {
        check_len("primal state", prog.n(), self.x.len())?;
        check_len("multiplier state", prog.p(), self.lambda.len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceSource {
    /// Closed-form or direct linear-algebra solution.
    Analytic,
    /// Endpoint of a long integration run.
    LongRun,
    /// Supplied by the caller.
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSaddle {
    pub x_star: Vec<f64>,
    pub lambda_star: Vec<f64>,
    /// Optimal value `inf_C f`.
    pub f_star: f64,
    pub source: ReferenceSource,
}

impl ReferenceSaddle {
    pub fn external(prog: &ConvexProgram, x_star: Vec<f64>, lambda_star: Vec<f64>) -> Result<Self> {
        check_len("reference x", prog.n(), x_star.len())?;
        check_len("reference lambda", prog.p(), lambda_star.len())?;
        let f_star = prog.eval_f(&x_star)?;
        Ok(Self {
            x_star,
            lambda_star,
            f_star,
            source: ReferenceSource::External,
        })
    }

    pub fn from_long_run(prog: &ConvexProgram, state: &PrimalDualState) -> Result<Self> {
        let mut r = Self::external(prog, state.x.clone(), state.lambda.clone())?;
        r.source = ReferenceSource::LongRun;
        Ok(r)
    }

    /// Square nonsingular `A` pins the feasible set to `A⁻¹b`; the multiplier
    /// solves `Aᵀλ = −ζ` with `ζ` the least-norm subgradient of `f` there.
    /// Inequalities must be inactive at that point.
    pub fn from_unique_feasible_point(prog: &ConvexProgram) -> Result<Self> {
        if prog.p() != prog.n() {
            return Err(Error::InvalidParameter(format!(
                "unique feasible point needs a square equality matrix, got {}x{}",
                prog.p(),
                prog.n()
            )));
        }
        let a = prog.a().to_dense();
        let lu = a.clone().lu();
        let x = lu
            .solve(&DVector::from_column_slice(prog.b()))
            .ok_or(Error::Singular("equality matrix"))?;
        let x_star: Vec<f64> = x.iter().copied().collect();
        if let Some((k, g)) = prog
            .eval_g(&x_star)?
            .into_iter()
            .enumerate()
            .find(|(_, g)| *g >= 0.0)
        {
            return Err(Error::InvalidParameter(format!(
                "inequality {k} is not strictly satisfied at the feasible point (g = {g:e})"
            )));
        }
        let zeta: Vec<f64> = prog
            .terms()
            .iter()
            .zip(&x_star)
            .map(|(t, &xi)| -subgradient_interval(t, xi).least_norm())
            .collect();
        let lambda = a
            .transpose()
            .lu()
            .solve(&DVector::from_vec(zeta))
            .ok_or(Error::Singular("transposed equality matrix"))?;
        let f_star = prog.eval_f(&x_star)?;
        Ok(Self {
            x_star,
            lambda_star: lambda.iter().copied().collect(),
            f_star,
            source: ReferenceSource::Analytic,
        })
    }

    /// KKT solve for `Σ a_i x_i²/2` under `Ax = b` without inequalities.
    pub fn from_equality_qp(prog: &ConvexProgram) -> Result<Self> {
        if prog.m() > 0 {
            return Err(Error::InequalityPresent { m: prog.m() });
        }
        let (n, p) = (prog.n(), prog.p());
        let mut kkt = DMatrix::zeros(n + p, n + p);
        for (i, t) in prog.terms().iter().enumerate() {
            match t {
                ObjectiveTerm::Quadratic { a } => kkt[(i, i)] = *a,
                _ => {
                    return Err(Error::InvalidParameter(
                        "equality QP reference needs Quadratic terms only".into(),
                    ))
                }
            }
        }
        for &(r, c, v) in prog.a().triplets() {
            kkt[(n + r, c)] = v;
            kkt[(c, n + r)] = v;
        }
        let mut rhs = DVector::zeros(n + p);
        for (r, b) in prog.b().iter().enumerate() {
            rhs[n + r] = *b;
        }
        let sol = kkt.lu().solve(&rhs).ok_or(Error::Singular("KKT matrix"))?;
        let x_star: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let f_star = prog.eval_f(&x_star)?;
        Ok(Self {
            x_star,
            lambda_star: sol.rows(n, p).iter().copied().collect(),
            f_star,
            source: ReferenceSource::Analytic,
        })
    }

    /// Saddle residual at the reference point.
    pub fn verify(&self, prog: &ConvexProgram, params: &LagrangianParams) -> Result<f64> {
        residual(prog, params, &self.x_star, &self.lambda_star)
    }

    pub fn distance(&self, x: &[f64], lambda: &[f64]) -> f64 {
        self.distance_sq(x, lambda).sqrt()
    }

    pub fn distance_sq(&self, x: &[f64], lambda: &[f64]) -> f64 {
        let dx: f64 = x
            .iter()
            .zip(&self.x_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let dl: f64 = lambda
            .iter()
            .zip(&self.lambda_star)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        dx + dl
    }
}

pub fn eval_l(
    prog: &ConvexProgram,
    params: &LagrangianParams,
    x: &[f64],
    lambda: &[f64],
) -> Result<f64> {
    check_len("multiplier state", prog.p(), lambda.len())?;
    let h = prog.eval_h(x)?;
    let f = prog.eval_f(x)?;
    let quad: f64 = h.iter().map(|v| v * v).sum::<f64>() / (2.0 * params.mu);
    let lin: f64 = h.iter().zip(lambda).map(|(a, b)| a * b).sum();
    let pen: f64 = prog.eval_g(x)?.iter().map(|g| g.max(0.0)).sum();
    Ok(f + quad + lin + params.kappa * pen)
}

/// `h_ℓ/μ + λ_ℓ`: the weight with which row `ℓ` pulls on its variables.
#[inline]
pub(crate) fn row_pull(h: f64, lambda: f64, mu: f64) -> f64 {
    h / mu + lambda
}

/// `Σ_ℓ a_ℓi (h_ℓ/μ + λ_ℓ)` over column `i`, ascending row order.
#[inline]
pub(crate) fn coordinate_drive(column: &[(usize, f64)], pull: impl Fn(usize) -> f64) -> f64 {
    let mut acc = 0.0;
    for &(r, a) in column {
        acc += a * pull(r);
    }
    acc
}

pub(crate) fn affine_drive(a: &SparseMatrix, h: &[f64], lambda: &[f64], mu: f64) -> Vec<f64> {
    let pulls: Vec<f64> = h
        .iter()
        .zip(lambda)
        .map(|(&hl, &ll)| row_pull(hl, ll, mu))
        .collect();
    (0..a.cols())
        .map(|i| coordinate_drive(a.col(i), |r| pulls[r]))
        .collect()
}

/// `∂ₓL` kept as a Minkowski sum: per-coordinate intervals plus the segments
/// `κ·co{0, ∇g_k}` of multi-variable constraints sitting exactly on `g_k = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct XSubdifferential {
    pub boxes: Vec<Interval>,
    /// Sparse segment directions `(index, value)`.
    pub segments: Vec<Vec<(usize, f64)>>,
}

impl XSubdifferential {
    pub fn dim(&self) -> usize {
        self.boxes.len()
    }

    /// Minimum-norm element. Exact when no segments are present, otherwise
    /// coordinate descent on the joint (box, segment-weight) problem.
    pub fn least_norm(&self) -> Vec<f64> {
        if self.segments.is_empty() {
            return self.boxes.iter().map(Interval::least_norm).collect();
        }
        let mut weights = vec![0.0; self.segments.len()];
        let mut shift = vec![0.0; self.dim()];
        let norms: Vec<f64> = self
            .segments
            .iter()
            .map(|s| s.iter().map(|e| e.1 * e.1).sum())
            .collect();
        let mut point = self.pick(&shift);
        for _ in 0..500 {
            let mut change = 0.0f64;
            for (k, seg) in self.segments.iter().enumerate() {
                if norms[k] == 0.0 {
                    continue;
                }
                // residual without segment k, then re-optimise its weight
                let dot: f64 = seg
                    .iter()
                    .map(|&(i, v)| (point[i] - weights[k] * v) * v)
                    .sum();
                let w = (-dot / norms[k]).clamp(0.0, 1.0);
                let dw = w - weights[k];
                if dw != 0.0 {
                    for &(i, v) in seg {
                        shift[i] += dw * v;
                    }
                    weights[k] = w;
                    change = change.max(dw.abs());
                    point = self.pick(&shift);
                }
            }
            if change < 1e-15 {
                break;
            }
        }
        point
    }

    /// `shift + clamp(−shift, box)` per coordinate.
    fn pick(&self, shift: &[f64]) -> Vec<f64> {
        self.boxes
            .iter()
            .zip(shift)
            .map(|(b, s)| s + (-s).clamp(b.lo, b.hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleOperator {
    /// `∂ₓL(x, λ)`.
    pub x_part: XSubdifferential,
    /// `−∂_λ L = −h(x)`.
    pub lambda_part: Vec<f64>,
}

/// Penalty interval contributed to coordinate `i` by a single-variable
/// constraint, or the full direction for a multi-variable one.
pub(crate) enum PenaltyPart {
    None,
    Coordinate(usize, Interval),
    Point(Vec<(usize, f64)>),
    Segment(Vec<(usize, f64)>),
}

pub(crate) fn penalty_part(g: &InequalityConstraint, x: &[f64], kappa: f64) -> PenaltyPart {
    let value = g.value(x);
    if value < 0.0 || kappa == 0.0 {
        return PenaltyPart::None;
    }
    let support = g.support();
    let grad = g.gradient_local(&g.gather(x));
    if support.len() == 1 {
        let v = kappa * grad[0];
        let iv = if value > 0.0 {
            Interval::point(v)
        } else {
            Interval::new(v.min(0.0), v.max(0.0))
        };
        return PenaltyPart::Coordinate(support[0], iv);
    }
    let dir: Vec<(usize, f64)> = support
        .into_iter()
        .zip(grad)
        .map(|(i, v)| (i, kappa * v))
        .collect();
    if value > 0.0 {
        PenaltyPart::Point(dir)
    } else {
        PenaltyPart::Segment(dir)
    }
}

pub fn saddle_operator(
    prog: &ConvexProgram,
    params: &LagrangianParams,
    x: &[f64],
    lambda: &[f64],
) -> Result<SaddleOperator> {
    check_len("multiplier state", prog.p(), lambda.len())?;
    let h = prog.eval_h(x)?;
    let drive = affine_drive(prog.a(), &h, lambda, params.mu);
    let mut boxes: Vec<Interval> = prog
        .terms()
        .iter()
        .zip(x)
        .zip(&drive)
        .map(|((t, &xi), &d)| subgradient_interval(t, xi).shift(d))
        .collect();
    let mut segments = Vec::new();
    for g in prog.inequalities() {
        match penalty_part(g, x, params.kappa) {
            PenaltyPart::None => {}
            PenaltyPart::Coordinate(i, iv) => boxes[i] = boxes[i].plus(iv),
            PenaltyPart::Point(dir) => {
                for (i, v) in dir {
                    boxes[i] = boxes[i].shift(v);
                }
            }
            PenaltyPart::Segment(dir) => segments.push(dir),
        }
    }
    Ok(SaddleOperator {
        x_part: XSubdifferential { boxes, segments },
        lambda_part: h.iter().map(|v| -v).collect(),
    })
}

/// `‖(least_norm ∂ₓL, −h)‖₂`.
pub fn residual(
    prog: &ConvexProgram,
    params: &LagrangianParams,
    x: &[f64],
    lambda: &[f64],
) -> Result<f64> {
    let op = saddle_operator(prog, params, x, lambda)?;
    let s = op.x_part.least_norm();
    Ok(s.iter()
        .chain(&op.lambda_part)
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt())
}

/// Strict Lyapunov function
/// `f − f* + ‖h‖²/(2μ) + ⟨λ, h⟩ + κ Σ max(0, g_k) + dist²/2`, with the distance
/// taken to the nearest listed saddle. `f*` comes from the first entry.
pub fn lyapunov_v(
    prog: &ConvexProgram,
    params: &LagrangianParams,
    x: &[f64],
    lambda: &[f64],
    saddles: &[ReferenceSaddle],
) -> Result<f64> {
    let first = saddles
        .first()
        .ok_or_else(|| Error::MissingReference("no saddle point supplied".into()))?;
    if !first.f_star.is_finite() {
        return Err(Error::MissingReference(
            "optimal value is not finite".into(),
        ));
    }
    let l = eval_l(prog, params, x, lambda)?;
    let dist_sq = saddles
        .iter()
        .map(|s| s.distance_sq(x, lambda))
        .fold(f64::INFINITY, f64::min);
    Ok(l - first.f_star + 0.5 * dist_sq)
}

/// `‖x − x*‖²/2 + ‖λ − λ*‖²/2`.
pub fn weak_lyapunov(x: &[f64], lambda: &[f64], reference: &ReferenceSaddle) -> f64 {
    0.5 * reference.distance_sq(x, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::Builtin;
    use proptest::prelude::*;

    fn scalar_program(term: ObjectiveTerm) -> ConvexProgram {
        ConvexProgram::new(
            vec![term],
            SparseMatrix::identity(1),
            vec![0.0],
            vec![],
            None,
        )
        .unwrap()
    }

    fn zero_objective() -> ConvexProgram {
        scalar_program(ObjectiveTerm::Quadratic { a: 0.0 })
    }

    #[test]
    fn params_validated() {
        assert!(LagrangianParams::new(1.0, 1.0).is_err());
        assert!(LagrangianParams::new(1.0, 0.0).is_err());
        assert!(LagrangianParams::new(-1.0, 0.5).is_err());
        assert!(LagrangianParams::new(0.0, 0.5).is_ok());
    }

    #[test]
    fn lagrangian_scalar_value() {
        let p = LagrangianParams::new(1.0, 0.5).unwrap();
        assert_eq!(eval_l(&zero_objective(), &p, &[1.0], &[2.0]).unwrap(), 3.0);
    }

    #[test]
    fn lagrangian_reduces_to_objective_when_feasible() {
        let prog = Builtin::QuarticAbsCirculant.build(10).unwrap();
        let p = LagrangianParams::new(2.0, 0.5).unwrap();
        let x = vec![2.0 / 15.0; 10];
        let l = eval_l(&prog, &p, &x, &[0.0; 10]).unwrap();
        assert!((l - prog.eval_f(&x).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn residual_scalar_value() {
        let p = LagrangianParams::new(1.0, 0.5).unwrap();
        let r = residual(&zero_objective(), &p, &[1.0], &[0.0]).unwrap();
        assert!((r - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn smooth_operator_is_singleton() {
        let p = LagrangianParams::new(1.0, 0.5).unwrap();
        let op = saddle_operator(&zero_objective(), &p, &[1.0], &[0.3]).unwrap();
        assert_eq!(op.x_part.boxes, vec![Interval::point(2.0 * 1.0 + 0.3)]);
        assert_eq!(op.lambda_part, vec![-1.0]);
    }

    #[test]
    fn zero_joins_through_abs_kink() {
        // at x = 0 the residual h = -1/5 drives each coordinate by
        // Σ_ℓ a_ℓi (-0.2/μ) = -0.6, inside the [-1, 1] kink interval
        let prog = Builtin::QuarticAbsCirculant.build(10).unwrap();
        let p = LagrangianParams::new(1.0, 0.5).unwrap();
        let op = saddle_operator(&prog, &p, &[0.0; 10], &[0.0; 10]).unwrap();
        for b in &op.x_part.boxes {
            assert!((b.lo + 1.6).abs() < 1e-12 && (b.hi - 0.4).abs() < 1e-12);
        }
        assert_eq!(op.x_part.least_norm(), vec![0.0; 10]);
    }

    #[test]
    fn lyapunov_scalar_value() {
        let p = LagrangianParams::new(1.0, 0.5).unwrap();
        let prog = zero_objective();
        let r = ReferenceSaddle::external(&prog, vec![0.0], vec![0.0]).unwrap();
        let v = lyapunov_v(&prog, &p, &[1.0], &[2.0], std::slice::from_ref(&r)).unwrap();
        assert_eq!(v, 5.5);
        assert_eq!(lyapunov_v(&prog, &p, &[0.0], &[0.0], &[r]).unwrap(), 0.0);
        assert!(matches!(
            lyapunov_v(&prog, &p, &[0.0], &[0.0], &[]),
            Err(Error::MissingReference(_))
        ));
    }

    #[test]
    fn weak_lyapunov_values() {
        let prog = ConvexProgram::new(
            vec![ObjectiveTerm::Quartic; 2],
            SparseMatrix::from_triplets(1, 2, vec![(0, 0, 1.0)]).unwrap(),
            vec![0.0],
            vec![],
            None,
        )
        .unwrap();
        let r = ReferenceSaddle::external(&prog, vec![0.5, 0.5], vec![1.0]).unwrap();
        assert_eq!(weak_lyapunov(&[0.5, 0.5], &[1.0], &r), 0.0);
        assert_eq!(weak_lyapunov(&[1.5, 0.5], &[2.0], &r), 1.0);
    }

    #[test]
    fn builtin_references_are_saddles() {
        let p = LagrangianParams::new(1.0, 0.5).unwrap();
        for b in [Builtin::QuarticAbsCirculant, Builtin::PiecewiseToeplitz] {
            let prog = b.build(10).unwrap();
            let r = ReferenceSaddle::from_unique_feasible_point(&prog).unwrap();
            assert!(r.verify(&prog, &p).unwrap() <= 1e-8);
        }
        let ex1 = Builtin::QuarticAbsCirculant.build(10).unwrap();
        let r = ReferenceSaddle::from_unique_feasible_point(&ex1).unwrap();
        for (x, l) in r.x_star.iter().zip(&r.lambda_star) {
            assert!((x - 2.0 / 15.0).abs() < 1e-14);
            let expect = -(1.0 + (2.0f64 / 15.0).powi(3)) / 1.5;
            assert!((l - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn equality_qp_reference() {
        let prog = ConvexProgram::new(
            vec![ObjectiveTerm::Quadratic { a: 1.0 }; 2],
            SparseMatrix::from_triplets(1, 2, vec![(0, 0, 1.0), (0, 1, 1.0)]).unwrap(),
            vec![1.0],
            vec![],
            None,
        )
        .unwrap();
        let r = ReferenceSaddle::from_equality_qp(&prog).unwrap();
        assert!((r.x_star[0] - 0.5).abs() < 1e-14 && (r.x_star[1] - 0.5).abs() < 1e-14);
        assert!((r.lambda_star[0] + 0.5).abs() < 1e-14);
    }

    #[test]
    fn segment_least_norm() {
        // box {1} × {1} plus segment co{0, (-2, -2)}: closest point is the origin
        let s = XSubdifferential {
            boxes: vec![Interval::point(1.0), Interval::point(1.0)],
            segments: vec![vec![(0, -2.0), (1, -2.0)]],
        };
        let v = s.least_norm();
        assert!(v.iter().all(|c| c.abs() < 1e-14), "{v:?}");
        let s = XSubdifferential {
            boxes: vec![Interval::point(1.0), Interval::point(3.0)],
            segments: vec![vec![(0, -0.5), (1, -0.5)]],
        };
        let v = s.least_norm();
        assert!((v[0] - 0.5).abs() < 1e-14 && (v[1] - 2.5).abs() < 1e-14);
    }

    fn example1() -> (ConvexProgram, LagrangianParams, ReferenceSaddle) {
        let prog = Builtin::QuarticAbsCirculant.build(6).unwrap();
        let p = LagrangianParams::new(3.0, 0.5).unwrap();
        let r = ReferenceSaddle::from_unique_feasible_point(&prog).unwrap();
        (prog, p, r)
    }

    proptest! {
        #[test]
        fn saddle_inequalities_hold(
            x in prop::collection::vec(-2.0..2.0f64, 6),
            l in prop::collection::vec(-5.0..5.0f64, 6),
        ) {
            let (prog, p, r) = example1();
            let mid = eval_l(&prog, &p, &r.x_star, &r.lambda_star).unwrap();
            let left = eval_l(&prog, &p, &r.x_star, &l).unwrap();
            let right = eval_l(&prog, &p, &x, &r.lambda_star).unwrap();
            prop_assert!(left <= mid + 1e-12);
            prop_assert!(mid <= right + 1e-12);
        }

        #[test]
        fn lyapunov_positive_off_the_saddle(
            x in prop::collection::vec(-2.0..2.0f64, 6),
            l in prop::collection::vec(-5.0..5.0f64, 6),
        ) {
            let (prog, p, r) = example1();
            prop_assume!(r.distance(&x, &l) > 1e-6);
            prop_assert!(lyapunov_v(&prog, &p, &x, &l, &[r]).unwrap() > 0.0);
        }

        #[test]
        fn lyapunov_grows_quadratically_along_rays(
            dx in prop::collection::vec(-1.0..1.0f64, 6),
            dl in prop::collection::vec(-1.0..1.0f64, 6),
        ) {
            let (prog, p, r) = example1();
            let at = |s: f64| {
                let x: Vec<f64> = r.x_star.iter().zip(&dx).map(|(a, d)| a + s * d).collect();
                let l: Vec<f64> = r.lambda_star.iter().zip(&dl).map(|(a, d)| a + s * d).collect();
                lyapunov_v(&prog, &p, &x, &l, std::slice::from_ref(&r)).unwrap()
            };
            let norm2: f64 = dx.iter().chain(&dl).map(|v| v * v).sum();
            prop_assume!(norm2 > 1e-4);
            // [[AᵀA/μ + I, Aᵀ], [A, I]] bounds V from below
            let a = prog.a().to_dense();
            let mut big = DMatrix::identity(12, 12);
            let ata = a.transpose() * &a / p.mu();
            for i in 0..6 {
                for j in 0..6 {
                    big[(i, j)] += ata[(i, j)];
                    big[(i, 6 + j)] = a[(j, i)];
                    big[(6 + i, j)] = a[(i, j)];
                }
            }
            let lmin = big.symmetric_eigenvalues().min();
            prop_assert!(lmin > 0.0);
            for s in [0.5, 1.0, 2.0, 4.0] {
                prop_assert!(at(s) >= 0.5 * lmin * s * s * norm2 - 1e-9);
            }
        }

        #[test]
        fn convex_in_x_affine_in_lambda(
            x in prop::collection::vec(-2.0..2.0f64, 6),
            y in prop::collection::vec(-2.0..2.0f64, 6),
            l in prop::collection::vec(-5.0..5.0f64, 6),
            m in prop::collection::vec(-5.0..5.0f64, 6),
            s in 0.0..1.0f64,
        ) {
            let (prog, p, _) = example1();
            let mix = |a: &[f64], b: &[f64]| -> Vec<f64> {
                a.iter().zip(b).map(|(u, v)| (1.0 - s) * u + s * v).collect()
            };
            let lx = eval_l(&prog, &p, &mix(&x, &y), &l).unwrap();
            let bound = (1.0 - s) * eval_l(&prog, &p, &x, &l).unwrap()
                + s * eval_l(&prog, &p, &y, &l).unwrap();
            prop_assert!(lx <= bound + 1e-9 * (1.0 + bound.abs()));

            let ll = eval_l(&prog, &p, &x, &mix(&l, &m)).unwrap();
            let lin = (1.0 - s) * eval_l(&prog, &p, &x, &l).unwrap()
                + s * eval_l(&prog, &p, &x, &m).unwrap();
            prop_assert!((ll - lin).abs() <= 1e-9 * (1.0 + lin.abs()));
        }
    }
}
