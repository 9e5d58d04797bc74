//! Subdifferentials, generalized Hessians and their interval hulls for the
//! catalog objective terms and the penalty terms `max(0, g_k)`.

use crate::error::{check_len, Error, Result};
use crate::problem::{ConvexProgram, InequalityConstraint, ObjectiveTerm};

/// Closed real interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Self {
        debug_assert!(lo <= hi, "interval [{lo}, {hi}] is reversed");
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64, tol: f64) -> bool {
        v >= self.lo - tol && v <= self.hi + tol
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }

    /// Element of least magnitude.
    pub fn least_norm(&self) -> f64 {
        0.0f64.clamp(self.lo, self.hi)
    }

    pub fn scale(self, w: f64) -> Self {
        debug_assert!(w >= 0.0);
        Self {
            lo: w * self.lo,
            hi: w * self.hi,
        }
    }

    pub fn shift(self, v: f64) -> Self {
        Self {
            lo: self.lo + v,
            hi: self.hi + v,
        }
    }

    pub fn plus(self, other: Self) -> Self {
        Self {
            lo: self.lo + other.lo,
            hi: self.hi + other.hi,
        }
    }

    pub fn hull(self, other: Self) -> Self {
        Self {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }
}

/// Convex compact subset of ℝᵈ in one of three shapes.
#[derive(Debug, Clone, PartialEq)]
pub enum SubdifferentialSet {
    Point(Vec<f64>),
    /// Per-coordinate product of intervals.
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    /// Line segment `co{from, to}`.
    Segment {
        from: Vec<f64>,
        to: Vec<f64>,
    },
}

impl SubdifferentialSet {
    /// Box constructor; degenerate boxes collapse to a point.
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        debug_assert_eq!(lo.len(), hi.len());
        if lo == hi {
            SubdifferentialSet::Point(lo)
        } else {
            SubdifferentialSet::Box { lo, hi }
        }
    }

    pub fn segment(from: Vec<f64>, to: Vec<f64>) -> Self {
        if from == to {
            SubdifferentialSet::Point(from)
        } else {
            SubdifferentialSet::Segment { from, to }
        }
    }

    pub fn from_intervals(iv: &[Interval]) -> Self {
        Self::boxed(
            iv.iter().map(|i| i.lo).collect(),
            iv.iter().map(|i| i.hi).collect(),
        )
    }

    pub fn dim(&self) -> usize {
        match self {
            SubdifferentialSet::Point(v) => v.len(),
            SubdifferentialSet::Box { lo, .. } => lo.len(),
            SubdifferentialSet::Segment { from, .. } => from.len(),
        }
    }

    pub fn is_singleton(&self) -> bool {
        matches!(self, SubdifferentialSet::Point(_))
    }

    /// Unique minimum-norm element.
    pub fn least_norm(&self) -> Vec<f64> {
        match self {
            SubdifferentialSet::Point(v) => v.clone(),
            SubdifferentialSet::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| 0.0f64.clamp(l, h))
                .collect(),
            SubdifferentialSet::Segment { from, to } => {
                let t = segment_parameter(from, to);
                from.iter().zip(to).map(|(a, b)| a + t * (b - a)).collect()
            }
        }
    }

    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        if v.len() != self.dim() {
            return false;
        }
        match self {
            SubdifferentialSet::Point(p) => p.iter().zip(v).all(|(a, b)| (a - b).abs() <= tol),
            SubdifferentialSet::Box { lo, hi } => v
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(x, (l, h))| *x >= l - tol && *x <= h + tol),
            SubdifferentialSet::Segment { from, to } => {
                let d: Vec<f64> = to.iter().zip(from).map(|(b, a)| b - a).collect();
                let len2: f64 = d.iter().map(|x| x * x).sum();
                let t = (v
                    .iter()
                    .zip(from)
                    .zip(&d)
                    .map(|((x, a), di)| (x - a) * di)
                    .sum::<f64>()
                    / len2)
                    .clamp(0.0, 1.0);
                from.iter()
                    .zip(&d)
                    .zip(v)
                    .all(|((a, di), x)| (a + t * di - x).abs() <= tol)
            }
        }
    }
}

/// Parameter of the point of `co{from, to}` closest to the origin.
fn segment_parameter(from: &[f64], to: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut len2 = 0.0;
    for (a, b) in from.iter().zip(to) {
        let d = b - a;
        dot += a * d;
        len2 += d * d;
    }
    if len2 == 0.0 {
        0.0
    } else {
        (-dot / len2).clamp(0.0, 1.0)
    }
}

/// `∂f(x)` of a scalar term as an interval.
pub fn subgradient_interval(term: &ObjectiveTerm, x: f64) -> Interval {
    match term {
        ObjectiveTerm::Quadratic { a } => Interval::point(a * x),
        ObjectiveTerm::Quartic => Interval::point(x * x * x),
        ObjectiveTerm::AbsValue { w } => {
            if x > 0.0 {
                Interval::point(*w)
            } else if x < 0.0 {
                Interval::point(-w)
            } else {
                Interval::new(-w, *w)
            }
        }
        ObjectiveTerm::PiecewiseQuadratic { c_plus, c_minus } => {
            let c = if x >= 0.0 { c_plus } else { c_minus };
            Interval::point(c * x)
        }
        ObjectiveTerm::LinearCombination(parts) => {
            parts.iter().fold(Interval::point(0.0), |acc, (w, t)| {
                acc.plus(subgradient_interval(t, x).scale(*w))
            })
        }
    }
}

pub fn subdiff(term: &ObjectiveTerm, x: f64) -> SubdifferentialSet {
    SubdifferentialSet::from_intervals(&[subgradient_interval(term, x)])
}

/// `∂ max(0, g_k)(x)` in ℝⁿ.
pub fn subdiff_plus(g: &InequalityConstraint, x: &[f64]) -> SubdifferentialSet {
    let value = g.value(x);
    if value < 0.0 {
        SubdifferentialSet::Point(vec![0.0; x.len()])
    } else if value > 0.0 {
        SubdifferentialSet::Point(g.gradient(x))
    } else {
        SubdifferentialSet::segment(vec![0.0; x.len()], g.gradient(x))
    }
}

/// Generalized Hessian `∂(∇f)(x)` of a C^{1,1} term.
pub fn hessian_interval(term: &ObjectiveTerm, x: f64) -> Result<Interval> {
    hessian_range(term, x, x)
}

/// Hull of `∂(∇f)` over the segment `[lo, hi]`, exact at the kink points of
/// each catalog term. For combinations the hull is the weighted sum of the
/// parts' hulls, which may overestimate.
pub fn hessian_range(term: &ObjectiveTerm, lo: f64, hi: f64) -> Result<Interval> {
    debug_assert!(lo <= hi);
    match term {
        ObjectiveTerm::Quadratic { a } => Ok(Interval::point(*a)),
        ObjectiveTerm::Quartic => {
            let min_sq = if lo <= 0.0 && hi >= 0.0 {
                0.0
            } else {
                (lo * lo).min(hi * hi)
            };
            let max_sq = (lo * lo).max(hi * hi);
            Ok(Interval::new(3.0 * min_sq, 3.0 * max_sq))
        }
        ObjectiveTerm::AbsValue { w } => {
            if *w == 0.0 {
                Ok(Interval::point(0.0))
            } else {
                Err(Error::NotC11)
            }
        }
        ObjectiveTerm::PiecewiseQuadratic { c_plus, c_minus } => {
            if hi < 0.0 {
                Ok(Interval::point(*c_minus))
            } else if lo > 0.0 {
                Ok(Interval::point(*c_plus))
            } else {
                Ok(Interval::new(c_plus.min(*c_minus), c_plus.max(*c_minus)))
            }
        }
        ObjectiveTerm::LinearCombination(parts) => {
            let mut acc = Interval::point(0.0);
            for (w, t) in parts {
                if *w == 0.0 {
                    continue;
                }
                acc = acc.plus(hessian_range(t, lo, hi)?.scale(*w));
            }
            Ok(acc)
        }
    }
}

/// Diagonal interval matrix enclosing the generalized Hessians of a separable
/// objective over a segment.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianHull {
    pub intervals: Vec<Interval>,
}

impl HessianHull {
    pub fn dim(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_positive_definite(&self) -> bool {
        self.intervals.iter().all(|i| i.lo > 0.0)
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.intervals.iter().map(Interval::midpoint).collect()
    }

    pub fn contains_diagonal(&self, d: &[f64], tol: f64) -> bool {
        d.len() == self.dim()
            && self
                .intervals
                .iter()
                .zip(d)
                .all(|(i, v)| i.contains(*v, tol))
    }
}

/// Per-coordinate hull of `∂(∇f_i)` over `[min(x_i, y_i), max(x_i, y_i)]`.
pub fn mean_value_hull(prog: &ConvexProgram, x: &[f64], y: &[f64]) -> Result<HessianHull> {
    check_len("mean-value point x", prog.n(), x.len())?;
    check_len("mean-value point y", prog.n(), y.len())?;
    let intervals = prog
        .terms()
        .iter()
        .zip(x.iter().zip(y))
        .map(|(t, (&a, &b))| hessian_range(t, a.min(b), a.max(b)))
        .collect::<Result<Vec<_>>>()?;
    Ok(HessianHull { intervals })
}

/// `∇f(x)` for a term that is differentiable at `x`; `None` at a kink.
pub fn gradient(term: &ObjectiveTerm, x: f64) -> Option<f64> {
    let iv = subgradient_interval(term, x);
    (iv.lo == iv.hi).then_some(iv.lo)
}

/// Points where `∇f` itself fails to be differentiable (kinks of the term and
/// curvature switches), used to keep finite differences honest.
pub fn curvature_breaks(term: &ObjectiveTerm) -> Vec<f64> {
    match term {
        ObjectiveTerm::AbsValue { .. } | ObjectiveTerm::PiecewiseQuadratic { .. } => vec![0.0],
        ObjectiveTerm::LinearCombination(parts) => {
            let mut v: Vec<f64> = parts
                .iter()
                .flat_map(|(_, t)| curvature_breaks(t))
                .collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        }
        _ => Vec::new(),
    }
}
