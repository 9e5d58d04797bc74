//! Forward-Euler discretizations of the saddle-point flow (SPD) and of its
//! projected, penalty-free variant (SPLD).
//!
//! Both flows use the least-norm element of the set-valued field. A coordinate
//! whose step would jump across a kink of its objective term (or, under SPD,
//! across the kink of a single-variable penalty) stops on the kink instead;
//! the next step then sees the full subdifferential there.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::calculus::subgradient_interval;
use crate::error::{check_len, Error, Result};
use crate::lagrangian::{
    coordinate_drive, lyapunov_v, row_pull, saddle_operator, weak_lyapunov, LagrangianParams,
    PrimalDualState, ReferenceSaddle,
};
use crate::problem::{row_residual, ConvexProgram, InequalityConstraint};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Spd,
    Spld,
}

/// Which flow to integrate and with which parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Flow {
    Spd(LagrangianParams),
    /// The projected flow never uses the penalty weight.
    Spld {
        mu: f64,
    },
}

impl Flow {
    pub fn spld(mu: f64) -> Result<Self> {
        crate::lagrangian::check_mu(mu)?;
        Ok(Flow::Spld { mu })
    }

    pub fn mode(&self) -> Mode {
        match self {
            Flow::Spd(_) => Mode::Spd,
            Flow::Spld { .. } => Mode::Spld,
        }
    }

    pub fn mu(&self) -> f64 {
        match self {
            Flow::Spd(p) => p.mu(),
            Flow::Spld { mu } => *mu,
        }
    }

    /// Parameters used for Lyapunov diagnostics. The projected flow stays in
    /// `{g ≤ 0}`, so its penalty term vanishes and `κ = 0` is used.
    pub fn diagnostic_params(&self) -> LagrangianParams {
        match self {
            Flow::Spd(p) => *p,
            Flow::Spld { mu } => LagrangianParams::new(0.0, *mu).expect("mu validated"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegratorConfig {
    pub dt: f64,
    pub t_end: f64,
    /// A constraint is active when `g_k ≥ −activity_tol · (1 + max_{j ∈ supp} |x_j|)`.
    pub activity_tol: f64,
    pub record_every: usize,
    /// Stop early once the field norm drops below this value.
    pub tolerance: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 10.0,
            activity_tol: 1e-8,
            record_every: 1,
            tolerance: None,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "dt must be positive, got {}",
                self.dt
            )));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "t_end must be finite and >= 0, got {}",
                self.t_end
            )));
        }
        if self.activity_tol.is_nan() || self.activity_tol <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "activity tolerance must be positive, got {}",
                self.activity_tol
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be >= 1".into()));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }
}

/// Projection of `ξ` onto `cone{generators}` with its nonnegative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProjection {
    pub projection: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Lawson–Hanson active-set NNLS: `min ‖ξ − Σ w_k g_k‖`, `w ≥ 0`. Ties in the
/// entering pivot go to the lowest generator index.
pub fn project_onto_cone(generators: &[Vec<f64>], xi: &[f64]) -> Result<ConeProjection> {
    let d = xi.len();
    let k = generators.len();
    for (idx, g) in generators.iter().enumerate() {
        check_len("cone generator", d, g.len())?;
        if norm(g) <= 1e-14 {
            return Err(Error::DegenerateCone { index: idx });
        }
    }
    let max_g = generators.iter().map(|g| norm(g)).fold(0.0, f64::max);
    let tol = 1e-13 * (1.0 + norm(xi)) * max_g.max(1.0);

    let combine = |w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; d];
        for (wk, g) in w.iter().zip(generators) {
            if *wk != 0.0 {
                for (o, v) in out.iter_mut().zip(g) {
                    *o += wk * v;
                }
            }
        }
        out
    };

    let mut w = vec![0.0; k];
    let mut passive = vec![false; k];
    let mut excluded = vec![false; k];
    for _ in 0..50 {
        let proj = combine(&w);
        let r: Vec<f64> = xi.iter().zip(&proj).map(|(a, b)| a - b).collect();
        let mut enter = None;
        let mut best = tol;
        for j in 0..k {
            if passive[j] || excluded[j] {
                continue;
            }
            let gj = dot(&generators[j], &r);
            if gj > best {
                best = gj;
                enter = Some(j);
            }
        }
        let Some(j) = enter else { break };
        passive[j] = true;
        for _ in 0..50 {
            let Some(z) = passive_least_squares(generators, xi, &passive) else {
                passive[j] = false;
                excluded[j] = true;
                break;
            };
            if (0..k).filter(|&i| passive[i]).all(|i| z[i] > 0.0) {
                w = z;
                break;
            }
            let mut alpha = f64::INFINITY;
            for i in (0..k).filter(|&i| passive[i] && z[i] <= 0.0) {
                alpha = alpha.min(w[i] / (w[i] - z[i]));
            }
            for i in 0..k {
                if passive[i] {
                    w[i] += alpha * (z[i] - w[i]);
                    if w[i] <= 1e-15 {
                        w[i] = 0.0;
                        passive[i] = false;
                    }
                }
            }
            if !passive.iter().any(|&p| p) {
                break;
            }
        }
    }
    Ok(ConeProjection {
        projection: combine(&w),
        weights: w,
    })
}

/// Unconstrained least squares on the passive generators via the normal
/// equations; `None` when they are numerically dependent.
fn passive_least_squares(
    generators: &[Vec<f64>],
    xi: &[f64],
    passive: &[bool],
) -> Option<Vec<f64>> {
    let idx: Vec<usize> = (0..generators.len()).filter(|&i| passive[i]).collect();
    let q = idx.len();
    let mut m = DMatrix::zeros(q, q);
    let mut rhs = DVector::zeros(q);
    for (a, &i) in idx.iter().enumerate() {
        rhs[a] = dot(&generators[i], xi);
        for (b, &j) in idx.iter().enumerate() {
            m[(a, b)] = dot(&generators[i], &generators[j]);
        }
    }
    let max_diag = (0..q).map(|a| m[(a, a)]).fold(0.0, f64::max);
    let chol = m.cholesky()?;
    let l = chol.l();
    if (0..q).any(|a| l[(a, a)] * l[(a, a)] <= 1e-12 * max_diag) {
        return None;
    }
    let z = chol.solve(&rhs);
    let mut out = vec![0.0; generators.len()];
    for (a, &i) in idx.iter().enumerate() {
        out[i] = z[a];
    }
    Some(out)
}

/// Unit normal in `cone{active gradients}` most aligned with `ξ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMaximizer {
    pub n_star: Vec<f64>,
    /// `⟨ξ, n*⟩ > 0`.
    pub value: f64,
    /// Smallest `σ` with `n*/σ ∈ Σ_k co{0, ∇g_k}`: the largest weight of `n*`
    /// in the generator basis.
    pub sigma: f64,
}

/// `None` when `ξ` already lies in the polar (tangent) cone.
pub fn maximizer_normal(
    active_gradients: &[Vec<f64>],
    xi: &[f64],
) -> Result<Option<NormalMaximizer>> {
    let cp = project_onto_cone(active_gradients, xi)?;
    let value = norm(&cp.projection);
    if value <= 1e-14 * (1.0 + norm(xi)) {
        return Ok(None);
    }
    Ok(Some(NormalMaximizer {
        n_star: cp.projection.iter().map(|v| v / value).collect(),
        value,
        sigma: cp.weights.iter().fold(0.0f64, |m, w| m.max(w / value)),
    }))
}

/// Constraints that share variables, closed transitively, with the union of
/// their supports. Disjoint groups never interact in a projection.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintGroup {
    /// Ascending constraint indices.
    pub constraints: Vec<usize>,
    /// Ascending variable indices.
    pub vars: Vec<usize>,
}

impl ConstraintGroup {
    pub fn leader(&self) -> usize {
        self.vars[0]
    }
}

/// Connected components of the constraint-overlap relation over `subset`,
/// ordered by their smallest variable.
pub fn group_constraints(ineqs: &[InequalityConstraint], subset: &[usize]) -> Vec<ConstraintGroup> {
    let mut parent: Vec<usize> = (0..subset.len()).collect();
    fn find(p: &mut [usize], mut a: usize) -> usize {
        while p[a] != a {
            p[a] = p[p[a]];
            a = p[a];
        }
        a
    }
    let supports: Vec<Vec<usize>> = subset.iter().map(|&k| ineqs[k].support()).collect();
    let mut owner = std::collections::BTreeMap::new();
    for (a, s) in supports.iter().enumerate() {
        for &v in s {
            match owner.get(&v) {
                None => {
                    owner.insert(v, a);
                }
                Some(&b) => {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, ConstraintGroup> = Default::default();
    for a in 0..subset.len() {
        let r = find(&mut parent, a);
        let g = groups.entry(r).or_insert_with(|| ConstraintGroup {
            constraints: Vec::new(),
            vars: Vec::new(),
        });
        g.constraints.push(subset[a]);
        g.vars.extend(&supports[a]);
    }
    let mut out: Vec<ConstraintGroup> = groups
        .into_values()
        .map(|mut g| {
            g.constraints.sort_unstable();
            g.vars.sort_unstable();
            g.vars.dedup();
            g
        })
        .collect();
    out.sort_by_key(|g| g.vars[0]);
    out
}

pub(crate) fn is_active(g: &InequalityConstraint, local: &[f64], activity_tol: f64) -> bool {
    let scale = 1.0 + local.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    g.value_local(local) >= -activity_tol * scale
}

/// Tangent-cone projection of `ξ` restricted to one group of constraints.
/// `x` and `xi` are indexed by `group.vars`. Returns the projected direction
/// and whether any outward component was removed.
pub(crate) fn project_group(
    ineqs: &[InequalityConstraint],
    group: &ConstraintGroup,
    x: &[f64],
    xi: &[f64],
    activity_tol: f64,
) -> Result<(Vec<f64>, bool)> {
    let pos = |v: usize| group.vars.binary_search(&v).expect("variable in group");
    let active: Vec<usize> = group
        .constraints
        .iter()
        .copied()
        .filter(|&k| {
            let local: Vec<f64> = ineqs[k].support().iter().map(|&v| x[pos(v)]).collect();
            is_active(&ineqs[k], &local, activity_tol)
        })
        .collect();
    let mut d = xi.to_vec();
    let mut fired = false;
    for cluster in group_constraints(ineqs, &active) {
        let cpos: Vec<usize> = cluster.vars.iter().map(|&v| pos(v)).collect();
        let local_xi: Vec<f64> = cpos.iter().map(|&p| xi[p]).collect();
        let mut gens = Vec::with_capacity(cluster.constraints.len());
        for &k in &cluster.constraints {
            let support = ineqs[k].support();
            let local: Vec<f64> = support.iter().map(|&v| x[pos(v)]).collect();
            let grad = ineqs[k].gradient_local(&local);
            let mut full = vec![0.0; cluster.vars.len()];
            for (v, gv) in support.iter().zip(grad) {
                full[cluster.vars.binary_search(v).expect("support in cluster")] = gv;
            }
            if norm(&full) <= 1e-14 {
                return Err(Error::DegenerateCone { index: k });
            }
            gens.push(full);
        }
        let cp = project_onto_cone(&gens, &local_xi)?;
        if cp.weights.iter().any(|&w| w > 0.0) {
            fired = true;
            for (p, pv) in cpos.iter().zip(&cp.projection) {
                d[*p] = xi[*p] - pv;
            }
        }
    }
    Ok((d, fired))
}

/// Pull group variables back into `{g ≤ 0}`: bounds are clamped, halfspaces
/// and smooth constraints projected one at a time in ascending order, with
/// repeated passes while any member is still violated.
pub(crate) fn clip_group(ineqs: &[InequalityConstraint], group: &ConstraintGroup, x: &mut [f64]) {
    let pos = |v: usize| group.vars.binary_search(&v).expect("variable in group");
    for _ in 0..100 {
        let mut violated = false;
        for &k in &group.constraints {
            let support = ineqs[k].support();
            let mut local: Vec<f64> = support.iter().map(|&v| x[pos(v)]).collect();
            if ineqs[k].value_local(&local) > 0.0 {
                violated = true;
                ineqs[k].project_local(&mut local);
                for (v, lv) in support.iter().zip(local) {
                    x[pos(*v)] = lv;
                }
            }
        }
        if !violated {
            break;
        }
    }
}

/// `x + dt·d`, stopped on the first kink crossed.
#[inline]
pub(crate) fn advance(x: f64, d: f64, dt: f64, kinks: &[f64]) -> f64 {
    let y = x + dt * d;
    let mut out = y;
    for &k in kinks {
        if (x - k) * (y - k) < 0.0 && (k - x).abs() < (out - x).abs() {
            out = k;
        }
    }
    out
}

/// Least-norm point of `∂f_i(x_i) + drive`, negated: the unprojected
/// projected-flow direction of one coordinate.
#[inline]
pub(crate) fn coordinate_direction(
    term: &crate::problem::ObjectiveTerm,
    xi: f64,
    drive: f64,
) -> f64 {
    -subgradient_interval(term, xi).shift(drive).least_norm()
}

/// Precomputed per-program data shared by all steps of a run.
#[derive(Debug, Clone)]
pub(crate) struct StepPlan {
    pub groups: Vec<ConstraintGroup>,
    pub spld_kinks: Vec<Vec<f64>>,
    pub spd_kinks: Vec<Vec<f64>>,
}

impl StepPlan {
    pub fn new(prog: &ConvexProgram, kappa: f64) -> Self {
        let all: Vec<usize> = (0..prog.m()).collect();
        let spld_kinks: Vec<Vec<f64>> = prog.terms().iter().map(|t| t.kinks()).collect();
        let mut spd_kinks = spld_kinks.clone();
        if kappa > 0.0 {
            for g in prog.inequalities() {
                if let InequalityConstraint::UpperBound { index, bound } = g {
                    spd_kinks[*index].push(*bound);
                }
            }
        }
        Self {
            groups: group_constraints(prog.inequalities(), &all),
            spld_kinks,
            spd_kinks,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct StepOutcome {
    pub next: PrimalDualState,
    /// Norm of the integrated field `(ẋ, λ̇)` at the old state.
    pub residual: f64,
    pub proj_active: bool,
}

fn finite_or_err(state: &PrimalDualState) -> Result<()> {
    if state.x.iter().chain(&state.lambda).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { t: state.t })
    }
}

fn dual_step(lambda: &[f64], h: &[f64], dt: f64) -> Vec<f64> {
    lambda.iter().zip(h).map(|(l, hv)| l + dt * hv).collect()
}

pub(crate) fn spd_outcome(
    prog: &ConvexProgram,
    params: &LagrangianParams,
    plan: &StepPlan,
    state: &PrimalDualState,
    dt: f64,
) -> Result<StepOutcome> {
    let op = saddle_operator(prog, params, &state.x, &state.lambda)?;
    let s = op.x_part.least_norm();
    let x: Vec<f64> = state
        .x
        .iter()
        .zip(&s)
        .zip(&plan.spd_kinks)
        .map(|((&xi, &si), k)| advance(xi, -si, dt, k))
        .collect();
    let h: Vec<f64> = op.lambda_part.iter().map(|v| -v).collect();
    let next = PrimalDualState {
        x,
        lambda: dual_step(&state.lambda, &h, dt),
        t: state.t + dt,
    };
    finite_or_err(&next)?;
    Ok(StepOutcome {
        residual: norm2(&s, &h),
        next,
        proj_active: false,
    })
}

pub(crate) fn spld_outcome(
    prog: &ConvexProgram,
    mu: f64,
    plan: &StepPlan,
    state: &PrimalDualState,
    cfg: &IntegratorConfig,
) -> Result<StepOutcome> {
    let (x, lambda) = (&state.x, &state.lambda);
    let a = prog.a();
    let h: Vec<f64> = (0..prog.p())
        .map(|r| row_residual(a.row(r), prog.b()[r], |j| x[j]))
        .collect();
    let pulls: Vec<f64> = h
        .iter()
        .zip(lambda)
        .map(|(&hl, &ll)| row_pull(hl, ll, mu))
        .collect();
    let mut d: Vec<f64> = (0..prog.n())
        .map(|i| {
            let drive = coordinate_drive(a.col(i), |r| pulls[r]);
            coordinate_direction(&prog.terms()[i], x[i], drive)
        })
        .collect();

    let mut proj_active = false;
    for group in &plan.groups {
        let gx: Vec<f64> = group.vars.iter().map(|&v| x[v]).collect();
        let gxi: Vec<f64> = group.vars.iter().map(|&v| d[v]).collect();
        let (gd, fired) = project_group(prog.inequalities(), group, &gx, &gxi, cfg.activity_tol)?;
        proj_active |= fired;
        for (&v, dv) in group.vars.iter().zip(gd) {
            d[v] = dv;
        }
    }

    let mut next_x: Vec<f64> = x
        .iter()
        .zip(&d)
        .zip(&plan.spld_kinks)
        .map(|((&xi, &di), k)| advance(xi, di, cfg.dt, k))
        .collect();
    for group in &plan.groups {
        let mut gx: Vec<f64> = group.vars.iter().map(|&v| next_x[v]).collect();
        clip_group(prog.inequalities(), group, &mut gx);
        for (&v, xv) in group.vars.iter().zip(gx) {
            next_x[v] = xv;
        }
    }
    let next = PrimalDualState {
        x: next_x,
        lambda: dual_step(lambda, &h, cfg.dt),
        t: state.t + cfg.dt,
    };
    finite_or_err(&next)?;
    Ok(StepOutcome {
        residual: norm2(&d, &h),
        next,
        proj_active,
    })
}

pub fn spd_step(
    prog: &ConvexProgram,
    params: &LagrangianParams,
    state: &PrimalDualState,
    cfg: &IntegratorConfig,
) -> Result<PrimalDualState> {
    cfg.validate()?;
    state.check_dims(prog)?;
    let plan = StepPlan::new(prog, params.kappa());
    Ok(spd_outcome(prog, params, &plan, state, cfg.dt)?.next)
}

pub fn spld_step(
    prog: &ConvexProgram,
    mu: f64,
    state: &PrimalDualState,
    cfg: &IntegratorConfig,
) -> Result<PrimalDualState> {
    cfg.validate()?;
    crate::lagrangian::check_mu(mu)?;
    state.check_dims(prog)?;
    check_feasible(prog, &state.x)?;
    let plan = StepPlan::new(prog, 0.0);
    Ok(spld_outcome(prog, mu, &plan, state, cfg)?.next)
}

pub fn check_feasible(prog: &ConvexProgram, x: &[f64]) -> Result<()> {
    for (k, g) in prog.eval_g(x)?.into_iter().enumerate() {
        if g > 0.0 {
            return Err(Error::InfeasibleStart { index: k, value: g });
        }
    }
    Ok(())
}

/// Move `x` into `{g ≤ 0}` by cyclic per-constraint projections, one
/// constraint group at a time. Fails if a group does not settle.
pub fn pull_into_feasible(prog: &ConvexProgram, x: &mut [f64]) -> Result<()> {
    check_len("primal state", prog.n(), x.len())?;
    let all: Vec<usize> = (0..prog.m()).collect();
    for group in group_constraints(prog.inequalities(), &all) {
        let mut local: Vec<f64> = group.vars.iter().map(|&v| x[v]).collect();
        clip_group(prog.inequalities(), &group, &mut local);
        for (&v, lv) in group.vars.iter().zip(local) {
            x[v] = lv;
        }
    }
    check_feasible(prog, x)
}

/// Tangent-cone projection of `ξ` at `x` over the `eps_act`-active constraints.
pub fn tangent_project(
    prog: &ConvexProgram,
    x: &[f64],
    xi: &[f64],
    eps_act: f64,
) -> Result<Vec<f64>> {
    check_len("primal state", prog.n(), x.len())?;
    check_len("direction", prog.n(), xi.len())?;
    let all: Vec<usize> = (0..prog.m()).collect();
    let mut out = xi.to_vec();
    for group in group_constraints(prog.inequalities(), &all) {
        let gx: Vec<f64> = group.vars.iter().map(|&v| x[v]).collect();
        let gxi: Vec<f64> = group.vars.iter().map(|&v| xi[v]).collect();
        let (gd, _) = project_group(prog.inequalities(), &group, &gx, &gxi, eps_act)?;
        for (&v, dv) in group.vars.iter().zip(gd) {
            out[v] = dv;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    /// Strict Lyapunov value; NaN without a reference saddle.
    pub v: f64,
    /// `‖(x, λ) − (x*, λ*)‖²/2`; NaN without a reference saddle.
    pub weak_v: f64,
    /// Norm of the integrated field at this sample.
    pub residual: f64,
    pub max_g: f64,
    pub proj_active: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    BudgetExhausted,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub mode: Mode,
    pub samples: Vec<Sample>,
    pub status: RunStatus,
    pub steps: usize,
}

impl Trajectory {
    pub fn last(&self) -> &Sample {
        self.samples
            .last()
            .expect("trajectory holds at least the initial sample")
    }

    pub fn final_state(&self) -> PrimalDualState {
        let s = self.last();
        PrimalDualState {
            x: s.x.clone(),
            lambda: s.lambda.clone(),
            t: s.t,
        }
    }

    /// Recompute `V` and the weak Lyapunov value against a reference.
    pub fn annotate(
        &mut self,
        prog: &ConvexProgram,
        params: &LagrangianParams,
        reference: &ReferenceSaddle,
    ) -> Result<()> {
        for s in &mut self.samples {
            s.v = lyapunov_v(
                prog,
                params,
                &s.x,
                &s.lambda,
                std::slice::from_ref(reference),
            )?;
            s.weak_v = weak_lyapunov(&s.x, &s.lambda, reference);
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let (n, p) = self
            .samples
            .first()
            .map(|s| (s.x.len(), s.lambda.len()))
            .unwrap_or((0, 0));
        let mut out = String::from("t");
        for i in 1..=n {
            write!(out, ",x_{i}").unwrap();
        }
        for l in 1..=p {
            write!(out, ",lambda_{l}").unwrap();
        }
        out.push_str(",V,weakV,residual,max_g,proj_active\n");
        for s in &self.samples {
            write!(out, "{:.16e}", s.t).unwrap();
            for v in
                s.x.iter()
                    .chain(&s.lambda)
                    .chain([&s.v, &s.weak_v, &s.residual, &s.max_g])
            {
                write!(out, ",{v:.16e}").unwrap();
            }
            writeln!(out, ",{}", u8::from(s.proj_active)).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

pub(crate) fn make_sample(
    prog: &ConvexProgram,
    flow: &Flow,
    reference: Option<&ReferenceSaddle>,
    state: &PrimalDualState,
    residual: f64,
    proj_active: bool,
) -> Result<Sample> {
    let (v, weak_v) = match reference {
        Some(r) => (
            lyapunov_v(
                prog,
                &flow.diagnostic_params(),
                &state.x,
                &state.lambda,
                std::slice::from_ref(r),
            )?,
            weak_lyapunov(&state.x, &state.lambda, r),
        ),
        None => (f64::NAN, f64::NAN),
    };
    Ok(Sample {
        t: state.t,
        x: state.x.clone(),
        lambda: state.lambda.clone(),
        v,
        weak_v,
        residual,
        max_g: prog.max_violation(&state.x),
        proj_active,
    })
}

/// Integrate from `(x0, λ0)` until `t_end` or until the field norm falls below
/// `cfg.tolerance`. Sample `k` sits at `t = k·dt`; the final state is always
/// recorded.
pub fn integrate(
    prog: &ConvexProgram,
    flow: Flow,
    x0: &[f64],
    lambda0: &[f64],
    cfg: &IntegratorConfig,
    reference: Option<&ReferenceSaddle>,
) -> Result<Trajectory> {
    let plan = match flow {
        Flow::Spd(p) => StepPlan::new(prog, p.kappa()),
        Flow::Spld { mu } => {
            crate::lagrangian::check_mu(mu)?;
            StepPlan::new(prog, 0.0)
        }
    };
    run_steps(
        prog,
        flow,
        x0,
        lambda0,
        cfg,
        reference,
        |state| match flow {
            Flow::Spd(p) => spd_outcome(prog, &p, &plan, state, cfg.dt),
            Flow::Spld { mu } => spld_outcome(prog, mu, &plan, state, cfg),
        },
    )
}

/// Shared driver: `step` maps a state to its outcome.
pub(crate) fn run_steps(
    prog: &ConvexProgram,
    flow: Flow,
    x0: &[f64],
    lambda0: &[f64],
    cfg: &IntegratorConfig,
    reference: Option<&ReferenceSaddle>,
    mut step: impl FnMut(&PrimalDualState) -> Result<StepOutcome>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let mut state = PrimalDualState::new(x0.to_vec(), lambda0.to_vec());
    state.check_dims(prog)?;
    if flow.mode() == Mode::Spld {
        check_feasible(prog, x0)?;
    }
    let total = cfg.steps();
    let mut samples = Vec::with_capacity(total / cfg.record_every + 2);
    let mut status = RunStatus::BudgetExhausted;
    let mut k = 0usize;
    loop {
        let outcome = match step(&state) {
            Ok(o) => o,
            Err(Error::NonFiniteState { .. }) => {
                samples.push(make_sample(
                    prog,
                    &flow,
                    reference,
                    &state,
                    f64::NAN,
                    false,
                )?);
                status = RunStatus::NonFinite;
                break;
            }
            Err(e) => return Err(e),
        };
        let converged = cfg.tolerance.is_some_and(|tol| outcome.residual < tol);
        if k.is_multiple_of(cfg.record_every) || converged || k == total {
            samples.push(make_sample(
                prog,
                &flow,
                reference,
                &state,
                outcome.residual,
                outcome.proj_active,
            )?);
        }
        if converged {
            status = RunStatus::Converged;
            break;
        }
        if k == total {
            break;
        }
        k += 1;
        state = outcome.next;
        state.t = k as f64 * cfg.dt;
    }
    Ok(Trajectory {
        mode: flow.mode(),
        samples,
        status,
        steps: k,
    })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn norm2(a: &[f64], b: &[f64]) -> f64 {
    (dot(a, a) + dot(b, b)).sqrt()
}
