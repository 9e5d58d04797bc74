//! Certificates for a run: the coercivity matrix `P`, the rate matrices
//! `Q(H)` and `R(H)`, the exponential envelope they imply, and an estimate of
//! an exact penalty weight.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{mean_value_hull, subgradient_interval, HessianHull};
use crate::dynamics::{
    coordinate_direction, group_constraints, is_active, project_onto_cone, Trajectory,
};
use crate::error::{Error, Result};
use crate::lagrangian::{coordinate_drive, row_pull, ReferenceSaddle};
use crate::problem::{row_residual, ConvexProgram};

fn check_mu_closed(mu: f64) -> Result<()> {
    if mu > 0.0 && mu <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "mu must lie in (0, 1], got {mu}"
        )))
    }
}

fn check_mu_open(mu: f64) -> Result<()> {
    if mu > 0.0 && mu < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "mu must lie in (0, 1), got {mu}"
        )))
    }
}

fn check_diag(a: &DMatrix<f64>, h: &[f64]) -> Result<()> {
    crate::error::check_len("Hessian diagonal", a.ncols(), h.len())
}

/// Assemble `[[M11, M12], [M21, M22]]`.
fn blocks(
    m11: DMatrix<f64>,
    m12: DMatrix<f64>,
    m21: DMatrix<f64>,
    m22: DMatrix<f64>,
) -> DMatrix<f64> {
    let (n, p) = (m11.nrows(), m22.nrows());
    let mut out = DMatrix::zeros(n + p, n + p);
    out.view_mut((0, 0), (n, n)).copy_from(&m11);
    out.view_mut((0, n), (n, p)).copy_from(&m12);
    out.view_mut((n, 0), (p, n)).copy_from(&m21);
    out.view_mut((n, n), (p, p)).copy_from(&m22);
    out
}

fn eigen_range(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = m.clone().symmetric_eigenvalues();
    (ev.min(), ev.max())
}

/// `P = [[AᵀA/μ + I, Aᵀ], [A, I]]` and its smallest eigenvalue.
pub fn matrix_p(a: &DMatrix<f64>, mu: f64) -> Result<(DMatrix<f64>, f64)> {
    check_mu_closed(mu)?;
    let (p, n) = a.shape();
    let at = a.transpose();
    let m = blocks(
        &at * a / mu + DMatrix::identity(n, n),
        at.clone(),
        a.clone(),
        DMatrix::identity(p, p),
    );
    let (lo, _) = eigen_range(&m);
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            what: "P",
            lambda_min: lo,
        });
    }
    Ok((m, lo))
}

/// Rate matrix `Q(H)` for a diagonal `H` and its smallest eigenvalue.
pub fn matrix_q(a: &DMatrix<f64>, mu: f64, h: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    check_mu_open(mu)?;
    check_diag(a, h)?;
    let at = a.transpose();
    let hm = DMatrix::from_diagonal(&DVector::from_column_slice(h));
    let ata = &at * a;
    let aat = a * &at;
    let s = &hm + &ata / mu;
    let m = blocks(
        &hm + s.transpose() * &s + &ata * (1.0 / mu - 1.0),
        hm.transpose() * &at + &ata * &at / mu,
        a * &hm + a * &ata / mu,
        aat,
    );
    let (lo, _) = eigen_range(&m);
    if lo <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            what: "Q",
            lambda_min: lo,
        });
    }
    Ok((m, lo))
}

/// Upper-bound matrix `R(H) = [[2H + AᵀA/μ + I, Aᵀ], [A, I]]` and its largest
/// eigenvalue.
pub fn matrix_r(a: &DMatrix<f64>, mu: f64, h: &[f64]) -> Result<(DMatrix<f64>, f64)> {
    check_mu_open(mu)?;
    check_diag(a, h)?;
    let (p, n) = a.shape();
    let at = a.transpose();
    let hm = DMatrix::from_diagonal(&DVector::from_column_slice(h));
    let m = blocks(
        hm * 2.0 + &at * a / mu + DMatrix::identity(n, n),
        at,
        a.clone(),
        DMatrix::identity(p, p),
    );
    let (_, hi) = eigen_range(&m);
    Ok((m, hi))
}

/// `I − Aᵀ(AAᵀ)⁻¹A`, the orthogonal projector onto `ker A`.
pub fn kernel_projector(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.ncols();
    let aat = a * a.transpose();
    let inv = aat.cholesky().ok_or(Error::Singular("A Aᵀ"))?.inverse();
    Ok(DMatrix::identity(n, n) - a.transpose() * inv * a)
}

/// `−(AAᵀ)⁻¹A g`: the multiplier that best balances a gradient `g`.
pub fn least_squares_multiplier(a: &DMatrix<f64>, gradient: &[f64]) -> Result<Vec<f64>> {
    let aat = a * a.transpose();
    let rhs = a * DVector::from_column_slice(gradient);
    let sol = aat.cholesky().ok_or(Error::Singular("A Aᵀ"))?.solve(&rhs);
    Ok(sol.iter().map(|v| -v).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateCertificate {
    #[serde(rename = "lambda_min_P")]
    pub lambda_min_p: f64,
    pub eta: f64,
    pub vartheta: f64,
    /// `eta / vartheta`.
    pub rate: f64,
    /// `sqrt(vartheta / lambda_min_P)`.
    pub envelope_coeff: f64,
    /// Trajectory samples whose Hessian hulls were swept.
    pub sample_count: usize,
    /// Eigen-solves performed over all distinct hulls.
    #[serde(skip)]
    pub evaluations: usize,
    /// `false` when some hull had more than [`EXHAUSTIVE_LIMIT`] free
    /// coordinates and only an endpoint sweep was done.
    #[serde(skip)]
    pub exhaustive: bool,
}

/// Largest number of non-degenerate hull intervals swept over all corners.
pub const EXHAUSTIVE_LIMIT: usize = 12;

/// Diagonal selections from a hull: every corner plus the midpoint when at
/// most [`EXHAUSTIVE_LIMIT`] intervals are non-degenerate, otherwise the
/// midpoint and each free coordinate moved to either endpoint.
pub fn hull_selections(hull: &HessianHull) -> (Vec<Vec<f64>>, bool) {
    let mid = hull.midpoint();
    let free: Vec<usize> = (0..hull.dim())
        .filter(|&i| hull.intervals[i].width() > 0.0)
        .collect();
    let mut out = vec![mid.clone()];
    if free.len() <= EXHAUSTIVE_LIMIT {
        for mask in 0u32..(1u32 << free.len()) {
            let mut h = mid.clone();
            for (bit, &i) in free.iter().enumerate() {
                let iv = hull.intervals[i];
                h[i] = if mask & (1 << bit) == 0 { iv.lo } else { iv.hi };
            }
            out.push(h);
        }
        (out, true)
    } else {
        for &i in &free {
            for v in [hull.intervals[i].lo, hull.intervals[i].hi] {
                let mut h = mid.clone();
                h[i] = v;
                out.push(h);
            }
        }
        for pick_lo in [true, false] {
            out.push(
                (0..hull.dim())
                    .map(|i| {
                        let iv = hull.intervals[i];
                        if pick_lo {
                            iv.lo
                        } else {
                            iv.hi
                        }
                    })
                    .collect(),
            );
        }
        (out, false)
    }
}

/// `η = min λ_min(Q(H))` and `ϑ = max λ_max(R(H))` over the Hessian hulls of
/// the segments from each recorded sample to the saddle.
pub fn rate_constants(
    prog: &ConvexProgram,
    mu: f64,
    trajectory: &Trajectory,
    reference: &ReferenceSaddle,
) -> Result<RateCertificate> {
    if prog.m() > 0 {
        return Err(Error::InequalityPresent { m: prog.m() });
    }
    if !prog.is_c11() {
        return Err(Error::NotC11);
    }
    check_mu_open(mu)?;
    let a = prog.a().to_dense();
    let (_, lambda_min_p) = matrix_p(&a, mu)?;

    let mut seen = BTreeSet::new();
    let mut hulls = Vec::new();
    for s in &trajectory.samples {
        let hull = mean_value_hull(prog, &s.x, &reference.x_star)?;
        let key: Vec<(u64, u64)> = hull
            .intervals
            .iter()
            .map(|iv| (iv.lo.to_bits(), iv.hi.to_bits()))
            .collect();
        if seen.insert(key) {
            hulls.push(hull);
        }
    }

    let per_hull: Vec<Result<(f64, f64, usize, bool)>> = hulls
        .par_iter()
        .map(|hull| {
            if !hull.is_positive_definite() {
                return Err(Error::NotPositiveDefinite {
                    what: "Hessian hull",
                    lambda_min: hull
                        .intervals
                        .iter()
                        .map(|i| i.lo)
                        .fold(f64::INFINITY, f64::min),
                });
            }
            let (sel, exhaustive) = hull_selections(hull);
            let mut eta = f64::INFINITY;
            let mut theta = f64::NEG_INFINITY;
            for h in &sel {
                eta = eta.min(matrix_q(&a, mu, h)?.1);
                theta = theta.max(matrix_r(&a, mu, h)?.1);
            }
            Ok((eta, theta, sel.len(), exhaustive))
        })
        .collect();

    let mut eta = f64::INFINITY;
    let mut vartheta = f64::NEG_INFINITY;
    let mut evaluations = 0;
    let mut exhaustive = true;
    for r in per_hull {
        let (e, t, c, ex) = r?;
        eta = eta.min(e);
        vartheta = vartheta.max(t);
        evaluations += c;
        exhaustive &= ex;
    }
    if hulls.is_empty() {
        return Err(Error::InvalidParameter("trajectory has no samples".into()));
    }
    Ok(RateCertificate {
        lambda_min_p,
        eta,
        vartheta,
        rate: eta / vartheta,
        envelope_coeff: (vartheta / lambda_min_p).sqrt(),
        sample_count: trajectory.samples.len(),
        evaluations,
        exhaustive,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvelopeReport {
    /// Largest `dist_j / (slack · coeff · dist_0 · exp(−rate t_j))`.
    pub max_ratio: f64,
    /// Time of the worst sample.
    pub worst_t: f64,
    pub slack: f64,
    pub pass: bool,
}

/// Check `dist_j ≤ slack · coeff · dist_0 · exp(−rate · t_j)` at every sample.
pub fn check_envelope(
    trajectory: &Trajectory,
    reference: &ReferenceSaddle,
    cert: &RateCertificate,
    slack: f64,
) -> EnvelopeReport {
    let first = &trajectory.samples[0];
    let d0 = reference.distance(&first.x, &first.lambda);
    let mut max_ratio = 0.0f64;
    let mut worst_t = first.t;
    for s in &trajectory.samples {
        let d = reference.distance(&s.x, &s.lambda);
        let bound = slack * cert.envelope_coeff * d0 * (-cert.rate * (s.t - first.t)).exp();
        let ratio = if d == 0.0 {
            0.0
        } else if bound == 0.0 {
            f64::INFINITY
        } else {
            d / bound
        };
        if ratio > max_ratio {
            max_ratio = ratio;
            worst_t = s.t;
        }
    }
    EnvelopeReport {
        max_ratio,
        worst_t,
        slack,
        pass: max_ratio <= 1.0,
    }
}

/// JSON layout of `certificate.json`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateExport {
    #[serde(flatten)]
    pub certificate: RateCertificate,
    pub slack: f64,
    pub pass: bool,
}

impl CertificateExport {
    pub fn new(certificate: RateCertificate, report: &EnvelopeReport) -> Self {
        Self {
            certificate,
            slack: report.slack,
            pass: report.pass,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("certificate serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaEstimate {
    /// `‖ν‖_∞` of the stationarity fit at the reference.
    pub multiplier_bound: f64,
    /// Largest `σ*·max{0, ⟨ξ, n*⟩}` over boundary samples of the trajectory.
    pub sampled_bound: f64,
    pub safety: f64,
    /// `safety · max(multiplier_bound, sampled_bound)`.
    pub kappa: f64,
}

/// Inequality multipliers `ν ≥ 0` of the active constraints at the reference,
/// fitted so that `ζ + Aᵀλ* + Σ ν_k ∇g_k` is as small as possible over
/// `ζ ∈ ∂f(x*)`. Inactive constraints get `ν_k = 0`.
pub fn fit_inequality_multipliers(
    prog: &ConvexProgram,
    reference: &ReferenceSaddle,
    activity_tol: f64,
) -> Result<Vec<f64>> {
    let x = &reference.x_star;
    let n = prog.n();
    let mut base = prog.a().transpose_mul_vec(&reference.lambda_star)?;
    let boxes: Vec<_> = prog
        .terms()
        .iter()
        .zip(x)
        .map(|(t, &xi)| subgradient_interval(t, xi))
        .collect();
    let active: Vec<usize> = (0..prog.m())
        .filter(|&k| {
            let g = &prog.inequalities()[k];
            is_active(g, &g.gather(x), activity_tol)
        })
        .collect();
    let grads: Vec<Vec<f64>> = active
        .iter()
        .map(|&k| prog.inequalities()[k].gradient(x))
        .collect();
    let norms: Vec<f64> = grads
        .iter()
        .map(|g| g.iter().map(|v| v * v).sum())
        .collect();

    // coordinate descent on (ζ, ν); `base` tracks Aᵀλ* + Σ ν_k ∇g_k
    let mut zeta: Vec<f64> = boxes.iter().map(|b| b.least_norm()).collect();
    let mut nu = vec![0.0; active.len()];
    for _ in 0..5000 {
        let mut change = 0.0f64;
        for i in 0..n {
            let z = (-base[i]).clamp(boxes[i].lo, boxes[i].hi);
            change = change.max((z - zeta[i]).abs());
            zeta[i] = z;
        }
        for (j, g) in grads.iter().enumerate() {
            if norms[j] == 0.0 {
                return Err(Error::DegenerateCone { index: active[j] });
            }
            let r: f64 = (0..n).map(|i| (zeta[i] + base[i]) * g[i]).sum();
            let new = (nu[j] - r / norms[j]).max(0.0);
            let dv = new - nu[j];
            if dv != 0.0 {
                for i in 0..n {
                    base[i] += dv * g[i];
                }
                nu[j] = new;
                change = change.max(dv.abs());
            }
        }
        if change < 1e-14 {
            break;
        }
    }
    let mut out = vec![0.0; prog.m()];
    for (j, &k) in active.iter().enumerate() {
        out[k] = nu[j];
    }
    Ok(out)
}

/// Largest `σ*·max{0, ⟨ξ, n*⟩}` at one state, with `ξ` the least-norm
/// selection of the unprojected field. Since `n*` is the normalized cone
/// projection `Σ w_k ∇g_k / ‖·‖`, the product equals `max_k w_k`.
pub fn sampled_penalty_bound(
    prog: &ConvexProgram,
    mu: f64,
    x: &[f64],
    lambda: &[f64],
    activity_tol: f64,
) -> Result<f64> {
    let a = prog.a();
    let h: Vec<f64> = (0..prog.p())
        .map(|r| row_residual(a.row(r), prog.b()[r], |j| x[j]))
        .collect();
    let pulls: Vec<f64> = h
        .iter()
        .zip(lambda)
        .map(|(&hl, &ll)| row_pull(hl, ll, mu))
        .collect();
    let xi: Vec<f64> = (0..prog.n())
        .map(|i| {
            coordinate_direction(
                &prog.terms()[i],
                x[i],
                coordinate_drive(a.col(i), |r| pulls[r]),
            )
        })
        .collect();
    let active: Vec<usize> = (0..prog.m())
        .filter(|&k| {
            let g = &prog.inequalities()[k];
            is_active(g, &g.gather(x), activity_tol)
        })
        .collect();
    let mut best = 0.0f64;
    for cluster in group_constraints(prog.inequalities(), &active) {
        let gens: Vec<Vec<f64>> = cluster
            .constraints
            .iter()
            .map(|&k| {
                let full = prog.inequalities()[k].gradient(x);
                cluster.vars.iter().map(|&v| full[v]).collect()
            })
            .collect();
        let local: Vec<f64> = cluster.vars.iter().map(|&v| xi[v]).collect();
        let cp = project_onto_cone(&gens, &local)?;
        best = best.max(cp.weights.iter().copied().fold(0.0, f64::max));
    }
    Ok(best)
}

/// Penalty weight large enough for the penalized and projected flows to
/// coincide, estimated from the stationarity fit at the reference and, when a
/// projected-flow trajectory is given, from its boundary samples.
pub fn estimate_kappa(
    prog: &ConvexProgram,
    mu: f64,
    reference: Option<&ReferenceSaddle>,
    trajectory: Option<&Trajectory>,
    safety: f64,
) -> Result<KappaEstimate> {
    let reference = reference.ok_or_else(|| Error::MissingReference("kappa estimate".into()))?;
    if safety.is_nan() || safety < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "safety factor must be >= 1, got {safety}"
        )));
    }
    let tol = 1e-8;
    let nu = fit_inequality_multipliers(prog, reference, tol)?;
    let multiplier_bound = nu.iter().copied().fold(0.0, f64::max);
    let mut sampled_bound = 0.0f64;
    if let Some(traj) = trajectory {
        for s in &traj.samples {
            if s.proj_active || prog.max_violation(&s.x) >= -tol {
                sampled_bound =
                    sampled_bound.max(sampled_penalty_bound(prog, mu, &s.x, &s.lambda, tol)?);
            }
        }
    }
    Ok(KappaEstimate {
        multiplier_bound,
        sampled_bound,
        safety,
        kappa: safety * multiplier_bound.max(sampled_bound),
    })
}
