//! Scenario setup, runs, mode comparison and artifact output.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use saddleflow::certify::{
    check_envelope, estimate_kappa, rate_constants, CertificateExport, EnvelopeReport,
    KappaEstimate, RateCertificate,
};
use saddleflow::dynamics::{
    integrate, pull_into_feasible, Flow, IntegratorConfig, RunStatus, Trajectory,
};
use saddleflow::lagrangian::{LagrangianParams, ReferenceSaddle, ReferenceSource};
use saddleflow::network::{run_distributed, Graph, MessageStats};
use saddleflow::problem::{Builtin, ConvexProgram};
use serde::Serialize;

use crate::problem_file::ProblemFile;
use crate::svg::{Chart, Series};

pub const DEFAULT_N: usize = 10;
/// Safety factor applied to the penalty estimate under `--kappa auto`.
pub const KAPPA_SAFETY: f64 = 1.5;
/// Penalty weight used by `--kappa auto` when the estimate is zero.
pub const AUTO_KAPPA_FALLBACK: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinName {
    /// Quartic plus absolute value, circulant coupling, upper bounds.
    Example1,
    /// Piecewise quadratic, tridiagonal Toeplitz coupling.
    Example2,
}

impl BuiltinName {
    fn program(self) -> Builtin {
        match self {
            BuiltinName::Example1 => Builtin::QuarticAbsCirculant,
            BuiltinName::Example2 => Builtin::PiecewiseToeplitz,
        }
    }

    pub fn default_range(self) -> InitRange {
        match self {
            BuiltinName::Example1 => InitRange { lo: -1.5, hi: 0.5 },
            BuiltinName::Example2 => InitRange { lo: 0.0, hi: 1.0 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ProblemSource {
    Builtin(BuiltinName),
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioMode {
    Spd,
    Spld,
    /// Projected flow run agent by agent on the constraint-induced graph.
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaChoice {
    Fixed(f64),
    Auto,
}

impl FromStr for KappaChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "auto" {
            return Ok(KappaChoice::Auto);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| format!("expected a number or `auto`, got `{s}`"))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(format!("kappa must be finite and >= 0, got {v}"));
        }
        Ok(KappaChoice::Fixed(v))
    }
}

/// Initial conditions are drawn uniformly from `(lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InitRange {
    pub lo: f64,
    pub hi: f64,
}

impl FromStr for InitRange {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, b) = s
            .split_once(':')
            .ok_or_else(|| format!("expected `lo:hi`, got `{s}`"))?;
        let lo: f64 = a
            .trim()
            .parse()
            .map_err(|_| format!("bad lower end `{a}`"))?;
        let hi: f64 = b
            .trim()
            .parse()
            .map_err(|_| format!("bad upper end `{b}`"))?;
        if !(lo < hi && lo.is_finite() && hi.is_finite()) {
            return Err(format!("need finite lo < hi, got {lo}:{hi}"));
        }
        Ok(InitRange { lo, hi })
    }
}

impl fmt::Display for InitRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.lo, self.hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub source: ProblemSource,
    /// Size of a builtin; must match `n` when given with a problem file.
    pub n: Option<usize>,
    pub mode: ScenarioMode,
    pub mu: f64,
    /// Ignored by the projected modes.
    pub kappa: KappaChoice,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Defaults to the builtin's range, or `-1:1` for files.
    pub init_range: Option<InitRange>,
    pub out: Option<PathBuf>,
    pub record_every: usize,
    pub slack: f64,
    /// Stop once the field norm falls below this value.
    pub tol: Option<f64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            source: ProblemSource::Builtin(BuiltinName::Example1),
            n: None,
            mode: ScenarioMode::Spd,
            mu: 0.5,
            kappa: KappaChoice::Auto,
            dt: 1e-3,
            t_end: 200.0,
            seed: 0,
            init_range: None,
            out: None,
            record_every: 100,
            slack: 1.05,
            tol: Some(1e-6),
        }
    }
}

/// How the penalty weight of an SPD run was chosen.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    pub value: f64,
    pub estimate: Option<KappaEstimate>,
    /// The estimate was zero and the fallback weight was used.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub kappa: Option<KappaReport>,
    pub certificate: Option<(RateCertificate, EnvelopeReport)>,
    /// Why no certificate was produced.
    pub certificate_note: Option<String>,
    pub messages: Option<MessageStats>,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        match self.trajectory.status {
            RunStatus::Converged => 0,
            RunStatus::BudgetExhausted => 2,
            RunStatus::NonFinite => 1,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub kappa: KappaReport,
    /// Largest coordinate gap over all recorded samples.
    pub sup_gap: f64,
    pub gap_tolerance: f64,
    pub spld_x: Vec<f64>,
    pub spld_lambda: Vec<f64>,
    pub spd_x: Vec<f64>,
    pub spd_lambda: Vec<f64>,
    pub spld_max_g: f64,
    pub spd_final_max_g: f64,
    /// The SPD limit violates the inequalities, or the weight is below the
    /// multiplier bound at the reference.
    pub kappa_inexact: bool,
}

impl CompareReport {
    pub fn within_tolerance(&self) -> bool {
        self.sup_gap <= self.gap_tolerance
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Serialize)]
struct ReferenceExport<'a> {
    source: ReferenceSource,
    x_star: &'a [f64],
    lambda_star: &'a [f64],
    f_star: f64,
}

#[derive(Serialize)]
struct RunSummary<'a> {
    mode: ScenarioMode,
    n: usize,
    p: usize,
    m: usize,
    mu: f64,
    dt: f64,
    t_end: f64,
    seed: u64,
    init_range: InitRange,
    status: RunStatus,
    steps: usize,
    final_residual: f64,
    final_max_g: f64,
    final_distance: f64,
    kappa: Option<&'a KappaReport>,
    certificate_note: Option<&'a str>,
    messages_total: Option<usize>,
}

/// A loaded program with its initial condition and reference saddle.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub program: ConvexProgram,
    pub init_range: InitRange,
    pub x0: Vec<f64>,
    pub lambda0: Vec<f64>,
    pub reference: ReferenceSaddle,
}

/// Draw `len` values from `(lo, hi]`.
pub fn draw_uniform(rng: &mut ChaCha8Rng, len: usize, range: InitRange) -> Vec<f64> {
    (0..len)
        .map(|_| range.hi - (range.hi - range.lo) * rng.random::<f64>())
        .collect()
}

fn sup_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.samples
        .iter()
        .zip(&b.samples)
        .flat_map(|(s, r)| s.x.iter().zip(&r.x).chain(s.lambda.iter().zip(&r.lambda)))
        .fold(0.0f64, |m, (u, v)| m.max((u - v).abs()))
}

/// Closed forms first; otherwise the endpoint of a long projected run.
fn find_reference(
    program: &ConvexProgram,
    config: &ScenarioConfig,
    x0: &[f64],
    lambda0: &[f64],
) -> Result<ReferenceSaddle> {
    if let Ok(r) = ReferenceSaddle::from_unique_feasible_point(program) {
        return Ok(r);
    }
    if let Ok(r) = ReferenceSaddle::from_equality_qp(program) {
        return Ok(r);
    }
    let cfg = IntegratorConfig {
        dt: config.dt,
        t_end: 4.0 * config.t_end.max(100.0),
        record_every: usize::MAX,
        tolerance: Some(1e-10),
        ..Default::default()
    };
    let tr = integrate(program, Flow::spld(config.mu)?, x0, lambda0, &cfg, None)
        .context("reference run")?;
    if tr.status == RunStatus::NonFinite {
        bail!("reference run diverged");
    }
    Ok(ReferenceSaddle::from_long_run(program, &tr.final_state())?)
}

impl Scenario {
    /// Load the program, draw `(x0, λ0)` from the seeded generator (primal
    /// first, then dual), pull `x0` into the inequality set, and settle on a
    /// reference saddle.
    pub fn prepare(config: ScenarioConfig) -> Result<Self> {
        if config.slack.is_nan() || config.slack < 1.0 {
            bail!("slack must be >= 1, got {}", config.slack);
        }
        LagrangianParams::new(0.0, config.mu).context("invalid --mu")?;
        let (program, file_reference, default_range) = match &config.source {
            ProblemSource::Builtin(b) => {
                let n = config.n.unwrap_or(DEFAULT_N);
                (b.program().build(n)?, None, b.default_range())
            }
            ProblemSource::File(path) => {
                let loaded = ProblemFile::read(path)?.build()?;
                if let Some(n) = config.n {
                    if n != loaded.program.n() {
                        bail!(
                            "--n {n} disagrees with the problem file (n = {})",
                            loaded.program.n()
                        );
                    }
                }
                (
                    loaded.program,
                    loaded.reference,
                    InitRange { lo: -1.0, hi: 1.0 },
                )
            }
        };
        let init_range = config.init_range.unwrap_or(default_range);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut x0 = draw_uniform(&mut rng, program.n(), init_range);
        let lambda0 = draw_uniform(&mut rng, program.p(), init_range);
        pull_into_feasible(&program, &mut x0)
            .context("could not move the initial point into the inequality set")?;

        let reference = match file_reference {
            Some(r) => r,
            None => find_reference(&program, &config, &x0, &lambda0)?,
        };
        Ok(Self {
            config,
            program,
            init_range,
            x0,
            lambda0,
            reference,
        })
    }

    pub fn integrator_config(&self) -> IntegratorConfig {
        IntegratorConfig {
            dt: self.config.dt,
            t_end: self.config.t_end,
            record_every: self.config.record_every,
            tolerance: self.config.tol,
            ..Default::default()
        }
    }

    fn projected(&self, cfg: &IntegratorConfig) -> Result<Trajectory> {
        Ok(integrate(
            &self.program,
            Flow::spld(self.config.mu)?,
            &self.x0,
            &self.lambda0,
            cfg,
            Some(&self.reference),
        )?)
    }

    /// Resolve `--kappa`. Under `auto` the estimate uses the reference fit
    /// and, when given, the boundary samples of a projected run.
    pub fn resolve_kappa(&self, projected: Option<&Trajectory>) -> Result<KappaReport> {
        let estimate = estimate_kappa(
            &self.program,
            self.config.mu,
            Some(&self.reference),
            projected,
            KAPPA_SAFETY,
        )?;
        Ok(match self.config.kappa {
            KappaChoice::Fixed(v) => KappaReport {
                value: v,
                estimate: Some(estimate),
                fallback: false,
            },
            KappaChoice::Auto => {
                let fallback = estimate.kappa.is_nan() || estimate.kappa <= 0.0;
                KappaReport {
                    value: if fallback {
                        AUTO_KAPPA_FALLBACK
                    } else {
                        estimate.kappa
                    },
                    estimate: Some(estimate),
                    fallback,
                }
            }
        })
    }

    fn spd_with_kappa(&self, cfg: &IntegratorConfig) -> Result<(Trajectory, KappaReport)> {
        let pre = match self.config.kappa {
            KappaChoice::Auto if self.program.m() > 0 => Some(self.projected(cfg)?),
            _ => None,
        };
        let kappa = self.resolve_kappa(pre.as_ref())?;
        let params = LagrangianParams::new(kappa.value, self.config.mu)?;
        let tr = integrate(
            &self.program,
            Flow::Spd(params),
            &self.x0,
            &self.lambda0,
            cfg,
            Some(&self.reference),
        )?;
        Ok((tr, kappa))
    }

    pub fn run(&self) -> Result<RunOutcome> {
        let cfg = self.integrator_config();
        let (trajectory, kappa, messages) = match self.config.mode {
            ScenarioMode::Spd => {
                let (tr, k) = self.spd_with_kappa(&cfg)?;
                (tr, Some(k), None)
            }
            ScenarioMode::Spld => (self.projected(&cfg)?, None, None),
            ScenarioMode::Distributed => {
                let graph = Graph::induced_by_program(&self.program);
                let (tr, stats) = run_distributed(
                    &self.program,
                    &graph,
                    self.config.mu,
                    &self.x0,
                    &self.lambda0,
                    &cfg,
                    Some(&self.reference),
                )?;
                (tr, None, Some(stats))
            }
        };
        let (certificate, certificate_note) = self.certify(&trajectory);
        Ok(RunOutcome {
            trajectory,
            kappa,
            certificate,
            certificate_note,
            messages,
        })
    }

    fn certify(
        &self,
        tr: &Trajectory,
    ) -> (Option<(RateCertificate, EnvelopeReport)>, Option<String>) {
        if self.program.m() > 0 {
            return (
                None,
                Some("rate certificate needs a problem without inequalities".into()),
            );
        }
        if !self.program.is_c11() {
            return (
                None,
                Some("rate certificate needs C^{1,1} objective terms".into()),
            );
        }
        if tr.status == RunStatus::NonFinite {
            return (None, Some("trajectory diverged".into()));
        }
        match rate_constants(&self.program, self.config.mu, tr, &self.reference) {
            Ok(cert) => {
                let report = check_envelope(tr, &self.reference, &cert, self.config.slack);
                (Some((cert, report)), None)
            }
            Err(e) => (None, Some(format!("rate certificate unavailable: {e}"))),
        }
    }

    /// Projected run, penalty estimate, then SPD with that weight from the
    /// same start. Early stopping is disabled so both runs share a time grid.
    pub fn compare(&self) -> Result<(CompareReport, Trajectory, Trajectory)> {
        let cfg = IntegratorConfig {
            tolerance: None,
            ..self.integrator_config()
        };
        let spld = self.projected(&cfg)?;
        let kappa = self.resolve_kappa(Some(&spld))?;
        let params = LagrangianParams::new(kappa.value, self.config.mu)?;
        let spd = integrate(
            &self.program,
            Flow::Spd(params),
            &self.x0,
            &self.lambda0,
            &cfg,
            Some(&self.reference),
        )?;
        let gap_tolerance = 10.0 * cfg.dt;
        let spd_final_max_g = spd.last().max_g;
        let below_bound = kappa
            .estimate
            .as_ref()
            .is_some_and(|e| kappa.value < e.multiplier_bound);
        let report = CompareReport {
            sup_gap: sup_gap(&spld, &spd),
            gap_tolerance,
            spld_x: spld.last().x.clone(),
            spld_lambda: spld.last().lambda.clone(),
            spd_x: spd.last().x.clone(),
            spd_lambda: spd.last().lambda.clone(),
            spld_max_g: spld
                .samples
                .iter()
                .map(|s| s.max_g)
                .fold(f64::NEG_INFINITY, f64::max),
            spd_final_max_g,
            kappa_inexact: spd_final_max_g > gap_tolerance || below_bound,
            kappa,
        };
        Ok((report, spld, spd))
    }

    pub fn distance_series(&self, tr: &Trajectory) -> Vec<(f64, f64)> {
        tr.samples
            .iter()
            .map(|s| (s.t, self.reference.distance(&s.x, &s.lambda)))
            .collect()
    }

    fn summary_json(&self, outcome: &RunOutcome) -> String {
        let last = outcome.trajectory.last();
        let summary = RunSummary {
            mode: self.config.mode,
            n: self.program.n(),
            p: self.program.p(),
            m: self.program.m(),
            mu: self.config.mu,
            dt: self.config.dt,
            t_end: self.config.t_end,
            seed: self.config.seed,
            init_range: self.init_range,
            status: outcome.trajectory.status,
            steps: outcome.trajectory.steps,
            final_residual: last.residual,
            final_max_g: last.max_g,
            final_distance: self.reference.distance(&last.x, &last.lambda),
            kappa: outcome.kappa.as_ref(),
            certificate_note: outcome.certificate_note.as_deref(),
            messages_total: outcome.messages.as_ref().map(MessageStats::total),
        };
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    }

    fn reference_json(&self) -> String {
        serde_json::to_string_pretty(&ReferenceExport {
            source: self.reference.source,
            x_star: &self.reference.x_star,
            lambda_star: &self.reference.lambda_star,
            f_star: self.reference.f_star,
        })
        .expect("reference serializes")
    }

    /// Write CSV, JSON and SVG artifacts into `dir`.
    pub fn write_artifacts(&self, outcome: &RunOutcome, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            std::fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
        };
        let tr = &outcome.trajectory;
        write("trajectory.csv", tr.to_csv())?;
        write("reference.json", self.reference_json())?;
        write("run.json", self.summary_json(outcome))?;
        if let Some((cert, report)) = &outcome.certificate {
            write(
                "certificate.json",
                CertificateExport::new(cert.clone(), report).to_json(),
            )?;
        }
        if let Some(stats) = &outcome.messages {
            write("messages.csv", stats.to_csv())?;
        }
        write("states.svg", states_chart(tr).render())?;
        write("multipliers.svg", multipliers_chart(tr).render())?;
        let envelope = outcome
            .certificate
            .as_ref()
            .map(|(c, _)| (c, self.config.slack));
        write(
            "convergence.svg",
            self.convergence_chart(tr, envelope).render(),
        )?;
        Ok(())
    }

    pub fn convergence_chart(
        &self,
        tr: &Trajectory,
        envelope: Option<(&RateCertificate, f64)>,
    ) -> Chart {
        let dist = self.distance_series(tr);
        let mut series = vec![Series::new("distance to saddle", dist.clone())];
        if let Some((cert, slack)) = envelope {
            let (t0, d0) = dist[0];
            let bound = dist
                .iter()
                .map(|&(t, _)| {
                    (
                        t,
                        slack * cert.envelope_coeff * d0 * (-cert.rate * (t - t0)).exp(),
                    )
                })
                .collect();
            series.push(Series::new("certified envelope", bound).dashed());
        }
        series.push(
            Series::new(
                "field norm",
                tr.samples.iter().map(|s| (s.t, s.residual)).collect(),
            )
            .dashed(),
        );
        Chart {
            title: "Convergence".into(),
            x_label: "t".into(),
            y_label: "log scale".into(),
            log_y: true,
            series,
        }
    }
}

pub fn states_chart(tr: &Trajectory) -> Chart {
    let n = tr.samples[0].x.len();
    Chart {
        title: "Agent states".into(),
        x_label: "t".into(),
        y_label: "x_i".into(),
        log_y: false,
        series: (0..n)
            .map(|i| {
                Series::new(
                    format!("x_{}", i + 1),
                    tr.samples.iter().map(|s| (s.t, s.x[i])).collect(),
                )
            })
            .collect(),
    }
}

pub fn multipliers_chart(tr: &Trajectory) -> Chart {
    let p = tr.samples[0].lambda.len();
    Chart {
        title: "Multipliers".into(),
        x_label: "t".into(),
        y_label: "lambda_l".into(),
        log_y: false,
        series: (0..p)
            .map(|l| {
                Series::new(
                    format!("lambda_{}", l + 1),
                    tr.samples.iter().map(|s| (s.t, s.lambda[l])).collect(),
                )
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kappa_and_range_parse() {
        assert_eq!("auto".parse::<KappaChoice>().unwrap(), KappaChoice::Auto);
        assert_eq!(
            "2.5".parse::<KappaChoice>().unwrap(),
            KappaChoice::Fixed(2.5)
        );
        assert!("-1".parse::<KappaChoice>().is_err());
        assert_eq!(
            "-1.5:0.5".parse::<InitRange>().unwrap(),
            InitRange { lo: -1.5, hi: 0.5 }
        );
        assert!("1:0".parse::<InitRange>().is_err());
        assert!("1".parse::<InitRange>().is_err());
    }

    #[test]
    fn draws_stay_in_the_half_open_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let r = InitRange { lo: 0.0, hi: 1.0 };
        let v = draw_uniform(&mut rng, 10_000, r);
        assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn same_seed_same_start() {
        let cfg = ScenarioConfig {
            seed: 11,
            ..Default::default()
        };
        let a = Scenario::prepare(cfg.clone()).unwrap();
        let b = Scenario::prepare(cfg).unwrap();
        assert_eq!(a.x0, b.x0);
        assert_eq!(a.lambda0, b.lambda0);
        assert!(a.x0.iter().all(|&x| x > -1.5 && x <= 0.5));
        assert_eq!(a.reference.source, ReferenceSource::Analytic);
    }

    #[test]
    fn auto_kappa_falls_back_without_inequalities() {
        let s = Scenario::prepare(ScenarioConfig {
            source: ProblemSource::Builtin(BuiltinName::Example2),
            n: Some(4),
            ..Default::default()
        })
        .unwrap();
        let k = s.resolve_kappa(None).unwrap();
        assert!(k.fallback);
        assert_eq!(k.value, AUTO_KAPPA_FALLBACK);
    }
}
