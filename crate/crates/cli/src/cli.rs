//! Argument parsing and command dispatch.

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::scenario::{
    BuiltinName, InitRange, KappaChoice, ProblemSource, RunOutcome, Scenario, ScenarioConfig,
    ScenarioMode,
};

#[derive(Debug, Parser)]
#[command(
    name = "saddleflow",
    version,
    about = "Saddle-point dynamics for nonsmooth convex programs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate one flow and write trajectory, certificate and plots.
    Run(ScenarioArgs),
    /// Run the projected flow, estimate the penalty, run SPD with it and
    /// report the gap between the two.
    Compare(ScenarioArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    /// Builtin program (default example1 when no problem file is given).
    #[arg(long, value_enum, conflicts_with = "problem")]
    pub builtin: Option<BuiltinName>,
    /// JSON problem file.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Number of agents for a builtin.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum, default_value_t = ScenarioMode::Spd)]
    pub mode: ScenarioMode,
    /// Quadratic penalty parameter, in (0, 1).
    #[arg(long, default_value_t = 0.5)]
    pub mu: f64,
    /// Penalty weight on the inequalities, or `auto`.
    #[arg(long, default_value = "auto")]
    pub kappa: KappaChoice,
    #[arg(long, default_value_t = 1e-3)]
    pub dt: f64,
    #[arg(long = "t-end", default_value_t = 200.0)]
    pub t_end: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Interval `lo:hi` for the random initial condition.
    #[arg(long, allow_hyphen_values = true)]
    pub init_range: Option<InitRange>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Keep every k-th step in the trajectory.
    #[arg(long, default_value_t = 100)]
    pub record_every: usize,
    /// Multiplicative slack on the certified envelope.
    #[arg(long, default_value_t = 1.05)]
    pub slack: f64,
    /// Stop once the field norm drops below this value; 0 disables.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

impl ScenarioArgs {
    pub fn to_config(&self) -> ScenarioConfig {
        let source = match (&self.problem, self.builtin) {
            (Some(path), _) => ProblemSource::File(path.clone()),
            (None, b) => ProblemSource::Builtin(b.unwrap_or(BuiltinName::Example1)),
        };
        ScenarioConfig {
            source,
            n: self.n,
            mode: self.mode,
            mu: self.mu,
            kappa: self.kappa,
            dt: self.dt,
            t_end: self.t_end,
            seed: self.seed,
            init_range: self.init_range,
            out: Some(self.out.clone()),
            record_every: self.record_every,
            slack: self.slack,
            tol: (self.tol > 0.0).then_some(self.tol),
        }
    }
}

fn describe(scenario: &Scenario, outcome: &RunOutcome) -> String {
    let tr = &outcome.trajectory;
    let last = tr.last();
    let mut lines = vec![
        format!(
            "status: {:?} after {} steps (t = {})",
            tr.status, tr.steps, last.t
        ),
        format!("field norm: {:.3e}", last.residual),
        if scenario.program.m() == 0 {
            "max g: none (no inequalities)".to_string()
        } else {
            format!("max g: {:.3e}", last.max_g)
        },
        format!(
            "distance to reference ({:?}): {:.3e}",
            scenario.reference.source,
            scenario.reference.distance(&last.x, &last.lambda)
        ),
    ];
    if let Some(k) = &outcome.kappa {
        let how = if k.fallback {
            "auto, estimate was zero"
        } else if matches!(scenario.config.kappa, KappaChoice::Auto) {
            "auto"
        } else {
            "fixed"
        };
        lines.push(format!("kappa: {} ({how})", k.value));
    }
    match (&outcome.certificate, &outcome.certificate_note) {
        (Some((c, r)), _) => lines.push(format!(
            "certificate: rate {:.4e}, coefficient {:.4}, envelope {} (max ratio {:.3})",
            c.rate,
            c.envelope_coeff,
            if r.pass { "holds" } else { "violated" },
            r.max_ratio
        )),
        (None, Some(note)) => lines.push(format!("certificate: none ({note})")),
        (None, None) => {}
    }
    if let Some(m) = &outcome.messages {
        lines.push(format!(
            "messages: {} scalars over {} rounds",
            m.total(),
            m.scalars_per_round.len()
        ));
    }
    lines.join("\n")
}

/// Execute a parsed command; returns the process exit code.
pub fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Run(args) => {
            let scenario = Scenario::prepare(args.to_config())?;
            let outcome = scenario.run()?;
            scenario.write_artifacts(&outcome, &args.out)?;
            println!("{}", describe(&scenario, &outcome));
            println!("artifacts: {}", args.out.display());
            Ok(outcome.exit_code())
        }
        Command::Compare(args) => {
            let scenario = Scenario::prepare(args.to_config())?;
            let (report, spld, spd) = scenario.compare()?;
            std::fs::create_dir_all(&args.out)?;
            std::fs::write(args.out.join("compare.json"), report.to_json())?;
            spld.write_csv(args.out.join("trajectory_spld.csv"))?;
            spd.write_csv(args.out.join("trajectory_spd.csv"))?;
            println!(
                "kappa {} | sup gap {:.3e} (tolerance {:.1e}) | SPD final max g {:.3e}{}",
                report.kappa.value,
                report.sup_gap,
                report.gap_tolerance,
                report.spd_final_max_g,
                if report.kappa_inexact {
                    " | kappa inexact"
                } else {
                    ""
                }
            );
            Ok(if report.within_tolerance() && !report.kappa_inexact {
                0
            } else {
                2
            })
        }
    }
}
