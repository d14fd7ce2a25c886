// Negated float comparisons reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod report;
mod scenario;
mod tasks;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use report::{emit_plotdata, Report, TaskRecord};
use scenario::{Loaded, SchemaError};
use tasks::{Runner, Settings, TaskError};

const OUT_ENV: &str = "LORPROD_OUT";
const DEFAULT_OUT: &str = "lorprod_out";
const DEFAULT_TOL: f64 = 1e-6;

const EXIT_NUMERICAL: u8 = 1;
const EXIT_SCHEMA: u8 = 2;
const EXIT_UNWRITABLE: u8 = 3;

/// Causal structure and curvature audits on discretized Lorentzian products.
#[derive(Parser)]
#[command(name = "lorprod", version)]
struct Cli {
    /// Output directory (default: scenario `output_dir`, then $LORPROD_OUT, then ./lorprod_out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for all sampling; overrides the scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Default tolerance for tasks that compare against expected values.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Run push-up even when log-Lipschitz regularity is not certified.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every task of a scenario in order.
    Run { scenario: PathBuf },
    /// Time separations and the tau table.
    Tau { scenario: PathBuf },
    /// Maximizing DAG curves.
    Maximizer { scenario: PathBuf },
    /// Push-up on chains q ≤ p ≪ r.
    Pushup { scenario: PathBuf },
    /// Null-step audit of maximizers and the Q residual sweep.
    Regularity { scenario: PathBuf },
    /// Properness partial sums and causal diamonds.
    Hyperbolicity { scenario: PathBuf },
    /// Log-Lipschitz verifier.
    VerifyLip { scenario: PathBuf },
    /// Weak timelike curvature-dimension probe.
    Tcd { scenario: PathBuf },
    /// Concavity rigidity of slice densities.
    Rigidity { scenario: PathBuf },
    /// Bubbling demonstration on a non-Lipschitz family.
    DemoBubble { scenario: PathBuf },
}

impl Command {
    fn parts(&self) -> (&PathBuf, Option<&'static str>) {
        match self {
            Command::Run { scenario } => (scenario, None),
            Command::Tau { scenario } => (scenario, Some("tau")),
            Command::Maximizer { scenario } => (scenario, Some("maximizer")),
            Command::Pushup { scenario } => (scenario, Some("pushup")),
            Command::Regularity { scenario } => (scenario, Some("regularity")),
            Command::Hyperbolicity { scenario } => (scenario, Some("hyperbolicity")),
            Command::VerifyLip { scenario } => (scenario, Some("verify-lip")),
            Command::Tcd { scenario } => (scenario, Some("tcd")),
            Command::Rigidity { scenario } => (scenario, Some("rigidity")),
            Command::DemoBubble { scenario } => (scenario, Some("demo-bubble")),
        }
    }
}

fn schema_exit(e: &SchemaError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(EXIT_SCHEMA)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (path, only) = cli.command.parts();
    let mut loaded: Loaded = match scenario::load(path) {
        Ok(l) => l,
        Err(e) => return schema_exit(&e),
    };
    if let Some(kind) = only {
        loaded.scenario.tasks.retain(|t| t.task.kind() == kind);
        if loaded.scenario.tasks.is_empty() {
            return schema_exit(&SchemaError { pointer: "/tasks".into(), message: format!("scenario defines no `{kind}` task") });
        }
    }
    let out = cli
        .out
        .clone()
        .or_else(|| loaded.scenario.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let settings = Settings { seed: cli.seed.unwrap_or(loaded.scenario.seed), tol: cli.tol.unwrap_or(DEFAULT_TOL), force: cli.force };
    let mut report = Report {
        scenario: loaded.scenario.name.clone(),
        seed: settings.seed,
        tol: settings.tol,
        force: settings.force,
        tasks: Vec::new(),
    };
    let runner = Runner::new(&loaded, settings);
    for (i, spec) in loaded.scenario.tasks.iter().enumerate() {
        let name = spec.name();
        let (status, error, result, artifacts) = match runner.run(i, spec) {
            Ok(o) => (if o.passed { "pass" } else { "fail" }, None, o.result, o.artifacts),
            Err(TaskError::Schema(e)) => return schema_exit(&e),
            Err(TaskError::Numerical(msg)) => ("error", Some(msg), serde_json::Value::Null, vec![]),
        };
        println!("{name} ({}): {status}{}", spec.task.kind(), if spec.gating { " [gating]" } else { "" });
        if let Some(msg) = &error {
            eprintln!("error: task {name} failed: {msg}");
        }
        report.tasks.push(TaskRecord { name, kind: spec.task.kind(), gating: spec.gating, status, error, result, artifacts });
    }
    if let Err(e) = emit_plotdata(&report, &out) {
        eprintln!("error: cannot write to {}: {e}", out.display());
        return ExitCode::from(EXIT_UNWRITABLE);
    }
    let (errors, failures) = (report.errors(), report.gating_failures());
    if !errors.is_empty() || !failures.is_empty() {
        for name in failures {
            eprintln!("error: gating task {name} failed");
        }
        return ExitCode::from(EXIT_NUMERICAL);
    }
    ExitCode::SUCCESS
}
