use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use pacest::Error;
use serde::Serialize;
use serde_json::{Map, Value};

mod run;

#[derive(Parser)]
#[command(name = "pacest", version, about = "Certify Gaussian perturbation for black-box mechanisms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Covariance-based analysis of a deterministic mechanism.
    AnalyzeDet(DetArgs),
    /// Distance-based analysis of a randomized mechanism.
    AnalyzeRand(RandArgs),
    /// Verify a perturbation proposal over a finite pool.
    Verify(VerifyArgs),
    /// Create a composition ledger with a budget schedule.
    LedgerInit(LedgerInitArgs),
    /// Run the next round of a composition ledger.
    LedgerStep(LedgerStepArgs),
    /// Combine certificates from earlier reports.
    Compose(ComposeArgs),
    /// Convert an MI budget into posterior success bounds.
    Bound(BoundArgs),
    /// Input-independent worst-case noise baselines.
    Baseline(BaselineArgs),
}

/// Flags that control the run but are not part of the echoed config.
#[derive(Args)]
struct Common {
    /// JSON config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report path; stdout when absent.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Worker threads, a count or "auto". PACEST_WORKERS overrides.
    #[arg(long)]
    workers: Option<String>,
    /// Record wall-clock time in the report.
    #[arg(long)]
    timing: bool,
}

/// Inline JSON, or `@path` to read it from a file.
#[derive(Clone, Debug, Serialize)]
#[serde(transparent)]
struct JsonArg(Value);

impl FromStr for JsonArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let text = match s.strip_prefix('@') {
            Some(path) => std::fs::read_to_string(path).map_err(|e| format!("{path}: {e}"))?,
            None => s.to_string(),
        };
        serde_json::from_str(&text).map(JsonArg).map_err(|e| e.to_string())
    }
}

/// Scenario flags shared by every command that produces PAC bounds.
#[derive(Args, Serialize)]
struct ScenarioArgs {
    /// Identification over this many equally likely candidates.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    candidates: Option<u64>,
    /// Membership prior p.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    membership_p: Option<f64>,
    /// User-supplied prior success rate.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_o: Option<f64>,
}

#[derive(Args, Serialize)]
struct DetArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Master seed.
    #[arg(long = "seed")]
    #[serde(rename = "master_seed", skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<JsonArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mechanism: Option<JsonArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    /// Dataset size for the zCDP baseline.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    /// Sensitivity for the zCDP baseline.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta2: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    scenarios: ScenarioArgs,
}

#[derive(Args, Serialize)]
struct RandArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long = "seed")]
    #[serde(rename = "master_seed", skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<JsonArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mechanism: Option<JsonArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    /// Extra τ values at which to report ψ̄.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_sweep: Option<Vec<u64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta2: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    scenarios: ScenarioArgs,
}

#[derive(Args, Serialize)]
struct VerifyArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long = "seed")]
    #[serde(rename = "master_seed", skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mechanism: Option<JsonArg>,
    /// Generator used to materialize the pool.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<JsonArg>,
    /// Number of datasets to materialize from the generator.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pool_size: Option<usize>,
    /// JSON file holding the pool as a list of row matrices.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pool_file: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    proposal: Option<JsonArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau1: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau2: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau3: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    beta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
    /// Monte-Carlo draws per KL term.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_mc: Option<u64>,
    /// Calibrate an isotropic top-up to reach this budget.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target_v: Option<f64>,
    /// Upper end of the top-up search.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha_max: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    scenarios: ScenarioArgs,
}

#[derive(Args, Serialize)]
struct LedgerInitArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ledger: Option<PathBuf>,
    #[arg(long = "seed")]
    #[serde(rename = "master_seed", skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    /// Cumulative budgets v_1 < … < v_T.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    schedule: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    m: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    c: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma: Option<f64>,
}

#[derive(Args, Serialize)]
struct LedgerStepArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    ledger: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    generator: Option<JsonArg>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mechanism: Option<JsonArg>,
    #[command(flatten)]
    #[serde(flatten)]
    scenarios: ScenarioArgs,
}

#[derive(Args, Serialize)]
struct ComposeArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Reports whose certificates are combined.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    reports: Option<Vec<PathBuf>>,
    /// "independent" or "shared".
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    scenarios: ScenarioArgs,
}

#[derive(Args, Serialize)]
struct BoundArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// MI budget in nats.
    #[arg(long, visible_alias = "v")]
    #[serde(skip_serializing_if = "Option::is_none")]
    mi: Option<f64>,
    /// Elements of an i.i.d. secret for the per-element bound.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    iid_n: Option<u64>,
    /// Prior success per i.i.d. element.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    prior_success: Option<f64>,
    #[command(flatten)]
    #[serde(flatten)]
    scenarios: ScenarioArgs,
}

#[derive(Args, Serialize)]
struct BaselineArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    d: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta2: Option<f64>,
    /// Data covariance spectrum for the Gaussian-mean noise gap.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    eigenvalues: Option<Vec<f64>>,
}

/// Config file keys overlaid with the flags that were given.
fn merged(common: &Common, flags: &impl Serialize) -> pacest::Result<Value> {
    let mut map = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            match serde_json::from_str(&text)? {
                Value::Object(m) => m,
                _ => return Err(Error::input(format!("{}: config must be a JSON object", path.display()))),
            }
        }
        None => Map::new(),
    };
    if let Value::Object(f) = serde_json::to_value(flags)? {
        map.extend(f);
    }
    Ok(Value::Object(map))
}

fn workers(common: &Common) -> pacest::Result<Option<usize>> {
    let raw = std::env::var("PACEST_WORKERS").ok().or_else(|| common.workers.clone());
    match raw.as_deref().map(str::trim) {
        None | Some("auto") => Ok(None),
        Some(s) => s
            .parse()
            .map(Some)
            .map_err(|_| Error::input(format!("workers must be a count or \"auto\", got {s:?}"))),
    }
}

fn dispatch(cmd: Command) -> pacest::Result<run::Outcome> {
    macro_rules! go {
        ($name:literal, $args:expr, $f:path) => {{
            let a = $args;
            let cfg = merged(&a.common, &a)?;
            let exec = pacest::Executor::new(workers(&a.common)?)?;
            let started = std::time::Instant::now();
            let mut out = $f(cfg, &exec)?;
            out.report.command = $name.into();
            if a.common.timing {
                out.report.timing = Some(serde_json::json!({
                    "wall_seconds": started.elapsed().as_secs_f64(),
                    "workers": exec.workers(),
                }));
            }
            run::write(&out.report, a.common.output.as_deref())?;
            Ok(out)
        }};
    }
    match cmd {
        Command::AnalyzeDet(a) => go!("analyze-det", a, run::analyze_det),
        Command::AnalyzeRand(a) => go!("analyze-rand", a, run::analyze_rand),
        Command::Verify(a) => go!("verify", a, run::verify),
        Command::LedgerInit(a) => go!("ledger-init", a, run::ledger_init),
        Command::LedgerStep(a) => go!("ledger-step", a, run::ledger_step),
        Command::Compose(a) => go!("compose", a, run::compose),
        Command::Bound(a) => go!("bound", a, run::bound),
        Command::Baseline(a) => go!("baseline", a, run::baseline),
    }
}

fn fail(code: &str, message: String, trial: Option<u64>) -> ExitCode {
    let body = serde_json::json!({ "code": code, "message": message, "trial": trial });
    eprintln!("{body}");
    ExitCode::from(1)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("INPUT", e.to_string().trim_end().to_string(), None),
    };
    match dispatch(cli.command) {
        Ok(out) if out.warnings => ExitCode::from(2),
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => fail(e.code(), e.to_string(), e.trial()),
    }
}
