use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sgpg::analysis::{brute_force_deterministic_nash, classify_equilibrium};
use sgpg::estimators::estimator_stats;
use sgpg::game::{builtin_game, load_game, parse_builtin_spec};
use sgpg::policy::parse_policy_json;
use sgpg::simulation::RngState;
use sgpg::{Error, ErrorClass, GameSpec, PolicyProfile};

mod experiment;

use experiment::{run_sweep, Prepared, RunArgs};

#[derive(Parser)]
#[command(name = "sgpg", version, about = "Policy-gradient learning in stochastic games with random stopping")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and validate a game, printing a short description
    Validate {
        /// `builtin:NAME[:k=v,...]` or a path to a game JSON file
        #[arg(long)]
        game: String,
    },
    /// Classify a policy, or enumerate deterministic Nash profiles
    Analyze {
        #[arg(long)]
        game: String,
        /// Policy file to classify
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Enumerate and classify every deterministic Nash profile
        #[arg(long = "brute-force")]
        brute_force: bool,
        /// Tolerance for Nash and strictness tests
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one learner over several seeds
    Run {
        #[command(flatten)]
        args: RunArgs,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Record wall time in the summary (makes it non-reproducible)
        #[arg(long)]
        timing: bool,
    },
    /// Run the cross product described by a sweep file
    Sweep {
        /// JSON file with a `base` run and arrays over gamma, p, seeds
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo statistics of the REINFORCE estimator at a policy
    EstimatorStats {
        #[arg(long)]
        game: String,
        /// Policy file (default: uniform)
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Exploration mixed into the policy before sampling
        #[arg(long, default_value_t = 0.0)]
        eps: f64,
        #[arg(long, default_value_t = 10_000)]
        draws: usize,
        #[arg(long = "master-seed", visible_alias = "seed", default_value_t = 0)]
        master_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Machine-readable failure written to stderr.
#[derive(Debug, Serialize)]
pub struct CliError {
    code: String,
    message: String,
    issues: Vec<String>,
    #[serde(skip)]
    exit: u8,
}

impl CliError {
    pub fn runtime(code: &str, message: String) -> Self {
        CliError {
            code: code.to_string(),
            message,
            issues: Vec::new(),
            exit: 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError {
            code: e.code().to_string(),
            message: e.to_string(),
            issues: e.issue_codes().into_iter().map(String::from).collect(),
            exit: match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Runtime => 3,
            },
        }
    }
}

/// Resolves `builtin:SPEC` or a file path into a validated game.
pub fn resolve_game(spec: &str) -> sgpg::Result<(GameSpec, Vec<String>)> {
    match spec.strip_prefix("builtin:") {
        Some(rest) => {
            let (name, params) = parse_builtin_spec(rest)?;
            Ok((builtin_game(&name, &params)?, Vec::new()))
        }
        None => {
            let v = load_game(Path::new(spec))?;
            Ok((v.game, v.warnings))
        }
    }
}

pub fn load_policy(path: &Path, game: &GameSpec) -> sgpg::Result<PolicyProfile> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_policy_json(&text, game.shape()).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            context: path.display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> sgpg::Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn emit<T: Serialize>(out: Option<&Path>, value: &T) -> sgpg::Result<()> {
    match out {
        Some(path) => write_json(path, value),
        None => {
            println!("{}", serde_json::to_string_pretty(value).expect("value serializes"));
            Ok(())
        }
    }
}

fn validate(game: &str) -> Result<(), CliError> {
    let (g, warnings) = resolve_game(game)?;
    emit(
        None,
        &json!({
            "valid": true,
            "states": g.n_states(),
            "players": g.n_players(),
            "actions": g.actions(),
            "zeta_min": g.zeta_min(),
            "constant_stop": g.constant_stop(),
            "warnings": warnings,
        }),
    )?;
    Ok(())
}

fn analyze(game: &str, policy: Option<&Path>, brute_force: bool, tol: f64, out: Option<&Path>) -> Result<(), CliError> {
    let (g, _) = resolve_game(game)?;
    if policy.is_none() && !brute_force {
        return Err(Error::BadParams("analyze needs --policy or --brute-force".into()).into());
    }
    let report = match policy {
        Some(path) => Some(serde_json::to_value(classify_equilibrium(&g, &load_policy(path, &g)?, tol)?).unwrap()),
        None => None,
    };
    let value = if brute_force {
        let nash = brute_force_deterministic_nash(&g)?
            .into_iter()
            .map(|pi| {
                let rep = classify_equilibrium(&g, &pi, tol)?;
                Ok(json!({ "policy": pi.to_nested(), "report": rep }))
            })
            .collect::<sgpg::Result<Vec<Value>>>()?;
        json!({ "nash": nash, "policy_report": report })
    } else {
        report.expect("policy given")
    };
    emit(out, &value)?;
    Ok(())
}

fn estimator(
    game: &str,
    policy: Option<&Path>,
    eps: f64,
    draws: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let (g, _) = resolve_game(game)?;
    let pi = match policy {
        Some(path) => load_policy(path, &g)?,
        None => PolicyProfile::uniform(g.shape()),
    };
    let stats = estimator_stats(&g, &pi, eps, draws, &mut RngState::new(seed, 0))?;
    emit(out, &stats)?;
    Ok(())
}

fn configure_pool() -> Result<(), CliError> {
    let Ok(text) = std::env::var("SGPG_THREADS") else {
        return Ok(());
    };
    let n: usize = text
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Error::BadParams(format!("SGPG_THREADS: expected a positive integer, got `{text}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::runtime("THREAD_POOL", e.to_string()))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    configure_pool()?;
    match cli.command {
        Command::Validate { game } => validate(&game),
        Command::Analyze {
            game,
            policy,
            brute_force,
            tol,
            out,
        } => analyze(&game, policy.as_deref(), brute_force, tol, out.as_deref()),
        Command::Run { args, out, timing } => Prepared::new(args)?.execute(&out, timing).map(|_| ()),
        Command::Sweep { config, out } => run_sweep(&config, &out),
        Command::EstimatorStats {
            game,
            policy,
            eps,
            draws,
            master_seed,
            out,
        } => estimator(&game, policy.as_deref(), eps, draws, master_seed, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e).expect("error serializes"));
            ExitCode::from(e.exit)
        }
    }
}
