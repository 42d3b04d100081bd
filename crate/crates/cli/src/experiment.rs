use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sgpg::analysis::{
    brute_force_deterministic_nash, classify_equilibrium, fit_rate_in_basin, BasinRateReport, Classification,
    FitOptions,
};
use sgpg::estimators::{Feedback, Model, NoiseConfig, NoiseKind};
use sgpg::learners::{lazy_basin_scores, near_policy, run_experiment, Algo, Init, RunConfig, RunLog, Schedule, StepMode};
use sgpg::simulation::RngState;
use sgpg::{Error, GameSpec, PolicyProfile, Result};

use crate::{load_policy, resolve_game, write_json, CliError};

const NASH_TOL: f64 = 1e-8;

/// Everything needed to launch a batch of seeds. Shared between `run`
/// flags and the `base` object of a sweep file.
#[derive(Debug, Clone, PartialEq, clap::Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunArgs {
    /// `builtin:NAME[:k=v,...]` or a path to a game JSON file
    #[arg(long)]
    pub game: String,
    #[arg(long, default_value = "full", value_parser = ["full", "stochastic", "value_based"])]
    pub model: String,
    #[arg(long, default_value = "pg", value_parser = ["pg", "lpg"])]
    pub algo: String,
    /// `geometric` allows constant steps (p in [0, 1]) with full feedback
    #[arg(long, default_value = "standard", value_parser = ["standard", "geometric"])]
    pub mode: String,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub m: f64,
    #[arg(long, default_value_t = 1.0)]
    pub p: f64,
    #[arg(long, default_value_t = 0.5)]
    pub eps0: f64,
    #[arg(long = "r-exp", default_value_t = 0.5)]
    pub r_exp: f64,
    #[arg(long, default_value_t = 1000)]
    pub horizon: usize,
    /// Number of independent runs
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    /// Run k draws from stream k of this seed
    #[arg(long = "master-seed", visible_alias = "seed", default_value_t = 0)]
    pub master_seed: u64,
    /// `uniform`, `near:R`, `lazy:M` or a policy file
    #[arg(long, default_value = "uniform")]
    pub init: String,
    /// Policy file or `brute-force` (strict Nash profile nearest the start)
    #[arg(long = "pi-star")]
    pub pi_star: Option<String>,
    /// Episodes per value-based signal
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value = "uniform", value_parser = ["uniform", "gaussian"])]
    pub noise: String,
    /// Noise half-width (uniform) or standard deviation (gaussian)
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Runs leaving this ball around the target are excluded from the rate fit
    #[arg(long = "basin-radius", default_value_t = 0.5)]
    pub basin_radius: f64,
    /// Rate-fit window `LO,HI` (default: last two decades of the horizon)
    #[arg(long)]
    pub window: Option<String>,
    /// Average the rate curve in this many log-spaced bins
    #[arg(long = "log-bins")]
    pub log_bins: Option<usize>,
    /// Confidence level, echoed in the summary only
    #[arg(long)]
    pub delta: Option<f64>,
    /// Log the first-order residual at every iterate
    #[arg(long = "log-fos")]
    pub log_fos: bool,
}

impl Default for RunArgs {
    fn default() -> Self {
        RunArgs {
            game: String::new(),
            model: "full".into(),
            algo: "pg".into(),
            mode: "standard".into(),
            gamma: 0.1,
            m: 0.0,
            p: 1.0,
            eps0: 0.5,
            r_exp: 0.5,
            horizon: 1000,
            seeds: 1,
            master_seed: 0,
            init: "uniform".into(),
            pi_star: None,
            batch: 1,
            noise: "uniform".into(),
            sigma: 1.0,
            basin_radius: 0.5,
            window: None,
            log_bins: None,
            delta: None,
            log_fos: false,
        }
    }
}

/// A fully resolved batch: validated game, schedule, start and target.
pub struct Prepared {
    pub args: RunArgs,
    game: GameSpec,
    config: RunConfig,
    init: Init,
    target: Option<PolicyProfile>,
    window: (usize, usize),
}

fn bad(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::BadParams(format!("{field}: {msg}"))
}

fn parse_field<T: std::str::FromStr>(field: &str, text: &str) -> Result<T> {
    text.trim().parse().map_err(|_| bad(field, format!("cannot parse `{text}`")))
}

impl Prepared {
    pub fn new(args: RunArgs) -> Result<Prepared> {
        if args.game.is_empty() {
            return Err(bad("game", "missing"));
        }
        if args.horizon == 0 {
            return Err(bad("horizon", "must be at least 1"));
        }
        if args.seeds == 0 {
            return Err(bad("seeds", "must be at least 1"));
        }
        let (game, _) = resolve_game(&args.game)?;
        let model: Model = args.model.parse()?;
        let algo: Algo = args.algo.parse()?;
        let mode = match args.mode.as_str() {
            "standard" => StepMode::Standard,
            "geometric" => StepMode::Geometric,
            other => return Err(bad("mode", format!("unknown mode `{other}`"))),
        };
        let schedule = Schedule::new(args.gamma, args.m, args.p, args.eps0, args.r_exp, mode, model)?;
        let feedback = match model {
            Model::Full => Feedback::Full,
            Model::Stochastic => {
                let kind = match args.noise.as_str() {
                    "uniform" => NoiseKind::Uniform,
                    "gaussian" => NoiseKind::Gaussian,
                    other => return Err(bad("noise", format!("unknown noise `{other}`"))),
                };
                if !(args.sigma >= 0.0 && args.sigma.is_finite()) {
                    return Err(bad("sigma", "must be finite and nonnegative"));
                }
                Feedback::Stochastic(NoiseConfig { kind, sigma: args.sigma })
            }
            Model::ValueBased => {
                if args.batch == 0 {
                    return Err(bad("batch", "must be at least 1"));
                }
                Feedback::ValueBased { batch: args.batch }
            }
        };
        let config = RunConfig {
            feedback,
            algo,
            schedule,
            horizon: args.horizon,
            log_fos: args.log_fos,
            keep_iterates: false,
        };

        let explicit_init = match args.init.as_str() {
            "uniform" => Some(PolicyProfile::uniform(game.shape())),
            s if s.starts_with("near:") || s.starts_with("lazy:") => None,
            path => Some(load_policy(Path::new(path), &game)?),
        };
        let target = match args.pi_star.as_deref() {
            None => None,
            Some("brute-force") => {
                let start = explicit_init.clone().unwrap_or_else(|| PolicyProfile::uniform(game.shape()));
                Some(nearest_strict_nash(&game, &start)?)
            }
            Some(path) => Some(load_policy(Path::new(path), &game)?),
        };
        let init = match (&explicit_init, args.init.split_once(':')) {
            (Some(pi), _) => Init::Policy(pi.clone()),
            (None, Some((kind, value))) => {
                let star = target
                    .as_ref()
                    .ok_or_else(|| bad("init", format!("`{kind}:` needs --pi-star")))?;
                if kind == "near" {
                    Init::Policy(near_policy(star, parse_field("init", value)?)?)
                } else {
                    Init::Scores(lazy_basin_scores(star, parse_field("init", value)?)?)
                }
            }
            (None, None) => unreachable!(),
        };

        let window = match &args.window {
            Some(text) => {
                let (lo, hi) = text
                    .split_once(',')
                    .ok_or_else(|| bad("window", "expected LO,HI"))?;
                let w: (usize, usize) = (parse_field("window", lo)?, parse_field("window", hi)?);
                if w.0 == 0 || w.0 >= w.1 || w.1 > args.horizon {
                    return Err(bad("window", "need 1 <= LO < HI <= horizon"));
                }
                w
            }
            None => ((args.horizon / 100).max(1), args.horizon),
        };
        if !(args.basin_radius > 0.0) {
            return Err(bad("basin-radius", "must be positive"));
        }
        Ok(Prepared {
            args,
            game,
            config,
            init,
            target,
            window,
        })
    }

    /// Runs every seed, writes the per-seed files and `summary.json`, and
    /// returns the summary.
    pub fn execute(&self, out: &Path, timing: bool) -> std::result::Result<Value, CliError> {
        std::fs::create_dir_all(out).map_err(|source| Error::Io {
            path: out.display().to_string(),
            source,
        })?;
        let started = Instant::now();
        let logs: Vec<RunLog> = (0..self.args.seeds)
            .into_par_iter()
            .map(|k| {
                let rng = RngState::new(self.args.master_seed, k as u64);
                let log = run_experiment(&self.game, &self.config, self.init.clone(), self.target.as_ref(), rng)?;
                log.save_csv(&out.join(format!("seed_{k}.csv")))?;
                write_json(&out.join(format!("seed_{k}.json")), &log.sidecar())?;
                Ok(log)
            })
            .collect::<Result<_>>()?;

        let mut summary = self.summarize(&logs);
        if timing {
            summary["wall_seconds"] = json!(started.elapsed().as_secs_f64());
        }
        write_json(&out.join("summary.json"), &summary)?;
        if let Some((k, f)) = logs.iter().enumerate().find_map(|(k, l)| l.failure.as_ref().map(|f| (k, f))) {
            return Err(CliError::runtime(
                &f.code,
                format!("seed {k} stopped at iteration {}: {}", f.n, f.message),
            ));
        }
        Ok(summary)
    }

    fn summarize(&self, logs: &[RunLog]) -> Value {
        let finals: Vec<f64> = logs
            .iter()
            .filter_map(|l| l.records.last().and_then(|r| r.dist_sq))
            .collect();
        let n0s: Vec<f64> = logs.iter().filter_map(|l| l.n0.map(|n| n as f64)).collect();
        let rate = self.target.as_ref().map(|_| {
            let opts = FitOptions { log_bins: self.args.log_bins };
            match fit_rate_in_basin(logs, self.window, self.args.basin_radius, opts) {
                Ok(report) => rate_json(&report),
                Err(e) => json!({ "error": e.to_string() }),
            }
        });
        json!({
            "args": self.args,
            "window": [self.window.0, self.window.1],
            "target": self.target.as_ref().map(|t| t.to_nested()),
            "runs": logs.len(),
            "failures": logs.iter().filter(|l| l.failure.is_some()).count(),
            "final_dist_sq": {
                "mean": mean(&finals),
                "median": median(&finals),
            },
            "n0": {
                "reached": n0s.len(),
                "min": n0s.iter().copied().reduce(f64::min),
                "median": median(&n0s),
                "max": n0s.iter().copied().reduce(f64::max),
            },
            "rate_fit": rate,
        })
    }
}

fn rate_json(report: &BasinRateReport) -> Value {
    serde_json::to_value(report).expect("report serializes")
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[mid] } else { (v[mid - 1] + v[mid]) / 2.0 })
}

fn nearest_strict_nash(game: &GameSpec, start: &PolicyProfile) -> Result<PolicyProfile> {
    let mut best: Option<(f64, PolicyProfile)> = None;
    for pi in brute_force_deterministic_nash(game)? {
        if classify_equilibrium(game, &pi, NASH_TOL)?.classification != Classification::StrictNash {
            continue;
        }
        let d = pi.dist_sq(start);
        if best.as_ref().is_none_or(|(b, _)| d < *b) {
            best = Some((d, pi));
        }
    }
    best.map(|(_, pi)| pi)
        .ok_or_else(|| bad("pi-star", "brute force found no strict Nash profile"))
}

/// A sweep file: base arguments plus optional grids over γ, p and the seed
/// count. Entries are the cross product in that nesting order.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepFile {
    pub base: RunArgs,
    #[serde(default)]
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub p: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<usize>,
}

impl SweepFile {
    pub fn entries(&self) -> Vec<RunArgs> {
        let or_base = |v: &[f64], b: f64| if v.is_empty() { vec![b] } else { v.to_vec() };
        let gammas = or_base(&self.gamma, self.base.gamma);
        let ps = or_base(&self.p, self.base.p);
        let seeds = if self.seeds.is_empty() { vec![self.base.seeds] } else { self.seeds.clone() };
        let mut out = Vec::new();
        for &gamma in &gammas {
            for &p in &ps {
                for &s in &seeds {
                    out.push(RunArgs {
                        gamma,
                        p,
                        seeds: s,
                        ..self.base.clone()
                    });
                }
            }
        }
        out
    }
}

const SWEEP_HEADER: [&str; 12] = [
    "entry",
    "gamma",
    "p",
    "seeds",
    "final_dist_sq_mean",
    "final_dist_sq_median",
    "n0_reached",
    "n0_median",
    "slope",
    "slope_std_err",
    "exclusion_fraction",
    "failures",
];

pub fn run_sweep(file: &Path, out: &Path) -> std::result::Result<(), CliError> {
    let text = std::fs::read_to_string(file).map_err(|source| Error::Io {
        path: file.display().to_string(),
        source,
    })?;
    let sweep: SweepFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: file.display().to_string(),
        message: e.to_string(),
    })?;
    // resolve everything first so a bad entry fails before any run starts
    let prepared = sweep
        .entries()
        .into_iter()
        .enumerate()
        .map(|(k, args)| {
            Prepared::new(args).map_err(|e| match e {
                Error::BadParams(m) => Error::BadParams(format!("entry {k}: {m}")),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<(PathBuf, std::result::Result<Value, CliError>)> = prepared
        .par_iter()
        .enumerate()
        .map(|(k, prep)| {
            let dir = out.join(format!("entry_{k:03}"));
            let res = prep.execute(&dir, false);
            (dir, res)
        })
        .collect();

    let mut rows = Vec::new();
    let mut first_err = None;
    for (k, (prep, (_, res))) in prepared.iter().zip(results).enumerate() {
        let summary = match res {
            Ok(s) => s,
            Err(e) => {
                first_err.get_or_insert(e);
                Value::Null
            }
        };
        rows.push(sweep_row(k, &prep.args, &summary));
    }
    write_sweep_csv(&out.join("sweep_summary.csv"), &rows)?;
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn sweep_row(k: usize, args: &RunArgs, s: &Value) -> Vec<String> {
    let num = |v: &Value| v.as_f64().map(|x| format!("{x:e}")).unwrap_or_default();
    let fit = &s["rate_fit"]["fit"];
    vec![
        k.to_string(),
        format!("{:e}", args.gamma),
        format!("{:e}", args.p),
        args.seeds.to_string(),
        num(&s["final_dist_sq"]["mean"]),
        num(&s["final_dist_sq"]["median"]),
        s["n0"]["reached"].as_u64().map(|n| n.to_string()).unwrap_or_default(),
        num(&s["n0"]["median"]),
        num(&fit["slope"]),
        num(&fit["std_err"]),
        num(&s["rate_fit"]["exclusion_fraction"]),
        s["failures"].as_u64().map(|n| n.to_string()).unwrap_or_default(),
    ]
}

fn write_sweep_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let io = |e: csv::Error| Error::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(SWEEP_HEADER).map_err(io)?;
    for row in rows {
        w.write_record(row).map_err(io)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::Parser;

    #[derive(Parser)]
    struct Wrapper {
        #[command(flatten)]
        args: RunArgs,
    }

    #[test]
    fn flag_defaults_match_file_defaults() {
        let parsed = Wrapper::parse_from(["x", "--game", "builtin:coord2"]).args;
        let from_file: RunArgs = serde_json::from_str(r#"{"game": "builtin:coord2"}"#).unwrap();
        assert_eq!(parsed, from_file);
    }

    #[test]
    fn sweep_expands_cross_product() {
        let sweep: SweepFile =
            serde_json::from_str(r#"{"base": {"game": "builtin:coord2"}, "gamma": [0.1, 0.2], "p": [0.8, 0.9, 1.0]}"#)
                .unwrap();
        let entries = sweep.entries();
        assert_eq!(entries.len(), 6);
        assert_eq!((entries[4].gamma, entries[4].p, entries[4].seeds), (0.2, 0.9, 1));
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
