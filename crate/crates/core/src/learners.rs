//! Projected (PG) and lazy (LPG) policy-gradient loops.
//!
//! Iterations are 1-indexed. Row `n` of a [`RunLog`] describes the iterate
//! `π_n` (with `π_1` the initial policy) together with the step size `γ_n`
//! and exploration `ε_n` of the update that maps `π_n` to `π_{n+1}`. A run
//! with horizon `N` logs `π_1, …, π_N`.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{make_signal, Feedback, Model};
use crate::game::GameSpec;
use crate::geometry::{fos_residual, project_policy_certified};
use crate::policy::{PolicyProfile, PolicyShape};
use crate::simulation::RngState;

/// Tolerance for declaring a mixed target reached.
pub const MIXED_HIT_TOL: f64 = 1e-8;
/// KKT certificates are checked on every `KKT_EVERY`-th update.
pub const KKT_EVERY: usize = 100;
pub const KKT_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepMode {
    /// Diminishing steps under the admissibility conditions.
    Standard,
    /// Exact gradients with any `p ∈ [0, 1]`, constant steps included.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub gamma: f64,
    pub m: f64,
    pub p: f64,
    pub eps0: f64,
    pub r_exp: f64,
    pub mode: StepMode,
    /// Declared bias exponent: `B_n = O(1/n^{ℓ_b})`.
    pub ell_b: f64,
    /// Declared noise exponent: `σ_n = O(n^{ℓ_σ})`.
    pub ell_sigma: f64,
}

impl Schedule {
    /// Validates a schedule for the given feedback model. Model 3 uses
    /// `ℓ_b = r_exp` and `ℓ_σ = r_exp / 2`; Models 1 and 2 have no bias and
    /// bounded noise (`ℓ_b = ∞`, `ℓ_σ = 0`).
    pub fn new(
        gamma: f64,
        m: f64,
        p: f64,
        eps0: f64,
        r_exp: f64,
        mode: StepMode,
        model: Model,
    ) -> Result<Schedule> {
        let mut failures = Vec::new();
        if !(gamma > 0.0 && gamma.is_finite()) {
            failures.push(format!("gamma = {gamma} must be positive"));
        }
        if !(m >= 0.0 && m.is_finite()) {
            failures.push(format!("m = {m} must be nonnegative"));
        }
        let (ell_b, ell_sigma) = match model {
            Model::Full | Model::Stochastic => (f64::INFINITY, 0.0),
            Model::ValueBased => (r_exp, r_exp / 2.0),
        };
        match mode {
            StepMode::Geometric => {
                if model != Model::Full {
                    failures.push("geometric mode requires full-gradient feedback".into());
                }
                if !(0.0..=1.0).contains(&p) {
                    failures.push(format!("p = {p} not in [0, 1]"));
                }
            }
            StepMode::Standard => {
                if !(p > 0.5 && p <= 1.0) {
                    failures.push(format!("p = {p} not in (1/2, 1]"));
                }
                if !(p + ell_b > 1.0) {
                    failures.push(format!("p + ℓ_b = {} not > 1", p + ell_b));
                }
                if !(p - ell_sigma > 0.5) {
                    failures.push(format!("p − ℓ_σ = {} not > 1/2", p - ell_sigma));
                }
                if model == Model::ValueBased && !(p > 2.0 / 3.0) {
                    failures.push(format!("p = {p} not > 2/3 (value-based feedback)"));
                }
            }
        }
        if model == Model::ValueBased {
            if !(eps0 > 0.0 && eps0 <= 1.0) {
                failures.push(format!("eps0 = {eps0} not in (0, 1]"));
            }
            if !(r_exp > 0.0 && r_exp.is_finite()) {
                failures.push(format!("r_exp = {r_exp} must be positive"));
            }
        }
        if !failures.is_empty() {
            return Err(Error::InadmissibleSchedule(failures));
        }
        Ok(Schedule {
            gamma,
            m,
            p,
            eps0: if model == Model::ValueBased { eps0 } else { 0.0 },
            r_exp,
            mode,
            ell_b,
            ell_sigma,
        })
    }

    /// `(γ_n, ε_n) = (γ / (n+m)^p, ε₀ / (n+m)^{r_exp})`, with `ε_n ≤ 1`.
    pub fn at(&self, n: usize) -> (f64, f64) {
        let base = n as f64 + self.m;
        let gamma_n = self.gamma / base.powf(self.p);
        let eps_n = if self.eps0 > 0.0 {
            (self.eps0 / base.powf(self.r_exp)).min(1.0)
        } else {
            0.0
        };
        (gamma_n, eps_n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algo {
    Pg,
    Lpg,
}

impl std::str::FromStr for Algo {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pg" => Ok(Algo::Pg),
            "lpg" => Ok(Algo::Lpg),
            other => Err(Error::BadParams(format!("unknown algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnerState {
    pub n: usize,
    pub pi: PolicyProfile,
    /// Aggregated scores for the lazy variant.
    pub y: Option<Vec<f64>>,
    pub rng: RngState,
}

impl LearnerState {
    pub fn projected(pi: PolicyProfile, rng: RngState) -> Self {
        LearnerState {
            n: 1,
            pi,
            y: None,
            rng,
        }
    }

    pub fn lazy(y: Vec<f64>, shape: &PolicyShape, rng: RngState) -> Result<Self> {
        let (pi, _) = project_policy_certified(&y, shape)?;
        Ok(LearnerState {
            n: 1,
            pi,
            y: Some(y),
            rng,
        })
    }
}

fn check_signal(state: &LearnerState, vhat: &[f64]) -> Result<()> {
    let dim = state.pi.shape().dim();
    if vhat.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: vhat.len(),
        });
    }
    if vhat.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSignal(state.n));
    }
    Ok(())
}

/// `π_{n+1} = proj(π_n + γ_n v̂_n)`. Returns the largest KKT violation of
/// the block projections.
pub fn pg_step(state: &mut LearnerState, vhat: &[f64], gamma_n: f64) -> Result<f64> {
    check_signal(state, vhat)?;
    let y: Vec<f64> = state
        .pi
        .as_slice()
        .iter()
        .zip(vhat)
        .map(|(p, v)| p + gamma_n * v)
        .collect();
    let shape = state.pi.shape().clone();
    let (pi, certs) = project_policy_certified(&y, &shape)?;
    let violation = kkt_violation(&shape, &y, &certs);
    state.pi = pi;
    state.n += 1;
    Ok(violation)
}

/// `y_{n+1} = y_n + γ_n v̂_n`, `π_{n+1} = proj(y_{n+1})`.
pub fn lpg_step(state: &mut LearnerState, vhat: &[f64], gamma_n: f64) -> Result<f64> {
    check_signal(state, vhat)?;
    let shape = state.pi.shape().clone();
    let y = state
        .y
        .as_mut()
        .ok_or_else(|| Error::BadParams("lazy step needs a score vector".into()))?;
    for (s, v) in y.iter_mut().zip(vhat) {
        *s += gamma_n * v;
    }
    let (pi, certs) = project_policy_certified(y, &shape)?;
    let violation = kkt_violation(&shape, y, &certs);
    state.pi = pi;
    state.n += 1;
    Ok(violation)
}

fn kkt_violation(
    shape: &PolicyShape,
    y: &[f64],
    certs: &[crate::geometry::ProjectionCertificate],
) -> f64 {
    shape
        .blocks()
        .zip(certs)
        .map(|((i, s), c)| c.violation(&y[shape.block_range(i, s)]))
        .fold(0.0, f64::max)
}

/// Scores `y_{a*} = 0`, `y_a = −margin` in every block: the lazy basin
/// around a deterministic target.
pub fn lazy_basin_scores(pi_star: &PolicyProfile, margin: f64) -> Result<Vec<f64>> {
    if pi_star.deterministic_choices().is_none() {
        return Err(Error::NotDeterministicTarget);
    }
    Ok(pi_star
        .as_slice()
        .iter()
        .map(|p| if *p == 1.0 { 0.0 } else { -margin })
        .collect())
}

/// Point at Euclidean distance `radius` from `pi_star` on the segment
/// towards the uniform profile (clamped to the uniform profile itself).
pub fn near_policy(pi_star: &PolicyProfile, radius: f64) -> Result<PolicyProfile> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::BadParams(format!("radius = {radius}")));
    }
    let shape = pi_star.shape();
    let uniform = PolicyProfile::uniform(shape);
    let dist = uniform.dist_sq(pi_star).sqrt();
    if dist == 0.0 {
        return Ok(uniform);
    }
    let t = (radius / dist).min(1.0);
    let probs = pi_star
        .as_slice()
        .iter()
        .zip(uniform.as_slice())
        .map(|(p, u)| p + t * (u - p))
        .collect();
    PolicyProfile::from_flat(shape, probs).or_else(|_| {
        // rows can drift by a few ulps; project back
        let raw: Vec<f64> = pi_star
            .as_slice()
            .iter()
            .zip(uniform.as_slice())
            .map(|(p, u)| p + t * (u - p))
            .collect();
        crate::geometry::project_policy(&raw, shape)
    })
}

#[derive(Debug, Clone)]
pub enum Init {
    Policy(PolicyProfile),
    Scores(Vec<f64>),
}

#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub feedback: Feedback,
    pub algo: Algo,
    pub schedule: Schedule,
    pub horizon: usize,
    /// Evaluate the first-order residual at every logged iterate.
    pub log_fos: bool,
    /// Keep every iterate in the log.
    pub keep_iterates: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterRecord {
    pub n: usize,
    pub gamma_n: f64,
    pub eps_n: f64,
    pub dist_sq: Option<f64>,
    pub energy: Option<f64>,
    pub fos_residual: Option<f64>,
    pub exact_hit: Option<bool>,
    /// Lazy runs with a deterministic target: smallest per-block margin
    /// `y_{a*} − max_{a≠a*} y_a`.
    #[serde(skip)]
    pub min_score_gap: Option<f64>,
    /// Largest absolute coordinate of the signal used at this step.
    #[serde(skip)]
    pub signal_sup: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub n: usize,
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct KktStats {
    pub checks: usize,
    pub max_violation: f64,
}

#[derive(Debug, Clone)]
pub struct RunLog {
    pub config: RunConfig,
    pub seed: u64,
    pub stream: u64,
    pub records: Vec<IterRecord>,
    pub final_policy: PolicyProfile,
    pub target: Option<PolicyProfile>,
    pub iterates: Option<Vec<Vec<f64>>>,
    pub n0: Option<usize>,
    pub kkt: KktStats,
    pub failure: Option<Failure>,
}

fn hit(pi: &PolicyProfile, target: &PolicyProfile, deterministic: bool, dist_sq: f64) -> bool {
    if deterministic {
        pi.as_slice() == target.as_slice()
    } else {
        dist_sq.sqrt() <= MIXED_HIT_TOL
    }
}

fn min_score_gap(y: &[f64], shape: &PolicyShape, choices: &[usize]) -> f64 {
    shape
        .blocks()
        .zip(choices)
        .map(|((i, s), &star)| {
            let block = &y[shape.block_range(i, s)];
            let best_other = block
                .iter()
                .enumerate()
                .filter(|(a, _)| *a != star)
                .map(|(_, v)| *v)
                .fold(f64::NEG_INFINITY, f64::max);
            block[star] - best_other
        })
        .fold(f64::INFINITY, f64::min)
}

/// Runs `horizon` iterates of the chosen learner. Errors raised mid-run are
/// recorded in [`RunLog::failure`] and the log is truncated there.
pub fn run_experiment(
    game: &GameSpec,
    config: &RunConfig,
    init: Init,
    pi_star: Option<&PolicyProfile>,
    rng: RngState,
) -> Result<RunLog> {
    if config.horizon == 0 {
        return Err(Error::BadParams("horizon must be at least 1".into()));
    }
    let shape = game.shape();
    if let Some(t) = pi_star {
        if t.shape() != shape {
            return Err(Error::DimensionMismatch {
                expected: shape.dim(),
                got: t.shape().dim(),
            });
        }
    }
    let (seed, stream) = (rng.seed(), rng.stream());
    let mut state = match (config.algo, init) {
        (Algo::Pg, Init::Policy(pi)) => {
            if pi.shape() != shape {
                return Err(Error::DimensionMismatch {
                    expected: shape.dim(),
                    got: pi.shape().dim(),
                });
            }
            LearnerState::projected(pi, rng)
        }
        (Algo::Pg, Init::Scores(_)) => {
            return Err(Error::BadParams("projected learner needs a policy to start from".into()))
        }
        (Algo::Lpg, Init::Policy(pi)) => LearnerState::lazy(pi.into_vec(), shape, rng)?,
        (Algo::Lpg, Init::Scores(y)) => {
            if y.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput);
            }
            LearnerState::lazy(y, shape, rng)?
        }
    };
    let target_choices = pi_star.and_then(|t| t.deterministic_choices());
    let deterministic = target_choices.is_some();
    let mut records = Vec::with_capacity(config.horizon);
    let mut iterates = config.keep_iterates.then(Vec::new);
    let mut kkt = KktStats {
        checks: 0,
        max_violation: 0.0,
    };
    let mut failure = None;
    for n in 1..=config.horizon {
        let (gamma_n, eps_n) = config.schedule.at(n);
        let dist_sq = pi_star.map(|t| state.pi.dist_sq(t));
        let fos = if config.log_fos {
            match fos_residual(game, &state.pi) {
                Ok(r) => Some(r),
                Err(e) => {
                    failure = Some(Failure {
                        n,
                        code: e.code().into(),
                        message: e.to_string(),
                    });
                    break;
                }
            }
        } else {
            None
        };
        let mut record = IterRecord {
            n,
            gamma_n,
            eps_n,
            dist_sq,
            energy: dist_sq.map(|d| 0.5 * d),
            fos_residual: fos,
            exact_hit: pi_star.zip(dist_sq).map(|(t, d)| hit(&state.pi, t, deterministic, d)),
            min_score_gap: match (&state.y, &target_choices) {
                (Some(y), Some(c)) => Some(min_score_gap(y, shape, c)),
                _ => None,
            },
            signal_sup: None,
        };
        if let Some(it) = iterates.as_mut() {
            it.push(state.pi.as_slice().to_vec());
        }
        if n == config.horizon {
            records.push(record);
            break;
        }
        let step = make_signal(&config.feedback, game, &state.pi, eps_n, &mut state.rng, false)
            .and_then(|signal| {
                record.signal_sup = Some(signal.vhat.iter().fold(0.0, |m, x| f64::max(m, x.abs())));
                match config.algo {
                    Algo::Pg => pg_step(&mut state, &signal.vhat, gamma_n),
                    Algo::Lpg => lpg_step(&mut state, &signal.vhat, gamma_n),
                }
            });
        records.push(record);
        match step {
            Ok(violation) => {
                if n % KKT_EVERY == 0 {
                    kkt.checks += 1;
                    kkt.max_violation = kkt.max_violation.max(violation);
                }
            }
            Err(e) => {
                failure = Some(Failure {
                    n,
                    code: e.code().into(),
                    message: e.to_string(),
                });
                break;
            }
        }
    }
    let n0 = if deterministic {
        crate::analysis::n0_from_hits(&records)
    } else {
        None
    };
    Ok(RunLog {
        config: config.clone(),
        seed,
        stream,
        records,
        final_policy: state.pi,
        target: pi_star.cloned(),
        iterates,
        n0,
        kkt,
        failure,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl RunLog {
    pub const CSV_HEADER: [&'static str; 7] = [
        "n",
        "gamma_n",
        "eps_n",
        "dist_sq",
        "energy",
        "fos_residual",
        "exact_hit",
    ];

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let to_err = |e: csv::Error| Error::Io {
            path: "csv".into(),
            source: std::io::Error::other(e.to_string()),
        };
        w.write_record(Self::CSV_HEADER).map_err(to_err)?;
        for r in &self.records {
            w.write_record([
                r.n.to_string(),
                format!("{:e}", r.gamma_n),
                format!("{:e}", r.eps_n),
                opt(r.dist_sq),
                opt(r.energy),
                opt(r.fos_residual),
                r.exact_hit.map(|h| (h as u8).to_string()).unwrap_or_default(),
            ])
            .map_err(to_err)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "csv".into(),
            source,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// JSON sidecar: config echo, seed, n₀, final state and failure info.
    pub fn sidecar(&self) -> serde_json::Value {
        let last = self.records.last();
        serde_json::json!({
            "config": self.config,
            "seed": self.seed,
            "stream": self.stream,
            "iterations": self.records.len(),
            "n0": self.n0,
            "final_dist_sq": last.and_then(|r| r.dist_sq),
            "final_policy": self.final_policy.to_nested(),
            "target": self.target.as_ref().map(|t| t.to_nested()),
            "kkt": self.kkt,
            "failure": self.failure,
        })
    }

    pub fn dist_sq_series(&self) -> Option<Vec<f64>> {
        self.records.iter().map(|r| r.dist_sq).collect()
    }
}
