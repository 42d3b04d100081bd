//! Tabular stochastic games with random stopping.
//!
//! A game is the tuple (S, N, {A_i, r_i}, P, ζ, ρ). Joint actions are
//! flattened row-major over players in declaration order (the last player's
//! action varies fastest). Stopping probabilities are never stored on disk;
//! they are derived as `ζ_{s,a} = 1 − Σ_{s'} P(s'|s,a)`.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IssueKind, Result, ValidationIssue};
use crate::policy::PolicyShape;

/// Tolerance on probability-vector sums for data read from text.
pub const LOAD_TOL: f64 = 1e-9;
/// Internal exactness target; sums off by more than this are re-normalized.
pub const EXACT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlayerSpec {
    pub name: String,
    pub actions: usize,
}

/// Unvalidated game document, mirroring the JSON file layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawGame {
    pub states: Vec<String>,
    pub players: Vec<PlayerSpec>,
    /// `[player][state][joint action]`
    pub rewards: Vec<Vec<Vec<f64>>>,
    /// `[state][joint action][next state]`
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub initial_dist: Vec<f64>,
}

/// Validated game. Immutable; share freely across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    raw: RawGame,
    shape: PolicyShape,
    n_joint: usize,
    /// `[joint * n_players + i]` = action of player i in that joint action.
    joint_table: Vec<usize>,
    stop_probs: Vec<Vec<f64>>,
    zeta_min: f64,
}

#[derive(Debug, Clone)]
pub struct Validated {
    pub game: GameSpec,
    pub warnings: Vec<String>,
}

impl GameSpec {
    pub fn n_states(&self) -> usize {
        self.raw.states.len()
    }

    pub fn n_players(&self) -> usize {
        self.raw.players.len()
    }

    pub fn n_joint(&self) -> usize {
        self.n_joint
    }

    pub fn actions(&self) -> &[usize] {
        self.shape.actions()
    }

    pub fn shape(&self) -> &PolicyShape {
        &self.shape
    }

    pub fn state_names(&self) -> &[String] {
        &self.raw.states
    }

    pub fn players(&self) -> &[PlayerSpec] {
        &self.raw.players
    }

    pub fn reward(&self, player: usize, state: usize, joint: usize) -> f64 {
        self.raw.rewards[player][state][joint]
    }

    pub fn transition_row(&self, state: usize, joint: usize) -> &[f64] {
        &self.raw.transitions[state][joint]
    }

    pub fn stop_prob(&self, state: usize, joint: usize) -> f64 {
        self.stop_probs[state][joint]
    }

    /// ζ = min_{s,a} ζ_{s,a}.
    pub fn zeta_min(&self) -> f64 {
        self.zeta_min
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.raw.initial_dist
    }

    /// Actions of every player in joint action `joint`.
    pub fn joint_actions(&self, joint: usize) -> &[usize] {
        let n = self.n_players();
        &self.joint_table[joint * n..(joint + 1) * n]
    }

    pub fn encode_joint(&self, actions: &[usize]) -> usize {
        actions
            .iter()
            .zip(self.actions())
            .fold(0, |acc, (&a, &n)| acc * n + a)
    }

    pub fn raw(&self) -> &RawGame {
        &self.raw
    }

    /// Whether every (s, a) stops with the same probability, up to
    /// [`EXACT_TOL`] (rows built as `(1 − ζ)·w` round in the last bit).
    /// Returns the smallest one.
    pub fn constant_stop(&self) -> Option<f64> {
        let max = self.stop_probs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        (max - self.zeta_min <= EXACT_TOL).then_some(self.zeta_min)
    }
}

fn issue(kind: IssueKind, detail: impl Into<String>) -> ValidationIssue {
    ValidationIssue {
        kind,
        detail: detail.into(),
    }
}

/// Checks every invariant of a game description and derives the stopping
/// probabilities. Returns the full list of violations on failure.
pub fn validate_game(mut raw: RawGame) -> Result<Validated> {
    let mut issues = Vec::new();
    let mut warnings = Vec::new();

    let n_states = raw.states.len();
    let n_players = raw.players.len();
    if n_states == 0 {
        issues.push(issue(IssueKind::ShapeMismatch, "no states"));
    }
    if n_players == 0 {
        issues.push(issue(IssueKind::ShapeMismatch, "no players"));
    }
    for p in &raw.players {
        if p.actions == 0 {
            issues.push(issue(
                IssueKind::ShapeMismatch,
                format!("player `{}` has no actions", p.name),
            ));
        }
    }
    if !issues.is_empty() {
        return Err(Error::InvalidGame(issues));
    }
    let actions: Vec<usize> = raw.players.iter().map(|p| p.actions).collect();
    let n_joint: usize = actions.iter().product();

    // shapes first; value checks only make sense on well-formed arrays
    if raw.rewards.len() != n_players {
        issues.push(issue(
            IssueKind::ShapeMismatch,
            format!("rewards: expected {n_players} players, got {}", raw.rewards.len()),
        ));
    } else {
        for (i, per_state) in raw.rewards.iter().enumerate() {
            if per_state.len() != n_states {
                issues.push(issue(
                    IssueKind::ShapeMismatch,
                    format!("rewards[{i}]: expected {n_states} states, got {}", per_state.len()),
                ));
                continue;
            }
            for (s, row) in per_state.iter().enumerate() {
                if row.len() != n_joint {
                    issues.push(issue(
                        IssueKind::ShapeMismatch,
                        format!("rewards[{i}][{s}]: expected {n_joint} joint actions, got {}", row.len()),
                    ));
                }
            }
        }
    }
    if raw.transitions.len() != n_states {
        issues.push(issue(
            IssueKind::ShapeMismatch,
            format!("transitions: expected {n_states} states, got {}", raw.transitions.len()),
        ));
    } else {
        for (s, per_joint) in raw.transitions.iter().enumerate() {
            if per_joint.len() != n_joint {
                issues.push(issue(
                    IssueKind::ShapeMismatch,
                    format!("transitions[{s}]: expected {n_joint} joint actions, got {}", per_joint.len()),
                ));
                continue;
            }
            for (a, row) in per_joint.iter().enumerate() {
                if row.len() != n_states {
                    issues.push(issue(
                        IssueKind::ShapeMismatch,
                        format!("transitions[{s}][{a}]: expected {n_states} next states, got {}", row.len()),
                    ));
                }
            }
        }
    }
    if raw.initial_dist.len() != n_states {
        issues.push(issue(
            IssueKind::ShapeMismatch,
            format!("initial_dist: expected {n_states} entries, got {}", raw.initial_dist.len()),
        ));
    }
    if !issues.is_empty() {
        return Err(Error::InvalidGame(issues));
    }

    for (i, per_state) in raw.rewards.iter().enumerate() {
        for (s, row) in per_state.iter().enumerate() {
            for (a, &r) in row.iter().enumerate() {
                if !(-1.0..=1.0).contains(&r) {
                    issues.push(issue(
                        IssueKind::RewardOutOfRange,
                        format!("r_{i}(s={s}, a={a}) = {r}"),
                    ));
                }
            }
        }
    }

    let mut stop_probs = vec![vec![0.0; n_joint]; n_states];
    for (s, per_joint) in raw.transitions.iter().enumerate() {
        for (a, row) in per_joint.iter().enumerate() {
            let mut bad = false;
            for (t, &p) in row.iter().enumerate() {
                if !(p >= 0.0) || !p.is_finite() {
                    issues.push(issue(
                        IssueKind::NegativeProbability,
                        format!("P(s'={t} | s={s}, a={a}) = {p}"),
                    ));
                    bad = true;
                }
            }
            if bad {
                continue;
            }
            let sum: f64 = row.iter().sum();
            let zeta = 1.0 - sum;
            if sum > 1.0 + LOAD_TOL {
                issues.push(issue(
                    IssueKind::RowSumMismatch,
                    format!("Σ_s' P(s'| s={s}, a={a}) = {sum} exceeds 1"),
                ));
            } else if zeta <= 0.0 {
                issues.push(issue(
                    IssueKind::ZeroStopProbability,
                    format!("ζ(s={s}, a={a}) = {zeta}"),
                ));
            } else {
                stop_probs[s][a] = zeta;
            }
        }
    }

    let rho_sum: f64 = raw.initial_dist.iter().sum();
    if raw.initial_dist.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
        issues.push(issue(
            IssueKind::NegativeProbability,
            "initial_dist has a negative or non-finite entry",
        ));
    } else if (rho_sum - 1.0).abs() > LOAD_TOL {
        issues.push(issue(
            IssueKind::RowSumMismatch,
            format!("initial_dist sums to {rho_sum}"),
        ));
    } else {
        if (rho_sum - 1.0).abs() > EXACT_TOL {
            for p in &mut raw.initial_dist {
                *p /= rho_sum;
            }
            warnings.push(format!(
                "initial_dist summed to {rho_sum}; re-normalized"
            ));
        }
        if let Some(s) = raw.initial_dist.iter().position(|p| *p <= 0.0) {
            issues.push(issue(
                IssueKind::EmptySupportInitialDist,
                format!("ρ(s={s}) = 0; full support is required"),
            ));
        }
    }

    if !issues.is_empty() {
        return Err(Error::InvalidGame(issues));
    }

    let zeta_min = stop_probs
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let mut joint_table = Vec::with_capacity(n_joint * n_players);
    for joint in 0..n_joint {
        let mut rem = joint;
        let mut acts = vec![0; n_players];
        for i in (0..n_players).rev() {
            acts[i] = rem % actions[i];
            rem /= actions[i];
        }
        joint_table.extend(acts);
    }
    let shape = PolicyShape::new(n_states, actions);
    Ok(Validated {
        game: GameSpec {
            raw,
            shape,
            n_joint,
            joint_table,
            stop_probs,
            zeta_min,
        },
        warnings,
    })
}

pub fn parse_game_json(text: &str) -> Result<Validated> {
    let raw: RawGame = serde_json::from_str(text).map_err(|e| Error::Parse {
        context: "game file".into(),
        message: e.to_string(),
    })?;
    validate_game(raw)
}

pub fn load_game(path: &Path) -> Result<Validated> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_game_json(&text).map_err(|e| match e {
        Error::Parse { message, .. } => Error::Parse {
            context: path.display().to_string(),
            message,
        },
        other => other,
    })
}

pub fn game_to_json(game: &GameSpec) -> String {
    serde_json::to_string_pretty(game.raw()).expect("game serializes")
}

pub fn save_game(game: &GameSpec, path: &Path) -> Result<()> {
    std::fs::write(path, game_to_json(game)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Parameters for [`builtin_game`], keyed by name (`zeta`, `seed`, ...).
pub type BuiltinParams = BTreeMap<String, String>;

fn default_players(actions: &[usize]) -> Vec<PlayerSpec> {
    actions
        .iter()
        .enumerate()
        .map(|(i, &a)| PlayerSpec {
            name: format!("p{}", i + 1),
            actions: a,
        })
        .collect()
}

/// One-state game that continues with probability `1 − zeta` after every
/// stage. `payoffs` is `[player][joint action]`.
pub fn single_state(zeta: f64, actions: &[usize], payoffs: Vec<Vec<f64>>) -> Result<GameSpec> {
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::BadParams(format!("zeta = {zeta} not in (0, 1]")));
    }
    let n_joint: usize = actions.iter().product();
    let raw = RawGame {
        states: vec!["s0".into()],
        players: default_players(actions),
        rewards: payoffs.into_iter().map(|row| vec![row]).collect(),
        transitions: vec![vec![vec![1.0 - zeta]; n_joint]],
        initial_dist: vec![1.0],
    };
    Ok(validate_game(raw)?.game)
}

pub fn coord2() -> GameSpec {
    let r = vec![1.0, -1.0, -1.0, 1.0];
    single_state(0.5, &[2, 2], vec![r.clone(), r]).expect("coord2 is valid")
}

pub fn pennies2() -> GameSpec {
    let r1 = vec![1.0, -1.0, -1.0, 1.0];
    let r2 = r1.iter().map(|x| -x).collect();
    single_state(0.5, &[2, 2], vec![r1, r2]).expect("pennies2 is valid")
}

/// Two-state hand-off game. At `s0` the joint action (0,0) pays 0.2 and
/// moves to `s1` with probability 0.5; every other action pays 0 and stops.
/// At `s1`, (1,1) pays +1 and any other joint action pays −1; play always
/// stops. The initial distribution is uniform over both states.
pub fn handoff2() -> GameSpec {
    let s0_reward = vec![0.2, 0.0, 0.0, 0.0];
    let s1_reward = vec![-1.0, -1.0, -1.0, 1.0];
    let raw = RawGame {
        states: vec!["s0".into(), "s1".into()],
        players: default_players(&[2, 2]),
        rewards: vec![
            vec![s0_reward.clone(), s1_reward.clone()],
            vec![s0_reward, s1_reward],
        ],
        transitions: vec![
            vec![
                vec![0.0, 0.5],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
                vec![0.0, 0.0],
            ],
            vec![vec![0.0, 0.0]; 4],
        ],
        initial_dist: vec![0.5, 0.5],
    };
    validate_game(raw).expect("handoff2 is valid").game
}

/// Random game: rewards uniform on [−1, 1], continuation rows drawn from a
/// flat Dirichlet and scaled so that every ζ_{s,a} equals `zeta`, uniform ρ.
pub fn random_game(seed: u64, n_states: usize, actions: &[usize], zeta: f64) -> Result<GameSpec> {
    if n_states == 0 || actions.is_empty() || actions.contains(&0) {
        return Err(Error::BadParams(
            "random game needs ≥1 state, ≥1 player and ≥1 action each".into(),
        ));
    }
    if !(zeta > 0.0 && zeta <= 1.0) {
        return Err(Error::BadParams(format!("zeta = {zeta} not in (0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_joint: usize = actions.iter().product();
    let rewards = (0..actions.len())
        .map(|_| {
            (0..n_states)
                .map(|_| (0..n_joint).map(|_| rng.random_range(-1.0..=1.0)).collect())
                .collect()
        })
        .collect();
    let transitions = (0..n_states)
        .map(|_| {
            (0..n_joint)
                .map(|_| {
                    let draws: Vec<f64> = (0..n_states).map(|_| rng.sample(Exp1)).collect();
                    let total: f64 = draws.iter().sum();
                    draws.iter().map(|d| (1.0 - zeta) * d / total).collect()
                })
                .collect()
        })
        .collect();
    let raw = RawGame {
        states: (0..n_states).map(|s| format!("s{s}")).collect(),
        players: default_players(actions),
        rewards,
        transitions,
        initial_dist: vec![1.0 / n_states as f64; n_states],
    };
    Ok(validate_game(raw)?.game)
}

fn param<T: std::str::FromStr>(params: &BuiltinParams, key: &str) -> Result<Option<T>> {
    params
        .get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Error::BadParams(format!("cannot parse {key} = `{v}`")))
        })
        .transpose()
}

fn parse_actions(text: &str) -> Result<Vec<usize>> {
    text.split(['x', ','])
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| Error::BadParams(format!("bad action list `{text}`")))
        })
        .collect()
}

/// Named desk-scale games. These instances exist for testing and
/// experiments; none of them comes from an external benchmark.
pub fn builtin_game(name: &str, params: &BuiltinParams) -> Result<GameSpec> {
    let allowed: &[&str] = match name {
        "coord2" | "pennies2" | "handoff2" => &[],
        "single_state" => &["zeta", "table"],
        "random" => &["seed", "states", "actions", "zeta"],
        other => return Err(Error::UnknownName(other.to_string())),
    };
    if let Some(k) = params.keys().find(|k| !allowed.contains(&k.as_str())) {
        return Err(Error::BadParams(format!("`{name}` takes no parameter `{k}`")));
    }
    match name {
        "coord2" => Ok(coord2()),
        "pennies2" => Ok(pennies2()),
        "handoff2" => Ok(handoff2()),
        "single_state" => {
            let zeta = param::<f64>(params, "zeta")?.unwrap_or(0.5);
            let table = params.get("table").map(String::as_str).unwrap_or("coordination");
            let coord = vec![1.0, -1.0, -1.0, 1.0];
            let payoffs = match table {
                "coordination" => vec![coord.clone(), coord],
                "pennies" => vec![coord.clone(), coord.iter().map(|x| -x).collect()],
                "zero" => vec![vec![0.0; 4]; 2],
                other => return Err(Error::BadParams(format!("unknown payoff table `{other}`"))),
            };
            single_state(zeta, &[2, 2], payoffs)
        }
        "random" => {
            let seed = param::<u64>(params, "seed")?.unwrap_or(0);
            let states = param::<usize>(params, "states")?.unwrap_or(2);
            let actions = match params.get("actions") {
                Some(t) => parse_actions(t)?,
                None => vec![2, 2],
            };
            let zeta = param::<f64>(params, "zeta")?.unwrap_or(0.5);
            random_game(seed, states, &actions, zeta)
        }
        _ => unreachable!(),
    }
}

/// Parses `NAME` or `NAME:k=v,k=v` (action lists use `x`, e.g. `actions=2x3`).
pub fn parse_builtin_spec(spec: &str) -> Result<(String, BuiltinParams)> {
    let (name, rest) = match spec.split_once(':') {
        Some((n, r)) => (n, Some(r)),
        None => (spec, None),
    };
    let mut params = BuiltinParams::new();
    if let Some(rest) = rest {
        for kv in rest.split(',').filter(|t| !t.is_empty()) {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::BadParams(format!("expected key=value, got `{kv}`")))?;
            params.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok((name.to_string(), params))
}
