//! Episode sampling under the random-stopping protocol.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exact::check_table;
use crate::game::GameSpec;
use crate::policy::PolicyProfile;

/// Seeded generator identified by `(seed, stream)`. Equal pairs replay the
/// same draws; distinct streams of one seed are independent ChaCha streams.
#[derive(Debug, Clone)]
pub struct RngState {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngState {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        RngState { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// One episode. Per-step records are stored flat; player-indexed fields
/// use `t * n_players + i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    n_players: usize,
    pub states: Vec<usize>,
    pub joints: Vec<usize>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    pub fn new(n_players: usize) -> Self {
        Trajectory {
            n_players,
            states: Vec::new(),
            joints: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
        }
    }

    /// Appends one step; `actions` and `rewards` hold one entry per player.
    pub fn push(&mut self, state: usize, joint: usize, actions: &[usize], rewards: &[f64]) {
        debug_assert_eq!(actions.len(), self.n_players);
        self.states.push(state);
        self.joints.push(joint);
        self.actions.extend_from_slice(actions);
        self.rewards.extend_from_slice(rewards);
    }

    /// Stopping time `T(τ)`: the number of steps played.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn n_players(&self) -> usize {
        self.n_players
    }

    pub fn action(&self, t: usize, player: usize) -> usize {
        self.actions[t * self.n_players + player]
    }

    pub fn reward(&self, t: usize, player: usize) -> f64 {
        self.rewards[t * self.n_players + player]
    }

    /// `R_i(τ) = Σ_t r_{i,t}`.
    pub fn total_reward(&self, player: usize) -> f64 {
        (0..self.len()).map(|t| self.reward(t, player)).sum()
    }
}

/// Hard cap on episode length, `⌈200/ζ⌉`.
pub fn max_episode_len(game: &GameSpec) -> usize {
    (200.0 / game.zeta_min()).ceil() as usize
}

fn categorical<R: Rng>(rng: &mut R, weights: &[f64], total: f64) -> usize {
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    for (k, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    // rounding: fall back to the last positive weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Plays one episode: `s_1 ∼ ρ`, each player draws from its own row, and
/// after every step the game stops with probability `ζ_{s,a}` or moves on
/// according to `P(·|s,a) / (1 − ζ_{s,a})`.
pub fn sample_episode(game: &GameSpec, pi: &PolicyProfile, rng: &mut RngState) -> Result<Trajectory> {
    let np = game.n_players();
    let cap = max_episode_len(game);
    let rng = rng.rng();
    let mut traj = Trajectory::new(np);
    let mut acts = vec![0; np];
    let mut rewards = vec![0.0; np];
    let mut s = categorical(rng, game.initial_dist(), 1.0);
    loop {
        if traj.len() >= cap {
            return Err(Error::MaxLengthExceeded { limit: cap });
        }
        for (i, a) in acts.iter_mut().enumerate() {
            *a = categorical(rng, pi.row(i, s), 1.0);
        }
        let joint = game.encode_joint(&acts);
        for (i, r) in rewards.iter_mut().enumerate() {
            *r = game.reward(i, s, joint);
        }
        traj.push(s, joint, &acts, &rewards);
        let zeta = game.stop_prob(s, joint);
        if rng.random::<f64>() < zeta {
            return Ok(traj);
        }
        s = categorical(rng, game.transition_row(s, joint), 1.0 - zeta);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_err: f64,
}

/// Mean and standard error of i.i.d. samples (sample variance with `n − 1`).
pub fn mean_and_se(samples: &[f64]) -> McEstimate {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let std_err = if samples.len() > 1 {
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    McEstimate { mean, std_err }
}

/// Monte-Carlo estimate of `E_τ[Σ_t f(s_t, a_t)]` for a table `f[state][joint]`.
pub fn mc_functional(
    game: &GameSpec,
    pi: &PolicyProfile,
    f: &[Vec<f64>],
    n_episodes: usize,
    rng: &mut RngState,
) -> Result<McEstimate> {
    check_table(game, f)?;
    if n_episodes == 0 {
        return Err(Error::BadParams("n_episodes must be at least 1".into()));
    }
    let mut sums = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let traj = sample_episode(game, pi, rng)?;
        sums.push(
            traj.states
                .iter()
                .zip(&traj.joints)
                .map(|(&s, &j)| f[s][j])
                .sum(),
        );
    }
    Ok(mean_and_se(&sums))
}

/// Per-state Monte-Carlo estimate of the expected number of visits.
pub fn occupancy(
    game: &GameSpec,
    pi: &PolicyProfile,
    n_episodes: usize,
    rng: &mut RngState,
) -> Result<Vec<McEstimate>> {
    if n_episodes == 0 {
        return Err(Error::BadParams("n_episodes must be at least 1".into()));
    }
    let n = game.n_states();
    let mut counts = vec![Vec::with_capacity(n_episodes); n];
    let mut visit = vec![0.0; n];
    for _ in 0..n_episodes {
        visit.iter_mut().for_each(|c| *c = 0.0);
        for &s in &sample_episode(game, pi, rng)?.states {
            visit[s] += 1.0;
        }
        for (s, c) in visit.iter().enumerate() {
            counts[s].push(*c);
        }
    }
    Ok(counts.iter().map(|c| mean_and_se(c)).collect())
}
