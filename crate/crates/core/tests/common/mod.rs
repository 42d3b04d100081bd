//! Reference computations for tests. Nothing here calls the library's
//! solvers: values come from fixed-point iteration, visitation measures
//! from the power series, projections from bisection on the threshold.
#![allow(dead_code)]

use rand::Rng;
use sgpg::game::{validate_game, PlayerSpec, RawGame};
use sgpg::{GameSpec, PolicyProfile, PolicyShape};

/// `Π_i x[i][s][a_i]` for every `(s, joint)`, from raw coordinates.
pub fn joint_weights(game: &GameSpec, x: &[f64]) -> Vec<Vec<f64>> {
    let shape = game.shape();
    let actions = game.actions().to_vec();
    (0..game.n_states())
        .map(|s| {
            (0..game.n_joint())
                .map(|j| {
                    let mut rem = j;
                    let mut w = 1.0;
                    for i in (0..actions.len()).rev() {
                        let a = rem % actions[i];
                        rem /= actions[i];
                        w *= x[shape.index(i, s, a)];
                    }
                    w
                })
                .collect()
        })
        .collect()
}

/// Values `V_{i,s}` by iterating `V ← r̄ + M V` to a fixed point.
pub fn values_by_iteration(game: &GameSpec, x: &[f64]) -> Vec<Vec<f64>> {
    let n = game.n_states();
    let w = joint_weights(game, x);
    (0..game.n_players())
        .map(|i| {
            let mut v = vec![0.0; n];
            for _ in 0..100_000 {
                let next: Vec<f64> = (0..n)
                    .map(|s| {
                        (0..game.n_joint())
                            .map(|j| {
                                let cont: f64 = game
                                    .transition_row(s, j)
                                    .iter()
                                    .zip(&v)
                                    .map(|(p, vv)| p * vv)
                                    .sum();
                                w[s][j] * (game.reward(i, s, j) + cont)
                            })
                            .sum()
                    })
                    .collect();
                let delta = next
                    .iter()
                    .zip(&v)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                v = next;
                if delta < 1e-15 {
                    break;
                }
            }
            v
        })
        .collect()
}

pub fn value_rho_by_iteration(game: &GameSpec, x: &[f64]) -> Vec<f64> {
    values_by_iteration(game, x)
        .iter()
        .map(|v| v.iter().zip(game.initial_dist()).map(|(a, b)| a * b).sum())
        .collect()
}

/// `ν = Σ_t (Mᵀ)^t ρ`, summed until the tail is negligible.
pub fn visitation_by_series(game: &GameSpec, pi: &PolicyProfile) -> Vec<f64> {
    let n = game.n_states();
    let w = joint_weights(game, pi.as_slice());
    let mut term = game.initial_dist().to_vec();
    let mut nu = term.clone();
    for _ in 0..100_000 {
        let mut next = vec![0.0; n];
        for s in 0..n {
            for j in 0..game.n_joint() {
                for (t, p) in game.transition_row(s, j).iter().enumerate() {
                    next[t] += term[s] * w[s][j] * p;
                }
            }
        }
        let mass: f64 = next.iter().sum();
        for (a, b) in nu.iter_mut().zip(&next) {
            *a += b;
        }
        term = next;
        if mass < 1e-17 {
            break;
        }
    }
    nu
}

/// Central differences of the fixed-point values.
pub fn fd_gradient_oracle(game: &GameSpec, pi: &PolicyProfile, h: f64) -> Vec<f64> {
    let shape = game.shape();
    let mut x = pi.as_slice().to_vec();
    let mut out = vec![0.0; shape.dim()];
    for i in 0..shape.n_players() {
        for c in shape.player_range(i) {
            let orig = x[c];
            x[c] = orig + h;
            let up = value_rho_by_iteration(game, &x)[i];
            x[c] = orig - h;
            let down = value_rho_by_iteration(game, &x)[i];
            x[c] = orig;
            out[c] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// `Σ_τ P_x(τ) R_i(τ)` per player, where `P_x` is the trajectory likelihood
/// built from raw coordinates `x`. Iterates the suffix mass
/// `β(s) = Σ_a w(s,a)(ζ(s,a) + Σ_s' P β(s'))` together with the suffix return.
pub fn trajectory_sum(game: &GameSpec, x: &[f64]) -> Vec<f64> {
    let n = game.n_states();
    let np = game.n_players();
    let w = joint_weights(game, x);
    let mut beta = vec![1.0; n];
    let mut u = vec![vec![0.0; n]; np];
    for _ in 0..100_000 {
        let mut next_beta = vec![0.0; n];
        let mut next_u = vec![vec![0.0; n]; np];
        for s in 0..n {
            for j in 0..game.n_joint() {
                let row = game.transition_row(s, j);
                let tail: f64 = game.stop_prob(s, j) + row.iter().zip(&beta).map(|(p, b)| p * b).sum::<f64>();
                next_beta[s] += w[s][j] * tail;
                for i in 0..np {
                    let cont: f64 = row.iter().zip(&u[i]).map(|(p, v)| p * v).sum();
                    next_u[i][s] += w[s][j] * (game.reward(i, s, j) * tail + cont);
                }
            }
        }
        let delta = next_beta
            .iter()
            .zip(&beta)
            .chain(next_u.iter().flatten().zip(u.iter().flatten()))
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        beta = next_beta;
        u = next_u;
        if delta < 1e-15 {
            break;
        }
    }
    u.iter()
        .map(|ui| ui.iter().zip(game.initial_dist()).map(|(a, b)| a * b).sum())
        .collect()
}

/// Central differences of [`trajectory_sum`]: the mean of the log-trick
/// estimator, derived from the likelihood alone.
pub fn fd_log_trick_oracle(game: &GameSpec, pi: &PolicyProfile, h: f64) -> Vec<f64> {
    let shape = game.shape();
    let mut x = pi.as_slice().to_vec();
    let mut out = vec![0.0; shape.dim()];
    for i in 0..shape.n_players() {
        for c in shape.player_range(i) {
            let orig = x[c];
            x[c] = orig + h;
            let up = trajectory_sum(game, &x)[i];
            x[c] = orig - h;
            let down = trajectory_sum(game, &x)[i];
            x[c] = orig;
            out[c] = (up - down) / (2.0 * h);
        }
    }
    out
}

/// Simplex projection by bisection on the threshold `θ` solving
/// `Σ_a max(y_a − θ, 0) = 1`.
pub fn project_by_bisection(y: &[f64]) -> Vec<f64> {
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (mut lo, mut hi) = (max - 1.0, max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let mass: f64 = y.iter().map(|v| (v - mid).max(0.0)).sum();
        if mass > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let theta = 0.5 * (lo + hi);
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Random interior profile with every entry at least `floor`.
pub fn random_policy<R: Rng>(shape: &PolicyShape, floor: f64, rng: &mut R) -> PolicyProfile {
    let mut probs = Vec::with_capacity(shape.dim());
    for (i, _) in shape.blocks() {
        let k = shape.n_actions(i);
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        let slack = 1.0 - floor * k as f64;
        let mut row: Vec<f64> = raw.iter().map(|x| floor + slack * x / total).collect();
        let err: f64 = row.iter().sum::<f64>() - 1.0;
        row[0] -= err;
        probs.extend(row);
    }
    PolicyProfile::from_flat(shape, probs).expect("valid random policy")
}

/// Random game whose stopping probabilities vary over `[zeta_lo, zeta_hi]`.
pub fn random_varied_game<R: Rng>(
    rng: &mut R,
    n_states: usize,
    actions: &[usize],
    zeta_lo: f64,
    zeta_hi: f64,
) -> GameSpec {
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
                    let zeta = rng.random_range(zeta_lo..=zeta_hi);
                    let raw: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|r| (1.0 - zeta) * r / total).collect()
                })
                .collect()
        })
        .collect();
    let raw_rho: Vec<f64> = (0..n_states).map(|_| rng.random::<f64>() + 0.1).collect();
    let total: f64 = raw_rho.iter().sum();
    let raw = RawGame {
        states: (0..n_states).map(|s| format!("s{s}")).collect(),
        players: actions
            .iter()
            .enumerate()
            .map(|(i, &a)| PlayerSpec {
                name: format!("p{i}"),
                actions: a,
            })
            .collect(),
        rewards,
        transitions,
        initial_dist: raw_rho.iter().map(|r| r / total).collect(),
    };
    validate_game(raw).expect("random game is valid").game
}
