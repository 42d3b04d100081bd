//! Closed-form values, visitation measures and gradients.
//!
//! Everything is solved at the state level: with
//! `M(π)[s][s'] = Σ_a π(a|s) P(s'|s,a)` the values satisfy
//! `(I − M) V_i = r̄_i` and the visitation measure satisfies
//! `(I − Mᵀ) ν = ρ`. The internal evaluators accept raw coordinates, not
//! just points of the simplex product, because the value formulas extend
//! smoothly to a neighbourhood of it; finite differences rely on that.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::game::GameSpec;
use crate::policy::{PolicyProfile, PolicyShape};

/// Default finite-difference step on raw coordinates.
pub const FD_STEP: f64 = 1e-5;
/// Cap on deterministic profile pairs enumerated for the mismatch bound.
pub const MISMATCH_PAIR_CAP: u128 = 10_000;
const MISMATCH_SEED: u64 = 0x6d69_736d;

#[derive(Debug, Clone, Serialize)]
pub struct ValueReport {
    /// `[player][state]`
    pub v: Vec<Vec<f64>>,
    /// `V_{i,ρ} = Σ_s ρ(s) V_{i,s}` per player.
    pub v_rho: Vec<f64>,
    /// `[player][state][joint action]`
    pub q: Vec<Vec<Vec<f64>>>,
    /// `[player][state][own action]`
    pub qbar: Vec<Vec<Vec<f64>>>,
    pub adv: Vec<Vec<Vec<f64>>>,
    pub adv_bar: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct VisitationReport {
    pub nu: Vec<f64>,
    pub z: f64,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum JacobianScheme {
    /// Central differences on every raw coordinate.
    Central,
    /// One-sided differences along `e_a − e_b` inside each block, `b` being
    /// the block's largest entry. Column `b` of every block is zero, so the
    /// matrix acts exactly like the Jacobian on tangent vectors (block sums
    /// zero) but not on arbitrary vectors.
    Tangent,
}

#[derive(Debug, Clone)]
pub struct Jacobian {
    pub matrix: DMatrix<f64>,
    pub scheme: JacobianScheme,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchMethod {
    Enumerated,
    Sampled,
}

#[derive(Debug, Clone, Serialize)]
pub struct MismatchBound {
    /// Largest ratio `max_s ν^π(s)/ν^{π'}(s)` over the examined pairs.
    pub c_lower: f64,
    /// `1 / (ζ · min_s ρ(s))`.
    pub c_upper: f64,
    pub method: MismatchMethod,
    pub pairs: u128,
}

/// Probability of each joint action at each state, `[state][joint]`, from
/// raw per-player coordinates laid out as in [`PolicyShape`].
pub(crate) fn joint_probs(game: &GameSpec, x: &[f64]) -> Vec<Vec<f64>> {
    let shape = game.shape();
    (0..game.n_states())
        .map(|s| {
            (0..game.n_joint())
                .map(|j| {
                    game.joint_actions(j)
                        .iter()
                        .enumerate()
                        .map(|(i, &a)| x[shape.index(i, s, a)])
                        .product()
                })
                .collect()
        })
        .collect()
}

fn matrix_from(game: &GameSpec, joint: &[Vec<f64>]) -> DMatrix<f64> {
    let n = game.n_states();
    let mut m = DMatrix::zeros(n, n);
    for s in 0..n {
        for (j, &w) in joint[s].iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (t, &p) in game.transition_row(s, j).iter().enumerate() {
                m[(s, t)] += w * p;
            }
        }
    }
    m
}

/// `M(π)[s][s'] = Σ_a π(a|s) P(s'|s,a)`.
pub fn transition_matrix(game: &GameSpec, pi: &PolicyProfile) -> DMatrix<f64> {
    matrix_from(game, &joint_probs(game, pi.as_slice()))
}

fn solve(a: DMatrix<f64>, rhs: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem(what.to_string()))?;
    if sol.iter().all(|v| v.is_finite()) {
        Ok(sol)
    } else {
        Err(Error::SingularSystem(format!("{what}: non-finite solution")))
    }
}

/// Solution of both linear systems at raw coordinates `x`.
struct Solved {
    /// `[player][state]`
    values: Vec<Vec<f64>>,
    nu: Vec<f64>,
}

fn solve_at(game: &GameSpec, x: &[f64], with_nu: bool) -> Result<Solved> {
    let n = game.n_states();
    let np = game.n_players();
    let joint = joint_probs(game, x);
    let m = matrix_from(game, &joint);
    let id = DMatrix::<f64>::identity(n, n);
    let mut rbar = DMatrix::zeros(n, np);
    for i in 0..np {
        for s in 0..n {
            rbar[(s, i)] = joint[s]
                .iter()
                .enumerate()
                .map(|(j, w)| w * game.reward(i, s, j))
                .sum();
        }
    }
    let v = solve(&id - &m, rbar, "values")?;
    let values = (0..np)
        .map(|i| (0..n).map(|s| v[(s, i)]).collect())
        .collect();
    let nu = if with_nu {
        let rho = DMatrix::from_column_slice(n, 1, game.initial_dist());
        solve(&id - m.transpose(), rho, "visitation")?
            .iter()
            .copied()
            .collect()
    } else {
        Vec::new()
    };
    Ok(Solved { values, nu })
}

fn q_values(game: &GameSpec, values: &[Vec<f64>]) -> Vec<Vec<Vec<f64>>> {
    (0..game.n_players())
        .map(|i| {
            (0..game.n_states())
                .map(|s| {
                    (0..game.n_joint())
                        .map(|j| {
                            game.reward(i, s, j)
                                + game
                                    .transition_row(s, j)
                                    .iter()
                                    .zip(&values[i])
                                    .map(|(p, v)| p * v)
                                    .sum::<f64>()
                        })
                        .collect()
                })
                .collect()
        })
        .collect()
}

/// `Q̄_i(s, a_i) = Σ_{a_{−i}} π_{−i}(a_{−i}|s) Q_i(s, a)`, from raw coordinates.
fn averaged_q(game: &GameSpec, x: &[f64], q: &[Vec<Vec<f64>>]) -> Vec<Vec<Vec<f64>>> {
    let shape = game.shape();
    (0..game.n_players())
        .map(|i| {
            (0..game.n_states())
                .map(|s| {
                    let mut row = vec![0.0; shape.n_actions(i)];
                    for j in 0..game.n_joint() {
                        let acts = game.joint_actions(j);
                        let others: f64 = acts
                            .iter()
                            .enumerate()
                            .filter(|(k, _)| *k != i)
                            .map(|(k, &a)| x[shape.index(k, s, a)])
                            .product();
                        row[acts[i]] += others * q[i][s][j];
                    }
                    row
                })
                .collect()
        })
        .collect()
}

fn rho_value(game: &GameSpec, v: &[f64]) -> f64 {
    game.initial_dist().iter().zip(v).map(|(r, v)| r * v).sum()
}

pub fn value_report(game: &GameSpec, pi: &PolicyProfile) -> Result<ValueReport> {
    let solved = solve_at(game, pi.as_slice(), false)?;
    let q = q_values(game, &solved.values);
    let qbar = averaged_q(game, pi.as_slice(), &q);
    let v = solved.values;
    let adv = q
        .iter()
        .zip(&v)
        .map(|(qi, vi)| {
            qi.iter()
                .zip(vi)
                .map(|(row, vs)| row.iter().map(|x| x - vs).collect())
                .collect()
        })
        .collect();
    let adv_bar = qbar
        .iter()
        .zip(&v)
        .map(|(qi, vi)| {
            qi.iter()
                .zip(vi)
                .map(|(row, vs)| row.iter().map(|x| x - vs).collect())
                .collect()
        })
        .collect();
    let v_rho = v.iter().map(|vi| rho_value(game, vi)).collect();
    Ok(ValueReport {
        v,
        v_rho,
        q,
        qbar,
        adv,
        adv_bar,
    })
}

/// `V_{i,ρ}(π)` for every player.
pub fn values_rho(game: &GameSpec, pi: &PolicyProfile) -> Result<Vec<f64>> {
    values_rho_raw(game, pi.as_slice())
}

fn values_rho_raw(game: &GameSpec, x: &[f64]) -> Result<Vec<f64>> {
    let solved = solve_at(game, x, false)?;
    Ok(solved.values.iter().map(|v| rho_value(game, v)).collect())
}

/// Visitation measure `ν = (I − Mᵀ)^{-1} ρ` with its mass `Z` and the
/// normalised distribution `d = ν / Z`.
pub fn visitation(game: &GameSpec, pi: &PolicyProfile) -> Result<VisitationReport> {
    visitation_from(game, pi, game.initial_dist())
}

/// Same as [`visitation`] with an arbitrary (not necessarily full-support)
/// starting distribution.
pub fn visitation_from(game: &GameSpec, pi: &PolicyProfile, rho: &[f64]) -> Result<VisitationReport> {
    let n = game.n_states();
    if rho.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rho.len(),
        });
    }
    let m = transition_matrix(game, pi);
    let a = DMatrix::<f64>::identity(n, n) - m.transpose();
    let nu: Vec<f64> = solve(a, DMatrix::from_column_slice(n, 1, rho), "visitation")?
        .iter()
        .copied()
        .collect();
    let z: f64 = nu.iter().sum();
    let d = nu.iter().map(|x| x / z).collect();
    Ok(VisitationReport { nu, z, d })
}

fn gradient_raw(game: &GameSpec, x: &[f64]) -> Result<Vec<f64>> {
    let solved = solve_at(game, x, true)?;
    let q = q_values(game, &solved.values);
    let qbar = averaged_q(game, x, &q);
    let shape = game.shape();
    let mut v = vec![0.0; shape.dim()];
    for (i, s) in shape.blocks() {
        for (a, qb) in qbar[i][s].iter().enumerate() {
            v[shape.index(i, s, a)] = solved.nu[s] * qb;
        }
    }
    Ok(v)
}

/// Individual gradients `v_{(i,s,a_i)} = ∂V_{i,ρ}/∂π_i(a_i|s) = ν(s) Q̄_i(s,a_i)`,
/// flattened in profile layout.
pub fn policy_gradient(game: &GameSpec, pi: &PolicyProfile) -> Result<Vec<f64>> {
    gradient_raw(game, pi.as_slice())
}

/// Exact mean of the log-trick estimator `R_i(τ) Σ_t ∇_i log π_i(a_{i,t}|s_t)`
/// sampled at `pi`.
///
/// The estimator differentiates the trajectory likelihood, so its mean is the
/// raw gradient of `Σ_τ P^π(τ) R_i(τ)`. Off the simplex that polynomial is a
/// different extension of `V_{i,ρ}` than the one behind [`policy_gradient`]:
/// rewards collected before a visit to `s` also pick up the derivative. The
/// result is `v_{(i,s,a)} + c_i(s)` with
///
/// `c_i(s) = E[Σ_t 1{s_t = s} Σ_{t'<t} r_{i,t'}]`,
///
/// solving `c_i = Mᵀ c_i + b_i`, `b_i(s') = Σ_s ν(s) Σ_a π(a|s) r_i(s,a) P(s'|s,a)`.
/// The shift is constant on each simplex block, so the two agree on the
/// tangent space and give the same projected steps.
pub fn log_trick_mean(game: &GameSpec, pi: &PolicyProfile) -> Result<Vec<f64>> {
    let x = pi.as_slice();
    let n = game.n_states();
    let np = game.n_players();
    let mut out = gradient_raw(game, x)?;
    let joint = joint_probs(game, x);
    let nu = solve_at(game, x, true)?.nu;
    let a = DMatrix::<f64>::identity(n, n) - matrix_from(game, &joint).transpose();
    let mut b = DMatrix::zeros(n, np);
    for (s, row) in joint.iter().enumerate() {
        for (j, &w) in row.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            for (t, &p) in game.transition_row(s, j).iter().enumerate() {
                for i in 0..np {
                    b[(t, i)] += nu[s] * w * game.reward(i, s, j) * p;
                }
            }
        }
    }
    let c = solve(a, b, "log-trick shift")?;
    let shape = game.shape();
    for (i, s) in shape.blocks() {
        for k in shape.block_range(i, s) {
            out[k] += c[(s, i)];
        }
    }
    Ok(out)
}

fn check_step(h: f64) -> Result<()> {
    if h.is_finite() && h > 0.0 {
        Ok(())
    } else {
        Err(Error::BoundaryPolicy(format!("step h = {h} must be positive and finite")))
    }
}

/// Central finite differences of each player's own `V_{i,ρ}` on raw
/// coordinates. Independent of [`policy_gradient`]; used as its oracle.
pub fn gradient_fd(game: &GameSpec, pi: &PolicyProfile, h: f64) -> Result<Vec<f64>> {
    check_step(h)?;
    let shape = game.shape();
    for i in 0..shape.n_players() {
        if pi.kappa(i) <= h {
            return Err(Error::BoundaryPolicy(format!(
                "κ_{i} = {} is not above h = {h}",
                pi.kappa(i)
            )));
        }
    }
    let mut x = pi.as_slice().to_vec();
    let mut out = vec![0.0; shape.dim()];
    for i in 0..shape.n_players() {
        for c in shape.player_range(i) {
            let orig = x[c];
            x[c] = orig + h;
            let up = values_rho_raw(game, &x)?[i];
            x[c] = orig - h;
            let down = values_rho_raw(game, &x)?[i];
            x[c] = orig;
            out[c] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Finite-difference Jacobian of the gradient field.
///
/// Interior profiles (every `κ_i > h`) get central differences on all raw
/// coordinates. Otherwise the [`JacobianScheme::Tangent`] matrix is built
/// from second-order one-sided differences that stay inside the simplex.
pub fn jacobian(game: &GameSpec, pi: &PolicyProfile, h: f64) -> Result<Jacobian> {
    check_step(h)?;
    let shape = game.shape();
    let dim = shape.dim();
    let mut matrix = DMatrix::zeros(dim, dim);
    let mut x = pi.as_slice().to_vec();
    if pi.min_kappa() > h {
        for c in 0..dim {
            let orig = x[c];
            x[c] = orig + h;
            let up = gradient_raw(game, &x)?;
            x[c] = orig - h;
            let down = gradient_raw(game, &x)?;
            x[c] = orig;
            for r in 0..dim {
                matrix[(r, c)] = (up[r] - down[r]) / (2.0 * h);
            }
        }
        return Ok(Jacobian {
            matrix,
            scheme: JacobianScheme::Central,
        });
    }
    let base = gradient_raw(game, &x)?;
    for (i, s) in shape.blocks() {
        let range = shape.block_range(i, s);
        let (b_local, &xb) = pi
            .row(i, s)
            .iter()
            .enumerate()
            .fold((0, &f64::NEG_INFINITY), |acc, (a, p)| if *p > *acc.1 { (a, p) } else { acc });
        if xb < 2.0 * h {
            return Err(Error::BoundaryPolicy(format!(
                "block (player {i}, state {s}) has no entry above 2h"
            )));
        }
        let b = range.start + b_local;
        for c in range.clone().filter(|c| *c != b) {
            let step = |t: f64, x: &mut Vec<f64>| -> Result<Vec<f64>> {
                let (xc, xb) = (x[c], x[b]);
                x[c] = xc + t;
                x[b] = xb - t;
                let g = gradient_raw(game, x);
                x[c] = xc;
                x[b] = xb;
                g
            };
            let one = step(h, &mut x)?;
            let two = step(2.0 * h, &mut x)?;
            for r in 0..dim {
                matrix[(r, c)] = (-3.0 * base[r] + 4.0 * one[r] - two[r]) / (2.0 * h);
            }
        }
    }
    Ok(Jacobian {
        matrix,
        scheme: JacobianScheme::Tangent,
    })
}

/// Lower and upper bounds on the mismatch coefficient
/// `C = max_{π,π'} ‖ν^π / ν^{π'}‖_∞`.
///
/// The lower bound ranges over deterministic profile pairs, exhaustively up
/// to [`MISMATCH_PAIR_CAP`] pairs and by seeded uniform sampling beyond it.
pub fn mismatch_coefficient(game: &GameSpec) -> Result<MismatchBound> {
    let shape = game.shape();
    let rho_min = game
        .initial_dist()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let c_upper = 1.0 / (game.zeta_min() * rho_min);
    let nu_of = |index: u128| -> Result<Vec<f64>> {
        let pi = PolicyProfile::deterministic(shape, &shape.deterministic_choices(index))?;
        Ok(visitation(game, &pi)?.nu)
    };
    let ratio = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x / y).fold(0.0, f64::max);
    let count = shape.deterministic_count();
    match count {
        Some(k) if k.checked_mul(k).is_some_and(|p| p <= MISMATCH_PAIR_CAP) => {
            let all: Vec<Vec<f64>> = (0..k).map(nu_of).collect::<Result<_>>()?;
            let mut c_lower: f64 = 1.0;
            for a in &all {
                for b in &all {
                    c_lower = c_lower.max(ratio(a, b));
                }
            }
            Ok(MismatchBound {
                c_lower,
                c_upper,
                method: MismatchMethod::Enumerated,
                pairs: k * k,
            })
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(MISMATCH_SEED);
            let mut c_lower: f64 = 1.0;
            let draw = |rng: &mut ChaCha8Rng| -> Result<Vec<f64>> {
                let choices: Vec<usize> = shape
                    .blocks()
                    .map(|(i, _)| rng.random_range(0..shape.n_actions(i)))
                    .collect();
                let pi = PolicyProfile::deterministic(shape, &choices)?;
                Ok(visitation(game, &pi)?.nu)
            };
            for _ in 0..MISMATCH_PAIR_CAP {
                let a = draw(&mut rng)?;
                let b = draw(&mut rng)?;
                c_lower = c_lower.max(ratio(&a, &b));
            }
            Ok(MismatchBound {
                c_lower,
                c_upper,
                method: MismatchMethod::Sampled,
                pairs: MISMATCH_PAIR_CAP,
            })
        }
    }
}

/// Expected episodic sum `E_τ[Σ_t f(s_t, a_t)] = Σ_s ν(s) Σ_a π(a|s) f(s,a)`
/// for a table `f[state][joint action]`.
pub fn conversion_expectation(game: &GameSpec, pi: &PolicyProfile, f: &[Vec<f64>]) -> Result<f64> {
    check_table(game, f)?;
    let nu = visitation(game, pi)?.nu;
    let joint = joint_probs(game, pi.as_slice());
    Ok((0..game.n_states())
        .map(|s| nu[s] * joint[s].iter().zip(&f[s]).map(|(w, x)| w * x).sum::<f64>())
        .sum())
}

pub(crate) fn check_table(game: &GameSpec, f: &[Vec<f64>]) -> Result<()> {
    if f.len() != game.n_states() {
        return Err(Error::DimensionMismatch {
            expected: game.n_states(),
            got: f.len(),
        });
    }
    if let Some(row) = f.iter().find(|row| row.len() != game.n_joint()) {
        return Err(Error::DimensionMismatch {
            expected: game.n_joint(),
            got: row.len(),
        });
    }
    Ok(())
}

/// Expected stage reward `r̄_i(s) = Σ_a π(a|s) r_i(s,a)` broadcast to a
/// `[state][joint]` table (constant in the joint action).
pub fn mean_reward_table(game: &GameSpec, pi: &PolicyProfile, player: usize) -> Vec<Vec<f64>> {
    let joint = joint_probs(game, pi.as_slice());
    (0..game.n_states())
        .map(|s| {
            let rbar: f64 = joint[s]
                .iter()
                .enumerate()
                .map(|(j, w)| w * game.reward(player, s, j))
                .sum();
            vec![rbar; game.n_joint()]
        })
        .collect()
}

/// Reward table `r_i(s, a)` of one player as `[state][joint]`.
pub fn reward_table(game: &GameSpec, player: usize) -> Vec<Vec<f64>> {
    (0..game.n_states())
        .map(|s| (0..game.n_joint()).map(|j| game.reward(player, s, j)).collect())
        .collect()
}

/// Euclidean norm of each player's slice of a flat profile-layout vector.
pub fn player_norms(shape: &PolicyShape, v: &[f64]) -> Vec<f64> {
    (0..shape.n_players())
        .map(|i| v[shape.player_range(i)].iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{coord2, handoff2, pennies2, single_state};

    fn det(game: &GameSpec, choices: &[usize]) -> PolicyProfile {
        PolicyProfile::deterministic(game.shape(), choices).unwrap()
    }

    #[test]
    fn single_state_matrix_is_continuation() {
        let g = coord2();
        let m = transition_matrix(&g, &PolicyProfile::uniform(g.shape()));
        assert_eq!(m.nrows(), 1);
        assert!((m[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn handoff_matrix_at_both_zero() {
        let g = handoff2();
        let m = transition_matrix(&g, &det(&g, &[0, 0, 0, 0]));
        assert_eq!(m[(0, 1)], 0.5);
        assert_eq!(m[(0, 0)] + m[(1, 0)] + m[(1, 1)], 0.0);
    }

    #[test]
    fn coord2_values_at_corner() {
        let g = coord2();
        let rep = value_report(&g, &det(&g, &[0, 0])).unwrap();
        for i in 0..2 {
            assert!((rep.v[i][0] - 2.0).abs() < 1e-12);
            assert!((rep.qbar[i][0][0] - 2.0).abs() < 1e-12);
            assert!(rep.qbar[i][0][1].abs() < 1e-12);
        }
    }

    #[test]
    fn pennies_uniform_is_flat() {
        let g = pennies2();
        let pi = PolicyProfile::uniform(g.shape());
        let rep = value_report(&g, &pi).unwrap();
        assert!(rep.v_rho.iter().all(|v| v.abs() < 1e-12));
        assert!(policy_gradient(&g, &pi).unwrap().iter().all(|v| v.abs() < 1e-12));
        assert!(gradient_fd(&g, &pi, FD_STEP).unwrap().iter().all(|v| v.abs() <= 1e-8));
    }

    #[test]
    fn coord2_gradient_at_corner() {
        let g = coord2();
        let v = policy_gradient(&g, &det(&g, &[0, 0])).unwrap();
        for (got, want) in v.iter().zip([4.0, 0.0, 4.0, 0.0]) {
            assert!((got - want).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn single_state_visitation() {
        let g = coord2();
        let rep = visitation(&g, &PolicyProfile::uniform(g.shape())).unwrap();
        assert!((rep.nu[0] - 2.0).abs() < 1e-12);
        assert!((rep.z - 2.0).abs() < 1e-12);
        assert!((rep.d[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn handoff_visitation_from_s0() {
        let g = handoff2();
        let rep = visitation_from(&g, &det(&g, &[0, 0, 0, 0]), &[1.0, 0.0]).unwrap();
        assert!((rep.nu[0] - 1.0).abs() < 1e-12);
        assert!((rep.nu[1] - 0.5).abs() < 1e-12);
        assert!((rep.z - 1.5).abs() < 1e-12);
    }

    #[test]
    fn fd_rejects_bad_steps_and_boundary() {
        let g = coord2();
        let pi = PolicyProfile::uniform(g.shape());
        assert_eq!(gradient_fd(&g, &pi, 0.0).unwrap_err().code(), "BOUNDARY_POLICY");
        assert_eq!(
            gradient_fd(&g, &det(&g, &[0, 0]), FD_STEP).unwrap_err().code(),
            "BOUNDARY_POLICY"
        );
    }

    #[test]
    fn coord2_fd_matches_at_skewed_point() {
        let g = coord2();
        let pi = PolicyProfile::constant_rows(g.shape(), &[0.9, 0.1]).unwrap();
        let exact = policy_gradient(&g, &pi).unwrap();
        let fd = gradient_fd(&g, &pi, FD_STEP).unwrap();
        for (e, f) in exact.iter().zip(&fd) {
            assert!((e - f).abs() <= 1e-6 * e.abs().max(1.0));
        }
    }

    #[test]
    fn zero_reward_jacobian_vanishes() {
        let g = single_state(0.5, &[2, 2], vec![vec![0.0; 4]; 2]).unwrap();
        let j = jacobian(&g, &PolicyProfile::uniform(g.shape()), FD_STEP).unwrap();
        assert!(j.matrix.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn tangent_scheme_at_vertex() {
        let g = coord2();
        let j = jacobian(&g, &det(&g, &[0, 0]), FD_STEP).unwrap();
        assert_eq!(j.scheme, JacobianScheme::Tangent);
        // reference columns are zero
        assert!(j.matrix.column(0).iter().all(|x| *x == 0.0));
        assert!(j.matrix.column(2).iter().all(|x| *x == 0.0));
    }

    #[test]
    fn mismatch_single_state() {
        let g = single_state(0.5, &[2, 2], vec![vec![0.0; 4]; 2]).unwrap();
        let c = mismatch_coefficient(&g).unwrap();
        assert_eq!(c.c_lower, 1.0);
        assert_eq!(c.c_upper, 2.0);
        assert_eq!(c.method, MismatchMethod::Enumerated);
    }

    #[test]
    fn conversion_examples() {
        let g = coord2();
        let pi = PolicyProfile::uniform(g.shape());
        let ones = vec![vec![1.0; 4]];
        assert!((conversion_expectation(&g, &pi, &ones).unwrap() - 2.0).abs() < 1e-12);
        let agree = vec![vec![1.0, 0.0, 0.0, 1.0]];
        assert!((conversion_expectation(&g, &pi, &agree).unwrap() - 1.0).abs() < 1e-12);
        let rbar = mean_reward_table(&g, &pi, 0);
        let v = values_rho(&g, &pi).unwrap()[0];
        assert!((conversion_expectation(&g, &pi, &rbar).unwrap() - v).abs() < 1e-12);
    }
}
