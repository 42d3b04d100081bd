//! Gradient signals: exact, noisy, and REINFORCE with ε-greedy exploration.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{log_trick_mean, policy_gradient};
use crate::game::GameSpec;
use crate::policy::PolicyProfile;
use crate::simulation::{mean_and_se, McEstimate, sample_episode, RngState, Trajectory};

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceEstimate {
    /// Flat profile-layout vector; player `i`'s slice is `v̂_i`.
    pub vhat: Vec<f64>,
    /// Episode returns `R_i(τ)`.
    pub returns: Vec<f64>,
}

/// `v̂_i = R_i(τ) · Σ_t e_{(s_t, a_{i,t})} / π̂_i(a_{i,t} | s_t)`.
pub fn reinforce_estimate(pi_hat: &PolicyProfile, traj: &Trajectory) -> Result<ReinforceEstimate> {
    let shape = pi_hat.shape();
    let np = shape.n_players();
    if traj.n_players() != np {
        return Err(Error::DimensionMismatch {
            expected: np,
            got: traj.n_players(),
        });
    }
    let mut score = vec![0.0; shape.dim()];
    for t in 0..traj.len() {
        let s = traj.states[t];
        if s >= shape.n_states() {
            return Err(Error::DimensionMismatch {
                expected: shape.n_states(),
                got: s + 1,
            });
        }
        for i in 0..np {
            let a = traj.action(t, i);
            let p = pi_hat.prob(i, s, a);
            if p <= 0.0 {
                return Err(Error::ZeroProbabilityAction {
                    player: i,
                    state: s,
                    action: a,
                });
            }
            score[shape.index(i, s, a)] += 1.0 / p;
        }
    }
    let returns: Vec<f64> = (0..np).map(|i| traj.total_reward(i)).collect();
    for (i, r) in returns.iter().enumerate() {
        for x in &mut score[shape.player_range(i)] {
            *x *= r;
        }
    }
    Ok(ReinforceEstimate {
        vhat: score,
        returns,
    })
}

/// `π̂_i(·|s) = (1 − ε) π_i(·|s) + ε / A_i`, the same ε for every player.
pub fn mix_policy(pi: &PolicyProfile, eps: f64) -> Result<PolicyProfile> {
    if !(0.0..=1.0).contains(&eps) {
        return Err(Error::EpsOutOfRange(eps));
    }
    if eps == 0.0 {
        return Ok(pi.clone());
    }
    let shape = pi.shape();
    let mut probs = pi.as_slice().to_vec();
    for (i, s) in shape.blocks() {
        let u = eps / shape.n_actions(i) as f64;
        for p in &mut probs[shape.block_range(i, s)] {
            *p = (1.0 - eps) * *p + u;
        }
    }
    Ok(PolicyProfile::from_parts_unchecked(shape, probs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    /// Unbounded noise; the bounded-noise hypothesis only holds in expectation.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Half-width for uniform noise, standard deviation for Gaussian.
    pub sigma: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            kind: NoiseKind::Uniform,
            sigma: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    Full,
    Stochastic,
    ValueBased,
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Model::Full),
            "stochastic" => Ok(Model::Stochastic),
            "value_based" => Ok(Model::ValueBased),
            other => Err(Error::BadParams(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Feedback {
    /// Exact gradients.
    Full,
    /// Exact gradients plus i.i.d. zero-mean noise on every coordinate.
    Stochastic(NoiseConfig),
    /// REINFORCE on `batch` episodes sampled from the ε-mixed policy.
    ValueBased { batch: usize },
}

impl Feedback {
    pub fn model(&self) -> Model {
        match self {
            Feedback::Full => Model::Full,
            Feedback::Stochastic(_) => Model::Stochastic,
            Feedback::ValueBased { .. } => Model::ValueBased,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    /// `v(π_n)`
    pub v: Vec<f64>,
    /// `v̂_n − E[v̂_n | π_n]`
    pub noise: Vec<f64>,
    /// `E[v̂_n | π_n] − v(π_n)`
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradientSignal {
    pub vhat: Vec<f64>,
    pub model: Model,
    pub bias_bound: f64,
    pub noise_bound: f64,
    pub decomposition: Option<Decomposition>,
}

/// `G = 3 n A^{3/2} √|S| / ζ³` with `A = Σ_i A_i`.
pub fn bias_constant(game: &GameSpec) -> f64 {
    let a = game.shape().total_actions() as f64;
    3.0 * game.n_players() as f64 * a.powf(1.5) * (game.n_states() as f64).sqrt()
        / game.zeta_min().powi(3)
}

/// Per-player second-moment bound `24 A_i / (κ_i ζ⁴)` of the REINFORCE
/// estimator at a policy with minimum probability `κ_i`.
pub fn variance_bound(game: &GameSpec, player: usize, kappa: f64) -> f64 {
    24.0 * game.actions()[player] as f64 / (kappa * game.zeta_min().powi(4))
}

/// Per-player bound `24 A_i² / (ε ζ⁴)` after mixing with exploration `ε`.
pub fn mixed_variance_bound(game: &GameSpec, player: usize, eps: f64) -> f64 {
    let a = game.actions()[player] as f64;
    24.0 * a * a / (eps * game.zeta_min().powi(4))
}

/// Builds the signal `v̂_n` fed to the learner at `pi`. `eps` is used only
/// by value-based feedback. With `instrumented`, the exact conditional
/// mean is computed and the noise/bias split is attached.
pub fn make_signal(
    feedback: &Feedback,
    game: &GameSpec,
    pi: &PolicyProfile,
    eps: f64,
    rng: &mut RngState,
    instrumented: bool,
) -> Result<GradientSignal> {
    let dim = game.shape().dim();
    match *feedback {
        Feedback::Full => {
            let v = policy_gradient(game, pi)?;
            let decomposition = instrumented.then(|| Decomposition {
                v: v.clone(),
                noise: vec![0.0; dim],
                bias: vec![0.0; dim],
            });
            Ok(GradientSignal {
                vhat: v,
                model: Model::Full,
                bias_bound: 0.0,
                noise_bound: 0.0,
                decomposition,
            })
        }
        Feedback::Stochastic(noise) => {
            if !(noise.sigma >= 0.0 && noise.sigma.is_finite()) {
                return Err(Error::BadParams(format!("noise sigma = {}", noise.sigma)));
            }
            let v = policy_gradient(game, pi)?;
            let xi: Vec<f64> = if noise.sigma == 0.0 {
                vec![0.0; dim]
            } else {
                match noise.kind {
                    NoiseKind::Uniform => {
                        let d = Uniform::new_inclusive(-noise.sigma, noise.sigma)
                            .map_err(|e| Error::BadParams(e.to_string()))?;
                        (0..dim).map(|_| d.sample(rng.rng())).collect()
                    }
                    NoiseKind::Gaussian => {
                        let d = Normal::new(0.0, noise.sigma)
                            .map_err(|e| Error::BadParams(e.to_string()))?;
                        (0..dim).map(|_| d.sample(rng.rng())).collect()
                    }
                }
            };
            let per_coord = match noise.kind {
                NoiseKind::Uniform => noise.sigma / 3f64.sqrt(),
                NoiseKind::Gaussian => noise.sigma,
            };
            let vhat = v.iter().zip(&xi).map(|(a, b)| a + b).collect();
            let decomposition = instrumented.then(|| Decomposition {
                v,
                noise: xi,
                bias: vec![0.0; dim],
            });
            Ok(GradientSignal {
                vhat,
                model: Model::Stochastic,
                bias_bound: 0.0,
                noise_bound: per_coord * (dim as f64).sqrt(),
                decomposition,
            })
        }
        Feedback::ValueBased { batch } => {
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::EpsOutOfRange(eps));
            }
            if batch == 0 {
                return Err(Error::BadParams("batch must be at least 1".into()));
            }
            let pi_hat = mix_policy(pi, eps)?;
            let mut vhat = vec![0.0; dim];
            for _ in 0..batch {
                let traj = sample_episode(game, &pi_hat, rng)?;
                let est = reinforce_estimate(&pi_hat, &traj)?;
                for (acc, x) in vhat.iter_mut().zip(&est.vhat) {
                    *acc += x;
                }
            }
            let scale = 1.0 / batch as f64;
            vhat.iter_mut().for_each(|x| *x *= scale);
            let second_moment: f64 = (0..game.n_players())
                .map(|i| mixed_variance_bound(game, i, eps))
                .sum();
            let decomposition = if instrumented {
                let v = policy_gradient(game, pi)?;
                let mean = log_trick_mean(game, &pi_hat)?;
                Some(Decomposition {
                    noise: vhat.iter().zip(&mean).map(|(a, b)| a - b).collect(),
                    bias: mean.iter().zip(&v).map(|(a, b)| a - b).collect(),
                    v,
                })
            } else {
                None
            };
            Ok(GradientSignal {
                vhat,
                model: Model::ValueBased,
                bias_bound: bias_constant(game) * eps,
                noise_bound: (second_moment * scale).sqrt(),
                decomposition,
            })
        }
    }
}

/// Empirical statistics of the REINFORCE estimator at a fixed policy.
#[derive(Debug, Clone, Serialize)]
pub struct EstimatorStats {
    pub n_draws: usize,
    pub eps: f64,
    /// Exact gradient at the sampling policy `π̂`.
    pub exact_sampling: Vec<f64>,
    /// Exact mean of the estimator at `π̂`; differs from `exact_sampling`
    /// by a constant on each simplex block.
    pub estimator_mean: Vec<f64>,
    /// Exact gradient at the unmixed policy `π`.
    pub exact: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Largest `|mean − exact_sampling| / std_err` over coordinates with
    /// positive standard error.
    pub max_z: f64,
    /// Same, against `estimator_mean`.
    pub max_z_estimator: f64,
    /// Same, after removing the per-block average from both the draws and
    /// `exact_sampling` (the component a projection step can see).
    pub max_z_tangent: f64,
    /// Per player `mean ‖v̂_i − v_i(π̂)‖²`.
    pub mse: Vec<f64>,
    /// Per player `24 A_i / (κ_i ζ⁴)` at `π̂`.
    pub mse_bound: Vec<f64>,
    /// Per player `‖v_i(π̂) − v_i(π)‖`.
    pub bias_norm: Vec<f64>,
    pub bias_bound: f64,
}

/// Draws `n_draws` single-episode REINFORCE estimates at `mix(π, eps)`.
pub fn estimator_stats(
    game: &GameSpec,
    pi: &PolicyProfile,
    eps: f64,
    n_draws: usize,
    rng: &mut RngState,
) -> Result<EstimatorStats> {
    if n_draws < 2 {
        return Err(Error::BadParams("need at least two draws".into()));
    }
    let shape = game.shape();
    let pi_hat = mix_policy(pi, eps)?;
    let exact_sampling = policy_gradient(game, &pi_hat)?;
    let exact = policy_gradient(game, pi)?;
    let dim = shape.dim();
    let np = shape.n_players();
    let mut samples = vec![Vec::with_capacity(n_draws); dim];
    let mut sq = vec![0.0; np];
    for _ in 0..n_draws {
        let traj = sample_episode(game, &pi_hat, rng)?;
        let est = reinforce_estimate(&pi_hat, &traj)?;
        for (c, x) in est.vhat.iter().enumerate() {
            samples[c].push(*x);
        }
        for (i, acc) in sq.iter_mut().enumerate() {
            *acc += shape
                .player_range(i)
                .map(|c| (est.vhat[c] - exact_sampling[c]).powi(2))
                .sum::<f64>();
        }
    }
    let summaries: Vec<_> = samples.iter().map(|s| mean_and_se(s)).collect();
    let mean: Vec<f64> = summaries.iter().map(|m| m.mean).collect();
    let std_err: Vec<f64> = summaries.iter().map(|m| m.std_err).collect();
    let estimator_mean = log_trick_mean(game, &pi_hat)?;
    let max_z = worst_z(&summaries, &exact_sampling);
    let max_z_estimator = worst_z(&summaries, &estimator_mean);
    let mut centered = samples;
    let mut centered_exact = exact_sampling.clone();
    for (i, s) in shape.blocks() {
        let range = shape.block_range(i, s);
        let k = range.len() as f64;
        for d in 0..n_draws {
            let avg = range.clone().map(|c| centered[c][d]).sum::<f64>() / k;
            range.clone().for_each(|c| centered[c][d] -= avg);
        }
        let avg = centered_exact[range.clone()].iter().sum::<f64>() / k;
        centered_exact[range].iter_mut().for_each(|x| *x -= avg);
    }
    let tangent: Vec<_> = centered.iter().map(|s| mean_and_se(s)).collect();
    let max_z_tangent = worst_z(&tangent, &centered_exact);
    let bias_norm = (0..np)
        .map(|i| {
            shape
                .player_range(i)
                .map(|c| (exact_sampling[c] - exact[c]).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    Ok(EstimatorStats {
        n_draws,
        eps,
        mse: sq.iter().map(|s| s / n_draws as f64).collect(),
        mse_bound: (0..np)
            .map(|i| variance_bound(game, i, pi_hat.kappa(i)))
            .collect(),
        bias_norm,
        bias_bound: bias_constant(game) * eps,
        exact_sampling,
        estimator_mean,
        exact,
        mean,
        std_err,
        max_z,
        max_z_estimator,
        max_z_tangent,
    })
}

/// Largest `|mean − target| / se` over coordinates with positive `se`. A
/// coordinate with zero spread counts as infinitely far unless it matches
/// to rounding.
fn worst_z(stats: &[McEstimate], target: &[f64]) -> f64 {
    stats
        .iter()
        .zip(target)
        .map(|(m, e)| {
            let gap = (m.mean - e).abs();
            if m.std_err > 0.0 {
                gap / m.std_err
            } else if gap <= 1e-9 * (1.0 + e.abs()) {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// Draws a random interior profile with every entry at least `floor`.
pub fn random_interior<R: Rng>(shape: &crate::policy::PolicyShape, floor: f64, rng: &mut R) -> PolicyProfile {
    let mut probs = Vec::with_capacity(shape.dim());
    for (i, _) in shape.blocks() {
        let k = shape.n_actions(i);
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = raw.iter().sum();
        let slack = 1.0 - floor * k as f64;
        probs.extend(raw.iter().map(|x| floor + slack * x / total));
    }
    PolicyProfile::from_parts_unchecked(shape, probs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{coord2, pennies2};

    #[test]
    fn single_step_log_trick() {
        let g = coord2();
        let pi = PolicyProfile::uniform(g.shape());
        let mut traj = Trajectory::new(2);
        traj.push(0, 1, &[0, 1], &[-1.0, -1.0]);
        let est = reinforce_estimate(&pi, &traj).unwrap();
        assert_eq!(est.vhat, vec![-2.0, 0.0, 0.0, -2.0]);
        assert_eq!(est.returns, vec![-1.0, -1.0]);
    }

    #[test]
    fn zero_return_gives_zero_vector() {
        let g = coord2();
        let pi = PolicyProfile::uniform(g.shape());
        let mut traj = Trajectory::new(2);
        traj.push(0, 0, &[0, 0], &[1.0, 1.0]);
        traj.push(0, 1, &[0, 1], &[-1.0, -1.0]);
        let est = reinforce_estimate(&pi, &traj).unwrap();
        assert!(est.vhat.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn inconsistent_trajectory() {
        let g = coord2();
        let pi = PolicyProfile::deterministic(g.shape(), &[0, 0]).unwrap();
        let mut traj = Trajectory::new(2);
        traj.push(0, 1, &[0, 1], &[-1.0, -1.0]);
        assert_eq!(
            reinforce_estimate(&pi, &traj).unwrap_err().code(),
            "ZERO_PROBABILITY_ACTION"
        );
    }

    #[test]
    fn mixing_examples() {
        let g = coord2();
        let det = PolicyProfile::deterministic(g.shape(), &[0, 0]).unwrap();
        assert_eq!(mix_policy(&det, 0.0).unwrap(), det);
        assert_eq!(mix_policy(&det, 1.0).unwrap(), PolicyProfile::uniform(g.shape()));
        let mixed = mix_policy(&det, 0.2).unwrap();
        assert!((mixed.row(0, 0)[0] - 0.9).abs() < 1e-15);
        assert!((mixed.row(1, 0)[1] - 0.1).abs() < 1e-15);
        assert_eq!(mix_policy(&det, 1.5).unwrap_err().code(), "EPS_OUT_OF_RANGE");
        assert_eq!(mix_policy(&det, -0.1).unwrap_err().code(), "EPS_OUT_OF_RANGE");
    }

    #[test]
    fn full_and_noiseless_signals_agree() {
        let g = pennies2();
        let pi = PolicyProfile::uniform(g.shape());
        let mut rng = RngState::new(0, 0);
        let full = make_signal(&Feedback::Full, &g, &pi, 0.0, &mut rng, false).unwrap();
        assert!(full.vhat.iter().all(|x| x.abs() < 1e-12));
        assert_eq!(full.bias_bound, 0.0);
        let quiet = Feedback::Stochastic(NoiseConfig {
            kind: NoiseKind::Uniform,
            sigma: 0.0,
        });
        let noisy = make_signal(&quiet, &g, &pi, 0.0, &mut rng, false).unwrap();
        assert_eq!(noisy.vhat, full.vhat);
    }

    #[test]
    fn value_based_needs_positive_eps() {
        let g = coord2();
        let pi = PolicyProfile::uniform(g.shape());
        let fb = Feedback::ValueBased { batch: 1 };
        let err = make_signal(&fb, &g, &pi, 0.0, &mut RngState::new(0, 0), false).unwrap_err();
        assert_eq!(err.code(), "EPS_OUT_OF_RANGE");
    }

    #[test]
    fn instrumented_split_adds_up() {
        let g = coord2();
        let pi = PolicyProfile::constant_rows(g.shape(), &[0.7, 0.3]).unwrap();
        let fb = Feedback::ValueBased { batch: 1 };
        let sig = make_signal(&fb, &g, &pi, 0.3, &mut RngState::new(4, 0), true).unwrap();
        let d = sig.decomposition.unwrap();
        for c in 0..sig.vhat.len() {
            assert!((d.v[c] + d.bias[c] + d.noise[c] - sig.vhat[c]).abs() < 1e-9);
        }
    }
}
