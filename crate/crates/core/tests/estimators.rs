mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sgpg::estimators::{
    bias_constant, estimator_stats, make_signal, mix_policy, Feedback, NoiseConfig, NoiseKind,
};
use sgpg::exact::{log_trick_mean, policy_gradient, visitation};
use sgpg::game::{coord2, handoff2, pennies2, random_game, single_state};
use sgpg::simulation::{mc_functional, mean_and_se, occupancy, sample_episode, RngState};
use sgpg::PolicyProfile;

#[test]
fn occupancy_matches_visitation() {
    let mut seed_rng = ChaCha8Rng::seed_from_u64(11);
    for (k, game) in [handoff2(), random_game(3, 3, &[2, 2], 0.3).unwrap()].into_iter().enumerate() {
        let pi = common::random_policy(game.shape(), 0.05, &mut seed_rng);
        let nu = visitation(&game, &pi).unwrap().nu;
        let est = occupancy(&game, &pi, 40_000, &mut RngState::new(k as u64, 0)).unwrap();
        for (e, n) in est.iter().zip(&nu) {
            assert!((e.mean - n).abs() <= 3.0 * e.std_err, "{e:?} vs {n}");
        }
    }
}

#[test]
fn one_over_zeta_episode_length() {
    let g = single_state(0.5, &[2, 2], vec![vec![0.0; 4]; 2]).unwrap();
    let pi = PolicyProfile::uniform(g.shape());
    let est = mc_functional(&g, &pi, &[vec![1.0; 4]], 100_000, &mut RngState::new(1, 0)).unwrap();
    assert!((est.mean - 2.0).abs() <= 3.0 * est.std_err);
    let mut rng = RngState::new(2, 0);
    let lens: Vec<f64> = (0..100_000)
        .map(|_| sample_episode(&g, &pi, &mut rng).unwrap().len() as f64)
        .collect();
    let est = mean_and_se(&lens);
    assert!((est.mean - 2.0).abs() <= 3.0 * est.std_err);
}

#[test]
fn coordination_uniform_reinforce_mean() {
    let g = coord2();
    let pi = PolicyProfile::uniform(g.shape());
    let stats = estimator_stats(&g, &pi, 0.0, 200_000, &mut RngState::new(21, 0)).unwrap();
    assert!(stats.max_z <= 4.0, "{stats:?}");
}

#[test]
fn estimator_mean_is_the_likelihood_gradient() {
    // Generic interior policies: the draws agree with the closed-form mean of
    // the estimator, and with the gradient once block averages are removed.
    let g = handoff2();
    let pi = PolicyProfile::from_flat(g.shape(), vec![0.6, 0.4, 0.3, 0.7, 0.55, 0.45, 0.2, 0.8]).unwrap();
    let stats = estimator_stats(&g, &pi, 0.0, 100_000, &mut RngState::new(5, 0)).unwrap();
    assert!(stats.max_z_estimator <= 4.0, "{stats:?}");
    assert!(stats.max_z_tangent <= 4.0, "{stats:?}");
    assert_eq!(stats.estimator_mean, log_trick_mean(&g, &pi).unwrap());
}

#[test]
fn mixed_policy_variance_example() {
    let g = coord2();
    let star = PolicyProfile::deterministic(g.shape(), &[0, 0]).unwrap();
    let stats = estimator_stats(&g, &star, 0.3, 100_000, &mut RngState::new(6, 0)).unwrap();
    let bound: f64 = 24.0 * 4.0 / (0.3 * 0.0625);
    assert!((bound - 5120.0).abs() < 1e-9);
    for mse in &stats.mse {
        assert!(*mse <= bound, "{mse}");
    }
}

#[test]
fn mixing_bias_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for game in [coord2(), pennies2(), handoff2()] {
        let shape = game.shape().clone();
        let zeta = game.zeta_min();
        for &eps in &[0.01, 0.1, 0.5] {
            let pi = common::random_policy(&shape, 0.0, &mut rng);
            let hat = mix_policy(&pi, eps).unwrap();
            assert!((0..shape.n_players()).all(|i| hat.kappa(i) >= eps / shape.n_actions(i) as f64 - 1e-15));
            let v = policy_gradient(&game, &pi).unwrap();
            let v_hat = policy_gradient(&game, &hat).unwrap();
            let g_bound = bias_constant(&game) * eps;
            let moves: f64 = (0..shape.n_players())
                .map(|j| {
                    let r = shape.player_range(j);
                    let d: f64 = r.map(|c| (hat.as_slice()[c] - pi.as_slice()[c]).powi(2)).sum();
                    (shape.n_actions(j) as f64).sqrt() * d.sqrt()
                })
                .sum();
            for i in 0..shape.n_players() {
                let r = shape.player_range(i);
                let bias = r.map(|c| (v_hat[c] - v[c]).powi(2)).sum::<f64>().sqrt();
                let smooth = 3.0 * (shape.n_actions(i) as f64).sqrt() / zeta.powi(3) * moves;
                assert!(bias <= smooth + 1e-12 && smooth <= g_bound + 1e-12, "{bias} {smooth} {g_bound}");
            }
        }
    }
}

#[test]
fn stochastic_signals_average_to_gradient() {
    let g = handoff2();
    let pi = PolicyProfile::from_flat(g.shape(), vec![0.6, 0.4, 0.3, 0.7, 0.55, 0.45, 0.2, 0.8]).unwrap();
    let v = policy_gradient(&g, &pi).unwrap();
    for kind in [NoiseKind::Uniform, NoiseKind::Gaussian] {
        let fb = Feedback::Stochastic(NoiseConfig { kind, sigma: 1.0 });
        let mut rng = RngState::new(7, kind as u64);
        let mut cols = vec![Vec::new(); v.len()];
        for _ in 0..10_000 {
            let sig = make_signal(&fb, &g, &pi, 0.0, &mut rng, false).unwrap();
            for (c, x) in sig.vhat.iter().enumerate() {
                cols[c].push(*x);
            }
        }
        for (c, col) in cols.iter().enumerate() {
            let est = mean_and_se(col);
            assert!((est.mean - v[c]).abs() <= 4.0 * est.std_err, "{kind:?} {c}");
        }
    }
}

#[test]
fn instrumented_noise_is_centred() {
    let g = coord2();
    let pi = PolicyProfile::from_flat(g.shape(), vec![0.7, 0.3, 0.4, 0.6]).unwrap();
    let fb = Feedback::ValueBased { batch: 1 };
    let mut rng = RngState::new(8, 0);
    let mut cols = vec![Vec::new(); 4];
    for _ in 0..50_000 {
        let sig = make_signal(&fb, &g, &pi, 0.2, &mut rng, true).unwrap();
        for (c, x) in sig.decomposition.unwrap().noise.iter().enumerate() {
            cols[c].push(*x);
        }
    }
    for col in &cols {
        let est = mean_and_se(col);
        assert!(est.mean.abs() <= 4.0 * est.std_err, "{est:?}");
    }
}
