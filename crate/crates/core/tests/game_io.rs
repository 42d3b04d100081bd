use proptest::prelude::*;
use sgpg::game::{
    builtin_game, coord2, game_to_json, handoff2, load_game, parse_builtin_spec, parse_game_json, pennies2,
    random_game, save_game, validate_game,
};
use sgpg::policy::{parse_policy_json, PolicyFile};
use sgpg::{Error, PolicyProfile};

fn issue_codes(err: Error) -> Vec<&'static str> {
    err.issue_codes()
}

#[test]
fn save_then_load_is_identity() {
    let dir = tempfile::tempdir().unwrap();
    for game in [coord2(), pennies2(), handoff2(), random_game(7, 3, &[2, 3], 0.4).unwrap()] {
        let path = dir.path().join("game.json");
        save_game(&game, &path).unwrap();
        let loaded = load_game(&path).unwrap();
        assert!(loaded.warnings.is_empty());
        assert_eq!(loaded.game, game);
        let again = dir.path().join("again.json");
        save_game(&loaded.game, &again).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn missing_field_is_a_parse_error() {
    let mut doc: serde_json::Value = serde_json::from_str(&game_to_json(&coord2())).unwrap();
    doc.as_object_mut().unwrap().remove("transitions");
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, doc.to_string()).unwrap();
    let err = load_game(&path).unwrap_err();
    assert_eq!(err.code(), "PARSE_ERROR");
    assert!(err.to_string().contains("transitions"), "{err}");
    assert!(err.to_string().contains("broken.json"), "{err}");
}

#[test]
fn unknown_fields_are_rejected() {
    let mut doc: serde_json::Value = serde_json::from_str(&game_to_json(&coord2())).unwrap();
    doc["extra"] = serde_json::json!(1);
    assert_eq!(parse_game_json(&doc.to_string()).unwrap_err().code(), "PARSE_ERROR");
}

#[test]
fn continuation_summing_past_one_has_no_stop() {
    let mut raw = coord2().raw().clone();
    raw.transitions[0][1] = vec![1.000_000_000_1];
    assert_eq!(issue_codes(validate_game(raw).unwrap_err()), vec!["ZERO_STOP_PROBABILITY"]);
    let mut raw = coord2().raw().clone();
    raw.transitions[0][1] = vec![1.1];
    assert_eq!(issue_codes(validate_game(raw).unwrap_err()), vec!["ROW_SUM_MISMATCH"]);
}

#[test]
fn near_normalized_initial_distribution_is_fixed_up() {
    let mut raw = handoff2().raw().clone();
    raw.initial_dist = vec![0.5, 0.500_000_000_1];
    let v = validate_game(raw).unwrap();
    assert_eq!(v.warnings.len(), 1);
    assert!((v.game.initial_dist().iter().sum::<f64>() - 1.0).abs() <= 1e-15);
    let mut raw = handoff2().raw().clone();
    raw.initial_dist = vec![1.0, 0.0];
    assert_eq!(issue_codes(validate_game(raw).unwrap_err()), vec!["EMPTY_SUPPORT_INITIAL_DIST"]);
}

#[test]
fn builtin_catalogue() {
    let g = builtin_game("coord2", &Default::default()).unwrap();
    assert_eq!((g.n_states(), g.actions(), g.zeta_min()), (1, &[2usize, 2][..], 0.5));
    let p = pennies2();
    for s in 0..p.n_states() {
        for j in 0..p.n_joint() {
            assert_eq!(p.reward(0, s, j) + p.reward(1, s, j), 0.0);
        }
    }
    let (name, params) = parse_builtin_spec("random:seed=7,states=3,actions=2x3,zeta=0.4").unwrap();
    let a = builtin_game(&name, &params).unwrap();
    let b = builtin_game(&name, &params).unwrap();
    assert_eq!(a, b);
    assert!((a.constant_stop().unwrap() - 0.4).abs() <= 1e-12);
    assert_eq!(builtin_game("chess", &Default::default()).unwrap_err().code(), "UNKNOWN_NAME");
    let (name, params) = parse_builtin_spec("coord2:zeta=0.3").unwrap();
    assert_eq!(builtin_game(&name, &params).unwrap_err().code(), "BAD_PARAMS");
}

#[test]
fn policy_files_round_trip() {
    let g = handoff2();
    let pi = PolicyProfile::from_flat(g.shape(), vec![0.6, 0.4, 0.3, 0.7, 0.55, 0.45, 0.2, 0.8]).unwrap();
    let text = serde_json::to_string(&PolicyFile::from_profile(&pi)).unwrap();
    assert_eq!(parse_policy_json(&text, g.shape()).unwrap(), pi);
    assert_eq!(parse_policy_json("{not json", g.shape()).unwrap_err().code(), "PARSE_ERROR");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn random_games_round_trip(seed in any::<u64>(), states in 1usize..4, a in 1usize..4, zeta in 0.05..1.0f64) {
        let g = random_game(seed, states, &[a, 2], zeta).unwrap();
        let back = parse_game_json(&game_to_json(&g)).unwrap();
        prop_assert_eq!(&back.game, &g);
        for s in 0..g.n_states() {
            for j in 0..g.n_joint() {
                let cont: f64 = g.transition_row(s, j).iter().sum();
                prop_assert_eq!(g.stop_prob(s, j), 1.0 - cont);
            }
        }
    }
}
