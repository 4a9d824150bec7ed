mod support;

use nrlab_core::exact::{
    best_response_nash, build_agent_game, cce_constraint_rows, cce_slacks, expected_welfare,
    lift_smoothness_check, worst_cce_welfare,
};
use nrlab_core::mechanism::Mechanism;
use nrlab_core::simulator::Population;
use nrlab_core::smoothness::{certified_lambda, check_deviation_smoothness, SmoothnessParams};

#[test]
fn corpus_is_large_enough_and_tiny() {
    let c = support::corpus();
    assert!(c.len() >= 10);
    for inst in &c {
        assert!(inst.populations.len() <= 2);
        assert!(inst.populations.iter().all(|p| p.types.len() <= 2));
        assert!((0..inst.mechanism.n_players()).all(|i| inst.mechanism.actions().len(i) <= 3));
    }
}

#[test]
fn lift_holds_whenever_base_holds() {
    let mut lifted = 0;
    for inst in support::corpus() {
        let space = inst.value_space();
        let game = build_agent_game(&inst.mechanism, &inst.populations).unwrap();
        let certified = certified_lambda(&inst.mechanism, inst.rule.as_ref(), 1.0, &space).unwrap();
        for (lambda, mu) in [
            (0.5, 1.0),
            (certified, 1.0),
            (1.0 - (-1.0f64).exp(), 1.0),
            (0.25, 0.0),
        ] {
            let params = SmoothnessParams::new(lambda.max(0.0), mu).unwrap();
            let base =
                check_deviation_smoothness(&inst.mechanism, inst.rule.as_ref(), params, &space)
                    .unwrap();
            if base.holds {
                let lift =
                    lift_smoothness_check(&inst.mechanism, &game, inst.rule.as_ref(), params)
                        .unwrap();
                assert!(
                    lift.holds,
                    "{}: ({lambda}, {mu}) slack {}",
                    inst.name, lift.worst_slack
                );
                lifted += 1;
            }
        }
    }
    assert!(lifted >= 10);
}

#[test]
fn lp_bound_and_oracles() {
    for inst in support::corpus() {
        let space = inst.value_space();
        let game = build_agent_game(&inst.mechanism, &inst.populations).unwrap();
        let sol = worst_cce_welfare(&game).unwrap();
        assert!(
            cce_slacks(&game, &sol.distribution)
                .iter()
                .all(|&s| s >= -1e-7),
            "{}",
            inst.name
        );
        assert!((expected_welfare(&game, &sol.distribution) - sol.objective).abs() < 1e-12);
        let lambda = certified_lambda(&inst.mechanism, inst.rule.as_ref(), 1.0, &space)
            .unwrap()
            .max(0.0);
        let bound = lambda * game.expected_opt;
        assert!(
            sol.objective >= bound - 1e-6,
            "{}: {} < {bound}",
            inst.name,
            sol.objective
        );
        if let Some(s) = best_response_nash(&game, 200) {
            assert!(sol.objective <= game.welfare(s) + 1e-9, "{}", inst.name);
        }
        if game.n_profiles() <= 16 {
            let c: Vec<f64> = (0..game.n_profiles()).map(|s| game.welfare(s)).collect();
            let oracle = support::vertex_enumeration_min(&c, &cce_constraint_rows(&game)).unwrap();
            assert!(
                (oracle - sol.objective).abs() < 1e-6,
                "{}: lp {} vs vertices {oracle}",
                inst.name,
                sol.objective
            );
        }
    }
}

#[test]
fn two_unit_value_bidders_match_vertex_enumeration() {
    let m = Mechanism::first_price(2, 0.5, 1.0).unwrap();
    let game = build_agent_game(
        &m,
        &[Population::new(vec![1.0]), Population::new(vec![1.0])],
    )
    .unwrap();
    let sol = worst_cce_welfare(&game).unwrap();
    let c: Vec<f64> = (0..game.n_profiles()).map(|s| game.welfare(s)).collect();
    let oracle = support::vertex_enumeration_min(&c, &cce_constraint_rows(&game)).unwrap();
    assert!((oracle - sol.objective).abs() < 1e-6);
    assert!((sol.objective - 1.0).abs() < 1e-9);
}
