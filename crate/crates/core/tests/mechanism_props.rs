use nrlab_core::mechanism::{ActionSpace, Mechanism, MechanismKind, TieBreak};
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = MechanismKind> {
    prop_oneof![
        Just(MechanismKind::FirstPrice),
        Just(MechanismKind::AllPay),
        Just(MechanismKind::MultiUnitFirstPrice),
    ]
}

/// Mechanism plus an on-grid bid profile and a valuation profile.
fn instance() -> impl Strategy<Value = (Mechanism, Vec<f64>, Vec<f64>)> {
    (
        kind_strategy(),
        1usize..=4,
        1usize..=8,
        prop_oneof![Just(1.0), Just(2.5)],
        any::<bool>(),
    )
        .prop_flat_map(|(kind, n, m, h, uniform_tb)| {
            let k_max = if kind == MechanismKind::MultiUnitFirstPrice {
                n
            } else {
                1
            };
            (
                Just((kind, n, m, h, uniform_tb)),
                1..=k_max,
                proptest::collection::vec(0..=m, n),
                proptest::collection::vec(0.0..=h, n),
            )
        })
        .prop_map(|((kind, n, m, h, uniform_tb), k, idx, values)| {
            let tb = if uniform_tb {
                TieBreak::Uniform
            } else {
                TieBreak::LowestIndex
            };
            let mech = Mechanism::uniform(kind, n, k, h / m as f64, h)
                .unwrap()
                .with_tie_break(tb);
            let bids = mech.bids_of(&idx);
            (mech, bids, values)
        })
}

/// Independent recomputation of welfare from the allocation rule alone.
fn naive_welfare(m: &Mechanism, bids: &[f64], values: &[f64]) -> f64 {
    let n = bids.len();
    let k = m.units();
    let mut alloc = vec![0.0; n];
    match m.tie_break() {
        TieBreak::LowestIndex => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| bids[b].partial_cmp(&bids[a]).unwrap().then(a.cmp(&b)));
            for &i in order.iter().take(k) {
                alloc[i] = 1.0;
            }
        }
        TieBreak::Uniform => {
            for i in 0..n {
                let higher = bids.iter().filter(|&&b| b > bids[i]).count();
                let equal = bids.iter().filter(|&&b| b == bids[i]).count();
                alloc[i] = if higher >= k {
                    0.0
                } else if higher + equal <= k {
                    1.0
                } else {
                    (k - higher) as f64 / equal as f64
                };
            }
        }
    }
    alloc.iter().zip(values).map(|(x, v)| x * v).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn welfare_identity((m, bids, values) in instance()) {
        let out = m.play(&bids, &values).unwrap();
        let sum: f64 = out.utilities.iter().sum::<f64>() + out.revenue;
        prop_assert!((m.social_welfare(&bids, &values).unwrap() - sum).abs() <= 1e-12);
        prop_assert!((naive_welfare(&m, &bids, &values) - sum).abs() <= 1e-12);
        prop_assert!(out.revenue >= 0.0);
    }

    #[test]
    fn welfare_never_exceeds_optimum((m, bids, values) in instance()) {
        let sw = m.social_welfare(&bids, &values).unwrap();
        prop_assert!(sw <= m.optimal_welfare(&values).unwrap() + 1e-12);
    }

    #[test]
    fn all_pay_welfare_is_winner_value(n in 1usize..=4, idx in proptest::collection::vec(0usize..=4, 4), values in proptest::collection::vec(0.0..=1.0f64, 4)) {
        let m = Mechanism::all_pay(n, 0.25, 1.0).unwrap();
        let bids = m.bids_of(&idx[..n]);
        let out = m.play(&bids, &values[..n]).unwrap();
        let w = out.winners();
        prop_assert_eq!(w.len(), 1);
        prop_assert_eq!(out.social_welfare(), values[w[0]]);
    }

    #[test]
    fn ties_go_to_lowest_index(n in 2usize..=5, top in 1usize..=4, others in proptest::collection::vec(0usize..=4, 5), mask in proptest::collection::vec(any::<bool>(), 5)) {
        let m = Mechanism::first_price(n, 0.25, 1.0).unwrap();
        let mut idx: Vec<usize> = others[..n].iter().map(|&a| a.min(top)).collect();
        for i in 0..n {
            if mask[i] {
                idx[i] = top;
            }
        }
        let bids = m.bids_of(&idx);
        let values = vec![1.0; n];
        let winner = m.play(&bids, &values).unwrap().winners()[0];
        let max = bids.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(winner, bids.iter().position(|&b| b == max).unwrap());
        // Appending more max bidders at higher indices leaves the winner alone.
        let mut extended = bids.clone();
        extended.push(max);
        let wide = Mechanism::first_price(n + 1, 0.25, 1.0).unwrap();
        let mut vals = values.clone();
        vals.push(1.0);
        prop_assert_eq!(wide.play(&extended, &vals).unwrap().winners()[0], winner);
    }
}

#[test]
fn dominance_exhaustive_small_grids() {
    let grids = vec![vec![0.0, 0.5, 1.0], vec![0.0, 0.25, 0.75], vec![0.0, 1.0]];
    let space = ActionSpace::from_grids(grids.clone(), 1.0).unwrap();
    for kind in [
        MechanismKind::FirstPrice,
        MechanismKind::AllPay,
        MechanismKind::MultiUnitFirstPrice,
    ] {
        for k in 1..=if kind == MechanismKind::MultiUnitFirstPrice {
            3
        } else {
            1
        } {
            let m = Mechanism::new(kind, k, space.clone(), TieBreak::LowestIndex).unwrap();
            for values in [[0.0, 0.0, 0.0], [1.0, 0.5, 0.2], [0.3, 0.9, 0.9]] {
                let opt = m.optimal_welfare(&values).unwrap();
                for a in 0..3 {
                    for b in 0..3 {
                        for c in 0..2 {
                            let bids = [grids[0][a], grids[1][b], grids[2][c]];
                            assert!(m.social_welfare(&bids, &values).unwrap() <= opt + 1e-12);
                        }
                    }
                }
            }
        }
    }
}
