mod common;

use common::{rng, xor_solver};
use neuroforge::env::{optimal_values, ChainMdp, Environment, GridWorld, Successor, XorBandit};
use neuroforge::genome::new_minimal_genome;
use neuroforge::network::decode;
use neuroforge::InnovationRegistry;
use proptest::prelude::*;

fn bellman_gap(env: &dyn Environment, gamma: f64) -> f64 {
    let v = optimal_values(env, gamma).unwrap();
    let lookup = |s| v.iter().find(|&&(t, _)| t == s).map_or(0.0, |&(_, x)| x);
    v.iter()
        .map(|&(s, vs)| {
            let best = env
                .afterstates(s)
                .unwrap()
                .iter()
                .map(|a| {
                    a.reward
                        + gamma
                            * match a.successor {
                                Successor::Terminal => 0.0,
                                Successor::State(t) => lookup(t),
                            }
                })
                .fold(f64::NEG_INFINITY, f64::max);
            (best - vs).abs()
        })
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn optimal_values_satisfy_the_bellman_equation(length in 3usize..20, w in 1usize..6, h in 1usize..6, gamma in 0.0f64..0.99) {
        prop_assert!(bellman_gap(&ChainMdp::new(length, None), gamma) < 1e-10);
        prop_assume!(w * h >= 2);
        prop_assert!(bellman_gap(&GridWorld::new(w, h), gamma) < 1e-10);
    }

    #[test]
    fn environments_are_deterministic(length in 3usize..12, w in 1usize..5, h in 2usize..5) {
        let envs: Vec<Box<dyn Environment>> = vec![
            Box::new(ChainMdp::new(length, None)),
            Box::new(GridWorld::new(w, h)),
            Box::new(XorBandit),
        ];
        for env in &envs {
            for s in env.states().unwrap() {
                prop_assert_eq!(env.afterstates(s).unwrap(), env.afterstates(s).unwrap());
                prop_assert_eq!(env.features(s), env.features(s));
            }
        }
    }
}

#[test]
fn xor_pays_at_most_one_per_episode() {
    for s in XorBandit.states().unwrap() {
        for a in XorBandit.afterstates(s).unwrap() {
            assert!(a.reward <= 1.0);
        }
    }
}

#[test]
fn the_parity_network_solves_xor() {
    assert!(XorBandit.success(&decode(&xor_solver()).unwrap(), 0.9, 10));
}

#[test]
fn no_linear_network_on_the_weight_grid_solves_xor() {
    let mut reg = InnovationRegistry::new();
    let g = new_minimal_genome(3, 1, &mut reg, &mut rng(0));
    let mut net = decode(&g).unwrap();
    let grid: Vec<f64> = (-40..=40).map(|k| k as f64 / 10.0).collect();
    for &c1 in &grid {
        for &c2 in &grid {
            for &a in &grid {
                net.set_weights(&[c1, c2, a, 0.5]);
                assert!(!XorBandit.success(&net, 0.9, 10), "weights ({c1}, {c2}, {a})");
            }
        }
    }
}
