mod common;

use common::{rng, tabular_genome};
use nalgebra::SymmetricEigen;
use neuroforge::cma::cma_init;
use neuroforge::config::{CmaConfig, TdConfig};
use neuroforge::env::{optimal_values, ChainMdp, Environment, Successor};
use neuroforge::network::decode;
use neuroforge::td::{bellman_residual, direct_delta, residual_delta, residual_gradient_delta, td_error, train_sweep, Transition};
use proptest::prelude::*;
use rand::Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn td_error_vanishes_on_the_scaled_identity(v in -100.0f64..100.0) {
        let gamma = 0.9;
        prop_assert!(td_error(0.0, v / gamma, v, gamma).abs() < 1e-12);
    }

    #[test]
    fn td_error_is_linear(r1 in -5.0f64..5.0, r2 in -5.0f64..5.0, a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
        let g = 0.9;
        let lhs = td_error(r1 + r2, a, b, g);
        let rhs = td_error(r1, a, b, g) + td_error(r2, 0.0, 0.0, g);
        prop_assert!((lhs - rhs).abs() < 1e-12);
        let lhs = td_error(r1, a + c, b, g);
        let rhs = td_error(r1, a, b, g) + g * c;
        prop_assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn covariance_stays_symmetric_psd(seed in any::<u64>(), n in 1usize..12, iters in 1usize..40) {
        let cfg = CmaConfig::default();
        let mut r = rng(seed);
        let x0: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let mut state = cma_init(&x0, r.random_range(0..4), &cfg, f64::INFINITY);
        let scales: Vec<f64> = (0..n).map(|_| r.random_range(0.1..100.0)).collect();
        for _ in 0..iters {
            let xs = state.ask(&mut r);
            let fs: Vec<f64> = xs.iter().map(|x| -x.iter().zip(&scales).map(|(v, s)| s * v * v).sum::<f64>()).collect();
            state.tell(&xs, &fs);
            prop_assert!(state.sigma > 0.0 && state.sigma.is_finite());
            prop_assert!((&state.cov - state.cov.transpose()).amax() < 1e-12);
            let eig = SymmetricEigen::new(state.cov.clone());
            prop_assert!(eig.eigenvalues.min() >= -1e-10);
        }
    }

    #[test]
    fn ask_tell_is_reproducible(seed in any::<u64>(), n in 1usize..8) {
        let cfg = CmaConfig::default();
        let run = || {
            let mut r = rng(seed);
            let mut state = cma_init(&vec![1.0; n], 0, &cfg, f64::INFINITY);
            let mut trace = Vec::new();
            for _ in 0..10 {
                let xs = state.ask(&mut r);
                let fs: Vec<f64> = xs.iter().map(|x| -x.iter().map(|v| v * v).sum::<f64>()).collect();
                trace.push(state.tell(&xs, &fs).sigma.to_bits());
            }
            (trace, state.mean.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        };
        prop_assert_eq!(run(), run());
    }
}

#[test]
fn optimal_values_make_every_delta_vanish() {
    let env = ChainMdp::new(7, None);
    let cfg = TdConfig::default();
    let v_star = optimal_values(&env, cfg.gamma).unwrap();
    let mut table = vec![0.0; 7];
    for &(s, v) in &v_star {
        table[s] = v;
    }
    let net = decode(&tabular_genome(&table)).unwrap();
    for &(s, _) in &v_star {
        let x = env.features(s).unwrap();
        let options = env.afterstates(s).unwrap();
        let best = options
            .iter()
            .max_by(|a, b| {
                let q = |o: &neuroforge::env::Afterstate| match o.successor {
                    Successor::Terminal => o.reward,
                    Successor::State(t) => o.reward + cfg.gamma * table[t],
                };
                q(a).total_cmp(&q(b))
            })
            .unwrap();
        let next = match best.successor {
            Successor::Terminal => None,
            Successor::State(t) => env.features(t),
        };
        let t = Transition { state: &x, successor: next.as_deref(), reward: best.reward };
        for delta in [direct_delta(&net, &t, &cfg), residual_gradient_delta(&net, &t, &cfg), residual_delta(&net, &t, &cfg)] {
            assert!(delta.unwrap().iter().all(|d| d.abs() < 1e-12));
        }
    }
    assert!(bellman_residual(&net, &env, cfg.gamma).unwrap() < 1e-20);
}

#[test]
fn residual_gradient_reduces_the_bellman_residual() {
    let env = ChainMdp::new(5, None);
    let cfg = TdConfig { phi: 1.0, ..TdConfig::default() };
    for seed in 0..5 {
        let mut r = rng(seed);
        let table: Vec<f64> = (0..5).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut net = decode(&tabular_genome(&table)).unwrap();
        for _ in 0..100 {
            train_sweep(&mut net, &env, &cfg).unwrap();
        }
        let early = bellman_residual(&net, &env, cfg.gamma).unwrap();
        for _ in 100..10_000 {
            train_sweep(&mut net, &env, &cfg).unwrap();
        }
        let late = bellman_residual(&net, &env, cfg.gamma).unwrap();
        assert!(late < early, "seed {seed}: {late} !< {early}");
    }
}
