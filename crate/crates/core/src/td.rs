//! Temporal-difference training of a value network: direct,
//! residual-gradient and blended residual updates, the mean squared Bellman
//! residual, and fitness evaluation by training episodes.

use rand::Rng;

use crate::config::{FitnessMode, TdConfig};
use crate::env::{greedy_choice, successor_value, EnvError, Environment, State, Successor};
use crate::network::{Network, NetworkError};

/// One observed step. `successor` is `None` for a terminal successor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition<'a> {
    pub state: &'a [f64],
    pub successor: Option<&'a [f64]>,
    pub reward: f64,
}

/// `R + gamma * v_next - v_now`.
pub fn td_error(reward: f64, v_next: f64, v_now: f64, gamma: f64) -> f64 {
    reward + gamma * v_next - v_now
}

/// TD error plus the value gradients at both ends of the transition.
struct Evaluated {
    delta: f64,
    grad_now: Vec<f64>,
    grad_next: Option<Vec<f64>>,
}

fn evaluate(net: &Network, t: &Transition<'_>, gamma: f64) -> Result<Evaluated, NetworkError> {
    let (v_now, grad_now) = net.value_and_gradient(t.state)?;
    let (v_next, grad_next) = match t.successor {
        Some(x) => {
            let (v, g) = net.value_and_gradient(x)?;
            (v, Some(g))
        }
        None => (0.0, None),
    };
    Ok(Evaluated { delta: td_error(t.reward, v_next, v_now, gamma), grad_now, grad_next })
}

fn direct_from(e: &Evaluated, cfg: &TdConfig) -> Vec<f64> {
    e.grad_now.iter().map(|g| cfg.alpha * e.delta * g).collect()
}

fn residual_gradient_from(e: &Evaluated, cfg: &TdConfig) -> Vec<f64> {
    let scale = -cfg.alpha * e.delta;
    match &e.grad_next {
        Some(next) => e
            .grad_now
            .iter()
            .zip(next)
            .map(|(g, gn)| scale * (cfg.gamma * gn - g))
            .collect(),
        None => e.grad_now.iter().map(|g| scale * -g).collect(),
    }
}

/// `alpha * delta * dV(x_t)/dw`.
pub fn direct_delta(net: &Network, t: &Transition<'_>, cfg: &TdConfig) -> Result<Vec<f64>, NetworkError> {
    Ok(direct_from(&evaluate(net, t, cfg.gamma)?, cfg))
}

/// `-alpha * delta * (gamma dV(x_{t+1})/dw - dV(x_t)/dw)`; a terminal
/// successor contributes no gradient.
pub fn residual_gradient_delta(
    net: &Network,
    t: &Transition<'_>,
    cfg: &TdConfig,
) -> Result<Vec<f64>, NetworkError> {
    Ok(residual_gradient_from(&evaluate(net, t, cfg.gamma)?, cfg))
}

/// `(1 - phi) * direct + phi * residual_gradient`. The endpoints return the
/// constituent update unchanged.
pub fn residual_delta(net: &Network, t: &Transition<'_>, cfg: &TdConfig) -> Result<Vec<f64>, NetworkError> {
    let e = evaluate(net, t, cfg.gamma)?;
    if cfg.phi == 0.0 {
        return Ok(direct_from(&e, cfg));
    }
    if cfg.phi == 1.0 {
        return Ok(residual_gradient_from(&e, cfg));
    }
    let d = direct_from(&e, cfg);
    let r = residual_gradient_from(&e, cfg);
    Ok(d.iter().zip(&r).map(|(d, r)| (1.0 - cfg.phi) * d + cfg.phi * r).collect())
}

/// Adds `delta` to the weights unless it contains a non-finite entry.
/// Returns whether the update was applied.
pub fn apply_delta(net: &mut Network, delta: &[f64]) -> bool {
    if delta.iter().any(|d| !d.is_finite()) {
        return false;
    }
    for (w, d) in net.weights_mut().iter_mut().zip(delta) {
        *w += d;
    }
    true
}

/// Applies the residual update for the move from `state` to `successor`.
/// States without features are not trained.
fn train_transition(
    net: &mut Network,
    env: &dyn Environment,
    state: State,
    successor: Successor,
    reward: f64,
    cfg: &TdConfig,
) {
    let Some(x) = env.features(state) else {
        return;
    };
    let next = match successor {
        Successor::Terminal => None,
        Successor::State(s) => env.features(s),
    };
    let t = Transition { state: &x, successor: next.as_deref(), reward };
    let delta = residual_delta(net, &t, cfg).expect("feature length matches network");
    apply_delta(net, &delta);
}

/// Mean over valued non-terminal states of the squared Bellman residual
/// along the greedy move.
pub fn bellman_residual(net: &Network, env: &dyn Environment, gamma: f64) -> Result<f64, EnvError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for s in env.states()? {
        let Some(x) = env.features(s) else {
            continue;
        };
        let options = env.afterstates(s)?;
        let a = options[greedy_choice(env, net, &options, gamma)];
        let v = net.forward(&x).expect("feature length matches network");
        let r = a.reward + gamma * successor_value(env, net, a.successor) - v;
        total += r * r;
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// One ε-greedy episode with an online residual update after every move.
/// Returns the summed reward.
pub fn train_episode<R: Rng + ?Sized>(
    net: &mut Network,
    env: &dyn Environment,
    cfg: &TdConfig,
    episode: usize,
    rng: &mut R,
) -> f64 {
    let mut state = env.initial_state(episode);
    let mut total = 0.0;
    for _ in 0..cfg.max_steps_per_episode {
        let options = env.afterstates(state).expect("episode stays on non-terminal states");
        let k = if rng.random_bool(cfg.epsilon) {
            rng.random_range(0..options.len())
        } else {
            greedy_choice(env, net, &options, cfg.gamma)
        };
        let a = options[k];
        train_transition(net, env, state, a.successor, a.reward, cfg);
        total += a.reward;
        match a.successor {
            Successor::Terminal => break,
            Successor::State(s) => state = s,
        }
    }
    total
}

/// One pass over every enumerable state, updating on its greedy move.
pub fn train_sweep(net: &mut Network, env: &dyn Environment, cfg: &TdConfig) -> Result<usize, EnvError> {
    let mut updates = 0;
    for s in env.states()? {
        if env.features(s).is_none() {
            continue;
        }
        let options = env.afterstates(s)?;
        let a = options[greedy_choice(env, net, &options, cfg.gamma)];
        train_transition(net, env, s, a.successor, a.reward, cfg);
        updates += 1;
    }
    Ok(updates)
}

/// Trains for `episodes_per_eval` episodes. In training mode the fitness is
/// the total reward collected while training; in greedy mode it is the total
/// reward of the same number of greedy episodes run afterwards without
/// updates.
pub fn evaluate_fitness<R: Rng + ?Sized>(net: &mut Network, env: &dyn Environment, cfg: &TdConfig, rng: &mut R) -> f64 {
    let trained: f64 = (0..cfg.episodes_per_eval)
        .map(|e| train_episode(net, env, cfg, e, rng))
        .sum();
    match cfg.fitness_mode {
        FitnessMode::Training => trained,
        FitnessMode::Greedy => (0..cfg.episodes_per_eval)
            .map(|e| {
                crate::env::greedy_rollout(env, net, env.initial_state(e), cfg.gamma, cfg.max_steps_per_episode)
                    .0
                    .iter()
                    .sum::<f64>()
            })
            .sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ChainMdp, ForcedChain};
    use crate::genome::{ConnectionGene, Genome, NodeGene, NodeRole};
    use crate::network::decode;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// V = w * x with a zero bias weight.
    fn scalar_net(w: f64) -> Network {
        let nodes = vec![
            NodeGene { id: 1, role: NodeRole::Input },
            NodeGene { id: 2, role: NodeRole::Bias },
            NodeGene { id: 3, role: NodeRole::Output },
        ];
        let conns = vec![ConnectionGene { in_node: 1, out_node: 3, weight: w, enabled: true, innovation: 1 }];
        decode(&Genome::new(nodes, conns)).unwrap()
    }

    fn one_hot_net(n: usize, weights: &[f64]) -> Network {
        let mut nodes: Vec<NodeGene> = (1..=n as u32).map(|id| NodeGene { id, role: NodeRole::Input }).collect();
        nodes.push(NodeGene { id: n as u32 + 1, role: NodeRole::Bias });
        nodes.push(NodeGene { id: n as u32 + 2, role: NodeRole::Output });
        let conns = weights
            .iter()
            .enumerate()
            .map(|(k, &w)| ConnectionGene {
                in_node: k as u32 + 1,
                out_node: n as u32 + 2,
                weight: w,
                enabled: true,
                innovation: k as u32 + 1,
            })
            .collect();
        decode(&Genome::new(nodes, conns)).unwrap()
    }

    fn cfg() -> TdConfig {
        TdConfig::default()
    }

    #[test]
    fn td_error_examples() {
        assert_eq!(td_error(1.0, 0.0, 0.0, 0.9), 1.0);
        assert!(td_error(0.0, 10.0, 9.0, 0.9).abs() < 1e-12);
        assert!((td_error(-1.0, 5.0, 2.0, 0.9) - 1.5).abs() < 1e-12);
        for v in [-3.0, 0.5, 7.25] {
            assert!(td_error(0.0, v / 0.9, v, 0.9).abs() < 1e-12);
        }
    }

    #[test]
    fn terminal_case_deltas() {
        let net = scalar_net(0.2);
        let t = Transition { state: &[2.0], successor: None, reward: 1.0 };
        let d = direct_delta(&net, &t, &cfg()).unwrap();
        assert!((d[0] - 0.06).abs() < 1e-12);
        let r = residual_gradient_delta(&net, &t, &cfg()).unwrap();
        assert!((r[0] - 0.06).abs() < 1e-12);
    }

    #[test]
    fn non_terminal_case_deltas() {
        let net = scalar_net(0.2);
        let t = Transition { state: &[2.0], successor: Some(&[1.0]), reward: 0.0 };
        let d = direct_delta(&net, &t, &cfg()).unwrap();
        assert!((d[0] + 0.022).abs() < 1e-12);
        let r = residual_gradient_delta(&net, &t, &cfg()).unwrap();
        assert!((r[0] + 0.0121).abs() < 1e-12);
        let b = residual_delta(&net, &t, &cfg()).unwrap();
        assert!((b[0] + 0.01705).abs() < 1e-12);
    }

    #[test]
    fn blend_endpoints_are_bit_exact() {
        let net = scalar_net(-0.7);
        let t = Transition { state: &[1.5], successor: Some(&[-0.3]), reward: -1.0 };
        let c0 = TdConfig { phi: 0.0, ..cfg() };
        let c1 = TdConfig { phi: 1.0, ..cfg() };
        assert_eq!(residual_delta(&net, &t, &c0).unwrap(), direct_delta(&net, &t, &c0).unwrap());
        assert_eq!(residual_delta(&net, &t, &c1).unwrap(), residual_gradient_delta(&net, &t, &c1).unwrap());
    }

    #[test]
    fn zero_error_gives_zero_updates() {
        let net = scalar_net(1.0);
        let t = Transition { state: &[0.9], successor: Some(&[1.0]), reward: 0.0 };
        for phi in [0.0, 0.5, 1.0] {
            let c = TdConfig { phi, ..cfg() };
            assert!(residual_delta(&net, &t, &c).unwrap().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn forced_chain_residual_and_fitness() {
        let net = one_hot_net(2, &[0.0, 0.0]);
        assert_eq!(bellman_residual(&net, &ForcedChain, 0.9).unwrap(), 1.0);
        let mut net = net;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(train_episode(&mut net, &ForcedChain, &cfg(), 0, &mut rng), -2.0);
        let mut net = one_hot_net(2, &[0.3, -0.4]);
        assert_eq!(evaluate_fitness(&mut net, &ForcedChain, &cfg(), &mut rng), -400.0);
        let none = TdConfig { episodes_per_eval: 0, ..cfg() };
        assert_eq!(evaluate_fitness(&mut net, &ForcedChain, &none, &mut rng), 0.0);
    }

    #[test]
    fn optimal_table_has_zero_residual() {
        let net = one_hot_net(5, &[0.0, 5.39, 7.1, 9.0, 0.0]);
        let e = bellman_residual(&net, &ChainMdp::new(5, None), 0.9).unwrap();
        assert!(e < 1e-20);
        let t = Transition { state: &[0.0, 0.0, 1.0, 0.0, 0.0], successor: Some(&[0.0, 0.0, 0.0, 1.0, 0.0]), reward: -1.0 };
        assert!(residual_delta(&net, &t, &cfg()).unwrap().iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn residual_gradient_sweeps_reduce_error() {
        let env = ChainMdp::new(5, None);
        let c = TdConfig { phi: 1.0, ..cfg() };
        let mut net = one_hot_net(5, &[0.1, -0.2, 0.3, 0.0, 0.4]);
        for _ in 0..100 {
            train_sweep(&mut net, &env, &c).unwrap();
        }
        let early = bellman_residual(&net, &env, 0.9).unwrap();
        for _ in 0..9900 {
            train_sweep(&mut net, &env, &c).unwrap();
        }
        assert!(bellman_residual(&net, &env, 0.9).unwrap() < early);
    }

    #[test]
    fn non_finite_updates_are_skipped() {
        let mut net = scalar_net(0.5);
        assert!(!apply_delta(&mut net, &[f64::NAN]));
        assert_eq!(net.weights(), &[0.5]);
    }
}
