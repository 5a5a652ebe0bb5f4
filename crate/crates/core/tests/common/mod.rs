#![allow(dead_code)]

use neuroforge::config::MacroConfig;
use neuroforge::genome::{new_minimal_genome, ConnectionGene, Genome, NodeGene, NodeRole};
use neuroforge::variation::{mutate_add_link, mutate_add_node, mutate_toggle, mutate_weights};
use neuroforge::InnovationRegistry;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A minimal genome grown by a random number of structural and weight
/// mutations, all numbered by `reg`.
pub fn grown_genome(inputs: usize, steps: usize, reg: &mut InnovationRegistry, r: &mut ChaCha8Rng) -> Genome {
    let cfg = MacroConfig::default();
    let mut g = new_minimal_genome(inputs, 1, reg, r);
    for _ in 0..steps {
        match r.random_range(0..4) {
            0 => {
                let _ = mutate_add_node(&mut g, reg, r);
            }
            1 => {
                mutate_add_link(&mut g, reg, cfg.pi_attempt_mutation, r);
            }
            2 => mutate_weights(&mut g, &cfg, r),
            _ => {
                mutate_toggle(&mut g, &cfg, r);
            }
        }
    }
    g
}

pub fn node(id: u32, role: NodeRole) -> NodeGene {
    NodeGene { id, role }
}

pub fn link(innovation: u32, in_node: u32, out_node: u32, weight: f64) -> ConnectionGene {
    ConnectionGene { in_node, out_node, weight, enabled: true, innovation }
}

/// Even parity over (context bit, context bit, answer): about +1 exactly
/// when the answer is the XOR of the context, about -1 otherwise.
pub fn xor_solver() -> Genome {
    let nodes = vec![
        node(1, NodeRole::Input),
        node(2, NodeRole::Input),
        node(3, NodeRole::Input),
        node(4, NodeRole::Bias),
        node(5, NodeRole::Output),
        node(6, NodeRole::Hidden),
        node(7, NodeRole::Hidden),
        node(8, NodeRole::Hidden),
    ];
    let mut conns = Vec::new();
    let mut k = 1;
    for (h, threshold, out_w) in [(6, 0.5, -2.0), (7, 1.5, 2.0), (8, 2.5, -2.0)] {
        for i in 1..=3 {
            conns.push(link(k, i, h, 20.0));
            k += 1;
        }
        conns.push(link(k, 4, h, -20.0 * threshold));
        k += 1;
        conns.push(link(k, h, 5, out_w));
        k += 1;
    }
    conns.push(link(k, 4, 5, 1.0));
    let g = Genome::new(nodes, conns);
    g.validate().unwrap();
    g
}

/// One-hot chain genome whose output equals `values[s]` on state `s`.
pub fn tabular_genome(values: &[f64]) -> Genome {
    let n = values.len() as u32;
    let mut nodes: Vec<NodeGene> = (1..=n).map(|id| node(id, NodeRole::Input)).collect();
    nodes.push(node(n + 1, NodeRole::Bias));
    nodes.push(node(n + 2, NodeRole::Output));
    let conns = values
        .iter()
        .enumerate()
        .map(|(k, &v)| link(k as u32 + 1, k as u32 + 1, n + 2, v))
        .collect();
    Genome::new(nodes, conns)
}
