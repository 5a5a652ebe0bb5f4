use rand::Rng;
use rand_distr::StandardNormal;

use super::VariationError;
use crate::config::MacroConfig;
use crate::genome::{ConnectionGene, Genome, InnovationRegistry, NodeGene, NodeId, NodeRole};

/// Splits a uniformly chosen enabled connection with a new hidden node.
///
/// The old gene is disabled; `in -> new` gets weight 1.0 and `new -> out`
/// inherits the old weight, so the phenotype's signal path is preserved up
/// to the hidden unit's squashing.
pub fn mutate_add_node<R: Rng + ?Sized>(
    g: &mut Genome,
    registry: &mut InnovationRegistry,
    rng: &mut R,
) -> Result<(), VariationError> {
    let enabled: Vec<usize> = (0..g.connections.len())
        .filter(|&i| g.connections[i].enabled)
        .collect();
    if enabled.is_empty() {
        return Err(VariationError::NoEnabledConnection);
    }
    let idx = enabled[rng.random_range(0..enabled.len())];
    let old = g.connections[idx];
    let rec = registry.register_split(g, &old);
    g.connections[idx].enabled = false;
    g.insert_node(NodeGene {
        id: rec.node,
        role: NodeRole::Hidden,
    });
    g.insert_connection(ConnectionGene {
        in_node: old.in_node,
        out_node: rec.node,
        weight: 1.0,
        enabled: true,
        innovation: rec.in_link,
    });
    g.insert_connection(ConnectionGene {
        in_node: rec.node,
        out_node: old.out_node,
        weight: old.weight,
        enabled: true,
        innovation: rec.out_link,
    });
    Ok(())
}

/// Tries up to `attempts` random node pairs and connects the first legal
/// one. Returns whether a connection was added.
///
/// A pair is legal when the source is not an output, the target is hidden
/// or an output, no gene (enabled or disabled) already joins them, and the
/// new edge closes no cycle through any existing gene.
pub fn mutate_add_link<R: Rng + ?Sized>(
    g: &mut Genome,
    registry: &mut InnovationRegistry,
    attempts: usize,
    rng: &mut R,
) -> bool {
    let sources: Vec<NodeId> = g
        .nodes
        .iter()
        .filter(|n| n.role != NodeRole::Output)
        .map(|n| n.id)
        .collect();
    let targets: Vec<NodeId> = g
        .nodes
        .iter()
        .filter(|n| matches!(n.role, NodeRole::Hidden | NodeRole::Output))
        .map(|n| n.id)
        .collect();
    if sources.is_empty() || targets.is_empty() {
        return false;
    }
    for _ in 0..attempts {
        let a = sources[rng.random_range(0..sources.len())];
        let b = targets[rng.random_range(0..targets.len())];
        if a == b || g.has_link(a, b) || g.reaches(b, a, |_| true) {
            continue;
        }
        let innovation = registry.register_link(a, b);
        g.insert_connection(ConnectionGene {
            in_node: a,
            out_node: b,
            weight: rng.random_range(-1.0..=1.0),
            enabled: true,
            innovation,
        });
        return true;
    }
    false
}

/// Per-gene weight mutation: a severity draw picks the branch
/// probabilities, then the gene is left alone, perturbed around its current
/// weight, or redrawn around zero.
pub fn mutate_weights<R: Rng + ?Sized>(g: &mut Genome, cfg: &MacroConfig, rng: &mut R) {
    for gene in &mut g.connections {
        let severe = rng.random_bool(cfg.delta_severity);
        let (cancel, c_gauss) = cfg.weight_branch(severe);
        if rng.random_bool(cancel) {
            continue;
        }
        let z: f64 = rng.sample(StandardNormal);
        gene.weight = if rng.random_bool(1.0 - c_gauss) {
            gene.weight + cfg.sigma_w * z
        } else {
            cfg.sigma_w * z
        };
    }
}

/// With probability `c_turn_on_off`, flips the enabled flag of one
/// uniformly chosen gene. Flips that would cut every output off from the
/// inputs or close a cycle are rejected. Returns whether a flip happened.
pub fn mutate_toggle<R: Rng + ?Sized>(g: &mut Genome, cfg: &MacroConfig, rng: &mut R) -> bool {
    if g.connections.is_empty() || !rng.random_bool(cfg.c_turn_on_off) {
        return false;
    }
    let idx = rng.random_range(0..g.connections.len());
    let gene = g.connections[idx];
    if gene.enabled {
        g.connections[idx].enabled = false;
        if !g.output_reachable() {
            g.connections[idx].enabled = true;
            return false;
        }
    } else {
        if g.reaches(gene.out_node, gene.in_node, |c| c.enabled) {
            return false;
        }
        g.connections[idx].enabled = true;
    }
    true
}
