use std::collections::HashSet;

use rand::Rng;

use super::VariationError;
use crate::genome::{classify_genes, ConnectionGene, Genome, NodeGene, NodeId};

/// Assembles an offspring from genes already in innovation order.
///
/// Genes whose `(in, out)` pair is already present are dropped (two parents
/// can hold the same link under different innovations when it was added in
/// different generations), and an enabled gene that would close a cycle
/// with the genes before it is disabled.
fn assemble(genes: Vec<ConnectionGene>, a: &Genome, b: &Genome) -> Genome {
    let mut offspring = Genome::new(Vec::new(), Vec::with_capacity(genes.len()));
    let mut pairs = HashSet::new();
    let mut referenced: HashSet<NodeId> = HashSet::new();
    for mut gene in genes {
        if !pairs.insert((gene.in_node, gene.out_node)) {
            continue;
        }
        if gene.enabled && offspring.reaches(gene.out_node, gene.in_node, |c| c.enabled) {
            gene.enabled = false;
        }
        referenced.insert(gene.in_node);
        referenced.insert(gene.out_node);
        offspring.connections.push(gene);
    }
    let mut nodes: Vec<NodeGene> = a
        .nodes
        .iter()
        .chain(&b.nodes)
        .filter(|n| !matches!(n.role, crate::genome::NodeRole::Hidden) || referenced.contains(&n.id))
        .copied()
        .collect();
    nodes.sort_by_key(|n| n.id);
    nodes.dedup_by_key(|n| n.id);
    offspring.nodes = nodes;
    offspring
}

/// Splits at a uniformly chosen matching innovation. One parent (chosen at
/// random) supplies the genes below the point, the other the genes above it;
/// the point gene carries the mean of the two parents' weights.
pub fn crossover_single_point<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    rng: &mut R,
) -> Result<Genome, VariationError> {
    let part = classify_genes(a, b);
    if part.matching.is_empty() {
        return Err(VariationError::NoMatchingGenes);
    }
    let (ia, ib) = part.matching[rng.random_range(0..part.matching.len())];
    let ((left, il), (right, ir)) = if rng.random_bool(0.5) {
        ((a, ia), (b, ib))
    } else {
        ((b, ib), (a, ia))
    };
    let mut point = left.connections[il];
    point.weight = 0.5 * (left.connections[il].weight + right.connections[ir].weight);
    let genes: Vec<ConnectionGene> = left.connections[..il]
        .iter()
        .copied()
        .chain(std::iter::once(point))
        .chain(right.connections[ir + 1..].iter().copied())
        .collect();
    Ok(assemble(genes, a, b))
}

/// Decides which parent contributes disjoint and excess genes.
fn fitter_is_a<R: Rng + ?Sized>(fitness_a: f64, fitness_b: f64, rng: &mut R) -> bool {
    if fitness_a == fitness_b {
        rng.random_bool(0.5)
    } else {
        fitness_a > fitness_b
    }
}

fn multipoint<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    fitness_a: f64,
    fitness_b: f64,
    average: bool,
    rng: &mut R,
) -> Genome {
    let part = classify_genes(a, b);
    let from_a = fitter_is_a(fitness_a, fitness_b, rng);
    let fitter = if from_a { a } else { b };
    let mut matched = part.matching.iter().peekable();
    let mut genes = Vec::with_capacity(fitter.connections.len());
    // Walk the fitter parent's genes: matching genes are recombined, the rest
    // (its disjoint and excess genes) are copied as is.
    for (k, gene) in fitter.connections.iter().enumerate() {
        let pair = matched.next_if(|&&(i, j)| if from_a { i == k } else { j == k });
        match pair {
            Some(&(i, j)) => {
                let (ga, gb) = (a.connections[i], b.connections[j]);
                if average {
                    let mut g = ga;
                    g.weight = 0.5 * (ga.weight + gb.weight);
                    g.enabled = ga.enabled || gb.enabled;
                    genes.push(g);
                } else if rng.random_bool(0.5) {
                    genes.push(ga);
                } else {
                    genes.push(gb);
                }
            }
            None => genes.push(*gene),
        }
    }
    assemble(genes, a, b)
}

/// Each matching gene comes whole from either parent with equal odds;
/// disjoint and excess genes come from the fitter parent only.
pub fn crossover_multipoint<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    fitness_a: f64,
    fitness_b: f64,
    rng: &mut R,
) -> Genome {
    multipoint(a, b, fitness_a, fitness_b, false, rng)
}

/// As [`crossover_multipoint`], but matching genes take the mean weight and
/// are enabled if either parent has them enabled.
pub fn crossover_multipoint_average<R: Rng + ?Sized>(
    a: &Genome,
    b: &Genome,
    fitness_a: f64,
    fitness_b: f64,
    rng: &mut R,
) -> Genome {
    multipoint(a, b, fitness_a, fitness_b, true, rng)
}
