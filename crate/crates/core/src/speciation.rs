//! Species bookkeeping: compatibility distance, assignment, fitness sharing,
//! offspring allocation and delta coding.

use rand::Rng;

use crate::cma::CmaState;
use crate::config::MacroConfig;
use crate::genome::{classify_genes, Genome};

/// Weighted sum of excess and disjoint counts (both normalized by the
/// longer genome's gene count) and the mean absolute weight difference of
/// matching genes.
pub fn compatibility(a: &Genome, b: &Genome, cfg: &MacroConfig) -> f64 {
    let n = a.connections.len().max(b.connections.len());
    if n == 0 {
        return 0.0;
    }
    let part = classify_genes(a, b);
    let w_bar = if part.matching.is_empty() {
        0.0
    } else {
        part.matching
            .iter()
            .map(|&(i, j)| (a.connections[i].weight - b.connections[j].weight).abs())
            .sum::<f64>()
            / part.matching.len() as f64
    };
    let n = n as f64;
    cfg.c1 * part.excess_count() as f64 / n + cfg.c2 * part.disjoint_count() as f64 / n + cfg.c3 * w_bar
}

#[derive(Debug, Clone)]
pub struct Species {
    pub id: u32,
    /// Indices into the population's genome list.
    pub members: Vec<usize>,
    pub representative: Genome,
    /// Generations survived since creation.
    pub age: usize,
    pub best_raw_fitness_ever: f64,
    pub generations_since_improvement: usize,
    pub cma: Option<CmaState>,
}

impl Species {
    pub fn new(id: u32, representative: Genome) -> Self {
        Self {
            id,
            members: Vec::new(),
            representative,
            age: 0,
            best_raw_fitness_ever: f64::NEG_INFINITY,
            generations_since_improvement: 0,
            cma: None,
        }
    }

    /// Member with the highest raw fitness (lowest index on ties).
    pub fn champion(&self, genomes: &[Genome]) -> usize {
        best_by_raw(self.members.iter().copied(), genomes).expect("species has members")
    }
}

/// Index of the highest raw fitness, earliest on ties.
pub fn best_by_raw(indices: impl IntoIterator<Item = usize>, genomes: &[Genome]) -> Option<usize> {
    indices.into_iter().fold(None, |best, i| match best {
        Some(b) if genomes[b].raw_fitness >= genomes[i].raw_fitness => Some(b),
        _ => Some(i),
    })
}

/// Places every genome in the first species (in id order) whose
/// representative lies within `delta_c`; unmatched genomes found new species
/// and become their representatives. Species left empty are removed.
pub fn assign_species(genomes: &[Genome], species: &mut Vec<Species>, next_id: &mut u32, cfg: &MacroConfig) {
    species.sort_by_key(|s| s.id);
    for s in species.iter_mut() {
        s.members.clear();
    }
    for (i, g) in genomes.iter().enumerate() {
        match species
            .iter_mut()
            .find(|s| compatibility(g, &s.representative, cfg) < cfg.delta_c)
        {
            Some(s) => s.members.push(i),
            None => {
                let mut s = Species::new(*next_id, g.clone());
                *next_id += 1;
                s.members.push(i);
                species.push(s);
            }
        }
    }
    species.retain(|s| !s.members.is_empty());
}

/// Picks each species' representative for the next assignment uniformly
/// from its current members.
pub fn choose_representatives<R: Rng + ?Sized>(genomes: &[Genome], species: &mut [Species], rng: &mut R) {
    for s in species {
        let k = s.members[rng.random_range(0..s.members.len())];
        s.representative = genomes[k].clone();
    }
}

/// Ages each species and records whether its best member improved on the
/// species record.
pub fn update_species_records(genomes: &[Genome], species: &mut [Species]) {
    for s in species {
        let best = genomes[s.champion(genomes)].raw_fitness;
        if best > s.best_raw_fitness_ever {
            s.best_raw_fitness_ever = best;
            s.generations_since_improvement = 0;
        } else {
            s.generations_since_improvement += 1;
        }
        s.age += 1;
    }
}

/// `(raw - f_worst) / ln(n_j + 1)`.
pub fn adjust_fitness(raw: f64, f_worst: f64, n_j: usize) -> f64 {
    (raw - f_worst) / ((n_j + 1) as f64).ln()
}

/// Shares raw fitness within each species, applies the drop-off penalty and
/// young-species factor, and amplifies the population champion. Returns the
/// champion's index.
pub fn compute_adjusted_fitness(genomes: &mut [Genome], species: &[Species], cfg: &MacroConfig) -> usize {
    let f_worst = genomes.iter().map(|g| g.raw_fitness).fold(f64::INFINITY, f64::min);
    for s in species {
        let mut factor = 1.0;
        if s.generations_since_improvement > cfg.d_drop_off_age {
            factor *= cfg.drop_off_penalty;
        }
        if s.age <= cfg.young_species_age {
            factor *= cfg.d_age_significance;
        }
        for &i in &s.members {
            genomes[i].adjusted_fitness = factor * adjust_fitness(genomes[i].raw_fitness, f_worst, s.members.len());
        }
    }
    amplify_best(genomes, cfg.c_best)
}

/// Multiplies the adjusted fitness of the highest-raw-fitness genome by
/// `c_best` and returns its index.
pub fn amplify_best(genomes: &mut [Genome], c_best: f64) -> usize {
    let best = best_by_raw(0..genomes.len(), genomes).expect("population is non-empty");
    genomes[best].adjusted_fitness *= c_best;
    best
}

/// Splits `total` slots among species in proportion to their summed
/// adjusted fitness, rounding by largest remainder (earlier species win
/// ties). Every species receives at least one slot; when all sums are zero
/// the split is uniform.
pub fn allocate_offspring(sums: &[f64], total: usize) -> Vec<usize> {
    let k = sums.len();
    assert!(k >= 1 && total >= k, "need at least one slot per species");
    let grand: f64 = sums.iter().sum();
    let quotas: Vec<f64> = if grand > 0.0 {
        sums.iter().map(|s| total as f64 * s / grand).collect()
    } else {
        vec![total as f64 / k as f64; k]
    };
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut by_remainder: Vec<usize> = (0..k).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &j in by_remainder.iter().take(total - assigned) {
        alloc[j] += 1;
    }
    // Guarantee the elite slot by taking from the largest allocation.
    while let Some(empty) = alloc.iter().position(|&a| a == 0) {
        let donor = (0..k).max_by(|&a, &b| alloc[a].cmp(&alloc[b]).then(b.cmp(&a))).unwrap();
        alloc[donor] -= 1;
        alloc[empty] += 1;
    }
    alloc
}

/// Moves up to `d_offspring_stolen` slots (leaving at least one) from the
/// species that has gone longest without improving (larger id on ties) to
/// the champion's species.
pub fn delta_coding(alloc: &mut [usize], species: &[Species], champion_species: usize, cfg: &MacroConfig) {
    let Some(donor) = (0..species.len()).max_by(|&a, &b| {
        species[a]
            .generations_since_improvement
            .cmp(&species[b].generations_since_improvement)
            .then(species[a].id.cmp(&species[b].id))
    }) else {
        return;
    };
    if donor == champion_species {
        return;
    }
    let moved = cfg.d_offspring_stolen.min(alloc[donor].saturating_sub(1));
    alloc[donor] -= moved;
    alloc[champion_species] += moved;
}

/// The top `ceil(c_survival * N_j)` members by adjusted fitness (at least
/// one), best first.
pub fn select_parents(members: &[usize], genomes: &[Genome], c_survival: f64) -> Vec<usize> {
    let mut ranked = members.to_vec();
    ranked.sort_by(|&a, &b| {
        genomes[b]
            .adjusted_fitness
            .total_cmp(&genomes[a].adjusted_fitness)
            .then(a.cmp(&b))
    });
    let keep = ((c_survival * members.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    ranked.truncate(keep);
    ranked
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::{ConnectionGene, InnovationRegistry, NodeGene, NodeRole};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn genome_with(innovations: &[u32], w: f64) -> Genome {
        let mut nodes = vec![
            NodeGene { id: 1, role: NodeRole::Input },
            NodeGene { id: 2, role: NodeRole::Bias },
            NodeGene { id: 3, role: NodeRole::Output },
        ];
        let conns = innovations
            .iter()
            .map(|&k| {
                nodes.push(NodeGene { id: 100 + k, role: NodeRole::Hidden });
                ConnectionGene { in_node: 1, out_node: 100 + k, weight: w, enabled: true, innovation: k }
            })
            .collect();
        Genome::new(nodes, conns)
    }

    #[test]
    fn compatibility_example() {
        let a = genome_with(&[1, 2, 3, 4, 8], 0.2);
        let b = genome_with(&[1, 2, 3, 5, 6, 7], 0.6);
        let d = compatibility(&a, &b, &MacroConfig::default());
        assert!((d - (1.0 / 6.0 + 4.0 / 6.0 + 0.8)).abs() < 1e-12);
        assert_eq!(compatibility(&a, &a, &MacroConfig::default()), 0.0);
    }

    #[test]
    fn assignment_first_match_and_new_species() {
        let cfg = MacroConfig::default();
        let a = genome_with(&[1, 2], 0.0);
        let far = genome_with(&[1, 2, 10, 11], 5.0);
        let mut species = vec![Species::new(0, a.clone())];
        let mut next = 1;
        assign_species(&[a.clone(), far.clone(), a], &mut species, &mut next, &cfg);
        assert_eq!(species.len(), 2);
        assert_eq!(species[0].members, vec![0, 2]);
        assert_eq!(species[1].members, vec![1]);
        assert_eq!(species[1].id, 1);
    }

    #[test]
    fn empty_species_are_dropped() {
        let cfg = MacroConfig::default();
        let a = genome_with(&[1], 0.0);
        let far = genome_with(&[1, 2, 10, 11], 5.0);
        let mut species = vec![Species::new(0, far), Species::new(1, a.clone())];
        let mut next = 2;
        assign_species(&[a], &mut species, &mut next, &cfg);
        assert_eq!(species.len(), 1);
        assert_eq!(species[0].id, 1);
    }

    #[test]
    fn shared_fitness_examples() {
        assert!((adjust_fitness(-10.0, -50.0, 9) - 40.0 / 10f64.ln()).abs() < 1e-12);
        assert!((adjust_fitness(-10.0, -50.0, 9) - 17.372).abs() < 1e-3);
        assert!((adjust_fitness(-10.0, -50.0, 1) - 57.708).abs() < 1e-3);
        assert_eq!(adjust_fitness(-50.0, -50.0, 4), 0.0);
    }

    #[test]
    fn amplification() {
        let mut gs = vec![genome_with(&[1], 0.0), genome_with(&[1], 0.0)];
        gs[1].raw_fitness = 1.0;
        gs[1].adjusted_fitness = 5.0;
        assert_eq!(amplify_best(&mut gs, 3.0), 1);
        assert_eq!(gs[1].adjusted_fitness, 15.0);
    }

    #[test]
    fn allocation_examples() {
        assert_eq!(allocate_offspring(&[30.0, 10.0], 4), vec![3, 1]);
        assert_eq!(allocate_offspring(&[7.0], 120), vec![120]);
        assert_eq!(allocate_offspring(&[0.0, 0.0, 0.0], 120), vec![40, 40, 40]);
        assert_eq!(allocate_offspring(&[1000.0, 0.0], 120), vec![119, 1]);
    }

    #[test]
    fn delta_coding_transfers() {
        let cfg = MacroConfig::default();
        let g = genome_with(&[1], 0.0);
        let mut s = vec![Species::new(0, g.clone()), Species::new(1, g)];
        s[1].generations_since_improvement = 5;
        let mut alloc = vec![60, 60];
        delta_coding(&mut alloc, &s, 0, &cfg);
        assert_eq!(alloc, vec![70, 50]);
        let mut alloc = vec![117, 3];
        delta_coding(&mut alloc, &s, 0, &cfg);
        assert_eq!(alloc, vec![119, 1]);
    }

    #[test]
    fn parent_pool_sizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut reg = InnovationRegistry::new();
        let mut gs: Vec<Genome> = (0..10).map(|_| crate::genome::new_minimal_genome(1, 1, &mut reg, &mut rng)).collect();
        for (i, g) in gs.iter_mut().enumerate() {
            g.adjusted_fitness = i as f64;
        }
        let members: Vec<usize> = (0..10).collect();
        assert_eq!(select_parents(&members, &gs, 0.2), vec![9, 8]);
        assert_eq!(select_parents(&[3], &gs, 0.2), vec![3]);
    }
}
