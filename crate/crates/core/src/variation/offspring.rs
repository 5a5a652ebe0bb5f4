use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;

use super::anneal::AnnealedRates;
use super::crossover::{crossover_multipoint, crossover_multipoint_average, crossover_single_point};
use super::mutation::{mutate_add_link, mutate_add_node, mutate_toggle, mutate_weights};
use crate::config::MacroConfig;
use crate::genome::{Genome, InnovationRegistry};

/// Which route produced an offspring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    MutateOnly,
    SinglePoint { mutated: bool },
    Multipoint { mutated: bool },
    MultipointAverage { mutated: bool },
}

/// Parents available to one species' reproduction.
#[derive(Debug, Clone, Copy)]
pub struct Parents<'a> {
    /// Surviving top fraction of the species.
    pub pool: &'a [&'a Genome],
    /// Parent pools of every other species, for inter-species mating.
    pub others: &'a [Vec<&'a Genome>],
}

/// Applies the mutation operators, each gated by its own probability.
pub fn mutate<R: Rng + ?Sized>(
    g: &mut Genome,
    cfg: &MacroConfig,
    rates: &AnnealedRates,
    registry: &mut InnovationRegistry,
    rng: &mut R,
) {
    if rng.random_bool(rates.pi_add_node) {
        // No enabled link to split leaves the genome as is.
        let _ = mutate_add_node(g, registry, rng);
    }
    if rng.random_bool(rates.pi_add_link) {
        mutate_add_link(g, registry, cfg.pi_attempt_mutation, rng);
    }
    if rng.random_bool(cfg.pi_mutate_link) {
        mutate_weights(g, cfg, rng);
    }
    mutate_toggle(g, cfg, rng);
}

fn pick<'a, R: Rng + ?Sized>(pool: &[&'a Genome], rng: &mut R) -> &'a Genome {
    pool[rng.random_range(0..pool.len())]
}

/// Produces one offspring: either a mutated clone of a random parent, or a
/// crossover child (mate from another species with probability
/// `c_inter_species`) that is mutated unless the `p_mate_only` draw keeps it
/// intact.
pub fn make_offspring<R: Rng + ?Sized>(
    parents: Parents<'_>,
    cfg: &MacroConfig,
    rates: &AnnealedRates,
    registry: &mut InnovationRegistry,
    rng: &mut R,
) -> (Genome, Origin) {
    assert!(!parents.pool.is_empty(), "parent pool must be non-empty");
    let mutate_only = rng.random_bool(rates.p_mutate_only);
    let mate = if mutate_only {
        None
    } else {
        let others: Vec<&Vec<&Genome>> = parents.others.iter().filter(|p| !p.is_empty()).collect();
        if !others.is_empty() && rng.random_bool(cfg.c_inter_species) {
            let pool = others[rng.random_range(0..others.len())];
            Some((pick(parents.pool, rng), pick(pool, rng)))
        } else if parents.pool.len() >= 2 {
            let i = rng.random_range(0..parents.pool.len());
            let mut j = rng.random_range(0..parents.pool.len() - 1);
            if j >= i {
                j += 1;
            }
            Some((parents.pool[i], parents.pool[j]))
        } else {
            None
        }
    };

    let (mut child, origin) = match mate {
        None => {
            let mut child = pick(parents.pool, rng).clone();
            mutate(&mut child, cfg, rates, registry, rng);
            (child, Origin::MutateOnly)
        }
        Some((a, b)) => {
            let (fa, fb) = (a.raw_fitness, b.raw_fitness);
            let method = WeightedIndex::new(cfg.crossover_weights())
                .expect("crossover weights validated")
                .sample(rng);
            let (child, make): (Genome, fn(bool) -> Origin) = match method {
                0 => match crossover_single_point(a, b, rng) {
                    Ok(c) => (c, |m| Origin::SinglePoint { mutated: m }),
                    // No common history: fall back to the fitter parent.
                    Err(_) => (
                        if fb > fa { b.clone() } else { a.clone() },
                        |m| Origin::SinglePoint { mutated: m },
                    ),
                },
                1 => (crossover_multipoint(a, b, fa, fb, rng), |m| Origin::Multipoint { mutated: m }),
                _ => (
                    crossover_multipoint_average(a, b, fa, fb, rng),
                    |m| Origin::MultipointAverage { mutated: m },
                ),
            };
            let mut child = child;
            let mutated = !rng.random_bool(cfg.p_mate_only);
            if mutated {
                mutate(&mut child, cfg, rates, registry, rng);
            }
            (child, make(mutated))
        }
    };
    child.raw_fitness = 0.0;
    child.adjusted_fitness = 0.0;
    (child, origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genome::new_minimal_genome;
    use crate::variation::AnnealState;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn singleton_species_without_mates_mutates_only() {
        let cfg = MacroConfig { p_mutate_only: 0.0, psi5: 0.0, ..MacroConfig::default() };
        let mut reg = InnovationRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = new_minimal_genome(2, 1, &mut reg, &mut rng);
        let pool = [&g];
        let rates = AnnealedRates { pi_add_node: 0.04, pi_add_link: 0.2, p_mutate_only: 0.0 };
        for _ in 0..50 {
            let (_, origin) = make_offspring(Parents { pool: &pool, others: &[] }, &cfg, &rates, &mut reg, &mut rng);
            assert_eq!(origin, Origin::MutateOnly);
        }
    }

    #[test]
    fn offspring_are_valid_and_use_all_routes() {
        let cfg = MacroConfig::default();
        let mut reg = InnovationRegistry::new();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let genomes: Vec<Genome> = (0..6).map(|_| new_minimal_genome(3, 1, &mut reg, &mut rng)).collect();
        let pool: Vec<&Genome> = genomes[..3].iter().collect();
        let others = vec![genomes[3..].iter().collect::<Vec<_>>()];
        let mut anneal = AnnealState::new(&cfg);
        let rates = crate::variation::annealed_rates(&mut anneal, &cfg);
        let mut seen = [false; 4];
        for _ in 0..500 {
            let (child, origin) =
                make_offspring(Parents { pool: &pool, others: &others }, &cfg, &rates, &mut reg, &mut rng);
            child.validate().unwrap();
            let k = match origin {
                Origin::MutateOnly => 0,
                Origin::SinglePoint { .. } => 1,
                Origin::Multipoint { .. } => 2,
                Origin::MultipointAverage { .. } => 3,
            };
            seen[k] = true;
        }
        assert_eq!(seen, [true; 4]);
    }
}
