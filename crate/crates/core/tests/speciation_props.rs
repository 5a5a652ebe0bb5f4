mod common;

use common::{grown_genome, rng};
use neuroforge::config::MacroConfig;
use neuroforge::speciation::{adjust_fitness, allocate_offspring, assign_species, compatibility};
use neuroforge::InnovationRegistry;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn compatibility_is_a_symmetric_nonnegative_distance(seed in any::<u64>(), sa in 0usize..20, sb in 0usize..20) {
        let cfg = MacroConfig::default();
        let mut r = rng(seed);
        let mut reg = InnovationRegistry::new();
        let a = grown_genome(3, sa, &mut reg, &mut r);
        let b = grown_genome(3, sb, &mut reg, &mut r);
        let ab = compatibility(&a, &b, &cfg);
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, compatibility(&b, &a, &cfg));
        prop_assert_eq!(compatibility(&a, &a, &cfg), 0.0);
    }

    #[test]
    fn species_partition_the_population(seed in any::<u64>(), n in 1usize..60, rounds in 1usize..4) {
        let cfg = MacroConfig { delta_c: 1.0, ..MacroConfig::default() };
        let mut r = rng(seed);
        let mut reg = InnovationRegistry::new();
        let mut species = Vec::new();
        let mut next_id = 0;
        for _ in 0..rounds {
            let genomes: Vec<_> = (0..n).map(|k| grown_genome(2, k % 12, &mut reg, &mut r)).collect();
            assign_species(&genomes, &mut species, &mut next_id, &cfg);
            let mut seen = vec![0; n];
            for s in &species {
                prop_assert!(!s.members.is_empty());
                for &m in &s.members {
                    seen[m] += 1;
                }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn adjusted_fitness_orders(raw in -100.0f64..100.0, gap in 0.0f64..50.0, worst in -200.0f64..-100.0, n in 1usize..200) {
        let lo = adjust_fitness(raw, worst, n);
        prop_assert!(lo >= 0.0);
        prop_assert!(adjust_fitness(raw + gap, worst, n) >= lo);
        prop_assert!(adjust_fitness(raw, worst, n + 1) < lo);
    }

    #[test]
    fn allocation_conserves_the_population(sums in proptest::collection::vec(prop_oneof![Just(0.0), 0.0f64..1e6], 1..40), total in 40usize..400) {
        let alloc = allocate_offspring(&sums, total);
        prop_assert_eq!(alloc.len(), sums.len());
        prop_assert_eq!(alloc.iter().sum::<usize>(), total);
        prop_assert!(alloc.iter().all(|&k| k >= 1));
    }
}
