//! The generation loop: evaluate, speciate, detect stagnation, then
//! reproduce either through macroscopic variation or through per-species
//! CMA-ES sampling of the champion's weights.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use log::{debug, info};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cma::{cma_init, TraceRow};
use crate::config::RunConfig;
use crate::env::Environment;
use crate::genome::{new_minimal_genome, Genome, GenomeFile, InnovationRegistry};
use crate::network::decode;
use crate::speciation::{
    allocate_offspring, assign_species, best_by_raw, choose_representatives, compute_adjusted_fitness, delta_coding,
    select_parents, update_species_records, Species,
};
use crate::td::evaluate_fitness;
use crate::variation::{annealed_rates, make_offspring, AnnealState, AnnealedRates, Parents};

pub const METRICS_HEADER: &str =
    "gen,mode,best_raw,mean_raw,species,best_nodes,best_edges,pi_add_node,pi_add_link,p_mutate_only,o";
pub const CMA_TRACE_HEADER: &str = "iter,sigma,best_fitness,mean_fitness,cond_number";

#[derive(Debug, Error)]
pub enum DriverError {
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("cannot build evaluation thread pool: {0}")]
    ThreadPool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Macro,
    Micro,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Macro => "macro",
            Mode::Micro => "micro",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationReport {
    pub generation: usize,
    pub mode: Mode,
    pub best_raw: f64,
    pub mean_raw: f64,
    pub species_count: usize,
    pub best_nodes: usize,
    pub best_edges: usize,
    pub rates: AnnealedRates,
    /// Stagnation level after this generation's check.
    pub o: usize,
    /// Whether the anneal schedule was reset this generation.
    pub anneal_reset: bool,
    pub success: bool,
}

impl GenerationReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.generation,
            self.mode,
            self.best_raw,
            self.mean_raw,
            self.species_count,
            self.best_nodes,
            self.best_edges,
            self.rates.pi_add_node,
            self.rates.pi_add_link,
            self.rates.p_mutate_only,
            self.o
        )
    }
}

/// Outcome of the stagnation check.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stagnation {
    pub stagnated: bool,
    pub o: usize,
}

/// The check fires each time another full `window` of generations passes
/// without improvement; the level counts the windows completed since the
/// last improvement.
pub fn detect_stagnation(generations_without_improvement: usize, window: usize) -> Stagnation {
    Stagnation {
        stagnated: generations_without_improvement > 0 && generations_without_improvement % window == 0,
        o: generations_without_improvement / window,
    }
}

pub struct Population {
    pub genomes: Vec<Genome>,
    /// Whether `genomes[i]` already carries its fitness.
    pub evaluated: Vec<bool>,
    pub species: Vec<Species>,
    pub generation: usize,
    pub anneal: AnnealState,
    pub best_raw_fitness_ever: f64,
    pub best_genome: Option<Genome>,
    /// First genome to meet the environment's success predicate.
    pub solver: Option<Genome>,
    pub generations_without_improvement: usize,
    pub o: usize,
    pub registry: InnovationRegistry,
    next_species_id: u32,
}

/// Mixes the run seed, generation, purpose and index into an independent
/// evaluation stream.
fn eval_rng(seed: u64, generation: usize, purpose: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 62) | ((generation as u64) << 32) | index as u64);
    rng
}

const STREAM_MACRO: u64 = 0;
const STREAM_MICRO: u64 = 1;

/// Decodes, trains and scores `g`, writing the trained weights back.
fn evaluate_genome(g: &mut Genome, env: &dyn Environment, cfg: &RunConfig, mut rng: ChaCha8Rng) {
    let mut net = decode(g).expect("variation keeps genomes acyclic");
    let fitness = evaluate_fitness(&mut net, env, &cfg.td, &mut rng);
    g.set_enabled_weights(net.weights());
    g.raw_fitness = fitness;
}

/// One seeded run, advanced a generation at a time.
pub struct Evolution<'e> {
    pub cfg: RunConfig,
    pub env: &'e dyn Environment,
    pub population: Population,
    pool: rayon::ThreadPool,
    rng: ChaCha8Rng,
    pub cma_trace: Vec<TraceRow>,
}

impl<'e> Evolution<'e> {
    pub fn new(cfg: RunConfig, env: &'e dyn Environment) -> Result<Self, DriverError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.run.threads).build()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.run.seed);
        let mut registry = InnovationRegistry::new();
        let p = cfg.macro_cfg.population_size;
        let genomes: Vec<Genome> = (0..p)
            .map(|_| new_minimal_genome(env.input_count(), 1, &mut registry, &mut rng))
            .collect();
        let population = Population {
            evaluated: vec![false; genomes.len()],
            genomes,
            species: Vec::new(),
            generation: 0,
            anneal: AnnealState::new(&cfg.macro_cfg),
            best_raw_fitness_ever: f64::NEG_INFINITY,
            best_genome: None,
            solver: None,
            generations_without_improvement: 0,
            o: 0,
            registry,
            next_species_id: 0,
        };
        Ok(Self { cfg, env, population, pool, rng, cma_trace: Vec::new() })
    }

    fn evaluate_pending(&mut self) {
        let (env, cfg) = (self.env, &self.cfg);
        let generation = self.population.generation;
        let seed = cfg.run.seed;
        let pop = &mut self.population;
        self.pool.install(|| {
            pop.genomes
                .par_iter_mut()
                .zip(pop.evaluated.par_iter_mut())
                .enumerate()
                .filter(|(_, (_, done))| !**done)
                .for_each(|(i, (g, done))| {
                    evaluate_genome(g, env, cfg, eval_rng(seed, generation, STREAM_MACRO, i));
                    *done = true;
                });
        });
    }

    /// Evaluates the current generation and records it; when `reproduce` is
    /// set (and the run has not just succeeded with `stop_on_success`), the
    /// population is replaced by the next generation.
    pub fn step(&mut self, reproduce: bool) -> GenerationReport {
        self.evaluate_pending();
        let cfg = &self.cfg;
        let pop = &mut self.population;
        let generation = pop.generation;
        assign_species(&pop.genomes, &mut pop.species, &mut pop.next_species_id, &cfg.macro_cfg);
        update_species_records(&pop.genomes, &mut pop.species);

        let best = best_by_raw(0..pop.genomes.len(), &pop.genomes).expect("population is non-empty");
        let best_raw = pop.genomes[best].raw_fitness;
        if best_raw > pop.best_raw_fitness_ever {
            pop.best_raw_fitness_ever = best_raw;
            pop.best_genome = Some(pop.genomes[best].clone());
            pop.generations_without_improvement = 0;
            pop.o = 0;
            pop.anneal.k3 = 1.0;
            for s in &mut pop.species {
                s.cma = None;
            }
        } else {
            pop.generations_without_improvement += 1;
        }
        let stagnation = detect_stagnation(pop.generations_without_improvement, cfg.stagnation_window());
        let anneal_reset = stagnation.stagnated;
        if anneal_reset {
            pop.o = stagnation.o;
            pop.anneal.reset(&cfg.macro_cfg);
            info!("generation {generation}: stagnation level {}", pop.o);
        }
        let mode = if stagnation.stagnated { Mode::Micro } else { Mode::Macro };

        let mut ranked: Vec<usize> = (0..pop.genomes.len()).collect();
        ranked.sort_by(|&a, &b| pop.genomes[b].raw_fitness.total_cmp(&pop.genomes[a].raw_fitness));
        let solver = ranked.into_iter().find(|&i| {
            let net = decode(&pop.genomes[i]).expect("variation keeps genomes acyclic");
            self.env.success(&net, cfg.td.gamma, cfg.td.max_steps_per_episode)
        });
        let success = solver.is_some();
        if let Some(i) = solver {
            pop.solver.get_or_insert_with(|| pop.genomes[i].clone());
        }
        let mean_raw = pop.genomes.iter().map(|g| g.raw_fitness).sum::<f64>() / pop.genomes.len() as f64;
        let species_count = pop.species.len();
        let best_nodes = pop.genomes[best].nodes.len();
        let best_edges = pop.genomes[best].enabled_count();

        let rates = if reproduce && !(success && cfg.run.stop_on_success) {
            let rates = annealed_rates(&mut pop.anneal, &cfg.macro_cfg);
            self.reproduce(mode, &rates);
            rates
        } else {
            pop.anneal.rates(&cfg.macro_cfg)
        };
        let report = GenerationReport {
            generation,
            mode,
            best_raw,
            mean_raw,
            species_count,
            best_nodes,
            best_edges,
            rates,
            o: self.population.o,
            anneal_reset,
            success,
        };
        info!(
            "gen {} {} best {} mean {} species {}",
            report.generation, report.mode, report.best_raw, report.mean_raw, report.species_count
        );
        report
    }

    /// Builds the next generation. Every species keeps its champion, which
    /// is trained again alongside the offspring. In micro mode the species'
    /// CMA-ES samples of the champion's weights come next, and variation
    /// fills whatever slots remain.
    fn reproduce(&mut self, mode: Mode, rates: &AnnealedRates) {
        let cfg = &self.cfg;
        let mcfg = &cfg.macro_cfg;
        let pop = &mut self.population;
        let rng = &mut self.rng;
        pop.registry.start_generation();

        let champion = compute_adjusted_fitness(&mut pop.genomes, &pop.species, mcfg);
        let sums: Vec<f64> = pop
            .species
            .iter()
            .map(|s| s.members.iter().map(|&i| pop.genomes[i].adjusted_fitness).sum())
            .collect();
        let mut alloc = allocate_offspring(&sums, mcfg.population_size);
        let champion_species = pop
            .species
            .iter()
            .position(|s| s.members.contains(&champion))
            .expect("champion belongs to a species");
        delta_coding(&mut alloc, &pop.species, champion_species, mcfg);
        let pools: Vec<Vec<usize>> = pop
            .species
            .iter()
            .map(|s| select_parents(&s.members, &pop.genomes, mcfg.c_survival))
            .collect();
        choose_representatives(&pop.genomes, &mut pop.species, rng);

        let genomes = std::mem::take(&mut pop.genomes);
        let mut next = Vec::with_capacity(mcfg.population_size);
        let mut next_evaluated = Vec::with_capacity(mcfg.population_size);
        let mut micro_index = 0;
        for (j, species) in pop.species.iter_mut().enumerate() {
            let elite = &genomes[species.champion(&genomes)];
            next.push(elite.clone());
            next_evaluated.push(false);
            let mut need = alloc[j] - 1;
            if mode == Mode::Micro && elite.enabled_count() >= 1 && need > 0 {
                let micro = MicroContext {
                    cfg,
                    env: self.env,
                    pool: &self.pool,
                    generation: pop.generation,
                    o: pop.o,
                    f_stop: pop.best_raw_fitness_ever,
                };
                let trace = cfg.run.cma_trace.then_some(&mut self.cma_trace);
                for g in micro.sample(species, elite, need, &mut micro_index, rng, trace) {
                    next.push(g);
                    next_evaluated.push(true);
                    need -= 1;
                }
            }
            let pool: Vec<&Genome> = pools[j].iter().map(|&i| &genomes[i]).collect();
            let others: Vec<Vec<&Genome>> = pools
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != j)
                .map(|(_, p)| p.iter().map(|&i| &genomes[i]).collect())
                .collect();
            let parents = Parents { pool: &pool, others: &others };
            for _ in 0..need {
                let (child, _) = make_offspring(parents, mcfg, rates, &mut pop.registry, rng);
                next.push(child);
                next_evaluated.push(false);
            }
        }
        debug_assert_eq!(next.len(), mcfg.population_size);
        pop.genomes = next;
        pop.evaluated = next_evaluated;
        pop.generation += 1;
    }
}

/// What a species' CMA-ES fill needs from the run.
struct MicroContext<'a> {
    cfg: &'a RunConfig,
    env: &'a dyn Environment,
    pool: &'a rayon::ThreadPool,
    generation: usize,
    o: usize,
    f_stop: f64,
}

impl MicroContext<'_> {
    /// Runs one ask/tell round on the species' CMA state and returns the
    /// best `need` trained candidates (all of them when fewer were sampled).
    /// A state whose dimension no longer matches the champion is replaced, a
    /// state from an earlier stagnation level is inflated, and a state that
    /// meets its stopping rule is retired.
    fn sample(
        &self,
        species: &mut Species,
        champion: &Genome,
        need: usize,
        index: &mut usize,
        rng: &mut ChaCha8Rng,
        trace: Option<&mut Vec<TraceRow>>,
    ) -> Vec<Genome> {
        let x0 = champion.enabled_weights();
        if species.cma.as_ref().is_none_or(|s| s.dim() != x0.len()) {
            species.cma = Some(cma_init(&x0, self.o, &self.cfg.cma, self.f_stop));
        }
        let state = species.cma.as_mut().expect("state initialized above");
        if state.o != self.o {
            state.inflate(self.o, &self.cfg.cma);
        }
        let xs = state.ask(rng);
        let mut batch: Vec<Genome> = xs
            .iter()
            .map(|x| {
                let mut g = champion.clone();
                g.set_enabled_weights(x);
                g.adjusted_fitness = 0.0;
                g
            })
            .collect();
        let base = *index;
        *index += batch.len();
        let (env, cfg, generation) = (self.env, self.cfg, self.generation);
        self.pool.install(|| {
            batch.par_iter_mut().enumerate().for_each(|(k, g)| {
                evaluate_genome(g, env, cfg, eval_rng(cfg.run.seed, generation, STREAM_MICRO, base + k));
            });
        });
        let fitnesses: Vec<f64> = batch.iter().map(|g| g.raw_fitness).collect();
        let row = state.tell(&xs, &fitnesses);
        if let Some(t) = trace {
            t.push(row);
        }
        if state.should_stop() {
            debug!("species {}: CMA-ES run finished after {} iterations", species.id, state.t);
            species.cma = None;
        }
        batch.sort_by(|a, b| b.raw_fitness.total_cmp(&a.raw_fitness));
        batch.truncate(need);
        batch
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub reports: Vec<GenerationReport>,
    pub best: Genome,
    pub success: bool,
}

impl RunSummary {
    pub fn metrics_csv(&self) -> String {
        let mut s = String::from(METRICS_HEADER);
        s.push('\n');
        for r in &self.reports {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), DriverError> {
    fs::File::create(path)
        .and_then(|mut f| f.write_all(contents.as_bytes()))
        .map_err(|source| DriverError::Io { path: path.to_path_buf(), source })
}

/// Runs up to `max_generations` reproductions (stopping early on success
/// when configured). With `out` set, writes `metrics.csv`,
/// `best_genome.json`, `config.toml` and, if enabled, `cma_trace.csv`.
pub fn evolve(cfg: &RunConfig, env: &dyn Environment, out: Option<&Path>) -> Result<RunSummary, DriverError> {
    let mut evo = Evolution::new(cfg.clone(), env)?;
    let mut reports = Vec::new();
    for g in 0..=cfg.run.max_generations {
        let report = evo.step(g < cfg.run.max_generations);
        let stop = report.success && cfg.run.stop_on_success;
        reports.push(report);
        if stop {
            break;
        }
    }
    let pop = &evo.population;
    let best = pop.solver.clone().or_else(|| pop.best_genome.clone()).expect("at least one generation evaluated");
    let summary = RunSummary { success: reports.last().is_some_and(|r| r.success), reports, best };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|source| DriverError::Io { path: dir.to_path_buf(), source })?;
        write_file(&dir.join("metrics.csv"), &summary.metrics_csv())?;
        let mut file = GenomeFile::from_genome(&summary.best);
        file.environment = Some(env.name().to_string());
        file.seed = Some(cfg.run.seed);
        write_file(&dir.join("best_genome.json"), &file.to_json())?;
        write_file(&dir.join("config.toml"), &cfg.to_toml())?;
        if cfg.run.cma_trace {
            let mut s = String::from(CMA_TRACE_HEADER);
            s.push('\n');
            for r in &evo.cma_trace {
                s.push_str(&format!("{},{},{},{},{}\n", r.iter, r.sigma, r.best_fitness, r.mean_fitness, r.cond_number));
            }
            write_file(&dir.join("cma_trace.csv"), &s)?;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ChainMdp, XorBandit};

    fn small(seed: u64) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.macro_cfg.population_size = 20;
        cfg.td.episodes_per_eval = 8;
        cfg.run.seed = seed;
        cfg.run.max_generations = 4;
        cfg.run.stop_on_success = false;
        cfg
    }

    #[test]
    fn stagnation_counting() {
        assert_eq!(detect_stagnation(0, 2), Stagnation { stagnated: false, o: 0 });
        assert_eq!(detect_stagnation(10, 10), Stagnation { stagnated: true, o: 1 });
        assert_eq!(detect_stagnation(19, 10), Stagnation { stagnated: false, o: 1 });
        assert_eq!(detect_stagnation(20, 10), Stagnation { stagnated: true, o: 2 });
    }

    #[test]
    fn population_size_is_conserved() {
        let env = ChainMdp::new(5, None);
        let mut evo = Evolution::new(small(3), &env).unwrap();
        for _ in 0..5 {
            evo.step(true);
            assert_eq!(evo.population.genomes.len(), 20);
            for g in &evo.population.genomes {
                g.validate().unwrap();
            }
        }
    }

    #[test]
    fn zero_generations_only_evaluates() {
        let mut cfg = small(1);
        cfg.run.max_generations = 0;
        let s = evolve(&cfg, &XorBandit, None).unwrap();
        assert_eq!(s.reports.len(), 1);
        assert_eq!(s.reports[0].generation, 0);
    }

    #[test]
    fn best_fitness_never_decreases() {
        let env = ChainMdp::new(5, None);
        let mut cfg = small(5);
        cfg.run.max_generations = 12;
        let s = evolve(&cfg, &env, None).unwrap();
        for w in s.reports.windows(2) {
            assert!(w[1].best_raw >= w[0].best_raw);
        }
    }

    #[test]
    fn runs_are_reproducible() {
        let a = evolve(&small(11), &XorBandit, None).unwrap();
        let b = evolve(&small(11), &XorBandit, None).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
    }
}
