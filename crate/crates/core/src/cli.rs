//! Command-line front end: `evolve`, `eval`, `inspect` and `oracle`.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::driver::{evolve, DriverError};
use crate::env::{greedy_choice, greedy_rollout, optimal_values, successor_value, EnvError, EnvKind, Environment};
use crate::genome::{Genome, GenomeError, GenomeFile, GenomeFileError};
use crate::network::{decode, Network, NetworkError};

#[derive(Debug, Parser)]
#[command(name = "neuroforge", version, about = "Neuroevolution of value-function networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an evolution and write metrics, the best genome and the resolved config.
    Evolve(EvolveArgs),
    /// Greedy rollouts of a saved genome.
    Eval(EvalArgs),
    /// Print a genome's nodes, connections and innovation range.
    Inspect(InspectArgs),
    /// Print the optimal state values, optionally next to a genome's.
    Oracle(OracleArgs),
}

/// Environment selection shared by every subcommand that needs one.
#[derive(Debug, Clone, Default, Args)]
pub struct EnvArgs {
    /// Configuration file; defaults apply to anything it leaves out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `chain`, `xor` or `grid`.
    #[arg(long)]
    pub env: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Chain length.
    #[arg(long)]
    pub length: Option<usize>,
    /// Grid width.
    #[arg(long)]
    pub width: Option<usize>,
    /// Grid height.
    #[arg(long)]
    pub height: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvolveArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (default `runs/<env>-<seed>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub generations: Option<usize>,
    /// Evaluation threads; 0 uses every core.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[arg(long)]
    pub genome: PathBuf,
    /// Number of rollouts (default: one per distinct start state).
    #[arg(long)]
    pub episodes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub genome: PathBuf,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[arg(long)]
    pub genome: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {}: {source}", path.display())]
    Read { path: PathBuf, source: io::Error },
    #[error("{}: {source}", path.display())]
    ConfigFile { path: PathBuf, source: ConfigError },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    GenomeFile { path: PathBuf, source: GenomeFileError },
    #[error("invalid genome: {0}")]
    Genome(#[from] GenomeError),
    #[error("dimension error: genome has {genome} inputs but environment `{env}` provides {expected}")]
    Dimension { env: String, expected: usize, genome: usize },
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Driver(#[from] DriverError),
}

impl CliError {
    /// 2 for unusable input files or settings, 1 for everything else.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Read { .. } | CliError::ConfigFile { .. } | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

impl EnvArgs {
    /// Config file (or defaults) with the command-line overrides applied.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::parse(&read(path)?)
                .map_err(|source| CliError::ConfigFile { path: path.clone(), source })?,
            None => RunConfig::default(),
        };
        if let Some(name) = &self.env {
            cfg.env.name = name.clone();
        }
        if let Some(g) = self.gamma {
            cfg.td.gamma = g;
        }
        if let Some(l) = self.length {
            cfg.env.length = l;
        }
        if let Some(w) = self.width {
            cfg.env.width = w;
        }
        if let Some(h) = self.height {
            cfg.env.height = h;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

pub fn load_genome(path: &Path) -> Result<(GenomeFile, Genome), CliError> {
    let file = GenomeFile::from_json(&read(path)?)
        .map_err(|source| CliError::GenomeFile { path: path.to_path_buf(), source })?;
    let genome = file.clone().into_genome()?;
    Ok((file, genome))
}

fn network_for(genome: &Genome, env: &dyn Environment) -> Result<Network, CliError> {
    let net = decode(genome)?;
    if net.input_count() != env.input_count() {
        return Err(CliError::Dimension {
            env: env.name().to_string(),
            expected: env.input_count(),
            genome: net.input_count(),
        });
    }
    Ok(net)
}

/// Runs a parsed command, returning what it prints on stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Evolve(a) => cmd_evolve(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Inspect(a) => cmd_inspect(&a),
        Command::Oracle(a) => cmd_oracle(&a),
    }
}

pub fn cmd_evolve(args: &EvolveArgs) -> Result<String, CliError> {
    let mut cfg = args.env.resolve()?;
    if let Some(s) = args.seed {
        cfg.run.seed = s;
    }
    if let Some(g) = args.generations {
        cfg.run.max_generations = g;
    }
    if let Some(t) = args.threads {
        cfg.run.threads = t;
    }
    let env = EnvKind::from_config(&cfg.env)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("runs/{}-{}", cfg.env.name, cfg.run.seed)));
    let summary = evolve(&cfg, env.as_dyn(), Some(&out))?;
    let last = summary.reports.last().expect("at least one generation");
    Ok(format!(
        "generations {}\nbest_raw {}\nsuccess {}\nhidden_nodes {}\nout {}\n",
        last.generation,
        summary.best.raw_fitness,
        summary.success,
        summary.best.hidden_count(),
        out.display()
    ))
}

pub fn cmd_eval(args: &EvalArgs) -> Result<String, CliError> {
    let (file, genome) = load_genome(&args.genome)?;
    let mut env_args = args.env.clone();
    if env_args.env.is_none() && env_args.config.is_none() {
        env_args.env = file.environment.clone();
    }
    let cfg = env_args.resolve()?;
    let kind = EnvKind::from_config(&cfg.env)?;
    let env = kind.as_dyn();
    let net = network_for(&genome, env)?;
    let episodes = args.episodes.unwrap_or(match kind {
        EnvKind::Xor(_) => 4,
        _ => 1,
    });
    let returns: Vec<f64> = (0..episodes)
        .map(|e| {
            let (rewards, _) = greedy_rollout(env, &net, env.initial_state(e), cfg.td.gamma, cfg.td.max_steps_per_episode);
            rewards.iter().sum()
        })
        .collect();
    let n = returns.len().max(1) as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let min = returns.iter().copied().fold(f64::INFINITY, f64::min);
    let max = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let success = env.success(&net, cfg.td.gamma, cfg.td.max_steps_per_episode);
    Ok(format!(
        "env {}\nepisodes {episodes}\nmean_reward {mean}\nmin_reward {min}\nmax_reward {max}\nsuccess {success}\n",
        env.name()
    ))
}

pub fn cmd_inspect(args: &InspectArgs) -> Result<String, CliError> {
    let (file, genome) = load_genome(&args.genome)?;
    let mut s = String::new();
    if let Some(env) = &file.environment {
        writeln!(s, "environment {env}").unwrap();
    }
    if let Some(seed) = file.seed {
        writeln!(s, "seed {seed}").unwrap();
    }
    writeln!(s, "fitness {}", genome.raw_fitness).unwrap();
    writeln!(s, "nodes {}", genome.nodes.len()).unwrap();
    writeln!(s, "id,role").unwrap();
    for n in &genome.nodes {
        let role = serde_json::to_value(n.role).expect("role serializes");
        writeln!(s, "{},{}", n.id, role.as_str().expect("role is a string")).unwrap();
    }
    writeln!(s, "edges {} ({} enabled)", genome.connections.len(), genome.enabled_count()).unwrap();
    writeln!(s, "innovation,in,out,weight,enabled").unwrap();
    for c in &genome.connections {
        writeln!(s, "{},{},{},{},{}", c.innovation, c.in_node, c.out_node, c.weight, c.enabled).unwrap();
    }
    match (genome.connections.first(), genome.connections.last()) {
        (Some(a), Some(b)) => writeln!(s, "innovations {}..={}", a.innovation, b.innovation).unwrap(),
        _ => writeln!(s, "innovations none").unwrap(),
    }
    Ok(s)
}

pub fn cmd_oracle(args: &OracleArgs) -> Result<String, CliError> {
    let cfg = args.env.resolve()?;
    let kind = EnvKind::from_config(&cfg.env)?;
    let env = kind.as_dyn();
    let gamma = cfg.td.gamma;
    let net = match &args.genome {
        Some(path) => Some(network_for(&load_genome(path)?.1, env)?),
        None => None,
    };
    let mut s = String::from(if net.is_some() { "state,v_star,v_net,residual\n" } else { "state,v_star\n" });
    for (state, v_star) in optimal_values(env, gamma)? {
        write!(s, "{state},{v_star}").unwrap();
        if let Some(net) = &net {
            match env.features(state) {
                Some(x) => {
                    let v = net.forward(&x)?;
                    let options = env.afterstates(state)?;
                    let a = options[greedy_choice(env, net, &options, gamma)];
                    let residual = (a.reward + gamma * successor_value(env, net, a.successor) - v).abs();
                    write!(s, ",{v},{residual}").unwrap();
                }
                None => s.push_str(",,"),
            }
        }
        s.push('\n');
    }
    Ok(s)
}
