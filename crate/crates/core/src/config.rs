//! Run configuration. Every parameter has a default; a config file only
//! overrides what it names, and unknown keys are rejected.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown key at line {line}: {message}")]
    UnknownKey { line: usize, message: String },
    #[error("invalid value: {0}")]
    Validation(String),
}

/// Topology-level evolution parameters (mutation, reproduction,
/// compatibility, delta coding, annealing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacroConfig {
    // mutation
    pub c_cold_gauss_severe: f64,
    pub c_cold_gauss_mild: f64,
    pub c_gauss_severe: f64,
    pub c_gauss_mild: f64,
    pub c_turn_on_off: f64,
    pub delta_severity: f64,
    pub pi_add_link: f64,
    pub pi_add_node: f64,
    pub pi_attempt_mutation: usize,
    pub pi_mutate_link: f64,
    pub sigma_w: f64,
    // reproduction
    pub c_best: f64,
    pub c_inter_species: f64,
    pub c_survival: f64,
    pub population_size: usize,
    pub p_mate_only: f64,
    pub p_multipoint: f64,
    pub p_multipoint_average: f64,
    pub p_mutate_only: f64,
    pub p_single_point: f64,
    // compatibility
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub delta_c: f64,
    // delta coding
    pub d_age_significance: f64,
    pub d_drop_off_age: usize,
    pub d_offspring_stolen: usize,
    pub young_species_age: usize,
    pub drop_off_penalty: f64,
    // annealing
    pub c_annealing: usize,
    pub anneal_delta: f64,
    pub k1: f64,
    pub k2: f64,
    pub psi1: f64,
    pub psi2: f64,
    pub psi3: f64,
    pub psi4: f64,
    pub psi5: f64,
    pub psi6: f64,
}

impl Default for MacroConfig {
    fn default() -> Self {
        Self {
            c_cold_gauss_severe: 0.1,
            c_cold_gauss_mild: 0.3,
            c_gauss_severe: 0.3,
            c_gauss_mild: 0.5,
            c_turn_on_off: 0.2,
            delta_severity: 0.5,
            pi_add_link: 0.6,
            pi_add_node: 0.2,
            pi_attempt_mutation: 50,
            pi_mutate_link: 0.9,
            sigma_w: 0.5,
            c_best: 3.0,
            c_inter_species: 0.2,
            c_survival: 0.2,
            population_size: 120,
            p_mate_only: 0.2,
            p_multipoint: 0.6,
            p_multipoint_average: 0.4,
            p_mutate_only: 0.3,
            p_single_point: 0.3,
            c1: 1.0,
            c2: 1.0,
            c3: 2.0,
            delta_c: 3.0,
            d_age_significance: 1.0,
            d_drop_off_age: 2000,
            d_offspring_stolen: 10,
            young_species_age: 10,
            drop_off_penalty: 0.01,
            c_annealing: 10,
            anneal_delta: 0.01,
            k1: 20.0,
            k2: 10.0,
            psi1: 0.02,
            psi2: 0.04,
            psi3: 0.1,
            psi4: 0.2,
            psi5: 0.3,
            psi6: 0.5,
        }
    }
}

impl MacroConfig {
    /// (cancel probability, c_gauss) for a severe or mild weight mutation.
    pub fn weight_branch(&self, severe: bool) -> (f64, f64) {
        if severe {
            (self.c_cold_gauss_severe, self.c_gauss_severe)
        } else {
            (self.c_cold_gauss_mild, self.c_gauss_mild)
        }
    }

    /// Single-point, multipoint, multipoint-average probabilities scaled to
    /// sum to one.
    pub fn crossover_weights(&self) -> [f64; 3] {
        let raw = [self.p_single_point, self.p_multipoint, self.p_multipoint_average];
        let total: f64 = raw.iter().sum();
        raw.map(|p| p / total)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let probs = [
            ("c_cold_gauss_severe", self.c_cold_gauss_severe),
            ("c_cold_gauss_mild", self.c_cold_gauss_mild),
            ("c_gauss_severe", self.c_gauss_severe),
            ("c_gauss_mild", self.c_gauss_mild),
            ("c_turn_on_off", self.c_turn_on_off),
            ("delta_severity", self.delta_severity),
            ("pi_add_link", self.pi_add_link),
            ("pi_add_node", self.pi_add_node),
            ("pi_mutate_link", self.pi_mutate_link),
            ("c_inter_species", self.c_inter_species),
            ("c_survival", self.c_survival),
            ("p_mate_only", self.p_mate_only),
            ("p_multipoint", self.p_multipoint),
            ("p_multipoint_average", self.p_multipoint_average),
            ("p_mutate_only", self.p_mutate_only),
            ("p_single_point", self.p_single_point),
            ("psi1", self.psi1),
            ("psi2", self.psi2),
            ("psi3", self.psi3),
            ("psi4", self.psi4),
            ("psi5", self.psi5),
            ("psi6", self.psi6),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::Validation(format!("macro.{name} = {p} must lie in [0, 1]")));
            }
        }
        if self.psi1 > self.psi2 || self.psi3 > self.psi4 || self.psi5 > self.psi6 {
            return Err(ConfigError::Validation("annealing clamp bounds must satisfy psi1<=psi2, psi3<=psi4, psi5<=psi6".into()));
        }
        if self.population_size < 2 {
            return Err(ConfigError::Validation("macro.population_size must be at least 2".into()));
        }
        if self.p_single_point + self.p_multipoint + self.p_multipoint_average <= 0.0 {
            return Err(ConfigError::Validation("crossover method probabilities sum to zero".into()));
        }
        if self.sigma_w < 0.0 || self.c_best <= 0.0 || self.delta_c <= 0.0 {
            return Err(ConfigError::Validation("sigma_w >= 0, c_best > 0, delta_c > 0 required".into()));
        }
        if self.k1 <= 0.0 || self.k2 <= 0.0 || self.c_annealing == 0 {
            return Err(ConfigError::Validation("k1, k2 and c_annealing must be positive".into()));
        }
        Ok(())
    }
}

/// How raw fitness is measured after (or during) residual training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitnessMode {
    /// Total reward collected over the training episodes.
    Training,
    /// Greedy rollouts of the trained network, one per evaluation context.
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TdConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub phi: f64,
    pub epsilon: f64,
    pub episodes_per_eval: usize,
    pub max_steps_per_episode: usize,
    pub fitness_mode: FitnessMode,
}

impl Default for TdConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            gamma: 0.9,
            phi: 0.5,
            epsilon: 0.05,
            episodes_per_eval: 200,
            max_steps_per_episode: 500,
            fitness_mode: FitnessMode::Training,
        }
    }
}

impl TdConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0) {
            return Err(ConfigError::Validation(format!("td.alpha = {} must be > 0", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(ConfigError::Validation(format!("td.gamma = {} must lie in [0, 1)", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.phi) {
            return Err(ConfigError::Validation(format!("td.phi = {} must lie in [0, 1]", self.phi)));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(ConfigError::Validation(format!("td.epsilon = {} must lie in [0, 1]", self.epsilon)));
        }
        Ok(())
    }
}

/// Weight-level evolution strategy parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaConfig {
    pub sigma_max: f64,
    pub sigma_d: f64,
    pub o_sigma: f64,
    pub rho: usize,
}

impl Default for CmaConfig {
    fn default() -> Self {
        Self {
            sigma_max: 1.0,
            sigma_d: 0.5,
            o_sigma: 0.01,
            rho: 1000,
        }
    }
}

impl CmaConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.sigma_max > 0.0 && self.sigma_d > 0.0 && self.o_sigma >= 0.0 && self.rho >= 1) {
            return Err(ConfigError::Validation("cma: sigma_max, sigma_d, rho must be positive and o_sigma >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// `chain`, `xor`, or `grid`.
    pub name: String,
    pub length: usize,
    /// Chain start state; the middle of the chain when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    pub width: usize,
    pub height: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            name: "xor".into(),
            length: 5,
            start: None,
            width: 5,
            height: 5,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.name.as_str() {
            "xor" => Ok(()),
            "chain" => {
                if self.length < 3 {
                    return Err(ConfigError::Validation("env.length must be at least 3".into()));
                }
                if let Some(s) = self.start {
                    if s == 0 || s + 1 >= self.length {
                        return Err(ConfigError::Validation(format!("env.start = {s} is not an interior chain state")));
                    }
                }
                Ok(())
            }
            "grid" => {
                if self.width < 1 || self.height < 1 || self.width * self.height < 2 {
                    return Err(ConfigError::Validation("env grid needs at least two cells".into()));
                }
                Ok(())
            }
            other => Err(ConfigError::Validation(format!("unknown environment `{other}` (expected chain, xor, or grid)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub seed: u64,
    pub max_generations: usize,
    /// Worker threads for fitness evaluation; 0 uses every available core.
    pub threads: usize,
    pub stop_on_success: bool,
    /// Write a per-iteration CMA trace next to the metrics.
    pub cma_trace: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            max_generations: 100,
            threads: 0,
            stop_on_success: true,
            cma_trace: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "macro")]
    pub macro_cfg: MacroConfig,
    pub cma: CmaConfig,
    pub td: TdConfig,
    pub env: EnvConfig,
    pub run: RunSettings,
}

impl RunConfig {
    /// Stagnation window for switching to weight-level search. It is the
    /// same window that resets the annealing schedule.
    pub fn stagnation_window(&self) -> usize {
        self.macro_cfg.c_annealing
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.macro_cfg.validate()?;
        self.cma.validate()?;
        self.td.validate()?;
        self.env.validate()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(0);
            let message = e.message().to_string();
            if message.starts_with("unknown field") {
                ConfigError::UnknownKey { line, message }
            } else {
                ConfigError::Parse { line, message }
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Resolved config, every parameter spelled out.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
