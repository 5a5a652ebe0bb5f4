use serde::Serialize;

use crate::config::MacroConfig;

/// Running state of the annealed mutation schedule.
///
/// The `x_*` values run unclamped; the probabilities handed to reproduction
/// are clamped into their `[psi]` bands.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnealState {
    pub x_add_node: f64,
    pub x_add_link: f64,
    pub x_mutate_only: f64,
    /// Generations since the last reset, starting at 1.
    pub temperature: u32,
    /// +1 while the population keeps improving, -1 once it stagnates.
    pub k3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnealedRates {
    pub pi_add_node: f64,
    pub pi_add_link: f64,
    pub p_mutate_only: f64,
}

impl AnnealState {
    pub fn new(cfg: &MacroConfig) -> Self {
        Self {
            x_add_node: cfg.pi_add_node,
            x_add_link: cfg.pi_add_link,
            x_mutate_only: cfg.p_mutate_only,
            temperature: 1,
            k3: 1.0,
        }
    }

    /// Restores the starting values after the population stagnates.
    pub fn reset(&mut self, cfg: &MacroConfig) {
        *self = Self {
            k3: -1.0,
            ..Self::new(cfg)
        };
    }

    /// The probabilities the current state yields, without advancing it.
    pub fn rates(&self, cfg: &MacroConfig) -> AnnealedRates {
        AnnealedRates {
            pi_add_node: self.x_add_node.min(cfg.psi2).max(cfg.psi1),
            pi_add_link: self.x_add_link.min(cfg.psi4).max(cfg.psi3),
            p_mutate_only: self.x_mutate_only.min(cfg.psi6).max(cfg.psi5),
        }
    }
}

/// Advances the schedule by one generation and returns the clamped
/// probabilities for this generation's reproduction.
pub fn annealed_rates(state: &mut AnnealState, cfg: &MacroConfig) -> AnnealedRates {
    debug_assert!(state.temperature >= 1);
    let t = f64::from(state.temperature);
    state.x_add_node -= 1.0 / (cfg.k1 * t);
    state.x_add_link -= 1.0 / (cfg.k2 * t);
    state.x_mutate_only += state.k3 * cfg.anneal_delta;
    state.temperature += 1;
    state.rates(cfg)
}
