//! Structural and weight mutation, the three crossover methods, the annealed
//! mutation schedule, and offspring production.

mod anneal;
mod crossover;
mod mutation;
mod offspring;

use thiserror::Error;

pub use anneal::{annealed_rates, AnnealState, AnnealedRates};
pub use crossover::{crossover_multipoint, crossover_multipoint_average, crossover_single_point};
pub use mutation::{mutate_add_link, mutate_add_node, mutate_toggle, mutate_weights};
pub use offspring::{make_offspring, mutate, Origin, Parents};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum VariationError {
    #[error("genome has no enabled connection to split")]
    NoEnabledConnection,
    #[error("parents share no matching genes")]
    NoMatchingGenes,
}
