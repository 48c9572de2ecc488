//! Synthetic populations, return generators and the Monte Carlo loss experiment.

mod experiment;
mod population;
mod scenario;

pub use experiment::{run_experiment, run_replication, LossRow, LossTable, RepLosses, ScenarioConfig};
pub use population::{build_population, build_population_with, spectrum, GarchParams, PopulationModel};
pub use scenario::{generate, Generator, GeneratorOptions, Scenario, GARCH_BURN_IN};
