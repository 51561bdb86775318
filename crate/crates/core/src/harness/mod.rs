//! Configuration, experiment orchestration, rate fitting and CSV output.

mod config;
mod csv;
mod experiments;
mod fit;
mod verify;

pub use config::{parse_config, Cutoff, ExperimentConfig, ModelSpec, Numerics, Sweep};
pub use csv::{num, Table};
pub use experiments::{
    base_packet, cayley_spectral, run_experiment, self_convergence, Check, ExperimentKind, Guard, NamedFit,
    SpectralReport, Stage,
};
pub use fit::{fit_rate, floor, RateFit};
pub use verify::verify;
