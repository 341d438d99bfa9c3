//! Transient kinetics toolkit for TAP pulse-response experiments: reactor
//! simulation, kinetic parameter estimation with Hessian-based uncertainty,
//! and model-based design of experiments for parameter precision and for
//! mechanism discrimination.

pub mod constants;
pub mod doe;
pub mod error;
pub mod estimation;
pub mod fixtures;
pub mod linalg;
pub mod mechanism;
pub mod params;
pub mod reactor;
pub mod synthetic;

pub use error::{Result, TapError};
pub use mechanism::{parse_mechanism, Mechanism};
pub use params::ParameterSet;
pub use reactor::{simulate, ExperimentDesign, FluxSeries, ReactorGeometry, Simulator};
