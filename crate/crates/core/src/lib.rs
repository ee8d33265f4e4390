//! Coupled classical + quantum dynamics: a piecewise-deterministic
//! trajectory engine, its master-equation oracle, and three experiment
//! models (detector medium, tunneling-time detectors, tetrahedral spin
//! fractal).

pub mod engine;
pub mod error;
pub mod fractal;
pub mod cloud;
pub mod linalg;
pub mod master;
pub mod model;
pub mod stats;
pub mod tunneling;
pub mod validation;

pub use engine::{
    Engine, EngineConfig, EnsembleOptions, EnsembleStats, HybridPureState, TerminatedBy,
    TrajectoryEvent, TrajectoryRecord,
};
pub use error::{Error, Result};
pub use model::{HybridModel, QuantumSpace, Units};
