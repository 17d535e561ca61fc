//! Simulation and exact verification of the symmetric inclusion process SIP(m).
//!
//! Generic numerics (duality, measures, dynamics, the exact oracle) accept any
//! [`Scalar`]; the aliases below fix `f64`, which the coupling constructions
//! and the studies use throughout.

pub mod coupling;
pub mod duality;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod lattice;
pub mod measures;
pub mod oracle;
pub mod rng;
pub mod scalar;
pub mod stats;

pub use error::{Result, SipError};
pub use lattice::{site, Boundary, Direction, Geometry, Occupation, ParticleList, Site};
pub use rng::{derive_stream, run_replicas, RandomStream};
pub use scalar::Scalar;
pub use stats::Estimate;

pub type Params = dynamics::SipParams<f64>;
pub type Duality = duality::DualityEvaluator<f64>;
pub type Transform = duality::DTransform<f64>;
pub type Nu = measures::NuLambda<f64>;
pub type Law = measures::InitialLaw<f64>;
pub type Generator = oracle::GeneratorMatrix<f64>;
pub type Path = dynamics::Trajectory<f64>;
