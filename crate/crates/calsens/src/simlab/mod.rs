//! Synthetic data generators and Monte Carlo experiments that verify the
//! estimators' quantitative and distributional behaviour at desk scale.

pub mod discrete;
pub mod experiments;
pub mod generators;

pub use discrete::DiscreteDgp;
pub use experiments::*;
pub use generators::*;
