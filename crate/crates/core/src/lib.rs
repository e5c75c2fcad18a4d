//! Strategic agents that react to model explanations, explanation policies,
//! no-harm auditing, and joint training of predictive models with
//! recommendation policies.

pub mod agents;
pub mod dataio;
pub mod error;
pub mod explain;
pub mod metrics;
pub mod model;
pub mod numkit;
pub mod rng;
pub mod theory;
pub mod train;

pub use error::{Error, Result};
