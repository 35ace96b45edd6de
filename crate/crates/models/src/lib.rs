//! Simulation models: mobile hosts in a wireless ad-hoc network, a small
//! interaction-groups model and an idle model.

use padsim_core::model::ModelBuildError;
use thiserror::Error;

pub mod grid;
pub mod groups;
pub mod idle;
pub mod mobile;

pub use groups::groups_model;
pub use idle::idle_model;
pub use mobile::{mobile_hosts, Allocation, MhParams};

#[derive(Debug, Error)]
pub enum ModelsError {
    #[error("invalid model parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Build(#[from] ModelBuildError),
}
