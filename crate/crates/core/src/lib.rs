//! Denoising diffusion over 3-D molecular conformations with roto-
//! translational symmetry built in: forward noising, an equivariant
//! noise-prediction network, training targets, ancestral sampling, and
//! ensemble metrics, plus the data plumbing around them.

pub mod datakit;
pub mod denoiser;
pub mod diffcore;
pub mod error;
pub mod geom;
pub mod metrics;
pub mod molgraph;
pub mod objective;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod trainer;
pub mod verify;

pub use error::{Error, Result};
pub use geom::{Conformation, RigidTransform};
pub use molgraph::{Bond, BondType, MolecularGraph};
pub use schedule::{SchedulePreset, VarianceSchedule};
