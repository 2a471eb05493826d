//! Weak-to-strong generalization in random feature models.
//!
//! A small teacher (random features fit to a target) labels data for a larger
//! student trained by gradient flow. Every loss is computed in closed form from
//! the kernel eigenstructure, so experiments are exact up to floating point.

pub mod alignment;
pub mod bounds;
pub mod config;
pub mod detequiv;
pub mod error;
pub mod experiments;
pub mod features;
pub mod linalg;
pub mod rng;
pub mod spectrum;
pub mod student;
pub mod teacher;
pub mod verify;

pub use error::{Error, Result};
pub use features::{FeatureEnsemble, Target};
pub use rng::Seed;
pub use spectrum::{KernelSpectrum, ModelTag};
pub use teacher::TeacherModel;
