//! Executable width-reducing constructions for mean dimension of dynamical systems.

pub mod certs;
pub mod complex;
pub mod error;
pub mod geometry;
pub mod gromov;
pub mod hurewicz;
pub mod rational;
pub mod symdyn;
pub mod verify;

pub use error::{Error, Result};
pub use rational::Q;
