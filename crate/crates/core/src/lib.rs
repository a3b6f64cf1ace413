//! Finite element solver for the two-dimensional incompressible micropolar
//! Navier-Stokes equations with Q2/Q1 Taylor-Hood elements.

pub mod assembly;
pub mod error;
pub mod fem;
pub mod io;
pub mod mesh;
pub mod mms;
pub mod pump;
pub mod schemes;
pub mod sparse;

pub use error::{Error, Result};
