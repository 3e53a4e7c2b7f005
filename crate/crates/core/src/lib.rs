//! Overlapping-resonance control of intramolecular vibrational energy
//! redistribution in a collinear O-C-S model.
//!
//! The pipeline runs bottom-up: [`dvr`] solves the uncoupled bonds, [`basis`]
//! builds the product basis and Q/P partition, [`feshbach`] (or direct
//! diagonalization) yields the exact eigenstates, [`dynamics`] and
//! [`control`] evolve and optimize superpositions, and [`classical`] runs the
//! trajectory diagnostics. [`pipeline`] wires the stages to a [`config::RunConfig`].

pub mod basis;
pub mod classical;
pub mod config;
pub mod control;
pub mod dvr;
pub mod dynamics;
pub mod error;
pub mod feshbach;
pub mod linalg;
pub mod model;
pub mod output;
pub mod pipeline;

pub use error::{IvrError, Result};
