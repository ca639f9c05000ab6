//! Discrete Korn and Poincaré-Korn constants on grid domains.
//!
//! Domains are rasterized onto node-centred grids ([`geometry`]), fields
//! live on the inside nodes ([`field`]) and are differentiated by
//! finite-difference stencil families ([`diffops`]). Constants come from
//! sparse generalized eigenproblems at `p = 2` and from a quotient ascent
//! otherwise ([`linsolve`], [`constants`]). [`verify`] checks the explicit
//! inequalities over seeded corpora and [`cli`] drives it all from the
//! command line.

pub mod cli;
pub mod constants;
pub mod diffops;
pub mod error;
pub mod field;
pub mod geometry;
pub mod linsolve;
pub mod verify;

pub use error::{KornError, Result};
