//! Optimal switching between migration regimes: an implicit finite-difference
//! solver for the switching variational inequality, switching-region
//! extraction, a controlled random-walk simulator and the partial-information
//! experiments built on them.

#![allow(clippy::needless_range_loop)]

pub mod cli;
pub mod hjb;
pub mod info;
pub mod io;
pub mod model;
pub mod parallel;
pub mod presets;
pub mod regions;
pub mod scenarios;
pub mod simulate;
pub mod tridiag;
