//! Generators and brute-force oracles shared by the property tests and the
//! acceptance suite. Nothing here calls into the code it checks except to
//! build inputs.
#![allow(dead_code)]

pub mod fuzz;
pub mod graphs;
pub mod mock;
pub mod raster;
