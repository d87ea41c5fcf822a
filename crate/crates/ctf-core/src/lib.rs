//! Core library of the combinatorial track finder.
//!
//! The pipeline reconstructs charged-particle trajectories from hits on
//! concentric cylindrical detector layers in four stages: seed generation
//! from layer triplets, combinatorial Kalman track finding, duplicate
//! cleaning and final smoothing/selection. Alongside the classical
//! implementations, the crate provides outcome-faithful simulators of
//! quantum-search subroutines (Grover iteration counts, exponential search,
//! amplitude counting, minimum finding) and quantum variants of the pipeline
//! stages that are charged against a query ledger instead of wall-clock
//! time. The `bench` module measures how both families scale with occupancy.

pub mod error;
pub mod event;
pub mod geometry;
pub mod kalman;
pub mod tuples;
