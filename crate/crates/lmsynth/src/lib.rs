//! Synthesis of provably stabilizing switching controllers for unknown
//! switched, Markov-jump and constrained linear systems, directly from noisy
//! trajectory data.
//!
//! The toolkit assembles data-dependent Lyapunov-Metzler matrix inequalities,
//! solves them with a built-in conic solver, extracts min-/max-switching
//! controllers with feasibility certificates, and validates the result in
//! closed-loop simulation.

pub mod cli;
pub mod conic;
pub mod datagen;
pub mod datamodel;
pub mod lmi_builder;
pub mod matops;
pub mod simulator;
pub mod synthesis;

pub use matops::SymMatrix;
