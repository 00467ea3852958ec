//! Command-line front end for the parallel LMU: three-way equivalence
//! checks, delay-reconstruction sweeps, scaling benchmarks and experiment
//! runners. Every runner returns a serializable report that carries a
//! reproduction stanza.

pub mod bench;
pub mod experiment;
pub mod failure;
pub mod fetch;
pub mod repro;
pub mod sweep;
pub mod verify;

pub use failure::{CliResult, Failure};
pub use repro::{Reproduction, VERSION};
