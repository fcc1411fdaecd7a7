//! Core machinery for opinion analytics on news-like text.
//!
//! This crate is the computational half of the toolkit: domain types for
//! ingested documents and opinion scores, grouped score statistics, prompt
//! construction and reply parsing for the two-level analysis pipeline, a
//! Hamiltonian Monte Carlo sampler for Bayesian linear score trends, and a
//! bistable opinion-dynamics ODE with forward sensitivities and parameter
//! fitting.
//!
//! Everything here is a pure function of its inputs. IO, connectors, file
//! formats and the CLI live in the companion `opinion-pulse` crate. The crate
//! is `no_std` (with `alloc`) so the numerical kernels can be reused in
//! embedded or sandboxed hosts.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod prompt;
pub mod reply;
pub mod stats;
pub mod types;

pub mod bayestrend;
pub mod opiniondyn;

mod rng;
mod util;

pub use rng::SeededRng;
