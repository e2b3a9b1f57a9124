//! Tabular laboratory for regret-minimizing experience replay.
//!
//! Everything here is pure computation over finite MDPs: exact Bellman
//! operators and occupancy measures, an episodic replay buffer with a sum
//! tree, the error/ratio estimators that feed prioritization weights
//! (DisCor's Δ, LFIW density ratios, temporal correctness estimation), the
//! weighting strategies themselves, and the two training loops that consume
//! them.
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled.
//! IO, configuration files and the CLI live in the `remer-lab` crate.

#![cfg_attr(not(any(feature = "std", test)), no_std)]
#![deny(unsafe_code)]
// Guards like `!(x >= 0.0)` reject NaN on purpose.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

pub mod env;
pub mod error;
pub mod estimators;
pub mod learner;
pub mod math;
pub mod mdp;
pub mod replay;
pub mod rng;
pub mod stats;
pub mod table;
pub mod weighting;

pub use error::{Error, Result};
pub use mdp::TabularMdp;
pub use table::{ActionLayout, DistributionTable, PolicyTable, QTable};
