//! Long-run deadline miss rate of a periodic soft real-time task served by
//! a periodic supply, computed exactly from a finite Markov chain.
//!
//! ```
//! use dmr_kit::{rat, analysis, chain, io, model::{ExecDistribution, TaskSpec}, supply};
//!
//! let task = TaskSpec::new(
//!     ExecDistribution::from_pairs([(rat!(2), rat!(1, 2)), (rat!(3), rat!(1, 2))]),
//!     rat!(4), rat!(4), rat!(1),
//! ).unwrap();
//! let supply = supply::tdma(&rat!(4), &rat!(3), &rat!(1), &rat!(2)).unwrap();
//! let chain = chain::build_chain(&task, &supply, &Default::default()).unwrap();
//! let result = analysis::compute_dmr(&chain).unwrap();
//! assert_eq!(result.dmr, Some(rat!(7, 24)));
//! # let _ = io::SCHEMA;
//! ```

pub mod analysis;
pub mod chain;
pub mod error;
pub mod io;
pub mod model;
pub mod rat;
pub mod sim;
pub mod supply;
pub mod sweep;

pub use error::{Error, Result};
pub use rat::Rat;
