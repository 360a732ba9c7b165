//! Block leverage score sketching for straggler-tolerant distributed least
//! squares.
//!
//! The crate covers the whole pipeline: scoring the row blocks of a data
//! matrix, sampling sketches from those scores, replicating blocks over a
//! simulated server pool so that the first responders emulate the sampling
//! distribution, and running steepest descent on the aggregated gradients.

pub mod distribution;
pub mod error;
pub mod expansion;
pub mod linalg;
pub mod rng;
pub mod sketching;
pub mod solver;
pub mod straggler;
pub mod verify;

pub use distribution::{DistributionKind, SamplingDistribution};
pub use error::{Error, Result};
pub use linalg::{OrthonormalBasis, PartitionedDataset};
