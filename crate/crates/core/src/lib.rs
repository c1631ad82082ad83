//! Method-of-moments parameter recovery for Gaussian mixture models.
//!
//! Moments are matched to their polynomial expressions in the mixture
//! parameters, and the resulting systems are solved by homotopy
//! continuation one dimension at a time.

pub mod bench;
pub mod cli;
pub mod model;
pub mod moments;
pub mod polysolve;
pub mod recovery;
