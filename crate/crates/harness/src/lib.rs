//! Monte Carlo sweeps, time-division experiments and oracle cross-checks
//! for the sparse OFDMA decoder.

pub mod config;
pub mod grouping;
pub mod oracle;
pub mod plan;
pub mod stats;
pub mod sweep;
pub mod trial;
