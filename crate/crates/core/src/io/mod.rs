//! File formats, tuning, and the end-to-end drivers.

pub mod bank;
pub mod config;
pub mod embeddings;
pub mod pipeline;
pub mod predictions;
pub mod report;
pub mod simulate;
pub mod split;
pub mod tables;
pub mod tune;
