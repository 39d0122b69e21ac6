//! Set-prediction toolkit for crowd pedestrian detection.

pub mod assignment;
pub mod bench;
pub mod cli;
pub mod datasets;
pub mod decoder;
pub mod evalmetrics;
pub mod geometry;
pub mod supervision;
