pub mod conditions;
pub mod config;
pub mod dataset;
pub mod eval;
pub mod report;
pub mod train;
pub mod world;
