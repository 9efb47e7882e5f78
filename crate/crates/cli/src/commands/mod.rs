pub mod dist;
pub mod embed;
pub mod eval;
pub mod graph;
pub mod ingest;
pub mod retrieve;
pub mod synth;
pub mod train;

mod common;
