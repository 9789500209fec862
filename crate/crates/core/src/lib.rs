pub mod cli;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod featurize;
pub mod graph;
pub mod ingest;
pub mod mode;
pub mod objectives;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};
pub use mode::{Mode, NUM_CLASSES};
