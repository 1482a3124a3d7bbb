//! Word-alignment network embeddings.
//!
//! Learns a structural vector and a context-aware textual vector for every
//! vertex of an undirected network whose vertices carry text. The textual
//! vector of a vertex is recomputed for each partner it is compared with,
//! either by averaging word vectors, by word-by-context attention, or by
//! aligning every word against an attention-weighted summary of the partner's
//! words and pooling the resulting matching vectors.

pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod graph;
pub mod kernel;
pub mod model;
pub mod optim;
pub mod synthetic;
pub mod text;
pub mod trainer;

pub use error::{CheckpointError, Error, Result};
