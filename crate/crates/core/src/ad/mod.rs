//! Array engine: dense arrays, a define-by-run graph with reverse-mode
//! (and forward-mode) differentiation, parameter storage, Adam, seeded
//! randomness and checkpoints.

pub mod adam;
pub mod array;
pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod params;
pub mod rng;

pub use adam::{Adam, AdamConfig};
pub use array::Array;
pub use checkpoint::Checkpoint;
pub use graph::{Axis, Gradients, Graph, Leaf, NodeId, Op};
pub use params::ParameterStore;
pub use rng::RandomSource;
