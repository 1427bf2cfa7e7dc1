//! B-spline, KAN and PowerMLP networks with a small reverse-mode AD engine,
//! exact conversions between the two families, FLOP accounting and training.

pub mod ad;
pub mod convert;
pub mod data;
pub mod flops;
pub mod layers;
pub mod model_io;
pub mod rng;
pub mod special;
pub mod spline;
pub mod train;

pub use ad::{NodeId, Tape, Tensor};
pub use layers::{Layer, Network, NetworkKind};
pub use spline::{KnotGrid, SplineFunction};
