//! Reverse-mode automatic differentiation over dense 2D tensors, plus the
//! Adam optimizer and the flat-binary checkpoint format.
//!
//! The tape records tensor-granular operations (matmul, elementwise maps,
//! concatenation, the compositing cumsum, a rigid-transform op for camera
//! updates), so almost all time is spent inside the matmul kernels. All
//! values are f64; parallel kernels split by output row with a fixed
//! accumulation order, which keeps runs bit-reproducible.

mod adam;
mod checkpoint;
mod matrix;
mod tape;

pub use adam::Adam;
pub use checkpoint::{load_checkpoint, restore_into, save_checkpoint, CheckpointData};
pub use matrix::Matrix;
pub use tape::{Graph, NodeId, Param, ParamGroup, ParamId, ParamStore};
