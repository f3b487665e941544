//! Minimal deterministic tensor and layer engine.
//!
//! Every layer kind carries a hand-written reverse pass; [`gradcheck`]
//! verifies them against central finite differences. Computation is
//! single-threaded and bit-reproducible for a fixed seed.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod params;
mod scalar;
mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, load_into, save_checkpoint};
pub use error::{NnError, Result};
pub use gradcheck::{gradcheck, GradcheckOptions, GradcheckReport, GradcheckRow};
pub use graph::{Graph, GraphBuilder, LayerSpec, Node, NodeId, Op, OpGrads, DEFAULT_LEAKY_SLOPE};
pub use params::{Param, ParamId, ParamStore, RmsProp};
pub use scalar::Scalar;
pub use tensor::Tensor;
