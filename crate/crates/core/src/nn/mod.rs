//! Mask-aware MIL building blocks on top of a small reverse-mode tape.
//!
//! Each block exists in two forms: a layer bound to a [`ParamStore`] that
//! records onto a [`Tape`] (used by the models and for gradients), and a
//! plain function over owned matrices (`attention_pool`, `encoder_layer`,
//! `graph_conv`, `sm_operator`, `masked_softmax`) that runs the same code.

mod attention;
mod encoder;
mod graph_conv;
mod linear;
mod params;
mod sm;
mod softmax;
pub mod tape;

pub use attention::{attention_pool, AttentionPool, AttentionPoolParams};
pub use encoder::{encoder_layer, EncoderLayer, EncoderLayerParams, MASK_BIAS};
pub use graph_conv::{graph_conv, self_loop_normalized_dense, GraphConv};
pub use linear::Linear;
pub use params::{uniform_init, ParamId, ParamStore};
pub use sm::{
    row_normalized_dense, sm_apply, sm_operator, SmParams, DEFAULT_SM_ALPHA, DEFAULT_SM_STEPS,
};
pub use softmax::masked_softmax;
pub use tape::{Gradients, Mat, Tape, Var};
