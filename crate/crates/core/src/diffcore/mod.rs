//! Dense reverse-mode autodiff, MLPs and Adam: the substrate every learned
//! component is built on.

mod adam;
mod graph;
mod mlp;
mod tensor;

pub use adam::{clip_global_norm, AdamState, OptimError, DEFAULT_LR};
pub use graph::{GraphError, GraphResult, HeadingMode, NodeId, ValueGraph, BODY_FEATURES};
pub use mlp::{Activation, BoundMlp, Linear, MlpParams};
pub use tensor::Tensor;

pub(crate) use graph::heading_cos_sin;

use sha2::{Digest, Sha256};

/// SHA-256 over the exact bit patterns of `tensors` (shapes included).
pub fn hash_tensors<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> String {
    let mut h = Sha256::new();
    for t in tensors {
        h.update((t.rows as u64).to_le_bytes());
        h.update((t.cols as u64).to_le_bytes());
        for v in &t.data {
            h.update(v.to_bits().to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}
