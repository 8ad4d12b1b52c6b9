//! Minimal neural-network kernel: tensors, a fixed layer set, losses,
//! optimizers and exact backpropagation.

mod container;
mod layer;
mod loss;
mod optim;
mod scalar;
mod sequential;
mod tensor;

pub use container::{Block, BlockData, Container};
pub use layer::{softmax_rows, Activation, Cache, Layer};
pub use loss::{binary_cross_entropy, categorical_cross_entropy, softmax_cross_entropy, PROB_CLAMP};
pub use optim::{Optimizer, OptimizerKind};
pub use scalar::{gemm, Scalar};
pub use sequential::{Sequential, Trace};
pub use tensor::{argmax, Tensor};

#[allow(unused_imports)]
pub(crate) use sequential::{join_dims, kv, parse_dims};

/// Portable seeded generator used for initialization, shuffling, dropout
/// masks and sampling.
pub type Rng = rand_chacha::ChaCha8Rng;

/// Derive an independent seed for a numbered sub-stream.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
