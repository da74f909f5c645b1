//! Piecewise sparse attention on the CPU.
//!
//! Attention is computed exactly on the key blocks a router selects and the
//! remaining blocks are folded into the same softmax through a block-wise
//! Taylor expansion around their centroids, instead of being dropped. The
//! crate also carries the exact oracles, the error-bound checks and the FLOP
//! model used to evaluate the approximation.

pub mod analysis;
pub mod attention;
pub mod cli;
pub mod error;
pub mod mat;
pub mod pisa;
pub mod router;
pub mod stats;
pub mod tensor_io;

pub use attention::{dense_naive, dense_online, sparse_masked, Accum, AttentionConfig};
pub use error::{PisaError, Result, TensorRole};
pub use mat::Mat;
pub use pisa::{pisa_multihead, pisa_reference, pisa_streaming, PisaOptions, PisaOutput, PisaVariant};
pub use router::{RouterConfig, SelectionPlan, Strategy};
pub use stats::{BlockStatistics, SpectralMethod};
pub use tensor_io::{Dtype, TensorBundle};
