//! Gradient-free training of feed-forward networks by block coordinate descent on a
//! lifted objective.
//!
//! Hidden activations become free variables `X²…Xⁿ` tied to the weights by penalties
//! whose minimizer in each block is exactly one forward step. Training alternates
//! between
//!
//! * activation blocks, solved by a contractive fixed-point map ([`lifted`]), and
//! * weight blocks, solved by an accelerated proximal scheme with an image-space
//!   linearization ([`apg`]).
//!
//! [`trainer`] wires these into mini-batch epochs, [`sgd`] is the back-propagation
//! baseline, [`datasets`] and [`checkpoint`] handle I/O.

pub mod activation;
pub mod apg;
pub mod checkpoint;
pub mod datasets;
pub mod error;
pub mod lifted;
pub mod network;
pub mod par;
pub mod quadrature;
pub mod sgd;
pub mod tensor;
pub mod trainer;

pub use activation::{Activation, ExtReal, Quadrature};
pub use checkpoint::Checkpoint;
pub use datasets::LabeledDataset;
pub use error::{LpomError, Result};
pub use network::Weights;
pub use par::Parallelism;
pub use tensor::Matrix;
pub use trainer::{EpochMetrics, TrainConfig, XUpdateMode};
