//! Neural Shuffle-Exchange networks for sequence-to-sequence tasks of
//! power-of-two length, with a small reverse-mode autodiff engine, task
//! generators, a trainer and a Beneš permutation router.

pub mod autodiff;
pub mod bench;
pub mod checkpoint;
pub mod error;
pub mod gradcheck;
pub mod heads;
pub mod model;
pub mod network;
pub mod optim;
pub mod parallel;
pub mod router;
pub mod scalar;
pub mod tasks;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
