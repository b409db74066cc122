//! Plaintext simulation of packed (SIMD) homomorphic CNN inference.
//!
//! Ciphertexts are modelled as fixed-width slot vectors whose every rotation,
//! addition and multiplication is metered. On top of that sit three encrypted
//! matrix-vector kernels (a padded Halevi-Shoup diagonal method and the two
//! LoLa row-major methods), convolution packing for the first layer, and a
//! compiler that fuses adjacent linear layers and lowers whole networks to a
//! metered slot-operation program.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the double-precision instantiation used by the CLI and tests.

pub mod convlower;
pub mod error;
pub mod matvec;
pub mod netcompile;
pub mod refmodel;
pub mod scalar;
pub mod slotvec;
pub mod sparse;
pub mod sweep;
pub mod verify;

pub use error::{HeError, Result};
pub use matvec::Kernel;
pub use scalar::Scalar;
pub use slotvec::{Kind, MeterContext, OpClass, OpTally};

pub type SlotVec = slotvec::SlotVector<f64>;
pub type SlotVec32 = slotvec::SlotVector<f32>;
pub type Matrix = matvec::WeightMatrix<f64>;
pub type Matrix32 = matvec::WeightMatrix<f32>;
pub type Tensor = refmodel::Tensor3<f64>;
pub type Filters = convlower::FilterBank<f64>;
pub type Weights = netcompile::ModelWeights<f64>;
