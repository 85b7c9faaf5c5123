//! Layer primitives with hand-written backward passes.

pub mod act;
pub mod conv;
pub mod dense;
pub mod norm;
pub mod shuffle;
pub mod tensor;

pub use conv::ConvGeom;
pub use tensor::Tensor;
