//! Generator and discriminator networks.

mod discriminator;
mod generator;
mod layers;
mod lowering;

pub use discriminator::{DiscForward, Discriminator, DiscriminatorConfig};
pub use generator::{GenForward, Generator, GeneratorConfig};

/// Whether batch normalization uses batch statistics (and reports them for
/// the running estimates) or the stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}
