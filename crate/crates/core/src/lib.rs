//! Volumetric super-resolution with a 3D adversarial network.

pub mod adam;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod degrade;
pub mod error;
pub mod interp;
pub mod losses;
pub mod metrics;
pub mod networks;
pub mod nn;
pub mod params;
pub mod patch;
pub mod pipeline;
pub mod real;
pub mod trainer;
pub mod upsampling;
pub mod volume;
pub mod workflow;

pub use error::{Error, Result};
pub use volume::{normalize, Shape, Volume};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/volumes.md")]
    mod volumes {}
    #[doc = include_str!("../../../book/src/upsampling.md")]
    mod upsampling {}
    #[doc = include_str!("../../../book/src/networks.md")]
    mod networks {}
    #[doc = include_str!("../../../book/src/losses.md")]
    mod losses {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/patches.md")]
    mod patches {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
