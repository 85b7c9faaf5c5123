//! Synthetic phantoms, VOL1 files and dataset manifests.

pub mod manifest;
pub mod phantom;
pub mod vol1;

pub use manifest::{Manifest, ManifestEntry, Split};
pub use phantom::{generate_phantom, Ellipsoid, Phantom, PhantomSpec};
pub use vol1::{load_volume, read_volume, save_volume, write_volume};
