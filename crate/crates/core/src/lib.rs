pub mod baseline;
pub mod checkpoint;
pub mod colormap;
pub mod diffgeo;
pub mod error;
pub mod fields;
pub mod fit;
pub mod flows;
pub mod jet;
pub mod mesh;
pub mod mlp;
pub mod profile;
pub mod sns;
pub mod spectral;
pub mod sphere;
pub mod surface;

pub use error::{Result, SnsError};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
