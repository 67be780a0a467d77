//! Rigid fusion of 3D ultrasound volumes into a reference volume and
//! scoring of biopsy needle placement against a planned 12-target grid.

pub mod biopsy_map;
pub mod bvol;
pub mod error;
pub mod geometry;
pub mod nelder_mead;
pub mod phantom;
pub mod registration;
pub mod session;
pub mod similarity;
pub mod validation;
pub mod volume;

pub use error::{FusionError, Result};
pub use geometry::{Aabb, Matrix4, RigidTransform, Vec3};
pub use volume::{Mask, Volume3D};
