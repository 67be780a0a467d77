//! Fusion accuracy: fiducial distances and needle direction agreement.

use serde::{Deserialize, Serialize};

use crate::biopsy_map::NeedleTrajectory;
use crate::error::{FusionError, Result};
use crate::geometry::{RigidTransform, Vec3};

/// The same landmark (e.g. a calcification) located in both volumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialPair {
    pub id: String,
    pub point_in_fixed: Vec3,
    pub point_in_moving: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiducialError {
    pub mean: f64,
    pub max: f64,
    pub per_pair: Vec<(String, f64)>,
}

/// Distances `|moving − t(fixed)|` for each pair, with their mean and max.
/// `t` maps the fixed frame into the moving frame.
pub fn fiducial_error(pairs: &[FiducialPair], t: &RigidTransform) -> Result<FiducialError> {
    if pairs.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let per_pair: Vec<(String, f64)> = pairs
        .iter()
        .map(|p| (p.id.clone(), (p.point_in_moving - t.apply_point(&p.point_in_fixed)).norm()))
        .collect();
    let mean = per_pair.iter().map(|(_, d)| d).sum::<f64>() / per_pair.len() as f64;
    let max = per_pair.iter().map(|(_, d)| *d).fold(0.0, f64::max);
    Ok(FiducialError { mean, max, per_pair })
}

/// Angle in degrees between two direction vectors.
pub fn direction_angle(a: &Vec3, b: &Vec3) -> Result<f64> {
    let (na, nb) = (a.norm(), b.norm());
    if !(na > 0.0 && nb > 0.0) {
        return Err(FusionError::DegenerateSegment);
    }
    // atan2 form stays accurate near 0° and 180°
    let cross = a.cross(b).norm();
    let dot = a.dot(b);
    Ok(cross.atan2(dot).to_degrees().clamp(0.0, 180.0))
}

/// Oriented angle (degrees, `[0, 180]`) between the entry→tip directions.
pub fn trajectory_angle(a: &NeedleTrajectory, b: &NeedleTrajectory) -> Result<f64> {
    direction_angle(&(a.tip - a.entry), &(b.tip - b.entry))
}

/// Mean and max of a list of values.
pub fn mean_max(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    Some((mean, values.iter().copied().fold(f64::NEG_INFINITY, f64::max)))
}
