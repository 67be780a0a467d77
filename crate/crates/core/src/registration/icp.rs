use std::time::Instant;

use super::kdtree::KdTree;
use super::paired::register_paired_points;
use super::{RegistrationResult, RegistrationWarning, MIN_CLOUD_POINTS};
use crate::error::{FusionError, Result};
use crate::geometry::{RigidTransform, Vec3};

/// Change in mean correspondence distance (mm) below which iterations stop.
pub const ICP_TOLERANCE_MM: f64 = 1e-9;

/// Iterative closest point alignment of `fixed_cloud` onto `moving_cloud`.
///
/// Each iteration pairs every transformed fixed point with its nearest moving
/// point and refits the rigid motion on those pairs. Iteration stops when the
/// mean correspondence distance changes by less than [`ICP_TOLERANCE_MM`].
/// `final_score` is the mean closest-point distance in mm.
pub fn register_point_clouds(
    fixed_cloud: &[Vec3],
    moving_cloud: &[Vec3],
    init: &RigidTransform,
    max_iters: usize,
) -> Result<RegistrationResult> {
    if fixed_cloud.is_empty() || moving_cloud.is_empty() {
        return Err(FusionError::EmptyInput);
    }
    let start = Instant::now();
    let tree = KdTree::build(moving_cloud);

    let correspond = |t: &RigidTransform| -> (Vec<(Vec3, Vec3)>, f64) {
        let mut total = 0.0;
        let pairs = fixed_cloud
            .iter()
            .map(|p| {
                let (j, d2) = tree.nearest(&t.apply_point(p)).expect("non-empty tree");
                total += d2.sqrt();
                (*p, moving_cloud[j])
            })
            .collect();
        (pairs, total / fixed_cloud.len() as f64)
    };

    let mut transform = *init;
    let (mut pairs, mut mean) = correspond(&transform);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iters {
        iterations += 1;
        let next = match register_paired_points(&pairs) {
            Ok(t) => t,
            // correspondences collapsed onto a line; keep the last estimate
            Err(_) => break,
        };
        let (next_pairs, next_mean) = correspond(&next);
        let change = (mean - next_mean).abs();
        if next_mean <= mean {
            transform = next;
            pairs = next_pairs;
            mean = next_mean;
        }
        if change < ICP_TOLERANCE_MM {
            converged = true;
            break;
        }
    }

    let mut warnings = Vec::new();
    if fixed_cloud.len() < MIN_CLOUD_POINTS || moving_cloud.len() < MIN_CLOUD_POINTS {
        warnings.push(RegistrationWarning::SparseCloud);
    }
    Ok(RegistrationResult {
        transform,
        final_score: mean,
        converged,
        succeeded: converged,
        elapsed: start.elapsed().as_secs_f64(),
        iterations,
        final_ncc: None,
        overlap: None,
        levels: Vec::new(),
        warnings,
    })
}
