//! Closed-form least-squares rigid fit between homologous point pairs.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};

use crate::error::{FusionError, Result};
use crate::geometry::{RigidTransform, Vec3};

/// Relative eigenvalue floor below which the fixed points are treated as
/// collinear (or coincident).
const SPREAD_FLOOR: f64 = 1e-12;

/// Finds `T` minimizing `Σ |moving_i − T(fixed_i)|²` over rigid motions.
///
/// The fit is the global optimum of that criterion (SVD of the
/// cross-covariance with a reflection guard). Fewer than three pairs, or
/// fixed points that are collinear or coincident, leave the rotation about
/// some axis unobservable and are rejected.
pub fn register_paired_points(pairs: &[(Vec3, Vec3)]) -> Result<RigidTransform> {
    if pairs.len() < 3 {
        return Err(FusionError::DegenerateConfiguration(format!(
            "need at least 3 point pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let fixed_c = pairs.iter().map(|(f, _)| f).sum::<Vec3>() / n;
    let moving_c = pairs.iter().map(|(_, m)| m).sum::<Vec3>() / n;

    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (f, m) in pairs {
        let a = f - fixed_c;
        let b = m - moving_c;
        scatter += a * a.transpose();
        cross += a * b.transpose();
    }

    let mut spread = scatter.symmetric_eigenvalues().as_slice().to_vec();
    spread.sort_by(|a, b| b.total_cmp(a));
    if spread[0] <= f64::EPSILON * (1.0 + fixed_c.norm_squared()) {
        return Err(FusionError::DegenerateConfiguration("fixed points coincide".into()));
    }
    if spread[1] <= SPREAD_FLOOR * spread[0] {
        return Err(FusionError::DegenerateConfiguration("fixed points are collinear".into()));
    }

    let svd = cross.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let d = (v_t.transpose() * u.transpose()).determinant().signum();
    let r = v_t.transpose() * Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d)) * u.transpose();
    let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
    let translation = moving_c - rotation * fixed_c;
    Ok(RigidTransform::from_parts(rotation, translation))
}

/// Root of the summed squared residuals of `t` on `pairs`.
pub fn paired_residual(pairs: &[(Vec3, Vec3)], t: &RigidTransform) -> f64 {
    pairs
        .iter()
        .map(|(f, m)| (m - t.apply_point(f)).norm_squared())
        .sum::<f64>()
        .sqrt()
}
