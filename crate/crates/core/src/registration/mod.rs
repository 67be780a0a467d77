//! Rigid fusion: intensity-driven (iconic), paired homologous points and
//! point-cloud alignment.

mod icp;
mod kdtree;
mod paired;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::geometry::{RigidTransform, Vec3};
use crate::nelder_mead::{self, SimplexOptions};
use crate::similarity::{evaluate_mapped, SimilarityKind};
use crate::volume::{IndexMap, Volume3D};

pub use icp::register_point_clouds;
pub use paired::{paired_residual, register_paired_points};

pub const MAX_PYRAMID_LEVELS: usize = 6;
/// Minimal fraction of fixed voxels that must overlap the moving grid for a
/// fusion to count as successful.
pub const MIN_SUCCESS_OVERLAP: f64 = 0.25;
/// Below this overlap fraction the cost function treats a pose as invalid.
const MIN_SEARCH_OVERLAP: f64 = 0.10;
/// Point clouds smaller than this are flagged as too sparse for reliable
/// surface alignment.
pub const MIN_CLOUD_POINTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegistrationConfig {
    pub metric: SimilarityKind,
    /// Number of resolution levels, each halving the previous one.
    pub pyramid_levels: usize,
    /// Simplex iterations allowed per level (and per restart).
    pub max_iterations: usize,
    /// Convergence tolerance on translations, mm.
    pub tolerance_mm: f64,
    /// Convergence tolerance on rotations, degrees.
    pub tolerance_deg: f64,
    /// Minimal final NCC for the fusion to be reported as successful.
    pub success_threshold: f64,
    /// Starting estimate of the fixed → moving transform.
    pub initial_transform: RigidTransform,
    /// Prepends a 180° turn about the probe (z) axis to the initialization.
    pub left_lobe_mode: bool,
    /// Upper bound on fixed voxels visited per metric evaluation; larger
    /// levels are visited on a regular sub-grid.
    pub max_samples: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            metric: SimilarityKind::Ncc,
            pyramid_levels: 3,
            max_iterations: 200,
            tolerance_mm: 0.05,
            tolerance_deg: 0.05,
            success_threshold: 0.5,
            initial_transform: RigidTransform::identity(),
            left_lobe_mode: false,
            max_samples: 64 * 64 * 64,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_PYRAMID_LEVELS).contains(&self.pyramid_levels) {
            return Err(FusionError::Config(format!(
                "pyramid_levels must lie in [1, {MAX_PYRAMID_LEVELS}], got {}",
                self.pyramid_levels
            )));
        }
        if self.max_samples == 0 {
            return Err(FusionError::Config("max_samples must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(FusionError::Config("max_iterations must be positive".into()));
        }
        if !(self.tolerance_mm > 0.0 && self.tolerance_deg > 0.0) {
            return Err(FusionError::Config("tolerances must be positive".into()));
        }
        if let SimilarityKind::Nmi { bins } = self.metric {
            SimilarityKind::nmi(bins)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegistrationWarning {
    /// A point cloud has fewer than [`MIN_CLOUD_POINTS`] points.
    SparseCloud,
}

/// Scores at one pyramid level, in metric units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub dims: [usize; 3],
    pub initial_score: f64,
    pub final_score: f64,
    pub iterations: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistrationResult {
    /// Maps fixed (R0) world coordinates into moving world coordinates.
    pub transform: RigidTransform,
    pub final_score: f64,
    pub converged: bool,
    pub succeeded: bool,
    /// Wall time, seconds.
    pub elapsed: f64,
    pub iterations: usize,
    /// NCC at the final pose on the full-resolution grids (iconic only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub final_ncc: Option<f64>,
    /// Fraction of fixed voxels inside the moving grid at the final pose.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub levels: Vec<LevelTrace>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<RegistrationWarning>,
}

/// Pose parameters around the fixed volume centre: rotation vector
/// (degrees, scaled into tolerance units) and translation (mm).
struct Parameterization {
    base: RigidTransform,
    center: Vec3,
    rot_scale: f64,
}

impl Parameterization {
    fn transform(&self, x: &[f64]) -> RigidTransform {
        let rotvec = Vec3::new(x[0], x[1], x[2]) * self.rot_scale;
        let rot = RigidTransform::from_rotation_vector(rotvec, Vec3::zeros());
        let shift = self.center - rot.apply_point(&self.center) + Vec3::new(x[3], x[4], x[5]);
        let local = RigidTransform::from_parts(*rot.rotation(), shift);
        self.base.compose(&local)
    }
}

/// Regular sub-grid step keeping the visited voxel count under `max_samples`.
fn sample_stride(dims: [usize; 3], max_samples: usize) -> usize {
    let mut stride = 1;
    while sampled_count(dims, stride) > max_samples {
        stride += 1;
    }
    stride
}

fn sampled_count(dims: [usize; 3], stride: usize) -> usize {
    dims.iter().map(|d| d.div_ceil(stride)).product()
}

/// Cost to minimize; `None` for poses without enough support.
fn cost(fixed: &Volume3D, moving: &Volume3D, t: &RigidTransform, kind: SimilarityKind, stride: usize) -> Option<f64> {
    let map = IndexMap::new(fixed, moving, t);
    let (value, overlap) = evaluate_mapped(fixed, moving, &map, kind, stride);
    if (overlap as f64) < MIN_SEARCH_OVERLAP * sampled_count(fixed.dims(), stride) as f64 {
        return None;
    }
    value.ok().map(|v| if kind.higher_is_better() { -v } else { v })
}

fn to_score(kind: SimilarityKind, cost: f64) -> f64 {
    if kind.higher_is_better() {
        -cost
    } else {
        cost
    }
}

/// Intensity-driven rigid registration of `moving` onto `fixed`.
///
/// A coarse-to-fine pyramid is searched with a restarted simplex over six
/// parameters. The returned transform maps fixed world coordinates into the
/// moving frame. Poor image quality is reported through
/// `succeeded == false`; only a start pose with no common support at all is
/// an error.
pub fn register_iconic(fixed: &Volume3D, moving: &Volume3D, cfg: &RegistrationConfig) -> Result<RegistrationResult> {
    cfg.validate()?;
    let start = Instant::now();

    let center = fixed.center();
    let mut base = cfg.initial_transform;
    if cfg.left_lobe_mode {
        let turn = RigidTransform::from_axis_angle(Vec3::z(), 180.0);
        let about_center = RigidTransform::from_translation(center)
            .compose(&turn)
            .compose(&RigidTransform::from_translation(-center));
        base = base.compose(&about_center);
    }
    let param = Parameterization {
        base,
        center,
        rot_scale: cfg.tolerance_deg / cfg.tolerance_mm,
    };

    let fixed_levels = fixed.pyramid(cfg.pyramid_levels);
    let moving_levels = moving.pyramid(cfg.pyramid_levels);
    let n_levels = fixed_levels.len().min(moving_levels.len());

    {
        let coarse_f = &fixed_levels[n_levels - 1];
        let coarse_m = &moving_levels[n_levels - 1];
        let map = IndexMap::new(coarse_f, coarse_m, &base);
        if evaluate_mapped(coarse_f, coarse_m, &map, SimilarityKind::Ssd, 1).1 == 0 {
            return Err(FusionError::EmptyOverlap);
        }
    }

    let mut x = vec![0.0; 6];
    let mut traces = Vec::with_capacity(n_levels);
    let mut iterations = 0;
    let mut converged = false;
    for level in (0..n_levels).rev() {
        let f = &fixed_levels[level];
        let m = &moving_levels[level];
        let spacing = f.spacing().iter().cloned().fold(0.0, f64::max);
        let step = 2.0 * spacing;
        let x_tol = cfg.tolerance_mm * (1u32 << level) as f64;
        let stride = sample_stride(f.dims(), cfg.max_samples);
        let objective = |p: &[f64]| cost(f, m, &param.transform(p), cfg.metric, stride).unwrap_or(f64::INFINITY);

        let mut opts = SimplexOptions {
            steps: vec![step / param.rot_scale, step / param.rot_scale, step / param.rot_scale, step, step, step],
            x_tolerance: x_tol,
            f_tolerance: f64::INFINITY,
            max_iterations: cfg.max_iterations,
        };
        let first = nelder_mead::minimize(objective, &x, &opts);
        // restart from the best vertex with a fresh, smaller simplex
        opts.steps.iter_mut().for_each(|s| *s *= 0.5);
        let second = nelder_mead::minimize(objective, &first.x, &opts);

        iterations += first.iterations + second.iterations;
        converged = second.converged;
        traces.push(LevelTrace {
            dims: f.dims(),
            initial_score: to_score(cfg.metric, first.initial_value),
            final_score: to_score(cfg.metric, second.value),
            iterations: first.iterations + second.iterations,
            evaluations: first.evaluations + second.evaluations,
        });
        x = second.x;
    }

    let transform = param.transform(&x);
    let final_score = traces.last().map(|t| t.final_score).unwrap_or(f64::NAN);
    let map = IndexMap::new(fixed, moving, &transform);
    let (ncc, overlap_count) = evaluate_mapped(fixed, moving, &map, SimilarityKind::Ncc, 1);
    let overlap = overlap_count as f64 / fixed.len() as f64;
    let final_ncc = ncc.ok();
    let succeeded = converged
        && final_score.is_finite()
        && final_ncc.is_some_and(|v| v >= cfg.success_threshold)
        && overlap >= MIN_SUCCESS_OVERLAP;

    Ok(RegistrationResult {
        transform,
        final_score,
        converged,
        succeeded,
        elapsed: start.elapsed().as_secs_f64(),
        iterations,
        final_ncc,
        overlap: Some(overlap),
        levels: traces,
        warnings: Vec::new(),
    })
}
