//! Regular 3D scalar grids with physical geometry.

use rayon::prelude::*;

use crate::error::{FusionError, Result};
use crate::geometry::{RigidTransform, Vec3};

/// Axis-aligned scalar volume. Voxel `(i, j, k)` has its centre at
/// `origin + (i, j, k) * spacing`; data is stored x-fastest, z-slowest.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    dims: [usize; 3],
    spacing: [f64; 3],
    origin: [f64; 3],
    data: Vec<f32>,
}

impl Volume3D {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], data: Vec<f32>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) {
            return Err(FusionError::InvalidVolume(format!(
                "every dimension must be at least 2, got {dims:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(FusionError::InvalidVolume(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(FusionError::InvalidVolume("origin must be finite".into()));
        }
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(FusionError::InvalidVolume(format!(
                "data holds {} values, dims require {expected}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(FusionError::InvalidVolume(format!("non-finite intensity at index {i}")));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    pub fn filled(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3], value: f32) -> Result<Self> {
        Self::new(dims, spacing, origin, vec![value; dims.iter().product()])
    }

    /// Builds a volume by evaluating `f` at every voxel centre (world mm).
    pub fn from_fn(
        dims: [usize; 3],
        spacing: [f64; 3],
        origin: [f64; 3],
        f: impl Fn(Vec3) -> f32 + Sync,
    ) -> Result<Self> {
        let mut v = Self::filled(dims, spacing, origin, 0.0)?;
        let slice = dims[0] * dims[1];
        let geom = v.clone_geometry();
        v.data.par_chunks_mut(slice).enumerate().for_each(|(k, plane)| {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    plane[i + dims[0] * j] = f(geom.index_to_world([i as f64, j as f64, k as f64]));
                }
            }
        });
        if v.data.iter().any(|x| !x.is_finite()) {
            return Err(FusionError::InvalidVolume("generator produced non-finite values".into()));
        }
        Ok(v)
    }

    /// Geometry centred on the world origin.
    pub fn centered_origin(dims: [usize; 3], spacing: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| -0.5 * (dims[a] - 1) as f64 * spacing[a])
    }

    fn clone_geometry(&self) -> Geometry {
        Geometry {
            spacing: self.spacing,
            origin: self.origin,
        }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.linear_index(i, j, k)]
    }

    pub fn same_geometry(&self, other: &Volume3D) -> bool {
        self.dims == other.dims && self.spacing == other.spacing && self.origin == other.origin
    }

    /// World position of the grid centre.
    pub fn center(&self) -> Vec3 {
        self.index_to_world([0, 1, 2].map(|a| 0.5 * (self.dims[a] - 1) as f64))
    }

    pub fn index_to_world(&self, idx: [f64; 3]) -> Vec3 {
        self.clone_geometry().index_to_world(idx)
    }

    pub fn world_to_index(&self, p: &Vec3) -> [f64; 3] {
        [0, 1, 2].map(|a| (p[a] - self.origin[a]) / self.spacing[a])
    }

    pub fn world_of_voxel(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.index_to_world([i as f64, j as f64, k as f64])
    }

    /// Trilinear interpolation at a world point; `None` when the point falls
    /// outside the span of voxel centres on any axis.
    pub fn sample_trilinear(&self, p: &Vec3) -> Option<f64> {
        let [x, y, z] = self.world_to_index(p);
        self.sample_index(x, y, z)
    }

    /// Trilinear interpolation at a continuous voxel index.
    #[inline]
    pub fn sample_index(&self, x: f64, y: f64, z: f64) -> Option<f64> {
        let [nx, ny, nz] = self.dims;
        // NaN-safe: comparisons fail for NaN
        if !(x >= 0.0 && y >= 0.0 && z >= 0.0) {
            return None;
        }
        if !(x <= (nx - 1) as f64 && y <= (ny - 1) as f64 && z <= (nz - 1) as f64) {
            return None;
        }
        let x0 = (x as usize).min(nx - 2);
        let y0 = (y as usize).min(ny - 2);
        let z0 = (z as usize).min(nz - 2);
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let fz = z - z0 as f64;
        let sy = nx;
        let sz = nx * ny;
        let b = x0 + sy * y0 + sz * z0;
        let d = &self.data;
        let c000 = d[b] as f64;
        let c100 = d[b + 1] as f64;
        let c010 = d[b + sy] as f64;
        let c110 = d[b + sy + 1] as f64;
        let c001 = d[b + sz] as f64;
        let c101 = d[b + sz + 1] as f64;
        let c011 = d[b + sz + sy] as f64;
        let c111 = d[b + sz + sy + 1] as f64;
        let gx = 1.0 - fx;
        let c00 = c000 * gx + c100 * fx;
        let c10 = c010 * gx + c110 * fx;
        let c01 = c001 * gx + c101 * fx;
        let c11 = c011 * gx + c111 * fx;
        let gy = 1.0 - fy;
        let c0 = c00 * gy + c10 * fy;
        let c1 = c01 * gy + c11 * fy;
        Some(c0 * (1.0 - fz) + c1 * fz)
    }

    /// Minimum and maximum intensity.
    pub fn range(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Applies `f` to every intensity.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.dims, self.spacing, self.origin, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Halves the resolution by averaging 2×2×2 blocks. Returns `None` when
    /// any axis is shorter than 4 voxels.
    pub fn downsample(&self) -> Option<Volume3D> {
        if self.dims.iter().any(|&d| d < 4) {
            return None;
        }
        let out_dims = self.dims.map(|d| d / 2);
        let spacing = self.spacing.map(|s| 2.0 * s);
        let origin = [0, 1, 2].map(|a| self.origin[a] + 0.5 * self.spacing[a]);
        let [ox, oy, _] = out_dims;
        let mut data = vec![0.0f32; out_dims.iter().product()];
        data.par_chunks_mut(ox * oy).enumerate().for_each(|(k, plane)| {
            for j in 0..oy {
                for i in 0..ox {
                    let mut acc = 0.0f32;
                    for dz in 0..2 {
                        for dy in 0..2 {
                            for dx in 0..2 {
                                acc += self.get(2 * i + dx, 2 * j + dy, 2 * k + dz);
                            }
                        }
                    }
                    plane[i + ox * j] = acc * 0.125;
                }
            }
        });
        Some(Volume3D {
            dims: out_dims,
            spacing,
            origin,
            data,
        })
    }

    /// Successive halvings, finest first, at most `levels` entries.
    pub fn pyramid(&self, levels: usize) -> Vec<Volume3D> {
        let mut out = vec![self.clone()];
        while out.len() < levels {
            match out.last().and_then(Volume3D::downsample) {
                Some(v) => out.push(v),
                None => break,
            }
        }
        out
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    spacing: [f64; 3],
    origin: [f64; 3],
}

impl Geometry {
    fn index_to_world(&self, idx: [f64; 3]) -> Vec3 {
        Vec3::new(
            self.origin[0] + idx[0] * self.spacing[0],
            self.origin[1] + idx[1] * self.spacing[1],
            self.origin[2] + idx[2] * self.spacing[2],
        )
    }
}

/// Per-voxel validity flags produced by resampling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn new(flags: Vec<bool>) -> Self {
        Mask(flags)
    }

    pub fn full(len: usize) -> Self {
        Mask(vec![true; len])
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.0.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.0.len() as f64
        }
    }

    pub fn intersect(&self, other: &Mask) -> Mask {
        Mask(self.0.iter().zip(&other.0).map(|(a, b)| *a && *b).collect())
    }
}

/// Maps voxel indices of a fixed grid into continuous indices of a moving
/// grid through a rigid transform. Affine, so it is evaluated incrementally.
#[derive(Debug, Clone, Copy)]
pub(crate) struct IndexMap {
    pub base: [f64; 3],
    pub di: [f64; 3],
    pub dj: [f64; 3],
    pub dk: [f64; 3],
}

impl IndexMap {
    pub fn new(fixed: &Volume3D, moving: &Volume3D, t: &RigidTransform) -> Self {
        let to_moving = |p: Vec3| moving.world_to_index(&t.apply_point(&p));
        let o = fixed.index_to_world([0.0; 3]);
        let base = to_moving(o);
        let step = |axis: usize| {
            let mut e = Vec3::zeros();
            e[axis] = fixed.spacing[axis];
            let v = t.apply_vector(&e);
            [0, 1, 2].map(|a| v[a] / moving.spacing[a])
        };
        IndexMap {
            base,
            di: step(0),
            dj: step(1),
            dk: step(2),
        }
    }

    #[inline]
    pub fn row_start(&self, j: usize, k: usize) -> [f64; 3] {
        let (j, k) = (j as f64, k as f64);
        [0, 1, 2].map(|a| self.base[a] + j * self.dj[a] + k * self.dk[a])
    }
}

/// Resamples `moving` onto the grid of `like`. `t` maps `like` world
/// coordinates into `moving` world coordinates. Voxels falling outside the
/// moving grid are filled with 0 and flagged invalid in the returned mask.
pub fn resample(moving: &Volume3D, t: &RigidTransform, like: &Volume3D) -> (Volume3D, Mask) {
    let [nx, ny, _] = like.dims;
    let map = IndexMap::new(like, moving, t);
    let mut data = vec![0.0f32; like.len()];
    let mut valid = vec![false; like.len()];
    data.par_chunks_mut(nx * ny)
        .zip(valid.par_chunks_mut(nx * ny))
        .enumerate()
        .for_each(|(k, (plane, vplane))| {
            for j in 0..ny {
                let s = map.row_start(j, k);
                for i in 0..nx {
                    let fi = i as f64;
                    let x = s[0] + fi * map.di[0];
                    let y = s[1] + fi * map.di[1];
                    let z = s[2] + fi * map.di[2];
                    if let Some(v) = moving.sample_index(x, y, z) {
                        plane[i + nx * j] = v as f32;
                        vplane[i + nx * j] = true;
                    }
                }
            }
        });
    let out = Volume3D {
        dims: like.dims,
        spacing: like.spacing,
        origin: like.origin,
        data,
    };
    (out, Mask(valid))
}
