//! Synthetic ultrasound-like prostate volumes with known geometry.
//!
//! The scene is an ellipsoidal gland with low-frequency echotexture, a
//! hypoechoic urethra, a bright rectal wall below the gland, a few bright
//! calcifications and an optional needle track. Each acquisition multiplies
//! the tissue by a fresh log-normal speckle field; calcifications and the
//! needle are composited on top, unspeckled.
//!
//! All randomness is counter-based (keyed by seed and voxel or lattice
//! index), so output bits do not depend on thread scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::geometry::{Aabb, RigidTransform, Vec3};
use crate::volume::Volume3D;

/// Minimal clearance between the gland and the grid border at generation.
pub const GENERATE_MARGIN_MM: f64 = 5.0;

const STREAM_SPECKLE: u64 = 0x5be0_cd19_137e_2179;
const STREAM_TEXTURE: u64 = 0x1f83_d9ab_fb41_bd6b;
const STREAM_LAYOUT: u64 = 0x9b05_688c_2b3e_6c1f;

/// Needle segment in the reference frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeedleSpec {
    pub entry: Vec3,
    pub tip: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomConfig {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    /// Gland semi-axes along x, y, z (mm).
    pub semi_axes: [f64; 3],
    pub background: f32,
    pub gland: f32,
    pub urethra: f32,
    pub rectal_wall: f32,
    /// Relative amplitude of the echotexture modulation.
    pub texture_amplitude: f64,
    /// Lattice spacing of the echotexture (mm).
    pub texture_scale_mm: f64,
    /// Standard deviation of the multiplicative speckle (mean 1).
    pub speckle_sigma: f64,
    /// Gaussian correlation radius of the speckle (mm).
    pub smoothing_mm: f64,
    pub n_calcifications: usize,
    pub calcification_radius: [f64; 2],
    pub calcification_intensity: f32,
    pub needle: Option<NeedleSpec>,
    pub needle_radius: f64,
    pub needle_intensity: f32,
    /// When false only speckle over a uniform background is rendered.
    pub anatomy: bool,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            dims: [128; 3],
            spacing: [0.6; 3],
            // 4/3·π·24·17·22.8 ≈ 39.0 cc
            semi_axes: [24.0, 17.0, 22.8],
            background: 50.0,
            gland: 90.0,
            urethra: 35.0,
            rectal_wall: 150.0,
            texture_amplitude: 0.3,
            texture_scale_mm: 4.0,
            speckle_sigma: 0.3,
            smoothing_mm: 0.5,
            n_calcifications: 5,
            calcification_radius: [1.0, 2.0],
            calcification_intensity: 255.0,
            needle: None,
            needle_radius: 0.5,
            needle_intensity: 230.0,
            anatomy: true,
            seed: 0,
        }
    }
}

impl PhantomConfig {
    /// Semi-axes for an ellipsoid of `cc` cubic centimetres with the default
    /// proportions.
    pub fn semi_axes_for_volume(cc: f64) -> [f64; 3] {
        let base = PhantomConfig::default().semi_axes;
        let base_cc = ellipsoid_volume_cc(base);
        let k = (cc / base_cc).cbrt();
        base.map(|a| a * k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 2) || self.spacing.iter().any(|&s| !(s > 0.0)) {
            return Err(FusionError::Config("grid dims must be ≥ 2 and spacing > 0".into()));
        }
        if self.semi_axes.iter().any(|&a| !(a > 0.0)) {
            return Err(FusionError::Config("semi-axes must be positive".into()));
        }
        if !(self.speckle_sigma >= 0.0 && self.smoothing_mm >= 0.0 && self.texture_scale_mm > 0.0) {
            return Err(FusionError::Config("speckle and texture parameters must be non-negative".into()));
        }
        let [lo, hi] = self.calcification_radius;
        if !(lo > 0.0 && hi >= lo) {
            return Err(FusionError::Config("calcification radius range must be positive".into()));
        }
        Ok(())
    }

    fn half_extent(&self) -> [f64; 3] {
        [0, 1, 2].map(|a| 0.5 * (self.dims[a] - 1) as f64 * self.spacing[a])
    }
}

pub fn ellipsoid_volume_cc(semi_axes: [f64; 3]) -> f64 {
    4.0 / 3.0 * std::f64::consts::PI * semi_axes.iter().product::<f64>() / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calcification {
    /// Centre in this volume's frame (mm).
    pub center: Vec3,
    pub radius: f64,
}

/// Exact scene geometry of one rendered volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Reference-frame gland: centred at the world origin, axis-aligned.
    pub semi_axes: [f64; 3],
    /// Tight box around the gland in the reference frame.
    pub bbox: Aabb,
    /// Maps reference-frame coordinates into this volume's frame.
    pub transform: RigidTransform,
    pub calcifications: Vec<Calcification>,
    /// Needle in this volume's frame.
    pub needle: Option<NeedleSpec>,
    pub scene_seed: u64,
    pub acquisition_seed: u64,
    pub anatomy: bool,
}

impl GroundTruth {
    /// Calcification centres in the reference frame.
    pub fn reference_calcifications(&self) -> Vec<Vec3> {
        let inv = self.transform.invert();
        self.calcifications.iter().map(|c| inv.apply_point(&c.center)).collect()
    }

    /// True when the reference-frame point lies inside the gland.
    pub fn in_gland(&self, p: &Vec3) -> bool {
        let [a, b, c] = self.semi_axes;
        (p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2) <= 1.0
    }

    /// Replaces the needle, given in the reference frame.
    pub fn with_reference_needle(&self, needle: Option<NeedleSpec>) -> GroundTruth {
        let mut out = self.clone();
        out.needle = needle.map(|n| NeedleSpec {
            entry: self.transform.apply_point(&n.entry),
            tip: self.transform.apply_point(&n.tip),
        });
        out
    }
}

/// Renders the reference scene described by `cfg`.
pub fn generate(cfg: &PhantomConfig) -> Result<(Volume3D, GroundTruth)> {
    cfg.validate()?;
    let half = cfg.half_extent();
    for a in 0..3 {
        if cfg.semi_axes[a] + GENERATE_MARGIN_MM > half[a] {
            return Err(FusionError::Config(format!(
                "gland semi-axis {} mm on axis {a} leaves less than {GENERATE_MARGIN_MM} mm margin in a {:.1} mm half-extent",
                cfg.semi_axes[a], half[a]
            )));
        }
    }
    let [a, b, c] = cfg.semi_axes;
    let bbox = Aabb::new([-a, -b, -c], [a, b, c]);
    let truth = GroundTruth {
        semi_axes: cfg.semi_axes,
        bbox,
        transform: RigidTransform::identity(),
        calcifications: layout_calcifications(cfg),
        needle: cfg.needle,
        scene_seed: cfg.seed,
        acquisition_seed: cfg.seed,
        anatomy: cfg.anatomy,
    };
    let vol = render(cfg, &truth)?;
    Ok((vol, truth))
}

/// Re-acquires the scene of `truth` after moving it by `t`, with fresh
/// speckle drawn from `new_seed`.
pub fn perturb(cfg: &PhantomConfig, truth: &GroundTruth, t: &RigidTransform, new_seed: u64) -> Result<(Volume3D, GroundTruth)> {
    cfg.validate()?;
    let transform = t.compose(&truth.transform);
    let half = cfg.half_extent();
    let (center, ext) = gland_extent(truth.semi_axes, &transform);
    for a in 0..3 {
        if (center[a] - ext[a]) < -half[a] || (center[a] + ext[a]) > half[a] {
            return Err(FusionError::Config(format!("transformed gland leaves the grid along axis {a}")));
        }
    }
    let moved = GroundTruth {
        transform,
        calcifications: truth
            .calcifications
            .iter()
            .map(|c| Calcification {
                center: t.apply_point(&c.center),
                radius: c.radius,
            })
            .collect(),
        needle: truth.needle.map(|n| NeedleSpec {
            entry: t.apply_point(&n.entry),
            tip: t.apply_point(&n.tip),
        }),
        acquisition_seed: new_seed,
        ..truth.clone()
    };
    let vol = render(cfg, &moved)?;
    Ok((vol, moved))
}

/// Pure speckle over a uniform level: no structure to register.
pub fn noise_volume(cfg: &PhantomConfig, seed: u64) -> Result<Volume3D> {
    let cfg = PhantomConfig {
        anatomy: false,
        needle: None,
        n_calcifications: 0,
        seed,
        ..cfg.clone()
    };
    Ok(generate(&cfg)?.0)
}

/// Random probe motion: rotation of up to `max_deg` about a uniformly drawn
/// axis, then a translation of up to `max_mm` in a uniform direction.
pub fn random_motion(rng: &mut impl Rng, max_deg: f64, max_mm: f64) -> RigidTransform {
    let mut unit = || loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    };
    let axis = unit();
    let dir = unit();
    let angle = rng.gen_range(0.0..=max_deg);
    let dist = rng.gen_range(0.0..=max_mm);
    let rot = RigidTransform::from_axis_angle(axis, angle);
    RigidTransform::from_parts(*rot.rotation(), dir * dist)
}

/// World-frame centre and half-extents of the gland under `t`.
fn gland_extent(semi_axes: [f64; 3], t: &RigidTransform) -> (Vec3, [f64; 3]) {
    let r = t.rotation_matrix();
    let ext = [0, 1, 2].map(|i| (0..3).map(|j| (r[(i, j)] * semi_axes[j]).powi(2)).sum::<f64>().sqrt());
    (*t.translation(), ext)
}

fn layout_calcifications(cfg: &PhantomConfig) -> Vec<Calcification> {
    if !cfg.anatomy {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ STREAM_LAYOUT);
    let [a, b, c] = cfg.semi_axes;
    let mut out: Vec<Calcification> = Vec::with_capacity(cfg.n_calcifications);
    let mut attempts = 0;
    while out.len() < cfg.n_calcifications && attempts < 10_000 {
        attempts += 1;
        let u = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if u.norm() > 0.75 {
            continue;
        }
        let p = Vec3::new(u.x * a, u.y * b, u.z * c);
        let radius = rng.gen_range(cfg.calcification_radius[0]..=cfg.calcification_radius[1]);
        // keep clear of the urethra and of each other
        if (p.x * p.x + (p.y - urethra_offset(b)).powi(2)).sqrt() < 4.0 + radius {
            continue;
        }
        if out.iter().any(|o| (o.center - p).norm() < 6.0 + o.radius + radius) {
            continue;
        }
        out.push(Calcification { center: p, radius });
    }
    out
}

fn urethra_offset(b: f64) -> f64 {
    0.15 * b
}

const URETHRA_RADIUS: f64 = 3.0;
const EDGE_MM: f64 = 1.0;

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

/// Tissue echogenicity at a reference-frame point, before speckle.
fn tissue(cfg: &PhantomConfig, truth: &GroundTruth, p: &Vec3) -> f64 {
    let bg = cfg.background as f64;
    if !truth.anatomy {
        return bg;
    }
    let [a, b, c] = truth.semi_axes;
    let r = ((p.x / a).powi(2) + (p.y / b).powi(2) + (p.z / c).powi(2)).sqrt();
    let delta = EDGE_MM / a.min(b).min(c);
    let inside = 1.0 - smoothstep(1.0 - delta, 1.0 + delta, r);
    let texture = 1.0 + cfg.texture_amplitude * lattice_noise(truth.scene_seed, p, cfg.texture_scale_mm);

    let mut level = bg + (cfg.gland as f64 - bg) * inside;
    let urethra_d = (p.x * p.x + (p.y - urethra_offset(b)).powi(2)).sqrt();
    let urethra = (1.0 - smoothstep(URETHRA_RADIUS - 0.5, URETHRA_RADIUS + 0.5, urethra_d)) * inside;
    level += (cfg.urethra as f64 - level) * urethra;

    // rectal wall: a slab below the gland, limited laterally and axially
    let wall_top = -b - 3.0;
    let slab = smoothstep(wall_top - 5.0, wall_top - 4.0, p.y) * (1.0 - smoothstep(wall_top - 0.5, wall_top + 0.5, p.y));
    let lateral = 1.0 - smoothstep(a + 4.0, a + 6.0, p.x.abs());
    let axial = 1.0 - smoothstep(c + 6.0, c + 8.0, p.z.abs());
    level += (cfg.rectal_wall as f64 - level) * slab * lateral * axial;
    level * texture
}

/// Bright structures in this volume's frame, composited after speckle.
fn bright(cfg: &PhantomConfig, truth: &GroundTruth, q: &Vec3) -> f64 {
    let mut v: f64 = 0.0;
    for calc in &truth.calcifications {
        let d = (q - calc.center).norm();
        let w = 1.0 - smoothstep(calc.radius - 0.3, calc.radius + 0.3, d);
        v = v.max(cfg.calcification_intensity as f64 * w);
    }
    if let Some(n) = &truth.needle {
        let d = point_segment_distance(q, &n.entry, &n.tip);
        let w = 1.0 - smoothstep(cfg.needle_radius - 0.3, cfg.needle_radius + 0.3, d);
        v = v.max(cfg.needle_intensity as f64 * w);
    }
    v
}

fn point_segment_distance(p: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 { ((p - a).dot(&ab) / len2).clamp(0.0, 1.0) } else { 0.0 };
    (p - (a + ab * t)).norm()
}

fn render(cfg: &PhantomConfig, truth: &GroundTruth) -> Result<Volume3D> {
    let origin = Volume3D::centered_origin(cfg.dims, cfg.spacing);
    let to_reference = truth.transform.invert();
    let speckle = speckle_field(cfg.dims, cfg.spacing, cfg.speckle_sigma, cfg.smoothing_mm, truth.acquisition_seed);
    let geometry = Volume3D::filled(cfg.dims, cfg.spacing, origin, 0.0)?;
    let [nx, ny, _] = cfg.dims;
    let mut data = vec![0.0f32; geometry.len()];
    data.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
        for j in 0..ny {
            for i in 0..nx {
                let idx = i + nx * j;
                let q = geometry.world_of_voxel(i, j, k);
                let p = to_reference.apply_point(&q);
                let base = tissue(cfg, truth, &p) * speckle[k * nx * ny + idx] as f64;
                plane[idx] = base.max(bright(cfg, truth, &q)) as f32;
            }
        }
    });
    Volume3D::new(cfg.dims, cfg.spacing, origin, data)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn hash_key(seed: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ stream).wrapping_add(index))
}

/// Uniform in (0, 1).
fn unit_open(h: u64) -> f64 {
    ((h >> 11) as f64 + 0.5) / (1u64 << 53) as f64
}

/// Standard normal deviate keyed by `(seed, index)`.
fn gaussian(seed: u64, index: u64) -> f64 {
    let u1 = unit_open(hash_key(seed, STREAM_SPECKLE, 2 * index));
    let u2 = unit_open(hash_key(seed, STREAM_SPECKLE, 2 * index + 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Smoothly interpolated lattice noise in `[-1, 1]`, defined everywhere in
/// the reference frame.
fn lattice_noise(seed: u64, p: &Vec3, scale: f64) -> f64 {
    let g = p / scale;
    let base = [g.x.floor(), g.y.floor(), g.z.floor()];
    let f = [g.x - base[0], g.y - base[1], g.z - base[2]].map(|t| t * t * (3.0 - 2.0 * t));
    let node = |dx: i64, dy: i64, dz: i64| {
        let key = ((base[0] as i64 + dx) as u64).wrapping_mul(0x8cb9_2ba7_2f3d_8dd7)
            ^ ((base[1] as i64 + dy) as u64).wrapping_mul(0xd6e8_feb8_6659_fd93)
            ^ ((base[2] as i64 + dz) as u64).wrapping_mul(0xa076_1d64_78bd_642f);
        2.0 * unit_open(hash_key(seed, STREAM_TEXTURE, key)) - 1.0
    };
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let x00 = lerp(node(0, 0, 0), node(1, 0, 0), f[0]);
    let x10 = lerp(node(0, 1, 0), node(1, 1, 0), f[0]);
    let x01 = lerp(node(0, 0, 1), node(1, 0, 1), f[0]);
    let x11 = lerp(node(0, 1, 1), node(1, 1, 1), f[0]);
    lerp(lerp(x00, x10, f[1]), lerp(x01, x11, f[1]), f[2])
}

/// Log-normal speckle with mean 1 and standard deviation `sigma`, spatially
/// correlated by a Gaussian of `smoothing_mm` (periodic boundaries).
pub fn speckle_field(dims: [usize; 3], spacing: [f64; 3], sigma: f64, smoothing_mm: f64, seed: u64) -> Vec<f32> {
    let n: usize = dims.iter().product();
    if sigma == 0.0 {
        return vec![1.0; n];
    }
    let mut field: Vec<f64> = (0..n as u64).into_par_iter().map(|i| gaussian(seed, i)).collect();
    if smoothing_mm > 0.0 {
        let mut gain = 1.0;
        for axis in 0..3 {
            let kernel = gaussian_kernel(smoothing_mm / spacing[axis]);
            gain *= kernel.iter().map(|w| w * w).sum::<f64>();
            field = convolve_axis(&field, dims, axis, &kernel);
        }
        let norm = gain.sqrt().recip();
        field.iter_mut().for_each(|v| *v *= norm);
    }
    let s2 = (1.0 + sigma * sigma).ln();
    let s = s2.sqrt();
    field.into_par_iter().map(|g| (s * g - 0.5 * s2).exp() as f32).collect()
}

fn gaussian_kernel(sigma_vox: f64) -> Vec<f64> {
    let radius = (3.0 * sigma_vox).ceil().max(1.0) as i64;
    let w: Vec<f64> = (-radius..=radius).map(|i| (-0.5 * (i as f64 / sigma_vox).powi(2)).exp()).collect();
    let sum: f64 = w.iter().sum();
    w.into_iter().map(|v| v / sum).collect()
}

fn convolve_axis(src: &[f64], dims: [usize; 3], axis: usize, kernel: &[f64]) -> Vec<f64> {
    let [nx, ny, _] = dims;
    let stride = [1, nx, nx * ny][axis];
    let len = dims[axis] as i64;
    let radius = (kernel.len() / 2) as i64;
    let mut out = vec![0.0; src.len()];
    out.par_chunks_mut(nx * ny).enumerate().for_each(|(k, plane)| {
        for j in 0..ny {
            for i in 0..nx {
                let pos = [i, j, k][axis] as i64;
                let here = i + nx * j + nx * ny * k;
                let line_start = here - pos as usize * stride;
                let mut acc = 0.0;
                for (t, w) in kernel.iter().enumerate() {
                    let q = (pos + t as i64 - radius).rem_euclid(len) as usize;
                    acc += w * src[line_start + q * stride];
                }
                plane[i + nx * j] = acc;
            }
        }
    });
    out
}
