//! Gray-level similarity between a fixed volume and a resampled moving one.
//!
//! Every measure only looks at voxels flagged valid in the mask. Reductions
//! are accumulated per z-slice and merged in slice order, so results do not
//! depend on the number of worker threads.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::volume::{IndexMap, Mask, Volume3D};

pub const DEFAULT_BINS: usize = 32;
pub const MIN_BINS: usize = 8;
pub const MAX_BINS: usize = 256;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum SimilarityKind {
    Ssd,
    #[default]
    Ncc,
    Nmi { bins: usize },
}

impl SimilarityKind {
    pub fn nmi(bins: usize) -> Result<Self> {
        if !(MIN_BINS..=MAX_BINS).contains(&bins) {
            return Err(FusionError::Config(format!(
                "histogram bins must lie in [{MIN_BINS}, {MAX_BINS}], got {bins}"
            )));
        }
        Ok(SimilarityKind::Nmi { bins })
    }

    /// Parses the `--metric` / `--bins` pair used on the command line.
    pub fn from_flags(metric: &str, bins: usize) -> Result<Self> {
        match metric {
            "ssd" => Ok(SimilarityKind::Ssd),
            "ncc" => Ok(SimilarityKind::Ncc),
            "nmi" => SimilarityKind::nmi(bins),
            other => Err(FusionError::Config(format!("unknown metric `{other}`"))),
        }
    }

    /// True when larger values mean better alignment.
    pub fn higher_is_better(&self) -> bool {
        !matches!(self, SimilarityKind::Ssd)
    }
}

impl fmt::Display for SimilarityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimilarityKind::Ssd => write!(f, "ssd"),
            SimilarityKind::Ncc => write!(f, "ncc"),
            SimilarityKind::Nmi { bins } => write!(f, "nmi:{bins}"),
        }
    }
}

impl FromStr for SimilarityKind {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some(("nmi", bins)) => {
                let bins = bins
                    .parse()
                    .map_err(|_| FusionError::Config(format!("bad bin count in `{s}`")))?;
                SimilarityKind::nmi(bins)
            }
            Some(_) => Err(FusionError::Config(format!("unknown metric `{s}`"))),
            None => SimilarityKind::from_flags(s, DEFAULT_BINS),
        }
    }
}

impl TryFrom<String> for SimilarityKind {
    type Error = FusionError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<SimilarityKind> for String {
    fn from(k: SimilarityKind) -> Self {
        k.to_string()
    }
}

/// Running sums for SSD and Pearson correlation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Moments {
    pub n: u64,
    sf: f64,
    sm: f64,
    sff: f64,
    smm: f64,
    sfm: f64,
    sdd: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, f: f64, m: f64) {
        let d = f - m;
        self.n += 1;
        self.sf += f;
        self.sm += m;
        self.sff += f * f;
        self.smm += m * m;
        self.sfm += f * m;
        self.sdd += d * d;
    }

    pub fn merge(mut self, o: &Moments) -> Moments {
        self.n += o.n;
        self.sf += o.sf;
        self.sm += o.sm;
        self.sff += o.sff;
        self.smm += o.smm;
        self.sfm += o.sfm;
        self.sdd += o.sdd;
        self
    }

    pub fn ssd(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(FusionError::EmptyOverlap);
        }
        Ok(self.sdd / self.n as f64)
    }

    pub fn ncc(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(FusionError::EmptyOverlap);
        }
        let n = self.n as f64;
        let var_f = self.sff - self.sf * self.sf / n;
        let var_m = self.smm - self.sm * self.sm / n;
        let cov = self.sfm - self.sf * self.sm / n;
        // relative floor against cancellation noise in the raw sums
        let floor_f = 1e-12 * self.sff.max(f64::MIN_POSITIVE);
        let floor_m = 1e-12 * self.smm.max(f64::MIN_POSITIVE);
        if var_f <= floor_f || var_m <= floor_m {
            return Err(FusionError::DegenerateImage);
        }
        Ok((cov / (var_f * var_m).sqrt()).clamp(-1.0, 1.0))
    }
}

fn check_inputs(fixed: &Volume3D, moved: &Volume3D, mask: &Mask) -> Result<()> {
    if !fixed.same_geometry(moved) {
        return Err(FusionError::DimensionMismatch(
            "fixed and moved volumes must share one grid".into(),
        ));
    }
    if mask.len() != fixed.len() {
        return Err(FusionError::DimensionMismatch(format!(
            "mask has {} entries for {} voxels",
            mask.len(),
            fixed.len()
        )));
    }
    Ok(())
}

fn masked_moments(fixed: &Volume3D, moved: &Volume3D, mask: &Mask) -> Result<Moments> {
    check_inputs(fixed, moved, mask)?;
    let [nx, ny, _] = fixed.dims();
    let plane = nx * ny;
    let partials: Vec<Moments> = fixed
        .data()
        .par_chunks(plane)
        .zip(moved.data().par_chunks(plane))
        .zip(mask.flags().par_chunks(plane))
        .map(|((f, m), valid)| {
            let mut acc = Moments::default();
            for i in 0..f.len() {
                if valid[i] {
                    acc.push(f[i] as f64, m[i] as f64);
                }
            }
            acc
        })
        .collect();
    Ok(partials.iter().fold(Moments::default(), |a, b| a.merge(b)))
}

/// Mean squared intensity difference over the masked voxels.
pub fn ssd(fixed: &Volume3D, moved: &Volume3D, mask: &Mask) -> Result<f64> {
    masked_moments(fixed, moved, mask)?.ssd()
}

/// Pearson correlation of the masked intensities.
pub fn ncc(fixed: &Volume3D, moved: &Volume3D, mask: &Mask) -> Result<f64> {
    masked_moments(fixed, moved, mask)?.ncc()
}

/// Normalized mutual information `(H(F) + H(M)) / H(F, M)` from a joint
/// histogram with `bins` equal-width bins over each image's masked range.
pub fn nmi(fixed: &Volume3D, moved: &Volume3D, mask: &Mask, bins: usize) -> Result<f64> {
    check_inputs(fixed, moved, mask)?;
    SimilarityKind::nmi(bins)?;
    let pairs: Vec<(f32, f32)> = fixed
        .data()
        .iter()
        .zip(moved.data())
        .zip(mask.flags())
        .filter(|(_, &v)| v)
        .map(|((&f, &m), _)| (f, m))
        .collect();
    nmi_from_pairs(&pairs, bins)
}

pub(crate) fn nmi_from_pairs(pairs: &[(f32, f32)], bins: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(FusionError::EmptyOverlap);
    }
    let range = |sel: fn(&(f32, f32)) -> f32| {
        pairs
            .iter()
            .map(sel)
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
    };
    let binner = |(lo, hi): (f32, f32)| {
        let width = (hi as f64 - lo as f64) / bins as f64;
        move |v: f32| -> usize {
            if width <= 0.0 {
                0
            } else {
                (((v as f64 - lo as f64) / width) as usize).min(bins - 1)
            }
        }
    };
    let bin_f = binner(range(|p| p.0));
    let bin_m = binner(range(|p| p.1));

    let mut joint = vec![0u64; bins * bins];
    for &(f, m) in pairs {
        joint[bin_f(f) * bins + bin_m(m)] += 1;
    }
    let mut hist_f = vec![0u64; bins];
    let mut hist_m = vec![0u64; bins];
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            hist_f[a] += c;
            hist_m[b] += c;
        }
    }
    let total = pairs.len() as f64;
    let entropy = |counts: &[u64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / total;
                -p * p.ln()
            })
            .sum()
    };
    let h_joint = entropy(&joint);
    if h_joint <= 0.0 {
        return Err(FusionError::DegenerateImage);
    }
    Ok((entropy(&hist_f) + entropy(&hist_m)) / h_joint)
}

/// Evaluates `kind` between `fixed` and `moving` seen through `map`,
/// sampling the moving volume on the fly. Returns the metric value and the
/// number of fixed voxels that landed inside the moving grid. Only every
/// `stride`-th voxel along each axis is visited.
pub(crate) fn evaluate_mapped(
    fixed: &Volume3D,
    moving: &Volume3D,
    map: &IndexMap,
    kind: SimilarityKind,
    stride: usize,
) -> (Result<f64>, usize) {
    let [nx, ny, nz] = fixed.dims();
    let plane = nx * ny;
    let data = fixed.data();
    let stride = stride.max(1);
    match kind {
        SimilarityKind::Ssd | SimilarityKind::Ncc => {
            let partials: Vec<Moments> = (0..nz)
                .into_par_iter()
                .step_by(stride)
                .map(|k| {
                    let mut acc = Moments::default();
                    for j in (0..ny).step_by(stride) {
                        let s = map.row_start(j, k);
                        let row = &data[k * plane + j * nx..k * plane + (j + 1) * nx];
                        for (i, &f) in row.iter().enumerate().step_by(stride) {
                            let fi = i as f64;
                            if let Some(m) = moving.sample_index(
                                s[0] + fi * map.di[0],
                                s[1] + fi * map.di[1],
                                s[2] + fi * map.di[2],
                            ) {
                                acc.push(f as f64, m);
                            }
                        }
                    }
                    acc
                })
                .collect();
            let total = partials.iter().fold(Moments::default(), |a, b| a.merge(b));
            let value = match kind {
                SimilarityKind::Ssd => total.ssd(),
                _ => total.ncc(),
            };
            (value, total.n as usize)
        }
        SimilarityKind::Nmi { bins } => {
            let slices: Vec<Vec<(f32, f32)>> = (0..nz)
                .into_par_iter()
                .step_by(stride)
                .map(|k| {
                    let mut out = Vec::new();
                    for j in (0..ny).step_by(stride) {
                        let s = map.row_start(j, k);
                        let row = &data[k * plane + j * nx..k * plane + (j + 1) * nx];
                        for (i, &f) in row.iter().enumerate().step_by(stride) {
                            let fi = i as f64;
                            if let Some(m) = moving.sample_index(
                                s[0] + fi * map.di[0],
                                s[1] + fi * map.di[1],
                                s[2] + fi * map.di[2],
                            ) {
                                out.push((f, m as f32));
                            }
                        }
                    }
                    out
                })
                .collect();
            let pairs: Vec<(f32, f32)> = slices.into_iter().flatten().collect();
            let n = pairs.len();
            (nmi_from_pairs(&pairs, bins), n)
        }
    }
}

/// Evaluates `kind` on an already resampled pair.
pub fn evaluate(kind: SimilarityKind, fixed: &Volume3D, moved: &Volume3D, mask: &Mask) -> Result<f64> {
    match kind {
        SimilarityKind::Ssd => ssd(fixed, moved, mask),
        SimilarityKind::Ncc => ncc(fixed, moved, mask),
        SimilarityKind::Nmi { bins } => nmi(fixed, moved, mask, bins),
    }
}
