//! Fusion sessions: a reference volume R0 plus one volume per biopsy, each
//! fused to R0 so its needle can be scored on the target grid.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biopsy_map::{evaluate_session, resolve_trajectory, BiopsyOutcome, MetricsReport, NeedleTrajectory, Side, TargetGrid, TargetLabel};
use crate::bvol;
use crate::error::{FusionError, Result};
use crate::geometry::{Aabb, RigidTransform, Vec3};
use crate::phantom::{self, GroundTruth, NeedleSpec, PhantomConfig};
use crate::registration::{register_iconic, RegistrationConfig, RegistrationResult};
use crate::validation::{direction_angle, fiducial_error, mean_max, FiducialError, FiducialPair};
use crate::volume::Volume3D;

pub const MAX_BIOPSIES: usize = 12;

/// Needle annotated in its own volume's frame (mm).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryInput {
    pub entry: Vec3,
    pub tip: Vec3,
    pub core_length: f64,
    pub planned_target: TargetLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiopsyRecord {
    /// Position in the biopsy sequence, 1 to 12.
    pub index: usize,
    pub volume: PathBuf,
    /// Probe turned 180° to reach the contralateral lobe.
    #[serde(default)]
    pub left_lobe: bool,
    pub trajectory: TrajectoryInput,
    /// Landmarks located in R0 (`point_in_fixed`) and in this volume.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fiducials: Vec<FiducialPair>,
}

impl BiopsyRecord {
    pub fn volume_id(&self) -> String {
        self.volume
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("biopsy {}", self.index))
    }

    pub fn needle(&self) -> Result<NeedleTrajectory> {
        let t = &self.trajectory;
        NeedleTrajectory::new(t.entry, t.tip, t.core_length, self.volume_id(), t.planned_target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub reference: PathBuf,
    /// Prostate box in R0 as `[x0, x1, y0, y1, z0, z1]`, mm.
    pub bbox: [f64; 6],
    #[serde(default)]
    pub registration: RegistrationConfig,
    pub biopsies: Vec<BiopsyRecord>,
}

impl SessionConfig {
    /// Reads a session file; relative paths are taken from its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FusionError::io(path, e))?;
        let mut cfg: SessionConfig = serde_json::from_str(&text).map_err(|e| FusionError::json(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.reference = base.join(&cfg.reference);
        for b in &mut cfg.biopsies {
            b.volume = base.join(&b.volume);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path.as_ref())
    }

    pub fn grid(&self) -> Result<TargetGrid> {
        TargetGrid::new(Aabb::from_extents(self.bbox))
    }

    pub fn validate(&self) -> Result<()> {
        self.registration.validate()?;
        self.grid()?;
        let mut seen = [false; MAX_BIOPSIES + 1];
        for b in &self.biopsies {
            if !(1..=MAX_BIOPSIES).contains(&b.index) {
                return Err(FusionError::Config(format!("biopsy index {} outside 1..={MAX_BIOPSIES}", b.index)));
            }
            if std::mem::replace(&mut seen[b.index], true) {
                return Err(FusionError::Config(format!("biopsy index {} used twice", b.index)));
            }
            if same_file(&b.volume, &self.reference) {
                return Err(FusionError::Config(format!(
                    "biopsy {} reuses the reference volume {}",
                    b.index,
                    self.reference.display()
                )));
            }
            b.needle()?;
        }
        Ok(())
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

/// What happened to one biopsy volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiopsyResult {
    pub index: usize,
    pub volume: PathBuf,
    pub planned_target: TargetLabel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registration: Option<RegistrationResult>,
    /// Needle in the R0 frame, present when the fusion succeeded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mapped_trajectory: Option<NeedleTrajectory>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiducial_error: Option<FiducialError>,
    /// Why the biopsy is excluded from the report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl BiopsyResult {
    pub fn succeeded(&self) -> bool {
        self.mapped_trajectory.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionSession {
    pub config: SessionConfig,
    /// One entry per biopsy, in index order.
    pub results: Vec<BiopsyResult>,
}

impl FusionSession {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FusionError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| FusionError::json(path, e))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(self, path.as_ref())
    }

    pub fn outcomes(&self) -> Vec<BiopsyOutcome> {
        self.results
            .iter()
            .map(|r| match (&r.mapped_trajectory, &r.error) {
                (Some(t), _) => BiopsyOutcome::Mapped(t.clone()),
                (None, reason) => BiopsyOutcome::Excluded {
                    volume_id: r.volume.display().to_string(),
                    reason: reason.clone().unwrap_or_default(),
                },
            })
            .collect()
    }

    pub fn report(&self) -> Result<MetricsReport> {
        Ok(evaluate_session(&self.outcomes(), &self.config.grid()?))
    }

    pub fn summary(&self) -> SessionSummary {
        let succeeded: Vec<&BiopsyResult> = self.results.iter().filter(|r| r.succeeded()).collect();
        let fiducials: Vec<f64> = succeeded
            .iter()
            .filter_map(|r| r.fiducial_error.as_ref())
            .flat_map(|f| f.per_pair.iter().map(|(_, d)| *d))
            .collect();
        let times: Vec<f64> = self.results.iter().filter_map(|r| r.registration.as_ref()).map(|r| r.elapsed).collect();
        SessionSummary {
            n_biopsies: self.results.len(),
            n_succeeded: succeeded.len(),
            fiducial_error: mean_max(&fiducials),
            mean_time: mean_max(&times).map(|(m, _)| m),
            excluded: self
                .results
                .iter()
                .filter(|r| !r.succeeded())
                .map(|r| (r.index, r.error.clone().unwrap_or_default()))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionSummary {
    pub n_biopsies: usize,
    pub n_succeeded: usize,
    /// Mean and max over every fiducial of every successful fusion, mm.
    pub fiducial_error: Option<(f64, f64)>,
    /// Mean registration wall time, seconds.
    pub mean_time: Option<f64>,
    pub excluded: Vec<(usize, String)>,
}

impl SessionSummary {
    pub fn success_rate(&self) -> f64 {
        if self.n_biopsies == 0 {
            0.0
        } else {
            self.n_succeeded as f64 / self.n_biopsies as f64
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "fusions succeeded: {}/{} ({:.1}%)",
            self.n_succeeded,
            self.n_biopsies,
            100.0 * self.success_rate()
        );
        match self.fiducial_error {
            Some((mean, max)) => {
                let _ = writeln!(s, "fiducial error: mean {mean:.2} mm, max {max:.2} mm");
            }
            None => s.push_str("fiducial error: no fiducials supplied\n"),
        }
        if let Some(t) = self.mean_time {
            let _ = writeln!(s, "mean registration time: {t:.2} s");
        }
        let _ = writeln!(s, "excluded biopsies: {}", self.excluded.len());
        for (index, reason) in &self.excluded {
            let _ = writeln!(s, "  #{index}: {reason}");
        }
        s
    }
}

/// Fuses every biopsy volume to R0 on a pool of `jobs` workers (all logical
/// cores when `None`). Per-biopsy failures are recorded, not propagated;
/// only an unusable session or reference volume is an error.
pub fn run_session(cfg: &SessionConfig, jobs: Option<usize>) -> Result<FusionSession> {
    cfg.validate()?;
    let reference = bvol::read_volume(&cfg.reference)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| FusionError::Config(format!("cannot start worker pool: {e}")))?;
    let mut results: Vec<BiopsyResult> = pool.install(|| {
        cfg.biopsies
            .par_iter()
            .map(|b| fuse_biopsy(&reference, b, &cfg.registration))
            .collect()
    });
    results.sort_by_key(|r| r.index);
    Ok(FusionSession {
        config: cfg.clone(),
        results,
    })
}

fn fuse_biopsy(reference: &Volume3D, record: &BiopsyRecord, base: &RegistrationConfig) -> BiopsyResult {
    let mut out = BiopsyResult {
        index: record.index,
        volume: record.volume.clone(),
        planned_target: record.trajectory.planned_target,
        registration: None,
        mapped_trajectory: None,
        fiducial_error: None,
        error: None,
    };
    let moving = match bvol::read_volume(&record.volume) {
        Ok(v) => v,
        Err(e) => {
            out.error = Some(describe(&e));
            return out;
        }
    };
    let cfg = RegistrationConfig {
        left_lobe_mode: record.left_lobe,
        ..base.clone()
    };
    let reg = match register_iconic(reference, &moving, &cfg) {
        Ok(r) => r,
        Err(e) => {
            out.error = Some(describe(&e));
            return out;
        }
    };
    match record.needle().and_then(|n| resolve_trajectory(&n, Some(&reg))) {
        Ok(t) => {
            out.mapped_trajectory = Some(t);
            out.fiducial_error = fiducial_error(&record.fiducials, &reg.transform).ok();
        }
        Err(FusionError::MissingTransform(_)) => {
            out.error = Some(format!("fusion failed (final NCC {})", fmt_opt(reg.final_ncc)));
        }
        Err(e) => out.error = Some(describe(&e)),
    }
    out.registration = Some(reg);
    out
}

/// Error message followed by its sources.
fn describe(e: &FusionError) -> String {
    let mut msg = e.to_string();
    let mut source = std::error::Error::source(e);
    while let Some(s) = source {
        let _ = write!(msg, ": {s}");
        source = s.source();
    }
    msg
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
}

pub const REPORT_FILE: &str = "report.csv";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Writes `report.csv` and `summary.txt` into `dir`.
pub fn emit_report(session: &FusionSession, dir: impl AsRef<Path>) -> Result<MetricsReport> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e))?;
    let report = session.report()?;
    let csv = dir.join(REPORT_FILE);
    fs::write(&csv, report.to_csv()).map_err(|e| FusionError::io(&csv, e))?;
    let summary = dir.join(SUMMARY_FILE);
    fs::write(&summary, session.summary().to_text()).map_err(|e| FusionError::io(&summary, e))?;
    Ok(report)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| FusionError::json(path, e))?;
    fs::write(path, text + "\n").map_err(|e| FusionError::io(path, e))
}

/// Settings for a synthetic R0 + biopsies session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSession {
    pub phantom: PhantomConfig,
    /// Number of biopsies, targets taken in [`TargetLabel::all`] order.
    pub count: usize,
    pub seed: u64,
    pub max_rotation_deg: f64,
    pub max_translation_mm: f64,
    pub core_length: f64,
    pub registration: RegistrationConfig,
}

impl Default for SyntheticSession {
    fn default() -> Self {
        Self {
            phantom: PhantomConfig::default(),
            count: MAX_BIOPSIES,
            seed: 0,
            max_rotation_deg: 10.0,
            max_translation_mm: 8.0,
            core_length: 18.0,
            registration: RegistrationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiopsyTruth {
    pub index: usize,
    pub target: TargetLabel,
    /// Needle in the R0 frame.
    pub reference_needle: NeedleSpec,
    pub truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTruth {
    pub reference: GroundTruth,
    pub biopsies: Vec<BiopsyTruth>,
}

impl SessionTruth {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| FusionError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| FusionError::json(path, e))
    }
}

pub const SESSION_FILE: &str = "session.json";
pub const TRUTH_FILE: &str = "truth.json";
pub const REFERENCE_FILE: &str = "R0.bvol";

/// Matching calcifications of two renderings of the same scene.
pub fn calcification_pairs(fixed: &GroundTruth, moving: &GroundTruth) -> Vec<FiducialPair> {
    fixed
        .calcifications
        .iter()
        .zip(&moving.calcifications)
        .enumerate()
        .map(|(k, (a, b))| FiducialPair {
            id: format!("calc{}", k + 1),
            point_in_fixed: a.center,
            point_in_moving: b.center,
        })
        .collect()
}

/// Needle from a probe point behind the apex, below the gland, through the
/// centre of `cell`; the core is centred on the cell centre.
pub fn planned_needle(truth: &GroundTruth, cell: &Aabb, core_length: f64) -> NeedleSpec {
    let [_, b, c] = truth.semi_axes;
    let probe = Vec3::new(0.0, -(b + 4.0), -0.5 * c);
    let target = cell.center();
    let dir = (target - probe).normalize();
    NeedleSpec {
        entry: probe,
        tip: target + dir * (0.5 * core_length),
    }
}

/// Renders R0 and `count` biopsy volumes into `dir` and writes the session
/// and ground-truth files. Paths in the returned config are relative to
/// `dir`, as in the written `session.json`. Left-side biopsies carry an extra 180° probe
/// turn about the z axis and are flagged for left-lobe initialization.
pub fn synthesize_session(spec: &SyntheticSession, dir: impl AsRef<Path>) -> Result<(SessionConfig, SessionTruth)> {
    let dir = dir.as_ref();
    if !(1..=MAX_BIOPSIES).contains(&spec.count) {
        return Err(FusionError::Config(format!("count must lie in 1..={MAX_BIOPSIES}")));
    }
    if !(spec.core_length > 0.0) {
        return Err(FusionError::Config("core_length must be positive".into()));
    }
    fs::create_dir_all(dir).map_err(|e| FusionError::io(dir, e))?;

    let phantom_cfg = PhantomConfig {
        needle: None,
        seed: spec.seed,
        ..spec.phantom.clone()
    };
    let (r0, r0_truth) = phantom::generate(&phantom_cfg)?;
    bvol::write_volume(&r0, dir.join(REFERENCE_FILE))?;
    let grid = TargetGrid::new(r0_truth.bbox)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let plans: Vec<(usize, TargetLabel, RigidTransform, u64)> = TargetLabel::all()
        .take(spec.count)
        .enumerate()
        .map(|(i, label)| {
            let mut t = phantom::random_motion(&mut rng, spec.max_rotation_deg, spec.max_translation_mm);
            if label.side == Side::Left {
                t = t.compose(&RigidTransform::from_axis_angle(Vec3::z(), 180.0));
            }
            (i + 1, label, t, rng.gen())
        })
        .collect();

    let rendered: Vec<Result<(BiopsyRecord, BiopsyTruth)>> = plans
        .par_iter()
        .map(|&(index, label, t, acquisition_seed)| {
            let needle = planned_needle(&r0_truth, &grid.cell(label), spec.core_length);
            let scene = r0_truth.with_reference_needle(Some(needle));
            let (vol, truth) = phantom::perturb(&phantom_cfg, &scene, &t, acquisition_seed)?;
            let file = format!("biopsy_{index:02}.bvol");
            bvol::write_volume(&vol, dir.join(&file))?;
            let seen = truth.needle.expect("needle was placed");
            let fiducials = calcification_pairs(&r0_truth, &truth);
            let record = BiopsyRecord {
                index,
                volume: PathBuf::from(file),
                left_lobe: label.side == Side::Left,
                trajectory: TrajectoryInput {
                    entry: seen.entry,
                    tip: seen.tip,
                    core_length: spec.core_length,
                    planned_target: label,
                },
                fiducials,
            };
            let bt = BiopsyTruth {
                index,
                target: label,
                reference_needle: needle,
                truth,
            };
            Ok((record, bt))
        })
        .collect();

    let mut records = Vec::with_capacity(spec.count);
    let mut truths = Vec::with_capacity(spec.count);
    for r in rendered {
        let (record, truth) = r?;
        records.push(record);
        truths.push(truth);
    }
    let session = SessionConfig {
        reference: PathBuf::from(REFERENCE_FILE),
        bbox: r0_truth.bbox.extents(),
        registration: spec.registration.clone(),
        biopsies: records,
    };
    let truth = SessionTruth {
        reference: r0_truth,
        biopsies: truths,
    };
    session.save(dir.join(SESSION_FILE))?;
    write_json(&truth, &dir.join(TRUTH_FILE))?;
    Ok((session, truth))
}

/// Accuracy of one fused biopsy measured against the phantom ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthCheck {
    pub index: usize,
    pub succeeded: bool,
    /// Residual motion between estimated and true transforms.
    pub rotation_error_deg: f64,
    pub translation_error_mm: f64,
    /// Calcification distances under the estimated transform.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiducial_error: Option<FiducialError>,
    /// Angle between the mapped needle and the true needle in R0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub needle_angle_deg: Option<f64>,
}

/// Compares every registered biopsy of `session` with its ground truth.
pub fn check_against_truth(session: &FusionSession, truth: &SessionTruth) -> Vec<TruthCheck> {
    session
        .results
        .iter()
        .filter_map(|r| {
            let reg = r.registration.as_ref()?;
            let bt = truth.biopsies.iter().find(|b| b.index == r.index)?;
            let residual = reg.transform.invert().compose(&bt.truth.transform);
            let pairs = calcification_pairs(&truth.reference, &bt.truth);
            let needle_angle_deg = r
                .mapped_trajectory
                .as_ref()
                .and_then(|m| direction_angle(&(m.tip - m.entry), &(bt.reference_needle.tip - bt.reference_needle.entry)).ok());
            Some(TruthCheck {
                index: r.index,
                succeeded: r.succeeded(),
                rotation_error_deg: residual.rotation_angle_deg(),
                translation_error_mm: residual.translation().norm(),
                fiducial_error: fiducial_error(&pairs, &reg.transform).ok(),
                needle_angle_deg,
            })
        })
        .collect()
}
