//! Planned-target grid and per-target needle statistics.
//!
//! The prostate bounding box in the reference frame is cut into 12 congruent
//! cells: four columns along x (left lateral, left parasagittal, right
//! parasagittal, right lateral) and three levels along z (apex, mid, base).
//! A biopsy counts as inside its planned target when any part of its core
//! intersects the planned cell.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};
use crate::geometry::{Aabb, RigidTransform, Vec3};
use crate::registration::RegistrationResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Side {
    Left,
    Right,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    Lateral,
    Parasagittal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Base,
    Mid,
    Apex,
}

/// One of the 12 planned targets. Written as side, level, column letters:
/// `RBL` is right base lateral, `LAP` left apex parasagittal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TargetLabel {
    pub side: Side,
    pub column: Column,
    pub level: Level,
}

impl TargetLabel {
    pub const fn new(side: Side, level: Level, column: Column) -> Self {
        Self { side, column, level }
    }

    pub fn all() -> impl Iterator<Item = TargetLabel> {
        [Side::Left, Side::Right].into_iter().flat_map(|side| {
            [Level::Base, Level::Mid, Level::Apex].into_iter().flat_map(move |level| {
                [Column::Lateral, Column::Parasagittal]
                    .into_iter()
                    .map(move |column| TargetLabel::new(side, level, column))
            })
        })
    }

    pub fn code(&self) -> TargetCode {
        TargetCode {
            level: self.level,
            column: self.column,
        }
    }

    /// Column position along x, 0 (left lateral) to 3 (right lateral).
    fn x_slot(&self) -> usize {
        match (self.side, self.column) {
            (Side::Left, Column::Lateral) => 0,
            (Side::Left, Column::Parasagittal) => 1,
            (Side::Right, Column::Parasagittal) => 2,
            (Side::Right, Column::Lateral) => 3,
        }
    }

    /// Level position along z, 0 (apex) to 2 (base).
    fn z_slot(&self) -> usize {
        match self.level {
            Level::Apex => 0,
            Level::Mid => 1,
            Level::Base => 2,
        }
    }

    fn from_slots(x: usize, z: usize) -> Self {
        let (side, column) = match x {
            0 => (Side::Left, Column::Lateral),
            1 => (Side::Left, Column::Parasagittal),
            2 => (Side::Right, Column::Parasagittal),
            _ => (Side::Right, Column::Lateral),
        };
        let level = match z {
            0 => Level::Apex,
            1 => Level::Mid,
            _ => Level::Base,
        };
        TargetLabel::new(side, level, column)
    }
}

impl fmt::Display for TargetLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = match self.side {
            Side::Left => 'L',
            Side::Right => 'R',
        };
        write!(f, "{side}{}", self.code())
    }
}

impl FromStr for TargetLabel {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || FusionError::Config(format!("unknown target label `{s}`"));
        let mut chars = s.chars();
        let side = match chars.next() {
            Some('L') => Side::Left,
            Some('R') => Side::Right,
            _ => return Err(bad()),
        };
        let code: TargetCode = chars.as_str().parse().map_err(|_| bad())?;
        Ok(TargetLabel::new(side, code.level, code.column))
    }
}

impl TryFrom<String> for TargetLabel {
    type Error = FusionError;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TargetLabel> for String {
    fn from(l: TargetLabel) -> Self {
        l.to_string()
    }
}

/// Target with left and right merged, as reported: BL, BP, ML, MP, AL, AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetCode {
    pub level: Level,
    pub column: Column,
}

impl TargetCode {
    /// Report order.
    pub const ALL: [TargetCode; 6] = [
        TargetCode { level: Level::Base, column: Column::Lateral },
        TargetCode { level: Level::Base, column: Column::Parasagittal },
        TargetCode { level: Level::Mid, column: Column::Lateral },
        TargetCode { level: Level::Mid, column: Column::Parasagittal },
        TargetCode { level: Level::Apex, column: Column::Lateral },
        TargetCode { level: Level::Apex, column: Column::Parasagittal },
    ];

    fn position(&self) -> usize {
        Self::ALL.iter().position(|c| c == self).expect("all codes listed")
    }
}

impl fmt::Display for TargetCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let l = match self.level {
            Level::Base => 'B',
            Level::Mid => 'M',
            Level::Apex => 'A',
        };
        let c = match self.column {
            Column::Lateral => 'L',
            Column::Parasagittal => 'P',
        };
        write!(f, "{l}{c}")
    }
}

impl FromStr for TargetCode {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self> {
        TargetCode::ALL
            .into_iter()
            .find(|c| c.to_string() == s)
            .ok_or_else(|| FusionError::Config(format!("unknown target code `{s}`")))
    }
}

/// Oriented needle segment with the sampled core at its distal end.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeedleTrajectory {
    pub entry: Vec3,
    pub tip: Vec3,
    /// Length of tissue sampled along the segment, ending at the tip (mm).
    pub core_length: f64,
    pub volume_id: String,
    pub planned_target: TargetLabel,
}

impl NeedleTrajectory {
    pub fn new(entry: Vec3, tip: Vec3, core_length: f64, volume_id: impl Into<String>, planned_target: TargetLabel) -> Result<Self> {
        let t = NeedleTrajectory {
            entry,
            tip,
            core_length,
            volume_id: volume_id.into(),
            planned_target,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.core_length > 0.0) {
            return Err(FusionError::Config(format!("core length must be positive, got {}", self.core_length)));
        }
        if self.length() < self.core_length {
            return Err(FusionError::Config(format!(
                "core length {} exceeds needle segment length {}",
                self.core_length,
                self.length()
            )));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        (self.tip - self.entry).norm()
    }

    /// Unit vector from entry to tip.
    pub fn direction(&self) -> Option<Vec3> {
        let d = self.tip - self.entry;
        let n = d.norm();
        (n > 0.0).then(|| d / n)
    }

    /// Proximal end of the core.
    pub fn core_start(&self) -> Vec3 {
        match self.direction() {
            Some(d) => self.tip - d * self.core_length,
            None => self.tip,
        }
    }

    /// Length of the core lying inside `cell`, mm.
    pub fn core_length_in(&self, cell: &Aabb) -> f64 {
        segment_cell_length(&self.core_start(), &self.tip, cell)
    }
}

/// Expresses a trajectory in the reference frame through `to_reference`.
pub fn map_trajectory(traj: &NeedleTrajectory, to_reference: &RigidTransform) -> NeedleTrajectory {
    NeedleTrajectory {
        entry: to_reference.apply_point(&traj.entry),
        tip: to_reference.apply_point(&traj.tip),
        ..traj.clone()
    }
}

/// Length (mm) of the part of segment `a → b` inside `cell`, by slab
/// clipping against the six faces.
pub fn segment_cell_length(a: &Vec3, b: &Vec3, cell: &Aabb) -> f64 {
    let d = b - a;
    let mut t0 = 0.0f64;
    let mut t1 = 1.0f64;
    for axis in 0..3 {
        if d[axis] == 0.0 {
            if a[axis] < cell.min[axis] || a[axis] > cell.max[axis] {
                return 0.0;
            }
            continue;
        }
        let inv = 1.0 / d[axis];
        let mut ta = (cell.min[axis] - a[axis]) * inv;
        let mut tb = (cell.max[axis] - a[axis]) * inv;
        if ta > tb {
            std::mem::swap(&mut ta, &mut tb);
        }
        t0 = t0.max(ta);
        t1 = t1.min(tb);
        if t0 >= t1 {
            return 0.0;
        }
    }
    (t1 - t0) * d.norm()
}

/// Bounding box cut into 12 congruent target cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetGrid {
    bbox: Aabb,
}

impl TargetGrid {
    pub const COLUMNS: usize = 4;
    pub const LEVELS: usize = 3;

    pub fn new(bbox: Aabb) -> Result<Self> {
        for axis in 0..3 {
            let ext = bbox.max[axis] - bbox.min[axis];
            if !(ext.is_finite() && ext > 0.0) {
                return Err(FusionError::DegenerateBox { axis });
            }
        }
        Ok(TargetGrid { bbox })
    }

    pub fn bbox(&self) -> &Aabb {
        &self.bbox
    }

    fn x_edge(&self, slot: usize) -> f64 {
        edge(self.bbox.min[0], self.bbox.max[0], slot, Self::COLUMNS)
    }

    fn z_edge(&self, slot: usize) -> f64 {
        edge(self.bbox.min[2], self.bbox.max[2], slot, Self::LEVELS)
    }

    pub fn cell(&self, label: TargetLabel) -> Aabb {
        let (x, z) = (label.x_slot(), label.z_slot());
        Aabb::new(
            [self.x_edge(x), self.bbox.min[1], self.z_edge(z)],
            [self.x_edge(x + 1), self.bbox.max[1], self.z_edge(z + 1)],
        )
    }

    pub fn cells(&self) -> impl Iterator<Item = (TargetLabel, Aabb)> + '_ {
        TargetLabel::all().map(move |l| (l, self.cell(l)))
    }

    /// The single cell containing `p`, or `None` outside the box. Points on
    /// an internal face belong to the cell on the greater-coordinate side.
    pub fn locate(&self, p: &Vec3) -> Option<TargetLabel> {
        if !self.bbox.contains(p) {
            return None;
        }
        let slot = |v: f64, lo: f64, hi: f64, n: usize, edge_at: &dyn Fn(usize) -> f64| {
            let mut s = (((v - lo) / (hi - lo)) * n as f64).floor().clamp(0.0, (n - 1) as f64) as usize;
            // floor() can land one slot off next to an edge
            while s > 0 && v < edge_at(s) {
                s -= 1;
            }
            while s + 1 < n && v >= edge_at(s + 1) {
                s += 1;
            }
            s
        };
        let x = slot(p.x, self.bbox.min[0], self.bbox.max[0], Self::COLUMNS, &|s| self.x_edge(s));
        let z = slot(p.z, self.bbox.min[2], self.bbox.max[2], Self::LEVELS, &|s| self.z_edge(s));
        Some(TargetLabel::from_slots(x, z))
    }
}

fn edge(lo: f64, hi: f64, slot: usize, n: usize) -> f64 {
    if slot == n {
        hi
    } else {
        lo + (hi - lo) * slot as f64 / n as f64
    }
}

/// A biopsy either mapped into the reference frame or left out because its
/// volume could not be fused.
#[derive(Debug, Clone, PartialEq)]
pub enum BiopsyOutcome {
    Mapped(NeedleTrajectory),
    Excluded { volume_id: String, reason: String },
}

/// Maps a trajectory through a registration result. The result's transform
/// goes from the reference frame to the biopsy volume, so its inverse is
/// applied. Missing or failed registrations give `MissingTransform`.
pub fn resolve_trajectory(traj: &NeedleTrajectory, registration: Option<&RegistrationResult>) -> Result<NeedleTrajectory> {
    match registration {
        Some(r) if r.succeeded => Ok(map_trajectory(traj, &r.transform.invert())),
        _ => Err(FusionError::MissingTransform(traj.volume_id.clone())),
    }
}

/// Aggregated counts for one reported target (or the total row).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TargetStats {
    pub n_toward: usize,
    pub n_inside: usize,
    /// Sum over inside biopsies of the core length inside the planned cell.
    pub sum_len_inside: f64,
    /// Sum over inside biopsies of that length divided by the core length.
    pub sum_frac_inside: f64,
}

impl TargetStats {
    pub fn pct_inside(&self) -> f64 {
        ratio(self.n_inside as f64, self.n_toward as f64) * 100.0
    }

    pub fn mean_len_inside(&self) -> f64 {
        ratio(self.sum_len_inside, self.n_inside as f64)
    }

    pub fn pct_len_inside(&self) -> f64 {
        ratio(self.sum_frac_inside, self.n_inside as f64) * 100.0
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// Rounds half away from zero to an integer, as printed in reports.
pub fn report_round(v: f64) -> i64 {
    v.round() as i64
}

pub const REPORT_HEADER: &str = "target,n_toward,n_inside,pct_inside,mean_len_inside_mm,pct_len_inside";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsReport {
    /// Rows in the order of [`TargetCode::ALL`].
    pub rows: Vec<(TargetCode, TargetStats)>,
    pub total: TargetStats,
    /// Biopsies left out for lack of a successful fusion.
    pub excluded: usize,
}

impl MetricsReport {
    pub fn row(&self, code: TargetCode) -> &TargetStats {
        &self.rows[code.position()].1
    }

    pub fn is_empty(&self) -> bool {
        self.total.n_toward == 0
    }

    /// CSV with rows BL, BP, ML, MP, AL, AP, TOTAL; header only when no
    /// biopsy was scored.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        if self.is_empty() {
            return out;
        }
        let line = |name: &str, s: &TargetStats| {
            format!(
                "{name},{},{},{},{},{}\n",
                s.n_toward,
                s.n_inside,
                report_round(s.pct_inside()),
                report_round(s.mean_len_inside()),
                report_round(s.pct_len_inside())
            )
        };
        for (code, stats) in &self.rows {
            out.push_str(&line(&code.to_string(), stats));
        }
        out.push_str(&line("TOTAL", &self.total));
        out
    }
}

/// Scores every mapped biopsy against its planned cell.
pub fn evaluate_session(outcomes: &[BiopsyOutcome], grid: &TargetGrid) -> MetricsReport {
    // per code: (n_toward, inside lengths, inside fractions)
    let mut acc: Vec<(usize, Vec<f64>, Vec<f64>)> = vec![(0, Vec::new(), Vec::new()); TargetCode::ALL.len()];
    let mut excluded = 0;
    for outcome in outcomes {
        let traj = match outcome {
            BiopsyOutcome::Mapped(t) => t,
            BiopsyOutcome::Excluded { .. } => {
                excluded += 1;
                continue;
            }
        };
        let slot = &mut acc[traj.planned_target.code().position()];
        slot.0 += 1;
        let len = traj.core_length_in(&grid.cell(traj.planned_target));
        if len > 0.0 {
            slot.1.push(len);
            slot.2.push(len / traj.core_length);
        }
    }

    // sorted sums make the report independent of biopsy order
    let sorted_sum = |v: &[f64]| {
        let mut v = v.to_vec();
        v.sort_by(f64::total_cmp);
        v.iter().sum::<f64>()
    };
    let rows: Vec<(TargetCode, TargetStats)> = TargetCode::ALL
        .iter()
        .zip(&acc)
        .map(|(code, (n, lens, fracs))| {
            (
                *code,
                TargetStats {
                    n_toward: *n,
                    n_inside: lens.len(),
                    sum_len_inside: sorted_sum(lens),
                    sum_frac_inside: sorted_sum(fracs),
                },
            )
        })
        .collect();
    let all_lens: Vec<f64> = acc.iter().flat_map(|a| a.1.iter().copied()).collect();
    let all_fracs: Vec<f64> = acc.iter().flat_map(|a| a.2.iter().copied()).collect();
    let total = TargetStats {
        n_toward: acc.iter().map(|a| a.0).sum(),
        n_inside: all_lens.len(),
        sum_len_inside: sorted_sum(&all_lens),
        sum_frac_inside: sorted_sum(&all_fracs),
    };
    MetricsReport { rows, total, excluded }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const RBL: TargetLabel = TargetLabel::new(Side::Right, Level::Base, Column::Lateral);

    fn grid() -> TargetGrid {
        TargetGrid::new(Aabb::new([0.0, 0.0, 0.0], [40.0, 30.0, 36.0])).unwrap()
    }

    #[test]
    fn labels_round_trip_and_are_distinct() {
        let all: Vec<TargetLabel> = TargetLabel::all().collect();
        assert_eq!(all.len(), 12);
        let mut set = std::collections::HashSet::new();
        for l in &all {
            assert!(set.insert(*l));
            assert_eq!(l.to_string().parse::<TargetLabel>().unwrap(), *l);
        }
        assert_eq!(RBL.to_string(), "RBL");
        assert!("XBL".parse::<TargetLabel>().is_err());
        assert!("RZL".parse::<TargetLabel>().is_err());
    }

    #[test]
    fn equal_cells() {
        let g = grid();
        let mut total = 0.0;
        for (_, cell) in g.cells() {
            assert_abs_diff_eq!(cell.size()[0], 10.0);
            assert_abs_diff_eq!(cell.size()[1], 30.0);
            assert_abs_diff_eq!(cell.size()[2], 12.0);
            total += cell.volume();
        }
        assert_eq!(total, g.bbox().volume());
        // left lateral apex sits at the low-x, low-z corner
        let lal = g.cell(TargetLabel::new(Side::Left, Level::Apex, Column::Lateral));
        assert_eq!(lal.min, [0.0, 0.0, 0.0]);
        assert_eq!(g.cell(RBL).max, [40.0, 30.0, 36.0]);
    }

    #[test]
    fn degenerate_box_rejected() {
        let err = TargetGrid::new(Aabb::new([0.0, 0.0, 0.0], [1.0, 0.0, 1.0])).unwrap_err();
        assert!(matches!(err, FusionError::DegenerateBox { axis: 1 }));
    }

    #[test]
    fn point_membership_is_a_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..20 {
            let min = [rng.gen_range(-50.0..0.0), rng.gen_range(-50.0..0.0), rng.gen_range(-50.0..0.0)];
            let max = [min[0] + rng.gen_range(1.0..60.0), min[1] + rng.gen_range(1.0..60.0), min[2] + rng.gen_range(1.0..60.0)];
            let g = TargetGrid::new(Aabb::new(min, max)).unwrap();
            let cells: Vec<_> = g.cells().collect();
            for _ in 0..5000 {
                let p = Vec3::new(
                    rng.gen_range(min[0] - 5.0..max[0] + 5.0),
                    rng.gen_range(min[1] - 5.0..max[1] + 5.0),
                    rng.gen_range(min[2] - 5.0..max[2] + 5.0),
                );
                // half-open membership except on the outer max faces
                let owners: Vec<TargetLabel> = cells
                    .iter()
                    .filter(|(_, c)| {
                        (0..3).all(|a| p[a] >= c.min[a] && (p[a] < c.max[a] || (c.max[a] == max[a] && p[a] <= max[a])))
                    })
                    .map(|(l, _)| *l)
                    .collect();
                match g.locate(&p) {
                    Some(l) => assert_eq!(owners, vec![l]),
                    None => assert!(owners.is_empty()),
                }
            }
        }
    }

    #[test]
    fn clipping_cases() {
        let cube = Aabb::new([0.0; 3], [20.0; 3]);
        let inside = segment_cell_length(&Vec3::new(5.0, 5.0, 2.0), &Vec3::new(5.0, 5.0, 17.0), &cube);
        assert_abs_diff_eq!(inside, 15.0, epsilon = 1e-12);
        assert_eq!(segment_cell_length(&Vec3::new(30.0, 5.0, 2.0), &Vec3::new(30.0, 5.0, 17.0), &cube), 0.0);
        assert_eq!(segment_cell_length(&Vec3::new(-5.0, 30.0, 2.0), &Vec3::new(25.0, 30.0, 17.0), &cube), 0.0);
        let diag = segment_cell_length(&Vec3::zeros(), &Vec3::repeat(20.0), &cube);
        assert_abs_diff_eq!(diag, 20.0 * 3f64.sqrt(), epsilon = 1e-12);
        let through = segment_cell_length(&Vec3::new(-10.0, 10.0, 10.0), &Vec3::new(30.0, 10.0, 10.0), &cube);
        assert_abs_diff_eq!(through, 20.0, epsilon = 1e-12);
    }

    #[test]
    fn core_clipping_uses_distal_portion() {
        let cube = Aabb::new([0.0; 3], [20.0; 3]);
        // needle 40 mm long, tip 5 mm into the cube, core 15 mm
        let t = NeedleTrajectory::new(Vec3::new(10.0, 10.0, -35.0), Vec3::new(10.0, 10.0, 5.0), 15.0, "b1", RBL).unwrap();
        assert_abs_diff_eq!(t.core_length_in(&cube), 5.0, epsilon = 1e-12);
        assert!(NeedleTrajectory::new(Vec3::zeros(), Vec3::x(), 2.0, "b", RBL).is_err());
        assert!(NeedleTrajectory::new(Vec3::zeros(), Vec3::x(), 0.0, "b", RBL).is_err());
    }

    #[test]
    fn mapping_trajectories() {
        let t = NeedleTrajectory::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 6.0, 25.0), 18.0, "b2", RBL).unwrap();
        assert_eq!(map_trajectory(&t, &RigidTransform::identity()), t);
        let shifted = map_trajectory(&t, &RigidTransform::from_translation(Vec3::new(0.0, 0.0, 5.0)));
        assert_eq!(shifted.entry, t.entry + Vec3::new(0.0, 0.0, 5.0));
        assert_eq!(shifted.tip, t.tip + Vec3::new(0.0, 0.0, 5.0));
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..200 {
            let r = RigidTransform::from_euler(
                rng.gen_range(-180.0..180.0),
                rng.gen_range(-89.0..89.0),
                rng.gen_range(-180.0..180.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            );
            let m = map_trajectory(&t, &r);
            assert_abs_diff_eq!(m.length(), t.length(), epsilon = 1e-9);
            assert_eq!(m.core_length, t.core_length);
        }
    }

    #[test]
    fn cell_lengths_sum_to_at_most_core() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..1000 {
            let tip = Vec3::new(rng.gen_range(-10.0..50.0), rng.gen_range(-10.0..40.0), rng.gen_range(-10.0..46.0));
            let dir = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let core = rng.gen_range(5.0..25.0);
            let t = NeedleTrajectory::new(tip - dir * 40.0, tip, core, "x", RBL).unwrap();
            let sum: f64 = g.cells().map(|(_, c)| t.core_length_in(&c)).sum();
            assert!(sum <= core + 1e-9);
            let fully_inside = g.bbox().contains(&tip) && g.bbox().contains(&t.core_start());
            if fully_inside {
                assert_abs_diff_eq!(sum, core, epsilon = 1e-9);
            } else {
                assert!(sum < core);
            }
        }
    }

    #[test]
    fn empty_session_reports_zero() {
        let r = evaluate_session(&[], &grid());
        assert_eq!(r.total, TargetStats::default());
        assert_eq!(r.rows.len(), 6);
        assert_eq!(r.to_csv(), format!("{REPORT_HEADER}\n"));
    }

    #[test]
    fn single_biopsy_inside() {
        let g = grid();
        let cell = g.cell(RBL);
        let c = cell.center();
        // 20 mm core along y, fully inside the 30 mm deep cell
        let t = NeedleTrajectory::new(
            Vec3::new(c.x, -20.0, c.z),
            Vec3::new(c.x, 25.0, c.z),
            20.0,
            "b1",
            RBL,
        )
        .unwrap();
        let r = evaluate_session(&[BiopsyOutcome::Mapped(t)], &g);
        let bl = r.row("BL".parse().unwrap());
        assert_eq!((bl.n_toward, bl.n_inside), (1, 1));
        assert_abs_diff_eq!(bl.pct_inside(), 100.0);
        assert_abs_diff_eq!(bl.mean_len_inside(), 20.0, epsilon = 1e-12);
        assert_abs_diff_eq!(bl.pct_len_inside(), 100.0, epsilon = 1e-9);
        assert!(r.to_csv().contains("BL,1,1,100,20,100\n"));
        assert!(r.to_csv().ends_with("TOTAL,1,1,100,20,100\n"));
    }

    #[test]
    fn excluded_and_missing_transforms() {
        let t = NeedleTrajectory::new(Vec3::zeros(), Vec3::new(0.0, 0.0, 30.0), 20.0, "b9", RBL).unwrap();
        assert!(matches!(resolve_trajectory(&t, None), Err(FusionError::MissingTransform(id)) if id == "b9"));
        let r = evaluate_session(
            &[BiopsyOutcome::Excluded {
                volume_id: "b9".into(),
                reason: "fusion failed".into(),
            }],
            &grid(),
        );
        assert_eq!(r.excluded, 1);
        assert_eq!(r.total.n_toward, 0);
    }

    #[test]
    fn rounding_matches_report_convention() {
        assert_eq!(report_round(16.0 / 29.0 * 100.0), 55);
        assert_eq!(report_round(108.0 / 172.0 * 100.0), 63);
        assert_eq!(report_round(62.5), 63);
    }
}
