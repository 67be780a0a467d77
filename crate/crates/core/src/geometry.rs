//! Rigid 6-DOF transforms.
//!
//! World frames are right-handed with millimetre units: x runs from the
//! patient's left to right, y from posterior to anterior and z from apex to
//! base. Euler angles at the API boundary are intrinsic Z-Y-X in degrees.

use nalgebra::{Matrix3, Quaternion, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FusionError, Result};

pub type Vec3 = Vector3<f64>;

/// Tolerance used when accepting a matrix as a rigid transform.
const RIGID_TOLERANCE: f64 = 1e-6;

/// A rotation followed by a translation: `p -> R p + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    /// Builds a transform from a (not necessarily normalized) quaternion.
    pub fn new(rotation: Quaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: UnitQuaternion::from_quaternion(rotation),
            translation,
        }
    }

    pub fn from_parts(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation: renormalize(rotation),
            translation,
        }
    }

    pub fn from_translation(translation: Vec3) -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation,
        }
    }

    /// Rotation of `angle_deg` about `axis` through the origin.
    pub fn from_axis_angle(axis: Vec3, angle_deg: f64) -> Self {
        let rotation = match Unit::try_new(axis, 1e-15) {
            Some(axis) => UnitQuaternion::from_axis_angle(&axis, angle_deg.to_radians()),
            None => UnitQuaternion::identity(),
        };
        Self::from_parts(rotation, Vec3::zeros())
    }

    /// Rotation vector (axis times angle, degrees) plus translation (mm).
    pub fn from_rotation_vector(rotvec_deg: Vec3, translation: Vec3) -> Self {
        let rotation = UnitQuaternion::from_scaled_axis(rotvec_deg.map(f64::to_radians));
        Self::from_parts(rotation, translation)
    }

    /// Intrinsic Z-Y-X Euler angles in degrees: `R = Rz(rz) * Ry(ry) * Rx(rx)`.
    pub fn from_euler(rx: f64, ry: f64, rz: f64, tx: f64, ty: f64, tz: f64) -> Self {
        let rotation = UnitQuaternion::from_euler_angles(
            rx.to_radians(),
            ry.to_radians(),
            rz.to_radians(),
        );
        Self::from_parts(rotation, Vec3::new(tx, ty, tz))
    }

    /// Inverse of [`RigidTransform::from_euler`]: `(rx, ry, rz)` in degrees.
    pub fn euler_deg(&self) -> [f64; 3] {
        let (rx, ry, rz) = self.rotation.euler_angles();
        [rx.to_degrees(), ry.to_degrees(), rz.to_degrees()]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        *self.rotation.to_rotation_matrix().matrix()
    }

    /// Rotation angle in degrees, in `[0, 180]`.
    pub fn rotation_angle_deg(&self) -> f64 {
        self.rotation.angle().to_degrees()
    }

    /// Rotation vector in degrees.
    pub fn rotation_vector_deg(&self) -> Vec3 {
        self.rotation.scaled_axis().map(f64::to_degrees)
    }

    pub fn apply_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn apply_vector(&self, v: &Vec3) -> Vec3 {
        self.rotation * v
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: renormalize(self.rotation * other.rotation),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn invert(&self) -> RigidTransform {
        let inv = self.rotation.inverse();
        RigidTransform {
            rotation: renormalize(inv),
            translation: -(inv * self.translation),
        }
    }

    pub fn to_matrix(&self) -> Matrix4 {
        let r = self.rotation_matrix();
        let t = self.translation;
        Matrix4([
            r[(0, 0)], r[(0, 1)], r[(0, 2)], t.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], t.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], t.z,
            0.0, 0.0, 0.0, 1.0,
        ])
    }

    /// Decomposes a homogeneous matrix, rejecting anything that is not a
    /// proper rigid motion.
    pub fn from_matrix(m: &Matrix4) -> Result<Self> {
        let e = &m.0;
        if e.iter().any(|v| !v.is_finite()) {
            return Err(FusionError::NotRigid("non-finite entry".into()));
        }
        if e[12] != 0.0 || e[13] != 0.0 || e[14] != 0.0 || e[15] != 1.0 {
            return Err(FusionError::NotRigid("last row must be 0 0 0 1".into()));
        }
        let r = Matrix3::new(e[0], e[1], e[2], e[4], e[5], e[6], e[8], e[9], e[10]);
        let gram = r.transpose() * r - Matrix3::identity();
        if gram.abs().max() > RIGID_TOLERANCE {
            return Err(FusionError::NotRigid("rotation block is not orthonormal".into()));
        }
        if (r.determinant() - 1.0).abs() > RIGID_TOLERANCE {
            return Err(FusionError::NotRigid("rotation block has determinant != +1".into()));
        }
        let rotation = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(r));
        Ok(Self::from_parts(rotation, Vec3::new(e[3], e[7], e[11])))
    }
}

fn renormalize(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(q.into_inner())
}

/// Row-major homogeneous 4×4 matrix, as stored in session and result files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Matrix4(pub [f64; 16]);

impl Matrix4 {
    pub fn identity() -> Self {
        RigidTransform::identity().to_matrix()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.0[row * 4 + col]
    }

    pub fn mul(&self, other: &Matrix4) -> Matrix4 {
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = (0..4).map(|k| self.get(r, k) * other.get(k, c)).sum();
            }
        }
        Matrix4(out)
    }
}

impl TryFrom<Vec<f64>> for Matrix4 {
    type Error = String;

    fn try_from(v: Vec<f64>) -> std::result::Result<Self, Self::Error> {
        let arr: [f64; 16] = v
            .try_into()
            .map_err(|v: Vec<f64>| format!("expected 16 matrix entries, found {}", v.len()))?;
        Ok(Matrix4(arr))
    }
}

impl From<Matrix4> for Vec<f64> {
    fn from(m: Matrix4) -> Self {
        m.0.to_vec()
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_matrix().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = Matrix4::deserialize(d)?;
        RigidTransform::from_matrix(&m).map_err(serde::de::Error::custom)
    }
}

/// Axis-aligned box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    /// From the `x0,x1,y0,y1,z0,z1` ordering used on the command line.
    pub fn from_extents(e: [f64; 6]) -> Self {
        Self::new([e[0], e[2], e[4]], [e[1], e[3], e[5]])
    }

    pub fn extents(&self) -> [f64; 6] {
        [self.min[0], self.max[0], self.min[1], self.max[1], self.min[2], self.max[2]]
    }

    pub fn size(&self) -> [f64; 3] {
        [
            self.max[0] - self.min[0],
            self.max[1] - self.min[1],
            self.max[2] - self.min[2],
        ]
    }

    pub fn volume(&self) -> f64 {
        self.size().iter().product()
    }

    pub fn center(&self) -> Vec3 {
        Vec3::new(
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        )
    }

    /// Closed containment test.
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_transform(rng: &mut impl Rng) -> RigidTransform {
        RigidTransform::from_euler(
            rng.gen_range(-180.0..180.0),
            rng.gen_range(-89.0..89.0),
            rng.gen_range(-180.0..180.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
        )
    }

    fn random_point(rng: &mut impl Rng) -> Vec3 {
        Vec3::new(
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
            rng.gen_range(-40.0..40.0),
        )
    }

    // Homogeneous multiply with plain arrays, independent of nalgebra.
    fn mat_apply(m: &Matrix4, p: &Vec3) -> Vec3 {
        let h = [p.x, p.y, p.z, 1.0];
        let mut out = [0.0; 4];
        for r in 0..4 {
            for c in 0..4 {
                out[r] += m.0[r * 4 + c] * h[c];
            }
        }
        Vec3::new(out[0], out[1], out[2])
    }

    // Gauss-Jordan inverse of a general 4x4.
    fn mat_inverse(m: &Matrix4) -> Matrix4 {
        let mut a = [[0.0f64; 8]; 4];
        for r in 0..4 {
            for c in 0..4 {
                a[r][c] = m.0[r * 4 + c];
            }
            a[r][4 + r] = 1.0;
        }
        for col in 0..4 {
            let pivot = (col..4)
                .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
                .unwrap();
            a.swap(col, pivot);
            let d = a[col][col];
            for v in a[col].iter_mut() {
                *v /= d;
            }
            for r in 0..4 {
                if r != col {
                    let f = a[r][col];
                    for c in 0..8 {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
        let mut out = [0.0; 16];
        for r in 0..4 {
            for c in 0..4 {
                out[r * 4 + c] = a[r][4 + c];
            }
        }
        Matrix4(out)
    }

    // Rodrigues formula for a unit axis.
    fn rodrigues(axis: Vec3, angle_rad: f64) -> [[f64; 3]; 3] {
        let (x, y, z) = (axis.x, axis.y, axis.z);
        let (s, c) = angle_rad.sin_cos();
        let t = 1.0 - c;
        [
            [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
            [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
            [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
        ]
    }

    fn mat3_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for r in 0..3 {
            for c in 0..3 {
                out[r][c] = (0..3).map(|k| a[r][k] * b[k][c]).sum();
            }
        }
        out
    }

    fn assert_same_action(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..20 {
            let p = random_point(&mut rng);
            assert_abs_diff_eq!(a.apply_point(&p), b.apply_point(&p), epsilon = tol);
        }
    }

    #[test]
    fn compose_with_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            assert_same_action(&t.compose(&t.invert()), &RigidTransform::identity(), 1e-9);
            assert_same_action(&t.invert().compose(&t), &RigidTransform::identity(), 1e-9);
            assert_same_action(&RigidTransform::identity().compose(&t), &t, 1e-9);
        }
    }

    #[test]
    fn compose_matches_matrix_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_transform(&mut rng);
            let b = random_transform(&mut rng);
            let expected = a.to_matrix().mul(&b.to_matrix());
            let got = a.compose(&b).to_matrix();
            for (g, e) in got.0.iter().zip(expected.0.iter()) {
                assert_abs_diff_eq!(g, e, epsilon = 1e-9);
            }
            let p = random_point(&mut rng);
            assert_abs_diff_eq!(
                a.compose(&b).apply_point(&p),
                a.apply_point(&b.apply_point(&p)),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn invert_matches_matrix_inverse() {
        assert_eq!(RigidTransform::identity().invert(), RigidTransform::identity());
        let inv = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0)).invert();
        assert_abs_diff_eq!(*inv.translation(), Vec3::new(-1.0, -2.0, -3.0), epsilon = 1e-15);
        assert_abs_diff_eq!(inv.rotation_angle_deg(), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let expected = mat_inverse(&t.to_matrix());
            for (g, e) in t.invert().to_matrix().0.iter().zip(expected.0.iter()) {
                assert_abs_diff_eq!(g, e, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn apply_point_basics() {
        let rz90 = RigidTransform::from_euler(0.0, 0.0, 90.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(
            rz90.apply_point(&Vec3::x()),
            Vec3::new(0.0, 1.0, 0.0),
            epsilon = 1e-12
        );
        let p = Vec3::new(3.0, -4.0, 5.5);
        assert_eq!(RigidTransform::identity().apply_point(&p), p);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let t = random_transform(&mut rng);
            let p = random_point(&mut rng);
            assert_abs_diff_eq!(t.apply_point(&p), mat_apply(&t.to_matrix(), &p), epsilon = 1e-9);
        }
    }

    #[test]
    fn euler_identity_and_probe_turn() {
        let id = RigidTransform::from_euler(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert_eq!(id.to_matrix(), Matrix4::identity());
        let turn = RigidTransform::from_euler(0.0, 0.0, 180.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(
            turn.apply_point(&Vec3::x()),
            Vec3::new(-1.0, 0.0, 0.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn euler_matches_axis_angle_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (rx, ry, rz) = (
                rng.gen_range(-180.0..180.0f64),
                rng.gen_range(-89.0..89.0f64),
                rng.gen_range(-180.0..180.0f64),
            );
            let tr = random_point(&mut rng);
            let t = RigidTransform::from_euler(rx, ry, rz, tr.x, tr.y, tr.z);
            let r = mat3_mul(
                &mat3_mul(
                    &rodrigues(Vec3::z(), rz.to_radians()),
                    &rodrigues(Vec3::y(), ry.to_radians()),
                ),
                &rodrigues(Vec3::x(), rx.to_radians()),
            );
            for _ in 0..100 {
                let p = random_point(&mut rng);
                let expected = Vec3::new(
                    r[0][0] * p.x + r[0][1] * p.y + r[0][2] * p.z + tr.x,
                    r[1][0] * p.x + r[1][1] * p.y + r[1][2] * p.z + tr.y,
                    r[2][0] * p.x + r[2][1] * p.y + r[2][2] * p.z + tr.z,
                );
                assert_abs_diff_eq!(t.apply_point(&p), expected, epsilon = 1e-9);
            }
            // round trip through the matrix form and the Euler decomposition
            let back = RigidTransform::from_matrix(&t.to_matrix()).unwrap();
            assert_same_action(&back, &t, 1e-9);
            let [ex, ey, ez] = t.euler_deg();
            let tt = t.translation();
            assert_same_action(&RigidTransform::from_euler(ex, ey, ez, tt.x, tt.y, tt.z), &t, 1e-9);
        }
    }

    #[test]
    fn from_matrix_rejects_non_rigid() {
        let mut m = Matrix4::identity();
        m.0[0] = 2.0;
        assert!(matches!(RigidTransform::from_matrix(&m), Err(FusionError::NotRigid(_))));
        let mut m = Matrix4::identity();
        m.0[0] = -1.0;
        assert!(RigidTransform::from_matrix(&m).is_err());
        let mut m = Matrix4::identity();
        m.0[14] = 0.5;
        assert!(RigidTransform::from_matrix(&m).is_err());
    }

    #[test]
    fn serde_uses_row_major_matrix() {
        let t = RigidTransform::from_translation(Vec3::new(1.0, 2.0, 3.0));
        let json = serde_json::to_string(&t).unwrap();
        assert_eq!(
            json,
            "[1.0,0.0,0.0,1.0,0.0,1.0,0.0,2.0,0.0,0.0,1.0,3.0,0.0,0.0,0.0,1.0]"
        );
        let back: RigidTransform = serde_json::from_str(&json).unwrap();
        assert_same_action(&back, &t, 1e-12);
        assert!(serde_json::from_str::<RigidTransform>("[1.0, 2.0]").is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn arb_transform() -> impl Strategy<Value = RigidTransform> {
            (
                -180.0..180.0f64,
                -89.0..89.0f64,
                -180.0..180.0f64,
                prop::array::uniform3(-50.0..50.0f64),
            )
                .prop_map(|(rx, ry, rz, t)| RigidTransform::from_euler(rx, ry, rz, t[0], t[1], t[2]))
        }

        fn arb_point() -> impl Strategy<Value = Vec3> {
            prop::array::uniform3(-40.0..40.0f64).prop_map(|a| Vec3::new(a[0], a[1], a[2]))
        }

        proptest! {
            #[test]
            fn associativity(a in arb_transform(), b in arb_transform(), c in arb_transform(), p in arb_point()) {
                let left = a.compose(&b).compose(&c).apply_point(&p);
                let right = a.compose(&b.compose(&c)).apply_point(&p);
                prop_assert!((left - right).norm() < 1e-9);
            }

            #[test]
            fn isometry(t in arb_transform(), p in arb_point(), q in arb_point()) {
                let d0 = (p - q).norm();
                let d1 = (t.apply_point(&p) - t.apply_point(&q)).norm();
                prop_assert!((d0 - d1).abs() < 1e-9);
            }

            #[test]
            fn unit_quaternion_and_orthonormal(a in arb_transform(), b in arb_transform()) {
                let c = a.compose(&b).invert();
                prop_assert!((c.rotation().norm() - 1.0).abs() < 1e-9);
                let r = c.rotation_matrix();
                prop_assert!((r.transpose() * r - Matrix3::identity()).abs().max() < 1e-9);
                prop_assert!((r.determinant() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn matrix_of_composition(a in arb_transform(), b in arb_transform()) {
                let lhs = a.compose(&b).to_matrix();
                let rhs = a.to_matrix().mul(&b.to_matrix());
                for (x, y) in lhs.0.iter().zip(rhs.0.iter()) {
                    prop_assert!((x - y).abs() < 1e-9);
                }
            }
        }
    }
}
