//! Rigid-body pose algebra.
//!
//! Rotations are stored as 3x3 matrices so that trajectory conversions are
//! literal matrix products. The network-facing encoding is translation plus
//! the first two rotation columns (the continuous "6D" parameterization),
//! decoded with Gram-Schmidt.

use std::ops::Mul;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Constructors accept matrices that are orthonormal up to this tolerance and
/// re-orthonormalize them; anything further off is rejected.
pub const CONSTRUCTOR_TOLERANCE: f64 = 1e-6;

/// Minimum angle between the two encoded rotation columns.
pub const MIN_COLUMN_ANGLE: f64 = 1e-6;

fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross(a: &Vec3, b: &Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: &Vec3) -> f64 {
    dot(a, a).sqrt()
}

fn scale(a: &Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn sub(a: &Vec3, b: &Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// An element of SO(3), row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation3 {
    m: [[f64; 3]; 3],
}

impl Rotation3 {
    pub const IDENTITY: Rotation3 = Rotation3 {
        m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
    };

    /// Validates and re-orthonormalizes a row-major matrix.
    pub fn new(m: [[f64; 3]; 3]) -> Result<Self> {
        if m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidRotation("non-finite entry".into()));
        }
        let raw = Rotation3 { m };
        let err = raw.orthonormality_error();
        if err > CONSTRUCTOR_TOLERANCE {
            return Err(Error::InvalidRotation(format!(
                "orthonormality error {err:.3e} exceeds {CONSTRUCTOR_TOLERANCE:.0e}"
            )));
        }
        Self::from_columns(&raw.column(0), &raw.column(1))
    }

    /// Like [`Rotation3::new`] but keeps the entries bit-for-bit, so stored
    /// matrices reload exactly.
    pub fn from_matrix_exact(m: [[f64; 3]; 3]) -> Result<Self> {
        Self::new(m)?;
        Ok(Rotation3 { m })
    }

    /// Rotation about the z axis by `angle` radians (counter-clockwise).
    pub fn rz(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Rotation3 {
            m: [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    /// Gram-Schmidt on two (not necessarily unit) column vectors; the third
    /// column is their cross product.
    pub fn from_columns(c0: &Vec3, c1: &Vec3) -> Result<Self> {
        let n0 = norm(c0);
        let n1 = norm(c1);
        if !(n0.is_finite() && n1.is_finite()) || n0 == 0.0 || n1 == 0.0 {
            return Err(Error::DegenerateRotation);
        }
        let sin_angle = norm(&cross(c0, c1)) / (n0 * n1);
        if sin_angle.is_nan() || sin_angle < MIN_COLUMN_ANGLE.sin() {
            return Err(Error::DegenerateRotation);
        }
        let e0 = scale(c0, 1.0 / n0);
        let proj = sub(c1, &scale(&e0, dot(&e0, c1)));
        let e1 = scale(&proj, 1.0 / norm(&proj));
        let e2 = cross(&e0, &e1);
        Ok(Rotation3 {
            m: [[e0[0], e1[0], e2[0]], [e0[1], e1[1], e2[1]], [e0[2], e1[2], e2[2]]],
        })
    }

    /// Uniform sample from SO(3) (Shoemake's quaternion method).
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let u3: f64 = rng.random::<f64>() * std::f64::consts::TAU;
        let a = (1.0 - u1).sqrt();
        let b = u1.sqrt();
        let (w, x, y, z) = (a * u2.sin(), a * u2.cos(), b * u3.sin(), b * u3.cos());
        let m = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - z * w), 2.0 * (x * z + y * w)],
            [2.0 * (x * y + z * w), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - x * w)],
            [2.0 * (x * z - y * w), 2.0 * (y * z + x * w), 1.0 - 2.0 * (x * x + y * y)],
        ];
        let raw = Rotation3 { m };
        Self::from_columns(&raw.column(0), &raw.column(1)).unwrap_or(Self::IDENTITY)
    }

    pub fn matrix(&self) -> &[[f64; 3]; 3] {
        &self.m
    }

    pub fn column(&self, j: usize) -> Vec3 {
        [self.m[0][j], self.m[1][j], self.m[2][j]]
    }

    pub fn transpose(&self) -> Self {
        let m = &self.m;
        Rotation3 {
            m: [
                [m[0][0], m[1][0], m[2][0]],
                [m[0][1], m[1][1], m[2][1]],
                [m[0][2], m[1][2], m[2][2]],
            ],
        }
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        let m = &self.m;
        [
            m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
            m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
            m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2],
        ]
    }

    pub fn determinant(&self) -> f64 {
        dot(&self.column(0), &cross(&self.column(1), &self.column(2)))
    }

    /// Max deviation of `RᵀR` from the identity, combined with `|det − 1|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let d = dot(&self.column(i), &self.column(j)) - if i == j { 1.0 } else { 0.0 };
                err = err.max(d.abs());
            }
        }
        err.max((self.determinant() - 1.0).abs())
    }

    /// Heading about z of the rotated x axis.
    pub fn yaw(&self) -> f64 {
        self.m[1][0].atan2(self.m[0][0])
    }

    pub fn max_abs_diff(&self, other: &Rotation3) -> f64 {
        self.m
            .iter()
            .flatten()
            .zip(other.m.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Mul for Rotation3 {
    type Output = Rotation3;

    fn mul(self, rhs: Rotation3) -> Rotation3 {
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][0] * rhs.m[0][j] + self.m[i][1] * rhs.m[1][j] + self.m[i][2] * rhs.m[2][j];
            }
        }
        Rotation3 { m }
    }
}

/// A rigid transform in SE(3); translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rot: Rotation3,
    pub trans: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        rot: Rotation3::IDENTITY,
        trans: [0.0; 3],
    };

    pub fn new(rot: Rotation3, trans: Vec3) -> Result<Self> {
        if trans.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("pose translation".into()));
        }
        Ok(Pose { rot, trans })
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Pose {
            rot: Rotation3::IDENTITY,
            trans: [x, y, z],
        }
    }

    pub fn rz(angle: f64) -> Self {
        Pose {
            rot: Rotation3::rz(angle),
            trans: [0.0; 3],
        }
    }

    /// Planar pose at height `z`, heading `yaw` about z.
    pub fn planar(x: f64, y: f64, z: f64, yaw: f64) -> Self {
        Pose {
            rot: Rotation3::rz(yaw),
            trans: [x, y, z],
        }
    }

    /// `self · other` as homogeneous matrices.
    pub fn compose(&self, other: &Pose) -> Pose {
        let t = self.rot.apply(&other.trans);
        Pose {
            rot: self.rot * other.rot,
            trans: [t[0] + self.trans[0], t[1] + self.trans[1], t[2] + self.trans[2]],
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rot.transpose();
        let t = rt.apply(&self.trans);
        Pose {
            rot: rt,
            trans: [-t[0], -t[1], -t[2]],
        }
    }

    pub fn act_on_point(&self, x: &Vec3) -> Vec3 {
        let r = self.rot.apply(x);
        [r[0] + self.trans[0], r[1] + self.trans[1], r[2] + self.trans[2]]
    }

    pub fn to_vector(&self) -> PoseVector {
        let c0 = self.rot.column(0);
        let c1 = self.rot.column(1);
        PoseVector([
            self.trans[0],
            self.trans[1],
            self.trans[2],
            c0[0],
            c0[1],
            c0[2],
            c1[0],
            c1[1],
            c1[2],
        ])
    }

    /// Homogeneous 4x4 matrix, row-major.
    pub fn to_matrix(&self) -> [[f64; 4]; 4] {
        let m = self.rot.matrix();
        let t = self.trans;
        [
            [m[0][0], m[0][1], m[0][2], t[0]],
            [m[1][0], m[1][1], m[1][2], t[1]],
            [m[2][0], m[2][1], m[2][2], t[2]],
            [0.0, 0.0, 0.0, 1.0],
        ]
    }

    /// Largest absolute entry difference of the homogeneous matrices.
    pub fn max_abs_diff(&self, other: &Pose) -> f64 {
        let dt = self
            .trans
            .iter()
            .zip(other.trans.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        dt.max(self.rot.max_abs_diff(&other.rot))
    }

    /// True when the pose is a rotation about z with translation at height `z`.
    pub fn is_planar(&self, z: f64, tol: f64) -> bool {
        let m = self.rot.matrix();
        (self.trans[2] - z).abs() <= tol
            && m[0][2].abs() <= tol
            && m[1][2].abs() <= tol
            && m[2][0].abs() <= tol
            && m[2][1].abs() <= tol
            && (m[2][2] - 1.0).abs() <= tol
    }

    pub fn distance_xy(&self, other: &Pose) -> f64 {
        let dx = self.trans[0] - other.trans[0];
        let dy = self.trans[1] - other.trans[1];
        dx.hypot(dy)
    }
}

impl Mul for Pose {
    type Output = Pose;

    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}

impl Mul for &Pose {
    type Output = Pose;

    fn mul(self, rhs: &Pose) -> Pose {
        self.compose(rhs)
    }
}

/// `[t; col0(R); col1(R)]`, the 9-dimensional pose encoding consumed by the
/// denoiser.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseVector(pub [f64; 9]);

impl PoseVector {
    pub fn to_pose(&self) -> Result<Pose> {
        let v = &self.0;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("pose vector".into()));
        }
        let rot = Rotation3::from_columns(&[v[3], v[4], v[5]], &[v[6], v[7], v[8]])?;
        Ok(Pose {
            rot,
            trans: [v[0], v[1], v[2]],
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Convenience wrapper for [`Pose::to_vector`].
pub fn pose_to_vector(p: &Pose) -> PoseVector {
    p.to_vector()
}

/// Convenience wrapper for [`PoseVector::to_pose`].
pub fn vector_to_pose(v: &PoseVector) -> Result<Pose> {
    v.to_pose()
}

/// Deterministic pose sample: translation uniform in `[-bound, bound]^3`
/// (z = 0 when `full_rotation` is false), rotation uniform over SO(3) or
/// over rotations about z.
pub fn random_pose(seed: u64, trans_bound: f64, full_rotation: bool) -> Pose {
    assert!(trans_bound > 0.0, "trans_bound must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_pose(&mut rng, trans_bound, full_rotation)
}

/// Same distribution as [`random_pose`], drawing from a caller-owned rng.
pub fn sample_pose<R: Rng + ?Sized>(rng: &mut R, trans_bound: f64, full_rotation: bool) -> Pose {
    let mut t = [0.0; 3];
    for v in t.iter_mut() {
        *v = rng.random_range(-trans_bound..=trans_bound);
    }
    let rot = if full_rotation {
        Rotation3::random(rng)
    } else {
        t[2] = 0.0;
        Rotation3::rz(rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
    };
    Pose { rot, trans: t }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    // Independent oracle: plain 4x4 homogeneous products.
    fn matmul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut c = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    c[i][j] += a[i][k] * b[k][j];
                }
            }
        }
        c
    }

    fn max_diff4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> f64 {
        a.iter()
            .flatten()
            .zip(b.iter().flatten())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn compose_examples() {
        let p = random_pose(3, 1.0, true);
        assert!(Pose::IDENTITY.compose(&p).max_abs_diff(&p) < 1e-15);

        let a = Pose::from_translation(1.0, 0.0, 0.0);
        let b = Pose::from_translation(2.0, 0.0, 0.0);
        let c = a.compose(&b);
        assert!(max_diff4(&c.to_matrix(), &matmul4(&a.to_matrix(), &b.to_matrix())) < 1e-15);
        assert!(c.max_abs_diff(&Pose::from_translation(3.0, 0.0, 0.0)) < 1e-15);

        let r = Pose::rz(FRAC_PI_2);
        let t = Pose::from_translation(0.0, 1.0, 0.0);
        let c = r.compose(&t);
        assert!(max_diff4(&c.to_matrix(), &matmul4(&r.to_matrix(), &t.to_matrix())) < 1e-15);
        assert!((c.trans[0] + 1.0).abs() < 1e-12 && c.trans[1].abs() < 1e-12);
        assert!(c.rot.max_abs_diff(&Rotation3::rz(FRAC_PI_2)) < 1e-15);
    }

    #[test]
    fn inverse_examples() {
        assert_eq!(Pose::IDENTITY.inverse(), Pose::IDENTITY);
        let t = Pose::from_translation(1.0, 2.0, 3.0).inverse();
        assert!(t.max_abs_diff(&Pose::from_translation(-1.0, -2.0, -3.0)) < 1e-15);
        let r = Pose::rz(FRAC_PI_2).inverse();
        assert!(r.max_abs_diff(&Pose::rz(-FRAC_PI_2)) < 1e-15);
    }

    #[test]
    fn act_on_point_examples() {
        assert_eq!(Pose::IDENTITY.act_on_point(&[1.0, 1.0, 1.0]), [1.0, 1.0, 1.0]);
        assert_eq!(
            Pose::from_translation(1.0, 0.0, 0.0).act_on_point(&[0.0; 3]),
            [1.0, 0.0, 0.0]
        );
        let p = Pose::rz(FRAC_PI_2).act_on_point(&[1.0, 0.0, 0.0]);
        assert!(p[0].abs() < 1e-15 && (p[1] - 1.0).abs() < 1e-15 && p[2] == 0.0);
    }

    #[test]
    fn vector_examples() {
        assert_eq!(
            Pose::IDENTITY.to_vector().0,
            [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(
            Pose::from_translation(1.0, 2.0, 3.0).to_vector().0,
            [1.0, 2.0, 3.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        );
        let v = Pose::rz(FRAC_PI_2).to_vector().0;
        let expected = [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, -1.0, 0.0, 0.0];
        for (a, b) in v.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-15);
        }
        let id = PoseVector([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).to_pose().unwrap();
        assert_eq!(id, Pose::IDENTITY);
        let bad = PoseVector([0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0]).to_pose();
        assert!(matches!(bad, Err(Error::DegenerateRotation)));
    }

    #[test]
    fn vector_round_trip_many() {
        for seed in 0..1000 {
            let p = random_pose(seed, 2.0, true);
            let q = p.to_vector().to_pose().unwrap();
            assert!(p.max_abs_diff(&q) < 1e-7, "seed {seed}");
        }
    }

    #[test]
    fn decode_tolerates_noise() {
        let p = random_pose(11, 1.0, true);
        let mut v = p.to_vector();
        for (i, x) in v.0.iter_mut().enumerate() {
            *x += 1e-3 * ((i as f64) - 4.0) / 4.0;
        }
        let q = v.to_pose().unwrap();
        assert!(q.rot.orthonormality_error() < 1e-12);
        assert!(p.max_abs_diff(&q) < 1e-2);
    }

    #[test]
    fn constructor_accepts_small_noise_rejects_large() {
        let mut m = *Rotation3::rz(0.3).matrix();
        m[0][0] += 1e-8;
        let r = Rotation3::new(m).unwrap();
        assert!(r.orthonormality_error() < 1e-9);
        m[0][0] += 1e-3;
        assert!(Rotation3::new(m).is_err());
    }

    #[test]
    fn random_pose_properties() {
        assert_eq!(random_pose(7, 1.0, true), random_pose(7, 1.0, true));
        let n = 10_000;
        let bound = 1.0;
        let mut mean = [0.0; 3];
        for seed in 0..n {
            let p = random_pose(seed, bound, true);
            assert!(p.rot.orthonormality_error() < 1e-9);
            for k in 0..3 {
                mean[k] += p.trans[k] / n as f64;
            }
        }
        // Uniform on [-b, b] has variance b^2 / 3.
        let sigma = (bound * bound / 3.0 / n as f64).sqrt();
        for m in mean {
            assert!(m.abs() < 3.0 * sigma, "mean {m} outside 3 sigma {sigma}");
        }
        let planar = random_pose(5, 1.0, false);
        assert!(planar.is_planar(0.0, 1e-12));
    }

    #[test]
    fn composition_laws() {
        for seed in 0..1000u64 {
            let a = random_pose(seed * 3, 1.0, true);
            let b = random_pose(seed * 3 + 1, 1.0, true);
            let c = random_pose(seed * 3 + 2, 1.0, true);
            assert!((a * b * c).max_abs_diff(&(a * (b * c))) < 1e-9);
            assert!((a * a.inverse()).max_abs_diff(&Pose::IDENTITY) < 1e-9);
            assert!((a.inverse() * a).max_abs_diff(&Pose::IDENTITY) < 1e-9);
            let x = [0.3, -0.2, 0.9];
            let lhs = (a * b).act_on_point(&x);
            let rhs = a.act_on_point(&b.act_on_point(&x));
            for k in 0..3 {
                assert!((lhs[k] - rhs[k]).abs() < 1e-9);
            }
        }
    }
}
