//! Absolute, relative and delta trajectory actions.
//!
//! With `T` the current gripper pose and `A_i` the absolute targets:
//!
//! * relative: `A_i = T · R_i`
//! * delta:    `A_i = T · D_0 · D_1 · … · D_i`
//!
//! A world transform `g` maps `T ↦ gT` and `A_i ↦ gA_i`. Relative and delta
//! actions only ever appear as right factors, so they are unchanged by `g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{Pose, PoseVector};

/// Columns per step in the flattened layout: 9 pose entries plus width.
pub const STEP_DIM: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Absolute,
    Relative,
    Delta,
}

impl ActionKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ActionKind::Absolute => "absolute",
            ActionKind::Relative => "relative",
            ActionKind::Delta => "delta",
        }
    }
}

/// Target pose plus gripper opening width (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperCommand {
    pub pose: Pose,
    pub width: f64,
}

impl GripperCommand {
    pub fn new(pose: Pose, width: f64) -> Self {
        GripperCommand {
            pose,
            width: width.max(0.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    kind: ActionKind,
    steps: Vec<GripperCommand>,
}

impl Trajectory {
    pub fn new(kind: ActionKind, steps: Vec<GripperCommand>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::ShapeMismatch("trajectory needs at least one step".into()));
        }
        if let Some(bad) = steps.iter().find(|s| !(s.width >= 0.0)) {
            return Err(Error::BadConfig(format!("negative gripper width {}", bad.width)));
        }
        Ok(Trajectory { kind, steps })
    }

    pub fn kind(&self) -> ActionKind {
        self.kind
    }

    pub fn steps(&self) -> &[GripperCommand] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn poses(&self) -> impl Iterator<Item = &Pose> {
        self.steps.iter().map(|s| &s.pose)
    }

    fn expect(&self, kind: ActionKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::WrongKind {
                expected: kind,
                got: self.kind,
            });
        }
        Ok(())
    }

    fn map_poses(&self, kind: ActionKind, f: impl FnMut(&GripperCommand) -> Pose) -> Trajectory {
        let mut f = f;
        Trajectory {
            kind,
            steps: self
                .steps
                .iter()
                .map(|s| GripperCommand {
                    pose: f(s),
                    width: s.width,
                })
                .collect(),
        }
    }

    /// Largest pose-entry or width difference between two trajectories of
    /// equal length; `f64::INFINITY` when lengths or kinds differ.
    pub fn max_abs_diff(&self, other: &Trajectory) -> f64 {
        if self.kind != other.kind || self.len() != other.len() {
            return f64::INFINITY;
        }
        self.steps
            .iter()
            .zip(other.steps.iter())
            .map(|(a, b)| a.pose.max_abs_diff(&b.pose).max((a.width - b.width).abs()))
            .fold(0.0, f64::max)
    }
}

pub fn abs_to_rel(anchor: &Pose, a: &Trajectory) -> Result<Trajectory> {
    a.expect(ActionKind::Absolute)?;
    let inv = anchor.inverse();
    Ok(a.map_poses(ActionKind::Relative, |s| inv.compose(&s.pose)))
}

pub fn rel_to_abs(anchor: &Pose, a: &Trajectory) -> Result<Trajectory> {
    a.expect(ActionKind::Relative)?;
    Ok(a.map_poses(ActionKind::Absolute, |s| anchor.compose(&s.pose)))
}

pub fn abs_to_delta(anchor: &Pose, a: &Trajectory) -> Result<Trajectory> {
    a.expect(ActionKind::Absolute)?;
    let mut prev = *anchor;
    Ok(a.map_poses(ActionKind::Delta, |s| {
        let d = prev.inverse().compose(&s.pose);
        prev = s.pose;
        d
    }))
}

/// `A_i = T · D_0 ⋯ D_i`: every delta advances the pose by one step.
pub fn delta_to_abs(anchor: &Pose, a: &Trajectory) -> Result<Trajectory> {
    a.expect(ActionKind::Delta)?;
    let mut acc = *anchor;
    Ok(a.map_poses(ActionKind::Absolute, |s| {
        acc = acc.compose(&s.pose);
        acc
    }))
}

/// Converts an absolute trajectory into `kind`, anchored at `anchor`.
pub fn from_absolute(anchor: &Pose, a: &Trajectory, kind: ActionKind) -> Result<Trajectory> {
    match kind {
        ActionKind::Absolute => {
            a.expect(ActionKind::Absolute)?;
            Ok(a.clone())
        }
        ActionKind::Relative => abs_to_rel(anchor, a),
        ActionKind::Delta => abs_to_delta(anchor, a),
    }
}

/// Reconstructs absolute poses from any kind, anchored at `anchor`.
pub fn to_absolute(anchor: &Pose, a: &Trajectory) -> Result<Trajectory> {
    match a.kind {
        ActionKind::Absolute => Ok(a.clone()),
        ActionKind::Relative => rel_to_abs(anchor, a),
        ActionKind::Delta => delta_to_abs(anchor, a),
    }
}

/// Action of a world transform: absolute poses are left-multiplied by `g`,
/// relative and delta trajectories are returned unchanged.
pub fn transform_world(g: &Pose, a: &Trajectory) -> Trajectory {
    match a.kind {
        ActionKind::Absolute => a.map_poses(ActionKind::Absolute, |s| g.compose(&s.pose)),
        ActionKind::Relative | ActionKind::Delta => a.clone(),
    }
}

/// Row-major `n × 10` matrix: `[pose_to_vector(pose_i); width_i]` per row.
pub fn flatten(a: &Trajectory) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() * STEP_DIM);
    for s in &a.steps {
        out.extend_from_slice(s.pose.to_vector().as_slice());
        out.push(s.width);
    }
    out
}

/// Inverse of [`flatten`]. Negative widths are clamped to zero.
pub fn unflatten(kind: ActionKind, m: &[f64]) -> Result<Trajectory> {
    if m.is_empty() || m.len() % STEP_DIM != 0 {
        return Err(Error::ShapeMismatch(format!(
            "flattened trajectory length {} is not a positive multiple of {STEP_DIM}",
            m.len()
        )));
    }
    let steps = m
        .chunks_exact(STEP_DIM)
        .map(|row| {
            let mut v = [0.0; 9];
            v.copy_from_slice(&row[..9]);
            let pose = PoseVector(v).to_pose()?;
            if !row[9].is_finite() {
                return Err(Error::NonFinite("gripper width".into()));
            }
            Ok(GripperCommand {
                pose,
                width: row[9].max(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory { kind, steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{random_pose, Rotation3};
    use std::f64::consts::FRAC_PI_2;

    fn traj(kind: ActionKind, poses: &[Pose]) -> Trajectory {
        Trajectory::new(kind, poses.iter().map(|p| GripperCommand::new(*p, 0.02)).collect()).unwrap()
    }

    fn random_traj(kind: ActionKind, seed: u64, n: usize) -> Trajectory {
        let poses: Vec<Pose> = (0..n as u64).map(|i| random_pose(seed * 64 + i, 1.0, true)).collect();
        traj(kind, &poses)
    }

    // Oracle: plain 4x4 products and inverses computed via the adjugate-free
    // rigid formula on the homogeneous matrices.
    fn m4(p: &Pose) -> [[f64; 4]; 4] {
        p.to_matrix()
    }

    fn mul4(a: [[f64; 4]; 4], b: [[f64; 4]; 4]) -> [[f64; 4]; 4] {
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

    fn close4(a: [[f64; 4]; 4], b: [[f64; 4]; 4], tol: f64) -> bool {
        a.iter().flatten().zip(b.iter().flatten()).all(|(x, y)| (x - y).abs() < tol)
    }

    #[test]
    fn abs_to_rel_examples() {
        let a = random_traj(ActionKind::Absolute, 1, 4);
        let r = abs_to_rel(&Pose::IDENTITY, &a).unwrap();
        for (x, y) in a.poses().zip(r.poses()) {
            assert!(x.max_abs_diff(y) < 1e-15);
        }

        let t = Pose::from_translation(1.0, 0.0, 0.0);
        let a = traj(ActionKind::Absolute, &[Pose::from_translation(3.0, 0.0, 0.0)]);
        let r = abs_to_rel(&t, &a).unwrap();
        assert!(r.steps()[0].pose.max_abs_diff(&Pose::from_translation(2.0, 0.0, 0.0)) < 1e-15);

        let t = Pose::rz(FRAC_PI_2);
        let a = traj(ActionKind::Absolute, &[Pose::from_translation(0.0, 1.0, 0.0)]);
        let r = abs_to_rel(&t, &a).unwrap();
        let expected = Pose::new(Rotation3::rz(-FRAC_PI_2), [1.0, 0.0, 0.0]).unwrap();
        assert!(r.steps()[0].pose.max_abs_diff(&expected) < 1e-15);
        // Oracle: T · R = A.
        assert!(close4(mul4(m4(&t), m4(&r.steps()[0].pose)), m4(&a.steps()[0].pose), 1e-15));

        let wrong = abs_to_rel(&t, &r);
        assert!(matches!(wrong, Err(Error::WrongKind { .. })));
    }

    #[test]
    fn rel_to_abs_examples() {
        let r = random_traj(ActionKind::Relative, 2, 3);
        let a = rel_to_abs(&Pose::IDENTITY, &r).unwrap();
        for (x, y) in a.poses().zip(r.poses()) {
            assert!(x.max_abs_diff(y) < 1e-15);
        }
        let t = Pose::from_translation(1.0, 0.0, 0.0);
        let r = traj(ActionKind::Relative, &[Pose::from_translation(2.0, 0.0, 0.0)]);
        let a = rel_to_abs(&t, &r).unwrap();
        assert!(a.steps()[0].pose.max_abs_diff(&Pose::from_translation(3.0, 0.0, 0.0)) < 1e-15);
        assert!(matches!(rel_to_abs(&t, &a), Err(Error::WrongKind { .. })));
    }

    #[test]
    fn delta_examples() {
        let t = random_pose(5, 1.0, true);
        let a = traj(ActionKind::Absolute, &[t, t, t]);
        let d = abs_to_delta(&t, &a).unwrap();
        for p in d.poses() {
            assert!(p.max_abs_diff(&Pose::IDENTITY) < 1e-12);
        }

        let a = traj(
            ActionKind::Absolute,
            &[Pose::from_translation(1.0, 0.0, 0.0), Pose::from_translation(2.0, 0.0, 0.0)],
        );
        let d = abs_to_delta(&Pose::IDENTITY, &a).unwrap();
        for p in d.poses() {
            assert!(p.max_abs_diff(&Pose::from_translation(1.0, 0.0, 0.0)) < 1e-15);
        }

        let d = traj(ActionKind::Delta, &[Pose::IDENTITY, Pose::IDENTITY]);
        let a = delta_to_abs(&t, &d).unwrap();
        for p in a.poses() {
            assert!(p.max_abs_diff(&t) < 1e-15);
        }

        let d = traj(
            ActionKind::Delta,
            &[Pose::from_translation(1.0, 0.0, 0.0), Pose::from_translation(1.0, 0.0, 0.0)],
        );
        let a = delta_to_abs(&Pose::IDENTITY, &d).unwrap();
        assert!(a.steps()[0].pose.max_abs_diff(&Pose::from_translation(1.0, 0.0, 0.0)) < 1e-15);
        assert!(a.steps()[1].pose.max_abs_diff(&Pose::from_translation(2.0, 0.0, 0.0)) < 1e-15);

        let d = traj(ActionKind::Delta, &[Pose::from_translation(1.0, 0.0, 0.0)]);
        let a = delta_to_abs(&Pose::rz(FRAC_PI_2), &d).unwrap();
        let expected = Pose::planar(0.0, 1.0, 0.0, FRAC_PI_2);
        assert!(a.steps()[0].pose.max_abs_diff(&expected) < 1e-15);
        // Oracle: sequential 4x4 products.
        let chain = mul4(m4(&Pose::rz(FRAC_PI_2)), m4(&Pose::from_translation(1.0, 0.0, 0.0)));
        assert!(close4(chain, m4(&a.steps()[0].pose), 1e-15));
    }

    #[test]
    fn transform_world_examples() {
        for kind in [ActionKind::Absolute, ActionKind::Relative, ActionKind::Delta] {
            let a = random_traj(kind, 9, 3);
            assert_eq!(transform_world(&Pose::IDENTITY, &a).max_abs_diff(&a), 0.0);
        }
        let g = Pose::from_translation(0.0, 0.0, 1.0);
        let a = traj(ActionKind::Absolute, &[Pose::from_translation(1.0, 0.0, 0.0)]);
        let b = transform_world(&g, &a);
        assert!(b.steps()[0].pose.max_abs_diff(&Pose::from_translation(1.0, 0.0, 1.0)) < 1e-15);
    }

    #[test]
    fn round_trips_many() {
        for seed in 0..1000 {
            let t = random_pose(seed + 10_000, 1.0, true);
            let a = random_traj(ActionKind::Absolute, seed, 5);
            let r = abs_to_rel(&t, &a).unwrap();
            assert!(rel_to_abs(&t, &r).unwrap().max_abs_diff(&a) < 1e-9);
            let d = abs_to_delta(&t, &a).unwrap();
            assert!(delta_to_abs(&t, &d).unwrap().max_abs_diff(&a) < 1e-9);
        }
    }

    #[test]
    fn flatten_examples() {
        let a = Trajectory::new(ActionKind::Absolute, vec![GripperCommand::new(Pose::IDENTITY, 0.0)]).unwrap();
        assert_eq!(flatten(&a), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        let a = random_traj(ActionKind::Delta, 4, 8);
        let m = flatten(&a);
        assert_eq!(m.len(), 8 * STEP_DIM);
        assert!(unflatten(ActionKind::Delta, &m).unwrap().max_abs_diff(&a) < 1e-7);

        let mut row = flatten(&a)[..STEP_DIM].to_vec();
        row[9] = -0.01;
        assert_eq!(unflatten(ActionKind::Delta, &row).unwrap().steps()[0].width, 0.0);
        row.copy_within(3..6, 6);
        assert!(matches!(unflatten(ActionKind::Delta, &row), Err(Error::DegenerateRotation)));
    }

    #[test]
    fn flatten_round_trip_many() {
        for seed in 0..1000 {
            let a = random_traj(ActionKind::Relative, seed, 3);
            assert!(unflatten(ActionKind::Relative, &flatten(&a)).unwrap().max_abs_diff(&a) < 1e-7);
        }
    }
}
