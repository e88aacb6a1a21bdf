//! Planar tabletop tasks with eye-in-hand and top-down cameras, scripted
//! experts, and demonstration collection.
//!
//! Everything lives at height z = 0 with rotations about z, but poses are
//! full SE(3) values, so world transforms and trajectory conversions go
//! through the general algebra.

use log::{debug, warn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::actions::{from_absolute, ActionKind, GripperCommand, Trajectory};
use crate::dataset::{Dataset, DatasetMeta, EpisodeRecord, StepRecord};
use crate::error::{Error, Result};
use crate::groups::Image;
use crate::se3::{Pose, Vec3};

pub const OPEN_WIDTH: f64 = 0.08;
pub const CLOSED_WIDTH: f64 = 0.0;
/// Per-step displacement limits of the gripper.
pub const MAX_STEP_TRANSLATION: f64 = 0.1;
pub const MAX_STEP_ROTATION: f64 = std::f64::consts::PI / 6.0;
/// Below this distance the reach expert keeps its heading.
const HOLD_HEADING_DISTANCE: f64 = 0.05;
/// Eye-in-hand geometry is snapped to this grid before rasterizing.
const SNAP: f64 = 1e-9;
const PLANAR_TOL: f64 = 1e-9;
/// The scripted experts treat closer points as coincident.
const ARRIVED: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Reach,
    PushToGoal,
    PickPlace,
}

impl Task {
    pub fn as_str(&self) -> &'static str {
        match self {
            Task::Reach => "reach",
            Task::PushToGoal => "push_to_goal",
            Task::PickPlace => "pick_place",
        }
    }
}

/// Axis-aligned sampling box in the table plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Region {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Region {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        (rng.random_range(self.x[0]..self.x[1]), rng.random_range(self.y[0]..self.y[1]))
    }

    fn is_valid(&self) -> bool {
        self.x[0] < self.x[1] && self.y[0] < self.y[1] && self.x.iter().chain(&self.y).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub task: Task,
    pub n_objects: usize,
    pub gripper_region: Region,
    pub object_region: Region,
    pub max_steps: usize,
    /// Success radius in meters.
    pub tolerance: f64,
    pub object_radius: f64,
    /// Expert waypoint spacing for the phase-scripted tasks.
    pub expert_speed: f64,
    /// Objects or targets farther than this from the gripper are unsolvable.
    pub reach_radius: f64,
}

impl EnvConfig {
    pub fn new(task: Task) -> Self {
        let (n_objects, max_steps, tolerance) = match task {
            Task::Reach => (2, 24, 0.04),
            Task::PushToGoal => (1, 32, 0.05),
            Task::PickPlace => (1, 36, 0.05),
        };
        EnvConfig {
            task,
            n_objects,
            gripper_region: Region {
                x: [-0.15, -0.05],
                y: [-0.1, 0.1],
            },
            object_region: Region {
                x: [0.05, 0.2],
                y: [-0.15, 0.15],
            },
            max_steps,
            tolerance,
            object_radius: 0.05,
            expert_speed: 0.06,
            reach_radius: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if !self.gripper_region.is_valid() || !self.object_region.is_valid() {
            return bad("sampling regions must be nonempty");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be at least 1");
        }
        if self.n_objects == 0 {
            return bad("at least one object is required");
        }
        if !(self.tolerance > 0.0 && self.object_radius > 0.0 && self.expert_speed > 0.0 && self.reach_radius > 0.0) {
            return bad("tolerance, object radius, expert speed and reach radius must be positive");
        }
        if self.object_radius <= CLOSED_WIDTH || self.object_radius >= OPEN_WIDTH {
            return bad("object radius must lie between the closed and open gripper widths");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CameraFrame {
    EyeInHand,
    External,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraConfig {
    pub frame: CameraFrame,
    pub resolution: usize,
    /// Multiplies the base half-extent (0.25 m in hand, 0.6 m external).
    pub fov_scale: f64,
}

impl CameraConfig {
    pub fn eye_in_hand(resolution: usize) -> Self {
        CameraConfig {
            frame: CameraFrame::EyeInHand,
            resolution,
            fov_scale: 2.0,
        }
    }

    pub fn external(resolution: usize) -> Self {
        CameraConfig {
            frame: CameraFrame::External,
            resolution,
            fov_scale: 1.0,
        }
    }

    pub fn half_extent(&self) -> f64 {
        match self.frame {
            CameraFrame::EyeInHand => 0.25 * self.fov_scale,
            CameraFrame::External => 0.6 * self.fov_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimObject {
    pub id: usize,
    pub pose: Pose,
    pub radius: f64,
    pub color: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Goal {
    pub object: usize,
    pub target: Vec3,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub task: Task,
    pub gripper: Pose,
    pub aperture: f64,
    pub objects: Vec<SimObject>,
    pub goal: Goal,
    /// Id of the object attached to the gripper, if any.
    pub grasped: Option<usize>,
    pub step_count: usize,
}

const GOAL_COLOR: [f64; 3] = [0.9, 0.2, 0.2];
const DISTRACTOR_COLOR: [f64; 3] = [0.2, 0.4, 0.9];
const TARGET_COLOR: [f64; 3] = [0.2, 0.8, 0.3];
const TARGET_RADIUS: f64 = 0.03;

impl WorldState {
    /// Left-applies `g` to every world pose and point.
    pub fn transformed(&self, g: &Pose) -> WorldState {
        let mut s = self.clone();
        s.gripper = g.compose(&self.gripper);
        for o in &mut s.objects {
            o.pose = g.compose(&o.pose);
        }
        s.goal.target = g.act_on_point(&self.goal.target);
        s
    }

    pub fn goal_object(&self) -> &SimObject {
        self.objects
            .iter()
            .find(|o| o.id == self.goal.object)
            .expect("goal object exists")
    }

    fn has_target(&self) -> bool {
        self.task != Task::Reach
    }
}

fn check_planar(g: &Pose) -> Result<()> {
    if g.is_planar(0.0, PLANAR_TOL) {
        Ok(())
    } else {
        Err(Error::BadTransform)
    }
}

/// Samples the canonical state for `seed`, then applies the world transform.
pub fn reset(cfg: &EnvConfig, seed: u64, g: &Pose) -> Result<WorldState> {
    cfg.validate()?;
    check_planar(g)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (gx, gy) = cfg.gripper_region.sample(&mut rng);
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let gripper = Pose::planar(gx, gy, 0.0, yaw);
    let r = cfg.object_radius;
    let mut objects: Vec<SimObject> = Vec::with_capacity(cfg.n_objects);
    for id in 0..cfg.n_objects {
        let mut xy = cfg.object_region.sample(&mut rng);
        for _ in 0..100 {
            if objects
                .iter()
                .all(|o| (o.pose.trans[0] - xy.0).hypot(o.pose.trans[1] - xy.1) >= 3.0 * r)
            {
                break;
            }
            xy = cfg.object_region.sample(&mut rng);
        }
        let obj_yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        objects.push(SimObject {
            id,
            pose: Pose::planar(xy.0, xy.1, 0.0, obj_yaw),
            radius: r,
            color: if id == 0 { GOAL_COLOR } else { DISTRACTOR_COLOR },
        });
    }
    let o = objects[0].pose.trans;
    let target = match cfg.task {
        Task::Reach => o,
        _ => {
            let d = rng.random_range(0.1..0.2);
            let t = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            [o[0] + d * t.cos(), o[1] + d * t.sin(), 0.0]
        }
    };
    let state = WorldState {
        task: cfg.task,
        gripper,
        aperture: OPEN_WIDTH,
        objects,
        goal: Goal {
            object: 0,
            target,
            tolerance: cfg.tolerance,
        },
        grasped: None,
        step_count: 0,
    };
    Ok(state.transformed(g))
}

fn dist_xy(a: &Vec3, b: &Vec3) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

pub fn is_success(state: &WorldState) -> bool {
    let obj = state.goal_object();
    match state.task {
        Task::Reach => dist_xy(&state.gripper.trans, &obj.pose.trans) <= state.goal.tolerance,
        Task::PushToGoal => dist_xy(&obj.pose.trans, &state.goal.target) <= state.goal.tolerance,
        Task::PickPlace => {
            state.grasped.is_none() && dist_xy(&obj.pose.trans, &state.goal.target) <= state.goal.tolerance
        }
    }
}

/// Moves the gripper toward the (plane-projected) command, limited to
/// 0.1 m and 30° per step, and carries any grasped object rigidly.
pub fn step(state: &WorldState, cmd: &GripperCommand) -> WorldState {
    let mut next = state.clone();
    next.step_count += 1;
    let width = cmd.width.max(0.0);

    // Grasp bookkeeping uses the pre-move configuration.
    match next.grasped {
        Some(id) => {
            let r = next.objects.iter().find(|o| o.id == id).map_or(0.0, |o| o.radius);
            if width >= r {
                next.grasped = None;
            }
        }
        None => {
            next.grasped = next
                .objects
                .iter()
                .filter(|o| width < o.radius && dist_xy(&o.pose.trans, &state.gripper.trans) < o.radius)
                .min_by(|a, b| {
                    dist_xy(&a.pose.trans, &state.gripper.trans).total_cmp(&dist_xy(&b.pose.trans, &state.gripper.trans))
                })
                .map(|o| o.id);
        }
    }
    next.aperture = width;

    let target = Pose::planar(cmd.pose.trans[0], cmd.pose.trans[1], state.gripper.trans[2], cmd.pose.rot.yaw());
    let local = state.gripper.inverse().compose(&target);
    let (mut dx, mut dy) = (local.trans[0], local.trans[1]);
    let d = dx.hypot(dy);
    if d > MAX_STEP_TRANSLATION {
        dx *= MAX_STEP_TRANSLATION / d;
        dy *= MAX_STEP_TRANSLATION / d;
    }
    let dyaw = local.rot.yaw().clamp(-MAX_STEP_ROTATION, MAX_STEP_ROTATION);
    let moved = state.gripper.compose(&Pose::planar(dx, dy, 0.0, dyaw));
    if let Some(id) = next.grasped {
        let carry = moved.compose(&state.gripper.inverse());
        if let Some(o) = next.objects.iter_mut().find(|o| o.id == id) {
            o.pose = carry.compose(&o.pose);
        }
    }
    next.gripper = moved;
    next
}

/// Scripted `n`-waypoint plan from `state`, in world coordinates. Plans are
/// computed in the gripper frame and mapped back, so a world transform of
/// the state transforms the plan by the same element.
pub fn expert_action(cfg: &EnvConfig, state: &WorldState, n: usize) -> Result<Trajectory> {
    if n == 0 {
        return Err(Error::BadConfig("expert horizon must be positive".into()));
    }
    let t = &state.gripper;
    let t_inv = t.inverse();
    let obj = t_inv.act_on_point(&state.goal_object().pose.trans);
    let target = t_inv.act_on_point(&state.goal.target);
    let origin = [0.0; 3];
    if dist_xy(&obj, &origin) > cfg.reach_radius || (state.has_target() && dist_xy(&target, &origin) > cfg.reach_radius) {
        return Err(Error::Unsolvable(format!(
            "goal beyond reach radius {} m of the gripper",
            cfg.reach_radius
        )));
    }
    let local: Vec<(Pose, f64)> = match state.task {
        Task::Reach => {
            let d = dist_xy(&obj, &origin);
            let heading = if d < HOLD_HEADING_DISTANCE { 0.0 } else { obj[1].atan2(obj[0]) };
            (1..=n)
                .map(|i| {
                    let f = i as f64 / n as f64;
                    (Pose::planar(f * obj[0], f * obj[1], 0.0, f * heading), OPEN_WIDTH)
                })
                .collect()
        }
        Task::PushToGoal | Task::PickPlace => scripted_manipulation(cfg, state, obj, target, n),
    };
    let steps = local
        .into_iter()
        .map(|(p, w)| GripperCommand::new(t.compose(&p), w))
        .collect();
    Trajectory::new(ActionKind::Absolute, steps)
}

#[derive(Clone, Copy, PartialEq)]
enum Phase {
    Approach,
    Close,
    Transport,
    Release,
    Hold,
}

fn scripted_manipulation(cfg: &EnvConfig, state: &WorldState, obj: Vec3, target: Vec3, n: usize) -> Vec<(Pose, f64)> {
    let holding = state.grasped == Some(state.goal.object);
    let placed = dist_xy(&obj, &target) <= 0.5 * cfg.tolerance;
    let mut phase = match (holding, state.task) {
        (true, _) => Phase::Transport,
        (false, Task::PickPlace) if placed => Phase::Hold,
        _ => Phase::Approach,
    };
    let mut cursor = [0.0, 0.0, 0.0];
    let mut width = state.aperture;
    let advance = |cursor: &mut Vec3, goal: &Vec3| -> bool {
        let d = dist_xy(cursor, goal);
        if d <= cfg.expert_speed {
            *cursor = [goal[0], goal[1], 0.0];
            true
        } else {
            let f = cfg.expert_speed / d;
            *cursor = [cursor[0] + f * (goal[0] - cursor[0]), cursor[1] + f * (goal[1] - cursor[1]), 0.0];
            false
        }
    };
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        match phase {
            Phase::Approach => {
                width = OPEN_WIDTH;
                if dist_xy(&cursor, &obj) < ARRIVED {
                    width = CLOSED_WIDTH;
                    phase = Phase::Transport;
                } else if advance(&mut cursor, &obj) {
                    phase = Phase::Close;
                }
            }
            Phase::Close => {
                width = CLOSED_WIDTH;
                phase = Phase::Transport;
            }
            Phase::Transport => {
                width = CLOSED_WIDTH;
                if dist_xy(&cursor, &target) < ARRIVED || advance(&mut cursor, &target) {
                    phase = if state.task == Task::PickPlace { Phase::Release } else { Phase::Hold };
                }
            }
            Phase::Release => {
                width = OPEN_WIDTH;
                phase = Phase::Hold;
            }
            Phase::Hold => {}
        }
        out.push((Pose::from_translation(cursor[0], cursor[1], 0.0), width));
    }
    out
}

/// Orthographic top-down render. The eye-in-hand view is centered on the
/// gripper with its +x axis to the right and +y up; the external view is
/// centered on the world origin and also draws the gripper.
pub fn render(state: &WorldState, cam: &CameraConfig) -> Image {
    let n = cam.resolution;
    let half = cam.half_extent();
    let px = 2.0 * half / n as f64;
    let mut img = vec![0.0f64; n * n * 3];
    let to_view = |p: &Vec3| -> (f64, f64) {
        match cam.frame {
            CameraFrame::EyeInHand => {
                let l = state.gripper.inverse().act_on_point(p);
                (snap(l[0]), snap(l[1]))
            }
            CameraFrame::External => (p[0], p[1]),
        }
    };
    let disk = |img: &mut [f64], c: (f64, f64), r: f64, color: [f64; 3]| {
        paint(img, n, half, px, color, |x, y| r - (x - c.0).hypot(y - c.1), (c.0, c.1, r));
    };
    if state.has_target() {
        disk(&mut img, to_view(&state.goal.target), TARGET_RADIUS, TARGET_COLOR);
    }
    for o in &state.objects {
        disk(&mut img, to_view(&o.pose.trans), o.radius, o.color);
    }
    if cam.frame == CameraFrame::External {
        let g = &state.gripper;
        let v: Vec<(f64, f64)> = [[0.07, 0.0, 0.0], [-0.035, 0.035, 0.0], [-0.035, -0.035, 0.0]]
            .iter()
            .map(|p| {
                let w = g.act_on_point(p);
                (w[0], w[1])
            })
            .collect();
        let shade = 0.5 + 0.5 * (state.aperture / OPEN_WIDTH).clamp(0.0, 1.0);
        let cx = (v[0].0 + v[1].0 + v[2].0) / 3.0;
        let cy = (v[0].1 + v[1].1 + v[2].1) / 3.0;
        paint(
            &mut img,
            n,
            half,
            px,
            [shade; 3],
            |x, y| triangle_depth(&v, x, y),
            (cx, cy, 0.08),
        );
    }
    // Round through f32 so stored and in-memory images agree exactly.
    let data = img.into_iter().map(|v| v as f32 as f64).collect();
    Image::new(n, n, 3, data).expect("render buffer size")
}

fn snap(v: f64) -> f64 {
    (v / SNAP).round() * SNAP
}

/// Composites `color` with coverage `clamp(0.5 + depth/px)` where `depth` is
/// a signed inside-distance; `bound` = (cx, cy, radius) limits the pixels
/// visited.
fn paint(
    img: &mut [f64],
    n: usize,
    half: f64,
    px: f64,
    color: [f64; 3],
    depth: impl Fn(f64, f64) -> f64,
    bound: (f64, f64, f64),
) {
    let col_of = |x: f64| (x + half) / px - 0.5;
    let row_of = |y: f64| (half - y) / px - 0.5;
    let reach = bound.2 + 2.0 * px;
    let lo = |v: f64| (v.floor().max(0.0) as usize).min(n);
    let hi = |v: f64| ((v.ceil() + 1.0).max(0.0) as usize).min(n);
    let (c0, c1) = (lo(col_of(bound.0 - reach)), hi(col_of(bound.0 + reach)));
    let (r0, r1) = (lo(row_of(bound.1 + reach)), hi(row_of(bound.1 - reach)));
    for i in r0..r1 {
        let y = half - (i as f64 + 0.5) * px;
        for j in c0..c1 {
            let x = (j as f64 + 0.5) * px - half;
            let a = (0.5 + depth(x, y) / px).clamp(0.0, 1.0);
            if a > 0.0 {
                let p = &mut img[(i * n + j) * 3..(i * n + j) * 3 + 3];
                for k in 0..3 {
                    p[k] = p[k] * (1.0 - a) + a * color[k];
                }
            }
        }
    }
}

/// Signed distance to the nearest edge, positive inside a CCW triangle.
fn triangle_depth(v: &[(f64, f64)], x: f64, y: f64) -> f64 {
    (0..3)
        .map(|k| {
            let (ax, ay) = v[k];
            let (bx, by) = v[(k + 1) % 3];
            let (ex, ey) = (bx - ax, by - ay);
            ((x - ax) * ey - (y - ay) * ex) / ex.hypot(ey) * -1.0
        })
        .fold(f64::INFINITY, f64::min)
}

/// What the policy sees at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// One image per configured camera, in camera order.
    pub images: Vec<Image>,
    pub pose: Pose,
    /// The last `m` gripper poses, oldest first; the final entry is `pose`.
    pub history: Vec<Pose>,
    pub aperture: f64,
}

impl Observation {
    /// The observation after a world transform that leaves the images
    /// unchanged (eye-in-hand cameras only see the gripper frame).
    pub fn with_world_transform(&self, g: &Pose) -> Observation {
        Observation {
            images: self.images.clone(),
            pose: g.compose(&self.pose),
            history: self.history.iter().map(|p| g.compose(p)).collect(),
            aperture: self.aperture,
        }
    }
}

pub fn observe(state: &WorldState, cams: &[CameraConfig], history: &[Pose]) -> Observation {
    Observation {
        images: cams.iter().map(|c| render(state, c)).collect(),
        pose: state.gripper,
        history: history.to_vec(),
        aperture: state.aperture,
    }
}

/// Demonstration-collection settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectSpec {
    pub episodes: usize,
    pub seed: u64,
    pub action_kind: ActionKind,
    pub horizon: usize,
    pub exec_steps: usize,
    pub cameras: Vec<CameraConfig>,
}

/// Runs the expert from canonical resets until `episodes` successful
/// demonstrations are recorded. Each stored step keeps the rendered images,
/// the gripper state, and the expert's `horizon`-step plan from that state
/// expressed in `action_kind`.
pub fn collect_demos(cfg: &EnvConfig, spec: &CollectSpec) -> Result<Dataset> {
    cfg.validate()?;
    if spec.episodes == 0 || spec.horizon == 0 || spec.exec_steps == 0 || spec.exec_steps > spec.horizon {
        return Err(Error::BadConfig("collection needs episodes ≥ 1 and 1 ≤ exec_steps ≤ horizon".into()));
    }
    let mut seeds = ChaCha8Rng::seed_from_u64(spec.seed);
    let max_attempts = 10 * spec.episodes + 10;
    let mut episodes = Vec::with_capacity(spec.episodes);
    let mut attempts = 0;
    while episodes.len() < spec.episodes {
        if attempts >= max_attempts {
            return Err(Error::Unsolvable(format!(
                "only {} of {} demonstrations succeeded after {attempts} attempts",
                episodes.len(),
                spec.episodes
            )));
        }
        attempts += 1;
        let ep_seed: u64 = seeds.random();
        match run_expert_episode(cfg, spec, ep_seed) {
            Ok(Some(ep)) => episodes.push(ep),
            Ok(None) => debug!("expert episode {ep_seed} did not succeed; resampling"),
            Err(Error::Unsolvable(m)) => warn!("episode {ep_seed} unsolvable ({m}); resampling"),
            Err(e) => return Err(e),
        }
    }
    Ok(Dataset {
        meta: DatasetMeta {
            env: cfg.clone(),
            action_kind: spec.action_kind,
            horizon: spec.horizon,
            exec_steps: spec.exec_steps,
            cameras: spec.cameras.clone(),
            seed: spec.seed,
        },
        episodes,
    })
}

fn run_expert_episode(cfg: &EnvConfig, spec: &CollectSpec, seed: u64) -> Result<Option<EpisodeRecord>> {
    let mut state = reset(cfg, seed, &Pose::IDENTITY)?;
    let mut steps = Vec::new();
    while state.step_count < cfg.max_steps && !is_success(&state) {
        let plan = expert_action(cfg, &state, spec.horizon)?;
        for cmd in plan.steps().iter().take(spec.exec_steps) {
            let label = expert_action(cfg, &state, spec.horizon)?;
            steps.push(StepRecord {
                images: spec.cameras.iter().map(|c| render(&state, c)).collect(),
                pose: state.gripper,
                aperture: state.aperture,
                label: from_absolute(&state.gripper, &label, spec.action_kind)?,
            });
            state = step(&state, cmd);
            if is_success(&state) || state.step_count >= cfg.max_steps {
                break;
            }
        }
    }
    Ok(is_success(&state).then_some(EpisodeRecord { seed, steps }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actions::{rel_to_abs, transform_world};

    fn random_planar(rng: &mut ChaCha8Rng) -> Pose {
        Pose::planar(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            0.0,
            rng.random_range(-3.2..3.2),
        )
    }

    #[test]
    fn identity_reset_is_canonical_and_transforms_compose() {
        let cfg = EnvConfig::new(Task::PushToGoal);
        let s = reset(&cfg, 4, &Pose::IDENTITY).unwrap();
        assert_eq!(s.step_count, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (g1, g2) = (random_planar(&mut rng), random_planar(&mut rng));
        let a = reset(&cfg, 4, &g1).unwrap();
        let b = reset(&cfg, 4, &g2).unwrap();
        let rel = g2.compose(&g1.inverse());
        let b2 = a.transformed(&rel);
        assert!(b2.gripper.max_abs_diff(&b.gripper) < 1e-12);
        for (x, y) in b2.objects.iter().zip(&b.objects) {
            assert!(x.pose.max_abs_diff(&y.pose) < 1e-12);
        }
        let other = reset(&cfg, 5, &Pose::IDENTITY).unwrap();
        assert_ne!(other.objects[0].pose, s.objects[0].pose);
    }

    #[test]
    fn non_planar_transform_is_rejected() {
        let g = Pose::from_translation(0.0, 0.0, 0.1);
        assert!(matches!(reset(&EnvConfig::new(Task::Reach), 0, &g), Err(Error::BadTransform)));
    }

    #[test]
    fn reach_expert_interpolates_linearly() {
        let cfg = EnvConfig::new(Task::Reach);
        let mut s = reset(&cfg, 0, &Pose::IDENTITY).unwrap();
        s.gripper = Pose::IDENTITY;
        s.objects[0].pose = Pose::from_translation(0.4, 0.0, 0.0);
        let plan = expert_action(&cfg, &s, 4).unwrap();
        for (i, c) in plan.steps().iter().enumerate() {
            let want = 0.1 * (i + 1) as f64;
            assert!((c.pose.trans[0] - want).abs() < 1e-12 && c.pose.trans[1].abs() < 1e-12);
        }
        s.objects[0].pose = s.gripper;
        let plan = expert_action(&cfg, &s, 4).unwrap();
        assert!(plan.steps().iter().all(|c| c.pose.max_abs_diff(&s.gripper) == 0.0));
    }

    #[test]
    fn expert_step_and_success_commute_with_world_transforms() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..100 {
            let task = [Task::Reach, Task::PushToGoal, Task::PickPlace][i % 3];
            let cfg = EnvConfig::new(task);
            let s = reset(&cfg, i as u64, &Pose::IDENTITY).unwrap();
            let g = random_planar(&mut rng);
            let gs = s.transformed(&g);
            let lhs = transform_world(&g, &expert_action(&cfg, &s, 8).unwrap());
            let rhs = expert_action(&cfg, &gs, 8).unwrap();
            assert!(lhs.max_abs_diff(&rhs) < 1e-12);

            let cmd = GripperCommand::new(random_planar(&mut rng), rng.random_range(0.0..0.1));
            let gcmd = GripperCommand::new(g.compose(&cmd.pose), cmd.width);
            let a = step(&s, &cmd).transformed(&g);
            let b = step(&gs, &gcmd);
            assert!(a.gripper.max_abs_diff(&b.gripper) < 1e-12);
            assert_eq!(a.grasped, b.grasped);
            for (x, y) in a.objects.iter().zip(&b.objects) {
                assert!(x.pose.max_abs_diff(&y.pose) < 1e-12);
            }
            assert_eq!(is_success(&s), is_success(&gs));
        }
    }

    #[test]
    fn step_to_current_pose_only_counts() {
        let cfg = EnvConfig::new(Task::Reach);
        let s = reset(&cfg, 3, &Pose::IDENTITY).unwrap();
        let n = step(&s, &GripperCommand::new(s.gripper, s.aperture));
        assert_eq!(n.step_count, 1);
        assert!(n.gripper.max_abs_diff(&s.gripper) < 1e-15);
        assert_eq!(n.objects, s.objects);
    }

    #[test]
    fn far_command_is_clamped() {
        let cfg = EnvConfig::new(Task::Reach);
        let mut s = reset(&cfg, 3, &Pose::IDENTITY).unwrap();
        s.gripper = Pose::planar(0.1, 0.2, 0.0, 0.7);
        let goal = Pose::planar(0.1 + 3.0, 0.2 + 4.0, 0.0, 0.7);
        let n = step(&s, &GripperCommand::new(goal, OPEN_WIDTH));
        assert!((n.gripper.trans[0] - 0.16).abs() < 1e-12);
        assert!((n.gripper.trans[1] - 0.28).abs() < 1e-12);
        let spun = step(&s, &GripperCommand::new(Pose::planar(0.1, 0.2, 0.0, 0.7 + 1.5), OPEN_WIDTH));
        assert!((spun.gripper.rot.yaw() - (0.7 + MAX_STEP_ROTATION)).abs() < 1e-12);
    }

    #[test]
    fn success_respects_tolerance() {
        let cfg = EnvConfig::new(Task::PushToGoal);
        let mut s = reset(&cfg, 0, &Pose::IDENTITY).unwrap();
        let t = s.goal.target;
        s.objects[0].pose = Pose::from_translation(t[0], t[1], 0.0);
        assert!(is_success(&s));
        s.objects[0].pose = Pose::from_translation(t[0] + cfg.tolerance + 1e-9, t[1], 0.0);
        assert!(!is_success(&s));
    }

    #[test]
    fn eye_in_hand_render_is_world_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = CameraConfig::eye_in_hand(32);
        let ext = CameraConfig::external(32);
        for i in 0..20 {
            let cfg = EnvConfig::new([Task::Reach, Task::PushToGoal][i % 2]);
            let s = reset(&cfg, i as u64, &Pose::IDENTITY).unwrap();
            let g = random_planar(&mut rng);
            let gs = s.transformed(&g);
            assert_eq!(render(&s, &cam), render(&gs, &cam));
            assert_ne!(render(&s, &ext), render(&gs, &ext));
        }
    }

    #[test]
    fn empty_scene_is_uniform() {
        let cfg = EnvConfig::new(Task::Reach);
        let mut s = reset(&cfg, 0, &Pose::IDENTITY).unwrap();
        s.objects.iter_mut().for_each(|o| o.pose = Pose::from_translation(50.0, 50.0, 0.0));
        let img = render(&s, &CameraConfig::eye_in_hand(16));
        assert!(img.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn expert_solves_every_task() {
        for task in [Task::Reach, Task::PushToGoal, Task::PickPlace] {
            let cfg = EnvConfig::new(task);
            let spec = CollectSpec {
                episodes: 20,
                seed: 9,
                action_kind: ActionKind::Relative,
                horizon: 8,
                exec_steps: 4,
                cameras: vec![],
            };
            let mut ok = 0;
            for e in 0..spec.episodes as u64 {
                if run_expert_episode(&cfg, &spec, e).unwrap().is_some() {
                    ok += 1;
                }
            }
            assert_eq!(ok, spec.episodes, "{task:?}");
        }
    }

    #[test]
    fn stored_labels_round_trip_to_expert_plans() {
        let cfg = EnvConfig::new(Task::Reach);
        let spec = CollectSpec {
            episodes: 1,
            seed: 1,
            action_kind: ActionKind::Relative,
            horizon: 8,
            exec_steps: 4,
            cameras: vec![CameraConfig::eye_in_hand(16)],
        };
        let ds = collect_demos(&cfg, &spec).unwrap();
        let ep = &ds.episodes[0];
        let mut state = reset(&cfg, ep.seed, &Pose::IDENTITY).unwrap();
        for (t, rec) in ep.steps.iter().enumerate() {
            assert!(rec.pose.max_abs_diff(&state.gripper) < 1e-9);
            let abs = rel_to_abs(&rec.pose, &rec.label).unwrap();
            let want = expert_action(&cfg, &state, 8).unwrap();
            assert!(abs.max_abs_diff(&want) < 1e-9);
            // Steps were executed from the plan made at the last replanning point.
            let plan_at = t - t % spec.exec_steps;
            let anchor = &ep.steps[plan_at];
            let plan = rel_to_abs(&anchor.pose, &anchor.label).unwrap();
            state = step(&state, &plan.steps()[t - plan_at]);
        }
        assert!(is_success(&state));
    }
}
