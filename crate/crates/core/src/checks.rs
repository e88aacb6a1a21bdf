//! Invariant suites behind `eqpk check`. Each suite returns one row per
//! property with the worst error seen and the bound it is held to.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::actions::{
    abs_to_delta, abs_to_rel, delta_to_abs, rel_to_abs, to_absolute, transform_world, ActionKind, GripperCommand,
    Trajectory,
};
use crate::encoders::{build_encoder, EncoderConfig, EncoderKind, FaMode};
use crate::error::{Error, Result};
use crate::groups::{
    element_compose, equivariance_error, regular_rep_apply, rotate_image, rotation_2d, symmetrize, CyclicGroup,
    Image, Interpolation, Representation,
};
use crate::harness::policy_equivariance_error;
use crate::nn::{finite_diff_check, LayerSpec, Network, PoolMode, Tensor};
use crate::policy::{NormStats, ObsMode, PolicyBundle, PolicyConfig};
use crate::se3::{sample_pose, Pose, Rotation3};
use crate::sim::{EnvConfig, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    Se3,
    Actions,
    Groups,
    Grads,
    Equivariance,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Se3, Suite::Actions, Suite::Groups, Suite::Grads, Suite::Equivariance];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Se3 => "se3",
            Suite::Actions => "actions",
            Suite::Groups => "groups",
            Suite::Grads => "grads",
            Suite::Equivariance => "equivariance",
        }
    }

    /// Parses a scope name; `all` selects every suite.
    pub fn parse_scope(name: &str) -> Result<Vec<Suite>> {
        match name {
            "all" => Ok(Suite::ALL.to_vec()),
            _ => Suite::ALL
                .into_iter()
                .find(|s| s.as_str() == name)
                .map(|s| vec![s])
                .ok_or_else(|| Error::BadConfig(format!("unknown check scope {name:?}"))),
        }
    }

    pub fn run(&self) -> Result<Vec<CheckRow>> {
        match self {
            Suite::Se3 => se3_suite(1000, 1),
            Suite::Actions => {
                let mut rows = trajectory_invariance_suite(1000, 2)?;
                rows.extend(conversion_suite(1000, 3)?);
                Ok(rows)
            }
            Suite::Groups => group_suite(4),
            Suite::Grads => gradient_suite(&[0, 1, 2, 3, 4]),
            Suite::Equivariance => {
                let mut rows = symmetrization_suite(5)?;
                rows.extend(encoder_suite(20, 6)?);
                rows.extend(policy_suite(50, 7)?);
                Ok(rows)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    /// Passes when the error is at most this (scaled by the tolerance scale).
    AtMost(f64),
    /// Passes when the error is strictly larger; used for sanity checks that
    /// a non-equivariant map is actually detected.
    Above(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub suite: Suite,
    pub name: String,
    pub max_error: f64,
    pub bound: Bound,
}

impl CheckRow {
    fn at_most(suite: Suite, name: impl Into<String>, max_error: f64, tol: f64) -> Self {
        CheckRow {
            suite,
            name: name.into(),
            max_error,
            bound: Bound::AtMost(tol),
        }
    }

    fn above(suite: Suite, name: impl Into<String>, max_error: f64, floor: f64) -> Self {
        CheckRow {
            suite,
            name: name.into(),
            max_error,
            bound: Bound::Above(floor),
        }
    }

    pub fn passes(&self, tolerance_scale: f64) -> bool {
        match self.bound {
            Bound::AtMost(t) => self.max_error <= t * tolerance_scale,
            Bound::Above(f) => self.max_error > f,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub rows: Vec<CheckRow>,
    pub tolerance_scale: f64,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.passes(self.tolerance_scale))
    }

    /// Suites with at least one failing row, in run order.
    pub fn failing_suites(&self) -> Vec<Suite> {
        let mut out: Vec<Suite> = Vec::new();
        for r in self.rows.iter().filter(|r| !r.passes(self.tolerance_scale)) {
            if !out.contains(&r.suite) {
                out.push(r.suite);
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<13} {:<44} {:>11} {:>13}  status\n", "suite", "check", "max error", "bound");
        for r in &self.rows {
            let bound = match r.bound {
                Bound::AtMost(t) => format!("<= {:.0e}", t * self.tolerance_scale),
                Bound::Above(f) => format!("> {f:.0e}"),
            };
            let status = if r.passes(self.tolerance_scale) { "ok" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{:<13} {:<44} {:>11.3e} {:>13}  {status}",
                r.suite.as_str(),
                r.name,
                r.max_error,
                bound
            );
        }
        s
    }
}

pub fn run_checks(suites: &[Suite], tolerance_scale: f64) -> Result<CheckReport> {
    let mut rows = Vec::new();
    for s in suites {
        rows.extend(s.run()?);
    }
    Ok(CheckReport { rows, tolerance_scale })
}

fn max_abs4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> f64 {
    a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn mul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
    let mut c = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            c[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

pub fn se3_suite(n: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut ortho, mut inv, mut assoc, mut vec_rt, mut rz) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let eye = Pose::IDENTITY.to_matrix();
    for _ in 0..n {
        let [a, b, c] = [0; 3].map(|_| sample_pose(&mut rng, 1.0, true));
        ortho = ortho.max(a.rot.orthonormality_error());
        inv = inv.max(max_abs4(&a.compose(&a.inverse()).to_matrix(), &eye));
        inv = inv.max(max_abs4(&a.inverse().compose(&a).to_matrix(), &eye));
        let oracle = mul4(&mul4(&a.to_matrix(), &b.to_matrix()), &c.to_matrix());
        assoc = assoc.max(max_abs4(&a.compose(&b).compose(&c).to_matrix(), &oracle));
        assoc = assoc.max(max_abs4(&a.compose(&b.compose(&c)).to_matrix(), &oracle));
        vec_rt = vec_rt.max(a.to_vector().to_pose()?.max_abs_diff(&a));
        let (s, t) = (rng.random_range(-7.0..7.0), rng.random_range(-7.0..7.0));
        let lhs = Rotation3::rz(s) * Rotation3::rz(t);
        rz = rz.max(lhs.max_abs_diff(&Rotation3::rz(s + t)));
    }
    let row = |name: &str, e: f64| CheckRow::at_most(Suite::Se3, name, e, 1e-12);
    Ok(vec![
        row("rotation orthonormality", ortho),
        row("T * T^-1 = I", inv),
        row("composition vs 4x4 products", assoc),
        row("pose -> vector -> pose", vec_rt),
        row("Rz(s) Rz(t) = Rz(s + t)", rz),
    ])
}

fn random_trajectory<R: Rng>(rng: &mut R, kind: ActionKind, horizon: usize, bound: f64) -> Result<Trajectory> {
    let steps = (0..horizon)
        .map(|_| GripperCommand::new(sample_pose(rng, bound, true), rng.random_range(0.0..0.08)))
        .collect();
    Trajectory::new(kind, steps)
}

/// World transforms of relative/delta/absolute trajectories and the
/// reconstruction identity `to_absolute(gT, a) = g · to_absolute(T, a)`.
pub fn trajectory_invariance_suite(n: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rel, mut delta, mut abs, mut recon) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..n {
        let g = sample_pose(&mut rng, 2.0, true);
        let t = sample_pose(&mut rng, 1.0, true);
        for kind in [ActionKind::Relative, ActionKind::Delta] {
            let a = random_trajectory(&mut rng, kind, 8, 0.3)?;
            let moved = transform_world(&g, &a);
            let bit_diff = if moved == a { 0.0 } else { moved.max_abs_diff(&a).max(f64::MIN_POSITIVE) };
            if kind == ActionKind::Relative {
                rel = rel.max(bit_diff);
            } else {
                delta = delta.max(bit_diff);
            }
            let lhs = to_absolute(&g.compose(&t), &a)?;
            let rhs = transform_world(&g, &to_absolute(&t, &a)?);
            recon = recon.max(lhs.max_abs_diff(&rhs));
        }
        let a = random_trajectory(&mut rng, ActionKind::Absolute, 8, 1.0)?;
        let moved = transform_world(&g, &a);
        for (m, s) in moved.steps().iter().zip(a.steps()) {
            abs = abs.max(max_abs4(&m.pose.to_matrix(), &mul4(&g.to_matrix(), &s.pose.to_matrix())));
        }
    }
    Ok(vec![
        CheckRow::at_most(Suite::Actions, "relative unchanged by g (bitwise)", rel, 0.0),
        CheckRow::at_most(Suite::Actions, "delta unchanged by g (bitwise)", delta, 0.0),
        CheckRow::at_most(Suite::Actions, "absolute maps to g * A_i", abs, 1e-9),
        CheckRow::at_most(Suite::Actions, "reconstruction from g * T", recon, 1e-9),
    ])
}

pub fn conversion_suite(n: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rel, mut delta) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let t = sample_pose(&mut rng, 1.0, true);
        let a = random_trajectory(&mut rng, ActionKind::Absolute, 8, 1.0)?;
        rel = rel.max(rel_to_abs(&t, &abs_to_rel(&t, &a)?)?.max_abs_diff(&a));
        delta = delta.max(delta_to_abs(&t, &abs_to_delta(&t, &a)?)?.max_abs_diff(&a));
        let r = random_trajectory(&mut rng, ActionKind::Relative, 8, 0.3)?;
        rel = rel.max(abs_to_rel(&t, &rel_to_abs(&t, &r)?)?.max_abs_diff(&r));
        let d = random_trajectory(&mut rng, ActionKind::Delta, 8, 0.3)?;
        delta = delta.max(abs_to_delta(&t, &delta_to_abs(&t, &d)?)?.max_abs_diff(&d));
    }
    Ok(vec![
        CheckRow::at_most(Suite::Actions, "abs <-> rel round trip", rel, 1e-9),
        CheckRow::at_most(Suite::Actions, "abs <-> delta round trip", delta, 1e-9),
    ])
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn random_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn group_suite(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut rot2 = 0.0f64;
    for u in [2, 3, 4, 8] {
        let group = CyclicGroup::new(u)?;
        let mut hom = 0.0f64;
        for g in group.elements() {
            for h in group.elements() {
                let gh = element_compose(&g, &h)?;
                let x = random_vec(&mut rng, 3 * u);
                let lhs = regular_rep_apply(&g, &regular_rep_apply(&h, &x)?)?;
                hom = hom.max(max_diff(&lhs, &regular_rep_apply(&gh, &x)?));
                let (a, b, c) = (rotation_2d(&g), rotation_2d(&h), rotation_2d(&gh));
                for i in 0..2 {
                    for j in 0..2 {
                        let ab = a[i][0] * b[0][j] + a[i][1] * b[1][j];
                        rot2 = rot2.max((ab - c[i][j]).abs());
                    }
                }
            }
        }
        rows.push(CheckRow::at_most(Suite::Groups, format!("regular rep homomorphism u={u}"), hom, 0.0));
    }
    rows.push(CheckRow::at_most(Suite::Groups, "rotation_2d homomorphism", rot2, 1e-12));

    // Distinct pixel values make "is a permutation" a sorted comparison.
    let size = 32;
    let mut vals: Vec<f64> = (0..size * size * 3).map(|i| i as f64 / 7.0).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let img = Image::new(size, size, 3, vals)?;
    let c4 = CyclicGroup::new(4)?;
    let mut sorted_orig = img.data.clone();
    sorted_orig.sort_by(f64::total_cmp);
    let (mut perm, mut comp) = (0.0f64, 0.0f64);
    for g in c4.elements() {
        let r = rotate_image(&g, &img)?;
        let mut s = r.data.clone();
        s.sort_by(f64::total_cmp);
        perm = perm.max(max_diff(&s, &sorted_orig));
        for h in c4.elements() {
            let lhs = rotate_image(&g, &rotate_image(&h, &img)?)?;
            let rhs = rotate_image(&element_compose(&g, &h)?, &img)?;
            comp = comp.max(max_diff(&lhs.data, &rhs.data));
        }
    }
    rows.push(CheckRow::at_most(Suite::Groups, "90-degree image rotation is a permutation", perm, 0.0));
    rows.push(CheckRow::at_most(Suite::Groups, "90-degree image rotations compose", comp, 0.0));
    Ok(rows)
}

/// Every layer kind, each inside a small stack, against central differences.
pub fn gradient_cases() -> Vec<(&'static str, Vec<LayerSpec>, Vec<usize>)> {
    vec![
        (
            "dense + relu",
            vec![
                LayerSpec::Dense { input: 5, output: 6 },
                LayerSpec::Relu,
                LayerSpec::Dense { input: 6, output: 3 },
            ],
            vec![5],
        ),
        (
            "conv2d + avgpool2 + flatten",
            vec![
                LayerSpec::Conv2d {
                    in_ch: 2,
                    out_ch: 3,
                    kernel: 3,
                    stride: 2,
                    pad: 1,
                },
                LayerSpec::Relu,
                LayerSpec::AvgPool2,
                LayerSpec::Flatten,
            ],
            vec![2, 8, 8],
        ),
        (
            "lifting + group conv + max pool (u=4)",
            vec![
                LayerSpec::LiftingConv {
                    order: 4,
                    in_ch: 1,
                    out_ch: 2,
                    kernel: 3,
                    pad: 1,
                },
                LayerSpec::GroupConv {
                    order: 4,
                    in_ch: 2,
                    out_ch: 1,
                    kernel: 3,
                    pad: 0,
                },
                LayerSpec::GroupPool {
                    order: 4,
                    mode: PoolMode::Max,
                },
                LayerSpec::Flatten,
            ],
            vec![1, 5, 5],
        ),
        (
            "lifting + mean pool (u=8)",
            vec![
                LayerSpec::LiftingConv {
                    order: 8,
                    in_ch: 1,
                    out_ch: 1,
                    kernel: 3,
                    pad: 1,
                },
                LayerSpec::GroupPool {
                    order: 8,
                    mode: PoolMode::Mean,
                },
                LayerSpec::Flatten,
            ],
            vec![1, 4, 4],
        ),
        (
            "time embedding + dense",
            vec![
                LayerSpec::SinusoidalTimeEmbed { dim: 8 },
                LayerSpec::Dense { input: 8, output: 2 },
            ],
            vec![1],
        ),
    ]
}

pub fn gradient_suite(seeds: &[u64]) -> Result<Vec<CheckRow>> {
    let mut rows = Vec::new();
    for (name, specs, input) in gradient_cases() {
        let mut worst = 0.0f64;
        for &seed in seeds {
            let mut net = Network::new("check", input.clone(), specs.clone(), seed)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
            for p in net.params_mut() {
                if p.name.ends_with("bias") {
                    p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
                }
            }
            let mut shape = vec![2];
            shape.extend(&input);
            let n = shape.iter().product();
            let x = Tensor::new(shape, random_vec(&mut rng, n))?;
            worst = worst.max(finite_diff_check(&mut net, &x, 1e-4)?.max_rel_error);
        }
        rows.push(CheckRow::at_most(Suite::Grads, name, worst, 1e-4));
    }
    Ok(rows)
}

/// Smooth scenes of three Gaussian blobs on a zero background, `H×W×3`.
pub fn blob_image<R: Rng>(rng: &mut R, size: usize) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let blobs: Vec<(f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            let r = rng.random_range(0.0..0.25) * size as f64;
            let t = rng.random_range(0.0..std::f64::consts::TAU);
            (c + r * t.cos(), c + r * t.sin(), [rng.random(), rng.random(), rng.random()])
        })
        .collect();
    let w = 0.08 * size as f64;
    let mut img = vec![0.0; size * size * 3];
    for i in 0..size {
        for j in 0..size {
            for &(y, x, col) in &blobs {
                let a = (-((i as f64 - y).powi(2) + (j as f64 - x).powi(2)) / (2.0 * w * w)).exp();
                for k in 0..3 {
                    img[(i * size + j) * 3 + k] += a * col[k];
                }
            }
        }
    }
    img
}

/// `x ↦ tanh(Wx + b)` with fixed random weights; not equivariant to anything.
fn random_map(n_in: usize, n_out: usize, seed: u64) -> impl Fn(&[f64]) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (n_in as f64).sqrt();
    let w: Vec<f64> = (0..n_in * n_out).map(|_| rng.random_range(-scale..scale)).collect();
    let b = random_vec(&mut rng, n_out);
    move |x: &[f64]| {
        if x.len() != n_in {
            return Err(Error::ShapeMismatch(format!("expected {n_in} inputs, got {}", x.len())));
        }
        Ok((0..n_out)
            .map(|o| (w[o * n_in..(o + 1) * n_in].iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b[o]).tanh())
            .collect())
    }
}

pub fn symmetrization_suite(seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for u in [2, 4, 8] {
        let group = CyclicGroup::new(u)?;
        let (rx, ry) = (Representation::regular(u, 2), Representation::regular(u, 3));
        let samples: Vec<Vec<f64>> = (0..20).map(|_| random_vec(&mut rng, 2 * u)).collect();
        let f = random_map(2 * u, 3 * u, seed + u as u64);
        let raw = equivariance_error(&f, &group, &rx, &ry, &samples)?;
        let sym = symmetrize(f, group, rx, ry);
        let err = equivariance_error(|x| sym.eval(x), &group, &rx, &ry, &samples)?;
        rows.push(CheckRow::at_most(Suite::Equivariance, format!("symmetrized map, vectors u={u}"), err, 1e-10));
        rows.push(CheckRow::above(Suite::Equivariance, format!("raw map is detected, vectors u={u}"), raw, 1e-3));
    }
    let size = 16;
    for (u, tol) in [(2, 1e-5), (4, 1e-5), (8, 5e-2)] {
        let group = CyclicGroup::new(u)?;
        let interp = if 4 % u == 0 { Interpolation::Exact90 } else { Interpolation::Bilinear };
        let (rx, ry) = (Representation::image(size, 3, interp), Representation::regular(u, 2));
        let samples: Vec<Vec<f64>> = (0..4).map(|_| blob_image(&mut rng, size)).collect();
        let sym = symmetrize(random_map(size * size * 3, 2 * u, seed + 100 + u as u64), group, rx, ry);
        let err = equivariance_error(|x| sym.eval(x), &group, &rx, &ry, &samples)?;
        rows.push(CheckRow::at_most(Suite::Equivariance, format!("symmetrized map, images u={u}"), err, tol));
    }
    Ok(rows)
}

fn encoder_error(cfg: &EncoderConfig, order: usize, samples: &[Vec<f64>], seed: u64) -> Result<f64> {
    let enc = build_encoder(cfg, seed)?;
    let s = cfg.input_size;
    let f = |x: &[f64]| -> Result<Vec<f64>> { Ok(enc.encode(&Image::new(s, s, 3, x.to_vec())?)?.values) };
    equivariance_error(
        f,
        &CyclicGroup::new(order)?,
        &Representation::image(s, 3, Interpolation::Exact90),
        &enc.rep(),
        samples,
    )
}

pub fn encoder_suite(n_images: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<Vec<f64>> = (0..n_images).map(|_| (0..32 * 32 * 3).map(|_| rng.random()).collect()).collect();
    let equi = EncoderConfig::new(EncoderKind::EquiCnn { order: 4 }, 64, 32);
    let fa = EncoderConfig::new(
        EncoderKind::FrozenStubFa {
            order: 4,
            mode: FaMode::Stacked,
        },
        64,
        32,
    );
    Ok(vec![
        CheckRow::at_most(
            Suite::Equivariance,
            "equivariant CNN u=4, quarter turns",
            encoder_error(&equi, 4, &samples, seed)?,
            1e-4,
        ),
        CheckRow::at_most(
            Suite::Equivariance,
            "frame-averaged stub u=4, quarter turns",
            encoder_error(&fa, 4, &samples[..4], seed)?,
            1e-5,
        ),
    ])
}

/// Freshly initialized policy with a randomized denoiser (the trained output
/// layer starts at zero) and fixed normalization ranges.
pub fn random_policy(cfg: PolicyConfig, seed: u64) -> Result<PolicyBundle> {
    let mut b = PolicyBundle::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in b.denoiser_mut().params_mut() {
        p.value.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.2..0.2));
    }
    let d = b.config().action_dim();
    b.set_stats(NormStats {
        min: (0..d).map(|i| -0.3 - 0.01 * i as f64).collect(),
        max: (0..d).map(|i| 0.4 + 0.01 * i as f64).collect(),
    })?;
    Ok(b)
}

fn check_policy_config(kind: ActionKind, condition_on_pose: bool) -> PolicyConfig {
    let mut cfg = PolicyConfig::new(kind, ObsMode::EyeInHand, EncoderConfig::new(EncoderKind::PlainCnn, 32, 32));
    cfg.crop = 32;
    cfg.hidden = 64;
    cfg.diffusion_steps = 20;
    cfg.condition_on_pose = condition_on_pose;
    cfg
}

/// Worst `‖g·π(o) − π(g·o)‖` for a random-init eye-in-hand policy.
pub fn policy_error(kind: ActionKind, condition_on_pose: bool, samples: usize, seed: u64) -> Result<f64> {
    let policy = random_policy(check_policy_config(kind, condition_on_pose), seed)?;
    policy_equivariance_error(&EnvConfig::new(Task::Reach), &policy, seed, samples)
}

pub fn policy_suite(samples: usize, seed: u64) -> Result<Vec<CheckRow>> {
    let rel = policy_error(ActionKind::Relative, false, samples, seed)?;
    let delta = policy_error(ActionKind::Delta, false, samples, seed)?;
    let cond = policy_error(ActionKind::Relative, true, samples, seed)?;
    let exact = rel.max(delta);
    Ok(vec![
        CheckRow::at_most(Suite::Equivariance, "policy, eye-in-hand + relative", rel, 1e-6),
        CheckRow::at_most(Suite::Equivariance, "policy, eye-in-hand + delta", delta, 1e-6),
        CheckRow::above(Suite::Equivariance, "policy, pose-conditioned (approximate)", cond, exact),
    ])
}
