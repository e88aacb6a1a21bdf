//! Experiment configs, the collect → train → eval pipeline, metrics records
//! and CSV reports.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::actions::{transform_world, ActionKind, Trajectory};
use crate::container::sha256_hex;
use crate::dataset::Dataset;
use crate::encoders::{EncoderKind, FaMode};
use crate::error::{Error, Result};
use crate::policy::{ObsMode, PolicyBundle, PolicyConfig, TrainingSet};
use crate::se3::{sample_pose, Pose};
use crate::sim::{self, CollectSpec, EnvConfig, Observation, Task};

pub const METRICS_SCHEMA: &str = "eqpk.metrics.v1";

/// Task plus optional overrides of its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub task: Task,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_objects: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
}

impl EnvSection {
    pub fn config(&self) -> EnvConfig {
        let mut c = EnvConfig::new(self.task);
        if let Some(n) = self.n_objects {
            c.n_objects = n;
        }
        if let Some(m) = self.max_steps {
            c.max_steps = m;
        }
        if let Some(t) = self.tolerance {
            c.tolerance = t;
        }
        c
    }
}

fn default_name() -> String {
    "experiment".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seeds: Vec<u64>,
    /// Successful demonstrations to collect.
    pub demos: usize,
    pub train_steps: usize,
    #[serde(default = "ExperimentConfig::default_batch")]
    pub batch_size: usize,
    #[serde(default = "ExperimentConfig::default_lr")]
    pub lr: f64,
    #[serde(default = "ExperimentConfig::default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "ExperimentConfig::default_log_every")]
    pub log_every: usize,
    /// Rollouts per evaluation transform.
    pub eval_episodes: usize,
    /// Planar world rotations evaluated besides the identity, evenly spaced.
    #[serde(default = "ExperimentConfig::default_rotations")]
    pub eval_rotations: usize,
    /// Also evaluate the final (non-averaged) weights when EMA is on.
    #[serde(default)]
    pub eval_final_weights: bool,
    #[serde(default = "ExperimentConfig::default_out")]
    pub out_dir: PathBuf,
    pub env: EnvSection,
    #[serde(default)]
    pub policy: PolicyConfig,
}

impl ExperimentConfig {
    fn default_batch() -> usize {
        32
    }
    fn default_lr() -> f64 {
        1e-3
    }
    fn default_warmup() -> usize {
        100
    }
    fn default_log_every() -> usize {
        100
    }
    fn default_rotations() -> usize {
        8
    }
    fn default_out() -> PathBuf {
        PathBuf::from("runs")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::BadConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::BadConfig(m) => Error::BadConfig(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if self.demos == 0 || self.train_steps == 0 || self.eval_episodes == 0 || self.batch_size == 0 {
            return bad("demos, train_steps, eval_episodes and batch_size must be at least 1");
        }
        if self.log_every == 0 {
            return bad("log_every must be at least 1");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and non-negative");
        }
        self.env.config().validate()?;
        self.policy.validate()
    }

    /// SHA-256 over every field except the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        sha256_hex(&serde_json::to_vec(&c).expect("config serializes"))
    }

    pub fn policy_for(&self, seed: u64) -> PolicyConfig {
        PolicyConfig {
            seed,
            ..self.policy.clone()
        }
    }

    pub fn collect_spec(&self, seed: u64) -> CollectSpec {
        CollectSpec {
            episodes: self.demos,
            seed,
            action_kind: self.policy.action_kind,
            horizon: self.policy.horizon,
            exec_steps: self.policy.exec_steps,
            cameras: self.policy.cameras(),
        }
    }

    /// Learning rate at `step`: linear warmup then cosine decay to zero.
    pub fn lr_at(&self, step: usize) -> f64 {
        let w = self.warmup_steps.min(self.train_steps);
        if step < w {
            return self.lr * (step + 1) as f64 / w as f64;
        }
        let span = (self.train_steps - w).max(1) as f64;
        let t = ((step - w) as f64 / span).min(1.0);
        self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
    }

    /// Evaluation world transforms: identity first, then evenly spaced
    /// rotations about the world z axis.
    pub fn eval_transforms(&self) -> Vec<Pose> {
        let n = self.eval_rotations + 1;
        (0..n)
            .map(|j| Pose::rz(std::f64::consts::TAU * j as f64 / n as f64))
            .collect()
    }
}

pub fn collect(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    sim::collect_demos(&cfg.env.config(), &cfg.collect_spec(seed))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: PolicyBundle,
    pub initial_loss: f64,
    /// Mean loss over the last `min(100, steps)` steps.
    pub final_loss: f64,
}

fn step_seed(seed: u64, step: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xBA7C_0000_0000_0000);
    r.set_stream(step);
    r.random()
}

/// Trains from scratch, logging the mean loss every `log_every` steps.
pub fn train(cfg: &ExperimentConfig, seed: u64, dataset: &Dataset, log: &mut dyn Write) -> Result<TrainOutcome> {
    train_until(cfg, seed, dataset, cfg.train_steps, log)
}

/// As [`train`] but stops after `until` steps; the learning-rate schedule
/// still spans `cfg.train_steps`.
pub fn train_until(
    cfg: &ExperimentConfig,
    seed: u64,
    dataset: &Dataset,
    until: usize,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    let mut bundle = PolicyBundle::new(cfg.policy_for(seed))?;
    bundle.fit_normalization(dataset)?;
    let set = TrainingSet::new(&bundle, dataset)?;
    train_more(cfg, bundle, &set, until, log)
}

/// Continues training `bundle` until it has taken `until` steps in total.
pub fn train_more(
    cfg: &ExperimentConfig,
    mut bundle: PolicyBundle,
    set: &TrainingSet,
    until: usize,
    log: &mut dyn Write,
) -> Result<TrainOutcome> {
    let seed = bundle.config().seed;
    let mut losses = Vec::with_capacity(until);
    let mut window = Vec::with_capacity(cfg.log_every);
    while (bundle.step() as usize) < until {
        let step = bundle.step() as usize;
        let mut rng = ChaCha8Rng::seed_from_u64(step_seed(seed, step as u64));
        let batch = set.batch(&bundle, cfg.batch_size, &mut rng)?;
        let loss = bundle.train_step(&batch, cfg.lr_at(step))?;
        losses.push(loss);
        window.push(loss);
        if window.len() == cfg.log_every || bundle.step() as usize == until {
            let mean = window.iter().sum::<f64>() / window.len() as f64;
            writeln!(log, "step {} loss {mean:.6}", bundle.step())?;
            window.clear();
        }
    }
    let initial_loss = losses.first().copied().unwrap_or(f64::NAN);
    let tail = &losses[losses.len().saturating_sub(100)..];
    let final_loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    bundle.set_final_loss(final_loss);
    Ok(TrainOutcome {
        bundle,
        initial_loss,
        final_loss,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformResult {
    pub angle: f64,
    pub successes: usize,
    pub episodes: usize,
}

/// One evaluated (config, seed) pair. Wall time is kept out of this record
/// so metrics files are byte-reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsRecord {
    pub schema: String,
    pub name: String,
    pub config_hash: String,
    pub seed: u64,
    pub task: Task,
    pub obs_mode: ObsMode,
    pub action_kind: ActionKind,
    pub encoder: String,
    pub condition_on_pose: bool,
    /// Mean over every evaluation transform (identity included).
    pub success_rate: f64,
    pub success_rate_identity: f64,
    /// Non-averaged weights, when evaluated.
    pub success_rate_final_weights: Option<f64>,
    pub transforms: Vec<TransformResult>,
    pub final_loss: Option<f64>,
    /// max ‖g·π(o) − π(g·o)‖ over random `g ∈ SE(3)` with matched seeds.
    pub equivariance_error: f64,
    /// "exact" when the configuration is invariant by construction,
    /// "approximate" otherwise.
    pub equivariance_case: String,
}

impl MetricsRecord {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("record serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<MetricsRecord> {
        let r: MetricsRecord =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("metrics record: {e}")))?;
        if r.schema != METRICS_SCHEMA {
            return Err(Error::Format(format!("unknown metrics schema {}", r.schema)));
        }
        if !(0.0..=1.0).contains(&r.success_rate) {
            return Err(Error::Format("success_rate outside [0, 1]".into()));
        }
        Ok(r)
    }
}

fn episode_seed(seed: u64, episode: usize) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0xE7A1_0000_0000_0000);
    r.set_stream(episode as u64);
    r.random()
}

/// Closed-loop rollout: sample a plan, execute `exec_steps` of it, replan.
/// A plan that cannot be decoded ends the episode as a failure.
pub fn run_episode(env: &EnvConfig, policy: &PolicyBundle, reset_seed: u64, g: &Pose, rng_seed: u64) -> Result<bool> {
    let cfg = policy.config();
    let cams = cfg.cameras();
    let mut state = sim::reset(env, reset_seed, g)?;
    let mut history = vec![state.gripper; cfg.history];
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    while state.step_count < env.max_steps && !sim::is_success(&state) {
        let obs = sim::observe(&state, &cams, &history);
        let plan = match policy.predict_absolute(&obs, &mut rng) {
            Ok(p) => p,
            Err(Error::DegenerateRotation) => return Ok(false),
            Err(e) => return Err(e),
        };
        for cmd in plan.steps().iter().take(cfg.exec_steps) {
            state = sim::step(&state, cmd);
            history.remove(0);
            history.push(state.gripper);
            if sim::is_success(&state) || state.step_count >= env.max_steps {
                break;
            }
        }
    }
    Ok(sim::is_success(&state))
}

/// Worker count for evaluation: `EQPK_THREADS` if set, else rayon's default.
pub fn eval_threads() -> usize {
    std::env::var("EQPK_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

fn success_counts(cfg: &ExperimentConfig, policy: &PolicyBundle, seed: u64) -> Result<Vec<TransformResult>> {
    let env = cfg.env.config();
    let transforms = cfg.eval_transforms();
    let jobs: Vec<(usize, usize)> = (0..transforms.len())
        .flat_map(|t| (0..cfg.eval_episodes).map(move |e| (t, e)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(eval_threads())
        .build()
        .map_err(|e| Error::BadConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<bool>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(t, e)| {
                let s = episode_seed(seed, e);
                run_episode(&env, policy, s, &transforms[t], s)
            })
            .collect()
    });
    let mut out: Vec<TransformResult> = transforms
        .iter()
        .map(|g| TransformResult {
            angle: g.rot.yaw(),
            successes: 0,
            episodes: cfg.eval_episodes,
        })
        .collect();
    for (&(t, _), r) in jobs.iter().zip(outcomes) {
        if r? {
            out[t].successes += 1;
        }
    }
    Ok(out)
}

/// Largest world-frame disagreement `‖g·π(o) − π(g·o)‖∞` over a few
/// canonical observations and random rigid transforms, with matched rngs.
pub fn policy_equivariance_error(env: &EnvConfig, policy: &PolicyBundle, seed: u64, samples: usize) -> Result<f64> {
    let cfg = policy.config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0E9E_0000_0000_0000);
    let mut worst = 0.0f64;
    for i in 0..samples {
        let st = sim::reset(env, episode_seed(seed, i), &Pose::IDENTITY)?;
        let obs = sim::observe(&st, &cfg.cameras(), &vec![st.gripper; cfg.history]);
        let g = sample_pose(&mut rng, 0.5, true);
        let s: u64 = rng.random();
        let a = predict_or_none(policy, &obs, s);
        let ga = predict_or_none(policy, &obs.with_world_transform(&g), s);
        if let (Some(a), Some(ga)) = (a, ga) {
            worst = worst.max(transform_world(&g, &a).max_abs_diff(&ga));
        }
    }
    Ok(worst)
}

fn predict_or_none(policy: &PolicyBundle, obs: &Observation, seed: u64) -> Option<Trajectory> {
    policy.predict_absolute(obs, &mut ChaCha8Rng::seed_from_u64(seed)).ok()
}

pub fn equivariance_case(p: &PolicyConfig) -> &'static str {
    let invariant_obs = p.obs_mode == ObsMode::EyeInHand && !p.condition_on_pose;
    if invariant_obs && p.action_kind != ActionKind::Absolute {
        "exact"
    } else {
        "approximate"
    }
}

fn rate(ts: &[TransformResult]) -> f64 {
    let (s, n) = ts.iter().fold((0, 0), |(s, n), t| (s + t.successes, n + t.episodes));
    s as f64 / n.max(1) as f64
}

pub fn evaluate(cfg: &ExperimentConfig, seed: u64, bundle: &PolicyBundle) -> Result<MetricsRecord> {
    let p = bundle.config();
    let ema = bundle.with_ema_weights();
    let transforms = success_counts(cfg, &ema, seed)?;
    let final_weights = if cfg.eval_final_weights && p.ema {
        Some(rate(&success_counts(cfg, bundle, seed)?))
    } else {
        None
    };
    let equivariance_error = policy_equivariance_error(&cfg.env.config(), &ema, seed, 4)?;
    Ok(MetricsRecord {
        schema: METRICS_SCHEMA.into(),
        name: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed,
        task: cfg.env.task,
        obs_mode: p.obs_mode,
        action_kind: p.action_kind,
        encoder: p.encoder.kind.label(),
        condition_on_pose: p.condition_on_pose,
        success_rate: rate(&transforms),
        success_rate_identity: rate(&transforms[..1]),
        success_rate_final_weights: final_weights,
        transforms,
        final_loss: bundle.final_loss(),
        equivariance_error,
        equivariance_case: equivariance_case(p).into(),
    })
}

/// Checks that a checkpoint was trained under `cfg`'s policy settings.
pub fn check_compatible(cfg: &ExperimentConfig, bundle: &PolicyBundle) -> Result<()> {
    let want = cfg.policy_for(bundle.config().seed);
    if &want != bundle.config() {
        return Err(Error::Format("checkpoint policy settings differ from the config".into()));
    }
    Ok(())
}

/// Mean and standard error (sample standard deviation over √n).
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub task: Task,
    pub obs_mode: ObsMode,
    pub action_kind: ActionKind,
    pub encoder: String,
    pub condition_on_pose: bool,
    pub seeds: usize,
    pub mean: f64,
    pub se: f64,
}

pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String, String, String, bool), (MetricsRecord, Vec<f64>)> = BTreeMap::new();
    for r in records {
        let key = (
            r.task.as_str().to_string(),
            r.obs_mode.as_str().to_string(),
            r.action_kind.as_str().to_string(),
            r.encoder.clone(),
            r.condition_on_pose,
        );
        groups.entry(key).or_insert_with(|| (r.clone(), Vec::new())).1.push(r.success_rate);
    }
    groups
        .into_values()
        .map(|(r, xs)| {
            let (mean, se) = mean_se(&xs);
            SummaryRow {
                task: r.task,
                obs_mode: r.obs_mode,
                action_kind: r.action_kind,
                encoder: r.encoder,
                condition_on_pose: r.condition_on_pose,
                seeds: xs.len(),
                mean,
                se,
            }
        })
        .collect()
}

/// Per-run rows and the grouped summary, both as CSV text.
pub fn report_csv(records: &[MetricsRecord]) -> Result<(String, String)> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rows = csv::Writer::from_writer(Vec::new());
    rows.write_record([
        "name",
        "task",
        "obs_mode",
        "action_kind",
        "encoder",
        "condition_on_pose",
        "seed",
        "config_hash",
        "success_rate",
        "success_rate_identity",
        "final_loss",
        "equivariance_error",
    ])
    .map_err(csv_err)?;
    for r in records {
        rows.write_record([
            r.name.clone(),
            r.task.as_str().into(),
            r.obs_mode.as_str().into(),
            r.action_kind.as_str().into(),
            r.encoder.clone(),
            r.condition_on_pose.to_string(),
            r.seed.to_string(),
            r.config_hash.clone(),
            format!("{:.4}", r.success_rate),
            format!("{:.4}", r.success_rate_identity),
            r.final_loss.map_or(String::new(), |l| format!("{l:.6}")),
            format!("{:.3e}", r.equivariance_error),
        ])
        .map_err(csv_err)?;
    }
    let mut sum = csv::Writer::from_writer(Vec::new());
    sum.write_record(["task", "obs_mode", "action_kind", "encoder", "condition_on_pose", "seeds", "mean", "se", "mean_pm_se"])
        .map_err(csv_err)?;
    for s in summarize(records) {
        sum.write_record([
            s.task.as_str().into(),
            s.obs_mode.as_str().into(),
            s.action_kind.as_str().into(),
            s.encoder.clone(),
            s.condition_on_pose.to_string(),
            s.seeds.to_string(),
            format!("{:.4}", s.mean),
            format!("{:.4}", s.se),
            format!("{:.3} ± {:.3}", s.mean, s.se),
        ])
        .map_err(csv_err)?;
    }
    let text = |w: csv::Writer<Vec<u8>>| String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8");
    Ok((text(rows), text(sum)))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Collects (or reuses) datasets, trains and evaluates every config for
/// every seed. Datasets are shared between configs that would record the
/// same demonstrations.
pub fn run_matrix(configs: &[ExperimentConfig], mut progress: impl FnMut(&MetricsRecord)) -> Result<Vec<MetricsRecord>> {
    let mut cache: BTreeMap<String, Dataset> = BTreeMap::new();
    let mut out = Vec::new();
    for cfg in configs {
        cfg.validate()?;
        for &seed in &cfg.seeds {
            let key = serde_json::to_string(&(cfg.env.config(), cfg.collect_spec(seed).cameras, cfg.policy.action_kind, cfg.policy.horizon, cfg.policy.exec_steps, cfg.demos, seed))?;
            if !cache.contains_key(&key) {
                cache.insert(key.clone(), collect(cfg, seed)?);
            }
            let trained = train(cfg, seed, &cache[&key], &mut std::io::sink())?;
            let rec = evaluate(cfg, seed, &trained.bundle)?;
            progress(&rec);
            out.push(rec);
        }
    }
    Ok(out)
}

/// The comparison arms of the rotated-evaluation experiment, built on
/// `base` (which fixes task, budget and seeds). Each arm's `name` is its
/// label so records from different tasks group together.
pub fn comparison_arms(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let arm = |label: &str, kind: ActionKind, obs: ObsMode, enc: EncoderKind| {
        let mut c = base.clone();
        c.name = label.to_string();
        c.policy.action_kind = kind;
        c.policy.obs_mode = obs;
        c.policy.encoder.kind = enc;
        c
    };
    use ActionKind::{Absolute, Relative};
    use ObsMode::{External, EyeInHand};
    vec![
        arm("abs_external_plain", Absolute, External, EncoderKind::PlainCnn),
        arm("rel_eih_plain", Relative, EyeInHand, EncoderKind::PlainCnn),
        arm("rel_eih_equi_c4", Relative, EyeInHand, EncoderKind::EquiCnn { order: 4 }),
        arm("rel_eih_equi_c2", Relative, EyeInHand, EncoderKind::EquiCnn { order: 2 }),
        arm("rel_eih_frozen_stub", Relative, EyeInHand, EncoderKind::FrozenStub),
        arm(
            "rel_eih_frozen_stub_fa_c4",
            Relative,
            EyeInHand,
            EncoderKind::FrozenStubFa {
                order: 4,
                mode: FaMode::Stacked,
            },
        ),
    ]
}

/// Per-seed success of the records named `name`, averaged over tasks;
/// sorted by seed.
pub fn seed_means(records: &[MetricsRecord], name: &str) -> Vec<f64> {
    let mut by_seed: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.name == name) {
        by_seed.entry(r.seed).or_default().push(r.success_rate);
    }
    by_seed.values().map(|v| v.iter().sum::<f64>() / v.len() as f64).collect()
}

/// "`a` is at least as good as `b`", with a tie allowance of one combined
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderingCheck {
    pub mean_a: f64,
    pub se_a: f64,
    pub mean_b: f64,
    pub se_b: f64,
}

impl OrderingCheck {
    pub fn new(a: &[f64], b: &[f64]) -> Self {
        let (mean_a, se_a) = mean_se(a);
        let (mean_b, se_b) = mean_se(b);
        OrderingCheck { mean_a, se_a, mean_b, se_b }
    }

    pub fn allowance(&self) -> f64 {
        self.se_a.hypot(self.se_b)
    }

    pub fn holds(&self) -> bool {
        self.mean_a >= self.mean_b - self.allowance()
    }
}
