//! DDPM policy over flattened gripper trajectories, conditioned on encoded
//! images and (optionally) proprioception.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::actions::{flatten, to_absolute, unflatten, ActionKind, Trajectory, STEP_DIM};
use crate::container::{self, Array, ArrayData, CHECKPOINT_MAGIC};
use crate::dataset::Dataset;
use crate::encoders::{build_encoder, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::groups::Image;
use crate::nn::{adam_step, AdamConfig, AdamState, LayerSpec, Network, Param, Tensor};
use crate::sim::{CameraConfig, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    #[default]
    SquaredCosine,
}

/// Per-step DDPM coefficients, indexed by `k ∈ 1..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    pub kind: ScheduleKind,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
    /// `β̃_k = β_k (1 − ᾱ_{k−1}) / (1 − ᾱ_k)`.
    pub posterior_variance: Vec<f64>,
}

const MAX_BETA: f64 = 0.999;

pub fn make_noise_schedule(k: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if k == 0 {
        return Err(Error::BadK(k));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            let scale = 1000.0 / k as f64;
            let (lo, hi) = (scale * 1e-4, scale * 0.02);
            (0..k)
                .map(|i| {
                    let t = if k == 1 { 0.0 } else { i as f64 / (k - 1) as f64 };
                    (lo + t * (hi - lo)).min(MAX_BETA)
                })
                .collect()
        }
        ScheduleKind::SquaredCosine => {
            let s = 0.008;
            let f = |t: f64| (((t / k as f64) + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2);
            (0..k).map(|i| (1.0 - f(i as f64 + 1.0) / f(i as f64)).min(MAX_BETA)).collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(k);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    let posterior_variance = (0..k)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
            betas[i] * (1.0 - prev) / (1.0 - alpha_bars[i])
        })
        .collect();
    Ok(NoiseSchedule {
        kind,
        betas,
        alphas,
        alpha_bars,
        posterior_variance,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// Outer factor `1/√α_k` of the reverse update.
    pub fn alpha_coef(&self, k: usize) -> f64 {
        1.0 / self.alphas[k - 1].sqrt()
    }

    /// Noise-prediction factor `(1 − α_k)/√(1 − ᾱ_k)`.
    pub fn gamma_coef(&self, k: usize) -> f64 {
        (1.0 - self.alphas[k - 1]) / (1.0 - self.alpha_bars[k - 1]).sqrt()
    }

    /// Standard deviation of the noise added inside the bracket of
    /// `a' = α(a − γ ε̂ + ε)`; scaled by `α` it gives `√β̃_k`.
    pub fn sigma(&self, k: usize) -> f64 {
        (self.posterior_variance[k - 1] * self.alphas[k - 1]).sqrt()
    }

    /// Input, skip and output scalings `(c_in, c_skip, c_out)` for a noise
    /// predictor `ε̂ = c_skip·a_k + c_out·F(c_in·a_k)`, taken from the
    /// best linear predictor of `ε` when `a₀` has standard deviation
    /// `sigma_data`. The residual target for `F` then has unit variance.
    pub fn preconditioning(&self, k: usize, sigma_data: f64) -> (f64, f64, f64) {
        let ab = self.alpha_bars[k - 1];
        let (s2, n2, d2) = (ab, 1.0 - ab, sigma_data * sigma_data);
        let var = s2 * d2 + n2;
        (1.0 / var.sqrt(), n2.sqrt() / var, (s2 * d2 / var).sqrt())
    }

    fn check_k(&self, k: usize) -> Result<()> {
        if k == 0 || k > self.steps() {
            return Err(Error::BadK(k));
        }
        Ok(())
    }

    /// `√ᾱ_k a₀ + √(1 − ᾱ_k) ε`.
    pub fn add_noise(&self, a0: &[f64], k: usize, eps: &[f64]) -> Result<Vec<f64>> {
        self.check_k(k)?;
        if a0.len() != eps.len() {
            return Err(Error::ShapeMismatch(format!("noise length {} vs action length {}", eps.len(), a0.len())));
        }
        let (s, n) = (self.alpha_bars[k - 1].sqrt(), (1.0 - self.alpha_bars[k - 1]).sqrt());
        Ok(a0.iter().zip(eps).map(|(a, e)| s * a + n * e).collect())
    }

    /// One reverse step `α(a − γ ε̂ + σ z)`.
    pub fn reverse_step(&self, k: usize, a: &mut [f64], eps_hat: &[f64], z: &[f64]) {
        let (al, ga, si) = (self.alpha_coef(k), self.gamma_coef(k), self.sigma(k));
        for ((ai, e), zi) in a.iter_mut().zip(eps_hat).zip(z) {
            *ai = al * (*ai - ga * e + si * zi);
        }
    }
}

/// Per-dimension min/max scaling to `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Ranges narrower than this are treated as constant.
const CONSTANT_RANGE: f64 = 1e-9;

impl NormStats {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<NormStats> {
        let mut it = rows.into_iter();
        let first = it.next().ok_or(Error::EmptyDataset)?;
        let (mut min, mut max) = (first.to_vec(), first.to_vec());
        for r in it {
            if r.len() != min.len() {
                return Err(Error::ShapeMismatch("rows of different width".into()));
            }
            for (i, &v) in r.iter().enumerate() {
                min[i] = min[i].min(v);
                max[i] = max[i].max(v);
            }
        }
        Ok(NormStats { min, max })
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let r = self.max[i] - self.min[i];
                if r < CONSTANT_RANGE {
                    0.0
                } else {
                    2.0 * (v - self.min[i]) / r - 1.0
                }
            })
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(i, &v)| {
                let r = self.max[i] - self.min[i];
                if r < CONSTANT_RANGE {
                    self.min[i]
                } else {
                    (v + 1.0) * 0.5 * r + self.min[i]
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObsMode {
    EyeInHand,
    External,
    Both,
}

impl ObsMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObsMode::EyeInHand => "eye_in_hand",
            ObsMode::External => "external",
            ObsMode::Both => "both",
        }
    }
}

/// Output parametrization of the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    /// The network output is the noise estimate.
    Epsilon,
    /// `ε̂ = c_skip·a_k + c_out·F(c_in·a_k)`, see
    /// [`NoiseSchedule::preconditioning`].
    #[default]
    Preconditioned,
}

/// Every field has a desk-scale default, so config files only list what
/// they change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub action_kind: ActionKind,
    pub obs_mode: ObsMode,
    /// Predicted steps `n`.
    pub horizon: usize,
    /// Pose history length `m`.
    pub history: usize,
    pub exec_steps: usize,
    /// Feed gripper poses (not just the aperture) to the denoiser.
    pub condition_on_pose: bool,
    pub encoder: EncoderConfig,
    pub diffusion_steps: usize,
    pub schedule: ScheduleKind,
    /// Rendered image side; training crops randomly to `crop`, evaluation
    /// crops at the center. `crop == image_size` disables cropping.
    pub image_size: usize,
    pub crop: usize,
    pub eye_in_hand_fov: f64,
    pub prediction: Prediction,
    /// Assumed spread of normalized actions for preconditioning.
    pub sigma_data: f64,
    pub hidden: usize,
    pub time_embed_dim: usize,
    pub ema: bool,
    pub ema_decay: f64,
    pub optimizer: AdamConfig,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::new(ActionKind::Relative, ObsMode::EyeInHand, EncoderConfig::default())
    }
}

impl PolicyConfig {
    pub fn new(action_kind: ActionKind, obs_mode: ObsMode, encoder: EncoderConfig) -> Self {
        PolicyConfig {
            action_kind,
            obs_mode,
            horizon: 8,
            history: 2,
            exec_steps: 4,
            condition_on_pose: false,
            encoder,
            diffusion_steps: 50,
            schedule: ScheduleKind::default(),
            image_size: 32,
            crop: 28,
            eye_in_hand_fov: 2.0,
            prediction: Prediction::default(),
            sigma_data: 0.1,
            hidden: 256,
            time_embed_dim: 16,
            ema: true,
            ema_decay: 0.999,
            optimizer: AdamConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.history == 0 {
            return bad("history must be at least 1".into());
        }
        if self.exec_steps == 0 || self.exec_steps > self.horizon {
            return bad(format!("exec_steps {} must lie in 1..={}", self.exec_steps, self.horizon));
        }
        if self.diffusion_steps == 0 {
            return Err(Error::BadK(0));
        }
        let side = self.crop;
        if side > self.image_size {
            return bad(format!("crop {side} exceeds image size {}", self.image_size));
        }
        if self.encoder.input_size != side {
            return bad(format!("encoder input {} must equal the cropped image side {side}", self.encoder.input_size));
        }
        if self.encoder.channels != 3 {
            return bad("rendered images have 3 channels".into());
        }
        if self.hidden == 0 || self.time_embed_dim < 2 || self.time_embed_dim % 2 != 0 {
            return bad("hidden width must be positive and time embedding even".into());
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return bad("sigma_data must be positive".into());
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad("ema_decay must lie in [0, 1)".into());
        }
        self.encoder.validate()
    }

    pub fn cameras(&self) -> Vec<CameraConfig> {
        let eih = CameraConfig {
            fov_scale: self.eye_in_hand_fov,
            ..CameraConfig::eye_in_hand(self.image_size)
        };
        let ext = CameraConfig::external(self.image_size);
        match self.obs_mode {
            ObsMode::EyeInHand => vec![eih],
            ObsMode::External => vec![ext],
            ObsMode::Both => vec![eih, ext],
        }
    }

    pub fn action_dim(&self) -> usize {
        self.horizon * STEP_DIM
    }

    pub fn proprio_dim(&self) -> usize {
        if self.condition_on_pose {
            self.history * 9 + 1
        } else {
            1
        }
    }
}

/// Aperture rescaled to roughly unit range before it enters the network.
const APERTURE_SCALE: f64 = 10.0;

/// Encoders, denoiser, schedule, optimizer state and normalization, i.e.
/// everything a checkpoint holds.
#[derive(Debug, Clone)]
pub struct PolicyBundle {
    config: PolicyConfig,
    encoders: Vec<Encoder>,
    denoiser: Network,
    time_embed: Network,
    schedule: NoiseSchedule,
    optimizer: AdamState,
    stats: Option<NormStats>,
    ema: Option<Vec<Vec<f64>>>,
    step: u64,
    final_loss: Option<f64>,
}

/// One minibatch: per-camera images `[B, 3, S, S]` (or precomputed
/// features), proprioception and raw flattened actions.
#[derive(Debug, Clone)]
pub struct TrainBatch {
    pub images: Vec<Tensor>,
    pub features: Option<Tensor>,
    pub proprio: Tensor,
    pub actions: Tensor,
}

fn mix_seed(a: u64, b: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.random()
}

impl PolicyBundle {
    pub fn new(config: PolicyConfig) -> Result<Self> {
        config.validate()?;
        let cams = config.cameras();
        let encoders = (0..cams.len())
            .map(|c| build_encoder(&config.encoder, mix_seed(config.seed, 100 + c as u64)))
            .collect::<Result<Vec<_>>>()?;
        let feat: usize = encoders.iter().map(|e| e.output_dim()).sum();
        let input = feat + config.proprio_dim() + config.time_embed_dim + config.action_dim();
        let h = config.hidden;
        let mut denoiser = Network::new(
            "denoiser",
            vec![input],
            vec![
                LayerSpec::Dense { input, output: h },
                LayerSpec::Relu,
                LayerSpec::Dense { input: h, output: h },
                LayerSpec::Relu,
                LayerSpec::Dense { input: h, output: h },
                LayerSpec::Relu,
                LayerSpec::Dense {
                    input: h,
                    output: config.action_dim(),
                },
            ],
            mix_seed(config.seed, 1),
        )?;
        denoiser.zero_last_layer();
        let time_embed = Network::new(
            "time",
            vec![1],
            vec![LayerSpec::SinusoidalTimeEmbed {
                dim: config.time_embed_dim,
            }],
            0,
        )?;
        let schedule = make_noise_schedule(config.diffusion_steps, config.schedule)?;
        let mut bundle = PolicyBundle {
            config,
            encoders,
            denoiser,
            time_embed,
            schedule,
            optimizer: AdamState::default(),
            stats: None,
            ema: None,
            step: 0,
            final_loss: None,
        };
        if bundle.config.ema {
            bundle.ema = Some(bundle.trainable_values());
        }
        Ok(bundle)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn encoders(&self) -> &[Encoder] {
        &self.encoders
    }

    pub fn denoiser(&self) -> &Network {
        &self.denoiser
    }

    pub fn denoiser_mut(&mut self) -> &mut Network {
        &mut self.denoiser
    }

    pub fn stats(&self) -> Option<&NormStats> {
        self.stats.as_ref()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Training loss summary recorded by whoever ran the training loop.
    pub fn final_loss(&self) -> Option<f64> {
        self.final_loss
    }

    pub fn set_final_loss(&mut self, loss: f64) {
        self.final_loss = Some(loss);
    }

    pub fn feature_dim(&self) -> usize {
        self.encoders.iter().map(|e| e.output_dim()).sum()
    }

    pub fn encoders_frozen(&self) -> bool {
        self.encoders.iter().all(|e| !e.is_trainable())
    }

    fn params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<(String, &Param)> = Vec::new();
        for (c, e) in self.encoders.iter().enumerate() {
            out.extend(e.network().params().into_iter().map(|p| (format!("cam{c}/{}", p.name), p)));
        }
        out.extend(self.denoiser.params().into_iter().map(|p| (p.name.clone(), p)));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        for e in &mut self.encoders {
            out.extend(e.network_mut().params_mut());
        }
        out.extend(self.denoiser.params_mut());
        out
    }

    fn trainable_values(&self) -> Vec<Vec<f64>> {
        self.params()
            .into_iter()
            .filter(|(_, p)| p.trainable)
            .map(|(_, p)| p.value.data().to_vec())
            .collect()
    }

    /// Fits action normalization from every label in `dataset`.
    pub fn fit_normalization(&mut self, dataset: &Dataset) -> Result<&NormStats> {
        self.check_dataset(dataset)?;
        let rows: Vec<Vec<f64>> = dataset
            .episodes
            .iter()
            .flat_map(|e| &e.steps)
            .map(|s| flatten(&s.label))
            .collect();
        self.stats = Some(NormStats::fit(rows.iter().map(|r| r.as_slice()))?);
        Ok(self.stats.as_ref().expect("just set"))
    }

    pub fn set_stats(&mut self, stats: NormStats) -> Result<()> {
        if stats.min.len() != self.config.action_dim() || stats.max.len() != self.config.action_dim() {
            return Err(Error::ShapeMismatch("normalization stats width".into()));
        }
        self.stats = Some(stats);
        Ok(())
    }

    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        if dataset.meta.action_kind != self.config.action_kind {
            return Err(Error::WrongKind {
                expected: self.config.action_kind,
                got: dataset.meta.action_kind,
            });
        }
        if dataset.meta.horizon != self.config.horizon {
            return Err(Error::BadConfig(format!(
                "dataset horizon {} differs from policy horizon {}",
                dataset.meta.horizon, self.config.horizon
            )));
        }
        if dataset.meta.cameras != self.config.cameras() {
            return Err(Error::BadConfig("dataset cameras differ from the policy's observation mode".into()));
        }
        if dataset.n_steps() == 0 {
            return Err(Error::EmptyDataset);
        }
        Ok(())
    }

    pub fn proprio(&self, obs: &Observation) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.config.proprio_dim());
        if self.config.condition_on_pose {
            for p in &obs.history {
                v.extend_from_slice(p.to_vector().as_slice());
            }
        }
        v.push(obs.aperture * APERTURE_SCALE);
        v
    }

    /// Channels-first crop of `img` at `(top, left)`.
    pub fn crop_chw(&self, img: &Image, top: usize, left: usize) -> Result<Vec<f64>> {
        let side = self.config.crop;
        Ok(img.crop(top, left, side)?.to_chw())
    }

    fn center_offset(&self) -> usize {
        (self.config.image_size - self.config.crop) / 2
    }

    /// Features ⊕ proprioception for each observation (center crops).
    pub fn condition(&self, obs: &[&Observation]) -> Result<Tensor> {
        let b = obs.len();
        let side = self.config.crop;
        let off = self.center_offset();
        let mut parts = Vec::with_capacity(self.encoders.len() + 1);
        for (c, enc) in self.encoders.iter().enumerate() {
            let mut data = Vec::with_capacity(b * 3 * side * side);
            for o in obs {
                let img = o
                    .images
                    .get(c)
                    .ok_or_else(|| Error::ShapeMismatch(format!("observation lacks camera {c}")))?;
                data.extend(self.crop_chw(img, off, off)?);
            }
            parts.push(enc.encode_batch(&Tensor::new(vec![b, 3, side, side], data)?)?);
        }
        let p: Vec<f64> = obs.iter().flat_map(|o| self.proprio(o)).collect();
        parts.push(Tensor::new(vec![b, self.config.proprio_dim()], p)?);
        Tensor::concat_features(&parts.iter().collect::<Vec<_>>())
    }

    /// Encodes center-cropped images of one camera; used to cache frozen
    /// features before training.
    pub fn encode_images(&self, camera: usize, images: &Tensor) -> Result<Tensor> {
        self.encoders[camera].encode_batch(images)
    }

    fn precond(&self, k: usize) -> (f64, f64, f64) {
        match self.config.prediction {
            Prediction::Preconditioned => self.schedule.preconditioning(k, self.config.sigma_data),
            Prediction::Epsilon => (1.0, 0.0, 1.0),
        }
    }

    fn denoiser_input(&self, cond: &Tensor, ks: &[usize], a: &[Vec<f64>]) -> Result<Tensor> {
        let b = ks.len();
        let kt = Tensor::new(vec![b, 1], ks.iter().map(|&k| k as f64).collect())?;
        let temb = self.time_embed.infer(&kt)?;
        let scaled = ks
            .iter()
            .zip(a)
            .flat_map(|(&k, row)| {
                let c_in = self.precond(k).0;
                row.iter().map(move |v| c_in * v)
            })
            .collect();
        let at = Tensor::new(vec![b, self.config.action_dim()], scaled)?;
        Tensor::concat_features(&[cond, &temb, &at])
    }

    /// Noise estimate from the raw network output, in place.
    fn noise_estimate(&self, k: usize, a: &[f64], out: &mut [f64]) {
        let (_, skip, scale) = self.precond(k);
        for (o, ai) in out.iter_mut().zip(a) {
            *o = skip * ai + scale * *o;
        }
    }

    /// One optimization step on the noise-prediction loss; returns the
    /// mean squared error per coordinate.
    pub fn train_step(&mut self, batch: &TrainBatch, lr: f64) -> Result<f64> {
        let stats = self.stats.clone().ok_or(Error::UnfittedStats)?;
        let b = batch.actions.batch();
        let d = self.config.action_dim();
        if batch.actions.item_len() != d || batch.proprio.batch() != b {
            return Err(Error::ShapeMismatch("batch actions/proprio do not match the policy".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed, 0x5EED_0000 + self.step));
        let kmax = self.schedule.steps();
        let mut ks = Vec::with_capacity(b);
        let mut eps = Vec::with_capacity(b * d);
        let mut noisy = Vec::with_capacity(b);
        for i in 0..b {
            let k = rng.random_range(1..=kmax);
            let e: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let a0 = stats.normalize(batch.actions.item(i));
            noisy.push(self.schedule.add_noise(&a0, k, &e)?);
            eps.extend(e);
            ks.push(k);
        }

        for p in self.params_mut() {
            p.grad.fill(0.0);
        }
        let feats = match &batch.features {
            Some(f) => f.clone(),
            None => {
                let mut parts = Vec::with_capacity(self.encoders.len());
                for (enc, imgs) in self.encoders.iter_mut().zip(&batch.images) {
                    parts.push(enc.forward_train(imgs)?);
                }
                Tensor::concat_features(&parts.iter().collect::<Vec<_>>())?
            }
        };
        let cond = Tensor::concat_features(&[&feats, &batch.proprio])?;
        let input = self.denoiser_input(&cond, &ks, &noisy)?;
        let out = self.denoiser.forward(&input)?;
        let n = (b * d) as f64;
        let mut loss = 0.0;
        let mut grad = Vec::with_capacity(b * d);
        for i in 0..b {
            let mut est = out.item(i).to_vec();
            self.noise_estimate(ks[i], &noisy[i], &mut est);
            let scale = self.precond(ks[i]).2;
            for (o, e) in est.iter().zip(&eps[i * d..(i + 1) * d]) {
                let r = o - e;
                loss += r * r;
                grad.push(2.0 * r * scale / n);
            }
        }
        loss /= n;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss at step {}", self.step)));
        }
        let g_in = self.denoiser.backward(&Tensor::new(out.shape().to_vec(), grad)?)?;
        if batch.features.is_none() && !self.encoders_frozen() {
            let widths: Vec<usize> = self.encoders.iter().map(|e| e.output_dim()).collect();
            let mut split = widths.clone();
            split.push(g_in.item_len() - widths.iter().sum::<usize>());
            let parts = g_in.split_features(&split)?;
            for (enc, g) in self.encoders.iter_mut().zip(&parts) {
                enc.backward(g)?;
            }
        }
        if self.params().iter().any(|(_, p)| !p.grad.all_finite()) {
            return Err(Error::NonFinite(format!("gradients at step {}", self.step)));
        }
        let cfg = self.config.optimizer;
        let mut opt = std::mem::take(&mut self.optimizer);
        adam_step(&mut self.params_mut(), &mut opt, &cfg, lr)?;
        self.optimizer = opt;
        self.step += 1;
        if self.params().iter().any(|(_, p)| !p.value.all_finite()) {
            return Err(Error::NonFinite(format!("parameters after step {}", self.step)));
        }
        self.update_ema();
        Ok(loss)
    }

    fn update_ema(&mut self) {
        let t = self.step as f64;
        let decay = self.config.ema_decay.min((1.0 + t) / (10.0 + t));
        let current = self.trainable_values();
        if let Some(shadow) = &mut self.ema {
            for (s, c) in shadow.iter_mut().zip(current) {
                for (sv, cv) in s.iter_mut().zip(c) {
                    *sv = decay * *sv + (1.0 - decay) * cv;
                }
            }
        }
    }

    /// A copy whose trainable parameters are the EMA shadow (or `self`
    /// unchanged when EMA is off).
    pub fn with_ema_weights(&self) -> PolicyBundle {
        let mut out = self.clone();
        if let Some(shadow) = &self.ema {
            let targets: Vec<&mut Param> = out.params_mut().into_iter().filter(|p| p.trainable).collect();
            for (p, s) in targets.into_iter().zip(shadow) {
                p.value.data_mut().copy_from_slice(s);
            }
        }
        out
    }

    /// Runs the reverse process from `init` (normalized actions, one row
    /// per item). `noise(item, k, buf)` fills the fresh noise for step `k`.
    pub fn denoise(
        &self,
        cond: &Tensor,
        init: Vec<Vec<f64>>,
        mut noise: impl FnMut(usize, usize, &mut [f64]),
    ) -> Result<Vec<Vec<f64>>> {
        let b = init.len();
        let d = self.config.action_dim();
        let mut a = init;
        let mut z = vec![0.0; d];
        for k in (1..=self.schedule.steps()).rev() {
            let input = self.denoiser_input(cond, &vec![k; b], &a)?;
            let mut eps = self.denoiser.infer(&input)?;
            let d = eps.item_len();
            for (i, ai) in a.iter_mut().enumerate() {
                self.noise_estimate(k, ai, &mut eps.data_mut()[i * d..(i + 1) * d]);
                if k > 1 {
                    noise(i, k, &mut z);
                } else {
                    z.iter_mut().for_each(|v| *v = 0.0);
                }
                self.schedule.reverse_step(k, ai, eps.item(i), &z);
            }
        }
        Ok(a)
    }

    fn sample_rows(&self, cond: &Tensor, rngs: &mut [ChaCha8Rng]) -> Result<Vec<Vec<f64>>> {
        let d = self.config.action_dim();
        let init = rngs
            .iter_mut()
            .map(|r| (0..d).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        self.denoise(cond, init, |i, _k, buf| {
            for v in buf.iter_mut() {
                *v = rngs[i].sample(StandardNormal);
            }
        })
    }

    /// Samples one trajectory per observation, each with its own rng. A
    /// sample that fails to decode into valid rotations is redrawn once
    /// with a sub-seed from its rng.
    pub fn sample_batch(&self, obs: &[&Observation], rngs: &mut [ChaCha8Rng]) -> Result<Vec<Result<Trajectory>>> {
        let stats = self.stats.as_ref().ok_or(Error::UnfittedStats)?;
        if obs.len() != rngs.len() {
            return Err(Error::ShapeMismatch("one rng per observation is required".into()));
        }
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let cond = self.condition(obs)?;
        let rows = self.sample_rows(&cond, rngs)?;
        let decode = |row: &[f64]| unflatten(self.config.action_kind, &stats.denormalize(row));
        let mut out = Vec::with_capacity(obs.len());
        for (i, row) in rows.iter().enumerate() {
            match decode(row) {
                Err(Error::DegenerateRotation) => {
                    log::warn!("degenerate rotation in sample {i}; redrawing once");
                    let mut sub = [ChaCha8Rng::seed_from_u64(rngs[i].random())];
                    let c = Tensor::new(vec![1, cond.item_len()], cond.item(i).to_vec())?;
                    let retry = self.sample_rows(&c, &mut sub)?;
                    out.push(decode(&retry[0]));
                }
                r => out.push(r),
            }
        }
        Ok(out)
    }

    pub fn sample(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        let mut rngs = [rng.clone()];
        let r = self.sample_batch(&[obs], &mut rngs)?.remove(0);
        *rng = rngs[0].clone();
        r
    }

    /// Samples and maps the trajectory to world coordinates anchored at the
    /// observed gripper pose.
    pub fn predict_absolute(&self, obs: &Observation, rng: &mut ChaCha8Rng) -> Result<Trajectory> {
        to_absolute(&obs.pose, &self.sample(obs, rng)?)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut arrays = Vec::new();
        let params = self.params();
        for (name, p) in &params {
            arrays.push(Array::f64(&format!("param/{name}"), p.value.shape().to_vec(), p.value.data().to_vec()));
        }
        let trainable: Vec<&(String, &Param)> = params.iter().filter(|(_, p)| p.trainable).collect();
        if let Some(shadow) = &self.ema {
            for ((name, p), s) in trainable.iter().map(|x| (&x.0, x.1)).zip(shadow) {
                arrays.push(Array::f64(&format!("ema/{name}"), p.value.shape().to_vec(), s.clone()));
            }
        }
        if self.optimizer.step > 0 {
            for (((name, p), m), v) in trainable
                .iter()
                .map(|x| (&x.0, x.1))
                .zip(&self.optimizer.m)
                .zip(&self.optimizer.v)
            {
                arrays.push(Array::f64(&format!("adam_m/{name}"), p.value.shape().to_vec(), m.clone()));
                arrays.push(Array::f64(&format!("adam_v/{name}"), p.value.shape().to_vec(), v.clone()));
            }
        }
        let meta = json!({
            "config": self.config,
            "step": self.step,
            "optimizer_step": self.optimizer.step,
            "stats": self.stats,
            "final_loss": self.final_loss,
        });
        container::encode(CHECKPOINT_MAGIC, meta, &arrays)
    }

    /// Rebuilds a bundle from checkpoint bytes; every stored parameter must
    /// match the architecture by name and shape.
    pub fn from_bytes(bytes: &[u8]) -> Result<PolicyBundle> {
        let (meta, mut arrays) = container::decode(CHECKPOINT_MAGIC, bytes)?;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Format(format!("checkpoint lacks {k}")));
        let config: PolicyConfig = serde_json::from_value(field("config")?)?;
        let mut bundle = PolicyBundle::new(config)?;
        bundle.step = serde_json::from_value(field("step")?)?;
        let opt_step: u64 = serde_json::from_value(field("optimizer_step")?)?;
        bundle.stats = serde_json::from_value(field("stats")?)?;
        bundle.final_loss = serde_json::from_value(field("final_loss")?)?;

        let names: Vec<(String, Vec<usize>, bool)> = bundle
            .params()
            .into_iter()
            .map(|(n, p)| (n, p.value.shape().to_vec(), p.trainable))
            .collect();
        let mut take = |prefix: &str, name: &str, shape: &[usize]| -> Result<Vec<f64>> {
            let a = container::take(&mut arrays, &format!("{prefix}/{name}"))?;
            if a.shape != shape {
                return Err(Error::Format(format!(
                    "{prefix}/{name} has shape {:?}, expected {shape:?}",
                    a.shape
                )));
            }
            match a.data {
                ArrayData::F64(v) => Ok(v),
                ArrayData::F32(_) => Err(Error::Format(format!("{prefix}/{name} must be f64"))),
            }
        };
        let mut values = Vec::with_capacity(names.len());
        let (mut ema, mut m, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for (name, shape, trainable) in &names {
            values.push(take("param", name, shape)?);
            if *trainable {
                if bundle.ema.is_some() {
                    ema.push(take("ema", name, shape)?);
                }
                if opt_step > 0 {
                    m.push(take("adam_m", name, shape)?);
                    v.push(take("adam_v", name, shape)?);
                }
            }
        }
        if let Some(extra) = arrays.first() {
            return Err(Error::Format(format!("unexpected array {}", extra.name)));
        }
        for (p, val) in bundle.params_mut().into_iter().zip(values) {
            p.value.data_mut().copy_from_slice(&val);
        }
        if bundle.ema.is_some() {
            bundle.ema = Some(ema);
        }
        bundle.optimizer = AdamState { step: opt_step, m, v };
        Ok(bundle)
    }

    pub fn write(&self, path: &std::path::Path) -> Result<String> {
        let bytes = self.to_bytes()?;
        std::fs::write(path, &bytes)?;
        Ok(container::sha256_hex(&bytes))
    }

    pub fn read(path: &std::path::Path) -> Result<PolicyBundle> {
        PolicyBundle::from_bytes(&std::fs::read(path)?)
    }
}

/// Dataset arranged for minibatch training: per-step images (full size),
/// proprioception and flattened labels.
pub struct TrainingSet {
    images: Vec<Vec<Image>>,
    proprio: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    /// Center-crop features when every encoder is frozen.
    cached: Option<Vec<Vec<f64>>>,
}

impl TrainingSet {
    pub fn new(bundle: &PolicyBundle, dataset: &Dataset) -> Result<TrainingSet> {
        bundle.check_dataset(dataset)?;
        let m = bundle.config.history;
        let mut images = Vec::with_capacity(dataset.n_steps());
        let mut proprio = Vec::with_capacity(dataset.n_steps());
        let mut actions = Vec::with_capacity(dataset.n_steps());
        for (e, ep) in dataset.episodes.iter().enumerate() {
            for t in 0..ep.steps.len() {
                let obs = dataset.observation(e, t, m);
                proprio.push(bundle.proprio(&obs));
                images.push(obs.images);
                actions.push(flatten(&ep.steps[t].label));
            }
        }
        let mut set = TrainingSet {
            images,
            proprio,
            actions,
            cached: None,
        };
        if bundle.encoders_frozen() {
            let mut feats = Vec::with_capacity(set.len());
            for chunk in (0..set.len()).collect::<Vec<_>>().chunks(64) {
                let refs: Vec<Observation> = chunk
                    .iter()
                    .map(|&i| Observation {
                        images: set.images[i].clone(),
                        pose: crate::se3::Pose::IDENTITY,
                        history: Vec::new(),
                        aperture: 0.0,
                    })
                    .collect();
                let cond = bundle.condition(&refs.iter().collect::<Vec<_>>())?;
                let fd = bundle.feature_dim();
                for i in 0..chunk.len() {
                    feats.push(cond.item(i)[..fd].to_vec());
                }
            }
            set.cached = Some(feats);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn action_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.actions.iter().map(|a| a.as_slice())
    }

    /// Minibatch of `size` items drawn with `rng`; random crops when the
    /// encoders are trained.
    pub fn batch(&self, bundle: &PolicyBundle, size: usize, rng: &mut ChaCha8Rng) -> Result<TrainBatch> {
        if self.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let idx: Vec<usize> = (0..size).map(|_| rng.random_range(0..self.len())).collect();
        let cfg = bundle.config();
        let side = cfg.crop;
        let slack = cfg.image_size - side;
        let (features, images) = match &self.cached {
            Some(c) => {
                let fd = bundle.feature_dim();
                let data = idx.iter().flat_map(|&i| c[i].iter().copied()).collect();
                (Some(Tensor::new(vec![size, fd], data)?), Vec::new())
            }
            None => {
                let n_cam = self.images.first().map_or(0, |v| v.len());
                let mut per_cam = vec![Vec::with_capacity(size * 3 * side * side); n_cam];
                for &i in &idx {
                    let (top, left) = (rng.random_range(0..=slack), rng.random_range(0..=slack));
                    for (c, buf) in per_cam.iter_mut().enumerate() {
                        buf.extend(bundle.crop_chw(&self.images[i][c], top, left)?);
                    }
                }
                let imgs = per_cam
                    .into_iter()
                    .map(|d| Tensor::new(vec![size, 3, side, side], d))
                    .collect::<Result<Vec<_>>>()?;
                (None, imgs)
            }
        };
        let pd = cfg.proprio_dim();
        let proprio = Tensor::new(vec![size, pd], idx.iter().flat_map(|&i| self.proprio[i].iter().copied()).collect())?;
        let actions = Tensor::new(
            vec![size, cfg.action_dim()],
            idx.iter().flat_map(|&i| self.actions[i].iter().copied()).collect(),
        )?;
        Ok(TrainBatch {
            images,
            features,
            proprio,
            actions,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::EncoderKind;

    #[test]
    fn schedule_basics() {
        let s = make_noise_schedule(1, ScheduleKind::Linear).unwrap();
        assert_eq!(s.alpha_bars[0], s.alphas[0]);
        let s = make_noise_schedule(50, ScheduleKind::Linear).unwrap();
        assert!(s.betas[0] < s.betas[49] && s.betas[0] > 0.0 && s.betas[49] < 1.0);
        assert!(matches!(make_noise_schedule(0, ScheduleKind::Linear), Err(Error::BadK(0))));
        for kind in [ScheduleKind::Linear, ScheduleKind::SquaredCosine] {
            let s = make_noise_schedule(50, kind).unwrap();
            assert!(s.alpha_bars.windows(2).all(|w| w[1] < w[0]));
            assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0));
        }
    }

    #[test]
    fn normalization_handles_constant_dims() {
        let rows = [vec![-1.0, 3.0, 2.0], vec![1.0, 3.0, 4.0]];
        let st = NormStats::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        assert_eq!(st.min[0], -st.max[0]);
        assert_eq!(st.normalize(&[0.5, 3.0, 3.0]), vec![0.5, 0.0, 0.0]);
        let x = [0.3, 3.0, 2.5];
        let back = st.denormalize(&st.normalize(&x));
        assert!(x.iter().zip(&back).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(matches!(NormStats::fit(std::iter::empty()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn untrained_bundle_refuses_to_train() {
        let enc = EncoderConfig::new(EncoderKind::PlainCnn, 8, 16);
        let mut cfg = PolicyConfig::new(ActionKind::Relative, ObsMode::EyeInHand, enc);
        cfg.image_size = 16;
        cfg.crop = 16;
        let mut b = PolicyBundle::new(cfg).unwrap();
        let batch = TrainBatch {
            images: vec![Tensor::zeros(vec![1, 3, 16, 16])],
            features: None,
            proprio: Tensor::zeros(vec![1, 1]),
            actions: Tensor::zeros(vec![1, 80]),
        };
        assert!(matches!(b.train_step(&batch, 1e-3), Err(Error::UnfittedStats)));
    }

    #[test]
    fn coefficients_match_recomputation() {
        for kind in [ScheduleKind::Linear, ScheduleKind::SquaredCosine] {
            let s = make_noise_schedule(50, kind).unwrap();
            let mut prod = 1.0;
            for k in 1..=50 {
                let beta = s.betas[k - 1];
                let prev = prod;
                prod *= 1.0 - beta;
                let post = beta * (1.0 - prev) / (1.0 - prod);
                assert!((s.alpha_coef(k) - 1.0 / (1.0 - beta).sqrt()).abs() < 1e-12);
                assert!((s.gamma_coef(k) - beta / (1.0 - prod).sqrt()).abs() < 1e-12);
                // noise injected after the outer α factor has the posterior variance
                assert!(((s.alpha_coef(k) * s.sigma(k)).powi(2) - post).abs() < 1e-12);
                assert!((s.alpha_bars[k - 1] - prod).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn add_noise_cases_and_variance() {
        let s = make_noise_schedule(50, ScheduleKind::SquaredCosine).unwrap();
        let a0 = [0.3, -0.7];
        let out = s.add_noise(&a0, 1, &[0.0, 0.0]).unwrap();
        assert!(out.iter().zip(&a0).all(|(x, y)| (x - y).abs() < 1e-2));
        let eps = [0.5, -1.5];
        let out = s.add_noise(&[0.0, 0.0], 30, &eps).unwrap();
        let c = (1.0 - s.alpha_bars[29]).sqrt();
        assert!(out.iter().zip(&eps).all(|(x, e)| (x - c * e).abs() < 1e-15));
        assert!(matches!(s.add_noise(&a0, 1, &[0.0]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(s.add_noise(&a0, 51, &eps), Err(Error::BadK(51))));

        // a0 ~ U(-1, 1) has variance 1/3
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let k = 20;
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(-1.0..1.0);
                let e: f64 = rng.sample(StandardNormal);
                s.add_noise(&[a], k, &[e]).unwrap()[0]
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let ab = s.alpha_bars[k - 1];
        let expect = ab / 3.0 + (1.0 - ab);
        // standard error of a sample variance is about var·√(2/n)
        assert!((var - expect).abs() < 3.0 * expect * (2.0 / n as f64).sqrt() * 1.5, "{var} vs {expect}");
    }

    fn small_config(kind: ActionKind, mode: ObsMode) -> PolicyConfig {
        let enc = EncoderConfig::new(EncoderKind::PlainCnn, 8, 16);
        let mut cfg = PolicyConfig::new(kind, mode, enc);
        cfg.image_size = 16;
        cfg.crop = 16;
        cfg.hidden = 64;
        cfg.diffusion_steps = 20;
        cfg
    }

    fn small_dataset(cfg: &PolicyConfig, episodes: usize) -> Dataset {
        let spec = crate::sim::CollectSpec {
            episodes,
            seed: 5,
            action_kind: cfg.action_kind,
            horizon: cfg.horizon,
            exec_steps: cfg.exec_steps,
            cameras: cfg.cameras(),
        };
        crate::sim::collect_demos(&crate::sim::EnvConfig::new(crate::sim::Task::Reach), &spec).unwrap()
    }

    #[test]
    fn fresh_noise_predictor_loss_is_about_one() {
        let mut cfg = small_config(ActionKind::Relative, ObsMode::EyeInHand);
        cfg.prediction = Prediction::Epsilon;
        let ds = small_dataset(&cfg, 1);
        let mut b = PolicyBundle::new(cfg).unwrap();
        b.fit_normalization(&ds).unwrap();
        let set = TrainingSet::new(&b, &ds).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut total = 0.0;
        for _ in 0..100 {
            let batch = set.batch(&b, 4, &mut rng).unwrap();
            // zero learning rate keeps the zero head, so ε̂ ≡ 0
            total += b.train_step(&batch, 0.0).unwrap();
        }
        assert!((total / 100.0 - 1.0).abs() < 0.3, "{}", total / 100.0);
    }

    #[test]
    fn overfits_one_sample() {
        let mut cfg = small_config(ActionKind::Relative, ObsMode::EyeInHand);
        cfg.hidden = 256;
        let ds = small_dataset(&cfg, 1);
        let mut b = PolicyBundle::new(cfg).unwrap();
        b.fit_normalization(&ds).unwrap();
        let set = TrainingSet::new(&b, &ds).unwrap();
        let batch = repeat_first(&set.batch(&b, 1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap(), 16);
        let losses: Vec<f64> = (0..500).map(|_| b.train_step(&batch, 1e-3).unwrap()).collect();
        assert!(losses.iter().all(|&l| l >= 0.0));
        let tail = losses[450..].iter().sum::<f64>() / 50.0;
        assert!(tail < 0.05, "overfit loss {tail}");
    }

    fn repeat_first(one: &TrainBatch, times: usize) -> TrainBatch {
        let rep = |t: &Tensor| {
            let mut shape = t.shape().to_vec();
            shape[0] = times;
            Tensor::new(shape, t.item(0).repeat(times)).unwrap()
        };
        TrainBatch {
            images: one.images.iter().map(rep).collect(),
            features: one.features.as_ref().map(rep),
            proprio: rep(&one.proprio),
            actions: rep(&one.actions),
        }
    }

    #[test]
    fn zero_predictor_decays_by_alpha_products() {
        let mut cfg = small_config(ActionKind::Relative, ObsMode::EyeInHand);
        cfg.prediction = Prediction::Epsilon;
        let b = PolicyBundle::new(cfg.clone()).unwrap();
        let st = reset_obs(&cfg, 1);
        let cond = b.condition(&[&st]).unwrap();
        let init: Vec<f64> = (0..80).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = b.denoise(&cond, vec![init.clone()], |_, _, z| z.fill(0.0)).unwrap();
        let s = b.schedule();
        let factor: f64 = (1..=s.steps()).map(|k| s.alpha_coef(k)).product();
        for (o, a) in out[0].iter().zip(&init) {
            assert!((o - factor * a).abs() <= 1e-12 * factor.max(1.0), "{o} vs {}", factor * a);
        }
    }

    fn reset_obs(cfg: &PolicyConfig, seed: u64) -> Observation {
        let env = crate::sim::EnvConfig::new(crate::sim::Task::Reach);
        let st = crate::sim::reset(&env, seed, &crate::se3::Pose::IDENTITY).unwrap();
        crate::sim::observe(&st, &cfg.cameras(), &vec![st.gripper; cfg.history])
    }

    /// Bundle with a random head and arbitrary normalization so that samples
    /// depend on the conditioning.
    fn random_bundle(cfg: PolicyConfig) -> PolicyBundle {
        let mut b = PolicyBundle::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for p in b.denoiser_mut().params_mut() {
            for v in p.value.data_mut() {
                *v = rng.random_range(-0.2..0.2);
            }
        }
        let d = b.config().action_dim();
        b.set_stats(NormStats {
            min: (0..d).map(|i| -0.3 - 0.01 * i as f64).collect(),
            max: (0..d).map(|i| 0.4 + 0.01 * i as f64).collect(),
        })
        .unwrap();
        b
    }

    fn world_error(b: &PolicyBundle, obs: &Observation, g: &crate::se3::Pose) -> f64 {
        let a = b.predict_absolute(obs, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let ga = b
            .predict_absolute(&obs.with_world_transform(g), &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        crate::actions::transform_world(g, &a).max_abs_diff(&ga)
    }

    #[test]
    fn eye_in_hand_relative_policy_is_equivariant() {
        let g = crate::se3::random_pose(3, 0.5, true);
        let mut exact = 0.0f64;
        for kind in [ActionKind::Relative, ActionKind::Delta] {
            let cfg = small_config(kind, ObsMode::EyeInHand);
            let obs = reset_obs(&cfg, 2);
            let e = world_error(&random_bundle(cfg), &obs, &g);
            assert!(e < 1e-6, "{kind:?}: {e}");
            exact = exact.max(e);
        }
        let mut cfg = small_config(ActionKind::Relative, ObsMode::EyeInHand);
        cfg.condition_on_pose = true;
        let obs = reset_obs(&cfg, 2);
        let approx = world_error(&random_bundle(cfg), &obs, &g);
        assert!(approx.is_finite() && approx > exact);

        let cfg = small_config(ActionKind::Absolute, ObsMode::EyeInHand);
        let obs = reset_obs(&cfg, 2);
        assert!(world_error(&random_bundle(cfg), &obs, &g) > exact);
    }

    #[test]
    fn sampling_is_seeded_and_batch_independent() {
        let cfg = small_config(ActionKind::Delta, ObsMode::Both);
        let b = random_bundle(cfg.clone());
        let (o1, o2) = (reset_obs(&cfg, 1), reset_obs(&cfg, 2));
        let t1 = b.sample(&o1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(t1.len(), cfg.horizon);
        assert_eq!(t1, b.sample(&o1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap());
        let mut rngs = [ChaCha8Rng::seed_from_u64(4), ChaCha8Rng::seed_from_u64(5)];
        let both = b.sample_batch(&[&o1, &o2], &mut rngs).unwrap();
        assert_eq!(both[0].as_ref().unwrap(), &t1);
        let abs = b.predict_absolute(&o1, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(abs.kind(), ActionKind::Absolute);
    }

    #[test]
    fn checkpoint_resume_reproduces_next_loss() {
        let cfg = small_config(ActionKind::Relative, ObsMode::EyeInHand);
        let ds = small_dataset(&cfg, 1);
        let mut b = PolicyBundle::new(cfg).unwrap();
        b.fit_normalization(&ds).unwrap();
        let set = TrainingSet::new(&b, &ds).unwrap();
        let batch = set.batch(&b, 4, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for _ in 0..3 {
            b.train_step(&batch, 1e-3).unwrap();
        }
        let bytes = b.to_bytes().unwrap();
        let mut back = PolicyBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(b.train_step(&batch, 1e-3).unwrap(), back.train_step(&batch, 1e-3).unwrap());

        let mut other = small_config(ActionKind::Relative, ObsMode::EyeInHand);
        other.hidden = 32;
        let mut meta_swapped = PolicyBundle::new(other).unwrap().to_bytes().unwrap();
        meta_swapped.truncate(meta_swapped.len() - 8);
        assert!(PolicyBundle::from_bytes(&meta_swapped).is_err());
    }
}
