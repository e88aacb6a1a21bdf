//! Vision encoders: a plain CNN, a `C_u`-equivariant CNN, a frozen random
//! CNN, and that frozen CNN symmetrized over `C_u`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::groups::{element_inverse, CyclicGroup, Image, PlaneRotation, Representation};
use crate::nn::{LayerSpec, Network, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaMode {
    /// Concatenate the `u` rotated evaluations; output is `Regular(u, d)`.
    #[default]
    Stacked,
    /// Average them; output is `Trivial(d)`.
    Averaged,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EncoderKind {
    PlainCnn,
    EquiCnn {
        order: usize,
    },
    FrozenStub,
    FrozenStubFa {
        order: usize,
        #[serde(default)]
        mode: FaMode,
    },
}

impl EncoderKind {
    pub fn label(&self) -> String {
        match self {
            EncoderKind::PlainCnn => "plain_cnn".into(),
            EncoderKind::EquiCnn { order } => format!("equi_cnn_c{order}"),
            EncoderKind::FrozenStub => "frozen_stub".into(),
            EncoderKind::FrozenStubFa { order, mode } => match mode {
                FaMode::Stacked => format!("frozen_stub_fa_c{order}"),
                FaMode::Averaged => format!("frozen_stub_fa_avg_c{order}"),
            },
        }
    }

    pub fn is_frozen(&self) -> bool {
        matches!(self, EncoderKind::FrozenStub | EncoderKind::FrozenStubFa { .. })
    }
}

fn default_channels() -> usize {
    3
}

fn default_widths() -> [usize; 2] {
    [8, 16]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub feature_dim: usize,
    /// Side length of the (square) input in pixels.
    pub input_size: usize,
    pub channels: usize,
    /// Channel counts of the two hidden conv blocks of the plain CNN; the
    /// equivariant CNN uses `round(w/√u)` regular fields per block.
    pub widths: [usize; 2],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig::new(EncoderKind::PlainCnn, 64, 28)
    }
}

impl EncoderConfig {
    pub fn new(kind: EncoderKind, feature_dim: usize, input_size: usize) -> Self {
        EncoderConfig {
            kind,
            feature_dim,
            input_size,
            channels: default_channels(),
            widths: default_widths(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.input_size < 8 || self.input_size % 4 != 0 {
            return bad(format!("encoder input size {} must be a multiple of 4, at least 8", self.input_size));
        }
        if self.feature_dim == 0 || self.channels == 0 || self.widths.contains(&0) {
            return bad("encoder dimensions must be positive".into());
        }
        match self.kind {
            EncoderKind::EquiCnn { order } => {
                CyclicGroup::new(order)?;
                if self.feature_dim % order != 0 {
                    return bad(format!("feature_dim {} not divisible by group order {order}", self.feature_dim));
                }
            }
            EncoderKind::FrozenStubFa { order, .. } => {
                CyclicGroup::new(order)?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// Encoder output tagged with how it transforms under rotations.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub rep: Representation,
}

#[derive(Debug, Clone)]
struct Symmetrizer {
    group: CyclicGroup,
    mode: FaMode,
    /// Rotation by `g⁻¹` for every `g`, in group order.
    inverse_rotations: Vec<PlaneRotation>,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    net: Network,
    fa: Option<Symmetrizer>,
}

fn cnn_specs(cfg: &EncoderConfig, order: Option<usize>) -> Vec<LayerSpec> {
    let s = cfg.input_size;
    let [w1, w2] = cfg.widths;
    match order {
        None => vec![
            LayerSpec::Conv2d {
                in_ch: cfg.channels,
                out_ch: w1,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool2,
            LayerSpec::Conv2d {
                in_ch: w1,
                out_ch: w2,
                kernel: 3,
                stride: 1,
                pad: 1,
            },
            LayerSpec::Relu,
            LayerSpec::AvgPool2,
            LayerSpec::Conv2d {
                in_ch: w2,
                out_ch: cfg.feature_dim,
                kernel: s / 4,
                stride: 1,
                pad: 0,
            },
            LayerSpec::Flatten,
        ],
        Some(u) => {
            // w/√u orbit fields per block keeps the parameter count of each
            // group conv equal to the plain layer's.
            let fields = |w: usize| ((w as f64 / (u as f64).sqrt()).round() as usize).max(1);
            let (c1, c2) = (fields(w1), fields(w2));
            vec![
                LayerSpec::LiftingConv {
                    order: u,
                    in_ch: cfg.channels,
                    out_ch: c1,
                    kernel: 3,
                    pad: 1,
                },
                LayerSpec::Relu,
                LayerSpec::AvgPool2,
                LayerSpec::GroupConv {
                    order: u,
                    in_ch: c1,
                    out_ch: c2,
                    kernel: 3,
                    pad: 1,
                },
                LayerSpec::Relu,
                LayerSpec::AvgPool2,
                LayerSpec::GroupConv {
                    order: u,
                    in_ch: c2,
                    out_ch: cfg.feature_dim / u,
                    kernel: s / 4,
                    pad: 0,
                },
                LayerSpec::Flatten,
            ]
        }
    }
}

pub fn build_encoder(cfg: &EncoderConfig, seed: u64) -> Result<Encoder> {
    cfg.validate()?;
    let input = vec![cfg.channels, cfg.input_size, cfg.input_size];
    match cfg.kind {
        EncoderKind::PlainCnn => Ok(Encoder {
            cfg: cfg.clone(),
            net: Network::new("encoder", input, cnn_specs(cfg, None), seed)?,
            fa: None,
        }),
        EncoderKind::EquiCnn { order } => Ok(Encoder {
            cfg: cfg.clone(),
            net: Network::new("encoder", input, cnn_specs(cfg, Some(order)), seed)?,
            fa: None,
        }),
        EncoderKind::FrozenStub => {
            let mut net = Network::new("encoder", input, cnn_specs(cfg, None), seed)?;
            net.set_trainable(false);
            Ok(Encoder {
                cfg: cfg.clone(),
                net,
                fa: None,
            })
        }
        EncoderKind::FrozenStubFa { order, mode } => {
            let base = build_encoder(
                &EncoderConfig {
                    kind: EncoderKind::FrozenStub,
                    ..cfg.clone()
                },
                seed,
            )?;
            wrap_frame_averaged(base, order, mode)
        }
    }
}

/// Symmetrizes a non-equivariant encoder over `C_u` acting on the image
/// plane. The wrapped encoder costs `u` base evaluations per image.
pub fn wrap_frame_averaged(enc: Encoder, order: usize, mode: FaMode) -> Result<Encoder> {
    if enc.fa.is_some() || matches!(enc.cfg.kind, EncoderKind::EquiCnn { .. }) {
        return Err(Error::BadConfig("encoder is already equivariant".into()));
    }
    let group = CyclicGroup::new(order)?;
    let inverse_rotations = group
        .elements()
        .map(|g| PlaneRotation::new(enc.cfg.input_size, &element_inverse(&g)))
        .collect();
    let mut cfg = enc.cfg.clone();
    if cfg.kind == EncoderKind::FrozenStub {
        cfg.kind = EncoderKind::FrozenStubFa { order, mode };
    }
    Ok(Encoder {
        cfg,
        net: enc.net,
        fa: Some(Symmetrizer {
            group,
            mode,
            inverse_rotations,
        }),
    })
}

impl Encoder {
    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn is_trainable(&self) -> bool {
        self.net.params().iter().any(|p| p.trainable)
    }

    pub fn output_dim(&self) -> usize {
        match &self.fa {
            Some(s) if s.mode == FaMode::Stacked => self.cfg.feature_dim * s.group.order(),
            _ => self.cfg.feature_dim,
        }
    }

    pub fn rep(&self) -> Representation {
        match (&self.fa, self.cfg.kind) {
            (Some(s), _) if s.mode == FaMode::Stacked => Representation::regular(s.group.order(), self.cfg.feature_dim),
            (None, EncoderKind::EquiCnn { order }) => Representation::regular(order, self.cfg.feature_dim / order),
            _ => Representation::trivial(self.cfg.feature_dim),
        }
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        let s = self.cfg.input_size;
        if x.shape().len() != 4 || x.shape()[1..] != [self.cfg.channels, s, s] {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects [B, {}, {s}, {s}], got {:?}",
                self.cfg.channels,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Encodes a batch of channels-first images `[B, C, S, S]` into `[B, D]`.
    pub fn encode_batch(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        let Some(sym) = &self.fa else {
            return self.net.infer(x);
        };
        let (b, d, u) = (x.batch(), self.cfg.feature_dim, sym.group.order());
        let plane = self.cfg.input_size * self.cfg.input_size;
        let mut outs = Vec::with_capacity(u);
        for rot in &sym.inverse_rotations {
            let mut rx = vec![0.0; x.len()];
            for (src, dst) in x.data().chunks_exact(plane).zip(rx.chunks_exact_mut(plane)) {
                rot.apply(src, dst);
            }
            outs.push(self.net.infer(&Tensor::new(x.shape().to_vec(), rx)?)?);
        }
        let mut data = Vec::with_capacity(b * self.output_dim());
        for i in 0..b {
            match sym.mode {
                FaMode::Stacked => {
                    for c in 0..d {
                        data.extend(outs.iter().map(|o| o.item(i)[c]));
                    }
                }
                FaMode::Averaged => {
                    for c in 0..d {
                        data.push(outs.iter().map(|o| o.item(i)[c]).sum::<f64>() / u as f64);
                    }
                }
            }
        }
        Tensor::new(vec![b, self.output_dim()], data)
    }

    pub fn encode(&self, img: &Image) -> Result<FeatureVector> {
        let s = self.cfg.input_size;
        if img.height != s || img.width != s || img.channels != self.cfg.channels {
            return Err(Error::ShapeMismatch(format!(
                "encoder expects {s}x{s}x{}, got {}x{}x{}",
                self.cfg.channels, img.height, img.width, img.channels
            )));
        }
        let x = Tensor::new(vec![1, img.channels, s, s], img.to_chw())?;
        Ok(FeatureVector {
            values: self.encode_batch(&x)?.into_data(),
            rep: self.rep(),
        })
    }

    /// Training-mode forward pass (trainable, non-symmetrized encoders only).
    pub fn forward_train(&mut self, x: &Tensor) -> Result<Tensor> {
        if self.fa.is_some() || !self.is_trainable() {
            return self.encode_batch(x);
        }
        self.check_batch(x)?;
        self.net.forward(x)
    }

    pub fn backward(&mut self, grad: &Tensor) -> Result<()> {
        if self.fa.is_none() && self.is_trainable() {
            self.net.backward_params(grad)?;
        }
        Ok(())
    }
}
