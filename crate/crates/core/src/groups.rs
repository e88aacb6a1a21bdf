//! Cyclic rotation groups `C_u`, their representations, and frame averaging.
//!
//! Signals are flat `f64` slices; a [`Representation`] says how to read one
//! (a plain vector, blocks of the regular representation, 2D points, or an
//! `H×W×C` image) and how a group element acts on it.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CyclicGroup {
    order: usize,
}

impl CyclicGroup {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::BadConfig("cyclic group order must be at least 1".into()));
        }
        Ok(CyclicGroup { order })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn identity(&self) -> GroupElement {
        GroupElement { group: *self, index: 0 }
    }

    pub fn element(&self, index: usize) -> GroupElement {
        GroupElement {
            group: *self,
            index: index % self.order,
        }
    }

    pub fn elements(&self) -> impl Iterator<Item = GroupElement> + '_ {
        (0..self.order).map(move |v| self.element(v))
    }
}

/// `r^v ∈ C_u`, the rotation by `2πv/u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupElement {
    group: CyclicGroup,
    index: usize,
}

impl GroupElement {
    pub fn group(&self) -> CyclicGroup {
        self.group
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn angle(&self) -> f64 {
        TAU * self.index as f64 / self.group.order as f64
    }

    /// Number of quarter turns when the rotation is a multiple of 90°.
    pub fn quarter_turns(&self) -> Option<usize> {
        let u = self.group.order;
        (4 * self.index % u == 0).then(|| 4 * self.index / u)
    }

    pub fn is_identity(&self) -> bool {
        self.index == 0
    }
}

pub fn element_compose(a: &GroupElement, b: &GroupElement) -> Result<GroupElement> {
    if a.group != b.group {
        return Err(Error::GroupMismatch(a.group.order, b.group.order));
    }
    Ok(a.group.element(a.index + b.index))
}

pub fn element_inverse(a: &GroupElement) -> GroupElement {
    let u = a.group.order;
    a.group.element((u - a.index) % u)
}

/// Cyclically shifts every consecutive block of `u` entries by `v`:
/// `y_i = x_{(i - v) mod u}`.
pub fn regular_rep_apply(g: &GroupElement, x: &[f64]) -> Result<Vec<f64>> {
    let u = g.group.order;
    if x.len() % u != 0 {
        return Err(Error::BadLength { len: x.len(), order: u });
    }
    let v = g.index;
    let mut out = vec![0.0; x.len()];
    for (src, dst) in x.chunks_exact(u).zip(out.chunks_exact_mut(u)) {
        for (i, d) in dst.iter_mut().enumerate() {
            *d = src[(i + u - v) % u];
        }
    }
    Ok(out)
}

pub fn rotation_2d(g: &GroupElement) -> [[f64; 2]; 2] {
    if let Some(q) = g.quarter_turns() {
        return match q % 4 {
            0 => [[1.0, 0.0], [0.0, 1.0]],
            1 => [[0.0, -1.0], [1.0, 0.0]],
            2 => [[-1.0, 0.0], [0.0, -1.0]],
            _ => [[0.0, 1.0], [-1.0, 0.0]],
        };
    }
    let (s, c) = g.angle().sin_cos();
    [[c, -s], [s, c]]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    /// Index permutation; only valid for multiples of 90°.
    Exact90,
    /// Exact for multiples of 90°, bilinear with zero padding otherwise.
    Bilinear,
}

/// Precomputed resampling of an `n×n` plane under one rotation.
#[derive(Debug, Clone)]
pub(crate) enum PlaneRotation {
    Permutation(Vec<usize>),
    Bilinear(Vec<[(usize, f64); 4]>),
}

impl PlaneRotation {
    /// Counter-clockwise rotation about the plane center; rows grow
    /// downward, so a quarter turn is `out[i][j] = in[j][n-1-i]`.
    pub(crate) fn new(n: usize, g: &GroupElement) -> Self {
        if let Some(q) = g.quarter_turns() {
            let perm = (0..n * n)
                .map(|p| {
                    let (i, j) = (p / n, p % n);
                    let (si, sj) = match q % 4 {
                        0 => (i, j),
                        1 => (j, n - 1 - i),
                        2 => (n - 1 - i, n - 1 - j),
                        _ => (n - 1 - j, i),
                    };
                    si * n + sj
                })
                .collect();
            return PlaneRotation::Permutation(perm);
        }
        let (s, c) = g.angle().sin_cos();
        let center = (n as f64 - 1.0) / 2.0;
        let taps = (0..n * n)
            .map(|p| {
                let (i, j) = (p / n, p % n);
                let x = j as f64 - center;
                let y = center - i as f64;
                let xs = c * x + s * y;
                let ys = -s * x + c * y;
                let (fj, fi) = (xs + center, center - ys);
                let (j0, i0) = (fj.floor(), fi.floor());
                let (tj, ti) = (fj - j0, fi - i0);
                let mut taps = [(0usize, 0.0f64); 4];
                let corners = [
                    (i0, j0, (1.0 - ti) * (1.0 - tj)),
                    (i0, j0 + 1.0, (1.0 - ti) * tj),
                    (i0 + 1.0, j0, ti * (1.0 - tj)),
                    (i0 + 1.0, j0 + 1.0, ti * tj),
                ];
                for (slot, (ci, cj, w)) in taps.iter_mut().zip(corners) {
                    if ci >= 0.0 && cj >= 0.0 && (ci as usize) < n && (cj as usize) < n {
                        *slot = (ci as usize * n + cj as usize, w);
                    }
                }
                taps
            })
            .collect();
        PlaneRotation::Bilinear(taps)
    }

    /// `dst[p] = Σ w · src[q]` over strided planes (`stride` between pixels).
    pub(crate) fn apply_strided(&self, src: &[f64], dst: &mut [f64], stride: usize) {
        match self {
            PlaneRotation::Permutation(perm) => {
                for (p, &q) in perm.iter().enumerate() {
                    dst[p * stride] = src[q * stride];
                }
            }
            PlaneRotation::Bilinear(taps) => {
                for (p, t) in taps.iter().enumerate() {
                    dst[p * stride] = t.iter().map(|&(q, w)| w * src[q * stride]).sum();
                }
            }
        }
    }

    pub(crate) fn apply(&self, src: &[f64], dst: &mut [f64]) {
        self.apply_strided(src, dst, 1)
    }

    /// Adjoint of [`apply`](Self::apply), accumulated into `dst`.
    pub(crate) fn accumulate_adjoint(&self, src: &[f64], dst: &mut [f64]) {
        match self {
            PlaneRotation::Permutation(perm) => {
                for (p, &q) in perm.iter().enumerate() {
                    dst[q] += src[p];
                }
            }
            PlaneRotation::Bilinear(taps) => {
                for (p, t) in taps.iter().enumerate() {
                    for &(q, w) in t {
                        dst[q] += w * src[p];
                    }
                }
            }
        }
    }
}

/// A square image stored `H×W×C`, row-major, channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "image data has {} values, expected {height}x{width}x{channels}",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(size: usize, channels: usize, value: f64) -> Self {
        Image {
            height: size,
            width: size,
            channels,
            data: vec![value; size * size * channels],
        }
    }

    pub fn at(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.width + j) * self.channels + c]
    }

    /// Channels-first copy, the layout the convolution layers consume.
    pub fn to_chw(&self) -> Vec<f64> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * c];
        for i in 0..h {
            for j in 0..w {
                for k in 0..c {
                    out[k * h * w + i * w + j] = self.data[(i * w + j) * c + k];
                }
            }
        }
        out
    }

    /// Square `size×size` window with top-left corner at `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, size: usize) -> Result<Image> {
        if top + size > self.height || left + size > self.width {
            return Err(Error::ShapeMismatch("crop window exceeds image".into()));
        }
        let c = self.channels;
        let mut data = Vec::with_capacity(size * size * c);
        for i in top..top + size {
            let start = (i * self.width + left) * c;
            data.extend_from_slice(&self.data[start..start + size * c]);
        }
        Ok(Image {
            height: size,
            width: size,
            channels: c,
            data,
        })
    }

    pub fn center_crop(&self, size: usize) -> Result<Image> {
        if size > self.height || size > self.width {
            return Err(Error::ShapeMismatch("crop larger than image".into()));
        }
        self.crop((self.height - size) / 2, (self.width - size) / 2, size)
    }
}

/// Rotates an image counter-clockwise about its center by `g`. Multiples of
/// 90° are exact index permutations; other angles use bilinear
/// interpolation with zero padding.
pub fn rotate_image(g: &GroupElement, img: &Image) -> Result<Image> {
    if img.height != img.width {
        return Err(Error::NonSquare {
            h: img.height,
            w: img.width,
        });
    }
    if g.is_identity() {
        return Ok(img.clone());
    }
    let n = img.height;
    let c = img.channels;
    let rot = PlaneRotation::new(n, g);
    let mut out = vec![0.0; img.data.len()];
    for k in 0..c {
        rot.apply_strided(&img.data[k..], &mut out[k..], c);
    }
    Image::new(n, n, c, out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RepKind {
    /// `g · x = x`.
    Trivial { dim: usize },
    /// `c` stacked copies of the regular representation of `C_u`.
    Regular { order: usize, channels: usize },
    /// `(-1)^v` scaling; defined for groups of even order.
    Sign { dim: usize },
    /// Planar rotation applied to consecutive `(x, y)` pairs.
    Rotation2D { points: usize },
    /// Image rotation on `size×size×channels` data in `H×W×C` layout.
    ImageRotation {
        size: usize,
        channels: usize,
        interpolation: Interpolation,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Representation {
    pub kind: RepKind,
}

impl Representation {
    pub fn trivial(dim: usize) -> Self {
        Representation {
            kind: RepKind::Trivial { dim },
        }
    }

    pub fn regular(order: usize, channels: usize) -> Self {
        Representation {
            kind: RepKind::Regular { order, channels },
        }
    }

    pub fn sign(dim: usize) -> Self {
        Representation {
            kind: RepKind::Sign { dim },
        }
    }

    pub fn rotation_2d(points: usize) -> Self {
        Representation {
            kind: RepKind::Rotation2D { points },
        }
    }

    pub fn image(size: usize, channels: usize, interpolation: Interpolation) -> Self {
        Representation {
            kind: RepKind::ImageRotation {
                size,
                channels,
                interpolation,
            },
        }
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            RepKind::Trivial { dim } | RepKind::Sign { dim } => dim,
            RepKind::Regular { order, channels } => order * channels,
            RepKind::Rotation2D { points } => 2 * points,
            RepKind::ImageRotation { size, channels, .. } => size * size * channels,
        }
    }

    /// True when the action is computed without floating-point rounding
    /// beyond sign flips, permutations and exact matrix entries.
    pub fn is_exact_for(&self, group: &CyclicGroup) -> bool {
        match self.kind {
            RepKind::ImageRotation { .. } => 4 % group.order() == 0,
            _ => true,
        }
    }

    pub fn apply(&self, g: &GroupElement, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dimension() {
            return Err(Error::ShapeMismatch(format!(
                "signal of length {} for representation of dimension {}",
                x.len(),
                self.dimension()
            )));
        }
        match self.kind {
            RepKind::Trivial { .. } => Ok(x.to_vec()),
            RepKind::Regular { order, .. } => {
                if order != g.group.order {
                    return Err(Error::GroupMismatch(order, g.group.order));
                }
                regular_rep_apply(g, x)
            }
            RepKind::Sign { .. } => {
                if g.group.order % 2 != 0 {
                    return Err(Error::BadConfig("sign representation needs an even group order".into()));
                }
                let s = if g.index % 2 == 0 { 1.0 } else { -1.0 };
                Ok(x.iter().map(|v| s * v).collect())
            }
            RepKind::Rotation2D { .. } => {
                let r = rotation_2d(g);
                Ok(x
                    .chunks_exact(2)
                    .flat_map(|p| [r[0][0] * p[0] + r[0][1] * p[1], r[1][0] * p[0] + r[1][1] * p[1]])
                    .collect())
            }
            RepKind::ImageRotation {
                size,
                channels,
                interpolation,
            } => {
                if interpolation == Interpolation::Exact90 && g.quarter_turns().is_none() {
                    return Err(Error::BadConfig(format!(
                        "exact image rotation requested for {}° which is not a multiple of 90°",
                        g.angle().to_degrees()
                    )));
                }
                let img = Image::new(size, size, channels, x.to_vec())?;
                Ok(rotate_image(g, &img)?.data)
            }
        }
    }
}

/// Maps an input to a non-empty set of group elements.
pub trait Frame {
    fn elements(&self, x: &[f64]) -> Vec<GroupElement>;
}

/// `F(x) = G`.
#[derive(Debug, Clone, Copy)]
pub struct WholeGroup(pub CyclicGroup);

impl Frame for WholeGroup {
    fn elements(&self, _x: &[f64]) -> Vec<GroupElement> {
        self.0.elements().collect()
    }
}

/// `Ψ(x) = 1/|F(x)| Σ_{g∈F(x)} ρ_y(g) Φ(ρ_x(g)⁻¹ x)`.
pub struct FrameAveraged<F, Fr> {
    f: F,
    frame: Fr,
    rho_x: Representation,
    rho_y: Representation,
}

impl<F, Fr> FrameAveraged<F, Fr>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    Fr: Frame,
{
    pub fn eval(&self, x: &[f64]) -> Result<Vec<f64>> {
        let elements = self.frame.elements(x);
        if elements.is_empty() {
            return Err(Error::EmptyFrame);
        }
        let mut acc = vec![0.0; self.rho_y.dimension()];
        for g in &elements {
            let xg = self.rho_x.apply(&element_inverse(g), x)?;
            let y = (self.f)(&xg)?;
            let yg = self.rho_y.apply(g, &y)?;
            for (a, v) in acc.iter_mut().zip(yg) {
                *a += v;
            }
        }
        let inv = 1.0 / elements.len() as f64;
        acc.iter_mut().for_each(|a| *a *= inv);
        Ok(acc)
    }

    pub fn rho_x(&self) -> &Representation {
        &self.rho_x
    }

    pub fn rho_y(&self) -> &Representation {
        &self.rho_y
    }
}

pub fn frame_average<F, Fr>(f: F, frame: Fr, rho_x: Representation, rho_y: Representation) -> FrameAveraged<F, Fr>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
    Fr: Frame,
{
    FrameAveraged { f, frame, rho_x, rho_y }
}

/// Frame averaging over the whole group.
pub fn symmetrize<F>(
    f: F,
    group: CyclicGroup,
    rho_x: Representation,
    rho_y: Representation,
) -> FrameAveraged<F, WholeGroup>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    frame_average(f, WholeGroup(group), rho_x, rho_y)
}

/// `max_{x, g} ‖f(ρ_x(g)x) − ρ_y(g)f(x)‖_∞` over the given samples and all
/// of `group`.
pub fn equivariance_error<F>(
    f: F,
    group: &CyclicGroup,
    rho_x: &Representation,
    rho_y: &Representation,
    samples: &[Vec<f64>],
) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let mut worst: f64 = 0.0;
    for x in samples {
        let fx = f(x)?;
        for g in group.elements() {
            let lhs = f(&rho_x.apply(&g, x)?)?;
            let rhs = rho_y.apply(&g, &fx)?;
            for (a, b) in lhs.iter().zip(rhs.iter()) {
                let d = (a - b).abs();
                worst = if d.is_nan() { f64::INFINITY } else { worst.max(d) };
            }
        }
    }
    Ok(worst)
}
