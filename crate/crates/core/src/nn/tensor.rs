use crate::error::{Error, Result};

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Leading (batch) dimension.
    pub fn batch(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.shape.iter().skip(1).product()
    }

    pub fn item(&self, b: usize) -> &[f64] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Concatenates `[B, a]`, `[B, b]`, … along the feature axis.
    pub fn concat_features(parts: &[&Tensor]) -> Result<Tensor> {
        let b = parts.first().map(|t| t.batch()).unwrap_or(0);
        if parts.iter().any(|t| t.batch() != b) {
            return Err(Error::ShapeMismatch("batch sizes differ in concat".into()));
        }
        let width: usize = parts.iter().map(|t| t.item_len()).sum();
        let mut data = Vec::with_capacity(b * width);
        for i in 0..b {
            for t in parts {
                data.extend_from_slice(t.item(i));
            }
        }
        Tensor::new(vec![b, width], data)
    }

    /// Splits `[B, Σ widths]` back into per-part `[B, w]` tensors.
    pub fn split_features(&self, widths: &[usize]) -> Result<Vec<Tensor>> {
        let total: usize = widths.iter().sum();
        if self.item_len() != total {
            return Err(Error::ShapeMismatch(format!(
                "cannot split width {} into {widths:?}",
                self.item_len()
            )));
        }
        let b = self.batch();
        let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(b * w)).collect();
        for i in 0..b {
            let row = self.item(i);
            let mut off = 0;
            for (part, &w) in out.iter_mut().zip(widths) {
                part.extend_from_slice(&row[off..off + w]);
                off += w;
            }
        }
        out.into_iter()
            .zip(widths)
            .map(|(d, &w)| Tensor::new(vec![b, w], d))
            .collect()
    }
}

/// A named trainable (or frozen) parameter with its gradient buffer.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
}

impl Param {
    pub fn new(name: String, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape().to_vec());
        Param {
            name,
            value,
            grad,
            trainable: true,
        }
    }
}

/// `c += a · b` for row-major `a: m×k`, `b: k×n`.
#[inline]
pub(crate) fn gemm_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc_impl(a, b, c, m, k, n)
}

/// Four dot products against a shared right-hand side.
#[inline]
pub(crate) fn dot4(a: [&[f64]; 4], b: &[f64]) -> [f64; 4] {
    dot4_impl(a, b)
}

/// `y += alpha · x`.
#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    axpy_impl(alpha, x, y)
}

/// Dot product with four independent accumulators; fixed summation order.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    dot_impl(a, b)
}

#[inline(always)]
fn gemm_acc_impl(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    // 4×8 output tiles stay in registers across the whole `p` loop; each
    // element still accumulates its products in `p` order.
    const MR: usize = 4;
    const NR: usize = 8;
    let mut j = 0;
    while j + NR <= n {
        let mut i = 0;
        while i + MR <= m {
            let mut acc = [[0.0; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * n + j..(i + r) * n + j + NR]);
            }
            for p in 0..k {
                let x: &[f64; NR] = b[p * n + j..p * n + j + NR].try_into().unwrap();
                for (r, row) in acc.iter_mut().enumerate() {
                    let w = a[(i + r) * k + p];
                    for l in 0..NR {
                        row[l] += w * x[l];
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * n + j..(i + r) * n + j + NR].copy_from_slice(row);
            }
            i += MR;
        }
        for i in i..m {
            let mut acc: [f64; NR] = c[i * n + j..i * n + j + NR].try_into().unwrap();
            for p in 0..k {
                let w = a[i * k + p];
                for l in 0..NR {
                    acc[l] += w * b[p * n + j + l];
                }
            }
            c[i * n + j..i * n + j + NR].copy_from_slice(&acc);
        }
        j += NR;
    }
    if j < n {
        for i in 0..m {
            for jj in j..n {
                let mut v = c[i * n + jj];
                for p in 0..k {
                    v += a[i * k + p] * b[p * n + jj];
                }
                c[i * n + jj] = v;
            }
        }
    }
}

#[inline(always)]
fn dot4_impl(a: [&[f64]; 4], b: &[f64]) -> [f64; 4] {
    let mut acc = [[0.0f64; 2]; 4];
    let n = b.len();
    let pairs = n / 2;
    for c in 0..pairs {
        let j = 2 * c;
        let (x0, x1) = (b[j], b[j + 1]);
        for r in 0..4 {
            acc[r][0] += a[r][j] * x0;
            acc[r][1] += a[r][j + 1] * x1;
        }
    }
    let mut out = [0.0; 4];
    for r in 0..4 {
        out[r] = acc[r][0] + acc[r][1];
        if n % 2 == 1 {
            out[r] += a[r][n - 1] * b[n - 1];
        }
    }
    out
}

#[inline(always)]
fn axpy_impl(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline(always)]
fn dot_impl(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in chunks * 4..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}
