use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;

/// Worst disagreement between backprop and central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name (or `"input"`) where the worst error occurred.
    pub worst: String,
    pub index: usize,
}

/// Denominator floor so near-zero gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-3;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares analytic gradients of the scalar `L = Σ r·net(x)` (with a fixed
/// random projection `r`) against central differences with step `h`, over
/// every parameter entry and every input entry.
pub fn finite_diff_check(net: &mut Network, input: &Tensor, h: f64) -> Result<GradCheckReport> {
    let out = net.infer(input)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37);
    let r: Vec<f64> = (0..out.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let loss = |net: &Network, x: &Tensor| -> Result<f64> {
        Ok(net.infer(x)?.data().iter().zip(&r).map(|(a, b)| a * b).sum())
    };

    net.zero_grad();
    net.forward(input)?;
    let grad_in = net.backward(&Tensor::new(out.shape().to_vec(), r.clone())?)?;

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: String::new(),
        index: 0,
    };
    let mut note = |name: &str, i: usize, e: f64| {
        if e > report.max_rel_error || report.worst.is_empty() {
            report.max_rel_error = e.max(report.max_rel_error);
            report.worst = name.to_string();
            report.index = i;
        }
    };

    let n_params = net.params().len();
    for pi in 0..n_params {
        let (name, len, analytic) = {
            let p = &net.params()[pi];
            (p.name.clone(), p.value.len(), p.grad.data().to_vec())
        };
        for i in 0..len {
            let orig = net.params_mut()[pi].value.data()[i];
            net.params_mut()[pi].value.data_mut()[i] = orig + h;
            let up = loss(net, input)?;
            net.params_mut()[pi].value.data_mut()[i] = orig - h;
            let down = loss(net, input)?;
            net.params_mut()[pi].value.data_mut()[i] = orig;
            note(&name, i, rel_err(analytic[i], (up - down) / (2.0 * h)));
        }
    }

    let mut x = input.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + h;
        let up = loss(net, &x)?;
        x.data_mut()[i] = orig - h;
        let down = loss(net, &x)?;
        x.data_mut()[i] = orig;
        note("input", i, rel_err(grad_in.data()[i], (up - down) / (2.0 * h)));
    }
    Ok(report)
}
