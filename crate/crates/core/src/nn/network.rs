use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Layer, LayerCache, LayerSpec};
use super::tensor::{Param, Tensor};
use crate::error::{Error, Result};

struct Saved {
    version: u64,
    out_shape: Vec<usize>,
    caches: Vec<LayerCache>,
}

/// An ordered stack of layers with a registry of uniquely named parameters.
pub struct Network {
    specs: Vec<LayerSpec>,
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    version: u64,
    saved: Option<Saved>,
}

impl Clone for Network {
    fn clone(&self) -> Self {
        Network {
            specs: self.specs.clone(),
            layers: self.layers.clone(),
            input_shape: self.input_shape.clone(),
            output_shape: self.output_shape.clone(),
            version: self.version,
            saved: None,
        }
    }
}

impl std::fmt::Debug for Network {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Network")
            .field("input_shape", &self.input_shape)
            .field("output_shape", &self.output_shape)
            .field("layers", &self.specs)
            .finish()
    }
}

impl Network {
    /// Builds the stack and checks shapes layer by layer. `input_shape`
    /// excludes the batch axis; parameter names are `{prefix}.{index}.weight`
    /// and `{prefix}.{index}.bias`.
    pub fn new(prefix: &str, input_shape: Vec<usize>, specs: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(specs.len());
        let mut shape = input_shape.clone();
        for (i, spec) in specs.iter().enumerate() {
            let layer = Layer::build(spec, &format!("{prefix}.{i}"), &mut rng)?;
            shape = layer
                .output_shape(&shape)
                .map_err(|e| Error::ShapeMismatch(format!("layer {i} ({spec:?}): {e}")))?;
            layers.push(layer);
        }
        let net = Network {
            specs,
            layers,
            input_shape,
            output_shape: shape,
            version: 0,
            saved: None,
        };
        let mut seen = HashSet::new();
        for p in net.params() {
            if !seen.insert(p.name.clone()) {
                return Err(Error::BadConfig(format!("duplicate parameter name {}", p.name)));
            }
        }
        Ok(net)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    /// Mutable access invalidates saved activations.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.version += 1;
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in self.params_mut() {
            p.trainable = trainable;
        }
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            for p in l.params_mut() {
                p.grad.fill(0.0);
            }
        }
    }

    /// Zeroes the weights and bias of the last parametrized layer.
    pub fn zero_last_layer(&mut self) {
        if let Some(l) = self.layers.iter_mut().rev().find(|l| !l.params().is_empty()) {
            for p in l.params_mut() {
                p.value.fill(0.0);
            }
        }
        self.version += 1;
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != self.input_shape.len() + 1 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch(format!(
                "network expects [B, {:?}], got {:?}",
                self.input_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Forward pass that keeps activations for a following `backward`.
    pub fn forward(&mut self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&h, true)?;
            caches.push(cache.expect("cache requested"));
            h = out;
        }
        self.saved = Some(Saved {
            version: self.version,
            out_shape: h.shape().to_vec(),
            caches,
        });
        Ok(h)
    }

    /// Forward pass without saved state; safe to share across threads.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h, false)?.0;
        }
        Ok(h)
    }

    /// Accumulates parameter gradients for the most recent `forward` and
    /// returns the gradient with respect to the network input.
    pub fn backward(&mut self, grad_out: &Tensor) -> Result<Tensor> {
        self.backward_impl(grad_out, true)
    }

    /// Like [`Network::backward`] but skips the gradient with respect to
    /// the network input when the first layer can avoid it; the returned
    /// tensor is then meaningless.
    pub fn backward_params(&mut self, grad_out: &Tensor) -> Result<()> {
        self.backward_impl(grad_out, false).map(|_| ())
    }

    fn backward_impl(&mut self, grad_out: &Tensor, need_input_grad: bool) -> Result<Tensor> {
        let saved = self.saved.take().ok_or(Error::StaleActivations)?;
        if saved.version != self.version {
            return Err(Error::StaleActivations);
        }
        if grad_out.shape() != saved.out_shape.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient {:?} does not match output {:?}",
                grad_out.shape(),
                saved.out_shape
            )));
        }
        let mut g = grad_out.clone();
        for (i, (layer, cache)) in self.layers.iter_mut().zip(&saved.caches).enumerate().rev() {
            g = layer.backward(cache, &g, i > 0 || need_input_grad)?;
        }
        Ok(g)
    }

    /// `(name, shape, values)` for every parameter, in registry order.
    pub fn export_params(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.params()
            .into_iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec(), p.value.data().to_vec()))
            .collect()
    }

    pub fn load_params(&mut self, values: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                params.len(),
                values.len()
            )));
        }
        for (p, (name, shape, data)) in params.into_iter().zip(values) {
            if &p.name != name || p.value.shape() != shape.as_slice() {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {} {:?} does not match {name} {shape:?}",
                    p.name,
                    p.value.shape()
                )));
            }
            p.value = Tensor::new(shape.clone(), data.clone())?;
        }
        Ok(())
    }
}
