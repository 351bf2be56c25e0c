//! A feedforward encoder with a shared trunk and two linear heads, one for
//! the semantic vector and one for the uncertainty vector, trained with
//! hand-written reverse-mode gradients.
//!
//! All trainable values (layers and, for proxy losses, the proxies) live in
//! one flat parameter vector. Each layer stores its weight matrix row-major
//! (`output x input`) followed by its bias. Proxies follow the layers, each
//! as its semantic vector then its uncertainty vector.

pub mod checkpoint;
pub mod gradcheck;
pub mod optim;

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_same_dim, IdmlError, Result};
use crate::losses::{LossInput, LossValue, Mining, Objective, ProxySet};
use crate::rng::Rng;
use crate::types::{norm, EmbeddingPair, LabelSet, Sample, Vector};

pub use optim::{OptimState, OptimizerConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope(self, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub semantic_dim: usize,
    pub uncertainty_dim: usize,
    pub activation: Activation,
    /// Multiplier on the initial uncertainty-head weights.
    pub head_u_scale: f64,
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            hidden: vec![64, 64],
            semantic_dim: 32,
            uncertainty_dim: 32,
            activation: Activation::Tanh,
            head_u_scale: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = std::iter::once(self.input_dim)
            .chain(self.hidden.iter().copied())
            .chain([self.semantic_dim, self.uncertainty_dim]);
        for d in dims {
            if d == 0 || d > u32::MAX as usize {
                return Err(IdmlError::param(format!("layer width {d} out of range")));
            }
        }
        if !(self.head_u_scale >= 0.0 && self.head_u_scale.is_finite()) {
            return Err(IdmlError::param("head_u_scale must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
struct Layer {
    input: usize,
    output: usize,
    offset: usize,
}

impl Layer {
    fn size(&self) -> usize {
        self.output * (self.input + 1)
    }

    fn weights(&self) -> Range<usize> {
        self.offset..self.offset + self.output * self.input
    }

    fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.size()
    }

    fn forward(&self, params: &[f64], h: &[f64]) -> Vec<f64> {
        let w = &params[self.weights()];
        let b = &params[self.offset + self.output * self.input..self.offset + self.size()];
        (0..self.output)
            .map(|o| {
                let row = &w[o * self.input..(o + 1) * self.input];
                b[o] + row.iter().zip(h).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients for upstream `g` and returns the
    /// gradient with respect to the layer input.
    fn backward(&self, params: &[f64], h: &[f64], g: &[f64], grads: &mut [f64]) -> Vec<f64> {
        let w = &params[self.weights()];
        let mut gin = vec![0.0; self.input];
        let bias = self.offset + self.output * self.input;
        for o in 0..self.output {
            let go = g[o];
            if go == 0.0 {
                continue;
            }
            let row = o * self.input;
            for i in 0..self.input {
                grads[self.offset + row + i] += go * h[i];
                gin[i] += go * w[row + i];
            }
            grads[bias + o] += go;
        }
        gin
    }
}

/// Activations of one forward pass, kept for the backward pass.
struct Trace {
    /// Input followed by every trunk output.
    hidden: Vec<Vec<f64>>,
}

/// Result of one loss-and-gradient evaluation over a batch.
#[derive(Clone, Debug)]
pub struct Step {
    pub value: LossValue,
    /// Gradient with respect to the flat parameter vector.
    pub grads: Vec<f64>,
    pub embeddings: Vec<EmbeddingPair>,
    pub mining: Mining,
    /// Batch mean of the per-sample semantic-vector gradient norm.
    pub semantic_grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: EncoderConfig,
    trunk: Vec<Layer>,
    head_s: Layer,
    head_u: Layer,
    proxy_classes: Vec<u32>,
    proxy_offset: usize,
    params: Vec<f64>,
    freeze_uncertainty: bool,
}

impl Model {
    /// All-zero parameters.
    pub fn zeros(config: EncoderConfig, proxy_classes: Vec<u32>) -> Result<Self> {
        config.validate()?;
        let mut offset = 0;
        let mut layer = |input, output| {
            let l = Layer { input, output, offset };
            offset += l.size();
            l
        };
        let mut width = config.input_dim;
        let mut trunk = Vec::with_capacity(config.hidden.len());
        for &h in &config.hidden {
            trunk.push(layer(width, h));
            width = h;
        }
        let head_s = layer(width, config.semantic_dim);
        let head_u = layer(width, config.uncertainty_dim);
        let proxy_offset = offset;
        let mut sorted = proxy_classes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != proxy_classes.len() {
            return Err(IdmlError::param("duplicate proxy class"));
        }
        let total = proxy_offset + proxy_classes.len() * (config.semantic_dim + config.uncertainty_dim);
        Ok(Model {
            config,
            trunk,
            head_s,
            head_u,
            proxy_classes,
            proxy_offset,
            params: vec![0.0; total],
            freeze_uncertainty: false,
        })
    }

    /// Random initialization: weights drawn from `N(0, 1/fan_in)`, with the
    /// uncertainty head further scaled by `head_u_scale`; zero biases; proxy
    /// semantic vectors standard normal and proxy uncertainty vectors scaled
    /// by 0.01.
    pub fn new(config: EncoderConfig, proxy_classes: Vec<u32>, rng: &mut Rng) -> Result<Self> {
        let mut m = Model::zeros(config, proxy_classes)?;
        let layers: Vec<(Layer, f64)> = m
            .trunk
            .iter()
            .map(|l| (*l, 1.0))
            .chain([(m.head_s, 1.0), (m.head_u, m.config.head_u_scale)])
            .collect();
        for (l, scale) in layers {
            let sd = scale / (l.input as f64).sqrt();
            for w in &mut m.params[l.weights()] {
                *w = sd * rng.normal();
            }
        }
        let (sd, ud) = (m.config.semantic_dim, m.config.uncertainty_dim);
        for p in 0..m.proxy_classes.len() {
            let base = m.proxy_offset + p * (sd + ud);
            for (k, v) in m.params[base..base + sd + ud].iter_mut().enumerate() {
                *v = if k < sd { rng.normal() } else { 0.01 * rng.normal() };
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        ensure_same_dim(params.len(), self.params.len(), "parameter count")?;
        crate::types::check_finite(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn proxy_classes(&self) -> &[u32] {
        &self.proxy_classes
    }

    pub fn is_uncertainty_frozen(&self) -> bool {
        self.freeze_uncertainty
    }

    /// Zeroes the uncertainty head and proxy uncertainty vectors and keeps
    /// them at zero during training.
    pub fn freeze_uncertainty(&mut self) {
        self.freeze_uncertainty = true;
        for r in self.uncertainty_ranges() {
            self.params[r].fill(0.0);
        }
    }

    pub(crate) fn set_frozen_flag(&mut self, frozen: bool) {
        self.freeze_uncertainty = frozen;
    }

    /// Parameter ranges that only influence uncertainty vectors.
    pub fn uncertainty_ranges(&self) -> Vec<Range<usize>> {
        let (sd, ud) = (self.config.semantic_dim, self.config.uncertainty_dim);
        let mut out = vec![self.head_u.range()];
        for p in 0..self.proxy_classes.len() {
            let base = self.proxy_offset + p * (sd + ud) + sd;
            out.push(base..base + ud);
        }
        out
    }

    /// Range of the uncertainty head's weights and bias.
    pub fn head_u_range(&self) -> Range<usize> {
        self.head_u.range()
    }

    /// Current proxies, if the model carries any.
    pub fn proxies(&self) -> Result<Option<ProxySet>> {
        if self.proxy_classes.is_empty() {
            return Ok(None);
        }
        let (sd, ud) = (self.config.semantic_dim, self.config.uncertainty_dim);
        let mut s = Vec::with_capacity(self.proxy_classes.len());
        let mut u = Vec::with_capacity(self.proxy_classes.len());
        for p in 0..self.proxy_classes.len() {
            let base = self.proxy_offset + p * (sd + ud);
            s.push(self.params[base..base + sd].to_vec());
            u.push(self.params[base + sd..base + sd + ud].to_vec());
        }
        Ok(Some(ProxySet::new(self.proxy_classes.clone(), s, u)?))
    }

    fn trace(&self, x: &[f64]) -> Result<Trace> {
        ensure_same_dim(x.len(), self.config.input_dim, "input dim")?;
        let act = self.config.activation;
        let mut hidden = Vec::with_capacity(self.trunk.len() + 1);
        hidden.push(x.to_vec());
        for l in &self.trunk {
            let z = l.forward(&self.params, hidden.last().expect("input present"));
            hidden.push(z.into_iter().map(|v| act.apply(v)).collect());
        }
        Ok(Trace { hidden })
    }

    fn heads(&self, t: &Trace) -> Result<EmbeddingPair> {
        let h = t.hidden.last().expect("input present");
        let s = self.head_s.forward(&self.params, h);
        let u = self.head_u.forward(&self.params, h);
        EmbeddingPair::from_slices(&s, &u).map_err(|e| IdmlError::Numerical(format!("encoder output: {e}")))
    }

    pub fn forward(&self, x: &[f64]) -> Result<EmbeddingPair> {
        let t = self.trace(x)?;
        self.heads(&t)
    }

    pub fn forward_batch(&self, xs: &[Vector]) -> Result<Vec<EmbeddingPair>> {
        xs.iter().map(|x| self.forward(x)).collect()
    }

    fn backward(&self, t: &Trace, ds: &[f64], du: &[f64], grads: &mut [f64]) {
        let last = t.hidden.len() - 1;
        let h = &t.hidden[last];
        let mut g = self.head_s.backward(&self.params, h, ds, grads);
        let gu = self.head_u.backward(&self.params, h, du, grads);
        for (a, b) in g.iter_mut().zip(gu) {
            *a += b;
        }
        let act = self.config.activation;
        for (k, l) in self.trunk.iter().enumerate().rev() {
            let out = &t.hidden[k + 1];
            let gz: Vec<f64> = g.iter().zip(out).map(|(gi, hi)| gi * act.slope(*hi)).collect();
            g = l.backward(&self.params, &t.hidden[k], &gz, grads);
        }
    }

    /// Loss of `obj` on `samples` and its exact gradient with respect to
    /// every parameter. Mining is performed with `rng` unless `mining` is
    /// given.
    pub fn loss_and_grad(
        &self,
        samples: &[Sample],
        obj: &Objective,
        mining: Option<&Mining>,
        rng: &mut Rng,
    ) -> Result<Step> {
        if samples.is_empty() {
            return Err(IdmlError::param("batch must be nonempty"));
        }
        let traces = samples
            .iter()
            .map(|s| self.trace(&s.feature))
            .collect::<Result<Vec<_>>>()?;
        let embeddings = traces.iter().map(|t| self.heads(t)).collect::<Result<Vec<_>>>()?;
        let labels: Vec<LabelSet> = samples.iter().map(|s| s.labels.clone()).collect();
        let mixed: Vec<bool> = samples.iter().map(|s| s.is_mixed).collect();
        let proxies = self.proxies()?;
        let mut input = LossInput::new(&embeddings, &labels).with_mixed(&mixed);
        if let Some(p) = &proxies {
            input = input.with_proxies(p);
        }
        let mining = match mining {
            Some(m) => m.clone(),
            None => obj.mine(&input, rng)?,
        };
        let out = obj.evaluate(&input, &mining)?;
        let mut grads = vec![0.0; self.params.len()];
        for (i, t) in traces.iter().enumerate() {
            self.backward(t, &out.grads.semantic[i], &out.grads.uncertainty[i], &mut grads);
        }
        let (sd, ud) = (self.config.semantic_dim, self.config.uncertainty_dim);
        for (p, (gs, gu)) in out
            .grads
            .proxy_semantic
            .iter()
            .zip(&out.grads.proxy_uncertainty)
            .enumerate()
        {
            let base = self.proxy_offset + p * (sd + ud);
            grads[base..base + sd].copy_from_slice(gs);
            grads[base + sd..base + sd + ud].copy_from_slice(gu);
        }
        if self.freeze_uncertainty {
            for r in self.uncertainty_ranges() {
                grads[r].fill(0.0);
            }
        }
        let semantic_grad_norm =
            out.grads.semantic.iter().map(|g| norm(g)).sum::<f64>() / samples.len() as f64;
        Ok(Step {
            value: out.value,
            grads,
            embeddings,
            mining,
            semantic_grad_norm,
        })
    }

    /// Loss value only, with mining held fixed.
    pub fn loss_value(&self, samples: &[Sample], obj: &Objective, mining: &Mining) -> Result<f64> {
        let mut rng = Rng::new(0);
        Ok(self.loss_and_grad(samples, obj, Some(mining), &mut rng)?.value.value)
    }

    /// Applies one optimizer update.
    pub fn step(&mut self, grads: &[f64], opt: &mut OptimState) -> Result<()> {
        ensure_same_dim(grads.len(), self.params.len(), "gradient length")?;
        if self.freeze_uncertainty {
            let mut g = grads.to_vec();
            for r in self.uncertainty_ranges() {
                g[r].fill(0.0);
            }
            opt.step(&mut self.params, &g)
        } else {
            opt.step(&mut self.params, grads)
        }
    }
}
