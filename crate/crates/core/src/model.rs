//! Encoder/decoder MLPs, the latent partition and the grouped posterior.
//!
//! The encoder emits one head block per latent group, in partition order.
//! A Gaussian group of width `d` owns `2d` head units (`d` means followed by
//! `d` log-variances); a categorical group over `K` outcomes owns `K`
//! logits. The decoder maps the full latent vector back to observation
//! space and emits logits (Bernoulli) or means (unit-variance Gaussian).

use std::ops::Range;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{CategoricalDist, DiagGaussian, DEFAULT_TEMPERATURE};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    #[default]
    Bernoulli,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    /// ELU with unit scale; smooth at the origin.
    Elu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Elu => {
                if pre > 0.0 {
                    1.0
                } else {
                    pre.exp()
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentKind {
    Gaussian,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSlot {
    pub name: String,
    pub kind: LatentKind,
    pub start: usize,
    pub len: usize,
}

impl LatentSlot {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }

    fn head_len(&self) -> usize {
        match self.kind {
            LatentKind::Gaussian => 2 * self.len,
            LatentKind::Categorical => self.len,
        }
    }
}

/// Contiguous, disjoint, covering slices of the latent vector, one per group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<LatentSlot>", into = "Vec<LatentSlot>")]
pub struct LatentPartition {
    slots: Vec<LatentSlot>,
    head_offsets: Vec<usize>,
}

impl LatentPartition {
    /// Builds from `(name, kind, width)` triples laid out back to back.
    pub fn new(groups: Vec<(String, LatentKind, usize)>) -> Result<Self> {
        let mut start = 0;
        let slots = groups
            .into_iter()
            .map(|(name, kind, len)| {
                let s = LatentSlot { name, kind, start, len };
                start += len;
                s
            })
            .collect();
        Self::from_slots(slots)
    }

    /// All-Gaussian partition splitting `total` dimensions as evenly as
    /// possible, earlier groups taking the remainder.
    pub fn equal_split(names: &[&str], total: usize) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::param("partition needs at least one group"));
        }
        let n = names.len();
        Self::new(
            names
                .iter()
                .enumerate()
                .map(|(i, name)| {
                    let w = total / n + usize::from(i < total % n);
                    (name.to_string(), LatentKind::Gaussian, w)
                })
                .collect(),
        )
    }

    fn from_slots(slots: Vec<LatentSlot>) -> Result<Self> {
        if slots.is_empty() {
            return Err(Error::param("partition needs at least one group"));
        }
        let mut expect = 0;
        let mut head_offsets = Vec::with_capacity(slots.len());
        let mut head = 0;
        for s in &slots {
            if s.len == 0 {
                return Err(Error::param(format!("latent group '{}' is empty", s.name)));
            }
            if s.kind == LatentKind::Categorical && s.len < 2 {
                return Err(Error::param("categorical latent group needs >= 2 outcomes"));
            }
            if s.start != expect {
                return Err(Error::param("latent slices must be contiguous and ordered"));
            }
            expect += s.len;
            head_offsets.push(head);
            head += s.head_len();
        }
        Ok(LatentPartition { slots, head_offsets })
    }

    pub fn slots(&self) -> &[LatentSlot] {
        &self.slots
    }

    pub fn num_groups(&self) -> usize {
        self.slots.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.slots.iter().map(|s| s.len).sum()
    }

    /// Width of the encoder output layer.
    pub fn head_dim(&self) -> usize {
        self.slots.iter().map(LatentSlot::head_len).sum()
    }

    pub fn range(&self, group: usize) -> Range<usize> {
        self.slots[group].range()
    }

    pub(crate) fn head_offset(&self, group: usize) -> usize {
        self.head_offsets[group]
    }

    pub fn has_categorical(&self) -> bool {
        self.slots.iter().any(|s| s.kind == LatentKind::Categorical)
    }
}

impl TryFrom<Vec<LatentSlot>> for LatentPartition {
    type Error = Error;

    fn try_from(slots: Vec<LatentSlot>) -> Result<Self> {
        Self::from_slots(slots)
    }
}

impl From<LatentPartition> for Vec<LatentSlot> {
    fn from(p: LatentPartition) -> Self {
        p.slots
    }
}

/// Fully connected layer `y = x·W + b`, with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            w: Array2::zeros((fan_in, fan_out)),
            b: Array1::zeros(fan_out),
        }
    }

    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            w: Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..=limit)),
            b: Array1::zeros(fan_out),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Dense::zeros(self.w.nrows(), self.w.ncols())
    }
}

/// Cached activations of one forward pass, needed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], activation: Activation, rng: &mut R) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect(),
            activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty mlp").w.ncols()
    }

    /// Forward pass; the activation is applied after every layer but the last.
    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.w) + &layer.b;
            inputs.push(h);
            h = if k < last {
                z.mapv(|v| self.activation.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
        }
        (h, MlpCache { inputs, pre })
    }

    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward(x).0
    }

    /// Backpropagates `grad_out` (dL/d output). Returns per-layer gradients
    /// and dL/d input.
    pub fn backward(&self, cache: &MlpCache, grad_out: &Array2<f64>) -> (Vec<Dense>, Array2<f64>) {
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            if k < last {
                let act = self.activation;
                g.zip_mut_with(&cache.pre[k], |gv, &p| *gv *= act.derivative(p));
            }
            let dw = cache.inputs[k].t().dot(&g).as_standard_layout().into_owned();
            let db = g.sum_axis(Axis(0));
            let gin = g.dot(&self.layers[k].w.t());
            grads.push(Dense { w: dw, b: db });
            g = gin;
        }
        grads.reverse();
        (grads, g)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub hidden: Vec<usize>,
    pub partition: LatentPartition,
    #[serde(default)]
    pub likelihood: Likelihood,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

fn default_temperature() -> f64 {
    DEFAULT_TEMPERATURE
}

impl ModelConfig {
    /// Default MLP shape (`[64, 64]` hidden) over a given partition.
    pub fn new(obs_dim: usize, partition: LatentPartition) -> Self {
        ModelConfig {
            obs_dim,
            hidden: vec![64, 64],
            partition,
            likelihood: Likelihood::Bernoulli,
            activation: Activation::Relu,
            temperature: DEFAULT_TEMPERATURE,
        }
    }
}

/// Encoder (φ) and decoder (θ) weights plus the latent layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub partition: LatentPartition,
    pub likelihood: Likelihood,
    pub temperature: f64,
}

pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ModelParams> {
    if cfg.obs_dim == 0 || cfg.hidden.contains(&0) {
        return Err(Error::param("model dimensions must be positive"));
    }
    if !(cfg.temperature > 0.0) {
        return Err(Error::param("temperature must be positive"));
    }
    let mut rng = stream(seed, Stream::Init);
    let mut enc_sizes = vec![cfg.obs_dim];
    enc_sizes.extend(&cfg.hidden);
    enc_sizes.push(cfg.partition.head_dim());
    let mut dec_sizes = vec![cfg.partition.latent_dim()];
    dec_sizes.extend(cfg.hidden.iter().rev());
    dec_sizes.push(cfg.obs_dim);
    Ok(ModelParams {
        encoder: Mlp::new(&enc_sizes, cfg.activation, &mut rng),
        decoder: Mlp::new(&dec_sizes, cfg.activation, &mut rng),
        partition: cfg.partition.clone(),
        likelihood: cfg.likelihood,
        temperature: cfg.temperature,
    })
}

/// Gradient container mirroring [`ModelParams`]' weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<Dense>,
    pub decoder: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(p: &ModelParams) -> Self {
        Gradients {
            encoder: p.encoder.layers.iter().map(Dense::zeros_like).collect(),
            decoder: p.decoder.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub(crate) fn add_encoder(&mut self, g: Vec<Dense>) {
        for (a, b) in self.encoder.iter_mut().zip(g) {
            a.w += &b.w;
            a.b += &b.b;
        }
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        dense_slices(self.encoder.iter().chain(&self.decoder))
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        dense_slices_mut(self.encoder.iter_mut().chain(self.decoder.iter_mut()))
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }
}

fn dense_slices<'a>(layers: impl Iterator<Item = &'a Dense>) -> Vec<&'a [f64]> {
    layers
        .flat_map(|l| {
            [
                l.w.as_slice().expect("standard layout"),
                l.b.as_slice().expect("standard layout"),
            ]
        })
        .collect()
}

fn dense_slices_mut<'a>(layers: impl Iterator<Item = &'a mut Dense>) -> Vec<&'a mut [f64]> {
    layers
        .flat_map(|l| {
            [
                l.w.as_slice_mut().expect("standard layout"),
                l.b.as_slice_mut().expect("standard layout"),
            ]
        })
        .collect()
}

impl ModelParams {
    pub fn obs_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn latent_dim(&self) -> usize {
        self.partition.latent_dim()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Weight slices in canonical order: encoder layers then decoder
    /// layers, each as `w` then `b`.
    pub fn slices(&self) -> Vec<&[f64]> {
        dense_slices(self.encoder.layers.iter().chain(&self.decoder.layers))
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        dense_slices_mut(
            self.encoder
                .layers
                .iter_mut()
                .chain(self.decoder.layers.iter_mut()),
        )
    }

    /// `(name, shape)` of every slice in [`Self::slices`] order.
    pub fn named_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (net, mlp) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (k, l) in mlp.layers.iter().enumerate() {
                out.push((format!("{net}.{k}.w"), vec![l.w.nrows(), l.w.ncols()]));
                out.push((format!("{net}.{k}.b"), vec![l.b.len()]));
            }
        }
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().concat()
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::Dimension {
                context: "ModelParams::set_flat",
                expected: self.num_params(),
                actual: values.len(),
            });
        }
        let mut offset = 0;
        for s in self.slices_mut() {
            let n = s.len();
            s.copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub(crate) fn check_obs(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.obs_dim() {
            return Err(Error::Dimension {
                context: "observation width",
                expected: self.obs_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }
}

/// Approximate posterior of one latent group for one observation.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupPosterior {
    Gaussian(DiagGaussian),
    Categorical(CategoricalDist),
}

/// Per-group factorized posterior `q(z|x) = Π_g q(z_g|x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedPosterior {
    pub groups: Vec<GroupPosterior>,
}

impl GroupedPosterior {
    pub fn group(&self, g: usize) -> &GroupPosterior {
        &self.groups[g]
    }

    /// Concatenated Gaussian means (categorical groups contribute their
    /// probabilities).
    pub fn mean_vector(&self) -> Vec<f64> {
        self.groups
            .iter()
            .flat_map(|g| match g {
                GroupPosterior::Gaussian(d) => d.mean().to_vec(),
                GroupPosterior::Categorical(c) => c.probs().to_vec(),
            })
            .collect()
    }
}

/// Raw encoder head for a batch.
pub fn encoder_head(p: &ModelParams, x: &Array2<f64>) -> Result<Array2<f64>> {
    p.check_obs(x)?;
    Ok(p.encoder.predict(x))
}

pub(crate) fn posterior_from_head(
    partition: &LatentPartition,
    head: ndarray::ArrayView1<'_, f64>,
) -> Result<GroupedPosterior> {
    let groups = partition
        .slots()
        .iter()
        .enumerate()
        .map(|(g, slot)| {
            let o = partition.head_offset(g);
            Ok(match slot.kind {
                LatentKind::Gaussian => GroupPosterior::Gaussian(DiagGaussian::new(
                    head.slice(ndarray::s![o..o + slot.len]).to_vec(),
                    head.slice(ndarray::s![o + slot.len..o + 2 * slot.len]).to_vec(),
                )?),
                LatentKind::Categorical => GroupPosterior::Categorical(
                    CategoricalDist::from_logits(&head.slice(ndarray::s![o..o + slot.len]).to_vec())?,
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GroupedPosterior { groups })
}

/// Encodes every row of `x` into its grouped posterior.
pub fn encode(p: &ModelParams, x: &Array2<f64>) -> Result<Vec<GroupedPosterior>> {
    let head = encoder_head(p, x)?;
    head.rows()
        .into_iter()
        .map(|r| posterior_from_head(&p.partition, r))
        .collect()
}

/// Posterior means of every latent dimension, `n × latent_dim`. Categorical
/// groups report their probabilities.
pub fn encode_means(p: &ModelParams, x: &Array2<f64>) -> Result<Array2<f64>> {
    let head = encoder_head(p, x)?;
    let mut out = Array2::zeros((x.nrows(), p.latent_dim()));
    for (g, slot) in p.partition.slots().iter().enumerate() {
        let o = p.partition.head_offset(g);
        for (mut row, h) in out.rows_mut().into_iter().zip(head.rows()) {
            match slot.kind {
                LatentKind::Gaussian => {
                    for k in 0..slot.len {
                        row[slot.start + k] = h[o + k];
                    }
                }
                LatentKind::Categorical => {
                    let probs = crate::distributions::softmax(&h.slice(ndarray::s![o..o + slot.len]).to_vec());
                    for k in 0..slot.len {
                        row[slot.start + k] = probs[k];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Per-dimension posterior variances `n × latent_dim` (Gaussian groups;
/// categorical dims report `p(1-p)`).
pub fn encode_variances(p: &ModelParams, x: &Array2<f64>) -> Result<Array2<f64>> {
    let head = encoder_head(p, x)?;
    let mut out = Array2::zeros((x.nrows(), p.latent_dim()));
    for (g, slot) in p.partition.slots().iter().enumerate() {
        let o = p.partition.head_offset(g);
        for (mut row, h) in out.rows_mut().into_iter().zip(head.rows()) {
            match slot.kind {
                LatentKind::Gaussian => {
                    for k in 0..slot.len {
                        row[slot.start + k] =
                            crate::distributions::clamp_log_var(h[o + slot.len + k]).exp();
                    }
                }
                LatentKind::Categorical => {
                    let probs = crate::distributions::softmax(&h.slice(ndarray::s![o..o + slot.len]).to_vec());
                    for k in 0..slot.len {
                        row[slot.start + k] = probs[k] * (1.0 - probs[k]);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[inline]
fn softplus(l: f64) -> f64 {
    if l > 0.0 {
        l + (-l).exp().ln_1p()
    } else {
        l.exp().ln_1p()
    }
}

/// `log p(x|z)` per row given decoder outputs.
pub fn log_likelihood(likelihood: Likelihood, out: &Array2<f64>, x: &Array2<f64>) -> Vec<f64> {
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    out.rows()
        .into_iter()
        .zip(x.rows())
        .map(|(o, xr)| match likelihood {
            Likelihood::Bernoulli => o.iter().zip(xr).map(|(&l, &t)| t * l - softplus(l)).sum(),
            Likelihood::Gaussian => o
                .iter()
                .zip(xr)
                .map(|(&m, &t)| -0.5 * (t - m).powi(2) - half_ln_2pi)
                .sum(),
        })
        .collect()
}

/// d(-log p(x|z))/d out.
pub(crate) fn neg_log_likelihood_grad(
    likelihood: Likelihood,
    out: &Array2<f64>,
    x: &Array2<f64>,
) -> Array2<f64> {
    match likelihood {
        Likelihood::Bernoulli => {
            let mut g = out.mapv(crate::data::sigmoid);
            g -= x;
            g
        }
        Likelihood::Gaussian => out - x,
    }
}

/// Decodes latents; returns the raw decoder output (logits or means) and
/// `log p(x|z)` per row.
pub fn decode(p: &ModelParams, z: &Array2<f64>, x: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    if z.ncols() != p.latent_dim() {
        return Err(Error::Dimension {
            context: "latent width",
            expected: p.latent_dim(),
            actual: z.ncols(),
        });
    }
    p.check_obs(x)?;
    if z.nrows() != x.nrows() {
        return Err(Error::Dimension {
            context: "decode batch",
            expected: x.nrows(),
            actual: z.nrows(),
        });
    }
    let out = p.decoder.predict(z);
    let ll = log_likelihood(p.likelihood, &out, x);
    Ok((out, ll))
}

/// Mean reconstruction in observation space (sigmoid of logits for the
/// Bernoulli likelihood).
pub fn reconstruct(p: &ModelParams, z: &Array2<f64>) -> Result<Array2<f64>> {
    if z.ncols() != p.latent_dim() {
        return Err(Error::Dimension {
            context: "latent width",
            expected: p.latent_dim(),
            actual: z.ncols(),
        });
    }
    let out = p.decoder.predict(z);
    Ok(match p.likelihood {
        Likelihood::Bernoulli => out.mapv(crate::data::sigmoid),
        Likelihood::Gaussian => out,
    })
}
