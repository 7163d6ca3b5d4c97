//! Adam training loop over sampled pairs, plus a finite-difference gradient check.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{FactorDataset, PairSampler, PairedBatch};
use crate::error::{Error, Result};
use crate::model::{init_params, Gradients, ModelConfig, ModelParams};
use crate::objectives::{loss, loss_and_grad, LossBreakdown, Noise, Objective};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch_size: usize,
    pub iterations: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Allow `x' = x` when drawing pairs.
    pub allow_self_pair: bool,
    /// Record a trace entry every this many steps (0 disables the trace).
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            objective: Objective::GroupVae {
                gamma: 8.0,
                symmetric: false,
            },
            batch_size: 64,
            iterations: 20_000,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            allow_self_pair: true,
            log_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.objective.validate()?;
        if self.batch_size == 0 {
            return Err(Error::param("batch_size must be positive"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::param("learning_rate must be finite and non-negative"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::param(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::param("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Adam with bias correction, one moment buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize], learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Adam {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            t: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Descent step: `params -= lr · m̂ / (sqrt(v̂) + eps)`.
    pub fn update(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mh = m[j] / bc1;
                let vh = v[j] / bc2;
                p[j] -= self.learning_rate * mh / (vh.sqrt() + self.epsilon);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: u64,
    /// Mean of the per-step breakdowns since the previous entry.
    pub loss: LossBreakdown,
}

pub struct Trainer {
    pub params: ModelParams,
    pub config: TrainConfig,
    adam: Adam,
    sampler: PairSampler,
    pair_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    step: u64,
    window: (LossBreakdown, u64),
    trace: Vec<TraceEntry>,
}

impl Trainer {
    pub fn new(ds: &FactorDataset, model: &ModelConfig, config: TrainConfig) -> Result<Self> {
        if model.obs_dim != ds.obs_dim() {
            return Err(Error::Dimension {
                context: "model obs_dim vs dataset",
                expected: ds.obs_dim(),
                actual: model.obs_dim,
            });
        }
        let params = init_params(model, config.seed)?;
        Self::from_params(ds, params, config)
    }

    pub fn from_params(ds: &FactorDataset, params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if ds.group_spec().len() != params.partition.num_groups() {
            return Err(Error::Dimension {
                context: "latent groups vs factor groups",
                expected: ds.group_spec().len(),
                actual: params.partition.num_groups(),
            });
        }
        let sizes: Vec<usize> = params.slices().iter().map(|s| s.len()).collect();
        Ok(Trainer {
            adam: Adam::new(&sizes, config.learning_rate, config.beta1, config.beta2, config.epsilon),
            sampler: PairSampler::new(ds, config.allow_self_pair)?,
            pair_rng: stream(config.seed, Stream::Pairs),
            noise_rng: stream(config.seed, Stream::Reparam),
            step: 0,
            window: (LossBreakdown::default(), 0),
            trace: Vec::new(),
            params,
            config,
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    pub fn next_batch(&mut self, ds: &FactorDataset) -> (PairedBatch, Noise) {
        let b = self.config.batch_size;
        let batch = self.sampler.sample(ds, &mut self.pair_rng, b);
        let noise = Noise::sample(&mut self.noise_rng, b, self.params.latent_dim());
        (batch, noise)
    }

    /// One Adam step on a freshly sampled batch. A non-finite loss aborts
    /// before the parameters are touched.
    pub fn step(&mut self, ds: &FactorDataset) -> Result<LossBreakdown> {
        let (batch, noise) = self.next_batch(ds);
        let (l, g) = loss_and_grad(&self.params, &batch, self.config.objective, &noise)?;
        self.step += 1;
        if !l.is_finite() || !g.flat().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                step: self.step,
                breakdown: l,
            });
        }
        self.apply(&g);
        self.record(l);
        Ok(l)
    }

    fn apply(&mut self, g: &Gradients) {
        self.adam.update(self.params.slices_mut(), g.slices());
    }

    fn record(&mut self, l: LossBreakdown) {
        let every = self.config.log_every;
        if every == 0 {
            return;
        }
        let (acc, n) = &mut self.window;
        acc.recon_x += l.recon_x;
        acc.recon_x_prime += l.recon_x_prime;
        acc.kl_prior_x += l.kl_prior_x;
        acc.kl_prior_x_prime += l.kl_prior_x_prime;
        acc.kl_reg += l.kl_reg;
        acc.total += l.total;
        *n += 1;
        if self.step.is_multiple_of(every) {
            let k = *n as f64;
            let mean = LossBreakdown {
                recon_x: acc.recon_x / k,
                recon_x_prime: acc.recon_x_prime / k,
                kl_prior_x: acc.kl_prior_x / k,
                kl_prior_x_prime: acc.kl_prior_x_prime / k,
                kl_reg: acc.kl_reg / k,
                total: acc.total / k,
            };
            self.trace.push(TraceEntry {
                step: self.step,
                loss: mean,
            });
            log::debug!("step {} loss {:.4}", self.step, mean.total);
            self.window = (LossBreakdown::default(), 0);
        }
    }

    /// Runs until `config.iterations` steps have been taken in total.
    pub fn run(&mut self, ds: &FactorDataset) -> Result<()> {
        while self.step < self.config.iterations {
            self.step(ds)?;
        }
        Ok(())
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub trace: Vec<TraceEntry>,
}

/// Initializes a model from `config.seed` and trains it on `ds`.
pub fn train(ds: &FactorDataset, model: &ModelConfig, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut t = Trainer::new(ds, model, config.clone())?;
    t.run(ds)?;
    Ok(TrainOutcome {
        trace: t.trace.clone(),
        params: t.params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest `|analytic - numeric| / max(|analytic|, |numeric|, floor)`.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

/// Compares analytic gradients against central differences for every
/// parameter (with fixed batch and noise).
pub fn gradient_check(
    model: &ModelParams,
    batch: &PairedBatch,
    objective: Objective,
    noise: &Noise,
    step: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let (_, g) = loss_and_grad(model, batch, objective, noise)?;
    let analytic = g.flat();
    let base = model.flat();
    let mut probe = model.clone();
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_index: 0,
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    let mut values = base.clone();
    for j in 0..base.len() {
        values[j] = base[j] + step;
        probe.set_flat(&values)?;
        let up = loss(&probe, batch, objective, noise)?.total;
        values[j] = base[j] - step;
        probe.set_flat(&values)?;
        let down = loss(&probe, batch, objective, noise)?.total;
        values[j] = base[j];
        let numeric = (up - down) / (2.0 * step);
        let a = analytic[j];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
        report.checked += 1;
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = j;
            report.worst_analytic = a;
            report.worst_numeric = numeric;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::build_grid_dataset;
    use crate::data::default_toy_spec;
    use crate::model::{Activation, LatentKind, LatentPartition};

    fn small_setup(partition: LatentPartition) -> (ModelParams, PairedBatch, Noise) {
        let (spec, groups) = default_toy_spec();
        let ds = build_grid_dataset(spec, groups, 6, 3).unwrap();
        let mut cfg = ModelConfig::new(6, partition);
        cfg.hidden = vec![7];
        cfg.activation = Activation::Elu;
        let params = init_params(&cfg, 4).unwrap();
        let sampler = PairSampler::new(&ds, true).unwrap();
        let mut rng = stream(9, Stream::Pairs);
        let batch = sampler.sample(&ds, &mut rng, 6);
        let noise = Noise::sample(&mut stream(9, Stream::Reparam), 6, params.latent_dim());
        (params, batch, noise)
    }

    #[test]
    fn adam_minimizes_quadratic() {
        let mut x = vec![3.0, -2.0];
        let mut adam = Adam::new(&[2], 0.05, 0.9, 0.999, 1e-8);
        for _ in 0..2000 {
            let g: Vec<f64> = x.iter().map(|v| 2.0 * (v - 1.0)).collect();
            adam.update(vec![&mut x[..]], vec![&g[..]]);
        }
        assert!(x.iter().all(|v| (v - 1.0).abs() < 1e-3), "{x:?}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let part = LatentPartition::equal_split(&["content", "style"], 4).unwrap();
        let (m, b, n) = small_setup(part);
        for obj in [
            Objective::PairedElbo,
            Objective::GroupVae { gamma: 8.0, symmetric: false },
            Objective::GroupVae { gamma: 3.0, symmetric: true },
            Objective::MlVae { beta: 2.0 },
            Objective::GVae { beta: 2.0 },
            Objective::BetaVae { beta: 4.0 },
        ] {
            let r = gradient_check(&m, &b, obj, &n, 1e-5, 1e-4).unwrap();
            assert!(r.max_rel_error < 1e-4, "{obj:?}: {r:?}");
        }
    }

    #[test]
    fn categorical_gradients_match_finite_differences() {
        let part = LatentPartition::new(vec![
            ("content".into(), LatentKind::Categorical, 3),
            ("style".into(), LatentKind::Gaussian, 2),
        ])
        .unwrap();
        let (m, b, n) = small_setup(part);
        for obj in [
            Objective::GroupVae { gamma: 4.0, symmetric: false },
            Objective::GroupVae { gamma: 4.0, symmetric: true },
            Objective::BetaVae { beta: 2.0 },
        ] {
            let r = gradient_check(&m, &b, obj, &n, 1e-5, 1e-4).unwrap();
            assert!(r.max_rel_error < 1e-4, "{obj:?}: {r:?}");
        }
        assert!(loss(&m, &b, Objective::MlVae { beta: 1.0 }, &n).is_err());
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let (spec, groups) = default_toy_spec();
        let ds = build_grid_dataset(spec, groups, 8, 0).unwrap();
        let mut mc = ModelConfig::new(8, LatentPartition::equal_split(&["c", "s"], 4).unwrap());
        mc.hidden = vec![8];
        let cfg = TrainConfig {
            learning_rate: 0.0,
            iterations: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let before = init_params(&mc, 0).unwrap();
        let out = train(&ds, &mc, &cfg).unwrap();
        assert_eq!(before, out.params);
    }

    #[test]
    fn training_reduces_loss_and_traces() {
        let (spec, groups) = default_toy_spec();
        let ds = build_grid_dataset(spec, groups, 16, 0).unwrap();
        let mut mc = ModelConfig::new(16, LatentPartition::equal_split(&["c", "s"], 4).unwrap());
        mc.hidden = vec![32];
        let cfg = TrainConfig {
            iterations: 600,
            batch_size: 32,
            learning_rate: 3e-3,
            log_every: 100,
            ..TrainConfig::default()
        };
        let out = train(&ds, &mc, &cfg).unwrap();
        assert_eq!(out.trace.len(), 6);
        let first = out.trace[0].loss.total;
        let last = out.trace[5].loss.total;
        assert!(last < first, "{first} -> {last}");
    }

    #[test]
    fn shared_group_alternates() {
        let (spec, groups) = default_toy_spec();
        let ds = build_grid_dataset(spec, groups, 8, 0).unwrap();
        let sampler = PairSampler::new(&ds, true).unwrap();
        let mut rng = stream(1, Stream::Pairs);
        let b = sampler.sample(&ds, &mut rng, 4000);
        let frac = b.shared_group.iter().filter(|&&g| g == 0).count() as f64 / 4000.0;
        assert!((0.45..=0.55).contains(&frac), "{frac}");
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            objective: Objective::MlVae { beta: -1.0 },
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
