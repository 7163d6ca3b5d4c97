//! Experiment configuration: one TOML file per experiment. Every field has a
//! default (the toy setup), and the resolved config is echoed into the
//! manifest so runs are fully determined by what is on disk.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use groupvae::data::{build_grid_dataset, default_toy_spec, FactorDataset, FactorSpec, Group, GroupSpec};
use groupvae::fairness::{ClassifierConfig, FairTask};
use groupvae::metrics::MetricOptions;
use groupvae::model::{Activation, LatentPartition, Likelihood, ModelConfig};
use groupvae::objectives::Objective;
use groupvae::training::TrainConfig;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Output directory; `--out` takes precedence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sweep: Vec<SweepEntry>,
    pub eval: MetricOptions,
    pub traverse: TraverseSection,
    pub fair: FairSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub factor_names: Vec<String>,
    pub cardinalities: Vec<usize>,
    pub groups: Vec<Group>,
    pub obs_dim: usize,
    pub render_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Total latent width, split evenly across the groups in order.
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub likelihood: Likelihood,
    pub activation: Activation,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub batch_size: usize,
    pub iterations: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub allow_self_pair: bool,
    pub log_every: u64,
}

/// One objective family and the strengths (γ or β) to sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    /// `groupvae`, `mlvae`, `gvae`, `betavae` or `paired_elbo`.
    pub objective: String,
    pub strengths: Vec<f64>,
    #[serde(default)]
    pub symmetric: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraverseSection {
    pub steps: usize,
    /// Sweep half-width in posterior standard deviations.
    pub span: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FairSection {
    /// Seed for the split and the biased resampling of the training split.
    pub data_seed: u64,
    pub seeds: Vec<u64>,
    pub sweep: Vec<SweepEntry>,
    pub task: FairTask,
    pub classifier: ClassifierConfig,
}

fn sweep(objective: &str, strengths: &[f64]) -> SweepEntry {
    SweepEntry {
        objective: objective.into(),
        strengths: strengths.to_vec(),
        symmetric: false,
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            output: None,
            seeds: vec![0, 1, 2, 3, 4],
            dataset: DatasetConfig::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            sweep: vec![
                sweep("groupvae", &[1.0, 8.0, 64.0]),
                sweep("gvae", &[1.0, 4.0, 16.0]),
                sweep("mlvae", &[1.0, 4.0, 16.0]),
            ],
            eval: MetricOptions::default(),
            traverse: TraverseSection::default(),
            fair: FairSection::default(),
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        let (spec, groups) = default_toy_spec();
        DatasetConfig {
            factor_names: spec.factor_names().to_vec(),
            cardinalities: spec.cardinalities().to_vec(),
            groups: groups.groups().to_vec(),
            obs_dim: 32,
            render_seed: 0,
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        let base = ModelConfig::new(1, LatentPartition::equal_split(&["a"], 1).expect("valid"));
        ModelSection {
            latent_dim: 10,
            hidden: base.hidden,
            likelihood: base.likelihood,
            activation: base.activation,
            temperature: base.temperature,
        }
    }
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            batch_size: t.batch_size,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            allow_self_pair: t.allow_self_pair,
            log_every: t.log_every,
        }
    }
}

impl Default for TraverseSection {
    fn default() -> Self {
        TraverseSection { steps: 8, span: 3.0 }
    }
}

impl Default for FairSection {
    fn default() -> Self {
        FairSection {
            data_seed: 0,
            seeds: vec![0, 1, 2],
            sweep: vec![sweep("groupvae", &[1.0, 8.0, 64.0])],
            task: FairTask::default_toy(),
            classifier: ClassifierConfig::default(),
        }
    }
}

pub fn objective(name: &str, strength: f64, symmetric: bool) -> Result<Objective> {
    let o = match name {
        "groupvae" => Objective::GroupVae { gamma: strength, symmetric },
        "mlvae" => Objective::MlVae { beta: strength },
        "gvae" => Objective::GVae { beta: strength },
        "betavae" => Objective::BetaVae { beta: strength },
        "paired_elbo" => Objective::PairedElbo,
        other => bail!("unknown objective '{other}' (expected groupvae, mlvae, gvae, betavae or paired_elbo)"),
    };
    o.validate()?;
    Ok(o)
}

fn expand(entries: &[SweepEntry]) -> Result<Vec<Objective>> {
    if entries.is_empty() {
        bail!("sweep list is empty");
    }
    let mut out = Vec::new();
    for e in entries {
        if e.strengths.is_empty() {
            bail!("sweep entry '{}' has no strengths", e.objective);
        }
        for &s in &e.strengths {
            out.push(objective(&e.objective, s, e.symmetric)?);
        }
    }
    Ok(out)
}

fn check_seeds(seeds: &[u64], what: &str) -> Result<()> {
    if seeds.is_empty() {
        bail!("{what} seed list is empty");
    }
    if seeds.iter().collect::<HashSet<_>>().len() != seeds.len() {
        bail!("{what} seeds must be distinct");
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_seeds(&self.seeds, "training")?;
        check_seeds(&self.fair.seeds, "fair")?;
        self.sweep_objectives()?;
        self.fair_objectives()?;
        self.dataset_spec()?;
        self.model_config()?;
        for o in self.sweep_objectives()? {
            self.train_config(o, 0).validate()?;
        }
        if self.traverse.steps < 2 || !(self.traverse.span > 0.0) {
            bail!("traverse needs steps >= 2 and a positive span");
        }
        if self.eval.bins < 2 {
            bail!("eval.bins must be at least 2");
        }
        Ok(())
    }

    pub fn dataset_spec(&self) -> Result<(FactorSpec, GroupSpec)> {
        let d = &self.dataset;
        let spec = FactorSpec::new(d.factor_names.clone(), d.cardinalities.clone())?;
        let groups = GroupSpec::new(d.groups.clone(), spec.num_factors())?;
        Ok((spec, groups))
    }

    pub fn build_dataset(&self) -> Result<FactorDataset> {
        let (spec, groups) = self.dataset_spec()?;
        Ok(build_grid_dataset(spec, groups, self.dataset.obs_dim, self.dataset.render_seed)?)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let names: Vec<&str> = self.dataset.groups.iter().map(|g| g.name.as_str()).collect();
        if self.model.latent_dim < names.len() {
            bail!("latent_dim {} is smaller than the number of groups {}", self.model.latent_dim, names.len());
        }
        let m = &self.model;
        Ok(ModelConfig {
            obs_dim: self.dataset.obs_dim,
            hidden: m.hidden.clone(),
            partition: LatentPartition::equal_split(&names, m.latent_dim)?,
            likelihood: m.likelihood,
            activation: m.activation,
            temperature: m.temperature,
        })
    }

    pub fn train_config(&self, objective: Objective, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            objective,
            batch_size: t.batch_size,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            seed,
            allow_self_pair: t.allow_self_pair,
            log_every: t.log_every,
        }
    }

    pub fn sweep_objectives(&self) -> Result<Vec<Objective>> {
        expand(&self.sweep)
    }

    pub fn fair_objectives(&self) -> Result<Vec<Objective>> {
        expand(&self.fair.sweep)
    }

    /// Same experiment, ignoring where it is written.
    pub fn same_experiment(&self, other: &ExperimentConfig) -> bool {
        let strip = |c: &ExperimentConfig| ExperimentConfig {
            output: None,
            ..c.clone()
        };
        strip(self) == strip(other)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = ExperimentConfig::default();
        c.validate().unwrap();
        let back: ExperimentConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let c: ExperimentConfig = toml::from_str("seeds = [3]\n[train]\niterations = 10\n").unwrap();
        assert_eq!(c.seeds, vec![3]);
        assert_eq!(c.train.iterations, 10);
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.dataset, DatasetConfig::default());
    }

    #[test]
    fn invalid_configs_rejected() {
        let c = ExperimentConfig {
            seeds: vec![1, 1],
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ExperimentConfig {
            sweep: vec![],
            ..ExperimentConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.sweep[0].objective = "vae".into();
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::default();
        c.sweep[0].strengths = vec![-1.0];
        assert!(c.validate().is_err());
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1").is_err());
    }

    #[test]
    fn sweep_expands_in_order() {
        let objs = ExperimentConfig::default().sweep_objectives().unwrap();
        assert_eq!(objs.len(), 9);
        assert_eq!(objs[0], Objective::GroupVae { gamma: 1.0, symmetric: false });
        assert_eq!(objs[8], Objective::MlVae { beta: 16.0 });
    }
}
