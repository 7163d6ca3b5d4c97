//! Output directory layout, the manifest, and resumable sweep runs.
//!
//! ```text
//! <out>/manifest.toml       resolved config + dataset hash
//! <out>/dataset.json
//! <out>/runs/<run>/         run.toml, checkpoint.json, trace.csv, done
//! <out>/eval/               runs.csv, summary.csv, best.csv, mi/<run>.csv
//! <out>/traverse/<run>/     anchor_<i>.csv, summary.csv
//! <out>/fair/runs/<run>/    as above, trained on the biased split
//! <out>/fair/report.csv
//! ```

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use groupvae::checkpoint::Checkpoint;
use groupvae::data::FactorDataset;
use groupvae::model::ModelConfig;
use groupvae::objectives::Objective;
use groupvae::training::{train, TrainConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const MANIFEST: &str = "manifest.toml";
pub const DATASET: &str = "dataset.json";
pub const DONE: &str = "done";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    pub dataset_file: String,
    pub dataset_sha256: String,
    pub dataset_rows: usize,
    pub config: ExperimentConfig,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub struct Workspace {
    pub root: PathBuf,
    pub manifest: Manifest,
    pub dataset: FactorDataset,
}

impl Workspace {
    /// Opens a generated output directory, checking the dataset against the
    /// manifest hash and, if given, the config against the manifest echo.
    pub fn open(root: &Path, config: Option<&ExperimentConfig>) -> Result<Self> {
        let mpath = root.join(MANIFEST);
        let text = fs::read_to_string(&mpath)
            .with_context(|| format!("reading {} (run `generate` first)", mpath.display()))?;
        let manifest: Manifest =
            toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", mpath.display(), e.message()))?;
        if let Some(c) = config {
            if !c.same_experiment(&manifest.config) {
                bail!(
                    "config differs from {}; rerun `generate --force` to start a new experiment",
                    mpath.display()
                );
            }
        }
        let dpath = root.join(&manifest.dataset_file);
        let hash = sha256_file(&dpath)?;
        if hash != manifest.dataset_sha256 {
            bail!("{} does not match the manifest hash", dpath.display());
        }
        let dataset = FactorDataset::load(&dpath)?;
        Ok(Workspace {
            root: root.to_path_buf(),
            manifest,
            dataset,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.manifest.config
    }
}

/// Everything that determines a run; written to `run.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub objective: String,
    pub strength: f64,
    pub seed: u64,
    pub dataset_sha256: String,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl RunRecord {
    pub fn new(objective: Objective, seed: u64, cfg: &ExperimentConfig, dataset_sha256: &str) -> Result<Self> {
        Ok(RunRecord {
            name: run_name(&objective, seed),
            objective: objective.name().into(),
            strength: objective.strength(),
            seed,
            dataset_sha256: dataset_sha256.into(),
            model: cfg.model_config()?,
            train: cfg.train_config(objective, seed),
        })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("run.toml");
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {}", path.display(), e.message()))
    }
}

pub fn run_name(objective: &Objective, seed: u64) -> String {
    format!("{}-{}-s{seed}", objective.name(), objective.strength())
}

/// The sweep grid in config order, seeds shifted by `seed_offset`.
pub fn plan(
    objectives: &[Objective],
    seeds: &[u64],
    seed_offset: u64,
    cfg: &ExperimentConfig,
    dataset_sha256: &str,
) -> Result<Vec<RunRecord>> {
    let mut out = Vec::new();
    for &o in objectives {
        for &s in seeds {
            let seed = s
                .checked_add(seed_offset)
                .context("seed + seed offset overflows")?;
            out.push(RunRecord::new(o, seed, cfg, dataset_sha256)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub trained: usize,
    pub skipped: usize,
}

/// Trains every planned run that has no completed marker (all of them with
/// `force`), `jobs` at a time.
pub fn run_sweep(
    runs_dir: &Path,
    ds: &FactorDataset,
    runs: &[RunRecord],
    jobs: usize,
    force: bool,
) -> Result<SweepSummary> {
    let mut todo = Vec::new();
    let mut summary = SweepSummary::default();
    for r in runs {
        let dir = runs_dir.join(&r.name);
        if !force && dir.join(DONE).exists() {
            let existing = RunRecord::load(&dir)?;
            if existing != *r {
                bail!("{} was trained with a different config; pass --force to retrain", dir.display());
            }
            log::info!("skipping {} (done)", r.name);
            summary.skipped += 1;
        } else {
            todo.push(r);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("building thread pool")?;
    pool.install(|| todo.par_iter().try_for_each(|r| train_run(&runs_dir.join(&r.name), ds, r)))?;
    summary.trained = todo.len();
    Ok(summary)
}

fn train_run(dir: &Path, ds: &FactorDataset, r: &RunRecord) -> Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_text(&dir.join("run.toml"), &toml::to_string(r).expect("run record serializes"))?;
    let start = Instant::now();
    let out = train(ds, &r.model, &r.train).with_context(|| format!("training {}", r.name))?;
    Checkpoint::new(&out.params, Some(r.train.clone()), r.train.iterations).save(&dir.join("checkpoint.json"))?;
    let mut trace = String::from("step,total,recon_x,recon_x_prime,kl_prior_x,kl_prior_x_prime,kl_reg\n");
    for e in &out.trace {
        let l = &e.loss;
        trace.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.step, l.total, l.recon_x, l.recon_x_prime, l.kl_prior_x, l.kl_prior_x_prime, l.kl_reg
        ));
    }
    write_text(&dir.join("trace.csv"), &trace)?;
    write_text(&dir.join(DONE), "")?;
    log::info!("trained {} in {:.1}s", r.name, start.elapsed().as_secs_f64());
    Ok(())
}

/// Completed run directories, sorted by name.
pub fn completed_runs(runs_dir: &Path) -> Result<Vec<PathBuf>> {
    if !runs_dir.exists() {
        return Ok(Vec::new());
    }
    let mut dirs = Vec::new();
    for entry in fs::read_dir(runs_dir).with_context(|| format!("listing {}", runs_dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            if path.join(DONE).exists() {
                dirs.push(path);
            } else {
                log::warn!("{} is incomplete; skipped", path.display());
            }
        }
    }
    dirs.sort();
    Ok(dirs)
}
