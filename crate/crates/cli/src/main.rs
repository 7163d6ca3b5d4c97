#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod config;
mod eval;
mod fair;
mod table;
mod traverse;
mod workspace;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use groupvae::checkpoint::Checkpoint;

use config::ExperimentConfig;
use table::Table;
use workspace::{plan, run_sweep, sha256_file, write_text, Manifest, Workspace, DATASET, MANIFEST};

/// Group-disentangled VAE experiments: generate data, train sweeps, evaluate,
/// traverse latents and run the fair-classification pipeline.
#[derive(Parser)]
#[command(name = "groupvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (TOML). Required for `generate`; elsewhere it must
    /// match the manifest.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output` in the config).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overwrite existing outputs and retrain completed runs.
    #[arg(long, global = true)]
    force: bool,
    /// Runs trained in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Added to every training seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed_offset: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Render the factor grid and write the dataset and manifest.
    Generate,
    /// Train the objective × strength × seed sweep.
    Train,
    /// Score completed runs and aggregate medians over seeds.
    Eval,
    /// Decode latent traversals around anchor observations.
    Traverse {
        /// Run name under `runs/`.
        #[arg(long, conflicts_with = "checkpoint")]
        run: Option<String>,
        /// Checkpoint file to traverse instead of a run.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset row ids of the anchor observations.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        anchors: Vec<usize>,
        /// Steps per dimension (default from the config).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train on the biased split, classify and report accuracy, DP and FairGap.
    Fair,
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> Result<PathBuf> {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output.clone()))
        .context("no output directory: pass --out or set `output` in the config")
}

fn load_config(cli: &Cli) -> Result<Option<ExperimentConfig>> {
    cli.config.as_deref().map(ExperimentConfig::load).transpose()
}

fn generate(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?.context("generate needs --config")?;
    let out = out_dir(cli, Some(&cfg))?;
    let manifest_path = out.join(MANIFEST);
    let dataset_path = out.join(DATASET);
    if !cli.force && (manifest_path.exists() || dataset_path.exists()) {
        bail!("{} already holds an experiment; pass --force to overwrite", out.display());
    }
    if cli.force {
        for sub in ["runs", "eval", "traverse", "fair"] {
            let p = out.join(sub);
            if p.exists() {
                std::fs::remove_dir_all(&p).with_context(|| format!("removing {}", p.display()))?;
            }
        }
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let ds = cfg.build_dataset()?;
    ds.save(&dataset_path)?;
    let manifest = Manifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        dataset_file: DATASET.into(),
        dataset_sha256: sha256_file(&dataset_path)?,
        dataset_rows: ds.len(),
        config: ExperimentConfig { output: None, ..cfg },
    };
    write_text(&manifest_path, &toml::to_string(&manifest).expect("manifest serializes"))?;
    println!("wrote {} observations to {}", ds.len(), dataset_path.display());
    Ok(())
}

fn open(cli: &Cli) -> Result<Workspace> {
    let cfg = load_config(cli)?;
    Workspace::open(&out_dir(cli, cfg.as_ref())?, cfg.as_ref())
}

fn train(cli: &Cli) -> Result<()> {
    let ws = open(cli)?;
    let cfg = ws.config();
    let runs = plan(&cfg.sweep_objectives()?, &cfg.seeds, cli.seed_offset, cfg, &ws.manifest.dataset_sha256)?;
    let s = run_sweep(&ws.root.join("runs"), &ws.dataset, &runs, cli.jobs, cli.force)?;
    println!("trained {} runs, skipped {} completed", s.trained, s.skipped);
    Ok(())
}

fn traverse(cli: &Cli, run: Option<&str>, checkpoint: Option<&Path>, anchors: &[usize], steps: Option<usize>) -> Result<()> {
    let ws = open(cli)?;
    let (path, label) = match (run, checkpoint) {
        (Some(r), None) => (ws.root.join("runs").join(r).join("checkpoint.json"), r.to_string()),
        (None, Some(p)) => (
            p.to_path_buf(),
            p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "checkpoint".into()),
        ),
        _ => bail!("traverse needs --run or --checkpoint"),
    };
    let params = Checkpoint::load(&path)?.params()?;
    let steps = steps.unwrap_or(ws.config().traverse.steps);
    let dir = ws.root.join("traverse").join(&label);
    let mut summary = Table::new(&["anchor", "dim", "group", "posterior_sd", "l2_change"]);
    for &a in anchors {
        if a >= ws.dataset.len() {
            bail!("anchor {a} out of range (dataset has {} rows)", ws.dataset.len());
        }
        let x = ws.dataset.batch(&[a]);
        let span = ws.config().traverse.span;
        let (recon, values) = traverse::traverse(&params, &x, steps, span)?;
        traverse::write_anchor(&dir, a, &params, &recon, &values, span, &mut summary)?;
    }
    let text = summary.into_string();
    write_text(&dir.join("summary.csv"), &text)?;
    print!("{text}");
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate => generate(cli),
        Command::Train => train(cli),
        Command::Eval => {
            let text = eval::run(&open(cli)?)?;
            print!("{text}");
            Ok(())
        }
        Command::Traverse {
            run,
            checkpoint,
            anchors,
            steps,
        } => traverse(cli, run.as_deref(), checkpoint.as_deref(), anchors, *steps),
        Command::Fair => {
            let ws = open(cli)?;
            let opts = fair::FairOptions {
                jobs: cli.jobs,
                seed_offset: cli.seed_offset,
                force: cli.force,
            };
            let (s, text) = fair::run(&ws, &opts)?;
            log::info!("fair sweep: trained {}, skipped {}", s.trained, s.skipped);
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
