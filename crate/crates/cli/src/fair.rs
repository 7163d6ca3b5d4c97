//! Fair classification over a sweep trained on the biased split.

use anyhow::{Context, Result};
use groupvae::checkpoint::Checkpoint;
use groupvae::fairness::{evaluate_raw_baseline, evaluate_representation, prepare_fair_data, select_by_fair_gap};

use crate::table::{num, opt, Table};
use crate::workspace::{plan, run_sweep, SweepSummary, Workspace};

pub struct FairOptions {
    pub jobs: usize,
    pub seed_offset: u64,
    pub force: bool,
}

/// Trains the fair sweep, writes `fair/report.csv` and returns its text.
pub fn run(ws: &Workspace, opts: &FairOptions) -> Result<(SweepSummary, String)> {
    let cfg = ws.config();
    let fc = &cfg.fair;
    fc.task.validate(&ws.dataset)?;
    let data = prepare_fair_data(&ws.dataset, &fc.task, fc.data_seed)?;
    let runs = plan(
        &cfg.fair_objectives()?,
        &fc.seeds,
        opts.seed_offset,
        cfg,
        &ws.manifest.dataset_sha256,
    )?;
    let runs_dir = ws.root.join("fair").join("runs");
    let summary = run_sweep(&runs_dir, &data.train.data, &runs, opts.jobs, opts.force)?;

    let mut evals = Vec::new();
    for r in &runs {
        let params = Checkpoint::load(&runs_dir.join(&r.name).join("checkpoint.json"))
            .and_then(|c| c.params())
            .with_context(|| format!("loading checkpoint of {}", r.name))?;
        evals.push(evaluate_representation(&params, &data, &fc.task, &fc.classifier)?);
    }
    let base = evaluate_raw_baseline(&data, &fc.task, &fc.classifier)?;

    let mut selected = vec![false; runs.len()];
    let mut families: Vec<&str> = runs.iter().map(|r| r.objective.as_str()).collect();
    families.dedup();
    for fam in families {
        let idx: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].objective == fam).collect();
        let gaps: Vec<f64> = idx.iter().map(|&i| evals[i].validation.fair_gap).collect();
        if let Some(k) = select_by_fair_gap(&gaps) {
            selected[idx[k]] = true;
        }
    }

    let names = ws.dataset.spec().factor_names();
    let mut header: Vec<String> = ["model", "objective", "strength", "seed", "val_fair_gap", "accuracy"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(fc.task.sensitive.iter().map(|&s| format!("dp_{}", names[s])));
    header.extend(["fair_gap".to_string(), "selected".to_string()]);
    let mut table = Table::new(&header);
    let mut row = |model: &str, obj: &str, strength: String, seed: String, e: &groupvae::fairness::FairEvaluation, sel: bool| {
        let mut fields = vec![
            model.to_string(),
            obj.to_string(),
            strength,
            seed,
            num(e.validation.fair_gap),
            num(e.test.accuracy),
        ];
        fields.extend(e.test.dp.iter().map(|d| opt(*d)));
        fields.extend([num(e.test.fair_gap), u8::from(sel).to_string()]);
        table.row(&fields);
    };
    row("raw_mlp", "raw", String::new(), String::new(), &base, true);
    for (i, r) in runs.iter().enumerate() {
        row(&r.name, &r.objective, r.strength.to_string(), r.seed.to_string(), &evals[i], selected[i]);
    }
    let text = table.into_string();
    crate::workspace::write_text(&ws.root.join("fair").join("report.csv"), &text)?;
    Ok((summary, text))
}
