//! Per-run metrics and median-over-seeds aggregation.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use groupvae::checkpoint::Checkpoint;
use groupvae::metrics::{evaluate_model, GroupMIReport};

use crate::table::{median_min_max, num, opt, Table};
use crate::workspace::{completed_runs, RunRecord, Workspace};

struct Setting {
    objective: String,
    strength: f64,
    group_mig: Vec<f64>,
    mig: Vec<f64>,
}

pub struct RunResult {
    pub record: RunRecord,
    pub report: GroupMIReport,
}

fn evaluate_run(ws: &Workspace, dir: &std::path::Path) -> Result<RunResult> {
    let record = RunRecord::load(dir)?;
    let params = Checkpoint::load(&dir.join("checkpoint.json"))
        .and_then(|c| c.params())
        .with_context(|| format!("loading checkpoint of {}", record.name))?;
    let report = evaluate_model(&params, &ws.dataset, ws.config().eval)?;
    Ok(RunResult { record, report })
}

/// Writes `eval/` and returns the summary table text.
pub fn run(ws: &Workspace) -> Result<String> {
    let dirs = completed_runs(&ws.root.join("runs"))?;
    let mut results = Vec::new();
    for dir in &dirs {
        match evaluate_run(ws, dir) {
            Ok(r) => results.push(r),
            Err(e) => log::warn!("excluding {}: {e:#}", dir.display()),
        }
    }
    if results.is_empty() {
        anyhow::bail!("no readable completed runs under {}", ws.root.join("runs").display());
    }
    results.sort_by(|a, b| {
        (a.record.objective.as_str(), a.record.strength, a.record.seed)
            .partial_cmp(&(b.record.objective.as_str(), b.record.strength, b.record.seed))
            .expect("finite strengths")
    });

    let out = ws.root.join("eval");
    let names = ws.dataset.spec().factor_names();
    let groups: Vec<String> = ws.dataset.group_spec().groups().iter().map(|g| g.name.clone()).collect();
    let mut header: Vec<String> = ["run", "objective", "strength", "seed", "group_mig", "mig"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(groups.iter().map(|g| format!("group_mig_{g}")));
    let mut runs = Table::new(&header);
    for r in &results {
        let rec = &r.record;
        let mut row = vec![
            rec.name.clone(),
            rec.objective.clone(),
            rec.strength.to_string(),
            rec.seed.to_string(),
            num(r.report.group_mig),
            num(r.report.mig),
        ];
        row.extend(r.report.scores.iter().map(|s| opt(*s)));
        runs.row(&row);
        crate::workspace::write_text(&out.join("mi").join(format!("{}.csv", rec.name)), &r.report.mi.to_csv(names))?;
    }
    runs.save(&out.join("runs.csv"))?;

    // One row per (objective, strength), in sorted order.
    let mut settings: Vec<Setting> = Vec::new();
    for r in &results {
        let rec = &r.record;
        match settings.last_mut() {
            Some(s) if s.objective == rec.objective && s.strength == rec.strength => {
                s.group_mig.push(r.report.group_mig);
                s.mig.push(r.report.mig);
            }
            _ => settings.push(Setting {
                objective: rec.objective.clone(),
                strength: rec.strength,
                group_mig: vec![r.report.group_mig],
                mig: vec![r.report.mig],
            }),
        }
    }

    let mut summary = Table::new(&[
        "objective",
        "strength",
        "seeds",
        "group_mig_median",
        "group_mig_min",
        "group_mig_max",
        "mig_median",
        "mig_min",
        "mig_max",
    ]);
    for s in &settings {
        let gm = median_min_max(&s.group_mig);
        let m = median_min_max(&s.mig);
        summary.row(&[
            s.objective.clone(),
            s.strength.to_string(),
            s.group_mig.len().to_string(),
            num(gm.0),
            num(gm.1),
            num(gm.2),
            num(m.0),
            num(m.1),
            num(m.2),
        ]);
    }
    let text = summary.into_string();
    crate::workspace::write_text(&out.join("summary.csv"), &text)?;

    let mut best: BTreeMap<&str, (&Setting, f64)> = BTreeMap::new();
    for s in &settings {
        let med = median_min_max(&s.group_mig).0;
        let e = best.entry(s.objective.as_str()).or_insert((s, med));
        if med > e.1 {
            *e = (s, med);
        }
    }
    let mut table = Table::new(&["objective", "strength", "group_mig_median", "mig_median"]);
    for (obj, (s, med)) in best {
        table.row(&[obj.to_string(), s.strength.to_string(), num(med), num(median_min_max(&s.mig).0)]);
    }
    table.save(&out.join("best.csv"))?;
    Ok(text)
}
