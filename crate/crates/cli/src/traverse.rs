//! Latent traversals: for each dimension, decode a sweep from
//! `mean - span·σ` to `mean + span·σ` with every other dimension held at the
//! anchor's posterior mean.

use std::path::Path;

use anyhow::{bail, Result};
use groupvae::model::{encode_means, encode_variances, reconstruct, ModelParams};
use ndarray::{Array2, Array3, Axis};

use crate::table::{num, Table};

/// Sweep values for one dimension. With an odd step count the middle step
/// is exactly the mean.
pub fn sweep_values(mean: f64, sd: f64, span: f64, steps: usize) -> Vec<f64> {
    let half = (steps - 1) as f64 / 2.0;
    (0..steps)
        .map(|k| mean + span * sd * (k as f64 - half) / half)
        .collect()
}

/// Decoded traversal, `latent_dim × steps × obs_dim`, plus the swept values.
pub fn traverse(params: &ModelParams, x: &Array2<f64>, steps: usize, span: f64) -> Result<(Array3<f64>, Array2<f64>)> {
    if steps < 2 {
        bail!("traversal needs at least 2 steps");
    }
    let mean = encode_means(params, x)?.row(0).to_owned();
    let var = encode_variances(params, x)?.row(0).to_owned();
    let d = params.latent_dim();
    let mut values = Array2::zeros((d, steps));
    let mut z = Array2::zeros((d * steps, d));
    for dim in 0..d {
        let vals = sweep_values(mean[dim], var[dim].sqrt(), span, steps);
        for (k, v) in vals.into_iter().enumerate() {
            let mut row = z.row_mut(dim * steps + k);
            row.assign(&mean);
            row[dim] = v;
            values[[dim, k]] = v;
        }
    }
    let recon = reconstruct(params, &z)?;
    let obs = recon.ncols();
    Ok((recon.into_shape_with_order((d, steps, obs))?, values))
}

/// L2 distance between the reconstructions at the two ends of each sweep.
pub fn end_to_end_change(recon: &Array3<f64>) -> Vec<f64> {
    let last = recon.len_of(Axis(1)) - 1;
    recon
        .outer_iter()
        .map(|dim| {
            let a = dim.row(0);
            let b = dim.row(last);
            a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
        })
        .collect()
}

/// Writes `anchor_<id>.csv` and appends to the summary rows.
pub fn write_anchor(
    dir: &Path,
    anchor: usize,
    params: &ModelParams,
    recon: &Array3<f64>,
    values: &Array2<f64>,
    span: f64,
    summary: &mut Table,
) -> Result<()> {
    let obs = recon.len_of(Axis(2));
    let mut header: Vec<String> = ["dim", "group", "step", "value"].iter().map(|s| s.to_string()).collect();
    header.extend((0..obs).map(|j| format!("x{j}")));
    let mut t = Table::new(&header);
    let group_of = |dim: usize| {
        params
            .partition
            .slots()
            .iter()
            .find(|s| s.range().contains(&dim))
            .map(|s| s.name.clone())
            .unwrap_or_default()
    };
    let change = end_to_end_change(recon);
    for (dim, plane) in recon.outer_iter().enumerate() {
        let group = group_of(dim);
        for (k, row) in plane.outer_iter().enumerate() {
            let mut fields = vec![dim.to_string(), group.clone(), k.to_string(), num(values[[dim, k]])];
            fields.extend(row.iter().map(|&v| num(v)));
            t.row(&fields);
        }
        let steps = values.ncols();
        let sd = (values[[dim, steps - 1]] - values[[dim, 0]]) / (2.0 * span);
        summary.row(&[anchor.to_string(), dim.to_string(), group, num(sd), num(change[dim])]);
    }
    t.save(&dir.join(format!("anchor_{anchor}.csv")))
}
