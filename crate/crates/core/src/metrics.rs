//! Histogram mutual information, MIG, group-MIG, fairness scores, and an
//! exact KL decomposition check on enumerable categorical toys.
//!
//! All information quantities are in nats and use plug-in estimates from
//! counts.

use std::ops::Range;

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::{FactorDataset, GroupSpec};
use crate::error::{Error, Result};
use crate::model::{encode_means, LatentPartition, ModelParams};

pub const DEFAULT_BINS: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// `bins` equal-width bins over the empirical range.
    #[default]
    EqualWidth,
    /// Quantile bins; ties share a bin. Invariant to strictly monotone maps.
    EqualCount,
}

/// How `H(g)` is computed for a group of factors.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupEntropy {
    /// Entropy of the joint variable over the group's factors.
    #[default]
    Joint,
    /// Sum of the per-factor marginal entropies.
    FactorSum,
}

/// Maps a real column to bin labels in `0..bins`. A constant column maps to 0.
pub fn discretize(values: ArrayView1<'_, f64>, bins: usize, binning: Binning) -> Vec<usize> {
    let n = values.len();
    match binning {
        Binning::EqualWidth => {
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let width = hi - lo;
            if !(width > 0.0) {
                return vec![0; n];
            }
            values
                .iter()
                .map(|&v| (((v - lo) / width * bins as f64) as usize).min(bins - 1))
                .collect()
        }
        Binning::EqualCount => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
            let mut out = vec![0; n];
            let mut first = 0;
            for (rank, &i) in order.iter().enumerate() {
                if rank > 0 && values[i] != values[order[rank - 1]] {
                    first = rank;
                }
                out[i] = first * bins / n;
            }
            out
        }
    }
}

fn support(labels: &[usize]) -> usize {
    labels.iter().max().map_or(0, |m| m + 1)
}

/// Plug-in entropy of a label vector.
pub fn entropy(labels: &[usize]) -> f64 {
    let mut counts = vec![0usize; support(labels)];
    for &l in labels {
        counts[l] += 1;
    }
    let n = labels.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Plug-in mutual information between two label vectors of equal length.
pub fn mutual_info(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            context: "mutual_info lengths",
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (ka, kb) = (support(a), support(b));
    let mut joint = Array2::<f64>::zeros((ka, kb));
    for (&x, &y) in a.iter().zip(b) {
        joint[[x, y]] += 1.0;
    }
    mutual_info_from_joint(joint.view())
}

/// MI of a joint table of counts or probabilities (normalized internally).
pub fn mutual_info_from_joint(joint: ArrayView2<'_, f64>) -> Result<f64> {
    if joint.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::param("joint table entries must be finite and non-negative"));
    }
    let total: f64 = joint.sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    let rows: Vec<f64> = joint.rows().into_iter().map(|r| r.sum() / total).collect();
    let cols: Vec<f64> = joint.columns().into_iter().map(|c| c.sum() / total).collect();
    let mut mi = 0.0;
    for ((i, j), &v) in joint.indexed_iter() {
        if v > 0.0 {
            let p = v / total;
            mi += p * (p / (rows[i] * cols[j])).ln();
        }
    }
    Ok(mi.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MIMatrix {
    /// `values[[j, k]] = I(z_j; v_k)`.
    pub values: Array2<f64>,
    /// `H(v_k)`.
    pub factor_entropy: Vec<f64>,
    pub samples: usize,
}

impl MIMatrix {
    /// Delimited table, one row per latent dimension.
    pub fn to_csv(&self, factor_names: &[String]) -> String {
        let mut out = String::from("dim");
        for k in 0..self.values.ncols() {
            out.push(',');
            out.push_str(factor_names.get(k).map_or("factor", |s| s.as_str()));
        }
        out.push('\n');
        for (j, row) in self.values.rows().into_iter().enumerate() {
            out.push_str(&j.to_string());
            for v in row {
                out.push_str(&format!(",{v:.6}"));
            }
            out.push('\n');
        }
        out
    }
}

fn check_rows(latents: &ArrayView2<'_, f64>, factors: &ArrayView2<'_, usize>) -> Result<()> {
    if latents.nrows() != factors.nrows() {
        return Err(Error::Dimension {
            context: "latents vs factors rows",
            expected: factors.nrows(),
            actual: latents.nrows(),
        });
    }
    if latents.nrows() == 0 {
        return Err(Error::param("no samples"));
    }
    Ok(())
}

fn discretize_all(latents: &ArrayView2<'_, f64>, bins: usize, binning: Binning) -> Result<Vec<Vec<usize>>> {
    if bins < 2 {
        return Err(Error::param(format!("bins must be at least 2, got {bins}")));
    }
    if latents.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("latents contain non-finite values"));
    }
    Ok(latents.columns().into_iter().map(|c| discretize(c, bins, binning)).collect())
}

/// `I(z_j; v_k)` for every latent dimension and factor, equal-width bins.
pub fn estimate_mi(latents: ArrayView2<'_, f64>, factors: ArrayView2<'_, usize>, bins: usize) -> Result<MIMatrix> {
    estimate_mi_with(latents, factors, bins, Binning::EqualWidth)
}

pub fn estimate_mi_with(
    latents: ArrayView2<'_, f64>,
    factors: ArrayView2<'_, usize>,
    bins: usize,
    binning: Binning,
) -> Result<MIMatrix> {
    check_rows(&latents, &factors)?;
    let codes = discretize_all(&latents, bins, binning)?;
    let fac: Vec<Vec<usize>> = factors.columns().into_iter().map(|c| c.to_vec()).collect();
    let mut values = Array2::zeros((codes.len(), fac.len()));
    for (j, z) in codes.iter().enumerate() {
        for (k, v) in fac.iter().enumerate() {
            values[[j, k]] = mutual_info(z, v)?;
        }
    }
    Ok(MIMatrix {
        values,
        factor_entropy: fac.iter().map(|v| entropy(v)).collect(),
        samples: latents.nrows(),
    })
}

/// Index of the largest entry (ties toward the lowest index) and the
/// largest entry among the rest.
fn top_two(col: impl Iterator<Item = f64>) -> (usize, f64, f64) {
    let (mut best, mut first, mut second) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (j, v) in col.enumerate() {
        if v > first {
            second = first;
            first = v;
            best = j;
        } else if v > second {
            second = v;
        }
    }
    (best, first, second)
}

/// Mean over factors of the normalized gap between the two most informative
/// latent dimensions. Factors with zero entropy are skipped.
pub fn mig(mi: &MIMatrix) -> Result<f64> {
    if mi.values.nrows() < 2 {
        return Err(Error::param("MIG needs at least 2 latent dimensions"));
    }
    let mut gaps = Vec::new();
    for (k, col) in mi.values.columns().into_iter().enumerate() {
        let h = mi.factor_entropy[k];
        if h <= 0.0 {
            log::warn!("factor {k} has zero entropy; skipped in MIG");
            continue;
        }
        let (_, a, b) = top_two(col.iter().copied());
        gaps.push((a - b) / h);
    }
    if gaps.is_empty() {
        log::warn!("no factor with positive entropy; MIG set to 0");
        return Ok(0.0);
    }
    Ok(gaps.iter().sum::<f64>() / gaps.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricOptions {
    pub bins: usize,
    pub binning: Binning,
    pub group_entropy: GroupEntropy,
}

impl Default for MetricOptions {
    fn default() -> Self {
        MetricOptions {
            bins: DEFAULT_BINS,
            binning: Binning::EqualWidth,
            group_entropy: GroupEntropy::Joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMIReport {
    pub group_entropy: Vec<f64>,
    /// Largest `I(z_j; g)` over dimensions in the group's slice.
    pub inside_max: Vec<f64>,
    /// Largest `I(z_j; g)` over dimensions outside the slice.
    pub outside_max: Vec<f64>,
    /// Per-group score, `None` when the group has zero entropy.
    pub scores: Vec<Option<f64>>,
    pub group_mig: f64,
    pub mig: f64,
    pub mi: MIMatrix,
}

/// Relabels each row's values on `factors` to a single mixed-radix index.
fn joint_labels(factors: &ArrayView2<'_, usize>, members: &[usize]) -> Vec<usize> {
    let card: Vec<usize> = members
        .iter()
        .map(|&f| factors.column(f).iter().max().map_or(1, |m| m + 1))
        .collect();
    factors
        .rows()
        .into_iter()
        .map(|r| members.iter().zip(&card).fold(0, |acc, (&f, &c)| acc * c + r[f]))
        .collect()
}

/// Per group: `|max_{j in slice} I(z_j; g) - max_{j outside} I(z_j; g)| / H(g)`,
/// averaged over groups with positive entropy. Also reports plain MIG.
pub fn group_mig(
    latents: ArrayView2<'_, f64>,
    factors: ArrayView2<'_, usize>,
    groups: &GroupSpec,
    partition: &LatentPartition,
    opts: MetricOptions,
) -> Result<GroupMIReport> {
    check_rows(&latents, &factors)?;
    if groups.len() != partition.num_groups() {
        return Err(Error::Dimension {
            context: "factor groups vs latent groups",
            expected: groups.len(),
            actual: partition.num_groups(),
        });
    }
    if latents.ncols() != partition.latent_dim() {
        return Err(Error::Dimension {
            context: "latent columns vs partition",
            expected: partition.latent_dim(),
            actual: latents.ncols(),
        });
    }
    if factors.ncols() != groups.num_factors() {
        return Err(Error::Dimension {
            context: "factor columns vs group spec",
            expected: groups.num_factors(),
            actual: factors.ncols(),
        });
    }
    let codes = discretize_all(&latents, opts.bins, opts.binning)?;
    let mi = estimate_mi_with(latents, factors, opts.bins, opts.binning)?;
    let mut report = GroupMIReport {
        group_entropy: Vec::new(),
        inside_max: Vec::new(),
        outside_max: Vec::new(),
        scores: Vec::new(),
        group_mig: 0.0,
        mig: mig(&mi)?,
        mi,
    };
    for (g, group) in groups.groups().iter().enumerate() {
        let labels = joint_labels(&factors, &group.factors);
        let h = match opts.group_entropy {
            GroupEntropy::Joint => entropy(&labels),
            GroupEntropy::FactorSum => group.factors.iter().map(|&f| report.mi.factor_entropy[f]).sum(),
        };
        let range: Range<usize> = partition.range(g);
        let (mut inside, mut outside) = (0.0f64, 0.0f64);
        for (j, z) in codes.iter().enumerate() {
            let v = mutual_info(z, &labels)?;
            if range.contains(&j) {
                inside = inside.max(v);
            } else {
                outside = outside.max(v);
            }
        }
        report.group_entropy.push(h);
        report.inside_max.push(inside);
        report.outside_max.push(outside);
        report.scores.push(if h > 0.0 {
            Some((inside - outside).abs() / h)
        } else {
            log::warn!("group {} has zero entropy; skipped in group-MIG", group.name);
            None
        });
    }
    let valid: Vec<f64> = report.scores.iter().flatten().copied().collect();
    report.group_mig = if valid.is_empty() {
        0.0
    } else {
        valid.iter().sum::<f64>() / valid.len() as f64
    };
    Ok(report)
}

/// Encodes every observation of `ds` to posterior means and scores the
/// representation against the dataset's factors and groups.
pub fn evaluate_model(params: &ModelParams, ds: &FactorDataset, opts: MetricOptions) -> Result<GroupMIReport> {
    let z = encode_means(params, ds.observations())?;
    group_mig(z.view(), ds.factor_values().view(), ds.group_spec(), &params.partition, opts)
}

/// `|P(ŷ=1 | a=1) - P(ŷ=1 | a=0)|`.
pub fn demographic_parity(predictions: &[bool], sensitive: &[bool]) -> Result<f64> {
    if predictions.len() != sensitive.len() {
        return Err(Error::Dimension {
            context: "demographic_parity lengths",
            expected: sensitive.len(),
            actual: predictions.len(),
        });
    }
    let mut pos = [0usize; 2];
    let mut n = [0usize; 2];
    for (&p, &a) in predictions.iter().zip(sensitive) {
        n[a as usize] += 1;
        pos[a as usize] += p as usize;
    }
    if n[0] == 0 || n[1] == 0 {
        return Err(Error::param("demographic parity undefined: empty sensitive subgroup"));
    }
    Ok((pos[1] as f64 / n[1] as f64 - pos[0] as f64 / n[0] as f64).abs())
}

/// `accuracy - mean(dps)`; just `accuracy` when `dps` is empty.
pub fn fair_gap(accuracy: f64, dps: &[f64]) -> Result<f64> {
    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
    if !in_unit(accuracy) || !dps.iter().all(|&d| in_unit(d)) {
        return Err(Error::param("accuracy and DP values must lie in [0, 1]"));
    }
    if dps.is_empty() {
        return Ok(accuracy);
    }
    Ok(accuracy - dps.iter().sum::<f64>() / dps.len() as f64)
}

/// Enumerable model: `p(n)` over a few data points, factorized categorical
/// posteriors `q(z|n) = Π_d q(z_d|n)` and a factorized prior `p(z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalToy {
    pub data_probs: Vec<f64>,
    /// `posteriors[n][d]` is the distribution of `z_d` given data point `n`.
    pub posteriors: Vec<Vec<Vec<f64>>>,
    pub prior: Vec<Vec<f64>>,
}

pub const MAX_TOY_POINTS: usize = 6;
pub const MAX_TOY_DIMS: usize = 3;
pub const MAX_TOY_VALUES: usize = 4;

impl CategoricalToy {
    pub fn validate(&self) -> Result<()> {
        let n = self.data_probs.len();
        let d = self.prior.len();
        if n == 0 || n > MAX_TOY_POINTS || d == 0 || d > MAX_TOY_DIMS {
            return Err(Error::param(format!(
                "toy must have 1..={MAX_TOY_POINTS} points and 1..={MAX_TOY_DIMS} dims, got {n} and {d}"
            )));
        }
        if self.prior.iter().any(|p| p.is_empty() || p.len() > MAX_TOY_VALUES) {
            return Err(Error::param(format!("each latent may take 1..={MAX_TOY_VALUES} values")));
        }
        if self.posteriors.len() != n || self.posteriors.iter().any(|q| q.len() != d) {
            return Err(Error::param("posterior table shape does not match data points and dims"));
        }
        let is_dist = |p: &[f64]| p.iter().all(|&v| v > 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9;
        if !is_dist(&self.data_probs) || !self.prior.iter().all(|p| is_dist(p)) {
            return Err(Error::param("data and prior probabilities must be positive and sum to 1"));
        }
        for q in &self.posteriors {
            for (qd, pd) in q.iter().zip(&self.prior) {
                if qd.len() != pd.len() || !is_dist(qd) {
                    return Err(Error::param("posterior rows must be positive distributions matching the prior"));
                }
            }
        }
        Ok(())
    }

    fn cards(&self) -> Vec<usize> {
        self.prior.iter().map(|p| p.len()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    /// `E_{p(n)} KL(q(z|n) || p(z))`.
    pub full_kl: f64,
    /// `KL(q(z, n) || q(z) p(n))`.
    pub index_code_mi: f64,
    /// `Σ_j KL(q(z_j) || p(z_j))`.
    pub dimension_wise_kl: f64,
    /// `KL(q(z) || Π_j q(z_j))`.
    pub total_correlation: f64,
    /// When groups were given: `KL(q(z) || Π_g q(z_g))`.
    pub cross_group_tc: Option<f64>,
    /// When groups were given: `KL(q(z_g) || Π_{j in g} q(z_j))` per group.
    pub within_group_tc: Option<Vec<f64>>,
}

impl DecompositionReport {
    pub fn residual(&self) -> f64 {
        self.full_kl - (self.index_code_mi + self.dimension_wise_kl + self.total_correlation)
    }
}

fn for_each_code(cards: &[usize], mut f: impl FnMut(&[usize])) {
    let mut code = vec![0; cards.len()];
    loop {
        f(&code);
        let mut d = cards.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            code[d] += 1;
            if code[d] < cards[d] {
                break;
            }
            code[d] = 0;
        }
    }
}

/// Computes every term of the aggregate-posterior decomposition by exact
/// enumeration. `groups`, when given, must partition the latent dimensions
/// and additionally splits the total correlation into cross- and
/// within-group parts.
pub fn kl_decomposition_check(toy: &CategoricalToy, groups: Option<&[Vec<usize>]>) -> Result<DecompositionReport> {
    toy.validate()?;
    let cards = toy.cards();
    let dims = cards.len();
    if let Some(gs) = groups {
        let mut seen = vec![false; dims];
        for &d in gs.iter().flatten() {
            if d >= dims || seen[d] {
                return Err(Error::param("groups must partition the latent dimensions"));
            }
            seen[d] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::param("groups must cover every latent dimension"));
        }
    }
    let q_given = |n: usize, z: &[usize]| -> f64 { (0..dims).map(|d| toy.posteriors[n][d][z[d]]).product() };
    let prior = |z: &[usize]| -> f64 { (0..dims).map(|d| toy.prior[d][z[d]]).product() };
    // Aggregate marginals q(z_d).
    let marg: Vec<Vec<f64>> = (0..dims)
        .map(|d| {
            (0..cards[d])
                .map(|v| toy.data_probs.iter().enumerate().map(|(n, &pn)| pn * toy.posteriors[n][d][v]).sum())
                .collect()
        })
        .collect();
    let q_agg = |z: &[usize]| -> f64 { toy.data_probs.iter().enumerate().map(|(n, &pn)| pn * q_given(n, z)).sum() };
    let q_sub = |dimset: &[usize], z: &[usize]| -> f64 {
        toy.data_probs
            .iter()
            .enumerate()
            .map(|(n, &pn)| pn * dimset.iter().map(|&d| toy.posteriors[n][d][z[d]]).product::<f64>())
            .sum()
    };

    let (mut full, mut icmi, mut tc) = (0.0, 0.0, 0.0);
    let (mut cross, mut within) = (0.0, vec![0.0; groups.map_or(0, |g| g.len())]);
    for_each_code(&cards, |z| {
        let qz = q_agg(z);
        let fact: f64 = (0..dims).map(|d| marg[d][z[d]]).product();
        for (n, &pn) in toy.data_probs.iter().enumerate() {
            let qn = q_given(n, z);
            full += pn * qn * (qn / prior(z)).ln();
            icmi += pn * qn * (qn / qz).ln();
        }
        tc += qz * (qz / fact).ln();
        if let Some(gs) = groups {
            let per_group: Vec<f64> = gs.iter().map(|g| q_sub(g, z)).collect();
            cross += qz * (qz / per_group.iter().product::<f64>()).ln();
            for (k, g) in gs.iter().enumerate() {
                let inner: f64 = g.iter().map(|&d| marg[d][z[d]]).product();
                within[k] += qz * (per_group[k] / inner).ln();
            }
        }
    });
    let dwkl = (0..dims)
        .map(|d| {
            marg[d]
                .iter()
                .zip(&toy.prior[d])
                .map(|(&q, &p)| q * (q / p).ln())
                .sum::<f64>()
        })
        .sum();
    Ok(DecompositionReport {
        full_kl: full,
        index_code_mi: icmi,
        dimension_wise_kl: dwkl,
        total_correlation: tc,
        cross_group_tc: groups.map(|_| cross),
        within_group_tc: groups.map(|_| within),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{default_toy_spec, enumerate_grid};
    use crate::model::LatentPartition;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_by_two_joint() {
        let j = array![[0.4, 0.1], [0.1, 0.4]];
        let want = 0.8 * (1.6f64).ln() + 0.2 * (0.4f64).ln();
        let got = mutual_info_from_joint(j.view()).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 0.1927).abs() < 1e-3);
    }

    #[test]
    fn copy_of_uniform_factor() {
        let n = 10_000;
        let f = Array2::from_shape_fn((n, 1), |(i, _)| i % 4);
        let z = f.mapv(|v| v as f64);
        let mi = estimate_mi(z.view(), f.view(), DEFAULT_BINS).unwrap();
        assert!((mi.values[[0, 0]] - 4f64.ln()).abs() < 0.02);
        assert!((mi.factor_entropy[0] - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn independent_noise_has_small_mi() {
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Array2::from_shape_fn((n, 1), |(i, _)| i % 4);
        let z = Array2::from_shape_fn((n, 1), |_| rng.random::<f64>());
        let mi = estimate_mi(z.view(), f.view(), DEFAULT_BINS).unwrap();
        assert!(mi.values[[0, 0]] < 0.03, "{}", mi.values[[0, 0]]);
    }

    #[test]
    fn constant_dimension_has_zero_mi() {
        let f = Array2::from_shape_fn((100, 1), |(i, _)| i % 2);
        let z = Array2::from_elem((100, 2), 1.5);
        let mi = estimate_mi(z.view(), f.view(), 10).unwrap();
        assert_eq!(mi.values.sum(), 0.0);
        assert_eq!(mig(&mi).unwrap(), 0.0);
        assert!(estimate_mi(z.view(), f.view(), 1).is_err());
    }

    fn grid() -> (Array2<usize>, crate::data::GroupSpec, LatentPartition) {
        let (spec, groups) = default_toy_spec();
        let f = enumerate_grid(spec.cardinalities());
        (f, groups, LatentPartition::equal_split(&["content", "style"], 10).unwrap())
    }

    #[test]
    fn perfect_code_mig_is_one() {
        let (f, _, _) = grid();
        let mut z = Array2::<f64>::zeros((f.nrows(), 10));
        for k in 0..5 {
            z.column_mut(2 * k).assign(&f.column(k).mapv(|v| v as f64));
        }
        let mi = estimate_mi(z.view(), f.view(), DEFAULT_BINS).unwrap();
        assert!((mig(&mi).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn identical_copies_give_zero_mig() {
        let (f, _, _) = grid();
        let code = f.column(0).mapv(|v| v as f64);
        let z = Array2::from_shape_fn((f.nrows(), 3), |(i, _)| code[i]);
        let mi = estimate_mi(z.view(), f.view(), DEFAULT_BINS).unwrap();
        assert!(mig(&mi).unwrap().abs() < 1e-12);
    }

    fn slice_aligned(f: &Array2<usize>, swap: bool) -> Array2<f64> {
        let mut z = Array2::<f64>::zeros((f.nrows(), 10));
        let content = joint_labels(&f.view(), &[0, 1]);
        let style = joint_labels(&f.view(), &[2, 3, 4]);
        let (c, s) = if swap { (5, 0) } else { (0, 5) };
        for i in 0..f.nrows() {
            z[[i, c]] = content[i] as f64;
            z[[i, s]] = style[i] as f64;
        }
        z
    }

    #[test]
    fn slice_aligned_code_group_mig_is_one() {
        let (f, groups, part) = grid();
        let opts = MetricOptions {
            bins: 64,
            ..MetricOptions::default()
        };
        let r = group_mig(slice_aligned(&f, false).view(), f.view(), &groups, &part, opts).unwrap();
        assert!((r.group_mig - 1.0).abs() < 1e-9, "{r:?}");
        let swapped = group_mig(slice_aligned(&f, true).view(), f.view(), &groups, &part, opts).unwrap();
        assert!((swapped.group_mig - r.group_mig).abs() < 1e-12);
    }

    #[test]
    fn style_only_code_has_low_group_mig() {
        let (f, groups, part) = grid();
        let mut z = Array2::<f64>::zeros((f.nrows(), 10));
        for k in 0..5 {
            z.column_mut(5 + k).assign(&f.column(k).mapv(|v| v as f64));
        }
        let r = group_mig(z.view(), f.view(), &groups, &part, MetricOptions::default()).unwrap();
        assert!(r.mig > 0.5);
        assert!(r.mig - r.group_mig > 0.2, "{} vs {}", r.mig, r.group_mig);
        let want = (0.5 + 1.0 / 3.0) / 2.0;
        assert!((r.group_mig - want).abs() < 1e-9);
    }

    #[test]
    fn group_entropy_modes_agree_on_uniform_grid() {
        let (f, groups, part) = grid();
        let z = slice_aligned(&f, false);
        let a = group_mig(z.view(), f.view(), &groups, &part, MetricOptions { bins: 64, ..Default::default() }).unwrap();
        let b = group_mig(
            z.view(),
            f.view(),
            &groups,
            &part,
            MetricOptions {
                bins: 64,
                group_entropy: GroupEntropy::FactorSum,
                ..Default::default()
            },
        )
        .unwrap();
        for (x, y) in a.group_entropy.iter().zip(&b.group_entropy) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_latents_score_zero() {
        let (f, groups, part) = grid();
        let z = Array2::<f64>::zeros((f.nrows(), 10));
        let r = group_mig(z.view(), f.view(), &groups, &part, MetricOptions::default()).unwrap();
        assert_eq!(r.group_mig, 0.0);
        assert_eq!(r.mig, 0.0);
    }

    #[test]
    fn equal_count_ties_share_bins() {
        let v = ndarray::arr1(&[3.0, 1.0, 1.0, 2.0, 5.0, 4.0]);
        let b = discretize(v.view(), 3, Binning::EqualCount);
        assert_eq!(b[1], b[2]);
        assert!(b[4] >= b[5] && b[5] >= b[0] && b[0] >= b[3] && b[3] >= b[1]);
    }

    #[test]
    fn parity_and_gap_examples() {
        let a: Vec<bool> = (0..20).map(|i| i < 10).collect();
        let y: Vec<bool> = (0..20).map(|i| if i < 10 { i < 7 } else { i < 14 }).collect();
        assert!((demographic_parity(&y, &a).unwrap() - 0.3).abs() < 1e-12);
        assert_eq!(demographic_parity(&a, &a).unwrap(), 1.0);
        assert!(demographic_parity(&a, &[true; 20]).is_err());
        assert_eq!(fair_gap(1.0, &[0.0, 0.0]).unwrap(), 1.0);
        assert!((fair_gap(0.9, &[0.2, 0.4]).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(fair_gap(0.5, &[0.5]).unwrap(), 0.0);
        assert_eq!(fair_gap(0.7, &[]).unwrap(), 0.7);
    }

    fn random_dist<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    #[test]
    fn decomposition_identity_on_random_toy() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let toy = CategoricalToy {
            data_probs: random_dist(&mut rng, 4),
            posteriors: (0..4).map(|_| (0..2).map(|_| random_dist(&mut rng, 3)).collect()).collect(),
            prior: (0..2).map(|_| random_dist(&mut rng, 3)).collect(),
        };
        let r = kl_decomposition_check(&toy, Some(&[vec![0], vec![1]])).unwrap();
        assert!(r.residual().abs() < 1e-9);
        // With singleton groups, the cross-group TC is the whole TC.
        assert!((r.cross_group_tc.unwrap() - r.total_correlation).abs() < 1e-12);
    }

    #[test]
    fn decomposition_degenerate_cases() {
        let prior = vec![vec![0.2, 0.8], vec![0.5, 0.25, 0.25]];
        let toy = CategoricalToy {
            data_probs: vec![0.5, 0.5],
            posteriors: vec![prior.clone(), prior.clone()],
            prior: prior.clone(),
        };
        let r = kl_decomposition_check(&toy, None).unwrap();
        for v in [r.full_kl, r.index_code_mi, r.dimension_wise_kl, r.total_correlation] {
            assert!(v.abs() < 1e-12);
        }
        let single = CategoricalToy {
            data_probs: vec![1.0],
            posteriors: vec![vec![vec![0.6, 0.4], vec![0.1, 0.1, 0.8]]],
            prior,
        };
        let r = kl_decomposition_check(&single, None).unwrap();
        assert!(r.index_code_mi.abs() < 1e-12);
        assert!((r.full_kl - r.total_correlation - r.dimension_wise_kl).abs() < 1e-12);
    }

    #[test]
    fn decomposition_size_guard() {
        let toy = CategoricalToy {
            data_probs: vec![1.0 / 7.0; 7],
            posteriors: vec![vec![vec![1.0]]; 7],
            prior: vec![vec![1.0]],
        };
        assert!(kl_decomposition_check(&toy, None).is_err());
    }
}
