//! Synthetic factor-grid datasets, group partitions and weak-supervision
//! pair sampling.
//!
//! A dataset enumerates every combination of factor values and renders
//! each combination to a fixed observation vector in `[0, 1]^obs_dim`.
//! Renders go through a seeded random map: the one-hot factor code is
//! multiplied by a Gaussian matrix, passed through the strictly monotone
//! `a + 0.5 tanh(a)` and squashed by a sigmoid. Distinct factor tuples map
//! to distinct observations with probability one.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactorSpec {
    factor_names: Vec<String>,
    cardinalities: Vec<usize>,
}

impl FactorSpec {
    pub fn new(factor_names: Vec<String>, cardinalities: Vec<usize>) -> Result<Self> {
        if cardinalities.is_empty() {
            return Err(Error::param("factor spec needs at least one factor"));
        }
        if factor_names.len() != cardinalities.len() {
            return Err(Error::param(format!(
                "{} factor names for {} cardinalities",
                factor_names.len(),
                cardinalities.len()
            )));
        }
        if let Some(c) = cardinalities.iter().find(|&&c| c < 2) {
            return Err(Error::param(format!("factor cardinality {c} < 2")));
        }
        Ok(FactorSpec {
            factor_names,
            cardinalities,
        })
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn num_factors(&self) -> usize {
        self.cardinalities.len()
    }

    /// Number of grid points, the product of the cardinalities.
    pub fn grid_size(&self) -> usize {
        self.cardinalities.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub factors: Vec<usize>,
}

/// A partition of the factors into named, non-overlapping groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Group>", into = "Vec<Group>")]
pub struct GroupSpec {
    groups: Vec<Group>,
    num_factors: usize,
}

impl GroupSpec {
    pub fn new(groups: Vec<Group>, num_factors: usize) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::param("group spec needs at least two groups"));
        }
        let mut owner = vec![None; num_factors];
        for (gi, g) in groups.iter().enumerate() {
            if g.factors.is_empty() {
                return Err(Error::param(format!("group '{}' has no factors", g.name)));
            }
            for &f in &g.factors {
                match owner.get_mut(f) {
                    None => {
                        return Err(Error::param(format!(
                            "group '{}' references factor {f} of {num_factors}",
                            g.name
                        )))
                    }
                    Some(Some(_)) => {
                        return Err(Error::param(format!("factor {f} is in more than one group")))
                    }
                    Some(slot) => *slot = Some(gi),
                }
            }
        }
        if let Some(f) = owner.iter().position(Option::is_none) {
            return Err(Error::param(format!("factor {f} is not in any group")));
        }
        Ok(GroupSpec {
            groups,
            num_factors,
        })
    }

    pub fn groups(&self) -> &[Group] {
        &self.groups
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn num_factors(&self) -> usize {
        self.num_factors
    }
}

impl TryFrom<Vec<Group>> for GroupSpec {
    type Error = Error;

    fn try_from(groups: Vec<Group>) -> Result<Self> {
        let n = groups
            .iter()
            .flat_map(|g| g.factors.iter())
            .map(|&f| f + 1)
            .max()
            .unwrap_or(0);
        GroupSpec::new(groups, n)
    }
}

impl From<GroupSpec> for Vec<Group> {
    fn from(g: GroupSpec) -> Self {
        g.groups
    }
}

/// Five-factor toy grid (cards `[3, 3, 4, 4, 4]`) with a content group over
/// the first two factors and a style group over the last three.
pub fn default_toy_spec() -> (FactorSpec, GroupSpec) {
    let names = ["shape", "scale", "orientation", "pos_x", "pos_y"];
    let spec = FactorSpec::new(
        names.iter().map(|s| s.to_string()).collect(),
        vec![3, 3, 4, 4, 4],
    )
    .expect("valid toy spec");
    let groups = GroupSpec::new(
        vec![
            Group {
                name: "content".into(),
                factors: vec![0, 1],
            },
            Group {
                name: "style".into(),
                factors: vec![2, 3, 4],
            },
        ],
        5,
    )
    .expect("valid toy groups");
    (spec, groups)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorDataset {
    spec: FactorSpec,
    group_spec: GroupSpec,
    observations: Array2<f64>,
    factor_values: Array2<usize>,
    render_seed: u64,
}

impl FactorDataset {
    pub fn from_parts(
        spec: FactorSpec,
        group_spec: GroupSpec,
        observations: Array2<f64>,
        factor_values: Array2<usize>,
        render_seed: u64,
    ) -> Result<Self> {
        if group_spec.num_factors() != spec.num_factors() {
            return Err(Error::param(format!(
                "group spec covers {} factors, factor spec has {}",
                group_spec.num_factors(),
                spec.num_factors()
            )));
        }
        if observations.nrows() != factor_values.nrows() {
            return Err(Error::Dimension {
                context: "dataset rows",
                expected: factor_values.nrows(),
                actual: observations.nrows(),
            });
        }
        if factor_values.ncols() != spec.num_factors() {
            return Err(Error::Dimension {
                context: "dataset factor columns",
                expected: spec.num_factors(),
                actual: factor_values.ncols(),
            });
        }
        for row in factor_values.rows() {
            for (v, &c) in row.iter().zip(spec.cardinalities()) {
                if *v >= c {
                    return Err(Error::param(format!("factor value {v} >= cardinality {c}")));
                }
            }
        }
        Ok(FactorDataset {
            spec,
            group_spec,
            observations,
            factor_values,
            render_seed,
        })
    }

    pub fn spec(&self) -> &FactorSpec {
        &self.spec
    }

    pub fn group_spec(&self) -> &GroupSpec {
        &self.group_spec
    }

    pub fn observations(&self) -> &Array2<f64> {
        &self.observations
    }

    pub fn factor_values(&self) -> &Array2<usize> {
        &self.factor_values
    }

    pub fn render_seed(&self) -> u64 {
        self.render_seed
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn obs_dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn observation(&self, i: usize) -> ArrayView1<'_, f64> {
        self.observations.row(i)
    }

    pub fn factors(&self, i: usize) -> ArrayView1<'_, usize> {
        self.factor_values.row(i)
    }

    /// Factor values of observation `i` restricted to `group`.
    pub fn group_key(&self, i: usize, group: usize) -> Vec<usize> {
        self.group_spec.groups[group]
            .factors
            .iter()
            .map(|&f| self.factor_values[[i, f]])
            .collect()
    }

    /// Rows at `indices` (repeats allowed), in that order.
    pub fn subset(&self, indices: &[usize]) -> FactorDataset {
        FactorDataset {
            spec: self.spec.clone(),
            group_spec: self.group_spec.clone(),
            observations: self.observations.select(ndarray::Axis(0), indices),
            factor_values: self.factor_values.select(ndarray::Axis(0), indices),
            render_seed: self.render_seed,
        }
    }

    /// Gathers observation rows into a batch matrix.
    pub fn batch(&self, indices: &[usize]) -> Array2<f64> {
        self.observations.select(ndarray::Axis(0), indices)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = DatasetFile::from(self);
        let text = serde_json::to_string(&file).expect("dataset serializes");
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let file: DatasetFile = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })?;
        file.into_dataset().map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

pub const DATASET_FORMAT: &str = "groupvae-dataset";
pub const DATASET_VERSION: u32 = 1;

/// On-disk dataset layout (JSON). Matrices are stored row-major with
/// explicit row and column counts.
#[derive(Debug, Serialize, Deserialize)]
struct DatasetFile {
    format: String,
    version: u32,
    spec: FactorSpec,
    groups: GroupSpec,
    render_seed: u64,
    rows: usize,
    obs_dim: usize,
    factor_values: Vec<usize>,
    observations: Vec<f64>,
}

impl From<&FactorDataset> for DatasetFile {
    fn from(ds: &FactorDataset) -> Self {
        DatasetFile {
            format: DATASET_FORMAT.into(),
            version: DATASET_VERSION,
            spec: ds.spec.clone(),
            groups: ds.group_spec.clone(),
            render_seed: ds.render_seed,
            rows: ds.len(),
            obs_dim: ds.obs_dim(),
            factor_values: ds.factor_values.iter().copied().collect(),
            observations: ds.observations.iter().copied().collect(),
        }
    }
}

impl DatasetFile {
    fn into_dataset(self) -> Result<FactorDataset> {
        if self.format != DATASET_FORMAT || self.version != DATASET_VERSION {
            return Err(Error::param(format!(
                "unsupported dataset format {} v{}",
                self.format, self.version
            )));
        }
        let nf = self.spec.num_factors();
        let obs = Array2::from_shape_vec((self.rows, self.obs_dim), self.observations)
            .map_err(|e| Error::param(e.to_string()))?;
        let fv = Array2::from_shape_vec((self.rows, nf), self.factor_values)
            .map_err(|e| Error::param(e.to_string()))?;
        let groups = GroupSpec::new(self.groups.groups, nf)?;
        FactorDataset::from_parts(self.spec, groups, obs, fv, self.render_seed)
    }
}

/// Enumerates the full grid in mixed-radix order (last factor fastest).
pub fn enumerate_grid(cardinalities: &[usize]) -> Array2<usize> {
    let n: usize = cardinalities.iter().product();
    let k = cardinalities.len();
    let mut out = Array2::zeros((n, k));
    for i in 0..n {
        let mut rem = i;
        for f in (0..k).rev() {
            out[[i, f]] = rem % cardinalities[f];
            rem /= cardinalities[f];
        }
    }
    out
}

/// Builds the full factor grid and renders every tuple deterministically
/// from `render_seed`.
pub fn build_grid_dataset(
    spec: FactorSpec,
    group_spec: GroupSpec,
    obs_dim: usize,
    render_seed: u64,
) -> Result<FactorDataset> {
    if obs_dim == 0 {
        return Err(Error::param("obs_dim must be positive"));
    }
    let code_len: usize = spec.cardinalities().iter().sum();
    if obs_dim < code_len {
        log::warn!("obs_dim {obs_dim} is below the one-hot code length {code_len}");
    }
    let mut rng = stream(render_seed, Stream::Render);
    let scale = 2.0 / (spec.num_factors() as f64).sqrt();
    let normal = Normal::new(0.0, scale).expect("finite scale");
    let weights = Array2::from_shape_fn((code_len, obs_dim), |_| normal.sample(&mut rng));
    let bias: Vec<f64> = (0..obs_dim).map(|_| 0.5 * rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();

    let factor_values = enumerate_grid(spec.cardinalities());
    let offsets: Vec<usize> = spec
        .cardinalities()
        .iter()
        .scan(0, |acc, &c| {
            let o = *acc;
            *acc += c;
            Some(o)
        })
        .collect();
    let mut observations = Array2::zeros((factor_values.nrows(), obs_dim));
    for (mut out, tuple) in observations.rows_mut().into_iter().zip(factor_values.rows()) {
        for d in 0..obs_dim {
            let a: f64 = bias[d]
                + tuple
                    .iter()
                    .zip(&offsets)
                    .map(|(&v, &o)| weights[[o + v, d]])
                    .sum::<f64>();
            out[d] = sigmoid(a + 0.5 * a.tanh());
        }
    }
    FactorDataset::from_parts(spec, group_spec, observations, factor_values, render_seed)
}

#[inline]
pub(crate) fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

/// Observation pairs that share all factor values of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedBatch {
    pub x: Array2<f64>,
    pub x_prime: Array2<f64>,
    pub shared_group: Vec<usize>,
    pub x_index: Vec<usize>,
    pub x_prime_index: Vec<usize>,
}

impl PairedBatch {
    pub fn len(&self) -> usize {
        self.shared_group.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shared_group.is_empty()
    }
}

/// Pre-indexed sampler: for every group, observations bucketed by their
/// values on that group's factors.
#[derive(Debug, Clone)]
pub struct PairSampler {
    buckets: Vec<Vec<Vec<usize>>>,
    bucket_of: Vec<Vec<usize>>,
    allow_self: bool,
    len: usize,
}

impl PairSampler {
    pub fn new(ds: &FactorDataset, allow_self: bool) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::param("cannot sample pairs from an empty dataset"));
        }
        let mut buckets = Vec::new();
        let mut bucket_of = Vec::new();
        for g in 0..ds.group_spec().len() {
            let mut ids: HashMap<Vec<usize>, usize> = HashMap::new();
            let mut lists: Vec<Vec<usize>> = Vec::new();
            let mut of = Vec::with_capacity(ds.len());
            for i in 0..ds.len() {
                let id = *ids.entry(ds.group_key(i, g)).or_insert_with(|| {
                    lists.push(Vec::new());
                    lists.len() - 1
                });
                lists[id].push(i);
                of.push(id);
            }
            buckets.push(lists);
            bucket_of.push(of);
        }
        Ok(PairSampler {
            buckets,
            bucket_of,
            allow_self,
            len: ds.len(),
        })
    }

    pub fn num_groups(&self) -> usize {
        self.buckets.len()
    }

    /// Indices of all observations matching `i` on `group` (including `i`).
    pub fn matches(&self, i: usize, group: usize) -> &[usize] {
        &self.buckets[group][self.bucket_of[group][i]]
    }

    /// Draws `(x, x', g)` index triples.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        batch: usize,
    ) -> Vec<(usize, usize, usize)> {
        (0..batch)
            .map(|_| {
                let g = rng.random_range(0..self.num_groups());
                let i = rng.random_range(0..self.len);
                let m = self.matches(i, g);
                let j = if self.allow_self || m.len() == 1 {
                    m[rng.random_range(0..m.len())]
                } else {
                    // uniform over m \ {i}
                    let pick = m[rng.random_range(0..m.len() - 1)];
                    if pick == i {
                        m[m.len() - 1]
                    } else {
                        pick
                    }
                };
                (i, j, g)
            })
            .collect()
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        ds: &FactorDataset,
        rng: &mut R,
        batch: usize,
    ) -> PairedBatch {
        let triples = self.sample_indices(rng, batch);
        let x_index: Vec<usize> = triples.iter().map(|t| t.0).collect();
        let x_prime_index: Vec<usize> = triples.iter().map(|t| t.1).collect();
        PairedBatch {
            x: ds.batch(&x_index),
            x_prime: ds.batch(&x_prime_index),
            shared_group: triples.iter().map(|t| t.2).collect(),
            x_index,
            x_prime_index,
        }
    }
}

/// One-shot pair sampling with `x' = x` allowed.
pub fn sample_pair(ds: &FactorDataset, rng_seed: u64, batch: usize) -> Result<PairedBatch> {
    let sampler = PairSampler::new(ds, true)?;
    let mut rng = stream(rng_seed, Stream::Pairs);
    Ok(sampler.sample(ds, &mut rng, batch))
}

/// Maps factor `f` to `1` where its value is `>= thresholds[f]`, else `0`.
/// Observations are unchanged; every cardinality becomes 2.
pub fn binarize_factors(ds: &FactorDataset, thresholds: &[usize]) -> Result<FactorDataset> {
    let cards = ds.spec().cardinalities();
    if thresholds.len() != cards.len() {
        return Err(Error::param(format!(
            "{} thresholds for {} factors",
            thresholds.len(),
            cards.len()
        )));
    }
    for (f, (&t, &c)) in thresholds.iter().zip(cards).enumerate() {
        if t == 0 || t >= c {
            return Err(Error::param(format!(
                "threshold {t} for factor {f} (cardinality {c}) leaves one side empty"
            )));
        }
    }
    let mut fv = ds.factor_values.clone();
    for mut row in fv.rows_mut() {
        for (v, &t) in row.iter_mut().zip(thresholds) {
            *v = usize::from(*v >= t);
        }
    }
    let spec = FactorSpec::new(ds.spec.factor_names.clone(), vec![2; cards.len()])?;
    FactorDataset::from_parts(
        spec,
        ds.group_spec.clone(),
        ds.observations.clone(),
        fv,
        ds.render_seed,
    )
}

/// Relative weight `exp(-(s - x)^2 / (2 sigma^2))` of a binary `(s, x)` cell.
pub fn unfair_weight(s: usize, x: usize, sigma: f64) -> f64 {
    let d = s as f64 - x as f64;
    if sigma.is_infinite() {
        1.0
    } else {
        (-(d * d) / (2.0 * sigma * sigma)).exp()
    }
}

/// Biased sampling of observation indices. The pair of binary factors
/// `(s_idx, x_idx)` is drawn from the joint `p(s, x) ∝ exp(-(s-x)^2/(2σ^2))`,
/// then an observation is drawn uniformly among those with that `(s, x)`.
pub fn sample_unfair(
    ds: &FactorDataset,
    s_idx: usize,
    x_idx: usize,
    sigma: f64,
    rng_seed: u64,
    count: usize,
) -> Result<Vec<usize>> {
    let nf = ds.spec().num_factors();
    if s_idx >= nf || x_idx >= nf || s_idx == x_idx {
        return Err(Error::param(format!(
            "designated factors ({s_idx}, {x_idx}) must be distinct and < {nf}"
        )));
    }
    if !(sigma > 0.0) {
        return Err(Error::param(format!("sigma must be positive, got {sigma}")));
    }
    let cards = ds.spec().cardinalities();
    if cards[s_idx] != 2 || cards[x_idx] != 2 {
        return Err(Error::param(
            "designated factors must be binarized (cardinality 2)",
        ));
    }
    let mut cells: [Vec<usize>; 4] = Default::default();
    for i in 0..ds.len() {
        let (s, x) = (ds.factor_values[[i, s_idx]], ds.factor_values[[i, x_idx]]);
        cells[2 * s + x].push(i);
    }
    let weights: Vec<f64> = (0..4)
        .map(|c| {
            if cells[c].is_empty() {
                0.0
            } else {
                unfair_weight(c / 2, c % 2, sigma)
            }
        })
        .collect();
    let cell_dist = WeightedIndex::new(&weights)
        .map_err(|e| Error::param(format!("no sampleable (s, x) cell: {e}")))?;
    let mut rng = stream(rng_seed, Stream::Unfair);
    Ok((0..count)
        .map(|_| {
            let cell = &cells[cell_dist.sample(&mut rng)];
            cell[rng.random_range(0..cell.len())]
        })
        .collect())
}

/// Random train/validation/test split of `0..n` by fractions.
pub fn split_indices(
    n: usize,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>)> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|&f| f < 0.0) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!("split fractions {fractions:?} must sum to 1")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(idx.as_mut_slice(), &mut stream(seed, Stream::Split));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = (fractions[1] * n as f64).round() as usize;
    let test = idx.split_off((n_train + n_val).min(n));
    let val = idx.split_off(n_train.min(idx.len()));
    Ok((idx, val, test))
}
