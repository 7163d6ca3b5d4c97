//! Two-step fair classification: encode with a trained model, classify a
//! binary target from the non-sensitive mean representation, then score
//! accuracy, demographic parity per sensitive attribute and FairGap.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{binarize_factors, sample_unfair, split_indices, FactorDataset};
use crate::error::{Error, Result};
use crate::metrics::{demographic_parity, fair_gap};
use crate::model::{encode_means, Activation, ModelParams, Mlp};
use crate::rng::{stream, Stream};
use crate::training::Adam;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairTask {
    /// Factor predicted by the classifier.
    pub target: usize,
    /// Factors whose demographic parity is measured.
    pub sensitive: Vec<usize>,
    /// Latent group holding the sensitive factors; never fed to the classifier.
    pub sensitive_group: usize,
    /// Latent group whose posterior means are classified.
    pub predictive_group: usize,
    /// Per-factor binarization thresholds (`v >= t` maps to 1).
    pub thresholds: Vec<usize>,
    /// The two factors correlated by the biased training sampler.
    pub correlated: (usize, usize),
    pub sigma: f64,
    /// Train, validation, test fractions.
    pub split: [f64; 3],
}

impl FairTask {
    /// Predict `pos_x` on the default toy grid with `shape` and `scale`
    /// sensitive, and `shape` correlated with `pos_x` in training.
    pub fn default_toy() -> Self {
        FairTask {
            target: 3,
            sensitive: vec![0, 1],
            sensitive_group: 0,
            predictive_group: 1,
            thresholds: vec![1, 1, 2, 2, 2],
            correlated: (0, 3),
            sigma: 0.2,
            split: [0.8, 0.05, 0.15],
        }
    }

    pub fn validate(&self, ds: &FactorDataset) -> Result<()> {
        let groups = ds.group_spec();
        let nf = ds.spec().num_factors();
        if self.sensitive.contains(&self.target) {
            return Err(Error::param("target factor cannot be sensitive"));
        }
        if self.target >= nf || self.sensitive.iter().any(|&s| s >= nf) {
            return Err(Error::param("fair task factor index out of range"));
        }
        if self.sensitive_group >= groups.len()
            || self.predictive_group >= groups.len()
            || self.sensitive_group == self.predictive_group
        {
            return Err(Error::param("sensitive and predictive groups must be distinct valid groups"));
        }
        let sens = &groups.groups()[self.sensitive_group].factors;
        if let Some(s) = self.sensitive.iter().find(|s| !sens.contains(s)) {
            return Err(Error::param(format!("sensitive factor {s} is not in the sensitive group")));
        }
        if self.thresholds.len() != nf {
            return Err(Error::Dimension {
                context: "binarization thresholds",
                expected: nf,
                actual: self.thresholds.len(),
            });
        }
        Ok(())
    }
}

/// One split: observations with their original factors, plus the
/// binarized factor values used as labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FairSplit {
    pub data: FactorDataset,
    pub binary: Array2<usize>,
}

impl FairSplit {
    fn new(data: FactorDataset, thresholds: &[usize]) -> Result<Self> {
        let binary = binarize_factors(&data, thresholds)?.factor_values().clone();
        Ok(FairSplit { data, binary })
    }

    pub fn labels(&self, factor: usize) -> Vec<bool> {
        self.binary.column(factor).iter().map(|&v| v == 1).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FairData {
    /// Biased resample of the training split.
    pub train: FairSplit,
    pub validation: FairSplit,
    pub test: FairSplit,
}

/// Splits `ds`, then resamples the training split with the biased sampler
/// (as many draws as the split has rows). Validation and test stay uniform.
pub fn prepare_fair_data(ds: &FactorDataset, task: &FairTask, seed: u64) -> Result<FairData> {
    task.validate(ds)?;
    let (tr, va, te) = split_indices(ds.len(), task.split, seed)?;
    if tr.is_empty() || va.is_empty() || te.is_empty() {
        return Err(Error::param("every split must be non-empty"));
    }
    let train_all = ds.subset(&tr);
    let binary = binarize_factors(&train_all, &task.thresholds)?;
    let (s, x) = task.correlated;
    let picks = sample_unfair(&binary, s, x, task.sigma, seed, tr.len())?;
    Ok(FairData {
        train: FairSplit::new(train_all.subset(&picks), &task.thresholds)?,
        validation: FairSplit::new(ds.subset(&va), &task.thresholds)?,
        test: FairSplit::new(ds.subset(&te), &task.thresholds)?,
    })
}

/// Posterior means restricted to one latent group's slice.
pub fn extract_representation(params: &ModelParams, observations: &Array2<f64>, group: usize) -> Result<Array2<f64>> {
    if group >= params.partition.num_groups() {
        return Err(Error::param(format!(
            "group {group} out of range (< {})",
            params.partition.num_groups()
        )));
    }
    let z = encode_means(params, observations)?;
    Ok(z.slice(ndarray::s![.., params.partition.range(group)]).to_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub iterations: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub threshold: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            hidden: vec![64, 64],
            iterations: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 0,
            threshold: 0.5,
        }
    }
}

/// MLP with a single logit output over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub mlp: Mlp,
    pub feature_mean: Array1<f64>,
    pub feature_scale: Array1<f64>,
    pub threshold: f64,
}

impl Classifier {
    fn standardize(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.feature_mean) / &self.feature_scale
    }

    pub fn predict_proba(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.feature_mean.len() {
            return Err(Error::Dimension {
                context: "classifier features",
                expected: self.feature_mean.len(),
                actual: x.ncols(),
            });
        }
        let logits = self.mlp.predict(&self.standardize(x));
        Ok(logits.column(0).iter().map(|&l| crate::data::sigmoid(l)).collect())
    }

    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<bool>> {
        Ok(self.predict_proba(x)?.into_iter().map(|p| p >= self.threshold).collect())
    }
}

/// Trains a binary classifier with cross-entropy and Adam on minibatches.
pub fn train_fair_classifier(reps: &Array2<f64>, labels: &[bool], cfg: &ClassifierConfig) -> Result<Classifier> {
    if reps.nrows() != labels.len() {
        return Err(Error::Dimension {
            context: "classifier rows vs labels",
            expected: labels.len(),
            actual: reps.nrows(),
        });
    }
    if labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::param("classifier labels contain a single class"));
    }
    if cfg.batch_size == 0 || cfg.hidden.contains(&0) {
        return Err(Error::param("classifier batch size and hidden widths must be positive"));
    }
    let n = reps.nrows();
    let mean = reps.mean_axis(Axis(0)).expect("non-empty");
    let scale = reps.std_axis(Axis(0), 0.0).mapv(|s| if s > 1e-12 { s } else { 1.0 });
    let mut rng = stream(cfg.seed, Stream::Classifier);
    let mut sizes = vec![reps.ncols()];
    sizes.extend(&cfg.hidden);
    sizes.push(1);
    let mut clf = Classifier {
        mlp: Mlp::new(&sizes, Activation::Relu, &mut rng),
        feature_mean: mean,
        feature_scale: scale,
        threshold: cfg.threshold,
    };
    let x = clf.standardize(reps);
    let y: Vec<f64> = labels.iter().map(|&l| l as u8 as f64).collect();
    let shapes: Vec<usize> = clf.mlp.layers.iter().flat_map(|l| [l.w.len(), l.b.len()]).collect();
    let mut adam = Adam::new(&shapes, cfg.learning_rate, 0.9, 0.999, 1e-8);
    let b = cfg.batch_size.min(n);
    for _ in 0..cfg.iterations {
        let idx: Vec<usize> = (0..b).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect();
        let xb = x.select(Axis(0), &idx);
        let (out, cache) = clf.mlp.forward(&xb);
        let grad_out = Array2::from_shape_fn((b, 1), |(i, _)| (crate::data::sigmoid(out[[i, 0]]) - y[idx[i]]) / b as f64);
        let (grads, _) = clf.mlp.backward(&cache, &grad_out);
        let params: Vec<&mut [f64]> = clf
            .mlp
            .layers
            .iter_mut()
            .flat_map(|l| [l.w.as_slice_mut().expect("contiguous"), l.b.as_slice_mut().expect("contiguous")])
            .collect();
        let gs: Vec<&[f64]> = grads
            .iter()
            .flat_map(|l| [l.w.as_slice().expect("contiguous"), l.b.as_slice().expect("contiguous")])
            .collect();
        adam.update(params, gs);
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    /// DP per sensitive attribute; `None` when a subgroup is empty.
    pub dp: Vec<Option<f64>>,
    pub fair_gap: f64,
}

/// Scores predictions against labels and each sensitive attribute.
pub fn score_predictions(predictions: &[bool], labels: &[bool], sensitive: &[Vec<bool>]) -> Result<MetricReport> {
    if predictions.len() != labels.len() || predictions.is_empty() {
        return Err(Error::Dimension {
            context: "predictions vs labels",
            expected: labels.len(),
            actual: predictions.len(),
        });
    }
    let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
    let accuracy = correct as f64 / labels.len() as f64;
    let mut dp = Vec::with_capacity(sensitive.len());
    for (k, s) in sensitive.iter().enumerate() {
        match demographic_parity(predictions, s) {
            Ok(v) => dp.push(Some(v)),
            Err(Error::Parameter(msg)) => {
                log::warn!("sensitive attribute {k}: {msg}; excluded from FairGap");
                dp.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let present: Vec<f64> = dp.iter().flatten().copied().collect();
    Ok(MetricReport {
        accuracy,
        fair_gap: fair_gap(accuracy, &present)?,
        dp,
    })
}

pub fn evaluate_fairness(
    classifier: &Classifier,
    reps: &Array2<f64>,
    labels: &[bool],
    sensitive: &[Vec<bool>],
) -> Result<MetricReport> {
    score_predictions(&classifier.predict(reps)?, labels, sensitive)
}

/// Index of the largest FairGap; ties go to the earliest candidate.
pub fn select_by_fair_gap(fair_gaps: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in fair_gaps.iter().enumerate() {
        if best.is_none_or(|b| v > fair_gaps[b]) {
            best = Some(i);
        }
    }
    best
}

/// Validation and test scores of one classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairEvaluation {
    pub validation: MetricReport,
    pub test: MetricReport,
}

fn evaluate_features(
    train: Array2<f64>,
    val: Array2<f64>,
    test: Array2<f64>,
    data: &FairData,
    task: &FairTask,
    cfg: &ClassifierConfig,
) -> Result<FairEvaluation> {
    let clf = train_fair_classifier(&train, &data.train.labels(task.target), cfg)?;
    let score = |x: &Array2<f64>, split: &FairSplit| {
        let sens: Vec<Vec<bool>> = task.sensitive.iter().map(|&s| split.labels(s)).collect();
        evaluate_fairness(&clf, x, &split.labels(task.target), &sens)
    };
    Ok(FairEvaluation {
        validation: score(&val, &data.validation)?,
        test: score(&test, &data.test)?,
    })
}

/// Classifies the target from a trained model's predictive-group means.
pub fn evaluate_representation(
    params: &ModelParams,
    data: &FairData,
    task: &FairTask,
    cfg: &ClassifierConfig,
) -> Result<FairEvaluation> {
    let rep = |s: &FairSplit| extract_representation(params, s.data.observations(), task.predictive_group);
    evaluate_features(rep(&data.train)?, rep(&data.validation)?, rep(&data.test)?, data, task, cfg)
}

/// Classifies the target directly from raw observations.
pub fn evaluate_raw_baseline(data: &FairData, task: &FairTask, cfg: &ClassifierConfig) -> Result<FairEvaluation> {
    let raw = |s: &FairSplit| s.data.observations().clone();
    evaluate_features(raw(&data.train), raw(&data.validation), raw(&data.test), data, task, cfg)
}
