//! Multi-class F-beta scoring over confusion matrices and a seeded k-fold
//! cross-validation harness that splits on subjects.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::ingest::Dataset;
use crate::mixture::{MixtureModel, Query};

/// K x K count matrix, rows indexed by true class, columns by predicted
/// class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Array2<u64>,
    labels: Vec<String>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let k = labels.len();
        if k < 2 {
            return Err(Error::InvalidInput(format!(
                "confusion matrix needs at least 2 classes, got {k}"
            )));
        }
        Ok(Self {
            counts: Array2::zeros((k, k)),
            labels,
        })
    }

    pub fn record(&mut self, true_class: usize, predicted_class: usize) {
        self.counts[(true_class, predicted_class)] += 1;
    }

    pub fn counts(&self) -> &Array2<u64> {
        &self.counts
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.sum()
    }

    fn true_positives(&self, class: usize) -> u64 {
        self.counts[(class, class)]
    }

    fn support(&self, class: usize) -> u64 {
        self.counts.row(class).sum()
    }

    fn predicted(&self, class: usize) -> u64 {
        self.counts.column(class).sum()
    }
}

/// How per-class scores combine into one number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Averaging {
    /// Unweighted mean over classes.
    Macro,
    /// Mean weighted by each class's true-instance count.
    Weighted,
}

/// Multi-class F-beta from a confusion matrix. Classes with an undefined
/// precision or recall (zero denominator) score 0 rather than being dropped,
/// so degenerate constant predictors are penalized.
pub fn score_fbeta(cm: &ConfusionMatrix, beta: f64, averaging: Averaging) -> Result<f64> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::InvalidInput(format!("beta must be > 0, got {beta}")));
    }
    let beta2 = beta * beta;
    let k = cm.num_classes();
    let mut per_class = vec![0.0; k];
    for class in 0..k {
        let tp = cm.true_positives(class) as f64;
        let predicted = cm.predicted(class) as f64;
        let support = cm.support(class) as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let denom = beta2 * precision + recall;
        per_class[class] = if denom > 0.0 {
            (1.0 + beta2) * precision * recall / denom
        } else {
            0.0
        };
    }
    Ok(match averaging {
        Averaging::Macro => per_class.iter().sum::<f64>() / k as f64,
        Averaging::Weighted => {
            let total = cm.total() as f64;
            if total == 0.0 {
                return Ok(0.0);
            }
            (0..k)
                .map(|class| cm.support(class) as f64 / total * per_class[class])
                .sum()
        }
    })
}

/// A scoring row skipped during cross validation, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipNote {
    pub fold: usize,
    pub subject: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub per_fold_scores: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over the fold scores.
    pub std: f64,
    pub fold_assignment: BTreeMap<String, usize>,
    pub skipped: Vec<SkipNote>,
    /// Predictions actually scored, summed over folds.
    pub scored_steps: u64,
}

/// Subject-level k-fold cross validation: shuffle subjects with a seeded
/// generator, hold out each fold in turn, rebuild the mixture on the rest,
/// decode every held-out subject with capability 3, and score the pooled
/// per-time-step confusion with F1.
///
/// Hidden labels a fold's training split never saw cannot be scored; those
/// steps are skipped and recorded. Subjects whose observed trails carry a
/// label unknown to the training split are skipped whole, likewise recorded.
pub fn k_fold_cv(
    dataset: &Dataset,
    config: &PipelineConfig,
    hidden_marker: &str,
    k: usize,
    seed: u64,
    averaging: Averaging,
    smoothing: f64,
) -> Result<CvReport> {
    if k < 2 {
        return Err(Error::InvalidInput(format!("k must be >= 2, got {k}")));
    }
    let mut subjects: Vec<&str> = dataset.subject_ids();
    if subjects.len() < k {
        return Err(Error::InvalidInput(format!(
            "{} subjects cannot fill {k} folds",
            subjects.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    subjects.shuffle(&mut rng);
    let fold_assignment: BTreeMap<String, usize> = subjects
        .iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();

    let mut per_fold_scores = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    let mut scored_steps = 0u64;
    for fold in 0..k {
        let train_ids: Vec<&str> = subjects
            .iter()
            .copied()
            .filter(|s| fold_assignment[*s] != fold)
            .collect();
        let mut test_ids: Vec<&str> = subjects
            .iter()
            .copied()
            .filter(|s| fold_assignment[*s] == fold)
            .collect();
        test_ids.sort();

        let train = dataset.subset(&train_ids)?;
        let model = MixtureModel::build(&train, config, hidden_marker, smoothing)?;
        let mut cm = ConfusionMatrix::new(model.hidden_alphabet().to_vec())?;

        for subject in test_ids {
            let mut observation = BTreeMap::new();
            let mut unknown = None;
            for marker in model.channels().keys() {
                let labels = dataset.decode_trail(subject, marker)?;
                match model.encode_labels(marker, &labels) {
                    Ok(states) => {
                        observation.insert(marker.clone(), states);
                    }
                    Err(err) => {
                        unknown = Some(err);
                        break;
                    }
                }
            }
            if let Some(err) = unknown {
                skipped.push(SkipNote {
                    fold,
                    subject: subject.to_string(),
                    detail: format!("subject skipped: {err}"),
                });
                continue;
            }
            let query = Query::new(hidden_marker, observation);
            let decoded = model.predict_state_sequence(&query)?;
            let truth = dataset.decode_trail(subject, hidden_marker)?;
            for (t, label) in truth.iter().enumerate() {
                match model.hidden_alphabet().iter().position(|l| l == label) {
                    Some(true_class) => {
                        cm.record(true_class, decoded.path[t]);
                        scored_steps += 1;
                    }
                    None => skipped.push(SkipNote {
                        fold,
                        subject: subject.to_string(),
                        detail: format!(
                            "step {t}: hidden label `{label}` absent from training split"
                        ),
                    }),
                }
            }
        }
        per_fold_scores.push(score_fbeta(&cm, 1.0, averaging)?);
    }

    let mean = per_fold_scores.iter().sum::<f64>() / k as f64;
    let variance = per_fold_scores
        .iter()
        .map(|s| (s - mean).powi(2))
        .sum::<f64>()
        / k as f64;
    Ok(CvReport {
        per_fold_scores,
        mean,
        std: variance.sqrt(),
        fold_assignment,
        skipped,
        scored_steps,
    })
}
