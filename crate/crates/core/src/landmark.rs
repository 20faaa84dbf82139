//! Label scoring against views and the recognizable / distinctive /
//! nondistinctive / irrelevant landmark partition of a navigation step.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LandmarkError {
    #[error("feature dimension {found} does not match detector dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("unknown label `{0}`")]
    UnknownLabel(String),
}

/// Default indoor label set, ordered from most to least frequent under the
/// world generator's Zipf-like sampling.
pub const DEFAULT_LABELS: [&str; 24] = [
    "room",
    "wall",
    "door",
    "floor",
    "window",
    "table",
    "chair",
    "hallway",
    "stairs",
    "kitchen",
    "sofa",
    "bed",
    "lamp",
    "rug",
    "painting",
    "plant",
    "mirror",
    "sink",
    "shelf",
    "closet",
    "fireplace",
    "counter",
    "piano",
    "bathtub",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    labels: Vec<String>,
}

impl Default for LabelVocabulary {
    fn default() -> Self {
        Self {
            labels: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl LabelVocabulary {
    pub fn new(labels: Vec<String>) -> Result<Self, LandmarkError> {
        if labels.len() < 2 {
            return Err(LandmarkError::InvalidParameter(
                "label vocabulary needs at least two labels".into(),
            ));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(LandmarkError::InvalidParameter("duplicate labels".into()));
        }
        Ok(Self { labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id_of(&self, label: &str) -> Result<usize, LandmarkError> {
        self.labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| LandmarkError::UnknownLabel(label.to_string()))
    }
}

/// Scores a view feature against a label: cosine similarity in `[−1, 1]`.
pub trait Detector {
    fn feature_dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    fn score(&self, feature: &[f64], label: usize) -> Result<f64, LandmarkError>;
}

/// Bag-of-objects embedder: label `c` is represented by the unit vector `e_c`,
/// so its cosine with a feature is `feature[c] / ‖feature‖` (0 for a zero
/// feature).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyntheticDetector {
    pub labels: usize,
}

impl Detector for SyntheticDetector {
    fn feature_dim(&self) -> usize {
        self.labels
    }

    fn vocab_size(&self) -> usize {
        self.labels
    }

    fn score(&self, feature: &[f64], label: usize) -> Result<f64, LandmarkError> {
        if feature.len() != self.labels {
            return Err(LandmarkError::Dimension {
                expected: self.labels,
                found: feature.len(),
            });
        }
        let norm = feature.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        Ok((feature[label] / norm).clamp(-1.0, 1.0))
    }
}

pub fn similarity_scores(
    detector: &dyn Detector,
    feature: &[f64],
) -> Result<Vec<f64>, LandmarkError> {
    if feature.len() != detector.feature_dim() {
        return Err(LandmarkError::Dimension {
            expected: detector.feature_dim(),
            found: feature.len(),
        });
    }
    (0..detector.vocab_size())
        .map(|c| detector.score(feature, c))
        .collect()
}

/// Temperature softmax `exp(s_c/τ) / Σ exp(s_i/τ)`.
pub fn label_probabilities(scores: &[f64], temperature: f64) -> Result<Vec<f64>, LandmarkError> {
    if !temperature.is_finite() || temperature <= 0.0 {
        return Err(LandmarkError::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores
        .iter()
        .map(|s| ((s - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / z).collect())
}

/// Label ids sorted by descending probability, ties by vocabulary order.
pub fn rank_labels(probs: &[f64]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    ids.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    ids
}

pub fn recognizable_landmarks(
    detector: &dyn Detector,
    feature: &[f64],
    k: usize,
    temperature: f64,
) -> Result<Vec<usize>, LandmarkError> {
    if k == 0 {
        return Err(LandmarkError::InvalidParameter("k must be >= 1".into()));
    }
    let probs = label_probabilities(&similarity_scores(detector, feature)?, temperature)?;
    let mut ranked = rank_labels(&probs);
    ranked.truncate(k);
    Ok(ranked)
}

/// Landmark classes of one step. Each set is ordered by the probability
/// used for selection: target probability for distinctive and nondistinctive
/// labels, the highest probability among other candidates for irrelevant
/// ones; ties by vocabulary order.
#[derive(Clone, Debug, PartialEq)]
pub struct LandmarkPartition {
    pub target_recognizable: Vec<usize>,
    pub others_recognizable: Vec<Vec<usize>>,
    pub distinctive: Vec<usize>,
    pub nondistinctive: Vec<usize>,
    pub irrelevant: Vec<usize>,
    pub target_probs: Vec<f64>,
}

pub fn classify_landmarks(
    target: &[f64],
    others: &[&[f64]],
    detector: &dyn Detector,
    k: usize,
    temperature: f64,
) -> Result<LandmarkPartition, LandmarkError> {
    if k == 0 {
        return Err(LandmarkError::InvalidParameter("k must be >= 1".into()));
    }
    let target_probs = label_probabilities(&similarity_scores(detector, target)?, temperature)?;
    let mut target_rec = rank_labels(&target_probs);
    target_rec.truncate(k);

    let mut other_best = vec![f64::NEG_INFINITY; detector.vocab_size()];
    let mut others_rec = Vec::with_capacity(others.len());
    for f in others {
        let probs = label_probabilities(&similarity_scores(detector, f)?, temperature)?;
        let mut rec = rank_labels(&probs);
        rec.truncate(k);
        for &c in &rec {
            other_best[c] = other_best[c].max(probs[c]);
        }
        others_rec.push(rec);
    }
    let in_others = |c: usize| other_best[c] > f64::NEG_INFINITY;
    let in_target: BTreeSet<usize> = target_rec.iter().copied().collect();

    let distinctive = target_rec
        .iter()
        .copied()
        .filter(|&c| !in_others(c))
        .collect();
    let nondistinctive = target_rec
        .iter()
        .copied()
        .filter(|&c| in_others(c))
        .collect();
    let mut irrelevant: Vec<usize> = (0..detector.vocab_size())
        .filter(|&c| in_others(c) && !in_target.contains(&c))
        .collect();
    irrelevant.sort_by(|&a, &b| other_best[b].total_cmp(&other_best[a]).then(a.cmp(&b)));

    Ok(LandmarkPartition {
        target_recognizable: target_rec,
        others_recognizable: others_rec,
        distinctive,
        nondistinctive,
        irrelevant,
        target_probs,
    })
}

/// `label,score` CSV of a score vector.
pub fn score_table_csv(vocab: &LabelVocabulary, scores: &[f64]) -> String {
    let mut out = String::from("label,score\n");
    for (label, s) in vocab.labels().iter().zip(scores) {
        writeln!(out, "{label},{s}").expect("string write");
    }
    out
}
