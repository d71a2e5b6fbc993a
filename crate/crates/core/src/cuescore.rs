//! Label-distribution skew, train/test agreement and cueness.
//!
//! - `mse` is the mean squared deviation of the label proportions from the
//!   uniform value `1/|L|`. It is 0 for a uniform distribution and
//!   `(|L|-1)/|L|^2` for a one-hot one.
//! - `jsd` is the Jensen-Shannon divergence with base-2 logarithms, so it
//!   lies in `[0, 1]`.
//! - `cueness = mse(train) / exp(jsd(train, test))` with the natural
//!   exponential.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::FeatureSpec;
use crate::error::{Error, Result};
use crate::filter::FilteredSplit;

/// Logarithm base used by [`jsd`]; recorded in run manifests.
pub const JSD_LOG_BASE: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub labels: Vec<String>,
    pub proportions: Vec<f64>,
    pub support: usize,
}

impl LabelDistribution {
    /// Index of the largest proportion; the first label wins ties.
    pub fn argmax(&self) -> Option<usize> {
        if self.support == 0 {
            return None;
        }
        let mut best = 0;
        for (i, p) in self.proportions.iter().enumerate() {
            if *p > self.proportions[best] {
                best = i;
            }
        }
        Some(best)
    }

    pub fn argmax_label(&self) -> Option<&str> {
        self.argmax().map(|i| self.labels[i].as_str())
    }
}

/// Normalizes label counts over `label_set`. Missing labels count 0.
pub fn distribution(
    counts: &BTreeMap<String, usize>,
    label_set: &[String],
) -> Result<LabelDistribution> {
    if let Some(unknown) = counts.keys().find(|k| !label_set.contains(k)) {
        return Err(Error::UnknownLabel(unknown.clone()));
    }
    let support: usize = counts.values().sum();
    let proportions = label_set
        .iter()
        .map(|l| {
            if support == 0 {
                0.0
            } else {
                counts.get(l).copied().unwrap_or(0) as f64 / support as f64
            }
        })
        .collect();
    Ok(LabelDistribution {
        labels: label_set.to_vec(),
        proportions,
        support,
    })
}

pub fn mse(dist: &LabelDistribution) -> Result<f64> {
    if dist.support == 0 {
        return Err(Error::ZeroSupport);
    }
    let n = dist.proportions.len() as f64;
    let mean = 1.0 / n;
    Ok(dist
        .proportions
        .iter()
        .map(|p| (p - mean).powi(2))
        .sum::<f64>()
        / n)
}

/// Kullback-Leibler divergence in bits, with 0 log 0 = 0.
fn kl_bits(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).log2())
        .sum()
}

pub fn jsd(p: &LabelDistribution, q: &LabelDistribution) -> Result<f64> {
    if p.labels != q.labels {
        return Err(Error::LabelMismatch);
    }
    if p.support == 0 || q.support == 0 {
        return Err(Error::ZeroSupport);
    }
    let m: Vec<f64> = p
        .proportions
        .iter()
        .zip(&q.proportions)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let value = 0.5 * kl_bits(&p.proportions, &m) + 0.5 * kl_bits(&q.proportions, &m);
    // Rounding can leave tiny excursions outside [0, 1].
    Ok(value.clamp(0.0, 1.0))
}

pub fn cueness(train: &LabelDistribution, test: &LabelDistribution) -> Result<f64> {
    Ok(mse(train)? / jsd(train, test)?.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueScore {
    pub feature: FeatureSpec,
    pub mse_train: f64,
    pub jsd: f64,
    pub cueness: f64,
    pub train_dist: LabelDistribution,
    pub test_dist: LabelDistribution,
    pub train_support: usize,
    pub test_support: usize,
}

/// Scores one filtered split. Both supports must be nonzero.
pub fn score_split(split: &FilteredSplit, label_set: &[String]) -> Result<CueScore> {
    let train_dist = distribution(&split.train_label_counts, label_set)?;
    let test_dist = distribution(&split.test_label_counts, label_set)?;
    let mse_train = mse(&train_dist)?;
    let divergence = jsd(&train_dist, &test_dist)?;
    Ok(CueScore {
        feature: split.feature.clone(),
        mse_train,
        jsd: divergence,
        cueness: mse_train / divergence.exp(),
        train_support: train_dist.support,
        test_support: test_dist.support,
        train_dist,
        test_dist,
    })
}

pub fn score_splits(splits: &[FilteredSplit], label_set: &[String]) -> Result<Vec<CueScore>> {
    splits
        .par_iter()
        .map(|s| score_split(s, label_set))
        .collect()
}

/// Descending cueness, ties by feature order, truncated to `top_k`.
pub fn rank_cues(mut scores: Vec<CueScore>, top_k: usize) -> Vec<CueScore> {
    scores.sort_by(|a, b| {
        b.cueness
            .total_cmp(&a.cueness)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    scores.truncate(top_k);
    scores
}

/// Sum of cueness over a ranked list.
pub fn dataset_cueness(ranked: &[CueScore]) -> f64 {
    ranked.iter().fold(0.0, |acc, c| acc + c.cueness)
}
