//! Feature filters over the train and test splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotate::{Annotations, FeatureSpec};
use crate::corpus::{Dataset, Split};
use crate::error::{Error, Result};

/// Instances carrying one feature value: train hits, test hits and the
/// test complement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredSplit {
    pub feature: FeatureSpec,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub test_complement_ids: BTreeSet<String>,
    /// One entry per label of the dataset, zeros included.
    pub train_label_counts: BTreeMap<String, usize>,
    pub test_label_counts: BTreeMap<String, usize>,
}

impl FilteredSplit {
    pub fn train_support(&self) -> usize {
        self.train_ids.len()
    }

    pub fn test_support(&self) -> usize {
        self.test_ids.len()
    }
}

fn tally<'a>(
    dataset: &Dataset,
    split: Split,
    ids: impl Iterator<Item = &'a String>,
) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> =
        dataset.label_set().iter().map(|l| (l.clone(), 0)).collect();
    for id in ids {
        if let Some(inst) = dataset.get(split, id) {
            *counts.entry(inst.label.clone()).or_default() += 1;
        }
    }
    counts
}

/// Partitions both splits by presence of `feature`. Instances without an
/// annotation set are treated as not carrying the feature.
pub fn apply_filter(
    dataset: &Dataset,
    annotations: &Annotations,
    feature: &FeatureSpec,
) -> FilteredSplit {
    let carries = |split: Split, id: &str| {
        annotations
            .get(split, id)
            .is_some_and(|a| a.contains(feature))
    };
    let train_ids: BTreeSet<String> = dataset
        .train()
        .iter()
        .filter(|i| carries(Split::Train, &i.id))
        .map(|i| i.id.clone())
        .collect();
    let (test_hits, test_rest): (Vec<_>, Vec<_>) = dataset
        .test()
        .iter()
        .partition(|i| carries(Split::Test, &i.id));
    let test_ids: BTreeSet<String> = test_hits.into_iter().map(|i| i.id.clone()).collect();
    let test_complement_ids: BTreeSet<String> =
        test_rest.into_iter().map(|i| i.id.clone()).collect();
    FilteredSplit {
        feature: feature.clone(),
        train_label_counts: tally(dataset, Split::Train, train_ids.iter()),
        test_label_counts: tally(dataset, Split::Test, test_ids.iter()),
        train_ids,
        test_ids,
        test_complement_ids,
    }
}

/// Filters every feature in parallel; output order follows `features`.
pub fn apply_filters(
    dataset: &Dataset,
    annotations: &Annotations,
    features: &[FeatureSpec],
) -> Vec<FilteredSplit> {
    features
        .par_iter()
        .map(|f| apply_filter(dataset, annotations, f))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportMode {
    /// At least `min_support` hits in the train split and in the test split.
    #[default]
    Both,
    /// At least `min_support` hits in one split and at least one in the other.
    Any,
}

impl SupportMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SupportMode::Both => "both",
            SupportMode::Any => "any",
        }
    }

    pub fn qualifies(self, train: usize, test: usize, min_support: usize) -> bool {
        match self {
            SupportMode::Both => train >= min_support && test >= min_support,
            SupportMode::Any => {
                train >= 1 && test >= 1 && (train >= min_support || test >= min_support)
            }
        }
    }
}

impl fmt::Display for SupportMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SupportMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(SupportMode::Both),
            "any" => Ok(SupportMode::Any),
            other => Err(Error::InvalidDataset(format!(
                "support mode must be both or any, got {other:?}"
            ))),
        }
    }
}

/// Keeps the splits qualifying as cue candidates.
pub fn qualify_cues(
    splits: Vec<FilteredSplit>,
    min_support: usize,
    mode: SupportMode,
) -> Vec<FilteredSplit> {
    let min_support = min_support.max(1);
    splits
        .into_iter()
        .filter(|s| mode.qualifies(s.train_support(), s.test_support(), min_support))
        .collect()
}
