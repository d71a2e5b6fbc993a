//! Black-box model probing through prediction files.
//!
//! A model exploits a cue when its accuracy on the test instances carrying
//! the feature (`S_f`) exceeds its accuracy on the rest (`S_nf`), and when
//! its predictions on a label-balanced copy of `S_f` (the stress set) stay
//! at least as skewed as the filtered train distribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::FeatureSpec;
use crate::corpus::{Dataset, Instance, Split, TaskKind, FALSE_LABEL, TRUE_LABEL};
use crate::cuescore::{distribution, jsd, mse, LabelDistribution};
use crate::error::{Error, Result};
use crate::filter::FilteredSplit;

pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_DELTA_THRESHOLD: f64 = 0.02;

/// One line of a prediction file as written by the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RawPrediction {
    Pred(String),
    Scores(BTreeMap<String, f64>),
    Score(f64),
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    id: String,
    pred: Option<String>,
    scores: Option<BTreeMap<String, f64>>,
    score: Option<f64>,
}

/// Validated predictions for the test split of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub model_name: String,
    /// Entries as read from the file.
    pub entries: BTreeMap<String, RawPrediction>,
    /// Predicted label per id after score conversion.
    pub labels: BTreeMap<String, String>,
}

impl PredictionSet {
    pub fn predicted(&self, id: &str) -> Option<&str> {
        self.labels.get(id).map(String::as_str)
    }

    pub fn coverage(&self) -> BTreeSet<&str> {
        self.labels.keys().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Test ids without a prediction, in split order.
    pub fn missing(&self, dataset: &Dataset) -> Vec<String> {
        dataset
            .test()
            .iter()
            .filter(|i| !self.labels.contains_key(&i.id))
            .map(|i| i.id.clone())
            .collect()
    }

    pub fn require_complete(&self, dataset: &Dataset) -> Result<()> {
        let missing = self.missing(dataset);
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingPredictions(missing))
        }
    }

    /// Builds a set from already-decided labels, validating ids and labels.
    pub fn from_labels(
        model_name: &str,
        labels: BTreeMap<String, String>,
        dataset: &Dataset,
    ) -> Result<Self> {
        let entries = labels
            .iter()
            .map(|(id, l)| (id.clone(), RawPrediction::Pred(l.clone())))
            .collect();
        resolve(model_name, entries, dataset)
    }

    /// Label-form JSONL, one line per id in id order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for (id, label) in &self.labels {
            let line = serde_json::json!({"id": id, "pred": label});
            out.push_str(&line.to_string());
            out.push('\n');
        }
        out
    }
}

/// Parses prediction JSONL for `dataset`'s test split.
pub fn parse_predictions(
    text: &str,
    path: &Path,
    model_name: &str,
    dataset: &Dataset,
) -> Result<PredictionSet> {
    let mut entries = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |message: String| Error::MalformedLine {
            path: path.to_path_buf(),
            line: n + 1,
            message,
        };
        let raw: PredictionLine =
            serde_json::from_str(line).map_err(|e| malformed(e.to_string()))?;
        let value = match (raw.pred, raw.scores, raw.score) {
            (Some(p), None, None) => RawPrediction::Pred(p),
            (None, Some(s), None) => RawPrediction::Scores(s),
            (None, None, Some(s)) => RawPrediction::Score(s),
            _ => {
                return Err(malformed(
                    "expected exactly one of \"pred\", \"scores\" or \"score\"".into(),
                ))
            }
        };
        if matches!(value, RawPrediction::Score(_)) && dataset.task_kind() != TaskKind::Mcq {
            return Err(malformed("\"score\" entries require an MCQ dataset".into()));
        }
        if entries.insert(raw.id.clone(), value).is_some() {
            return Err(Error::DuplicatePrediction(raw.id));
        }
    }
    resolve(model_name, entries, dataset)
}

pub fn load_predictions(path: &Path, model_name: &str, dataset: &Dataset) -> Result<PredictionSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions(&text, path, model_name, dataset)
}

/// Label with the highest score; ties go to the earliest label in
/// `label_set` order.
fn argmax_label(scores: &BTreeMap<String, f64>, label_set: &[String]) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for label in label_set {
        if let Some(&s) = scores.get(label) {
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((label, s));
            }
        }
    }
    best.map(|(l, _)| l.clone())
}

fn resolve(
    model_name: &str,
    entries: BTreeMap<String, RawPrediction>,
    dataset: &Dataset,
) -> Result<PredictionSet> {
    let unknown: Vec<String> = entries
        .keys()
        .filter(|id| dataset.get(Split::Test, id).is_none())
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(Error::UnknownPredictionIds(unknown));
    }
    let label_set = dataset.label_set();
    let bad_label = |id: &str, label: &str| Error::PredictionLabel {
        id: id.to_string(),
        label: label.to_string(),
    };

    let mut labels = BTreeMap::new();
    for (id, entry) in &entries {
        match entry {
            RawPrediction::Pred(p) => {
                if !label_set.contains(p) {
                    return Err(bad_label(id, p));
                }
                labels.insert(id.clone(), p.clone());
            }
            RawPrediction::Scores(s) => {
                if let Some(k) = s.keys().find(|k| !label_set.contains(k)) {
                    return Err(bad_label(id, k));
                }
                if let Some(label) = argmax_label(s, label_set) {
                    labels.insert(id.clone(), label);
                }
            }
            RawPrediction::Score(_) => {}
        }
    }

    // Per-choice scores: the best-scoring choice of each question is true.
    if entries
        .values()
        .any(|e| matches!(e, RawPrediction::Score(_)))
    {
        let test = dataset.test();
        for group in dataset.question_groups(Split::Test) {
            let scores: Vec<Option<f64>> = group
                .members
                .iter()
                .map(|&i| match entries.get(&test[i].id) {
                    Some(RawPrediction::Score(s)) => Some(*s),
                    _ => None,
                })
                .collect();
            if scores.iter().all(Option::is_none) {
                continue;
            }
            if scores.iter().any(Option::is_none) {
                return Err(Error::IncompleteGroup(group.question_id));
            }
            // Members are ordered by choice index, so the first maximum wins ties.
            let mut best = 0;
            for (pos, s) in scores.iter().enumerate() {
                if s.unwrap() > scores[best].unwrap() {
                    best = pos;
                }
            }
            for (pos, &i) in group.members.iter().enumerate() {
                let label = if pos == best { TRUE_LABEL } else { FALSE_LABEL };
                labels.insert(test[i].id.clone(), label.to_string());
            }
        }
    }

    Ok(PredictionSet {
        model_name: model_name.to_string(),
        entries,
        labels,
    })
}

/// How ids without a prediction are handled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageMode {
    /// Missing predictions are an error.
    #[default]
    Strict,
    /// Missing predictions are dropped from the evaluation and reported.
    Skip,
}

impl FromStr for CoverageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strict" => Ok(CoverageMode::Strict),
            "skip" => Ok(CoverageMode::Skip),
            other => Err(Error::InvalidDataset(format!(
                "coverage mode must be strict or skip, got {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub value: f64,
    pub correct: usize,
    pub total: usize,
    pub skipped: Vec<String>,
}

/// Accuracy over `ids` of the test split.
pub fn evaluate<'a>(
    preds: &PredictionSet,
    ids: impl IntoIterator<Item = &'a String>,
    dataset: &Dataset,
    mode: CoverageMode,
) -> Result<Accuracy> {
    let mut correct = 0;
    let mut total = 0;
    let mut skipped = Vec::new();
    for id in ids {
        let Some(inst) = dataset.get(Split::Test, id) else {
            return Err(Error::UnknownPredictionIds(vec![id.clone()]));
        };
        match preds.predicted(id) {
            Some(p) => {
                total += 1;
                if p == inst.label {
                    correct += 1;
                }
            }
            None => skipped.push(id.clone()),
        }
    }
    if mode == CoverageMode::Strict && !skipped.is_empty() {
        return Err(Error::MissingPredictions(skipped));
    }
    if total == 0 {
        return Err(Error::EmptyEvaluationSet);
    }
    Ok(Accuracy {
        value: correct as f64 / total as f64,
        correct,
        total,
        skipped,
    })
}

/// Strict accuracy over `ids`.
pub fn accuracy<'a>(
    preds: &PredictionSet,
    ids: impl IntoIterator<Item = &'a String>,
    dataset: &Dataset,
) -> Result<f64> {
    evaluate(preds, ids, dataset, CoverageMode::Strict).map(|a| a.value)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyTest {
    pub acc_f: f64,
    pub acc_nf: f64,
    pub delta: f64,
    pub n_f: usize,
    pub n_nf: usize,
    pub skipped: Vec<String>,
}

pub fn accuracy_test(
    preds: &PredictionSet,
    split: &FilteredSplit,
    dataset: &Dataset,
    mode: CoverageMode,
) -> Result<AccuracyTest> {
    let f = evaluate(preds, &split.test_ids, dataset, mode)?;
    let nf = evaluate(preds, &split.test_complement_ids, dataset, mode)?;
    let mut skipped = f.skipped;
    skipped.extend(nf.skipped);
    Ok(AccuracyTest {
        acc_f: f.value,
        acc_nf: nf.value,
        delta: f.value - nf.value,
        n_f: f.total,
        n_nf: nf.total,
        skipped,
    })
}

/// `S_f` with minority-label instances replicated until every label present
/// has as many instances as the most frequent one.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressSet {
    pub feature: FeatureSpec,
    /// Originals in id order, followed by replicas in sampling order.
    pub instance_ids: Vec<String>,
    pub seed: u64,
    pub label_counts: BTreeMap<String, usize>,
}

impl StressSet {
    pub fn len(&self) -> usize {
        self.instance_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_ids.is_empty()
    }

    /// Occurrences of each id in the multiset.
    pub fn multiplicities(&self) -> BTreeMap<&str, usize> {
        let mut m = BTreeMap::new();
        for id in &self.instance_ids {
            *m.entry(id.as_str()).or_default() += 1;
        }
        m
    }

    /// One JSON record per distinct instance with its occurrence count.
    pub fn to_jsonl(&self, dataset: &Dataset) -> String {
        #[derive(Serialize)]
        struct Row<'a> {
            #[serde(flatten)]
            instance: &'a Instance,
            count: usize,
        }
        let mut out = String::new();
        for (id, count) in self.multiplicities() {
            if let Some(instance) = dataset.get(Split::Test, id) {
                let row = Row { instance, count };
                out.push_str(&serde_json::to_string(&row).expect("row serializes"));
                out.push('\n');
            }
        }
        out
    }
}

pub fn build_stress_set(split: &FilteredSplit, dataset: &Dataset, seed: u64) -> Result<StressSet> {
    if split.test_ids.is_empty() {
        return Err(Error::EmptyEvaluationSet);
    }
    let mut by_label: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    for id in &split.test_ids {
        if let Some(inst) = dataset.get(Split::Test, id) {
            by_label.entry(inst.label.as_str()).or_default().push(id);
        }
    }
    if by_label.len() < 2 {
        return Err(Error::DegenerateStressSet {
            feature: split.feature.to_string(),
        });
    }
    let target = by_label.values().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut instance_ids: Vec<String> = split.test_ids.iter().cloned().collect();
    for label in dataset.label_set() {
        let Some(pool) = by_label.get(label.as_str()) else {
            continue;
        };
        for _ in pool.len()..target {
            instance_ids.push(pool[rng.random_range(0..pool.len())].clone());
        }
    }
    let label_counts = by_label.keys().map(|l| (l.to_string(), target)).collect();
    Ok(StressSet {
        feature: split.feature.clone(),
        instance_ids,
        seed,
        label_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionTest {
    pub train_dist: LabelDistribution,
    pub stress_pred_dist: LabelDistribution,
    pub dist_jsd: f64,
}

/// Compares predicted labels on the stress set with the filtered train
/// distribution. Replicas count once per occurrence.
pub fn distribution_test(
    preds: &PredictionSet,
    stress: &StressSet,
    split: &FilteredSplit,
    dataset: &Dataset,
    mode: CoverageMode,
) -> Result<DistributionTest> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut missing = BTreeSet::new();
    for id in &stress.instance_ids {
        match preds.predicted(id) {
            Some(p) => *counts.entry(p.to_string()).or_default() += 1,
            None => {
                missing.insert(id.clone());
            }
        }
    }
    if mode == CoverageMode::Strict && !missing.is_empty() {
        return Err(Error::MissingPredictions(missing.into_iter().collect()));
    }
    let train_dist = distribution(&split.train_label_counts, dataset.label_set())?;
    let stress_pred_dist = distribution(&counts, dataset.label_set())?;
    let dist_jsd = jsd(&train_dist, &stress_pred_dist)?;
    Ok(DistributionTest {
        train_dist,
        stress_pred_dist,
        dist_jsd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Exploits,
    Resists,
    Inconclusive,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Exploits => "exploits",
            Verdict::Resists => "resists",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// - resists: `delta <= 0`, or the two distributions peak on different labels
/// - exploits: `delta > threshold` and the stress predictions are at least as
///   skewed (by mse) as the filtered train distribution
/// - inconclusive: anything else, e.g. a high delta with flat predictions
pub fn verdict(
    delta: f64,
    train_dist: &LabelDistribution,
    stress_pred_dist: &LabelDistribution,
    threshold: f64,
) -> Verdict {
    if delta <= 0.0 || train_dist.argmax_label() != stress_pred_dist.argmax_label() {
        return Verdict::Resists;
    }
    match (mse(train_dist), mse(stress_pred_dist)) {
        (Ok(train), Ok(stress)) if delta > threshold && stress >= train => Verdict::Exploits,
        _ => Verdict::Inconclusive,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub seed: u64,
    pub delta_threshold: f64,
    pub coverage: CoverageMode,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            seed: DEFAULT_SEED,
            delta_threshold: DEFAULT_DELTA_THRESHOLD,
            coverage: CoverageMode::Strict,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StressSummary {
    pub seed: u64,
    pub size: usize,
    pub label_counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub model: String,
    pub feature: FeatureSpec,
    pub acc_f: f64,
    pub acc_nf: f64,
    pub delta: f64,
    pub n_f: usize,
    pub n_nf: usize,
    pub train_dist: LabelDistribution,
    pub stress_pred_dist: LabelDistribution,
    pub dist_jsd: f64,
    pub verdict: Verdict,
    pub delta_threshold: f64,
    pub stress: StressSummary,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skipped_ids: Vec<String>,
}

/// Runs the accuracy and distribution tests for one model and feature.
pub fn probe(
    preds: &PredictionSet,
    split: &FilteredSplit,
    dataset: &Dataset,
    config: &ProbeConfig,
) -> Result<(ProbeReport, StressSet)> {
    let acc = accuracy_test(preds, split, dataset, config.coverage)?;
    let stress = build_stress_set(split, dataset, config.seed)?;
    let dist = distribution_test(preds, &stress, split, dataset, config.coverage)?;
    let report = ProbeReport {
        model: preds.model_name.clone(),
        feature: split.feature.clone(),
        acc_f: acc.acc_f,
        acc_nf: acc.acc_nf,
        delta: acc.delta,
        n_f: acc.n_f,
        n_nf: acc.n_nf,
        verdict: verdict(
            acc.delta,
            &dist.train_dist,
            &dist.stress_pred_dist,
            config.delta_threshold,
        ),
        train_dist: dist.train_dist,
        stress_pred_dist: dist.stress_pred_dist,
        dist_jsd: dist.dist_jsd,
        delta_threshold: config.delta_threshold,
        stress: StressSummary {
            seed: stress.seed,
            size: stress.len(),
            label_counts: stress.label_counts.clone(),
        },
        skipped_ids: acc.skipped,
    };
    Ok((report, stress))
}

/// Accuracy of always answering with the most frequent test label. For MCQ
/// this is `1/k` with `k` the most common number of choices.
pub fn majority_baseline(dataset: &Dataset) -> f64 {
    match dataset.task_kind() {
        TaskKind::Cls => {
            let mut counts: HashMap<&str, usize> = HashMap::new();
            for inst in dataset.test() {
                *counts.entry(inst.label.as_str()).or_default() += 1;
            }
            let best = counts.values().copied().max().unwrap_or(0);
            if dataset.test().is_empty() {
                0.0
            } else {
                best as f64 / dataset.test().len() as f64
            }
        }
        TaskKind::Mcq => {
            let mut sizes: BTreeMap<usize, usize> = BTreeMap::new();
            for g in dataset.question_groups(Split::Test) {
                *sizes.entry(g.members.len()).or_default() += 1;
            }
            // Smallest k among equally common sizes.
            let mut modal: Option<(usize, usize)> = None;
            for (k, n) in sizes {
                if modal.is_none_or(|(_, best)| n > best) {
                    modal = Some((k, n));
                }
            }
            modal.map_or(0.0, |(k, _)| 1.0 / k as f64)
        }
    }
}

/// Test accuracy at the level the task is scored: instances for CLS,
/// questions for MCQ. A question counts as correct when every one of its
/// choices is predicted correctly.
pub fn task_accuracy(preds: &PredictionSet, dataset: &Dataset) -> Result<f64> {
    preds.require_complete(dataset)?;
    match dataset.task_kind() {
        TaskKind::Cls => accuracy(preds, dataset.test().iter().map(|i| &i.id), dataset),
        TaskKind::Mcq => {
            let test = dataset.test();
            let groups = dataset.question_groups(Split::Test);
            if groups.is_empty() {
                return Err(Error::EmptyEvaluationSet);
            }
            let correct = groups
                .iter()
                .filter(|g| {
                    g.members
                        .iter()
                        .all(|&i| preds.predicted(&test[i].id) == Some(test[i].label.as_str()))
                })
                .count();
            Ok(correct as f64 / groups.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HypoComparison {
    pub acc_full: f64,
    pub acc_hypo: f64,
    pub majority: f64,
    pub hypo_minus_majority: f64,
    pub full_minus_hypo: f64,
}

impl HypoComparison {
    pub fn new(acc_full: f64, acc_hypo: f64, majority: f64) -> Self {
        HypoComparison {
            acc_full,
            acc_hypo,
            majority,
            hypo_minus_majority: acc_hypo - majority,
            full_minus_hypo: acc_full - acc_hypo,
        }
    }
}

/// Compares predictions on the full test split with predictions on its
/// hypothesis-only export. Both files must cover the whole test split.
pub fn hypo_compare(
    full: &PredictionSet,
    hypo: &PredictionSet,
    dataset: &Dataset,
) -> Result<HypoComparison> {
    let mut missing = full.missing(dataset);
    for id in hypo.missing(dataset) {
        if !missing.contains(&id) {
            missing.push(id);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    Ok(HypoComparison::new(
        task_accuracy(full, dataset)?,
        task_accuracy(hypo, dataset)?,
        majority_baseline(dataset),
    ))
}

/// Sum of absolute deltas over a model's cues.
pub fn model_weakness(deltas: &[f64]) -> f64 {
    deltas.iter().fold(0.0, |acc, d| acc + d.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_mcq, McqRecord};
    use proptest::prelude::*;
    use std::path::PathBuf;

    fn inst(id: &str, label: &str) -> Instance {
        Instance {
            id: id.into(),
            premise: "p".into(),
            hypothesis: "h".into(),
            label: label.into(),
            question_id: None,
            choice_index: None,
        }
    }

    fn cls(test: &[(&str, &str)]) -> Dataset {
        let train = vec![inst("a", "A"), inst("b", "B"), inst("c", "C")];
        let test = test.iter().map(|(id, l)| inst(id, l)).collect();
        Dataset::from_splits("d", TaskKind::Cls, train, test).unwrap()
    }

    fn mcq(questions: &[(usize, i64)]) -> Dataset {
        let mut test = Vec::new();
        for (q, (k, answer)) in questions.iter().enumerate() {
            let rec = McqRecord {
                id: format!("q{q}"),
                context: "c".into(),
                choices: (0..*k).map(|i| format!("choice {i}")).collect(),
                answer: *answer,
            };
            test.extend(split_mcq(&rec).unwrap());
        }
        let train = split_mcq(&McqRecord {
            id: "t".into(),
            context: "c".into(),
            choices: vec!["x".into(), "y".into()],
            answer: 0,
        })
        .unwrap();
        Dataset::from_splits("m", TaskKind::Mcq, train, test).unwrap()
    }

    fn parse(text: &str, ds: &Dataset) -> Result<PredictionSet> {
        parse_predictions(text, &PathBuf::from("p.jsonl"), "m", ds)
    }

    fn labels(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    fn split_of(ds: &Dataset, f_ids: &[&str], train_counts: &[(&str, usize)]) -> FilteredSplit {
        let test_ids: BTreeSet<String> = f_ids.iter().map(|s| s.to_string()).collect();
        let test_complement_ids = ds
            .test()
            .iter()
            .map(|i| i.id.clone())
            .filter(|id| !test_ids.contains(id))
            .collect();
        let mut test_label_counts: BTreeMap<String, usize> =
            ds.label_set().iter().map(|l| (l.clone(), 0)).collect();
        for id in &test_ids {
            *test_label_counts
                .get_mut(&ds.get(Split::Test, id).unwrap().label)
                .unwrap() += 1;
        }
        FilteredSplit {
            feature: FeatureSpec::word("no"),
            train_ids: BTreeSet::new(),
            test_ids,
            test_complement_ids,
            train_label_counts: train_counts
                .iter()
                .map(|(l, n)| (l.to_string(), *n))
                .collect(),
            test_label_counts,
        }
    }

    fn ld(p: &[f64]) -> LabelDistribution {
        LabelDistribution {
            labels: ["contradiction", "entailment", "neutral"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            proportions: p.to_vec(),
            support: 10,
        }
    }

    #[test]
    fn mcq_scores_pick_the_best_choice() {
        let ds = mcq(&[(2, 1)]);
        let p = parse(
            "{\"id\":\"q0#0\",\"score\":0.2}\n{\"id\":\"q0#1\",\"score\":0.8}\n",
            &ds,
        )
        .unwrap();
        assert_eq!(p.predicted("q0#1"), Some("true"));
        assert_eq!(p.predicted("q0#0"), Some("false"));

        let tie = parse(
            "{\"id\":\"q0#0\",\"score\":0.5}\n{\"id\":\"q0#1\",\"score\":0.5}\n",
            &ds,
        )
        .unwrap();
        assert_eq!(tie.predicted("q0#0"), Some("true"));
        assert_eq!(tie.predicted("q0#1"), Some("false"));

        let partial = parse("{\"id\":\"q0#0\",\"score\":0.5}\n", &ds);
        assert!(matches!(partial, Err(Error::IncompleteGroup(q)) if q == "q0"));
    }

    #[test]
    fn prediction_validation() {
        let ds = cls(&[("1", "A"), ("2", "B")]);
        let err = parse("{\"id\":\"9\",\"pred\":\"A\"}\n", &ds).unwrap_err();
        assert!(err.to_string().contains('9'));
        assert!(matches!(err, Error::UnknownPredictionIds(ids) if ids == ["9"]));

        let dup = parse(
            "{\"id\":\"1\",\"pred\":\"A\"}\n{\"id\":\"1\",\"pred\":\"B\"}\n",
            &ds,
        );
        assert!(matches!(dup, Err(Error::DuplicatePrediction(_))));

        let bad = parse("{\"id\":\"1\",\"pred\":\"Z\"}\n", &ds);
        assert!(matches!(bad, Err(Error::PredictionLabel { .. })));

        let scores = parse(
            "{\"id\":\"1\",\"scores\":{\"A\":0.1,\"C\":0.7,\"B\":0.2}}\n",
            &ds,
        )
        .unwrap();
        assert_eq!(scores.predicted("1"), Some("C"));
        let tied = parse("{\"id\":\"1\",\"scores\":{\"B\":0.5,\"C\":0.5}}\n", &ds).unwrap();
        assert_eq!(tied.predicted("1"), Some("B"));

        let score_on_cls = parse("{\"id\":\"1\",\"score\":0.5}\n", &ds);
        assert!(matches!(
            score_on_cls,
            Err(Error::MalformedLine { line: 1, .. })
        ));

        // A dataset record is not a prediction.
        let record = "{\"id\":\"1\",\"premise\":\"\",\"hypothesis\":\"h\",\"label\":\"A\"}\n";
        assert!(matches!(
            parse(record, &ds),
            Err(Error::MalformedLine { .. })
        ));
        let both = "{\"id\":\"1\",\"pred\":\"A\",\"scores\":{\"A\":1.0}}\n";
        assert!(matches!(parse(both, &ds), Err(Error::MalformedLine { .. })));
    }

    #[test]
    fn accuracy_counts() {
        let test: Vec<(String, &str)> = (0..10).map(|i| (i.to_string(), "A")).collect();
        let pairs: Vec<(&str, &str)> = test.iter().map(|(i, l)| (i.as_str(), *l)).collect();
        let ds = cls(&pairs);
        let preds: BTreeMap<String, String> = (0..10)
            .map(|i| (i.to_string(), if i < 8 { "A" } else { "B" }.to_string()))
            .collect();
        let p = PredictionSet::from_labels("m", preds, &ds).unwrap();
        let ids: Vec<String> = (0..10).map(|i| i.to_string()).collect();
        assert_eq!(accuracy(&p, &ids, &ds).unwrap(), 0.8);

        let empty: Vec<String> = Vec::new();
        let err = accuracy(&p, &empty, &ds).unwrap_err();
        assert_eq!(err.to_string(), "empty evaluation set");

        let partial = PredictionSet::from_labels("m", labels(&[("0", "A")]), &ds).unwrap();
        assert!(
            matches!(accuracy(&partial, &ids[..3], &ds), Err(Error::MissingPredictions(m)) if m.len() == 2)
        );
        let skip = evaluate(&partial, &ids[..3], &ds, CoverageMode::Skip).unwrap();
        assert_eq!((skip.value, skip.total, skip.skipped.len()), (1.0, 1, 2));
    }

    #[test]
    fn stress_set_balances_minorities() {
        let mut test = Vec::new();
        for (label, n) in [("entailment", 10), ("contradiction", 4), ("neutral", 2)] {
            for i in 0..n {
                test.push(inst(&format!("{label}{i}"), label));
            }
        }
        let train = vec![
            inst("t1", "contradiction"),
            inst("t2", "entailment"),
            inst("t3", "neutral"),
        ];
        let ds = Dataset::from_splits("d", TaskKind::Cls, train, test).unwrap();
        let ids: Vec<&str> = ds.test().iter().map(|i| i.id.as_str()).collect();
        let split = split_of(&ds, &ids, &[("contradiction", 1)]);
        let s = build_stress_set(&split, &ds, 42).unwrap();
        assert_eq!(s.len(), 30);
        assert!(s.label_counts.values().all(|&n| n == 10));
        let mult = s.multiplicities();
        for i in 0..10 {
            assert_eq!(mult[format!("entailment{i}").as_str()], 1);
        }
        let replicas = |p: &str| {
            mult.iter()
                .filter(|(k, _)| k.starts_with(p))
                .map(|(_, n)| n)
                .sum::<usize>()
        };
        assert_eq!(replicas("contradiction"), 10);
        assert_eq!(replicas("neutral"), 10);
        assert_eq!(build_stress_set(&split, &ds, 42).unwrap(), s);

        let jsonl = s.to_jsonl(&ds);
        assert_eq!(jsonl.lines().count(), 16);
        let row: serde_json::Value = serde_json::from_str(jsonl.lines().next().unwrap()).unwrap();
        assert!(row["count"].as_u64().unwrap() >= 1);
    }

    #[test]
    fn stress_set_edge_cases() {
        let ds = cls(&[("1", "A"), ("2", "B"), ("3", "A"), ("4", "B")]);
        let split = split_of(&ds, &["1", "2", "3", "4"], &[("A", 1)]);
        let s = build_stress_set(&split, &ds, 7).unwrap();
        assert_eq!(s.instance_ids, ["1", "2", "3", "4"]);

        let one = split_of(&ds, &["1", "3"], &[("A", 1)]);
        assert!(matches!(
            build_stress_set(&one, &ds, 7),
            Err(Error::DegenerateStressSet { .. })
        ));
    }

    #[test]
    fn distribution_test_shapes() {
        let ds = cls(&[("1", "A"), ("2", "A"), ("3", "B"), ("4", "C"), ("5", "A")]);
        let split = split_of(&ds, &["1", "2", "3", "4"], &[("A", 8), ("B", 1), ("C", 1)]);
        let stress = build_stress_set(&split, &ds, 42).unwrap();
        assert_eq!(stress.len(), 6);

        let all: Vec<(&str, &str)> = ["1", "2", "3", "4", "5"]
            .iter()
            .map(|i| (*i, "A"))
            .collect();
        let always_a = PredictionSet::from_labels("a", labels(&all), &ds).unwrap();
        let d = distribution_test(&always_a, &stress, &split, &ds, CoverageMode::Strict).unwrap();
        assert_eq!(d.stress_pred_dist.proportions, [1.0, 0.0, 0.0]);
        assert_eq!(d.train_dist.proportions, [0.8, 0.1, 0.1]);

        let gold_pairs: Vec<(&str, &str)> = ds
            .test()
            .iter()
            .map(|i| (i.id.as_str(), i.label.as_str()))
            .collect();
        let gold = PredictionSet::from_labels("g", labels(&gold_pairs), &ds).unwrap();
        let d = distribution_test(&gold, &stress, &split, &ds, CoverageMode::Strict).unwrap();
        for p in &d.stress_pred_dist.proportions {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn verdict_rules() {
        let contra = ld(&[0.6, 0.2, 0.2]);
        let stronger = ld(&[0.8, 0.1, 0.1]);
        assert_eq!(verdict(0.3, &contra, &stronger, 0.02), Verdict::Exploits);
        let opposite = ld(&[0.1, 0.3, 0.6]);
        assert_eq!(verdict(-0.08, &contra, &opposite, 0.02), Verdict::Resists);
        assert_eq!(verdict(0.3, &contra, &opposite, 0.02), Verdict::Resists);
        let flat = ld(&[0.34, 0.33, 0.33]);
        assert_eq!(verdict(0.3, &contra, &flat, 0.02), Verdict::Inconclusive);
        assert_eq!(
            verdict(0.01, &contra, &stronger, 0.02),
            Verdict::Inconclusive
        );
        assert_eq!(verdict(0.0, &contra, &stronger, 0.02), Verdict::Resists);
    }

    #[test]
    fn majority_baselines() {
        let three = cls(&[("1", "A"), ("2", "B"), ("3", "C")]);
        assert!((majority_baseline(&three) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(majority_baseline(&mcq(&[(2, 0), (2, 1)])), 0.5);
        assert_eq!(majority_baseline(&mcq(&[(4, 0), (4, 3), (2, 1)])), 0.25);
    }

    #[test]
    fn hypo_comparison() {
        let ds = mcq(&[(2, 0), (2, 1)]);
        let pairs = [
            ("q0#0", "true"),
            ("q0#1", "false"),
            ("q1#0", "true"),
            ("q1#1", "false"),
        ];
        let full = PredictionSet::from_labels("m", labels(&pairs), &ds).unwrap();
        let c = hypo_compare(&full, &full, &ds).unwrap();
        assert_eq!(c.acc_full, 0.5);
        assert_eq!(c.full_minus_hypo, 0.0);
        assert_eq!(c.hypo_minus_majority, 0.0);

        let short = PredictionSet::from_labels("m", labels(&pairs[..3]), &ds).unwrap();
        let err = hypo_compare(&full, &short, &ds).unwrap_err();
        assert!(matches!(err, Error::MissingPredictions(ids) if ids == ["q1#1"]));

        let snli_ft = HypoComparison::new(54.43, 59.83, 33.3);
        assert!((snli_ft.full_minus_hypo - -5.40).abs() < 1e-9);
        assert!((snli_ft.hypo_minus_majority - 26.53).abs() < 1e-9);
        assert!((HypoComparison::new(90.56, 45.7, 33.3).full_minus_hypo - 44.86).abs() < 1e-9);
    }

    #[test]
    fn weakness_sums_magnitudes() {
        assert!((model_weakness(&[1.65, -0.25, 2.73, 0.57]) - 5.20).abs() < 1e-9);
        assert_eq!(model_weakness(&[]), 0.0);
        assert_eq!(model_weakness(&[0.0, 0.0]), 0.0);
    }

    fn arb_labelled() -> impl Strategy<Value = Vec<(usize, bool)>> {
        proptest::collection::vec((0usize..3, any::<bool>()), 2..40)
    }

    proptest! {
        #[test]
        fn stress_sets_are_balanced_and_drawn_from_s_f(rows in arb_labelled(), seed in 0u64..1000) {
            let names = ["A", "B", "C"];
            let test: Vec<(String, &str)> = rows.iter().enumerate().map(|(i, (l, _))| (format!("i{i}"), names[*l])).collect();
            let pairs: Vec<(&str, &str)> = test.iter().map(|(a, b)| (a.as_str(), *b)).collect();
            let ds = cls(&pairs);
            let f_ids: Vec<&str> = test.iter().zip(&rows).filter(|(_, r)| r.1).map(|(t, _)| t.0.as_str()).collect();
            let split = split_of(&ds, &f_ids, &[("A", 1)]);
            match build_stress_set(&split, &ds, seed) {
                Ok(s) => {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for id in &s.instance_ids {
                        prop_assert!(split.test_ids.contains(id));
                        *counts.entry(ds.get(Split::Test, id).unwrap().label.as_str()).or_default() += 1;
                    }
                    let max = counts.values().max().unwrap();
                    prop_assert_eq!(counts.values().min().unwrap(), max);
                    prop_assert_eq!(build_stress_set(&split, &ds, seed).unwrap(), s);
                }
                Err(e) => {
                    let expected = matches!(e, Error::DegenerateStressSet { .. } | Error::EmptyEvaluationSet);
                    prop_assert!(expected);
                }
            }
        }

        #[test]
        fn split_accuracies_recombine(rows in arb_labelled(), guesses in proptest::collection::vec(0usize..3, 40)) {
            let names = ["A", "B", "C"];
            let test: Vec<(String, &str)> = rows.iter().enumerate().map(|(i, (l, _))| (format!("i{i}"), names[*l])).collect();
            let pairs: Vec<(&str, &str)> = test.iter().map(|(a, b)| (a.as_str(), *b)).collect();
            let ds = cls(&pairs);
            let f_ids: Vec<&str> = test.iter().zip(&rows).filter(|(_, r)| r.1).map(|(t, _)| t.0.as_str()).collect();
            prop_assume!(!f_ids.is_empty() && f_ids.len() < test.len());
            let split = split_of(&ds, &f_ids, &[("A", 1)]);
            let preds: BTreeMap<String, String> = test.iter().enumerate().map(|(i, (id, _))| (id.clone(), names[guesses[i]].to_string())).collect();
            let p = PredictionSet::from_labels("m", preds, &ds).unwrap();
            let t = accuracy_test(&p, &split, &ds, CoverageMode::Strict).unwrap();
            let all: Vec<String> = test.iter().map(|(id, _)| id.clone()).collect();
            let overall = accuracy(&p, &all, &ds).unwrap();
            let weighted = (t.acc_f * t.n_f as f64 + t.acc_nf * t.n_nf as f64) / (t.n_f + t.n_nf) as f64;
            prop_assert!((weighted - overall).abs() < 1e-12);
            prop_assert_eq!(t.delta, t.acc_f - t.acc_nf);
        }

        #[test]
        fn mcq_score_conversion_matches_brute_force(
            groups in proptest::collection::vec((2usize..6, 0u32..1000, proptest::collection::vec(0u8..4, 5)), 1..8)
        ) {
            let spec: Vec<(usize, i64)> = groups.iter().map(|(k, a, _)| (*k, (*a as usize % *k) as i64)).collect();
            let ds = mcq(&spec);
            let mut text = String::new();
            for (q, (k, _, scores)) in groups.iter().enumerate() {
                for (c, score) in scores.iter().take(*k).enumerate() {
                    text.push_str(&format!("{{\"id\":\"q{q}#{c}\",\"score\":{score}}}\n"));
                }
            }
            let p = parse(&text, &ds).unwrap();
            let mut correct = 0;
            for (q, (k, _, scores)) in groups.iter().enumerate() {
                // Brute force: the chosen index is the first one no other choice beats.
                let chosen = (0..*k).find(|&c| (0..*k).all(|o| scores[o] <= scores[c])).unwrap();
                if chosen as i64 == spec[q].1 {
                    correct += 1;
                }
            }
            let expected = correct as f64 / groups.len() as f64;
            prop_assert_eq!(task_accuracy(&p, &ds).unwrap(), expected);
        }
    }
}
