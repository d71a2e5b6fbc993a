//! Synthetic planted-cue datasets and predictors with known ground truth.
//!
//! The generator records, while it plants, exactly which instances carry
//! the planted word and with which labels. The resulting [`PlantOracle`]
//! evaluates mse, jsd and cueness directly from those counts.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotate::{annotate_word, FeatureKind, FeatureSpec, Scope};
use crate::corpus::{Dataset, Instance, Split, TaskKind};
use crate::error::{Error, Result};
use crate::probe::PredictionSet;
use crate::tokenize::Tokenizer;

/// Published full and hypothesis-only accuracies, in percent.
pub const PUBLISHED_ACCURACY_CSV: &str = include_str!("../fixtures/published-accuracy.csv");

const SUBJECTS: &[&str] = &[
    "man", "woman", "child", "dog", "girl", "boy", "chef", "farmer", "student",
];
const ADJECTIVES: &[&str] = &[
    "tall", "small", "old", "young", "quiet", "busy", "red", "blue", "green", "brown",
];
const VERBS: &[&str] = &["walks", "reads", "paints", "carries", "watches", "holds"];
const PREPOSITIONS: &[&str] = &["near", "under", "beside"];
const PLACES: &[&str] = &[
    "park", "garden", "street", "kitchen", "river", "bridge", "market", "yard",
];
const OBJECTS: &[&str] = &[
    "ball", "book", "box", "chair", "lamp", "cup", "basket", "bench", "fence", "window", "table",
];
const TYPOS: &[&str] = &[
    "teh", "recieve", "wierd", "thier", "untill", "becuase", "seperate", "occured",
];

fn default_typo_rate() -> f64 {
    0.25
}

fn default_name() -> String {
    "planted".to_string()
}

/// A second word planted in an exact number of instances, all with one
/// label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecondaryPlant {
    pub feature: FeatureSpec,
    pub label: String,
    pub train_hits: usize,
    pub test_hits: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    #[serde(default = "default_name")]
    pub name: String,
    pub n_train: usize,
    pub n_test: usize,
    pub labels: Vec<String>,
    pub feature: FeatureSpec,
    /// Probability that an instance carries the feature.
    pub p_feat: f64,
    /// Probability that a carrying instance gets the target label.
    pub q: f64,
    /// Defaults to the first label.
    #[serde(default)]
    pub target: Option<String>,
    pub seed: u64,
    /// Share of hypotheses given a misspelled filler word.
    #[serde(default = "default_typo_rate")]
    pub typo_rate: f64,
    #[serde(default)]
    pub secondary: Option<SecondaryPlant>,
}

impl PlantSpec {
    /// 1,000/200 instances, labels A/B/C, `zork` planted at rate 0.2 with
    /// skew 0.9 toward A, seed 7, and `blick` planted in 4 train and 6 test
    /// instances labelled A.
    pub fn reference() -> Self {
        PlantSpec {
            name: default_name(),
            n_train: 1000,
            n_test: 200,
            labels: ["A", "B", "C"].iter().map(|s| s.to_string()).collect(),
            feature: FeatureSpec::word("zork"),
            p_feat: 0.2,
            q: 0.9,
            target: None,
            seed: 7,
            typo_rate: default_typo_rate(),
            secondary: Some(SecondaryPlant {
                feature: FeatureSpec::word("blick"),
                label: "A".into(),
                train_hits: 4,
                test_hits: 6,
            }),
        }
    }

    pub fn target(&self) -> &str {
        self.target.as_deref().unwrap_or(&self.labels[0])
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateSpec(m.to_string()));
        let distinct: BTreeSet<&String> = self.labels.iter().collect();
        if distinct.len() < 2 || distinct.len() != self.labels.len() {
            return bad("need at least two distinct labels");
        }
        if self.n_train == 0 || self.n_test == 0 {
            return bad("both splits need instances");
        }
        for (name, p) in [
            ("p_feat", self.p_feat),
            ("q", self.q),
            ("typo_rate", self.typo_rate),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::DegenerateSpec(format!("{name} must lie in [0, 1]")));
            }
        }
        if !self.labels.iter().any(|l| l == self.target()) {
            return bad("target label is not in the label set");
        }
        let mut words = vec![&self.feature];
        if let Some(s) = &self.secondary {
            if !self.labels.contains(&s.label) {
                return bad("secondary label is not in the label set");
            }
            words.push(&s.feature);
        }
        for f in words {
            if f.kind != FeatureKind::Word {
                return bad("only WORD features can be planted");
            }
            let filler = [
                SUBJECTS,
                ADJECTIVES,
                VERBS,
                PREPOSITIONS,
                PLACES,
                OBJECTS,
                TYPOS,
            ];
            if f.value.contains(char::is_whitespace)
                || filler.iter().any(|ws| ws.contains(&f.value.as_str()))
                || ["the", "a"].contains(&f.value.as_str())
            {
                return Err(Error::DegenerateSpec(format!(
                    "planted word {:?} must be a single word outside the filler vocabulary",
                    f.value
                )));
            }
        }
        if self
            .secondary
            .as_ref()
            .is_some_and(|s| s.feature == self.feature)
        {
            return bad("secondary word must differ from the planted word");
        }
        Ok(())
    }
}

/// Label counts among the instances carrying one planted word.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantCounts {
    pub feature: FeatureSpec,
    pub train_ids: BTreeSet<String>,
    pub test_ids: BTreeSet<String>,
    pub train_counts: BTreeMap<String, usize>,
    pub test_counts: BTreeMap<String, usize>,
}

impl PlantCounts {
    fn new(feature: &FeatureSpec, labels: &[String]) -> Self {
        let zero: BTreeMap<String, usize> = labels.iter().map(|l| (l.clone(), 0)).collect();
        PlantCounts {
            feature: feature.clone(),
            train_ids: BTreeSet::new(),
            test_ids: BTreeSet::new(),
            train_counts: zero.clone(),
            test_counts: zero,
        }
    }

    fn record(&mut self, split: Split, id: &str, label: &str) {
        let (ids, counts) = match split {
            Split::Train => (&mut self.train_ids, &mut self.train_counts),
            Split::Test => (&mut self.test_ids, &mut self.test_counts),
        };
        ids.insert(id.to_string());
        *counts.get_mut(label).expect("label from spec") += 1;
    }
}

/// Ground truth recorded while generating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantOracle {
    pub spec: PlantSpec,
    pub planted: PlantCounts,
    pub mse_train: f64,
    /// Absent when the planted word missed one of the splits.
    pub jsd: Option<f64>,
    pub cueness: Option<f64>,
    #[serde(default)]
    pub secondary: Option<PlantCounts>,
}

fn proportions(counts: &BTreeMap<String, usize>, labels: &[String]) -> Option<Vec<f64>> {
    let n: usize = counts.values().sum();
    (n > 0).then(|| labels.iter().map(|l| counts[l] as f64 / n as f64).collect())
}

fn entropy_bits(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|x| **x > 0.0)
        .map(|x| x * x.log2())
        .sum::<f64>()
}

impl PlantOracle {
    fn evaluate(spec: PlantSpec, planted: PlantCounts, secondary: Option<PlantCounts>) -> Self {
        let labels = &spec.labels;
        let k = labels.len() as f64;
        let p = proportions(&planted.train_counts, labels);
        let mse_train = p.as_ref().map_or(0.0, |p| {
            p.iter().map(|x| (x - 1.0 / k).powi(2)).sum::<f64>() / k
        });
        // Entropy form: H((P+Q)/2) - (H(P) + H(Q)) / 2.
        let jsd = match (p, proportions(&planted.test_counts, labels)) {
            (Some(p), Some(q)) => {
                let m: Vec<f64> = p.iter().zip(&q).map(|(a, b)| (a + b) / 2.0).collect();
                Some((entropy_bits(&m) - (entropy_bits(&p) + entropy_bits(&q)) / 2.0).max(0.0))
            }
            _ => None,
        };
        PlantOracle {
            cueness: jsd.map(|j| mse_train * (-j).exp()),
            spec,
            planted,
            mse_train,
            jsd,
            secondary,
        }
    }

    /// Accuracy delta of the cue follower: it answers the target label on
    /// carrying test instances and the gold label elsewhere.
    pub fn cue_follower_delta(&self) -> f64 {
        let n_f: usize = self.planted.test_counts.values().sum();
        let acc_f = self.planted.test_counts[self.spec.target()] as f64 / n_f as f64;
        acc_f - 1.0
    }
}

struct Filler<'a> {
    rng: &'a mut ChaCha8Rng,
}

impl Filler<'_> {
    fn pick(&mut self, words: &[&'static str]) -> &'static str {
        words.choose(self.rng).expect("nonempty word list")
    }

    fn premise(&mut self) -> String {
        format!(
            "The {} {} {} {} the {}.",
            self.pick(ADJECTIVES),
            self.pick(SUBJECTS),
            self.pick(VERBS),
            self.pick(PREPOSITIONS),
            self.pick(PLACES)
        )
    }

    fn hypothesis_words(&mut self) -> Vec<String> {
        [
            "a",
            self.pick(SUBJECTS),
            self.pick(VERBS),
            "the",
            self.pick(OBJECTS),
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}

fn render(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(first) = s.get(..1) {
        s.replace_range(..1, &first.to_uppercase());
    }
    s.push('.');
    s
}

fn insert_word(words: &mut Vec<String>, word: &str, rng: &mut ChaCha8Rng) {
    // Never first, so the sentence-initial capital stays on filler.
    let at = rng.random_range(1..=words.len());
    words.insert(at, word.to_string());
}

/// Generates a CLS dataset and the oracle record. Pure in `spec`.
pub fn generate(spec: &PlantSpec) -> Result<(Dataset, PlantOracle)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let target = spec.target().to_string();
    let others: Vec<&String> = spec.labels.iter().filter(|l| **l != target).collect();
    let mut planted = PlantCounts::new(&spec.feature, &spec.labels);
    let mut secondary = spec
        .secondary
        .as_ref()
        .map(|s| PlantCounts::new(&s.feature, &spec.labels));

    let mut splits: Vec<Vec<Instance>> = Vec::new();
    for (split, n, prefix) in [
        (Split::Train, spec.n_train, "train"),
        (Split::Test, spec.n_test, "test"),
    ] {
        let mut instances = Vec::with_capacity(n);
        let mut hits_left = spec.secondary.as_ref().map_or(0, |s| {
            if split == Split::Train {
                s.train_hits
            } else {
                s.test_hits
            }
        });
        for i in 0..n {
            let id = format!("{prefix}-{i:05}");
            let carries = rng.random_bool(spec.p_feat);
            let label = if carries {
                if rng.random_bool(spec.q) {
                    target.clone()
                } else {
                    (*others.choose(&mut rng).expect("two labels")).clone()
                }
            } else {
                spec.labels.choose(&mut rng).expect("labels").clone()
            };
            let mut filler = Filler { rng: &mut rng };
            let premise = filler.premise();
            let mut words = filler.hypothesis_words();
            if carries {
                insert_word(&mut words, &spec.feature.value, &mut rng);
                planted.record(split, &id, &label);
            }
            if let (Some(s), Some(counts)) = (&spec.secondary, secondary.as_mut()) {
                if hits_left > 0 && !carries && label == s.label {
                    insert_word(&mut words, &s.feature.value, &mut rng);
                    counts.record(split, &id, &label);
                    hits_left -= 1;
                }
            }
            if rng.random_bool(spec.typo_rate) {
                let typo = *TYPOS.choose(&mut rng).expect("typos");
                insert_word(&mut words, typo, &mut rng);
            }
            instances.push(Instance {
                id,
                premise,
                hypothesis: render(&words),
                label,
                question_id: None,
                choice_index: None,
            });
        }
        if hits_left > 0 {
            return Err(Error::DegenerateSpec(format!(
                "not enough {prefix} instances to plant the secondary word"
            )));
        }
        splits.push(instances);
    }
    let test = splits.pop().expect("test split");
    let train = splits.pop().expect("train split");
    let dataset = Dataset::from_splits(&spec.name, TaskKind::Cls, train, test)?;
    if dataset.label_set()
        != spec
            .labels
            .iter()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect::<Vec<_>>()
    {
        return Err(Error::DegenerateSpec(
            "some label never occurs in the train split".into(),
        ));
    }
    let oracle = PlantOracle::evaluate(spec.clone(), planted, secondary);
    Ok((dataset, oracle))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PredictorKind {
    AlwaysLabel {
        label: String,
    },
    Gold,
    UniformRandom,
    /// Predicts `target` whenever the WORD feature occurs, gold otherwise.
    CueFollower {
        feature: FeatureSpec,
        target: String,
    },
}

impl PredictorKind {
    pub fn model_name(&self) -> String {
        match self {
            PredictorKind::AlwaysLabel { label } => format!("always-{label}"),
            PredictorKind::Gold => "gold".into(),
            PredictorKind::UniformRandom => "uniform-random".into(),
            PredictorKind::CueFollower { .. } => "cue-follower".into(),
        }
    }
}

/// Predictions for every test instance.
pub fn synth_predictor(
    kind: &PredictorKind,
    dataset: &Dataset,
    seed: u64,
) -> Result<PredictionSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tokenizer = Tokenizer::default();
    let scope = Scope::for_task(dataset.task_kind());
    if let PredictorKind::CueFollower { feature, .. } = kind {
        if feature.kind != FeatureKind::Word {
            return Err(Error::DegenerateSpec(
                "the cue follower only tracks WORD features".into(),
            ));
        }
    }
    let mut labels = BTreeMap::new();
    for inst in dataset.test() {
        let label = match kind {
            PredictorKind::AlwaysLabel { label } => label.clone(),
            PredictorKind::Gold => inst.label.clone(),
            PredictorKind::UniformRandom => dataset
                .label_set()
                .choose(&mut rng)
                .expect("nonempty label set")
                .clone(),
            PredictorKind::CueFollower { feature, target } => {
                if annotate_word(&tokenizer.tokenize(inst), scope).contains(feature) {
                    target.clone()
                } else {
                    inst.label.clone()
                }
            }
        };
        labels.insert(inst.id.clone(), label);
    }
    PredictionSet::from_labels(&kind.model_name(), labels, dataset)
}

/// The four reference predictors for a planted fixture.
pub fn reference_predictors(spec: &PlantSpec) -> Vec<PredictorKind> {
    vec![
        PredictorKind::AlwaysLabel {
            label: spec.target().to_string(),
        },
        PredictorKind::Gold,
        PredictorKind::UniformRandom,
        PredictorKind::CueFollower {
            feature: spec.feature.clone(),
            target: spec.target().to_string(),
        },
    ]
}

/// Writes the dataset directory plus `oracle.json` and
/// `predictions/<model>.jsonl` for the reference predictors.
pub fn write_fixture(spec: &PlantSpec, dir: &Path) -> Result<(Dataset, PlantOracle)> {
    let (dataset, oracle) = generate(spec)?;
    dataset.write_dir(dir)?;
    let oracle_path = dir.join("oracle.json");
    std::fs::write(&oracle_path, crate::report::to_json(&oracle))
        .map_err(|e| Error::io(&oracle_path, e))?;
    let pred_dir = dir.join("predictions");
    std::fs::create_dir_all(&pred_dir).map_err(|e| Error::io(&pred_dir, e))?;
    for kind in reference_predictors(spec) {
        let preds = synth_predictor(&kind, &dataset, spec.seed)?;
        let path = pred_dir.join(format!("{}.jsonl", preds.model_name));
        std::fs::write(&path, preds.to_jsonl()).map_err(|e| Error::io(&path, e))?;
    }
    Ok((dataset, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(q: f64, seed: u64) -> PlantSpec {
        PlantSpec {
            n_train: 300,
            n_test: 100,
            q,
            seed,
            secondary: None,
            ..PlantSpec::reference()
        }
    }

    #[test]
    fn generation_is_pure() {
        let spec = small(0.9, 3);
        let (a, oa) = generate(&spec).unwrap();
        let (b, ob) = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(oa, ob);
        let (c, _) = generate(&small(0.9, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn oracle_counts_match_text() {
        let (ds, oracle) = generate(&PlantSpec::reference()).unwrap();
        for (split, ids) in [
            (Split::Train, &oracle.planted.train_ids),
            (Split::Test, &oracle.planted.test_ids),
        ] {
            for inst in ds.split(split) {
                let has = inst
                    .hypothesis
                    .split(|c: char| !c.is_alphabetic())
                    .any(|w| w == "zork");
                assert_eq!(has, ids.contains(&inst.id), "{}", inst.id);
            }
        }
        let sec = oracle.secondary.as_ref().unwrap();
        assert_eq!(sec.train_ids.len(), 4);
        assert_eq!(sec.test_ids.len(), 6);
        assert_eq!(sec.train_counts["A"], 4);
    }

    #[test]
    fn uniform_skew_gives_near_zero_cueness() {
        let mut spec = small(1.0 / 3.0, 11);
        spec.n_train = 3000;
        spec.n_test = 1000;
        let (_, oracle) = generate(&spec).unwrap();
        assert!(oracle.cueness.unwrap() < 0.005, "{:?}", oracle.cueness);
    }

    #[test]
    fn full_skew_is_one_hot() {
        let (_, oracle) = generate(&small(1.0, 5)).unwrap();
        let n: usize = oracle.planted.train_counts.values().sum();
        assert_eq!(oracle.planted.train_counts["A"], n);
        assert!((oracle.mse_train - 2.0 / 9.0).abs() < 1e-12);
        assert_eq!(oracle.jsd, Some(0.0));
        assert!((oracle.cueness.unwrap() - 2.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_specs() {
        let mut one = small(0.9, 1);
        one.labels = vec!["A".into()];
        assert!(matches!(generate(&one), Err(Error::DegenerateSpec(_))));
        let mut filler = small(0.9, 1);
        filler.feature = FeatureSpec::word("park");
        assert!(matches!(generate(&filler), Err(Error::DegenerateSpec(_))));
        let mut rate = small(0.9, 1);
        rate.q = 1.5;
        assert!(matches!(generate(&rate), Err(Error::DegenerateSpec(_))));
    }

    #[test]
    fn predictors() {
        let spec = small(0.9, 2);
        let (ds, oracle) = generate(&spec).unwrap();
        let gold = synth_predictor(&PredictorKind::Gold, &ds, 1).unwrap();
        assert!(ds
            .test()
            .iter()
            .all(|i| gold.predicted(&i.id) == Some(i.label.as_str())));

        let follower = synth_predictor(&reference_predictors(&spec)[3], &ds, 1).unwrap();
        for inst in ds.test() {
            let expected = if oracle.planted.test_ids.contains(&inst.id) {
                "A"
            } else {
                inst.label.as_str()
            };
            assert_eq!(follower.predicted(&inst.id), Some(expected));
        }

        let random = synth_predictor(&PredictorKind::UniformRandom, &ds, 9).unwrap();
        assert_eq!(
            random,
            synth_predictor(&PredictorKind::UniformRandom, &ds, 9).unwrap()
        );
        assert_eq!(random.len(), ds.test().len());
    }

    #[test]
    fn spec_json_defaults() {
        let spec: PlantSpec = serde_json::from_str(
            r#"{"n_train":10,"n_test":5,"labels":["x","y"],"feature":{"kind":"WORD","value":"zork"},"p_feat":0.5,"q":0.5,"seed":1}"#,
        )
        .unwrap();
        assert_eq!(spec.target(), "x");
        assert_eq!(spec.typo_rate, 0.25);
        assert_eq!(spec.name, "planted");
    }
}
