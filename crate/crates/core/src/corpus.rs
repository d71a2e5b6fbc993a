//! Dataset ingestion in the unified (premise, hypothesis, label) form.
//!
//! Two on-disk record formats are accepted, one JSON object per line:
//!
//! - `cls-jsonl`: `{"id", "premise", "hypothesis", "label"}`
//! - `mcq-jsonl`: `{"id", "context", "choices": [..], "answer"}` with a
//!   0-based answer index. A k-way question becomes k instances with ids
//!   `<id>#<i>` and labels `true`/`false`.
//!
//! A dataset directory holds `train.jsonl`, `test.jsonl` and `meta.json`
//! (`{"task_kind": "CLS" | "MCQ"}`).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const TRUE_LABEL: &str = "true";
pub const FALSE_LABEL: &str = "false";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "CLS")]
    Cls,
    #[serde(rename = "MCQ")]
    Mcq,
}

impl TaskKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Cls => "CLS",
            TaskKind::Mcq => "MCQ",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CLS" | "CLS-JSONL" => Ok(TaskKind::Cls),
            "MCQ" | "MCQ-JSONL" => Ok(TaskKind::Mcq),
            _ => Err(Error::InvalidDataset(format!("unknown task kind {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choice_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClsRecord {
    pub id: String,
    pub premise: String,
    pub hypothesis: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct McqRecord {
    pub id: String,
    pub context: String,
    pub choices: Vec<String>,
    pub answer: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub task_kind: TaskKind,
}

/// Splits a k-way question into k true/false instances.
pub fn split_mcq(question: &McqRecord) -> Result<Vec<Instance>> {
    let k = question.choices.len();
    if k < 2 {
        return Err(Error::TooFewChoices {
            id: question.id.clone(),
            choices: k,
        });
    }
    if question.answer < 0 || question.answer as usize >= k {
        return Err(Error::AnswerOutOfRange {
            id: question.id.clone(),
            answer: question.answer,
            choices: k,
        });
    }
    let answer = question.answer as usize;
    Ok(question
        .choices
        .iter()
        .enumerate()
        .map(|(i, choice)| Instance {
            id: format!("{}#{}", question.id, i),
            premise: question.context.clone(),
            hypothesis: choice.clone(),
            label: if i == answer { TRUE_LABEL } else { FALSE_LABEL }.to_string(),
            question_id: Some(question.id.clone()),
            choice_index: Some(i),
        })
        .collect())
}

/// Parses one JSONL split. `path` is used only for diagnostics.
pub fn parse_split(text: &str, path: &Path, kind: TaskKind) -> Result<Vec<Instance>> {
    let mut instances = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let malformed = |e: serde_json::Error| Error::MalformedLine {
            path: path.to_path_buf(),
            line: line_no,
            message: e.to_string(),
        };
        match kind {
            TaskKind::Cls => {
                let rec: ClsRecord = serde_json::from_str(trimmed).map_err(malformed)?;
                instances.push(Instance {
                    id: rec.id,
                    premise: rec.premise,
                    hypothesis: rec.hypothesis,
                    label: rec.label,
                    question_id: None,
                    choice_index: None,
                });
            }
            TaskKind::Mcq => {
                let rec: McqRecord = serde_json::from_str(trimmed).map_err(malformed)?;
                let split = split_mcq(&rec).map_err(|e| Error::MalformedLine {
                    path: path.to_path_buf(),
                    line: line_no,
                    message: e.to_string(),
                })?;
                instances.extend(split);
            }
        }
    }
    if instances.is_empty() {
        return Err(Error::NoInstances {
            path: path.to_path_buf(),
        });
    }
    Ok(instances)
}

/// SHA-256 over the three dataset files, each length-prefixed.
pub fn content_hash(train: &[u8], test: &[u8], meta: &[u8]) -> String {
    let mut hasher = Sha256::new();
    for part in [train, test, meta] {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    hex::encode(hasher.finalize())
}

/// Raw bytes of a dataset directory, kept so the content hash is computed
/// over exactly what was parsed.
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub train: Vec<u8>,
    pub test: Vec<u8>,
    pub meta: Vec<u8>,
}

impl DatasetFiles {
    pub fn read(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<Vec<u8>> {
            let path = dir.join(name);
            std::fs::read(&path).map_err(|e| Error::io(path, e))
        };
        Ok(DatasetFiles {
            train: read("train.jsonl")?,
            test: read("test.jsonl")?,
            meta: read("meta.json")?,
        })
    }

    pub fn content_hash(&self) -> String {
        content_hash(&self.train, &self.test, &self.meta)
    }

    pub fn meta(&self) -> Result<DatasetMeta> {
        serde_json::from_slice(&self.meta).map_err(|e| Error::MalformedLine {
            path: PathBuf::from("meta.json"),
            line: e.line(),
            message: e.to_string(),
        })
    }

    /// Parses and validates. `origin` prefixes diagnostic paths.
    pub fn parse(&self, name: &str, origin: &Path) -> Result<Dataset> {
        let kind = self.meta()?.task_kind;
        let as_text = |bytes: &[u8], file: &str| -> Result<String> {
            String::from_utf8(bytes.to_vec()).map_err(|e| Error::MalformedLine {
                path: origin.join(file),
                line: 0,
                message: format!("not UTF-8: {e}"),
            })
        };
        let train = parse_split(
            &as_text(&self.train, "train.jsonl")?,
            &origin.join("train.jsonl"),
            kind,
        )?;
        let test = parse_split(
            &as_text(&self.test, "test.jsonl")?,
            &origin.join("test.jsonl"),
            kind,
        )?;
        Dataset::from_splits(name, kind, train, test)
    }
}

/// Loads `<dir>/{train,test}.jsonl` with the task kind from `meta.json`.
/// The dataset is named after the directory.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let files = DatasetFiles::read(dir)?;
    files.parse(&dir_name(dir), dir)
}

/// Loads a dataset directory with an explicit record format, ignoring
/// `meta.json`.
pub fn load_dataset_as(dir: &Path, kind: TaskKind) -> Result<Dataset> {
    let read = |name: &str| -> Result<(String, PathBuf)> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok((text, path))
    };
    let (train_text, train_path) = read("train.jsonl")?;
    let (test_text, test_path) = read("test.jsonl")?;
    let train = parse_split(&train_text, &train_path, kind)?;
    let test = parse_split(&test_text, &test_path, kind)?;
    Dataset::from_splits(&dir_name(dir), kind, train, test)
}

fn dir_name(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "dataset".to_string())
}

/// One MCQ question group: its id and the indices of its instances in the
/// split, ordered by choice index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuestionGroup {
    pub question_id: String,
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct Dataset {
    name: String,
    task_kind: TaskKind,
    label_set: Vec<String>,
    train: Vec<Instance>,
    test: Vec<Instance>,
    train_index: HashMap<String, usize>,
    test_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    name: String,
    task_kind: TaskKind,
    label_set: Vec<String>,
    train: Vec<Instance>,
    test: Vec<Instance>,
}

impl TryFrom<DatasetRepr> for Dataset {
    type Error = Error;

    fn try_from(r: DatasetRepr) -> Result<Self> {
        let ds = Dataset::from_splits(&r.name, r.task_kind, r.train, r.test)?;
        if ds.label_set != r.label_set {
            return Err(Error::InvalidDataset(
                "label_set does not match train labels".into(),
            ));
        }
        Ok(ds)
    }
}

impl From<Dataset> for DatasetRepr {
    fn from(d: Dataset) -> Self {
        DatasetRepr {
            name: d.name,
            task_kind: d.task_kind,
            label_set: d.label_set,
            train: d.train,
            test: d.test,
        }
    }
}

impl Dataset {
    /// Validates the splits and infers the label set as the sorted distinct
    /// train labels.
    pub fn from_splits(
        name: &str,
        task_kind: TaskKind,
        train: Vec<Instance>,
        test: Vec<Instance>,
    ) -> Result<Self> {
        let label_set: Vec<String> = train
            .iter()
            .map(|i| i.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if label_set.is_empty() {
            return Err(Error::InvalidDataset("empty train split".into()));
        }
        let labels: BTreeSet<&str> = label_set.iter().map(String::as_str).collect();
        if let Some(bad) = test.iter().find(|i| !labels.contains(i.label.as_str())) {
            return Err(Error::UnknownTestLabel {
                id: bad.id.clone(),
                label: bad.label.clone(),
            });
        }
        let train_index = index_split(&train, Split::Train)?;
        let test_index = index_split(&test, Split::Test)?;
        let ds = Dataset {
            name: name.to_string(),
            task_kind,
            label_set,
            train,
            test,
            train_index,
            test_index,
        };
        ds.validate_grouping()?;
        Ok(ds)
    }

    fn validate_grouping(&self) -> Result<()> {
        for split in [Split::Train, Split::Test] {
            for inst in self.split(split) {
                if inst.question_id.is_some() != inst.choice_index.is_some() {
                    return Err(Error::InvalidDataset(format!(
                        "instance {:?}: question_id and choice_index must be both present or both absent",
                        inst.id
                    )));
                }
                if self.task_kind == TaskKind::Mcq && inst.question_id.is_none() {
                    return Err(Error::InvalidDataset(format!(
                        "MCQ instance {:?} has no question group",
                        inst.id
                    )));
                }
            }
        }
        if self.task_kind != TaskKind::Mcq {
            return Ok(());
        }
        if self.label_set != [FALSE_LABEL, TRUE_LABEL] {
            return Err(Error::InvalidDataset(format!(
                "MCQ label set must be {{false, true}}, got {:?}",
                self.label_set
            )));
        }
        for split in [Split::Train, Split::Test] {
            for group in self.question_groups(split) {
                let members = &group.members;
                let trues = members
                    .iter()
                    .filter(|&&i| self.split(split)[i].label == TRUE_LABEL)
                    .count();
                if members.len() < 2 || trues != 1 {
                    return Err(Error::InvalidDataset(format!(
                        "question {:?} in {split} split has {} choices and {trues} true labels",
                        group.question_id,
                        members.len()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn label_set(&self) -> &[String] {
        &self.label_set
    }

    pub fn train(&self) -> &[Instance] {
        &self.train
    }

    pub fn test(&self) -> &[Instance] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Instance] {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    pub fn get(&self, split: Split, id: &str) -> Option<&Instance> {
        let index = match split {
            Split::Train => &self.train_index,
            Split::Test => &self.test_index,
        };
        index.get(id).map(|&i| &self.split(split)[i])
    }

    pub fn with_name(mut self, name: &str) -> Self {
        self.name = name.to_string();
        self
    }

    /// MCQ question groups in order of first appearance. Empty for CLS.
    pub fn question_groups(&self, split: Split) -> Vec<QuestionGroup> {
        let mut order: Vec<QuestionGroup> = Vec::new();
        let mut pos: HashMap<&str, usize> = HashMap::new();
        for (i, inst) in self.split(split).iter().enumerate() {
            let Some(qid) = inst.question_id.as_deref() else {
                continue;
            };
            let slot = *pos.entry(qid).or_insert_with(|| {
                order.push(QuestionGroup {
                    question_id: qid.to_string(),
                    members: Vec::new(),
                });
                order.len() - 1
            });
            order[slot].members.push(i);
        }
        let instances = self.split(split);
        for g in &mut order {
            g.members.sort_by_key(|&i| instances[i].choice_index);
        }
        order
    }

    /// Renders a split in its native record format.
    pub fn split_to_jsonl(&self, split: Split) -> String {
        let mut out = String::new();
        match self.task_kind {
            TaskKind::Cls => {
                for inst in self.split(split) {
                    let rec = ClsRecord {
                        id: inst.id.clone(),
                        premise: inst.premise.clone(),
                        hypothesis: inst.hypothesis.clone(),
                        label: inst.label.clone(),
                    };
                    out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                    out.push('\n');
                }
            }
            TaskKind::Mcq => {
                let instances = self.split(split);
                for group in self.question_groups(split) {
                    let members: Vec<&Instance> =
                        group.members.iter().map(|&i| &instances[i]).collect();
                    let answer = members
                        .iter()
                        .position(|m| m.label == TRUE_LABEL)
                        .unwrap_or(0) as i64;
                    let rec = McqRecord {
                        id: group.question_id.clone(),
                        context: members[0].premise.clone(),
                        choices: members.iter().map(|m| m.hypothesis.clone()).collect(),
                        answer,
                    };
                    out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn meta_json(&self) -> String {
        serde_json::to_string(&DatasetMeta {
            task_kind: self.task_kind,
        })
        .expect("meta serializes")
    }

    /// Writes the standard dataset directory layout.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| -> Result<()> {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(path, e))
        };
        write("train.jsonl", self.split_to_jsonl(Split::Train))?;
        write("test.jsonl", self.split_to_jsonl(Split::Test))?;
        write("meta.json", self.meta_json() + "\n")
    }
}

fn index_split(instances: &[Instance], split: Split) -> Result<HashMap<String, usize>> {
    let mut index = HashMap::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        if index.insert(inst.id.clone(), i).is_some() {
            return Err(Error::DuplicateId {
                split: split.to_string(),
                id: inst.id.clone(),
            });
        }
    }
    Ok(index)
}

/// Blanks premises of the test split, and of the train split when
/// `include_train` is set. Ids, labels and grouping are unchanged.
pub fn strip_premises(dataset: &Dataset, include_train: bool) -> Dataset {
    let strip = |instances: &[Instance]| -> Vec<Instance> {
        instances
            .iter()
            .map(|i| Instance {
                premise: String::new(),
                ..i.clone()
            })
            .collect()
    };
    let mut out = dataset.clone();
    out.test = strip(&dataset.test);
    if include_train {
        out.train = strip(&dataset.train);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cls(id: &str, p: &str, h: &str, l: &str) -> Instance {
        Instance {
            id: id.into(),
            premise: p.into(),
            hypothesis: h.into(),
            label: l.into(),
            question_id: None,
            choice_index: None,
        }
    }

    fn rocstory() -> McqRecord {
        McqRecord {
            id: "roc1".into(),
            context: "Rick grew up in a troubled household.".into(),
            choices: vec!["He joined a gang.".into(), "He is happy now.".into()],
            answer: 1,
        }
    }

    #[test]
    fn snli_record_parses() {
        let line = r#"{"id":"s1","premise":"A swimmer playing in the surf watches a low flying airplane headed inland.","hypothesis":"Someone is swimming in the sea.","label":"entailment"}"#;
        let got = parse_split(line, Path::new("train.jsonl"), TaskKind::Cls).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].hypothesis, "Someone is swimming in the sea.");
        assert_eq!(got[0].label, "entailment");
        assert_eq!(got[0].question_id, None);
    }

    #[test]
    fn empty_file_is_rejected() {
        let err = parse_split("", Path::new("t.jsonl"), TaskKind::Cls).unwrap_err();
        assert!(err.to_string().contains("no instances"), "{err}");
        let err = parse_split("\n  \n", Path::new("t.jsonl"), TaskKind::Mcq).unwrap_err();
        assert!(matches!(err, Error::NoInstances { .. }));
    }

    #[test]
    fn answer_out_of_range() {
        let line = r#"{"id":"q","context":"c","choices":["a","b","c"],"answer":5}"#;
        let err = parse_split(line, Path::new("t.jsonl"), TaskKind::Mcq).unwrap_err();
        assert!(
            err.to_string().contains("answer index out of range"),
            "{err}"
        );
        let neg = McqRecord {
            answer: -1,
            ..rocstory()
        };
        assert!(matches!(
            split_mcq(&neg),
            Err(Error::AnswerOutOfRange { .. })
        ));
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = "{\"id\":\"a\",\"premise\":\"p\",\"hypothesis\":\"h\",\"label\":\"x\"}\n\n{oops";
        match parse_split(text, Path::new("train.jsonl"), TaskKind::Cls) {
            Err(Error::MalformedLine { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rocstory_split() {
        let got = split_mcq(&rocstory()).unwrap();
        assert_eq!(got.len(), 2);
        assert_eq!(got[0].hypothesis, "He joined a gang.");
        assert_eq!(got[0].label, "false");
        assert_eq!(got[1].hypothesis, "He is happy now.");
        assert_eq!(got[1].label, "true");
        assert_eq!(got[1].id, "roc1#1");
        assert_eq!(got[1].question_id.as_deref(), Some("roc1"));
        assert_eq!(got[1].choice_index, Some(1));
        assert!(got
            .iter()
            .all(|i| i.premise == "Rick grew up in a troubled household."));
    }

    #[test]
    fn identical_choices_allowed() {
        let q = McqRecord {
            id: "q".into(),
            context: "c".into(),
            choices: vec!["same".into(), "same".into()],
            answer: 0,
        };
        let labels: Vec<_> = split_mcq(&q)
            .unwrap()
            .into_iter()
            .map(|i| i.label)
            .collect();
        assert_eq!(labels, ["true", "false"]);
    }

    #[test]
    fn single_choice_rejected() {
        let q = McqRecord {
            choices: vec!["only".into()],
            answer: 0,
            ..rocstory()
        };
        assert!(matches!(split_mcq(&q), Err(Error::TooFewChoices { .. })));
    }

    #[test]
    fn label_set_sorted_and_test_labels_checked() {
        let train = vec![
            cls("1", "p", "h", "neutral"),
            cls("2", "p", "h", "contradiction"),
        ];
        let ds = Dataset::from_splits(
            "d",
            TaskKind::Cls,
            train.clone(),
            vec![cls("t", "p", "h", "neutral")],
        )
        .unwrap();
        assert_eq!(ds.label_set(), ["contradiction", "neutral"]);
        let err = Dataset::from_splits(
            "d",
            TaskKind::Cls,
            train,
            vec![cls("t", "p", "h", "entailment")],
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownTestLabel { .. }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let train = vec![cls("1", "p", "h", "a"), cls("1", "p", "h", "b")];
        let err = Dataset::from_splits("d", TaskKind::Cls, train, vec![cls("t", "p", "h", "a")])
            .unwrap_err();
        assert!(matches!(err, Error::DuplicateId { .. }));
    }

    #[test]
    fn mcq_label_set() {
        let inst = split_mcq(&rocstory()).unwrap();
        let ds = Dataset::from_splits("roc", TaskKind::Mcq, inst.clone(), inst).unwrap();
        assert_eq!(ds.label_set(), ["false", "true"]);
        assert_eq!(ds.question_groups(Split::Test).len(), 1);
    }

    #[test]
    fn strip_premises_is_idempotent_and_preserves_grouping() {
        let inst = split_mcq(&rocstory()).unwrap();
        let ds = Dataset::from_splits("roc", TaskKind::Mcq, inst.clone(), inst).unwrap();
        let once = strip_premises(&ds, false);
        assert!(once.test().iter().all(|i| i.premise.is_empty()));
        assert!(once.train().iter().all(|i| !i.premise.is_empty()));
        assert_eq!(once.test()[1].hypothesis, "He is happy now.");
        assert_eq!(once.test()[1].question_id.as_deref(), Some("roc1"));
        assert_eq!(strip_premises(&once, false), once);
        let both = strip_premises(&ds, true);
        assert!(both.train().iter().all(|i| i.premise.is_empty()));
    }

    #[test]
    fn dataset_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let inst = split_mcq(&rocstory()).unwrap();
        let ds = Dataset::from_splits("roc", TaskKind::Mcq, inst.clone(), inst).unwrap();
        let target = dir.path().join("roc");
        ds.write_dir(&target).unwrap();
        let back = load_dataset(&target).unwrap();
        assert_eq!(back, ds);
        let files = DatasetFiles::read(&target).unwrap();
        assert_eq!(files.content_hash().len(), 64);
    }

    #[test]
    fn missing_test_file_names_it() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train.jsonl"), "").unwrap();
        std::fs::write(dir.path().join("meta.json"), r#"{"task_kind":"CLS"}"#).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("test.jsonl"), "{err}");
        assert!(err.is_validation());
    }

    fn arb_question() -> impl Strategy<Value = McqRecord> {
        (2usize..=5, "[a-z]{1,6}", "[a-z ]{0,20}")
            .prop_flat_map(|(k, id, ctx)| {
                (
                    Just(id),
                    Just(ctx),
                    proptest::collection::vec("[a-z ]{0,12}", k),
                    0..k as i64,
                )
            })
            .prop_map(|(id, context, choices, answer)| McqRecord {
                id,
                context,
                choices,
                answer,
            })
    }

    proptest! {
        #[test]
        fn mcq_split_has_exactly_one_true(q in arb_question()) {
            let inst = split_mcq(&q).unwrap();
            prop_assert_eq!(inst.len(), q.choices.len());
            prop_assert_eq!(inst.iter().filter(|i| i.label == TRUE_LABEL).count(), 1);
            prop_assert_eq!(&inst[q.answer as usize].label, TRUE_LABEL);
        }

        #[test]
        fn mcq_jsonl_round_trip(qs in proptest::collection::vec(arb_question(), 1..6)) {
            let mut seen = BTreeSet::new();
            let qs: Vec<_> = qs.into_iter().filter(|q| seen.insert(q.id.clone())).collect();
            let text: String = qs.iter().map(|q| serde_json::to_string(q).unwrap() + "\n").collect();
            let inst = parse_split(&text, Path::new("x"), TaskKind::Mcq).unwrap();
            let total: usize = qs.iter().map(|q| q.choices.len()).sum();
            prop_assert_eq!(inst.len(), total);
            prop_assert_eq!(inst.iter().filter(|i| i.label == TRUE_LABEL).count(), qs.len());
            let ds = Dataset::from_splits("d", TaskKind::Mcq, inst.clone(), inst).unwrap();
            let again = parse_split(&ds.split_to_jsonl(Split::Test), Path::new("x"), TaskKind::Mcq).unwrap();
            prop_assert_eq!(again, ds.test().to_vec());
        }
    }
}
