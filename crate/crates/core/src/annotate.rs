//! Rule-based linguistic feature annotators.
//!
//! Every instance is mapped to the set of feature values it carries:
//! WORD (one per distinct word), SENTIMENT (sign of the summed lexicon
//! polarity), TENSE (future > past > present heuristic), NEGATION, OVERLAP
//! (a non-stopword shared by premise and hypothesis), NER (gazetteer,
//! capitalization and numeral rules) and TYPO (out-of-dictionary word).
//!
//! For MCQ datasets the premise is shared by all choices of a question, so
//! every annotator except OVERLAP reads only the hypothesis.
//!
//! Externally produced annotations can be supplied through a JSONL sidecar,
//! see [`Sidecar`].

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{Dataset, Split, TaskKind};
use crate::error::{Error, Result};
use crate::tokenize::{Token, TokenizedInstance, Tokenizer};

/// Value carried by the presence-only kinds (NEGATION, OVERLAP, TYPO).
pub const PRESENT: &str = "present";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum FeatureKind {
    Word,
    Sentiment,
    Tense,
    Negation,
    Overlap,
    Ner,
    Typo,
}

impl FeatureKind {
    pub const ALL: [FeatureKind; 7] = [
        FeatureKind::Word,
        FeatureKind::Sentiment,
        FeatureKind::Tense,
        FeatureKind::Negation,
        FeatureKind::Overlap,
        FeatureKind::Ner,
        FeatureKind::Typo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Word => "WORD",
            FeatureKind::Sentiment => "SENTIMENT",
            FeatureKind::Tense => "TENSE",
            FeatureKind::Negation => "NEGATION",
            FeatureKind::Overlap => "OVERLAP",
            FeatureKind::Ner => "NER",
            FeatureKind::Typo => "TYPO",
        }
    }

    pub fn is_marker(self) -> bool {
        matches!(
            self,
            FeatureKind::Negation | FeatureKind::Overlap | FeatureKind::Typo
        )
    }

    fn allowed_values(self) -> Option<&'static [&'static str]> {
        match self {
            FeatureKind::Word => None,
            FeatureKind::Sentiment => Some(&["positive", "negative", "neutral"]),
            FeatureKind::Tense => Some(&["past", "present", "future"]),
            FeatureKind::Ner => Some(&["PER", "ORG", "LOC", "TIME", "CARDINAL"]),
            FeatureKind::Negation | FeatureKind::Overlap | FeatureKind::Typo => Some(&[PRESENT]),
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::UnknownFeatureKind(s.to_string()))
    }
}

/// One feature value acting as a filter key, e.g. `WORD:no` or `NEGATION`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFeature")]
pub struct FeatureSpec {
    pub kind: FeatureKind,
    pub value: String,
}

#[derive(Debug, Clone, Deserialize)]
struct RawFeature {
    kind: String,
    value: String,
}

impl TryFrom<RawFeature> for FeatureSpec {
    type Error = Error;

    fn try_from(raw: RawFeature) -> Result<Self> {
        FeatureSpec::new(raw.kind.parse()?, &raw.value)
    }
}

impl FeatureSpec {
    /// Validates `value` against the domain of `kind`.
    pub fn new(kind: FeatureKind, value: &str) -> Result<Self> {
        let invalid = || Error::InvalidFeatureValue {
            kind: kind.to_string(),
            value: value.to_string(),
        };
        match kind.allowed_values() {
            Some(allowed) => {
                if !allowed.contains(&value) {
                    return Err(invalid());
                }
            }
            None => {
                let folded = caseless::default_case_fold_str(value);
                if value.is_empty() || value.chars().any(char::is_whitespace) || folded != value {
                    return Err(invalid());
                }
            }
        }
        Ok(FeatureSpec {
            kind,
            value: value.to_string(),
        })
    }

    pub fn word(word: &str) -> Self {
        FeatureSpec {
            kind: FeatureKind::Word,
            value: word.to_string(),
        }
    }

    pub fn marker(kind: FeatureKind) -> Self {
        debug_assert!(kind.is_marker());
        FeatureSpec {
            kind,
            value: PRESENT.to_string(),
        }
    }

    fn of(kind: FeatureKind, value: &str) -> Self {
        FeatureSpec {
            kind,
            value: value.to_string(),
        }
    }

    /// File-name safe rendering, e.g. `WORD-no`.
    pub fn slug(&self) -> String {
        let raw = if self.kind.is_marker() {
            self.kind.as_str().to_string()
        } else {
            format!("{}-{}", self.kind, self.value)
        };
        raw.chars()
            .map(|c| {
                if c.is_alphanumeric() || c == '-' {
                    c
                } else {
                    '_'
                }
            })
            .collect()
    }
}

impl Ord for FeatureSpec {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.kind.as_str(), &self.value).cmp(&(other.kind.as_str(), &other.value))
    }
}

impl PartialOrd for FeatureSpec {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for FeatureSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.is_marker() {
            write!(f, "{}", self.kind)
        } else {
            write!(f, "{}:{}", self.kind, self.value)
        }
    }
}

/// Parses `KIND:value` or a bare marker kind such as `NEGATION`.
impl FromStr for FeatureSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            Some((kind, value)) => FeatureSpec::new(kind.parse()?, value),
            None => {
                let kind: FeatureKind = s.parse()?;
                if kind.is_marker() {
                    Ok(FeatureSpec::marker(kind))
                } else {
                    Err(Error::InvalidFeatureValue {
                        kind: kind.to_string(),
                        value: String::new(),
                    })
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scope {
    Both,
    HypothesisOnly,
}

impl Scope {
    pub fn for_task(kind: TaskKind) -> Scope {
        match kind {
            TaskKind::Cls => Scope::Both,
            TaskKind::Mcq => Scope::HypothesisOnly,
        }
    }

    fn sides(self, tokens: &TokenizedInstance) -> Vec<&[Token]> {
        match self {
            Scope::Both => vec![&tokens.premise_tokens, &tokens.hypothesis_tokens],
            Scope::HypothesisOnly => vec![&tokens.hypothesis_tokens],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NerCategory {
    Per,
    Org,
    Loc,
    Time,
    Cardinal,
}

impl NerCategory {
    pub const ALL: [NerCategory; 5] = [
        NerCategory::Per,
        NerCategory::Org,
        NerCategory::Loc,
        NerCategory::Time,
        NerCategory::Cardinal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            NerCategory::Per => "PER",
            NerCategory::Org => "ORG",
            NerCategory::Loc => "LOC",
            NerCategory::Time => "TIME",
            NerCategory::Cardinal => "CARDINAL",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Gazetteer {
    any_case: HashSet<String>,
    capitalized_only: HashSet<String>,
}

impl Gazetteer {
    fn parse(text: &str) -> Self {
        let mut g = Gazetteer::default();
        for line in resource_lines(text) {
            match line.strip_prefix('^') {
                Some(rest) => g.capitalized_only.insert(fold(rest)),
                None => g.any_case.insert(fold(line)),
            };
        }
        g
    }

    pub fn matches(&self, token: &Token) -> bool {
        self.any_case.contains(&token.lower)
            || (token.is_capitalized && self.capitalized_only.contains(&token.lower))
    }

    fn entries(&self) -> impl Iterator<Item = &String> {
        self.any_case.iter().chain(&self.capitalized_only)
    }
}

/// Lexicons and word lists driving the annotators. Read-only after load.
#[derive(Debug, Clone)]
pub struct ResourceBundle {
    pub sentiment: HashMap<String, i8>,
    pub stopwords: HashSet<String>,
    pub dictionary: HashSet<String>,
    pub negation_words: HashSet<String>,
    pub gazetteers: BTreeMap<NerCategory, Gazetteer>,
    pub irregular_past_verbs: HashSet<String>,
    pub future_auxiliaries: HashSet<String>,
    pub verbs: HashSet<String>,
    gazetteer_words: HashSet<String>,
    hash: String,
}

const SENTIMENT_FILE: &str = "sentiment.tsv";
const STOPWORDS_FILE: &str = "stopwords.txt";
const DICTIONARY_FILE: &str = "dictionary.txt";
const NEGATION_FILE: &str = "negation.txt";
const IRREGULAR_PAST_FILE: &str = "irregular-past.txt";
const FUTURE_FILE: &str = "future-auxiliaries.txt";
const VERBS_FILE: &str = "verbs.txt";

fn gazetteer_file(cat: NerCategory) -> String {
    format!("gazetteer-{}.txt", cat.as_str())
}

fn resource_file_names() -> Vec<String> {
    let mut names: Vec<String> = [
        SENTIMENT_FILE,
        STOPWORDS_FILE,
        DICTIONARY_FILE,
        NEGATION_FILE,
        IRREGULAR_PAST_FILE,
        FUTURE_FILE,
        VERBS_FILE,
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    names.extend(NerCategory::ALL.iter().map(|c| gazetteer_file(*c)));
    names.sort();
    names
}

const BUILTIN: &[(&str, &str)] = &[
    (
        "dictionary.txt",
        include_str!("../resources/dictionary.txt"),
    ),
    (
        "future-auxiliaries.txt",
        include_str!("../resources/future-auxiliaries.txt"),
    ),
    (
        "gazetteer-CARDINAL.txt",
        include_str!("../resources/gazetteer-CARDINAL.txt"),
    ),
    (
        "gazetteer-LOC.txt",
        include_str!("../resources/gazetteer-LOC.txt"),
    ),
    (
        "gazetteer-ORG.txt",
        include_str!("../resources/gazetteer-ORG.txt"),
    ),
    (
        "gazetteer-PER.txt",
        include_str!("../resources/gazetteer-PER.txt"),
    ),
    (
        "gazetteer-TIME.txt",
        include_str!("../resources/gazetteer-TIME.txt"),
    ),
    (
        "irregular-past.txt",
        include_str!("../resources/irregular-past.txt"),
    ),
    ("negation.txt", include_str!("../resources/negation.txt")),
    ("sentiment.tsv", include_str!("../resources/sentiment.tsv")),
    ("stopwords.txt", include_str!("../resources/stopwords.txt")),
    ("verbs.txt", include_str!("../resources/verbs.txt")),
];

fn fold(s: &str) -> String {
    caseless::default_case_fold_str(s.trim())
}

fn resource_lines(text: &str) -> impl Iterator<Item = &str> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
}

fn word_set(text: &str) -> HashSet<String> {
    resource_lines(text).map(fold).collect()
}

impl ResourceBundle {
    /// The bundle compiled into the binary.
    pub fn builtin() -> Self {
        let files: BTreeMap<String, String> = BUILTIN
            .iter()
            .map(|(n, t)| (n.to_string(), t.to_string()))
            .collect();
        Self::from_files(&files, Path::new("<builtin>")).expect("builtin resources are valid")
    }

    /// Loads every resource file from `dir`. All files are required.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut files = BTreeMap::new();
        for name in resource_file_names() {
            let path = dir.join(&name);
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                    return Err(Error::MissingResource { path })
                }
                Err(e) => return Err(Error::io(path, e)),
            };
            files.insert(name, text);
        }
        Self::from_files(&files, dir)
    }

    fn from_files(files: &BTreeMap<String, String>, origin: &Path) -> Result<Self> {
        let get = |name: &str| -> Result<&str> {
            files
                .get(name)
                .map(String::as_str)
                .ok_or_else(|| Error::MissingResource {
                    path: origin.join(name),
                })
        };
        let sentiment = parse_sentiment(get(SENTIMENT_FILE)?, &origin.join(SENTIMENT_FILE))?;
        let mut gazetteers = BTreeMap::new();
        for cat in NerCategory::ALL {
            gazetteers.insert(cat, Gazetteer::parse(get(&gazetteer_file(cat))?));
        }
        let mut hasher = Sha256::new();
        for (name, text) in files {
            hasher.update((name.len() as u64).to_le_bytes());
            hasher.update(name.as_bytes());
            hasher.update((text.len() as u64).to_le_bytes());
            hasher.update(text.as_bytes());
        }
        let gazetteer_words = gazetteers
            .values()
            .flat_map(|g| g.entries().cloned())
            .collect();
        Ok(ResourceBundle {
            sentiment,
            gazetteer_words,
            stopwords: word_set(get(STOPWORDS_FILE)?),
            dictionary: word_set(get(DICTIONARY_FILE)?),
            negation_words: word_set(get(NEGATION_FILE)?),
            gazetteers,
            irregular_past_verbs: word_set(get(IRREGULAR_PAST_FILE)?),
            future_auxiliaries: word_set(get(FUTURE_FILE)?),
            verbs: word_set(get(VERBS_FILE)?),
            hash: hex::encode(hasher.finalize()),
        })
    }

    /// Writes the bundle's source files to `dir`.
    pub fn write_builtin(dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in BUILTIN {
            let path = dir.join(name);
            std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    /// SHA-256 over the source files, sorted by name.
    pub fn content_hash(&self) -> &str {
        &self.hash
    }

    pub fn polarity(&self, word: &str) -> i8 {
        self.sentiment.get(word).copied().unwrap_or(0)
    }

    fn gazetteer(&self, cat: NerCategory) -> &Gazetteer {
        &self.gazetteers[&cat]
    }

    /// Function words, verbs and polar words: tokens that are capitalized
    /// at sentence start for grammatical reasons only.
    fn is_common_word(&self, word: &str) -> bool {
        self.stopwords.contains(word)
            || self.verbs.contains(word)
            || self.irregular_past_verbs.contains(word)
            || self.polarity(word) != 0
    }

    fn in_any_gazetteer(&self, word: &str) -> bool {
        self.gazetteer_words.contains(word)
    }
}

fn parse_sentiment(text: &str, path: &Path) -> Result<HashMap<String, i8>> {
    let mut out = HashMap::new();
    for (idx, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let bad = |message: String| Error::InvalidResource {
            path: path.to_path_buf(),
            line: idx + 1,
            message,
        };
        let (word, pol) = trimmed
            .split_once('\t')
            .ok_or_else(|| bad("expected <word>\\t<polarity>".into()))?;
        let pol: i8 = match pol.trim() {
            "-1" => -1,
            "0" => 0,
            "1" | "+1" => 1,
            other => return Err(bad(format!("polarity must be -1, 0 or 1, got {other:?}"))),
        };
        out.insert(fold(word), pol);
    }
    Ok(out)
}

fn scoped(tokens: &TokenizedInstance, scope: Scope) -> impl Iterator<Item = &Token> {
    scope.sides(tokens).into_iter().flatten()
}

/// Distinct lowercase alphabetic tokens in scope, as WORD features. The
/// caller restricts them to the candidate vocabulary.
pub fn annotate_word(tokens: &TokenizedInstance, scope: Scope) -> BTreeSet<FeatureSpec> {
    scoped(tokens, scope)
        .filter(|t| t.is_alpha)
        .map(|t| FeatureSpec::word(&t.lower))
        .collect()
}

pub fn annotate_sentiment(
    tokens: &TokenizedInstance,
    resources: &ResourceBundle,
    scope: Scope,
) -> FeatureSpec {
    let total: i64 = scoped(tokens, scope)
        .map(|t| i64::from(resources.polarity(&t.lower)))
        .sum();
    let value = match total.signum() {
        1 => "positive",
        -1 => "negative",
        _ => "neutral",
    };
    FeatureSpec::of(FeatureKind::Sentiment, value)
}

fn is_regular_past(token: &Token, resources: &ResourceBundle) -> bool {
    let w = &token.lower;
    token.is_plain_word()
        && w.chars().count() >= 4
        && w.ends_with("ed")
        && !w.ends_with("eed")
        && !resources.stopwords.contains(w)
        && !resources.in_any_gazetteer(w)
}

pub fn annotate_tense(
    tokens: &TokenizedInstance,
    resources: &ResourceBundle,
    scope: Scope,
) -> Option<FeatureSpec> {
    let (mut future, mut past, mut present) = (false, false, false);
    for side in scope.sides(tokens) {
        for (i, tok) in side.iter().enumerate() {
            let w = tok.lower.as_str();
            if resources.future_auxiliaries.contains(w) {
                // The first word after the auxiliary (skipping negation) is
                // taken as its verb.
                let next = side[i + 1..]
                    .iter()
                    .find(|t| !resources.negation_words.contains(&t.lower));
                if next.is_some_and(|t| t.is_plain_word()) {
                    future = true;
                }
            }
            if resources.irregular_past_verbs.contains(w) || is_regular_past(tok, resources) {
                past = true;
            } else if resources.verbs.contains(w) {
                present = true;
            }
        }
    }
    let value = if future {
        "future"
    } else if past {
        "past"
    } else if present {
        "present"
    } else {
        return None;
    };
    Some(FeatureSpec::of(FeatureKind::Tense, value))
}

pub fn annotate_negation(
    tokens: &TokenizedInstance,
    resources: &ResourceBundle,
    scope: Scope,
) -> Option<FeatureSpec> {
    scoped(tokens, scope)
        .any(|t| resources.negation_words.contains(&t.lower))
        .then(|| FeatureSpec::marker(FeatureKind::Negation))
}

/// Always reads both sides, whatever the task kind.
pub fn annotate_overlap(
    tokens: &TokenizedInstance,
    resources: &ResourceBundle,
) -> Option<FeatureSpec> {
    let content = |side: &[Token]| -> HashSet<String> {
        side.iter()
            .filter(|t| t.is_plain_word() && !resources.stopwords.contains(&t.lower))
            .map(|t| t.lower.clone())
            .collect()
    };
    let premise = content(&tokens.premise_tokens);
    tokens
        .hypothesis_tokens
        .iter()
        .any(|t| premise.contains(&t.lower))
        .then(|| FeatureSpec::marker(FeatureKind::Overlap))
}

fn is_numeral(surface: &str) -> bool {
    let mut saw_digit = false;
    let mut prev_sep = true;
    for c in surface.chars() {
        if c.is_ascii_digit() {
            saw_digit = true;
            prev_sep = false;
        } else if (c == '.' || c == ',') && !prev_sep {
            prev_sep = true;
        } else {
            return false;
        }
    }
    saw_digit && !prev_sep
}

pub fn annotate_ner(
    tokens: &TokenizedInstance,
    resources: &ResourceBundle,
    scope: Scope,
) -> BTreeSet<FeatureSpec> {
    let mut found = BTreeSet::new();
    for side in scope.sides(tokens) {
        let mut sentence_start = true;
        for tok in side {
            if is_numeral(&tok.surface) || resources.gazetteer(NerCategory::Cardinal).matches(tok) {
                found.insert(NerCategory::Cardinal);
            }
            if resources.gazetteer(NerCategory::Time).matches(tok) {
                found.insert(NerCategory::Time);
            }
            // A sentence-initial capital is only trusted for words that are
            // not ordinary vocabulary.
            let name_position =
                tok.is_capitalized && (!sentence_start || !resources.is_common_word(&tok.lower));
            if name_position {
                for cat in [NerCategory::Per, NerCategory::Org, NerCategory::Loc] {
                    if resources.gazetteer(cat).matches(tok) {
                        found.insert(cat);
                    }
                }
            }
            sentence_start = matches!(tok.surface.as_str(), "." | "!" | "?");
        }
    }
    found
        .into_iter()
        .map(|c| FeatureSpec::of(FeatureKind::Ner, c.as_str()))
        .collect()
}

pub fn annotate_typo(
    tokens: &TokenizedInstance,
    resources: &ResourceBundle,
    scope: Scope,
) -> Option<FeatureSpec> {
    scoped(tokens, scope)
        .any(|t| {
            t.is_plain_word()
                && t.surface.chars().count() >= 3
                && !t.is_capitalized
                && !resources.dictionary.contains(&t.lower)
        })
        .then(|| FeatureSpec::marker(FeatureKind::Typo))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub id: String,
    pub features: BTreeSet<FeatureSpec>,
}

impl AnnotationSet {
    pub fn contains(&self, feature: &FeatureSpec) -> bool {
        self.features.contains(feature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotateConfig {
    /// Minimum number of train instances a word must occur in to become a
    /// WORD candidate.
    pub vocab_min_freq: usize,
    pub tokenizer: Tokenizer,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig {
            vocab_min_freq: 5,
            tokenizer: Tokenizer::default(),
        }
    }
}

/// Per-split annotation sets keyed by instance id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Annotations {
    pub train: BTreeMap<String, AnnotationSet>,
    pub test: BTreeMap<String, AnnotationSet>,
}

impl Annotations {
    pub fn split(&self, split: Split) -> &BTreeMap<String, AnnotationSet> {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }

    fn split_mut(&mut self, split: Split) -> &mut BTreeMap<String, AnnotationSet> {
        match split {
            Split::Train => &mut self.train,
            Split::Test => &mut self.test,
        }
    }

    pub fn get(&self, split: Split, id: &str) -> Option<&AnnotationSet> {
        self.split(split).get(id)
    }

    /// Every feature value that occurs in both splits.
    pub fn shared_features(&self) -> BTreeSet<FeatureSpec> {
        let collect = |m: &BTreeMap<String, AnnotationSet>| -> BTreeSet<FeatureSpec> {
            m.values()
                .flat_map(|a| a.features.iter().cloned())
                .collect()
        };
        let train = collect(&self.train);
        let test = collect(&self.test);
        train.intersection(&test).cloned().collect()
    }
}

/// Annotates one tokenized instance, WORD features restricted to `vocab`.
pub fn annotate_instance(
    tokens: &TokenizedInstance,
    resources: &ResourceBundle,
    scope: Scope,
    vocab: &HashSet<String>,
) -> AnnotationSet {
    let mut features: BTreeSet<FeatureSpec> = annotate_word(tokens, scope)
        .into_iter()
        .filter(|f| vocab.contains(&f.value))
        .collect();
    features.insert(annotate_sentiment(tokens, resources, scope));
    features.extend(annotate_tense(tokens, resources, scope));
    features.extend(annotate_negation(tokens, resources, scope));
    features.extend(annotate_overlap(tokens, resources));
    features.extend(annotate_ner(tokens, resources, scope));
    features.extend(annotate_typo(tokens, resources, scope));
    AnnotationSet {
        id: tokens.id.clone(),
        features,
    }
}

/// Tokenizes and annotates both splits. The WORD vocabulary is the set of
/// words occurring (in scope) in at least `vocab_min_freq` train instances.
pub fn annotate_all(
    dataset: &Dataset,
    resources: &ResourceBundle,
    config: &AnnotateConfig,
) -> Annotations {
    let scope = Scope::for_task(dataset.task_kind());
    let tokenize = |split: Split| -> Vec<TokenizedInstance> {
        dataset
            .split(split)
            .par_iter()
            .map(|i| config.tokenizer.tokenize(i))
            .collect()
    };
    let train_tokens = tokenize(Split::Train);
    let test_tokens = tokenize(Split::Test);

    let mut doc_freq: HashMap<String, usize> = HashMap::new();
    for tokens in &train_tokens {
        for f in annotate_word(tokens, scope) {
            *doc_freq.entry(f.value).or_default() += 1;
        }
    }
    let min_freq = config.vocab_min_freq.max(1);
    let vocab: HashSet<String> = doc_freq
        .into_iter()
        .filter(|(_, n)| *n >= min_freq)
        .map(|(w, _)| w)
        .collect();

    let run = |tokens: &[TokenizedInstance]| -> BTreeMap<String, AnnotationSet> {
        tokens
            .par_iter()
            .map(|t| {
                let set = annotate_instance(t, resources, scope, &vocab);
                (set.id.clone(), set)
            })
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    };
    Annotations {
        train: run(&train_tokens),
        test: run(&test_tokens),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SidecarMode {
    /// Sidecar features are added; a sidecar SENTIMENT or TENSE value
    /// replaces the built-in one.
    Merge,
    /// Sidecar features replace the built-in set for listed ids.
    Replace,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct SidecarRecord {
    id: String,
    #[serde(default)]
    split: Option<Split>,
    features: Vec<RawFeature>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SidecarEntry {
    pub id: String,
    pub split: Option<Split>,
    pub features: BTreeSet<FeatureSpec>,
}

/// Externally produced annotations, one JSONL record per instance:
/// `{"id": str, "split"?: "train"|"test", "features": [{"kind", "value"}]}`.
/// Without `split`, the record applies to the id in every split.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Sidecar {
    pub entries: Vec<SidecarEntry>,
}

impl Sidecar {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            let bad = |message: String| Error::MalformedLine {
                path: path.to_path_buf(),
                line: idx + 1,
                message,
            };
            let rec: SidecarRecord =
                serde_json::from_str(trimmed).map_err(|e| bad(e.to_string()))?;
            let mut features = BTreeSet::new();
            for raw in rec.features {
                let kind: FeatureKind = raw.kind.parse()?;
                features.insert(FeatureSpec::new(kind, &raw.value)?);
            }
            for kind in [FeatureKind::Sentiment, FeatureKind::Tense] {
                if features.iter().filter(|f| f.kind == kind).count() > 1 {
                    return Err(bad(format!("more than one {kind} value")));
                }
            }
            entries.push(SidecarEntry {
                id: rec.id,
                split: rec.split,
                features,
            });
        }
        Ok(Sidecar { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Applies the sidecar to `annotations`. Ids must exist in the dataset.
    pub fn apply(
        &self,
        dataset: &Dataset,
        annotations: &mut Annotations,
        mode: SidecarMode,
    ) -> Result<()> {
        let mut unknown = Vec::new();
        let mut targets: Vec<(Split, &SidecarEntry)> = Vec::new();
        for entry in &self.entries {
            let splits: Vec<Split> = match entry.split {
                Some(s) => vec![s],
                None => vec![Split::Train, Split::Test],
            };
            let hits: Vec<Split> = splits
                .into_iter()
                .filter(|s| dataset.get(*s, &entry.id).is_some())
                .collect();
            if hits.is_empty() {
                unknown.push(entry.id.clone());
            }
            targets.extend(hits.into_iter().map(|s| (s, entry)));
        }
        if !unknown.is_empty() {
            return Err(Error::SidecarUnknownIds(unknown));
        }
        for (split, entry) in targets {
            let set = annotations
                .split_mut(split)
                .entry(entry.id.clone())
                .or_insert_with(|| AnnotationSet {
                    id: entry.id.clone(),
                    features: BTreeSet::new(),
                });
            match mode {
                SidecarMode::Replace => set.features = entry.features.clone(),
                SidecarMode::Merge => {
                    for kind in [FeatureKind::Sentiment, FeatureKind::Tense] {
                        if entry.features.iter().any(|f| f.kind == kind) {
                            set.features.retain(|f| f.kind != kind);
                        }
                    }
                    set.features.extend(entry.features.iter().cloned());
                }
            }
        }
        Ok(())
    }
}

/// Loads a sidecar file and applies it.
pub fn import_sidecar(
    path: &Path,
    dataset: &Dataset,
    annotations: &mut Annotations,
    mode: SidecarMode,
) -> Result<()> {
    Sidecar::load(path)?.apply(dataset, annotations, mode)
}

/// Resource bundle from `dir`, or the built-in one.
pub fn resources_from(dir: Option<&PathBuf>) -> Result<ResourceBundle> {
    match dir {
        Some(d) => ResourceBundle::load_dir(d),
        None => Ok(ResourceBundle::builtin()),
    }
}
