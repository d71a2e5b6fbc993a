//! On-disk run store.
//!
//! ```text
//! <root>/index.json
//! <root>/datasets/<id>/{train.jsonl,test.jsonl,meta.json,dataset.json}
//! <root>/annotations/<id>/annotations.json
//! <root>/predictions/<id>/<model>.jsonl
//! <root>/reports/<run-id>/...
//! ```
//!
//! Dataset ids are prefixes of the content hash, so uploading the same files
//! twice maps to one directory. `dataset.json` is written last; a dataset
//! directory without it is an interrupted upload and is ignored.

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use icq_core::annotate::Annotations;
use icq_core::corpus::{Dataset, DatasetFiles, TaskKind};
use serde::{Deserialize, Serialize};

pub const ID_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub id: String,
    pub hash: String,
    pub name: String,
    pub task_kind: TaskKind,
    pub label_set: Vec<String>,
    pub sizes: Sizes,
}

impl DatasetDescriptor {
    pub fn new(hash: &str, dataset: &Dataset) -> Self {
        DatasetDescriptor {
            id: hash[..ID_LEN].to_string(),
            hash: hash.to_string(),
            name: dataset.name().to_string(),
            task_kind: dataset.task_kind(),
            label_set: dataset.label_set().to_vec(),
            sizes: Sizes {
                train: dataset.train().len(),
                test: dataset.test().len(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationStatus {
    Annotating,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEntry {
    #[serde(flatten)]
    pub descriptor: DatasetDescriptor,
    pub status: AnnotationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default)]
    pub models: BTreeSet<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Index {
    pub datasets: BTreeMap<String, DatasetEntry>,
}

#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    index_write: Mutex<()>,
    tmp_counter: AtomicU64,
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("store documents serialize");
    v.push(b'\n');
    v
}

fn invalid(e: impl std::fmt::Display) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e.to_string())
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        for sub in ["datasets", "annotations", "predictions", "reports"] {
            std::fs::create_dir_all(root.join(sub))?;
        }
        Ok(RunStore {
            root,
            index_write: Mutex::new(()),
            tmp_counter: AtomicU64::new(0),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset_dir(&self, id: &str) -> PathBuf {
        self.root.join("datasets").join(id)
    }

    pub fn annotations_path(&self, id: &str) -> PathBuf {
        self.root
            .join("annotations")
            .join(id)
            .join("annotations.json")
    }

    pub fn predictions_dir(&self, id: &str) -> PathBuf {
        self.root.join("predictions").join(id)
    }

    pub fn predictions_path(&self, id: &str, model: &str) -> PathBuf {
        self.predictions_dir(id).join(format!("{model}.jsonl"))
    }

    pub fn report_dir(&self, run_id: &str) -> PathBuf {
        self.root.join("reports").join(run_id)
    }

    pub fn index_path(&self) -> PathBuf {
        self.root.join("index.json")
    }

    /// Writes to a sibling temporary file and renames it over `path`.
    pub fn write_atomic(&self, path: &Path, bytes: &[u8]) -> io::Result<()> {
        let parent = path.parent().unwrap_or(Path::new("."));
        std::fs::create_dir_all(parent)?;
        let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
        let file_name = path
            .file_name()
            .map(|s| s.to_string_lossy())
            .unwrap_or_default();
        let tmp = parent.join(format!(".{file_name}.{}.{n}.tmp", std::process::id()));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)
    }

    pub fn save_dataset(
        &self,
        descriptor: &DatasetDescriptor,
        files: &DatasetFiles,
    ) -> io::Result<()> {
        let dir = self.dataset_dir(&descriptor.id);
        self.write_atomic(&dir.join("train.jsonl"), &files.train)?;
        self.write_atomic(&dir.join("test.jsonl"), &files.test)?;
        self.write_atomic(&dir.join("meta.json"), &files.meta)?;
        self.write_atomic(&dir.join("dataset.json"), &json_bytes(descriptor))
    }

    pub fn load_dataset(&self, descriptor: &DatasetDescriptor) -> icq_core::Result<Dataset> {
        let dir = self.dataset_dir(&descriptor.id);
        DatasetFiles::read(&dir)?.parse(&descriptor.name, &dir)
    }

    pub fn save_annotations(&self, id: &str, annotations: &Annotations) -> io::Result<()> {
        let bytes = serde_json::to_vec(annotations).map_err(invalid)?;
        self.write_atomic(&self.annotations_path(id), &bytes)
    }

    pub fn load_annotations(&self, id: &str) -> io::Result<Annotations> {
        let bytes = std::fs::read(self.annotations_path(id))?;
        serde_json::from_slice(&bytes).map_err(invalid)
    }

    pub fn save_predictions(&self, id: &str, model: &str, text: &[u8]) -> io::Result<()> {
        self.write_atomic(&self.predictions_path(id, model), text)
    }

    pub fn prediction_models(&self, id: &str) -> io::Result<BTreeSet<String>> {
        let dir = self.predictions_dir(id);
        let mut models = BTreeSet::new();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(models),
            Err(e) => return Err(e),
        };
        for entry in entries {
            let path = entry?.path();
            if path.extension().is_some_and(|x| x == "jsonl") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    if !stem.starts_with('.') {
                        models.insert(stem.to_string());
                    }
                }
            }
        }
        Ok(models)
    }

    /// Rebuilds the index from the directory tree alone.
    pub fn scan(&self) -> io::Result<Index> {
        let mut index = Index::default();
        for entry in std::fs::read_dir(self.root.join("datasets"))? {
            let dir = entry?.path();
            let descriptor_path = dir.join("dataset.json");
            let descriptor: DatasetDescriptor = match std::fs::read(&descriptor_path) {
                Ok(bytes) => serde_json::from_slice(&bytes).map_err(invalid)?,
                Err(e) if e.kind() == io::ErrorKind::NotFound => {
                    tracing::warn!(dir = %dir.display(), "skipping incomplete dataset directory");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let status = if self.annotations_path(&descriptor.id).exists() {
                AnnotationStatus::Ready
            } else {
                AnnotationStatus::Annotating
            };
            let models = self.prediction_models(&descriptor.id)?;
            index.datasets.insert(
                descriptor.id.clone(),
                DatasetEntry {
                    descriptor,
                    status,
                    error: None,
                    models,
                },
            );
        }
        Ok(index)
    }

    pub fn write_index(&self, index: &Index) -> io::Result<()> {
        let _guard = self.index_write.lock().unwrap_or_else(|p| p.into_inner());
        self.write_atomic(&self.index_path(), &json_bytes(index))
    }

    pub fn read_index(&self) -> io::Result<Index> {
        let bytes = std::fs::read(self.index_path())?;
        serde_json::from_slice(&bytes).map_err(invalid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use icq_core::corpus::Instance;

    fn dataset() -> (DatasetFiles, Dataset) {
        let inst = |id: &str, label: &str| Instance {
            id: id.into(),
            premise: "p".into(),
            hypothesis: "h".into(),
            label: label.into(),
            question_id: None,
            choice_index: None,
        };
        let ds = Dataset::from_splits(
            "d",
            TaskKind::Cls,
            vec![inst("a", "x"), inst("b", "y")],
            vec![inst("c", "x")],
        )
        .unwrap();
        let files = DatasetFiles {
            train: ds.split_to_jsonl(icq_core::Split::Train).into_bytes(),
            test: ds.split_to_jsonl(icq_core::Split::Test).into_bytes(),
            meta: ds.meta_json().into_bytes(),
        };
        (files, ds)
    }

    #[test]
    fn scan_rebuilds_index() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::open(tmp.path()).unwrap();
        let (files, ds) = dataset();
        let desc = DatasetDescriptor::new(&files.content_hash(), &ds);
        store.save_dataset(&desc, &files).unwrap();
        store.save_predictions(&desc.id, "m1", b"{}\n").unwrap();
        std::fs::create_dir_all(store.dataset_dir("partial")).unwrap();

        let index = store.scan().unwrap();
        let entry = &index.datasets[&desc.id];
        assert_eq!(entry.status, AnnotationStatus::Annotating);
        assert_eq!(entry.models, BTreeSet::from(["m1".to_string()]));
        assert_eq!(index.datasets.len(), 1);

        store
            .save_annotations(&desc.id, &Annotations::default())
            .unwrap();
        assert_eq!(
            store.scan().unwrap().datasets[&desc.id].status,
            AnnotationStatus::Ready
        );
        assert_eq!(store.load_dataset(&desc).unwrap(), ds);
    }

    #[test]
    fn index_writes_are_atomic_and_leave_no_temporaries() {
        let tmp = tempfile::tempdir().unwrap();
        let store = RunStore::open(tmp.path()).unwrap();
        let mut index = Index::default();
        store.write_index(&index).unwrap();
        let (files, ds) = dataset();
        let desc = DatasetDescriptor::new(&files.content_hash(), &ds);
        index.datasets.insert(
            desc.id.clone(),
            DatasetEntry {
                descriptor: desc,
                status: AnnotationStatus::Ready,
                error: None,
                models: BTreeSet::new(),
            },
        );
        store.write_index(&index).unwrap();
        assert_eq!(store.read_index().unwrap(), index);
        let leftovers: Vec<_> = std::fs::read_dir(tmp.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }
}
