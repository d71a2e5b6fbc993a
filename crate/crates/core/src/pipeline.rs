//! End-to-end composition used by the CLI and the HTTP service, so both
//! produce the same documents from the same inputs.

use std::collections::BTreeMap;

use crate::annotate::{annotate_all, AnnotateConfig, Annotations, FeatureSpec, ResourceBundle};
use crate::corpus::Dataset;
use crate::cuescore::{rank_cues, score_splits, CueScore};
use crate::error::{Error, Result};
use crate::filter::{apply_filter, apply_filters, qualify_cues, FilteredSplit};
use crate::probe::{accuracy_test, probe, CoverageMode, PredictionSet, ProbeConfig, StressSet};
use crate::report::{
    emit_cue_table, emit_probe_document, CueTable, ProbeDocument, RunConfig, RunManifest,
};

pub fn annotate(dataset: &Dataset, resources: &ResourceBundle, config: &RunConfig) -> Annotations {
    let annotate_config = AnnotateConfig {
        vocab_min_freq: config.vocab_min_freq,
        ..AnnotateConfig::default()
    };
    annotate_all(dataset, resources, &annotate_config)
}

/// Filtered splits of every feature that qualifies under `config`.
pub fn qualified_splits(
    dataset: &Dataset,
    annotations: &Annotations,
    config: &RunConfig,
) -> Vec<FilteredSplit> {
    let features: Vec<FeatureSpec> = annotations
        .shared_features()
        .into_iter()
        .filter(|f| config.includes(f.kind))
        .collect();
    qualify_cues(
        apply_filters(dataset, annotations, &features),
        config.min_support,
        config.support_mode,
    )
}

/// Ranked top-k cues.
pub fn discover_cues(
    dataset: &Dataset,
    annotations: &Annotations,
    config: &RunConfig,
) -> Result<Vec<CueScore>> {
    let splits = qualified_splits(dataset, annotations, config);
    let scores = score_splits(&splits, dataset.label_set())?;
    Ok(rank_cues(scores, config.top_k))
}

/// Filters on `feature`, failing unless it qualifies under `config`.
pub fn qualified_split(
    dataset: &Dataset,
    annotations: &Annotations,
    feature: &FeatureSpec,
    config: &RunConfig,
) -> Result<FilteredSplit> {
    let split = apply_filter(dataset, annotations, feature);
    let min_support = config.min_support.max(1);
    if !config
        .support_mode
        .qualifies(split.train_support(), split.test_support(), min_support)
    {
        return Err(Error::FeatureNotQualified {
            feature: feature.to_string(),
            support_mode: config.support_mode.to_string(),
            min_support,
        });
    }
    Ok(split)
}

/// Cue table with accuracy-test deltas for each model. A delta is absent
/// when the feature covers the whole test split.
pub fn cue_table(
    manifest: RunManifest,
    dataset: &Dataset,
    annotations: &Annotations,
    models: &[PredictionSet],
) -> Result<CueTable> {
    let config = manifest.config.clone();
    let ranked = discover_cues(dataset, annotations, &config)?;
    let mut deltas: BTreeMap<String, BTreeMap<FeatureSpec, f64>> = BTreeMap::new();
    for preds in models {
        preds.require_complete(dataset)?;
        let per_model = deltas.entry(preds.model_name.clone()).or_default();
        for cue in &ranked {
            let split = apply_filter(dataset, annotations, &cue.feature);
            match accuracy_test(preds, &split, dataset, CoverageMode::Strict) {
                Ok(t) => {
                    per_model.insert(cue.feature.clone(), t.delta);
                }
                Err(Error::EmptyEvaluationSet) => {}
                Err(e) => return Err(e),
            }
        }
    }
    Ok(emit_cue_table(
        manifest,
        dataset.label_set(),
        &ranked,
        &deltas,
    ))
}

pub fn probe_feature(
    manifest: RunManifest,
    dataset: &Dataset,
    annotations: &Annotations,
    preds: &PredictionSet,
    feature: &FeatureSpec,
    coverage: CoverageMode,
) -> Result<(ProbeDocument, StressSet)> {
    let split = qualified_split(dataset, annotations, feature, &manifest.config)?;
    let probe_config = ProbeConfig {
        seed: manifest.config.seed,
        delta_threshold: manifest.config.delta_threshold,
        coverage,
    };
    let (report, stress) = probe(preds, &split, dataset, &probe_config)?;
    Ok((emit_probe_document(manifest, report), stress))
}
