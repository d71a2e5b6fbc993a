//! Report documents: cue tables, probe reports, distribution charts and
//! hypothesis-only comparisons, as JSON and CSV.
//!
//! JSON keeps raw values at full precision. Percentages for display are
//! rendered with two decimals by [`pct`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annotate::{FeatureKind, FeatureSpec};
use crate::cuescore::{CueScore, LabelDistribution};
use crate::error::{Error, Result};
use crate::filter::SupportMode;
use crate::probe::{ProbeReport, StressSet};

/// Settings shared by the CLI and the service. Defaults match the module
/// defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub min_support: usize,
    pub vocab_min_freq: usize,
    pub top_k: usize,
    pub seed: u64,
    pub support_mode: SupportMode,
    pub jsd_log_base: f64,
    pub delta_threshold: f64,
    /// Feature kinds considered; empty means all.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kinds: Vec<FeatureKind>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            min_support: 5,
            vocab_min_freq: 5,
            top_k: 5,
            seed: crate::probe::DEFAULT_SEED,
            support_mode: SupportMode::Both,
            jsd_log_base: crate::cuescore::JSD_LOG_BASE,
            delta_threshold: crate::probe::DEFAULT_DELTA_THRESHOLD,
            kinds: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn includes(&self, kind: FeatureKind) -> bool {
        self.kinds.is_empty() || self.kinds.contains(&kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub dataset_name: String,
    pub dataset_hash: String,
    pub resource_hash: String,
    pub config: RunConfig,
    pub tool_version: String,
    pub created_at: String,
}

impl RunManifest {
    pub fn new(
        dataset_name: &str,
        dataset_hash: &str,
        resource_hash: &str,
        config: RunConfig,
    ) -> Self {
        RunManifest {
            dataset_name: dataset_name.to_string(),
            dataset_hash: dataset_hash.to_string(),
            resource_hash: resource_hash.to_string(),
            config,
            tool_version: crate::TOOL_VERSION.to_string(),
            created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        }
    }

    /// Identifier derived from everything except the timestamp, so equal
    /// inputs land in the same report directory.
    pub fn run_id(&self) -> String {
        let mut stripped = self.clone();
        stripped.created_at.clear();
        let bytes = serde_json::to_vec(&stripped).expect("manifest serializes");
        hex::encode(&Sha256::digest(&bytes)[..8])
    }
}

/// Two-decimal rendering of a fraction as a percentage.
pub fn pct(fraction: f64) -> String {
    let s = format!("{:.2}", fraction * 100.0);
    if s == "-0.00" {
        "0.00".to_string()
    } else {
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueRow {
    pub feature: FeatureSpec,
    pub cueness: f64,
    pub cueness_pct: String,
    pub mse_train: f64,
    pub jsd: f64,
    pub train_support: usize,
    pub test_support: usize,
    pub train_dist: LabelDistribution,
    pub test_dist: LabelDistribution,
    /// Accuracy-test delta per model, as a fraction.
    pub deltas: BTreeMap<String, Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CueTable {
    pub manifest: RunManifest,
    pub label_set: Vec<String>,
    pub models: Vec<String>,
    pub cues: Vec<CueRow>,
    pub dataset_cueness: f64,
    /// Sum of absolute deltas per model over the listed cues.
    pub model_weakness: BTreeMap<String, f64>,
}

/// Builds the cue table. `deltas` maps model name to per-feature delta.
pub fn emit_cue_table(
    manifest: RunManifest,
    label_set: &[String],
    ranked: &[CueScore],
    deltas: &BTreeMap<String, BTreeMap<FeatureSpec, f64>>,
) -> CueTable {
    let models: Vec<String> = deltas.keys().cloned().collect();
    let cues = ranked
        .iter()
        .map(|c| CueRow {
            feature: c.feature.clone(),
            cueness: c.cueness,
            cueness_pct: pct(c.cueness),
            mse_train: c.mse_train,
            jsd: c.jsd,
            train_support: c.train_support,
            test_support: c.test_support,
            train_dist: c.train_dist.clone(),
            test_dist: c.test_dist.clone(),
            deltas: models
                .iter()
                .map(|m| (m.clone(), deltas[m].get(&c.feature).copied()))
                .collect(),
        })
        .collect::<Vec<_>>();
    let model_weakness = models
        .iter()
        .map(|m| {
            let ds: Vec<f64> = cues.iter().filter_map(|r| r.deltas[m]).collect();
            (m.clone(), crate::probe::model_weakness(&ds))
        })
        .collect();
    CueTable {
        manifest,
        label_set: label_set.to_vec(),
        models,
        dataset_cueness: crate::cuescore::dataset_cueness(ranked),
        cues,
        model_weakness,
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl CueTable {
    /// Percentages at full precision; the last row holds the column sums
    /// (dataset cueness and per-model sum of absolute deltas).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature_kind,feature_value,cueness");
        for m in &self.models {
            out.push(',');
            out.push_str(&csv_field(m));
        }
        out.push('\n');
        for row in &self.cues {
            let _ = write!(
                out,
                "{},{},{}",
                row.feature.kind,
                csv_field(&row.feature.value),
                row.cueness * 100.0
            );
            for m in &self.models {
                out.push(',');
                if let Some(d) = row.deltas[m] {
                    let _ = write!(out, "{}", d * 100.0);
                }
            }
            out.push('\n');
        }
        let _ = write!(out, "SUM,,{}", self.dataset_cueness * 100.0);
        for m in &self.models {
            let _ = write!(out, ",{}", self.model_weakness[m] * 100.0);
        }
        out.push('\n');
        out
    }

    /// Fixed-width summary for terminals, two decimals.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<28} {:>8}", "feature", "cueness");
        for m in &self.models {
            let _ = write!(out, " {m:>10}");
        }
        out.push('\n');
        for row in &self.cues {
            let _ = write!(
                out,
                "{:<28} {:>8}",
                row.feature.to_string(),
                row.cueness_pct
            );
            for m in &self.models {
                let cell = row.deltas[m].map(pct).unwrap_or_else(|| "-".into());
                let _ = write!(out, " {cell:>10}");
            }
            out.push('\n');
        }
        let _ = write!(out, "{:<28} {:>8}", "sum", pct(self.dataset_cueness));
        for m in &self.models {
            let _ = write!(out, " {:>10}", pct(self.model_weakness[m]));
        }
        out.push('\n');
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartPoint {
    pub label: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSeries {
    pub source: String,
    pub support: usize,
    pub degenerate: bool,
    pub values: Vec<ChartPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartDocument {
    pub feature: FeatureSpec,
    pub labels: Vec<String>,
    pub series: Vec<ChartSeries>,
}

impl ChartDocument {
    /// `(source, label, value)` for every plotted bar.
    pub fn triples(&self) -> Vec<(&str, &str, f64)> {
        self.series
            .iter()
            .flat_map(|s| {
                s.values
                    .iter()
                    .map(move |p| (s.source.as_str(), p.label.as_str(), p.value))
            })
            .collect()
    }
}

fn series(source: &str, dist: &LabelDistribution) -> ChartSeries {
    let degenerate = dist.support == 0;
    ChartSeries {
        source: source.to_string(),
        support: dist.support,
        degenerate,
        values: if degenerate {
            Vec::new()
        } else {
            dist.labels
                .iter()
                .zip(&dist.proportions)
                .map(|(l, v)| ChartPoint {
                    label: l.clone(),
                    value: *v,
                })
                .collect()
        },
    }
}

/// Bar-chart data for named distributions over the same labels. A
/// zero-support series keeps its entry but has no values.
pub fn emit_chart(feature: &FeatureSpec, named: &[(&str, &LabelDistribution)]) -> ChartDocument {
    ChartDocument {
        feature: feature.clone(),
        labels: named
            .first()
            .map(|(_, d)| d.labels.clone())
            .unwrap_or_default(),
        series: named.iter().map(|(n, d)| series(n, d)).collect(),
    }
}

/// Filtered-train distribution against predictions on the stress set.
pub fn emit_distribution_chart(
    feature: &FeatureSpec,
    train_dist: &LabelDistribution,
    stress_pred_dist: &LabelDistribution,
) -> ChartDocument {
    emit_chart(
        feature,
        &[
            ("train", train_dist),
            ("stress_predictions", stress_pred_dist),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeDocument {
    pub manifest: RunManifest,
    pub report: ProbeReport,
    pub chart: ChartDocument,
}

pub fn emit_probe_document(manifest: RunManifest, report: ProbeReport) -> ProbeDocument {
    let chart = emit_distribution_chart(
        &report.feature,
        &report.train_dist,
        &report.stress_pred_dist,
    );
    ProbeDocument {
        manifest,
        report,
        chart,
    }
}

/// One dataset/model line of the hypothesis-only comparison, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypoRow {
    pub dataset: String,
    pub model: String,
    pub majority: f64,
    pub full: f64,
    pub hypo: f64,
    pub hypo_minus_majority: f64,
    pub full_minus_hypo: f64,
}

impl HypoRow {
    pub fn new(dataset: &str, model: &str, majority: f64, full: f64, hypo: f64) -> Self {
        HypoRow {
            dataset: dataset.to_string(),
            model: model.to_string(),
            majority,
            full,
            hypo,
            hypo_minus_majority: hypo - majority,
            full_minus_hypo: full - hypo,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypoReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<RunManifest>,
    pub rows: Vec<HypoRow>,
}

pub fn emit_hypo_report(manifest: Option<RunManifest>, rows: Vec<HypoRow>) -> HypoReport {
    HypoReport { manifest, rows }
}

/// Formats a percentage value with two decimals.
pub fn two_decimals(value: f64) -> String {
    pct(value / 100.0)
}

impl HypoReport {
    /// Two decimals, matching the published tables.
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("dataset,model,majority,full,hypo,hypo_minus_majority,full_minus_hypo\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_field(&r.dataset),
                csv_field(&r.model),
                two_decimals(r.majority),
                two_decimals(r.full),
                two_decimals(r.hypo),
                two_decimals(r.hypo_minus_majority),
                two_decimals(r.full_minus_hypo)
            );
        }
        out
    }
}

#[derive(Debug, Deserialize)]
struct AccuracyTableRow {
    dataset: String,
    model: String,
    majority: f64,
    full: f64,
    hypo: f64,
}

/// Reads a CSV of published accuracies in percent with the header
/// `dataset,model,majority,full,hypo`. Lines starting with `#` are skipped.
pub fn parse_accuracy_table(text: &str, path: &Path) -> Result<Vec<HypoRow>> {
    let mut lines = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
    let malformed = |line: usize, message: String| Error::MalformedLine {
        path: path.to_path_buf(),
        line,
        message,
    };
    let Some((hn, header)) = lines.next() else {
        return Err(Error::NoInstances {
            path: path.to_path_buf(),
        });
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    if columns != ["dataset", "model", "majority", "full", "hypo"] {
        return Err(malformed(hn + 1, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 5 {
            return Err(malformed(
                n + 1,
                format!("expected 5 fields, got {}", cells.len()),
            ));
        }
        let num = |i: usize| {
            cells[i]
                .parse::<f64>()
                .map_err(|e| malformed(n + 1, format!("{}: {e}", columns[i])))
        };
        let row = AccuracyTableRow {
            dataset: cells[0].to_string(),
            model: cells[1].to_string(),
            majority: num(2)?,
            full: num(3)?,
            hypo: num(4)?,
        };
        rows.push(HypoRow::new(
            &row.dataset,
            &row.model,
            row.majority,
            row.full,
            row.hypo,
        ));
    }
    Ok(rows)
}

fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Writes the files of one run under `reports/<run-id>/`.
#[derive(Debug, Clone)]
pub struct ReportDir {
    pub root: PathBuf,
}

impl ReportDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ReportDir { root: root.into() }
    }

    fn write(&self, rel: &str, body: &str) -> Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<PathBuf> {
        self.write("manifest.json", &to_json(manifest))
    }

    pub fn write_cues(&self, table: &CueTable) -> Result<Vec<PathBuf>> {
        Ok(vec![
            self.write("cues.json", &to_json(table))?,
            self.write("cues.csv", &table.to_csv())?,
        ])
    }

    pub fn write_probe(&self, doc: &ProbeDocument) -> Result<Vec<PathBuf>> {
        let model = safe_name(&doc.report.model);
        Ok(vec![
            self.write(&format!("probe-{model}.json"), &to_json(doc))?,
            self.write(
                &format!(
                    "charts/{}-{model}.json",
                    safe_name(&doc.report.feature.slug())
                ),
                &to_json(&doc.chart),
            )?,
        ])
    }

    pub fn write_stress(&self, model: &str, stress: &StressSet, jsonl: &str) -> Result<PathBuf> {
        self.write(
            &format!(
                "stress-{}-{}.jsonl",
                safe_name(&stress.feature.slug()),
                safe_name(model)
            ),
            jsonl,
        )
    }

    pub fn write_hypo(&self, report: &HypoReport) -> Result<Vec<PathBuf>> {
        Ok(vec![
            self.write("hypo.json", &to_json(report))?,
            self.write("hypo.csv", &report.to_csv())?,
        ])
    }
}
