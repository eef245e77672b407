//! On-disk formats: dataset CSV + JSON sidecar, model JSON, training and
//! evaluation reports.
//!
//! Every JSON document carries `format` and `format_version`; readers reject
//! unknown formats and foreign major versions. Floats are written with the
//! shortest representation that round-trips.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cloop::EvalReport;
use crate::datagen::{Dataset, GenerationSnapshot, GenerationTimings, LabeledSample, MeasurementWindow, ScenarioRecord};
use crate::error::{Error, Result};
use crate::learner::{ConfusionMatrix, ForestModel, Label, LabelScheme};

pub const FORMAT_VERSION: &str = "1.0";
pub const DATASET_FORMAT: &str = "mpc-distill/dataset";
pub const TIMINGS_FORMAT: &str = "mpc-distill/timings";
pub const MODEL_FORMAT: &str = "mpc-distill/forest";
pub const TRAINING_FORMAT: &str = "mpc-distill/training-report";
pub const EVAL_FORMAT: &str = "mpc-distill/eval-report";

/// Shortest round-trip decimal.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| format_error(path, e.to_string()))
}

fn format_error(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.display().to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format: String,
    pub format_version: String,
    #[serde(flatten)]
    pub body: T,
}

/// Checks format tag and major version.
pub fn check_header(path: &Path, value: &serde_json::Value, expected: &str) -> Result<()> {
    let format = value.get("format").and_then(|v| v.as_str()).unwrap_or("");
    if format != expected {
        return Err(format_error(path, format!("expected format '{expected}', found '{format}'")));
    }
    let version = value.get("format_version").and_then(|v| v.as_str()).unwrap_or("");
    let major = version.split('.').next().unwrap_or("");
    let ours = FORMAT_VERSION.split('.').next().unwrap_or("");
    if major != ours {
        return Err(format_error(path, format!("unsupported format_version '{version}'")));
    }
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, format: &str, body: &T) -> Result<()> {
    let doc = Envelope {
        format: format.to_owned(),
        format_version: FORMAT_VERSION.to_owned(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format_error(path, e.to_string()))?;
    check_header(path, &value, format)?;
    let doc: Envelope<T> = serde_json::from_value(value).map_err(|e| format_error(path, e.to_string()))?;
    Ok(doc.body)
}

/// Peeks at the `format` tag of a JSON document.
pub fn json_format(path: &Path) -> Result<String> {
    let text = read_text(path)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| format_error(path, e.to_string()))?;
    Ok(value.get("format").and_then(|v| v.as_str()).unwrap_or("").to_owned())
}

/// Dataset column names: `q_index, k, y_lag0 .. y_lagM, u_value, label`.
pub fn dataset_columns(features: usize) -> Vec<String> {
    let mut cols = vec!["q_index".to_string(), "k".to_string()];
    cols.extend((0..features).map(|j| format!("y_lag{j}")));
    cols.push("u_value".into());
    cols.push("label".into());
    cols
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub csv_columns: Vec<String>,
    pub n_samples: usize,
    pub snapshot: GenerationSnapshot,
    pub scenarios: Vec<ScenarioRecord>,
}

pub fn dataset_csv(dataset: &Dataset) -> String {
    let mut out = dataset_columns(dataset.features()).join(",");
    out.push('\n');
    for s in &dataset.samples {
        out.push_str(&s.q_index.to_string());
        out.push(',');
        out.push_str(&s.k.to_string());
        for v in s.window.values() {
            out.push(',');
            out.push_str(&fmt_f64(*v));
        }
        out.push(',');
        out.push_str(&fmt_f64(s.u_value));
        out.push(',');
        out.push_str(&s.label.to_string());
        out.push('\n');
    }
    out
}

/// Writes `<stem>.csv` and `<stem>.json`.
pub fn write_dataset(dir: &Path, stem: &str, dataset: &Dataset) -> Result<()> {
    fs::write(dir.join(format!("{stem}.csv")), dataset_csv(dataset))?;
    let sidecar = DatasetSidecar {
        csv_columns: dataset_columns(dataset.features()),
        n_samples: dataset.len(),
        snapshot: dataset.snapshot.clone(),
        scenarios: dataset.scenarios.clone(),
    };
    write_json(&dir.join(format!("{stem}.json")), DATASET_FORMAT, &sidecar)
}

pub fn parse_dataset_csv(path: &Path, text: &str, features: usize) -> Result<Vec<LabeledSample>> {
    let mut lines = text.lines().enumerate();
    let expected = dataset_columns(features).join(",");
    match lines.next() {
        Some((_, header)) if header == expected => {}
        Some((_, header)) => {
            return Err(format_error(path, format!("line 1: header '{header}' does not match '{expected}'")));
        }
        None => return Err(format_error(path, "empty file")),
    }
    let width = features + 4;
    let mut samples = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(format_error(
                path,
                format!("line {line_no}: {} fields, expected {width}", fields.len()),
            ));
        }
        let bad = |what: &str| format_error(path, format!("line {line_no}: invalid {what}"));
        let q_index = fields[0].parse().map_err(|_| bad("q_index"))?;
        let k = fields[1].parse().map_err(|_| bad("k"))?;
        let window = fields[2..2 + features]
            .iter()
            .map(|f| f.parse::<f64>().map_err(|_| bad("feature")))
            .collect::<Result<Vec<_>>>()?;
        let u_value = fields[2 + features].parse().map_err(|_| bad("u_value"))?;
        let label: u8 = fields[3 + features].parse().map_err(|_| bad("label"))?;
        samples.push(LabeledSample {
            window: MeasurementWindow::new(window).map_err(|e| bad(&e.to_string()))?,
            u_value,
            label: Label::new(label).map_err(|_| bad("label"))?,
            q_index,
            k,
        });
    }
    Ok(samples)
}

/// Reads `<stem>.csv` with its sidecar.
pub fn read_dataset(dir: &Path, stem: &str) -> Result<Dataset> {
    let json_path = dir.join(format!("{stem}.json"));
    let sidecar: DatasetSidecar = read_json(&json_path, DATASET_FORMAT)?;
    let csv_path = dir.join(format!("{stem}.csv"));
    let text = read_text(&csv_path)?;
    let samples = parse_dataset_csv(&csv_path, &text, sidecar.snapshot.layout.features())?;
    if samples.len() != sidecar.n_samples {
        return Err(format_error(
            &csv_path,
            format!("{} rows, sidecar declares {}", samples.len(), sidecar.n_samples),
        ));
    }
    Ok(Dataset {
        samples,
        snapshot: sidecar.snapshot,
        scenarios: sidecar.scenarios,
    })
}

/// Dataset path given either the CSV or the sidecar.
pub fn split_dataset_path(path: &Path) -> Result<(std::path::PathBuf, String)> {
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| format_error(path, "not a dataset path"))?;
    Ok((dir, stem.to_owned()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingsDoc {
    pub timings: GenerationTimings,
    pub median_solve_seconds: Option<f64>,
    pub quartiles: Option<[f64; 3]>,
}

/// A trained feedback with what is needed to apply it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDoc {
    /// Windows harvested per solution in the training data.
    pub m: usize,
    /// Window memory `M`.
    pub window: usize,
    pub nominal: bool,
    pub labels: LabelScheme,
    pub forest: ForestModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReport {
    pub samples: usize,
    pub accuracy: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub m: usize,
    pub nominal: bool,
    pub test_ratio: f64,
    pub train: SplitReport,
    pub test: SplitReport,
}

pub fn eval_csv(report: &EvalReport) -> String {
    let mut cols: Vec<String> = ["index", "x0_1", "x0_2", "x0_3", "w1", "w2", "w3", "j_ideal"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend(report.policies.iter().map(|p| format!("j_{p}")));
    let mut out = cols.join(",");
    out.push('\n');
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in &report.rows {
        let mut fields = vec![r.index.to_string()];
        fields.extend(r.x0.to_array().iter().map(|v| fmt_f64(*v)));
        fields.extend(r.w.to_array().iter().map(|v| fmt_f64(*v)));
        fields.push(opt(r.j_ideal));
        fields.extend(r.j_policies.iter().map(|v| opt(*v)));
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_eval_report(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    fs::write(dir.join(format!("{stem}.csv")), eval_csv(report))?;
    write_json(&dir.join(format!("{stem}.json")), EVAL_FORMAT, report)
}
