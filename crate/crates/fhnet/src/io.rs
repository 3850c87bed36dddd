//! Text formats read and written by the command line tool.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! file is a pure function of its inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use fhnet_core::cv::{FoldMetrics, FoldReport, Summary};
use fhnet_core::direct::DirectResult;
use fhnet_core::hrv::{HrvFeatures, FEATURE_NAMES};
use fhnet_core::metrics::{RocPoint, TriageMetrics};
use fhnet_core::rr::{Dataset, FoldAssignment, Label, RrSegment};
use serde::Serialize;

use crate::error::{Error, Result};

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::parse(&read_text(path)?).map_err(|source| Error::Core {
        path: path.to_path_buf(),
        source,
    })
}

/// `patient_id,fold_index` lines in patient order.
pub fn folds_text(folds: &FoldAssignment) -> String {
    let mut s = String::new();
    for (p, f) in &folds.fold_of_patient {
        let _ = writeln!(s, "{p},{f}");
    }
    s
}

pub fn parse_folds(text: &str, path: &Path) -> Result<FoldAssignment> {
    let mut fold_of_patient = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let (p, f) = line.split_once(',').ok_or_else(|| bad("expected patient_id,fold_index"))?;
        let f: usize = f.trim().parse().map_err(|_| bad("fold index is not an integer"))?;
        if fold_of_patient.insert(p.trim().to_string(), f).is_some() {
            return Err(bad("patient listed twice"));
        }
    }
    let k = fold_of_patient.values().max().map_or(0, |m| m + 1);
    Ok(FoldAssignment { k, fold_of_patient })
}

/// Header `segment_id,label,<feature names>`, then one row per segment.
pub fn features_csv(rows: &[(&RrSegment, HrvFeatures)]) -> String {
    let mut s = String::from("segment_id,label");
    for name in FEATURE_NAMES {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for (seg, f) in rows {
        let _ = write!(s, "{},{}", seg.segment_id, seg.label.as_u8());
        for v in f.as_slice() {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// `eval_index,x...,f` lines.
pub fn trace_text(result: &DirectResult) -> String {
    let mut s = String::new();
    for (i, e) in result.trace.iter().enumerate() {
        let _ = write!(s, "{i}");
        for x in &e.x {
            let _ = write!(s, ",{x}");
        }
        let _ = writeln!(s, ",{}", e.value);
    }
    s
}

/// `fpr,tpr,threshold` with a header row.
pub fn roc_csv(points: &[RocPoint]) -> String {
    let mut s = String::from("fpr,tpr,threshold\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.fpr, p.tpr, p.threshold);
    }
    s
}

/// One biomarker reading per patient.
#[derive(Debug, Clone, PartialEq)]
pub struct CtniRecord {
    pub patient_id: String,
    pub label: Label,
    pub value: f64,
}

/// `patient_id,label,ctni_value` lines.
pub fn parse_ctni(text: &str, path: &Path) -> Result<Vec<CtniRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            msg: msg.to_string(),
        };
        let parts: Vec<&str> = line.split(',').map(str::trim).collect();
        let [p, l, v] = parts[..] else {
            return Err(bad("expected patient_id,label,ctni_value"));
        };
        let label = l
            .parse::<u8>()
            .ok()
            .and_then(Label::from_u8)
            .ok_or_else(|| bad("label must be 0 or 1"))?;
        let value: f64 = v.parse().map_err(|_| bad("value is not a number"))?;
        if !(value >= 0.0 && value.is_finite()) {
            return Err(bad("value must be finite and non-negative"));
        }
        out.push(CtniRecord {
            patient_id: p.to_string(),
            label,
            value,
        });
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn metrics_cells(m: &FoldMetrics) -> String {
    format!("{},{},{}", opt(m.sensitivity), opt(m.specificity), opt(m.auc))
}

/// Per-fold metrics at both granularities, then `mean` and `std` rows.
pub fn report_csv(report: &FoldReport) -> String {
    let mut s = String::from(
        "fold,sensitivity,specificity,auc,patient_sensitivity,patient_specificity,patient_auc\n",
    );
    for f in &report.folds {
        let _ = writeln!(s, "{},{},{}", f.fold, metrics_cells(&f.segment), metrics_cells(&f.patient));
    }
    let pick = |m: Option<Summary>, std: bool| opt(m.map(|x| if std { x.std } else { x.mean }));
    for (name, std) in [("mean", false), ("std", true)] {
        let _ = writeln!(
            s,
            "{name},{},{},{},{},{},{}",
            pick(report.segment.sensitivity, std),
            pick(report.segment.specificity, std),
            pick(report.segment.auc, std),
            pick(report.patient.sensitivity, std),
            pick(report.patient.specificity, std),
            pick(report.patient.auc, std),
        );
    }
    s
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum ReportLine<'a> {
    Fold {
        fold: usize,
        n_train: usize,
        segment: &'a FoldMetrics,
        patient: &'a FoldMetrics,
    },
    Summary {
        level: &'static str,
        n_folds: usize,
        threshold: f64,
        sensitivity: Option<Summary>,
        specificity: Option<Summary>,
        auc: Option<Summary>,
    },
    Warning {
        message: &'a str,
    },
    Ctni {
        threshold: f64,
        n_patients: usize,
        #[serde(flatten)]
        metrics: &'a TriageMetrics,
    },
}

/// Line-delimited JSON: one record per fold, one summary per granularity,
/// then warnings and the optional biomarker block.
pub fn report_text(report: &FoldReport, ctni: Option<(&TriageMetrics, f64, usize)>) -> Result<String> {
    let mut lines = Vec::new();
    for f in &report.folds {
        lines.push(serde_json::to_string(&ReportLine::Fold {
            fold: f.fold,
            n_train: f.n_train,
            segment: &f.segment,
            patient: &f.patient,
        })?);
    }
    for (level, agg) in [("segment", &report.segment), ("patient", &report.patient)] {
        lines.push(serde_json::to_string(&ReportLine::Summary {
            level,
            n_folds: report.n_folds,
            threshold: report.threshold,
            sensitivity: agg.sensitivity,
            specificity: agg.specificity,
            auc: agg.auc,
        })?);
    }
    for w in &report.warnings {
        lines.push(serde_json::to_string(&ReportLine::Warning { message: w })?);
    }
    if let Some((metrics, threshold, n_patients)) = ctni {
        lines.push(serde_json::to_string(&ReportLine::Ctni {
            threshold,
            n_patients,
            metrics,
        })?);
    }
    let mut s = lines.join("\n");
    s.push('\n');
    Ok(s)
}
