use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, auc, top_k_precision};
use crate::error::{Error, Result};
use crate::pipeline::IterationStats;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOP_K_RULE: &str = "m = ceil(k * N / 100) highest scores, ties by ascending vehicle_id";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Scores of one classifier on a labelled set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub positives: usize,
    pub auc: f64,
    pub accuracy: f64,
    /// Keyed by the percentage, e.g. `"5"`.
    pub top_k_precision: BTreeMap<String, f64>,
    pub confusion: Confusion,
}

pub fn top_k_key(k: f64) -> String {
    k.to_string()
}

impl Metrics {
    pub fn compute(ids: &[&str], scores: &[f64], labels: &[bool], top_k: &[f64]) -> Result<Self> {
        let mut confusion = Confusion::default();
        for (&s, &y) in scores.iter().zip(labels) {
            match (s >= 0.5, y) {
                (true, true) => confusion.tp += 1,
                (true, false) => confusion.fp += 1,
                (false, false) => confusion.tn += 1,
                (false, true) => confusion.fn_ += 1,
            }
        }
        let mut top = BTreeMap::new();
        for &k in top_k {
            top.insert(top_k_key(k), top_k_precision(ids, scores, labels, k)?);
        }
        Ok(Self {
            n: scores.len(),
            positives: labels.iter().filter(|&&y| y).count(),
            auc: auc(scores, labels)?,
            accuracy: accuracy(scores, labels, 0.5)?,
            top_k_precision: top,
            confusion,
        })
    }

    pub fn top_k(&self, k: f64) -> Option<f64> {
        self.top_k_precision.get(&top_k_key(k)).copied()
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::format("<report>", format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("auc", self.auc)?;
        unit("accuracy", self.accuracy)?;
        for (k, &v) in &self.top_k_precision {
            unit(&format!("top-{k}% precision"), v)?;
        }
        if self.confusion.total() != self.n {
            return Err(Error::format(
                "<report>",
                format!("confusion counts sum to {} for {} cars", self.confusion.total(), self.n),
            ));
        }
        if self.positives != self.confusion.tp + self.confusion.fn_ {
            return Err(Error::format("<report>", "positive count disagrees with confusion"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSummary {
    pub candidates: usize,
    pub stage1_positives: usize,
    pub stage1_negatives: usize,
    pub final_positives: usize,
    pub final_negatives: usize,
    pub final_unlabeled: usize,
}

/// Held-out evaluation of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub top_k_rule: String,
    pub iterations: usize,
    pub stalled: bool,
    pub pool: PoolSummary,
    pub ensemble: Metrics,
    pub stage1: Metrics,
    pub forest_view: Metrics,
    pub cnn_view: Metrics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_train_rf: Option<Metrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub self_train_cnn: Option<Metrics>,
    pub history: Vec<IterationStats>,
}

/// Reports that can be checked before they are written.
pub trait Validate {
    fn validate(&self) -> Result<()>;
}

fn check_version(v: u32) -> Result<()> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(Error::format("<report>", format!("schema version {v}, expected {SCHEMA_VERSION}")))
    }
}

impl Validate for EvalReport {
    fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        for m in [&self.ensemble, &self.stage1, &self.forest_view, &self.cnn_view]
            .into_iter()
            .chain(self.self_train_rf.iter())
            .chain(self.self_train_cnn.iter())
        {
            m.validate()?;
        }
        let n = self.ensemble.n;
        if [&self.stage1, &self.forest_view, &self.cnn_view].iter().any(|m| m.n != n) {
            return Err(Error::format("<report>", "metrics computed on different car sets"));
        }
        let p = &self.pool;
        if p.final_positives + p.final_negatives + p.final_unlabeled != p.candidates {
            return Err(Error::format("<report>", "pool partition does not cover the candidates"));
        }
        if self.iterations != self.history.len() {
            return Err(Error::format("<report>", "iteration count disagrees with history"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub group: String,
    pub removed_columns: Vec<String>,
    pub metrics: Metrics,
    /// Precision without the group minus precision of the full model.
    pub top_k_delta: BTreeMap<String, f64>,
}

/// Leave-one-feature-group-out comparison of the source-trained forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub top_k_rule: String,
    pub baseline: Metrics,
    pub groups: Vec<AblationRow>,
}

impl Validate for AblationReport {
    fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        self.baseline.validate()?;
        for row in &self.groups {
            row.metrics.validate()?;
            if row.metrics.n != self.baseline.n {
                return Err(Error::format("<report>", "ablation rows use different car sets"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseRow {
    pub interval_min: f64,
    pub radius_m: f64,
    pub metrics: Metrics,
}

/// Source-forest quality when the taxi traces are down-sampled and blurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub top_k_rule: String,
    pub baseline: Metrics,
    pub levels: Vec<NoiseRow>,
}

impl Validate for NoiseReport {
    fn validate(&self) -> Result<()> {
        check_version(self.schema_version)?;
        self.baseline.validate()?;
        for row in &self.levels {
            row.metrics.validate()?;
        }
        Ok(())
    }
}

/// Validates, then writes pretty JSON with a trailing newline.
pub fn write_report<T: Serialize + Validate>(path: &Path, report: &T) -> Result<()> {
    report.validate()?;
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metrics() -> Metrics {
        Metrics::compute(&["a", "b", "c", "d"], &[0.9, 0.6, 0.4, 0.1], &[true, false, true, false], &[5.0, 50.0])
            .unwrap()
    }

    #[test]
    fn metrics_fill_confusion_and_top_k() {
        let m = metrics();
        assert_eq!(m.confusion, Confusion { tp: 1, fp: 1, tn: 1, fn_: 1 });
        assert_eq!(m.top_k(5.0), Some(1.0));
        assert_eq!(m.top_k(50.0), Some(0.5));
        assert_eq!(m.auc, 0.75);
        m.validate().unwrap();
        let json = serde_json::to_string(&m).unwrap();
        assert!(json.contains("\"fn\":1"));
        assert!(json.contains("\"5\":1.0"));
    }

    #[test]
    fn validation_rejects_inconsistent_metrics() {
        let mut m = metrics();
        m.confusion.tp += 1;
        assert!(m.validate().is_err());
        let mut m = metrics();
        m.auc = 1.5;
        assert!(m.validate().is_err());
    }

    #[test]
    fn reports_are_validated_before_writing() {
        let dir = tempfile::tempdir().unwrap();
        let mut r = NoiseReport {
            schema_version: SCHEMA_VERSION,
            config_hash: "x".into(),
            seed: 1,
            top_k_rule: TOP_K_RULE.into(),
            baseline: metrics(),
            levels: vec![],
        };
        let path = dir.path().join("r.json");
        write_report(&path, &r).unwrap();
        let back: NoiseReport = serde_json::from_reader(File::open(&path).unwrap()).unwrap();
        assert_eq!(back, r);
        r.schema_version = 99;
        assert!(write_report(&dir.path().join("bad.json"), &r).is_err());
        assert!(!dir.path().join("bad.json").exists());
    }
}
