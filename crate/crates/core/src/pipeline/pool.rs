use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which step assigned a pool label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Stage1,
    CotrainRf,
    CotrainCnn,
    /// Both views were confident and agreed.
    CotrainBoth,
    SelfTrainRf,
    SelfTrainCnn,
}

impl Provenance {
    const ALL: [Provenance; 6] = [
        Provenance::Stage1,
        Provenance::CotrainRf,
        Provenance::CotrainCnn,
        Provenance::CotrainBoth,
        Provenance::SelfTrainRf,
        Provenance::SelfTrainCnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::Stage1 => "stage1",
            Provenance::CotrainRf => "cotrain-rf",
            Provenance::CotrainCnn => "cotrain-cnn",
            Provenance::CotrainBoth => "cotrain-both",
            Provenance::SelfTrainRf => "selftrain-rf",
            Provenance::SelfTrainCnn => "selftrain-cnn",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provenance::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown provenance {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    /// `true` for ridesourcing.
    pub label: bool,
    pub source: Provenance,
    /// Iteration that added the label; 0 for Stage-1 seeds.
    pub iteration: usize,
    pub confidence: f64,
}

/// Partition of the candidate set into confident positives, confident
/// negatives and the unlabeled rest. Labels are append-only.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledPool {
    candidates: BTreeSet<String>,
    labels: BTreeMap<String, PoolEntry>,
}

impl LabeledPool {
    pub fn new<I, S>(candidates: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            candidates: candidates.into_iter().map(Into::into).collect(),
            labels: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> impl Iterator<Item = &str> {
        self.candidates.iter().map(String::as_str)
    }

    pub fn entry(&self, id: &str) -> Option<&PoolEntry> {
        self.labels.get(id)
    }

    pub fn labeled(&self) -> impl Iterator<Item = (&str, &PoolEntry)> {
        self.labels.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn positives(&self) -> Vec<&str> {
        self.with_label(true)
    }

    pub fn negatives(&self) -> Vec<&str> {
        self.with_label(false)
    }

    fn with_label(&self, label: bool) -> Vec<&str> {
        self.labels
            .iter()
            .filter(|(_, e)| e.label == label)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn unlabeled(&self) -> Vec<&str> {
        self.candidates
            .iter()
            .filter(|id| !self.labels.contains_key(*id))
            .map(String::as_str)
            .collect()
    }

    pub fn n_labeled(&self) -> usize {
        self.labels.len()
    }

    /// Labels an unlabeled candidate. Relabeling or unknown ids are errors.
    pub fn assign(&mut self, id: &str, entry: PoolEntry) -> Result<()> {
        if !self.candidates.contains(id) {
            return Err(Error::MissingData(format!("{id} is not a candidate")));
        }
        if self.labels.contains_key(id) {
            return Err(Error::Config(format!("{id} is already labeled")));
        }
        self.labels.insert(id.to_string(), entry);
        Ok(())
    }

    /// Checks that every label belongs to a candidate; disjointness of the
    /// three sets follows from the map representation.
    pub fn check(&self) -> Result<()> {
        match self.labels.keys().find(|k| !self.candidates.contains(*k)) {
            Some(k) => Err(Error::MissingData(format!("labeled id {k} is not a candidate"))),
            None => Ok(()),
        }
    }

    /// True when every label of `earlier` is present, unchanged, here.
    pub fn extends(&self, earlier: &LabeledPool) -> bool {
        self.candidates == earlier.candidates
            && earlier
                .labels
                .iter()
                .all(|(k, e)| self.labels.get(k) == Some(e))
    }
}

pub const MANIFEST_HEADER: [&str; 5] = ["vehicle_id", "label", "source", "iteration", "confidence"];

const POSITIVE: &str = "ridesourcing";
const NEGATIVE: &str = "other";
const UNLABELED: &str = "unlabeled";

/// One row per candidate in id order; unlabeled rows carry source `none`.
pub fn write_manifest<W: Write>(writer: W, pool: &LabeledPool) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(MANIFEST_HEADER)?;
    for id in &pool.candidates {
        match pool.labels.get(id) {
            Some(e) => w.write_record([
                id.as_str(),
                if e.label { POSITIVE } else { NEGATIVE },
                e.source.as_str(),
                &e.iteration.to_string(),
                &e.confidence.to_string(),
            ])?,
            None => w.write_record([id.as_str(), UNLABELED, "none", "0", "0"])?,
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(reader: R) -> Result<LabeledPool> {
    let bad = |why: String| Error::format("<manifest>", why);
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(MANIFEST_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    let mut pool = LabeledPool::default();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != MANIFEST_HEADER.len() {
            return Err(bad(format!("row with {} fields", rec.len())));
        }
        let id = rec[0].to_string();
        if !pool.candidates.insert(id.clone()) {
            return Err(bad(format!("duplicate id {id}")));
        }
        let label = match &rec[1] {
            POSITIVE => true,
            NEGATIVE => false,
            UNLABELED => continue,
            other => return Err(bad(format!("unknown label {other:?}"))),
        };
        let entry = PoolEntry {
            label,
            source: rec[2].parse().map_err(|e: Error| bad(e.to_string()))?,
            iteration: rec[3].parse().map_err(|_| bad(format!("bad iteration {:?}", &rec[3])))?,
            confidence: rec[4].parse().map_err(|_| bad(format!("bad confidence {:?}", &rec[4])))?,
        };
        pool.labels.insert(id, entry);
    }
    Ok(pool)
}
