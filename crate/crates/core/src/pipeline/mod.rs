//! Two-stage transfer: a source-trained forest seeds confident labels among
//! the candidates, then forest and network views label each other's
//! unlabeled cars until neither adds anything.

mod pool;

pub use pool::{read_manifest, write_manifest, LabeledPool, PoolEntry, Provenance, MANIFEST_HEADER};

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cnn::{
    car_samples, day_samples, predict_car_level, predict_cnn_ensemble, predict_day_level, train_cnn,
    write_training_log, CnnModel, CnnSpec, TrainConfig,
};
use crate::error::{Error, Result};
use crate::forest::{train_forest, ForestModel, ForestParams, Prediction};
use crate::features::{SharedFeatureVector, FEATURE_NAMES};
use crate::image::ImageStack;
use crate::seed::derive_seed;

pub const DEFAULT_DELTA: f64 = 0.9;
pub const DEFAULT_MAX_ITERATIONS: usize = 50;

/// A target-domain car with both views.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub vehicle_id: String,
    pub features: SharedFeatureVector,
    pub images: ImageStack,
}

/// Strictly above `delta`, except that a unanimous confidence of 1 always
/// counts so that `delta = 1` still admits unanimous votes.
pub fn is_confident(confidence: f64, delta: f64) -> bool {
    confidence > delta || confidence >= 1.0
}

fn validate_delta(delta: f64) -> Result<()> {
    if delta > 0.5 && delta <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("confidence threshold {delta} outside (0.5, 1]")))
    }
}

fn feature_names() -> Vec<String> {
    FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Output of the source-domain stage.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub forest: ForestModel,
    pub pool: LabeledPool,
    /// Forest probability per candidate, keyed by id.
    pub scores: BTreeMap<String, f64>,
}

/// Trains a forest on source vectors (taxi positive, bus negative) and seeds
/// the candidates it is confident about.
pub fn stage1_seed(
    source: &[(SharedFeatureVector, bool)],
    candidates: &[Candidate],
    delta: f64,
    params: &ForestParams,
) -> Result<Stage1> {
    validate_delta(delta)?;
    let x: Vec<Vec<f64>> = source.iter().map(|(f, _)| f.to_array().to_vec()).collect();
    let y: Vec<bool> = source.iter().map(|&(_, l)| l).collect();
    let forest = train_forest(&x, &y, &feature_names(), params)?;
    let probs = candidates
        .par_iter()
        .map(|c| forest.predict_proba(&c.features.to_array()))
        .collect::<Result<Vec<_>>>()?;
    let mut pool = LabeledPool::new(candidates.iter().map(|c| c.vehicle_id.clone()));
    let mut scores = BTreeMap::new();
    for (c, &p) in candidates.iter().zip(&probs) {
        let pred = Prediction::from_probability(p);
        if is_confident(pred.confidence, delta) {
            pool.assign(
                &c.vehicle_id,
                PoolEntry {
                    label: pred.positive,
                    source: Provenance::Stage1,
                    iteration: 0,
                    confidence: pred.confidence,
                },
            )?;
        }
        scores.insert(c.vehicle_id.clone(), p);
    }
    Ok(Stage1 { forest, pool, scores })
}

/// Network widths shared by the day- and car-level models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CnnWidths {
    pub conv1: usize,
    pub conv2: usize,
    pub hidden: usize,
}

impl Default for CnnWidths {
    fn default() -> Self {
        Self {
            conv1: 8,
            conv2: 16,
            hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub delta: f64,
    pub max_iterations: usize,
    pub forest: ForestParams,
    pub cnn: TrainConfig,
    pub widths: CnnWidths,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            delta: DEFAULT_DELTA,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            forest: ForestParams::default(),
            cnn: TrainConfig::default(),
            widths: CnnWidths::default(),
            seed: 0,
        }
    }
}

/// Forest plus day- and car-level networks, averaged at prediction time.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleClassifier {
    pub forest: ForestModel,
    pub day_cnn: CnnModel<f32>,
    pub car_cnn: CnnModel<f32>,
    pub boundary: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    pub ridesourcing: bool,
    pub probability: f64,
    pub confidence: f64,
    pub forest: f64,
    pub cnn: f64,
}

impl Classification {
    /// Averages the two view probabilities; positive iff `p ≥ boundary`.
    pub fn combine(forest: f64, cnn: f64, boundary: f64) -> Self {
        let p = (forest + cnn) / 2.0;
        Self {
            ridesourcing: p >= boundary,
            probability: p,
            confidence: p.max(1.0 - p),
            forest,
            cnn,
        }
    }
}

impl EnsembleClassifier {
    pub fn classify(&self, car: &Candidate) -> Result<Classification> {
        let forest = self.forest.predict_proba(&car.features.to_array())?;
        let cnn = predict_cnn_ensemble(&self.day_cnn, &self.car_cnn, &car.images)?;
        Ok(Classification::combine(forest, cnn, self.boundary))
    }

    const FOREST_FILE: &'static str = "forest.rfmd";
    const DAY_FILE: &'static str = "day_cnn.cnnm";
    const CAR_FILE: &'static str = "car_cnn.cnnm";

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.forest.write(BufWriter::new(File::create(dir.join(Self::FOREST_FILE))?))?;
        self.day_cnn.write(BufWriter::new(File::create(dir.join(Self::DAY_FILE))?))?;
        self.car_cnn.write(BufWriter::new(File::create(dir.join(Self::CAR_FILE))?))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let open = |name: &str| -> Result<BufReader<File>> { Ok(BufReader::new(File::open(dir.join(name))?)) };
        Ok(Self {
            forest: ForestModel::read(open(Self::FOREST_FILE)?)?,
            day_cnn: CnnModel::read(open(Self::DAY_FILE)?)?,
            car_cnn: CnnModel::read(open(Self::CAR_FILE)?)?,
            boundary: 0.5,
        })
    }
}

/// Which classifiers take part in the labeling loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Views {
    CoTrain,
    ForestOnly,
    CnnOnly,
}

impl Views {
    fn forest(self) -> bool {
        self != Views::CnnOnly
    }

    fn cnn(self) -> bool {
        self != Views::ForestOnly
    }

    fn provenance(self, forest_confident: bool, cnn_confident: bool) -> Provenance {
        match (self, forest_confident, cnn_confident) {
            (Views::ForestOnly, ..) => Provenance::SelfTrainRf,
            (Views::CnnOnly, ..) => Provenance::SelfTrainCnn,
            (Views::CoTrain, true, true) => Provenance::CotrainBoth,
            (Views::CoTrain, true, false) => Provenance::CotrainRf,
            (Views::CoTrain, ..) => Provenance::CotrainCnn,
        }
    }
}

/// Models trained on one pool state; absent views are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedViews {
    pub forest: Option<ForestModel>,
    pub cnns: Option<(CnnModel<f32>, CnnModel<f32>)>,
}

impl TrainedViews {
    /// Per-view probabilities for one car.
    pub fn score(&self, car: &Candidate) -> Result<(Option<f64>, Option<f64>)> {
        let forest = match &self.forest {
            Some(f) => Some(f.predict_proba(&car.features.to_array())?),
            None => None,
        };
        let cnn = match &self.cnns {
            Some((day, car_model)) => Some(predict_cnn_ensemble(day, car_model, &car.images)?),
            None => None,
        };
        Ok((forest, cnn))
    }

    /// Mean of the available view probabilities.
    pub fn probability(&self, car: &Candidate) -> Result<f64> {
        let (f, c) = self.score(car)?;
        let parts: Vec<f64> = f.into_iter().chain(c).collect();
        Ok(parts.iter().sum::<f64>() / parts.len() as f64)
    }

    pub fn into_ensemble(self) -> Option<EnsembleClassifier> {
        let (day_cnn, car_cnn) = self.cnns?;
        Some(EnsembleClassifier {
            forest: self.forest?,
            day_cnn,
            car_cnn,
            boundary: 0.5,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub positives: usize,
    pub negatives: usize,
    pub unlabeled: usize,
    pub added: usize,
    pub conflicts: usize,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub models: TrainedViews,
    pub pool: LabeledPool,
    /// Training rounds run, including the final one that added nothing.
    pub iterations: usize,
    /// The iteration cap was hit while labels were still being added.
    pub stalled: bool,
    pub history: Vec<IterationStats>,
}

fn train_views(
    pool: &LabeledPool,
    by_id: &BTreeMap<&str, &Candidate>,
    views: Views,
    cfg: &PipelineConfig,
    iteration: usize,
) -> Result<TrainedViews> {
    let labeled: Vec<(&Candidate, bool)> = pool
        .labeled()
        .map(|(id, e)| {
            by_id
                .get(id)
                .map(|&c| (c, e.label))
                .ok_or_else(|| Error::MissingData(format!("no data for pooled car {id}")))
        })
        .collect::<Result<_>>()?;

    let forest = if views.forest() {
        let x: Vec<Vec<f64>> = labeled.iter().map(|(c, _)| c.features.to_array().to_vec()).collect();
        let y: Vec<bool> = labeled.iter().map(|&(_, l)| l).collect();
        let params = ForestParams {
            seed: derive_seed(cfg.seed, &format!("iter-{iteration}-forest")),
            ..cfg.forest.clone()
        };
        Some(train_forest(&x, &y, &feature_names(), &params)?)
    } else {
        None
    };

    let cnns = if views.cnn() {
        let stacks: Vec<(&ImageStack, bool)> = labeled.iter().map(|&(c, l)| (&c.images, l)).collect();
        let first = stacks
            .first()
            .ok_or_else(|| Error::DegenerateLabels("empty pool".into()))?
            .0;
        let (rows, cols) = first.shape();
        let w = cfg.widths;
        let day_spec = CnnSpec::day_level(rows, cols).with_widths(w.conv1, w.conv2, w.hidden);
        let car_spec = CnnSpec::car_level(first.days(), rows, cols).with_widths(w.conv1, w.conv2, w.hidden);
        let day_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &format!("iter-{iteration}-day-cnn")),
            ..cfg.cnn
        };
        let car_cfg = TrainConfig {
            seed: derive_seed(cfg.seed, &format!("iter-{iteration}-car-cnn")),
            ..cfg.cnn
        };
        let day = train_cnn(day_spec, &day_samples::<f32>(&stacks), &day_cfg)?;
        let car = train_cnn(car_spec, &car_samples::<f32>(&stacks), &car_cfg)?;
        Some((day, car))
    } else {
        None
    };
    Ok(TrainedViews { forest, cnns })
}

/// Writes `iter_NNN/` with the round statistics, the models trained at its
/// start and the pool manifest after it.
fn write_checkpoint(
    dir: &Path,
    stats: &IterationStats,
    pool: &LabeledPool,
    models: &TrainedViews,
) -> Result<()> {
    let d = iteration_dir(dir, stats.iteration);
    fs::create_dir_all(&d)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(d.join("stats.json"))?), stats)?;
    if let Some(f) = &models.forest {
        f.write(BufWriter::new(File::create(d.join("forest.rfmd"))?))?;
    }
    if let Some((day, car)) = &models.cnns {
        day.write(BufWriter::new(File::create(d.join("day_cnn.cnnm"))?))?;
        car.write(BufWriter::new(File::create(d.join("car_cnn.cnnm"))?))?;
        let mut log = BufWriter::new(File::create(d.join("training_log.csv"))?);
        write_training_log(&mut log, "day_cnn", &day.meta, true)?;
        write_training_log(&mut log, "car_cnn", &car.meta, false)?;
    }
    // Manifest last: its presence marks the checkpoint complete.
    let tmp = d.join("manifest.csv.tmp");
    write_manifest(BufWriter::new(File::create(&tmp)?), pool)?;
    fs::rename(&tmp, d.join("manifest.csv"))?;
    Ok(())
}

fn mark_final(dir: &Path, stalled: bool, retrained: Option<&TrainedViews>) -> Result<()> {
    if let Some(models) = retrained {
        let d = dir.join("final");
        fs::create_dir_all(&d)?;
        if let Some(f) = &models.forest {
            f.write(BufWriter::new(File::create(d.join("forest.rfmd"))?))?;
        }
        if let Some((day, car)) = &models.cnns {
            day.write(BufWriter::new(File::create(d.join("day_cnn.cnnm"))?))?;
            car.write(BufWriter::new(File::create(d.join("car_cnn.cnnm"))?))?;
        }
    }
    serde_json::to_writer(BufWriter::new(File::create(dir.join(FINAL_MARKER))?), &stalled)?;
    Ok(())
}

fn iteration_dir(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("iter_{iteration:03}"))
}

fn load_views(dir: &Path, views: Views) -> Result<TrainedViews> {
    let open = |name: &str| -> Result<BufReader<File>> { Ok(BufReader::new(File::open(dir.join(name))?)) };
    let forest = if views.forest() {
        Some(ForestModel::read(open("forest.rfmd")?)?)
    } else {
        None
    };
    let cnns = if views.cnn() {
        Some((CnnModel::read(open("day_cnn.cnnm")?)?, CnnModel::read(open("car_cnn.cnnm")?)?))
    } else {
        None
    };
    Ok(TrainedViews { forest, cnns })
}

fn read_history(dir: &Path, last: usize) -> Result<Vec<IterationStats>> {
    (1..=last)
        .map(|i| {
            let path = iteration_dir(dir, i).join("stats.json");
            let file = File::open(&path)?;
            serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::format(&path, e.to_string()))
        })
        .collect()
}

const FINAL_MARKER: &str = "final.json";

/// Latest complete checkpoint under `dir`, if any.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, LabeledPool)>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<usize> = None;
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name();
        let Some(n) = name.to_str().and_then(|s| s.strip_prefix("iter_")).and_then(|s| s.parse().ok()) else {
            continue;
        };
        if iteration_dir(dir, n).join("manifest.csv").is_file() && best.is_none_or(|b| n > b) {
            best = Some(n);
        }
    }
    match best {
        Some(n) => {
            let pool = read_manifest(BufReader::new(File::open(iteration_dir(dir, n).join("manifest.csv"))?))
                .map_err(|e| match e {
                    Error::Format { reason, .. } => Error::format(iteration_dir(dir, n).join("manifest.csv"), reason),
                    other => other,
                })?;
            Ok(Some((n, pool)))
        }
        None => Ok(None),
    }
}

/// The labeling loop shared by co-training and single-view self-training.
///
/// Each round retrains the selected views from scratch on the pool, scores
/// the unlabeled cars and adds the confident ones. A car on which two views
/// are confident with opposite labels stays unlabeled for that round. The
/// loop stops when a round adds nothing or the pool is complete. When
/// `checkpoint` is given, a checkpoint is written after every round and an
/// existing one is resumed from.
pub fn label_loop(
    pool: LabeledPool,
    candidates: &[Candidate],
    views: Views,
    cfg: &PipelineConfig,
    checkpoint: Option<&Path>,
) -> Result<LoopOutcome> {
    validate_delta(cfg.delta)?;
    if cfg.max_iterations == 0 {
        return Err(Error::Config("iteration cap must be at least 1".into()));
    }
    pool.check()?;
    if pool.positives().is_empty() || pool.negatives().is_empty() {
        return Err(Error::DegenerateLabels(format!(
            "seed pool needs both classes, has {} positive and {} negative",
            pool.positives().len(),
            pool.negatives().len()
        )));
    }
    let by_id: BTreeMap<&str, &Candidate> = candidates.iter().map(|c| (c.vehicle_id.as_str(), c)).collect();

    let mut pool = pool;
    let mut done = 0;
    let mut history = Vec::new();
    if let Some(dir) = checkpoint {
        if let Some((n, saved)) = latest_checkpoint(dir)? {
            if !saved.extends(&pool) {
                return Err(Error::Config(format!(
                    "checkpoint at iteration {n} does not extend the given seed pool"
                )));
            }
            pool = saved;
            done = n;
            history = read_history(dir, n)?;
            let last = iteration_dir(dir, n);
            if let Ok(file) = File::open(last.join(FINAL_MARKER)) {
                let stalled: bool = serde_json::from_reader(BufReader::new(file))?;
                let models_dir = if stalled { last.join("final") } else { last };
                return Ok(LoopOutcome {
                    models: load_views(&models_dir, views)?,
                    pool,
                    iterations: n,
                    stalled,
                    history,
                });
            }
        }
    }

    loop {
        let iteration = done + 1;
        let models = train_views(&pool, &by_id, views, cfg, iteration)?;
        let unlabeled: Vec<&Candidate> = pool
            .unlabeled()
            .into_iter()
            .map(|id| {
                by_id
                    .get(id)
                    .copied()
                    .ok_or_else(|| Error::MissingData(format!("no data for candidate {id}")))
            })
            .collect::<Result<_>>()?;
        let scores = unlabeled
            .par_iter()
            .map(|c| models.score(c))
            .collect::<Result<Vec<_>>>()?;

        let mut added = 0;
        let mut conflicts = 0;
        for (c, (pf, pc)) in unlabeled.iter().zip(scores) {
            let f = pf.map(Prediction::from_probability).filter(|p| is_confident(p.confidence, cfg.delta));
            let n = pc.map(Prediction::from_probability).filter(|p| is_confident(p.confidence, cfg.delta));
            let (label, confidence) = match (f, n) {
                (Some(a), Some(b)) if a.positive != b.positive => {
                    conflicts += 1;
                    continue;
                }
                (Some(a), Some(b)) => (a.positive, (a.confidence + b.confidence) / 2.0),
                (Some(p), None) | (None, Some(p)) => (p.positive, p.confidence),
                (None, None) => continue,
            };
            pool.assign(
                &c.vehicle_id,
                PoolEntry {
                    label,
                    source: views.provenance(f.is_some(), n.is_some()),
                    iteration,
                    confidence,
                },
            )?;
            added += 1;
        }
        pool.check()?;
        let stats = IterationStats {
            iteration,
            positives: pool.positives().len(),
            negatives: pool.negatives().len(),
            unlabeled: pool.unlabeled().len(),
            added,
            conflicts,
        };
        if let Some(dir) = checkpoint {
            write_checkpoint(dir, &stats, &pool, &models)?;
        }
        history.push(stats);
        done = iteration;
        if added == 0 {
            if let Some(dir) = checkpoint {
                mark_final(&iteration_dir(dir, iteration), false, None)?;
            }
            return Ok(LoopOutcome {
                models,
                pool,
                iterations: iteration,
                stalled: false,
                history,
            });
        }
        if iteration >= cfg.max_iterations {
            log::warn!("co-training stalled: still adding labels after {iteration} iterations");
            let models = train_views(&pool, &by_id, views, cfg, iteration + 1)?;
            if let Some(dir) = checkpoint {
                mark_final(&iteration_dir(dir, iteration), true, Some(&models))?;
            }
            return Ok(LoopOutcome {
                models,
                pool,
                iterations: iteration,
                stalled: true,
                history,
            });
        }
    }
}

#[derive(Debug, Clone)]
pub struct CotrainOutcome {
    pub ensemble: EnsembleClassifier,
    pub pool: LabeledPool,
    pub iterations: usize,
    pub stalled: bool,
    pub history: Vec<IterationStats>,
}

/// Forest and network views label the unlabeled candidates for each other.
pub fn cotrain(
    pool: LabeledPool,
    candidates: &[Candidate],
    cfg: &PipelineConfig,
    checkpoint: Option<&Path>,
) -> Result<CotrainOutcome> {
    let out = label_loop(pool, candidates, Views::CoTrain, cfg, checkpoint)?;
    let ensemble = out
        .models
        .into_ensemble()
        .expect("co-training trains both views");
    Ok(CotrainOutcome {
        ensemble,
        pool: out.pool,
        iterations: out.iterations,
        stalled: out.stalled,
        history: out.history,
    })
}

/// Single-view self-training baseline.
pub fn self_train(
    pool: LabeledPool,
    candidates: &[Candidate],
    views: Views,
    cfg: &PipelineConfig,
) -> Result<LoopOutcome> {
    if views == Views::CoTrain {
        return Err(Error::Config("self-training takes a single view".into()));
    }
    label_loop(pool, candidates, views, cfg, None)
}

/// Day-level, car-level and averaged network probabilities for one car.
pub fn cnn_components(day: &CnnModel<f32>, car: &CnnModel<f32>, stack: &ImageStack) -> Result<(f64, f64, f64)> {
    let d = predict_day_level(day, stack)?;
    let c = predict_car_level(car, stack)?;
    Ok((d, c, (d + c) / 2.0))
}

#[cfg(test)]
mod tests;
