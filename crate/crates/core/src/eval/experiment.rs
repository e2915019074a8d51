//! File-backed experiment stages. Every stage reads its inputs from the run
//! directory and writes its outputs there, so running the stages one by one
//! gives exactly the same artifacts as a full run.
//!
//! ```text
//! config.txt                      canonical settings
//! source_traces.csv  source_truth.csv  target_traces.csv  target_truth.csv
//! source_features.csv  target_features.csv  images/<id>.timg  split.csv
//! stage1/forest.rfmd  stage1/manifest.csv  stage1/scores.csv
//! cotrain/iter_NNN/…  cotrain/summary.json  model/…
//! scores.csv  report.json  ablation.json  noise_sweep.json
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{
    write_report, AblationReport, AblationRow, EvalReport, Metrics, NoiseReport, NoiseRow, PoolSummary,
    SCHEMA_VERSION, TOP_K_RULE,
};
use crate::config::ScenarioConfig;
use crate::error::{Error, Result};
use crate::features::{
    bus_rush_hour_trips, extract_features, read_features, write_features, FeatureGroup, FeatureRow, RushHours,
    SharedFeatureVector, VehicleLabel, FEATURE_NAMES,
};
use crate::forest::{train_forest, ForestModel};
use crate::image::{read_timg, trajectory_stack, write_timg};
use crate::pipeline::{
    cnn_components, cotrain, read_manifest, self_train, stage1_seed, write_manifest, Candidate, EnsembleClassifier,
    IterationStats, LabeledPool, Views,
};
use crate::seed::{derive_seed, rng_for};
use crate::sim::{
    domain_shift, perturb, read_ground_truth, simulate_fleet, write_ground_truth, Archetype, NoiseSpec,
};
use crate::traj::{read_traces, write_traces, Trajectory};

pub fn run_dir(out: &Path, cfg: &ScenarioConfig) -> PathBuf {
    out.join(format!("run_{}", cfg.hash()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::MissingData(format!("cannot open {}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { reason, .. } => Error::format(path, reason),
        other => other,
    })
}

/// Writes the canonical configuration and refuses a directory made for a
/// different one.
pub fn prepare_run_dir(cfg: &ScenarioConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let path = dir.join("config.txt");
    let text = cfg.canonical();
    if path.is_file() {
        if fs::read_to_string(&path)? != text {
            return Err(Error::Config(format!(
                "{} was created for a different configuration",
                dir.display()
            )));
        }
        return Ok(());
    }
    fs::write(path, text)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub source_vehicles: usize,
    pub target_vehicles: usize,
    pub source_points: usize,
    pub target_points: usize,
}

/// Source fleet (taxis and buses) in the shifted city, target fleet in the
/// original one.
pub fn simulate(cfg: &ScenarioConfig, dir: &Path) -> Result<SimulateSummary> {
    prepare_run_dir(cfg, dir)?;
    let city = cfg.target_city()?;
    let source_city = domain_shift(&city, cfg.shift_strength)?;
    let source = simulate_fleet(&source_city, &cfg.source_counts(), &cfg.sim_config(derive_seed(cfg.seed, "source")), "src")?;
    let target = simulate_fleet(&city, &cfg.target_counts(), &cfg.sim_config(derive_seed(cfg.seed, "target")), "car")?;
    for (name, fleet) in [("source", &source), ("target", &target)] {
        write_traces(create(&dir.join(format!("{name}_traces.csv")))?, fleet.iter().map(|v| &v.trajectory))?;
        write_ground_truth(
            create(&dir.join(format!("{name}_truth.csv")))?,
            fleet.iter().map(|v| (v.trajectory.vehicle_id.as_str(), v.archetype)),
        )?;
    }
    Ok(SimulateSummary {
        source_vehicles: source.len(),
        target_vehicles: target.len(),
        source_points: source.iter().map(|v| v.trajectory.len()).sum(),
        target_points: target.iter().map(|v| v.trajectory.len()).sum(),
    })
}

fn load_traces(path: &Path) -> Result<Vec<Trajectory>> {
    let (traces, stats) = with_path(path, read_traces(open(path)?))?;
    if stats.malformed > 0 {
        log::warn!("{}: skipped {} malformed rows", path.display(), stats.malformed);
    }
    Ok(traces)
}

fn load_truth(path: &Path) -> Result<BTreeMap<String, Archetype>> {
    Ok(with_path(path, read_ground_truth(open(path)?))?.into_iter().collect())
}

fn load_features(path: &Path) -> Result<Vec<FeatureRow>> {
    with_path(path, read_features(open(path)?))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractSummary {
    pub source_rows: usize,
    pub target_rows: usize,
    /// Vehicles without any fix in the daily window, skipped.
    pub dropped: Vec<String>,
    pub pool_cars: usize,
    pub eval_cars: usize,
}

const POOL_ROLE: &str = "pool";
const EVAL_ROLE: &str = "eval";

/// Features for both fleets (buses cut to their rush-hour trips), target
/// image stacks, and the stratified pool/eval split of the target cars.
pub fn extract(cfg: &ScenarioConfig, dir: &Path) -> Result<ExtractSummary> {
    prepare_run_dir(cfg, dir)?;
    let fcfg = cfg.feature_config()?;
    let source_truth = load_truth(&dir.join("source_truth.csv"))?;
    let source = load_traces(&dir.join("source_traces.csv"))?;
    let rush = RushHours::default();
    let mut dropped = Vec::new();

    let source_rows: Vec<Result<Option<FeatureRow>>> = source
        .par_iter()
        .map(|t| {
            let kind = *source_truth
                .get(&t.vehicle_id)
                .ok_or_else(|| Error::MissingData(format!("no ground truth for {}", t.vehicle_id)))?;
            let traj = match kind {
                Archetype::Bus => bus_rush_hour_trips(t, &rush, fcfg.offset, fcfg.gap_cap_s),
                _ => t.clone(),
            };
            optional(extract_features(&traj, &fcfg)).map(|f| {
                f.map(|f| FeatureRow {
                    vehicle_id: t.vehicle_id.clone(),
                    features: f.features,
                    label: kind.label(),
                })
            })
        })
        .collect();
    let mut rows = Vec::new();
    for (t, r) in source.iter().zip(source_rows) {
        match r? {
            Some(row) => rows.push(row),
            None => dropped.push(t.vehicle_id.clone()),
        }
    }
    write_features(create(&dir.join("source_features.csv"))?, &rows)?;
    let source_rows = rows.len();
    drop(source);

    let target = load_traces(&dir.join("target_traces.csv"))?;
    let first_day = fcfg.offset.day_of(cfg.start_epoch);
    let images = dir.join("images");
    fs::create_dir_all(&images)?;
    let target_rows: Vec<Result<Option<FeatureRow>>> = target
        .par_iter()
        .map(|t| {
            let Some(f) = optional(extract_features(t, &fcfg))? else {
                return Ok(None);
            };
            let stack = trajectory_stack(t, &fcfg, first_day, cfg.days, cfg.saturation_s)?;
            write_timg(create(&images.join(format!("{}.timg", t.vehicle_id)))?, &stack)?;
            Ok(Some(FeatureRow {
                vehicle_id: t.vehicle_id.clone(),
                features: f.features,
                label: VehicleLabel::Unknown,
            }))
        })
        .collect();
    let mut rows = Vec::new();
    for (t, r) in target.iter().zip(target_rows) {
        match r? {
            Some(row) => rows.push(row),
            None => dropped.push(t.vehicle_id.clone()),
        }
    }
    write_features(create(&dir.join("target_features.csv"))?, &rows)?;

    let truth = load_truth(&dir.join("target_truth.csv"))?;
    let split = stratified_split(&rows, &truth, cfg.eval_fraction, cfg.seed)?;
    let mut w = csv::Writer::from_writer(create(&dir.join("split.csv"))?);
    w.write_record(["vehicle_id", "role"])?;
    for (id, eval) in &split {
        w.write_record([id.as_str(), if *eval { EVAL_ROLE } else { POOL_ROLE }])?;
    }
    w.flush()?;
    let eval_cars = split.values().filter(|&&e| e).count();
    Ok(ExtractSummary {
        source_rows,
        target_rows: rows.len(),
        dropped,
        pool_cars: split.len() - eval_cars,
        eval_cars,
    })
}

fn optional<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::MissingData(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// `true` marks an evaluation car. Each class contributes `round(fraction ·
/// count)` cars, drawn with a seeded shuffle.
fn stratified_split(
    rows: &[FeatureRow],
    truth: &BTreeMap<String, Archetype>,
    fraction: f64,
    seed: u64,
) -> Result<BTreeMap<String, bool>> {
    let mut rng = rng_for(seed, "eval-split");
    let mut out = BTreeMap::new();
    for positive in [true, false] {
        let mut ids = Vec::new();
        for r in rows {
            let a = truth
                .get(&r.vehicle_id)
                .ok_or_else(|| Error::MissingData(format!("no ground truth for {}", r.vehicle_id)))?;
            if (*a == Archetype::Ridesourcing) == positive {
                ids.push(r.vehicle_id.clone());
            }
        }
        ids.sort();
        ids.shuffle(&mut rng);
        let n_eval = (fraction * ids.len() as f64).round() as usize;
        for (i, id) in ids.into_iter().enumerate() {
            out.insert(id, i < n_eval);
        }
    }
    Ok(out)
}

fn load_split(dir: &Path) -> Result<BTreeMap<String, bool>> {
    let path = dir.join("split.csv");
    let mut r = csv::Reader::from_reader(open(&path)?);
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let eval = match rec.get(1) {
            Some(EVAL_ROLE) => true,
            Some(POOL_ROLE) => false,
            other => return Err(Error::format(&path, format!("bad role {other:?}"))),
        };
        out.insert(rec[0].to_string(), eval);
    }
    Ok(out)
}

/// Source vectors with taxi as the positive class.
fn load_source(dir: &Path) -> Result<Vec<(String, SharedFeatureVector, bool)>> {
    let path = dir.join("source_features.csv");
    load_features(&path)?
        .into_iter()
        .map(|r| match r.label {
            VehicleLabel::Taxi => Ok((r.vehicle_id, r.features, true)),
            VehicleLabel::Bus => Ok((r.vehicle_id, r.features, false)),
            other => Err(Error::format(&path, format!("source row {} labelled {other}", r.vehicle_id))),
        })
        .collect()
}

/// Target cars with their images; `ids` restricts the set when given.
fn load_candidates(dir: &Path, ids: Option<&BTreeSet<String>>) -> Result<Vec<Candidate>> {
    let rows = load_features(&dir.join("target_features.csv"))?;
    rows.into_par_iter()
        .filter(|r| ids.is_none_or(|s| s.contains(&r.vehicle_id)))
        .map(|r| {
            let path = dir.join("images").join(format!("{}.timg", r.vehicle_id));
            let images = with_path(&path, read_timg(open(&path)?, r.vehicle_id.clone()))?;
            Ok(Candidate {
                vehicle_id: r.vehicle_id,
                features: r.features,
                images,
            })
        })
        .collect()
}

fn role_ids(split: &BTreeMap<String, bool>, eval: bool) -> BTreeSet<String> {
    split
        .iter()
        .filter(|&(_, &e)| e == eval)
        .map(|(k, _)| k.clone())
        .collect()
}

fn write_scores(path: &Path, header: &[&str], rows: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for (id, values) in rows {
        let mut rec = vec![id.clone()];
        rec.extend(values.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Column names after the id, and each car's values in that order.
type ScoreTable = (Vec<String>, BTreeMap<String, Vec<f64>>);

fn read_scores(path: &Path) -> Result<ScoreTable> {
    let mut r = csv::Reader::from_reader(open(path)?);
    let header: Vec<String> = r.headers()?.iter().skip(1).map(str::to_string).collect();
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let values = rec
            .iter()
            .skip(1)
            .map(|v| v.parse().map_err(|_| Error::format(path, format!("bad score {v:?}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != header.len() {
            return Err(Error::format(path, "ragged score row"));
        }
        out.insert(rec[0].to_string(), values);
    }
    Ok((header, out))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub candidates: usize,
    pub positives: usize,
    pub negatives: usize,
}

/// Trains the source forest, scores every target car and seeds the pool
/// from the non-evaluation cars.
pub fn stage1(cfg: &ScenarioConfig, dir: &Path) -> Result<Stage1Summary> {
    prepare_run_dir(cfg, dir)?;
    let source: Vec<(SharedFeatureVector, bool)> = load_source(dir)?.into_iter().map(|(_, f, y)| (f, y)).collect();
    let split = load_split(dir)?;
    let pool_ids = role_ids(&split, false);
    let cars = load_candidates(dir, None)?;
    let pool_cars: Vec<Candidate> = cars.iter().filter(|c| pool_ids.contains(&c.vehicle_id)).cloned().collect();
    let s1 = stage1_seed(&source, &pool_cars, cfg.delta, &cfg.stage1_forest())?;
    let out = dir.join("stage1");
    s1.forest.write(create(&out.join("forest.rfmd"))?)?;
    write_manifest(create(&out.join("manifest.csv"))?, &s1.pool)?;
    let rows = cars
        .par_iter()
        .map(|c| Ok((c.vehicle_id.clone(), vec![s1.forest.predict_proba(&c.features.to_array())?])))
        .collect::<Result<Vec<_>>>()?;
    write_scores(&out.join("scores.csv"), &["vehicle_id", "probability"], &rows)?;
    Ok(Stage1Summary {
        candidates: s1.pool.len(),
        positives: s1.pool.positives().len(),
        negatives: s1.pool.negatives().len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotrainSummary {
    pub iterations: usize,
    pub stalled: bool,
    pub history: Vec<IterationStats>,
    pub positives: usize,
    pub negatives: usize,
    pub unlabeled: usize,
}

fn load_pool(path: &Path) -> Result<LabeledPool> {
    with_path(path, read_manifest(open(path)?))
}

/// Co-trains on the pool cars, checkpointing under `cotrain/`, and saves the
/// final ensemble under `model/`.
pub fn cotrain_stage(cfg: &ScenarioConfig, dir: &Path) -> Result<CotrainSummary> {
    prepare_run_dir(cfg, dir)?;
    let pool = load_pool(&dir.join("stage1").join("manifest.csv"))?;
    let ids: BTreeSet<String> = pool.candidates().map(str::to_string).collect();
    let cars = load_candidates(dir, Some(&ids))?;
    let ckpt = dir.join("cotrain");
    let out = cotrain(pool, &cars, &cfg.pipeline(), Some(&ckpt))?;
    out.ensemble.save(&dir.join("model"))?;
    write_manifest(create(&ckpt.join("manifest.csv"))?, &out.pool)?;
    let summary = CotrainSummary {
        iterations: out.iterations,
        stalled: out.stalled,
        history: out.history,
        positives: out.pool.positives().len(),
        negatives: out.pool.negatives().len(),
        unlabeled: out.pool.unlabeled().len(),
    };
    let mut w = create(&ckpt.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut w, &summary)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(summary)
}

pub const SCORE_COLUMNS: [&str; 8] = [
    "vehicle_id",
    "stage1",
    "forest",
    "cnn_day",
    "cnn_car",
    "cnn",
    "ensemble",
    "predicted",
];

/// Scores every target car with the Stage-1 forest and the final ensemble.
pub fn classify(cfg: &ScenarioConfig, dir: &Path) -> Result<usize> {
    prepare_run_dir(cfg, dir)?;
    let model = EnsembleClassifier::load(&dir.join("model"))?;
    let stage1_forest = ForestModel::read(open(&dir.join("stage1").join("forest.rfmd"))?)?;
    let cars = load_candidates(dir, None)?;
    let rows = cars
        .par_iter()
        .map(|c| {
            let s1 = stage1_forest.predict_proba(&c.features.to_array())?;
            let cls = model.classify(c)?;
            let (day, car, cnn) = cnn_components(&model.day_cnn, &model.car_cnn, &c.images)?;
            Ok((
                c.vehicle_id.clone(),
                vec![s1, cls.forest, day, car, cnn, cls.probability, f64::from(u8::from(cls.ridesourcing))],
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    write_scores(&dir.join("scores.csv"), &SCORE_COLUMNS, &rows)?;
    Ok(rows.len())
}

fn truth_labels(dir: &Path) -> Result<BTreeMap<String, bool>> {
    Ok(load_truth(&dir.join("target_truth.csv"))?
        .into_iter()
        .map(|(k, a)| (k, a == Archetype::Ridesourcing))
        .collect())
}

fn metrics_for(
    ids: &[&str],
    scores: &BTreeMap<String, Vec<f64>>,
    column: usize,
    truth: &BTreeMap<String, bool>,
    top_k: &[f64],
) -> Result<Metrics> {
    let mut s = Vec::with_capacity(ids.len());
    let mut y = Vec::with_capacity(ids.len());
    for id in ids {
        s.push(scores.get(*id).ok_or_else(|| Error::MissingData(format!("no score for {id}")))?[column]);
        y.push(*truth.get(*id).ok_or_else(|| Error::MissingData(format!("no truth for {id}")))?);
    }
    Metrics::compute(ids, &s, &y, top_k)
}

/// Held-out metrics of the ensemble, its two views and the Stage-1 forest.
/// Single-view self-training baselines are added when `self_train` is set.
pub fn evaluate(cfg: &ScenarioConfig, dir: &Path, self_train_baselines: bool) -> Result<EvalReport> {
    prepare_run_dir(cfg, dir)?;
    let (header, scores) = read_scores(&dir.join("scores.csv"))?;
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::format(dir.join("scores.csv"), format!("missing column {name}")))
    };
    let truth = truth_labels(dir)?;
    let split = load_split(dir)?;
    let eval_ids: Vec<&str> = split.iter().filter(|&(_, &e)| e).map(|(k, _)| k.as_str()).collect();
    let m = |name: &str| metrics_for(&eval_ids, &scores, col(name)?, &truth, &cfg.top_k);

    let summary: CotrainSummary = serde_json::from_reader(open(&dir.join("cotrain").join("summary.json"))?)?;
    let seed_pool = load_pool(&dir.join("stage1").join("manifest.csv"))?;

    let (self_train_rf, self_train_cnn) = if self_train_baselines {
        let ids: BTreeSet<String> = seed_pool.candidates().map(str::to_string).collect();
        let cars = load_candidates(dir, Some(&ids))?;
        let eval_cars = load_candidates(dir, Some(&eval_ids.iter().map(|s| s.to_string()).collect()))?;
        let mut out = Vec::new();
        for views in [Views::ForestOnly, Views::CnnOnly] {
            let run = self_train(seed_pool.clone(), &cars, views, &cfg.pipeline())?;
            let rows = eval_cars
                .par_iter()
                .map(|c| Ok((c.vehicle_id.clone(), vec![run.models.probability(c)?])))
                .collect::<Result<BTreeMap<_, _>>>()?;
            out.push(metrics_for(&eval_ids, &rows, 0, &truth, &cfg.top_k)?);
        }
        let cnn = out.pop();
        (out.pop(), cnn)
    } else {
        (None, None)
    };

    let report = EvalReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        top_k_rule: TOP_K_RULE.into(),
        iterations: summary.iterations,
        stalled: summary.stalled,
        pool: PoolSummary {
            candidates: seed_pool.len(),
            stage1_positives: seed_pool.positives().len(),
            stage1_negatives: seed_pool.negatives().len(),
            final_positives: summary.positives,
            final_negatives: summary.negatives,
            final_unlabeled: summary.unlabeled,
        },
        ensemble: m("ensemble")?,
        stage1: m("stage1")?,
        forest_view: m("forest")?,
        cnn_view: m("cnn")?,
        self_train_rf,
        self_train_cnn,
        history: summary.history,
    };
    write_report(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// All target cars with their truth labels, in id order.
fn labelled_targets(dir: &Path) -> Result<Vec<(String, SharedFeatureVector, bool)>> {
    let truth = truth_labels(dir)?;
    load_features(&dir.join("target_features.csv"))?
        .into_iter()
        .map(|r| {
            let y = *truth
                .get(&r.vehicle_id)
                .ok_or_else(|| Error::MissingData(format!("no truth for {}", r.vehicle_id)))?;
            Ok((r.vehicle_id, r.features, y))
        })
        .collect()
}

/// Trains a source forest on the kept columns and evaluates it on every
/// labelled target car.
fn source_forest_metrics(
    cfg: &ScenarioConfig,
    source: &[(SharedFeatureVector, bool)],
    targets: &[(String, SharedFeatureVector, bool)],
    keep: &[usize],
) -> Result<Metrics> {
    let pick = |f: &SharedFeatureVector| {
        let a = f.to_array();
        keep.iter().map(|&k| a[k]).collect::<Vec<f64>>()
    };
    let x: Vec<Vec<f64>> = source.iter().map(|(f, _)| pick(f)).collect();
    let y: Vec<bool> = source.iter().map(|&(_, l)| l).collect();
    let names: Vec<String> = keep.iter().map(|&k| FEATURE_NAMES[k].to_string()).collect();
    let forest = train_forest(&x, &y, &names, &cfg.stage1_forest())?;
    let scores = targets
        .par_iter()
        .map(|(_, f, _)| forest.predict_proba(&pick(f)))
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<&str> = targets.iter().map(|(id, _, _)| id.as_str()).collect();
    let labels: Vec<bool> = targets.iter().map(|&(_, _, y)| y).collect();
    Metrics::compute(&ids, &scores, &labels, &cfg.top_k)
}

/// Leave-one-feature-group-out evaluation of the source forest on all
/// target cars.
pub fn ablate(cfg: &ScenarioConfig, dir: &Path) -> Result<AblationReport> {
    prepare_run_dir(cfg, dir)?;
    let source: Vec<(SharedFeatureVector, bool)> = load_source(dir)?.into_iter().map(|(_, f, y)| (f, y)).collect();
    let targets = labelled_targets(dir)?;
    let all: Vec<usize> = (0..FEATURE_NAMES.len()).collect();
    let baseline = source_forest_metrics(cfg, &source, &targets, &all)?;
    let mut groups = Vec::new();
    for g in FeatureGroup::ALL {
        let removed = g.columns();
        let keep: Vec<usize> = all.iter().copied().filter(|k| !removed.contains(k)).collect();
        let metrics = source_forest_metrics(cfg, &source, &targets, &keep)?;
        let top_k_delta = metrics
            .top_k_precision
            .iter()
            .map(|(k, v)| (k.clone(), v - baseline.top_k_precision[k]))
            .collect();
        groups.push(AblationRow {
            group: g.name().to_string(),
            removed_columns: removed.map(|k| FEATURE_NAMES[k].to_string()).collect(),
            metrics,
            top_k_delta,
        });
    }
    let report = AblationReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        top_k_rule: TOP_K_RULE.into(),
        baseline,
        groups,
    };
    write_report(&dir.join("ablation.json"), &report)?;
    Ok(report)
}

/// Source-forest quality when only the taxi traces are degraded by each
/// configured noise level.
pub fn noise_sweep(cfg: &ScenarioConfig, dir: &Path) -> Result<NoiseReport> {
    prepare_run_dir(cfg, dir)?;
    let fcfg = cfg.feature_config()?;
    let source = load_source(dir)?;
    let truth = load_truth(&dir.join("source_truth.csv"))?;
    let taxis: Vec<Trajectory> = load_traces(&dir.join("source_traces.csv"))?
        .into_iter()
        .filter(|t| truth.get(&t.vehicle_id) == Some(&Archetype::Taxi))
        .collect();
    let buses: Vec<(SharedFeatureVector, bool)> = source.iter().filter(|s| !s.2).map(|s| (s.1, false)).collect();
    let targets = labelled_targets(dir)?;
    let all: Vec<usize> = (0..FEATURE_NAMES.len()).collect();
    let clean: Vec<(SharedFeatureVector, bool)> = source.iter().map(|s| (s.1, s.2)).collect();
    let baseline = source_forest_metrics(cfg, &clean, &targets, &all)?;

    let mut levels = Vec::new();
    for &(minutes, meters) in &cfg.noise_levels {
        let spec = NoiseSpec::new(minutes, meters, derive_seed(cfg.seed, &format!("noise-{minutes}-{meters}")))?;
        let noisy = taxis
            .par_iter()
            .map(|t| optional(extract_features(&perturb(t, &spec)?, &fcfg)))
            .collect::<Result<Vec<_>>>()?;
        let mut train: Vec<(SharedFeatureVector, bool)> = noisy.into_iter().flatten().map(|f| (f.features, true)).collect();
        train.extend_from_slice(&buses);
        levels.push(NoiseRow {
            interval_min: minutes,
            radius_m: meters,
            metrics: source_forest_metrics(cfg, &train, &targets, &all)?,
        });
    }
    let report = NoiseReport {
        schema_version: SCHEMA_VERSION,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        top_k_rule: TOP_K_RULE.into(),
        baseline,
        levels,
    };
    write_report(&dir.join("noise_sweep.json"), &report)?;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub report: EvalReport,
}

/// simulate → extract → stage1 → cotrain → classify → evaluate under
/// `out/run_<config hash>`. A failing stage is reported by name; artifacts of
/// earlier stages stay on disk.
pub fn run_experiment(cfg: &ScenarioConfig, out: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let dir = run_dir(out, cfg);
    simulate(cfg, &dir).map_err(|e| e.in_stage("simulate"))?;
    extract(cfg, &dir).map_err(|e| e.in_stage("extract"))?;
    stage1(cfg, &dir).map_err(|e| e.in_stage("stage1"))?;
    cotrain_stage(cfg, &dir).map_err(|e| e.in_stage("cotrain"))?;
    classify(cfg, &dir).map_err(|e| e.in_stage("classify"))?;
    let report = evaluate(cfg, &dir, false).map_err(|e| e.in_stage("evaluate"))?;
    Ok(ExperimentOutcome { dir, report })
}
