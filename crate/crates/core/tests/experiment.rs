use std::fs;
use std::path::Path;

use tempfile::TempDir;

use ridetrace_core::config::ScenarioConfig;
use ridetrace_core::eval::experiment::{
    ablate, classify, cotrain_stage, evaluate, extract, noise_sweep, prepare_run_dir, run_dir, simulate, stage1,
};
use ridetrace_core::eval::run_experiment;
use ridetrace_core::Error;

fn small() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.apply_text(
        "seed=1
days=3
pipeline.delta=0.7
source.taxi=24
source.bus=16
target.ridesourcing=20
target.commuter=20
target.occasional=10
forest.trees=25
cnn.conv1=2
cnn.conv2=4
cnn.hidden=8
cnn.epochs=3
",
    )
    .unwrap();
    cfg.validate().unwrap();
    cfg
}

fn header(path: &Path) -> String {
    fs::read_to_string(path).unwrap().lines().next().unwrap().to_string()
}

#[test]
fn small_run_writes_every_artifact() {
    let tmp = TempDir::new().unwrap();
    let cfg = small();
    let out = run_experiment(&cfg, tmp.path()).unwrap();
    assert_eq!(out.dir, run_dir(tmp.path(), &cfg));
    let report = &out.report;
    assert_eq!(report.config_hash, cfg.hash());
    assert_eq!(report.ensemble.n, 20);
    assert_eq!(report.pool.candidates, 30);
    assert_eq!(report.iterations, report.history.len());
    assert!(report.self_train_rf.is_none());

    for f in [
        "config.txt",
        "source_traces.csv",
        "target_truth.csv",
        "split.csv",
        "stage1/forest.rfmd",
        "stage1/manifest.csv",
        "cotrain/manifest.csv",
        "cotrain/summary.json",
        "scores.csv",
        "report.json",
    ] {
        assert!(out.dir.join(f).is_file(), "missing {f}");
    }
    assert_eq!(header(&out.dir.join("split.csv")), "vehicle_id,role");
    assert_eq!(
        header(&out.dir.join("scores.csv")),
        "vehicle_id,stage1,forest,cnn_day,cnn_car,cnn,ensemble,predicted"
    );
    let images = fs::read_dir(out.dir.join("images")).unwrap().count();
    assert_eq!(images, 50);

    let before = fs::read(out.dir.join("report.json")).unwrap();
    let again = evaluate(&cfg, &out.dir, false).unwrap();
    assert_eq!(&again, report);
    assert_eq!(fs::read(out.dir.join("report.json")).unwrap(), before);

    let with_baselines = evaluate(&cfg, &out.dir, true).unwrap();
    assert_eq!(with_baselines.self_train_rf.unwrap().n, 20);
    assert_eq!(with_baselines.self_train_cnn.unwrap().n, 20);

    let ablation = ablate(&cfg, &out.dir).unwrap();
    assert_eq!(ablation.groups.len(), 5);
    assert_eq!(ablation.baseline.n, 50);
    let columns: usize = ablation.groups.iter().map(|g| g.removed_columns.len()).sum();
    assert_eq!(columns, 15);

    let noise = noise_sweep(&cfg, &out.dir).unwrap();
    assert_eq!(noise.levels.len(), 2);
    assert_eq!((noise.levels[0].interval_min, noise.levels[0].radius_m), (5.0, 100.0));
    assert!(out.dir.join("ablation.json").is_file() && out.dir.join("noise_sweep.json").is_file());
}

#[test]
fn stages_resume_from_files() {
    let tmp = TempDir::new().unwrap();
    let cfg = small();
    let dir = run_dir(tmp.path(), &cfg);
    let sim = simulate(&cfg, &dir).unwrap();
    assert_eq!((sim.source_vehicles, sim.target_vehicles), (40, 50));
    let ex = extract(&cfg, &dir).unwrap();
    assert_eq!(ex.pool_cars + ex.eval_cars + ex.dropped.len(), 50);
    let s1 = stage1(&cfg, &dir).unwrap();
    assert_eq!(s1.candidates, ex.pool_cars);
    let co = cotrain_stage(&cfg, &dir).unwrap();
    assert_eq!(co.positives + co.negatives + co.unlabeled, ex.pool_cars);
    // A finished co-training run is read back from its checkpoints.
    let resumed = cotrain_stage(&cfg, &dir).unwrap();
    assert_eq!(resumed.iterations, co.iterations);
    assert_eq!(classify(&cfg, &dir).unwrap(), 50 - ex.dropped.len());
}

#[test]
fn stage_without_inputs_reports_missing_data() {
    let tmp = TempDir::new().unwrap();
    let cfg = small();
    let dir = run_dir(tmp.path(), &cfg);
    assert!(matches!(stage1(&cfg, &dir), Err(Error::MissingData(_))));
}

#[test]
fn run_dir_belongs_to_one_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = small();
    prepare_run_dir(&cfg, tmp.path()).unwrap();
    prepare_run_dir(&cfg, tmp.path()).unwrap();
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(run_dir(tmp.path(), &cfg), run_dir(tmp.path(), &other));
    assert!(matches!(prepare_run_dir(&other, tmp.path()), Err(Error::Config(_))));
}
