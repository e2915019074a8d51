use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::features::NUM_FEATURES;
use crate::image::{stack, TrajectoryImage};

fn small_cfg(seed: u64) -> PipelineConfig {
    PipelineConfig {
        forest: ForestParams {
            n_trees: 15,
            ..ForestParams::default()
        },
        cnn: TrainConfig {
            epochs: 4,
            patience: 2,
            batch_size: 8,
            ..TrainConfig::default()
        },
        widths: CnnWidths {
            conv1: 2,
            conv2: 2,
            hidden: 4,
        },
        seed,
        ..PipelineConfig::default()
    }
}

fn car(id: &str, positive: bool, noise: f64, rng: &mut ChaCha8Rng) -> Candidate {
    let mut f = [0.0; NUM_FEATURES];
    for (k, v) in f.iter_mut().enumerate() {
        let signal = if positive { 1.0 } else { 0.0 } * (k % 3) as f64;
        *v = signal + noise * rng.random::<f64>();
    }
    let images = (0..2)
        .map(|d| {
            let mut px = Array2::zeros((4, 4));
            for ((_, c), v) in px.indexed_iter_mut() {
                let bright = (c < 2) == positive;
                *v = if bright { 200.0 } else { 20.0 } + noise * 30.0 * rng.random::<f64>();
            }
            TrajectoryImage { pixels: px, day_index: d }
        })
        .collect();
    Candidate {
        vehicle_id: id.to_string(),
        features: SharedFeatureVector::from_array(&f),
        images: stack(id, images, 2, (4, 4)).unwrap(),
    }
}

fn fleet(n: usize, noise: f64, seed: u64) -> (Vec<Candidate>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<bool> = (0..n).map(|i| i % 2 == 0).collect();
    let cars = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| car(&format!("car_{i:03}"), y, noise, &mut rng))
        .collect();
    (cars, labels)
}

fn seeded(cars: &[Candidate], labels: &[bool], n_seed: usize) -> LabeledPool {
    let mut pool = LabeledPool::new(cars.iter().map(|c| c.vehicle_id.clone()));
    for (c, &y) in cars.iter().zip(labels).take(n_seed) {
        pool.assign(
            &c.vehicle_id,
            PoolEntry {
                label: y,
                source: Provenance::Stage1,
                iteration: 0,
                confidence: 1.0,
            },
        )
        .unwrap();
    }
    pool
}

#[test]
fn confidence_rule() {
    assert!(is_confident(0.95, 0.9));
    assert!(!is_confident(0.9, 0.9));
    assert!(is_confident(1.0, 1.0));
    assert!(!is_confident(0.999, 1.0));
}

#[test]
fn stage1_seeds_by_threshold() {
    let (cars, labels) = fleet(30, 0.3, 1);
    let source: Vec<(SharedFeatureVector, bool)> = cars.iter().zip(&labels).map(|(c, &y)| (c.features, y)).collect();
    let params = ForestParams {
        n_trees: 25,
        ..ForestParams::default()
    };
    let s = stage1_seed(&source, &cars, 0.9, &params).unwrap();
    // Candidates coincide with the training rows, so they are seeded with their labels.
    for (c, &y) in cars.iter().zip(&labels) {
        let e = s.pool.entry(&c.vehicle_id).expect("seeded");
        assert_eq!(e.label, y);
        assert_eq!(e.source, Provenance::Stage1);
    }
    let strict = stage1_seed(&source, &cars, 1.0, &params).unwrap();
    for (id, e) in strict.pool.labeled() {
        assert_eq!(e.confidence, 1.0, "{id}");
    }
    for (id, &p) in &strict.scores {
        assert_eq!(strict.pool.entry(id).is_some(), p == 0.0 || p == 1.0);
    }
    assert!(stage1_seed(&source, &cars, 0.5, &params).is_err());
    let one_class: Vec<_> = source.iter().map(|&(f, _)| (f, true)).collect();
    assert!(matches!(stage1_seed(&one_class, &cars, 0.9, &params), Err(Error::DegenerateLabels(_))));
}

#[test]
fn indistinguishable_cars_stop_after_one_round() {
    let (cars, labels) = fleet(12, 0.0, 2);
    let same: Vec<Candidate> = cars
        .iter()
        .map(|c| Candidate {
            vehicle_id: c.vehicle_id.clone(),
            features: cars[0].features,
            images: ImageStack {
                vehicle_id: c.vehicle_id.clone(),
                ..cars[0].images.clone()
            },
        })
        .collect();
    let pool = seeded(&same, &labels, 6);
    let out = cotrain(pool.clone(), &same, &PipelineConfig { delta: 1.0, ..small_cfg(1) }, None).unwrap();
    assert_eq!(out.iterations, 1);
    assert_eq!(out.pool, pool);
    assert!(!out.stalled);
}

#[test]
fn complete_pool_trains_once() {
    let (cars, labels) = fleet(10, 0.2, 3);
    let pool = seeded(&cars, &labels, 10);
    let out = cotrain(pool.clone(), &cars, &small_cfg(2), None).unwrap();
    assert_eq!(out.iterations, 1);
    assert_eq!(out.history[0].added, 0);
    assert_eq!(out.pool, pool);
}

#[test]
fn cotrain_labels_a_separable_fleet() {
    let (cars, labels) = fleet(40, 0.3, 4);
    let pool = seeded(&cars, &labels, 8);
    let out = cotrain(pool.clone(), &cars, &small_cfg(3), None).unwrap();
    assert!(out.pool.extends(&pool));
    assert!(out.iterations <= cars.len());
    assert!(out.pool.n_labeled() > pool.n_labeled());
    for (id, e) in out.pool.labeled() {
        let i: usize = id[4..].parse().unwrap();
        assert_eq!(e.label, labels[i], "{id} mislabeled by {}", e.source);
    }
    let correct = cars
        .iter()
        .zip(&labels)
        .filter(|(c, &y)| out.ensemble.classify(c).unwrap().ridesourcing == y)
        .count();
    assert_eq!(correct, cars.len());

    let again = cotrain(pool, &cars, &small_cfg(3), None).unwrap();
    assert_eq!(again.pool, out.pool);
    assert_eq!(again.ensemble, out.ensemble);
}

#[test]
fn self_training_records_its_view() {
    let (cars, labels) = fleet(30, 0.3, 5);
    let pool = seeded(&cars, &labels, 6);
    let rf = self_train(pool.clone(), &cars, Views::ForestOnly, &small_cfg(4)).unwrap();
    assert!(rf.models.cnns.is_none());
    for (_, e) in rf.pool.labeled().filter(|(_, e)| e.iteration > 0) {
        assert_eq!(e.source, Provenance::SelfTrainRf);
    }
    let cnn = self_train(pool.clone(), &cars, Views::CnnOnly, &small_cfg(4)).unwrap();
    assert!(cnn.models.forest.is_none());
    for (_, e) in cnn.pool.labeled().filter(|(_, e)| e.iteration > 0) {
        assert_eq!(e.source, Provenance::SelfTrainCnn);
    }
    assert!(self_train(pool, &cars, Views::CoTrain, &small_cfg(4)).is_err());
}

#[test]
fn forest_self_training_below_threshold_keeps_seed_pool() {
    let (cars, labels) = fleet(12, 0.0, 6);
    let same: Vec<Candidate> = cars
        .iter()
        .map(|c| Candidate {
            features: cars[0].features,
            ..c.clone()
        })
        .collect();
    let pool = seeded(&same, &labels, 4);
    let out = self_train(pool.clone(), &same, Views::ForestOnly, &small_cfg(5)).unwrap();
    assert_eq!(out.pool, pool);
    assert_eq!(out.iterations, 1);
}

#[test]
fn combine_averages_and_breaks_ties_positive() {
    let c = Classification::combine(0.9, 0.9, 0.5);
    assert!(c.ridesourcing);
    assert!((c.confidence - 0.9).abs() < 1e-15);
    let c = Classification::combine(0.2, 0.8, 0.5);
    assert_eq!(c.probability, 0.5);
    assert!(c.ridesourcing);
    assert_eq!(c.confidence, 0.5);
    let c = Classification::combine(0.1, 0.1, 0.5);
    assert!(!c.ridesourcing);
    assert!((c.confidence - 0.9).abs() < 1e-15);
}

#[test]
fn checkpoints_resume_to_the_same_result() {
    let (cars, labels) = fleet(30, 0.4, 7);
    let pool = seeded(&cars, &labels, 6);
    let cfg = small_cfg(6);
    let full = cotrain(pool.clone(), &cars, &cfg, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let first = cotrain(pool.clone(), &cars, &cfg, Some(dir.path())).unwrap();
    assert_eq!(first.pool, full.pool);
    assert_eq!(first.ensemble, full.ensemble);
    let manifest = dir.path().join(format!("iter_{:03}", first.iterations)).join("manifest.csv");
    assert!(manifest.is_file());

    // A finished run reloads its models.
    let reloaded = cotrain(pool.clone(), &cars, &cfg, Some(dir.path())).unwrap();
    assert_eq!(reloaded.pool, full.pool);
    assert_eq!(reloaded.iterations, full.iterations);
    assert_eq!(reloaded.ensemble.forest, full.ensemble.forest);
    assert_eq!(reloaded.ensemble.day_cnn.params, full.ensemble.day_cnn.params);

    // An interrupted run continues from its last round.
    if full.iterations > 1 {
        let last = dir.path().join(format!("iter_{:03}", full.iterations));
        fs::remove_dir_all(&last).unwrap();
        let resumed = cotrain(pool.clone(), &cars, &cfg, Some(dir.path())).unwrap();
        assert_eq!(resumed.pool, full.pool);
        assert_eq!(resumed.ensemble.car_cnn.params, full.ensemble.car_cnn.params);
        assert_eq!(resumed.history, full.history);
    }

    let other = seeded(&cars, &labels.iter().map(|y| !y).collect::<Vec<_>>(), 6);
    assert!(cotrain(other, &cars, &cfg, Some(dir.path())).is_err());
}

#[test]
fn ensemble_saves_and_loads() {
    let (cars, labels) = fleet(10, 0.2, 8);
    let out = cotrain(seeded(&cars, &labels, 10), &cars, &small_cfg(7), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    out.ensemble.save(dir.path()).unwrap();
    let back = EnsembleClassifier::load(dir.path()).unwrap();
    assert_eq!(back.forest, out.ensemble.forest);
    assert_eq!(back.day_cnn.params, out.ensemble.day_cnn.params);
    assert_eq!(back.classify(&cars[0]).unwrap(), out.ensemble.classify(&cars[0]).unwrap());
}
