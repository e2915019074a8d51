use super::*;
use crate::features::{extract_features, FeatureConfig};
use crate::traj::{haversine_km, GridSpec, TimeSlot, TracePoint, DAY_WINDOW_START_S};

fn cfg(seed: u64) -> SimConfig {
    SimConfig {
        seed,
        ..SimConfig::default()
    }
}

fn only(a: Archetype, n: usize) -> FleetCounts {
    let mut c = FleetCounts::default();
    match a {
        Archetype::Taxi => c.taxi = n,
        Archetype::Bus => c.bus = n,
        Archetype::Ridesourcing => c.ridesourcing = n,
        Archetype::Commuter => c.commuter = n,
        Archetype::Occasional => c.occasional = n,
    }
    c
}

fn feature_cfg(city: &CityModel) -> FeatureConfig {
    FeatureConfig::new(GridSpec::new(city.bounds, 24, 24).unwrap(), UtcOffset(0))
}

#[test]
fn zero_counts_give_empty_fleet() {
    let city = CityModel::shanghai(1);
    let fleet = simulate_fleet(&city, &FleetCounts::default(), &cfg(1), "car").unwrap();
    assert!(fleet.is_empty());
    let fleet = simulate_fleet(&city, &only(Archetype::Bus, 3), &cfg(1), "car").unwrap();
    assert_eq!(fleet.len(), 3);
    assert!(fleet.iter().all(|v| v.archetype == Archetype::Bus));
}

#[test]
fn fleets_are_deterministic_and_in_bounds() {
    let city = CityModel::shanghai(2);
    let counts = FleetCounts {
        taxi: 2,
        bus: 2,
        ridesourcing: 2,
        commuter: 2,
        occasional: 2,
    };
    let a = simulate_fleet(&city, &counts, &cfg(3), "car").unwrap();
    let b = simulate_fleet(&city, &counts, &cfg(3), "car").unwrap();
    assert_eq!(a, b);
    let c = simulate_fleet(&city, &counts, &cfg(4), "car").unwrap();
    assert_ne!(a, c);
    for v in &a {
        assert!(!v.trajectory.is_empty(), "{} has no points", v.trajectory.vehicle_id);
        assert!(v
            .trajectory
            .points()
            .iter()
            .all(|p| city.bounds.contains(p.lat, p.lon)));
    }
}

#[test]
fn ridesourcing_is_silent_before_six() {
    let city = CityModel::shanghai(5);
    let fleet = simulate_fleet(&city, &only(Archetype::Ridesourcing, 20), &cfg(5), "car").unwrap();
    for v in &fleet {
        assert!(v
            .trajectory
            .points()
            .iter()
            .all(|p| UtcOffset(0).second_of_day(p.time) >= DAY_WINDOW_START_S));
    }
    let taxis = simulate_fleet(&city, &only(Archetype::Taxi, 3), &cfg(5), "car").unwrap();
    assert!(taxis
        .iter()
        .all(|v| v.trajectory.points().iter().any(|p| UtcOffset(0).second_of_day(p.time) < DAY_WINDOW_START_S)));
}

fn class_features(city: &CityModel, a: Archetype, n: usize) -> Vec<crate::features::SharedFeatureVector> {
    let fcfg = feature_cfg(city);
    simulate_fleet(city, &only(a, n), &cfg(7), "v")
        .unwrap()
        .iter()
        .map(|v| extract_features(&v.trajectory, &fcfg).unwrap().features)
        .collect()
}

fn mean_of(v: &[crate::features::SharedFeatureVector], f: impl Fn(&crate::features::SharedFeatureVector) -> f64) -> f64 {
    v.iter().map(f).sum::<f64>() / v.len() as f64
}

#[test]
fn archetypes_separate_on_distance_and_regularity() {
    let city = CityModel::shanghai(6);
    let taxi = class_features(&city, Archetype::Taxi, 50);
    let ride = class_features(&city, Archetype::Ridesourcing, 50);
    let commuter = class_features(&city, Archetype::Commuter, 50);
    let occasional = class_features(&city, Archetype::Occasional, 50);
    let d = |v: &[_]| mean_of(v, |f| f.dist_mean);
    assert!(d(&taxi) > d(&ride), "{} vs {}", d(&taxi), d(&ride));
    assert!(d(&ride) > d(&commuter), "{} vs {}", d(&ride), d(&commuter));
    assert!(d(&commuter) > d(&occasional), "{} vs {}", d(&commuter), d(&occasional));

    let whole = TimeSlot::Whole.index();
    let sim = |v: &[_]| mean_of(v, |f| f.interday_sim[whole]);
    assert!(sim(&commuter) > sim(&taxi), "{} vs {}", sim(&commuter), sim(&taxi));
}

#[test]
fn shift_strength_extremes() {
    let city = CityModel::shanghai(8);
    assert_eq!(domain_shift(&city, 0.0).unwrap().hotspots, city.hotspots);
    let moved = domain_shift(&city, 1.0).unwrap();
    for (a, b) in city.hotspots.iter().zip(&moved.hotspots) {
        assert!((a.lat, a.lon) != (b.lat, b.lon));
    }
    let half = domain_shift(&city, 0.5).unwrap();
    let n_moved = city
        .hotspots
        .iter()
        .zip(&half.hotspots)
        .filter(|(a, b)| (a.lat, a.lon) != (b.lat, b.lon))
        .count();
    assert_eq!(n_moved, 6);
    assert!((half.hotspots.iter().map(|h| h.weight).sum::<f64>() - 1.0).abs() < 1e-12);
    assert!(domain_shift(&city, 1.5).is_err());
}

fn minute_trace() -> Trajectory {
    let pts = (0..120)
        .map(|i| TracePoint::new(31.2 + i as f64 * 1e-4, 121.4, 1_462_233_600 + 60 * i))
        .collect();
    Trajectory::new("t", pts)
}

#[test]
fn perturb_downsamples_without_moving_at_zero_radius() {
    let t = minute_trace();
    let out = perturb(&t, &NoiseSpec::new(5.0, 0.0, 1).unwrap()).unwrap();
    assert_eq!(out.len(), 24);
    for (k, p) in out.points().iter().enumerate() {
        assert_eq!(*p, t.points()[5 * k]);
    }
    let same = perturb(&t, &NoiseSpec::new(1.0, 0.0, 1).unwrap()).unwrap();
    assert_eq!(same, t);
}

#[test]
fn perturbed_points_stay_within_radius() {
    let t = minute_trace();
    let spec = NoiseSpec::new(1.0, 500.0, 9).unwrap();
    let out = perturb(&t, &spec).unwrap();
    assert_eq!(out.len(), t.len());
    let mut moved = 0;
    for (a, b) in t.points().iter().zip(out.points()) {
        let d = haversine_km(a, b) * 1000.0;
        assert!(d <= 500.0 * (1.0 + 1e-9), "moved {d} m");
        moved += usize::from(d > 0.0);
    }
    assert!(moved > 100);
    assert_eq!(perturb(&t, &spec).unwrap(), out);
    assert!(NoiseSpec::new(0.0, 1.0, 0).is_err());
    assert!(NoiseSpec::new(1.0, -1.0, 0).is_err());
}

#[test]
fn ground_truth_round_trips() {
    let rows = [("car_1", Archetype::Commuter), ("car_2", Archetype::Ridesourcing)];
    let mut buf = Vec::new();
    write_ground_truth(&mut buf, rows.iter().map(|&(i, a)| (i, a))).unwrap();
    assert!(String::from_utf8_lossy(&buf).starts_with("vehicle_id,archetype\n"));
    let back = read_ground_truth(buf.as_slice()).unwrap();
    assert_eq!(back, vec![("car_1".to_string(), Archetype::Commuter), ("car_2".to_string(), Archetype::Ridesourcing)]);
}
