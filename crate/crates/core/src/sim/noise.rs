use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{meters_per_deg_lon, METERS_PER_DEG_LAT};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::traj::{TracePoint, Trajectory};

/// Down-sampling to one fix per `interval_min` minutes plus uniform
/// displacement within `radius_m` meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub interval_min: f64,
    pub radius_m: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(interval_min: f64, radius_m: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            interval_min,
            radius_m,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.interval_min > 0.0 && self.interval_min.is_finite()) {
            return Err(Error::Config(format!("noise interval {} must be positive", self.interval_min)));
        }
        if !(self.radius_m >= 0.0 && self.radius_m.is_finite()) {
            return Err(Error::Config(format!("noise radius {} must be non-negative", self.radius_m)));
        }
        Ok(())
    }

    /// Label such as `5min_100m`.
    pub fn label(&self) -> String {
        format!("{}min_{}m", self.interval_min, self.radius_m)
    }
}

/// Keeps the earliest fix of each `X`-minute window (windows aligned to the
/// epoch) and moves it to a uniformly random point of the `Y`-meter disc
/// around it. The generator is seeded per vehicle.
pub fn perturb(t: &Trajectory, spec: &NoiseSpec) -> Result<Trajectory> {
    spec.validate()?;
    let window = (spec.interval_min * 60.0).round() as i64;
    if window < 1 {
        return Err(Error::Config("noise interval below one second".into()));
    }
    let mut rng = rng_for(spec.seed, &t.vehicle_id);
    let mut out: Vec<TracePoint> = Vec::new();
    let mut last_window = None;
    for p in t.points() {
        let w = p.time.div_euclid(window);
        if last_window == Some(w) {
            continue;
        }
        last_window = Some(w);
        out.push(displace(p, spec.radius_m, &mut rng));
    }
    Ok(Trajectory::new(t.vehicle_id.clone(), out))
}

fn displace<R: Rng>(p: &TracePoint, radius_m: f64, rng: &mut R) -> TracePoint {
    if radius_m == 0.0 {
        return *p;
    }
    let r = radius_m * rng.random::<f64>().sqrt();
    let theta = rng.random_range(0.0..std::f64::consts::TAU);
    let lat = p.lat + r * theta.cos() / METERS_PER_DEG_LAT;
    let mid = (p.lat + lat) / 2.0;
    let lon = p.lon + r * theta.sin() / meters_per_deg_lon(mid);
    TracePoint::new(lat, lon, p.time)
}
