//! Synthetic fleet generator: a city of weighted hotspots and five vehicle
//! archetypes driving straight-line legs between waypoints.

mod agent;
mod noise;

pub use noise::{perturb, NoiseSpec};

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::VehicleLabel;
use crate::seed::rng_for;
use crate::traj::{Bounds, Trajectory, UtcOffset};

/// Meters per degree of latitude on the mean Earth sphere.
pub const METERS_PER_DEG_LAT: f64 = crate::traj::EARTH_RADIUS_KM * 1000.0 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hotspot {
    pub lat: f64,
    pub lon: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CityModel {
    pub bounds: Bounds,
    pub hotspots: Vec<Hotspot>,
    /// Standard deviation of per-fix positional noise.
    pub road_noise_m: f64,
    pub seed: u64,
}

impl CityModel {
    /// A Shanghai-sized box with `n_hotspots` attraction points drawn around
    /// the centre.
    pub fn generate(bounds: Bounds, n_hotspots: usize, road_noise_m: f64, seed: u64) -> Result<Self> {
        bounds.validate()?;
        if n_hotspots < 2 {
            return Err(Error::Config("a city needs at least two hotspots".into()));
        }
        let mut rng = rng_for(seed, "city");
        let mut city = Self {
            bounds,
            hotspots: Vec::with_capacity(n_hotspots),
            road_noise_m,
            seed,
        };
        for _ in 0..n_hotspots {
            let (lat, lon) = city.central_point(&mut rng);
            let weight = rng.random_range(0.5..2.0);
            city.hotspots.push(Hotspot { lat, lon, weight });
        }
        city.normalize_weights();
        city.validate()?;
        Ok(city)
    }

    pub fn shanghai(seed: u64) -> Self {
        let bounds = Bounds {
            lat_min: 30.9,
            lat_max: 31.5,
            lon_min: 121.1,
            lon_max: 121.8,
        };
        Self::generate(bounds, 12, 20.0, seed).expect("built-in city parameters are valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.hotspots.len() < 2 {
            return Err(Error::Config("a city needs at least two hotspots".into()));
        }
        if self.hotspots.iter().any(|h| h.weight.is_nan() || h.weight <= 0.0 || !self.bounds.contains(h.lat, h.lon)) {
            return Err(Error::Config("hotspots need positive weight and in-bounds positions".into()));
        }
        if !(self.road_noise_m >= 0.0 && self.road_noise_m.is_finite()) {
            return Err(Error::Config(format!("road noise {} must be non-negative", self.road_noise_m)));
        }
        Ok(())
    }

    fn normalize_weights(&mut self) {
        let total: f64 = self.hotspots.iter().map(|h| h.weight).sum();
        for h in &mut self.hotspots {
            h.weight /= total;
        }
    }

    fn center(&self) -> (f64, f64) {
        let b = &self.bounds;
        ((b.lat_min + b.lat_max) / 2.0, (b.lon_min + b.lon_max) / 2.0)
    }

    /// Point from a Gaussian around the centre with a spread of an eighth of
    /// the box, clamped inside.
    fn central_point<R: Rng>(&self, rng: &mut R) -> (f64, f64) {
        self.area_point(rng, 0.125)
    }

    /// Gaussian around the centre with standard deviation `spread` times the
    /// box size, clamped inside.
    fn area_point<R: Rng>(&self, rng: &mut R, spread: f64) -> (f64, f64) {
        let b = &self.bounds;
        let (clat, clon) = self.center();
        let dlat = Normal::new(0.0, (b.lat_max - b.lat_min) * spread).unwrap().sample(rng);
        let dlon = Normal::new(0.0, (b.lon_max - b.lon_min) * spread).unwrap().sample(rng);
        self.clamp(clat + dlat, clon + dlon)
    }

    /// A point near a hotspot chosen by weight.
    fn hotspot_point<R: Rng>(&self, rng: &mut R, spread_m: f64) -> (f64, f64) {
        let h = self
            .hotspots
            .choose_weighted(rng, |h| h.weight)
            .expect("hotspot weights are positive");
        self.jitter(rng, (h.lat, h.lon), spread_m)
    }

    fn jitter<R: Rng>(&self, rng: &mut R, (lat, lon): (f64, f64), sigma_m: f64) -> (f64, f64) {
        if sigma_m <= 0.0 {
            return (lat, lon);
        }
        let n = Normal::new(0.0, sigma_m).unwrap();
        let (dy, dx) = (n.sample(rng), n.sample(rng));
        self.clamp(lat + dy / METERS_PER_DEG_LAT, lon + dx / meters_per_deg_lon(lat))
    }

    fn clamp(&self, lat: f64, lon: f64) -> (f64, f64) {
        let b = &self.bounds;
        (lat.clamp(b.lat_min, b.lat_max), lon.clamp(b.lon_min, b.lon_max))
    }
}

pub(crate) fn meters_per_deg_lon(lat: f64) -> f64 {
    METERS_PER_DEG_LAT * lat.to_radians().cos()
}

/// Re-draws hotspot weights (blended by `strength`) and relocates
/// `round(strength · n)` randomly chosen hotspots.
pub fn domain_shift(city: &CityModel, strength: f64) -> Result<CityModel> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Config(format!("shift strength {strength} outside [0, 1]")));
    }
    let mut out = city.clone();
    if strength == 0.0 {
        return Ok(out);
    }
    let mut rng = rng_for(city.seed, &format!("shift-{strength}"));
    for h in &mut out.hotspots {
        let fresh: f64 = rng.random_range(0.5..2.0) / city.hotspots.len() as f64;
        h.weight = (1.0 - strength) * h.weight + strength * fresh;
    }
    let n_move = (strength * city.hotspots.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..city.hotspots.len()).collect();
    order.shuffle(&mut rng);
    for &i in &order[..n_move] {
        loop {
            let (lat, lon) = city.central_point(&mut rng);
            if (lat, lon) != (city.hotspots[i].lat, city.hotspots[i].lon) {
                out.hotspots[i].lat = lat;
                out.hotspots[i].lon = lon;
                break;
            }
        }
    }
    out.normalize_weights();
    out.seed = crate::seed::derive_seed(city.seed, &format!("shifted-{strength}"));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Archetype {
    Taxi,
    Bus,
    Ridesourcing,
    Commuter,
    Occasional,
}

impl Archetype {
    pub const ALL: [Archetype; 5] = [
        Archetype::Taxi,
        Archetype::Bus,
        Archetype::Ridesourcing,
        Archetype::Commuter,
        Archetype::Occasional,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Archetype::Taxi => "taxi",
            Archetype::Bus => "bus",
            Archetype::Ridesourcing => "ridesourcing",
            Archetype::Commuter => "commuter",
            Archetype::Occasional => "occasional",
        }
    }

    pub fn label(self) -> VehicleLabel {
        match self {
            Archetype::Taxi => VehicleLabel::Taxi,
            Archetype::Bus => VehicleLabel::Bus,
            Archetype::Ridesourcing => VehicleLabel::Ridesourcing,
            Archetype::Commuter | Archetype::Occasional => VehicleLabel::Other,
        }
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Archetype {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Archetype::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown archetype {s:?}")))
    }
}

/// Behavioural knobs of one archetype. Ranges are sampled uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeParams {
    pub archetype: Archetype,
    /// Local hours of the working session (may exceed 24 for all-day service).
    pub active_hours: (f64, f64),
    /// Minutes between drop-off and the next pick-up during service hours.
    pub idle_minutes: (f64, f64),
    /// Average driving speed.
    pub speed_kmh: (f64, f64),
    /// Spread of passenger-trip endpoints around hotspots.
    pub hotspot_spread_m: f64,
    /// Probability that a trip endpoint is near a hotspot rather than anywhere
    /// in the central area.
    pub hotspot_bias: f64,
    /// Spread of other trip endpoints around the centre, as a fraction of
    /// the box size.
    pub roam_spread: f64,
    /// Probability of driving on a given day.
    pub day_probability: f64,
    /// Length of a ridesourcing driver's daily session, drawn once per driver.
    pub session_hours: (f64, f64),
    /// Spread of non-hotspot errand destinations around home.
    pub errand_radius_m: f64,
    /// Probability that a bus serves its branch variant on a given day.
    pub route_variant_share: f64,
}

impl ArchetypeParams {
    pub fn default_for(archetype: Archetype) -> Self {
        let base = Self {
            archetype,
            active_hours: (6.0, 24.0),
            idle_minutes: (2.0, 8.0),
            speed_kmh: (22.0, 32.0),
            hotspot_spread_m: 1500.0,
            hotspot_bias: 0.7,
            roam_spread: 0.125,
            day_probability: 1.0,
            session_hours: (0.0, 0.0),
            errand_radius_m: 3000.0,
            route_variant_share: 0.0,
        };
        match archetype {
            Archetype::Taxi => Self {
                active_hours: (0.0, 24.0),
                hotspot_bias: 0.3,
                roam_spread: 0.4,
                ..base
            },
            Archetype::Bus => Self {
                active_hours: (6.0, 22.0),
                idle_minutes: (5.0, 10.0),
                speed_kmh: (16.0, 20.0),
                route_variant_share: 0.25,
                ..base
            },
            Archetype::Ridesourcing => Self {
                active_hours: (7.5, 22.0),
                idle_minutes: (4.0, 14.0),
                hotspot_bias: 0.5,
                roam_spread: 0.25,
                day_probability: 0.85,
                session_hours: (1.0, 14.0),
                ..base
            },
            Archetype::Commuter => Self {
                active_hours: (7.0, 19.0),
                hotspot_bias: 0.3,
                day_probability: 0.95,
                ..base
            },
            Archetype::Occasional => Self {
                idle_minutes: (30.0, 150.0),
                errand_radius_m: 8000.0,
                hotspot_bias: 0.3,
                day_probability: 0.6,
                ..base
            },
        }
    }
}

/// Number of vehicles to generate per archetype.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FleetCounts {
    pub taxi: usize,
    pub bus: usize,
    pub ridesourcing: usize,
    pub commuter: usize,
    pub occasional: usize,
}

impl FleetCounts {
    pub fn get(&self, a: Archetype) -> usize {
        match a {
            Archetype::Taxi => self.taxi,
            Archetype::Bus => self.bus,
            Archetype::Ridesourcing => self.ridesourcing,
            Archetype::Commuter => self.commuter,
            Archetype::Occasional => self.occasional,
        }
    }

    pub fn total(&self) -> usize {
        Archetype::ALL.iter().map(|&a| self.get(a)).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub days: usize,
    /// UTC second of local midnight of the first simulated day.
    pub start_epoch: i64,
    pub offset: UtcOffset,
    pub sampling_period_s: i64,
    /// Interval between fixes of a parked private car during 06:00–24:00.
    pub parked_heartbeat_s: i64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            days: 7,
            start_epoch: 1_462_233_600,
            offset: UtcOffset(0),
            sampling_period_s: 60,
            parked_heartbeat_s: 600,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.days == 0 {
            return Err(Error::Config("simulation needs at least one day".into()));
        }
        if self.sampling_period_s <= 0 || self.parked_heartbeat_s <= 0 {
            return Err(Error::Config("sampling periods must be positive".into()));
        }
        if self.parked_heartbeat_s % self.sampling_period_s != 0 {
            return Err(Error::Config(
                "parked heartbeat must be a multiple of the sampling period".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimVehicle {
    pub trajectory: Trajectory,
    pub archetype: Archetype,
}

/// Generates `counts` vehicles with ids `{prefix}_{nnnn}` assigned over a
/// seeded shuffle of archetypes, so ids carry no class information.
pub fn simulate_fleet(
    city: &CityModel,
    counts: &FleetCounts,
    cfg: &SimConfig,
    prefix: &str,
) -> Result<Vec<SimVehicle>> {
    city.validate()?;
    cfg.validate()?;
    let mut kinds: Vec<Archetype> = Archetype::ALL
        .iter()
        .flat_map(|&a| std::iter::repeat_n(a, counts.get(a)))
        .collect();
    kinds.shuffle(&mut rng_for(cfg.seed, &format!("{prefix}-order")));
    let width = kinds.len().to_string().len().max(4);
    Ok(kinds
        .par_iter()
        .enumerate()
        .map(|(i, &archetype)| {
            let id = format!("{prefix}_{i:0width$}");
            let params = ArchetypeParams::default_for(archetype);
            let mut rng = rng_for(cfg.seed, &id);
            let points = agent::simulate_vehicle(city, &params, cfg, &mut rng);
            SimVehicle {
                trajectory: Trajectory::new(id, points),
                archetype,
            }
        })
        .collect())
}

pub const GROUND_TRUTH_HEADER: [&str; 2] = ["vehicle_id", "archetype"];

pub fn write_ground_truth<'a, W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = (&'a str, Archetype)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(GROUND_TRUTH_HEADER)?;
    for (id, a) in rows {
        w.write_record([id, a.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth<R: Read>(reader: R) -> Result<Vec<(String, Archetype)>> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(GROUND_TRUTH_HEADER) {
        return Err(Error::format("<ground truth>", "unexpected header"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::format("<ground truth>", format!("row with {} fields", rec.len())));
        }
        out.push((rec[0].to_string(), rec[1].parse()?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
