//! Scenario configuration: a `key = value` text file layered over defaults,
//! with `RIDETRACE_*` environment overrides.
//!
//! Every key maps to an environment variable by upper-casing it and
//! replacing `.` with `_`, e.g. `grid.rows` → `RIDETRACE_GRID_ROWS`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::features::FeatureConfig;
use crate::forest::ForestParams;
use crate::cnn::TrainConfig;
use crate::pipeline::{CnnWidths, PipelineConfig};
use crate::seed::{derive_seed, short_hash};
use crate::sim::{CityModel, FleetCounts, NoiseSpec, SimConfig};
use crate::traj::{Bounds, GridSpec, UtcOffset, DEFAULT_GAP_CAP_S};

pub const ENV_PREFIX: &str = "RIDETRACE_";

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub days: usize,
    pub start_epoch: i64,
    pub tz_offset_hours: f64,
    pub sampling_period_s: i64,
    pub parked_heartbeat_s: i64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub bounds: Bounds,
    pub hotspots: usize,
    pub road_noise_m: f64,
    pub source_taxi: usize,
    pub source_bus: usize,
    pub shift_strength: f64,
    pub target_ridesourcing: usize,
    pub target_commuter: usize,
    pub target_occasional: usize,
    pub eval_fraction: f64,
    pub top_k: Vec<f64>,
    /// `(minutes, meters)` levels for the noise sweep.
    pub noise_levels: Vec<(f64, f64)>,
    pub saturation_s: f64,
    pub gap_cap_s: i64,
    pub delta: f64,
    pub max_iterations: usize,
    pub forest: ForestParams,
    pub cnn: TrainConfig,
    pub widths: CnnWidths,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            days: 7,
            start_epoch: 1_462_233_600,
            tz_offset_hours: 0.0,
            sampling_period_s: 60,
            parked_heartbeat_s: 600,
            grid_rows: 24,
            grid_cols: 24,
            bounds: Bounds {
                lat_min: 30.9,
                lat_max: 31.5,
                lon_min: 121.1,
                lon_max: 121.8,
            },
            hotspots: 12,
            road_noise_m: 20.0,
            source_taxi: 300,
            source_bus: 200,
            shift_strength: 0.5,
            target_ridesourcing: 150,
            target_commuter: 250,
            target_occasional: 100,
            eval_fraction: 0.4,
            top_k: vec![5.0, 10.0, 20.0],
            noise_levels: vec![(5.0, 100.0), (15.0, 500.0)],
            saturation_s: crate::image::DEFAULT_SATURATION_S,
            gap_cap_s: DEFAULT_GAP_CAP_S,
            delta: crate::pipeline::DEFAULT_DELTA,
            max_iterations: crate::pipeline::DEFAULT_MAX_ITERATIONS,
            forest: ForestParams::default(),
            cnn: TrainConfig {
                epochs: 10,
                ..TrainConfig::default()
            },
            widths: CnnWidths::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_levels(key: &str, value: &str) -> Result<Vec<(f64, f64)>> {
    value
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            let (m, r) = s
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("{key}: level {s:?} is not minutes:meters")))?;
            Ok((parse(key, m)?, parse(key, r)?))
        })
        .collect()
}

fn join<T: Display>(v: impl IntoIterator<Item = T>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl ScenarioConfig {
    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let b = &self.bounds;
        vec![
            ("seed", self.seed.to_string()),
            ("days", self.days.to_string()),
            ("start_epoch", self.start_epoch.to_string()),
            ("tz_offset_hours", self.tz_offset_hours.to_string()),
            ("sampling_period_s", self.sampling_period_s.to_string()),
            ("parked_heartbeat_s", self.parked_heartbeat_s.to_string()),
            ("grid.rows", self.grid_rows.to_string()),
            ("grid.cols", self.grid_cols.to_string()),
            ("city.lat_min", b.lat_min.to_string()),
            ("city.lat_max", b.lat_max.to_string()),
            ("city.lon_min", b.lon_min.to_string()),
            ("city.lon_max", b.lon_max.to_string()),
            ("city.hotspots", self.hotspots.to_string()),
            ("city.road_noise_m", self.road_noise_m.to_string()),
            ("source.taxi", self.source_taxi.to_string()),
            ("source.bus", self.source_bus.to_string()),
            ("source.shift_strength", self.shift_strength.to_string()),
            ("target.ridesourcing", self.target_ridesourcing.to_string()),
            ("target.commuter", self.target_commuter.to_string()),
            ("target.occasional", self.target_occasional.to_string()),
            ("eval.fraction", self.eval_fraction.to_string()),
            ("eval.top_k", join(&self.top_k)),
            ("noise.levels", join(self.noise_levels.iter().map(|(m, r)| format!("{m}:{r}")))),
            ("image.saturation_s", self.saturation_s.to_string()),
            ("features.gap_cap_s", self.gap_cap_s.to_string()),
            ("pipeline.delta", self.delta.to_string()),
            ("pipeline.max_iterations", self.max_iterations.to_string()),
            ("forest.trees", self.forest.n_trees.to_string()),
            ("forest.max_depth", self.forest.max_depth.to_string()),
            ("forest.min_leaf", self.forest.min_leaf.to_string()),
            ("cnn.conv1", self.widths.conv1.to_string()),
            ("cnn.conv2", self.widths.conv2.to_string()),
            ("cnn.hidden", self.widths.hidden.to_string()),
            ("cnn.learning_rate", self.cnn.learning_rate.to_string()),
            ("cnn.momentum", self.cnn.momentum.to_string()),
            ("cnn.batch_size", self.cnn.batch_size.to_string()),
            ("cnn.epochs", self.cnn.epochs.to_string()),
            ("cnn.patience", self.cnn.patience.to_string()),
            ("cnn.holdout_fraction", self.cnn.holdout_fraction.to_string()),
            ("cnn.class_balance", self.cnn.class_balance.to_string()),
            ("cnn.label_smoothing", self.cnn.label_smoothing.to_string()),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        Self::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "seed" => self.seed = parse(key, v)?,
            "days" => self.days = parse(key, v)?,
            "start_epoch" => self.start_epoch = parse(key, v)?,
            "tz_offset_hours" => self.tz_offset_hours = parse(key, v)?,
            "sampling_period_s" => self.sampling_period_s = parse(key, v)?,
            "parked_heartbeat_s" => self.parked_heartbeat_s = parse(key, v)?,
            "grid.rows" => self.grid_rows = parse(key, v)?,
            "grid.cols" => self.grid_cols = parse(key, v)?,
            "city.lat_min" => self.bounds.lat_min = parse(key, v)?,
            "city.lat_max" => self.bounds.lat_max = parse(key, v)?,
            "city.lon_min" => self.bounds.lon_min = parse(key, v)?,
            "city.lon_max" => self.bounds.lon_max = parse(key, v)?,
            "city.hotspots" => self.hotspots = parse(key, v)?,
            "city.road_noise_m" => self.road_noise_m = parse(key, v)?,
            "source.taxi" => self.source_taxi = parse(key, v)?,
            "source.bus" => self.source_bus = parse(key, v)?,
            "source.shift_strength" => self.shift_strength = parse(key, v)?,
            "target.ridesourcing" => self.target_ridesourcing = parse(key, v)?,
            "target.commuter" => self.target_commuter = parse(key, v)?,
            "target.occasional" => self.target_occasional = parse(key, v)?,
            "eval.fraction" => self.eval_fraction = parse(key, v)?,
            "eval.top_k" => self.top_k = parse_list(key, v)?,
            "noise.levels" => self.noise_levels = parse_levels(key, v)?,
            "image.saturation_s" => self.saturation_s = parse(key, v)?,
            "features.gap_cap_s" => self.gap_cap_s = parse(key, v)?,
            "pipeline.delta" => self.delta = parse(key, v)?,
            "pipeline.max_iterations" => self.max_iterations = parse(key, v)?,
            "forest.trees" => self.forest.n_trees = parse(key, v)?,
            "forest.max_depth" => self.forest.max_depth = parse(key, v)?,
            "forest.min_leaf" => self.forest.min_leaf = parse(key, v)?,
            "cnn.conv1" => self.widths.conv1 = parse(key, v)?,
            "cnn.conv2" => self.widths.conv2 = parse(key, v)?,
            "cnn.hidden" => self.widths.hidden = parse(key, v)?,
            "cnn.learning_rate" => self.cnn.learning_rate = parse(key, v)?,
            "cnn.momentum" => self.cnn.momentum = parse(key, v)?,
            "cnn.batch_size" => self.cnn.batch_size = parse(key, v)?,
            "cnn.epochs" => self.cnn.epochs = parse(key, v)?,
            "cnn.patience" => self.cnn.patience = parse(key, v)?,
            "cnn.holdout_fraction" => self.cnn.holdout_fraction = parse(key, v)?,
            "cnn.class_balance" => self.cnn.class_balance = parse(key, v)?,
            "cnn.label_smoothing" => self.cnn.label_smoothing = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies overrides from `(name, value)` pairs using the environment
    /// naming scheme; unrelated names are ignored.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        let by_env: BTreeMap<String, &str> = Self::keys().into_iter().map(|k| (env_name(k), k)).collect();
        for (name, value) in vars {
            if let Some(key) = by_env.get(name.as_ref()) {
                self.set(key, value.as_ref())?;
            }
        }
        Ok(())
    }

    /// Defaults, then the file (if any), then the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
            cfg.apply_text(&text)?;
        }
        cfg.apply_env(std::env::vars())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.sim_config(0).validate()?;
        self.grid()?;
        self.offset()?;
        self.forest_check()?;
        self.cnn.validate()?;
        if !(0.0..=1.0).contains(&self.shift_strength) {
            return Err(Error::Config(format!("shift strength {} outside [0, 1]", self.shift_strength)));
        }
        if !(self.eval_fraction > 0.0 && self.eval_fraction < 1.0) {
            return Err(Error::Config(format!("eval fraction {} outside (0, 1)", self.eval_fraction)));
        }
        if self.top_k.is_empty() || self.top_k.iter().any(|&k| !(k > 0.0 && k <= 100.0)) {
            return Err(Error::Config("top-k percentages must lie in (0, 100]".into()));
        }
        for &(m, r) in &self.noise_levels {
            NoiseSpec::new(m, r, 0)?;
        }
        if !(self.delta > 0.5 && self.delta <= 1.0) {
            return Err(Error::Config(format!("pipeline.delta {} outside (0.5, 1]", self.delta)));
        }
        if self.max_iterations == 0 || self.hotspots < 2 {
            return Err(Error::Config("need max_iterations ≥ 1 and at least two hotspots".into()));
        }
        if self.saturation_s.is_nan() || self.saturation_s <= 0.0 || self.gap_cap_s <= 0 {
            return Err(Error::Config("saturation and gap cap must be positive".into()));
        }
        Ok(())
    }

    fn forest_check(&self) -> Result<()> {
        if self.forest.n_trees == 0 || self.forest.max_depth == 0 || self.forest.min_leaf == 0 {
            return Err(Error::Config("forest sizes must be positive".into()));
        }
        Ok(())
    }

    /// Canonical `key=value` text of every setting.
    pub fn canonical(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        short_hash(self.canonical().as_bytes())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.bounds, self.grid_rows, self.grid_cols)
    }

    pub fn offset(&self) -> Result<UtcOffset> {
        UtcOffset::from_hours(self.tz_offset_hours)
    }

    pub fn feature_config(&self) -> Result<FeatureConfig> {
        Ok(FeatureConfig {
            gap_cap_s: self.gap_cap_s,
            ..FeatureConfig::new(self.grid()?, self.offset()?)
        })
    }

    pub fn sim_config(&self, seed: u64) -> SimConfig {
        SimConfig {
            days: self.days,
            start_epoch: self.start_epoch,
            offset: UtcOffset((self.tz_offset_hours * 3600.0).round() as i64),
            sampling_period_s: self.sampling_period_s,
            parked_heartbeat_s: self.parked_heartbeat_s,
            seed,
        }
    }

    pub fn target_city(&self) -> Result<CityModel> {
        CityModel::generate(self.bounds, self.hotspots, self.road_noise_m, derive_seed(self.seed, "city"))
    }

    pub fn source_counts(&self) -> FleetCounts {
        FleetCounts {
            taxi: self.source_taxi,
            bus: self.source_bus,
            ..FleetCounts::default()
        }
    }

    pub fn target_counts(&self) -> FleetCounts {
        FleetCounts {
            ridesourcing: self.target_ridesourcing,
            commuter: self.target_commuter,
            occasional: self.target_occasional,
            ..FleetCounts::default()
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        PipelineConfig {
            delta: self.delta,
            max_iterations: self.max_iterations,
            forest: self.forest.clone(),
            cnn: self.cnn,
            widths: self.widths,
            seed: derive_seed(self.seed, "pipeline"),
        }
    }

    pub fn stage1_forest(&self) -> ForestParams {
        ForestParams {
            seed: derive_seed(self.seed, "stage1"),
            ..self.forest.clone()
        }
    }
}

pub fn env_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_uppercase().replace('.', "_"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_and_env_layer_over_defaults() {
        let mut c = ScenarioConfig::default();
        c.apply_text("# comment\ngrid.rows = 12\nnoise.levels = 5:100, 15:500 ,30:1000\n\n").unwrap();
        assert_eq!(c.grid_rows, 12);
        assert_eq!(c.noise_levels, vec![(5.0, 100.0), (15.0, 500.0), (30.0, 1000.0)]);
        c.apply_env([("RIDETRACE_GRID_ROWS", "16"), ("PATH", "/bin"), ("RIDETRACE_CNN_EPOCHS", "9")]).unwrap();
        assert_eq!(c.grid_rows, 16);
        assert_eq!(c.cnn.epochs, 9);
        c.validate().unwrap();
    }

    #[test]
    fn bad_input_is_a_config_error() {
        let mut c = ScenarioConfig::default();
        assert!(c.apply_text("grid.rows = many").unwrap_err().is_config());
        assert!(c.apply_text("nonsense = 1").unwrap_err().is_config());
        assert!(c.apply_text("no equals sign").unwrap_err().is_config());
        c.set("pipeline.delta", "0.4").unwrap();
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn canonical_text_round_trips_and_hashes() {
        let mut c = ScenarioConfig::default();
        c.set("seed", "99").unwrap();
        let mut back = ScenarioConfig::default();
        back.apply_text(&c.canonical()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(ScenarioConfig::default().hash(), c.hash());
        assert_eq!(c.hash().len(), 16);
        assert_eq!(env_name("grid.rows"), "RIDETRACE_GRID_ROWS");
        assert_eq!(ScenarioConfig::keys().len(), c.entries().len());
    }
}
