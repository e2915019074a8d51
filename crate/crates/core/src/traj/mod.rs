//! Trace types, grid discretization, day segmentation and stay-time accounting.

mod io;

pub use io::{read_traces, write_traces, IngestStats};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;
pub const SECONDS_PER_HOUR: i64 = 3_600;
/// Mean Earth radius used by all great-circle computations.
pub const EARTH_RADIUS_KM: f64 = 6371.0;
/// Default cap on the time credited to a single gap between fixes.
pub const DEFAULT_GAP_CAP_S: i64 = 1800;

/// Daily analysis window in local seconds-of-day, `[06:00, 24:00)`.
pub const DAY_WINDOW_START_S: i64 = 6 * SECONDS_PER_HOUR;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub lat: f64,
    pub lon: f64,
    /// Seconds since the Unix epoch.
    pub time: i64,
}

impl TracePoint {
    pub fn new(lat: f64, lon: f64, time: i64) -> Self {
        Self { lat, lon, time }
    }

    pub fn is_valid(&self) -> bool {
        (-90.0..=90.0).contains(&self.lat) && (-180.0..=180.0).contains(&self.lon)
    }
}

/// One vehicle's time-ordered fixes.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub vehicle_id: String,
    points: Vec<TracePoint>,
}

impl Trajectory {
    /// Sorts the points by time and collapses duplicate timestamps, keeping
    /// the first fix seen for each second.
    pub fn new(vehicle_id: impl Into<String>, mut points: Vec<TracePoint>) -> Self {
        points.sort_by_key(|p| p.time);
        points.dedup_by_key(|p| p.time);
        Self {
            vehicle_id: vehicle_id.into(),
            points,
        }
    }

    pub fn points(&self) -> &[TracePoint] {
        &self.points
    }

    pub fn into_points(self) -> Vec<TracePoint> {
        self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
}

impl Bounds {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lat_min && lat <= self.lat_max && lon >= self.lon_min && lon <= self.lon_max
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.lat_min, self.lat_max, self.lon_min, self.lon_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.lat_min >= self.lat_max || self.lon_min >= self.lon_max {
            return Err(Error::Config(format!("invalid bounds {self:?}")));
        }
        Ok(())
    }
}

/// Uniform lat/lon binning of the study area into `rows × cols` cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: Bounds,
    pub rows: usize,
    pub cols: usize,
}

impl GridSpec {
    pub const DEFAULT_SIZE: usize = 24;

    pub fn new(bounds: Bounds, rows: usize, cols: usize) -> Result<Self> {
        bounds.validate()?;
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("grid must be at least 1x1, got {rows}x{cols}")));
        }
        Ok(Self { bounds, rows, cols })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Maps a point to its `(row, col)` cell. Cells are half-open except the
    /// last row and column, which also take points exactly on the upper bound.
    pub fn cell_of(&self, p: &TracePoint) -> Result<(usize, usize)> {
        let b = &self.bounds;
        if !b.contains(p.lat, p.lon) {
            return Err(Error::OutOfBounds {
                lat: p.lat,
                lon: p.lon,
            });
        }
        let dlat = (b.lat_max - b.lat_min) / self.rows as f64;
        let dlon = (b.lon_max - b.lon_min) / self.cols as f64;
        let row = (((p.lat - b.lat_min) / dlat).floor() as usize).min(self.rows - 1);
        let col = (((p.lon - b.lon_min) / dlon).floor() as usize).min(self.cols - 1);
        Ok((row, col))
    }
}

/// Daily time slots: the whole window and its three six-hour thirds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TimeSlot {
    Whole,
    Morning,
    Afternoon,
    Evening,
}

impl TimeSlot {
    pub const ALL: [TimeSlot; 4] = [
        TimeSlot::Whole,
        TimeSlot::Morning,
        TimeSlot::Afternoon,
        TimeSlot::Evening,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(z: usize) -> Option<Self> {
        Self::ALL.get(z).copied()
    }

    /// Start and end hours, end exclusive.
    pub fn hours(self) -> (i64, i64) {
        match self {
            TimeSlot::Whole => (6, 24),
            TimeSlot::Morning => (6, 12),
            TimeSlot::Afternoon => (12, 18),
            TimeSlot::Evening => (18, 24),
        }
    }

    pub fn contains(self, second_of_day: i64) -> bool {
        let (start, end) = self.hours();
        second_of_day >= start * SECONDS_PER_HOUR && second_of_day < end * SECONDS_PER_HOUR
    }
}

/// Fixed offset from UTC, used to find local calendar days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UtcOffset(pub i64);

impl UtcOffset {
    pub fn from_hours(hours: f64) -> Result<Self> {
        if !hours.is_finite() || hours.abs() > 14.0 {
            return Err(Error::Config(format!("utc offset {hours} h out of range")));
        }
        Ok(Self((hours * SECONDS_PER_HOUR as f64).round() as i64))
    }

    pub fn local(self, time: i64) -> i64 {
        time + self.0
    }

    /// Local calendar day number (days since the epoch in local time).
    pub fn day_of(self, time: i64) -> i64 {
        self.local(time).div_euclid(SECONDS_PER_DAY)
    }

    pub fn second_of_day(self, time: i64) -> i64 {
        self.local(time).rem_euclid(SECONDS_PER_DAY)
    }
}

/// The in-window fixes of one vehicle on one local calendar day.
#[derive(Debug, Clone, PartialEq)]
pub struct DaySegment {
    pub vehicle_id: String,
    /// Chronological index among the vehicle's non-empty days.
    pub day_index: usize,
    /// Local calendar day number.
    pub local_day: i64,
    pub offset: UtcOffset,
    pub points: Vec<TracePoint>,
}

impl DaySegment {
    pub fn second_of_day(&self, p: &TracePoint) -> i64 {
        self.offset.second_of_day(p.time)
    }

    pub fn span(&self) -> i64 {
        match (self.points.first(), self.points.last()) {
            (Some(a), Some(b)) => b.time - a.time,
            _ => 0,
        }
    }
}

/// Splits a trajectory into local days, keeping only fixes in `[06:00, 24:00)`.
pub fn segment_days(t: &Trajectory, offset: UtcOffset) -> Vec<DaySegment> {
    let mut out: Vec<DaySegment> = Vec::new();
    for p in t.points() {
        if offset.second_of_day(p.time) < DAY_WINDOW_START_S {
            continue;
        }
        let day = offset.day_of(p.time);
        match out.last_mut() {
            Some(seg) if seg.local_day == day => seg.points.push(*p),
            _ => out.push(DaySegment {
                vehicle_id: t.vehicle_id.clone(),
                day_index: out.len(),
                local_day: day,
                offset,
                points: vec![*p],
            }),
        }
    }
    out
}

/// Seconds spent in each grid cell. Each inter-fix interval, capped at
/// `gap_cap` seconds, is credited to the cell of the earlier fix.
pub fn stay_time_grid(seg: &DaySegment, grid: &GridSpec, gap_cap: i64) -> Array2<f64> {
    let mut stay = Array2::<f64>::zeros(grid.shape());
    for w in seg.points.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if let Ok(cell) = grid.cell_of(a) {
            stay[cell] += (b.time - a.time).min(gap_cap) as f64;
        }
    }
    stay
}

/// Great-circle distance in kilometres.
pub fn haversine_km(a: &TracePoint, b: &TracePoint) -> f64 {
    haversine_deg(a.lat, a.lon, b.lat, b.lon)
}

pub fn haversine_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (phi1, phi2) = (lat1.to_radians(), lat2.to_radians());
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Driven distance in kilometres, skipping tracking dropouts longer than `gap_cap`.
pub fn travel_distance(seg: &DaySegment, gap_cap: i64) -> f64 {
    seg.points
        .windows(2)
        .filter(|w| w[1].time - w[0].time <= gap_cap)
        .map(|w| haversine_km(&w[0], &w[1]))
        .sum()
}
