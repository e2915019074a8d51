//! The fifteen source/target shared features: daily driving distance and
//! coverage statistics plus robust intra- and inter-day coverage similarity.

mod io;
mod similarity;

pub use io::{format_sig9, read_features, write_features, FeatureRow, VehicleLabel, FEATURE_HEADER};
pub use similarity::{jaccard, max_pool2, robust_similarity, shift, Shift};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::traj::{
    segment_days, travel_distance, DaySegment, GridSpec, TimeSlot, TracePoint, Trajectory,
    UtcOffset, DEFAULT_GAP_CAP_S, SECONDS_PER_HOUR,
};

pub const NUM_FEATURES: usize = 15;

pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "dist_mean",
    "dist_var",
    "cov_mean_0",
    "cov_mean_1",
    "cov_mean_2",
    "cov_mean_3",
    "cov_var_0",
    "cov_var_1",
    "cov_var_2",
    "cov_var_3",
    "intraday_sim",
    "interday_sim_0",
    "interday_sim_1",
    "interday_sim_2",
    "interday_sim_3",
];

/// Binary visit matrix for one (day, slot).
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageMatrix {
    pub data: Array2<bool>,
    pub day_index: usize,
    pub slot: TimeSlot,
}

impl CoverageMatrix {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }
}

/// Marks every cell visited by an in-bounds fix of `seg` during `slot`.
pub fn coverage_matrix(seg: &DaySegment, grid: &GridSpec, slot: TimeSlot) -> CoverageMatrix {
    let mut data = Array2::from_elem(grid.shape(), false);
    for p in &seg.points {
        if slot.contains(seg.second_of_day(p)) {
            if let Ok(cell) = grid.cell_of(p) {
                data[cell] = true;
            }
        }
    }
    CoverageMatrix {
        data,
        day_index: seg.day_index,
        slot,
    }
}

fn counts(matrices: &[CoverageMatrix]) -> Result<Vec<f64>> {
    if matrices.is_empty() {
        return Err(Error::MissingData("no coverage matrices".into()));
    }
    Ok(matrices.iter().map(|m| m.count() as f64).collect())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// Daily mean number of covered cells.
pub fn mean_coverage(matrices: &[CoverageMatrix]) -> Result<f64> {
    Ok(mean(&counts(matrices)?))
}

/// Population variance of the daily covered-cell counts.
pub fn coverage_variance(matrices: &[CoverageMatrix]) -> Result<f64> {
    Ok(population_variance(&counts(matrices)?))
}

/// Per-day coverage for all four slots, indexed `[day][slot]`.
pub type DailyCoverage = Vec<[CoverageMatrix; 4]>;

/// Mean over days of the average pairwise similarity of the three
/// six-hour slots; the lower slot index is always the first argument.
pub fn intraday_similarity(days: &DailyCoverage) -> Result<f64> {
    if days.is_empty() {
        return Err(Error::MissingData("intra-day similarity needs a day".into()));
    }
    let mut total = 0.0;
    for d in days {
        let (m, a, e) = (&d[1].data, &d[2].data, &d[3].data);
        let s = robust_similarity(m, a)? + robust_similarity(m, e)? + robust_similarity(a, e)?;
        total += s / 3.0;
    }
    Ok(total / days.len() as f64)
}

/// Mean similarity over all ordered day pairs `k' < k''` for one slot.
pub fn interday_similarity(days: &DailyCoverage, slot: TimeSlot) -> Result<f64> {
    let n = days.len();
    if n < 2 {
        return Err(Error::MissingData(format!(
            "inter-day similarity needs two days, got {n}"
        )));
    }
    let z = slot.index();
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            total += robust_similarity(&days[i][z].data, &days[j][z].data)?;
        }
    }
    Ok(total * 2.0 / (n * (n - 1)) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SharedFeatureVector {
    pub dist_mean: f64,
    pub dist_var: f64,
    pub cov_mean: [f64; 4],
    pub cov_var: [f64; 4],
    pub intraday_sim: f64,
    pub interday_sim: [f64; 4],
}

impl SharedFeatureVector {
    pub fn to_array(&self) -> [f64; NUM_FEATURES] {
        let mut out = [0.0; NUM_FEATURES];
        out[0] = self.dist_mean;
        out[1] = self.dist_var;
        out[2..6].copy_from_slice(&self.cov_mean);
        out[6..10].copy_from_slice(&self.cov_var);
        out[10] = self.intraday_sim;
        out[11..15].copy_from_slice(&self.interday_sim);
        out
    }

    pub fn from_array(a: &[f64; NUM_FEATURES]) -> Self {
        let four = |s: usize| [a[s], a[s + 1], a[s + 2], a[s + 3]];
        Self {
            dist_mean: a[0],
            dist_var: a[1],
            cov_mean: four(2),
            cov_var: four(6),
            intraday_sim: a[10],
            interday_sim: four(11),
        }
    }
}

/// Feature groups used by leave-one-group-out ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    DistanceMean,
    DistanceVariance,
    CoverageMean,
    CoverageVariance,
    CoverageSimilarity,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::DistanceMean,
        FeatureGroup::DistanceVariance,
        FeatureGroup::CoverageMean,
        FeatureGroup::CoverageVariance,
        FeatureGroup::CoverageSimilarity,
    ];

    /// Column indices into the fifteen-feature vector.
    pub fn columns(self) -> std::ops::Range<usize> {
        match self {
            FeatureGroup::DistanceMean => 0..1,
            FeatureGroup::DistanceVariance => 1..2,
            FeatureGroup::CoverageMean => 2..6,
            FeatureGroup::CoverageVariance => 6..10,
            FeatureGroup::CoverageSimilarity => 10..15,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::DistanceMean => "distance_mean",
            FeatureGroup::DistanceVariance => "distance_variance",
            FeatureGroup::CoverageMean => "coverage_mean",
            FeatureGroup::CoverageVariance => "coverage_variance",
            FeatureGroup::CoverageSimilarity => "coverage_similarity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub grid: GridSpec,
    pub offset: UtcOffset,
    pub gap_cap_s: i64,
}

impl FeatureConfig {
    pub fn new(grid: GridSpec, offset: UtcOffset) -> Self {
        Self {
            grid,
            offset,
            gap_cap_s: DEFAULT_GAP_CAP_S,
        }
    }
}

/// A feature vector plus data-quality notes from its extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureExtraction {
    pub features: SharedFeatureVector,
    pub days: usize,
    /// Inter-day similarity was imputed as 0 because fewer than two days exist.
    pub interday_imputed: bool,
}

pub fn daily_coverage(segments: &[DaySegment], grid: &GridSpec) -> DailyCoverage {
    segments
        .iter()
        .map(|s| TimeSlot::ALL.map(|z| coverage_matrix(s, grid, z)))
        .collect()
}

pub fn extract_features(t: &Trajectory, cfg: &FeatureConfig) -> Result<FeatureExtraction> {
    let segments = segment_days(t, cfg.offset);
    if segments.is_empty() {
        return Err(Error::MissingData(format!(
            "vehicle {} has no fixes between 06:00 and 24:00",
            t.vehicle_id
        )));
    }
    let distances: Vec<f64> = segments
        .iter()
        .map(|s| travel_distance(s, cfg.gap_cap_s))
        .collect();
    let daily = daily_coverage(&segments, &cfg.grid);

    let mut cov_mean = [0.0; 4];
    let mut cov_var = [0.0; 4];
    for z in TimeSlot::ALL {
        let per_slot: Vec<CoverageMatrix> = daily.iter().map(|d| d[z.index()].clone()).collect();
        cov_mean[z.index()] = mean_coverage(&per_slot)?;
        cov_var[z.index()] = coverage_variance(&per_slot)?;
    }

    let mut interday_sim = [0.0; 4];
    let interday_imputed = daily.len() < 2;
    if !interday_imputed {
        for z in TimeSlot::ALL {
            interday_sim[z.index()] = interday_similarity(&daily, z)?;
        }
    }

    Ok(FeatureExtraction {
        features: SharedFeatureVector {
            dist_mean: mean(&distances),
            dist_var: population_variance(&distances),
            cov_mean,
            cov_var,
            intraday_sim: intraday_similarity(&daily)?,
            interday_sim,
        },
        days: segments.len(),
        interday_imputed,
    })
}

/// Local-hour windows used to cut a bus trace down to commuter-like trips.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RushHours {
    pub morning: (i64, i64),
    pub evening: (i64, i64),
}

impl Default for RushHours {
    fn default() -> Self {
        Self {
            morning: (7, 10),
            evening: (17, 20),
        }
    }
}

/// Keeps, per local day, the first contiguous run of fixes inside the
/// morning window and the first inside the evening window. A run ends at the
/// first fix outside the window or at a gap longer than `gap_cap` seconds.
pub fn bus_rush_hour_trips(
    t: &Trajectory,
    rush: &RushHours,
    offset: UtcOffset,
    gap_cap: i64,
) -> Trajectory {
    let pts = t.points();
    let mut keep: Vec<TracePoint> = Vec::new();
    let mut day_start = 0;
    while day_start < pts.len() {
        let day = offset.day_of(pts[day_start].time);
        let day_end = pts[day_start..]
            .iter()
            .position(|p| offset.day_of(p.time) != day)
            .map_or(pts.len(), |k| day_start + k);
        let day_pts = &pts[day_start..day_end];
        for window in [rush.morning, rush.evening] {
            keep.extend_from_slice(first_run(day_pts, window, offset, gap_cap));
        }
        day_start = day_end;
    }
    Trajectory::new(t.vehicle_id.clone(), keep)
}

fn first_run(
    pts: &[TracePoint],
    (start_h, end_h): (i64, i64),
    offset: UtcOffset,
    gap_cap: i64,
) -> &[TracePoint] {
    let inside = |p: &TracePoint| {
        let s = offset.second_of_day(p.time);
        s >= start_h * SECONDS_PER_HOUR && s < end_h * SECONDS_PER_HOUR
    };
    let Some(first) = pts.iter().position(inside) else {
        return &[];
    };
    let mut last = first;
    while last + 1 < pts.len()
        && inside(&pts[last + 1])
        && pts[last + 1].time - pts[last].time <= gap_cap
    {
        last += 1;
    }
    &pts[first..=last]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traj::Bounds;

    const DAY0: i64 = 1_462_233_600;

    fn grid() -> GridSpec {
        GridSpec::new(
            Bounds {
                lat_min: 0.0,
                lat_max: 24.0,
                lon_min: 0.0,
                lon_max: 24.0,
            },
            24,
            24,
        )
        .unwrap()
    }

    fn cfg() -> FeatureConfig {
        FeatureConfig::new(grid(), UtcOffset(0))
    }

    /// A fix in the centre of cell (r, c) of the 1-degree test grid.
    fn at(r: usize, c: usize, t: i64) -> TracePoint {
        TracePoint::new(r as f64 + 0.5, c as f64 + 0.5, t)
    }

    fn seg(points: Vec<TracePoint>) -> DaySegment {
        DaySegment {
            vehicle_id: "v".into(),
            day_index: 0,
            local_day: 0,
            offset: UtcOffset(0),
            points,
        }
    }

    fn cm(cells: &[(usize, usize)], n: usize) -> CoverageMatrix {
        let mut data = Array2::from_elem((n, n), false);
        for &c in cells {
            data[c] = true;
        }
        CoverageMatrix {
            data,
            day_index: 0,
            slot: TimeSlot::Whole,
        }
    }

    #[test]
    fn coverage_matrix_examples() {
        let t = DAY0 + 7 * 3600;
        let s = seg(vec![at(1, 1, t), at(2, 5, t + 60), at(9, 9, t + 120), at(1, 1, t + 180)]);
        assert_eq!(coverage_matrix(&s, &grid(), TimeSlot::Morning).count(), 3);
        assert_eq!(coverage_matrix(&s, &grid(), TimeSlot::Afternoon).count(), 0);
        assert_eq!(coverage_matrix(&seg(vec![]), &grid(), TimeSlot::Whole).count(), 0);
        let repeated = seg((0..100).map(|k| at(4, 4, t + k)).collect());
        let m = coverage_matrix(&repeated, &grid(), TimeSlot::Whole);
        assert_eq!(m.count(), 1);
        assert!(m.data[(4, 4)]);
    }

    #[test]
    fn mean_and_variance_examples() {
        let four = cm(&[(0, 0), (0, 1), (0, 2), (0, 3)], 6);
        let six = cm(&[(1, 0), (1, 1), (1, 2), (1, 3), (1, 4), (1, 5)], 6);
        assert_eq!(mean_coverage(&[four.clone(), six.clone()]).unwrap(), 5.0);
        assert_eq!(coverage_variance(&[four, six]).unwrap(), 1.0);
        let three = cm(&[(0, 0), (2, 2), (4, 4)], 6);
        assert_eq!(mean_coverage(std::slice::from_ref(&three)).unwrap(), 3.0);
        assert_eq!(coverage_variance(&[three]).unwrap(), 0.0);
        let z = cm(&[], 6);
        assert_eq!(mean_coverage(&[z.clone(), z.clone(), z.clone()]).unwrap(), 0.0);
        assert_eq!(coverage_variance(&[z.clone(), z.clone(), z]).unwrap(), 0.0);
        assert!(matches!(mean_coverage(&[]), Err(Error::MissingData(_))));
        assert!(matches!(coverage_variance(&[]), Err(Error::MissingData(_))));
    }

    fn assert_close(a: f64, b: f64) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }

    fn day_of(slots: [&CoverageMatrix; 4]) -> [CoverageMatrix; 4] {
        slots.map(|m| m.clone())
    }

    #[test]
    fn intraday_examples() {
        let one = cm(&[(2, 2)], 6);
        let self_sim = robust_similarity(&one.data, &one.data).unwrap();
        let days: DailyCoverage = vec![day_of([&one, &one, &one, &one]); 3];
        assert_close(intraday_similarity(&days).unwrap(), self_sim);

        let z = cm(&[], 6);
        let empty: DailyCoverage = vec![day_of([&z, &z, &z, &z]); 4];
        assert_eq!(intraday_similarity(&empty).unwrap(), 1.0);

        let (a, b, c) = (cm(&[(0, 0)], 6), cm(&[(0, 1)], 6), cm(&[(5, 5)], 6));
        let single: DailyCoverage = vec![day_of([&z, &a, &b, &c])];
        let expected = (robust_similarity(&a.data, &b.data).unwrap()
            + robust_similarity(&a.data, &c.data).unwrap()
            + robust_similarity(&b.data, &c.data).unwrap())
            / 3.0;
        assert_eq!(intraday_similarity(&single).unwrap(), expected);
        assert!(intraday_similarity(&vec![]).is_err());
    }

    #[test]
    fn interday_examples() {
        let (a, b) = (cm(&[(0, 0), (3, 3)], 6), cm(&[(0, 1)], 6));
        let two: DailyCoverage = vec![day_of([&a, &a, &a, &a]), day_of([&b, &b, &b, &b])];
        assert_eq!(
            interday_similarity(&two, TimeSlot::Whole).unwrap(),
            robust_similarity(&a.data, &b.data).unwrap()
        );

        let three: DailyCoverage = vec![day_of([&a, &a, &a, &a]); 3];
        assert_close(
            interday_similarity(&three, TimeSlot::Evening).unwrap(),
            robust_similarity(&a.data, &a.data).unwrap(),
        );

        let z = cm(&[], 6);
        let empty: DailyCoverage = vec![day_of([&z, &z, &z, &z]); 3];
        assert_eq!(interday_similarity(&empty, TimeSlot::Morning).unwrap(), 1.0);

        assert!(matches!(
            interday_similarity(&three[..1].to_vec(), TimeSlot::Whole),
            Err(Error::MissingData(_))
        ));
    }

    #[test]
    fn stationary_car_features() {
        let pts = (0..3)
            .flat_map(|d| (0..20).map(move |k| at(5, 5, DAY0 + d * 86_400 + 6 * 3600 + k * 3000)))
            .collect();
        let fx = extract_features(&Trajectory::new("v", pts), &cfg()).unwrap();
        let f = fx.features;
        assert_eq!(fx.days, 3);
        assert!(!fx.interday_imputed);
        assert_eq!(f.dist_mean, 0.0);
        assert_eq!(f.dist_var, 0.0);
        assert_eq!(f.cov_mean, [1.0; 4]);
        assert_eq!(f.cov_var, [0.0; 4]);
        let self_sim = robust_similarity(
            &cm(&[(5, 5)], 24).data,
            &cm(&[(5, 5)], 24).data,
        )
        .unwrap();
        assert_close(f.intraday_sim, self_sim);
        for v in f.interday_sim {
            assert_close(v, self_sim);
        }
        assert_eq!(f.to_array().len(), NUM_FEATURES);
        assert_eq!(SharedFeatureVector::from_array(&f.to_array()), f);
    }

    #[test]
    fn single_day_imputes_interday() {
        let pts = vec![at(1, 1, DAY0 + 8 * 3600), at(1, 2, DAY0 + 8 * 3600 + 60)];
        let fx = extract_features(&Trajectory::new("v", pts), &cfg()).unwrap();
        assert!(fx.interday_imputed);
        assert_eq!(fx.features.interday_sim, [0.0; 4]);
    }

    #[test]
    fn no_window_days_is_missing_data() {
        let pts = vec![at(1, 1, DAY0 + 3600)];
        assert!(matches!(
            extract_features(&Trajectory::new("v", pts), &cfg()),
            Err(Error::MissingData(_))
        ));
    }

    #[test]
    fn rush_hour_filter_keeps_two_windows() {
        // Bus fixes every 5 minutes 06:00-22:00 for two days.
        let pts: Vec<_> = (0..2)
            .flat_map(|d| {
                (0..16 * 12).map(move |k| at(k % 7, 3, DAY0 + d * 86_400 + 6 * 3600 + k as i64 * 300))
            })
            .collect();
        let reduced = bus_rush_hour_trips(
            &Trajectory::new("bus", pts),
            &RushHours::default(),
            UtcOffset(0),
            1800,
        );
        assert_eq!(reduced.len(), 2 * 2 * 36);
        for p in reduced.points() {
            let h = UtcOffset(0).second_of_day(p.time) / 3600;
            assert!((7..10).contains(&h) || (17..20).contains(&h), "hour {h}");
        }
    }

    #[test]
    fn rush_hour_filter_without_evening_service() {
        let pts: Vec<_> = (0..60)
            .map(|k| at(2, 2, DAY0 + 6 * 3600 + k * 300))
            .collect();
        let reduced = bus_rush_hour_trips(
            &Trajectory::new("bus", pts),
            &RushHours::default(),
            UtcOffset(0),
            1800,
        );
        assert!(!reduced.is_empty());
        assert!(reduced
            .points()
            .iter()
            .all(|p| UtcOffset(0).second_of_day(p.time) < 10 * 3600));
    }

    #[test]
    fn rush_run_stops_at_dropout() {
        let mut pts: Vec<_> = (0..6).map(|k| at(2, 2, DAY0 + 7 * 3600 + k * 60)).collect();
        pts.push(at(2, 2, DAY0 + 9 * 3600));
        let reduced = bus_rush_hour_trips(
            &Trajectory::new("bus", pts),
            &RushHours::default(),
            UtcOffset(0),
            1800,
        );
        assert_eq!(reduced.len(), 6);
    }
}
