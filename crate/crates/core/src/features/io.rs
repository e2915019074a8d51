use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{SharedFeatureVector, FEATURE_NAMES, NUM_FEATURES};
use crate::error::{Error, Result};

pub const FEATURE_HEADER: [&str; NUM_FEATURES + 2] = [
    "vehicle_id",
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
    "label",
];

/// Vehicle class as recorded in feature files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleLabel {
    Taxi,
    Bus,
    Ridesourcing,
    Other,
    Unknown,
}

impl VehicleLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleLabel::Taxi => "taxi",
            VehicleLabel::Bus => "bus",
            VehicleLabel::Ridesourcing => "ridesourcing",
            VehicleLabel::Other => "other",
            VehicleLabel::Unknown => "unknown",
        }
    }

    /// Positive-class membership: taxis stand in for ridesourcing cars in the
    /// source domain, buses for other cars.
    pub fn is_positive(self) -> Option<bool> {
        match self {
            VehicleLabel::Taxi | VehicleLabel::Ridesourcing => Some(true),
            VehicleLabel::Bus | VehicleLabel::Other => Some(false),
            VehicleLabel::Unknown => None,
        }
    }
}

impl fmt::Display for VehicleLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VehicleLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "taxi" => VehicleLabel::Taxi,
            "bus" => VehicleLabel::Bus,
            "ridesourcing" => VehicleLabel::Ridesourcing,
            "other" => VehicleLabel::Other,
            "unknown" => VehicleLabel::Unknown,
            _ => return Err(Error::format("<features>", format!("unknown label `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow {
    pub vehicle_id: String,
    pub features: SharedFeatureVector,
    pub label: VehicleLabel,
}

/// Formats a float with nine significant digits, `%.9g` style.
pub fn format_sig9(x: f64) -> String {
    const DIGITS: i32 = 9;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let m = trim_fraction(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let fixed = format!("{:.*}", (DIGITS - 1 - exp) as usize, x);
        trim_fraction(&fixed).to_owned()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_features<'a, W: Write>(
    writer: W,
    rows: impl IntoIterator<Item = &'a FeatureRow>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FEATURE_HEADER)?;
    for row in rows {
        let mut rec = Vec::with_capacity(FEATURE_HEADER.len());
        rec.push(row.vehicle_id.clone());
        rec.extend(row.features.to_array().iter().map(|&v| format_sig9(v)));
        rec.push(row.label.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features<R: Read>(reader: R) -> Result<Vec<FeatureRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().ne(FEATURE_HEADER) {
        return Err(Error::format("<features>", format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let bad = |what: &str| Error::format("<features>", format!("row {}: {what}", line + 1));
        let mut values = [0.0; NUM_FEATURES];
        for (k, v) in values.iter_mut().enumerate() {
            *v = record[k + 1]
                .parse()
                .map_err(|_| bad(&format!("bad value for {}", FEATURE_NAMES[k])))?;
        }
        rows.push(FeatureRow {
            vehicle_id: record[0].to_owned(),
            features: SharedFeatureVector::from_array(&values),
            label: record[NUM_FEATURES + 1].parse().map_err(|_| bad("bad label"))?,
        });
    }
    Ok(rows)
}
