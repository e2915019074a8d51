use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{TracePoint, Trajectory};
use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 4] = ["vehicle_id", "lat", "lon", "timestamp"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestStats {
    pub rows: usize,
    pub malformed: usize,
}

/// Reads `vehicle_id,lat,lon,timestamp` rows. Rows may arrive in any order;
/// output trajectories are sorted by vehicle id and then by time. Malformed
/// rows are skipped and counted.
pub fn read_traces<R: Read>(reader: R) -> Result<(Vec<Trajectory>, IngestStats)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).ne(TRACE_HEADER) {
        return Err(Error::format(
            "<traces>",
            format!("expected header {:?}, got {:?}", TRACE_HEADER.join(","), header),
        ));
    }

    let mut stats = IngestStats::default();
    let mut by_vehicle: BTreeMap<String, Vec<TracePoint>> = BTreeMap::new();
    for record in rdr.records() {
        stats.rows += 1;
        let Ok(record) = record else {
            stats.malformed += 1;
            continue;
        };
        match parse_row(&record) {
            Some((id, p)) => by_vehicle.entry(id).or_default().push(p),
            None => stats.malformed += 1,
        }
    }
    let trajectories = by_vehicle
        .into_iter()
        .map(|(id, pts)| Trajectory::new(id, pts))
        .collect();
    Ok((trajectories, stats))
}

fn parse_row(record: &csv::StringRecord) -> Option<(String, TracePoint)> {
    if record.len() != 4 {
        return None;
    }
    let id = record.get(0)?.trim();
    if id.is_empty() {
        return None;
    }
    let lat: f64 = record.get(1)?.trim().parse().ok()?;
    let lon: f64 = record.get(2)?.trim().parse().ok()?;
    let time: i64 = record.get(3)?.trim().parse().ok()?;
    let p = TracePoint::new(lat, lon, time);
    p.is_valid().then(|| (id.to_owned(), p))
}

/// Writes trajectories in the ingestion format, coordinates at 7 decimals.
pub fn write_traces<'a, W: Write>(
    writer: W,
    trajectories: impl IntoIterator<Item = &'a Trajectory>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for t in trajectories {
        for p in t.points() {
            w.write_record([
                t.vehicle_id.as_str(),
                &format!("{:.7}", p.lat),
                &format!("{:.7}", p.lon),
                &p.time.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unsorted_rows_are_grouped_and_sorted() {
        let data = "vehicle_id,lat,lon,timestamp\n\
                    b,31.2,121.2,20\n\
                    a,31.1,121.1,30\n\
                    a,31.0,121.0,10\n";
        let (ts, stats) = read_traces(data.as_bytes()).unwrap();
        assert_eq!(stats, IngestStats { rows: 3, malformed: 0 });
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].vehicle_id, "a");
        assert_eq!(ts[0].points()[0].time, 10);
    }

    #[test]
    fn malformed_rows_are_counted() {
        let data = "vehicle_id,lat,lon,timestamp\n\
                    a,31.0,121.0,10\n\
                    a,not-a-number,121.0,11\n\
                    a,95.0,121.0,12\n\
                    a,31.0,121.0\n\
                    ,31.0,121.0,13\n\
                    a,31.0,121.0,1.5\n";
        let (ts, stats) = read_traces(data.as_bytes()).unwrap();
        assert_eq!(stats.rows, 6);
        assert_eq!(stats.malformed, 5);
        assert_eq!(ts[0].len(), 1);
    }

    #[test]
    fn wrong_header_is_rejected() {
        assert!(read_traces("id,lat,lon,t\n".as_bytes()).is_err());
    }

    #[test]
    fn write_then_read() {
        let t = Trajectory::new(
            "car_1",
            vec![TracePoint::new(31.1234567, 121.7654321, 100), TracePoint::new(31.2, 121.3, 160)],
        );
        let mut buf = Vec::new();
        write_traces(&mut buf, [&t]).unwrap();
        let (back, stats) = read_traces(buf.as_slice()).unwrap();
        assert_eq!(stats.malformed, 0);
        assert_eq!(back, vec![t]);
    }
}
