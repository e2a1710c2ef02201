use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{nightly_stays, EvacParams};
use crate::error::{Error, Result};
use crate::geo::{great_circle_m, GeoPoint, Grid, GridCell};
use crate::home::HomeRecord;
use crate::ingest::Trajectory;
use crate::spatial::TractIndex;
use crate::time::LocalDate;

/// A retained stop and every night attributed to it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub night_date: LocalDate,
    pub cell: GridCell,
    pub point: GeoPoint,
    pub tract_id: Option<String>,
    pub nights: Vec<LocalDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StopRecord {
    pub device_id: String,
    pub stops: Vec<Stop>,
    /// `None` flags `no_destination`.
    pub destination_tract_id: Option<String>,
    /// Point of the stop that opens the destination run.
    pub destination_point: Option<GeoPoint>,
    pub consec_nights: usize,
}

impl StopRecord {
    pub fn has_destination(&self) -> bool {
        self.destination_tract_id.is_some()
    }
}

/// Stop list and destination tract of one evacuee.
///
/// Nights are taken from the first away night onward. A night's winning
/// point closer than `min_stop_dist_m` to home is dropped; one closer than
/// that to the previous retained stop is attributed to that stop; anything
/// else opens a new stop. The destination is the tract of the longest run of
/// consecutive nights spent in one tract, the earlier run winning ties.
pub fn infer_stops(traj: &Trajectory, home: &HomeRecord, tracts: &TractIndex, grid: &Grid, params: &EvacParams) -> StopRecord {
    let stays = nightly_stays(traj, grid, params);
    let departure = stays.iter().position(|s| !s.cell.is_within_neighborhood(&home.home_cell));
    let mut stops: Vec<Stop> = Vec::new();
    // (night, tract, stop index) of every night attributed to a stop
    let mut nights: Vec<(LocalDate, Option<String>, usize)> = Vec::new();
    for s in departure.map_or(&[][..], |i| &stays[i..]) {
        if great_circle_m(home.home_point, s.point) < params.min_stop_dist_m {
            continue;
        }
        match stops.last_mut() {
            Some(prev) if great_circle_m(prev.point, s.point) < params.min_stop_dist_m => {
                prev.nights.push(s.night_date);
                nights.push((s.night_date, prev.tract_id.clone(), stops.len() - 1));
            }
            _ => {
                let tract_id = tracts.tract_of(s.point).map(str::to_string);
                nights.push((s.night_date, tract_id.clone(), stops.len()));
                stops.push(Stop {
                    night_date: s.night_date,
                    cell: s.cell,
                    point: s.point,
                    tract_id,
                    nights: vec![s.night_date],
                });
            }
        }
    }

    let mut best: Option<(&str, usize, usize)> = None;
    let mut i = 0;
    while i < nights.len() {
        let Some(tract) = nights[i].1.as_deref() else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < nights.len() && nights[j].0 == nights[j - 1].0.succ() && nights[j].1.as_deref() == Some(tract) {
            j += 1;
        }
        if best.is_none_or(|(_, len, _)| j - i > len) {
            best = Some((tract, j - i, nights[i].2));
        }
        i = j;
    }
    let (destination_tract_id, consec_nights, destination_point) = match best {
        Some((t, n, stop)) => (Some(t.to_string()), n, Some(stops[stop].point)),
        None => (None, 0, None),
    };
    StopRecord {
        device_id: traj.device_id.clone(),
        stops,
        destination_tract_id,
        destination_point,
        consec_nights,
    }
}

const DEST_HEADER: [&str; 3] = ["device_id", "dest_tract", "consec_nights"];

/// Writes evacuees that have a destination.
pub fn write_destinations_csv<W: Write>(out: W, records: &[StopRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(DEST_HEADER.iter().chain(&["dest_lat", "dest_lon"]))?;
    for r in records {
        if let Some(dest) = &r.destination_tract_id {
            let (lat, lon) = r.destination_point.map_or((String::new(), String::new()), |p| (p.lat.to_string(), p.lon.to_string()));
            w.write_record([r.device_id.as_str(), dest, &r.consec_nights.to_string(), &lat, &lon])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads `(device_id, dest_tract, consec_nights)` rows.
pub fn read_destinations_csv<R: Read>(input: R) -> Result<Vec<(String, String, usize)>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    for col in DEST_HEADER {
        if !header.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(col.into()));
        }
    }
    #[derive(Deserialize)]
    struct Row {
        device_id: String,
        dest_tract: String,
        consec_nights: usize,
    }
    r.deserialize::<Row>()
        .map(|row| row.map(|r| (r.device_id, r.dest_tract, r.consec_nights)).map_err(Into::into))
        .collect()
}
