//! Evacuee identification and destination inference over the storm window.

mod landuse;
mod stops;

pub use landuse::{landuse_validate, write_landuse_csv, LanduseCategory, LanduseSummary, ParcelLayer, PointRole, RoleSummary, RESIDENTIAL_CODE};
pub use stops::{infer_stops, read_destinations_csv, write_destinations_csv, Stop, StopRecord};

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{BBox, GeoPoint, Grid, GridCell, Polygon};
use crate::home::HomeRecord;
use crate::ingest::Trajectory;
use crate::time::{overlap, LocalClock, LocalDate, NightWindow, StormWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvacParams {
    pub clock: LocalClock,
    pub night_window: NightWindow,
    pub storm: StormWindow,
    /// Gap cap for dwell and night coverage, seconds.
    pub max_gap_s: f64,
    pub min_coverage: f64,
    pub buffer_consecutive_nights: usize,
    pub min_stop_dist_m: f64,
}

impl Default for EvacParams {
    fn default() -> Self {
        let clock = LocalClock::default();
        EvacParams {
            clock,
            night_window: NightWindow::default(),
            storm: StormWindow::hurricane_ian(&clock),
            max_gap_s: 1800.0,
            min_coverage: 0.5,
            buffer_consecutive_nights: 3,
            min_stop_dist_m: 100.0,
        }
    }
}

impl EvacParams {
    pub fn storm_nights(&self) -> Vec<LocalDate> {
        self.storm.nights(&self.clock, &self.night_window)
    }
}

/// Designated evacuation zones plus the buffer band around them.
#[derive(Debug, Clone)]
pub struct EvacZoneMap {
    zones: Vec<Polygon>,
    buffer_m: f64,
    buffer_bbox: BBox,
}

impl EvacZoneMap {
    pub const DEFAULT_BUFFER_M: f64 = 7_500.0;

    pub fn new(zones: Vec<Polygon>, buffer_m: f64) -> Result<Self> {
        if zones.is_empty() {
            return Err(Error::EmptyZoneMap);
        }
        if !(buffer_m >= 0.0) {
            return Err(Error::InvalidConfig(format!("buffer_m = {buffer_m}")));
        }
        let bbox = zones.iter().fold(BBox::empty(), |b, z| b.union(z.bbox()));
        Ok(EvacZoneMap {
            zones,
            buffer_m,
            buffer_bbox: bbox.expanded_m(buffer_m),
        })
    }

    pub fn zones(&self) -> &[Polygon] {
        &self.zones
    }

    pub fn buffer_m(&self) -> f64 {
        self.buffer_m
    }

    pub fn in_designated(&self, p: GeoPoint) -> bool {
        self.zones.iter().any(|z| z.contains(p))
    }

    /// Distance to the nearest designated-zone boundary, meters.
    pub fn distance_to_zones_m(&self, p: GeoPoint) -> f64 {
        self.zones
            .iter()
            .map(|z| z.distance_to_boundary_m(p))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn classify(&self, p: GeoPoint) -> ResidenceClass {
        if self.in_designated(p) {
            ResidenceClass::InZone
        } else if self.buffer_bbox.contains(p) && self.distance_to_zones_m(p) <= self.buffer_m {
            ResidenceClass::Buffer
        } else {
            ResidenceClass::Outside
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResidenceClass {
    InZone,
    Buffer,
    Outside,
}

impl fmt::Display for ResidenceClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResidenceClass::InZone => "in_zone",
            ResidenceClass::Buffer => "buffer",
            ResidenceClass::Outside => "outside",
        })
    }
}

impl FromStr for ResidenceClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_zone" => Ok(ResidenceClass::InZone),
            "buffer" => Ok(ResidenceClass::Buffer),
            "outside" => Ok(ResidenceClass::Outside),
            other => Err(Error::InvalidConfig(format!("unknown residence class `{other}`"))),
        }
    }
}

pub fn classify_residence(home: &HomeRecord, zones: &EvacZoneMap) -> ResidenceClass {
    zones.classify(home.home_point)
}

/// The winning cell of one storm night.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NightStay {
    pub device_id: String,
    pub night_date: LocalDate,
    pub cell: GridCell,
    pub point: GeoPoint,
    pub ping_count: usize,
    pub dwell_s: f64,
    pub coverage_fraction: f64,
}

/// One stay per storm night that has at least one fix: the cell with the
/// most fixes, ties broken by longer dwell and then the smaller cell.
///
/// Each fix covers `[t_i, t_i + min(t_{i+1} - t_i, cap)]`; coverage is the
/// covered share of the night window clipped to the storm window. Dwell is
/// the same interval credited when the next fix shares the cell.
pub fn nightly_stays(traj: &Trajectory, grid: &Grid, params: &EvacParams) -> Vec<NightStay> {
    let cap_ms = (params.max_gap_s * 1000.0).round() as i64;
    let fixes = &traj.fixes;
    let mut out = Vec::new();
    for night in params.storm_nights() {
        let (a, b) = params.storm.clip_night(&params.clock, &params.night_window, night);
        if b <= a {
            continue;
        }
        let lo = fixes.partition_point(|f| f.ts_ms < a);
        let hi = fixes.partition_point(|f| f.ts_ms < b);
        if lo == hi {
            continue;
        }
        let mut covered = 0i64;
        let mut per_cell: BTreeMap<GridCell, (usize, i64)> = BTreeMap::new();
        for i in lo.saturating_sub(1)..hi {
            let Some(next) = fixes.get(i + 1) else { continue };
            let t0 = fixes[i].ts_ms;
            let span = overlap(t0, t0 + (next.ts_ms - t0).min(cap_ms), a, b);
            covered += span;
            if i >= lo && span > 0 && grid.cell_of(next.point) == grid.cell_of(fixes[i].point) {
                per_cell.entry(grid.cell_of(fixes[i].point)).or_default().1 += span;
            }
        }
        for f in &fixes[lo..hi] {
            per_cell.entry(grid.cell_of(f.point)).or_default().0 += 1;
        }
        let (cell, (count, dwell)) = per_cell
            .iter()
            .fold(None::<(&GridCell, &(usize, i64))>, |best, cur| match best {
                Some(b) if (b.1 .0, b.1 .1) >= (cur.1 .0, cur.1 .1) => Some(b),
                _ => Some(cur),
            })
            .expect("night has fixes");
        out.push(NightStay {
            device_id: traj.device_id.clone(),
            night_date: night,
            cell: *cell,
            point: grid.center(*cell),
            ping_count: *count,
            dwell_s: *dwell as f64 / 1000.0,
            coverage_fraction: (covered as f64 / (b - a) as f64).clamp(0.0, 1.0),
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvacueeRecord {
    pub device_id: String,
    pub home_tract_id: Option<String>,
    pub residence_class: ResidenceClass,
    pub is_evacuee: bool,
    pub away_nights: Vec<LocalDate>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvacueeOutcome {
    Classified(EvacueeRecord),
    /// Dropped from the analysis: too many storm nights with coverage below
    /// the threshold.
    Excluded { device_id: String, low_coverage_nights: usize },
}

impl EvacueeOutcome {
    pub fn record(&self) -> Option<&EvacueeRecord> {
        match self {
            EvacueeOutcome::Classified(r) => Some(r),
            EvacueeOutcome::Excluded { .. } => None,
        }
    }

    pub fn is_evacuee(&self) -> bool {
        self.record().is_some_and(|r| r.is_evacuee)
    }
}

fn longest_consecutive(nights: &[LocalDate]) -> usize {
    let mut best = 0;
    let mut run = 0;
    for (i, n) in nights.iter().enumerate() {
        run = if i > 0 && nights[i - 1].succ() == *n { run + 1 } else { 1 };
        best = best.max(run);
    }
    best
}

/// Applies the evacuee rules. A night is away when its stay cell is outside
/// the home cell's 3×3 neighborhood; a night with no stay counts as zero
/// coverage.
pub fn classify_evacuee(home: &HomeRecord, stays: &[NightStay], residence_class: ResidenceClass, params: &EvacParams) -> EvacueeOutcome {
    let record = |is_evacuee, away_nights| {
        EvacueeOutcome::Classified(EvacueeRecord {
            device_id: home.device_id.clone(),
            home_tract_id: home.home_tract_id.clone(),
            residence_class,
            is_evacuee,
            away_nights,
        })
    };
    if residence_class == ResidenceClass::Outside {
        return record(false, Vec::new());
    }
    let storm_nights = params.storm_nights();
    let by_night: BTreeMap<LocalDate, &NightStay> = stays.iter().map(|s| (s.night_date, s)).collect();
    let low = storm_nights
        .iter()
        .filter(|n| by_night.get(n).is_none_or(|s| s.coverage_fraction < params.min_coverage))
        .count();
    if 2 * low > storm_nights.len() {
        return EvacueeOutcome::Excluded {
            device_id: home.device_id.clone(),
            low_coverage_nights: low,
        };
    }
    let away: Vec<LocalDate> = by_night
        .values()
        .filter(|s| !s.cell.is_within_neighborhood(&home.home_cell))
        .map(|s| s.night_date)
        .collect();
    let is_evacuee = match residence_class {
        ResidenceClass::InZone => !away.is_empty(),
        ResidenceClass::Buffer => longest_consecutive(&away) >= params.buffer_consecutive_nights,
        ResidenceClass::Outside => unreachable!(),
    };
    record(is_evacuee, away)
}

const EVACUEE_HEADER: [&str; 4] = ["device_id", "home_tract", "residence_class", "is_evacuee"];

pub fn write_evacuees_csv<W: Write>(out: W, records: &[EvacueeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVACUEE_HEADER)?;
    for r in records {
        w.write_record([
            r.device_id.as_str(),
            r.home_tract_id.as_deref().unwrap_or(""),
            &r.residence_class.to_string(),
            if r.is_evacuee { "true" } else { "false" },
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `evacuees.csv`; `away_nights` is not stored and comes back empty.
pub fn read_evacuees_csv<R: Read>(input: R) -> Result<Vec<EvacueeRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    for col in EVACUEE_HEADER {
        if !header.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(col.into()));
        }
    }
    #[derive(Deserialize)]
    struct Row {
        device_id: String,
        home_tract: String,
        residence_class: String,
        is_evacuee: bool,
    }
    r.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            Ok(EvacueeRecord {
                device_id: row.device_id,
                home_tract_id: Some(row.home_tract).filter(|s| !s.is_empty()),
                residence_class: row.residence_class.parse()?,
                is_evacuee: row.is_evacuee,
                away_nights: Vec::new(),
            })
        })
        .collect()
}
