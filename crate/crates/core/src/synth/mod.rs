//! Synthetic scenarios with planted truth: tract grid, attributes, zones,
//! device itineraries, parcels and model-generated flows.

mod flows;
mod io;
mod pings;

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map};

use crate::error::{Error, Result};
use crate::evac::{PointRole, RoleSummary, RESIDENTIAL_CODE};
use crate::evac::{EvacZoneMap, ResidenceClass};
use crate::geo::{GeoPoint, Grid, GridCell, Polygon, CELL_SIZE_M};
use crate::od::{aggregate_flows, OdFlow, TractAttributes, SVI_VARIABLES};
use crate::spatial::{Feature, TractIndex};
use crate::time::{LocalClock, LocalDate, NightWindow, StormWindow};

pub use flows::{emit_flows_from_model, FlowSample, PlantedModel};
pub use io::{write_scenario, ScenarioFiles, PARCEL_CLASS_FIELD, PARCEL_ID_FIELD, TRACT_ID_FIELD, ZONE_ID_FIELD};
pub use pings::{device_pings, emit_pings, PingCsvReader};

/// Land-use code given to non-residential synthetic parcels.
pub const NON_RESIDENTIAL_CODE: i64 = 8000;

/// Keeps planted points this far from tract edges.
const EDGE_MARGIN_M: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub tract_cols: usize,
    pub tract_rows: usize,
    pub tract_size_m: f64,
    /// South-west corner of the tract grid.
    pub origin: GeoPoint,
    pub devices: usize,
    /// Probability that an in-zone or buffer resident evacuates.
    pub compliance_rate: f64,
    pub visitor_fraction: f64,
    pub sparse_fraction: f64,
    pub low_coverage_fraction: f64,
    /// Share of resident homes on non-residential parcels.
    pub nonresidential_home_rate: f64,
    /// Share of destinations on non-residential parcels.
    pub nonresidential_destination_rate: f64,
    pub position_sigma_m: f64,
    pub night_interval_s: i64,
    pub day_interval_s: i64,
    /// Probability of dropping any single ping.
    pub dropout: f64,
    /// Probability of an extra low-accuracy ping after each ping.
    pub inaccurate_rate: f64,
    /// Probability of an exact duplicate row after each ping.
    pub duplicate_rate: f64,
    pub pre_storm_days: u32,
    pub utc_offset_hours: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 7,
            tract_cols: 5,
            tract_rows: 4,
            tract_size_m: 3_000.0,
            origin: GeoPoint { lat: 26.40, lon: -82.10 },
            devices: 240,
            compliance_rate: 0.6,
            visitor_fraction: 0.05,
            sparse_fraction: 0.03,
            low_coverage_fraction: 0.04,
            nonresidential_home_rate: 0.1,
            nonresidential_destination_rate: 0.3,
            position_sigma_m: 0.0,
            night_interval_s: 1_200,
            day_interval_s: 3_600,
            dropout: 0.0,
            inaccurate_rate: 0.02,
            duplicate_rate: 0.01,
            pre_storm_days: 21,
            utc_offset_hours: -4.0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.tract_cols < 5 || self.tract_rows < 1 {
            return bad(format!("tract grid must be at least 5 columns wide, got {}x{}", self.tract_cols, self.tract_rows));
        }
        if self.tract_cols * self.tract_rows > 9_999 {
            return bad("tract grid too large for 6-digit tract codes".into());
        }
        if !(self.tract_size_m >= 2.0 * EDGE_MARGIN_M + 10.0 * CELL_SIZE_M) {
            return bad(format!("tract_size_m too small: {}", self.tract_size_m));
        }
        if !self.origin.is_valid() {
            return bad("origin is not a valid coordinate".into());
        }
        for (name, v) in [
            ("compliance_rate", self.compliance_rate),
            ("visitor_fraction", self.visitor_fraction),
            ("sparse_fraction", self.sparse_fraction),
            ("low_coverage_fraction", self.low_coverage_fraction),
            ("nonresidential_home_rate", self.nonresidential_home_rate),
            ("nonresidential_destination_rate", self.nonresidential_destination_rate),
            ("dropout", self.dropout),
            ("inaccurate_rate", self.inaccurate_rate),
            ("duplicate_rate", self.duplicate_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        if self.visitor_fraction + self.sparse_fraction + self.low_coverage_fraction > 1.0 {
            return bad("device kind fractions sum above 1".into());
        }
        if !(self.position_sigma_m >= 0.0) || !self.position_sigma_m.is_finite() {
            return bad(format!("position_sigma_m must be >= 0, got {}", self.position_sigma_m));
        }
        if self.night_interval_s < 60 || self.day_interval_s < 60 {
            return bad("ping intervals must be at least 60 s".into());
        }
        if self.pre_storm_days < 15 {
            return bad(format!("pre_storm_days must be >= 15, got {}", self.pre_storm_days));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    /// Stays home through the storm.
    Resident,
    Evacuee,
    /// Leaves home during the storm without meeting the evacuee rule.
    ShortTrip,
    /// Sparse night data during the storm.
    LowCoverage,
    /// Present on only 10 pre-storm days.
    Visitor,
    /// Too few pings to survive ingestion.
    Sparse,
}

impl fmt::Display for DeviceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AwayNight {
    /// Index into the storm nights.
    pub night: usize,
    pub point: GeoPoint,
    pub tract_id: String,
}

/// Ground truth a correct pipeline must reproduce for one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expected {
    pub resident: bool,
    pub excluded: bool,
    pub evacuee: bool,
    pub destination_tract: Option<String>,
    pub destination_point: Option<GeoPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedDevice {
    pub device_id: String,
    pub kind: DeviceKind,
    pub home_cell: GridCell,
    pub home_point: GeoPoint,
    pub home_tract: String,
    pub residence: ResidenceClass,
    pub work_point: Option<GeoPoint>,
    pub away: Vec<AwayNight>,
    /// Local dates `[start, end)` with pings; `None` means the whole period.
    pub presence: Option<(LocalDate, LocalDate)>,
    /// Hard cap on emitted pings.
    pub max_pings: Option<usize>,
    pub expected: Expected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub grid: Grid,
    pub clock: LocalClock,
    pub night_window: NightWindow,
    pub storm: StormWindow,
    /// First pinged instant (local midnight).
    pub period_start_ms: i64,
    pub tracts: Vec<Polygon>,
    pub attributes: BTreeMap<String, TractAttributes>,
    pub zones: Vec<Polygon>,
    pub devices: Vec<PlantedDevice>,
    /// `(cell, land-use code)` parcels, one per planted home or destination.
    pub parcels: Vec<(GridCell, i64)>,
}

/// Upper bounds for attribute draws; the named ones follow the observed
/// maxima of the source tract data.
fn attribute_max(name: &str) -> f64 {
    match name {
        "EP_UNEMP" => 25.1,
        "EP_SNGPNT" => 37.0,
        "EP_LIMENG" => 46.1,
        "EP_MUNIT" => 99.2,
        "EP_MOBILE" => 98.5,
        "EP_CROWD" => 27.1,
        "EP_NOVEH" => 38.0,
        "EP_GROUPQ" => 100.0,
        "E_GROUPQ" => 13_835.0,
        n if n.starts_with("EP_") => 60.0,
        _ => 4_000.0,
    }
}

const ZERO_RATE: f64 = 0.08;

fn draw_attributes(rng: &mut ChaCha8Rng, tract_id: &str, centroid: GeoPoint) -> TractAttributes {
    let mut skewed = |max: f64| {
        if rng.random_bool(ZERO_RATE) {
            0.0
        } else {
            let u: f64 = rng.random_range(0.02..1.0);
            (max * u * u * 10.0).round() / 10.0
        }
    };
    let svi = SVI_VARIABLES.iter().map(|n| (n.to_string(), skewed(attribute_max(n)))).collect();
    let road_density = skewed(22.312);
    TractAttributes {
        tract_id: tract_id.to_string(),
        svi,
        population_density: (10.0 + 6_000.0 * rng.random_range(0.0f64..1.0).powi(2)).round(),
        road_density,
        centroid,
    }
}

/// 11-digit tract id: the three western columns fall in one county, the
/// rest in a neighboring one.
pub fn tract_id(col: usize, row: usize, cols: usize) -> String {
    let county = if col <= 2 { "12071" } else { "12015" };
    format!("{county}{:06}", 100 * (1 + row * cols + col))
}

struct Planner<'a> {
    config: &'a ScenarioConfig,
    grid: &'a Grid,
    used: HashSet<GridCell>,
    cells_per_tract: i64,
    margin_cells: i64,
}

impl Planner<'_> {
    /// A fresh cell well inside tract `(col, row)`.
    fn cell_in(&mut self, rng: &mut ChaCha8Rng, col: usize, row: usize) -> GridCell {
        loop {
            let lo = self.margin_cells;
            let hi = self.cells_per_tract - self.margin_cells;
            let cell = GridCell::new(
                col as i64 * self.cells_per_tract + rng.random_range(lo..hi),
                row as i64 * self.cells_per_tract + rng.random_range(lo..hi),
            );
            if self.used.insert(cell) {
                return cell;
            }
        }
    }

    fn point_in(&mut self, rng: &mut ChaCha8Rng, col: usize, row: usize) -> GeoPoint {
        let c = self.cell_in(rng, col, row);
        self.grid.center(c)
    }

    fn other_tract(&self, rng: &mut ChaCha8Rng, not: &[(usize, usize)]) -> (usize, usize) {
        loop {
            let t = (rng.random_range(0..self.config.tract_cols), rng.random_range(0..self.config.tract_rows));
            if !not.contains(&t) {
                return t;
            }
        }
    }
}

/// Builds a scenario deterministically from `config.seed`.
pub fn gen_scenario(config: &ScenarioConfig) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let clock = LocalClock::from_offset_hours(config.utc_offset_hours);
    let night_window = NightWindow::default();
    let storm = StormWindow::hurricane_ian(&clock);
    let storm_nights = storm.nights(&clock, &night_window);
    let storm_date = clock.date_of(storm.start_ms);
    let period_start = LocalDate(storm_date.0 - config.pre_storm_days as i32);
    let grid = Grid::new(config.origin);
    let frame = grid.frame();
    let s = config.tract_size_m;

    // Tract sides snap to whole cells so every cell lies in one tract.
    let cells_per_tract = (s / CELL_SIZE_M).round() as i64;
    let side = cells_per_tract as f64 * CELL_SIZE_M;
    let rect = |id: String, x0: f64, y0: f64, x1: f64, y1: f64| {
        let ring = [(x0, y0), (x1, y0), (x1, y1), (x0, y1)].iter().map(|&(x, y)| frame.from_xy(x, y)).collect();
        Polygon::new(id, ring, vec![])
    };
    let mut tracts = Vec::new();
    let mut attributes = BTreeMap::new();
    for row in 0..config.tract_rows {
        for col in 0..config.tract_cols {
            let id = tract_id(col, row, config.tract_cols);
            let x0 = col as f64 * side;
            let y0 = row as f64 * side;
            let poly = rect(id.clone(), x0, y0, x0 + side, y0 + side)?;
            let centroid = poly.centroid()?;
            attributes.insert(id.clone(), draw_attributes(&mut rng, &id, centroid));
            tracts.push(poly);
        }
    }
    let zones = vec![rect("zone_A".into(), 0.0, 0.0, side, config.tract_rows as f64 * side)?];

    let mut planner = Planner {
        config,
        grid: &grid,
        used: HashSet::new(),
        cells_per_tract,
        margin_cells: (EDGE_MARGIN_M / CELL_SIZE_M).ceil() as i64,
    };
    let mut devices = Vec::with_capacity(config.devices);
    let mut parcels = Vec::new();
    let n_nights = storm_nights.len();
    for idx in 0..config.devices {
        let u: f64 = rng.random_range(0.0..1.0);
        let kind = if u < config.sparse_fraction {
            DeviceKind::Sparse
        } else if u < config.sparse_fraction + config.visitor_fraction {
            DeviceKind::Visitor
        } else if u < config.sparse_fraction + config.visitor_fraction + config.low_coverage_fraction {
            DeviceKind::LowCoverage
        } else {
            DeviceKind::Resident
        };
        // Home columns keep classes unambiguous: 0 in zone, 1–2 buffer, 4+
        // outside (column 3 straddles the buffer edge).
        let class_draw: f64 = rng.random_range(0.0..1.0);
        let (residence, col) = if class_draw < 0.4 || kind == DeviceKind::LowCoverage && class_draw < 0.7 {
            (ResidenceClass::InZone, 0)
        } else if class_draw < 0.75 || kind == DeviceKind::LowCoverage {
            (ResidenceClass::Buffer, rng.random_range(1..=2))
        } else {
            (ResidenceClass::Outside, rng.random_range(4..config.tract_cols))
        };
        let row = rng.random_range(0..config.tract_rows);
        let home_cell = planner.cell_in(&mut rng, col, row);
        let home_point = grid.center(home_cell);
        let work_point = rng.random_bool(0.7).then(|| {
            let (wc, wr) = planner.other_tract(&mut rng, &[(col, row)]);
            planner.point_in(&mut rng, wc, wr)
        });

        let mut kind = kind;
        let mut away = Vec::new();
        let mut destination = None;
        if kind == DeviceKind::Resident {
            let evacuates = residence != ResidenceClass::Outside && rng.random_bool(config.compliance_rate);
            let (start, len) = if evacuates {
                kind = DeviceKind::Evacuee;
                let min_len = if residence == ResidenceClass::Buffer { 3 } else { 1 };
                let start = rng.random_range(0..=n_nights - min_len);
                (start, rng.random_range(min_len..=n_nights - start))
            } else if residence == ResidenceClass::Buffer && rng.random_bool(0.5) || residence == ResidenceClass::Outside && rng.random_bool(0.25) {
                kind = DeviceKind::ShortTrip;
                let max_len = if residence == ResidenceClass::Buffer { 2 } else { 4 };
                let len = rng.random_range(1..=max_len);
                (rng.random_range(0..=n_nights - len), len)
            } else {
                (0, 0)
            };
            if len > 0 {
                // longer itineraries sometimes split over two stops, the
                // second one longer
                let first = if len >= 3 && rng.random_bool(0.3) { rng.random_range(1..=(len - 1) / 2) } else { len };
                let t1 = planner.other_tract(&mut rng, &[(col, row)]);
                let p1 = planner.point_in(&mut rng, t1.0, t1.1);
                let t2 = planner.other_tract(&mut rng, &[(col, row), t1]);
                let p2 = planner.point_in(&mut rng, t2.0, t2.1);
                for k in 0..len {
                    let (t, p) = if k < first { (t1, p1) } else { (t2, p2) };
                    away.push(AwayNight {
                        night: start + k,
                        point: p,
                        tract_id: tract_id(t.0, t.1, config.tract_cols),
                    });
                }
                let dest = if first == len { &away[0] } else { &away[first] };
                destination = Some((dest.tract_id.clone(), dest.point));
            }
        }
        let (presence, max_pings) = match kind {
            DeviceKind::Visitor => {
                let start = LocalDate(period_start.0 + 3);
                (Some((start, LocalDate(start.0 + 10))), None)
            }
            DeviceKind::Sparse => (None, Some(120)),
            _ => (None, None),
        };
        let resident = matches!(kind, DeviceKind::Resident | DeviceKind::Evacuee | DeviceKind::ShortTrip | DeviceKind::LowCoverage);
        let excluded = kind == DeviceKind::LowCoverage;
        let evacuee = kind == DeviceKind::Evacuee;
        if resident {
            let code = if rng.random_bool(config.nonresidential_home_rate) { NON_RESIDENTIAL_CODE } else { RESIDENTIAL_CODE };
            parcels.push((home_cell, code));
        }
        if evacuee {
            let (_, p) = destination.as_ref().expect("evacuees have a destination");
            let code = if rng.random_bool(config.nonresidential_destination_rate) { NON_RESIDENTIAL_CODE } else { RESIDENTIAL_CODE };
            parcels.push((grid.cell_of(*p), code));
        }
        devices.push(PlantedDevice {
            device_id: format!("dev{idx:06}"),
            kind,
            home_cell,
            home_point,
            home_tract: tract_id(col, row, config.tract_cols),
            residence,
            work_point,
            away,
            presence,
            max_pings,
            expected: Expected {
                resident,
                excluded,
                evacuee,
                destination_tract: destination.as_ref().filter(|_| evacuee).map(|d| d.0.clone()),
                destination_point: destination.as_ref().filter(|_| evacuee).map(|d| d.1),
            },
        });
    }
    Ok(Scenario {
        config: config.clone(),
        period_start_ms: clock.midnight(period_start),
        grid,
        clock,
        night_window,
        storm,
        tracts,
        attributes,
        zones,
        devices,
        parcels,
    })
}

impl Scenario {
    pub fn storm_nights(&self) -> Vec<LocalDate> {
        self.storm.nights(&self.clock, &self.night_window)
    }

    pub fn tract_index(&self) -> TractIndex {
        TractIndex::new(self.tracts.clone())
    }

    pub fn zone_map(&self) -> Result<EvacZoneMap> {
        EvacZoneMap::new(self.zones.clone(), EvacZoneMap::DEFAULT_BUFFER_M)
    }

    /// OD table implied by the planted evacuees.
    pub fn planted_od(&self) -> Vec<OdFlow> {
        let triples: Vec<(String, String, String)> = self
            .devices
            .iter()
            .filter_map(|d| {
                let dest = d.expected.destination_tract.clone()?;
                Some((d.device_id.clone(), d.home_tract.clone(), dest))
            })
            .collect();
        aggregate_flows(&triples)
    }

    pub fn parcel_code(&self, cell: GridCell) -> Option<i64> {
        self.parcels.iter().find(|(c, _)| *c == cell).map(|(_, code)| *code)
    }

    /// Land-use tallies a correct pipeline reports for planted homes and
    /// destinations.
    pub fn planted_landuse(&self) -> BTreeMap<PointRole, RoleSummary> {
        let mut out: BTreeMap<PointRole, RoleSummary> = BTreeMap::new();
        let mut tally = |role, cell| {
            let s = out.entry(role).or_default();
            s.total += 1;
            match self.parcel_code(cell) {
                Some(RESIDENTIAL_CODE) => s.residential += 1,
                Some(_) => s.non_residential += 1,
                None => s.unmatched += 1,
            }
        };
        for d in &self.devices {
            if d.expected.resident {
                tally(PointRole::Home, d.home_cell);
            }
            if let Some(p) = d.expected.destination_point {
                tally(PointRole::Destination, self.grid.cell_of(p));
            }
        }
        out
    }

    /// Parcel features: each parcel is its 20 m grid cell.
    pub fn parcel_features(&self) -> Result<Vec<Feature>> {
        let frame = self.grid.frame();
        self.parcels
            .iter()
            .enumerate()
            .map(|(i, (cell, code))| {
                let x0 = cell.ix as f64 * CELL_SIZE_M;
                let y0 = cell.iy as f64 * CELL_SIZE_M;
                let ring = [(x0, y0), (x0 + CELL_SIZE_M, y0), (x0 + CELL_SIZE_M, y0 + CELL_SIZE_M), (x0, y0 + CELL_SIZE_M)]
                    .iter()
                    .map(|&(x, y)| frame.from_xy(x, y))
                    .collect();
                let id = format!("parcel{i:06}");
                let mut properties = Map::new();
                properties.insert(PARCEL_CLASS_FIELD.into(), json!(code));
                Ok(Feature {
                    polygons: vec![Polygon::new(id.clone(), ring, vec![])?],
                    id,
                    properties,
                })
            })
            .collect()
    }

    pub fn attribute_rows(&self) -> impl Iterator<Item = &TractAttributes> {
        self.attributes.values()
    }
}
