//! Home detection from pre-storm trajectories.
//!
//! Dwell is attributed by consecutive-fix crediting: when two consecutive
//! fixes fall in the same 20 m cell, the interval `[t_i, t_i + min(Δt, cap)]`
//! is credited to that cell and split exactly across night windows and
//! weekend dates. A device is resident when it has at least `min_active_days`
//! active days and either some cell carries night dwell on `min_nights`
//! distinct nights (night rule) or some cell collects `min_weekend_s` of
//! weekend dwell (weekend fallback).

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{GeoPoint, Grid, GridCell};
use crate::ingest::Trajectory;
use crate::time::{split_weekend, LocalClock, LocalDate, NightWindow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomeParams {
    pub night_window: NightWindow,
    pub max_gap_s: f64,
    pub min_nights: usize,
    pub min_active_days: usize,
    pub min_weekend_s: f64,
    pub clock: LocalClock,
}

impl Default for HomeParams {
    fn default() -> Self {
        HomeParams {
            night_window: NightWindow::default(),
            max_gap_s: 1800.0,
            min_nights: 5,
            min_active_days: 15,
            min_weekend_s: 6.0 * 3600.0,
            clock: LocalClock::default(),
        }
    }
}

/// Dwell credited to one cell, in seconds.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CellDwell {
    pub nights: BTreeMap<LocalDate, f64>,
    pub weekend: BTreeMap<LocalDate, f64>,
    pub total_s: f64,
}

impl CellDwell {
    pub fn night_s(&self) -> f64 {
        self.nights.values().sum()
    }

    pub fn weekend_s(&self) -> f64 {
        self.weekend.values().sum()
    }

    /// Night dwell plus weekend dwell (weekend nights count in both).
    pub fn score(&self) -> f64 {
        self.night_s() + self.weekend_s()
    }

    pub fn qualifying_nights(&self) -> usize {
        self.nights.values().filter(|&&s| s > 0.0).count()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DwellTable {
    pub cells: BTreeMap<GridCell, CellDwell>,
}

impl DwellTable {
    pub fn get(&self, cell: &GridCell) -> Option<&CellDwell> {
        self.cells.get(cell)
    }

    /// Night dwell on one night summed over cells.
    pub fn night_total(&self, night: LocalDate) -> f64 {
        self.cells.values().filter_map(|c| c.nights.get(&night)).sum()
    }
}

pub fn accumulate_dwell(traj: &Trajectory, grid: &Grid, params: &HomeParams) -> DwellTable {
    let mut table = DwellTable::default();
    let cap_ms = (params.max_gap_s * 1000.0).round() as i64;
    let clock = &params.clock;
    let cells: Vec<GridCell> = traj.fixes.iter().map(|f| grid.cell_of(f.point)).collect();
    for i in 1..traj.fixes.len() {
        if cells[i] != cells[i - 1] {
            continue;
        }
        let t0 = traj.fixes[i - 1].ts_ms;
        let dt = traj.fixes[i].ts_ms - t0;
        let credit = dt.min(cap_ms);
        if credit <= 0 {
            continue;
        }
        let entry = table.cells.entry(cells[i]).or_default();
        entry.total_s += credit as f64 / 1000.0;
        params.night_window.split(clock, t0, t0 + credit, |night, ms| {
            *entry.nights.entry(night).or_default() += ms as f64 / 1000.0;
        });
        split_weekend(clock, t0, t0 + credit, |day, ms| {
            *entry.weekend.entry(day).or_default() += ms as f64 / 1000.0;
        });
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HomeBasis {
    NightRule,
    WeekendFallback,
}

impl fmt::Display for HomeBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HomeBasis::NightRule => "night_rule",
            HomeBasis::WeekendFallback => "weekend_fallback",
        })
    }
}

impl FromStr for HomeBasis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "night_rule" => Ok(HomeBasis::NightRule),
            "weekend_fallback" => Ok(HomeBasis::WeekendFallback),
            other => Err(Error::InvalidConfig(format!("unknown home basis `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomeRecord {
    pub device_id: String,
    pub home_cell: GridCell,
    /// Center of `home_cell`.
    pub home_point: GeoPoint,
    pub basis: HomeBasis,
    pub qualifying_nights: usize,
    pub home_tract_id: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonResidentReason {
    TooFewActiveDays,
    NoQualifyingCell,
}

#[derive(Debug, Clone, PartialEq)]
pub enum HomeDecision {
    Resident(HomeRecord),
    NonResident(NonResidentReason),
}

impl HomeDecision {
    pub fn resident(self) -> Option<HomeRecord> {
        match self {
            HomeDecision::Resident(h) => Some(h),
            HomeDecision::NonResident(_) => None,
        }
    }
}

// Larger key wins: primary value, then total dwell, then the smaller cell.
fn better(a: (f64, f64, &GridCell), b: (f64, f64, &GridCell)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    if a.1 != b.1 {
        return a.1 > b.1;
    }
    a.2 < b.2
}

fn pick<'a>(table: &'a DwellTable, mut eligible: impl FnMut(&CellDwell) -> bool, key: impl Fn(&CellDwell) -> f64) -> Option<(&'a GridCell, &'a CellDwell)> {
    let mut best: Option<(&GridCell, &CellDwell)> = None;
    for (cell, d) in &table.cells {
        if !eligible(d) {
            continue;
        }
        best = match best {
            Some((bc, bd)) if !better((key(d), d.total_s, cell), (key(bd), bd.total_s, bc)) => Some((bc, bd)),
            _ => Some((cell, d)),
        };
    }
    best
}

/// Assigns a home cell, or classifies the device as non-resident.
///
/// `traj` must already be restricted to the pre-storm period; its active
/// days are what the `min_active_days` gate counts.
pub fn detect_home(dwell: &DwellTable, traj: &Trajectory, grid: &Grid, params: &HomeParams) -> HomeDecision {
    if traj.active_days.len() < params.min_active_days {
        return HomeDecision::NonResident(NonResidentReason::TooFewActiveDays);
    }
    let record = |cell: &GridCell, d: &CellDwell, basis| {
        HomeDecision::Resident(HomeRecord {
            device_id: traj.device_id.clone(),
            home_cell: *cell,
            home_point: grid.center(*cell),
            basis,
            qualifying_nights: d.qualifying_nights(),
            home_tract_id: None,
        })
    };
    if let Some((cell, d)) = pick(dwell, |d| d.qualifying_nights() >= params.min_nights, CellDwell::score) {
        return record(cell, d, HomeBasis::NightRule);
    }
    match pick(dwell, |_| true, CellDwell::weekend_s) {
        Some((cell, d)) if d.weekend_s() >= params.min_weekend_s => record(cell, d, HomeBasis::WeekendFallback),
        _ => HomeDecision::NonResident(NonResidentReason::NoQualifyingCell),
    }
}

/// Dwell accumulation plus home decision for one pre-storm trajectory.
pub fn home_for(traj: &Trajectory, grid: &Grid, params: &HomeParams) -> HomeDecision {
    let dwell = accumulate_dwell(traj, grid, params);
    detect_home(&dwell, traj, grid, params)
}

const HOME_HEADER: [&str; 6] = ["device_id", "home_lat", "home_lon", "home_tract_id", "basis", "qualifying_nights"];

pub fn write_homes_csv<W: Write>(out: W, homes: &[HomeRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(HOME_HEADER)?;
    for h in homes {
        w.write_record([
            h.device_id.as_str(),
            &h.home_point.lat.to_string(),
            &h.home_point.lon.to_string(),
            h.home_tract_id.as_deref().unwrap_or(""),
            &h.basis.to_string(),
            &h.qualifying_nights.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a homes file; cells are recovered from the stored cell centers.
pub fn read_homes_csv<R: Read>(input: R, grid: &Grid) -> Result<Vec<HomeRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    for col in HOME_HEADER {
        if !header.iter().any(|h| h == col) {
            return Err(Error::MissingColumn(col.into()));
        }
    }
    let mut out = Vec::new();
    for rec in r.deserialize::<HomeRow>() {
        let row = rec?;
        let home_point = GeoPoint::new(row.home_lat, row.home_lon)?;
        out.push(HomeRecord {
            device_id: row.device_id,
            home_cell: grid.cell_of(home_point),
            home_point,
            basis: row.basis.parse()?,
            qualifying_nights: row.qualifying_nights,
            home_tract_id: Some(row.home_tract_id).filter(|s| !s.is_empty()),
        });
    }
    Ok(out)
}

#[derive(Deserialize)]
struct HomeRow {
    device_id: String,
    home_lat: f64,
    home_lon: f64,
    home_tract_id: String,
    basis: String,
    qualifying_nights: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::Fix;
    use proptest::prelude::*;

    fn grid() -> Grid {
        Grid::new(GeoPoint::new(26.5, -81.9).unwrap())
    }

    fn at(g: &Grid, cell: GridCell) -> GeoPoint {
        g.center(cell)
    }

    fn traj(fixes: Vec<(i64, GeoPoint)>) -> Trajectory {
        let fixes = fixes
            .into_iter()
            .map(|(ts_ms, point)| Fix {
                ts_ms,
                point,
                accuracy_m: 5.0,
            })
            .collect();
        Trajectory::new("dev", fixes, &LocalClock::default(), 10)
    }

    // A Wednesday, so no weekend credit interferes.
    fn wed() -> LocalDate {
        LocalDate::from_ymd(2022, 9, 7)
    }

    #[test]
    fn same_cell_pair_inside_night_credits_interval() {
        let g = grid();
        let c = LocalClock::default();
        let a = at(&g, GridCell::new(3, 4));
        let t = traj(vec![(c.at(wed(), 22, 0), a), (c.at(wed(), 22, 10), a)]);
        let table = accumulate_dwell(&t, &g, &HomeParams::default());
        let cell = table.get(&GridCell::new(3, 4)).unwrap();
        assert_eq!(cell.nights.get(&wed()), Some(&600.0));
        assert_eq!(cell.total_s, 600.0);
    }

    #[test]
    fn different_cells_credit_nothing() {
        let g = grid();
        let c = LocalClock::default();
        let t = traj(vec![(c.at(wed(), 22, 0), at(&g, GridCell::new(0, 0))), (c.at(wed(), 22, 10), at(&g, GridCell::new(0, 1)))]);
        assert!(accumulate_dwell(&t, &g, &HomeParams::default()).cells.is_empty());
    }

    #[test]
    fn long_gap_is_capped() {
        let g = grid();
        let c = LocalClock::default();
        let a = at(&g, GridCell::new(1, 1));
        let t = traj(vec![(c.at(wed(), 9, 0), a), (c.at(wed(), 13, 0), a)]);
        let table = accumulate_dwell(&t, &g, &HomeParams::default());
        assert_eq!(table.get(&GridCell::new(1, 1)).unwrap().total_s, 1800.0);
    }

    #[test]
    fn credit_straddling_night_start_is_split() {
        let g = grid();
        let c = LocalClock::default();
        let a = at(&g, GridCell::new(1, 1));
        // 19:50 → 20:20: 10 min day, 20 min night
        let t = traj(vec![(c.at(wed(), 19, 50), a), (c.at(wed(), 20, 20), a)]);
        let d = accumulate_dwell(&t, &g, &HomeParams::default());
        let cell = d.get(&GridCell::new(1, 1)).unwrap();
        assert_eq!(cell.total_s, 1800.0);
        assert_eq!(cell.night_s(), 1200.0);
    }

    /// Pings every 10 minutes over `days` days: home cell at night, work
    /// cell 09:00–17:00 on weekdays, home otherwise.
    fn commuter(g: &Grid, start: LocalDate, days: i32, home: GridCell, work: GridCell) -> Trajectory {
        let c = LocalClock::default();
        let mut fixes = Vec::new();
        for d in 0..days {
            let day = LocalDate(start.0 + d);
            for m in (0..24 * 60).step_by(10) {
                let ts = c.at(day, 0, 0) + m as i64 * 60_000;
                let h = m / 60;
                let cell = if !day.is_weekend() && (9..17).contains(&h) { work } else { home };
                fixes.push((ts, at(g, cell)));
            }
        }
        traj(fixes)
    }

    #[test]
    fn planted_sleeper_gets_night_rule_home() {
        let g = grid();
        let home = GridCell::new(10, 10);
        let work = GridCell::new(400, -30);
        let t = commuter(&g, LocalDate::from_ymd(2022, 9, 1), 20, home, work);
        match home_for(&t, &g, &HomeParams::default()) {
            HomeDecision::Resident(h) => {
                assert_eq!(h.home_cell, home);
                assert_eq!(h.basis, HomeBasis::NightRule);
                assert!(h.qualifying_nights >= 19);
                assert_eq!(g.cell_of(h.home_point), home);
            }
            other => panic!("expected resident, got {other:?}"),
        }
    }

    #[test]
    fn fourteen_active_days_is_non_resident() {
        let g = grid();
        let t = commuter(&g, LocalDate::from_ymd(2022, 9, 1), 14, GridCell::new(0, 0), GridCell::new(50, 50));
        assert_eq!(home_for(&t, &g, &HomeParams::default()), HomeDecision::NonResident(NonResidentReason::TooFewActiveDays));
    }

    #[test]
    fn weekend_only_dwell_uses_fallback() {
        let g = grid();
        let c = LocalClock::default();
        let cell_c = GridCell::new(-5, 7);
        let mut fixes = Vec::new();
        // 15 active weekdays of daytime pings scattered over distinct cells
        let mut day = LocalDate::from_ymd(2022, 9, 1);
        let mut k = 0;
        while k < 15 {
            if !day.is_weekend() {
                for m in 0..12 {
                    fixes.push((c.at(day, 10, m * 5), at(&g, GridCell::new(1000 + k, m as i64 * 3))));
                }
                k += 1;
            }
            day = day.succ();
        }
        // 7 h in cell C on a Saturday daytime
        let sat = LocalDate::from_ymd(2022, 9, 24);
        assert!(sat.is_weekend());
        for m in (0..=7 * 60).step_by(10) {
            fixes.push((c.at(sat, 10, 0) + m as i64 * 60_000, at(&g, cell_c)));
        }
        fixes.sort_by_key(|f| f.0);
        let t = traj(fixes);
        match home_for(&t, &g, &HomeParams::default()) {
            HomeDecision::Resident(h) => {
                assert_eq!(h.home_cell, cell_c);
                assert_eq!(h.basis, HomeBasis::WeekendFallback);
            }
            other => panic!("expected weekend fallback, got {other:?}"),
        }
    }

    #[test]
    fn ties_prefer_smaller_cell_index() {
        let g = grid();
        let c = LocalClock::default();
        let mut fixes = Vec::new();
        let mut day = LocalDate::from_ymd(2022, 9, 5);
        for _ in 0..16 {
            // equal night dwell in two cells, same total
            fixes.push((c.at(day, 21, 0), at(&g, GridCell::new(2, 0))));
            fixes.push((c.at(day, 21, 30), at(&g, GridCell::new(2, 0))));
            fixes.push((c.at(day, 22, 0), at(&g, GridCell::new(1, 5))));
            fixes.push((c.at(day, 22, 30), at(&g, GridCell::new(1, 5))));
            for m in 0..8 {
                fixes.push((c.at(day, 12, m), at(&g, GridCell::new(90, m as i64 * 2))));
            }
            day = day.succ();
        }
        fixes.sort_by_key(|f| f.0);
        let h = home_for(&traj(fixes), &g, &HomeParams::default()).resident().unwrap();
        assert_eq!(h.home_cell, GridCell::new(1, 5));
    }

    #[test]
    fn homes_csv_round_trip() {
        let g = grid();
        let h = HomeRecord {
            device_id: "d1".into(),
            home_cell: GridCell::new(12, -3),
            home_point: g.center(GridCell::new(12, -3)),
            basis: HomeBasis::WeekendFallback,
            qualifying_nights: 2,
            home_tract_id: Some("12071000303".into()),
        };
        let mut buf = Vec::new();
        write_homes_csv(&mut buf, std::slice::from_ref(&h)).unwrap();
        let back = read_homes_csv(buf.as_slice(), &g).unwrap();
        assert_eq!(back, vec![h]);
    }

    fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
        let g = grid();
        proptest::collection::vec((0i64..30 * 144, 0i64..3, 0i64..2, 0i64..2), 50..900).prop_map(move |mut rows| {
            let c = LocalClock::default();
            let start = c.at(LocalDate::from_ymd(2022, 9, 1), 0, 0);
            rows.sort_by_key(|r| r.0);
            rows.dedup_by_key(|r| r.0);
            let fixes = rows
                .into_iter()
                .map(|(slot, jump, dx, dy)| (start + slot * 600_000, g.center(GridCell::new(jump * 40 + dx, dy))))
                .collect();
            traj(fixes)
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn night_dwell_bounded_by_window(t in arb_trajectory()) {
            let g = grid();
            let p = HomeParams::default();
            let table = accumulate_dwell(&t, &g, &p);
            let nights: std::collections::BTreeSet<LocalDate> =
                table.cells.values().flat_map(|c| c.nights.keys().copied()).collect();
            for n in nights {
                prop_assert!(table.night_total(n) <= p.night_window.duration_ms() as f64 / 1000.0 + 1e-9);
            }
            for c in table.cells.values() {
                prop_assert!(c.total_s >= 0.0);
                prop_assert!(c.nights.values().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn truncation_never_creates_a_night_rule_resident(t in arb_trajectory(), keep in 0.0f64..1.0, from_front in any::<bool>()) {
            let g = grid();
            let p = HomeParams::default();
            let before = home_for(&t, &g, &p);
            let n = ((t.len() as f64) * keep) as usize;
            let c = LocalClock::default();
            let shorter = if from_front {
                Trajectory::new("dev", t.fixes[t.len() - n..].to_vec(), &c, 10)
            } else {
                Trajectory::new("dev", t.fixes[..n].to_vec(), &c, 10)
            };
            let after = home_for(&shorter, &g, &p);
            let night_resident = |d: &HomeDecision| matches!(d, HomeDecision::Resident(h) if h.basis == HomeBasis::NightRule);
            if !night_resident(&before) {
                prop_assert!(!night_resident(&after));
            }
        }

        #[test]
        fn decision_is_deterministic(t in arb_trajectory()) {
            let g = grid();
            let p = HomeParams::default();
            prop_assert_eq!(home_for(&t, &g, &p), home_for(&t.clone(), &g, &p));
        }
    }
}
