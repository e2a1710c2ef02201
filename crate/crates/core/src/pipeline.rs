//! In-memory composition of the mobility stages: pings to homes, evacuees,
//! destinations, OD flows and land-use tallies.

use std::collections::BTreeMap;
use std::io::Read;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::evac::{
    classify_evacuee, classify_residence, infer_stops, landuse_validate, nightly_stays, EvacParams, EvacZoneMap, EvacueeOutcome, EvacueeRecord,
    LanduseSummary, ParcelLayer, PointRole, StopRecord,
};
use crate::geo::{GeoPoint, Grid};
use crate::home::{home_for, HomeParams, HomeRecord};
use crate::ingest::{ingest_csv, IngestCounts, IngestParams, PingSchema, Trajectory};
use crate::od::{aggregate_flows, OdFlow};
use crate::spatial::TractIndex;
use crate::synth::Scenario;
use crate::time::{LocalClock, NightWindow, StormWindow};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineParams {
    pub schema: PingSchema,
    pub ingest: IngestParams,
    pub home: HomeParams,
    pub evac: EvacParams,
    pub buffer_m: f64,
    /// Grid anchor; defaults to the south-west corner of the tract extent.
    pub grid_anchor: Option<GeoPoint>,
}

impl Default for PipelineParams {
    fn default() -> Self {
        PipelineParams::with_clock(LocalClock::default(), NightWindow::default(), None)
    }
}

impl PipelineParams {
    /// Defaults on a given clock and night window; `storm` defaults to the
    /// Hurricane Ian window on that clock.
    pub fn with_clock(clock: LocalClock, night_window: NightWindow, storm: Option<StormWindow>) -> Self {
        PipelineParams {
            schema: PingSchema::default(),
            ingest: IngestParams { clock, ..Default::default() },
            home: HomeParams {
                clock,
                night_window,
                ..Default::default()
            },
            evac: EvacParams {
                clock,
                night_window,
                storm: storm.unwrap_or_else(|| StormWindow::hurricane_ian(&clock)),
                ..Default::default()
            },
            buffer_m: EvacZoneMap::DEFAULT_BUFFER_M,
            grid_anchor: None,
        }
    }

    pub fn for_scenario(s: &Scenario) -> Self {
        PipelineParams {
            grid_anchor: Some(s.grid.anchor()),
            ..PipelineParams::with_clock(s.clock, s.night_window, Some(s.storm))
        }
    }

    pub fn grid(&self, tracts: &TractIndex) -> Grid {
        Grid::new(self.grid_anchor.unwrap_or_else(|| tracts.bbox().southwest()))
    }
}

/// Home of every resident, with its tract, in device order. Detection runs on
/// the part of each trajectory before the storm.
pub fn detect_homes(trajs: &[Trajectory], grid: &Grid, tracts: &TractIndex, params: &PipelineParams) -> Vec<HomeRecord> {
    let storm_start = params.evac.storm.start_ms;
    trajs
        .par_iter()
        .filter_map(|t| {
            let pre = t.restrict(i64::MIN, storm_start, &params.ingest.clock, params.ingest.min_day_pings);
            let mut h = home_for(&pre, grid, &params.home).resident()?;
            h.home_tract_id = tracts.tract_of(h.home_point).map(str::to_string);
            Some(h)
        })
        .collect()
}

fn by_device<'a>(trajs: &'a [Trajectory]) -> BTreeMap<&'a str, &'a Trajectory> {
    trajs.iter().map(|t| (t.device_id.as_str(), t)).collect()
}

/// Evacuee classification of every resident, in home order.
pub fn classify_evacuees(trajs: &[Trajectory], homes: &[HomeRecord], zones: &EvacZoneMap, grid: &Grid, params: &EvacParams) -> Vec<EvacueeOutcome> {
    let index = by_device(trajs);
    homes
        .par_iter()
        .map(|h| {
            let class = classify_residence(h, zones);
            let stays = index.get(h.device_id.as_str()).map(|t| nightly_stays(t, grid, params)).unwrap_or_default();
            classify_evacuee(h, &stays, class, params)
        })
        .collect()
}

/// Stops and destination of every evacuee.
pub fn infer_destinations(
    trajs: &[Trajectory],
    homes: &[HomeRecord],
    evacuees: &[EvacueeRecord],
    tracts: &TractIndex,
    grid: &Grid,
    params: &EvacParams,
) -> Vec<StopRecord> {
    let index = by_device(trajs);
    let home_of: BTreeMap<&str, &HomeRecord> = homes.iter().map(|h| (h.device_id.as_str(), h)).collect();
    evacuees
        .par_iter()
        .filter(|e| e.is_evacuee)
        .filter_map(|e| {
            let t = index.get(e.device_id.as_str())?;
            let h = home_of.get(e.device_id.as_str())?;
            Some(infer_stops(t, h, tracts, grid, params))
        })
        .collect()
}

/// Flows from home tract to destination tract; devices without either are
/// left out.
pub fn od_flows(homes: &[HomeRecord], stops: &[StopRecord]) -> Vec<OdFlow> {
    let home_tract: BTreeMap<&str, &str> = homes
        .iter()
        .filter_map(|h| Some((h.device_id.as_str(), h.home_tract_id.as_deref()?)))
        .collect();
    let triples: Vec<(&str, &str, &str)> = stops
        .iter()
        .filter_map(|s| {
            let origin = home_tract.get(s.device_id.as_str())?;
            Some((s.device_id.as_str(), *origin, s.destination_tract_id.as_deref()?))
        })
        .collect();
    aggregate_flows(&triples)
}

/// Every home and every destination point, tagged by role.
pub fn landuse_points(homes: &[HomeRecord], stops: &[StopRecord]) -> Vec<(String, PointRole, GeoPoint)> {
    let mut out: Vec<_> = homes.iter().map(|h| (h.device_id.clone(), PointRole::Home, h.home_point)).collect();
    out.extend(
        stops
            .iter()
            .filter_map(|s| Some((s.device_id.clone(), PointRole::Destination, s.destination_point?))),
    );
    out
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub counts: IngestCounts,
    pub trajectories: Vec<Trajectory>,
    pub homes: Vec<HomeRecord>,
    pub evacuees: Vec<EvacueeOutcome>,
    pub stops: Vec<StopRecord>,
    pub flows: Vec<OdFlow>,
    pub landuse: Option<LanduseSummary>,
}

/// Runs every mobility stage on a ping CSV stream.
pub fn run_pipeline<R: Read>(
    pings: R,
    tracts: &TractIndex,
    zones: &EvacZoneMap,
    parcels: Option<&ParcelLayer>,
    params: &PipelineParams,
) -> Result<PipelineOutput> {
    let (trajectories, counts) = ingest_csv(pings, &params.schema, &params.ingest)?;
    let grid = params.grid(tracts);
    let homes = detect_homes(&trajectories, &grid, tracts, params);
    let evacuees = classify_evacuees(&trajectories, &homes, zones, &grid, &params.evac);
    let records: Vec<EvacueeRecord> = evacuees.iter().filter_map(|e| e.record().cloned()).collect();
    let stops = infer_destinations(&trajectories, &homes, &records, tracts, &grid, &params.evac);
    let flows = od_flows(&homes, &stops);
    let landuse = parcels.map(|p| landuse_validate(&landuse_points(&homes, &stops), p));
    Ok(PipelineOutput {
        counts,
        trajectories,
        homes,
        evacuees,
        stops,
        flows,
        landuse,
    })
}
