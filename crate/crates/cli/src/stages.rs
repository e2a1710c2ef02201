use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use evacflow_core::evac::{read_evacuees_csv, read_destinations_csv, write_destinations_csv, write_evacuees_csv, write_landuse_csv, landuse_validate, EvacueeOutcome, ResidenceClass};
use evacflow_core::home::{read_homes_csv, write_homes_csv, HomeBasis};
use evacflow_core::ingest::{ingest_csv, read_trajectories_csv, write_trajectories_csv};
use evacflow_core::model::{cross_validate, fit_demand_model, render_report};
use evacflow_core::od::{
    aggregate_flows, destination_shares, join_attributes, read_design_csv, read_od_csv, read_tract_attributes_csv, same_county_share, write_design_csv,
    write_od_csv, write_od_text, write_shares_csv,
};
use evacflow_core::pipeline::{classify_evacuees, detect_homes, infer_destinations, landuse_points};
use evacflow_core::spatial::read_features;
use evacflow_core::synth::{gen_scenario, write_scenario, DeviceKind};
use evacflow_core::{EvacZoneMap, Grid, ParcelLayer, Polygon, TractIndex, Trajectory};
use serde_json::json;

use crate::config::{RunConfig, SYNTH_DIR};
use crate::error::{CliError, Context};
use crate::manifest::Manifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Stage {
    Ingest,
    Homes,
    Evacuees,
    Destinations,
    Od,
    Fit,
    Cv,
    Synth,
    All,
}

pub const PIPELINE: [Stage; 7] = [Stage::Ingest, Stage::Homes, Stage::Evacuees, Stage::Destinations, Stage::Od, Stage::Fit, Stage::Cv];

pub const TRAJECTORIES: &str = "trajectories.csv";
pub const HOMES: &str = "homes.csv";
pub const EVACUEES: &str = "evacuees.csv";
pub const DESTINATIONS: &str = "destinations.csv";
pub const LANDUSE: &str = "landuse_validation.csv";
pub const OD_CSV: &str = "od_flows.csv";
pub const OD_TXT: &str = "od_flows.txt";
pub const SHARES: &str = "destination_shares.csv";
pub const DESIGN: &str = "design.csv";
pub const MODEL: &str = "model.json";
pub const FIT_REPORT: &str = "fit_report.txt";
pub const CV_REPORT: &str = "cv_report.json";
pub const REPORT: &str = "report.txt";

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Homes => "homes",
            Stage::Evacuees => "evacuees",
            Stage::Destinations => "destinations",
            Stage::Od => "od",
            Stage::Fit => "fit",
            Stage::Cv => "cv",
            Stage::Synth => "synth",
            Stage::All => "all",
        }
    }

    /// Files the stage reads: external inputs and upstream artifacts.
    pub fn prerequisites(self, c: &RunConfig) -> Vec<PathBuf> {
        let mut v = match self {
            Stage::Ingest => vec![c.pings.clone()],
            Stage::Homes => vec![c.out(TRAJECTORIES), c.tracts.clone()],
            Stage::Evacuees => vec![c.out(TRAJECTORIES), c.out(HOMES), c.tracts.clone(), c.zones.clone()],
            Stage::Destinations => vec![c.out(TRAJECTORIES), c.out(HOMES), c.out(EVACUEES), c.tracts.clone()],
            Stage::Od => vec![c.out(HOMES), c.out(DESTINATIONS)],
            Stage::Fit => vec![c.out(OD_CSV), c.attributes.clone()],
            Stage::Cv => vec![c.out(DESIGN)],
            Stage::Synth => vec![],
            Stage::All => vec![c.pings.clone(), c.tracts.clone(), c.zones.clone(), c.attributes.clone()],
        };
        if c.parcels_explicit && matches!(self, Stage::Destinations | Stage::All) {
            v.extend(c.parcels.clone());
        }
        v
    }
}

pub fn check_prerequisites(stage: Stage, c: &RunConfig) -> Result<(), CliError> {
    match stage.prerequisites(c).into_iter().find(|p| !p.is_file()) {
        Some(p) => Err(CliError::Missing(p)),
        None => Ok(()),
    }
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => CliError::Missing(path.to_path_buf()),
        _ => CliError::Io {
            path: path.to_path_buf(),
            source: e,
        },
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    File::create(path).map(BufWriter::new).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `path` with `f` and records it as a stage output.
fn emit<F>(m: &mut Manifest, path: &Path, f: F) -> Result<(), CliError>
where
    F: FnOnce(&mut BufWriter<File>) -> evacflow_core::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).context(format!("writing {}", path.display()))?;
    w.flush().map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    m.output(path)
}

fn read_input<T>(m: &mut Manifest, path: &Path, f: impl FnOnce(BufReader<File>) -> evacflow_core::Result<T>) -> Result<T, CliError> {
    let r = open(path)?;
    m.input(path)?;
    f(r).context(format!("reading {}", path.display()))
}

struct Geo {
    tracts: TractIndex,
    grid: Grid,
}

fn load_tracts(c: &RunConfig, m: &mut Manifest) -> Result<Geo, CliError> {
    let features = read_input(m, &c.tracts, |r| read_features(r, &c.tract_id_field))?;
    let tracts = TractIndex::from_features(features);
    if tracts.polygons().next().is_none() {
        return Err(CliError::Data {
            context: c.tracts.display().to_string(),
            source: evacflow_core::Error::Malformed("no tract polygons".into()),
        });
    }
    let grid = c.pipeline.grid(&tracts);
    Ok(Geo { tracts, grid })
}

fn load_trajectories(c: &RunConfig, m: &mut Manifest) -> Result<Vec<Trajectory>, CliError> {
    read_input(m, &c.out(TRAJECTORIES), |r| read_trajectories_csv(r, &c.pipeline.ingest.clock, c.pipeline.ingest.min_day_pings))
}

fn params<T: serde::Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

pub fn run(stage: Stage, c: &RunConfig) -> Result<(), CliError> {
    match stage {
        Stage::All => PIPELINE.iter().try_for_each(|s| run(*s, c)),
        _ => {
            check_prerequisites(stage, c)?;
            let mut m = Manifest::start(stage.name());
            match stage {
                Stage::Ingest => ingest(c, &mut m)?,
                Stage::Homes => homes(c, &mut m)?,
                Stage::Evacuees => evacuees(c, &mut m)?,
                Stage::Destinations => destinations(c, &mut m)?,
                Stage::Od => od(c, &mut m)?,
                Stage::Fit => fit(c, &mut m)?,
                Stage::Cv => cv(c, &mut m)?,
                Stage::Synth => synth(c, &mut m)?,
                Stage::All => unreachable!(),
            }
            let dir = if stage == Stage::Synth { c.output_dir.join(SYNTH_DIR) } else { c.output_dir.clone() };
            let path = m.finish(&dir)?;
            log::info!("{}: manifest {}", stage.name(), path.display());
            Ok(())
        }
    }
}

fn ingest(c: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    m.params = json!({"schema": params(&c.pipeline.schema), "ingest": params(&c.pipeline.ingest)});
    let (trajs, counts) = read_input(m, &c.pings, |r| ingest_csv(r, &c.pipeline.schema, &c.pipeline.ingest))?;
    if trajs.is_empty() {
        return Err(CliError::Data {
            context: c.pings.display().to_string(),
            source: evacflow_core::Error::Malformed(format!("no device has {} valid pings", c.pipeline.ingest.min_points)),
        });
    }
    emit(m, &c.out(TRAJECTORIES), |w| write_trajectories_csv(w, &trajs))?;
    for (k, v) in params(&counts).as_object().into_iter().flatten() {
        m.count(k, v);
    }
    log::info!("ingest: {} rows read, {} devices retained", counts.rows_read, counts.devices_retained);
    Ok(())
}

fn homes(c: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    m.params = json!({"home": params(&c.pipeline.home), "grid_anchor": params(&c.pipeline.grid_anchor), "storm": params(&c.pipeline.evac.storm)});
    let trajs = load_trajectories(c, m)?;
    let geo = load_tracts(c, m)?;
    let homes = detect_homes(&trajs, &geo.grid, &geo.tracts, &c.pipeline);
    emit(m, &c.out(HOMES), |w| write_homes_csv(w, &homes))?;
    m.count("devices", trajs.len());
    m.count("residents", homes.len());
    m.count("night_rule", homes.iter().filter(|h| h.basis == HomeBasis::NightRule).count());
    m.count("weekend_fallback", homes.iter().filter(|h| h.basis == HomeBasis::WeekendFallback).count());
    m.count("outside_tracts", homes.iter().filter(|h| h.home_tract_id.is_none()).count());
    log::info!("homes: {} residents of {} devices", homes.len(), trajs.len());
    Ok(())
}

fn evacuees(c: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    m.params = json!({"evac": params(&c.pipeline.evac), "buffer_m": c.pipeline.buffer_m, "grid_anchor": params(&c.pipeline.grid_anchor)});
    let trajs = load_trajectories(c, m)?;
    let geo = load_tracts(c, m)?;
    let homes = read_input(m, &c.out(HOMES), |r| read_homes_csv(r, &geo.grid))?;
    let zone_polys: Vec<Polygon> = read_input(m, &c.zones, |r| read_features(r, &c.zone_id_field))?
        .into_iter()
        .flat_map(|f| f.polygons)
        .collect();
    let zones = EvacZoneMap::new(zone_polys, c.pipeline.buffer_m).context(c.zones.display().to_string())?;
    let outcomes = classify_evacuees(&trajs, &homes, &zones, &geo.grid, &c.pipeline.evac);
    let records: Vec<_> = outcomes.iter().filter_map(|o| o.record().cloned()).collect();
    emit(m, &c.out(EVACUEES), |w| write_evacuees_csv(w, &records))?;
    m.count("residents", homes.len());
    m.count("excluded_low_coverage", outcomes.iter().filter(|o| matches!(o, EvacueeOutcome::Excluded { .. })).count());
    for class in [ResidenceClass::InZone, ResidenceClass::Buffer, ResidenceClass::Outside] {
        let of_class = records.iter().filter(|r| r.residence_class == class);
        m.count(&format!("{class}_residents"), of_class.clone().count());
        m.count(&format!("{class}_evacuees"), of_class.filter(|r| r.is_evacuee).count());
    }
    log::info!("evacuees: {} of {} classified residents", records.iter().filter(|r| r.is_evacuee).count(), records.len());
    Ok(())
}

fn destinations(c: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    m.params = json!({"evac": params(&c.pipeline.evac), "grid_anchor": params(&c.pipeline.grid_anchor), "parcel_class_field": c.parcel_class_field});
    let trajs = load_trajectories(c, m)?;
    let geo = load_tracts(c, m)?;
    let homes = read_input(m, &c.out(HOMES), |r| read_homes_csv(r, &geo.grid))?;
    let evacuees = read_input(m, &c.out(EVACUEES), read_evacuees_csv)?;
    let stops = infer_destinations(&trajs, &homes, &evacuees, &geo.tracts, &geo.grid, &c.pipeline.evac);
    emit(m, &c.out(DESTINATIONS), |w| write_destinations_csv(w, &stops))?;
    m.count("evacuees", stops.len());
    m.count("with_destination", stops.iter().filter(|s| s.has_destination()).count());
    m.count("no_destination", stops.iter().filter(|s| !s.has_destination()).count());
    match &c.parcels {
        Some(path) => {
            let features = read_input(m, path, |r| read_features(r, &c.parcel_id_field))?;
            let layer = ParcelLayer::from_features(features, &c.parcel_class_field).context(path.display().to_string())?;
            let summary = landuse_validate(&landuse_points(&homes, &stops), &layer);
            emit(m, &c.out(LANDUSE), |w| write_landuse_csv(w, &summary))?;
            for (role, s) in &summary.roles {
                m.count(&format!("{role}_residential_share"), s.residential_share());
            }
        }
        None => log::warn!("no parcel layer configured; land-use validation skipped"),
    }
    Ok(())
}

fn od(c: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    m.params = json!({});
    let home_tracts = {
        let path = c.out(HOMES);
        let r = open(&path)?;
        m.input(&path)?;
        home_tracts(r).context(path.display().to_string())?
    };
    let dests = read_input(m, &c.out(DESTINATIONS), read_destinations_csv)?;
    let mut unmatched = 0usize;
    let triples: Vec<(&str, &str, &str)> = dests
        .iter()
        .filter_map(|(dev, dest, _)| {
            let origin = home_tracts.get(dev);
            unmatched += usize::from(origin.is_none());
            Some((dev.as_str(), origin?.as_str(), dest.as_str()))
        })
        .collect();
    let flows = aggregate_flows(&triples);
    emit(m, &c.out(OD_CSV), |w| write_od_csv(w, &flows))?;
    emit(m, &c.out(OD_TXT), |w| write_od_text(w, &flows))?;
    let shares = destination_shares(&flows);
    emit(m, &c.out(SHARES), |w| write_shares_csv(w, &shares))?;
    m.count("od_pairs", flows.len());
    m.count("evacuees", flows.iter().map(|f| f.count).sum::<u64>());
    m.count("destinations_without_home_tract", unmatched);
    m.count("same_county_share", same_county_share(&flows));
    println!("destination county        evacuees    share");
    for s in shares.iter().take(10) {
        println!("{:<24} {:>9} {:>8.4}{}", s.dest_county, s.evacuees, s.share, if s.same_as_origin { "  (home county)" } else { "" });
    }
    Ok(())
}

/// `device_id -> home tract` from `homes.csv`, skipping homes outside every
/// tract.
fn home_tracts(r: impl std::io::Read) -> evacflow_core::Result<BTreeMap<String, String>> {
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    let col = |name: &str| header.iter().position(|h| h == name).ok_or_else(|| evacflow_core::Error::MissingColumn(name.into()));
    let (dev, tract) = (col("device_id")?, col("home_tract_id")?);
    let mut out = BTreeMap::new();
    for rec in rd.records() {
        let rec = rec?;
        match (rec.get(dev), rec.get(tract)) {
            (Some(d), Some(t)) if !t.is_empty() => {
                out.insert(d.to_string(), t.to_string());
            }
            _ => {}
        }
    }
    Ok(out)
}

fn fit(c: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    m.params = json!({"vif_threshold": c.vif_threshold});
    let flows = read_input(m, &c.out(OD_CSV), read_od_csv)?;
    let attrs = read_input(m, &c.attributes, read_tract_attributes_csv)?;
    let rows = join_attributes(&flows, &attrs).context("joining tract attributes")?;
    emit(m, &c.out(DESIGN), |w| write_design_csv(w, &rows))?;
    let (_, fit) = fit_demand_model(&rows, c.vif_threshold).context("fitting the demand model")?;
    emit(m, &c.out(MODEL), |w| {
        serde_json::to_writer_pretty(&mut *w, &fit)?;
        Ok(writeln!(w)?)
    })?;
    emit(m, &c.out(FIT_REPORT), |w| Ok(w.write_all(render_report(&fit, None).as_bytes())?))?;
    m.count("observations", fit.model.n_obs);
    m.count("predictors", fit.model.predictor_names.len());
    m.count("vif_removed", fit.vif.removed.iter().map(|r| r.name.clone()).collect::<Vec<_>>());
    m.count("dropped_constant", &fit.dropped_constant);
    m.count("in_sample", fit.in_sample);
    Ok(())
}

fn cv(c: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    m.params = json!({"vif_threshold": c.vif_threshold, "cv_folds": c.cv_folds, "seed": c.seed});
    let rows = read_input(m, &c.out(DESIGN), read_design_csv)?;
    let (design, fit) = fit_demand_model(&rows, c.vif_threshold).context("fitting the demand model")?;
    let report = cross_validate(&design, c.cv_folds, c.seed).context("cross-validating")?;
    emit(m, &c.out(CV_REPORT), |w| {
        serde_json::to_writer_pretty(&mut *w, &report)?;
        Ok(writeln!(w)?)
    })?;
    let text = render_report(&fit, Some(&report));
    emit(m, &c.out(REPORT), |w| Ok(w.write_all(text.as_bytes())?))?;
    m.count("folds", report.k);
    m.count("mean_in_sample", report.mean_in_sample);
    m.count("mean_out_of_sample", report.mean_out_of_sample);
    m.count("r2_undefined_folds", &report.r2_undefined_folds);
    print!("{text}");
    Ok(())
}

fn synth(c: &RunConfig, m: &mut Manifest) -> Result<(), CliError> {
    m.params = params(&c.synth);
    let s = gen_scenario(&c.synth).context("generating the scenario")?;
    let dir = c.output_dir.join(SYNTH_DIR);
    let files = write_scenario(&dir, &s).context(format!("writing {}", dir.display()))?;
    for p in [
        &files.pings,
        &files.tracts,
        &files.attributes,
        &files.zones,
        &files.parcels,
        &files.planted_od,
        &files.planted_devices,
        &files.scenario,
    ] {
        m.output(p)?;
    }
    for kind in [
        DeviceKind::Resident,
        DeviceKind::Evacuee,
        DeviceKind::ShortTrip,
        DeviceKind::LowCoverage,
        DeviceKind::Visitor,
        DeviceKind::Sparse,
    ] {
        m.count(&kind.to_string(), s.devices.iter().filter(|d| d.kind == kind).count());
    }
    m.count("tracts", s.tracts.len());
    m.count("planted_od_pairs", s.planted_od().len());
    log::info!("synth: {} devices, {} tracts in {}", s.devices.len(), s.tracts.len(), dir.display());
    Ok(())
}
