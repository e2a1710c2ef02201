//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{NaiveDateTime, NaiveTime, Timelike};
use evacflow_core::evac::EvacZoneMap;
use evacflow_core::synth::{ScenarioConfig, PARCEL_CLASS_FIELD, PARCEL_ID_FIELD, TRACT_ID_FIELD, ZONE_ID_FIELD};
use evacflow_core::{GeoPoint, LocalClock, LocalDate, NightWindow, PipelineParams, StormWindow};

use crate::error::CliError;

pub const DEFAULT_OUTPUT_DIR: &str = "evacflow_out";
pub const SYNTH_DIR: &str = "synth";

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub pings: PathBuf,
    pub tracts: PathBuf,
    pub attributes: PathBuf,
    pub zones: PathBuf,
    /// `None` when no parcel layer was configured and none was synthesized.
    pub parcels: Option<PathBuf>,
    pub parcels_explicit: bool,
    pub tract_id_field: String,
    pub zone_id_field: String,
    pub parcel_class_field: String,
    pub parcel_id_field: String,
    pub pipeline: PipelineParams,
    pub vif_threshold: f64,
    pub cv_folds: usize,
    pub seed: u64,
    pub synth: ScenarioConfig,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let k = k.trim().to_string();
        if k.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", i + 1)));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
    }
    Ok(out)
}

struct Pairs(BTreeMap<String, String>);

impl Pairs {
    fn get<T: FromStr>(&mut self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        match self.0.remove(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|e| CliError::Config(format!("{key} = {v}: {e}"))),
        }
    }

    fn opt(&mut self, key: &str) -> Option<String> {
        self.0.remove(key)
    }
}

fn parse_hhmm(key: &str, v: &str) -> Result<u32, CliError> {
    let t = NaiveTime::parse_from_str(v, "%H:%M").map_err(|e| CliError::Config(format!("{key} = {v}: {e}")))?;
    Ok(t.num_seconds_from_midnight())
}

fn parse_local(key: &str, v: &str, clock: &LocalClock) -> Result<i64, CliError> {
    let dt = NaiveDateTime::parse_from_str(v, "%Y-%m-%dT%H:%M").map_err(|e| CliError::Config(format!("{key} = {v}: {e}")))?;
    Ok(clock.at(LocalDate::from_naive(dt.date()), dt.hour(), dt.minute()))
}

fn range_check(key: &str, ok: bool, v: impl Display) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::Config(format!("{key} out of range: {v}")))
    }
}

impl RunConfig {
    /// Reads the config file, or uses defaults when `path` is `None`.
    /// Relative paths resolve against the config file's directory.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Self::from_pairs(BTreeMap::new(), Path::new(".")),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                let base = p.parent().filter(|b| !b.as_os_str().is_empty()).unwrap_or(Path::new("."));
                Self::from_pairs(parse_pairs(&text)?, base)
            }
        }
    }

    pub fn from_pairs(pairs: BTreeMap<String, String>, base: &Path) -> Result<Self, CliError> {
        let mut p = Pairs(pairs);
        let resolve = |s: String| {
            let path = PathBuf::from(s);
            if path.is_absolute() {
                path
            } else {
                base.join(path)
            }
        };
        let output_dir = resolve(p.opt("output_dir").unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into()));
        let synth_dir = output_dir.join(SYNTH_DIR);
        let mut input = |key: &str, file: &str| p.opt(key).map(resolve).unwrap_or_else(|| synth_dir.join(file));
        let pings = input("pings", "pings.csv");
        let tracts = input("tracts", "tracts.geojson");
        let attributes = input("attributes", "tract_attributes.csv");
        let zones = input("zones", "evac_zones.geojson");
        let (parcels, parcels_explicit) = match p.opt("parcels") {
            Some(v) => (Some(resolve(v)), true),
            None => {
                let d = synth_dir.join("parcels.geojson");
                (d.exists().then_some(d), false)
            }
        };

        let utc_offset_hours: f64 = p.get("utc_offset_hours", -4.0)?;
        range_check("utc_offset_hours", (-14.0..=14.0).contains(&utc_offset_hours), utc_offset_hours)?;
        let clock = LocalClock::from_offset_hours(utc_offset_hours);
        let night_start = p.opt("night_start").map(|v| parse_hhmm("night_start", &v)).transpose()?;
        let night_end = p.opt("night_end").map(|v| parse_hhmm("night_end", &v)).transpose()?;
        let default_night = NightWindow::default();
        let night_window = NightWindow::new(night_start.unwrap_or(default_night.start_s), night_end.unwrap_or(default_night.end_s))
            .map_err(|e| CliError::Config(e.to_string()))?;
        let default_storm = StormWindow::hurricane_ian(&clock);
        let storm_start = p.opt("storm_start").map(|v| parse_local("storm_start", &v, &clock)).transpose()?;
        let storm_end = p.opt("storm_end").map(|v| parse_local("storm_end", &v, &clock)).transpose()?;
        let storm = StormWindow::new(storm_start.unwrap_or(default_storm.start_ms), storm_end.unwrap_or(default_storm.end_ms))
            .map_err(|e| CliError::Config(e.to_string()))?;

        let mut pipeline = PipelineParams::with_clock(clock, night_window, Some(storm));
        let s = &mut pipeline.schema;
        s.device_id = p.get("col_device_id", s.device_id.clone())?;
        s.timestamp = p.get("col_timestamp", s.timestamp.clone())?;
        s.latitude = p.get("col_latitude", s.latitude.clone())?;
        s.longitude = p.get("col_longitude", s.longitude.clone())?;
        s.accuracy = p.get("col_accuracy", s.accuracy.clone())?;
        let i = &mut pipeline.ingest;
        i.max_accuracy_m = p.get("max_accuracy_m", i.max_accuracy_m)?;
        i.min_points = p.get("min_points", i.min_points)?;
        i.min_day_pings = p.get("min_day_pings", i.min_day_pings)?;
        range_check("max_accuracy_m", i.max_accuracy_m > 0.0, i.max_accuracy_m)?;
        let h = &mut pipeline.home;
        h.max_gap_s = p.get("home_max_gap_s", h.max_gap_s)?;
        h.min_nights = p.get("min_nights", h.min_nights)?;
        h.min_active_days = p.get("min_active_days", h.min_active_days)?;
        h.min_weekend_s = 3600.0 * p.get("min_weekend_hours", h.min_weekend_s / 3600.0)?;
        range_check("home_max_gap_s", h.max_gap_s > 0.0, h.max_gap_s)?;
        range_check("min_weekend_hours", h.min_weekend_s >= 0.0, h.min_weekend_s / 3600.0)?;
        let e = &mut pipeline.evac;
        e.max_gap_s = p.get("evac_max_gap_s", e.max_gap_s)?;
        e.min_coverage = p.get("min_coverage", e.min_coverage)?;
        e.buffer_consecutive_nights = p.get("buffer_consecutive_nights", e.buffer_consecutive_nights)?;
        e.min_stop_dist_m = p.get("min_stop_dist_m", e.min_stop_dist_m)?;
        range_check("evac_max_gap_s", e.max_gap_s > 0.0, e.max_gap_s)?;
        range_check("min_coverage", (0.0..=1.0).contains(&e.min_coverage), e.min_coverage)?;
        range_check("buffer_consecutive_nights", e.buffer_consecutive_nights >= 1, e.buffer_consecutive_nights)?;
        range_check("min_stop_dist_m", e.min_stop_dist_m >= 0.0, e.min_stop_dist_m)?;
        pipeline.buffer_m = p.get("buffer_m", EvacZoneMap::DEFAULT_BUFFER_M)?;
        range_check("buffer_m", pipeline.buffer_m >= 0.0, pipeline.buffer_m)?;
        let anchor_lat = p.opt("grid_anchor_lat");
        let anchor_lon = p.opt("grid_anchor_lon");
        pipeline.grid_anchor = match (anchor_lat, anchor_lon) {
            (None, None) => None,
            (Some(a), Some(b)) => {
                let lat = a.parse().map_err(|e| CliError::Config(format!("grid_anchor_lat = {a}: {e}")))?;
                let lon = b.parse().map_err(|e| CliError::Config(format!("grid_anchor_lon = {b}: {e}")))?;
                Some(GeoPoint::new(lat, lon).map_err(|e| CliError::Config(e.to_string()))?)
            }
            _ => return Err(CliError::Config("grid_anchor_lat and grid_anchor_lon must be set together".into())),
        };

        let vif_threshold: f64 = p.get("vif_threshold", 10.0)?;
        range_check("vif_threshold", vif_threshold >= 1.0, vif_threshold)?;
        let cv_folds: usize = p.get("cv_folds", 10)?;
        range_check("cv_folds", cv_folds >= 2, cv_folds)?;
        let seed: u64 = p.get("seed", 42)?;

        let d = ScenarioConfig::default();
        let synth = ScenarioConfig {
            seed: p.get("synth_seed", d.seed)?,
            devices: p.get("synth_devices", d.devices)?,
            tract_cols: p.get("synth_tract_cols", d.tract_cols)?,
            tract_rows: p.get("synth_tract_rows", d.tract_rows)?,
            compliance_rate: p.get("synth_compliance_rate", d.compliance_rate)?,
            position_sigma_m: p.get("synth_position_sigma_m", d.position_sigma_m)?,
            dropout: p.get("synth_dropout", d.dropout)?,
            utc_offset_hours,
            ..d
        };
        synth.validate().map_err(|e| CliError::Config(e.to_string()))?;

        let cfg = RunConfig {
            output_dir,
            pings,
            tracts,
            attributes,
            zones,
            parcels,
            parcels_explicit,
            tract_id_field: p.get("tract_id_field", TRACT_ID_FIELD.to_string())?,
            zone_id_field: p.get("zone_id_field", ZONE_ID_FIELD.to_string())?,
            parcel_class_field: p.get("parcel_class_field", PARCEL_CLASS_FIELD.to_string())?,
            parcel_id_field: p.get("parcel_id_field", PARCEL_ID_FIELD.to_string())?,
            pipeline,
            vif_threshold,
            cv_folds,
            seed,
            synth,
        };
        if let Some(k) = p.0.keys().next() {
            return Err(CliError::Config(format!("unknown key `{k}`")));
        }
        Ok(cfg)
    }

    /// `--seed` overrides both the model seed and the scenario seed.
    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
            self.synth.seed = s;
        }
        self
    }

    pub fn out(&self, file: &str) -> PathBuf {
        self.output_dir.join(file)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Result<RunConfig, CliError> {
        RunConfig::from_pairs(parse_pairs(text)?, Path::new("/data"))
    }

    #[test]
    fn defaults_point_at_synth_outputs() {
        let c = cfg("").unwrap();
        assert_eq!(c.output_dir, Path::new("/data/evacflow_out"));
        assert_eq!(c.pings, Path::new("/data/evacflow_out/synth/pings.csv"));
        assert_eq!(c.cv_folds, 10);
        assert_eq!(c.pipeline.ingest.min_points, 150);
    }

    #[test]
    fn values_and_paths_parse() {
        let c = cfg("pings = /abs/p.csv  # comment\ntracts = t.geojson\nmin_points = 20\nnight_start = 21:30\nstorm_start = 2022-09-23T00:00\n").unwrap();
        assert_eq!(c.pings, Path::new("/abs/p.csv"));
        assert_eq!(c.tracts, Path::new("/data/t.geojson"));
        assert_eq!(c.pipeline.ingest.min_points, 20);
        assert_eq!(c.pipeline.home.night_window.start_s, 21 * 3600 + 1800);
        assert_eq!(c.pipeline.evac.night_window, c.pipeline.home.night_window);
        let clock = LocalClock::default();
        assert_eq!(c.pipeline.evac.storm.start_ms, clock.at(LocalDate::from_ymd(2022, 9, 23), 0, 0));
    }

    #[test]
    fn bad_configs_rejected() {
        for text in ["nonsense", "min_points = many", "bogus_key = 1", "min_coverage = 2", "cv_folds = 1", "a = 1\na = 2", "grid_anchor_lat = 26"] {
            assert!(matches!(cfg(text), Err(CliError::Config(_))), "{text}");
        }
    }

    #[test]
    fn seed_override() {
        let c = cfg("seed = 3").unwrap().with_seed(Some(9));
        assert_eq!((c.seed, c.synth.seed), (9, 9));
    }
}
