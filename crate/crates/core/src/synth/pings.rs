use std::io::{self, Read, Write as _};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{DeviceKind, PlantedDevice, Scenario};
use crate::geo::GeoPoint;
use crate::ingest::Ping;
use crate::time::LocalDate;

const PING_STREAM_SALT: u64 = 0x9e37_79b9_7f4a_7c15;
const HOUR_MS: i64 = 3_600_000;

struct Timeline<'a> {
    s: &'a Scenario,
    d: &'a PlantedDevice,
    first_storm_night: LocalDate,
    away: Vec<Option<GeoPoint>>,
}

impl Timeline<'_> {
    fn away_on(&self, night: LocalDate) -> Option<GeoPoint> {
        let i = night.0 - self.first_storm_night.0;
        if i < 0 {
            return None;
        }
        self.away.get(i as usize).copied().flatten()
    }

    fn is_storm_night(&self, night: LocalDate) -> bool {
        let i = night.0 - self.first_storm_night.0;
        i >= 0 && (i as usize) < self.away.len()
    }

    /// Planted position at `ts`, or `None` when the device stays silent.
    fn location(&self, ts: i64) -> Option<GeoPoint> {
        let clock = &self.s.clock;
        if let Some(night) = self.s.night_window.night_of(clock, ts) {
            if self.d.kind == DeviceKind::LowCoverage && self.is_storm_night(night) {
                let tod = clock.ms_of_day(ts);
                if !(20 * HOUR_MS..22 * HOUR_MS).contains(&tod) {
                    return None;
                }
            }
            return Some(self.away_on(night).unwrap_or(self.d.home_point));
        }
        let date = clock.date_of(ts);
        if let (Some(_), Some(next)) = (self.away_on(date.pred()), self.away_on(date)) {
            return Some(next);
        }
        let tod = clock.ms_of_day(ts);
        match self.d.work_point {
            Some(w) if !date.is_weekend() && (9 * HOUR_MS..17 * HOUR_MS).contains(&tod) => Some(w),
            _ => Some(self.d.home_point),
        }
    }
}

/// All pings of device `idx` in time order, including the planted
/// low-accuracy and duplicate rows.
pub fn device_pings(s: &Scenario, idx: usize) -> Vec<Ping> {
    let cfg = &s.config;
    let d = &s.devices[idx];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ PING_STREAM_SALT);
    rng.set_stream(idx as u64);
    let nights = s.storm_nights();
    let mut away = vec![None; nights.len()];
    for a in &d.away {
        away[a.night] = Some(a.point);
    }
    let tl = Timeline {
        s,
        d,
        first_storm_night: nights[0],
        away,
    };
    let noise = (cfg.position_sigma_m > 0.0).then(|| Normal::new(0.0, cfg.position_sigma_m).expect("finite sigma"));
    let frame = s.grid.frame();
    let (t_start, t_end) = match d.presence {
        Some((a, b)) => (s.clock.midnight(a), s.clock.midnight(b)),
        None => (s.period_start_ms, s.storm.end_ms),
    };
    let mut out = Vec::new();
    let mut t = t_start;
    while t < t_end {
        let night = s.night_window.night_of(&s.clock, t).is_some();
        let step = 1000 * if night { cfg.night_interval_s } else { cfg.day_interval_s };
        let jitter = 1000 * rng.random_range(0..(step / 4000).min(60));
        let ts = t + jitter;
        t += step;
        if ts >= t_end {
            break;
        }
        let Some(p) = tl.location(ts) else { continue };
        if cfg.dropout > 0.0 && rng.random_bool(cfg.dropout) {
            continue;
        }
        let point = match &noise {
            Some(n) => {
                let (x, y) = frame.to_xy(p);
                frame.from_xy(x + n.sample(&mut rng), y + n.sample(&mut rng))
            }
            None => p,
        };
        let ping = Ping {
            device_id: d.device_id.clone(),
            ts_ms: ts,
            point,
            accuracy_m: (rng.random_range(3.0..30.0f64) * 10.0).round() / 10.0,
        };
        if cfg.duplicate_rate > 0.0 && rng.random_bool(cfg.duplicate_rate) {
            out.push(ping.clone());
        }
        if cfg.inaccurate_rate > 0.0 && rng.random_bool(cfg.inaccurate_rate) {
            let (x, y) = frame.to_xy(p);
            out.push(Ping {
                device_id: d.device_id.clone(),
                ts_ms: ts + 1000,
                point: frame.from_xy(x + rng.random_range(-500.0..500.0), y + rng.random_range(-500.0..500.0)),
                accuracy_m: rng.random_range(60.0..300.0f64).round(),
            });
            out.insert(out.len() - 1, ping);
        } else {
            out.push(ping);
        }
        if d.max_pings.is_some_and(|m| out.len() >= m) {
            out.truncate(d.max_pings.unwrap_or(usize::MAX));
            break;
        }
    }
    out
}

/// Every device's pings, device after device.
pub fn emit_pings(s: &Scenario) -> impl Iterator<Item = Ping> + '_ {
    (0..s.devices.len()).flat_map(move |i| device_pings(s, i))
}

/// The scenario's ping CSV produced lazily, one device at a time.
pub struct PingCsvReader<'a> {
    s: &'a Scenario,
    next_device: usize,
    buf: Vec<u8>,
    pos: usize,
}

pub const PING_CSV_HEADER: &str = "device_id,timestamp,latitude,longitude,horizontal_accuracy\n";

impl<'a> PingCsvReader<'a> {
    pub fn new(s: &'a Scenario) -> Self {
        PingCsvReader {
            s,
            next_device: 0,
            buf: PING_CSV_HEADER.as_bytes().to_vec(),
            pos: 0,
        }
    }

    fn refill(&mut self) -> bool {
        while self.next_device < self.s.devices.len() {
            self.buf.clear();
            self.pos = 0;
            for p in device_pings(self.s, self.next_device) {
                let _ = writeln!(
                    self.buf,
                    "{},{},{},{},{}",
                    p.device_id,
                    p.ts_ms / 1000,
                    p.point.lat,
                    p.point.lon,
                    p.accuracy_m
                );
            }
            self.next_device += 1;
            if !self.buf.is_empty() {
                return true;
            }
        }
        false
    }
}

impl Read for PingCsvReader<'_> {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos >= self.buf.len() && !self.refill() {
            return Ok(0);
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}
