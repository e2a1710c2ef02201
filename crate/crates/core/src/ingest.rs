//! Raw ping parsing, quality filtering and per-device trajectory assembly.
//!
//! Two equivalent routes are provided. The iterator route
//! ([`parse_pings`] → [`quality_filter`] → [`build_trajectories`]) streams
//! rows one at a time. [`ingest_csv`] cuts the input into fixed-size byte
//! chunks, parses chunks on the current rayon pool and merges them in file
//! order, so its output does not depend on the worker count.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::{BufRead, BufReader, Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::time::{parse_timestamp, LocalClock, LocalDate};

/// One GPS fix from one device.
#[derive(Debug, Clone, PartialEq)]
pub struct Ping {
    pub device_id: String,
    pub ts_ms: i64,
    pub point: GeoPoint,
    pub accuracy_m: f64,
}

/// A ping stripped of its device id, as stored inside a [`Trajectory`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fix {
    pub ts_ms: i64,
    pub point: GeoPoint,
    pub accuracy_m: f64,
}

impl Ping {
    pub fn fix(&self) -> Fix {
        Fix {
            ts_ms: self.ts_ms,
            point: self.point,
            accuracy_m: self.accuracy_m,
        }
    }
}

/// Time-ordered fixes of one device plus its active local dates.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub device_id: String,
    pub fixes: Vec<Fix>,
    pub active_days: BTreeSet<LocalDate>,
}

impl Trajectory {
    /// Builds a trajectory from fixes already in strict time order.
    pub fn new(device_id: impl Into<String>, fixes: Vec<Fix>, clock: &LocalClock, min_day_pings: usize) -> Self {
        let active_days = active_days(&fixes, clock, min_day_pings);
        Trajectory {
            device_id: device_id.into(),
            fixes,
            active_days,
        }
    }

    /// Sub-trajectory with fixes in `[start_ms, end_ms)` and recomputed
    /// active days.
    pub fn restrict(&self, start_ms: i64, end_ms: i64, clock: &LocalClock, min_day_pings: usize) -> Trajectory {
        let lo = self.fixes.partition_point(|f| f.ts_ms < start_ms);
        let hi = self.fixes.partition_point(|f| f.ts_ms < end_ms);
        Trajectory::new(self.device_id.clone(), self.fixes[lo..hi].to_vec(), clock, min_day_pings)
    }

    pub fn len(&self) -> usize {
        self.fixes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixes.is_empty()
    }
}

fn active_days(fixes: &[Fix], clock: &LocalClock, min_day_pings: usize) -> BTreeSet<LocalDate> {
    let mut out = BTreeSet::new();
    let mut i = 0;
    while i < fixes.len() {
        let day = clock.date_of(fixes[i].ts_ms);
        let mut j = i + 1;
        while j < fixes.len() && clock.date_of(fixes[j].ts_ms) == day {
            j += 1;
        }
        if j - i >= min_day_pings {
            out.insert(day);
        }
        i = j;
    }
    out
}

/// Column names for the four ping fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PingSchema {
    pub device_id: String,
    pub timestamp: String,
    pub latitude: String,
    pub longitude: String,
    pub accuracy: String,
}

impl Default for PingSchema {
    fn default() -> Self {
        PingSchema {
            device_id: "device_id".into(),
            timestamp: "timestamp".into(),
            latitude: "latitude".into(),
            longitude: "longitude".into(),
            accuracy: "horizontal_accuracy".into(),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct ColumnIndex {
    device: usize,
    ts: usize,
    lat: usize,
    lon: usize,
    acc: usize,
}

impl ColumnIndex {
    fn resolve(header: &csv::StringRecord, schema: &PingSchema) -> Result<Self> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::MissingColumn(name.to_string()))
        };
        Ok(ColumnIndex {
            device: find(&schema.device_id)?,
            ts: find(&schema.timestamp)?,
            lat: find(&schema.latitude)?,
            lon: find(&schema.longitude)?,
            acc: find(&schema.accuracy)?,
        })
    }

    fn parse(&self, rec: &csv::ByteRecord) -> Option<(String, Fix)> {
        let field = |i: usize| rec.get(i).and_then(|b| std::str::from_utf8(b).ok()).map(str::trim);
        let device = field(self.device)?;
        if device.is_empty() {
            return None;
        }
        let lat: f64 = field(self.lat)?.parse().ok()?;
        let lon: f64 = field(self.lon)?.parse().ok()?;
        let point = GeoPoint::new(lat, lon).ok()?;
        let ts_ms = parse_timestamp(field(self.ts)?).ok()?;
        let accuracy_m: f64 = field(self.acc)?.parse().ok()?;
        if !accuracy_m.is_finite() || accuracy_m < 0.0 {
            return None;
        }
        Some((
            device.to_string(),
            Fix {
                ts_ms,
                point,
                accuracy_m,
            },
        ))
    }
}

/// Streaming CSV ping reader. Malformed rows are counted and skipped.
pub struct PingReader<R: Read> {
    reader: csv::Reader<R>,
    columns: ColumnIndex,
    record: csv::ByteRecord,
    rows_read: u64,
    skipped: u64,
}

impl<R: Read> PingReader<R> {
    pub fn rows_read(&self) -> u64 {
        self.rows_read
    }

    pub fn skipped(&self) -> u64 {
        self.skipped
    }
}

impl<R: Read> Iterator for PingReader<R> {
    type Item = Result<Ping>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            match self.reader.read_byte_record(&mut self.record) {
                Ok(false) => return None,
                Ok(true) => {
                    self.rows_read += 1;
                    match self.columns.parse(&self.record) {
                        Some((device_id, fix)) => {
                            return Some(Ok(Ping {
                                device_id,
                                ts_ms: fix.ts_ms,
                                point: fix.point,
                                accuracy_m: fix.accuracy_m,
                            }))
                        }
                        None => self.skipped += 1,
                    }
                }
                Err(e) if e.is_io_error() => return Some(Err(e.into())),
                Err(_) => {
                    self.rows_read += 1;
                    self.skipped += 1;
                }
            }
        }
    }
}

/// Opens a headed CSV ping source. Fails when a mapped column is absent.
pub fn parse_pings<R: Read>(source: R, schema: &PingSchema) -> Result<PingReader<R>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = reader.headers()?.clone();
    let columns = ColumnIndex::resolve(&header, schema)?;
    Ok(PingReader {
        reader,
        columns,
        record: csv::ByteRecord::new(),
        rows_read: 0,
        skipped: 0,
    })
}

/// Accuracy filter plus exact-duplicate removal over a ping stream.
pub struct QualityFilter<I> {
    inner: I,
    max_accuracy_m: f64,
    seen: HashSet<(String, i64, u64, u64)>,
    pub dropped_accuracy: u64,
    pub dropped_duplicate: u64,
}

impl<I: Iterator<Item = Ping>> Iterator for QualityFilter<I> {
    type Item = Ping;

    fn next(&mut self) -> Option<Ping> {
        for p in self.inner.by_ref() {
            if !(p.accuracy_m <= self.max_accuracy_m) {
                self.dropped_accuracy += 1;
                continue;
            }
            let key = (p.device_id.clone(), p.ts_ms, p.point.lat.to_bits(), p.point.lon.to_bits());
            if !self.seen.insert(key) {
                self.dropped_duplicate += 1;
                continue;
            }
            return Some(p);
        }
        None
    }
}

/// Keeps pings with `accuracy_m <= max_accuracy_m` and drops exact
/// `(device, ts, lat, lon)` duplicates after their first occurrence.
pub fn quality_filter<I: IntoIterator<Item = Ping>>(pings: I, max_accuracy_m: f64) -> QualityFilter<I::IntoIter> {
    QualityFilter {
        inner: pings.into_iter(),
        max_accuracy_m,
        seen: HashSet::new(),
        dropped_accuracy: 0,
        dropped_duplicate: 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestParams {
    pub max_accuracy_m: f64,
    pub min_points: usize,
    pub min_day_pings: usize,
    pub clock: LocalClock,
}

impl Default for IngestParams {
    fn default() -> Self {
        IngestParams {
            max_accuracy_m: 50.0,
            min_points: 150,
            min_day_pings: 10,
            clock: LocalClock::default(),
        }
    }
}

/// Row accounting. `rows_read` equals the sum of every other `rows`/`dropped`
/// field plus `pings_retained`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestCounts {
    pub rows_read: u64,
    pub rows_skipped: u64,
    pub dropped_accuracy: u64,
    pub dropped_duplicate: u64,
    pub dropped_ts_conflict: u64,
    pub dropped_sparse_device: u64,
    pub devices_seen: u64,
    pub devices_retained: u64,
    pub pings_retained: u64,
}

impl IngestCounts {
    pub fn is_balanced(&self) -> bool {
        self.rows_read
            == self.rows_skipped
                + self.dropped_accuracy
                + self.dropped_duplicate
                + self.dropped_ts_conflict
                + self.dropped_sparse_device
                + self.pings_retained
    }
}

#[derive(Debug, Default)]
struct DeviceOutcome {
    trajectory: Option<Trajectory>,
    duplicates: u64,
    conflicts: u64,
    sparse: u64,
}

/// Sorts one device's fixes (stable, so file order breaks ts ties), keeps
/// the first fix per timestamp and applies the point threshold.
fn finish_device(device_id: String, mut fixes: Vec<Fix>, params: &IngestParams) -> DeviceOutcome {
    fixes.sort_by_key(|f| f.ts_ms);
    let mut kept: Vec<Fix> = Vec::with_capacity(fixes.len());
    let mut out = DeviceOutcome::default();
    let mut run_start = 0;
    for (i, f) in fixes.iter().enumerate() {
        if i > 0 && f.ts_ms == fixes[i - 1].ts_ms {
            let run = &fixes[run_start..i];
            if run.iter().any(|g| g.point == f.point) {
                out.duplicates += 1;
            } else {
                out.conflicts += 1;
            }
            continue;
        }
        run_start = i;
        kept.push(*f);
    }
    if kept.len() < params.min_points {
        out.sparse = kept.len() as u64;
    } else {
        out.trajectory = Some(Trajectory::new(device_id, kept, &params.clock, params.min_day_pings));
    }
    out
}

fn finish_all(groups: Vec<(String, Vec<Fix>)>, params: &IngestParams, counts: &mut IngestCounts) -> Vec<Trajectory> {
    counts.devices_seen = groups.len() as u64;
    let outcomes: Vec<DeviceOutcome> = groups
        .into_par_iter()
        .map(|(id, fixes)| finish_device(id, fixes, params))
        .collect();
    let mut trajectories = Vec::new();
    for o in outcomes {
        counts.dropped_duplicate += o.duplicates;
        counts.dropped_ts_conflict += o.conflicts;
        counts.dropped_sparse_device += o.sparse;
        if let Some(t) = o.trajectory {
            counts.pings_retained += t.len() as u64;
            trajectories.push(t);
        }
    }
    counts.devices_retained = trajectories.len() as u64;
    trajectories
}

/// Groups quality-filtered pings into per-device trajectories, sorted by
/// device id. Devices with fewer than `params.min_points` pings are dropped.
///
/// Two pings of one device sharing a timestamp but not a position are
/// resolved by keeping the earlier one in input order.
pub fn build_trajectories<I: IntoIterator<Item = Ping>>(pings: I, params: &IngestParams) -> (Vec<Trajectory>, IngestCounts) {
    let mut groups: BTreeMap<String, Vec<Fix>> = BTreeMap::new();
    let mut counts = IngestCounts::default();
    for p in pings {
        counts.rows_read += 1;
        let fix = p.fix();
        groups.entry(p.device_id).or_default().push(fix);
    }
    let trajectories = finish_all(groups.into_iter().collect(), params, &mut counts);
    (trajectories, counts)
}

/// Full iterator route over a CSV source: parse, filter, build.
pub fn ingest_stream<R: Read>(source: R, schema: &PingSchema, params: &IngestParams) -> Result<(Vec<Trajectory>, IngestCounts)> {
    let mut reader = parse_pings(source, schema)?;
    let mut io_error = None;
    let mut filter = quality_filter(
        reader.by_ref().map_while(|r| match r {
            Ok(p) => Some(p),
            Err(e) => {
                io_error = Some(e);
                None
            }
        }),
        params.max_accuracy_m,
    );
    let (trajectories, mut counts) = build_trajectories(filter.by_ref(), params);
    let (dropped_accuracy, dropped_duplicate) = (filter.dropped_accuracy, filter.dropped_duplicate);
    drop(filter);
    if let Some(e) = io_error {
        return Err(e);
    }
    counts.rows_read = reader.rows_read();
    counts.rows_skipped = reader.skipped();
    counts.dropped_accuracy = dropped_accuracy;
    counts.dropped_duplicate += dropped_duplicate;
    Ok((trajectories, counts))
}

/// Bytes per parse chunk in [`ingest_csv`]. Fixed so chunk boundaries never
/// depend on the thread count.
pub const CHUNK_BYTES: usize = 8 << 20;

#[derive(Default)]
struct ChunkResult {
    groups: HashMap<String, Vec<Fix>>,
    order: Vec<String>,
    rows: u64,
    skipped: u64,
    dropped_accuracy: u64,
}

fn parse_chunk(chunk: &[u8], columns: ColumnIndex, max_accuracy_m: f64) -> ChunkResult {
    let mut out = ChunkResult::default();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(chunk);
    let mut rec = csv::ByteRecord::new();
    loop {
        match reader.read_byte_record(&mut rec) {
            Ok(false) => break,
            Ok(true) => {
                out.rows += 1;
                match columns.parse(&rec) {
                    Some((_, fix)) if !(fix.accuracy_m <= max_accuracy_m) => out.dropped_accuracy += 1,
                    Some((device, fix)) => match out.groups.get_mut(&device) {
                        Some(v) => v.push(fix),
                        None => {
                            out.order.push(device.clone());
                            out.groups.insert(device, vec![fix]);
                        }
                    },
                    None => out.skipped += 1,
                }
            }
            Err(_) => {
                out.rows += 1;
                out.skipped += 1;
            }
        }
    }
    out
}

/// Reads newline-aligned chunks of roughly [`CHUNK_BYTES`].
fn next_chunk<R: BufRead>(reader: &mut R, carry: &mut Vec<u8>, chunk_bytes: usize) -> Result<Option<Vec<u8>>> {
    let mut buf = std::mem::take(carry);
    let target = chunk_bytes.max(buf.len() + 1);
    let mut eof = false;
    while buf.len() < target {
        let avail = reader.fill_buf()?;
        if avail.is_empty() {
            eof = true;
            break;
        }
        let take = avail.len().min(target - buf.len());
        buf.extend_from_slice(&avail[..take]);
        reader.consume(take);
    }
    if eof {
        return Ok(if buf.is_empty() { None } else { Some(buf) });
    }
    match buf.iter().rposition(|&b| b == b'\n') {
        Some(pos) => {
            carry.extend_from_slice(&buf[pos + 1..]);
            buf.truncate(pos + 1);
            Ok(Some(buf))
        }
        None => {
            // a single line longer than the chunk: keep reading
            *carry = buf;
            next_chunk(reader, carry, chunk_bytes)
        }
    }
}

/// Parallel CSV ingestion on the current rayon pool.
///
/// Memory is bounded by one batch of raw chunks plus the compact per-device
/// fixes. Quoted fields spanning lines are not supported on this route.
pub fn ingest_csv<R: Read>(source: R, schema: &PingSchema, params: &IngestParams) -> Result<(Vec<Trajectory>, IngestCounts)> {
    ingest_csv_chunked(source, schema, params, CHUNK_BYTES)
}

fn ingest_csv_chunked<R: Read>(
    source: R,
    schema: &PingSchema,
    params: &IngestParams,
    chunk_bytes: usize,
) -> Result<(Vec<Trajectory>, IngestCounts)> {
    let mut reader = BufReader::with_capacity(1 << 20, source);
    let mut header_line = Vec::new();
    reader.read_until(b'\n', &mut header_line)?;
    let header = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(header_line.as_slice())
        .records()
        .next()
        .transpose()?
        .unwrap_or_default();
    let columns = ColumnIndex::resolve(&header, schema)?;

    let batch = rayon::current_num_threads().max(1) * 2;
    let mut counts = IngestCounts::default();
    let mut groups: HashMap<String, Vec<Fix>> = HashMap::new();
    let mut carry = Vec::new();
    loop {
        let mut chunks = Vec::with_capacity(batch);
        while chunks.len() < batch {
            match next_chunk(&mut reader, &mut carry, chunk_bytes)? {
                Some(c) => chunks.push(c),
                None => break,
            }
        }
        if chunks.is_empty() {
            break;
        }
        let results: Vec<ChunkResult> = chunks
            .par_iter()
            .map(|c| parse_chunk(c, columns, params.max_accuracy_m))
            .collect();
        drop(chunks);
        for mut r in results {
            counts.rows_read += r.rows;
            counts.rows_skipped += r.skipped;
            counts.dropped_accuracy += r.dropped_accuracy;
            for device in r.order {
                let fixes = r.groups.remove(&device).unwrap_or_default();
                match groups.get_mut(&device) {
                    Some(v) => v.extend(fixes),
                    None => {
                        groups.insert(device, fixes);
                    }
                }
            }
        }
    }
    let mut groups: Vec<(String, Vec<Fix>)> = groups.into_iter().collect();
    groups.sort_by(|a, b| a.0.cmp(&b.0));
    let trajectories = finish_all(groups, params, &mut counts);
    Ok((trajectories, counts))
}

fn format_ts(ts_ms: i64) -> String {
    if ts_ms % 1000 == 0 {
        (ts_ms / 1000).to_string()
    } else {
        format!("{:.3}", ts_ms as f64 / 1000.0)
    }
}

/// Writes pings in the default input schema (epoch-second timestamps).
pub fn write_pings_csv<'a, W: Write>(out: W, pings: impl IntoIterator<Item = &'a Ping>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device_id", "timestamp", "latitude", "longitude", "horizontal_accuracy"])?;
    for p in pings {
        w.write_record([
            p.device_id.as_str(),
            &format_ts(p.ts_ms),
            &p.point.lat.to_string(),
            &p.point.lon.to_string(),
            &p.accuracy_m.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes cleaned trajectories in the default input schema.
pub fn write_trajectories_csv<W: Write>(out: W, trajectories: &[Trajectory]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["device_id", "timestamp", "latitude", "longitude", "horizontal_accuracy"])?;
    for t in trajectories {
        for f in &t.fixes {
            w.write_record([
                t.device_id.as_str(),
                &format_ts(f.ts_ms),
                &f.point.lat.to_string(),
                &f.point.lon.to_string(),
                &f.accuracy_m.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_trajectories_csv`]. Any malformed row is
/// an error.
pub fn read_trajectories_csv<R: Read>(input: R, clock: &LocalClock, min_day_pings: usize) -> Result<Vec<Trajectory>> {
    let mut reader = parse_pings(input, &PingSchema::default())?;
    let mut by_device: BTreeMap<String, Vec<Fix>> = BTreeMap::new();
    for p in reader.by_ref() {
        let p = p?;
        by_device.entry(p.device_id.clone()).or_default().push(p.fix());
    }
    if reader.skipped() > 0 {
        return Err(Error::Malformed(format!("{} unreadable trajectory rows", reader.skipped())));
    }
    Ok(by_device
        .into_iter()
        .map(|(id, mut fixes)| {
            fixes.sort_by_key(|f| f.ts_ms);
            Trajectory::new(id, fixes, clock, min_day_pings)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const HEADER: &str = "device_id,timestamp,latitude,longitude,horizontal_accuracy\n";

    fn ping(dev: &str, ts_s: i64, lat: f64, lon: f64, acc: f64) -> Ping {
        Ping {
            device_id: dev.into(),
            ts_ms: ts_s * 1000,
            point: GeoPoint::new(lat, lon).unwrap(),
            accuracy_m: acc,
        }
    }

    #[test]
    fn trajectories_round_trip() {
        let c = LocalClock::default();
        let fixes = |n: i64| (0..n).map(|i| ping("x", 1_663_891_200 + 60 * i, 26.5, -81.9, 4.5).fix()).collect::<Vec<_>>();
        let trajs = vec![Trajectory::new("a", fixes(12), &c, 10), Trajectory::new("b", fixes(3), &c, 10)];
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &trajs).unwrap();
        assert_eq!(read_trajectories_csv(buf.as_slice(), &c, 10).unwrap(), trajs);
        let bad = format!("{HEADER}a,nope,1,1,1\n");
        assert!(matches!(read_trajectories_csv(bad.as_bytes(), &c, 10), Err(Error::Malformed(_))));
    }

    #[test]
    fn parses_well_formed_rows() {
        let data = format!("{HEADER}a,1663891200,26.5,-81.9,10\nb,1663891260,26.6,-81.8,5\na,2022-09-23T00:02:00Z,26.5,-81.9,3\n");
        let pings: Vec<Ping> = parse_pings(data.as_bytes(), &PingSchema::default())
            .unwrap()
            .collect::<Result<_>>()
            .unwrap();
        assert_eq!(pings.len(), 3);
        assert_eq!(pings[2].ts_ms, 1_663_891_320_000);
    }

    #[test]
    fn malformed_row_is_counted_and_skipped() {
        let data = format!("{HEADER}a,1663891200,abc,-81.9,10\nb,1663891260,26.6,-81.8,5\n");
        let mut r = parse_pings(data.as_bytes(), &PingSchema::default()).unwrap();
        let pings: Vec<Ping> = r.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(pings.len(), 1);
        assert_eq!(r.skipped(), 1);
        assert_eq!(r.rows_read(), 2);
    }

    #[test]
    fn header_only_is_empty_not_error() {
        let mut r = parse_pings(HEADER.as_bytes(), &PingSchema::default()).unwrap();
        assert!(r.next().is_none());
    }

    #[test]
    fn missing_column_is_an_error() {
        let data = "device_id,timestamp,latitude,longitude\n";
        let err = parse_pings(data.as_bytes(), &PingSchema::default()).err().unwrap();
        assert!(matches!(err, Error::MissingColumn(c) if c == "horizontal_accuracy"));
    }

    #[test]
    fn custom_schema_maps_columns() {
        let schema = PingSchema {
            device_id: "uid".into(),
            timestamp: "t".into(),
            latitude: "y".into(),
            longitude: "x".into(),
            accuracy: "err".into(),
        };
        let data = "x,y,t,uid,err\n-81.9,26.5,1663891200,d1,4\n";
        let pings: Vec<Ping> = parse_pings(data.as_bytes(), &schema).unwrap().collect::<Result<_>>().unwrap();
        assert_eq!(pings[0].device_id, "d1");
        assert_eq!(pings[0].point.lat, 26.5);
    }

    #[test]
    fn accuracy_boundary_is_inclusive() {
        let pings = vec![ping("a", 1, 26.5, -81.9, 50.0), ping("a", 2, 26.5, -81.9, 50.1)];
        let kept: Vec<Ping> = quality_filter(pings, 50.0).collect();
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].accuracy_m, 50.0);
    }

    #[test]
    fn identical_pings_collapse() {
        let pings = vec![ping("a", 1, 26.5, -81.9, 5.0), ping("a", 1, 26.5, -81.9, 5.0)];
        let mut f = quality_filter(pings, 50.0);
        assert_eq!(f.by_ref().count(), 1);
        assert_eq!(f.dropped_duplicate, 1);
    }

    fn device_pings(dev: &str, n: usize) -> Vec<Ping> {
        (0..n).map(|i| ping(dev, 1_663_000_000 + i as i64 * 60, 26.5, -81.9, 5.0)).collect()
    }

    #[test]
    fn min_points_threshold() {
        let mut pings = device_pings("short", 149);
        pings.extend(device_pings("enough", 150));
        let (trajs, counts) = build_trajectories(pings, &IngestParams::default());
        assert_eq!(trajs.len(), 1);
        assert_eq!(trajs[0].device_id, "enough");
        assert_eq!(counts.dropped_sparse_device, 149);
    }

    #[test]
    fn active_days_need_ten_pings() {
        let clock = LocalClock::default();
        let d1 = LocalDate::from_ymd(2022, 9, 10);
        let d2 = d1.succ();
        let mut pings: Vec<Ping> = (0..12)
            .map(|i| Ping {
                device_id: "a".into(),
                ts_ms: clock.at(d1, 9, i),
                point: GeoPoint::new(26.5, -81.9).unwrap(),
                accuracy_m: 5.0,
            })
            .collect();
        pings.extend((0..3).map(|i| Ping {
            device_id: "a".into(),
            ts_ms: clock.at(d2, 9, i),
            point: GeoPoint::new(26.5, -81.9).unwrap(),
            accuracy_m: 5.0,
        }));
        let params = IngestParams {
            min_points: 1,
            ..Default::default()
        };
        let (trajs, _) = build_trajectories(pings, &params);
        assert_eq!(trajs[0].active_days, BTreeSet::from([d1]));
    }

    #[test]
    fn ts_conflicts_keep_file_order() {
        let pings = vec![ping("a", 5, 26.5, -81.9, 5.0), ping("a", 5, 26.6, -81.9, 5.0), ping("a", 1, 26.7, -81.9, 5.0)];
        let params = IngestParams {
            min_points: 1,
            ..Default::default()
        };
        let (trajs, counts) = build_trajectories(pings, &params);
        let t = &trajs[0];
        assert_eq!(t.fixes.len(), 2);
        assert_eq!(t.fixes[0].point.lat, 26.7);
        assert_eq!(t.fixes[1].point.lat, 26.5);
        assert_eq!(counts.dropped_ts_conflict, 1);
    }

    fn to_csv(pings: &[Ping]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_pings_csv(&mut buf, pings).unwrap();
        buf
    }

    #[test]
    fn chunked_route_handles_long_input() {
        // enough rows to span several chunks
        let mut pings = Vec::new();
        for d in 0..40 {
            pings.extend(device_pings(&format!("dev{d:03}"), 3_000));
        }
        let csv = to_csv(&pings);
        let params = IngestParams::default();
        let (a, ca) = ingest_csv_chunked(csv.as_slice(), &PingSchema::default(), &params, 64 << 10).unwrap();
        let (b, cb) = ingest_stream(csv.as_slice(), &PingSchema::default(), &params).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(ca.rows_read, 120_000);
    }

    fn arb_pings() -> impl Strategy<Value = Vec<Ping>> {
        let one = (0usize..4, 0i64..400, 0u8..3, prop_oneof![Just(5.0), Just(50.0), Just(50.5), Just(80.0)]);
        proptest::collection::vec(one, 0..600).prop_map(|rows| {
            rows.into_iter()
                .map(|(d, t, pos, acc)| ping(&format!("d{d}"), 1_663_000_000 + t * 97, 26.5 + pos as f64 * 1e-3, -81.9, acc))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn routes_agree_and_rows_balance(pings in arb_pings(), garbage in 0usize..5) {
            let params = IngestParams { min_points: 20, ..Default::default() };
            let mut csv = to_csv(&pings);
            for _ in 0..garbage {
                csv.extend_from_slice(b"x,notatime,1,2,3\n");
            }
            let (a, ca) = ingest_csv_chunked(csv.as_slice(), &PingSchema::default(), &params, 1024).unwrap();
            let (b, cb) = ingest_stream(csv.as_slice(), &PingSchema::default(), &params).unwrap();
            prop_assert_eq!(&a, &b);
            prop_assert_eq!(&ca, &cb);
            prop_assert!(ca.is_balanced());
            prop_assert_eq!(ca.rows_read as usize, pings.len() + garbage);
            prop_assert_eq!(ca.rows_skipped as usize, garbage);
            for t in &a {
                prop_assert!(t.len() >= params.min_points);
                prop_assert!(t.fixes.windows(2).all(|w| w[0].ts_ms < w[1].ts_ms));
            }
            // the thread count does not change anything
            let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
            let (c, cc) = pool.install(|| ingest_csv_chunked(csv.as_slice(), &PingSchema::default(), &params, 1024)).unwrap();
            prop_assert_eq!(&a, &c);
            prop_assert_eq!(&ca, &cc);
        }
    }
}
