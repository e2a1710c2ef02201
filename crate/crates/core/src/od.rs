//! Origin–destination flow aggregation and the tract-attribute join that
//! produces the modeling table.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{great_circle_m, GeoPoint};

/// The 32 social-vulnerability component variables, themes 1–4.
pub const SVI_VARIABLES: [&str; 32] = [
    // socioeconomic status
    "E_POV150", "E_UNEMP", "E_HBURD", "E_NOHSDP", "E_UNINSUR",
    "EP_POV150", "EP_UNEMP", "EP_HBURD", "EP_NOHSDP", "EP_UNINSUR",
    // household composition and disability
    "E_AGE65", "E_AGE17", "E_DISABL", "E_SNGPNT", "E_LIMENG",
    "EP_AGE65", "EP_AGE17", "EP_DISABL", "EP_SNGPNT", "EP_LIMENG",
    // minority status and language
    "E_MINRTY", "EP_MINRTY",
    // housing type and transportation
    "E_MUNIT", "E_MOBILE", "E_CROWD", "E_NOVEH", "E_GROUPQ",
    "EP_MUNIT", "EP_MOBILE", "EP_CROWD", "EP_NOVEH", "EP_GROUPQ",
];

pub const POPULATION_DENSITY: &str = "PDENSITY";
pub const ROAD_DENSITY: &str = "RDENSITY";
pub const DISTANCE: &str = "DISTANCE";
pub const ORIGIN_SUFFIX: &str = "_O";
pub const DEST_SUFFIX: &str = "_D";

const TRACT_ID: &str = "tract_id";
const CENTROID_LAT: &str = "CENTROID_LAT";
const CENTROID_LON: &str = "CENTROID_LON";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TractAttributes {
    pub tract_id: String,
    /// Keyed by the names in [`SVI_VARIABLES`].
    pub svi: BTreeMap<String, f64>,
    /// Persons per km².
    pub population_density: f64,
    /// Road km per km².
    pub road_density: f64,
    pub centroid: GeoPoint,
}

impl TractAttributes {
    /// Side-independent predictor values: SVI components and both densities.
    pub fn base_predictors(&self) -> impl Iterator<Item = (&str, f64)> {
        self.svi
            .iter()
            .map(|(k, v)| (k.as_str(), *v))
            .chain([(POPULATION_DENSITY, self.population_density), (ROAD_DENSITY, self.road_density)])
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, value: f64| Error::InvalidAttribute {
            tract: self.tract_id.clone(),
            field: field.to_string(),
            value,
        };
        for name in SVI_VARIABLES {
            let v = *self.svi.get(name).ok_or_else(|| Error::MissingColumn(name.to_string()))?;
            let ok = if name.starts_with("EP_") {
                (0.0..=100.0).contains(&v)
            } else {
                v >= 0.0
            };
            if !ok {
                return Err(bad(name, v));
            }
        }
        for (field, v) in [(POPULATION_DENSITY, self.population_density), (ROAD_DENSITY, self.road_density)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(bad(field, v));
            }
        }
        if !self.centroid.is_valid() {
            return Err(bad(CENTROID_LAT, self.centroid.lat));
        }
        Ok(())
    }
}

/// Reads tract attributes keyed by tract id. Extra columns are ignored and
/// unparseable values become NaN; rows are validated when joined.
pub fn read_tract_attributes_csv<R: Read>(input: R) -> Result<BTreeMap<String, TractAttributes>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let id_col = col(TRACT_ID)?;
    let svi_cols: Vec<(&str, usize)> = SVI_VARIABLES.iter().map(|n| col(n).map(|c| (*n, c))).collect::<Result<_>>()?;
    let (pd, rd, clat, clon) = (col(POPULATION_DENSITY)?, col(ROAD_DENSITY)?, col(CENTROID_LAT)?, col(CENTROID_LON)?);
    let mut out = BTreeMap::new();
    for rec in r.records() {
        let rec = rec?;
        let tract_id = rec.get(id_col).unwrap_or("").trim().to_string();
        let num = |c: usize| rec.get(c).and_then(|s| s.trim().parse::<f64>().ok()).unwrap_or(f64::NAN);
        let attrs = TractAttributes {
            svi: svi_cols.iter().map(|(name, c)| (name.to_string(), num(*c))).collect(),
            population_density: num(pd),
            road_density: num(rd),
            centroid: GeoPoint { lat: num(clat), lon: num(clon) },
            tract_id: tract_id.clone(),
        };
        out.insert(tract_id, attrs);
    }
    Ok(out)
}

pub fn write_tract_attributes_csv<'a, W: Write>(out: W, attrs: impl IntoIterator<Item = &'a TractAttributes>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![TRACT_ID];
    header.extend(SVI_VARIABLES);
    header.extend([POPULATION_DENSITY, ROAD_DENSITY, CENTROID_LAT, CENTROID_LON]);
    w.write_record(&header)?;
    for a in attrs {
        let mut row = vec![a.tract_id.clone()];
        row.extend(SVI_VARIABLES.iter().map(|n| a.svi.get(*n).copied().unwrap_or(f64::NAN).to_string()));
        row.extend([a.population_density, a.road_density, a.centroid.lat, a.centroid.lon].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Evacuee count for one ordered tract pair.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OdFlow {
    pub origin_tract: String,
    pub dest_tract: String,
    pub count: u64,
}

/// Counts `(device, home_tract, dest_tract)` triples per tract pair, sorted
/// by `(origin, dest)`. Intra-tract pairs are kept.
pub fn aggregate_flows<S: AsRef<str>>(destinations: &[(S, S, S)]) -> Vec<OdFlow> {
    let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
    for (_, o, d) in destinations {
        *counts.entry((o.as_ref(), d.as_ref())).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|((o, d), count)| OdFlow {
            origin_tract: o.to_string(),
            dest_tract: d.to_string(),
            count,
        })
        .collect()
}

pub fn write_od_csv<W: Write>(out: W, flows: &[OdFlow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["origin_tract", "dest_tract", "count"])?;
    for f in flows {
        w.write_record([f.origin_tract.as_str(), f.dest_tract.as_str(), &f.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_od_csv<R: Read>(input: R) -> Result<Vec<OdFlow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    for c in ["origin_tract", "dest_tract", "count"] {
        if !header.iter().any(|h| h == c) {
            return Err(Error::MissingColumn(c.into()));
        }
    }
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// One line per flow: `origin → dest = count`.
pub fn write_od_text<W: Write>(mut out: W, flows: &[OdFlow]) -> Result<()> {
    for f in flows {
        writeln!(out, "{} \u{2192} {} = {}", f.origin_tract, f.dest_tract, f.count)?;
    }
    Ok(())
}

/// A flow joined with suffixed origin/destination predictors and DISTANCE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub origin_tract: String,
    pub dest_tract: String,
    pub response: f64,
    pub predictors: BTreeMap<String, f64>,
}

pub fn join_attributes(flows: &[OdFlow], attrs: &BTreeMap<String, TractAttributes>) -> Result<Vec<DesignRow>> {
    let missing: BTreeSet<&str> = flows
        .iter()
        .flat_map(|f| [f.origin_tract.as_str(), f.dest_tract.as_str()])
        .filter(|t| !attrs.contains_key(*t))
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingTracts(missing.into_iter().map(str::to_string).collect()));
    }
    flows
        .iter()
        .map(|f| {
            let o = &attrs[&f.origin_tract];
            let d = &attrs[&f.dest_tract];
            let mut predictors = BTreeMap::new();
            for (side, suffix) in [(o, ORIGIN_SUFFIX), (d, DEST_SUFFIX)] {
                side.validate()?;
                for (name, v) in side.base_predictors() {
                    predictors.insert(format!("{name}{suffix}"), v);
                }
            }
            predictors.insert(DISTANCE.to_string(), great_circle_m(o.centroid, d.centroid));
            Ok(DesignRow {
                origin_tract: f.origin_tract.clone(),
                dest_tract: f.dest_tract.clone(),
                response: f.count as f64,
                predictors,
            })
        })
        .collect()
}

const RESPONSE_COLUMN: &str = "T";

/// Writes rows with columns `origin_tract,dest_tract,T,<predictors…>`; all
/// rows must share the first row's predictor names.
pub fn write_design_csv<W: Write>(out: W, rows: &[DesignRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let names: Vec<&String> = rows.first().map(|r| r.predictors.keys().collect()).unwrap_or_default();
    let mut header = vec!["origin_tract", "dest_tract", RESPONSE_COLUMN];
    header.extend(names.iter().map(|s| s.as_str()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.origin_tract.clone(), r.dest_tract.clone(), r.response.to_string()];
        for n in &names {
            let v = r
                .predictors
                .get(*n)
                .ok_or_else(|| Error::ColumnMismatch(format!("row {}→{} lacks {n}", r.origin_tract, r.dest_tract)))?;
            rec.push(v.to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_design_csv<R: Read>(input: R) -> Result<Vec<DesignRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let names: Vec<String> = header.iter().map(str::to_string).collect();
    for (i, c) in ["origin_tract", "dest_tract", RESPONSE_COLUMN].iter().enumerate() {
        if names.get(i).map(String::as_str) != Some(*c) {
            return Err(Error::MissingColumn(c.to_string()));
        }
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse::<f64>().ok())
                .ok_or_else(|| Error::InvalidAttribute {
                    tract: rec.get(0).unwrap_or("").to_string(),
                    field: names[i].clone(),
                    value: f64::NAN,
                })
        };
        let mut predictors = BTreeMap::new();
        for (i, name) in names.iter().enumerate().skip(3) {
            predictors.insert(name.clone(), num(i)?);
        }
        out.push(DesignRow {
            origin_tract: rec.get(0).unwrap_or("").to_string(),
            dest_tract: rec.get(1).unwrap_or("").to_string(),
            response: num(2)?,
            predictors,
        });
    }
    Ok(out)
}

/// County FIPS prefix of an 11-digit tract id.
pub fn county_of(tract_id: &str) -> &str {
    tract_id.get(..5).unwrap_or(tract_id)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DestinationShare {
    pub dest_county: String,
    pub evacuees: u64,
    pub share: f64,
    pub same_as_origin: bool,
}

/// Share of evacuees by destination county, largest first. `same_as_origin`
/// marks counties that are the origin county of every flow (single-county
/// studies).
pub fn destination_shares(flows: &[OdFlow]) -> Vec<DestinationShare> {
    let total: u64 = flows.iter().map(|f| f.count).sum();
    let origins: BTreeSet<&str> = flows.iter().map(|f| county_of(&f.origin_tract)).collect();
    let mut by_county: BTreeMap<&str, u64> = BTreeMap::new();
    for f in flows {
        *by_county.entry(county_of(&f.dest_tract)).or_default() += f.count;
    }
    let mut out: Vec<DestinationShare> = by_county
        .into_iter()
        .map(|(c, n)| DestinationShare {
            dest_county: c.to_string(),
            evacuees: n,
            share: if total > 0 { n as f64 / total as f64 } else { 0.0 },
            same_as_origin: origins.len() == 1 && origins.contains(c),
        })
        .collect();
    out.sort_by(|a, b| b.evacuees.cmp(&a.evacuees).then_with(|| a.dest_county.cmp(&b.dest_county)));
    out
}

/// Fraction of evacuees whose destination tract lies in their origin county.
pub fn same_county_share(flows: &[OdFlow]) -> Option<f64> {
    let total: u64 = flows.iter().map(|f| f.count).sum();
    let same: u64 = flows
        .iter()
        .filter(|f| county_of(&f.origin_tract) == county_of(&f.dest_tract))
        .map(|f| f.count)
        .sum();
    (total > 0).then(|| same as f64 / total as f64)
}

pub fn write_shares_csv<W: Write>(out: W, shares: &[DestinationShare]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dest_county", "evacuees", "share", "same_as_origin"])?;
    for s in shares {
        w.write_record([s.dest_county.clone(), s.evacuees.to_string(), format!("{:.6}", s.share), s.same_as_origin.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
