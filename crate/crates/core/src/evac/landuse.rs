use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::geo::GeoPoint;
use crate::spatial::{Feature, PolygonLayer};

/// Level-1 land-use code treated as residential ("Urban and Built-Up").
pub const RESIDENTIAL_CODE: i64 = 1000;

/// Parcel polygons carrying their level-1 land-use code.
pub type ParcelLayer = PolygonLayer<i64>;

impl ParcelLayer {
    /// Builds a parcel layer from features with an integer `class_field`
    /// property (numbers or numeric strings).
    pub fn from_features(features: Vec<Feature>, class_field: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for f in features {
            let code = match f.properties.get(class_field) {
                Some(Value::Number(n)) => n.as_i64(),
                Some(Value::String(s)) => s.trim().parse().ok(),
                _ => None,
            }
            .ok_or_else(|| Error::GeoJson(format!("parcel {} has no integer `{class_field}`", f.id)))?;
            entries.extend(f.polygons.into_iter().map(|p| (p, code)));
        }
        Ok(PolygonLayer::new(entries))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRole {
    Home,
    Destination,
}

impl fmt::Display for PointRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PointRole::Home => "home",
            PointRole::Destination => "destination",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LanduseCategory {
    Residential,
    NonResidential,
    Unmatched,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoleSummary {
    pub total: usize,
    pub residential: usize,
    pub non_residential: usize,
    pub unmatched: usize,
}

impl RoleSummary {
    /// Residential points over all points of the role, unmatched included.
    pub fn residential_share(&self) -> Option<f64> {
        (self.total > 0).then(|| self.residential as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LanduseSummary {
    pub roles: BTreeMap<PointRole, RoleSummary>,
}

impl LanduseSummary {
    pub fn role(&self, role: PointRole) -> RoleSummary {
        self.roles.get(&role).cloned().unwrap_or_default()
    }
}

pub fn categorize(parcels: &ParcelLayer, p: GeoPoint) -> LanduseCategory {
    match parcels.locate(p) {
        Some((_, &RESIDENTIAL_CODE)) => LanduseCategory::Residential,
        Some(_) => LanduseCategory::NonResidential,
        None => LanduseCategory::Unmatched,
    }
}

/// Joins each point to its parcel and tallies categories per role.
pub fn landuse_validate(points: &[(String, PointRole, GeoPoint)], parcels: &ParcelLayer) -> LanduseSummary {
    let mut summary = LanduseSummary::default();
    for (_, role, p) in points {
        let s = summary.roles.entry(*role).or_default();
        s.total += 1;
        match categorize(parcels, *p) {
            LanduseCategory::Residential => s.residential += 1,
            LanduseCategory::NonResidential => s.non_residential += 1,
            LanduseCategory::Unmatched => s.unmatched += 1,
        }
    }
    summary
}

pub fn write_landuse_csv<W: Write>(out: W, summary: &LanduseSummary) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["role", "total", "residential", "non_residential", "unmatched", "residential_share"])?;
    for role in [PointRole::Home, PointRole::Destination] {
        let s = summary.role(role);
        w.write_record([
            role.to_string(),
            s.total.to_string(),
            s.residential.to_string(),
            s.non_residential.to_string(),
            s.unmatched.to_string(),
            s.residential_share().map(|v| format!("{v:.6}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::Polygon;

    fn layer() -> ParcelLayer {
        PolygonLayer::new(vec![
            (Polygon::rectangle("r", 0.0, 0.0, 1.0, 1.0).unwrap(), 1000),
            (Polygon::rectangle("w", 0.0, 2.0, 1.0, 3.0).unwrap(), 5000),
        ])
    }

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    #[test]
    fn categories() {
        let l = layer();
        assert_eq!(categorize(&l, pt(0.5, 0.5)), LanduseCategory::Residential);
        assert_eq!(categorize(&l, pt(0.5, 2.5)), LanduseCategory::NonResidential);
        assert_eq!(categorize(&l, pt(5.0, 5.0)), LanduseCategory::Unmatched);
    }

    #[test]
    fn four_of_five_homes_residential() {
        let l = layer();
        let mut pts: Vec<(String, PointRole, GeoPoint)> =
            (0..4).map(|i| (format!("d{i}"), PointRole::Home, pt(0.1 + 0.2 * i as f64, 0.5))).collect();
        pts.push(("d4".into(), PointRole::Home, pt(0.5, 2.5)));
        pts.push(("d0".into(), PointRole::Destination, pt(9.0, 9.0)));
        let s = landuse_validate(&pts, &l);
        assert_eq!(s.role(PointRole::Home).residential_share(), Some(0.8));
        let d = s.role(PointRole::Destination);
        assert_eq!((d.total, d.unmatched), (1, 1));
        assert_eq!(d.residential_share(), Some(0.0));
    }

    #[test]
    fn class_codes_from_features() {
        let fc = r#"{"type":"FeatureCollection","features":[
          {"type":"Feature","properties":{"id":"p1","LEVEL1_LAN":"1000"},
           "geometry":{"type":"Polygon","coordinates":[[[0,0],[1,0],[1,1],[0,1],[0,0]]]}}]}"#;
        let feats = crate::spatial::read_features(fc.as_bytes(), "id").unwrap();
        let l = ParcelLayer::from_features(feats, "LEVEL1_LAN").unwrap();
        assert_eq!(categorize(&l, pt(0.5, 0.5)), LanduseCategory::Residential);
    }
}
