//! GeoJSON polygon layers and point-in-polygon lookup.

use std::io::{Read, Write};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::geo::{BBox, GeoPoint, Polygon};

/// One GeoJSON feature; a MultiPolygon yields several polygons sharing `id`.
#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub id: String,
    pub properties: Map<String, Value>,
    pub polygons: Vec<Polygon>,
}

fn value_as_id(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn ring(v: &Value) -> Result<Vec<GeoPoint>> {
    let arr = v.as_array().ok_or_else(|| Error::GeoJson("ring is not an array".into()))?;
    arr.iter()
        .map(|pos| {
            let lon = pos.get(0).and_then(Value::as_f64);
            let lat = pos.get(1).and_then(Value::as_f64);
            match (lat, lon) {
                (Some(lat), Some(lon)) => GeoPoint::new(lat, lon),
                _ => Err(Error::GeoJson("position must be [lon, lat]".into())),
            }
        })
        .collect()
}

fn polygon(id: &str, rings: &Value) -> Result<Polygon> {
    let rings = rings
        .as_array()
        .ok_or_else(|| Error::GeoJson("polygon coordinates must be an array of rings".into()))?;
    let mut iter = rings.iter();
    let exterior = ring(iter.next().ok_or_else(|| Error::GeoJson(format!("polygon {id} has no rings")))?)?;
    let interiors = iter.map(ring).collect::<Result<Vec<_>>>()?;
    Polygon::new(id, exterior, interiors)
}

/// Reads a FeatureCollection. The id comes from `properties[id_field]`,
/// falling back to the feature's top-level `id`.
pub fn read_features<R: Read>(input: R, id_field: &str) -> Result<Vec<Feature>> {
    let doc: Value = serde_json::from_reader(input)?;
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::GeoJson("expected a FeatureCollection".into()))?;
    let mut out = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let properties = f.get("properties").and_then(Value::as_object).cloned().unwrap_or_default();
        let id = properties
            .get(id_field)
            .and_then(value_as_id)
            .or_else(|| f.get("id").and_then(value_as_id))
            .ok_or_else(|| Error::GeoJson(format!("feature {i} has no `{id_field}`")))?;
        let geom = f.get("geometry").ok_or_else(|| Error::GeoJson(format!("feature {id} has no geometry")))?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let polygons = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![polygon(&id, coords)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| Error::GeoJson(format!("feature {id}: bad MultiPolygon")))?
                .iter()
                .map(|p| polygon(&id, p))
                .collect::<Result<_>>()?,
            other => return Err(Error::GeoJson(format!("feature {id}: unsupported geometry {other:?}"))),
        };
        out.push(Feature { id, properties, polygons });
    }
    Ok(out)
}

fn ring_json(ring: &[GeoPoint]) -> Value {
    Value::Array(ring.iter().map(|p| json!([p.lon, p.lat])).collect())
}

fn polygon_json(p: &Polygon) -> Value {
    let mut rings = vec![ring_json(p.exterior())];
    rings.extend(p.interiors().iter().map(|r| ring_json(r)));
    Value::Array(rings)
}

pub fn write_features<W: Write>(out: W, features: &[Feature], id_field: &str) -> Result<()> {
    let feats: Vec<Value> = features
        .iter()
        .map(|f| {
            let mut props = f.properties.clone();
            props.insert(id_field.to_string(), Value::String(f.id.clone()));
            let geometry = if f.polygons.len() == 1 {
                json!({"type": "Polygon", "coordinates": polygon_json(&f.polygons[0])})
            } else {
                json!({"type": "MultiPolygon", "coordinates": f.polygons.iter().map(polygon_json).collect::<Vec<_>>()})
            };
            json!({"type": "Feature", "properties": props, "geometry": geometry})
        })
        .collect();
    serde_json::to_writer(out, &json!({"type": "FeatureCollection", "features": feats}))?;
    Ok(())
}

/// Polygons carrying a payload, searched linearly behind a bounding-box
/// pre-filter. The first polygon in insertion order wins on overlap.
#[derive(Debug, Clone)]
pub struct PolygonLayer<T> {
    entries: Vec<(Polygon, T)>,
    bbox: BBox,
}

impl<T> PolygonLayer<T> {
    pub fn new(entries: Vec<(Polygon, T)>) -> Self {
        let bbox = entries.iter().fold(BBox::empty(), |b, (p, _)| b.union(p.bbox()));
        PolygonLayer { entries, bbox }
    }

    pub fn locate(&self, p: GeoPoint) -> Option<(&Polygon, &T)> {
        if !self.bbox.contains(p) {
            return None;
        }
        self.entries.iter().find(|(poly, _)| poly.contains(p)).map(|(poly, t)| (poly, t))
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &(Polygon, T)> {
        self.entries.iter()
    }
}

/// Census-tract geometry indexed for point lookup.
#[derive(Debug, Clone)]
pub struct TractIndex {
    layer: PolygonLayer<()>,
}

impl TractIndex {
    /// Tracts are searched in id order so overlapping geometry resolves
    /// deterministically.
    pub fn new(mut polygons: Vec<Polygon>) -> Self {
        polygons.sort_by(|a, b| a.id.cmp(&b.id));
        TractIndex {
            layer: PolygonLayer::new(polygons.into_iter().map(|p| (p, ())).collect()),
        }
    }

    pub fn from_features(features: Vec<Feature>) -> Self {
        TractIndex::new(features.into_iter().flat_map(|f| f.polygons).collect())
    }

    pub fn tract_of(&self, p: GeoPoint) -> Option<&str> {
        self.layer.locate(p).map(|(poly, _)| poly.id.as_str())
    }

    pub fn bbox(&self) -> &BBox {
        self.layer.bbox()
    }

    pub fn polygons(&self) -> impl Iterator<Item = &Polygon> {
        self.layer.iter().map(|(p, _)| p)
    }
}
