//! Geometric primitives shared by every stage: WGS84 points, the local
//! 20 m grid, haversine distance and polygon containment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean Earth radius used everywhere, in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Edge length of a grid cell in meters.
pub const CELL_SIZE_M: f64 = 20.0;

// Local offsets are snapped to this resolution (1 µm) before flooring so a
// point placed exactly on a cell boundary does not fall back a cell through
// degree/radian round-off.
const SNAP_M: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        let p = GeoPoint { lat, lon };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(Error::InvalidCoordinate { lat, lon })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    fn check(self) -> Result<Self> {
        GeoPoint::new(self.lat, self.lon)
    }
}

/// Index of a 20 m × 20 m cell in the local frame of a grid anchor.
///
/// Ordering is lexicographic on `(ix, iy)`, which is the tie-break order used
/// by home and stop detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GridCell {
    pub ix: i64,
    pub iy: i64,
}

impl GridCell {
    pub fn new(ix: i64, iy: i64) -> Self {
        GridCell { ix, iy }
    }

    /// Chebyshev distance in cells.
    pub fn chebyshev(&self, other: &GridCell) -> i64 {
        (self.ix - other.ix).abs().max((self.iy - other.iy).abs())
    }

    /// True for the cell itself and its 8 neighbors.
    pub fn is_within_neighborhood(&self, other: &GridCell) -> bool {
        self.chebyshev(other) <= 1
    }
}

/// Equirectangular projection anchored at a reference point.
///
/// `x = R·Δlon·cos(lat_anchor)`, `y = R·Δlat`, angles in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    anchor: GeoPoint,
    cos_lat: f64,
}

impl LocalFrame {
    pub fn new(anchor: GeoPoint) -> Self {
        LocalFrame {
            anchor,
            cos_lat: anchor.lat.to_radians().cos(),
        }
    }

    pub fn anchor(&self) -> GeoPoint {
        self.anchor
    }

    pub fn to_xy(&self, p: GeoPoint) -> (f64, f64) {
        let x = EARTH_RADIUS_M * (p.lon - self.anchor.lon).to_radians() * self.cos_lat;
        let y = EARTH_RADIUS_M * (p.lat - self.anchor.lat).to_radians();
        (x, y)
    }

    pub fn from_xy(&self, x: f64, y: f64) -> GeoPoint {
        GeoPoint {
            lat: self.anchor.lat + (y / EARTH_RADIUS_M).to_degrees(),
            lon: self.anchor.lon + (x / (EARTH_RADIUS_M * self.cos_lat)).to_degrees(),
        }
    }
}

/// The study-region grid: a local frame plus the fixed cell size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    frame: LocalFrame,
}

impl Grid {
    pub fn new(anchor: GeoPoint) -> Self {
        Grid {
            frame: LocalFrame::new(anchor),
        }
    }

    pub fn anchor(&self) -> GeoPoint {
        self.frame.anchor
    }

    pub fn frame(&self) -> &LocalFrame {
        &self.frame
    }

    /// Cell containing `p`; cells are half-open `[k·20, (k+1)·20)` meters.
    pub fn cell_of(&self, p: GeoPoint) -> GridCell {
        let (x, y) = self.frame.to_xy(p);
        GridCell {
            ix: cell_index(x),
            iy: cell_index(y),
        }
    }

    /// Geographic position of the cell center.
    pub fn center(&self, cell: GridCell) -> GeoPoint {
        self.frame.from_xy(
            (cell.ix as f64 + 0.5) * CELL_SIZE_M,
            (cell.iy as f64 + 0.5) * CELL_SIZE_M,
        )
    }
}

fn cell_index(offset_m: f64) -> i64 {
    let snapped = (offset_m / SNAP_M).round() * SNAP_M;
    (snapped / CELL_SIZE_M).floor() as i64
}

/// Grid cell of `p` relative to `anchor`.
pub fn cell_of(p: GeoPoint, anchor: GeoPoint) -> Result<GridCell> {
    let p = p.check()?;
    let anchor = anchor.check()?;
    Ok(Grid::new(anchor).cell_of(p))
}

/// Haversine distance in meters.
pub fn great_circle_m(a: GeoPoint, b: GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = phi2 - phi1;
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.clamp(0.0, 1.0).sqrt().asin()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn empty() -> Self {
        BBox {
            min_lat: f64::INFINITY,
            min_lon: f64::INFINITY,
            max_lat: f64::NEG_INFINITY,
            max_lon: f64::NEG_INFINITY,
        }
    }

    pub fn extend(&mut self, p: GeoPoint) {
        self.min_lat = self.min_lat.min(p.lat);
        self.min_lon = self.min_lon.min(p.lon);
        self.max_lat = self.max_lat.max(p.lat);
        self.max_lon = self.max_lon.max(p.lon);
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            min_lat: self.min_lat.min(other.min_lat),
            min_lon: self.min_lon.min(other.min_lon),
            max_lat: self.max_lat.max(other.max_lat),
            max_lon: self.max_lon.max(other.max_lon),
        }
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        p.lat >= self.min_lat && p.lat <= self.max_lat && p.lon >= self.min_lon && p.lon <= self.max_lon
    }

    /// Box grown by `meters` on every side (conservative at the box's
    /// poleward edge).
    pub fn expanded_m(&self, meters: f64) -> BBox {
        let dlat = (meters / EARTH_RADIUS_M).to_degrees();
        let lat = self.min_lat.abs().max(self.max_lat.abs()).min(89.0);
        let dlon = dlat / lat.to_radians().cos();
        BBox {
            min_lat: self.min_lat - dlat,
            min_lon: self.min_lon - dlon,
            max_lat: self.max_lat + dlat,
            max_lon: self.max_lon + dlon,
        }
    }

    pub fn southwest(&self) -> GeoPoint {
        GeoPoint {
            lat: self.min_lat,
            lon: self.min_lon,
        }
    }
}

/// A polygon with optional holes. Rings are stored closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub id: String,
    exterior: Vec<GeoPoint>,
    interiors: Vec<Vec<GeoPoint>>,
    bbox: BBox,
}

impl Polygon {
    /// Builds a polygon, closing any open ring. Fails when a ring has fewer
    /// than 4 points once closed or carries an invalid coordinate.
    pub fn new(id: impl Into<String>, exterior: Vec<GeoPoint>, interiors: Vec<Vec<GeoPoint>>) -> Result<Self> {
        let id = id.into();
        let exterior = close_ring(&id, exterior)?;
        let interiors = interiors
            .into_iter()
            .map(|r| close_ring(&id, r))
            .collect::<Result<Vec<_>>>()?;
        let mut bbox = BBox::empty();
        for p in &exterior {
            bbox.extend(*p);
        }
        Ok(Polygon {
            id,
            exterior,
            interiors,
            bbox,
        })
    }

    /// Axis-aligned rectangle in degrees, counter-clockwise.
    pub fn rectangle(id: impl Into<String>, south: f64, west: f64, north: f64, east: f64) -> Result<Self> {
        let ring = vec![
            GeoPoint { lat: south, lon: west },
            GeoPoint { lat: south, lon: east },
            GeoPoint { lat: north, lon: east },
            GeoPoint { lat: north, lon: west },
            GeoPoint { lat: south, lon: west },
        ];
        Polygon::new(id, ring, Vec::new())
    }

    pub fn exterior(&self) -> &[GeoPoint] {
        &self.exterior
    }

    pub fn interiors(&self) -> &[Vec<GeoPoint>] {
        &self.interiors
    }

    pub fn bbox(&self) -> &BBox {
        &self.bbox
    }

    fn rings(&self) -> impl Iterator<Item = &[GeoPoint]> {
        std::iter::once(self.exterior.as_slice()).chain(self.interiors.iter().map(|r| r.as_slice()))
    }

    /// Even-odd containment over all rings. Points on an edge are inside.
    pub fn contains(&self, p: GeoPoint) -> bool {
        if !self.bbox.contains(p) {
            return false;
        }
        let mut inside = false;
        for ring in self.rings() {
            for w in ring.windows(2) {
                let (a, b) = (w[0], w[1]);
                if on_segment(p, a, b) {
                    return true;
                }
                if (a.lat > p.lat) != (b.lat > p.lat) {
                    let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
                    if p.lon < x {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    /// Area-weighted centroid of the exterior minus holes, computed in a
    /// local equirectangular frame anchored at the first exterior vertex.
    pub fn centroid(&self) -> Result<GeoPoint> {
        let frame = LocalFrame::new(self.exterior[0]);
        let (ext_area, ext_c) = ring_moments(&frame, &self.exterior);
        let mut area = ext_area.abs();
        let mut cx = ext_c.0 * ext_area.abs();
        let mut cy = ext_c.1 * ext_area.abs();
        for hole in &self.interiors {
            let (a, c) = ring_moments(&frame, hole);
            area -= a.abs();
            cx -= c.0 * a.abs();
            cy -= c.1 * a.abs();
        }
        if !(area > 0.0) || ext_area == 0.0 {
            return Err(Error::ZeroArea(self.id.clone()));
        }
        Ok(frame.from_xy(cx / area, cy / area))
    }

    /// Shortest distance from `p` to any ring edge, in meters.
    ///
    /// The closest point on each edge is located in an equirectangular frame
    /// centered on `p`; the returned distance is the haversine distance to it.
    pub fn distance_to_boundary_m(&self, p: GeoPoint) -> f64 {
        let frame = LocalFrame::new(p);
        let mut best = f64::INFINITY;
        for ring in self.rings() {
            for w in ring.windows(2) {
                let (ax, ay) = frame.to_xy(w[0]);
                let (bx, by) = frame.to_xy(w[1]);
                let (dx, dy) = (bx - ax, by - ay);
                let len2 = dx * dx + dy * dy;
                let t = if len2 > 0.0 {
                    (-(ax * dx + ay * dy) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let q = frame.from_xy(ax + t * dx, ay + t * dy);
                best = best.min(great_circle_m(p, q));
            }
        }
        best
    }
}

fn close_ring(id: &str, mut ring: Vec<GeoPoint>) -> Result<Vec<GeoPoint>> {
    for p in &ring {
        p.check()?;
    }
    if let (Some(first), Some(last)) = (ring.first().copied(), ring.last().copied()) {
        if first != last {
            ring.push(first);
        }
    }
    if ring.len() < 4 {
        return Err(Error::DegeneratePolygon(id.to_string()));
    }
    Ok(ring)
}

fn on_segment(p: GeoPoint, a: GeoPoint, b: GeoPoint) -> bool {
    const EPS: f64 = 1e-12;
    let cross = (b.lon - a.lon) * (p.lat - a.lat) - (b.lat - a.lat) * (p.lon - a.lon);
    let scale = (b.lon - a.lon).abs().max((b.lat - a.lat).abs()).max(1.0);
    if cross.abs() > EPS * scale {
        return false;
    }
    p.lon >= a.lon.min(b.lon) - EPS
        && p.lon <= a.lon.max(b.lon) + EPS
        && p.lat >= a.lat.min(b.lat) - EPS
        && p.lat <= a.lat.max(b.lat) + EPS
}

/// Signed shoelace area and centroid of one closed ring.
fn ring_moments(frame: &LocalFrame, ring: &[GeoPoint]) -> (f64, (f64, f64)) {
    let pts: Vec<(f64, f64)> = ring.iter().map(|p| frame.to_xy(*p)).collect();
    let mut a2 = 0.0;
    let mut cx = 0.0;
    let mut cy = 0.0;
    for w in pts.windows(2) {
        let (x0, y0) = w[0];
        let (x1, y1) = w[1];
        let cross = x0 * y1 - x1 * y0;
        a2 += cross;
        cx += (x0 + x1) * cross;
        cy += (y0 + y1) * cross;
    }
    let area = a2 / 2.0;
    if area == 0.0 {
        return (0.0, (0.0, 0.0));
    }
    (area, (cx / (6.0 * area), cy / (6.0 * area)))
}

/// Contains test as a free function over a polygon.
pub fn contains(poly: &Polygon, p: GeoPoint) -> bool {
    poly.contains(p)
}

pub fn centroid(poly: &Polygon) -> Result<GeoPoint> {
    poly.centroid()
}
