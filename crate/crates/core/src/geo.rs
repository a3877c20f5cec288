//! Great-circle distances, local planar offsets and ADM2 polygon handling.

use std::collections::{BTreeMap, BTreeSet};

use serde_json::Value;

use crate::error::{Error, Result};

/// Mean Earth radius in kilometres (IUGG).
pub const EARTH_RADIUS_KM: f64 = 6371.0088;

/// Default boundary-contact tolerance in degrees.
pub const ADJACENCY_TOLERANCE_DEG: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Haversine distance in kilometres.
pub fn haversine_km(a: LatLon, b: LatLon) -> f64 {
    let (p1, p2) = (a.lat.to_radians(), b.lat.to_radians());
    let dp = p2 - p1;
    let dl = (b.lon - a.lon).to_radians();
    let h = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Point reached by travelling `distance_km` from `origin` along the initial
/// bearing `bearing_deg` (clockwise from north) on the sphere.
pub fn destination(origin: LatLon, bearing_deg: f64, distance_km: f64) -> LatLon {
    let d = distance_km / EARTH_RADIUS_KM;
    let th = bearing_deg.to_radians();
    let p1 = origin.lat.to_radians();
    let l1 = origin.lon.to_radians();
    let p2 = (p1.sin() * d.cos() + p1.cos() * d.sin() * th.cos()).asin();
    let l2 = l1 + (th.sin() * d.sin() * p1.cos()).atan2(d.cos() - p1.sin() * p2.sin());
    let lon = (l2.to_degrees() + 540.0).rem_euclid(360.0) - 180.0;
    LatLon::new(p2.to_degrees(), lon)
}

/// East/north offsets (km) of `point` in the azimuthal-equidistant frame
/// centred on `center`.
pub fn local_offset_km(center: LatLon, point: LatLon) -> (f64, f64) {
    let p0 = center.lat.to_radians();
    let p = point.lat.to_radians();
    let dl = (point.lon - center.lon).to_radians();
    let cos_c = (p0.sin() * p.sin() + p0.cos() * p.cos() * dl.cos()).clamp(-1.0, 1.0);
    let c = cos_c.acos();
    let k = if c < 1e-12 { 1.0 } else { c / c.sin() };
    let x = EARTH_RADIUS_KM * k * p.cos() * dl.sin();
    let y = EARTH_RADIUS_KM * k * (p0.cos() * p.sin() - p0.sin() * p.cos() * dl.cos());
    (x, y)
}

/// Whether `point` falls in the axis-aligned square of side `side_km`
/// centred on `center` (edges inclusive).
pub fn in_local_square(center: LatLon, point: LatLon, side_km: f64) -> bool {
    let (x, y) = local_offset_km(center, point);
    let half = side_km / 2.0;
    x.abs() <= half && y.abs() <= half
}

/// A simple polygon: exterior ring followed by optional holes, each ring a
/// closed list of `(lon, lat)` vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub rings: Vec<Vec<(f64, f64)>>,
}

impl Polygon {
    pub fn new(id: &str, rings: Vec<Vec<(f64, f64)>>) -> Result<Self> {
        if rings.is_empty() {
            return Err(Error::Geometry {
                polygon: id.to_string(),
                reason: "no rings".into(),
            });
        }
        for (i, ring) in rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(Error::Geometry {
                    polygon: id.to_string(),
                    reason: format!("ring {i} has {} vertices, need at least 4", ring.len()),
                });
            }
            if ring.first() != ring.last() {
                return Err(Error::Geometry {
                    polygon: id.to_string(),
                    reason: format!("ring {i} is not closed"),
                });
            }
        }
        Ok(Self { rings })
    }

    /// Even-odd test over all rings, so holes are excluded.
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for w in ring.windows(2) {
                let (x1, y1) = w[0];
                let (x2, y2) = w[1];
                if (y1 > lat) != (y2 > lat) {
                    let xi = x1 + (lat - y1) * (x2 - x1) / (y2 - y1);
                    if lon < xi {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    fn segments(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.rings.iter().flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    fn bbox(&self) -> [f64; 4] {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        for &(x, y) in self.rings.iter().flatten() {
            b[0] = b[0].min(x);
            b[1] = b[1].min(y);
            b[2] = b[2].max(x);
            b[3] = b[3].max(y);
        }
        b
    }
}

/// An administrative area made of one or more polygons.
#[derive(Debug, Clone, PartialEq)]
pub struct AdminArea {
    pub id: String,
    pub country: String,
    pub parts: Vec<Polygon>,
}

impl AdminArea {
    pub fn contains(&self, p: LatLon) -> bool {
        self.parts.iter().any(|poly| poly.contains(p.lon, p.lat))
    }

    fn bbox(&self) -> [f64; 4] {
        self.parts.iter().map(Polygon::bbox).fold(
            [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY],
            |a, b| [a[0].min(b[0]), a[1].min(b[1]), a[2].max(b[2]), a[3].max(b[3])],
        )
    }
}

fn ring_from_json(id: &str, v: &Value) -> Result<Vec<(f64, f64)>> {
    let bad = |reason: &str| Error::Geometry {
        polygon: id.to_string(),
        reason: reason.to_string(),
    };
    v.as_array()
        .ok_or_else(|| bad("ring is not an array"))?
        .iter()
        .map(|pt| {
            let xy = pt.as_array().ok_or_else(|| bad("vertex is not an array"))?;
            match (xy.first().and_then(Value::as_f64), xy.get(1).and_then(Value::as_f64)) {
                (Some(x), Some(y)) => Ok((x, y)),
                _ => Err(bad("vertex lacks numeric coordinates")),
            }
        })
        .collect()
}

fn polygon_from_json(id: &str, v: &Value) -> Result<Polygon> {
    let rings = v
        .as_array()
        .ok_or_else(|| Error::Geometry {
            polygon: id.to_string(),
            reason: "polygon is not an array of rings".into(),
        })?
        .iter()
        .map(|r| ring_from_json(id, r))
        .collect::<Result<Vec<_>>>()?;
    Polygon::new(id, rings)
}

fn property_string(props: &Value, key: &str) -> Option<String> {
    match props.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Parses a GeoJSON `FeatureCollection` of ADM2 areas. Each feature needs
/// `adm2_id` and `country_code` properties and a `Polygon` or
/// `MultiPolygon` geometry.
pub fn parse_adm2_geojson(text: &str) -> Result<Vec<AdminArea>> {
    let root: Value = serde_json::from_str(text)?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Format {
            path: "geojson".into(),
            reason: "missing `features` array".into(),
        })?;
    let mut areas = Vec::with_capacity(features.len());
    for (i, f) in features.iter().enumerate() {
        let props = f.get("properties").cloned().unwrap_or(Value::Null);
        let id = property_string(&props, "adm2_id").ok_or_else(|| Error::Format {
            path: "geojson".into(),
            reason: format!("feature {i} lacks `adm2_id`"),
        })?;
        let country = property_string(&props, "country_code").unwrap_or_default();
        let geom = f.get("geometry").ok_or_else(|| Error::Geometry {
            polygon: id.clone(),
            reason: "missing geometry".into(),
        })?;
        let coords = geom.get("coordinates").unwrap_or(&Value::Null);
        let parts = match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => vec![polygon_from_json(&id, coords)?],
            Some("MultiPolygon") => coords
                .as_array()
                .ok_or_else(|| Error::Geometry {
                    polygon: id.clone(),
                    reason: "multipolygon is not an array".into(),
                })?
                .iter()
                .map(|p| polygon_from_json(&id, p))
                .collect::<Result<Vec<_>>>()?,
            other => {
                return Err(Error::Geometry {
                    polygon: id,
                    reason: format!("unsupported geometry type {other:?}"),
                })
            }
        };
        areas.push(AdminArea { id, country, parts });
    }
    Ok(areas)
}

/// Serialises areas back into a GeoJSON feature collection.
pub fn adm2_to_geojson(areas: &[AdminArea]) -> Value {
    let features: Vec<Value> = areas
        .iter()
        .map(|a| {
            let polys: Vec<Value> = a
                .parts
                .iter()
                .map(|p| {
                    Value::Array(
                        p.rings
                            .iter()
                            .map(|r| Value::Array(r.iter().map(|&(x, y)| serde_json::json!([x, y])).collect()))
                            .collect(),
                    )
                })
                .collect();
            serde_json::json!({
                "type": "Feature",
                "properties": {"adm2_id": a.id, "country_code": a.country},
                "geometry": {"type": "MultiPolygon", "coordinates": polys},
            })
        })
        .collect();
    serde_json::json!({"type": "FeatureCollection", "features": features})
}

/// ADM2 area containing `p`, if exactly one does.
pub fn locate_adm2(areas: &[AdminArea], p: LatLon) -> Option<&AdminArea> {
    let mut hits = areas.iter().filter(|a| a.contains(p));
    let first = hits.next()?;
    if hits.next().is_some() {
        None
    } else {
        Some(first)
    }
}

fn orient(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (qx, qy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - qx).powi(2) + (p.1 - qy).powi(2)).sqrt()
}

/// Planar distance between two segments (zero when they cross).
pub fn segment_distance(s: ((f64, f64), (f64, f64)), t: ((f64, f64), (f64, f64))) -> f64 {
    let (a, b) = s;
    let (c, d) = t;
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return 0.0;
    }
    point_segment_distance(a, c, d)
        .min(point_segment_distance(b, c, d))
        .min(point_segment_distance(c, a, b))
        .min(point_segment_distance(d, a, b))
}

/// Symmetric adjacency: two areas are neighbours when any pair of their
/// boundary segments comes within `tolerance` degrees. Corner contact counts.
pub fn adjacency(areas: &[AdminArea], tolerance: f64) -> BTreeMap<String, BTreeSet<String>> {
    let mut out: BTreeMap<String, BTreeSet<String>> = areas.iter().map(|a| (a.id.clone(), BTreeSet::new())).collect();
    let boxes: Vec<[f64; 4]> = areas.iter().map(AdminArea::bbox).collect();
    for i in 0..areas.len() {
        for j in (i + 1)..areas.len() {
            let (bi, bj) = (boxes[i], boxes[j]);
            if bi[0] > bj[2] + tolerance
                || bj[0] > bi[2] + tolerance
                || bi[1] > bj[3] + tolerance
                || bj[1] > bi[3] + tolerance
            {
                continue;
            }
            let touching = areas[i].parts.iter().any(|pi| {
                pi.segments().any(|si| {
                    areas[j]
                        .parts
                        .iter()
                        .any(|pj| pj.segments().any(|sj| segment_distance(si, sj) <= tolerance))
                })
            });
            if touching {
                out.get_mut(&areas[i].id).unwrap().insert(areas[j].id.clone());
                out.get_mut(&areas[j].id).unwrap().insert(areas[i].id.clone());
            }
        }
    }
    out
}
