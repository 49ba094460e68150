//! Minimal GeoJSON reading and writing over serde_json values. Only the
//! feature shapes this pipeline needs: LineString segments with
//! {id, frc, speed_kmh} plus a traffic property, Point events, and
//! Polygon covariate layers with numeric properties.

use std::collections::BTreeMap;
use std::path::Path;

use serde_json::{json, Map, Value};

use crashlattice::lattice::{EventPoint, PolygonCovariate, Segment};

use crate::error::CliError;

pub struct SegmentFeature {
    pub segment: Segment,
    pub traffic: Option<f64>,
}

fn load_features(path: &Path) -> Result<Vec<Map<String, Value>>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))?;
    let root: Value = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("{} is not valid JSON: {e}", path.display())))?;
    let features = root
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| {
            CliError::validation(format!(
                "{} is not a GeoJSON FeatureCollection",
                path.display()
            ))
        })?;
    features
        .iter()
        .map(|f| {
            f.as_object().cloned().ok_or_else(|| {
                CliError::validation(format!("{}: feature is not an object", path.display()))
            })
        })
        .collect()
}

fn coords_of(feature: &Map<String, Value>) -> Result<(&str, &Value), CliError> {
    let geometry = feature
        .get("geometry")
        .and_then(Value::as_object)
        .ok_or_else(|| CliError::validation("feature without geometry"))?;
    let gtype = geometry
        .get("type")
        .and_then(Value::as_str)
        .ok_or_else(|| CliError::validation("geometry without type"))?;
    let coords = geometry
        .get("coordinates")
        .ok_or_else(|| CliError::validation("geometry without coordinates"))?;
    Ok((gtype, coords))
}

fn parse_position(v: &Value) -> Result<[f64; 2], CliError> {
    let arr = v
        .as_array()
        .ok_or_else(|| CliError::validation("coordinate is not an array"))?;
    if arr.len() < 2 {
        return Err(CliError::validation("coordinate needs two entries"));
    }
    let x = arr[0]
        .as_f64()
        .ok_or_else(|| CliError::validation("coordinate x is not numeric"))?;
    let y = arr[1]
        .as_f64()
        .ok_or_else(|| CliError::validation("coordinate y is not numeric"))?;
    Ok([x, y])
}

fn parse_ring(v: &Value) -> Result<Vec<[f64; 2]>, CliError> {
    v.as_array()
        .ok_or_else(|| CliError::validation("ring is not an array"))?
        .iter()
        .map(parse_position)
        .collect()
}

/// Read the segment layer: LineString features with properties
/// {id, frc, speed_kmh} and optionally the traffic proxy.
pub fn read_segments(
    path: &Path,
    traffic_property: &str,
) -> Result<Vec<SegmentFeature>, CliError> {
    let mut out = Vec::new();
    for (idx, feature) in load_features(path)?.iter().enumerate() {
        let (gtype, coords) = coords_of(feature)?;
        if gtype != "LineString" {
            return Err(CliError::validation(format!(
                "segment feature {idx} has geometry {gtype}, expected LineString"
            )));
        }
        let polyline = parse_ring(coords)?;
        let props = feature
            .get("properties")
            .and_then(Value::as_object)
            .ok_or_else(|| {
                CliError::validation(format!("segment feature {idx} has no properties"))
            })?;
        let id = match props.get("id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => {
                return Err(CliError::validation(format!(
                    "segment feature {idx} is missing the id property"
                )))
            }
        };
        let frc = props
            .get("frc")
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .ok_or_else(|| {
                CliError::validation(format!("segment {id} is missing the frc property"))
            })?;
        let speed = props
            .get("speed_kmh")
            .and_then(Value::as_f64)
            .ok_or_else(|| {
                CliError::validation(format!("segment {id} is missing speed_kmh"))
            })?;
        let traffic = props.get(traffic_property).and_then(Value::as_f64);
        let segment = Segment::new(id, polyline, frc, speed)?;
        out.push(SegmentFeature { segment, traffic });
    }
    Ok(out)
}

/// Read events as Point features; the id falls back to the feature
/// index.
pub fn read_events(path: &Path) -> Result<Vec<EventPoint>, CliError> {
    let mut out = Vec::new();
    for (idx, feature) in load_features(path)?.iter().enumerate() {
        let (gtype, coords) = coords_of(feature)?;
        if gtype != "Point" {
            return Err(CliError::validation(format!(
                "event feature {idx} has geometry {gtype}, expected Point"
            )));
        }
        let position = parse_position(coords)?;
        let id = feature
            .get("properties")
            .and_then(Value::as_object)
            .and_then(|p| p.get("id"))
            .map(|v| match v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            })
            .unwrap_or_else(|| format!("event_{idx}"));
        out.push(EventPoint { id, position });
    }
    Ok(out)
}

/// Read the polygon covariate layer; every numeric property becomes an
/// attribute.
pub fn read_polygons(path: &Path) -> Result<Vec<PolygonCovariate>, CliError> {
    let mut out = Vec::new();
    for (idx, feature) in load_features(path)?.iter().enumerate() {
        let (gtype, coords) = coords_of(feature)?;
        if gtype != "Polygon" {
            return Err(CliError::validation(format!(
                "polygon feature {idx} has geometry {gtype}, expected Polygon"
            )));
        }
        let rings = coords
            .as_array()
            .ok_or_else(|| CliError::validation("polygon coordinates are not an array"))?
            .iter()
            .map(parse_ring)
            .collect::<Result<Vec<_>, _>>()?;
        let mut attributes = BTreeMap::new();
        if let Some(props) = feature.get("properties").and_then(Value::as_object) {
            for (k, v) in props {
                if let Some(num) = v.as_f64() {
                    attributes.insert(k.clone(), num);
                }
            }
        }
        out.push(PolygonCovariate { rings, attributes });
    }
    Ok(out)
}

/// Serialise a network as a LineString FeatureCollection with the
/// standard segment properties.
pub fn network_to_geojson(
    segments: &[Segment],
    traffic: Option<&[f64]>,
) -> Value {
    let features: Vec<Value> = segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut props = json!({
                "id": s.id,
                "frc": s.road_class,
                "speed_kmh": s.speed_limit_kmh,
            });
            if let Some(t) = traffic {
                props["traffic"] = json!(t[i]);
            }
            json!({
                "type": "Feature",
                "geometry": {
                    "type": "LineString",
                    "coordinates": s.polyline.iter().map(|p| json!([p[0], p[1]])).collect::<Vec<_>>(),
                },
                "properties": props,
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}
