//! ingest: GeoJSON layers -> dataset bundle.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::Serialize;

use crashlattice::lattice::{
    build_adjacency, count_events, overlay_covariates, prune_components, snap_events,
    PolygonCovariateLayer, PrunePolicy, SegmentNetwork,
};
use crashlattice::model::{Column, Dataset, DesignMatrix, Standardization};

use crate::bundle::{sha256_file, write_bundle, write_json};
use crate::config::PrunePolicyArg;
use crate::error::CliError;
use crate::geojson;

pub struct IngestArgs {
    pub network: PathBuf,
    pub events: PathBuf,
    pub polygons: PathBuf,
    pub out: PathBuf,
    pub traffic_property: String,
    pub snap_tolerance_m: f64,
    pub endpoint_tolerance_m: f64,
    pub prune: PrunePolicyArg,
    pub export_structure: Option<PathBuf>,
}

#[derive(Serialize)]
struct LengthStats {
    min_m: f64,
    mean_m: f64,
    max_m: f64,
    total_m: f64,
}

#[derive(Serialize)]
struct IngestReport {
    n_segments_raw: usize,
    n_components_raw: usize,
    n_segments: usize,
    n_components: usize,
    segments_pruned: usize,
    components_pruned: usize,
    segments_dropped_no_polygon: usize,
    events_total: usize,
    events_assigned: usize,
    events_dropped_beyond_tolerance: usize,
    snap_tolerance_m: f64,
    length_stats: LengthStats,
}

#[derive(Serialize)]
struct IngestManifest {
    command: &'static str,
    input_hashes: BTreeMap<String, String>,
    traffic_property: String,
    snap_tolerance_m: f64,
    endpoint_tolerance_m: f64,
    prune: String,
}

pub fn run(args: &IngestArgs) -> Result<(), CliError> {
    let features = geojson::read_segments(&args.network, &args.traffic_property)?;
    if features.is_empty() {
        return Err(CliError::validation("segment layer is empty"));
    }
    reject_geographic_coordinates(&features)?;

    let mut traffic_by_id: BTreeMap<String, f64> = BTreeMap::new();
    for f in &features {
        let t = f.traffic.ok_or_else(|| {
            CliError::validation(format!(
                "segment {} is missing the {:?} property (the proxy covariate)",
                f.segment.id, args.traffic_property
            ))
        })?;
        traffic_by_id.insert(f.segment.id.clone(), t);
    }
    let segments: Vec<_> = features.into_iter().map(|f| f.segment).collect();
    let raw = build_adjacency(segments, args.endpoint_tolerance_m)?;
    let (n_segments_raw, n_components_raw) = (raw.len(), raw.n_components());

    let policy = match args.prune {
        PrunePolicyArg::KeepLargest => PrunePolicy::KeepLargest,
        PrunePolicyArg::MinSize(k) => PrunePolicy::MinSize(k),
    };
    let (pruned, prune_report) = prune_components(&raw, policy)?;

    // polygon overlay; segments outside every polygon are dropped
    let polygons = PolygonCovariateLayer::new(geojson::read_polygons(&args.polygons)?)?;
    let overlay = overlay_covariates(&pruned, &polygons);
    let missing = overlay.missing();
    let network = if missing.is_empty() {
        pruned.clone()
    } else {
        drop_segments(&pruned, &missing)?
    };
    let kept_polygons: Vec<usize> = overlay
        .polygon_index
        .iter()
        .filter_map(|p| *p)
        .collect();
    debug_assert_eq!(kept_polygons.len(), network.len());

    let events = geojson::read_events(&args.events)?;
    let assignments = snap_events(&events, &network, args.snap_tolerance_m);
    let y = count_events(&assignments, &network);
    let assigned = assignments.iter().filter(|a| a.segment_index.is_some()).count();

    // covariates: road-class dummies (reference = lowest class), speed
    // limit, and the polygon attributes; the proxy is standardised like
    // every numeric covariate
    let n = network.len();
    let mut classes: Vec<String> = network
        .segments()
        .iter()
        .map(|s| s.road_class.clone())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    classes.sort();
    let mut z_cols: Vec<Column> = Vec::new();
    for class in classes.iter().skip(1) {
        let values: Vec<f64> = network
            .segments()
            .iter()
            .map(|s| if &s.road_class == class { 1.0 } else { 0.0 })
            .collect();
        z_cols.push(Column::dummy(format!("frc_{class}"), values));
    }
    let speeds: Vec<f64> = network.segments().iter().map(|s| s.speed_limit_kmh).collect();
    z_cols.push(Column::numeric_standardized("speed_kmh", &speeds));
    let n_ztilde = z_cols.len(); // road-class dummies + speed feed the exposure model
    if let Some(first) = polygons.polygons.first() {
        for name in first.attributes.keys() {
            let values: Vec<f64> = (0..n)
                .map(|i| {
                    let p = kept_polygons[i];
                    *polygons.polygons[p]
                        .attributes
                        .get(name)
                        .unwrap_or(&f64::NAN)
                })
                .collect();
            if values.iter().any(|v| v.is_nan()) {
                return Err(CliError::validation(format!(
                    "polygon attribute {name:?} is not present on every polygon"
                )));
            }
            z_cols.push(Column::numeric_standardized(name.clone(), &values));
        }
    }
    let zt_cols: Vec<Column> = z_cols[..n_ztilde].to_vec();

    let raw_traffic: Vec<f64> = network
        .segments()
        .iter()
        .map(|s| traffic_by_id[&s.id])
        .collect();
    let (w, w_mean, w_sd) = crashlattice::model::standardize(&raw_traffic);
    let e: Vec<f64> = network.segments().iter().map(|s| s.length_m).collect();
    let data = Dataset::new(
        y,
        e,
        w,
        args.traffic_property.clone(),
        Standardization {
            mean: w_mean,
            sd: w_sd,
            standardized: true,
        },
        DesignMatrix::from_columns(z_cols)?,
        DesignMatrix::from_columns(zt_cols)?,
    )?;

    std::fs::create_dir_all(&args.out)?;
    let segment_ids: Vec<String> =
        network.segments().iter().map(|s| s.id.clone()).collect();
    let lengths: Vec<f64> = network.segments().iter().map(|s| s.length_m).collect();
    let edges: Vec<(usize, usize)> = network.edges().collect();
    write_bundle(&args.out, &segment_ids, &lengths, &data, &edges)?;

    // event assignment table
    let mut asg = csv::Writer::from_path(args.out.join("assignments.csv"))?;
    asg.write_record(["event_id", "segment_id", "distance_m"])?;
    for a in &assignments {
        let seg = a
            .segment_index
            .map(|i| segment_ids[i].clone())
            .unwrap_or_default();
        asg.write_record([a.event_id.as_str(), &seg, &a.snap_distance_m.to_string()])?;
    }
    asg.flush()?;

    // geometry echo of the final lattice, for choropleth export
    let gj = geojson::network_to_geojson(network.segments(), Some(&raw_traffic));
    write_json(&args.out.join("network.geojson"), &gj)?;

    if let Some(path) = &args.export_structure {
        let icar = crashlattice::gmrf::IcarStructure::from_network(&network)?;
        let mut file = std::fs::File::create(path)?;
        icar.structure_matrix()
            .write_matrix_market(&mut file)
            .map_err(CliError::from)?;
    }

    let report = IngestReport {
        n_segments_raw,
        n_components_raw,
        n_segments: network.len(),
        n_components: network.n_components(),
        segments_pruned: prune_report.removed_segments,
        components_pruned: prune_report.removed_components,
        segments_dropped_no_polygon: missing.len(),
        events_total: events.len(),
        events_assigned: assigned,
        events_dropped_beyond_tolerance: events.len() - assigned,
        snap_tolerance_m: args.snap_tolerance_m,
        length_stats: length_stats(&network),
    };
    write_json(&args.out.join("report.json"), &report)?;

    let mut input_hashes = BTreeMap::new();
    for (label, path) in [
        ("network", &args.network),
        ("events", &args.events),
        ("polygons", &args.polygons),
    ] {
        input_hashes.insert(label.to_string(), sha256_file(path)?);
    }
    let manifest = IngestManifest {
        command: "ingest",
        input_hashes,
        traffic_property: args.traffic_property.clone(),
        snap_tolerance_m: args.snap_tolerance_m,
        endpoint_tolerance_m: args.endpoint_tolerance_m,
        prune: match args.prune {
            PrunePolicyArg::KeepLargest => "keep-largest".to_string(),
            PrunePolicyArg::MinSize(k) => format!("min-size={k}"),
        },
    };
    write_json(&args.out.join("manifest.json"), &manifest)?;

    println!(
        "ingested {} segments ({} components), {} events assigned, {} dropped (>{} m)",
        network.len(),
        network.n_components(),
        assigned,
        events.len() - assigned,
        args.snap_tolerance_m
    );
    Ok(())
}

fn length_stats(network: &SegmentNetwork) -> LengthStats {
    let lengths: Vec<f64> = network.segments().iter().map(|s| s.length_m).collect();
    let total: f64 = lengths.iter().sum();
    LengthStats {
        min_m: lengths.iter().copied().fold(f64::INFINITY, f64::min),
        mean_m: total / lengths.len() as f64,
        max_m: lengths.iter().copied().fold(0.0, f64::max),
        total_m: total,
    }
}

/// Refuse layers whose every coordinate fits in the longitude/latitude
/// box: the pipeline needs projected coordinates in meters.
fn reject_geographic_coordinates(features: &[geojson::SegmentFeature]) -> Result<(), CliError> {
    let all_in_lonlat_box = features.iter().all(|f| {
        f.segment
            .polyline
            .iter()
            .all(|p| p[0].abs() <= 180.0 && p[1].abs() <= 90.0)
    });
    if all_in_lonlat_box {
        return Err(CliError::validation(
            "projected coordinates required: the segment layer looks like longitude/latitude",
        ));
    }
    Ok(())
}

/// Remove the listed segment indices and rebuild the network.
fn drop_segments(
    network: &SegmentNetwork,
    drop: &[usize],
) -> Result<SegmentNetwork, CliError> {
    let mut keep = vec![true; network.len()];
    for &i in drop {
        keep[i] = false;
    }
    let mut old_to_new = vec![usize::MAX; network.len()];
    let mut segments = Vec::new();
    for (i, s) in network.segments().iter().enumerate() {
        if keep[i] {
            old_to_new[i] = segments.len();
            segments.push(s.clone());
        }
    }
    if segments.is_empty() {
        return Err(CliError::validation(
            "every segment falls outside the polygon layer",
        ));
    }
    let edges: Vec<(usize, usize)> = network
        .edges()
        .filter(|&(i, j)| keep[i] && keep[j])
        .map(|(i, j)| (old_to_new[i], old_to_new[j]))
        .collect();
    SegmentNetwork::from_parts(segments, edges).map_err(CliError::from)
}
