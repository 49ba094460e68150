//! Network-lattice construction from geospatial inputs.
//!
//! Road segments become lattice sites; two segments are neighbours when
//! they share an endpoint (which keeps bridges and underpasses apart
//! without any elevation logic). Events are snapped to the nearest
//! segment within a cutoff, and polygon-level covariates are transferred
//! to segments by a largest-clipped-length overlay.

pub mod geometry;

use std::collections::BTreeMap;

use thiserror::Error;

use geometry::{clipped_length, polyline_length, project_on_polyline, Point};

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("duplicate segment id: {id}")]
    DuplicateSegmentId { id: String },
    #[error("segment {id}: polyline needs at least 2 points")]
    PolylineTooShort { id: String },
    #[error("segment {id}: non-finite coordinate")]
    NonFiniteCoordinate { id: String },
    #[error("segment {id}: degenerate geometry with zero length")]
    ZeroLength { id: String },
    #[error("adjacency edge ({i}, {j}) invalid for {n} segments")]
    InvalidEdge { i: usize, j: usize, n: usize },
    #[error("pruning removed every component")]
    EmptyAfterPrune,
    #[error("polygon {index}: ring {ring} is not closed")]
    RingNotClosed { index: usize, ring: usize },
    #[error("polygon {index}: attribute {name:?} is not finite")]
    NonFiniteAttribute { index: usize, name: String },
}

/// A road segment in a projected plane (meters).
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub id: String,
    pub polyline: Vec<Point>,
    pub length_m: f64,
    pub road_class: String,
    pub speed_limit_kmh: f64,
}

impl Segment {
    /// Build a segment, computing its length from the polyline.
    pub fn new(
        id: impl Into<String>,
        polyline: Vec<Point>,
        road_class: impl Into<String>,
        speed_limit_kmh: f64,
    ) -> Result<Self, LatticeError> {
        let id = id.into();
        if polyline.len() < 2 {
            return Err(LatticeError::PolylineTooShort { id });
        }
        if polyline
            .iter()
            .any(|p| !p[0].is_finite() || !p[1].is_finite())
        {
            return Err(LatticeError::NonFiniteCoordinate { id });
        }
        let length_m = polyline_length(&polyline);
        if length_m <= 0.0 {
            return Err(LatticeError::ZeroLength { id });
        }
        Ok(Self {
            id,
            polyline,
            length_m,
            road_class: road_class.into(),
            speed_limit_kmh,
        })
    }

    fn endpoints(&self) -> (Point, Point) {
        (self.polyline[0], *self.polyline.last().unwrap())
    }
}

/// The lattice: segments, their symmetric adjacency, and connected
/// components.
#[derive(Debug, Clone)]
pub struct SegmentNetwork {
    segments: Vec<Segment>,
    /// Edges (i, j) with i < j, sorted, deduplicated.
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
    component_label: Vec<usize>,
    n_components: usize,
}

impl SegmentNetwork {
    /// Assemble a network from segments and an explicit adjacency list.
    /// Edges are normalised to i < j; self-loops are rejected. Component
    /// labels are computed by connected traversal.
    pub fn from_parts(
        segments: Vec<Segment>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, LatticeError> {
        let n = segments.len();
        let mut seen = BTreeMap::new();
        for (idx, s) in segments.iter().enumerate() {
            if seen.insert(s.id.clone(), idx).is_some() {
                return Err(LatticeError::DuplicateSegmentId { id: s.id.clone() });
            }
        }
        let mut normalized: Vec<(usize, usize)> = Vec::new();
        for (i, j) in edges {
            if i == j || i >= n || j >= n {
                return Err(LatticeError::InvalidEdge { i, j, n });
            }
            normalized.push((i.min(j), i.max(j)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(i, j) in &normalized {
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
        }
        let (component_label, n_components) = crate::gmrf::label_components(n, &normalized);
        Ok(Self {
            segments,
            edges: normalized,
            neighbors,
            component_label,
            n_components,
        })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn component_labels(&self) -> &[usize] {
        &self.component_label
    }

    pub fn n_components(&self) -> usize {
        self.n_components
    }

    pub fn adjacent(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].binary_search(&j).is_ok()
    }

    /// Sizes of the components, indexed by label.
    pub fn component_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0_usize; self.n_components];
        for &c in &self.component_label {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Build adjacency from shared endpoints: segments are neighbours iff an
/// endpoint of one coincides with an endpoint of the other, exactly by
/// default or within `snap_tolerance_m` when it is positive.
pub fn build_adjacency(
    segments: Vec<Segment>,
    snap_tolerance_m: f64,
) -> Result<SegmentNetwork, LatticeError> {
    let n = segments.len();
    // Cluster endpoints into junction nodes.
    let mut node_of_endpoint = vec![usize::MAX; 2 * n];
    let mut nodes: Vec<Point> = Vec::new();
    if snap_tolerance_m <= 0.0 {
        let mut exact: BTreeMap<(u64, u64), usize> = BTreeMap::new();
        for (e, p) in endpoint_iter(&segments) {
            let key = (p[0].to_bits(), p[1].to_bits());
            let node = *exact.entry(key).or_insert_with(|| {
                nodes.push(p);
                nodes.len() - 1
            });
            node_of_endpoint[e] = node;
        }
    } else {
        // Grid hash with 3x3 neighbourhood probing; greedy first-match
        // clustering, deterministic in segment order.
        let cell = snap_tolerance_m;
        let mut grid: BTreeMap<(i64, i64), Vec<usize>> = BTreeMap::new();
        for (e, p) in endpoint_iter(&segments) {
            let cx = (p[0] / cell).floor() as i64;
            let cy = (p[1] / cell).floor() as i64;
            let mut found = None;
            'probe: for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(cands) = grid.get(&(cx + dx, cy + dy)) {
                        for &node in cands {
                            if geometry::dist(p, nodes[node]) <= snap_tolerance_m {
                                found = Some(node);
                                break 'probe;
                            }
                        }
                    }
                }
            }
            let node = found.unwrap_or_else(|| {
                nodes.push(p);
                grid.entry((cx, cy)).or_default().push(nodes.len() - 1);
                nodes.len() - 1
            });
            node_of_endpoint[e] = node;
        }
    }

    // Segments sharing a node are pairwise adjacent.
    let mut segs_at_node: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for (e, _) in endpoint_iter(&segments) {
        let seg = e / 2;
        let node = node_of_endpoint[e];
        if segs_at_node[node].last() != Some(&seg) {
            segs_at_node[node].push(seg);
        }
    }
    let mut edges = Vec::new();
    for members in &segs_at_node {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                if i != j {
                    edges.push((i, j));
                }
            }
        }
    }
    SegmentNetwork::from_parts(segments, edges)
}

fn endpoint_iter(segments: &[Segment]) -> impl Iterator<Item = (usize, Point)> + '_ {
    segments.iter().enumerate().flat_map(|(i, s)| {
        let (a, b) = s.endpoints();
        [(2 * i, a), (2 * i + 1, b)]
    })
}

/// Which components to keep when pruning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrunePolicy {
    /// Keep only the largest component (lowest label wins ties).
    KeepLargest,
    /// Keep every component with at least this many segments.
    MinSize(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneReport {
    pub retained_segments: usize,
    pub removed_segments: usize,
    pub retained_components: usize,
    pub removed_components: usize,
}

/// Drop components according to `policy`; adjacency and component labels
/// are recomputed on the retained segments.
pub fn prune_components(
    network: &SegmentNetwork,
    policy: PrunePolicy,
) -> Result<(SegmentNetwork, PruneReport), LatticeError> {
    let sizes = network.component_sizes();
    let keep_component: Vec<bool> = match policy {
        PrunePolicy::KeepLargest => {
            let best = sizes
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))
                .map(|(c, _)| c);
            (0..sizes.len()).map(|c| Some(c) == best).collect()
        }
        PrunePolicy::MinSize(k) => sizes.iter().map(|&s| s >= k).collect(),
    };
    if !keep_component.iter().any(|&k| k) {
        return Err(LatticeError::EmptyAfterPrune);
    }

    let mut old_to_new = vec![usize::MAX; network.len()];
    let mut segments = Vec::new();
    for (i, s) in network.segments.iter().enumerate() {
        if keep_component[network.component_label[i]] {
            old_to_new[i] = segments.len();
            segments.push(s.clone());
        }
    }
    if segments.is_empty() {
        return Err(LatticeError::EmptyAfterPrune);
    }
    let edges: Vec<(usize, usize)> = network
        .edges
        .iter()
        .filter(|&&(i, j)| old_to_new[i] != usize::MAX && old_to_new[j] != usize::MAX)
        .map(|&(i, j)| (old_to_new[i], old_to_new[j]))
        .collect();
    let report = PruneReport {
        retained_segments: segments.len(),
        removed_segments: network.len() - segments.len(),
        retained_components: keep_component.iter().filter(|&&k| k).count(),
        removed_components: keep_component.iter().filter(|&&k| !k).count(),
    };
    let pruned = SegmentNetwork::from_parts(segments, edges)?;
    Ok((pruned, report))
}

/// A point event to be located on the network.
#[derive(Debug, Clone, PartialEq)]
pub struct EventPoint {
    pub id: String,
    pub position: Point,
}

/// Where an event landed: assigned iff the nearest segment is within the
/// snapping tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct EventAssignment {
    pub event_id: String,
    pub segment_index: Option<usize>,
    pub snap_distance_m: f64,
}

/// Assign each event to the segment minimising point-to-polyline
/// distance; events farther than `tolerance_m` from every segment stay
/// unassigned. Ties go to the lowest segment index.
pub fn snap_events(
    points: &[EventPoint],
    network: &SegmentNetwork,
    tolerance_m: f64,
) -> Vec<EventAssignment> {
    assert!(tolerance_m > 0.0, "snap tolerance must be positive");
    points
        .iter()
        .map(|ev| {
            let nearest = nearest_segment(network, ev.position);
            match nearest {
                Some((idx, _, d)) if d <= tolerance_m => EventAssignment {
                    event_id: ev.id.clone(),
                    segment_index: Some(idx),
                    snap_distance_m: d,
                },
                Some((_, _, d)) => EventAssignment {
                    event_id: ev.id.clone(),
                    segment_index: None,
                    snap_distance_m: d,
                },
                None => EventAssignment {
                    event_id: ev.id.clone(),
                    segment_index: None,
                    snap_distance_m: f64::INFINITY,
                },
            }
        })
        .collect()
}

/// Nearest segment to a point: (segment index, projected point,
/// distance). Lowest index wins ties.
pub fn nearest_segment(network: &SegmentNetwork, p: Point) -> Option<(usize, Point, f64)> {
    let mut best: Option<(usize, Point, f64)> = None;
    for (i, s) in network.segments.iter().enumerate() {
        let (q, d) = project_on_polyline(p, &s.polyline);
        if best.as_ref().map_or(true, |b| d < b.2) {
            best = Some((i, q, d));
        }
    }
    best
}

/// Per-segment tally of assigned events.
pub fn count_events(assignments: &[EventAssignment], network: &SegmentNetwork) -> Vec<u64> {
    let mut counts = vec![0_u64; network.len()];
    for a in assignments {
        if let Some(i) = a.segment_index {
            counts[i] += 1;
        }
    }
    counts
}

/// A polygon (outer ring plus optional holes) carrying numeric
/// attributes, e.g. census covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonCovariate {
    /// Closed rings: first point equals last.
    pub rings: Vec<Vec<Point>>,
    pub attributes: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PolygonCovariateLayer {
    pub polygons: Vec<PolygonCovariate>,
}

impl PolygonCovariateLayer {
    pub fn new(polygons: Vec<PolygonCovariate>) -> Result<Self, LatticeError> {
        for (index, poly) in polygons.iter().enumerate() {
            for (r, ring) in poly.rings.iter().enumerate() {
                if ring.len() < 4 || ring.first() != ring.last() {
                    return Err(LatticeError::RingNotClosed { index, ring: r });
                }
            }
            for (name, v) in &poly.attributes {
                if !v.is_finite() {
                    return Err(LatticeError::NonFiniteAttribute {
                        index,
                        name: name.clone(),
                    });
                }
            }
        }
        Ok(Self { polygons })
    }
}

/// Result of the polygon overlay: for each segment, the index of the
/// polygon containing the largest fraction of its length, or `None` for
/// segments clipped by no polygon (flagged for the caller to drop or
/// impute).
#[derive(Debug, Clone, PartialEq)]
pub struct OverlayResult {
    pub polygon_index: Vec<Option<usize>>,
}

impl OverlayResult {
    pub fn missing(&self) -> Vec<usize> {
        self.polygon_index
            .iter()
            .enumerate()
            .filter(|(_, p)| p.is_none())
            .map(|(i, _)| i)
            .collect()
    }
}

/// Assign to each segment the polygon that contains the largest clipped
/// fraction of its length; ties go to the lowest polygon index.
pub fn overlay_covariates(
    network: &SegmentNetwork,
    layer: &PolygonCovariateLayer,
) -> OverlayResult {
    let polygon_index = network
        .segments
        .iter()
        .map(|s| {
            let mut best: Option<(usize, f64)> = None;
            for (p, poly) in layer.polygons.iter().enumerate() {
                // Cheap reject: a polyline entirely on one side of the
                // polygon bounding box cannot intersect it.
                if !bbox_overlaps(&s.polyline, &poly.rings) {
                    continue;
                }
                let len = clipped_length(&s.polyline, &poly.rings);
                if len > 0.0 && best.map_or(true, |(_, l)| len > l) {
                    best = Some((p, len));
                }
            }
            best.map(|(p, _)| p)
        })
        .collect();
    OverlayResult { polygon_index }
}

fn bbox_overlaps(polyline: &[Point], rings: &[Vec<Point>]) -> bool {
    let bb = |pts: &mut dyn Iterator<Item = Point>| {
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for p in pts {
            for d in 0..2 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        (min, max)
    };
    let (lmin, lmax) = bb(&mut polyline.iter().copied());
    let (pmin, pmax) = bb(&mut rings.iter().flatten().copied());
    lmin[0] <= pmax[0] && pmin[0] <= lmax[0] && lmin[1] <= pmax[1] && pmin[1] <= lmax[1]
}

// Re-export for callers that only need the classification primitive.
pub use geometry::point_in_rings as point_in_polygon_rings;
