//! Planar geometry primitives: point-to-polyline distance, even-odd
//! point-in-polygon, and polyline clipping against polygons. All inputs
//! are assumed to be in a projected plane in meters.

pub type Point = [f64; 2];

pub fn polyline_length(polyline: &[Point]) -> f64 {
    polyline
        .windows(2)
        .map(|w| dist(w[0], w[1]))
        .sum()
}

pub fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Closest point on segment ab to p, with its distance.
pub fn project_on_segment(p: Point, a: Point, b: Point) -> (Point, f64) {
    let dx = b[0] - a[0];
    let dy = b[1] - a[1];
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let q = [a[0] + t * dx, a[1] + t * dy];
    (q, dist(p, q))
}

/// Closest point on a polyline to p: (point, distance).
pub fn project_on_polyline(p: Point, polyline: &[Point]) -> (Point, f64) {
    let mut best = (polyline[0], dist(p, polyline[0]));
    for w in polyline.windows(2) {
        let (q, d) = project_on_segment(p, w[0], w[1]);
        if d < best.1 {
            best = (q, d);
        }
    }
    best
}

/// Even-odd test over a set of rings (holes come out naturally).
pub fn point_in_rings(p: Point, rings: &[Vec<Point>]) -> bool {
    let mut inside = false;
    for ring in rings {
        // Rings are closed (first == last); iterate the edges.
        for w in ring.windows(2) {
            let (a, b) = (w[0], w[1]);
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x_cross = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x_cross {
                    inside = !inside;
                }
            }
        }
    }
    inside
}

/// Length of the part of `polyline` inside the polygon given by `rings`.
///
/// Each polyline edge is split at its crossings with the ring edges and
/// sub-intervals are classified by their midpoint; exact for simple
/// polygons up to crossings that coincide with vertices.
pub fn clipped_length(polyline: &[Point], rings: &[Vec<Point>]) -> f64 {
    let mut total = 0.0;
    let mut cuts: Vec<f64> = Vec::new();
    for w in polyline.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg_len = dist(a, b);
        if seg_len == 0.0 {
            continue;
        }
        cuts.clear();
        cuts.push(0.0);
        cuts.push(1.0);
        for ring in rings {
            for e in ring.windows(2) {
                if let Some(t) = crossing_parameter(a, b, e[0], e[1]) {
                    cuts.push(t);
                }
            }
        }
        cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for pair in cuts.windows(2) {
            let (t0, t1) = (pair[0], pair[1]);
            if t1 <= t0 {
                continue;
            }
            let tm = 0.5 * (t0 + t1);
            let mid = [a[0] + tm * (b[0] - a[0]), a[1] + tm * (b[1] - a[1])];
            if point_in_rings(mid, rings) {
                total += (t1 - t0) * seg_len;
            }
        }
    }
    total
}

/// Parameter t in (0, 1) where segment ab crosses segment cd, if any.
fn crossing_parameter(a: Point, b: Point, c: Point, d: Point) -> Option<f64> {
    let r = [b[0] - a[0], b[1] - a[1]];
    let s = [d[0] - c[0], d[1] - c[1]];
    let denom = r[0] * s[1] - r[1] * s[0];
    if denom == 0.0 {
        return None; // parallel or collinear; midpoints decide
    }
    let ac = [c[0] - a[0], c[1] - a[1]];
    let t = (ac[0] * s[1] - ac[1] * s[0]) / denom;
    let u = (ac[0] * r[1] - ac[1] * r[0]) / denom;
    if t > 0.0 && t < 1.0 && (0.0..=1.0).contains(&u) {
        Some(t)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Vec<Vec<Point>> {
        vec![vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0], [0.0, 0.0]]]
    }

    #[test]
    fn projection_clamps_to_endpoints() {
        let (q, d) = project_on_segment([-1.0, 1.0], [0.0, 0.0], [2.0, 0.0]);
        assert_eq!(q, [0.0, 0.0]);
        assert!((d - 2.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn point_in_square() {
        let rings = unit_square();
        assert!(point_in_rings([0.5, 0.5], &rings));
        assert!(!point_in_rings([1.5, 0.5], &rings));
    }

    #[test]
    fn hole_is_outside() {
        let mut rings = unit_square();
        rings.push(vec![
            [0.25, 0.25],
            [0.75, 0.25],
            [0.75, 0.75],
            [0.25, 0.75],
            [0.25, 0.25],
        ]);
        assert!(!point_in_rings([0.5, 0.5], &rings));
        assert!(point_in_rings([0.1, 0.1], &rings));
    }

    #[test]
    fn clip_straight_line_through_square() {
        let rings = unit_square();
        let line = [[-1.0, 0.5], [2.0, 0.5]];
        let len = clipped_length(&line, &rings);
        assert!((len - 1.0).abs() < 1e-12);
    }

    #[test]
    fn clip_fully_inside_and_fully_outside() {
        let rings = unit_square();
        assert!((clipped_length(&[[0.2, 0.2], [0.8, 0.2]], &rings) - 0.6).abs() < 1e-12);
        assert_eq!(clipped_length(&[[2.0, 2.0], [3.0, 2.0]], &rings), 0.0);
    }
}
