//! Property tests for the structural invariants that hold for arbitrary
//! inputs.

use proptest::prelude::*;

use crashlattice::gmrf::IcarStructure;
use crashlattice::lattice::{nearest_segment, snap_events, EventPoint, Segment, SegmentNetwork};
use crashlattice::model::standardize;
use crashlattice::selection::rate_ratio;

fn grid_network() -> SegmentNetwork {
    let mut segments = Vec::new();
    for r in 0..3 {
        for c in 0..3 {
            let p = [c as f64, r as f64];
            if c + 1 < 3 {
                segments.push(
                    Segment::new(format!("h{r}{c}"), vec![p, [p[0] + 1.0, p[1]]], "x", 50.0)
                        .unwrap(),
                );
            }
            if r + 1 < 3 {
                segments.push(
                    Segment::new(format!("v{r}{c}"), vec![p, [p[0], p[1] + 1.0]], "x", 50.0)
                        .unwrap(),
                );
            }
        }
    }
    SegmentNetwork::from_parts(segments, std::iter::empty()).unwrap()
}

proptest! {
    /// v' K v equals the sum of squared neighbour differences for any
    /// graph and any vector.
    #[test]
    fn quad_form_equals_pairwise_difference_sum(
        n in 3usize..40,
        extra in prop::collection::vec((0usize..40, 0usize..40), 0..60),
        values in prop::collection::vec(-5.0f64..5.0, 40),
    ) {
        let mut edges: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
        for (a, b) in extra {
            let (a, b) = (a % n, b % n);
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        let s = IcarStructure::from_edges(n, &edges).unwrap();
        let v = &values[..n];
        let q = s.structure_matrix().quad_form(v).unwrap();
        let pairwise: f64 = edges.iter().map(|&(i, j)| (v[i] - v[j]).powi(2)).sum();
        prop_assert!((q - pairwise).abs() <= 1e-12 * pairwise.max(1.0));
    }

    /// Snapping the projected point lands on the same segment with zero
    /// distance.
    #[test]
    fn snapping_is_idempotent(x in -1.0f64..3.0, y in -1.0f64..3.0) {
        let net = grid_network();
        let (idx, projected, _) = nearest_segment(&net, [x, y]).unwrap();
        let again = snap_events(
            &[EventPoint { id: "p".into(), position: projected }],
            &net,
            10.0,
        );
        prop_assert_eq!(again[0].segment_index, Some(idx));
        prop_assert!(again[0].snap_distance_m <= 1e-9);
    }

    /// Opposite increments cancel: rr(b, d, s) * rr(b, -d, s) = 1.
    #[test]
    fn rate_ratio_reciprocal(
        beta in -5.0f64..5.0,
        delta in 0.0f64..1e6,
        sd in 1e-3f64..1e6,
    ) {
        // keep the exponent within floating range
        prop_assume!((beta * delta / sd).abs() < 30.0);
        let a = rate_ratio(beta, delta, sd).unwrap();
        let b = rate_ratio(beta, -delta, sd).unwrap();
        prop_assert!((a * b - 1.0).abs() < 1e-12);
    }

    /// Standardised columns really are centred and scaled.
    #[test]
    fn standardize_centres_and_scales(values in prop::collection::vec(-100.0f64..100.0, 3..50)) {
        prop_assume!(values.iter().any(|v| (v - values[0]).abs() > 1e-6));
        let (std_values, _, _) = standardize(&values);
        let n = std_values.len() as f64;
        let mean = std_values.iter().sum::<f64>() / n;
        let var = std_values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }
}
