use lod_ocp::cli::{loglog_slope, strip_timing_columns};
use lod_ocp::linalg::CsrMatrix;
use lod_ocp::pair::PairVector;
use proptest::prelude::*;

fn pair() -> impl Strategy<Value = PairVector> {
    (1usize..20).prop_flat_map(|n| {
        prop::collection::vec(-1e3..1e3f64, 2 * n).prop_map(PairVector::from_stacked)
    })
}

proptest! {
    #[test]
    fn rotation_squares_to_negation(v in pair()) {
        let twice = v.rotated().rotated();
        for (a, b) in twice.as_slice().iter().zip(v.as_slice()) {
            prop_assert_eq!(*a, -*b);
        }
        prop_assert_eq!(v.flipped().flipped(), v);
    }

    #[test]
    fn slope_recovers_power_laws(c in 1e-3..1e3f64, s in -1.0..4.0f64, k in 2usize..6) {
        let h: Vec<f64> = (0..k).map(|i| 0.5f64.powi(i as i32 + 1)).collect();
        let e: Vec<f64> = h.iter().map(|x| c * x.powf(s)).collect();
        let (slope, resid) = loglog_slope(&h, &e).unwrap();
        prop_assert!((slope - s).abs() < 1e-9);
        prop_assert!(resid < 1e-9);
    }

    #[test]
    fn stripping_timings_is_idempotent(
        cols in prop::collection::vec(("[a-z]{1,6}", any::<bool>()), 1..6),
        rows in 0usize..4,
    ) {
        let header: Vec<String> = cols
            .iter()
            .map(|(n, t)| if *t { format!("{n}_s") } else { n.clone() })
            .collect();
        let mut csv = header.join(",") + "\n";
        for r in 0..rows {
            let line: Vec<String> = (0..cols.len()).map(|c| (r * 10 + c).to_string()).collect();
            csv += &(line.join(",") + "\n");
        }
        let once = strip_timing_columns(&csv);
        prop_assert_eq!(strip_timing_columns(&once), once.clone());
        prop_assert!(once.lines().next().unwrap().split(',').all(|h| !h.ends_with("_s") || h.is_empty()));
    }

    #[test]
    fn csr_transpose_matches_dense(
        trip in prop::collection::vec((0usize..7, 0usize..5, -10.0..10.0f64), 0..30),
    ) {
        let a = CsrMatrix::from_triplets(7, 5, &trip);
        let d = a.to_dense();
        prop_assert_eq!(a.transpose().to_dense(), d.transpose());
        let x: Vec<f64> = (0..5).map(|i| i as f64 - 2.0).collect();
        let y = a.mul_vec(&x);
        let yd = &d * nalgebra::DVector::from_vec(x);
        for (u, v) in y.iter().zip(yd.iter()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
    }
}
