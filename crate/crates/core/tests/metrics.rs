use interpcl_core::metrics::{compute_metrics, derived_from_bwt, AccuracyMatrix};
use proptest::prelude::*;

fn dense6() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(0.0..=1.0f64, 6), 6)
}

proptest! {
    #[test]
    fn matches_double_sum_oracle(rows in dense6()) {
        let m = compute_metrics(&AccuracyMatrix::from_dense(rows.clone()).unwrap());
        let n = rows.len();
        let mut bwt = 0.0;
        let mut fwt = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i > j {
                    bwt += rows[i][j] - rows[j][j];
                }
                if j > i {
                    fwt += rows[i][j];
                }
            }
        }
        let pairs = (n * (n - 1) / 2) as f64;
        prop_assert!((m.bwt - bwt / pairs).abs() < 1e-12);
        prop_assert!((m.fwt - fwt / pairs).abs() < 1e-12);
        prop_assert!((m.avg_final_acc - rows[n - 1].iter().sum::<f64>() / n as f64).abs() < 1e-12);
        prop_assert_eq!(m.fwt_entries, 15);
    }

    #[test]
    fn identities_hold(rows in dense6()) {
        let m = compute_metrics(&AccuracyMatrix::from_dense(rows).unwrap());
        prop_assert_eq!(m.rem, 1.0 - m.forgetting);
        prop_assert_eq!(m.bwt_plus, m.bwt.max(0.0));
        prop_assert_eq!(m.forgetting, -m.bwt.min(0.0));
        prop_assert_eq!(m.forgetting * m.bwt_plus, 0.0);
        prop_assert!((0.0..=1.0).contains(&m.forgetting));
    }

    #[test]
    fn column_offsets_cancel(rows in dense6(), col in 0usize..5, c in -0.2..0.2f64) {
        let base = compute_metrics(&AccuracyMatrix::from_dense(rows.clone()).unwrap());
        let mut shifted = rows;
        for (i, row) in shifted.iter_mut().enumerate() {
            if i >= col {
                row[col] = (row[col] + c).clamp(0.0, 1.0);
            }
        }
        // only meaningful when no entry was clamped
        let clamped = shifted.iter().enumerate().any(|(i, r)| i >= col && (r[col] == 0.0 || r[col] == 1.0));
        prop_assume!(!clamped);
        let moved = compute_metrics(&AccuracyMatrix::from_dense(shifted).unwrap());
        prop_assert!((moved.bwt - base.bwt).abs() < 1e-12);
    }
}

#[test]
fn cross_check_is_exact() {
    assert_eq!(derived_from_bwt(-0.006), (0.0, 0.006, 0.994));
    assert_eq!(derived_from_bwt(0.148), (0.148, 0.0, 1.0));
}
