mod common;

use common::selection::{candidate_matrix, naive_topsis, pair_auc};
use muqar::eval::metrics::{binary_accuracy, binary_auc, mae, wape, BA_THRESHOLD};
use muqar::eval::{topsis, Direction};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn auc_matches_pair_enumeration(
        rows in prop::collection::vec((0u8..20, any::<bool>()), 2..200)
    ) {
        // Coarse scores force plenty of ties.
        let scores: Vec<f64> = rows.iter().map(|r| r.0 as f64 / 4.0).collect();
        let positive: Vec<bool> = rows.iter().map(|r| r.1).collect();
        match (binary_auc(&scores, &positive), pair_auc(&scores, &positive)) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}"),
            (a, b) => prop_assert_eq!(a, b),
        }
    }

    #[test]
    fn wape_is_mae_over_mean_magnitude(
        pairs in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..50)
    ) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let mean_abs = y.iter().map(|v| v.abs()).sum::<f64>() / y.len() as f64;
        prop_assume!(mean_abs > 1e-6);
        let w = wape(&y, &yhat).unwrap();
        prop_assert!((w - mae(&y, &yhat) / mean_abs).abs() <= 1e-12 * w.abs().max(1.0));
    }

    #[test]
    fn binary_accuracy_ignores_moves_within_a_side(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..50),
        shift in 0.0f64..1.0,
    ) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        // Push every prediction deeper into its own side of the threshold.
        let moved: Vec<f64> = yhat
            .iter()
            .map(|&v| if v > BA_THRESHOLD { v + shift } else { v - shift })
            .collect();
        prop_assert_eq!(binary_accuracy(&y, &yhat, BA_THRESHOLD), binary_accuracy(&y, &moved, BA_THRESHOLD));
    }

    #[test]
    fn topsis_matches_oracle_and_ignores_column_scale(
        seed in any::<u64>(),
        scale in prop::collection::vec(0.01f64..100.0, 3),
    ) {
        let m = candidate_matrix(seed);
        let benefit: Vec<bool> = m.criteria.iter().map(|c| c.direction == Direction::Benefit).collect();
        let got = topsis(&m).unwrap();
        let (closeness, ranking) = naive_topsis(&m.values, &benefit);
        for (a, b) in got.closeness.iter().zip(&closeness) {
            prop_assert!((a - b).abs() < 1e-12);
        }
        prop_assert_eq!(&got.ranking, &ranking);
        let mut scaled = m.clone();
        for row in scaled.values.iter_mut() {
            for (v, s) in row.iter_mut().zip(&scale) {
                *v *= s;
            }
        }
        prop_assert_eq!(topsis(&scaled).unwrap().ranking, got.ranking);
    }
}
