mod common;

use common::gradcheck::{backbone_error, op_error, EPS, TOLERANCE};
use muqar::model::qar::BackboneKind;
use muqar::tensor::OpKind;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_op_matches_central_differences(seed in any::<u64>()) {
        for kind in OpKind::ALL {
            let err = op_error(kind, seed);
            prop_assert!(err < TOLERANCE, "{kind:?}: relative error {err:e}");
        }
    }

    #[test]
    fn every_backbone_matches_central_differences(seed in any::<u64>()) {
        for kind in BackboneKind::ALL {
            let (err, margin) = backbone_error(kind, seed);
            prop_assume!(margin > 10.0 * EPS);
            prop_assert!(err < TOLERANCE, "{kind}: relative error {err:e}");
        }
    }
}


