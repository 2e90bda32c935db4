mod common;

use common::popularity::{random_case, NUM_ATTRIBUTES};
use muqar::data::calendar::SeasonKey;
use muqar::data::{InteractionLog, PopularityIndex};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn matches_brute_force_oracle(seed in any::<u64>()) {
        let (catalog, log) = random_case(seed, 1500);
        common::popularity::compare(&catalog, &log).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn reachability_never_grows_with_more_attributes(seed in any::<u64>(), order in Just((0..NUM_ATTRIBUTES).collect::<Vec<_>>()).prop_shuffle()) {
        let (catalog, log) = random_case(seed, 800);
        let index = PopularityIndex::build(&log, &catalog);
        for r in log.records.iter().take(20) {
            let season = SeasonKey::of(r.day);
            let mut prev = index.reachability(&[], r.group_id, season).unwrap();
            for len in 1..=order.len() {
                let next = index.reachability(&order[..len], r.group_id, season).unwrap();
                prop_assert!(next <= prev);
                prev = next;
            }
        }
    }

    #[test]
    fn likability_invariant_under_log_duplication(seed in any::<u64>()) {
        let (catalog, log) = random_case(seed, 800);
        let doubled = InteractionLog::new(log.records.iter().chain(&log.records).cloned().collect());
        let (a, b) = (PopularityIndex::build(&log, &catalog), PopularityIndex::build(&doubled, &catalog));
        for r in &log.records {
            prop_assert_eq!(
                a.likability(r.group_id, &r.product_id, r.day).unwrap(),
                b.likability(r.group_id, &r.product_id, r.day).unwrap()
            );
        }
    }
}
