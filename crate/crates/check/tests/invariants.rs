use proptest::prelude::*;

use parftl_check::props;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn sequential_write_prefix(seed in any::<u64>(), ops in 20usize..200) {
        props::prefix_invariant(seed, ops).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn counters_match_operations(seed in any::<u64>(), ops in 1usize..300) {
        props::counters_consistent(seed, ops).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn collection_conserves_valid_pages_and_frees_a_block(seed in any::<u64>(), ops in 100usize..400) {
        props::gc_conservation(seed, ops).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn checkpoint_round_trip_is_identity(seed in any::<u64>(), ops in 1usize..300) {
        props::checkpoint_round_trip(seed, ops).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn recovery_scan_equals_checkpoint_load(seed in any::<u64>(), ops in 1usize..300) {
        props::recovery_matches_load(seed, ops).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn write_amplification_at_least_one(seed in any::<u64>(), ops in 1usize..300) {
        let wa = props::write_amplification(seed, ops).map_err(TestCaseError::fail)?;
        prop_assert!(wa >= 1.0);
    }
}
