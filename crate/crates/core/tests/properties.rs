mod common;

use common::suites;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(suites::CASES))]

    #[test]
    fn columns_are_normalized(case in suites::columns_are_normalized_cases()) {
        suites::columns_are_normalized(case)?;
    }

    #[test]
    fn mixtures_are_normalized(case in suites::mixtures_are_normalized_cases()) {
        suites::mixtures_are_normalized(case)?;
    }

    #[test]
    fn heuristic_mixture_matches_recursion(case in suites::heuristic_mixture_matches_recursion_cases()) {
        suites::heuristic_mixture_matches_recursion(case)?;
    }

    #[test]
    fn store_matches_enumeration(case in suites::store_matches_enumeration_cases()) {
        suites::store_matches_enumeration(case)?;
    }

    #[test]
    fn cv_views_partition_the_counts(case in suites::cv_views_partition_the_counts_cases()) {
        suites::cv_views_partition_the_counts(case)?;
    }

    #[test]
    fn em_never_increases_validation_nll(case in suites::em_never_increases_validation_nll_cases()) {
        suites::em_never_increases_validation_nll(case)?;
    }
}
