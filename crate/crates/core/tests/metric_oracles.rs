mod common;

use cadre_core::{MetricKind, MetricSpec};
use common::criteria;
use common::oracle::{metric_oracles, random_table, rel_close};
use proptest::prelude::*;

#[test]
fn metrics_match_oracles_on_random_tables() {
    criteria::metric_oracle_equivalence().unwrap();
}

#[test]
fn hand_computed_values() {
    let raw = random_table(7);
    let t = raw.to_table();
    // memory is a pure function of widths and string lengths
    let mem = MetricSpec::new(MetricKind::MemoryUsageMb)
        .evaluate(&t)
        .unwrap();
    let detail = mem.detail.get("bytes").copied().unwrap();
    assert_eq!(detail, (mem.value * 1_048_576.0).round());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn oracles_agree_for_arbitrary_seeds(seed in 1000u64..u64::MAX) {
        let raw = random_table(seed);
        let table = raw.to_table();
        for (name, oracle) in metric_oracles() {
            let engine = MetricSpec::new(MetricKind::from_name(name).unwrap()).evaluate(&table);
            match (engine, oracle(&raw)) {
                (Ok(got), Some(want)) => prop_assert!(rel_close(got.value, want, 1e-9), "{name}: {} vs {want}", got.value),
                (Err(_), None) => {}
                (got, want) => prop_assert!(false, "{name}: {got:?} vs {want:?}"),
            }
        }
    }
}
