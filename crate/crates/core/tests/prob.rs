mod common;

use lanedrop::prob::{
    estimate, estimate_with_default_grid, interp_f2, normalize, CorridorQuery, LaneParams, LookupTable,
};
use lanedrop::{CorridorQuery32, LaneParams32, LookupTable32};
use proptest::prelude::*;

fn lane() -> impl Strategy<Value = LaneParams> {
    (5.0f64..35.0, 2.5f64..5.0, 0.2f64..1.4, 0.0f64..80.0, 0.0f64..6.0)
        .prop_map(|(v, mu, sigma, g, t)| LaneParams::new(v, mu, sigma, g, t).unwrap())
}

fn corridor(max_lanes: usize) -> impl Strategy<Value = CorridorQuery> {
    (
        50.0f64..4000.0,
        5.0f64..35.0,
        prop::collection::vec(lane(), 1..=max_lanes),
    )
        .prop_map(|(d, v, lanes)| CorridorQuery::new(d, v, lanes).unwrap())
}

fn to_f32(t: &LookupTable) -> LookupTable32 {
    let axes = t.axes().iter().map(|a| a.iter().map(|&x| x as f32).collect()).collect();
    let grid = lanedrop::prob::GridSpec::new(axes).unwrap();
    let values = t.values().iter().map(|&x| x as f32).collect();
    LookupTable32::from_parts(grid, values, t.meta()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 500, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn estimates_are_probabilities(q in corridor(4)) {
        let p = estimate_with_default_grid(&q, &common::coarse_table()).unwrap().p;
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn another_lane_never_helps(q in corridor(3), extra in lane()) {
        let table = common::coarse_table();
        let mut longer = q.clone();
        longer.lanes.push(extra);
        let p = estimate_with_default_grid(&q, &table).unwrap().p;
        let p_more = estimate_with_default_grid(&longer, &table).unwrap().p;
        prop_assert!(p_more <= p + 1e-12, "{p_more} > {p}");
    }

    #[test]
    fn free_extra_lane_changes_nothing(q in corridor(1), v in 5.0f64..35.0, mu in 2.5f64..5.0, sigma in 0.2f64..1.4) {
        let table = common::coarse_table();
        let mut longer = q.clone();
        longer.lanes.push(LaneParams::new(v, mu, sigma, 0.0, 0.0).unwrap());
        let p = estimate_with_default_grid(&q, &table).unwrap().p;
        let p3 = estimate_with_default_grid(&longer, &table).unwrap().p;
        prop_assert!((p - p3).abs() <= 1e-9, "{p} vs {p3}");
    }

    #[test]
    fn finer_recursion_grid_agrees(q in corridor(3)) {
        let table = common::coarse_table();
        let a = estimate(&q, &table, 200).unwrap().p;
        let b = estimate(&q, &table, 800).unwrap().p;
        prop_assert!((a - b).abs() <= 0.02, "{a} vs {b}");
    }

    #[test]
    fn single_and_double_precision_agree(q in corridor(3)) {
        let table = common::coarse_table();
        let t32 = to_f32(&table);
        let lanes: Vec<LaneParams32> = q
            .lanes
            .iter()
            .map(|l| LaneParams32::new(l.v as f32, l.mu as f32, l.sigma as f32, l.g as f32, l.t as f32).unwrap())
            .collect();
        let q32 = CorridorQuery32::new(q.d as f32, q.ego_v as f32, lanes).unwrap();
        let p64 = estimate_with_default_grid(&q, &table).unwrap().p;
        let p32 = estimate_with_default_grid(&q32, &t32).unwrap().p;
        prop_assert!((p64 - p32 as f64).abs() <= 1e-3, "{p64} vs {p32}");
    }

    #[test]
    fn longer_distance_helps_two_lanes(q in corridor(1), extra in 1.0f64..3.0) {
        // Built tables are non-decreasing along the sweep axis, and sweep
        // grows with distance.
        let table = common::coarse_table();
        let far = CorridorQuery::new(q.d * extra, q.ego_v, q.lanes.clone()).unwrap();
        let p = interp_f2(&table, &normalize(&q, 0).unwrap()).p;
        let p_far = interp_f2(&table, &normalize(&far, 0).unwrap()).p;
        prop_assert!(p_far >= p - 1e-12, "{p_far} < {p}");
    }
}

#[test]
fn table_file_round_trip_preserves_answers() {
    let table = common::coarse_table();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.lcpt");
    table.save(&path).unwrap();
    let back = LookupTable::load(&path).unwrap();
    assert_eq!(back, *table);
    let q = CorridorQuery::new(
        800.0,
        25.0,
        vec![LaneParams::new(20.0, 3.7, 0.6, 40.0, 3.0).unwrap(); 2],
    )
    .unwrap();
    assert_eq!(
        estimate_with_default_grid(&q, &back).unwrap().p,
        estimate_with_default_grid(&q, &table).unwrap().p
    );
}
