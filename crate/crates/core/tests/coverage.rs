mod common;

use firesite::coverage::{catchment, improvement_report, solve_exact, solve_greedy, Catchment, CatchmentMode, MaxCoverInstance};
use firesite::geodata::{travel_time_matrix, Edge, Node, RoadNetwork};
use firesite::sqi::{score_all, CategoryShares, SqiThresholds, TravelNorm};
use proptest::prelude::*;

/// A 9x9 grid of 60 s blocks, node id = row * 9 + col.
fn grid() -> RoadNetwork {
    let n = 9u64;
    let nodes = (0..n * n).map(|id| Node { node_id: id, lon: (id % n) as f64 * 0.01, lat: (id / n) as f64 * 0.01 }).collect();
    let mut edges = Vec::new();
    for id in 0..n * n {
        if id % n + 1 < n {
            edges.push(Edge { from: id, to: id + 1, seconds: 60.0 });
        }
        if id / n + 1 < n {
            edges.push(Edge { from: id, to: id + n, seconds: 60.0 });
        }
    }
    RoadNetwork::new(nodes, edges, true).unwrap()
}

#[test]
fn overlapping_catchments_equal_set_difference_scan() {
    // One existing station in the middle, candidates west and north-east of it.
    let net = grid();
    let existing = 40u64;
    let candidates = [37u64, 69];
    let props: Vec<u64> = (0..81).collect();
    let mut rows = vec![existing];
    rows.extend(candidates);
    let m = travel_time_matrix(&net, &rows, &props).unwrap();
    let norm = TravelNorm::new(1200.0, 180.0).unwrap();
    for &c in &candidates {
        let exclusive = catchment(c, &[existing], &props, &m, &norm, CatchmentMode::Exclusive).unwrap();
        let inclusive = catchment(c, &[existing], &props, &m, &norm, CatchmentMode::Inclusive).unwrap();
        let reach = |s: u64, j: u64| m.get(s, j).unwrap() <= 180.0;
        let want_inc: Vec<u64> = props.iter().copied().filter(|&j| reach(c, j)).collect();
        let want_exc: Vec<u64> = want_inc.iter().copied().filter(|&j| !reach(existing, j)).collect();
        assert_eq!(inclusive.covered, want_inc);
        assert_eq!(exclusive.covered, want_exc);
        assert!(exclusive.len() < inclusive.len());
    }
    let none = catchment(candidates[0], &[], &props, &m, &norm, CatchmentMode::Exclusive).unwrap();
    let all = catchment(candidates[0], &[], &props, &m, &norm, CatchmentMode::Inclusive).unwrap();
    assert_eq!(none, all);
}

#[test]
fn adding_the_selected_station_matches_rescoring() {
    let net = grid();
    let props: Vec<(u64, f64)> = (0..81).map(|j| (j, 0.2 + 0.8 * ((j * 37 % 81) as f64 / 81.0))).collect();
    let ids: Vec<u64> = props.iter().map(|p| p.0).collect();
    let stations = [0u64];
    let candidates = [80u64, 44, 8];
    let mut rows = stations.to_vec();
    rows.extend(candidates);
    let m = travel_time_matrix(&net, &rows, &ids).unwrap();
    let (norm, th) = (TravelNorm::new(1200.0, 240.0).unwrap(), SqiThresholds::default());
    let before = score_all(&props, &stations, &m, &norm, &th).unwrap();
    let weights: Vec<(u64, f64)> = before.records.iter().map(|r| (r.property_id, r.sqi_min)).collect();
    let cs: Vec<Catchment> = candidates
        .iter()
        .map(|&c| catchment(c, &stations, &ids, &m, &norm, CatchmentMode::Exclusive).unwrap())
        .collect();
    let sol = solve_exact(&MaxCoverInstance::new(&weights, &cs, 1).unwrap()).unwrap();
    let mut with = stations.to_vec();
    with.extend(&sol.selected);
    let after = score_all(&props, &with, &m, &norm, &th).unwrap();
    let report = improvement_report(&before.records, &after.records).unwrap();
    let sb = CategoryShares::of(&before.records);
    let sa = CategoryShares::of(&after.records);
    for d in &report.deltas {
        assert_eq!(d.before_count, sb.get(d.category).count);
        assert_eq!(d.after_count, sa.get(d.category).count);
        assert_eq!(d.count_change, sa.get(d.category).count as i64 - sb.get(d.category).count as i64);
    }
    assert!(report.deltas[0].count_change < 0);
}

fn instance(weights: Vec<f64>, sets: Vec<Vec<u64>>, p: usize) -> MaxCoverInstance {
    let props: Vec<(u64, f64)> = weights.into_iter().enumerate().map(|(j, w)| (j as u64, w)).collect();
    let cs: Vec<Catchment> =
        sets.into_iter().enumerate().map(|(c, covered)| Catchment { candidate_id: c as u64, covered }).collect();
    MaxCoverInstance::new(&props, &cs, p).unwrap()
}

fn arb_instance() -> impl Strategy<Value = (Vec<f64>, Vec<Vec<u64>>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            proptest::collection::vec(0.0f64..=1.0, n),
            proptest::collection::vec(proptest::collection::btree_set(0..n as u64, 0..n), 1..8)
                .prop_map(|v| v.into_iter().map(|s| s.into_iter().collect()).collect()),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]
    #[test]
    fn exact_dominates_greedy_and_grows_with_budget((w, sets) in arb_instance(), p in 1usize..4) {
        let small = instance(w.clone(), sets.clone(), p);
        let large = instance(w.clone(), sets.clone(), p + 1);
        let e = solve_exact(&small).unwrap();
        let g = solve_greedy(&small);
        prop_assert!(e.objective >= g.objective);
        prop_assert!(solve_exact(&large).unwrap().objective >= e.objective);
        let (v, sel) = common::enumerate_cover(&small);
        prop_assert_eq!(e.objective, v);
        prop_assert_eq!(e.selected, sel);
    }

    #[test]
    fn covered_properties_are_feasible((w, sets) in arb_instance(), p in 1usize..4) {
        let inst = instance(w, sets.clone(), p);
        for sol in [solve_exact(&inst).unwrap(), solve_greedy(&inst)] {
            for j in &sol.covered {
                prop_assert!(sol.selected.iter().any(|&c| sets[c as usize].contains(j)));
            }
            for (c, set) in sets.iter().enumerate() {
                if sol.selected.contains(&(c as u64)) {
                    prop_assert!(set.iter().all(|j| sol.covered.contains(j)));
                }
            }
            prop_assert_eq!(sol.objective, inst.objective(&sol.selected).unwrap());
        }
    }

    #[test]
    fn disjoint_sets_make_greedy_exact(w in proptest::collection::vec(0.0f64..=1.0, 1..30), k in 1usize..6, p in 1usize..4) {
        let n = w.len();
        let sets: Vec<Vec<u64>> = (0..k).map(|c| (0..n as u64).filter(|j| *j as usize % k == c).collect()).collect();
        let inst = instance(w, sets, p);
        let e = solve_exact(&inst).unwrap();
        let g = solve_greedy(&inst);
        prop_assert!((e.objective - g.objective).abs() <= 1e-12);
    }

    #[test]
    fn scaling_weights_keeps_selection((w, sets) in arb_instance(), p in 1usize..3) {
        let a = solve_exact(&instance(w.clone(), sets.clone(), p)).unwrap();
        let halved: Vec<f64> = w.iter().map(|x| x * 0.5).collect();
        let b = solve_exact(&instance(halved, sets, p)).unwrap();
        prop_assert_eq!(a.selected, b.selected);
    }
}
