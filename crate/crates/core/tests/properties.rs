use proptest::prelude::*;

use mrng::graph::ConflictMap;
use mrng::verify::EdgeSample;
use mrng::{
    best_first, build_mrng, check_edge_minimality, check_mrng_definition, compute_conflicts,
    is_monotonic, Dataset64, ProximityGraph,
};

fn points(max_n: usize, d: usize) -> impl Strategy<Value = Dataset64> {
    prop::collection::vec(prop::collection::vec(-10.0f64..10.0, d), 2..max_n)
        .prop_filter_map("distinct points", |rows| Dataset64::from_rows(&rows).ok())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn graph_files_round_trip(data in points(40, 3)) {
        let g = build_mrng(&data).unwrap();
        let mut bytes = Vec::new();
        g.write_to(&mut bytes).unwrap();
        let back = ProximityGraph::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &g);
        let mut again = Vec::new();
        back.write_to(&mut again).unwrap();
        prop_assert_eq!(again, bytes);

        let c = compute_conflicts(&data, &g).unwrap();
        let mut cb = Vec::new();
        c.write_to(&mut cb).unwrap();
        prop_assert_eq!(ConflictMap::from_bytes(&cb).unwrap(), c);
    }

    #[test]
    fn mrng_properties_hold(data in points(30, 2)) {
        let g = build_mrng(&data).unwrap();
        prop_assert!(check_mrng_definition(&g, &data).passed);
        prop_assert!(is_monotonic(&g, &data).passed);
        prop_assert!(check_edge_minimality(&g, &data, EdgeSample::All).passed);
    }

    #[test]
    fn any_single_edge_change_breaks_definition(data in points(25, 3), pick in any::<prop::sample::Index>()) {
        let g = build_mrng(&data).unwrap();
        let n = data.len();
        let pairs: Vec<(usize, usize)> =
            (0..n).flat_map(|x| (0..n).map(move |y| (x, y))).filter(|(x, y)| x != y).collect();
        let (x, y) = pairs[pick.index(pairs.len())];
        let changed = if g.has_edge(x, y) {
            g.without_edge(x, y)
        } else {
            g.with_edge(x, y, data.dist(x, y)).unwrap()
        };
        let report = check_mrng_definition(&changed, &data);
        prop_assert!(!report.passed);
        prop_assert!(report.counterexample.unwrap().reverify(&changed, &data));
    }

    #[test]
    fn counterexamples_reverify(data in points(25, 2), drop_at in any::<prop::sample::Index>()) {
        let g = build_mrng(&data).unwrap();
        let edges: Vec<(u32, u32)> = g.edges().collect();
        let (x, y) = edges[drop_at.index(edges.len())];
        let cut = g.without_edge(x as usize, y as usize);
        let report = is_monotonic(&cut, &data);
        prop_assert!(!report.passed);
        prop_assert!(report.counterexample.unwrap().reverify(&cut, &data));
    }

    #[test]
    fn best_first_respects_budget(
        data in points(60, 4),
        q in prop::collection::vec(-10.0f64..10.0, 4),
        budget in 1usize..80,
        k in 1usize..5,
    ) {
        let g = build_mrng(&data).unwrap();
        let res = best_first(&g, &data, 0, &q, budget, k).unwrap();
        prop_assert!(res.distance_evals <= budget as u64);
        prop_assert!(res.candidates.len() <= k);
        prop_assert!(res.candidates.windows(2).all(|w| w[0] <= w[1]));
    }
}
