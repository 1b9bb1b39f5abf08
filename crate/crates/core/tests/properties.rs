use std::collections::BTreeSet;
use std::rc::Rc;

use proptest::prelude::*;

use hei_core::graph::{median_partition, Graph};
use hei_core::nn::{Tape, Tensor};
use hei_core::similarity::{compute_patterns, estimate_patterns, Metric, SimilarityConfig};
use hei_core::trainers::{erm_risk, soft_env_risks, vrex_value};

fn graph_strategy() -> impl Strategy<Value = (usize, Vec<(usize, usize)>, Vec<f64>, Vec<usize>)> {
    (2usize..30).prop_flat_map(|n| {
        (
            Just(n),
            prop::collection::vec((0..n, 0..n), 0..4 * n),
            prop::collection::vec(-2.0f64..2.0, n * 3),
            prop::collection::vec(0usize..3, n),
        )
    })
}

fn build(n: usize, edges: &[(usize, usize)], feats: Vec<f64>, labels: &[usize]) -> Graph {
    let x = Tensor::from_vec(n, 3, feats).unwrap();
    Graph::from_edges(edges, x, labels.iter().map(|&y| Some(y)).collect(), Some(3))
        .unwrap()
        .0
}

proptest! {
    #[test]
    fn csr_matches_edge_set((n, edges, feats, labels) in graph_strategy()) {
        let g = build(n, &edges, feats, &labels);
        let want: BTreeSet<(usize, usize)> = edges
            .iter()
            .filter(|(u, v)| u != v)
            .map(|&(u, v)| (u.min(v), u.max(v)))
            .collect();
        let got: BTreeSet<(usize, usize)> = g.edges().into_iter().collect();
        prop_assert_eq!(&got, &want);
        prop_assert_eq!(g.num_edges(), want.len());
        prop_assert!(g.validate().is_ok());
    }

    #[test]
    fn fast_simrank_matches_direct((n, edges, feats, labels) in graph_strategy()) {
        let g = build(n, &edges, feats, &labels);
        let cfg = SimilarityConfig::new(Metric::SimRank);
        let a = compute_patterns(&g, &cfg).unwrap();
        let b = estimate_patterns(&g, &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn median_partition_is_balanced((n, edges, feats, labels) in graph_strategy()) {
        let g = build(n, &edges, feats, &labels);
        let idx: Vec<usize> = (0..n).collect();
        if let Ok(p) = median_partition(&g, &idx) {
            prop_assert!(p.high.len().abs_diff(p.low.len()) <= 1);
            prop_assert_eq!(p.high.len() + p.low.len() + p.excluded.len(), n);
            let h = |v: usize| g.node_homophily(v).unwrap().unwrap();
            let max_low = p.low.iter().map(|&v| h(v)).fold(f64::NEG_INFINITY, f64::max);
            let min_high = p.high.iter().map(|&v| h(v)).fold(f64::INFINITY, f64::min);
            prop_assert!(max_low <= min_high);
        }
    }

    #[test]
    fn one_hot_soft_risks_partition_the_risk(
        logits in prop::collection::vec(-3.0f64..3.0, 24),
        labels in prop::collection::vec(0usize..3, 8),
        env in prop::collection::vec(0usize..4, 8),
    ) {
        let mut w = Tensor::zeros(8, 4);
        for (i, &k) in env.iter().enumerate() {
            w.set(i, k, 1.0);
        }
        let mut tape = Tape::new();
        let lv = tape.constant(Tensor::from_vec(8, 3, logits).unwrap());
        let wv = tape.constant(w);
        let lab: Rc<[usize]> = labels.into();
        let total = erm_risk(&mut tape, lv, lab.clone()).unwrap();
        let risks = soft_env_risks(&mut tape, lv, lab, wv).unwrap();
        let sum: f64 = risks.iter().map(|&r| tape.value(r).item()).sum();
        prop_assert!((sum - tape.value(total).item()).abs() < 1e-12);
        // Empty environments contribute nothing.
        for k in 0..4 {
            if !env.contains(&k) {
                prop_assert_eq!(tape.value(risks[k]).item(), 0.0);
            }
        }
    }

    #[test]
    fn vrex_value_is_shift_invariant_in_penalty(
        risks in prop::collection::vec(0.0f64..5.0, 2..10),
        shift in -1.0f64..1.0,
        lambda in 0.0f64..10.0,
    ) {
        let moved: Vec<f64> = risks.iter().map(|r| r + shift).collect();
        let pen = |r: &[f64]| vrex_value(r, lambda) - r.iter().sum::<f64>();
        prop_assert!((pen(&risks) - pen(&moved)).abs() < 1e-9);
        prop_assert!(pen(&risks) >= 0.0);
    }
}
