//! Property tests over randomly generated inputs.

use std::collections::{BTreeSet, HashSet};

use match_core::autodiff::{Graph, Tensor};
use match_core::classifier::{
    bce_term, output_regularizer, output_term, parameter_regularizer, parameter_term, predict_probabilities,
    top_k_labels, DEFAULT_CLAMP,
};
use match_core::corpus::{parse_document, split_corpus, RawDocument, Schema};
use match_core::metrics::{ndcg_at_k, precision_at_k};
use match_core::taxonomy::{LabelHierarchy, LabelId};
use proptest::prelude::*;

fn name(i: usize) -> String {
    format!("l{i}")
}

/// Random DAG edges: each label may point at any lower-numbered label.
fn dag_edges() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..12).prop_flat_map(|n| {
        let edge = (1..n).prop_flat_map(|c| (Just(c), 0..c));
        (Just(n), prop::collection::vec(edge, 0..3 * n))
    })
}

fn word() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{0,6}"
}

fn raw_document() -> impl Strategy<Value = RawDocument> {
    (
        "[a-z0-9]{1,8}",
        prop::collection::vec(prop::collection::vec(word(), 0..6), 2),
        prop::collection::vec(prop::collection::vec("[A-Za-z0-9 ._-]{1,10}", 0..4), 3),
        prop::collection::vec("[A-Z][0-9]{1,2}", 1..4),
    )
        .prop_map(|(id, text, metadata, labels)| RawDocument {
            id,
            text,
            metadata,
            labels,
        })
}

fn probabilities(rows: usize, cols: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, rows * cols)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hierarchy_stores_each_distinct_edge_once((n, edges) in dag_edges()) {
        let named: Vec<(String, String)> = edges.iter().map(|&(c, p)| (name(c), name(p))).collect();
        let isolated: Vec<String> = (0..n).map(name).collect();
        let h = LabelHierarchy::from_edges(&named, &isolated).unwrap();
        let distinct: HashSet<(usize, usize)> = edges.iter().copied().collect();
        prop_assert_eq!(h.edge_list().len(), distinct.len());
        prop_assert_eq!(h.len(), n);
        let order = h.topological_order();
        let rank: Vec<usize> = {
            let mut r = vec![0; n];
            for (i, &l) in order.iter().enumerate() {
                r[l as usize] = i;
            }
            r
        };
        for &(c, p) in h.edge_list() {
            prop_assert!(rank[p as usize] < rank[c as usize]);
            prop_assert!(h.parents(c).unwrap().contains(&p));
            prop_assert!(h.children(p).unwrap().contains(&c));
        }
        for r in h.roots() {
            prop_assert!(h.parents(r).unwrap().is_empty());
        }
    }

    #[test]
    fn adding_a_back_edge_is_rejected((n, edges) in dag_edges()) {
        prop_assume!(!edges.is_empty());
        let (c, p) = edges[0];
        let mut named: Vec<(String, String)> = edges.iter().map(|&(c, p)| (name(c), name(p))).collect();
        named.push((name(p), name(c)));
        let isolated: Vec<String> = (0..n).map(name).collect();
        prop_assert!(LabelHierarchy::from_edges(&named, &isolated).is_err());
    }

    #[test]
    fn document_json_roundtrip(doc in raw_document()) {
        let schema = Schema::default();
        let line = doc.to_json(&schema).to_string();
        let back = parse_document(&line, &schema).unwrap();
        prop_assert_eq!(back, doc);
    }

    #[test]
    fn split_is_a_partition_near_the_ratios(
        n in 3usize..300,
        a in 1u32..10,
        b in 1u32..10,
        c in 1u32..10,
        seed in any::<u64>(),
    ) {
        let total = (a + b + c) as f64;
        let ratios = (a as f64 / total, b as f64 / total, 1.0 - a as f64 / total - b as f64 / total);
        let ids: Vec<String> = (0..n).map(|i| format!("d{i}")).collect();
        let split = split_corpus(&ids, ratios, seed).unwrap();
        let mut seen = BTreeSet::new();
        for id in split.train.iter().chain(&split.validation).chain(&split.test) {
            prop_assert!(seen.insert(id.clone()), "{} appears twice", id);
        }
        prop_assert_eq!(seen.len(), n);
        for (size, r) in [
            (split.train.len(), ratios.0),
            (split.validation.len(), ratios.1),
            (split.test.len(), ratios.2),
        ] {
            prop_assert!((size as f64 - r * n as f64).abs() <= 1.0 + 1e-9, "size {} vs {}", size, r * n as f64);
        }
        prop_assert_eq!(split_corpus(&ids, ratios, seed).unwrap(), split);
    }

    #[test]
    fn metrics_invariant_under_relabeling(
        truth in prop::collection::btree_set(0u32..20, 1..6),
        ranking in Just((0u32..20).collect::<Vec<_>>()).prop_shuffle(),
        perm in Just((0u32..20).collect::<Vec<_>>()).prop_shuffle(),
        k in 1usize..8,
    ) {
        let truth: Vec<LabelId> = truth.into_iter().collect();
        let mapped_truth: Vec<LabelId> = truth.iter().map(|&l| perm[l as usize]).collect();
        let mapped_ranking: Vec<LabelId> = ranking.iter().map(|&l| perm[l as usize]).collect();
        let p = precision_at_k(&truth, &ranking, k).unwrap();
        let n = ndcg_at_k(&truth, &ranking, k).unwrap();
        prop_assert_eq!(p, precision_at_k(&mapped_truth, &mapped_ranking, k).unwrap());
        prop_assert_eq!(n, ndcg_at_k(&mapped_truth, &mapped_ranking, k).unwrap());
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!((0.0..=1.0 + 1e-12).contains(&n));
        if k == 1 {
            prop_assert_eq!(p, n);
        }
    }

    #[test]
    fn top_k_invariant_under_increasing_transform(
        probs in prop::collection::vec(0.0f64..1.0, 1..30),
        k in 1usize..40,
    ) {
        let transformed: Vec<f64> = probs.iter().map(|p| (3.0 * p).exp() + p.powi(3)).collect();
        let a = top_k_labels(&probs, k);
        prop_assert_eq!(&a, &top_k_labels(&transformed, k));
        prop_assert_eq!(a.len(), k.min(probs.len()));
    }

    #[test]
    fn parameter_regularizer_is_swap_symmetric(w in prop::collection::vec(-3.0f64..3.0, 12), swap in 0usize..3) {
        let weights = Tensor::new(3, 4, w).unwrap();
        let mut edges = vec![(1, 0), (2, 0), (2, 1)];
        let forward = parameter_regularizer(&weights, &edges).unwrap();
        edges[swap] = (edges[swap].1, edges[swap].0);
        prop_assert!((forward - parameter_regularizer(&weights, &edges).unwrap()).abs() < 1e-12);
        prop_assert!(forward >= 0.0);
    }

    #[test]
    fn output_regularizer_penalizes_only_child_excess(child in 0.0f64..1.0, parent in 0.0f64..1.0) {
        let probs = Tensor::new(1, 2, vec![child, parent]).unwrap();
        let v = output_regularizer(&probs, &[(0, 1)]).unwrap();
        prop_assert!((v - (child - parent).max(0.0)).abs() < 1e-15);
        let reversed = output_regularizer(&probs, &[(1, 0)]).unwrap();
        if child > parent {
            prop_assert!(v > 0.0);
            prop_assert_eq!(reversed, 0.0);
        }
    }

    #[test]
    fn objective_is_linear_and_monotone_in_lambdas(
        rep in prop::collection::vec(-1.0f64..1.0, 2 * 3),
        w in prop::collection::vec(-2.0f64..2.0, 3 * 4),
        y in prop::collection::vec(prop::bool::ANY, 2 * 4),
        l1 in 0.0f64..5.0,
        l2 in 0.0f64..5.0,
        dl in 0.0f64..1.0,
    ) {
        let rep = Tensor::new(2, 3, rep).unwrap();
        let weights = Tensor::new(3, 4, w).unwrap();
        let bias = Tensor::zeros(1, 4);
        let targets = Tensor::new(2, 4, y.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()).unwrap();
        let edges = [(1u32, 0u32), (2, 0), (3, 1), (3, 2)];
        let objective = |l1: f64, l2: f64| -> f64 {
            let mut g = Graph::new();
            let x = g.constant(rep.clone()).unwrap();
            let wv = g.constant(weights.clone()).unwrap();
            let bv = g.constant(bias.clone()).unwrap();
            let xw = g.matmul(x, wv).unwrap();
            let logits = g.add_row(xw, bv).unwrap();
            let probs = g.sigmoid(logits).unwrap();
            let bce = bce_term(&mut g, logits, targets.clone(), DEFAULT_CLAMP).unwrap();
            let jp = parameter_term(&mut g, wv, &edges).unwrap();
            let jo = output_term(&mut g, probs, &edges).unwrap();
            let a = g.scale(jp, l1).unwrap();
            let b = g.scale(jo, l2).unwrap();
            let t = g.add(bce, a).unwrap();
            let t = g.add(t, b).unwrap();
            g.value(t).item().unwrap()
        };
        let probs = predict_probabilities(&rep, &weights, &bias).unwrap();
        let jp = parameter_regularizer(&weights, &edges).unwrap();
        let jo = output_regularizer(&probs, &edges).unwrap();
        let base = objective(0.0, 0.0);
        prop_assert!((objective(l1, l2) - base - (l1 * jp + l2 * jo)).abs() < 1e-12);
        prop_assert!(objective(l1 + dl, l2) >= objective(l1, l2) - 1e-12);
        prop_assert!(objective(l1, l2 + dl) >= objective(l1, l2) - 1e-12);
    }

    #[test]
    fn predictions_stay_inside_unit_interval(rep in probabilities(1, 5), w in prop::collection::vec(-50.0f64..50.0, 5 * 3)) {
        let probs = predict_probabilities(
            &Tensor::new(1, 5, rep).unwrap(),
            &Tensor::new(5, 3, w).unwrap(),
            &Tensor::zeros(1, 3),
        )
        .unwrap();
        prop_assert_eq!(probs.cols(), 3);
        prop_assert!(probs.data().iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
