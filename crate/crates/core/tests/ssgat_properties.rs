mod common;

use std::collections::BTreeSet;

use multictx_core::corpus::event_folds;
use multictx_core::encoder::{hash_features, EmbeddingTable};
use multictx_core::eval::precision_recall_f1;
use multictx_core::graph::{build_event_graph, EdgeType, EdgeTypes, GraphConfig, SentenceGraph};
use multictx_core::linalg::Mat;
use multictx_core::ssgat::{
    gat_layer_forward, predict_nodes, train_ssgat, Activation, GatLayer, NodeMasks, SsgatConfig, SsgatParams,
};
use multictx_core::synth::{generate_synthetic_corpus, SynthConfig};
use multictx_core::Label;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_graph(n: usize, events: u64, p: f64, seed: u64) -> SentenceGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let event_of: Vec<u64> = (0..n).map(|_| rng.gen_range(0..events)).collect();
    let t = EdgeTypes::of(&[EdgeType::EntityCont]);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if event_of[u] == event_of[v] && rng.gen_bool(p) {
                edges.push((u as u64, v as u64, t));
            }
        }
    }
    SentenceGraph::from_parts((0..n as u64).zip(event_of).collect(), edges).unwrap()
}

fn random_features(n: usize, dim: usize, seed: u64) -> EmbeddingTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = EmbeddingTable::new(dim);
    for id in 0..n as u64 {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        t.push(id, &v).unwrap();
    }
    t
}

fn small_config(seed: u64) -> SsgatConfig {
    SsgatConfig {
        heads: 2,
        head_dim: 4,
        epochs: 0,
        seed,
        ..SsgatConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn attention_rows_sum_to_one(n in 1usize..30, p in 0.0f64..0.6, seed in any::<u64>(), heads in 1usize..4) {
        let g = random_graph(n, 3, p, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let layer = GatLayer::init(5, heads, 3, true, Activation::LeakyRelu(0.2), &mut rng);
        let x = Mat::from_vec(n, 5, (0..n * 5).map(|_| rng.gen_range(-2.0..2.0)).collect());
        let out = gat_layer_forward(&layer, &g, &x).unwrap();
        for h in 0..heads {
            for u in 0..n {
                let closed: BTreeSet<usize> = g.neighbors(u).iter().map(|&(v, _)| v).chain([u]).collect();
                let mut total = 0.0;
                let mut seen = BTreeSet::new();
                for (v, a) in out.attention(h, u) {
                    prop_assert!(closed.contains(&v), "attention outside the closed neighbourhood");
                    prop_assert!((0.0..=1.0).contains(&a));
                    seen.insert(v);
                    total += a;
                }
                prop_assert_eq!(&seen, &closed);
                prop_assert!((total - 1.0).abs() <= 1e-6, "row sum {}", total);
            }
        }
    }

    #[test]
    fn three_hop_perturbation_is_invisible(len in 4usize..10, seed in any::<u64>(), bump in -5.0f64..5.0) {
        // Path 0 - 1 - ... - len-1: nodes 3 and beyond are at least 3 hops from 0.
        let t = EdgeTypes::of(&[EdgeType::DiscourseMarker]);
        let g = SentenceGraph::from_parts(
            (0..len as u64).map(|i| (i, 0)).collect(),
            (1..len as u64).map(|i| (i - 1, i, t)),
        ).unwrap();
        let x = random_features(len, 6, seed);
        let params = SsgatParams::init(6, &small_config(seed));
        let mask = vec![true; len];
        let before = predict_nodes(&params, &g, &x, &mask).unwrap();
        let mut far = EmbeddingTable::new(6);
        for (id, row) in x.rows() {
            let v: Vec<f64> = if id >= 3 { row.iter().map(|r| r + bump).collect() } else { row.to_vec() };
            far.push(id, &v).unwrap();
        }
        let after = predict_nodes(&params, &g, &far, &mask).unwrap();
        prop_assert_eq!(before.probabilities[0], after.probabilities[0]);
    }

    #[test]
    fn removing_test_events_keeps_train_predictions(n in 4usize..40, p in 0.0f64..0.5, seed in any::<u64>()) {
        let g = random_graph(n, 4, p, seed);
        let x = random_features(n, 5, seed ^ 7);
        let params = SsgatParams::init(5, &small_config(seed));
        let test_events: BTreeSet<u64> = [0, 1].into();
        let keep = |u: usize| !test_events.contains(&g.node_event(u));
        let full_mask: Vec<bool> = (0..n).map(keep).collect();
        let full = predict_nodes(&params, &g, &x, &full_mask).unwrap();
        let sub = g.induced_subgraph(|id| !test_events.contains(&g.node_event(g.node_index(id).unwrap())));
        let sub_pred = predict_nodes(&params, &sub, &x, &vec![true; sub.num_nodes()]).unwrap();
        let a: Vec<_> = full.by_sentence(&g).collect();
        let b: Vec<_> = sub_pred.by_sentence(&sub).collect();
        prop_assert_eq!(a, b);
    }
}

struct Synthetic {
    graph: SentenceGraph,
    features: EmbeddingTable,
    labels: Vec<Label>,
    masks: NodeMasks,
    fold: multictx_core::corpus::Fold,
}

fn synthetic(config: SynthConfig) -> Synthetic {
    let corpus = generate_synthetic_corpus(&config).unwrap();
    let features = hash_features(&corpus, 1024);
    let graph = build_event_graph(&corpus, &features, &GraphConfig::default()).unwrap();
    let plan = event_folds(&corpus, 3, 7).unwrap();
    let fold = plan.folds[0].clone();
    let labels = graph.node_ids().iter().map(|&id| corpus.get(id).unwrap().label).collect();
    let masks = NodeMasks::from_fold(&graph, &fold);
    Synthetic { graph, features, labels, masks, fold }
}

#[test]
fn trained_model_does_not_leak_across_events() {
    let s = synthetic(SynthConfig { n_events: 12, ..SynthConfig::default() });
    let config = SsgatConfig { heads: 2, head_dim: 8, epochs: 15, patience: 15, seed: 3, ..SsgatConfig::default() };
    let trained = train_ssgat(&s.graph, &s.features, &s.labels, &s.masks, &config).unwrap();
    let full = predict_nodes(&trained.params, &s.graph, &s.features, &s.masks.train).unwrap();
    let sub = s.graph.induced_subgraph(|id| {
        let e = s.graph.node_event(s.graph.node_index(id).unwrap());
        !s.fold.test_events.contains(&e)
    });
    let sub_train: Vec<bool> = sub.node_ids().iter().map(|&id| s.masks.train[s.graph.node_index(id).unwrap()]).collect();
    let reduced = predict_nodes(&trained.params, &sub, &s.features, &sub_train).unwrap();
    assert_eq!(full.by_sentence(&s.graph).collect::<Vec<_>>(), reduced.by_sentence(&sub).collect::<Vec<_>>());
}

#[test]
fn synthetic_val_f1_and_recount() {
    let s = synthetic(SynthConfig::default());
    let config = SsgatConfig { seed: 1, ..SsgatConfig::default() };
    let trained = train_ssgat(&s.graph, &s.features, &s.labels, &s.masks, &config).unwrap();
    let best_by_200 = trained.trace.iter().take(200).map(|r| r.val_f1).fold(0.0, f64::max);
    assert!(best_by_200 >= 0.85, "best validation F1 within 200 epochs: {best_by_200}");

    let pred = predict_nodes(&trained.params, &s.graph, &s.features, &s.masks.test).unwrap();
    let gold: Vec<Label> = pred.nodes.iter().map(|&u| s.labels[u]).collect();
    let m = precision_recall_f1(&pred.labels, &gold).unwrap();
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (p, g) in pred.labels.iter().zip(&gold) {
        match (p.is_biased(), g.is_biased()) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    let f1 = 2.0 * tp / (2.0 * tp + fp + fn_);
    assert!((m.f1 - f1).abs() < 1e-12);
    for prob in &pred.probabilities {
        assert!((prob[0] + prob[1] - 1.0).abs() < 1e-12 && prob.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}
