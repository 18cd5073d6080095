use hbct::data::{generate_dataset, SyntheticDatasetSpec};
use hbct::encoder::{train_old, Arch, ClipPolicy, TrainConfig};
use hbct::evaluation::{
    cmc_at_k, embed_split, evaluate, mean_average_precision, retrieve, EmbeddingSet, Geometry,
};
use hbct::manifold::{self, ManifoldConfig};
use hbct::par::Exec;
use proptest::prelude::*;

fn lorentz_set(k: f64, dim: usize, n: usize, labels: u32) -> impl Strategy<Value = EmbeddingSet> {
    let cfg = ManifoldConfig::new(k, dim).unwrap();
    (
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), n),
        prop::collection::vec(0..labels, n),
    )
        .prop_map(move |(zs, labels)| {
            let rows = zs
                .iter()
                .map(|z| manifold::expm_origin(z, &cfg).to_ambient())
                .collect();
            EmbeddingSet::new(Geometry::Lorentz, k, 0, rows, labels).unwrap()
        })
}

fn pair() -> impl Strategy<Value = (EmbeddingSet, EmbeddingSet)> {
    (0.1f64..2.0, 1usize..5, 1usize..10, 1usize..25, 1u32..5)
        .prop_flat_map(|(k, d, nq, ng, l)| (lorentz_set(k, d, nq, l), lorentz_set(k, d, ng, l)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ranking_is_a_sorted_permutation((q, g) in pair()) {
        for i in 0..q.len() {
            let r = retrieve(q.query(i), &g).unwrap();
            let mut seen = r.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..g.len()).collect::<Vec<_>>());
            let cfg = ManifoldConfig::new(g.curvature(), g.dim() - 1).unwrap();
            let d = |j: usize| manifold::geodesic_distance_ambient(q.row(i), g.row(j), cfg.curvature()).unwrap();
            for w in r.windows(2) {
                prop_assert!(d(w[0]) <= d(w[1]) + 1e-9);
            }
        }
    }

    #[test]
    fn metrics_are_bounded_monotone_and_strategy_independent((q, g) in pair()) {
        let s = evaluate(&q, &g, g.len(), Exec::Sequential).unwrap();
        let p = evaluate(&q, &g, g.len(), Exec::Parallel).unwrap();
        prop_assert_eq!(&s.cmc, &p.cmc);
        prop_assert!(s.map.to_bits() == p.map.to_bits());
        for w in s.cmc.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        prop_assert!(s.cmc.iter().all(|c| (0.0..=1.0).contains(c)));
        prop_assert_eq!(s.cmc[0], cmc_at_k(&q, &g, 1).unwrap());
        if s.map.is_finite() {
            prop_assert!((0.0..=1.0).contains(&s.map));
            prop_assert_eq!(s.map, mean_average_precision(&q, &g).unwrap());
        } else {
            prop_assert!(mean_average_precision(&q, &g).is_err());
        }
    }
}

#[test]
fn tight_clusters_give_perfect_linear_retrieval() {
    let spec = SyntheticDatasetSpec {
        num_classes: 6,
        samples_per_class: 12,
        input_dim: 8,
        cluster_spread: 1e-6,
        class_center_scale: 4.0,
        seed: 5,
    };
    let ds = generate_dataset(&spec).unwrap();
    let mcfg = ManifoldConfig::new(1.0, 4).unwrap();
    let clip = ClipPolicy::default();
    let train = TrainConfig {
        epochs: 60,
        ..TrainConfig::default()
    };
    let t = train_old(
        &ds.train,
        ds.num_classes,
        &Arch::linear(),
        &mcfg,
        &clip,
        &train,
    )
    .unwrap();
    let q = embed_split(&t.model, &ds.query.features, &ds.query.labels, &clip, &mcfg).unwrap();
    let g = embed_split(
        &t.model,
        &ds.gallery.features,
        &ds.gallery.labels,
        &clip,
        &mcfg,
    )
    .unwrap();
    assert_eq!(cmc_at_k(&q, &g, 1).unwrap(), 1.0);
}
