use crossalign::linalg::{frobenius, spectral_norm};
use crossalign::rcsls::{project_spectral, rcsls_objective, rcsls_subgradient};
use crossalign::retrieval::{csls_translate, nn_translate};
use crossalign::{
    ConstraintDomain, EmbeddingMatrix, LossVariant, MappingMatrix, NeighborPools, RetrievalOptions,
    ScorePrecision, Vocabulary,
};
use ndarray::Array2;
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0f64..2.0, rows * cols)
        .prop_map(move |v| Array2::from_shape_vec((rows, cols), v).unwrap())
}

fn unit_rows(rows: usize, cols: usize) -> impl Strategy<Value = Array2<f64>> {
    matrix(rows, cols).prop_map(|mut m| {
        for mut r in m.rows_mut() {
            let n = r.dot(&r).sqrt().max(1e-3);
            r /= n;
        }
        m
    })
}

fn embedding(m: Array2<f64>) -> EmbeddingMatrix {
    let vocab = Vocabulary::from_words((0..m.nrows()).map(|i| format!("w{i}"))).unwrap();
    EmbeddingMatrix::new(vocab, m).unwrap().l2_normalize()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn map_file_round_trip_is_exact(w in matrix(5, 5)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.txt");
        let map = MappingMatrix::new(w.clone(), ConstraintDomain::Unconstrained).unwrap();
        map.save(&path).unwrap();
        let back = MappingMatrix::load(&path).unwrap();
        prop_assert_eq!(back.matrix(), w.view());
    }

    #[test]
    fn projection_lands_in_ball_and_is_idempotent(m in matrix(6, 6)) {
        let p = project_spectral(m.view());
        prop_assert!(spectral_norm(p.view()) <= 1.0 + 1e-10);
        let pp = project_spectral(p.view());
        prop_assert!(frobenius((&pp - &p).view()) <= 1e-10);
    }

    #[test]
    fn projection_is_nonexpansive(a in matrix(4, 4), b in matrix(4, 4)) {
        let d = frobenius((&project_spectral(a.view()) - &project_spectral(b.view())).view());
        prop_assert!(d <= frobenius((&a - &b).view()) + 1e-10);
    }

    #[test]
    fn objective_is_convex_along_segments(
        x in unit_rows(6, 4),
        y in unit_rows(6, 4),
        a in matrix(4, 4),
        b in matrix(4, 4),
        t in 0.0f64..1.0,
    ) {
        let pools = NeighborPools::seeds(x.clone(), y.clone());
        for variant in [LossVariant::Linear, LossVariant::LogSumExp] {
            let f = |w: &Array2<f64>| rcsls_objective(w.view(), x.view(), y.view(), &pools, 3, variant).unwrap();
            let mid = &a * (1.0 - t) + &b * t;
            prop_assert!(f(&mid) <= (1.0 - t) * f(&a) + t * f(&b) + 1e-9);
        }
    }

    #[test]
    fn subgradient_supports_the_objective(
        x in unit_rows(5, 3),
        y in unit_rows(5, 3),
        w in matrix(3, 3),
        v in matrix(3, 3),
    ) {
        let pools = NeighborPools::seeds(x.clone(), y.clone());
        let f = |m: &Array2<f64>| rcsls_objective(m.view(), x.view(), y.view(), &pools, 2, LossVariant::Linear).unwrap();
        let g = rcsls_subgradient(w.view(), x.view(), y.view(), &pools, 2, LossVariant::Linear, 0.0).unwrap();
        let lin = f(&w) + (&g * &(&v - &w)).sum();
        prop_assert!(f(&v) >= lin - 1e-9);
    }

    #[test]
    fn retrieval_ignores_block_size_and_threads(
        x in unit_rows(12, 5),
        y in unit_rows(30, 5),
        w in matrix(5, 5),
        block in 1usize..40,
        k in 1usize..6,
    ) {
        let src = embedding(x);
        let tgt = embedding(y);
        let map = MappingMatrix::new(w, ConstraintDomain::Unconstrained).unwrap();
        let reference = RetrievalOptions::default();
        let opts = RetrievalOptions { block_size: block, precision: ScorePrecision::F64 };
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();

        let nn_a = nn_translate(&map, src.vectors(), &tgt, &reference).unwrap();
        let nn_b = pool.install(|| nn_translate(&map, src.vectors(), &tgt, &opts)).unwrap();
        prop_assert_eq!(nn_a.targets(), nn_b.targets());

        let cs_a = csls_translate(&map, src.vectors(), &tgt, &src, k, &reference).unwrap();
        let cs_b = pool.install(|| csls_translate(&map, src.vectors(), &tgt, &src, k, &opts)).unwrap();
        prop_assert_eq!(cs_a.targets(), cs_b.targets());
    }
}
