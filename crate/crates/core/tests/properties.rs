use groupvae::data::{build_grid_dataset, default_toy_spec, enumerate_grid, sample_pair, FactorSpec, Group, GroupSpec};
use groupvae::distributions::{
    gumbel_softmax_sample, kl_categorical, kl_gaussian, product_of_gaussians, CategoricalDist, DiagGaussian,
};
use groupvae::metrics::{
    estimate_mi_with, group_mig, kl_decomposition_check, mig, Binning, CategoricalToy, MetricOptions,
};
use groupvae::model::LatentPartition;
use ndarray::Array2;
use proptest::prelude::*;

fn gaussian(dim: usize) -> impl Strategy<Value = DiagGaussian> {
    (
        prop::collection::vec(-3.0..3.0f64, dim),
        prop::collection::vec(-4.0..4.0f64, dim),
    )
        .prop_map(|(m, lv)| DiagGaussian::new(m, lv).unwrap())
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.05..1.0f64, k).prop_map(|w| {
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gaussian_kl_is_non_negative(a in gaussian(3), b in gaussian(3)) {
        prop_assert!(kl_gaussian(&a, &b).unwrap() >= -1e-12);
        prop_assert!(kl_gaussian(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn constant_variance_kl_is_scaled_distance(
        ma in prop::collection::vec(-3.0..3.0f64, 4),
        mb in prop::collection::vec(-3.0..3.0f64, 4),
        lv in -3.0..3.0f64,
    ) {
        let a = DiagGaussian::new(ma.clone(), vec![lv; 4]).unwrap();
        let b = DiagGaussian::new(mb.clone(), vec![lv; 4]).unwrap();
        let d2: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum();
        let want = d2 / (2.0 * lv.exp());
        prop_assert!((kl_gaussian(&a, &b).unwrap() - want).abs() < 1e-12 * want.max(1.0));
    }

    #[test]
    fn product_is_commutative_and_associative(a in gaussian(2), b in gaussian(2), c in gaussian(2)) {
        let ab = product_of_gaussians(&a, &b).unwrap();
        let ba = product_of_gaussians(&b, &a).unwrap();
        for (x, y) in ab.mean().iter().zip(ba.mean()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
        let left = product_of_gaussians(&ab, &c).unwrap();
        let right = product_of_gaussians(&a, &product_of_gaussians(&b, &c).unwrap()).unwrap();
        for (x, y) in left.mean().iter().zip(right.mean()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
        for (x, y) in left.log_var().iter().zip(right.log_var()) {
            prop_assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn categorical_kl_is_non_negative(p in simplex(4), q in simplex(4)) {
        let p = CategoricalDist::new(p).unwrap();
        let q = CategoricalDist::new(q).unwrap();
        prop_assert!(kl_categorical(&p, &q).unwrap() >= -1e-12);
        prop_assert!(kl_categorical(&p, &p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn gumbel_softmax_is_a_distribution(p in simplex(5), u in prop::collection::vec(0.001..0.999f64, 5), t in 0.1..3.0f64) {
        let y = gumbel_softmax_sample(&CategoricalDist::new(p).unwrap(), t, &u).unwrap();
        prop_assert!((y.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(y.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn mi_is_invariant_to_factor_relabeling(
        z in prop::collection::vec(-2.0..2.0f64, 60),
        perm in Just(vec![2usize, 0, 1]).prop_shuffle(),
    ) {
        let f = Array2::from_shape_fn((60, 1), |(i, _)| (i * 7 + (z[i] > 0.0) as usize) % 3);
        let relabeled = f.mapv(|v| perm[v]);
        let zs = Array2::from_shape_vec((60, 1), z).unwrap();
        let a = estimate_mi_with(zs.view(), f.view(), 5, Binning::EqualWidth).unwrap();
        let b = estimate_mi_with(zs.view(), relabeled.view(), 5, Binning::EqualWidth).unwrap();
        prop_assert!((a.values[[0, 0]] - b.values[[0, 0]]).abs() < 1e-12);
    }

    #[test]
    fn scores_are_invariant_to_monotone_maps(noise in prop::collection::vec(-0.4..0.4f64, 576 * 10), k in 0.2..3.0f64) {
        let (spec, groups) = default_toy_spec();
        let f = enumerate_grid(spec.cardinalities());
        let part = LatentPartition::equal_split(&["content", "style"], 10).unwrap();
        let z = Array2::from_shape_fn((576, 10), |(i, j)| f[[i, j % 5]] as f64 + noise[i * 10 + j]);
        let opts = MetricOptions { binning: Binning::EqualCount, ..MetricOptions::default() };
        let strictly = z.mapv(|v| (k * v).exp());
        let a = group_mig(z.view(), f.view(), &groups, &part, opts).unwrap();
        let b = group_mig(strictly.view(), f.view(), &groups, &part, opts).unwrap();
        prop_assert!((a.group_mig - b.group_mig).abs() < 0.02);
        prop_assert!((a.mig - b.mig).abs() < 0.02);
        let mi = estimate_mi_with(z.view(), f.view(), 20, Binning::EqualCount).unwrap();
        prop_assert!(mig(&mi).unwrap() >= -1e-12);
    }

    #[test]
    fn decomposition_identity_holds(
        pn in simplex(4),
        q in prop::collection::vec(simplex(3), 8),
        prior in prop::collection::vec(simplex(3), 2),
    ) {
        let toy = CategoricalToy {
            data_probs: pn,
            posteriors: q.chunks(2).map(|c| c.to_vec()).collect(),
            prior,
        };
        let r = kl_decomposition_check(&toy, Some(&[vec![0], vec![1]])).unwrap();
        prop_assert!(r.residual().abs() < 1e-9);
        prop_assert!(r.index_code_mi >= -1e-12 && r.total_correlation >= -1e-12 && r.dimension_wise_kl >= -1e-12);
    }

    #[test]
    fn pairs_share_their_group(seed in 0u64..1000) {
        let spec = FactorSpec::new(vec!["a".into(), "b".into(), "c".into()], vec![2, 3, 2]).unwrap();
        let groups = GroupSpec::new(
            vec![
                Group { name: "g0".into(), factors: vec![0, 2] },
                Group { name: "g1".into(), factors: vec![1] },
            ],
            3,
        )
        .unwrap();
        let ds = build_grid_dataset(spec, groups.clone(), 6, 0).unwrap();
        let b = sample_pair(&ds, seed, 32).unwrap();
        for i in 0..b.len() {
            let g = &groups.groups()[b.shared_group[i]];
            for &f in &g.factors {
                prop_assert_eq!(ds.factors(b.x_index[i])[f], ds.factors(b.x_prime_index[i])[f]);
            }
        }
    }
}
