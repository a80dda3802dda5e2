use multishap_core::heatmap::{render_grid, HeatmapSpec};
use multishap_core::{
    estimate, instance_metrics, CellMatrix, Coalition, EstimatorConfig, ExactOracle, FeatureSpace, FnScorer, Mode,
    Normalization, SyntheticGame,
};
use proptest::prelude::*;

fn space_and_members() -> impl Strategy<Value = (FeatureSpace, Vec<usize>)> {
    (1usize..6, 1usize..6).prop_flat_map(|(m, n)| {
        let total = m + n;
        (Just(FeatureSpace::new(m, n).unwrap()), proptest::collection::vec(0..total, 0..total * 2))
    })
}

/// Deterministic pseudo-random table game on `total` features with real
/// higher-order structure.
fn table_game(total: usize, seed: u64) -> Vec<f64> {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) | 1;
    (0..1usize << total)
        .map(|_| {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            (x >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        })
        .collect()
}

fn table_scorer(table: &[f64]) -> FnScorer<impl FnMut(&Coalition) -> f64 + '_> {
    FnScorer(move |c: &Coalition| table[c.mask().unwrap() as usize])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn modality_split_partitions((space, members) in space_and_members()) {
        let c = space.coalition(&members).unwrap();
        let (v, t) = space.split_by_modality(&c).unwrap();
        prop_assert_eq!(v.len() + t.len(), c.len());
        prop_assert!(v.iter().all(|k| k < space.patches()));
        prop_assert!(t.iter().all(|k| k >= space.patches()));
        let mut joined = v.to_vec();
        joined.extend(t.iter());
        prop_assert_eq!(space.coalition(&joined).unwrap(), c);
    }

    #[test]
    fn coalition_is_idempotent((space, members) in space_and_members()) {
        let c = space.coalition(&members).unwrap();
        prop_assert_eq!(space.coalition(&c.to_vec()).unwrap(), c.clone());
        let sorted = c.to_vec();
        prop_assert!(sorted.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn adding_an_absent_pair_grows_by_two((space, members) in space_and_members(), i in 0usize..5, j in 0usize..5) {
        let c = space.coalition(&members).unwrap();
        let (i, j) = (i % space.patches(), space.token_index(j % space.tokens()));
        if !c.contains(i) && !c.contains(j) {
            prop_assert_eq!(c.with_pair(i, j).len(), c.len() + 2);
        }
    }

    #[test]
    fn metrics_ignore_cell_order(cells in proptest::collection::vec(-5.0f64..5.0, 1..30), rot in 0usize..30) {
        let a = CellMatrix::from_cells(1, cells.len(), cells.iter().copied().map(Some).collect()).unwrap();
        let mut shuffled = cells.clone();
        shuffled.rotate_left(rot % cells.len());
        shuffled.reverse();
        let b = CellMatrix::from_cells(cells.len(), 1, shuffled.into_iter().map(Some).collect()).unwrap();
        let (ma, mb) = (instance_metrics(&a).unwrap(), instance_metrics(&b).unwrap());
        prop_assert!((ma.total - mb.total).abs() <= 1e-12 * (1.0 + ma.total));
        match (ma.ratio, mb.ratio) {
            (Some(x), Some(y)) => prop_assert!((x - y).abs() <= 1e-12),
            (x, y) => prop_assert_eq!(x, y),
        }
    }

    #[test]
    fn ratio_scales_and_flips(cells in proptest::collection::vec(-5.0f64..5.0, 1..30), c in 0.01f64..100.0) {
        let phi = CellMatrix::from_cells(1, cells.len(), cells.iter().copied().map(Some).collect()).unwrap();
        let base = instance_metrics(&phi).unwrap();
        let scaled = instance_metrics(&phi.map(|v| c * v)).unwrap();
        let negated = instance_metrics(&phi.map(|v| -v)).unwrap();
        prop_assert!((scaled.total - c * base.total).abs() <= 1e-9 * (1.0 + c * base.total));
        if let Some(r) = base.ratio {
            prop_assert!((scaled.ratio.unwrap() - r).abs() <= 1e-12);
            prop_assert!((negated.ratio.unwrap() - (1.0 - r)).abs() <= 1e-12);
        } else {
            prop_assert_eq!(scaled.ratio, None);
            prop_assert_eq!(negated.ratio, None);
        }
    }

    #[test]
    fn relabeling_within_a_group_permutes_sii(seed in any::<u64>(), m in 1usize..4, n in 1usize..4, shift in 1usize..4) {
        let space = FeatureSpace::new(m, n).unwrap();
        let table = table_game(space.total(), seed);
        // Cyclic relabeling of the patches: feature k of the new game is
        // feature perm[k] of the old one.
        let perm: Vec<usize> = (0..space.total()).map(|k| if k < m { (k + shift) % m } else { k }).collect();
        let mut relabeled = FnScorer(|c: &Coalition| {
            let mask = c.iter().fold(0u64, |acc, k| acc | 1 << perm[k]);
            table[mask as usize]
        });
        let a = ExactOracle::tabulate(&mut table_scorer(&table), &space, 20).unwrap();
        let b = ExactOracle::tabulate(&mut relabeled, &space, 20).unwrap();
        for i in 0..m {
            for j in 0..n {
                let x = b.sii(i, space.token_index(j), Normalization::Half).unwrap();
                let y = a.sii(perm[i], space.token_index(j), Normalization::Half).unwrap();
                prop_assert!((x - y).abs() <= 1e-12, "({}, {}): {} vs {}", i, j, x, y);
            }
        }
    }

    #[test]
    fn shapley_values_are_efficient(seed in any::<u64>(), m in 1usize..4, n in 1usize..4) {
        let space = FeatureSpace::new(m, n).unwrap();
        let table = table_game(space.total(), seed);
        let oracle = ExactOracle::tabulate(&mut table_scorer(&table), &space, 20).unwrap();
        let sum: f64 = oracle.shapley_values().iter().sum();
        let full = (1u64 << space.total()) - 1;
        prop_assert!((sum - (oracle.value(full) - oracle.value(0))).abs() <= 1e-12);
    }

    #[test]
    fn exact_sii_is_linear_in_the_game(seed in any::<u64>(), c in -10.0f64..10.0) {
        let space = FeatureSpace::new(2, 3).unwrap();
        let table = table_game(space.total(), seed);
        let scaled: Vec<f64> = table.iter().map(|v| c * v).collect();
        let a = ExactOracle::tabulate(&mut table_scorer(&table), &space, 20).unwrap();
        let b = ExactOracle::tabulate(&mut table_scorer(&scaled), &space, 20).unwrap();
        for (x, y) in a.sii_matrix(Normalization::Half).cells().iter().zip(b.sii_matrix(Normalization::Half).cells()) {
            prop_assert!((c * x.unwrap() - y.unwrap()).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn classical_is_twice_half(seed in any::<u64>()) {
        let space = FeatureSpace::new(2, 2).unwrap();
        let table = table_game(space.total(), seed);
        let o = ExactOracle::tabulate(&mut table_scorer(&table), &space, 20).unwrap();
        let (p, c) = (o.sii_matrix(Normalization::Half), o.sii_matrix(Normalization::Classical));
        for (x, y) in p.cells().iter().zip(c.cells()) {
            prop_assert!((2.0 * x.unwrap() - y.unwrap()).abs() <= 1e-12);
        }
    }

    #[test]
    fn cache_is_transparent(seed in any::<u64>(), k in 1usize..64, uniform in any::<bool>()) {
        let space = FeatureSpace::new(3, 2).unwrap();
        let table = table_game(space.total(), seed);
        let mode = if uniform { Mode::Uniform } else { Mode::Stratified };
        let mut on = EstimatorConfig::new(mode, k, seed);
        on.cache = true;
        let off = EstimatorConfig { cache: false, ..on.clone() };
        let a = estimate(&mut table_scorer(&table), &space, &on).unwrap();
        let b = estimate(&mut table_scorer(&table), &space, &off).unwrap();
        prop_assert_eq!(a.phi, b.phi);
        prop_assert!(a.evals_used <= b.evals_used);
    }

    #[test]
    fn estimates_scale_with_the_game(seed in any::<u64>(), k in 1usize..64, c in 0.1f64..10.0) {
        let space = FeatureSpace::new(3, 2).unwrap();
        let table = table_game(space.total(), seed);
        let scaled: Vec<f64> = table.iter().map(|v| c * v).collect();
        let config = EstimatorConfig::new(Mode::Stratified, k, seed);
        let a = estimate(&mut table_scorer(&table), &space, &config).unwrap();
        let b = estimate(&mut table_scorer(&scaled), &space, &config).unwrap();
        for (x, y) in a.phi.cells().iter().zip(b.phi.cells()) {
            match (x, y) {
                (Some(x), Some(y)) => prop_assert!((c * x - y).abs() <= 1e-9 * (1.0 + y.abs())),
                (x, y) => prop_assert_eq!(x.is_none(), y.is_none()),
            }
        }
    }

    #[test]
    fn budget_is_bounded(seed in any::<u64>(), k in 1usize..200, m in 1usize..5, n in 1usize..5, uniform in any::<bool>()) {
        let space = FeatureSpace::new(m, n).unwrap();
        let mut game = SyntheticGame::random_multilinear(space.clone(), seed, 0.5).unwrap();
        let mode = if uniform { Mode::Uniform } else { Mode::Stratified };
        let config = EstimatorConfig { cache: false, ..EstimatorConfig::new(mode, k, seed) };
        let est = estimate(&mut game, &space, &config).unwrap();
        let bound = (k * (1 + (m + n) + m * n) + 1) as u64;
        prop_assert!(est.evals_used <= bound);
    }

    #[test]
    fn rendering_ignores_scale_and_negation_swaps_poles(values in proptest::collection::vec(-3.0f64..3.0, 6), c in 0.01f64..100.0) {
        let spec = HeatmapSpec { cell_px: 2, alpha: 0.6 };
        let cells: Vec<Option<f64>> = values.iter().copied().map(Some).collect();
        let scaled: Vec<Option<f64>> = values.iter().map(|v| Some(v * c)).collect();
        let negated: Vec<Option<f64>> = values.iter().map(|v| Some(-v)).collect();
        let (a, _) = render_grid(&cells, 2, 3, &spec).unwrap();
        let (b, _) = render_grid(&scaled, 2, 3, &spec).unwrap();
        let (n, _) = render_grid(&negated, 2, 3, &spec).unwrap();
        for (pa, pb) in a.pixels.chunks(4).zip(b.pixels.chunks(4)) {
            // Normalized values can differ in the last bit after scaling.
            prop_assert!(pa.iter().zip(pb).all(|(x, y)| x.abs_diff(*y) <= 1));
        }
        for (pa, pn) in a.pixels.chunks(4).zip(n.pixels.chunks(4)) {
            prop_assert_eq!([pa[2], pa[1], pa[0], pa[3]], [pn[0], pn[1], pn[2], pn[3]]);
        }
    }
}
