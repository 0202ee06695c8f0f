//! Property tests of the operator invariants: mask normalization,
//! shift invariance, betweenness, fusion degeneracies, determinism,
//! and agreement between the optimized and naive forwards.

use adapool::reference::{naive_pool, naive_pool_ada};
use adapool::{
    pool_ada, pool_edscw, pool_em, ActivationMap, BaselineKind, BetaMap, DistanceKind,
    PoolGeometry, PoolOperator,
};
use proptest::prelude::*;

fn map_strategy() -> impl Strategy<Value = (ActivationMap, usize)> {
    // Channels 1..3, extents that leave room for k in {2, 3}, values on
    // an image-like scale.
    (1usize..4, 6usize..20, 6usize..20, 2usize..4, any::<u64>()).prop_map(
        |(c, h, w, k, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..c * h * w).map(|_| rng.random_range(-20.0..235.0)).collect();
            (ActivationMap::new(c, vec![h, w], data).unwrap(), k)
        },
    )
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masks_are_normalized_and_positive((map, k) in map_strategy()) {
        let geom = PoolGeometry::uniform(2, k).unwrap();
        let out = geom.output_extents(map.spatial()).unwrap();
        let beta = BetaMap::constant(out, 0.5).unwrap();
        let saved = pool_ada(&map, &geom, &beta).unwrap();
        prop_assert!(saved.masks.unwrap().validate().is_ok());
    }

    #[test]
    fn em_weights_are_shift_invariant((map, k) in map_strategy(), shift in -50.0f64..50.0) {
        let geom = PoolGeometry::uniform(2, k).unwrap();
        let shifted = ActivationMap::new(
            map.channels(),
            map.spatial().to_vec(),
            map.data().iter().map(|v| v + shift).collect(),
        ).unwrap();
        let a = pool_em(&map, &geom).unwrap();
        let b = pool_em(&shifted, &geom).unwrap();
        let (ma, mb) = (a.masks.unwrap(), b.masks.unwrap());
        for (wa, wb) in ma.em_raw().unwrap().iter().zip(mb.em_raw().unwrap()) {
            prop_assert!((wa - wb).abs() <= 1e-12, "{wa} vs {wb}");
        }
    }

    #[test]
    fn outputs_stay_between_region_min_and_max((map, k) in map_strategy()) {
        let geom = PoolGeometry::uniform(2, k).unwrap();
        let regions = adapool::enumerate_regions(map.spatial(), &geom).unwrap();
        for result in [pool_em(&map, &geom).unwrap(), pool_edscw(&map, &geom).unwrap()] {
            let n = result.output.spatial_len();
            for (r, region) in regions.iter().enumerate() {
                for c in 0..map.channels() {
                    let vals: Vec<f64> =
                        region.member_indices.iter().map(|&i| map.channel(c)[i]).collect();
                    let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let y = result.output.data()[c * n + r];
                    prop_assert!(y >= lo - 1e-12 && y <= hi + 1e-12, "{lo} <= {y} <= {hi}");
                }
            }
        }
    }

    #[test]
    fn fusion_degeneracies_are_bitwise((map, k) in map_strategy()) {
        let geom = PoolGeometry::uniform(2, k).unwrap();
        let out = geom.output_extents(map.spatial()).unwrap();
        let em = pool_em(&map, &geom).unwrap();
        let edsc = pool_edscw(&map, &geom).unwrap();
        let ada0 = pool_ada(&map, &geom, &BetaMap::constant(out.clone(), 0.0).unwrap()).unwrap();
        let ada1 = pool_ada(&map, &geom, &BetaMap::constant(out, 1.0).unwrap()).unwrap();
        prop_assert_eq!(ada0.output.data(), em.output.data());
        prop_assert_eq!(ada1.output.data(), edsc.output.data());
    }

    #[test]
    fn optimized_forwards_match_the_naive_reference((map, k) in map_strategy(), seed in any::<u64>()) {
        let geom = PoolGeometry::uniform(2, k).unwrap();
        let ops = [
            PoolOperator::Baseline(BaselineKind::Average),
            PoolOperator::Baseline(BaselineKind::Maximum),
            PoolOperator::Baseline(BaselineKind::Sum),
            PoolOperator::Baseline(BaselineKind::PowAverage { rho: 3.0 }),
            PoolOperator::Baseline(BaselineKind::Stochastic { seed }),
            PoolOperator::Baseline(BaselineKind::S3 { seed }),
            PoolOperator::Idw(DistanceKind::Huber { delta: 0.5 }),
            PoolOperator::Em,
            PoolOperator::Edscw,
            PoolOperator::Ada { beta: 0.25 },
        ];
        for op in &ops {
            let fast = op.apply(&map, &geom).unwrap();
            let naive = naive_pool(op, &map, &geom).unwrap();
            for (a, b) in fast.output.data().iter().zip(naive.data()) {
                prop_assert!(close(*a, *b), "{}: {a} vs {b}", op.name());
            }
        }
    }

    #[test]
    fn ada_matches_naive_with_varying_beta((map, k) in map_strategy(), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let geom = PoolGeometry::uniform(2, k).unwrap();
        let out = geom.output_extents(map.spatial()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let values: Vec<f64> = (0..out.iter().product::<usize>())
            .map(|_| rng.random_range(0.0..1.0))
            .collect();
        let beta = BetaMap::new(values, out, true).unwrap();
        let fast = pool_ada(&map, &geom, &beta).unwrap();
        let naive = naive_pool_ada(&map, &geom, &beta).unwrap();
        for (a, b) in fast.output.data().iter().zip(naive.data()) {
            prop_assert!(close(*a, *b), "{a} vs {b}");
        }
    }

    #[test]
    fn forwards_are_reproducible((map, k) in map_strategy(), seed in any::<u64>()) {
        let geom = PoolGeometry::uniform(2, k).unwrap();
        for op in [
            PoolOperator::Baseline(BaselineKind::Stochastic { seed }),
            PoolOperator::Baseline(BaselineKind::S3 { seed }),
            PoolOperator::Em,
            PoolOperator::Ada { beta: 0.5 },
        ] {
            let a = op.apply(&map, &geom).unwrap();
            let b = op.apply(&map, &geom).unwrap();
            prop_assert_eq!(a.output.data(), b.output.data());
        }
    }
}

#[test]
fn three_dimensional_maps_share_the_code_path() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
    let data: Vec<f64> = (0..2 * 4 * 6 * 6).map(|_| rng.random_range(-2.0..2.0)).collect();
    let map = ActivationMap::new(2, vec![4, 6, 6], data).unwrap();
    let geom = PoolGeometry::uniform(3, 2).unwrap();
    let out = geom.output_extents(map.spatial()).unwrap();
    assert_eq!(out, vec![2, 3, 3]);
    let beta = BetaMap::constant(out, 0.5).unwrap();
    let fast = pool_ada(&map, &geom, &beta).unwrap();
    let naive = naive_pool_ada(&map, &geom, &beta).unwrap();
    for (a, b) in fast.output.data().iter().zip(naive.data()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
    fast.masks.unwrap().validate().unwrap();
}

#[test]
fn results_are_stable_across_thread_counts() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    let data: Vec<f64> = (0..3 * 32 * 32).map(|_| rng.random_range(0.0..255.0)).collect();
    let map = ActivationMap::new(3, vec![32, 32], data).unwrap();
    let geom = PoolGeometry::uniform(2, 2).unwrap();

    let here = pool_em(&map, &geom).unwrap();
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| pool_em(&map, &geom).unwrap());
    assert_eq!(here.output.data(), single.output.data());
    assert_eq!(
        here.masks.unwrap().em_raw().unwrap(),
        single.masks.unwrap().em_raw().unwrap()
    );
}
