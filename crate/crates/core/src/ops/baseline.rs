//! The non-weighted pooling variants: average, maximum, sum,
//! power-average, stochastic sampling, and stochastic spatial sampling.

use rand::Rng;
use rayon::prelude::*;

use super::rowpar::{split_rows, to_channel_major, RowPlan};
use super::{region_rng, PoolResult};
use crate::error::Result;
use crate::grid::{ActivationMap, PoolGeometry, Regions};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    Average,
    Maximum,
    Sum,
    /// Sign-preserving power mean; rho = 1 reproduces the average and
    /// large rho approaches the maximum.
    PowAverage { rho: f64 },
    /// Samples one member per region and channel with probability
    /// proportional to its activation. Regions with mixed-sign or
    /// all-zero values fall back to uniform sampling and are counted.
    Stochastic { seed: u64 },
    /// Samples one spatial offset per stride block and keeps that
    /// element in every channel.
    S3 { seed: u64 },
}

pub fn pool_baseline(
    kind: BaselineKind,
    map: &ActivationMap,
    geom: &PoolGeometry,
) -> Result<PoolResult> {
    let regions = Regions::new(map.spatial(), geom)?;
    let plan = RowPlan::new(&regions);
    let n = regions.n_regions();
    let channels = map.channels();
    let spatial_len = map.spatial_len();
    let data = map.data();

    let mut out_tmp = vec![0.0f64; n * channels];
    let out_rows = split_rows(&mut out_tmp, plan.uniform_lens(channels).into_iter());

    let fallbacks: usize = out_rows
        .into_par_iter()
        .enumerate()
        .map(|(row, out)| {
            let mut idxs: Vec<usize> = Vec::with_capacity(geom.kernel_volume());
            let mut row_fallbacks = 0usize;
            for (local, r) in plan.region_range(row).enumerate() {
                idxs.clear();
                regions.for_each_member(r, |i| idxs.push(i));
                let m = idxs.len();
                let out_region = &mut out[local * channels..(local + 1) * channels];
                match kind {
                    BaselineKind::Average => {
                        for (c, slot) in out_region.iter_mut().enumerate() {
                            let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                            *slot = idxs.iter().map(|&i| plane[i]).sum::<f64>() / m as f64;
                        }
                    }
                    BaselineKind::Maximum => {
                        for (c, slot) in out_region.iter_mut().enumerate() {
                            let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                            *slot = idxs
                                .iter()
                                .map(|&i| plane[i])
                                .fold(f64::NEG_INFINITY, f64::max);
                        }
                    }
                    BaselineKind::Sum => {
                        for (c, slot) in out_region.iter_mut().enumerate() {
                            let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                            *slot = idxs.iter().map(|&i| plane[i]).sum();
                        }
                    }
                    BaselineKind::PowAverage { rho } => {
                        for (c, slot) in out_region.iter_mut().enumerate() {
                            let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                            let inner = idxs
                                .iter()
                                .map(|&i| {
                                    let v = plane[i];
                                    v.signum() * v.abs().powf(rho)
                                })
                                .sum::<f64>()
                                / m as f64;
                            *slot = inner.signum() * inner.abs().powf(1.0 / rho);
                        }
                    }
                    BaselineKind::Stochastic { seed } => {
                        let mut rng = region_rng(seed, r);
                        for (c, slot) in out_region.iter_mut().enumerate() {
                            let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                            let u: f64 = rng.random();
                            let total: f64 = idxs.iter().map(|&i| plane[i]).sum();
                            let in_domain =
                                total > 0.0 && idxs.iter().all(|&i| plane[i] >= 0.0);
                            let pick = if in_domain {
                                let target = u * total;
                                let mut acc = 0.0;
                                let mut chosen = idxs[m - 1];
                                for &i in &idxs {
                                    acc += plane[i];
                                    if acc >= target {
                                        chosen = i;
                                        break;
                                    }
                                }
                                chosen
                            } else {
                                row_fallbacks += 1;
                                idxs[((u * m as f64) as usize).min(m - 1)]
                            };
                            *slot = plane[pick];
                        }
                    }
                    BaselineKind::S3 { seed } => {
                        let mut rng = region_rng(seed, r);
                        let (lo, hi) = regions.bounds(r);
                        // One in-bounds coordinate per real spatial
                        // dimension; leading lifted dims are fixed.
                        let mut coord = lo;
                        for d in 3 - geom.dims()..3 {
                            let u: f64 = rng.random();
                            let span = hi[d] - lo[d];
                            coord[d] = lo[d] + ((u * span as f64) as usize).min(span - 1);
                        }
                        let [_, h, w] = regions.input_lifted();
                        let pick = (coord[0] * h + coord[1]) * w + coord[2];
                        for (c, slot) in out_region.iter_mut().enumerate() {
                            let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                            *slot = plane[pick];
                        }
                    }
                }
            }
            row_fallbacks
        })
        .sum();

    let output = ActivationMap::from_parts(
        channels,
        regions.output_extents(),
        to_channel_major(&out_tmp, n, channels),
    );
    let mut result = PoolResult::bare(output, geom.clone());
    result.stochastic_fallbacks = fallbacks;
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn single_region(values: &[f64]) -> (ActivationMap, PoolGeometry) {
        let map = ActivationMap::new(1, vec![2, 2], values.to_vec()).unwrap();
        (map, PoolGeometry::uniform(2, 2).unwrap())
    }

    #[test]
    fn average_sum_maximum_examples() {
        let (map, geom) = single_region(&[1.0, 2.0, 3.0, 4.0]);
        let avg = pool_baseline(BaselineKind::Average, &map, &geom).unwrap();
        assert_eq!(avg.output.data(), &[2.5]);
        let sum = pool_baseline(BaselineKind::Sum, &map, &geom).unwrap();
        assert_eq!(sum.output.data(), &[10.0]);
        let (map, geom) = single_region(&[1.0, 5.0, 2.0, 3.0]);
        let max = pool_baseline(BaselineKind::Maximum, &map, &geom).unwrap();
        assert_eq!(max.output.data(), &[5.0]);
    }

    #[test]
    fn pow_average_with_unit_exponent_is_the_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f64> = (0..36).map(|_| rng.random_range(-4.0..4.0)).collect();
        let map = ActivationMap::new(1, vec![6, 6], data).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let pow = pool_baseline(BaselineKind::PowAverage { rho: 1.0 }, &map, &geom).unwrap();
        let avg = pool_baseline(BaselineKind::Average, &map, &geom).unwrap();
        for (a, b) in pow.output.data().iter().zip(avg.output.data()) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn pow_average_grows_toward_the_maximum() {
        let (map, geom) = single_region(&[1.0, 2.0, 3.0, 4.0]);
        let p2 = pool_baseline(BaselineKind::PowAverage { rho: 2.0 }, &map, &geom).unwrap();
        let p8 = pool_baseline(BaselineKind::PowAverage { rho: 8.0 }, &map, &geom).unwrap();
        assert!(p2.output.data()[0] > 2.5);
        assert!(p8.output.data()[0] > p2.output.data()[0]);
        assert!(p8.output.data()[0] < 4.0);
    }

    #[test]
    fn stochastic_on_a_constant_region_returns_the_constant() {
        for seed in 0..20 {
            let (map, geom) = single_region(&[3.25; 4]);
            let out = pool_baseline(BaselineKind::Stochastic { seed }, &map, &geom).unwrap();
            assert_eq!(out.output.data(), &[3.25]);
            assert_eq!(out.stochastic_fallbacks, 0);
        }
    }

    #[test]
    fn stochastic_falls_back_on_bad_domains() {
        let (map, geom) = single_region(&[0.0; 4]);
        let out = pool_baseline(BaselineKind::Stochastic { seed: 1 }, &map, &geom).unwrap();
        assert_eq!(out.output.data(), &[0.0]);
        assert_eq!(out.stochastic_fallbacks, 1);

        let (map, geom) = single_region(&[-1.0, 2.0, 3.0, 4.0]);
        let out = pool_baseline(BaselineKind::Stochastic { seed: 1 }, &map, &geom).unwrap();
        assert_eq!(out.stochastic_fallbacks, 1);
        assert!(map.data().contains(&out.output.data()[0]));
    }

    #[test]
    fn stochastic_picks_members_with_their_probabilities() {
        let (map, geom) = single_region(&[1.0, 2.0, 3.0, 4.0]);
        let mut counts = [0usize; 4];
        for seed in 0..4000 {
            let out = pool_baseline(BaselineKind::Stochastic { seed }, &map, &geom).unwrap();
            counts[out.output.data()[0] as usize - 1] += 1;
        }
        // Expected proportions 0.1/0.2/0.3/0.4.
        for (i, &n) in counts.iter().enumerate() {
            let expected = 4000.0 * (i + 1) as f64 / 10.0;
            assert!(
                (n as f64 - expected).abs() < 120.0,
                "member {i}: {n} vs expected {expected}"
            );
        }
    }

    #[test]
    fn seeded_runs_are_identical_and_seeds_differ() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(0.0..10.0)).collect();
        let map = ActivationMap::new(1, vec![8, 8], data).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        for kind in [BaselineKind::Stochastic { seed: 7 }, BaselineKind::S3 { seed: 7 }] {
            let a = pool_baseline(kind, &map, &geom).unwrap();
            let b = pool_baseline(kind, &map, &geom).unwrap();
            assert_eq!(a.output.data(), b.output.data());
        }
        let a = pool_baseline(BaselineKind::S3 { seed: 1 }, &map, &geom).unwrap();
        let b = pool_baseline(BaselineKind::S3 { seed: 2 }, &map, &geom).unwrap();
        assert_ne!(a.output.data(), b.output.data());
    }

    #[test]
    fn s3_picks_one_member_per_region_for_all_channels() {
        let map = ActivationMap::new(
            2,
            vec![2, 2],
            vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0],
        )
        .unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let out = pool_baseline(BaselineKind::S3 { seed: 5 }, &map, &geom).unwrap();
        let first = out.output.data()[0];
        let second = out.output.data()[1];
        // The same spatial offset must be used in both channels.
        assert_relative_eq!(second, first * 10.0, max_relative = 1e-12);
    }
}

