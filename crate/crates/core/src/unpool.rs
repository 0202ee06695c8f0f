//! Inverse operators: nearest inflation and the mask-driven adaUnPool.

use crate::error::{Error, Result};
use crate::grid::{ActivationMap, PoolGeometry, Regions};
use crate::ops::{BetaMap, WeightMasks};

/// Everything adaUnPool needs: the pooled map, the stored weight
/// masks, the fusion parameter, and the resolution to restore.
/// Only non-overlapping (stride = kernel, no padding) geometries are
/// supported.
#[derive(Debug, Clone)]
pub struct UnpoolInput<'a> {
    pub pooled: &'a ActivationMap,
    pub masks: &'a WeightMasks,
    pub beta: &'a BetaMap,
    pub target_shape: &'a [usize],
    /// Re-apply a softmax to the stored eDSC weights before blending.
    /// This is the literal reading of the upsampling formula; the
    /// default reuses the stored normalized weights so that pool and
    /// unpool stay symmetric.
    pub double_softmax: bool,
}

fn check_tiling(geom: &PoolGeometry, pooled: &ActivationMap, target: &[usize]) -> Result<()> {
    if !geom.is_tiling() {
        return Err(Error::Shape(
            "unpooling requires stride = kernel and no padding".into(),
        ));
    }
    let out = geom.output_extents(target)?;
    if out != pooled.spatial() {
        return Err(Error::Shape(format!(
            "pooled extents {:?} inconsistent with target {:?} under this geometry (expected {:?})",
            pooled.spatial(),
            target,
            out
        )));
    }
    Ok(())
}

/// Replicates each pooled value over its originating kernel region.
/// Remainder rows/columns beyond the tiled area copy the nearest region.
pub fn nearest_inflate(
    pooled: &ActivationMap,
    geom: &PoolGeometry,
    target_shape: &[usize],
) -> Result<ActivationMap> {
    check_tiling(geom, pooled, target_shape)?;
    let channels = pooled.channels();

    // Lift to 3D so one loop serves both ranks.
    let lift = |src: &[usize], fill: usize| -> [usize; 3] {
        let mut a = [fill; 3];
        a[3 - src.len()..].copy_from_slice(src);
        a
    };
    let tgt = lift(target_shape, 1);
    let out = lift(pooled.spatial(), 1);
    let k = lift(geom.kernel(), 1);

    let mut data = vec![0.0f64; channels * tgt.iter().product::<usize>()];
    let plane_len = tgt.iter().product::<usize>();
    for c in 0..channels {
        let src = pooled.channel(c);
        let dst = &mut data[c * plane_len..(c + 1) * plane_len];
        let mut pos = 0;
        for t in 0..tgt[0] {
            let rt = (t / k[0]).min(out[0] - 1);
            for y in 0..tgt[1] {
                let ry = (y / k[1]).min(out[1] - 1);
                let row = (rt * out[1] + ry) * out[2];
                for x in 0..tgt[2] {
                    let rx = (x / k[2]).min(out[2] - 1);
                    dst[pos] = src[row + rx];
                    pos += 1;
                }
            }
        }
    }
    Ok(ActivationMap::from_parts(channels, target_shape.to_vec(), data))
}

/// Bilinear inflation of a 2D pooled map to the target resolution
/// (half-pixel centers). Available for sensitivity analysis next to
/// the nearest protocol.
pub fn bilinear_inflate(pooled: &ActivationMap, target_shape: &[usize]) -> Result<ActivationMap> {
    if pooled.spatial().len() != 2 || target_shape.len() != 2 {
        return Err(Error::Shape("bilinear inflation supports 2D maps only".into()));
    }
    let (sh, sw) = (pooled.spatial()[0], pooled.spatial()[1]);
    let (th, tw) = (target_shape[0], target_shape[1]);
    let channels = pooled.channels();
    let mut data = vec![0.0f64; channels * th * tw];
    let scale_y = sh as f64 / th as f64;
    let scale_x = sw as f64 / tw as f64;
    for c in 0..channels {
        let src = pooled.channel(c);
        let dst = &mut data[c * th * tw..(c + 1) * th * tw];
        for y in 0..th {
            let fy = ((y as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let wy = fy - y0 as f64;
            for x in 0..tw {
                let fx = ((x as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(sw - 1);
                let wx = fx - x0 as f64;
                let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
                let bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
                dst[y * tw + x] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Ok(ActivationMap::from_parts(channels, target_shape.to_vec(), data))
}

/// Distributes each pooled value back over its region with the blended
/// stored weights: member `i` receives
/// `(beta * w_dsc_i + (1 - beta) * w_em_i) * pooled`. The blend of two
/// normalized weight vectors is normalized, so every region's outputs
/// sum back to the pooled value.
pub fn ada_unpool(input: &UnpoolInput<'_>) -> Result<ActivationMap> {
    let pooled = input.pooled;
    let masks = input.masks;
    let beta = input.beta;
    let geom = masks.geometry();
    check_tiling(geom, pooled, input.target_shape)?;
    if beta.spatial() != pooled.spatial() {
        return Err(Error::Shape(format!(
            "beta extents {:?} do not match pooled extents {:?}",
            beta.spatial(),
            pooled.spatial()
        )));
    }
    if masks.channels() != pooled.channels() {
        return Err(Error::Shape(format!(
            "mask channels {} do not match pooled channels {}",
            masks.channels(),
            pooled.channels()
        )));
    }
    let regions = Regions::new(input.target_shape, geom)?;
    let n = regions.n_regions();
    if masks.n_regions() != n {
        return Err(Error::Shape("mask region count does not match geometry".into()));
    }

    let need_edsc = beta.values().iter().any(|&b| b > 0.0);
    let need_em = beta.values().iter().any(|&b| b < 1.0);
    if need_edsc && masks.edsc_raw().is_none() {
        return Err(Error::MissingState("edsc weights"));
    }
    if need_em && masks.em_raw().is_none() {
        return Err(Error::MissingState("em weights"));
    }

    let channels = pooled.channels();
    let spatial_len: usize = input.target_shape.iter().product();
    let mut data = vec![0.0f64; channels * spatial_len];
    let mut idxs: Vec<usize> = Vec::with_capacity(geom.kernel_volume());
    let mut dsc_scratch: Vec<f64> = Vec::with_capacity(geom.kernel_volume());

    for r in 0..n {
        idxs.clear();
        regions.for_each_member(r, |i| idxs.push(i));
        let m = idxs.len();
        let b = beta.values()[r];

        let edsc_lane: Option<&[f64]> = if b > 0.0 {
            let lane = masks.edsc_region(r).unwrap();
            if input.double_softmax {
                dsc_scratch.clear();
                let mx = lane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut denom = 0.0;
                for &w in lane {
                    let e = (w - mx).exp();
                    dsc_scratch.push(e);
                    denom += e;
                }
                for w in dsc_scratch.iter_mut() {
                    *w /= denom;
                }
                Some(&dsc_scratch[..])
            } else {
                Some(lane)
            }
        } else {
            None
        };
        let em_block: Option<&[f64]> = if b < 1.0 { masks.em_region(r) } else { None };

        for c in 0..channels {
            let v = pooled.value(c, r);
            let plane = &mut data[c * spatial_len..(c + 1) * spatial_len];
            for (j, &i) in idxs.iter().enumerate() {
                let wd = edsc_lane.map_or(0.0, |lane| lane[j]);
                let we = em_block.map_or(0.0, |blk| blk[c * m + j]);
                plane[i] = (b * wd + (1.0 - b) * we) * v;
            }
        }
    }

    // Remainder rows/columns beyond the tiled area replicate the
    // nearest computed cell so the output always matches target_shape.
    fill_remainder(&mut data, channels, input.target_shape, geom);

    Ok(ActivationMap::from_parts(channels, input.target_shape.to_vec(), data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{pool_ada, pool_em, BetaMap};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn nearest_inflate_replicates_one_value() {
        let pooled = ActivationMap::new(1, vec![1, 1], vec![4.0]).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let out = nearest_inflate(&pooled, &geom, &[2, 2]).unwrap();
        assert_eq!(out.data(), &[4.0; 4]);
    }

    #[test]
    fn nearest_inflate_tiles_blocks() {
        let pooled = ActivationMap::new(1, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let out = nearest_inflate(&pooled, &geom, &[4, 4]).unwrap();
        #[rustfmt::skip]
        let expected = [
            1.0, 1.0, 2.0, 2.0,
            1.0, 1.0, 2.0, 2.0,
            3.0, 3.0, 4.0, 4.0,
            3.0, 3.0, 4.0, 4.0,
        ];
        assert_eq!(out.data(), &expected);
    }

    #[test]
    fn nearest_inflate_with_unit_kernel_is_identity() {
        let pooled =
            ActivationMap::new(2, vec![2, 3], (0..12).map(f64::from).collect()).unwrap();
        let geom = PoolGeometry::uniform(2, 1).unwrap();
        let out = nearest_inflate(&pooled, &geom, &[2, 3]).unwrap();
        assert_eq!(out.data(), pooled.data());
    }

    #[test]
    fn nearest_inflate_replicates_the_remainder() {
        // 5x5 target with k = 2 pools to 2x2; the last row/col copy
        // their nearest region.
        let pooled = ActivationMap::new(1, vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let out = nearest_inflate(&pooled, &geom, &[5, 5]).unwrap();
        assert_eq!(out.spatial(), &[5, 5]);
        assert_eq!(out.value(0, 4), 2.0); // row 0, col 4 -> region (0, 1)
        assert_eq!(out.value(0, 24), 4.0); // bottom-right corner
    }

    #[test]
    fn nearest_inflate_rejects_inconsistent_targets() {
        let pooled = ActivationMap::new(1, vec![2, 2], vec![0.0; 4]).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        assert!(nearest_inflate(&pooled, &geom, &[9, 9]).is_err());
        let overlapping = PoolGeometry::new(vec![2, 2], vec![1, 1], vec![0, 0]).unwrap();
        assert!(nearest_inflate(&pooled, &overlapping, &[4, 4]).is_err());
    }

    fn manual_masks(em: Vec<f64>, edsc: Vec<f64>) -> WeightMasks {
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        WeightMasks::from_parts(geom, 1, vec![0, 4], Some(em), Some(edsc)).unwrap()
    }

    #[test]
    fn ada_unpool_uniform_masks_split_evenly() {
        let masks = manual_masks(vec![0.25; 4], vec![0.25; 4]);
        let pooled = ActivationMap::new(1, vec![1, 1], vec![4.0]).unwrap();
        let beta = BetaMap::constant(vec![1, 1], 0.5).unwrap();
        let out = ada_unpool(&UnpoolInput {
            pooled: &pooled,
            masks: &masks,
            beta: &beta,
            target_shape: &[2, 2],
            double_softmax: false,
        })
        .unwrap();
        assert_eq!(out.data(), &[1.0; 4]);
        assert_eq!(out.data().iter().sum::<f64>(), 4.0);
    }

    #[test]
    fn ada_unpool_beta_zero_uses_the_em_mask() {
        let masks = manual_masks(vec![0.7, 0.1, 0.1, 0.1], vec![0.25; 4]);
        let pooled = ActivationMap::new(1, vec![1, 1], vec![10.0]).unwrap();
        let beta = BetaMap::constant(vec![1, 1], 0.0).unwrap();
        let out = ada_unpool(&UnpoolInput {
            pooled: &pooled,
            masks: &masks,
            beta: &beta,
            target_shape: &[2, 2],
            double_softmax: false,
        })
        .unwrap();
        assert_eq!(out.data(), &[7.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn round_trip_preserves_region_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data: Vec<f64> = (0..64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let map = ActivationMap::new(1, vec![8, 8], data).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let beta_values: Vec<f64> = (0..16).map(|_| rng.random_range(0.0..1.0)).collect();
        let beta = BetaMap::new(beta_values, vec![4, 4], true).unwrap();
        let saved = pool_ada(&map, &geom, &beta).unwrap();
        let masks = saved.masks.as_ref().unwrap();
        let out = ada_unpool(&UnpoolInput {
            pooled: &saved.output,
            masks,
            beta: &beta,
            target_shape: &[8, 8],
            double_softmax: false,
        })
        .unwrap();
        // Brute-force oracle: sum the restored values over every 2x2 block.
        for by in 0..4 {
            for bx in 0..4 {
                let mut sum = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        sum += out.value(0, (by * 2 + dy) * 8 + (bx * 2 + dx));
                    }
                }
                let pooled_v = saved.output.value(0, by * 4 + bx);
                assert!((sum - pooled_v).abs() <= 1e-12, "block ({by},{bx}): {sum} vs {pooled_v}");
            }
        }
    }

    #[test]
    fn ada_unpool_is_linear_in_the_pooled_map() {
        let masks = manual_masks(vec![0.4, 0.3, 0.2, 0.1], vec![0.1, 0.2, 0.3, 0.4]);
        let beta = BetaMap::constant(vec![1, 1], 0.25).unwrap();
        let a = ActivationMap::new(1, vec![1, 1], vec![2.0]).unwrap();
        let b = ActivationMap::new(1, vec![1, 1], vec![-5.0]).unwrap();
        let sum = ActivationMap::new(1, vec![1, 1], vec![-3.0]).unwrap();
        let run = |pooled: &ActivationMap| {
            ada_unpool(&UnpoolInput {
                pooled,
                masks: &masks,
                beta: &beta,
                target_shape: &[2, 2],
                double_softmax: false,
            })
            .unwrap()
        };
        let (ua, ub, us) = (run(&a), run(&b), run(&sum));
        for i in 0..4 {
            assert_relative_eq!(us.data()[i], ua.data()[i] + ub.data()[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn double_softmax_flattens_toward_uniform_but_keeps_mass() {
        let masks = manual_masks(vec![0.25; 4], vec![0.7, 0.1, 0.1, 0.1]);
        let pooled = ActivationMap::new(1, vec![1, 1], vec![8.0]).unwrap();
        let beta = BetaMap::constant(vec![1, 1], 1.0).unwrap();
        let plain = ada_unpool(&UnpoolInput {
            pooled: &pooled,
            masks: &masks,
            beta: &beta,
            target_shape: &[2, 2],
            double_softmax: false,
        })
        .unwrap();
        let doubled = ada_unpool(&UnpoolInput {
            pooled: &pooled,
            masks: &masks,
            beta: &beta,
            target_shape: &[2, 2],
            double_softmax: true,
        })
        .unwrap();
        assert_eq!(plain.data()[0], 0.7 * 8.0);
        assert!(doubled.data()[0] < plain.data()[0]);
        assert_relative_eq!(doubled.data().iter().sum::<f64>(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn missing_masks_are_reported() {
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let em_only =
            WeightMasks::from_parts(geom, 1, vec![0, 4], Some(vec![0.25; 4]), None).unwrap();
        let pooled = ActivationMap::new(1, vec![1, 1], vec![1.0]).unwrap();
        let beta = BetaMap::constant(vec![1, 1], 0.5).unwrap();
        let err = ada_unpool(&UnpoolInput {
            pooled: &pooled,
            masks: &em_only,
            beta: &beta,
            target_shape: &[2, 2],
            double_softmax: false,
        })
        .unwrap_err();
        assert!(matches!(err, Error::MissingState(_)));
        // With beta = 0 the em mask alone suffices.
        let beta0 = BetaMap::constant(vec![1, 1], 0.0).unwrap();
        assert!(ada_unpool(&UnpoolInput {
            pooled: &pooled,
            masks: &em_only,
            beta: &beta0,
            target_shape: &[2, 2],
            double_softmax: false,
        })
        .is_ok());
    }

    #[test]
    fn ada_unpool_on_em_pooled_constant_reproduces_uniform_split() {
        let map = ActivationMap::new(1, vec![2, 2], vec![6.0; 4]).unwrap();
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let saved = pool_em(&map, &geom).unwrap();
        let beta = BetaMap::constant(vec![1, 1], 0.0).unwrap();
        let out = ada_unpool(&UnpoolInput {
            pooled: &saved.output,
            masks: saved.masks.as_ref().unwrap(),
            beta: &beta,
            target_shape: &[2, 2],
            double_softmax: false,
        })
        .unwrap();
        for &v in out.data() {
            assert_relative_eq!(v, 1.5, max_relative = 1e-15);
        }
    }

    #[test]
    fn bilinear_inflate_interpolates() {
        let pooled = ActivationMap::new(1, vec![1, 2], vec![0.0, 4.0]).unwrap();
        let out = bilinear_inflate(&pooled, &[1, 4]).unwrap();
        assert_eq!(out.spatial(), &[1, 4]);
        assert_eq!(out.data()[0], 0.0);
        assert_eq!(out.data()[3], 4.0);
        assert!(out.data()[1] < out.data()[2]);
        let pooled3 = ActivationMap::new(1, vec![1, 1, 1], vec![1.0]).unwrap();
        assert!(bilinear_inflate(&pooled3, &[1, 2, 2]).is_err());
    }
}

fn fill_remainder(data: &mut [f64], channels: usize, target: &[usize], geom: &PoolGeometry) {
    let lift = |src: &[usize], fill: usize| -> [usize; 3] {
        let mut a = [fill; 3];
        a[3 - src.len()..].copy_from_slice(src);
        a
    };
    let tgt = lift(target, 1);
    let k = lift(geom.kernel(), 1);
    let covered = [
        (tgt[0] / k[0]) * k[0],
        (tgt[1] / k[1]) * k[1],
        (tgt[2] / k[2]) * k[2],
    ];
    if covered == tgt {
        return;
    }
    let plane_len: usize = tgt.iter().product();
    for c in 0..channels {
        let plane = &mut data[c * plane_len..(c + 1) * plane_len];
        for t in 0..tgt[0] {
            for y in 0..tgt[1] {
                for x in 0..tgt[2] {
                    if t < covered[0] && y < covered[1] && x < covered[2] {
                        continue;
                    }
                    let st = t.min(covered[0] - 1);
                    let sy = y.min(covered[1] - 1);
                    let sx = x.min(covered[2] - 1);
                    plane[(t * tgt[1] + y) * tgt[2] + x] = plane[(st * tgt[1] + sy) * tgt[2] + sx];
                }
            }
        }
    }
}
