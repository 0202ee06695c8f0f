//! The weighted pooling operators: inverse-distance weighting, the
//! exponential maximum, the exponential Dice-Sorensen average, and
//! their adaptive fusion.

use rayon::prelude::*;

use super::rowpar::{option_rows, split_rows, to_channel_major, RowPlan};
use super::{BetaMap, PoolResult, RegionStats, WeightMasks};
use crate::error::{Error, Result};
use crate::grid::{ActivationMap, PoolGeometry, Regions};
use crate::measures::{distance_raw, dsc_term, DistanceKind};

/// Inverse distance weighting toward the region mean.
///
/// Per region the weight of member `i` is `1 / d(mean, a_i)`,
/// normalized over the region. A member at distance zero short-circuits
/// the region to that member's value (first in scan order on ties).
pub fn pool_idw(
    kind: DistanceKind,
    map: &ActivationMap,
    geom: &PoolGeometry,
) -> Result<PoolResult> {
    if let DistanceKind::Huber { delta } = kind {
        if !(delta > 0.0) || !delta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "huber delta must be positive, got {delta}"
            )));
        }
    }
    let regions = Regions::new(map.spatial(), geom)?;
    let plan = RowPlan::new(&regions);
    let n = regions.n_regions();
    let channels = map.channels();
    let spatial_len = map.spatial_len();
    let data = map.data();

    let mut out_tmp = vec![0.0f64; n * channels];
    let out_rows = split_rows(&mut out_tmp, plan.uniform_lens(channels).into_iter());

    out_rows.into_par_iter().enumerate().for_each(|(row, out)| {
        let kvol = geom.kernel_volume();
        let mut idxs: Vec<usize> = Vec::with_capacity(kvol);
        let mut mean = vec![0.0f64; channels];
        let mut member = vec![0.0f64; channels];
        let mut inv_dist = vec![0.0f64; kvol];
        for (local, r) in plan.region_range(row).enumerate() {
            idxs.clear();
            regions.for_each_member(r, |i| idxs.push(i));
            let m = idxs.len();
            for (c, slot) in mean.iter_mut().enumerate() {
                let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                *slot = idxs.iter().map(|&i| plane[i]).sum::<f64>() / m as f64;
            }
            let out_region = &mut out[local * channels..(local + 1) * channels];
            let mut zero_at = None;
            for (j, &i) in idxs.iter().enumerate() {
                for (c, slot) in member.iter_mut().enumerate() {
                    *slot = data[c * spatial_len + i];
                }
                let d = distance_raw(kind, &mean, &member);
                if d == 0.0 {
                    zero_at = Some(i);
                    break;
                }
                inv_dist[j] = 1.0 / d;
            }
            if let Some(i) = zero_at {
                for (c, slot) in out_region.iter_mut().enumerate() {
                    *slot = data[c * spatial_len + i];
                }
            } else {
                let total: f64 = inv_dist[..m].iter().sum();
                for (c, slot) in out_region.iter_mut().enumerate() {
                    let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                    let acc: f64 = idxs
                        .iter()
                        .enumerate()
                        .map(|(j, &i)| inv_dist[j] * plane[i])
                        .sum();
                    *slot = acc / total;
                }
            }
        }
    });

    let output = ActivationMap::from_parts(
        channels,
        regions.output_extents(),
        to_channel_major(&out_tmp, n, channels),
    );
    Ok(PoolResult::bare(output, geom.clone()))
}

/// What the exponential engine should produce.
struct EngineOutput {
    out_spatial: Vec<usize>,
    em_out: Option<Vec<f64>>,
    edsc_out: Option<Vec<f64>>,
    masks: WeightMasks,
    stats: RegionStats,
}

/// Shared forward for eM / eDSCW / ada.
///
/// Both weightings subtract the per-region maximum before
/// exponentiation; the normalized weights are unchanged and the sums
/// cannot overflow for large activations or channel counts.
fn exponential_forward(
    map: &ActivationMap,
    geom: &PoolGeometry,
    want_em: bool,
    want_edsc: bool,
) -> Result<EngineOutput> {
    let regions = Regions::new(map.spatial(), geom)?;
    let plan = RowPlan::new(&regions);
    let n = regions.n_regions();
    let channels = map.channels();
    let spatial_len = map.spatial_len();
    let data = map.data();
    let offsets = regions.member_offsets();
    let total_members = offsets[n];

    let mut mean_buf = vec![0.0f64; n * channels];
    let mut max_buf = vec![0.0f64; n * channels];
    let mut em_out_buf = want_em.then(|| vec![0.0f64; n * channels]);
    let mut edsc_out_buf = want_edsc.then(|| vec![0.0f64; n * channels]);
    let mut em_mask_buf = want_em.then(|| vec![0.0f64; total_members * channels]);
    let mut edsc_mask_buf = want_edsc.then(|| vec![0.0f64; total_members]);

    let region_lens = plan.uniform_lens(channels);
    let member_lens = plan.member_lens(&offsets, 1);
    let member_c_lens = plan.member_lens(&offsets, channels);

    let mean_rows = split_rows(&mut mean_buf, region_lens.iter().copied());
    let max_rows = split_rows(&mut max_buf, region_lens.iter().copied());
    let em_out_rows = option_rows(em_out_buf.as_deref_mut(), &region_lens);
    let edsc_out_rows = option_rows(edsc_out_buf.as_deref_mut(), &region_lens);
    let em_mask_rows = option_rows(em_mask_buf.as_deref_mut(), &member_c_lens);
    let edsc_mask_rows = option_rows(edsc_mask_buf.as_deref_mut(), &member_lens);

    struct RowTask<'a> {
        row: usize,
        mean: &'a mut [f64],
        max: &'a mut [f64],
        em_out: Option<&'a mut [f64]>,
        edsc_out: Option<&'a mut [f64]>,
        em_mask: Option<&'a mut [f64]>,
        edsc_mask: Option<&'a mut [f64]>,
    }

    let tasks: Vec<RowTask> = mean_rows
        .into_iter()
        .zip(max_rows)
        .zip(em_out_rows)
        .zip(edsc_out_rows)
        .zip(em_mask_rows)
        .zip(edsc_mask_rows)
        .enumerate()
        .map(|(row, (((((mean, max), em_out), edsc_out), em_mask), edsc_mask))| RowTask {
            row,
            mean,
            max,
            em_out,
            edsc_out,
            em_mask,
            edsc_mask,
        })
        .collect();

    tasks.into_par_iter().for_each(|mut task| {
        let kvol = geom.kernel_volume();
        let mut idxs: Vec<usize> = Vec::with_capacity(kvol);
        let mut scores = vec![0.0f64; kvol];
        let row_member_base = offsets[plan.region_range(task.row).start];
        for (local, r) in plan.region_range(task.row).enumerate() {
            idxs.clear();
            regions.for_each_member(r, |i| idxs.push(i));
            let m = idxs.len();
            let stat_base = local * channels;
            for c in 0..channels {
                let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                let mut sum = 0.0;
                let mut mx = f64::NEG_INFINITY;
                for &i in &idxs {
                    let v = plane[i];
                    sum += v;
                    if v > mx {
                        mx = v;
                    }
                }
                task.mean[stat_base + c] = sum / m as f64;
                task.max[stat_base + c] = mx;
            }

            if let (Some(em_out), Some(em_mask)) = (task.em_out.as_deref_mut(), task.em_mask.as_deref_mut()) {
                let block = (offsets[r] - row_member_base) * channels;
                for c in 0..channels {
                    let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                    let mx = task.max[stat_base + c];
                    let lane = &mut em_mask[block + c * m..block + (c + 1) * m];
                    let mut denom = 0.0;
                    let mut weighted = 0.0;
                    for (j, &i) in idxs.iter().enumerate() {
                        let e = (plane[i] - mx).exp();
                        lane[j] = e;
                        denom += e;
                        weighted += e * plane[i];
                    }
                    em_out[stat_base + c] = weighted / denom;
                    let inv = 1.0 / denom;
                    for w in lane.iter_mut() {
                        *w *= inv;
                    }
                }
            }

            if let (Some(edsc_out), Some(edsc_mask)) =
                (task.edsc_out.as_deref_mut(), task.edsc_mask.as_deref_mut())
            {
                for (j, &i) in idxs.iter().enumerate() {
                    let mut s = 0.0;
                    for c in 0..channels {
                        s += dsc_term(task.mean[stat_base + c], data[c * spatial_len + i]);
                    }
                    scores[j] = s;
                }
                let mx = scores[..m].iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lane = &mut edsc_mask[offsets[r] - row_member_base..offsets[r] - row_member_base + m];
                let mut denom = 0.0;
                for (j, w) in lane.iter_mut().enumerate() {
                    let e = (scores[j] - mx).exp();
                    *w = e;
                    denom += e;
                }
                let inv = 1.0 / denom;
                for w in lane.iter_mut() {
                    *w *= inv;
                }
                for c in 0..channels {
                    let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                    let acc: f64 = idxs
                        .iter()
                        .enumerate()
                        .map(|(j, &i)| lane[j] * plane[i])
                        .sum();
                    edsc_out[stat_base + c] = acc;
                }
            }
        }
    });

    Ok(EngineOutput {
        out_spatial: regions.output_extents(),
        em_out: em_out_buf.map(|b| to_channel_major(&b, n, channels)),
        edsc_out: edsc_out_buf.map(|b| to_channel_major(&b, n, channels)),
        masks: WeightMasks::new(geom.clone(), channels, offsets, em_mask_buf, edsc_mask_buf),
        stats: RegionStats::new(channels, mean_buf, max_buf),
    })
}

/// Exponential maximum pooling: each member is weighted by the softmax
/// of its own activation over the region, per channel.
pub fn pool_em(map: &ActivationMap, geom: &PoolGeometry) -> Result<PoolResult> {
    let engine = exponential_forward(map, geom, true, false)?;
    Ok(PoolResult {
        output: ActivationMap::from_parts(
            map.channels(),
            engine.out_spatial,
            engine.em_out.unwrap(),
        ),
        geometry: geom.clone(),
        masks: Some(engine.masks),
        stats: Some(engine.stats),
        saved_input: Some(map.clone()),
        beta: None,
        components: None,
        stochastic_fallbacks: 0,
    })
}

/// Exponential Dice-Sorensen weighting: each member is weighted by the
/// softmax of its DSC similarity to the region mean, shared across
/// channels.
pub fn pool_edscw(map: &ActivationMap, geom: &PoolGeometry) -> Result<PoolResult> {
    let engine = exponential_forward(map, geom, false, true)?;
    Ok(PoolResult {
        output: ActivationMap::from_parts(
            map.channels(),
            engine.out_spatial,
            engine.edsc_out.unwrap(),
        ),
        geometry: geom.clone(),
        masks: Some(engine.masks),
        stats: Some(engine.stats),
        saved_input: Some(map.clone()),
        beta: None,
        components: None,
        stochastic_fallbacks: 0,
    })
}

/// Adaptive fusion: `beta * edscw + (1 - beta) * em` per output
/// location. Exact beta values 0 and 1 return the corresponding
/// component bitwise.
pub fn pool_ada(map: &ActivationMap, geom: &PoolGeometry, beta: &BetaMap) -> Result<PoolResult> {
    let out_spatial = geom.output_extents(map.spatial())?;
    if beta.spatial() != out_spatial.as_slice() {
        return Err(Error::Shape(format!(
            "beta extents {:?} do not match output extents {:?}",
            beta.spatial(),
            out_spatial
        )));
    }
    let engine = exponential_forward(map, geom, true, true)?;
    let channels = map.channels();
    let em = engine.em_out.unwrap();
    let edsc = engine.edsc_out.unwrap();
    let n = beta.values().len();
    let mut blended = vec![0.0f64; em.len()];
    for c in 0..channels {
        let base = c * n;
        for (r, &b) in beta.values().iter().enumerate() {
            let i = base + r;
            blended[i] = if b == 0.0 {
                em[i]
            } else if b == 1.0 {
                edsc[i]
            } else {
                b * edsc[i] + (1.0 - b) * em[i]
            };
        }
    }
    Ok(PoolResult {
        output: ActivationMap::from_parts(channels, engine.out_spatial.clone(), blended),
        geometry: geom.clone(),
        masks: Some(engine.masks),
        stats: Some(engine.stats),
        saved_input: Some(map.clone()),
        beta: Some(beta.clone()),
        components: Some((
            ActivationMap::from_parts(channels, engine.out_spatial.clone(), edsc),
            ActivationMap::from_parts(channels, engine.out_spatial, em),
        )),
        stochastic_fallbacks: 0,
    })
}
