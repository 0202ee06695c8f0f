//! Naive per-region reference implementations.
//!
//! These spell out each operator as a direct transcription of its
//! definition: enumerate the regions, gather the member vectors, reduce.
//! They share nothing with the optimized forward paths except the
//! scalar measures and the per-region RNG streams, and exist as the
//! equivalence oracle for the optimized kernels. Keep them boring.

use rand::Rng;

use crate::error::Result;
use crate::grid::{enumerate_regions, region_mean, ActivationMap, PoolGeometry};
use crate::measures::{distance, dsc_term};
use crate::ops::{region_rng, BaselineKind, BetaMap, PoolOperator};

fn gather(map: &ActivationMap, members: &[usize], c: usize) -> Vec<f64> {
    let plane = map.channel(c);
    members.iter().map(|&i| plane[i]).collect()
}

fn member_vector(map: &ActivationMap, idx: usize) -> Vec<f64> {
    (0..map.channels()).map(|c| map.channel(c)[idx]).collect()
}

fn softmax(scores: &[f64]) -> Vec<f64> {
    let mx = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&s| (s - mx).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Naive forward of any operator; output only.
pub fn naive_pool(
    op: &PoolOperator,
    map: &ActivationMap,
    geom: &PoolGeometry,
) -> Result<ActivationMap> {
    let regions = enumerate_regions(map.spatial(), geom)?;
    let n = regions.len();
    let channels = map.channels();
    let mut out = vec![0.0f64; channels * n];

    for (r, region) in regions.iter().enumerate() {
        let members = &region.member_indices;
        let m = members.len();
        match op {
            PoolOperator::Baseline(BaselineKind::Average) => {
                for c in 0..channels {
                    let vals = gather(map, members, c);
                    out[c * n + r] = vals.iter().sum::<f64>() / m as f64;
                }
            }
            PoolOperator::Baseline(BaselineKind::Maximum) => {
                for c in 0..channels {
                    let vals = gather(map, members, c);
                    out[c * n + r] = vals.into_iter().fold(f64::NEG_INFINITY, f64::max);
                }
            }
            PoolOperator::Baseline(BaselineKind::Sum) => {
                for c in 0..channels {
                    let vals = gather(map, members, c);
                    out[c * n + r] = vals.iter().sum();
                }
            }
            PoolOperator::Baseline(BaselineKind::PowAverage { rho }) => {
                for c in 0..channels {
                    let vals = gather(map, members, c);
                    let inner = vals
                        .iter()
                        .map(|v| v.signum() * v.abs().powf(*rho))
                        .sum::<f64>()
                        / m as f64;
                    out[c * n + r] = inner.signum() * inner.abs().powf(1.0 / rho);
                }
            }
            PoolOperator::Baseline(BaselineKind::Stochastic { seed }) => {
                let mut rng = region_rng(*seed, r);
                for c in 0..channels {
                    let vals = gather(map, members, c);
                    let u: f64 = rng.random();
                    let total: f64 = vals.iter().sum();
                    let pick = if total > 0.0 && vals.iter().all(|&v| v >= 0.0) {
                        let target = u * total;
                        let mut acc = 0.0;
                        let mut chosen = m - 1;
                        for (j, &v) in vals.iter().enumerate() {
                            acc += v;
                            if acc >= target {
                                chosen = j;
                                break;
                            }
                        }
                        chosen
                    } else {
                        ((u * m as f64) as usize).min(m - 1)
                    };
                    out[c * n + r] = vals[pick];
                }
            }
            PoolOperator::Baseline(BaselineKind::S3 { seed }) => {
                let mut rng = region_rng(*seed, r);
                // Reconstruct the per-dimension coordinate spans from the
                // sorted member list, then draw one coordinate per dim.
                let spans = member_spans(map.spatial(), members);
                let mut coord = Vec::with_capacity(spans.len());
                for span in &spans {
                    let u: f64 = rng.random();
                    let pick = ((u * span.len() as f64) as usize).min(span.len() - 1);
                    coord.push(span[pick]);
                }
                let idx = flatten(map.spatial(), &coord);
                for c in 0..channels {
                    out[c * n + r] = map.channel(c)[idx];
                }
            }
            PoolOperator::Idw(kind) => {
                let mean = region_mean(map, region)?;
                let mut weights = Vec::with_capacity(m);
                let mut zero_at = None;
                for &i in members {
                    let d = distance(*kind, &mean, &member_vector(map, i))?;
                    if d == 0.0 {
                        zero_at = Some(i);
                        break;
                    }
                    weights.push(1.0 / d);
                }
                match zero_at {
                    Some(i) => {
                        for c in 0..channels {
                            out[c * n + r] = map.channel(c)[i];
                        }
                    }
                    None => {
                        let total: f64 = weights.iter().sum();
                        for c in 0..channels {
                            let vals = gather(map, members, c);
                            out[c * n + r] = vals
                                .iter()
                                .zip(&weights)
                                .map(|(v, w)| w * v)
                                .sum::<f64>()
                                / total;
                        }
                    }
                }
            }
            PoolOperator::Em => {
                for c in 0..channels {
                    let vals = gather(map, members, c);
                    let w = softmax(&vals);
                    out[c * n + r] = vals.iter().zip(&w).map(|(v, w)| v * w).sum();
                }
            }
            PoolOperator::Edscw => {
                out_edscw_into(map, members, &mut out, n, r)?;
            }
            PoolOperator::Ada { beta } => {
                let mut em = vec![0.0f64; channels];
                for (c, slot) in em.iter_mut().enumerate() {
                    let vals = gather(map, members, c);
                    let w = softmax(&vals);
                    *slot = vals.iter().zip(&w).map(|(v, w)| v * w).sum();
                }
                let mut edsc = vec![0.0f64; channels];
                out_edscw_into(map, members, &mut edsc, 1, 0)?;
                for c in 0..channels {
                    out[c * n + r] = beta * edsc[c] + (1.0 - beta) * em[c];
                }
            }
        }
    }

    let out_spatial = geom.output_extents(map.spatial())?;
    Ok(ActivationMap::from_parts(channels, out_spatial, out))
}

fn out_edscw_into(
    map: &ActivationMap,
    members: &[usize],
    out: &mut [f64],
    n: usize,
    r: usize,
) -> Result<()> {
    let channels = map.channels();
    let m = members.len();
    let mut mean = vec![0.0f64; channels];
    for (c, slot) in mean.iter_mut().enumerate() {
        let vals = gather(map, members, c);
        *slot = vals.iter().sum::<f64>() / m as f64;
    }
    let scores: Vec<f64> = members
        .iter()
        .map(|&i| {
            let v = member_vector(map, i);
            mean.iter().zip(&v).map(|(&mc, &vc)| dsc_term(mc, vc)).sum()
        })
        .collect();
    let w = softmax(&scores);
    for c in 0..channels {
        let vals = gather(map, members, c);
        out[c * n + r] = vals.iter().zip(&w).map(|(v, w)| v * w).sum();
    }
    Ok(())
}

/// Per-dimension sorted unique coordinates of a region's members.
fn member_spans(spatial: &[usize], members: &[usize]) -> Vec<Vec<usize>> {
    let dims = spatial.len();
    let mut spans: Vec<Vec<usize>> = vec![Vec::new(); dims];
    for &idx in members {
        let coords = unflatten(spatial, idx);
        for (d, &c) in coords.iter().enumerate() {
            if !spans[d].contains(&c) {
                spans[d].push(c);
            }
        }
    }
    for span in spans.iter_mut() {
        span.sort_unstable();
    }
    spans
}

fn unflatten(spatial: &[usize], mut idx: usize) -> Vec<usize> {
    let mut coords = vec![0usize; spatial.len()];
    for d in (0..spatial.len()).rev() {
        coords[d] = idx % spatial[d];
        idx /= spatial[d];
    }
    coords
}

fn flatten(spatial: &[usize], coords: &[usize]) -> usize {
    let mut idx = 0;
    for (d, &c) in coords.iter().enumerate() {
        idx = idx * spatial[d] + c;
    }
    idx
}

/// Naive adaPool with an explicit beta map (used by the fusion tests).
pub fn naive_pool_ada(
    map: &ActivationMap,
    geom: &PoolGeometry,
    beta: &BetaMap,
) -> Result<ActivationMap> {
    let em = naive_pool(&PoolOperator::Em, map, geom)?;
    let edsc = naive_pool(&PoolOperator::Edscw, map, geom)?;
    let n = em.spatial_len();
    let mut out = vec![0.0f64; em.data().len()];
    for c in 0..em.channels() {
        for (r, &b) in beta.values().iter().enumerate() {
            out[c * n + r] = b * edsc.data()[c * n + r] + (1.0 - b) * em.data()[c * n + r];
        }
    }
    Ok(ActivationMap::from_parts(em.channels(), em.spatial().to_vec(), out))
}
