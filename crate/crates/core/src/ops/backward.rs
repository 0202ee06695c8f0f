//! Backward passes for the exponential operators.
//!
//! [`GradMode::PaperWeighted`] reuses the stored forward weights as the
//! gradient routing rule: each member receives its weight times the
//! upstream gradient. [`GradMode::ExactAnalytic`] differentiates the
//! full forward expression, through the softmax and through the
//! Dice-Sorensen terms (and through the region mean they depend on).

use crate::error::{Error, Result};
use crate::grid::{ActivationMap, Regions};
use crate::measures::DSC_EPSILON;

use super::PoolResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Route gradients with the stored normalized weights (default).
    PaperWeighted,
    /// Full derivative of the forward expression; used for verification
    /// and for fitting beta.
    ExactAnalytic,
}

/// Which operator the saved forward state belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolKind {
    Em,
    Edscw,
    Ada,
}

/// Input gradient plus, for `ada`, the per-location beta gradient.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub input: ActivationMap,
    pub beta: Option<Vec<f64>>,
}

/// Differentiates a saved forward pass with respect to its input (and
/// beta for `ada`).
///
/// In paper mode the beta gradient follows the stated chain rule,
/// `grad_out * (region max - region mean)` summed over channels; in
/// exact mode it is the literal derivative of the fusion,
/// `grad_out * (edscw output - em output)`.
pub fn backward(
    kind: PoolKind,
    grad_out: &ActivationMap,
    saved: &PoolResult,
    mode: GradMode,
) -> Result<Gradients> {
    let input = saved
        .saved_input
        .as_ref()
        .ok_or(Error::MissingState("forward input"))?;
    let masks = saved.masks.as_ref().ok_or(Error::MissingState("weight masks"))?;
    if grad_out.spatial() != saved.output.spatial() || grad_out.channels() != saved.output.channels()
    {
        return Err(Error::Shape(format!(
            "gradient shape {:?}x{:?} does not match output shape {:?}x{:?}",
            grad_out.channels(),
            grad_out.spatial(),
            saved.output.channels(),
            saved.output.spatial()
        )));
    }

    let regions = Regions::new(input.spatial(), &saved.geometry)?;
    let n = regions.n_regions();
    let channels = input.channels();
    let spatial_len = input.spatial_len();
    let data = input.data();
    let g = grad_out.data();

    let beta = match kind {
        PoolKind::Ada => Some(saved.beta.as_ref().ok_or(Error::MissingState("beta map"))?),
        _ => None,
    };

    let mut grad = vec![0.0f64; channels * spatial_len];
    let mut grad_beta = matches!(kind, PoolKind::Ada).then(|| vec![0.0f64; n]);

    let mut idxs: Vec<usize> = Vec::with_capacity(saved.geometry.kernel_volume());
    let mut member_grad_dot: Vec<f64> = Vec::new();

    for r in 0..n {
        idxs.clear();
        regions.for_each_member(r, |i| idxs.push(i));
        let m = idxs.len();
        let b = beta.map(|b| b.values()[r]);

        // Upstream gradient scales for the two exponential branches.
        let (em_scale, edsc_scale) = match kind {
            PoolKind::Em => (1.0, 0.0),
            PoolKind::Edscw => (0.0, 1.0),
            PoolKind::Ada => {
                let b = b.unwrap();
                (1.0 - b, b)
            }
        };

        match mode {
            GradMode::PaperWeighted => {
                if em_scale != 0.0 {
                    let block = masks.em_region(r).ok_or(Error::MissingState("em weights"))?;
                    for c in 0..channels {
                        let up = em_scale * g[c * n + r];
                        let lane = &block[c * m..(c + 1) * m];
                        for (j, &i) in idxs.iter().enumerate() {
                            grad[c * spatial_len + i] += lane[j] * up;
                        }
                    }
                }
                if edsc_scale != 0.0 {
                    let lane = masks.edsc_region(r).ok_or(Error::MissingState("edsc weights"))?;
                    for c in 0..channels {
                        let up = edsc_scale * g[c * n + r];
                        for (j, &i) in idxs.iter().enumerate() {
                            grad[c * spatial_len + i] += lane[j] * up;
                        }
                    }
                }
                if let Some(gb) = grad_beta.as_deref_mut() {
                    let stats = saved.stats.as_ref().ok_or(Error::MissingState("region stats"))?;
                    let mut acc = 0.0;
                    for c in 0..channels {
                        acc += g[c * n + r] * (stats.max_at(r, c) - stats.mean_at(r, c));
                    }
                    gb[r] = acc;
                }
            }
            GradMode::ExactAnalytic => {
                if em_scale != 0.0 {
                    let block = masks.em_region(r).ok_or(Error::MissingState("em weights"))?;
                    let em_out = match kind {
                        PoolKind::Em => &saved.output,
                        _ => {
                            &saved
                                .components
                                .as_ref()
                                .ok_or(Error::MissingState("ada components"))?
                                .1
                        }
                    };
                    for c in 0..channels {
                        let up = em_scale * g[c * n + r];
                        let y = em_out.data()[c * n + r];
                        let lane = &block[c * m..(c + 1) * m];
                        for (j, &i) in idxs.iter().enumerate() {
                            let x = data[c * spatial_len + i];
                            grad[c * spatial_len + i] += up * lane[j] * (1.0 + x - y);
                        }
                    }
                }
                if edsc_scale != 0.0 {
                    let lane = masks.edsc_region(r).ok_or(Error::MissingState("edsc weights"))?;
                    let stats = saved.stats.as_ref().ok_or(Error::MissingState("region stats"))?;

                    // G_i = sum_c g'_c a_{i,c}; coef_i = w_i (G_i - Gbar).
                    member_grad_dot.clear();
                    member_grad_dot.resize(m, 0.0);
                    for c in 0..channels {
                        let up = edsc_scale * g[c * n + r];
                        let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                        for (j, &i) in idxs.iter().enumerate() {
                            member_grad_dot[j] += up * plane[i];
                        }
                    }
                    let gbar: f64 = lane
                        .iter()
                        .zip(&member_grad_dot)
                        .map(|(&w, &gd)| w * gd)
                        .sum();

                    for c in 0..channels {
                        let up = edsc_scale * g[c * n + r];
                        let mean_c = stats.mean_at(r, c);
                        let plane = &data[c * spatial_len..(c + 1) * spatial_len];
                        // Shared mean-path term, once per channel.
                        let mut mean_path = 0.0;
                        for (k, &i) in idxs.iter().enumerate() {
                            let coef = lane[k] * (member_grad_dot[k] - gbar);
                            let (_, dmean) = dsc_partials(mean_c, plane[i]);
                            mean_path += coef * dmean;
                        }
                        mean_path /= m as f64;
                        for (j, &i) in idxs.iter().enumerate() {
                            let coef = lane[j] * (member_grad_dot[j] - gbar);
                            let (dmember, _) = dsc_partials(mean_c, plane[i]);
                            grad[c * spatial_len + i] += up * lane[j] + coef * dmember + mean_path;
                        }
                    }
                }
                if let Some(gb) = grad_beta.as_deref_mut() {
                    let (edsc_out, em_out) = saved
                        .components
                        .as_ref()
                        .ok_or(Error::MissingState("ada components"))?;
                    let mut acc = 0.0;
                    for c in 0..channels {
                        acc += g[c * n + r] * (edsc_out.data()[c * n + r] - em_out.data()[c * n + r]);
                    }
                    gb[r] = acc;
                }
            }
        }
    }

    Ok(Gradients {
        input: ActivationMap::from_parts(channels, input.spatial().to_vec(), grad),
        beta: grad_beta,
    })
}

/// Partial derivatives of the per-channel Dice-Sorensen term
/// t = 2|mv| / (m^2 + v^2 + eps) with respect to the member value `v`
/// and the mean `m`. The |.| kink at mv = 0 uses subgradient 0.
fn dsc_partials(mean: f64, v: f64) -> (f64, f64) {
    let d = mean * mean + v * v + DSC_EPSILON;
    let u = mean * v;
    let sign = if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    };
    let dd = d * d;
    let dv = (2.0 * sign * mean * d - 4.0 * u.abs() * v) / dd;
    let dm = (2.0 * sign * v * d - 4.0 * u.abs() * mean) / dd;
    (dv, dm)
}
