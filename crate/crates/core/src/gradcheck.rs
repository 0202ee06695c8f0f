//! Finite-difference verification harness for the backward passes.
//!
//! Compares an analytic gradient against central finite differences of
//! the scalar loss `sum(grad_out * forward(x))`. Errors are relative,
//! with the denominator floored at a fraction of the largest gradient
//! entry so roundoff on near-zero entries stays in scale.

use crate::error::{Error, Result};
use crate::grid::{ActivationMap, PoolGeometry};
use crate::ops::{backward, pool_ada, pool_edscw, pool_em, BetaMap, GradMode, PoolKind};

/// Central-difference step, chosen for 64-bit floats.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one finite-difference comparison.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    /// Max relative error of the input gradient.
    pub max_input_error: f64,
    /// Max relative error of the beta gradient (ada only).
    pub max_beta_error: Option<f64>,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.max_input_error.max(self.max_beta_error.unwrap_or(0.0))
    }
}

fn forward_output(
    kind: PoolKind,
    map: &ActivationMap,
    geom: &PoolGeometry,
    beta: &BetaMap,
) -> Result<ActivationMap> {
    Ok(match kind {
        PoolKind::Em => pool_em(map, geom)?.output,
        PoolKind::Edscw => pool_edscw(map, geom)?.output,
        PoolKind::Ada => pool_ada(map, geom, beta)?.output,
    })
}

fn loss(
    kind: PoolKind,
    map: &ActivationMap,
    geom: &PoolGeometry,
    beta: &BetaMap,
    g: &[f64],
) -> Result<f64> {
    let out = forward_output(kind, map, geom, beta)?;
    Ok(out.data().iter().zip(g).map(|(y, gi)| y * gi).sum())
}

/// Max relative error between two gradient vectors, floored at
/// 1e-3 of the largest magnitude either side reports.
pub fn max_relative_error(fd: &[f64], analytic: &[f64]) -> f64 {
    let global = fd
        .iter()
        .chain(analytic)
        .map(|v| v.abs())
        .fold(0.0f64, f64::max);
    let floor = (1e-3 * global).max(1e-12);
    fd.iter()
        .zip(analytic)
        .map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
        .fold(0.0f64, f64::max)
}

/// Runs the comparison for one operator on one map.
///
/// `grad_out` doubles as the loss weighting; `beta` is consulted for
/// [`PoolKind::Ada`] only.
pub fn finite_difference_report(
    kind: PoolKind,
    map: &ActivationMap,
    geom: &PoolGeometry,
    beta: &BetaMap,
    grad_out: &ActivationMap,
    mode: GradMode,
) -> Result<GradCheckReport> {
    let saved = match kind {
        PoolKind::Em => pool_em(map, geom)?,
        PoolKind::Edscw => pool_edscw(map, geom)?,
        PoolKind::Ada => pool_ada(map, geom, beta)?,
    };
    if grad_out.spatial() != saved.output.spatial() || grad_out.channels() != saved.output.channels()
    {
        return Err(Error::Shape("grad_out shape must match the pooled output".into()));
    }
    let g = grad_out.data();
    let grads = backward(kind, grad_out, &saved, mode)?;

    let mut fd_input = vec![0.0f64; map.data().len()];
    for (i, slot) in fd_input.iter_mut().enumerate() {
        let mut plus = map.data().to_vec();
        plus[i] += FD_STEP;
        let mut minus = map.data().to_vec();
        minus[i] -= FD_STEP;
        let plus = ActivationMap::new(map.channels(), map.spatial().to_vec(), plus)?;
        let minus = ActivationMap::new(map.channels(), map.spatial().to_vec(), minus)?;
        *slot = (loss(kind, &plus, geom, beta, g)? - loss(kind, &minus, geom, beta, g)?)
            / (2.0 * FD_STEP);
    }
    let max_input_error = max_relative_error(&fd_input, grads.input.data());

    let max_beta_error = match grads.beta {
        None => None,
        Some(gb) => {
            let mut fd_beta = vec![0.0f64; gb.len()];
            for (r, slot) in fd_beta.iter_mut().enumerate() {
                let mut plus = beta.values().to_vec();
                plus[r] += FD_STEP;
                let mut minus = beta.values().to_vec();
                minus[r] -= FD_STEP;
                let plus = BetaMap::new(plus, beta.spatial().to_vec(), beta.trainable())?;
                let minus = BetaMap::new(minus, beta.spatial().to_vec(), beta.trainable())?;
                *slot = (loss(kind, map, geom, &plus, g)? - loss(kind, map, geom, &minus, g)?)
                    / (2.0 * FD_STEP);
            }
            Some(max_relative_error(&fd_beta, &gb))
        }
    };

    Ok(GradCheckReport { max_input_error, max_beta_error })
}
