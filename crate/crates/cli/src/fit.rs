//! Projected gradient descent on the beta map.
//!
//! The eDSCW and eM components of an ada forward do not depend on
//! beta, so one forward pass fixes them and every step only re-blends,
//! scores, and projects.

use adapool::quality::POOL_SCALE;
use adapool::{pool_ada, update_beta, ActivationMap, BetaMap, PoolGeometry};

use crate::error::{CliError, CliResult};

/// Loss and mean-beta per step; entry `i` is evaluated at the beta
/// before step `i`'s update, with one trailing entry for the final beta.
#[derive(Debug, Clone)]
pub struct FitTrace {
    pub losses: Vec<f64>,
    pub mean_betas: Vec<f64>,
}

fn blend(beta: &[f64], edsc: &[f64], em: &[f64], channels: usize, pred: &mut [f64]) {
    let n = beta.len();
    for c in 0..channels {
        for (r, &b) in beta.iter().enumerate() {
            let i = c * n + r;
            pred[i] = b * edsc[i] + (1.0 - b) * em[i];
        }
    }
}

/// Fits beta so that `pool_ada(input, beta)` approaches `target` in
/// mean squared error. Exact-analytic beta gradients throughout.
///
/// Input and target are image-scale maps; the operator itself runs at
/// unit scale and its components are scaled back for the loss.
pub fn fit_beta_to_target(
    input: &ActivationMap,
    target: &ActivationMap,
    geom: &PoolGeometry,
    steps: usize,
    lr: f64,
) -> CliResult<(BetaMap, FitTrace)> {
    let out_extents = geom
        .output_extents(input.spatial())
        .map_err(|e| CliError::Data(e.to_string()))?;
    if target.spatial() != out_extents || target.channels() != input.channels() {
        return Err(CliError::Data(format!(
            "target shape {}x{:?} does not match pooled shape {}x{:?}",
            target.channels(),
            target.spatial(),
            input.channels(),
            out_extents
        )));
    }
    let mut beta = BetaMap::constant(out_extents, 0.5).map_err(|e| CliError::Data(e.to_string()))?;
    let unit = input.scaled(1.0 / POOL_SCALE);
    let seed_forward = pool_ada(&unit, geom, &beta).map_err(|e| CliError::Data(e.to_string()))?;
    let (edsc, em) = seed_forward.components.as_ref().expect("ada saves components");
    let edsc: Vec<f64> = edsc.data().iter().map(|v| v * POOL_SCALE).collect();
    let em: Vec<f64> = em.data().iter().map(|v| v * POOL_SCALE).collect();
    let (edsc, em) = (&edsc[..], &em[..]);
    let channels = input.channels();
    let n = beta.values().len();
    let total = target.data().len() as f64;

    let mut pred = vec![0.0f64; target.data().len()];
    let mut grad_beta = vec![0.0f64; n];
    let mut losses = Vec::with_capacity(steps + 1);
    let mut mean_betas = Vec::with_capacity(steps + 1);

    for _ in 0..steps {
        blend(beta.values(), edsc, em, channels, &mut pred);
        let loss = pred
            .iter()
            .zip(target.data())
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / total;
        losses.push(loss);
        mean_betas.push(beta.mean());

        grad_beta.iter_mut().for_each(|g| *g = 0.0);
        for c in 0..channels {
            for r in 0..n {
                let i = c * n + r;
                let upstream = 2.0 * (pred[i] - target.data()[i]) / total;
                grad_beta[r] += upstream * (edsc[i] - em[i]);
            }
        }
        beta = update_beta(&beta, &grad_beta, lr).map_err(|e| CliError::Data(e.to_string()))?;
    }
    blend(beta.values(), edsc, em, channels, &mut pred);
    let final_loss = pred
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / total;
    losses.push(final_loss);
    mean_betas.push(beta.mean());

    Ok((beta, FitTrace { losses, mean_betas }))
}

/// Fits beta per image so the nearest-inflated ada output approaches
/// the image itself (the learned-beta mode of the evaluation protocol).
///
/// Under nearest inflation the restoration error decomposes per region,
/// so the pooled-level gradient is `2 k^d (pooled - region mean) / N`.
pub fn fit_beta_roundtrip(
    input: &ActivationMap,
    geom: &PoolGeometry,
    steps: usize,
    lr: f64,
) -> CliResult<BetaMap> {
    let out_extents = geom
        .output_extents(input.spatial())
        .map_err(|e| CliError::Data(e.to_string()))?;
    let mut beta = BetaMap::constant(out_extents, 0.5).map_err(|e| CliError::Data(e.to_string()))?;
    let unit = input.scaled(1.0 / POOL_SCALE);
    let seed_forward = pool_ada(&unit, geom, &beta).map_err(|e| CliError::Data(e.to_string()))?;
    let stats = seed_forward.stats.as_ref().expect("ada saves stats");
    let (edsc, em) = seed_forward.components.as_ref().expect("ada saves components");
    let edsc: Vec<f64> = edsc.data().iter().map(|v| v * POOL_SCALE).collect();
    let em: Vec<f64> = em.data().iter().map(|v| v * POOL_SCALE).collect();
    let channels = input.channels();
    let n: usize = beta.values().len();
    let kvol = geom.kernel_volume() as f64;
    let total = input.data().len() as f64;

    let mut pred = vec![0.0f64; channels * n];
    let mut grad_beta = vec![0.0f64; n];
    for _ in 0..steps {
        blend(beta.values(), &edsc, &em, channels, &mut pred);
        grad_beta.iter_mut().for_each(|g| *g = 0.0);
        for c in 0..channels {
            for r in 0..n {
                let i = c * n + r;
                let mean = stats.mean_at(r, c) * POOL_SCALE;
                let upstream = 2.0 * kvol * (pred[i] - mean) / total;
                grad_beta[r] += upstream * (edsc[i] - em[i]);
            }
        }
        beta = update_beta(&beta, &grad_beta, lr).map_err(|e| CliError::Data(e.to_string()))?;
    }
    Ok(beta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use adapool::{pool_edscw, pool_em};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noisy_image(seed: u64) -> ActivationMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..16 * 16).map(|_| rng.random_range(0.0..255.0)).collect();
        ActivationMap::new(1, vec![16, 16], data).unwrap()
    }

    /// Pooled target at image scale, matching the operator protocol.
    fn protocol_target(
        input: &ActivationMap,
        geom: &PoolGeometry,
        op: fn(&ActivationMap, &PoolGeometry) -> adapool::Result<adapool::PoolResult>,
    ) -> ActivationMap {
        op(&input.scaled(1.0 / POOL_SCALE), geom).unwrap().output.scaled(POOL_SCALE)
    }

    #[test]
    fn em_target_drives_beta_to_zero() {
        let input = noisy_image(1);
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let target = protocol_target(&input, &geom, pool_em);
        let (beta, trace) = fit_beta_to_target(&input, &target, &geom, 300, 0.05).unwrap();
        assert!(beta.mean() < 0.1, "mean beta {}", beta.mean());
        for w in trace.losses.windows(2).skip(10) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn edscw_target_drives_beta_to_one() {
        let input = noisy_image(2);
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let target = protocol_target(&input, &geom, pool_edscw);
        let (beta, _) = fit_beta_to_target(&input, &target, &geom, 300, 0.05).unwrap();
        assert!(beta.mean() > 0.9, "mean beta {}", beta.mean());
    }

    #[test]
    fn zero_learning_rate_freezes_the_trace() {
        let input = noisy_image(3);
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let target = protocol_target(&input, &geom, pool_em);
        let (beta, trace) = fit_beta_to_target(&input, &target, &geom, 20, 0.0).unwrap();
        assert_eq!(beta.mean(), 0.5);
        assert!(trace.losses.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn mismatched_target_shape_is_a_data_error() {
        let input = noisy_image(4);
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let bad = ActivationMap::new(1, vec![4, 4], vec![0.0; 16]).unwrap();
        assert!(matches!(
            fit_beta_to_target(&input, &bad, &geom, 5, 0.1),
            Err(CliError::Data(_))
        ));
    }

    #[test]
    fn roundtrip_fit_moves_beta_and_stays_in_range() {
        let input = noisy_image(5);
        let geom = PoolGeometry::uniform(2, 2).unwrap();
        let beta = fit_beta_roundtrip(&input, &geom, 100, 0.05).unwrap();
        assert!(beta.values().iter().all(|&b| (0.0..=1.0).contains(&b)));
        assert_ne!(beta.mean(), 0.5);
    }
}
