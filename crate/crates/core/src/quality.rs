//! SSIM and PSNR metrics and the downsample/round-trip protocol.
//!
//! The round trip pools an image, inflates the result back to the
//! original resolution, and scores the restoration against the
//! original. Images are 64-bit floats in [0, 255] with a dynamic range
//! of 255.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ActivationMap, PoolGeometry};
use crate::ops::PoolOperator;
use crate::unpool::{bilinear_inflate, nearest_inflate};

/// Dynamic range used by the image protocol.
pub const IMAGE_MAX: f64 = 255.0;

/// Images are pooled at unit scale: 8-bit values are divided by this
/// factor before the operator runs and multiplied back afterwards.
/// The exponential weightings are scale-sensitive and operate in their
/// intended regime on unit-scale activations, while every other
/// operator is scale-equivariant, and SSIM/PSNR do not see the factor
/// at all. A power of two keeps the conversion exact in binary
/// floating point.
pub const POOL_SCALE: f64 = 256.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// How a pooled map is blown back up to the original resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InflateMode {
    Nearest,
    Bilinear,
}

impl std::str::FromStr for InflateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(Self::Nearest),
            "bilinear" => Ok(Self::Bilinear),
            other => Err(Error::InvalidParameter(format!(
                "unknown inflate mode {other:?} (expected nearest or bilinear)"
            ))),
        }
    }
}

/// One similarity measurement of a method at a kernel size.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityScore {
    pub ssim: f64,
    pub psnr_db: f64,
    pub method: String,
    pub kernel: usize,
}

fn check_same_shape(a: &ActivationMap, b: &ActivationMap) -> Result<()> {
    if a.channels() != b.channels() || a.spatial() != b.spatial() {
        return Err(Error::Shape(format!(
            "maps differ in shape: {}x{:?} vs {}x{:?}",
            a.channels(),
            a.spatial(),
            b.channels(),
            b.spatial()
        )));
    }
    Ok(())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, slot) in w.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *slot = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *slot;
    }
    for slot in w.iter_mut() {
        *slot /= sum;
    }
    w
}

/// Separable valid-mode Gaussian filter: (h, w) -> (h - 10, w - 10).
fn filter_valid(plane: &[f64], h: usize, w: usize, window: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0f64; h * ow];
    rows.par_chunks_mut(ow).enumerate().for_each(|(y, out_row)| {
        let src = &plane[y * w..(y + 1) * w];
        for (x, slot) in out_row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &wj) in window.iter().enumerate() {
                acc += wj * src[x + j];
            }
            *slot = acc;
        }
    });
    let mut out = vec![0.0f64; oh * ow];
    out.par_chunks_mut(ow).enumerate().for_each(|(y, out_row)| {
        for (x, slot) in out_row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, &wj) in window.iter().enumerate() {
                acc += wj * rows[(y + j) * ow + x];
            }
            *slot = acc;
        }
    });
    out
}

/// Mean local SSIM over an 11x11 Gaussian window (sigma 1.5,
/// K1 = 0.01, K2 = 0.03), averaged over channels. Both maps must be 2D
/// and at least 11x11.
pub fn ssim(a: &ActivationMap, b: &ActivationMap, max_value: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    if a.spatial().len() != 2 {
        return Err(Error::Shape("ssim is defined for 2D maps".into()));
    }
    let (h, w) = (a.spatial()[0], a.spatial()[1]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {h}x{w}"
        )));
    }
    if !(max_value > 0.0) {
        return Err(Error::InvalidParameter("ssim dynamic range must be positive".into()));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * max_value) * (SSIM_K1 * max_value);
    let c2 = (SSIM_K2 * max_value) * (SSIM_K2 * max_value);

    let mut channel_mean = 0.0;
    for c in 0..a.channels() {
        let x = a.channel(c);
        let y = b.channel(c);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(y).map(|(u, v)| u * v).collect();
        let mx = filter_valid(x, h, w, &window);
        let my = filter_valid(y, h, w, &window);
        let mxx = filter_valid(&xx, h, w, &window);
        let myy = filter_valid(&yy, h, w, &window);
        let mxy = filter_valid(&xy, h, w, &window);
        let mut acc = 0.0;
        for i in 0..mx.len() {
            let vx = mxx[i] - mx[i] * mx[i];
            let vy = myy[i] - my[i] * my[i];
            let vxy = mxy[i] - mx[i] * my[i];
            let num = (2.0 * mx[i] * my[i] + c1) * (2.0 * vxy + c2);
            let den = (mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2);
            acc += num / den;
        }
        channel_mean += acc / mx.len() as f64;
    }
    Ok(channel_mean / a.channels() as f64)
}

/// Peak signal-to-noise ratio in dB: 10 log10(max^2 / MSE), positive
/// infinity when the maps are identical.
pub fn psnr(a: &ActivationMap, b: &ActivationMap, max_value: f64) -> Result<f64> {
    check_same_shape(a, b)?;
    if !(max_value > 0.0) {
        return Err(Error::InvalidParameter("psnr dynamic range must be positive".into()));
    }
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (max_value * max_value / mse).log10())
    }
}

/// Crops a map to spatial extents divisible by `k` (floor convention).
pub fn crop_to_multiple(image: &ActivationMap, k: usize) -> Result<ActivationMap> {
    if k == 0 {
        return Err(Error::InvalidParameter("kernel must be positive".into()));
    }
    let cropped: Vec<usize> = image.spatial().iter().map(|&e| (e / k) * k).collect();
    if cropped.iter().any(|&e| e == 0) {
        return Err(Error::Shape(format!(
            "image extents {:?} too small for kernel {k}",
            image.spatial()
        )));
    }
    if cropped == image.spatial() {
        return Ok(image.clone());
    }
    if image.spatial().len() != 2 {
        return Err(Error::Shape("cropping supports 2D maps only".into()));
    }
    let w = image.spatial()[1];
    let (ch, cw) = (cropped[0], cropped[1]);
    let mut data = Vec::with_capacity(image.channels() * ch * cw);
    for c in 0..image.channels() {
        let plane = image.channel(c);
        for y in 0..ch {
            data.extend_from_slice(&plane[y * w..y * w + cw]);
        }
    }
    Ok(ActivationMap::from_parts(image.channels(), cropped, data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{BaselineKind, PoolOperator};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(channels: usize, h: usize, w: usize, seed: u64) -> ActivationMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..channels * h * w).map(|_| rng.random_range(0.0..255.0)).collect();
        ActivationMap::new(channels, vec![h, w], data).unwrap()
    }

    #[test]
    fn ssim_of_a_map_with_itself_is_one() {
        let a = random_image(3, 16, 16, 1);
        assert_eq!(ssim(&a, &a, IMAGE_MAX).unwrap(), 1.0);
    }

    /// Brute-force single-window oracle: evaluates the SSIM formula
    /// with explicit double loops over one 11x11 tile.
    fn ssim_oracle_11x11(x: &[f64], y: &[f64], max_value: f64) -> f64 {
        let window = gaussian_window();
        let mut w2 = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
        for i in 0..SSIM_WINDOW {
            for j in 0..SSIM_WINDOW {
                w2[i * SSIM_WINDOW + j] = window[i] * window[j];
            }
        }
        let dot = |p: &[f64], q: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..p.len() {
                acc += w2[i] * p[i] * q[i];
            }
            acc
        };
        let wmean = |p: &[f64]| -> f64 {
            let mut acc = 0.0;
            for i in 0..p.len() {
                acc += w2[i] * p[i];
            }
            acc
        };
        let (mx, my) = (wmean(x), wmean(y));
        let vx = dot(x, x) - mx * mx;
        let vy = dot(y, y) - my * my;
        let vxy = dot(x, y) - mx * my;
        let c1 = (SSIM_K1 * max_value).powi(2);
        let c2 = (SSIM_K2 * max_value).powi(2);
        ((2.0 * mx * my + c1) * (2.0 * vxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    }

    #[test]
    fn checkerboard_against_its_inverse_is_negative_and_matches_the_oracle() {
        let board: Vec<f64> =
            (0..121).map(|i| (((i / 11) + (i % 11)) % 2) as f64).collect();
        let inverse: Vec<f64> = board.iter().map(|v| 1.0 - v).collect();
        let a = ActivationMap::new(1, vec![11, 11], board.clone()).unwrap();
        let b = ActivationMap::new(1, vec![11, 11], inverse.clone()).unwrap();
        let got = ssim(&a, &b, 1.0).unwrap();
        assert!(got < 0.0, "expected negative ssim, got {got}");
        let expected = ssim_oracle_11x11(&board, &inverse, 1.0);
        assert_relative_eq!(got, expected, max_relative = 1e-10);
    }

    #[test]
    fn random_tile_matches_the_oracle() {
        let a = random_image(1, 11, 11, 5);
        let b = random_image(1, 11, 11, 6);
        let got = ssim(&a, &b, IMAGE_MAX).unwrap();
        let expected = ssim_oracle_11x11(a.channel(0), b.channel(0), IMAGE_MAX);
        assert_relative_eq!(got, expected, max_relative = 1e-10);
    }

    #[test]
    fn ssim_is_invariant_to_identical_channel_permutation() {
        let a = random_image(3, 16, 16, 7);
        let b = random_image(3, 16, 16, 8);
        let permute = |m: &ActivationMap| {
            let mut data = Vec::with_capacity(m.data().len());
            for c in [2usize, 0, 1] {
                data.extend_from_slice(m.channel(c));
            }
            ActivationMap::new(3, m.spatial().to_vec(), data).unwrap()
        };
        let s = ssim(&a, &b, IMAGE_MAX).unwrap();
        let sp = ssim(&permute(&a), &permute(&b), IMAGE_MAX).unwrap();
        assert_relative_eq!(s, sp, max_relative = 1e-12);
    }

    #[test]
    fn ssim_shape_and_size_errors() {
        let a = random_image(1, 16, 16, 0);
        let b = random_image(1, 16, 12, 0);
        assert!(ssim(&a, &b, IMAGE_MAX).is_err());
        let tiny = random_image(1, 8, 8, 0);
        assert!(ssim(&tiny, &tiny, IMAGE_MAX).is_err());
    }

    #[test]
    fn psnr_examples() {
        let a = random_image(2, 12, 12, 2);
        assert_eq!(psnr(&a, &a, IMAGE_MAX).unwrap(), f64::INFINITY);

        let zeros = ActivationMap::new(1, vec![4, 4], vec![0.0; 16]).unwrap();
        let sixteens = ActivationMap::new(1, vec![4, 4], vec![16.0; 16]).unwrap();
        let got = psnr(&zeros, &sixteens, 255.0).unwrap();
        let expected = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        assert_relative_eq!(got, expected, max_relative = 1e-15);
        assert_relative_eq!(got, 24.05, epsilon = 0.01);
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = random_image(3, 10, 10, 3);
        let b = random_image(3, 10, 10, 4);
        assert_eq!(psnr(&a, &b, IMAGE_MAX).unwrap(), psnr(&b, &a, IMAGE_MAX).unwrap());
    }

    #[test]
    fn roundtrip_at_unit_kernel_is_the_identity_for_every_operator() {
        let image = random_image(1, 16, 16, 9);
        for op in [
            PoolOperator::Baseline(BaselineKind::Average),
            PoolOperator::Baseline(BaselineKind::Maximum),
            PoolOperator::Baseline(BaselineKind::Stochastic { seed: 3 }),
            PoolOperator::Idw(crate::measures::DistanceKind::L2),
            PoolOperator::Em,
            PoolOperator::Edscw,
            PoolOperator::Ada { beta: 0.5 },
        ] {
            let score = eval_roundtrip(&image, &op, 1, InflateMode::Nearest).unwrap();
            assert_eq!(score.ssim, 1.0, "{}", op.name());
            assert_eq!(score.psnr_db, f64::INFINITY, "{}", op.name());
            assert_eq!(score.kernel, 1);
        }
    }

    #[test]
    fn constant_image_roundtrip_is_perfect() {
        let image = ActivationMap::new(1, vec![16, 16], vec![120.0; 256]).unwrap();
        let score =
            eval_roundtrip(&image, &PoolOperator::Baseline(BaselineKind::Average), 2, InflateMode::Nearest)
                .unwrap();
        assert_eq!(score.ssim, 1.0);
        assert_eq!(score.psnr_db, f64::INFINITY);
    }

    #[test]
    fn roundtrip_scores_differ_between_average_and_maximum() {
        let image = random_image(1, 32, 32, 10);
        let avg = eval_roundtrip(&image, &PoolOperator::Baseline(BaselineKind::Average), 2, InflateMode::Nearest)
            .unwrap();
        let max = eval_roundtrip(&image, &PoolOperator::Baseline(BaselineKind::Maximum), 2, InflateMode::Nearest)
            .unwrap();
        assert_ne!(avg.ssim, max.ssim);
        assert_ne!(avg.psnr_db, max.psnr_db);
    }

    #[test]
    fn crop_to_multiple_floors_the_extents() {
        let image = random_image(2, 13, 17, 11);
        let cropped = crop_to_multiple(&image, 5).unwrap();
        assert_eq!(cropped.spatial(), &[10, 15]);
        assert_eq!(cropped.value(1, 0), image.value(1, 0));
        assert_eq!(cropped.value(0, 9 * 15 + 14), image.value(0, 9 * 17 + 14));
        assert!(crop_to_multiple(&image, 20).is_err());
    }
}

/// Downsamples `image` with `operator` at stride = kernel = `k`,
/// inflates the result back to the image resolution, and scores the
/// restoration against the original.
pub fn eval_roundtrip(
    image: &ActivationMap,
    operator: &PoolOperator,
    k: usize,
    inflate: InflateMode,
) -> Result<QualityScore> {
    let geom = PoolGeometry::uniform(image.spatial().len(), k)?;
    let pooled = operator.apply(&image.scaled(1.0 / POOL_SCALE), &geom)?;
    let restored = match inflate {
        InflateMode::Nearest => nearest_inflate(&pooled.output, &geom, image.spatial())?,
        InflateMode::Bilinear => bilinear_inflate(&pooled.output, image.spatial())?,
    }
    .scaled(POOL_SCALE);
    Ok(QualityScore {
        ssim: ssim(image, &restored, IMAGE_MAX)?,
        psnr_db: psnr(image, &restored, IMAGE_MAX)?,
        method: operator.name(),
        kernel: k,
    })
}
