//! PNG/PPM image loading and saving.
//!
//! 8-bit images are promoted to 64-bit floats in [0, 255]; grayscale
//! stays single-channel, everything else becomes RGB.

use std::path::Path;

use adapool::ActivationMap;
use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{CliError, CliResult};

pub fn load_image(path: &Path) -> CliResult<ActivationMap> {
    let img = image::open(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(match img {
        DynamicImage::ImageLuma8(gray) => {
            let (w, h) = gray.dimensions();
            let data: Vec<f64> = gray.pixels().map(|p| p.0[0] as f64).collect();
            ActivationMap::new(1, vec![h as usize, w as usize], data)?
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            let n = (w * h) as usize;
            let mut data = vec![0.0f64; 3 * n];
            for (i, p) in rgb.pixels().enumerate() {
                data[i] = p.0[0] as f64;
                data[n + i] = p.0[1] as f64;
                data[2 * n + i] = p.0[2] as f64;
            }
            ActivationMap::new(3, vec![h as usize, w as usize], data)?
        }
    })
}

/// Writes a 1- or 3-channel 2D map as an 8-bit image; values are
/// rounded and clamped to [0, 255]. Format follows the file extension
/// (.png or .ppm).
pub fn save_image(path: &Path, map: &ActivationMap) -> CliResult<()> {
    if map.spatial().len() != 2 {
        return Err(CliError::Data("only 2D maps can be written as images".into()));
    }
    let (h, w) = (map.spatial()[0], map.spatial()[1]);
    let quantize = |v: f64| -> u8 { v.round().clamp(0.0, 255.0) as u8 };
    match map.channels() {
        1 => {
            let pixels: Vec<u8> = map.channel(0).iter().map(|&v| quantize(v)).collect();
            let img = GrayImage::from_raw(w as u32, h as u32, pixels)
                .expect("buffer length matches dimensions");
            img.save(path)?;
        }
        3 => {
            let n = h * w;
            let mut pixels = Vec::with_capacity(3 * n);
            for i in 0..n {
                pixels.push(quantize(map.channel(0)[i]));
                pixels.push(quantize(map.channel(1)[i]));
                pixels.push(quantize(map.channel(2)[i]));
            }
            let img = RgbImage::from_raw(w as u32, h as u32, pixels)
                .expect("buffer length matches dimensions");
            img.save(path)?;
        }
        c => {
            return Err(CliError::Data(format!(
                "cannot write a {c}-channel map as an image (expected 1 or 3 channels)"
            )))
        }
    }
    Ok(())
}
