//! Depth screening, hole filling and rescaling into the color value range.

use crate::error::{Error, Result};
use crate::types::{is_valid_depth, DepthImage, NormalizedDepth, RgbImage};

/// Largest invalid fraction at which a depth map is still usable.
pub const DEFAULT_INVALID_THRESHOLD: f64 = 0.45;

/// Validity accounting and statistics over valid samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthStats {
    pub valid_fraction: f64,
    /// `None` when no sample is valid.
    pub mean: Option<f64>,
    /// Population standard deviation; `None` when no sample is valid.
    pub std: Option<f64>,
}

impl DepthStats {
    pub fn invalid_fraction(&self) -> f64 {
        1.0 - self.valid_fraction
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> Option<(f64, f64)> {
    let n = values.clone().count();
    if n == 0 {
        return None;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    Some((mean, var.sqrt()))
}

pub fn depth_stats(depth: &DepthImage) -> DepthStats {
    let valid = depth
        .data()
        .iter()
        .filter(|&&d| is_valid_depth(d))
        .map(|&d| d as f64);
    let n_valid = valid.clone().count();
    let ms = mean_std(valid);
    DepthStats {
        valid_fraction: n_valid as f64 / depth.len() as f64,
        mean: ms.map(|m| m.0),
        std: ms.map(|m| m.1),
    }
}

/// True iff the invalid fraction does not exceed `threshold`.
pub fn sample_is_usable(depth: &DepthImage, threshold: f64) -> Result<bool> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "usability threshold must lie in (0, 1), got {threshold}"
        )));
    }
    // Fractions sitting exactly on the threshold stay usable despite rounding.
    let invalid = depth.invalid_count() as f64;
    let total = depth.len() as f64;
    Ok(invalid <= threshold * total + 1e-9 * total)
}

/// Replaces every invalid sample by the nearest valid one (Euclidean pixel
/// distance, ties to the earliest source in row-major order).
pub fn fill_invalid(depth: &DepthImage) -> Result<DepthImage> {
    let (w, h) = (depth.width(), depth.height());
    let data = depth.data();
    if data.iter().all(|&d| is_valid_depth(d)) {
        return Ok(depth.clone());
    }
    if !data.iter().any(|&d| is_valid_depth(d)) {
        return Err(Error::Unfillable);
    }

    // Per column, the nearest valid row (ties to the upper one).
    const NONE: usize = usize::MAX;
    let mut nearest_row = vec![NONE; w * h];
    for x in 0..w {
        let mut last = NONE;
        for y in 0..h {
            if is_valid_depth(data[y * w + x]) {
                last = y;
            }
            nearest_row[y * w + x] = last;
        }
        let mut next = NONE;
        for y in (0..h).rev() {
            if is_valid_depth(data[y * w + x]) {
                next = y;
            }
            let up = nearest_row[y * w + x];
            let pick = match (up, next) {
                (NONE, n) => n,
                (u, NONE) => u,
                (u, n) => {
                    if n - y < y - u {
                        n
                    } else {
                        u
                    }
                }
            };
            nearest_row[y * w + x] = pick;
        }
    }

    let mut out = data.to_vec();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if is_valid_depth(data[i]) {
                continue;
            }
            let mut best: Option<(u64, usize)> = None;
            for sx in 0..w {
                let sy = nearest_row[y * w + sx];
                if sy == NONE {
                    continue;
                }
                let dx = sx.abs_diff(x) as u64;
                let dy = sy.abs_diff(y) as u64;
                let key = (dx * dx + dy * dy, sy * w + sx);
                if best.is_none_or(|b| key < b) {
                    best = Some(key);
                }
            }
            out[i] = data[best.expect("some valid pixel exists").1];
        }
    }
    DepthImage::new(w, h, out)
}

/// Affine map that gives the depth the pooled mean and standard deviation of
/// the RGB samples. Invalid pixels are filled first; the depth statistics use
/// the originally valid pixels only.
pub fn normalize_depth_to_rgb(depth: &DepthImage, rgb: &RgbImage) -> Result<NormalizedDepth> {
    if depth.width() != rgb.width() || depth.height() != rgb.height() {
        return Err(Error::Dimension(format!(
            "depth is {}x{}, rgb is {}x{}",
            depth.width(),
            depth.height(),
            rgb.width(),
            rgb.height()
        )));
    }
    let valid: Vec<bool> = depth.data().iter().map(|&d| is_valid_depth(d)).collect();
    let filled = fill_invalid(depth)?;
    let (mu_d, sigma_d) = mean_std(
        filled
            .data()
            .iter()
            .zip(&valid)
            .filter(|(_, &v)| v)
            .map(|(&d, _)| d as f64),
    )
    .ok_or(Error::Unfillable)?;
    let (mu_rgb, sigma_rgb) = rgb.pooled_stats();

    let data = filled
        .data()
        .iter()
        .map(|&d| {
            if sigma_d == 0.0 {
                mu_rgb
            } else {
                (d as f64 - mu_d) / sigma_d * sigma_rgb + mu_rgb
            }
        })
        .collect();
    NormalizedDepth::new(depth.width(), depth.height(), data, valid)
}

/// Linear map of the full 16-bit range onto `[0, 255]`, markers included.
pub fn normalize_depth_range(depth: &DepthImage) -> Vec<f64> {
    depth
        .data()
        .iter()
        .map(|&d| d as f64 * 255.0 / 65535.0)
        .collect()
}
