use rayon::prelude::*;

use super::features::FeatureMatrix;
use crate::error::{Error, Result};

/// Largest pixel count accepted by the quadratic backend (a 64×64 image).
pub const BRUTE_FORCE_MAX_PIXELS: usize = 64 * 64;

/// Exact Gaussian filter, `out_i = Σ_{j≠i} exp(−‖u_i − u_j‖²/2) · v_j`.
///
/// `values` is `n × k`, row-major. Costs `O(n²·(dim + k))`.
pub fn gaussian_filter_bruteforce(
    features: &FeatureMatrix,
    values: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    let n = features.n();
    if values.len() != n * k {
        return Err(Error::Dimension(format!(
            "values: expected {}x{k} entries, found {}",
            n,
            values.len()
        )));
    }
    let mut out = vec![0.0; n * k];
    out.par_chunks_mut(k.max(1))
        .enumerate()
        .for_each(|(i, row)| {
            let ui = features.row(i);
            for j in 0..n {
                if j == i {
                    continue;
                }
                let d2: f64 = ui
                    .iter()
                    .zip(features.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let w = (-0.5 * d2).exp();
                for (o, v) in row.iter_mut().zip(&values[j * k..(j + 1) * k]) {
                    *o += w * v;
                }
            }
        });
    Ok(out)
}
