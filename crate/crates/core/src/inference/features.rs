use crate::error::{Error, Result};
use crate::potentials::{CrfParams, PixelFeature};

/// Row-major `n × dim` feature vectors already divided by their bandwidths,
/// so the kernel between rows `i` and `j` is `exp(−‖u_i − u_j‖² / 2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("feature dimension must be >= 1".into()));
        }
        if data.len() != n * dim {
            return Err(Error::Dimension(format!(
                "feature matrix: expected {} entries, found {}",
                n * dim,
                data.len()
            )));
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { n, dim, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn from_rows(features: &[PixelFeature], dim: usize, row: impl Fn(&PixelFeature, &mut Vec<f64>)) -> Self {
        let mut data = Vec::with_capacity(features.len() * dim);
        for f in features {
            row(f, &mut data);
        }
        Self {
            n: features.len(),
            dim,
            data,
        }
    }

    /// `(x, y) / σγ`
    pub fn smoothness(features: &[PixelFeature], params: &CrfParams) -> Self {
        let s = params.sigma_gamma;
        Self::from_rows(features, 2, |f, out| {
            out.extend([f.position[0] / s, f.position[1] / s])
        })
    }

    /// `(x, y) / σα, (r, g, b) / σβ`
    pub fn bilateral_rgb(features: &[PixelFeature], params: &CrfParams) -> Self {
        let (sa, sb) = (params.sigma_alpha, params.sigma_beta);
        Self::from_rows(features, 5, |f, out| {
            out.extend([f.position[0] / sa, f.position[1] / sa]);
            out.extend(f.color.iter().map(|c| c / sb));
        })
    }

    /// `(x, y) / σα, d / σν`
    pub fn bilateral_depth(features: &[PixelFeature], params: &CrfParams) -> Self {
        let (sa, sv) = (params.sigma_alpha, params.sigma_nu);
        Self::from_rows(features, 3, |f, out| {
            out.extend([f.position[0] / sa, f.position[1] / sa, f.depth / sv])
        })
    }

    /// `(x, y) / σα, (r, g, b) / σβ, d / σν`
    pub fn joint(features: &[PixelFeature], params: &CrfParams) -> Self {
        let (sa, sb, sv) = (params.sigma_alpha, params.sigma_beta, params.sigma_nu);
        Self::from_rows(features, 6, |f, out| {
            out.extend([f.position[0] / sa, f.position[1] / sa]);
            out.extend(f.color.iter().map(|c| c / sb));
            out.push(f.depth / sv);
        })
    }
}
