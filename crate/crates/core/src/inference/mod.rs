//! Mean-field inference for the fully connected CRF.
//!
//! Messages are Gaussian-filtered marginals. Two interchangeable backends
//! compute the filtering: an exact quadratic one, used as the reference, and
//! the permutohedral lattice.

mod brute;
mod features;
mod lattice;

pub use brute::{gaussian_filter_bruteforce, BRUTE_FORCE_MAX_PIXELS};
pub use features::FeatureMatrix;
pub use lattice::{build_lattice, gaussian_filter_lattice, PermutohedralLattice};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::potentials::{
    pixel_features, softmax_into, total_energy, unary_from_scores, CrfParams, KernelVariant,
    PixelFeature, UnaryPotentials,
};
use crate::types::{LabelMap, MarginalField, NormalizedDepth, RgbImage, UnaryField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Backend {
    BruteForce,
    #[default]
    Lattice,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::BruteForce => "brute",
            Backend::Lattice => "lattice",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "brute" | "bruteforce" | "brute-force" => Ok(Backend::BruteForce),
            "lattice" | "permutohedral" => Ok(Backend::Lattice),
            other => Err(Error::InvalidParameter(format!(
                "unknown backend {other:?} (expected brute or lattice)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InferenceConfig {
    pub backend: Backend,
    pub iterations: usize,
    /// Log the exact energy of the argmax labeling after every step.
    /// Quadratic in the pixel count.
    pub record_energy: bool,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Lattice,
            iterations: 10,
            record_energy: false,
        }
    }
}

impl InferenceConfig {
    pub fn new(backend: Backend, iterations: usize) -> Self {
        Self {
            backend,
            iterations,
            record_energy: false,
        }
    }
}

/// One Gaussian filter over fixed features.
#[derive(Debug, Clone)]
pub enum GaussianFilter {
    BruteForce(FeatureMatrix),
    Lattice(PermutohedralLattice),
}

impl GaussianFilter {
    pub fn build(features: FeatureMatrix, backend: Backend) -> Result<Self> {
        match backend {
            Backend::BruteForce => {
                if features.n() > BRUTE_FORCE_MAX_PIXELS {
                    return Err(Error::TooLargeForBruteForce {
                        pixels: features.n(),
                        limit: BRUTE_FORCE_MAX_PIXELS,
                    });
                }
                Ok(GaussianFilter::BruteForce(features))
            }
            Backend::Lattice => Ok(GaussianFilter::Lattice(PermutohedralLattice::new(&features)?)),
        }
    }

    /// Filters an `n × k` value field, excluding each point's own value.
    pub fn apply(&self, values: &[f64], k: usize) -> Result<Vec<f64>> {
        match self {
            GaussianFilter::BruteForce(f) => gaussian_filter_bruteforce(f, values, k),
            GaussianFilter::Lattice(l) => l.filter(values, k),
        }
    }
}

/// The smoothness filter and the weighted appearance filters of one image.
#[derive(Debug, Clone)]
pub struct CrfKernels {
    smoothness: GaussianFilter,
    /// Split uses two sub-kernels (`1` and `λ`); the other variants one.
    appearance: Vec<(f64, GaussianFilter)>,
}

impl CrfKernels {
    pub fn build(features: &[PixelFeature], params: &CrfParams, backend: Backend) -> Result<Self> {
        params.validate()?;
        let smoothness = GaussianFilter::build(FeatureMatrix::smoothness(features, params), backend)?;
        let appearance = match params.kernel {
            KernelVariant::Joint => vec![(
                1.0,
                GaussianFilter::build(FeatureMatrix::joint(features, params), backend)?,
            )],
            KernelVariant::RgbOnly => vec![(
                1.0,
                GaussianFilter::build(FeatureMatrix::bilateral_rgb(features, params), backend)?,
            )],
            KernelVariant::Split => vec![
                (
                    1.0,
                    GaussianFilter::build(FeatureMatrix::bilateral_rgb(features, params), backend)?,
                ),
                (
                    params.lambda,
                    GaussianFilter::build(FeatureMatrix::bilateral_depth(features, params), backend)?,
                ),
            ],
        };
        Ok(Self {
            smoothness,
            appearance,
        })
    }
}

/// Marginals `softmax(−φ)` of the unary potentials alone.
pub fn initial_marginals(unary: &UnaryPotentials) -> MarginalField {
    let k = unary.num_classes();
    let mut q = vec![0.0; unary.values().len()];
    let mut neg = vec![0.0; k];
    for (phi, out) in unary.values().chunks_exact(k).zip(q.chunks_exact_mut(k)) {
        for (n, p) in neg.iter_mut().zip(phi) {
            *n = -p;
        }
        softmax_into(&neg, out);
    }
    MarginalField::new(unary.width(), unary.height(), k, q).expect("shapes agree")
}

/// One parallel mean-field update with Potts compatibility.
pub fn meanfield_step(
    q: &MarginalField,
    unary: &UnaryPotentials,
    kernels: &CrfKernels,
    params: &CrfParams,
) -> Result<MarginalField> {
    let k = q.num_classes();
    if unary.num_classes() != k || unary.len() != q.len() {
        return Err(Error::Dimension("marginals and unary potentials differ".into()));
    }
    let values = q.probabilities();
    let mut message = vec![0.0; values.len()];
    let mut add = |weight: f64, filter: &GaussianFilter| -> Result<()> {
        if weight == 0.0 {
            return Ok(());
        }
        let filtered = filter.apply(values, k)?;
        for (m, f) in message.iter_mut().zip(&filtered) {
            *m += weight * f;
        }
        Ok(())
    };
    for (w, filter) in &kernels.appearance {
        add(params.omega1 * w, filter)?;
    }
    add(params.omega2, &kernels.smoothness)?;

    let mut next = vec![0.0; values.len()];
    let mut logits = vec![0.0; k];
    for ((m, phi), out) in message
        .chunks_exact(k)
        .zip(unary.values().chunks_exact(k))
        .zip(next.chunks_exact_mut(k))
    {
        let total: f64 = m.iter().sum();
        for l in 0..k {
            // Potts: every other label's message penalizes label l.
            logits[l] = -phi[l] - (total - m[l]);
        }
        softmax_into(&logits, out);
    }
    MarginalField::new(q.width(), q.height(), k, next)
}

#[derive(Debug, Clone)]
pub struct InferenceOutput {
    pub marginals: MarginalField,
    pub labels: LabelMap,
    /// Exact energies of the argmax labeling, starting with the unary argmax.
    /// Empty unless `record_energy` was set.
    pub energy_trace: Vec<f64>,
}

pub fn run_inference(
    unary: &UnaryField,
    rgb: &RgbImage,
    depth: &NormalizedDepth,
    params: &CrfParams,
    config: &InferenceConfig,
) -> Result<InferenceOutput> {
    run_inference_observed(unary, rgb, depth, params, config, |_, _| {})
}

/// As [`run_inference`], calling `observe(iteration, marginals)` after the
/// initial marginals (iteration 0) and after every step.
pub fn run_inference_observed(
    unary: &UnaryField,
    rgb: &RgbImage,
    depth: &NormalizedDepth,
    params: &CrfParams,
    config: &InferenceConfig,
    mut observe: impl FnMut(usize, &MarginalField),
) -> Result<InferenceOutput> {
    if (unary.width(), unary.height()) != (rgb.width(), rgb.height()) {
        return Err(Error::Dimension(format!(
            "unary is {}x{}, rgb is {}x{}",
            unary.width(),
            unary.height(),
            rgb.width(),
            rgb.height()
        )));
    }
    if (depth.width(), depth.height()) != (rgb.width(), rgb.height()) {
        return Err(Error::Dimension(format!(
            "depth is {}x{}, rgb is {}x{}",
            depth.width(),
            depth.height(),
            rgb.width(),
            rgb.height()
        )));
    }
    params.validate()?;
    let features = pixel_features(rgb, depth)?;
    let potentials = unary_from_scores(unary);
    let mut out = infer(&potentials, &features, params, config, &mut observe)?;
    if config.iterations == 0 {
        out.labels = unary.argmax();
    }
    Ok(out)
}

/// Inference from precomputed potentials and features.
pub fn infer(
    potentials: &UnaryPotentials,
    features: &[PixelFeature],
    params: &CrfParams,
    config: &InferenceConfig,
    observe: &mut dyn FnMut(usize, &MarginalField),
) -> Result<InferenceOutput> {
    if features.len() != potentials.len() {
        return Err(Error::Dimension("features and potentials differ".into()));
    }
    if config.backend == Backend::BruteForce && features.len() > BRUTE_FORCE_MAX_PIXELS {
        return Err(Error::TooLargeForBruteForce {
            pixels: features.len(),
            limit: BRUTE_FORCE_MAX_PIXELS,
        });
    }
    let mut q = initial_marginals(potentials);
    observe(0, &q);
    let mut trace = Vec::new();
    if config.record_energy {
        trace.push(total_energy(&q.argmax(), potentials, features, params)?);
    }
    if config.iterations > 0 {
        let kernels = CrfKernels::build(features, params, config.backend)?;
        for it in 1..=config.iterations {
            q = meanfield_step(&q, potentials, &kernels, params)?;
            observe(it, &q);
            if config.record_energy {
                trace.push(total_energy(&q.argmax(), potentials, features, params)?);
            }
        }
    }
    let labels = q.argmax();
    Ok(InferenceOutput {
        marginals: q,
        labels,
        energy_trace: trace,
    })
}
