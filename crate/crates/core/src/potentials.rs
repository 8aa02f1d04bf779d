//! Energy terms of the depth-sensitive dense CRF.
//!
//! The energy of a labeling `y` is
//!
//! ```text
//! E(y) = Σ_i φ_i(y_i) + Σ_{i<j} μ(y_i, y_j) · [ω1·θa(f_i, f_j) + ω2·θs(f_i, f_j)]
//! ```
//!
//! with `φ_i = −log softmax(scores_i)`, the Potts compatibility `μ(a, b) = [a ≠ b]`,
//! a position-only smoothness kernel `θs`, and an appearance kernel `θa` over
//! position, color and depth. Everything here is evaluated exactly; the
//! quadratic [`total_energy`] serves as the reference for inference tests.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::types::{LabelMap, NormalizedDepth, RgbImage, UnaryField, IGNORE_LABEL};

/// Lower clamp applied to softmax probabilities before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Appearance kernel family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KernelVariant {
    /// One Gaussian over position, color and depth.
    #[default]
    Joint,
    /// A position+color Gaussian plus `λ` times a position+depth Gaussian.
    Split,
    /// Position+color only; depth is ignored.
    RgbOnly,
}

impl fmt::Display for KernelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            KernelVariant::Joint => "joint",
            KernelVariant::Split => "split",
            KernelVariant::RgbOnly => "rgb",
        })
    }
}

impl FromStr for KernelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "joint" => Ok(KernelVariant::Joint),
            "split" => Ok(KernelVariant::Split),
            "rgb" | "rgbonly" | "rgb_only" => Ok(KernelVariant::RgbOnly),
            other => Err(Error::InvalidParameter(format!(
                "unknown kernel variant {other:?} (expected joint, split or rgb)"
            ))),
        }
    }
}

/// Weights and bandwidths of the pairwise potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrfParams {
    /// Appearance kernel weight.
    pub omega1: f64,
    /// Smoothness kernel weight.
    pub omega2: f64,
    /// Position bandwidth of the appearance kernel, in pixels.
    pub sigma_alpha: f64,
    /// Color bandwidth, in intensity units.
    pub sigma_beta: f64,
    /// Position bandwidth of the smoothness kernel, in pixels.
    pub sigma_gamma: f64,
    /// Depth bandwidth, in normalized-depth units.
    pub sigma_nu: f64,
    /// Weight of the depth sub-kernel in the split variant.
    pub lambda: f64,
    pub kernel: KernelVariant,
    pub iterations: usize,
}

impl Default for CrfParams {
    fn default() -> Self {
        Self {
            omega1: 8.0,
            omega2: 3.0,
            sigma_alpha: 130.0,
            sigma_beta: 9.5,
            sigma_gamma: 3.0,
            sigma_nu: 9.5,
            lambda: 1.0,
            kernel: KernelVariant::Joint,
            iterations: 10,
        }
    }
}

impl CrfParams {
    /// Weights may be zero (which switches a term off); bandwidths must be positive.
    pub fn validate(&self) -> Result<()> {
        let bandwidths = [
            ("sigma_alpha", self.sigma_alpha),
            ("sigma_beta", self.sigma_beta),
            ("sigma_gamma", self.sigma_gamma),
            ("sigma_nu", self.sigma_nu),
        ];
        for (name, v) in bandwidths {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("omega1", self.omega1), ("omega2", self.omega2), ("lambda", self.lambda)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Flat `key = value` text, one parameter per line.
    pub fn to_config_string(&self) -> String {
        format!(
            "omega1 = {}\nomega2 = {}\nsigma_alpha = {}\nsigma_beta = {}\nsigma_gamma = {}\n\
             sigma_nu = {}\nlambda = {}\nkernel = {}\niterations = {}\n",
            self.omega1,
            self.omega2,
            self.sigma_alpha,
            self.sigma_beta,
            self.sigma_gamma,
            self.sigma_nu,
            self.lambda,
            self.kernel,
            self.iterations
        )
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse_config(text: &str) -> Result<Self> {
        let mut p = CrfParams::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config {
                line: n + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = || {
                value
                    .parse::<f64>()
                    .map_err(|_| err(format!("{key}: not a number: {value:?}")))
            };
            match key {
                "omega1" | "w1" => p.omega1 = num()?,
                "omega2" | "w2" => p.omega2 = num()?,
                "sigma_alpha" | "sa" => p.sigma_alpha = num()?,
                "sigma_beta" | "sb" => p.sigma_beta = num()?,
                "sigma_gamma" | "sg" => p.sigma_gamma = num()?,
                "sigma_nu" | "sv" => p.sigma_nu = num()?,
                "lambda" => p.lambda = num()?,
                "kernel" => p.kernel = value.parse().map_err(|e: Error| err(e.to_string()))?,
                "iterations" | "iters" => {
                    p.iterations = value
                        .parse()
                        .map_err(|_| err(format!("iterations: not an integer: {value:?}")))?
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        p.validate()?;
        Ok(p)
    }
}

/// Position, color and depth of one pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelFeature {
    pub position: [f64; 2],
    pub color: [f64; 3],
    pub depth: f64,
}

impl PixelFeature {
    pub fn new(position: [f64; 2], color: [f64; 3], depth: f64) -> Self {
        Self {
            position,
            color,
            depth,
        }
    }
}

/// Per-pixel features with `(0, 0)` at the top-left and unit pixel spacing.
pub fn pixel_features(rgb: &RgbImage, depth: &NormalizedDepth) -> Result<Vec<PixelFeature>> {
    if rgb.width() != depth.width() || rgb.height() != depth.height() {
        return Err(Error::Dimension("rgb and depth sizes differ".into()));
    }
    let w = rgb.width();
    Ok((0..rgb.len())
        .map(|i| {
            let c = rgb.pixel(i);
            PixelFeature {
                position: [(i % w) as f64, (i / w) as f64],
                color: [c[0] as f64, c[1] as f64, c[2] as f64],
                depth: depth.data()[i],
            }
        })
        .collect())
}

fn sq_dist<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Potts compatibility.
#[inline]
pub fn potts(a: u8, b: u8) -> f64 {
    if a == b {
        0.0
    } else {
        1.0
    }
}

pub fn smoothness_kernel(pi: [f64; 2], pj: [f64; 2], sigma_gamma: f64) -> f64 {
    (-sq_dist(&pi, &pj) / (2.0 * sigma_gamma * sigma_gamma)).exp()
}

fn position_term(fi: &PixelFeature, fj: &PixelFeature, p: &CrfParams) -> f64 {
    sq_dist(&fi.position, &fj.position) / (2.0 * p.sigma_alpha * p.sigma_alpha)
}

fn color_term(fi: &PixelFeature, fj: &PixelFeature, p: &CrfParams) -> f64 {
    sq_dist(&fi.color, &fj.color) / (2.0 * p.sigma_beta * p.sigma_beta)
}

fn depth_term(fi: &PixelFeature, fj: &PixelFeature, p: &CrfParams) -> f64 {
    let d = fi.depth - fj.depth;
    d * d / (2.0 * p.sigma_nu * p.sigma_nu)
}

/// Single Gaussian over position, color and depth.
pub fn appearance_joint(fi: &PixelFeature, fj: &PixelFeature, params: &CrfParams) -> f64 {
    (-position_term(fi, fj, params) - color_term(fi, fj, params) - depth_term(fi, fj, params)).exp()
}

/// Position+color bilateral kernel.
pub fn appearance_rgb(fi: &PixelFeature, fj: &PixelFeature, params: &CrfParams) -> f64 {
    (-position_term(fi, fj, params) - color_term(fi, fj, params)).exp()
}

/// Position+color Gaussian plus `λ` times a position+depth Gaussian.
pub fn appearance_split(fi: &PixelFeature, fj: &PixelFeature, params: &CrfParams) -> f64 {
    let pos = position_term(fi, fj, params);
    (-pos - color_term(fi, fj, params)).exp()
        + params.lambda * (-pos - depth_term(fi, fj, params)).exp()
}

pub fn appearance(fi: &PixelFeature, fj: &PixelFeature, params: &CrfParams) -> f64 {
    match params.kernel {
        KernelVariant::Joint => appearance_joint(fi, fj, params),
        KernelVariant::Split => appearance_split(fi, fj, params),
        KernelVariant::RgbOnly => appearance_rgb(fi, fj, params),
    }
}

pub fn pairwise(fi: &PixelFeature, fj: &PixelFeature, yi: u8, yj: u8, params: &CrfParams) -> f64 {
    if yi == yj {
        return 0.0;
    }
    potts(yi, yj)
        * (params.omega1 * appearance(fi, fj, params)
            + params.omega2 * smoothness_kernel(fi.position, fj.position, params.sigma_gamma))
}

/// `−log P(l)` per pixel and class, class index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryPotentials {
    width: usize,
    height: usize,
    num_classes: usize,
    values: Vec<f64>,
}

impl UnaryPotentials {
    pub fn new(width: usize, height: usize, num_classes: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != width * height * num_classes {
            return Err(Error::Dimension(format!(
                "unary potentials: expected {} values, found {}",
                width * height * num_classes,
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            num_classes,
            values,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.num_classes..(index + 1) * self.num_classes]
    }
}

/// Numerically stable softmax of one score row into `out`.
pub fn softmax_into(scores: &[f64], out: &mut [f64]) {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

pub fn unary_from_scores(unary: &UnaryField) -> UnaryPotentials {
    let k = unary.num_classes();
    let mut values = vec![0.0; unary.scores().len()];
    let ceiling = -PROBABILITY_FLOOR.ln();
    for (scores, out) in unary.scores().chunks_exact(k).zip(values.chunks_exact_mut(k)) {
        // −ln softmax in log-sum-exp form, so a dominant class keeps a
        // positive cost instead of rounding to −ln 1 = 0.
        let (top, max) = scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
        let rest: f64 = scores
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != top)
            .map(|(_, &s)| (s - max).exp())
            .sum();
        let lse = rest.ln_1p();
        for (v, &s) in out.iter_mut().zip(scores) {
            *v = ((max - s) + lse).clamp(f64::MIN_POSITIVE, ceiling);
        }
    }
    UnaryPotentials {
        width: unary.width(),
        height: unary.height(),
        num_classes: k,
        values,
    }
}

/// Exact energy of `labeling`, each unordered pixel pair counted once.
///
/// Quadratic in the pixel count; meant for small images and tests.
pub fn total_energy(
    labeling: &LabelMap,
    unary: &UnaryPotentials,
    features: &[PixelFeature],
    params: &CrfParams,
) -> Result<f64> {
    let n = labeling.len();
    if unary.len() != n || features.len() != n {
        return Err(Error::Dimension(format!(
            "labeling has {n} pixels, unary {}, features {}",
            unary.len(),
            features.len()
        )));
    }
    let labels = labeling.labels();
    if let Some(pixel) = labels
        .iter()
        .position(|&l| l == IGNORE_LABEL || l as usize >= unary.num_classes())
    {
        return Err(Error::LabelOutOfRange {
            value: labels[pixel],
            pixel,
            num_classes: unary.num_classes(),
        });
    }
    let mut energy: f64 = (0..n).map(|i| unary.pixel(i)[labels[i] as usize]).sum();
    for i in 0..n {
        for j in i + 1..n {
            energy += pairwise(&features[i], &features[j], labels[i], labels[j], params);
        }
    }
    Ok(energy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TOL: f64 = 1e-9;

    fn at(x: f64, y: f64) -> PixelFeature {
        PixelFeature::new([x, y], [0.0; 3], 0.0)
    }

    #[test]
    fn potts_examples() {
        assert_eq!(potts(3, 3), 0.0);
        assert_eq!(potts(0, 2), 1.0);
        for a in 0..6 {
            for b in 0..6 {
                assert_eq!(potts(a, b), potts(b, a));
            }
        }
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(smoothness_kernel([4.0, 5.0], [4.0, 5.0], 3.0), 1.0);
        assert!((smoothness_kernel([0.0, 0.0], [3.0, 0.0], 3.0) - (-0.5f64).exp()).abs() < TOL);
        assert!((smoothness_kernel([0.0, 0.0], [3.0, 0.0], 3.0) - 0.606531).abs() < 1e-6);
        let far = smoothness_kernel([0.0, 0.0], [0.0, 30.0], 3.0);
        assert!((far - (-50.0f64).exp()).abs() < 1e-30);
    }

    #[test]
    fn joint_examples() {
        let p = CrfParams {
            sigma_beta: 10.0,
            sigma_nu: 10.0,
            ..CrfParams::default()
        };
        let f = PixelFeature::new([1.0, 2.0], [10.0, 20.0, 30.0], 5.0);
        assert_eq!(appearance_joint(&f, &f, &p), 1.0);
        let g = PixelFeature { color: [20.0, 20.0, 30.0], ..f };
        assert!((appearance_joint(&f, &g, &p) - (-0.5f64).exp()).abs() < TOL);
        let g = PixelFeature { depth: 15.0, ..f };
        assert!((appearance_joint(&f, &g, &p) - (-0.5f64).exp()).abs() < TOL);
    }

    #[test]
    fn split_examples() {
        let p = CrfParams {
            lambda: 1.0,
            ..CrfParams::default()
        };
        let f = PixelFeature::new([1.0, 2.0], [10.0, 20.0, 30.0], 5.0);
        assert_eq!(appearance_split(&f, &f, &p), 2.0);
        let g = PixelFeature { color: [255.0, 0.0, 255.0], ..f };
        assert!((appearance_split(&f, &g, &p) - 1.0).abs() < TOL);

        let p0 = CrfParams { lambda: 0.0, ..p };
        let h = PixelFeature::new([7.0, 1.0], [1.0, 2.0, 3.0], 40.0);
        assert_eq!(appearance_split(&f, &h, &p0), appearance_rgb(&f, &h, &p0));
    }

    #[test]
    fn pairwise_examples() {
        let p = CrfParams::default();
        let f = PixelFeature::new([3.0, 3.0], [9.0, 9.0, 9.0], 1.0);
        assert_eq!(pairwise(&f, &f, 2, 2, &p), 0.0);
        assert!((pairwise(&f, &f, 0, 1, &p) - 11.0).abs() < TOL);

        // θa = 0.5 through a pure color offset: ‖ΔI‖² = 2σβ² ln 2.
        let dc = (2.0 * p.sigma_beta * p.sigma_beta * 2f64.ln()).sqrt();
        let a = PixelFeature::new([0.0, 0.0], [0.0; 3], 0.0);
        let b = PixelFeature::new([3.0, 0.0], [dc, 0.0, 0.0], 0.0);
        let params = CrfParams {
            sigma_alpha: 1e12,
            ..p
        };
        assert!((appearance_joint(&a, &b, &params) - 0.5).abs() < 1e-12);
        let expected = 8.0 * 0.5 + 3.0 * (-0.5f64).exp();
        assert!((pairwise(&a, &b, 0, 1, &params) - expected).abs() < TOL);
        // 5.819593 with 0.606531 rounded before scaling.
        assert!((expected - 5.819593).abs() < 1.5e-6);
    }

    #[test]
    // The literal is the printed hand value, checked on purpose.
    #[allow(clippy::approx_constant)]
    fn unary_examples() {
        let u = UnaryField::new(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let phi = unary_from_scores(&u);
        assert!((phi.values()[0] - 2f64.ln()).abs() < TOL);
        assert!((phi.values()[1] - 0.693147).abs() < 1e-6);

        let u = UnaryField::new(1, 1, 2, vec![1000.0, 0.0]).unwrap();
        let phi = unary_from_scores(&u);
        assert!(phi.values()[0].abs() < TOL);
        assert!((phi.values()[1] - (-(1e-12f64).ln())).abs() < TOL);
        assert!((phi.values()[1] - 27.631021).abs() < 1e-6);
    }

    #[test]
    fn energy_examples() {
        let p = CrfParams::default();
        let f = at(0.0, 0.0);
        let single = LabelMap::new(1, 1, vec![1]).unwrap();
        let u1 = UnaryPotentials::new(1, 1, 2, vec![0.2, 0.7]).unwrap();
        assert!((total_energy(&single, &u1, &[f], &p).unwrap() - 0.7).abs() < TOL);

        let u2 = UnaryPotentials::new(2, 1, 2, vec![0.5, 0.1, 0.5, 0.3]).unwrap();
        let same = LabelMap::new(2, 1, vec![0, 0]).unwrap();
        assert!((total_energy(&same, &u2, &[f, f], &p).unwrap() - 1.0).abs() < TOL);
        let diff = LabelMap::new(2, 1, vec![0, 1]).unwrap();
        let u3 = UnaryPotentials::new(2, 1, 2, vec![0.5, 9.0, 9.0, 0.5]).unwrap();
        assert!((total_energy(&diff, &u3, &[f, f], &p).unwrap() - 12.0).abs() < TOL);
    }

    #[test]
    fn config_roundtrip_and_errors() {
        let p = CrfParams {
            omega1: 6.25,
            sigma_alpha: 101.5,
            kernel: KernelVariant::Split,
            lambda: 0.5,
            iterations: 4,
            ..CrfParams::default()
        };
        assert_eq!(CrfParams::parse_config(&p.to_config_string()).unwrap(), p);
        assert!(CrfParams::parse_config("omega1 = x").is_err());
        assert!(CrfParams::parse_config("bogus = 1").is_err());
        assert!(CrfParams::parse_config("sigma_beta = 0").is_err());
        assert_eq!(
            CrfParams::parse_config("# comment\n\nkernel = rgb  # trailing\n").unwrap().kernel,
            KernelVariant::RgbOnly
        );
    }

    fn feature() -> impl Strategy<Value = PixelFeature> {
        (
            proptest::array::uniform2(0.0f64..50.0),
            proptest::array::uniform3(0.0f64..255.0),
            0.0f64..255.0,
        )
            .prop_map(|(p, c, d)| PixelFeature::new(p, c, d))
    }

    fn params() -> impl Strategy<Value = CrfParams> {
        (0.5f64..20.0, 0.5f64..20.0, 1.0f64..100.0, 1.0f64..30.0, 1.0f64..10.0, 1.0f64..30.0, 0.0f64..3.0)
            .prop_map(|(w1, w2, sa, sb, sg, sv, l)| CrfParams {
                omega1: w1,
                omega2: w2,
                sigma_alpha: sa,
                sigma_beta: sb,
                sigma_gamma: sg,
                sigma_nu: sv,
                lambda: l,
                ..CrfParams::default()
            })
    }

    proptest! {
        #[test]
        fn kernels_symmetric_with_unit_peak(fi in feature(), fj in feature(), p in params()) {
            for kernel in [appearance_joint, appearance_rgb, appearance_split] {
                prop_assert_eq!(kernel(&fi, &fj, &p), kernel(&fj, &fi, &p));
            }
            prop_assert_eq!(appearance_joint(&fi, &fi, &p), 1.0);
            prop_assert_eq!(appearance_split(&fi, &fi, &p), 1.0 + p.lambda);
            prop_assert_eq!(smoothness_kernel(fi.position, fi.position, p.sigma_gamma), 1.0);
        }

        #[test]
        fn joint_monotone_in_each_distance(fi in feature(), p in params(), a in 0.0f64..40.0, b in 0.0f64..40.0) {
            let (near, far) = if a < b { (a, b) } else { (b, a) };
            let shift = |f: &PixelFeature, which: usize, by: f64| {
                let mut g = *f;
                match which {
                    0 => g.position[0] += by,
                    1 => g.color[1] += by,
                    _ => g.depth += by,
                }
                g
            };
            for which in 0..3 {
                let kn = appearance_joint(&fi, &shift(&fi, which, near), &p);
                let kf = appearance_joint(&fi, &shift(&fi, which, far), &p);
                prop_assert!(kf <= kn);
            }
        }

        #[test]
        fn pairwise_zero_on_equal_labels_and_swap_symmetric(
            fi in feature(), fj in feature(), p in params(), yi in 0u8..4, yj in 0u8..4,
        ) {
            prop_assert_eq!(pairwise(&fi, &fj, yi, yi, &p), 0.0);
            prop_assert_eq!(pairwise(&fi, &fj, yi, yj, &p), pairwise(&fj, &fi, yj, yi, &p));
            prop_assert!(pairwise(&fi, &fj, yi, yj, &p) >= 0.0);
        }

        #[test]
        fn unary_is_positive_and_normalized(scores in proptest::collection::vec(-30.0f64..30.0, 8), c in -50.0f64..50.0) {
            let u = UnaryField::new(2, 1, 4, scores.clone()).unwrap();
            let phi = unary_from_scores(&u);
            for row in phi.values().chunks(4) {
                prop_assert!(row.iter().all(|&v| v > 0.0));
                let s: f64 = row.iter().map(|v| (-v).exp()).sum();
                prop_assert!((s - 1.0).abs() < 1e-9);
            }
            let shifted = UnaryField::new(2, 1, 4, scores.iter().map(|s| s + c).collect()).unwrap();
            let phi2 = unary_from_scores(&shifted);
            for (a, b) in phi.values().iter().zip(phi2.values()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn energy_invariant_to_pixel_order(
            feats in proptest::collection::vec(feature(), 5),
            labels in proptest::collection::vec(0u8..3, 5),
            unary in proptest::collection::vec(0.0f64..5.0, 15),
            p in params(),
            rot in 0usize..5,
        ) {
            let base = total_energy(
                &LabelMap::new(5, 1, labels.clone()).unwrap(),
                &UnaryPotentials::new(5, 1, 3, unary.clone()).unwrap(),
                &feats,
                &p,
            ).unwrap();
            let perm: Vec<usize> = (0..5).map(|i| (i * 2 + rot) % 5).collect();
            let pl: Vec<u8> = perm.iter().map(|&i| labels[i]).collect();
            let pf: Vec<PixelFeature> = perm.iter().map(|&i| feats[i]).collect();
            let pu: Vec<f64> = perm.iter().flat_map(|&i| unary[i * 3..i * 3 + 3].to_vec()).collect();
            let permuted = total_energy(
                &LabelMap::new(5, 1, pl).unwrap(),
                &UnaryPotentials::new(5, 1, 3, pu).unwrap(),
                &pf,
                &p,
            ).unwrap();
            prop_assert!((base - permuted).abs() < 1e-9 * base.abs().max(1.0));
        }

        #[test]
        fn rgb_only_energy_ignores_depth(
            feats in proptest::collection::vec(feature(), 4),
            depths in proptest::collection::vec(-500.0f64..500.0, 4),
            labels in proptest::collection::vec(0u8..2, 4),
            p in params(),
        ) {
            let p = CrfParams { kernel: KernelVariant::RgbOnly, ..p };
            let lm = LabelMap::new(4, 1, labels).unwrap();
            let u = UnaryPotentials::new(4, 1, 2, vec![0.3; 8]).unwrap();
            let moved: Vec<PixelFeature> = feats
                .iter()
                .zip(&depths)
                .map(|(f, &d)| PixelFeature { depth: d, ..*f })
                .collect();
            prop_assert_eq!(
                total_energy(&lm, &u, &feats, &p).unwrap(),
                total_energy(&lm, &u, &moved, &p).unwrap()
            );
        }
    }
}
