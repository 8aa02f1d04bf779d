//! Iteratively refined random search over the appearance-kernel parameters.
//!
//! Round 0 samples uniformly from the full ranges. Every later round
//! re-centres each range on the best parameters found so far, with its width
//! scaled by `shrink` per round and clipped to the original bounds.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::depthprep::normalize_depth_to_rgb;
use crate::error::{Error, Result};
use crate::inference::{run_inference, Backend, InferenceConfig};
use crate::ingest::{load_depth, load_label_map, load_rgb, load_unary, DatasetSample};
use crate::metrics::{mean_iou, ConfusionMatrix};
use crate::potentials::CrfParams;
use crate::types::{ClassPalette, LabelMap, NormalizedDepth, RgbImage, UnaryField};

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::InvalidParameter(format!("bad range [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    /// `[center − width/2, center + width/2]` intersected with `self`.
    pub fn around(&self, center: f64, width: f64) -> Range {
        Range {
            lo: (center - width / 2.0).max(self.lo),
            hi: (center + width / 2.0).min(self.hi),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.lo == self.hi {
            self.lo
        } else {
            rng.random_range(self.lo..=self.hi)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchSpace {
    pub omega1: Range,
    pub sigma_alpha: Range,
    pub sigma_beta: Range,
    pub sigma_nu: Range,
    pub omega2: f64,
    pub sigma_gamma: f64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            omega1: Range { lo: 5.0, hi: 11.0 },
            sigma_alpha: Range { lo: 90.0, hi: 170.0 },
            sigma_beta: Range { lo: 7.0, hi: 12.0 },
            sigma_nu: Range { lo: 7.0, hi: 12.0 },
            omega2: 3.0,
            sigma_gamma: 3.0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        for r in self.ranges() {
            Range::new(r.lo, r.hi)?;
        }
        let probe = CrfParams {
            omega1: self.omega1.lo,
            omega2: self.omega2,
            sigma_alpha: self.sigma_alpha.lo,
            sigma_beta: self.sigma_beta.lo,
            sigma_gamma: self.sigma_gamma,
            sigma_nu: self.sigma_nu.lo,
            ..CrfParams::default()
        };
        probe.validate()
    }

    fn ranges(&self) -> [Range; 4] {
        [self.omega1, self.sigma_alpha, self.sigma_beta, self.sigma_nu]
    }

    /// The space of round `round`, centred on `incumbent`.
    pub fn refined(&self, incumbent: &CrfParams, shrink: f64, round: usize) -> SearchSpace {
        let factor = shrink.powi(round as i32);
        let around = |r: Range, c: f64| r.around(c, r.width() * factor);
        SearchSpace {
            omega1: around(self.omega1, incumbent.omega1),
            sigma_alpha: around(self.sigma_alpha, incumbent.sigma_alpha),
            sigma_beta: around(self.sigma_beta, incumbent.sigma_beta),
            sigma_nu: around(self.sigma_nu, incumbent.sigma_nu),
            ..*self
        }
    }

    pub fn contains(&self, p: &CrfParams) -> bool {
        self.omega1.contains(p.omega1)
            && self.sigma_alpha.contains(p.sigma_alpha)
            && self.sigma_beta.contains(p.sigma_beta)
            && self.sigma_nu.contains(p.sigma_nu)
            && p.omega2 == self.omega2
            && p.sigma_gamma == self.sigma_gamma
    }
}

/// Draws the searched parameters uniformly and copies everything else from `base`.
pub fn sample_config(space: &SearchSpace, base: &CrfParams, rng: &mut ChaCha8Rng) -> CrfParams {
    CrfParams {
        omega1: space.omega1.sample(rng),
        sigma_alpha: space.sigma_alpha.sample(rng),
        sigma_beta: space.sigma_beta.sample(rng),
        sigma_nu: space.sigma_nu.sample(rng),
        omega2: space.omega2,
        sigma_gamma: space.sigma_gamma,
        ..*base
    }
}

/// A validation frame held in memory.
#[derive(Debug, Clone)]
pub struct ValidationSample {
    pub id: String,
    pub rgb: RgbImage,
    pub depth: NormalizedDepth,
    pub unary: UnaryField,
    pub gt: Option<LabelMap>,
}

impl ValidationSample {
    pub fn load(sample: &DatasetSample, palette: &ClassPalette) -> Result<Self> {
        let rgb = load_rgb(&sample.rgb)?;
        let depth = normalize_depth_to_rgb(&load_depth(&sample.depth)?, &rgb)?;
        let unary = load_unary(&sample.unary)?;
        let gt = sample
            .gt
            .as_deref()
            .map(|p| load_label_map(p, palette))
            .transpose()?;
        Ok(Self {
            id: sample.id.clone(),
            rgb,
            depth,
            unary,
            gt,
        })
    }
}

/// Loads every sample under `root`, requiring ground truth for each.
pub fn load_validation_set(root: &Path, palette: &ClassPalette) -> Result<Vec<ValidationSample>> {
    let pairing = crate::ingest::pair_dataset(root)?;
    for w in &pairing.warnings {
        log::warn!("{w}");
    }
    let missing: Vec<&str> = pairing
        .samples
        .iter()
        .filter(|s| s.gt.is_none())
        .map(|s| s.id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingGroundTruth(missing.join(", ")));
    }
    pairing
        .samples
        .par_iter()
        .map(|s| ValidationSample::load(s, palette))
        .collect()
}

/// Mean IoU of the refined labelings over all samples, from one confusion
/// matrix accumulated across them.
pub fn evaluate_config(
    params: &CrfParams,
    samples: &[ValidationSample],
    backend: Backend,
) -> Result<f64> {
    if let Some(s) = samples.iter().find(|s| s.gt.is_none()) {
        return Err(Error::MissingGroundTruth(s.id.clone()));
    }
    let k = samples
        .first()
        .map(|s| s.unary.num_classes())
        .ok_or_else(|| Error::InvalidParameter("empty validation set".into()))?;
    let config = InferenceConfig::new(backend, params.iterations);
    let matrices: Vec<ConfusionMatrix> = samples
        .par_iter()
        .map(|s| {
            let out = run_inference(&s.unary, &s.rgb, &s.depth, params, &config)?;
            let mut cm = ConfusionMatrix::new(k);
            cm.accumulate(&out.labels, s.gt.as_ref().expect("checked above"))?;
            Ok(cm)
        })
        .collect::<Result<_>>()?;
    let mut total = ConfusionMatrix::new(k);
    for cm in &matrices {
        total.merge(cm)?;
    }
    mean_iou(&total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchConfig {
    pub rounds: usize,
    pub samples_per_round: usize,
    pub shrink: f64,
    pub seed: u64,
    pub backend: Backend,
    /// Source of the parameters that are not searched (λ, kernel, iterations).
    pub base: CrfParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            rounds: 3,
            samples_per_round: 20,
            shrink: 0.5,
            seed: 0,
            backend: Backend::Lattice,
            base: CrfParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    pub params: CrfParams,
    pub objective: f64,
    pub round: usize,
    pub trial: usize,
    pub seed: u64,
}

impl TrialRecord {
    pub fn log_line(&self) -> String {
        let p = &self.params;
        format!(
            "round={} trial={} omega1={} sigma_alpha={} sigma_beta={} sigma_nu={} omega2={} sigma_gamma={} objective={:.6}",
            self.round,
            self.trial,
            p.omega1,
            p.sigma_alpha,
            p.sigma_beta,
            p.sigma_nu,
            p.omega2,
            p.sigma_gamma,
            self.objective
        )
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: TrialRecord,
    pub history: Vec<TrialRecord>,
    /// Best objective seen by the end of each round.
    pub incumbents: Vec<f64>,
}

impl SearchResult {
    pub fn log(&self) -> String {
        let mut out = String::new();
        for r in &self.history {
            let _ = writeln!(out, "{}", r.log_line());
        }
        out
    }
}

pub fn random_search(
    samples: &[ValidationSample],
    space: &SearchSpace,
    config: &SearchConfig,
) -> Result<SearchResult> {
    space.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidParameter("random search needs at least one validation sample".into()));
    }
    if config.rounds == 0 || config.samples_per_round == 0 {
        return Err(Error::InvalidParameter("rounds and samples per round must be >= 1".into()));
    }
    if !(config.shrink > 0.0 && config.shrink < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "shrink must lie in (0, 1), got {}",
            config.shrink
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history: Vec<TrialRecord> = Vec::with_capacity(config.rounds * config.samples_per_round);
    let mut incumbents = Vec::with_capacity(config.rounds);
    let mut best: Option<TrialRecord> = None;
    for round in 0..config.rounds {
        let current = match &best {
            Some(b) => space.refined(&b.params, config.shrink, round),
            None => *space,
        };
        // Draw the whole round first so the sequence does not depend on scheduling.
        let candidates: Vec<CrfParams> = (0..config.samples_per_round)
            .map(|_| sample_config(&current, &config.base, &mut rng))
            .collect();
        let objectives: Vec<f64> = candidates
            .par_iter()
            .map(|p| evaluate_config(p, samples, config.backend))
            .collect::<Result<_>>()?;
        for (trial, (params, objective)) in candidates.into_iter().zip(objectives).enumerate() {
            let record = TrialRecord {
                params,
                objective,
                round,
                trial,
                seed: config.seed,
            };
            log::info!("{}", record.log_line());
            if best.is_none_or(|b| objective > b.objective) {
                best = Some(record);
            }
            history.push(record);
        }
        incumbents.push(best.expect("at least one trial").objective);
    }
    Ok(SearchResult {
        best: best.expect("at least one trial"),
        history,
        incumbents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::depth_edge;

    #[test]
    fn refined_ranges() {
        let space = SearchSpace::default();
        let inc = CrfParams {
            omega1: 8.0,
            sigma_alpha: 95.0,
            ..CrfParams::default()
        };
        let r1 = space.refined(&inc, 0.5, 1);
        assert_eq!(r1.omega1, Range { lo: 6.5, hi: 9.5 });
        assert_eq!(r1.sigma_alpha, Range { lo: 90.0, hi: 115.0 });
        let r2 = space.refined(&inc, 0.5, 2);
        assert_eq!(r2.omega1, Range { lo: 7.25, hi: 8.75 });
        assert_eq!((r2.omega2, r2.sigma_gamma), (3.0, 3.0));
    }

    #[test]
    fn samples_stay_in_range_and_repeat_per_seed() {
        let space = SearchSpace::default();
        let base = CrfParams::default();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..200).map(|_| sample_config(&space, &base, &mut rng)).collect::<Vec<_>>()
        };
        let a = draw(7);
        assert!(a.iter().all(|p| space.contains(p)));
        assert_eq!(a, draw(7));
        assert_ne!(a, draw(8));
    }

    #[test]
    fn invalid_search_inputs() {
        let bad = SearchSpace {
            omega1: Range { lo: 3.0, hi: 2.0 },
            ..SearchSpace::default()
        };
        assert!(bad.validate().is_err());
        assert!(Range::new(1.0, 0.0).is_err());
        let cfg = SearchConfig::default();
        assert!(random_search(&[], &SearchSpace::default(), &cfg).is_err());
    }

    fn sample(seed: u64, with_gt: bool) -> ValidationSample {
        let scene = depth_edge(16, 16, seed).render(seed).unwrap();
        ValidationSample {
            id: format!("s{seed}"),
            depth: normalize_depth_to_rgb(&scene.depth, &scene.rgb).unwrap(),
            rgb: scene.rgb,
            unary: scene.unary,
            gt: with_gt.then_some(scene.gt),
        }
    }

    #[test]
    fn evaluate_requires_ground_truth() {
        let samples = vec![sample(1, true), sample(2, false)];
        assert!(matches!(
            evaluate_config(&CrfParams::default(), &samples, Backend::BruteForce),
            Err(Error::MissingGroundTruth(id)) if id == "s2"
        ));
    }

    #[test]
    fn perfect_unary_scores_one() {
        let mut s = sample(3, true);
        let gt = s.gt.clone().unwrap();
        let k = 2;
        let scores: Vec<f64> = gt
            .labels()
            .iter()
            .flat_map(|&l| (0..k).map(move |c| if c == l as usize { 5.0 } else { 0.0 }))
            .collect();
        s.unary = UnaryField::new(16, 16, k, scores).unwrap();
        let params = CrfParams {
            iterations: 0,
            ..CrfParams::default()
        };
        assert_eq!(evaluate_config(&params, &[s], Backend::BruteForce).unwrap(), 1.0);
    }

    #[test]
    fn small_search_is_reproducible() {
        let samples = vec![sample(4, true), sample(5, true)];
        let config = SearchConfig {
            rounds: 2,
            samples_per_round: 3,
            seed: 42,
            base: CrfParams {
                iterations: 3,
                ..CrfParams::default()
            },
            ..SearchConfig::default()
        };
        let space = SearchSpace::default();
        let a = random_search(&samples, &space, &config).unwrap();
        let b = random_search(&samples, &space, &config).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.log(), b.log());
        assert_eq!(a.history.len(), 6);
        assert_eq!(a.log().lines().count(), 6);
        assert!(a.history.iter().all(|r| space.contains(&r.params)));
        assert!(a.incumbents.windows(2).all(|w| w[0] <= w[1]));
        let max = a.history.iter().map(|r| r.objective).fold(f64::MIN, f64::max);
        assert_eq!(a.best.objective, max);
        let first = a.history.iter().find(|r| r.objective == max).unwrap();
        assert_eq!((a.best.round, a.best.trial), (first.round, first.trial));
    }
}
