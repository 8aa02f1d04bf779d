//! Synthetic labelled RGB-D scenes with noisy unary scores.
//!
//! A scene is a list of filled shapes painted in order over a canvas. Each
//! shape carries a class, a color and a sensor depth. Unary scores are drawn
//! per pixel: a "hot" class is the true class with probability `p` and a
//! uniformly chosen wrong class otherwise, and the pixel's scores are the
//! log-probabilities of a distribution putting `p` on the hot class and
//! splitting the rest evenly.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ingest::{save_depth, save_label_map, save_rgb, save_unary};
use crate::types::{ClassPalette, DepthImage, LabelMap, RgbImage, UnaryField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    /// Half-open pixel box `[x0, x1) × [y0, y1)`.
    Rect { x0: i64, y0: i64, x1: i64, y1: i64 },
    Circle { cx: f64, cy: f64, r: f64 },
}

impl Shape {
    fn contains(&self, x: usize, y: usize) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => {
                let (x, y) = (x as i64, y as i64);
                x >= x0 && x < x1 && y >= y0 && y < y1
            }
            Shape::Circle { cx, cy, r } => {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                dx * dx + dy * dy <= r * r
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Region {
    pub shape: Shape,
    pub class: u8,
    pub color: [u8; 3],
    pub depth: u16,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub regions: Vec<Region>,
    /// Probability that a pixel's highest unary score is on its true class.
    pub correct_prob: f64,
    /// Each color channel is jittered uniformly by up to this many levels.
    pub color_noise: u8,
}

/// Rasters and scores of one rendered scene.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub gt: LabelMap,
    pub unary: UnaryField,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("scene must be at least 1x1".into()));
        }
        if !(2..=255).contains(&self.num_classes) {
            return Err(Error::InvalidParameter(format!(
                "scene needs 2..=255 classes, got {}",
                self.num_classes
            )));
        }
        let k = self.num_classes as f64;
        if !(self.correct_prob > 1.0 / k && self.correct_prob <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "correct-class probability must lie in (1/{}, 1], got {}",
                self.num_classes, self.correct_prob
            )));
        }
        if let Some(r) = self.regions.iter().find(|r| r.class as usize >= self.num_classes) {
            return Err(Error::InvalidParameter(format!(
                "region class {} out of range for {} classes",
                r.class, self.num_classes
            )));
        }
        for region in &self.regions {
            if let Shape::Circle { r, .. } = region.shape {
                if !(r.is_finite() && r > 0.0) {
                    return Err(Error::InvalidParameter("circle radius must be positive".into()));
                }
            }
        }
        Ok(())
    }

    /// Paints the regions and draws unary scores. Every pixel must be covered
    /// by some region.
    pub fn render(&self, seed: u64) -> Result<Scene> {
        self.validate()?;
        let (w, h) = (self.width, self.height);
        let mut rgb = vec![0u8; w * h * 3];
        let mut depth = vec![0u16; w * h];
        let mut gt = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let region = self
                    .regions
                    .iter()
                    .rev()
                    .find(|r| r.shape.contains(x, y))
                    .ok_or_else(|| {
                        Error::InvalidParameter(format!("pixel ({x}, {y}) is not covered by any region"))
                    })?;
                let i = y * w + x;
                rgb[i * 3..i * 3 + 3].copy_from_slice(&region.color);
                depth[i] = region.depth;
                gt[i] = region.class;
            }
        }

        if self.color_noise > 0 {
            // A separate stream keeps the unary draws independent of the jitter.
            let mut jitter = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f_6973_6500_0000);
            let a = self.color_noise as i16;
            for c in &mut rgb {
                *c = (*c as i16 + jitter.random_range(-a..=a)).clamp(0, 255) as u8;
            }
        }

        let k = self.num_classes;
        let p = self.correct_prob;
        let hot_score = p.ln();
        let cold_score = if p < 1.0 {
            ((1.0 - p) / (k - 1) as f64).ln()
        } else {
            // Keeps the scores finite; the softmax floor clamps it anyway.
            -60.0
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scores = vec![cold_score; w * h * k];
        for (i, &truth) in gt.iter().enumerate() {
            let hot = if rng.random::<f64>() < p {
                truth as usize
            } else {
                let wrong = rng.random_range(0..k - 1);
                if wrong >= truth as usize {
                    wrong + 1
                } else {
                    wrong
                }
            };
            scores[i * k + hot] = hot_score;
        }

        Ok(Scene {
            rgb: RgbImage::new(w, h, rgb)?,
            depth: DepthImage::new(w, h, depth)?,
            gt: LabelMap::new(w, h, gt)?,
            unary: UnaryField::new(w, h, k, scores)?,
        })
    }

    /// Parses the text form:
    ///
    /// ```text
    /// size 64 48
    /// classes 3
    /// p 0.55
    /// noise 8
    /// rect x0 y0 x1 y1 class r g b depth
    /// circle cx cy radius class r g b depth
    /// ```
    ///
    /// `noise` is optional and defaults to 0. Blank lines and `#` comments
    /// are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut size = None;
        let mut classes = None;
        let mut p = None;
        let mut noise = 0u8;
        let mut regions = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Config { line: n + 1, message };
            let words: Vec<&str> = line.split_whitespace().collect();
            let num = |i: usize| -> Result<f64> {
                words
                    .get(i)
                    .ok_or_else(|| err(format!("missing field {i}")))?
                    .parse::<f64>()
                    .map_err(|_| err(format!("bad number {:?}", words[i])))
            };
            let int = |i: usize, max: f64| -> Result<u64> {
                let v = num(i)?;
                if v.fract() != 0.0 || v < 0.0 || v > max {
                    return Err(err(format!("expected an integer in [0, {max}], got {v}")));
                }
                Ok(v as u64)
            };
            let expect = |count: usize| -> Result<()> {
                if words.len() != count {
                    return Err(err(format!("{} expects {} fields", words[0], count - 1)));
                }
                Ok(())
            };
            match words[0] {
                "size" => {
                    expect(3)?;
                    size = Some((int(1, 1e6)? as usize, int(2, 1e6)? as usize));
                }
                "classes" => {
                    expect(2)?;
                    classes = Some(int(1, 255.0)? as usize);
                }
                "p" => {
                    expect(2)?;
                    p = Some(num(1)?);
                }
                "noise" => {
                    expect(2)?;
                    noise = int(1, 255.0)? as u8;
                }
                kind @ ("rect" | "circle") => {
                    let i = if kind == "rect" { 5 } else { 4 };
                    expect(i + 5)?;
                    let shape = if kind == "rect" {
                        Shape::Rect {
                            x0: num(1)? as i64,
                            y0: num(2)? as i64,
                            x1: num(3)? as i64,
                            y1: num(4)? as i64,
                        }
                    } else {
                        Shape::Circle {
                            cx: num(1)?,
                            cy: num(2)?,
                            r: num(3)?,
                        }
                    };
                    regions.push(Region {
                        shape,
                        class: int(i, 254.0)? as u8,
                        color: [int(i + 1, 255.0)? as u8, int(i + 2, 255.0)? as u8, int(i + 3, 255.0)? as u8],
                        depth: int(i + 4, 65535.0)? as u16,
                    });
                }
                other => return Err(err(format!("unknown directive {other:?}"))),
            }
        }
        let missing = |what: &str| Error::Config {
            line: 0,
            message: format!("missing `{what}` line"),
        };
        let (width, height) = size.ok_or_else(|| missing("size"))?;
        let spec = SceneSpec {
            width,
            height,
            num_classes: classes.ok_or_else(|| missing("classes"))?,
            regions,
            correct_prob: p.ok_or_else(|| missing("p"))?,
            color_noise: noise,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Correct-class probability of the depth-edge preset.
pub const DEPTH_EDGE_PROB: f64 = 0.55;

/// Two adjacent rectangles of one color that differ only in depth.
///
/// The split runs vertically or horizontally at 25–40% of the side, on a
/// random side. The shared color has a large spread between its channels so
/// that depth matched to the image's statistics separates the two planes
/// widely; the depth gap is 1.5–4 m.
pub fn depth_edge(width: usize, height: usize, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6465_7074_6865_6467);
    let vertical = rng.random_bool(0.5);
    let side = if vertical { width } else { height };
    let mut cut = ((side as f64) * rng.random_range(0.25..0.40)).round() as i64;
    if rng.random_bool(0.5) {
        cut = side as i64 - cut;
    }
    let mean: i64 = rng.random_range(100..=150);
    let spread: i64 = rng.random_range(60..=90);
    let mut color = [(mean + spread) as u8, (mean - spread) as u8, mean as u8];
    color.shuffle(&mut rng);
    let near: u16 = rng.random_range(1000..=3000);
    let far = near + rng.random_range(1500..=4000);
    let (w, h) = (width as i64, height as i64);
    let (a, b) = if vertical {
        (
            Shape::Rect { x0: 0, y0: 0, x1: cut, y1: h },
            Shape::Rect { x0: cut, y0: 0, x1: w, y1: h },
        )
    } else {
        (
            Shape::Rect { x0: 0, y0: 0, x1: w, y1: cut },
            Shape::Rect { x0: 0, y0: cut, x1: w, y1: h },
        )
    };
    let (da, db) = if rng.random_bool(0.5) { (near, far) } else { (far, near) };
    SceneSpec {
        width,
        height,
        num_classes: 2,
        regions: vec![
            Region { shape: a, class: 0, color, depth: da },
            Region { shape: b, class: 1, color, depth: db },
        ],
        correct_prob: DEPTH_EDGE_PROB,
        color_noise: 0,
    }
}

/// Correct-class probability of the blocks preset.
pub const BLOCKS_PROB: f64 = 0.5;
/// Color jitter of the blocks preset.
pub const BLOCKS_NOISE: u8 = 8;

/// A grid of rectangles covering `num_classes` classes, each class with its
/// own color and each block its own depth, under mild color noise.
pub fn blocks(width: usize, height: usize, num_classes: usize, seed: u64) -> SceneSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x626c_6f63_6b73_0000);
    let k = num_classes.max(2);
    let cols = (k as f64).sqrt().ceil() as usize;
    let rows = k.div_ceil(cols);
    let mut classes: Vec<usize> = (0..cols * rows).map(|c| c % k).collect();
    classes.shuffle(&mut rng);
    let colors: Vec<[u8; 3]> = (0..k).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let mut regions = Vec::with_capacity(cols * rows);
    for (cell, &class) in classes.iter().enumerate() {
        let (cx, cy) = (cell % cols, cell / cols);
        regions.push(Region {
            shape: Shape::Rect {
                x0: (cx * width / cols) as i64,
                y0: (cy * height / rows) as i64,
                x1: ((cx + 1) * width / cols) as i64,
                y1: ((cy + 1) * height / rows) as i64,
            },
            class: class as u8,
            color: colors[class],
            depth: rng.random_range(800..=8000),
        });
    }
    SceneSpec {
        width,
        height,
        num_classes: k,
        regions,
        correct_prob: BLOCKS_PROB.max(1.5 / k as f64),
        color_noise: BLOCKS_NOISE,
    }
}

/// Writes `rgb/`, `depth/`, `gt/` and `unary/` entries for `scene` under
/// `root` with the given id.
pub fn write_scene(scene: &Scene, palette: &ClassPalette, root: &Path, id: &str) -> Result<()> {
    for sub in ["rgb", "depth", "gt", "unary"] {
        fs::create_dir_all(root.join(sub))?;
    }
    save_rgb(&scene.rgb, &root.join("rgb").join(format!("{id}.png")))?;
    save_depth(&scene.depth, &root.join("depth").join(format!("{id}.png")))?;
    save_label_map(&scene.gt, palette, &root.join("gt").join(format!("{id}.png")), None)?;
    save_unary(&scene.unary, &root.join("unary").join(format!("{id}.unr")))?;
    Ok(())
}
