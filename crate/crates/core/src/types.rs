//! Rasters and per-pixel class fields shared by every stage of the pipeline.
//!
//! All rasters are row-major. Multi-channel fields store the channel index
//! fastest, so pixel `i`, class `l` lives at `i * num_classes + l`.

use crate::error::{Error, Result};

/// Label value reserved for unlabeled ground-truth pixels.
pub const IGNORE_LABEL: u8 = 255;

/// Raw depth samples treated as sensor dropout.
pub const INVALID_DEPTH: [u16; 2] = [0, u16::MAX];

#[inline]
pub fn is_valid_depth(sample: u16) -> bool {
    sample != INVALID_DEPTH[0] && sample != INVALID_DEPTH[1]
}

fn check_extent(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Dimension(format!(
            "raster must be non-empty, got {width}x{height}"
        )));
    }
    Ok(())
}

fn check_len(what: &str, found: usize, expected: usize) -> Result<()> {
    if found != expected {
        return Err(Error::Dimension(format!(
            "{what}: expected {expected} samples, found {found}"
        )));
    }
    Ok(())
}

/// 8-bit RGB raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_extent(width, height)?;
        check_len("rgb image", data.len(), width * height * 3)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Result<Self> {
        check_extent(width, height)?;
        let data = color.repeat(width * height);
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> [u8; 3] {
        let o = index * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    /// Mean and population standard deviation over all channel samples pooled.
    pub fn pooled_stats(&self) -> (f64, f64) {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self
            .data
            .iter()
            .map(|&v| {
                let d = v as f64 - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        (mean, var.sqrt())
    }
}

/// Raw 16-bit depth raster in sensor units. `0` and `65535` mark dropout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthImage {
    width: usize,
    height: usize,
    data: Vec<u16>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, data: Vec<u16>) -> Result<Self> {
        check_extent(width, height)?;
        check_len("depth image", data.len(), width * height)?;
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u16] {
        &self.data
    }

    pub fn is_valid(&self, index: usize) -> bool {
        is_valid_depth(self.data[index])
    }

    pub fn invalid_count(&self) -> usize {
        self.data.iter().filter(|&&d| !is_valid_depth(d)).count()
    }
}

/// Depth rescaled into the color value range, with the original validity kept.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedDepth {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl NormalizedDepth {
    pub fn new(width: usize, height: usize, data: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        check_extent(width, height)?;
        check_len("normalized depth", data.len(), width * height)?;
        check_len("validity mask", valid.len(), width * height)?;
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            data,
            valid,
        })
    }

    /// A flat depth plane; useful when depth should not influence the kernels.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(
            width,
            height,
            vec![value; width * height],
            vec![true; width * height],
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn validity_mask(&self) -> &[bool] {
        &self.valid
    }
}

/// Borrowed view of an H×W×K real field, class index fastest.
#[derive(Debug, Clone, Copy)]
pub struct FieldView<'a> {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub data: &'a [f64],
}

/// Per-pixel class scores (logits) from an upstream classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct UnaryField {
    width: usize,
    height: usize,
    num_classes: usize,
    scores: Vec<f64>,
}

impl UnaryField {
    pub fn new(width: usize, height: usize, num_classes: usize, scores: Vec<f64>) -> Result<Self> {
        check_extent(width, height)?;
        if num_classes < 2 {
            return Err(Error::Dimension(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        check_len("unary field", scores.len(), width * height * num_classes)?;
        if let Some(index) = scores.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self {
            width,
            height,
            num_classes,
            scores,
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

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn pixel_scores(&self, index: usize) -> &[f64] {
        &self.scores[index * self.num_classes..(index + 1) * self.num_classes]
    }

    pub fn view(&self) -> FieldView<'_> {
        FieldView {
            width: self.width,
            height: self.height,
            num_classes: self.num_classes,
            data: &self.scores,
        }
    }

    pub fn argmax(&self) -> LabelMap {
        argmax_labels(self.view()).expect("unary field is consistent by construction")
    }
}

/// Per-pixel label distribution maintained by mean-field inference.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginalField {
    width: usize,
    height: usize,
    num_classes: usize,
    q: Vec<f64>,
}

/// Tolerance on per-pixel probability sums.
pub const MARGINAL_SUM_TOLERANCE: f64 = 1e-6;

impl MarginalField {
    /// Wraps probabilities without re-normalizing; use [`MarginalField::is_normalized`]
    /// to check the row-sum invariant.
    pub fn new(width: usize, height: usize, num_classes: usize, q: Vec<f64>) -> Result<Self> {
        check_extent(width, height)?;
        check_len("marginal field", q.len(), width * height * num_classes)?;
        Ok(Self {
            width,
            height,
            num_classes,
            q,
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

    pub fn probabilities(&self) -> &[f64] {
        &self.q
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.q[index * self.num_classes..(index + 1) * self.num_classes]
    }

    pub fn into_probabilities(self) -> Vec<f64> {
        self.q
    }

    /// Largest deviation of a pixel's probability sum from one, or infinity
    /// when some entry is negative or not finite.
    pub fn max_normalization_error(&self) -> f64 {
        self.q
            .chunks_exact(self.num_classes)
            .map(|row| {
                if row.iter().any(|&p| !(0.0..=1.0 + MARGINAL_SUM_TOLERANCE).contains(&p)) {
                    f64::INFINITY
                } else {
                    (row.iter().sum::<f64>() - 1.0).abs()
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn is_normalized(&self) -> bool {
        self.max_normalization_error() <= MARGINAL_SUM_TOLERANCE
    }

    pub fn view(&self) -> FieldView<'_> {
        FieldView {
            width: self.width,
            height: self.height,
            num_classes: self.num_classes,
            data: &self.q,
        }
    }

    pub fn argmax(&self) -> LabelMap {
        argmax_labels(self.view()).expect("marginal field is consistent by construction")
    }
}

/// Per-pixel class indices. [`IGNORE_LABEL`] marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        check_extent(width, height)?;
        check_len("label map", labels.len(), width * height)?;
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, index: usize) -> Option<u8> {
        match self.labels[index] {
            IGNORE_LABEL => None,
            l => Some(l),
        }
    }

    /// Fails on the first label that is neither `< num_classes` nor ignore.
    pub fn check_range(&self, num_classes: usize) -> Result<()> {
        match self
            .labels
            .iter()
            .position(|&l| l != IGNORE_LABEL && l as usize >= num_classes)
        {
            Some(pixel) => Err(Error::LabelOutOfRange {
                value: self.labels[pixel],
                pixel,
                num_classes,
            }),
            None => Ok(()),
        }
    }

    /// Fraction of pixels where both maps carry the same label.
    pub fn agreement(&self, other: &LabelMap) -> f64 {
        let same = self
            .labels
            .iter()
            .zip(&other.labels)
            .filter(|(a, b)| a == b)
            .count();
        same as f64 / self.labels.len().max(1) as f64
    }
}

/// Index of the maximum value at each pixel; ties resolve to the lowest index.
pub fn argmax_labels(field: FieldView<'_>) -> Result<LabelMap> {
    let FieldView {
        width,
        height,
        num_classes,
        data,
    } = field;
    if num_classes < 2 {
        return Err(Error::Dimension(format!(
            "need at least 2 classes, got {num_classes}"
        )));
    }
    if num_classes > IGNORE_LABEL as usize {
        return Err(Error::Dimension(format!(
            "{num_classes} classes do not fit an 8-bit label map"
        )));
    }
    check_len("class field", data.len(), width * height * num_classes)?;
    let labels = data
        .chunks_exact(num_classes)
        .map(|row| {
            let mut best = 0;
            for (l, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = l;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(width, height, labels)
}

/// Which input disagreed first when checking an RGB-D + unary triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Depth,
    Unary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimensionReport {
    Consistent,
    Mismatch {
        component: Component,
        expected: (usize, usize),
        found: (usize, usize),
    },
}

impl DimensionReport {
    pub fn is_consistent(&self) -> bool {
        matches!(self, DimensionReport::Consistent)
    }

    pub fn into_result(self) -> Result<()> {
        match self {
            DimensionReport::Consistent => Ok(()),
            DimensionReport::Mismatch {
                component,
                expected,
                found,
            } => Err(Error::Dimension(format!(
                "{component:?} is {}x{}, rgb is {}x{}",
                found.0, found.1, expected.0, expected.1
            ))),
        }
    }
}

/// Checks that depth and unary share the RGB image's width and height.
pub fn validate_dimensions(
    rgb: &RgbImage,
    depth: &DepthImage,
    unary: &UnaryField,
) -> DimensionReport {
    let expected = (rgb.width(), rgb.height());
    let candidates = [
        (Component::Depth, (depth.width(), depth.height())),
        (Component::Unary, (unary.width(), unary.height())),
    ];
    for (component, found) in candidates {
        if found != expected {
            return DimensionReport::Mismatch {
                component,
                expected,
                found,
            };
        }
    }
    DimensionReport::Consistent
}

/// Ordered class names and display colors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPalette {
    entries: Vec<(String, [u8; 3])>,
    ignore_color: [u8; 3],
}

const SUNRGBD_CLASSES: [&str; 37] = [
    "wall", "floor", "cabinet", "bed", "chair", "sofa", "table", "door", "window",
    "bookshelf", "picture", "counter", "blinds", "desk", "shelves", "curtain", "dresser",
    "pillow", "mirror", "floor_mat", "clothes", "ceiling", "books", "fridge", "tv",
    "paper", "towel", "shower_curtain", "box", "whiteboard", "person", "night_stand",
    "toilet", "sink", "lamp", "bathtub", "bag",
];

/// Bit-interleaved color map; distinct for every index below 256.
fn indexed_color(index: usize) -> [u8; 3] {
    let mut c = [0u8; 3];
    let mut id = index;
    for shift in (0..8).rev() {
        c[0] |= ((id & 1) as u8) << shift;
        c[1] |= (((id >> 1) & 1) as u8) << shift;
        c[2] |= (((id >> 2) & 1) as u8) << shift;
        id >>= 3;
    }
    c
}

impl ClassPalette {
    pub fn new(entries: Vec<(String, [u8; 3])>) -> Result<Self> {
        if entries.len() < 2 || entries.len() > IGNORE_LABEL as usize {
            return Err(Error::InvalidParameter(format!(
                "palette must have 2..=255 classes, got {}",
                entries.len()
            )));
        }
        for (i, (_, a)) in entries.iter().enumerate() {
            if entries[..i].iter().any(|(_, b)| a == b) {
                return Err(Error::InvalidParameter(format!(
                    "palette color {a:?} is not unique"
                )));
            }
        }
        Ok(Self {
            entries,
            ignore_color: [0, 0, 0],
        })
    }

    /// `class_<i>` names with the indexed color map, shifted so class 0 is not black.
    pub fn generic(num_classes: usize) -> Result<Self> {
        Self::new(
            (0..num_classes)
                .map(|i| (format!("class_{i}"), indexed_color(i + 1)))
                .collect(),
        )
    }

    /// The 37 SUN RGB-D classes.
    pub fn sunrgbd() -> Self {
        Self::new(
            SUNRGBD_CLASSES
                .iter()
                .enumerate()
                .map(|(i, name)| (name.to_string(), indexed_color(i + 1)))
                .collect(),
        )
        .expect("built-in palette is valid")
    }

    /// Parses one `name r g b` line per class; blank lines and `#` comments skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = line.split_whitespace().collect();
            let parse_err = |message: String| Error::Config {
                line: n + 1,
                message,
            };
            if parts.len() != 4 {
                return Err(parse_err(format!("expected `name r g b`, got {line:?}")));
            }
            let mut color = [0u8; 3];
            for (c, p) in color.iter_mut().zip(&parts[1..]) {
                *c = p
                    .parse()
                    .map_err(|_| parse_err(format!("bad color component {p:?}")))?;
            }
            entries.push((parts[0].to_string(), color));
        }
        Self::new(entries)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn name(&self, class: usize) -> &str {
        &self.entries[class].0
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn color(&self, label: u8) -> [u8; 3] {
        if label == IGNORE_LABEL {
            self.ignore_color
        } else {
            self.entries
                .get(label as usize)
                .map(|e| e.1)
                .unwrap_or(self.ignore_color)
        }
    }

    /// Label colors alpha-blended over the RGB image.
    pub fn overlay(&self, labels: &LabelMap, rgb: &RgbImage, alpha: f64) -> Result<RgbImage> {
        if labels.width() != rgb.width() || labels.height() != rgb.height() {
            return Err(Error::Dimension("overlay: label map and rgb differ".into()));
        }
        let mut data = Vec::with_capacity(rgb.data().len());
        for (i, &l) in labels.labels().iter().enumerate() {
            let base = rgb.pixel(i);
            let tint = self.color(l);
            for c in 0..3 {
                let v = (1.0 - alpha) * base[c] as f64 + alpha * tint[c] as f64;
                data.push(v.round().clamp(0.0, 255.0) as u8);
            }
        }
        RgbImage::new(rgb.width(), rgb.height(), data)
    }
}
