//! Confusion matrices and the three segmentation scores: pixel accuracy,
//! mean class accuracy and mean intersection-over-union.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::types::{LabelMap, IGNORE_LABEL};

/// `counts[i][j]` is the number of pixels of true class `i` predicted as `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds a matrix from rows of counts.
    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(Error::Dimension("confusion matrix must be square".into()));
        }
        Ok(Self {
            k,
            counts: rows.concat(),
        })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `T_i`, the ground-truth pixel count of class `i`.
    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i * self.k..(i + 1) * self.k].iter().sum()
    }

    /// Pixels predicted as class `j`.
    pub fn col_sum(&self, j: usize) -> u64 {
        (0..self.k).map(|i| self.get(i, j)).sum()
    }

    /// Adds one prediction/ground-truth pair. Ignore-labelled ground truth
    /// pixels are skipped.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
            return Err(Error::Dimension(format!(
                "prediction is {}x{}, ground truth is {}x{}",
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height()
            )));
        }
        // Validate everything first so a failed call leaves the matrix untouched.
        for (pixel, (&p, &t)) in pred.labels().iter().zip(gt.labels()).enumerate() {
            if t == IGNORE_LABEL {
                continue;
            }
            for value in [p, t] {
                if value as usize >= self.k {
                    return Err(Error::LabelOutOfRange {
                        value,
                        pixel,
                        num_classes: self.k,
                    });
                }
            }
        }
        for (&p, &t) in pred.labels().iter().zip(gt.labels()) {
            if t != IGNORE_LABEL {
                self.counts[t as usize * self.k + p as usize] += 1;
            }
        }
        Ok(())
    }

    /// Elementwise sum with another matrix over the same classes.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.k != self.k {
            return Err(Error::Dimension(format!(
                "cannot merge {}-class and {}-class matrices",
                self.k, other.k
            )));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// Per-class accuracy `C_ii / T_i`, `None` for classes absent from the ground truth.
    pub fn classwise_accuracy(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|i| {
                let t = self.row_sum(i);
                (t > 0).then(|| self.get(i, i) as f64 / t as f64)
            })
            .collect()
    }

    /// Per-class IoU, `None` for classes absent from both ground truth and prediction.
    pub fn classwise_iou(&self) -> Vec<Option<f64>> {
        (0..self.k)
            .map(|i| {
                let inter = self.get(i, i);
                let union = self.row_sum(i) + self.col_sum(i) - inter;
                (union > 0).then(|| inter as f64 / union as f64)
            })
            .collect()
    }
}

/// Convenience wrapper that returns a fresh matrix.
pub fn accumulate(mut cm: ConfusionMatrix, pred: &LabelMap, gt: &LabelMap) -> Result<ConfusionMatrix> {
    cm.accumulate(pred, gt)?;
    Ok(cm)
}

pub fn pixel_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Undefined("pixel accuracy of an empty confusion matrix"));
    }
    let diag: u64 = (0..cm.k).map(|i| cm.get(i, i)).sum();
    Ok(diag as f64 / total as f64)
}

fn mean_present(values: &[Option<f64>], what: &'static str) -> Result<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::Undefined(what));
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

pub fn mean_accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    mean_present(&cm.classwise_accuracy(), "mean accuracy with no class present")
}

pub fn mean_iou(cm: &ConfusionMatrix) -> Result<f64> {
    mean_present(&cm.classwise_iou(), "mean IoU with no class present")
}

pub fn classwise_iou(cm: &ConfusionMatrix) -> Vec<Option<f64>> {
    cm.classwise_iou()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub pixel: f64,
    pub mean: f64,
    pub iou: f64,
}

impl Scores {
    pub fn from_matrix(cm: &ConfusionMatrix) -> Result<Self> {
        Ok(Self {
            pixel: pixel_accuracy(cm)?,
            mean: mean_accuracy(cm)?,
            iou: mean_iou(cm)?,
        })
    }

    /// Three aligned lines, `Pixel`, `Mean` and `IoU`, in percent.
    pub fn to_text(&self) -> String {
        format!(
            "Pixel {:6.2}\nMean  {:6.2}\nIoU   {:6.2}\n",
            self.pixel * 100.0,
            self.mean * 100.0,
            self.iou * 100.0
        )
    }

    pub fn to_csv(&self) -> String {
        format!("Pixel,Mean,IoU\n{:.6},{:.6},{:.6}\n", self.pixel, self.mean, self.iou)
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{:.1}", v * 100.0))
}

/// Classwise IoU table: one column per class followed by the mean, values
/// in percent. Classes absent from both maps print as `-`.
pub fn classwise_table(cm: &ConfusionMatrix, names: &[String]) -> Result<String> {
    let (header, row) = table_cells(cm, names)?;
    let widths: Vec<usize> = header
        .iter()
        .zip(&row)
        .map(|(h, r)| h.len().max(r.len()))
        .collect();
    let mut out = String::new();
    for (line, cells) in [("", &header), ("", &row)] {
        out.push_str(line);
        let joined: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", joined.join(" "));
    }
    Ok(out)
}

/// The same table as comma-separated values with IoU in `[0, 1]`.
pub fn classwise_csv(cm: &ConfusionMatrix, names: &[String]) -> Result<String> {
    check_names(cm, names)?;
    let mut out = String::new();
    let mut header: Vec<String> = names.to_vec();
    header.push("mean".into());
    let _ = writeln!(out, "{}", header.join(","));
    let mut row: Vec<String> = cm
        .classwise_iou()
        .iter()
        .map(|v| v.map_or_else(String::new, |v| format!("{v:.6}")))
        .collect();
    row.push(format!("{:.6}", mean_iou(cm)?));
    let _ = writeln!(out, "{}", row.join(","));
    Ok(out)
}

fn check_names(cm: &ConfusionMatrix, names: &[String]) -> Result<()> {
    if names.len() != cm.k {
        return Err(Error::Dimension(format!(
            "{} class names for a {}-class matrix",
            names.len(),
            cm.k
        )));
    }
    Ok(())
}

fn table_cells(cm: &ConfusionMatrix, names: &[String]) -> Result<(Vec<String>, Vec<String>)> {
    check_names(cm, names)?;
    let mut header = names.to_vec();
    header.push("mean".into());
    let mut row: Vec<String> = cm.classwise_iou().into_iter().map(cell).collect();
    row.push(format!("{:.1}", mean_iou(cm)? * 100.0));
    Ok((header, row))
}
