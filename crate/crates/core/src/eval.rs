//! Segmentation metrics: confusion matrices, per-class IoU, mIoU, and
//! diagnostics for pseudo-label masks.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pseudolabel::WeightedMask;

/// `counts[gt][pred]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts one pixel pair per position. Checks everything before
    /// touching the counts, so a failed call leaves `self` unchanged.
    pub fn accumulate(&mut self, predictions: &[u8], labels: &[u8]) -> Result<()> {
        if predictions.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} predictions for {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = predictions.iter().chain(labels).find(|&&c| c as usize >= self.classes) {
            return Err(Error::ClassOutOfRange {
                class: bad as usize,
                num_classes: self.classes,
            });
        }
        for (&p, &g) in predictions.iter().zip(labels) {
            self.counts[g as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &Self) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::Shape(format!(
                "merging {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// `None` for classes that appear in neither predictions nor labels.
    pub per_class_iou: Vec<Option<f64>>,
    /// Mean over the defined entries of `per_class_iou`.
    pub miou: f64,
    pub pixel_accuracy: f64,
    pub retained_fraction: f64,
}

/// IoU per class, mIoU over classes with a nonzero denominator, and pixel
/// accuracy. `retained_fraction` is left at 0; callers that track masks fill
/// it in.
pub fn iou_from_cm(cm: &ConfusionMatrix) -> MetricsReport {
    let c = cm.classes;
    let mut per_class = Vec::with_capacity(c);
    let mut diag = 0u64;
    for k in 0..c {
        let tp = cm.get(k, k);
        let row: u64 = (0..c).map(|j| cm.get(k, j)).sum();
        let col: u64 = (0..c).map(|i| cm.get(i, k)).sum();
        let denom = row + col - tp;
        diag += tp;
        per_class.push((denom > 0).then(|| tp as f64 / denom as f64));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let miou = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let total = cm.total();
    MetricsReport {
        per_class_iou: per_class,
        miou,
        pixel_accuracy: if total == 0 { 0.0 } else { diag as f64 / total as f64 },
        retained_fraction: 0.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskDiagnostics {
    pub retained_fraction: f64,
    /// Accuracy of the teacher argmax on supervised pixels; `None` when the
    /// mask supervises nothing.
    pub retained_accuracy: Option<f64>,
    pub overall_accuracy: f64,
}

/// How much of the teacher's argmax a mask keeps, and how accurate the kept
/// part is compared with the whole.
pub fn mask_diagnostics(mask: &WeightedMask, teacher_argmax: &[u8], labels: &[u8]) -> Result<MaskDiagnostics> {
    if mask.len() != teacher_argmax.len() || mask.len() != labels.len() {
        return Err(Error::Shape(format!(
            "mask {} / argmax {} / labels {} pixels",
            mask.len(),
            teacher_argmax.len(),
            labels.len()
        )));
    }
    let n = mask.len();
    let (mut kept, mut kept_right, mut right) = (0usize, 0usize, 0usize);
    for i in 0..n {
        let ok = teacher_argmax[i] == labels[i];
        right += ok as usize;
        if mask.get(i).is_some() {
            kept += 1;
            kept_right += ok as usize;
        }
    }
    Ok(MaskDiagnostics {
        retained_fraction: if n == 0 { 0.0 } else { kept as f64 / n as f64 },
        retained_accuracy: (kept > 0).then(|| kept_right as f64 / kept as f64),
        overall_accuracy: if n == 0 { 0.0 } else { right as f64 / n as f64 },
    })
}

/// One row of a metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub variant: String,
    pub report: MetricsReport,
}

/// Writes `step,variant,miou,pixel_accuracy,retained_fraction,iou_0,…`.
/// Floats get six decimals; an undefined IoU is an empty field.
pub fn write_metrics_csv<W: Write>(out: &mut W, num_classes: usize, rows: &[EvalRecord]) -> Result<()> {
    let mut header = String::from("step,variant,miou,pixel_accuracy,retained_fraction");
    for c in 0..num_classes {
        header.push_str(&format!(",iou_{c}"));
    }
    writeln!(out, "{header}")?;
    for row in rows {
        let r = &row.report;
        if r.per_class_iou.len() != num_classes {
            return Err(Error::Shape(format!(
                "report has {} classes, CSV has {num_classes}",
                r.per_class_iou.len()
            )));
        }
        let mut line = format!(
            "{},{},{:.6},{:.6},{:.6}",
            row.step, row.variant, r.miou, r.pixel_accuracy, r.retained_fraction
        );
        for iou in &r.per_class_iou {
            match iou {
                Some(v) => line.push_str(&format!(",{v:.6}")),
                None => line.push(','),
            }
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
