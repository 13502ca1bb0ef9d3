use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelMask, CLASS_NAMES, IGNORE};

/// `counts[t·k + p]`: pixels of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
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

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Arity {
                what: "confusion counts",
                expected: k * k,
                found: counts.len(),
            });
        }
        Ok(Self { k, counts })
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    /// Tallies one pixel; ignore-labelled truth is skipped.
    pub fn add(&mut self, truth: u8, pred: u8) -> Result<()> {
        if truth == IGNORE {
            return Ok(());
        }
        let (t, p) = (truth as usize, pred as usize);
        if t >= self.k || p >= self.k {
            return Err(Error::Shape(format!("class pair ({truth}, {pred}) out of range for {} classes", self.k)));
        }
        self.counts[t * self.k + p] += 1;
        Ok(())
    }

    pub fn add_slices(&mut self, truth: &[u8], pred: &[u8]) -> Result<()> {
        if truth.len() != pred.len() {
            return Err(Error::Shape(format!("{} truth pixels vs {} predicted", truth.len(), pred.len())));
        }
        truth.iter().zip(pred).try_for_each(|(&t, &p)| self.add(t, p))
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.k, other.k, "merging confusion matrices of different size");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.get(c, c)
    }

    /// Column residual: predicted `c`, truth differs.
    pub fn fp(&self, c: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, c)).sum::<u64>() - self.tp(c)
    }

    /// Row residual: truth `c`, predicted differently.
    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.get(c, p)).sum::<u64>() - self.tp(c)
    }
}

pub fn confusion(pred: &LabelMask, truth: &LabelMask, k: usize) -> Result<ConfusionMatrix> {
    truth.geometry().ensure_same(pred.geometry(), "prediction")?;
    let mut cm = ConfusionMatrix::new(k);
    cm.add_slices(truth.classes(), pred.classes())?;
    Ok(cm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    /// `None` when the ratio is 0/0.
    pub iou: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    /// Means over classes where the metric is defined; NaN if none is.
    pub mean_iou: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub accuracy: f64,
    /// Classes absent from both truth and prediction.
    pub excluded: Vec<usize>,
    pub pixels: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(v: impl Iterator<Item = Option<f64>>) -> f64 {
    let (s, n) = v.flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn metrics(cm: &ConfusionMatrix) -> Metrics {
    let per_class: Vec<ClassMetrics> = (0..cm.classes())
        .map(|c| {
            let (tp, fp, fn_) = (cm.tp(c), cm.fp(c), cm.fn_(c));
            ClassMetrics {
                class: c,
                iou: ratio(tp, tp + fp + fn_),
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                support: tp + fn_,
            }
        })
        .collect();
    let excluded = per_class.iter().filter(|m| m.iou.is_none()).map(|m| m.class).collect();
    let trace: u64 = (0..cm.classes()).map(|c| cm.tp(c)).sum();
    let total = cm.total();
    Metrics {
        mean_iou: mean_defined(per_class.iter().map(|m| m.iou)),
        mean_precision: mean_defined(per_class.iter().map(|m| m.precision)),
        mean_recall: mean_defined(per_class.iter().map(|m| m.recall)),
        accuracy: ratio(trace, total).unwrap_or(f64::NAN),
        per_class,
        excluded,
        pixels: total,
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl Metrics {
    pub fn iou(&self, class: usize) -> Option<f64> {
        self.per_class.get(class).and_then(|m| m.iou)
    }

    /// Per-class table followed by mean and accuracy rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,name,iou,precision,recall,support\n");
        for m in &self.per_class {
            let name = CLASS_NAMES.get(m.class).copied().unwrap_or("class");
            writeln!(
                s,
                "{},{name},{},{},{},{}",
                m.class,
                cell(m.iou),
                cell(m.precision),
                cell(m.recall),
                m.support
            )
            .unwrap();
        }
        let f = |x: f64| cell(x.is_finite().then_some(x));
        writeln!(
            s,
            "mean,,{},{},{},{}",
            f(self.mean_iou),
            f(self.mean_precision),
            f(self.mean_recall),
            self.pixels
        )
        .unwrap();
        writeln!(s, "accuracy,,{},,,{}", f(self.accuracy), self.pixels).unwrap();
        s
    }

    pub fn write(&self, json_path: impl AsRef<Path>, csv_path: impl AsRef<Path>) -> Result<()> {
        let (jp, cp) = (json_path.as_ref(), csv_path.as_ref());
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(jp, json).map_err(|e| Error::io(jp, e))?;
        std::fs::write(cp, self.to_csv()).map_err(|e| Error::io(cp, e))
    }
}
