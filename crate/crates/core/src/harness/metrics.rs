//! Classification and segmentation metrics, and per-epoch history.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::tensor::Real;

/// Foreground threshold for predicted probabilities.
pub const SEG_THRESHOLD: f64 = 0.5;

/// Number of rows whose label is among the `k` largest logits. Ties rank
/// the lower class index first.
pub fn topk_correct<T: Real>(logits: &[T], classes: usize, labels: &[usize], k: usize) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &y)| {
            let row = &logits[i * classes..(i + 1) * classes];
            let ly = row[y];
            let better = row
                .iter()
                .enumerate()
                .filter(|&(j, &v)| v > ly || (v == ly && j < y))
                .count();
            better < k
        })
        .count()
}

/// Intersection, predicted area and mask area of one binary mask pair.
pub fn overlap<T: Real>(pred: &[T], mask: &[T], threshold: f64) -> (usize, usize, usize) {
    let (mut inter, mut p, mut m) = (0, 0, 0);
    for (&a, &b) in pred.iter().zip(mask) {
        let pa = a.as_f64() >= threshold;
        let mb = b.as_f64() >= 0.5;
        p += pa as usize;
        m += mb as usize;
        inter += (pa && mb) as usize;
    }
    (inter, p, m)
}

/// `|P∩M| / |P∪M|`; 1 when both masks are empty.
pub fn iou(inter: usize, p: usize, m: usize) -> f64 {
    let union = p + m - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// `2|P∩M| / (|P| + |M|)`; 1 when both masks are empty.
pub fn f1(inter: usize, p: usize, m: usize) -> f64 {
    if p + m == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (p + m) as f64
    }
}

/// Running sums for a metric pass.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricAccumulator {
    pub samples: usize,
    pub top1: usize,
    pub top5: usize,
    pub iou_sum: f64,
    pub f1_sum: f64,
    pub segmentation: bool,
}

impl MetricAccumulator {
    pub fn add_classification<T: Real>(&mut self, logits: &[T], classes: usize, labels: &[usize]) {
        self.samples += labels.len();
        self.top1 += topk_correct(logits, classes, labels, 1);
        self.top5 += topk_correct(logits, classes, labels, 5.min(classes));
    }

    pub fn add_segmentation<T: Real>(&mut self, pred: &[T], mask: &[T], per_image: usize) {
        self.segmentation = true;
        for (p, m) in pred.chunks(per_image).zip(mask.chunks(per_image)) {
            let (i, a, b) = overlap(p, m, SEG_THRESHOLD);
            self.iou_sum += iou(i, a, b);
            self.f1_sum += f1(i, a, b);
            self.samples += 1;
        }
    }

    pub fn finish(&self) -> BTreeMap<String, f64> {
        let n = self.samples.max(1) as f64;
        let mut out = BTreeMap::new();
        if self.segmentation {
            out.insert("iou".into(), self.iou_sum / n);
            out.insert("f1".into(), self.f1_sum / n);
        } else {
            out.insert("top1".into(), self.top1 as f64 / n);
            out.insert("top5".into(), self.top5 as f64 / n);
        }
        out
    }
}

/// One epoch of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: u64,
    pub lr: f64,
    /// Mean total loss over the epoch's batches.
    pub train_loss: f64,
    pub task_loss: f64,
    pub penalty: f64,
    pub aux_loss: f64,
    /// Evaluation metrics on the held-out split (empty when none was given).
    pub eval: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Total loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let keys: Vec<String> = self
            .epochs
            .iter()
            .flat_map(|e| e.eval.keys().cloned())
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let mut s = String::from("epoch,step,lr,train_loss,task_loss,penalty,aux_loss");
        for k in &keys {
            s.push(',');
            s.push_str(k);
        }
        s.push('\n');
        for e in &self.epochs {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{}",
                e.epoch, e.step, e.lr, e.train_loss, e.task_loss, e.penalty, e.aux_loss
            );
            for k in &keys {
                s.push(',');
                if let Some(v) = e.eval.get(k) {
                    let _ = write!(s, "{v}");
                }
            }
            s.push('\n');
        }
        s
    }

    /// Writes `history.csv` and `history.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("history.csv"), self.to_csv())?;
        std::fs::write(dir.join("history.json"), serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn topk_with_ties() {
        let logits = [1.0f64, 3.0, 3.0, 0.0, 0.0, 0.0];
        assert_eq!(topk_correct(&logits, 3, &[1, 0], 1), 2);
        assert_eq!(topk_correct(&logits, 3, &[2, 0], 1), 1);
        assert_eq!(topk_correct(&logits, 3, &[2, 2], 2), 1);
    }

    #[test]
    fn iou_edge_cases() {
        let m = [1.0f64, 1.0, 0.0, 0.0];
        let (i, p, q) = overlap(&m, &m, SEG_THRESHOLD);
        assert_eq!((iou(i, p, q), f1(i, p, q)), (1.0, 1.0));
        let c = [0.0f64, 0.0, 1.0, 1.0];
        let (i, p, q) = overlap(&c, &m, SEG_THRESHOLD);
        assert_eq!((iou(i, p, q), f1(i, p, q)), (0.0, 0.0));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let mut h = History::default();
        h.epochs.push(EpochRecord {
            epoch: 1,
            step: 10,
            lr: 0.1,
            train_loss: 1.5,
            task_loss: 1.0,
            penalty: 0.5,
            aux_loss: 0.0,
            eval: [("top1".to_string(), 0.5)].into(),
        });
        let csv = h.to_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.starts_with("epoch,step,lr,train_loss,task_loss,penalty,aux_loss,top1\n"));
    }
}
