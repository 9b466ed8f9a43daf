//! Confusion-matrix accuracy indicators over labeled pixels.

use std::fmt::Write as _;

use log::warn;
use thiserror::Error;

use crate::polsar::LabelMap;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("dimension mismatch: prediction {pred:?} vs reference {truth:?}")]
    DimensionMismatch {
        pred: (usize, usize),
        truth: (usize, usize),
    },
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("invalid confusion matrix: {0}")]
    Invalid(String),
}

/// Counts with rows = reference class, columns = predicted class (ids
/// `1..=C` at index `id − 1`). Reference pixels predicted as 0 are kept in
/// `unassigned`; they count toward the total and their row but match no
/// column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    unassigned: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(rows: Vec<Vec<u64>>) -> Result<Self, MetricsError> {
        let c = rows.len();
        if rows.iter().any(|r| r.len() != c) {
            return Err(MetricsError::Invalid("matrix must be square".into()));
        }
        Ok(Self {
            classes: c,
            counts: rows.into_iter().flatten().collect(),
            unassigned: vec![0; c],
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.classes + predicted]
    }

    pub fn unassigned(&self) -> &[u64] {
        &self.unassigned
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unassigned.iter().sum::<u64>()
    }

    pub fn row_sum(&self, c: usize) -> u64 {
        self.counts[c * self.classes..(c + 1) * self.classes].iter().sum::<u64>() + self.unassigned[c]
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        (0..self.classes).map(|r| self.get(r, c)).sum()
    }

    pub fn diagonal(&self, c: usize) -> u64 {
        self.get(c, c)
    }
}

/// Confusion over pixels whose reference id is non-zero.
pub fn confusion(pred: &LabelMap, truth: &LabelMap) -> Result<ConfusionMatrix, MetricsError> {
    if !pred.same_shape(truth.height(), truth.width()) {
        return Err(MetricsError::DimensionMismatch {
            pred: (pred.height(), pred.width()),
            truth: (truth.height(), truth.width()),
        });
    }
    let c = pred.num_classes().max(truth.num_classes()) as usize;
    let mut cm = ConfusionMatrix {
        classes: c,
        counts: vec![0; c * c],
        unassigned: vec![0; c],
    };
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        if t == 0 {
            continue;
        }
        let r = t as usize - 1;
        if p == 0 {
            cm.unassigned[r] += 1;
        } else {
            cm.counts[r * c + p as usize - 1] += 1;
        }
    }
    Ok(cm)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: usize,
    /// Reference pixels of this class.
    pub support: u64,
    /// User's accuracy (precision); `None` when nothing was predicted as
    /// this class.
    pub user_accuracy: Option<f64>,
    /// Producer's accuracy (recall); `None` for an empty reference class.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub classes: Vec<ClassMetrics>,
    pub overall_accuracy: f64,
    pub average_accuracy: f64,
    pub kappa: f64,
    /// Set when chance agreement is 1 and kappa was fixed by convention.
    pub kappa_degenerate: bool,
    pub f1_macro: f64,
    pub mean_iou: f64,
    pub total: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// OA, AA, per-class UA, Cohen's kappa, macro F1 and mean IoU. Classes
/// without reference pixels are left out of the macro averages.
pub fn report(cm: &ConfusionMatrix) -> Result<MetricsReport, MetricsError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricsError::EmptyMatrix);
    }
    let c = cm.classes();
    let mut classes = Vec::with_capacity(c);
    for k in 0..c {
        let tp = cm.diagonal(k);
        let row = cm.row_sum(k);
        let col = cm.col_sum(k);
        let user_accuracy = ratio(tp, col);
        let recall = ratio(tp, row);
        let f1 = ratio(2 * tp, row + col);
        let iou = ratio(tp, row + col - tp);
        if row == 0 {
            warn!("class {} has no reference pixels; skipped in averages", k + 1);
        }
        classes.push(ClassMetrics {
            class: k + 1,
            support: row,
            user_accuracy,
            recall,
            f1,
            iou,
        });
    }
    let present = |m: &&ClassMetrics| m.support > 0;

    // kappa in exact integer arithmetic: (T·Σtp − Σrow·col) / (T² − Σrow·col)
    let diag: u128 = (0..c).map(|k| cm.diagonal(k) as u128).sum();
    let chance: u128 = (0..c).map(|k| cm.row_sum(k) as u128 * cm.col_sum(k) as u128).sum();
    let t = total as u128;
    let (kappa, kappa_degenerate) = if chance == t * t {
        (if diag == t { 1.0 } else { 0.0 }, true)
    } else {
        let num = if t * diag >= chance {
            (t * diag - chance) as f64
        } else {
            -((chance - t * diag) as f64)
        };
        (num / (t * t - chance) as f64, false)
    };

    Ok(MetricsReport {
        overall_accuracy: diag as f64 / total as f64,
        average_accuracy: mean_of(classes.iter().filter(present).map(|m| m.recall)),
        kappa,
        kappa_degenerate,
        f1_macro: mean_of(classes.iter().filter(present).map(|m| Some(m.f1.unwrap_or(0.0)))),
        mean_iou: mean_of(classes.iter().filter(present).map(|m| Some(m.iou.unwrap_or(0.0)))),
        classes,
        total,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsReport {
    /// Flat `key=value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "oa={}", self.overall_accuracy);
        let _ = writeln!(s, "aa={}", self.average_accuracy);
        let _ = writeln!(s, "kappa={}", self.kappa);
        let _ = writeln!(s, "kappa_degenerate={}", self.kappa_degenerate);
        let _ = writeln!(s, "f1={}", self.f1_macro);
        let _ = writeln!(s, "miou={}", self.mean_iou);
        let _ = writeln!(s, "total={}", self.total);
        for m in &self.classes {
            let _ = writeln!(s, "ua_{}={}", m.class, opt(m.user_accuracy));
            let _ = writeln!(s, "recall_{}={}", m.class, opt(m.recall));
        }
        s
    }

    /// One row per class plus an `overall` row whose `recall`, `f1` and
    /// `iou` columns hold AA, macro F1 and MIoU.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,ua,recall,f1,iou,support,oa,aa,kappa\n");
        for m in &self.classes {
            let _ = writeln!(
                s,
                "class_{},{},{},{},{},{},,,",
                m.class,
                opt(m.user_accuracy),
                opt(m.recall),
                opt(m.f1),
                opt(m.iou),
                m.support
            );
        }
        let mean_ua = mean_of(self.classes.iter().filter(|m| m.support > 0).map(|m| m.user_accuracy));
        let _ = writeln!(
            s,
            "overall,{},{},{},{},{},{},{},{}",
            mean_ua,
            self.average_accuracy,
            self.f1_macro,
            self.mean_iou,
            self.total,
            self.overall_accuracy,
            self.average_accuracy,
            self.kappa
        );
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cm(rows: &[&[u64]]) -> ConfusionMatrix {
        ConfusionMatrix::from_counts(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn perfect_two_class() {
        let r = report(&cm(&[&[50, 0], &[0, 50]])).unwrap();
        assert_eq!((r.overall_accuracy, r.kappa, r.mean_iou), (1.0, 1.0, 1.0));
    }

    #[test]
    fn hand_computed_kappa_is_exact() {
        let r = report(&cm(&[&[40, 10], &[20, 30]])).unwrap();
        assert_eq!(r.overall_accuracy, 0.7);
        assert_eq!(r.kappa, 0.4);
        assert!(!r.kappa_degenerate);
        assert_eq!(r.average_accuracy, (0.8 + 0.6) / 2.0);
        assert_eq!(r.classes[0].user_accuracy, Some(40.0 / 60.0));
    }

    #[test]
    fn single_class_kappa_is_flagged() {
        let r = report(&cm(&[&[7]])).unwrap();
        assert_eq!((r.overall_accuracy, r.kappa), (1.0, 1.0));
        assert!(r.kappa_degenerate);
    }

    #[test]
    fn empty_matrix_is_an_error() {
        assert_eq!(report(&cm(&[&[0, 0], &[0, 0]])), Err(MetricsError::EmptyMatrix));
    }

    #[test]
    fn confusion_skips_unlabeled_and_tallies_marginals() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth: Vec<u16> = (0..400).map(|_| rng.random_range(0..4)).collect();
        let pred: Vec<u16> = (0..400).map(|_| rng.random_range(1..4)).collect();
        let t = LabelMap::new(20, 20, truth.clone()).unwrap();
        let p = LabelMap::new(20, 20, pred.clone()).unwrap();
        let m = confusion(&p, &t).unwrap();
        assert_eq!(m.total() as usize, truth.iter().filter(|&&l| l != 0).count());
        for class in 1..=3u16 {
            let rows = truth.iter().filter(|&&l| l == class).count() as u64;
            let cols = truth
                .iter()
                .zip(&pred)
                .filter(|(&t, &p)| t != 0 && p == class)
                .count() as u64;
            assert_eq!(m.row_sum(class as usize - 1), rows);
            assert_eq!(m.col_sum(class as usize - 1), cols);
        }
    }

    #[test]
    fn identical_maps_give_diagonal_and_perfect_scores() {
        let x = LabelMap::new(2, 3, vec![1, 2, 3, 3, 2, 1]).unwrap();
        let m = confusion(&x, &x).unwrap();
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(m.get(r, c) > 0, r == c);
            }
        }
        let rep = report(&m).unwrap();
        assert_eq!(
            (rep.overall_accuracy, rep.average_accuracy, rep.kappa, rep.f1_macro, rep.mean_iou),
            (1.0, 1.0, 1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn all_unlabeled_reference_gives_zero_matrix() {
        let t = LabelMap::filled(3, 3, 0);
        let p = LabelMap::filled(3, 3, 2);
        assert_eq!(confusion(&p, &t).unwrap().total(), 0);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = LabelMap::filled(2, 2, 1);
        let b = LabelMap::filled(2, 3, 1);
        assert!(matches!(confusion(&a, &b), Err(MetricsError::DimensionMismatch { .. })));
    }

    #[test]
    fn csv_and_text_carry_the_summary() {
        let r = report(&cm(&[&[40, 10], &[20, 30]])).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.lines().last().unwrap().ends_with(",0.7,0.7,0.4"));
        assert!(r.to_text().contains("kappa=0.4\n"));
    }
}
