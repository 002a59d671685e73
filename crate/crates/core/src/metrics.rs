//! Confusion matrices, per-class metrics, AUC-ROC and the classification report.
//!
//! Ratios whose denominator is zero are `None` rather than 0, and averages
//! skip them.

use std::fmt::Write as _;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    /// Row-major; `[t * classes + p]` counts true class `t` predicted as `p`.
    counts: Vec<u64>,
}

/// One-vs-rest counts for a single class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if classes == 0 || counts.len() != classes * classes {
            return Err(invalid(format!(
                "confusion matrix for {classes} classes needs {} counts, got {}",
                classes * classes,
                counts.len()
            )));
        }
        Ok(Self { classes, counts })
    }

    pub fn from_predictions(labels: &[usize], predictions: &[usize], classes: usize) -> Result<Self> {
        if labels.len() != predictions.len() {
            return Err(invalid(format!(
                "{} labels but {} predictions",
                labels.len(),
                predictions.len()
            )));
        }
        let mut counts = vec![0u64; classes * classes];
        for (&t, &p) in labels.iter().zip(predictions) {
            if t >= classes || p >= classes {
                return Err(invalid(format!("class index out of range: true {t}, predicted {p}, classes {classes}")));
            }
            counts[t * classes + p] += 1;
        }
        Self::new(classes, counts)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.trace(), self.total())
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.classes).map(|p| self.get(class, p)).sum()
    }

    pub fn one_vs_rest(&self, class: usize) -> BinaryCounts {
        let tp = self.get(class, class);
        let fn_ = self.support(class) - tp;
        let fp = (0..self.classes).map(|t| self.get(t, class)).sum::<u64>() - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fn_ - fp,
        }
    }

    /// Comma-separated grid with a header row of predicted class names and a
    /// leading column of true class names.
    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |i: usize| names.get(i).cloned().unwrap_or_else(|| i.to_string());
        let mut out = String::from("true\\predicted");
        for p in 0..self.classes {
            out.push(',');
            out.push_str(&name(p));
        }
        out.push('\n');
        for t in 0..self.classes {
            out.push_str(&name(t));
            for p in 0..self.classes {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinaryMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
}

pub fn metrics_from_counts(c: BinaryCounts) -> BinaryMetrics {
    let sensitivity = ratio(c.tp, c.tp + c.fn_);
    let precision = ratio(c.tp, c.tp + c.fp);
    let f1 = match (precision, sensitivity) {
        (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
        _ => None,
    };
    BinaryMetrics {
        sensitivity,
        specificity: ratio(c.tn, c.tn + c.fp),
        precision,
        f1,
        accuracy: ratio(c.tp + c.tn, c.tp + c.tn + c.fp + c.fn_),
    }
}

/// Area under the ROC curve for binary labels, sweeping every distinct
/// score as a threshold. Equal scores move TPR and FPR together in one
/// diagonal step, so the result equals `P(s⁺ > s⁻) + ½·P(s⁺ = s⁻)`.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(invalid(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(invalid("scores must not be NaN"));
    }
    let pos = labels.iter().filter(|&&l| l).count() as u128;
    let neg = labels.len() as u128 - pos;
    if pos == 0 || neg == 0 {
        return Err(invalid("AUC needs both positive and negative samples"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    // Twice the trapezoid area in units of one (positive, negative) pair.
    let mut area2: u128 = 0;
    let mut tp_before: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let (mut tp, mut fp) = (0u128, 0u128);
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        area2 += fp * (2 * tp_before + tp);
        tp_before += tp;
    }
    Ok(area2 as f64 / (2 * pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MulticlassAuc {
    /// `None` for classes that are absent or make up every sample.
    pub per_class: Vec<Option<f64>>,
    pub macro_avg: Option<f64>,
}

/// One-vs-rest AUC per class using column `c` of the probability rows as
/// that class's score, macro-averaged over the classes where it is defined.
pub fn one_vs_rest_auc(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<MulticlassAuc> {
    if probs.len() != labels.len() || probs.iter().any(|r| r.len() != classes) {
        return Err(invalid("probability rows must match labels and class count"));
    }
    let mut per_class = Vec::with_capacity(classes);
    for c in 0..classes {
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let bin: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        per_class.push(auc_roc(&scores, &bin).ok());
    }
    Ok(MulticlassAuc {
        macro_avg: mean_defined(per_class.iter().copied()),
        per_class,
    })
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassRow {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
    pub support: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageRow {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassificationReport {
    pub class_names: Vec<String>,
    pub per_class: Vec<ClassRow>,
    pub accuracy: Option<f64>,
    pub macro_avg: AverageRow,
    pub weighted_avg: AverageRow,
    pub total: u64,
}

pub fn build_report(cm: &ConfusionMatrix, names: &[String]) -> ClassificationReport {
    let per_class: Vec<ClassRow> = (0..cm.classes())
        .map(|c| {
            let m = metrics_from_counts(cm.one_vs_rest(c));
            ClassRow {
                precision: m.precision,
                recall: m.sensitivity,
                specificity: m.specificity,
                f1: m.f1,
                support: cm.support(c),
            }
        })
        .collect();
    let field = |f: fn(&ClassRow) -> Option<f64>| {
        let macro_v = mean_defined(per_class.iter().map(f));
        let mut num = 0.0;
        let mut den = 0u64;
        for r in &per_class {
            if let Some(v) = f(r) {
                num += v * r.support as f64;
                den += r.support;
            }
        }
        (macro_v, (den > 0).then(|| num / den as f64))
    };
    let (mp, wp) = field(|r| r.precision);
    let (mr, wr) = field(|r| r.recall);
    let (mf, wf) = field(|r| r.f1);
    ClassificationReport {
        class_names: (0..cm.classes())
            .map(|i| names.get(i).cloned().unwrap_or_else(|| i.to_string()))
            .collect(),
        per_class,
        accuracy: cm.accuracy(),
        macro_avg: AverageRow {
            precision: mp,
            recall: mr,
            f1: mf,
        },
        weighted_avg: AverageRow {
            precision: wp,
            recall: wr,
            f1: wf,
        },
        total: cm.total(),
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undef".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn plain(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

impl ClassificationReport {
    /// Aligned table of percentages with two decimals.
    pub fn render_text(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(String::len)
            .chain([12])
            .max()
            .unwrap_or(12);
        let mut out = String::new();
        let _ = writeln!(out, "{:>width$} {:>10} {:>10} {:>10} {:>10}", "", "precision", "recall", "f1-score", "support");
        out.push('\n');
        for (name, r) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(
                out,
                "{name:>width$} {:>10} {:>10} {:>10} {:>10}",
                pct(r.precision),
                pct(r.recall),
                pct(r.f1),
                r.support
            );
        }
        out.push('\n');
        let _ = writeln!(out, "{:>width$} {:>10} {:>10} {:>10} {:>10}", "accuracy", "", "", pct(self.accuracy), self.total);
        for (label, row) in [("macro avg", &self.macro_avg), ("weighted avg", &self.weighted_avg)] {
            let _ = writeln!(
                out,
                "{label:>width$} {:>10} {:>10} {:>10} {:>10}",
                pct(row.precision),
                pct(row.recall),
                pct(row.f1),
                self.total
            );
        }
        out
    }

    /// `key=value` lines with unrounded fractions.
    pub fn render_key_values(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "accuracy={}", plain(self.accuracy));
        let _ = writeln!(out, "total={}", self.total);
        for (name, r) in self.class_names.iter().zip(&self.per_class) {
            let _ = writeln!(out, "{name}.precision={}", plain(r.precision));
            let _ = writeln!(out, "{name}.recall={}", plain(r.recall));
            let _ = writeln!(out, "{name}.specificity={}", plain(r.specificity));
            let _ = writeln!(out, "{name}.f1={}", plain(r.f1));
            let _ = writeln!(out, "{name}.support={}", r.support);
        }
        for (label, row) in [("macro", &self.macro_avg), ("weighted", &self.weighted_avg)] {
            let _ = writeln!(out, "{label}.precision={}", plain(row.precision));
            let _ = writeln!(out, "{label}.recall={}", plain(row.recall));
            let _ = writeln!(out, "{label}.f1={}", plain(row.f1));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn confusion_examples() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(cm.get(t, p), u64::from(t == p));
            }
        }
        let cm = ConfusionMatrix::from_predictions(&[0, 0], &[1, 1], 2).unwrap();
        assert_eq!(cm.get(0, 1), 2);
        assert_eq!(cm.total(), 2);
        assert!(ConfusionMatrix::from_predictions(&[0, 3], &[0, 1], 3).is_err());
        assert!(ConfusionMatrix::from_predictions(&[0], &[0, 1], 3).is_err());
    }

    #[test]
    fn metric_examples() {
        let m = metrics_from_counts(BinaryCounts { tp: 5, fp: 1, fn_: 1, tn: 13 });
        assert_eq!(m.precision, Some(5.0 / 6.0));
        assert_eq!(m.sensitivity, Some(5.0 / 6.0));
        assert!((m.f1.unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(m.specificity, Some(13.0 / 14.0));
        assert_eq!(m.accuracy, Some(0.9));

        let m = metrics_from_counts(BinaryCounts { tp: 0, fp: 0, fn_: 0, tn: 10 });
        assert_eq!(m.accuracy, Some(1.0));
        assert_eq!(m.precision, None);
        assert_eq!(m.sensitivity, None);
        assert_eq!(m.f1, None);

        let m = metrics_from_counts(BinaryCounts { tp: 4, fp: 0, fn_: 0, tn: 6 });
        for v in [m.precision, m.sensitivity, m.specificity, m.f1, m.accuracy] {
            assert_eq!(v, Some(1.0));
        }
    }

    #[test]
    fn auc_examples() {
        let labels = [false, false, true, true];
        assert_eq!(auc_roc(&[0.1, 0.4, 0.35, 0.8], &labels).unwrap(), 0.75);
        assert_eq!(auc_roc(&[0.1, 0.2, 0.8, 0.9], &labels).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.9, 0.8, 0.2, 0.1], &labels).unwrap(), 0.0);
        assert_eq!(auc_roc(&[0.5; 4], &labels).unwrap(), 0.5);
        assert!(auc_roc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn report_on_fabricated_matrix() {
        // Rows are true classes.
        let cm = ConfusionMatrix::new(3, vec![8, 1, 1, 2, 6, 2, 0, 1, 9]).unwrap();
        let r = build_report(&cm, &names(3));
        // Class 0: tp 8, fp 2, fn 2.  Class 1: tp 6, fp 2, fn 4.  Class 2: tp 9, fp 3, fn 1.
        let expect = [(0.8, 0.8), (0.75, 0.6), (0.75, 0.9)];
        for (row, (p, rc)) in r.per_class.iter().zip(expect) {
            assert!((row.precision.unwrap() - p).abs() < 1e-15);
            assert!((row.recall.unwrap() - rc).abs() < 1e-15);
            let f1 = 2.0 * p * rc / (p + rc);
            assert!((row.f1.unwrap() - f1).abs() < 1e-15);
        }
        assert_eq!(r.accuracy, Some(23.0 / 30.0));
        let macro_p = (0.8 + 0.75 + 0.75) / 3.0;
        assert!((r.macro_avg.precision.unwrap() - macro_p).abs() < 1e-15);
        // Balanced supports: weighted equals macro.
        assert!((r.weighted_avg.recall.unwrap() - r.macro_avg.recall.unwrap()).abs() < 1e-15);
        let text = r.render_text();
        assert!(text.contains("80.00"));
        assert!(text.contains("macro avg"));
        assert!(r.render_key_values().contains("c1.recall=0.6"));
    }

    #[test]
    fn perfect_report_is_all_hundred() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1, 1, 2], &[0, 1, 1, 2], 3).unwrap();
        let r = build_report(&cm, &names(3));
        assert!(r.per_class.iter().all(|c| c.precision == Some(1.0) && c.recall == Some(1.0) && c.f1 == Some(1.0)));
        assert_eq!(r.accuracy, Some(1.0));
        assert!(!r.render_text().contains("undef"));
    }

    #[test]
    fn undefined_classes_render_as_undef() {
        let cm = ConfusionMatrix::from_predictions(&[0, 0], &[0, 0], 2).unwrap();
        let r = build_report(&cm, &names(2));
        assert_eq!(r.per_class[1].recall, None);
        assert_eq!(r.macro_avg.recall, Some(1.0));
        assert!(r.render_text().contains("undef"));
    }

    #[test]
    fn confusion_csv_layout() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1], &[1, 1], 2).unwrap();
        assert_eq!(cm.to_csv(&names(2)), "true\\predicted,c0,c1\nc0,0,1\nc1,0,1\n");
    }

    fn case() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
        (1usize..200).prop_flat_map(|n| {
            (
                proptest::collection::vec(0usize..4, n),
                proptest::collection::vec(0usize..4, n),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn accuracy_is_trace_over_total_and_macro_f1_is_bounded((labels, preds) in case()) {
            let cm = ConfusionMatrix::from_predictions(&labels, &preds, 4).unwrap();
            let correct = labels.iter().zip(&preds).filter(|(a, b)| a == b).count();
            prop_assert_eq!(cm.accuracy(), Some(correct as f64 / labels.len() as f64));
            let r = build_report(&cm, &names(4));
            let f1s: Vec<f64> = r.per_class.iter().filter_map(|c| c.f1).collect();
            if let Some(m) = r.macro_avg.f1 {
                let lo = f1s.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = f1s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
            }
        }

        #[test]
        fn permutation_invariance((labels, preds) in case(), rot in 0usize..200) {
            let k = rot % labels.len();
            let mut l2 = labels.clone();
            let mut p2 = preds.clone();
            l2.rotate_left(k);
            p2.rotate_left(k);
            prop_assert_eq!(
                ConfusionMatrix::from_predictions(&labels, &preds, 4).unwrap(),
                ConfusionMatrix::from_predictions(&l2, &p2, 4).unwrap()
            );
        }

        #[test]
        fn auc_complement_sums_to_one(
            data in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 20.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            if let Ok(a) = auc_roc(&scores, &labels) {
                let flipped: Vec<f64> = scores.iter().map(|s| 1.0 - s).collect();
                let b = auc_roc(&flipped, &labels).unwrap();
                prop_assert!((a + b - 1.0).abs() < 1e-12);
            }
        }
    }
}
