//! Classification metrics, AUROC, the simple matching coefficient and pooled
//! K-fold aggregation.

mod report;

pub use report::{
    aggregate_kfold, metrics_report, read_metrics_csv, write_metrics_csv, Aggregation, FoldPredictions,
    MetricsReport, METRICS_HEADER,
};

use crate::error::{Error, Result};

/// Counts at a threshold; a score at or above the threshold predicts 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// A ratio whose denominator may be zero; degenerate ratios read 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio {
    pub value: f64,
    pub degenerate: bool,
}

impl Ratio {
    fn of(num: u64, den: u64) -> Self {
        if den == 0 {
            Self {
                value: 0.0,
                degenerate: true,
            }
        } else {
            Self {
                value: num as f64 / den as f64,
                degenerate: false,
            }
        }
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::InvalidArgument(format!("{a} scores but {b} labels")));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("no examples to evaluate".into()));
    }
    Ok(())
}

pub fn confusion(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ConfusionCounts> {
    check_lengths(scores.len(), labels.len())?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn precision(c: &ConfusionCounts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> Ratio {
    Ratio::of(c.tp, c.tp + c.fn_)
}

/// Harmonic mean of precision and recall; 0 when both are 0.
pub fn f1(c: &ConfusionCounts) -> Ratio {
    let (p, r) = (precision(c), recall(c));
    let value = if p.value + r.value == 0.0 {
        0.0
    } else {
        2.0 * p.value * r.value / (p.value + r.value)
    };
    Ratio {
        value,
        degenerate: p.degenerate || r.degenerate,
    }
}

pub fn accuracy(c: &ConfusionCounts) -> Ratio {
    Ratio::of(c.tp + c.tn, c.total())
}

fn class_counts(labels: &[bool]) -> Result<(u64, u64)> {
    let pos = labels.iter().filter(|&&y| y).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "AUROC undefined: labels contain a single class".into(),
        ));
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUROC from average ranks: the probability that a random
/// positive outscores a random negative, ties counting one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::NonFinite(format!("score {i}")));
    }
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps tie averages integral
    let mut rank2_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled
        let avg2 = (i + 1 + j + 1) as u128;
        for &k in &order[i..=j] {
            if labels[k] {
                rank2_sum += avg2;
            }
        }
        i = j + 1;
    }
    let u2 = rank2_sum - (pos as u128) * (pos as u128 + 1);
    Ok(u2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Trapezoidal area under the ROC curve traced over descending thresholds.
pub fn auroc_trapezoid(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let (pos, neg) = class_counts(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut area2 = 0u128;
    let mut i = 0;
    while i < order.len() {
        let (tp0, fp0) = (tp, fp);
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        area2 += (fp - fp0) * (tp + tp0);
        i = j;
    }
    Ok(area2 as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Fraction of positions where the two vectors agree.
pub fn simple_matching_coefficient(a: &[bool], b: &[bool]) -> Result<f64> {
    check_lengths(a.len(), b.len())?;
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same as f64 / a.len() as f64)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("Spearman correlation of a constant series".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &yi) in labels.iter().enumerate() {
            for (j, &yj) in labels.iter().enumerate() {
                if yi && !yj {
                    den += 1.0;
                    num += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        num / den
    }

    #[test]
    fn confusion_cases() {
        let c = confusion(&[0.9, 0.1], &[true, false], 0.5).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_), (1, 1, 0, 0));
        let c = confusion(&[0.5; 3], &[true, false, false], 0.5).unwrap();
        assert_eq!((c.tp, c.fp), (1, 2));
        // hand tally: scores vs labels at 0.5
        let s = [0.8, 0.4, 0.6, 0.2, 0.5, 0.45];
        let y = [true, true, false, false, true, false];
        let c = confusion(&s, &y, 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (2, 1, 2, 1));
        assert!(confusion(&[0.1], &[true, false], 0.5).is_err());
    }

    #[test]
    fn ratio_fixture() {
        let c = ConfusionCounts { tp: 3, fp: 1, fn_: 2, tn: 4 };
        assert_eq!(precision(&c).value, 0.75);
        assert_eq!(recall(&c).value, 0.6);
        assert!((f1(&c).value - 2.0 * 0.75 * 0.6 / 1.35).abs() < 1e-15);
        assert_eq!(accuracy(&c).value, 0.7);
        let neg = ConfusionCounts { tn: 5, ..Default::default() };
        assert_eq!(accuracy(&neg).value, 1.0);
        assert!(precision(&neg).degenerate && recall(&neg).degenerate);
        assert_eq!(f1(&neg).value, 0.0);
    }

    #[test]
    fn auroc_basics() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.3; 5], &[true, false, true, false, false]).unwrap(), 0.5);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(Error::Degenerate(_))));
        let s = [0.3, 0.7, 0.7, 0.1, 0.9, 0.3, 0.5, 0.2];
        let y = [false, true, false, false, true, true, false, true];
        assert_eq!(auroc(&s, &y).unwrap(), pairs(&s, &y));
        assert_eq!(auroc_trapezoid(&s, &y).unwrap(), pairs(&s, &y));
    }

    #[test]
    fn smc_cases() {
        assert_eq!(simple_matching_coefficient(&[true, false], &[true, false]).unwrap(), 1.0);
        let v = simple_matching_coefficient(&[true, true, false], &[true, false, false]).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(simple_matching_coefficient(&[true, false], &[false, true]).unwrap(), 0.0);
        assert!(simple_matching_coefficient(&[true], &[]).is_err());
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
    }
}
