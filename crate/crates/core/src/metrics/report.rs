use std::collections::BTreeMap;

use super::{accuracy, auroc, confusion, f1, precision, recall};
use crate::error::{Error, Result};

pub const METRICS_HEADER: [&str; 7] = ["outcome", "balance", "accuracy", "f1", "precision", "recall", "auroc"];

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub outcome: String,
    pub balance: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the labels hold a single class.
    pub auroc: Option<f64>,
    pub n: usize,
    pub threshold: f64,
    /// Precision or recall had a zero denominator.
    pub degenerate: bool,
}

pub fn metrics_report(outcome: &str, scores: &[f64], labels: &[bool], threshold: f64) -> Result<MetricsReport> {
    let c = confusion(scores, labels, threshold)?;
    let auc = match auroc(scores, labels) {
        Ok(v) => Some(v),
        Err(Error::Degenerate(_)) => None,
        Err(e) => return Err(e),
    };
    let (p, r) = (precision(&c), recall(&c));
    Ok(MetricsReport {
        outcome: outcome.to_string(),
        balance: labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64,
        accuracy: accuracy(&c).value,
        precision: p.value,
        recall: r.value,
        f1: f1(&c).value,
        auroc: auc,
        n: labels.len(),
        threshold,
        degenerate: p.degenerate || r.degenerate,
    })
}

/// Test-set predictions of one fold: `(geocode, score, label)` rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FoldPredictions {
    pub fold: usize,
    pub rows: Vec<(String, f64, bool)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Aggregation {
    /// Metrics computed once over the union of all folds.
    #[default]
    Pooled,
    /// Unweighted mean of per-fold metrics (folds with a single class are
    /// left out of the AUROC mean).
    MeanPerFold,
}

/// Combines per-fold test predictions. A geocode may recur within a fold but
/// never in two folds.
pub fn aggregate_kfold(
    outcome: &str,
    folds: &[FoldPredictions],
    threshold: f64,
    mode: Aggregation,
) -> Result<MetricsReport> {
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for f in folds {
        for (g, _, _) in &f.rows {
            let o = *owner.entry(g).or_insert(f.fold);
            if o != f.fold {
                return Err(Error::Data(format!(
                    "geocode {g} is tested in folds {o} and {}",
                    f.fold
                )));
            }
        }
    }
    let split = |f: &FoldPredictions| -> (Vec<f64>, Vec<bool>) { f.rows.iter().map(|(_, s, y)| (*s, *y)).unzip() };
    match mode {
        Aggregation::Pooled => {
            let (mut s, mut y) = (Vec::new(), Vec::new());
            for f in folds {
                let (fs, fy) = split(f);
                s.extend(fs);
                y.extend(fy);
            }
            metrics_report(outcome, &s, &y, threshold)
        }
        Aggregation::MeanPerFold => {
            let reports: Vec<MetricsReport> = folds
                .iter()
                .filter(|f| !f.rows.is_empty())
                .map(|f| {
                    let (s, y) = split(f);
                    metrics_report(outcome, &s, &y, threshold)
                })
                .collect::<Result<_>>()?;
            if reports.is_empty() {
                return Err(Error::InvalidArgument("no fold predictions".into()));
            }
            let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len() as f64;
            let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auroc).collect();
            let n = reports.iter().map(|r| r.n).sum::<usize>();
            let positives: f64 = reports.iter().map(|r| r.balance * r.n as f64).sum();
            Ok(MetricsReport {
                outcome: outcome.to_string(),
                balance: positives / n as f64,
                accuracy: mean(|r| r.accuracy),
                precision: mean(|r| r.precision),
                recall: mean(|r| r.recall),
                f1: mean(|r| r.f1),
                auroc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
                n,
                threshold,
                degenerate: reports.iter().any(|r| r.degenerate),
            })
        }
    }
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per report; an undefined AUROC is written as `NA`.
pub fn write_metrics_csv<W: std::io::Write>(writer: W, reports: &[MetricsReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRICS_HEADER)?;
    for r in reports {
        w.write_record([
            r.outcome.clone(),
            fmt6(r.balance),
            fmt6(r.accuracy),
            fmt6(r.f1),
            fmt6(r.precision),
            fmt6(r.recall),
            r.auroc.map(fmt6).unwrap_or_else(|| "NA".into()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(outcome, auroc)` pairs from a metrics CSV.
pub fn read_metrics_csv<R: std::io::Read>(reader: R) -> Result<Vec<(String, Option<f64>)>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != METRICS_HEADER {
        return Err(Error::Data(format!("unexpected metrics header {header:?}")));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let auc = match &row[6] {
            "NA" => None,
            v => Some(v.parse().map_err(|_| Error::Data(format!("bad AUROC cell {v:?}")))?),
        };
        out.push((row[0].to_string(), auc));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fold(fold: usize, rows: &[(&str, f64, bool)]) -> FoldPredictions {
        FoldPredictions {
            fold,
            rows: rows.iter().map(|&(g, s, y)| (g.to_string(), s, y)).collect(),
        }
    }

    #[test]
    fn pooled_perfect() {
        let folds: Vec<_> = (0..5)
            .map(|f| {
                let a = format!("P{f}");
                let b = format!("N{f}");
                fold(f, &[(&a, 0.9, true), (&b, 0.1, false)])
            })
            .collect();
        let r = aggregate_kfold("electricity", &folds, 0.5, Aggregation::Pooled).unwrap();
        assert_eq!(r.auroc, Some(1.0));
        assert_eq!(r.accuracy, 1.0);
    }

    #[test]
    fn one_inverted_fold() {
        // five balanced folds of 4; fold 0 predicts every label backwards
        let folds: Vec<_> = (0..5)
            .map(|f| {
                let (hi, lo) = if f == 0 { (0.1, 0.9) } else { (0.9, 0.1) };
                let ids: Vec<String> = (0..4).map(|i| format!("G{f}{i}")).collect();
                fold(
                    f,
                    &[(&ids[0], hi, true), (&ids[1], hi, true), (&ids[2], lo, false), (&ids[3], lo, false)],
                )
            })
            .collect();
        let r = aggregate_kfold("x", &folds, 0.5, Aggregation::Pooled).unwrap();
        assert!((r.accuracy - 0.8).abs() < 1e-15);
        let m = aggregate_kfold("x", &folds, 0.5, Aggregation::MeanPerFold).unwrap();
        assert!((m.auroc.unwrap() - 0.8).abs() < 1e-15);
    }

    #[test]
    fn duplicate_geocode_across_folds() {
        let folds = [fold(0, &[("G1", 0.5, true)]), fold(1, &[("G1", 0.5, false)])];
        assert!(aggregate_kfold("x", &folds, 0.5, Aggregation::Pooled).is_err());
        let same_fold = [fold(0, &[("G1", 0.5, true), ("G1", 0.2, false)])];
        assert!(aggregate_kfold("x", &same_fold, 0.5, Aggregation::Pooled).is_ok());
    }

    #[test]
    fn csv_columns_and_na() {
        let a = metrics_report("electricity", &[0.9, 0.2, 0.6], &[true, false, false], 0.5).unwrap();
        let b = metrics_report("bank", &[0.9, 0.2], &[true, true], 0.5).unwrap();
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &[a, b]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "outcome,balance,accuracy,f1,precision,recall,auroc");
        assert_eq!(lines[1], "electricity,0.333333,0.666667,0.666667,0.500000,1.000000,1.000000");
        assert!(lines[2].ends_with(",NA"));
        let back = read_metrics_csv(buf.as_slice()).unwrap();
        assert_eq!(back[0], ("electricity".to_string(), Some(1.0)));
        assert_eq!(back[1].1, None);
    }
}
