use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::metrics::auroc;
use crate::rng::RngState;
use crate::tensor::sigmoid;

pub const DEFAULT_L2_GRID: [f64; 5] = [1e-4, 1e-3, 1e-2, 0.1, 1.0];
const MAX_NEWTON_STEPS: usize = 100;

/// Column means and population standard deviations; constant columns keep
/// a unit scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f64>]) -> Result<Self> {
        let d = width(x)?;
        let n = x.len() as f64;
        let mut mean = vec![0.0; d];
        for row in x {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for row in x {
            for ((s, v), m) in std.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        for s in std.iter_mut() {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        Ok(Self { mean, std })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }
}

fn width(x: &[Vec<f64>]) -> Result<usize> {
    let d = x.first().map(Vec::len).ok_or_else(|| Error::InvalidArgument("no feature rows".into()))?;
    if let Some(i) = x.iter().position(|r| r.len() != d) {
        return Err(Error::Shape(format!("feature row {i} has {} values, expected {d}", x[i].len())));
    }
    if let Some(i) = x.iter().position(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite(format!("feature row {i}")));
    }
    Ok(d)
}

fn check_classes(y: &[bool]) -> Result<()> {
    let pos = y.iter().filter(|&&v| v).count();
    if pos < 2 || y.len() - pos < 2 {
        return Err(Error::Degenerate(format!(
            "logistic regression needs two examples per class, got {pos} positive of {}",
            y.len()
        )));
    }
    Ok(())
}

/// `p = sigmoid(w . standardize(x) + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2: f64,
    pub standardizer: Standardizer,
}

impl LogRegModel {
    pub fn decision(&self, row: &[f64]) -> f64 {
        let z = self.standardizer.apply(row);
        self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        sigmoid(self.decision(row))
    }

    pub fn predict_all(&self, x: &[Vec<f64>]) -> Vec<f64> {
        x.iter().map(|r| self.predict(r)).collect()
    }
}

/// Mean cross-entropy plus `l2/2 * |w|^2` (bias unpenalized) on already
/// standardized rows; returns `(weights, bias)`.
pub fn newton_logistic(z: &[Vec<f64>], y: &[bool], l2: f64) -> Result<(Vec<f64>, f64)> {
    let d = width(z)?;
    let n = z.len();
    let p = d + 1;
    let mut a = DMatrix::<f64>::zeros(n, p);
    for (i, row) in z.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            a[(i, j)] = v;
        }
        a[(i, d)] = 1.0;
    }
    let target = DVector::from_iterator(n, y.iter().map(|&v| v as u8 as f64));
    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = &a * beta;
        let ce: f64 = eta
            .iter()
            .zip(target.iter())
            .map(|(&e, &t)| crate::tensor::softplus(e) - t * e)
            .sum::<f64>()
            / n as f64;
        ce + 0.5 * l2 * beta.rows(0, d).norm_squared()
    };
    let mut beta = DVector::<f64>::zeros(p);
    let mut f = objective(&beta);
    for _ in 0..MAX_NEWTON_STEPS {
        let eta = &a * &beta;
        let prob = eta.map(sigmoid);
        let mut grad = a.transpose() * (&prob - &target) / n as f64;
        for j in 0..d {
            grad[j] += l2 * beta[j];
        }
        let mut wa = a.clone();
        for (i, q) in prob.iter().enumerate() {
            wa.row_mut(i).scale_mut(q * (1.0 - q) / n as f64);
        }
        let mut h = a.transpose() * wa;
        for j in 0..p {
            // a tiny ridge keeps the bias and separable directions solvable
            h[(j, j)] += if j < d { l2 } else { 0.0 } + 1e-10;
        }
        let Some(chol) = h.cholesky() else {
            return Err(Error::Degenerate("logistic Hessian is not positive definite".into()));
        };
        let step = chol.solve(&grad);
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..30 {
            let cand = &beta - &step * t;
            let fc = objective(&cand);
            if fc <= f {
                let gain = f - fc;
                beta = cand;
                f = fc;
                improved = gain > 1e-15 * (1.0 + f.abs());
                break;
            }
            t *= 0.5;
        }
        if !improved || step.norm() * t < 1e-12 {
            break;
        }
    }
    Ok((beta.rows(0, d).iter().copied().collect(), beta[d]))
}

pub fn fit_logreg_fixed(x: &[Vec<f64>], y: &[bool], l2: f64) -> Result<LogRegModel> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} labels", x.len(), y.len())));
    }
    check_classes(y)?;
    let standardizer = Standardizer::fit(x)?;
    let z: Vec<Vec<f64>> = x.iter().map(|r| standardizer.apply(r)).collect();
    let (weights, bias) = newton_logistic(&z, y, l2)?;
    Ok(LogRegModel {
        weights,
        bias,
        l2,
        standardizer,
    })
}

/// Group-aware inner folds: every group lands in exactly one fold.
pub fn group_folds(groups: &[String], k: usize, rng: &mut RngState) -> Vec<usize> {
    let mut uniq: Vec<&str> = groups.iter().map(String::as_str).collect::<BTreeSet<_>>().into_iter().collect();
    rng.shuffle(&mut uniq);
    let fold_of: std::collections::BTreeMap<&str, usize> =
        uniq.iter().enumerate().map(|(i, g)| (*g, i % k)).collect();
    groups.iter().map(|g| fold_of[g.as_str()]).collect()
}

/// Pooled inner-fold AUROC of an `l2` setting (`None` if no fold could fit).
pub fn cv_auroc(x: &[Vec<f64>], y: &[bool], folds: &[usize], k: usize, l2: f64) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for f in 0..k {
        let (tr, te): (Vec<usize>, Vec<usize>) = (0..x.len()).partition(|&i| folds[i] != f);
        if te.is_empty() {
            continue;
        }
        let xt: Vec<Vec<f64>> = tr.iter().map(|&i| x[i].clone()).collect();
        let yt: Vec<bool> = tr.iter().map(|&i| y[i]).collect();
        let m = match fit_logreg_fixed(&xt, &yt, l2) {
            Ok(m) => m,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        for &i in &te {
            scores.push(m.predict(&x[i]));
            labels.push(y[i]);
        }
    }
    match auroc(&scores, &labels) {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) | Err(Error::InvalidArgument(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Chooses `l2` from `grid` by inner-fold AUROC (ties keep the larger
/// penalty), then refits on all rows.
pub fn logreg_fit(
    x: &[Vec<f64>],
    y: &[bool],
    groups: &[String],
    grid: &[f64],
    k: usize,
    seed: u64,
) -> Result<(LogRegModel, Option<f64>)> {
    check_classes(y)?;
    if groups.len() != x.len() || grid.is_empty() || k < 2 {
        return Err(Error::InvalidArgument("logreg_fit needs one group per row, a grid and k >= 2".into()));
    }
    let folds = group_folds(groups, k, &mut RngState::new(seed).derive(0x10_9e9));
    let mut best: Option<(f64, f64)> = None;
    let mut sorted = grid.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    for &l2 in &sorted {
        if let Some(a) = cv_auroc(x, y, &folds, k, l2)? {
            if best.is_none_or(|(b, _)| a > b) {
                best = Some((a, l2));
            }
        }
    }
    let l2 = best.map(|b| b.1).unwrap_or(sorted[0]);
    Ok((fit_logreg_fixed(x, y, l2)?, best.map(|b| b.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Plain gradient descent on the same objective, as an independent check.
    fn gd_oracle(z: &[Vec<f64>], y: &[bool], l2: f64) -> (Vec<f64>, f64) {
        let d = z[0].len();
        let n = z.len() as f64;
        let (mut w, mut b) = (vec![0.0; d], 0.0);
        for _ in 0..200_000 {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (row, &t) in z.iter().zip(y) {
                let e = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let r = 1.0 / (1.0 + (-e).exp()) - t as u8 as f64;
                for j in 0..d {
                    gw[j] += r * row[j] / n;
                }
                gb += r / n;
            }
            for j in 0..d {
                w[j] -= 0.5 * (gw[j] + l2 * w[j]);
            }
            b -= 0.5 * gb;
        }
        (w, b)
    }

    fn fixture(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut rng = RngState::new(seed);
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n {
            let a = rng.normal();
            let b = rng.normal() * 3.0 + 1.0;
            x.push(vec![a, b]);
            y.push(rng.bernoulli(sigmoid(1.5 * a - 0.4 * b + 0.2)));
        }
        (x, y)
    }

    #[test]
    fn newton_matches_gradient_descent() {
        let (x, y) = fixture(80, 2);
        let m = fit_logreg_fixed(&x, &y, 0.01).unwrap();
        let z: Vec<_> = x.iter().map(|r| m.standardizer.apply(r)).collect();
        let (w, b) = gd_oracle(&z, &y, 0.01);
        for (a, o) in m.weights.iter().zip(&w) {
            assert!((a - o).abs() < 1e-4, "{a} vs {o}");
        }
        assert!((m.bias - b).abs() < 1e-4);
    }

    #[test]
    fn separable_gets_perfect_auroc() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let m = fit_logreg_fixed(&x, &y, 0.0).unwrap();
        assert_eq!(auroc(&m.predict_all(&x), &y).unwrap(), 1.0);
    }

    #[test]
    fn affine_invariance_without_penalty() {
        let (x, y) = fixture(60, 5);
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| vec![3.0 * r[0] - 7.0, 0.5 * r[1] + 2.0]).collect();
        let a = fit_logreg_fixed(&x, &y, 0.0).unwrap();
        let b = fit_logreg_fixed(&scaled, &y, 0.0).unwrap();
        for (r, s) in x.iter().zip(&scaled) {
            assert!((a.decision(r) - b.decision(s)).abs() < 1e-8);
        }
    }

    #[test]
    fn single_class_is_an_error() {
        let x = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(matches!(fit_logreg_fixed(&x, &[true; 3], 0.1), Err(Error::Degenerate(_))));
    }

    #[test]
    fn grid_selection_is_deterministic() {
        let (x, y) = fixture(120, 8);
        let groups: Vec<String> = (0..120).map(|i| format!("G{}", i / 2)).collect();
        let a = logreg_fit(&x, &y, &groups, &DEFAULT_L2_GRID, 5, 3).unwrap();
        let b = logreg_fit(&x, &y, &groups, &DEFAULT_L2_GRID, 5, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.1.unwrap() > 0.7);
    }

    #[test]
    fn permuted_labels_are_null() {
        let mut total = 0.0;
        let mut inside = 0;
        for t in 0..100 {
            let (x, mut y) = fixture(600, 1000 + t);
            RngState::new(t).shuffle(&mut y);
            let groups: Vec<String> = (0..600).map(|i| i.to_string()).collect();
            let folds = group_folds(&groups, 5, &mut RngState::new(t));
            let a = cv_auroc(&x, &y, &folds, 5, 0.01).unwrap().unwrap();
            total += a;
            inside += (0.4..=0.6).contains(&a) as usize;
        }
        let mean = total / 100.0;
        assert!((0.45..=0.55).contains(&mean), "mean {mean}, {inside} inside");
        assert!(inside >= 95, "{inside} of 100 trials inside [0.4, 0.6]");
    }

    #[test]
    fn group_folds_keep_groups_whole() {
        let groups: Vec<String> = (0..30).map(|i| format!("G{}", i % 7)).collect();
        let f = group_folds(&groups, 3, &mut RngState::new(1));
        for i in 0..30 {
            for j in 0..30 {
                if groups[i] == groups[j] {
                    assert_eq!(f[i], f[j]);
                }
            }
        }
    }
}
