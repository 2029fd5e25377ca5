use crate::error::{Error, Result};
use crate::tensor::{Element, Graph, Tensor, Var};

/// Logits with binary labels and a mask marking observed entries.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBatch<T: Element = f32> {
    /// `[N, k]`
    pub labels: Tensor<T>,
    /// `[N, k]`, 1 where the label is observed and 0 where it is missing.
    pub mask: Tensor<T>,
}

impl<T: Element> LossBatch<T> {
    /// Builds from optional labels in row-major `[N, k]` order.
    pub fn from_options(n: usize, k: usize, labels: &[Option<bool>]) -> Result<Self> {
        if labels.len() != n * k {
            return Err(Error::Shape(format!(
                "{} labels given for a [{n}, {k}] batch",
                labels.len()
            )));
        }
        let y = labels
            .iter()
            .map(|l| if *l == Some(true) { T::one() } else { T::zero() })
            .collect();
        let m = labels
            .iter()
            .map(|l| if l.is_some() { T::one() } else { T::zero() })
            .collect();
        Ok(Self {
            labels: Tensor::new(vec![n, k], y)?,
            mask: Tensor::new(vec![n, k], m)?,
        })
    }

    pub fn observed(&self) -> usize {
        self.mask.data().iter().filter(|&&m| m != T::zero()).count()
    }
}

/// Mean binary cross-entropy over observed entries, in logit form:
/// `(1/M) * sum mask * (softplus(x) - y*x)`, which equals
/// `-(1/M) * sum [y ln p + (1-y) ln(1-p)]` with `p = sigmoid(x)`.
pub fn multilabel_bce<T: Element>(g: &mut Graph<T>, logits: Var, batch: &LossBatch<T>) -> Result<Var> {
    let shape = g.shape(logits).to_vec();
    for (name, t) in [("labels", &batch.labels), ("mask", &batch.mask)] {
        if t.shape() != shape.as_slice() {
            return Err(Error::Shape(format!(
                "loss {name} are {:?} but logits are {shape:?}",
                t.shape()
            )));
        }
    }
    let m = batch.observed();
    if m == 0 {
        return Err(Error::InvalidArgument("every loss entry is masked".into()));
    }
    let mask = g.constant(batch.mask.clone());
    let y_masked: Vec<T> = batch
        .labels
        .data()
        .iter()
        .zip(batch.mask.data())
        .map(|(&y, &mk)| y * mk)
        .collect();
    let ym = g.constant(Tensor::new(shape, y_masked)?);
    let sp = g.softplus(logits);
    let a = g.mul(mask, sp)?;
    let b = g.mul(ym, logits)?;
    let per = g.sub(a, b)?;
    let total = g.sum(per);
    Ok(g.scale(total, T::from_f64(1.0 / m as f64)))
}

/// Plain evaluation of the same loss without a graph.
pub fn bce_value(logits: &[f64], labels: &[f64], mask: &[f64]) -> Result<f64> {
    let m: f64 = mask.iter().sum();
    if m == 0.0 {
        return Err(Error::InvalidArgument("every loss entry is masked".into()));
    }
    let s: f64 = logits
        .iter()
        .zip(labels)
        .zip(mask)
        .map(|((&x, &y), &mk)| mk * (crate::tensor::softplus(x) - y * x))
        .sum();
    Ok(s / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngState;

    fn eval(logits: &[f64], n: usize, k: usize, labels: &[Option<bool>]) -> (f64, Vec<f64>) {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::new(vec![n, k], logits.to_vec()).unwrap(), true);
        let b = LossBatch::from_options(n, k, labels).unwrap();
        let l = multilabel_bce(&mut g, x, &b).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(l).item().unwrap(), grads.get(x).unwrap().to_vec())
    }

    #[test]
    fn confident_correct_is_near_zero() {
        let (l, _) = eval(&[20.0; 4], 2, 2, &[Some(true); 4]);
        assert!(l < 1e-8);
    }

    #[test]
    fn zero_logits_give_ln2() {
        let labels = [Some(true), Some(false), None, Some(true), Some(false), Some(false)];
        let (l, _) = eval(&[0.0; 6], 2, 3, &labels);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn matches_direct_formula_and_closed_form_gradient() {
        let mut rng = RngState::new(4);
        let x: Vec<f64> = (0..12).map(|_| rng.normal() * 3.0).collect();
        let labels: Vec<Option<bool>> = (0..12)
            .map(|i| if i % 5 == 3 { None } else { Some(rng.bernoulli(0.5)) })
            .collect();
        let (l, grad) = eval(&x, 3, 4, &labels);
        let m = labels.iter().filter(|l| l.is_some()).count() as f64;
        let mut direct = 0.0;
        for (i, lab) in labels.iter().enumerate() {
            let Some(y) = lab else {
                assert_eq!(grad[i], 0.0);
                continue;
            };
            let p = 1.0 / (1.0 + (-x[i]).exp());
            let y = *y as u8 as f64;
            direct -= y * p.ln() + (1.0 - y) * (1.0 - p).ln();
            let closed = (p - y) / m;
            assert!((grad[i] - closed).abs() <= 1e-6 * closed.abs().max(1e-12));
        }
        direct /= m;
        assert!((l - direct).abs() <= 1e-6 * direct);
    }

    #[test]
    fn masked_logit_has_no_influence() {
        let labels = [Some(true), None, Some(false), Some(true)];
        let (a, _) = eval(&[0.3, -1.0, 2.0, 0.1], 2, 2, &labels);
        let (b, _) = eval(&[0.3, 1e3, 2.0, 0.1], 2, 2, &labels);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn all_masked_is_an_error() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(Tensor::zeros(vec![1, 2]).unwrap(), true);
        let b = LossBatch::from_options(1, 2, &[None, None]).unwrap();
        assert!(multilabel_bce(&mut g, x, &b).is_err());
    }
}
