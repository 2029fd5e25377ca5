use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::Model;
use crate::tensor::{Element, Gradients, Graph};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2: `weight_decay * theta` is added to the gradient.
    pub weight_decay: f64,
    /// Multiplies the learning rate at the end of every epoch.
    pub lr_decay_per_epoch: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 1e-3,
            lr_decay_per_epoch: 1.0,
        }
    }
}

impl AdamConfig {
    /// A zero learning rate is accepted and makes every step a no-op.
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0
            && self.lr_decay_per_epoch > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid Adam config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// Per-parameter moments, the shared step counter and the current
/// (possibly decayed) learning rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Element = f32> {
    pub config: AdamConfig,
    pub t: u64,
    pub lr: f64,
    moments: HashMap<String, Moments<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            t: 0,
            lr: config.lr,
            moments: HashMap::new(),
        })
    }

    pub fn moments(&self, path: &str) -> Option<&Moments<T>> {
        self.moments.get(path)
    }

    /// One update over named parameters. Each entry is
    /// `(path, parameter values, gradient)`.
    pub fn step_raw<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut [T], &'a [T])>,
    ) -> Result<()> {
        let c = self.config;
        let mut staged = Vec::new();
        for (path, theta, grad) in params {
            if theta.len() != grad.len() {
                return Err(Error::Shape(format!(
                    "gradient for `{path}` has {} values, parameter has {}",
                    grad.len(),
                    theta.len()
                )));
            }
            if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{path}` (index {i})")));
            }
            staged.push((path, theta, grad));
        }
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        for (path, theta, grad) in staged {
            let mo = self.moments.entry(path.to_string()).or_insert_with(|| Moments {
                m: vec![T::zero(); theta.len()],
                v: vec![T::zero(); theta.len()],
            });
            for i in 0..theta.len() {
                let th = theta[i].as_f64();
                let g = grad[i].as_f64() + c.weight_decay * th;
                let m = c.beta1 * mo.m[i].as_f64() + (1.0 - c.beta1) * g;
                let v = c.beta2 * mo.v[i].as_f64() + (1.0 - c.beta2) * g * g;
                mo.m[i] = T::from_f64(m);
                mo.v[i] = T::from_f64(v);
                let update = self.lr * (m / bc1) / ((v / bc2).sqrt() + c.epsilon);
                theta[i] = T::from_f64(th - update);
            }
        }
        Ok(())
    }

    /// Updates every trainable model parameter bound in `graph`. Bound
    /// parameters the loss does not reach receive a zero gradient.
    pub fn step(&mut self, model: &mut Model<T>, graph: &Graph<T>, grads: &Gradients<T>) -> Result<()> {
        let bound: HashMap<&str, _> = graph.params().iter().map(|(p, v)| (p.as_str(), *v)).collect();
        let mut zero_grads: HashMap<String, Vec<T>> = HashMap::new();
        for (path, p) in model.params() {
            if p.trainable && bound.contains_key(path.as_str()) {
                let v = bound[path.as_str()];
                if grads.get(v).is_none() {
                    zero_grads.insert(path.clone(), vec![T::zero(); p.tensor.numel()]);
                }
            }
        }
        let entries = model.params_mut().iter_mut().filter_map(|(path, p)| {
            let v = *bound.get(path.as_str())?;
            if !p.trainable {
                return None;
            }
            let g = match grads.get(v) {
                Some(g) => g,
                None => zero_grads[path].as_slice(),
            };
            Some((path.as_str(), p.tensor.data_mut(), g))
        });
        self.step_raw(entries)
    }

    pub fn end_epoch(&mut self) {
        self.lr *= self.config.lr_decay_per_epoch;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(lr: f64, wd: f64) -> AdamState<f64> {
        AdamState::new(AdamConfig {
            lr,
            weight_decay: wd,
            ..AdamConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn first_three_steps_constant_gradient() {
        let mut s = state(0.1, 0.0);
        let mut theta = [0.0f64];
        // m_t/(1-b1^t) = 1 and v_t/(1-b2^t) = 1 for a constant unit gradient,
        // so each step is lr / (1 + eps)
        let step = 0.1 / (1.0 + 1e-8);
        for t in 1..=3 {
            s.step_raw([("w", &mut theta[..], &[1.0][..])]).unwrap();
            let expect = -step * t as f64;
            assert!((theta[0] - expect).abs() < 1e-15, "step {t}: {}", theta[0]);
        }
        assert_eq!(s.t, 3);
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut s = state(0.1, 0.0);
        let mut theta = [0.5f64, -2.0];
        s.step_raw([("w", &mut theta[..], &[0.0, 0.0][..])]).unwrap();
        assert_eq!(theta, [0.5, -2.0]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn decay_shrinks_toward_zero() {
        let mut s = state(0.01, 1e-3);
        let mut theta = [1.0f64];
        s.step_raw([("w", &mut theta[..], &[0.0][..])]).unwrap();
        assert!(theta[0] < 1.0 && theta[0] > 0.0);
    }

    #[test]
    fn nan_gradient_names_path() {
        let mut s = state(0.1, 0.0);
        let mut theta = [0.0f64];
        let err = s.step_raw([("layer1.0.conv1.weight", &mut theta[..], &[f64::NAN][..])]).unwrap_err();
        assert!(err.to_string().contains("layer1.0.conv1.weight"));
        assert_eq!(s.t, 0);
    }

    #[test]
    fn lr_decays_per_epoch() {
        let mut s = AdamState::<f32>::new(AdamConfig {
            lr_decay_per_epoch: 0.5,
            ..AdamConfig::default()
        })
        .unwrap();
        s.end_epoch();
        s.end_epoch();
        assert_eq!(s.lr, 0.25e-4);
    }

    #[test]
    fn rejects_bad_config() {
        for c in [
            AdamConfig { beta1: 1.0, ..AdamConfig::default() },
            AdamConfig { lr: -1.0, ..AdamConfig::default() },
            AdamConfig { weight_decay: -0.1, ..AdamConfig::default() },
        ] {
            assert!(AdamState::<f32>::new(c).is_err());
        }
    }
}
