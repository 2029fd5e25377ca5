use crate::rng::RngState;

/// Glorot/Xavier uniform initialization: `W ~ U[-b, b]` with
/// `b = sqrt(6 / (n_in + n_out))`.
///
/// For a convolution with `F` filters over `C` channels and a `kh x kw`
/// kernel, `n_in = C*kh*kw` and `n_out = F*kh*kw`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct XavierSpec {
    pub n_in: usize,
    pub n_out: usize,
}

impl XavierSpec {
    pub fn conv(filters: usize, channels: usize, kh: usize, kw: usize) -> Self {
        Self {
            n_in: channels * kh * kw,
            n_out: filters * kh * kw,
        }
    }

    pub fn linear(out_features: usize, in_features: usize) -> Self {
        Self {
            n_in: in_features,
            n_out: out_features,
        }
    }

    pub fn bound(&self) -> f64 {
        (6.0 / (self.n_in + self.n_out) as f64).sqrt()
    }

    pub fn sample(&self, rng: &mut RngState) -> f64 {
        let b = self.bound();
        rng.uniform_range(-b, b)
    }

    pub fn fill(&self, count: usize, rng: &mut RngState) -> Vec<f64> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_formula() {
        let x = XavierSpec::conv(64, 6, 7, 7);
        assert_eq!(x.n_in, 294);
        assert_eq!(x.n_out, 3136);
        assert!((x.bound() - (6.0f64 / 3430.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn samples_within_bound_and_centered() {
        let spec = XavierSpec::linear(10, 30);
        let b = spec.bound();
        let n = 100_000;
        let mut rng = RngState::new(3);
        let xs = spec.fill(n, &mut rng);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo >= -b && hi <= b);
        let mean = xs.iter().sum::<f64>() / n as f64;
        // uniform variance is b^2/3, so the mean's std is b / sqrt(3n)
        assert!(mean.abs() <= 3.0 * b / (3.0 * n as f64).sqrt(), "{mean}");
    }
}
