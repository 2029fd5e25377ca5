use super::RasterPatch;
use crate::error::{Error, Result};

/// Per-band mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormalizationStats {
    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    /// Fits over every pixel of every patch (all must share a band count).
    pub fn fit<'a>(patches: impl IntoIterator<Item = &'a RasterPatch>) -> Result<Self> {
        let mut bands = None;
        let mut count = 0usize;
        let mut sum = Vec::new();
        let mut sumsq = Vec::new();
        // Two accumulators in f64 with a per-band shift keep the variance
        // stable for large offsets.
        let mut shift = Vec::new();
        for p in patches {
            let b = *bands.get_or_insert(p.bands);
            if b != p.bands {
                return Err(Error::Data(format!(
                    "normalization over mixed band counts {b} and {}",
                    p.bands
                )));
            }
            if sum.is_empty() {
                sum = vec![0.0; b];
                sumsq = vec![0.0; b];
                shift = (0..b).map(|i| p.band(i)[0] as f64).collect();
            }
            for (i, s) in shift.iter().enumerate() {
                for &v in p.band(i) {
                    let d = v as f64 - s;
                    sum[i] += d;
                    sumsq[i] += d * d;
                }
            }
            count += p.height * p.width;
        }
        if count < 2 {
            return Err(Error::Data("normalization needs at least two pixels per band".into()));
        }
        let n = count as f64;
        let mut mean = Vec::with_capacity(sum.len());
        let mut std = Vec::with_capacity(sum.len());
        for i in 0..sum.len() {
            let m = sum[i] / n;
            let var = (sumsq[i] / n - m * m).max(0.0);
            let sd = var.sqrt();
            if !(sd > 1e-12 * (1.0 + (m + shift[i]).abs())) {
                return Err(Error::Data(format!("band {i} has zero variance")));
            }
            mean.push(m + shift[i]);
            std.push(sd);
        }
        Ok(Self { mean, std })
    }

    fn check(&self, p: &RasterPatch) -> Result<()> {
        if p.bands != self.bands() {
            return Err(Error::Data(format!(
                "normalization has {} bands, patch has {}",
                self.bands(),
                p.bands
            )));
        }
        Ok(())
    }

    pub fn apply(&self, patch: &RasterPatch) -> Result<RasterPatch> {
        self.check(patch)?;
        let mut out = patch.clone();
        let n = patch.height * patch.width;
        for (b, plane) in out.pixels.chunks_mut(n).enumerate() {
            let (m, s) = (self.mean[b], self.std[b]);
            plane.iter_mut().for_each(|v| *v = ((*v as f64 - m) / s) as f32);
        }
        Ok(out)
    }

    pub fn invert(&self, patch: &RasterPatch) -> Result<RasterPatch> {
        self.check(patch)?;
        let mut out = patch.clone();
        let n = patch.height * patch.width;
        for (b, plane) in out.pixels.chunks_mut(n).enumerate() {
            let (m, s) = (self.mean[b], self.std[b]);
            plane.iter_mut().for_each(|v| *v = (*v as f64 * s + m) as f32);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Source;
    use crate::rng::RngState;

    fn patch(seed: u64, offset: f32) -> RasterPatch {
        let mut rng = RngState::new(seed);
        let px = (0..2 * 8 * 8).map(|_| rng.normal() as f32 * 3.0 + offset).collect();
        RasterPatch::new(Source::Synthetic, 2, 8, 8, px).unwrap()
    }

    fn moments(v: &[f32]) -> (f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().map(|&x| x as f64).sum::<f64>() / n;
        let var = v.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n;
        (m, var.sqrt())
    }

    #[test]
    fn standardizes_training_set() {
        let ps: Vec<_> = (0..4).map(|s| patch(s, 1000.0)).collect();
        let stats = NormalizationStats::fit(&ps).unwrap();
        let mut all = vec![Vec::new(), Vec::new()];
        for p in &ps {
            let q = stats.apply(p).unwrap();
            for (b, acc) in all.iter_mut().enumerate() {
                acc.extend_from_slice(q.band(b));
            }
        }
        for band in &all {
            let (m, s) = moments(band);
            assert!(m.abs() < 1e-6, "{m}");
            assert!((s - 1.0).abs() < 1e-5, "{s}");
        }
    }

    #[test]
    fn uses_fitted_not_own_stats() {
        let train = patch(1, 0.0);
        let stats = NormalizationStats {
            mean: vec![10.0, -5.0],
            std: vec![2.0, 4.0],
        };
        let mut held = train.clone();
        held.pixels = vec![10.0; 64].into_iter().chain(vec![-1.0; 64]).collect();
        let q = stats.apply(&held).unwrap();
        assert!(q.band(0).iter().all(|&v| v == 0.0));
        assert!(q.band(1).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn invertible() {
        let p = patch(3, 50.0);
        let stats = NormalizationStats::fit([&p]).unwrap();
        let back = stats.invert(&stats.apply(&p).unwrap()).unwrap();
        for (a, b) in back.pixels.iter().zip(&p.pixels) {
            assert!((a - b).abs() <= 1e-5 * b.abs().max(1.0));
        }
    }

    #[test]
    fn constant_band_is_an_error() {
        let mut p = patch(2, 0.0);
        p.pixels[64..].iter_mut().for_each(|v| *v = 7.0);
        assert!(NormalizationStats::fit([&p]).is_err());
    }
}
