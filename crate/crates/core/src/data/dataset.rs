use std::collections::BTreeMap;

use super::{center_crop, random_crop, random_hflip, NormalizationStats, RasterPatch, SurveyRecord};
use crate::error::{Error, Result, ResultExt};
use crate::optim::LossBatch;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Training-time crop and flip settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Augment {
    /// Side of the square network input.
    pub crop: usize,
    /// Uniform window placement instead of the center window.
    pub random_crop: bool,
    pub hflip_probability: f64,
}

impl Augment {
    pub fn center(crop: usize) -> Self {
        Self {
            crop,
            random_crop: false,
            hflip_probability: 0.0,
        }
    }

    pub fn training(crop: usize) -> Self {
        Self {
            crop,
            random_crop: false,
            hflip_probability: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Index into the survey record list.
    pub record: usize,
    pub geocode: String,
    pub patch: RasterPatch,
    /// One entry per selected outcome.
    pub labels: Vec<Option<bool>>,
}

/// Survey records joined with their (normalized) imagery.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Outcome indices, in head order.
    pub outcomes: Vec<usize>,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn assemble(
        records: &[SurveyRecord],
        indices: &[usize],
        patches: &BTreeMap<String, RasterPatch>,
        outcomes: &[usize],
        stats: Option<&NormalizationStats>,
    ) -> Result<Self> {
        let mut examples = Vec::with_capacity(indices.len());
        for &i in indices {
            let r = &records[i];
            let raw = patches
                .get(&r.geocode)
                .ok_or_else(|| Error::Data(format!("no imagery for geocode {} (record {i})", r.geocode)))?;
            let patch = match stats {
                Some(s) => s.apply(raw).context(|| format!("record {i} ({})", r.geocode))?,
                None => raw.clone(),
            };
            examples.push(Example {
                record: i,
                geocode: r.geocode.clone(),
                patch,
                labels: outcomes.iter().map(|&o| r.outcomes[o]).collect(),
            });
        }
        Ok(Self {
            outcomes: outcomes.to_vec(),
            examples,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn bands(&self) -> Option<usize> {
        self.examples.first().map(|e| e.patch.bands)
    }

    /// Stacks `idx` into an `[N, C, S, S]` input and its loss labels. With an
    /// rng the augmentation draws (crop, then flip) happen per example in
    /// batch order; without one the center window is used unflipped.
    pub fn batch(
        &self,
        idx: &[usize],
        augment: &Augment,
        mut rng: Option<&mut RngState>,
    ) -> Result<(Tensor<f32>, LossBatch<f32>)> {
        let Some(&first) = idx.first() else {
            return Err(Error::InvalidArgument("empty batch".into()));
        };
        let c = self.examples[first].patch.bands;
        let s = augment.crop;
        let k = self.outcomes.len();
        let mut pixels = Vec::with_capacity(idx.len() * c * s * s);
        let mut labels = Vec::with_capacity(idx.len() * k);
        for &i in idx {
            let e = &self.examples[i];
            let ident = || format!("record {} ({})", e.record, e.geocode);
            if e.patch.bands != c {
                return Err(Error::Data(format!(
                    "{} has {} bands, batch has {c}",
                    ident(),
                    e.patch.bands
                )));
            }
            let p = match rng.as_deref_mut() {
                Some(r) => {
                    let cropped = if augment.random_crop {
                        random_crop(&e.patch, s, r)
                    } else {
                        center_crop(&e.patch, s)
                    }
                    .context(ident)?;
                    random_hflip(&cropped, r, augment.hflip_probability)
                }
                None => center_crop(&e.patch, s).context(ident)?,
            };
            pixels.extend_from_slice(&p.pixels);
            labels.extend_from_slice(&e.labels);
        }
        let n = idx.len();
        Ok((
            Tensor::new(vec![n, c, s, s], pixels)?,
            LossBatch::from_options(n, k, &labels)?,
        ))
    }
}
