use super::{multilabel_bce, AdamState};
use crate::data::{Augment, Dataset};
use crate::error::{Error, Result, ResultExt};
use crate::nn::Model;
use crate::rng::RngState;
use crate::tensor::{Graph, Mode};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub augment: Augment,
}

impl TrainConfig {
    pub fn new(crop: usize) -> Self {
        Self {
            batch_size: 16,
            epochs: 10,
            augment: Augment::training(crop),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// Example-weighted mean of the batch losses.
    pub mean_loss: f64,
    pub examples: usize,
    pub batches: usize,
    /// Batches with no observed label, which are not stepped.
    pub skipped: usize,
}

/// Batch index lists for one shuffled pass. A trailing single example joins
/// the previous batch, since batch norm needs two values per channel.
fn batches(n: usize, size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut out: Vec<Vec<usize>> = order.chunks(size).map(<[usize]>::to_vec).collect();
    if out.len() > 1 && out.last().is_some_and(|b| b.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().extend(last);
    }
    out
}

/// One pass over `data`: shuffle, augment, forward in train mode, masked
/// cross-entropy, backward, Adam step. The learning-rate decay is applied
/// once at the end.
pub fn train_epoch(
    model: &mut Model<f32>,
    data: &Dataset,
    config: &TrainConfig,
    state: &mut AdamState<f32>,
    rng: &mut RngState,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut total = 0.0;
    let mut seen = 0;
    let mut stats = EpochStats {
        mean_loss: 0.0,
        examples: 0,
        batches: 0,
        skipped: 0,
    };
    for idx in batches(data.len(), config.batch_size, rng) {
        let ids = || {
            let recs: Vec<String> = idx.iter().map(|&i| data.examples[i].record.to_string()).collect();
            format!("batch of records [{}]", recs.join(", "))
        };
        let (x, labels) = data.batch(&idx, &config.augment, Some(rng)).context(ids)?;
        stats.examples += idx.len();
        stats.batches += 1;
        if labels.observed() == 0 {
            stats.skipped += 1;
            continue;
        }
        let mut g = Graph::new();
        let xv = g.constant(x);
        let logits = model.forward(&mut g, xv, Mode::Train).context(ids)?;
        let loss = multilabel_bce(&mut g, logits, &labels)?;
        g.check_finite(loss, "training loss").context(ids)?;
        let grads = g.backward(loss)?;
        state.step(model, &g, &grads)?;
        total += g.value(loss).item()? as f64 * idx.len() as f64;
        seen += idx.len();
    }
    state.end_epoch();
    stats.mean_loss = if seen > 0 { total / seen as f64 } else { f64::NAN };
    Ok(stats)
}
