use std::collections::BTreeMap;

use indexmap::IndexMap;

use super::{is_head_param, Checkpoint, NetworkConfig, ParamKind, XavierSpec};
use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{Element, Graph, Mode, RunningStats, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T: Element = f32> {
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
    /// Cleared by [`Model::freeze_backbone`]; buffers are never trainable.
    pub trainable: bool,
}

/// A residual classifier: its configuration and every parameter and buffer,
/// keyed by torchvision-style path.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Element = f32> {
    config: NetworkConfig,
    params: IndexMap<String, Param<T>>,
    /// Extra string metadata carried into checkpoints (seed, slot assignments).
    pub metadata: BTreeMap<String, String>,
}

pub fn build_network<T: Element>(config: NetworkConfig, rng: &mut RngState) -> Result<Model<T>> {
    Model::build(config, rng)
}

impl<T: Element> Model<T> {
    pub fn build(config: NetworkConfig, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        let mut params = IndexMap::new();
        for spec in config.param_specs() {
            let n: usize = spec.shape.iter().product();
            let values: Vec<f64> = match spec.kind {
                ParamKind::ConvWeight => {
                    let s = &spec.shape;
                    XavierSpec::conv(s[0], s[1], s[2], s[3]).fill(n, rng)
                }
                ParamKind::LinearWeight => XavierSpec::linear(spec.shape[0], spec.shape[1]).fill(n, rng),
                ParamKind::LinearBias | ParamKind::BnBeta | ParamKind::BnRunningMean => vec![0.0; n],
                ParamKind::BnGamma | ParamKind::BnRunningVar => vec![1.0; n],
            };
            params.insert(
                spec.path,
                Param {
                    tensor: Tensor::from_f64_slice(spec.shape, &values)?,
                    kind: spec.kind,
                    trainable: !spec.kind.is_buffer(),
                },
            );
        }
        Ok(Self {
            config,
            params,
            metadata: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim()
    }

    pub fn params(&self) -> &IndexMap<String, Param<T>> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut IndexMap<String, Param<T>> {
        &mut self.params
    }

    pub fn tensor(&self, path: &str) -> Result<&Tensor<T>> {
        self.params
            .get(path)
            .map(|p| &p.tensor)
            .ok_or_else(|| Error::MissingEntry(path.to_string()))
    }

    /// Trainable scalar count (buffers excluded).
    pub fn parameter_count(&self) -> usize {
        self.params
            .values()
            .filter(|p| !p.kind.is_buffer())
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// Logits `[N, k]` for an input `[N, C, S, S]`. Train mode uses batch
    /// statistics and updates the running statistics in place.
    pub fn forward(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let mut updates = Vec::new();
        let logits = self.run(g, x, mode, true, &mut updates)?;
        self.apply_updates(updates);
        Ok(logits)
    }

    /// Eval-mode logits without touching the model.
    pub fn forward_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.run(g, x, Mode::Eval, true, &mut Vec::new())
    }

    /// Pooled pre-head activations `[N, feature_dim]`.
    pub fn features(&mut self, g: &mut Graph<T>, x: Var, mode: Mode) -> Result<Var> {
        let mut updates = Vec::new();
        let f = self.run(g, x, mode, false, &mut updates)?;
        self.apply_updates(updates);
        Ok(f)
    }

    pub fn features_eval(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        self.run(g, x, Mode::Eval, false, &mut Vec::new())
    }

    /// Convenience: eval-mode logits for a batch, as a `[N, k]` tensor.
    pub fn predict_logits(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let y = self.forward_eval(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Convenience: eval-mode features for a batch, as a `[N, D]` tensor.
    pub fn predict_features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let x = g.constant(batch.clone());
        let y = self.features_eval(&mut g, x)?;
        Ok(g.value(y).clone())
    }

    /// Excludes every non-head parameter from optimization and replaces the
    /// head with a freshly initialized linear layer.
    pub fn freeze_backbone(&mut self, rng: &mut RngState) -> Result<()> {
        for (path, p) in self.params.iter_mut() {
            p.trainable = is_head_param(path) && !p.kind.is_buffer();
        }
        self.reset_head(rng)
    }

    pub fn unfreeze(&mut self) {
        for p in self.params.values_mut() {
            p.trainable = !p.kind.is_buffer();
        }
    }

    pub fn reset_head(&mut self, rng: &mut RngState) -> Result<()> {
        let (k, d) = (self.config.num_outputs, self.feature_dim());
        let w = XavierSpec::linear(k, d).fill(k * d, rng);
        self.params["fc.weight"].tensor = Tensor::from_f64_slice(vec![k, d], &w)?;
        self.params["fc.bias"].tensor = Tensor::zeros(vec![k])?;
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ckpt = Checkpoint::new();
        for (path, p) in &self.params {
            ckpt.entries.insert(path.clone(), p.tensor.cast());
        }
        ckpt.metadata = self.metadata.clone();
        let c = &self.config;
        ckpt.metadata.insert("variant".into(), c.variant.to_string());
        ckpt.metadata.insert("input_channels".into(), c.input_channels.to_string());
        ckpt.metadata.insert("num_outputs".into(), c.num_outputs.to_string());
        ckpt.metadata.insert("input_size".into(), c.input_size.to_string());
        ckpt
    }

    /// Rebuilds a model from a checkpoint whose layout matches its metadata.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let config = ckpt.validate()?;
        let mut params = IndexMap::new();
        for spec in config.param_specs() {
            params.insert(
                spec.path.clone(),
                Param {
                    tensor: ckpt.get(&spec.path)?.cast(),
                    kind: spec.kind,
                    trainable: !spec.kind.is_buffer(),
                },
            );
        }
        let mut metadata = ckpt.metadata.clone();
        for key in ["variant", "input_channels", "num_outputs", "input_size"] {
            metadata.remove(key);
        }
        Ok(Self {
            config,
            params,
            metadata,
        })
    }

    /// A fresh model for `config` whose backbone is copied from a pretrained
    /// checkpoint; the head keeps its fresh initialization.
    pub fn from_pretrained(config: NetworkConfig, ckpt: &Checkpoint, rng: &mut RngState) -> Result<Self> {
        let mut model = Self::build(config, rng)?;
        for (path, p) in model.params.iter_mut() {
            if is_head_param(path) {
                continue;
            }
            let src = ckpt.get(path)?;
            if src.shape() != p.tensor.shape() {
                return Err(Error::CheckpointShape {
                    path: path.clone(),
                    expected: p.tensor.shape().to_vec(),
                    found: src.shape().to_vec(),
                });
            }
            p.tensor = src.cast();
        }
        Ok(model)
    }

    fn bind(&self, g: &mut Graph<T>, path: &str) -> Var {
        let p = &self.params[path];
        if p.trainable {
            g.param(path, &p.tensor)
        } else {
            g.constant(p.tensor.clone())
        }
    }

    fn apply_updates(&mut self, updates: Vec<(String, RunningStats<T>)>) {
        for (prefix, stats) in updates {
            self.params[&format!("{prefix}.running_mean")]
                .tensor
                .data_mut()
                .copy_from_slice(&stats.mean);
            self.params[&format!("{prefix}.running_var")]
                .tensor
                .data_mut()
                .copy_from_slice(&stats.var);
        }
    }

    fn conv(&self, g: &mut Graph<T>, x: Var, prefix: &str, stride: usize, padding: usize) -> Result<Var> {
        let w = self.bind(g, &format!("{prefix}.weight"));
        g.conv2d(x, w, None, stride, padding)
    }

    fn bn(
        &self,
        g: &mut Graph<T>,
        x: Var,
        prefix: &str,
        mode: Mode,
        updates: &mut Vec<(String, RunningStats<T>)>,
    ) -> Result<Var> {
        let gamma = self.bind(g, &format!("{prefix}.weight"));
        let beta = self.bind(g, &format!("{prefix}.bias"));
        let mut stats = RunningStats {
            mean: self.params[&format!("{prefix}.running_mean")].tensor.data().to_vec(),
            var: self.params[&format!("{prefix}.running_var")].tensor.data().to_vec(),
        };
        let y = g.batch_norm2d(x, gamma, beta, &mut stats, mode, BN_MOMENTUM, BN_EPSILON)?;
        if mode == Mode::Train {
            updates.push((prefix.to_string(), stats));
        }
        Ok(y)
    }

    fn run(
        &self,
        g: &mut Graph<T>,
        x: Var,
        mode: Mode,
        head: bool,
        updates: &mut Vec<(String, RunningStats<T>)>,
    ) -> Result<Var> {
        let c = &self.config;
        let s = g.shape(x);
        if s.len() != 4 || s[1] != c.input_channels {
            return Err(Error::Shape(format!(
                "network expects [N, {}, H, W] input, got {s:?}",
                c.input_channels
            )));
        }
        let layout = c.variant.layout();
        let mut h = self.conv(g, x, "conv1", layout.stem_stride, layout.stem_padding)?;
        h = self.bn(g, h, "bn1", mode, updates)?;
        h = g.relu(h);
        if layout.max_pool {
            h = g.max_pool2d(h, 3, 2, 1)?;
        }
        for (si, &(_, blocks, stride)) in layout.stages.iter().enumerate() {
            for b in 0..blocks {
                let prefix = format!("layer{}.{b}", si + 1);
                let block_stride = if b == 0 { stride } else { 1 };
                let mut y = self.conv(g, h, &format!("{prefix}.conv1"), block_stride, 1)?;
                y = self.bn(g, y, &format!("{prefix}.bn1"), mode, updates)?;
                y = g.relu(y);
                y = self.conv(g, y, &format!("{prefix}.conv2"), 1, 1)?;
                y = self.bn(g, y, &format!("{prefix}.bn2"), mode, updates)?;
                let shortcut = if self.params.contains_key(&format!("{prefix}.downsample.0.weight")) {
                    let d = self.conv(g, h, &format!("{prefix}.downsample.0"), block_stride, 0)?;
                    self.bn(g, d, &format!("{prefix}.downsample.1"), mode, updates)?
                } else {
                    h
                };
                let sum = g.add(y, shortcut)?;
                h = g.relu(sum);
            }
        }
        let pooled = g.global_avg_pool2d(h)?;
        if !head {
            return Ok(pooled);
        }
        let w = self.bind(g, "fc.weight");
        let b = self.bind(g, "fc.bias");
        g.linear(pooled, w, Some(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{load_checkpoint, save_checkpoint, Variant};
    use crate::tensor::gradcheck;

    fn micro(c: usize, k: usize) -> NetworkConfig {
        NetworkConfig::new(Variant::Micro, c, k).with_input_size(8)
    }

    fn batch<T: Element>(n: usize, c: usize, s: usize, seed: u64) -> Tensor<T> {
        let mut rng = RngState::new(seed);
        let v: Vec<f64> = (0..n * c * s * s).map(|_| rng.uniform_range(-10.0, 10.0)).collect();
        Tensor::from_f64_slice(vec![n, c, s, s], &v).unwrap()
    }

    // Independent tally: per block 3x3 convs, two BNs (gamma+beta), optional
    // 1x1 projection with its own BN.
    fn block(cin: usize, cout: usize, down: bool) -> usize {
        9 * cin * cout + 9 * cout * cout + 4 * cout + if down { cin * cout + 2 * cout } else { 0 }
    }

    #[test]
    fn resnet18_count_matches_layout_tally() {
        for (c, k) in [(6, 11), (3, 1000), (5, 1)] {
            let mut expect = 64 * c * 49 + 2 * 64;
            expect += 2 * block(64, 64, false);
            for (cin, cout) in [(64, 128), (128, 256), (256, 512)] {
                expect += block(cin, cout, true) + block(cout, cout, false);
            }
            expect += 512 * k + k;
            let cfg = NetworkConfig::new(Variant::Resnet18, c, k);
            assert_eq!(cfg.parameter_count(), expect);
            assert_eq!(cfg.parameter_count(), 3136 * c + 11_167_104 + 513 * k);
        }
        // torchvision's published figure for the ImageNet model
        assert_eq!(NetworkConfig::new(Variant::Resnet18, 3, 1000).parameter_count(), 11_689_512);
    }

    #[test]
    fn micro_is_small() {
        let cfg = micro(3, 4);
        let expect = 16 * 3 * 9 + 32 + 2 * block(16, 16, false) + block(16, 32, true)
            + block(32, 32, false) + 32 * 4 + 4;
        assert_eq!(cfg.parameter_count(), expect);
        assert_eq!(expect, 43_028);
        assert!(micro(6, 11).parameter_count() <= 200_000);
        let m = Model::<f32>::build(cfg, &mut RngState::new(7)).unwrap();
        assert_eq!(m.parameter_count(), expect);
    }

    #[test]
    fn forward_shape_and_finite() {
        let mut m = Model::<f32>::build(micro(3, 4), &mut RngState::new(7)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(batch(2, 3, 8, 1));
        let y = m.forward(&mut g, x, Mode::Train).unwrap();
        assert_eq!(g.shape(y), &[2, 4]);
        g.check_finite(y, "logits").unwrap();
        let e = m.predict_logits(&batch(2, 3, 8, 1)).unwrap();
        e.validate_finite("eval logits").unwrap();
    }

    #[test]
    fn resnet18_forward_small_input() {
        let cfg = NetworkConfig::new(Variant::Resnet18, 6, 11).with_input_size(32);
        let m = Model::<f32>::build(cfg, &mut RngState::new(2)).unwrap();
        let y = m.predict_logits(&batch(1, 6, 32, 4)).unwrap();
        assert_eq!(y.shape(), &[1, 11]);
        y.validate_finite("logits").unwrap();
    }

    #[test]
    fn build_is_deterministic() {
        let a = Model::<f32>::build(micro(6, 3), &mut RngState::new(11)).unwrap();
        let b = Model::<f32>::build(micro(6, 3), &mut RngState::new(11)).unwrap();
        assert_eq!(a.to_checkpoint().to_bytes().unwrap(), b.to_checkpoint().to_bytes().unwrap());
        let c = Model::<f32>::build(micro(6, 3), &mut RngState::new(12)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_rules() {
        let m = Model::<f32>::build(micro(3, 2), &mut RngState::new(1)).unwrap();
        for (path, p) in m.params() {
            let d = p.tensor.data();
            match p.kind {
                ParamKind::BnGamma | ParamKind::BnRunningVar => assert!(d.iter().all(|&v| v == 1.0), "{path}"),
                ParamKind::BnBeta | ParamKind::LinearBias | ParamKind::BnRunningMean => {
                    assert!(d.iter().all(|&v| v == 0.0), "{path}")
                }
                ParamKind::ConvWeight => {
                    let s = p.tensor.shape();
                    let b = XavierSpec::conv(s[0], s[1], s[2], s[3]).bound() as f32;
                    assert!(d.iter().all(|v| v.abs() <= b), "{path}");
                }
                ParamKind::LinearWeight => {}
            }
        }
    }

    #[test]
    fn eval_forward_is_pure() {
        let mut m = Model::<f32>::build(micro(3, 2), &mut RngState::new(1)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(batch(4, 3, 8, 3));
        m.forward(&mut g, x, Mode::Train).unwrap();
        let before = m.clone();
        let a = m.predict_logits(&batch(4, 3, 8, 5)).unwrap();
        let b = m.predict_logits(&batch(4, 3, 8, 5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(before, m);
    }

    #[test]
    fn train_forward_updates_running_stats() {
        let mut m = Model::<f32>::build(micro(3, 2), &mut RngState::new(1)).unwrap();
        let mut g = Graph::new();
        let x = g.constant(batch(4, 3, 8, 3));
        m.forward(&mut g, x, Mode::Train).unwrap();
        assert!(m.tensor("bn1.running_mean").unwrap().data().iter().any(|&v| v != 0.0));
        assert!(m.tensor("layer2.0.downsample.1.running_var").unwrap().data().iter().any(|&v| v != 1.0));
    }

    #[test]
    fn whole_network_gradcheck() {
        let cfg = micro(2, 2).with_input_size(4);
        let model = Model::<f64>::build(cfg, &mut RngState::new(3)).unwrap();
        let input = batch::<f64>(3, 2, 4, 8);
        let w = model.tensor("layer2.0.conv1.weight").unwrap().clone();
        let f = |g: &mut Graph<f64>, v: Var| -> Result<Var> {
            let mut m = model.clone();
            g.bind_param("layer2.0.conv1.weight", v)?;
            let x = g.constant(input.clone());
            let mut y = m.forward(g, x, Mode::Train)?;
            y = g.sigmoid(y);
            Ok(g.sum(y))
        };
        // below 1e-5 roundoff dominates coordinates with |grad| ~ 1e-7
        let report = gradcheck(f, &w, 1e-5).unwrap();
        assert!(report.passes(1e-4), "{}", report.max_rel_error);
    }

    #[test]
    fn freeze_keeps_features_and_marks_backbone() {
        let mut m = Model::<f32>::build(micro(3, 2), &mut RngState::new(1)).unwrap();
        let x = batch(2, 3, 8, 3);
        let before = m.predict_features(&x).unwrap();
        let head = m.tensor("fc.weight").unwrap().clone();
        m.freeze_backbone(&mut RngState::new(99)).unwrap();
        assert_eq!(m.predict_features(&x).unwrap(), before);
        assert_ne!(m.tensor("fc.weight").unwrap(), &head);
        for (path, p) in m.params() {
            assert_eq!(p.trainable, path.starts_with("fc."), "{path}");
        }
        let mut g = Graph::new();
        let xv = g.constant(x);
        m.forward(&mut g, xv, Mode::Eval).unwrap();
        let bound: Vec<&str> = g.params().iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(bound, ["fc.weight", "fc.bias"]);
    }

    #[test]
    fn checkpoint_file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gick");
        let mut m = Model::<f32>::build(micro(3, 4), &mut RngState::new(7)).unwrap();
        m.metadata.insert("seed".into(), "7".into());
        save_checkpoint(&m.to_checkpoint(), &path).unwrap();
        let back = Model::<f32>::from_checkpoint(&load_checkpoint(&path).unwrap()).unwrap();
        assert_eq!(back, m);

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap_err().root().to_string(), "truncated checkpoint");
    }

    #[test]
    fn variant_mismatch_names_first_path() {
        let mut ckpt = Model::<f32>::build(micro(3, 4), &mut RngState::new(7)).unwrap().to_checkpoint();
        ckpt.metadata.insert("variant".into(), "resnet18".into());
        match ckpt.validate() {
            Err(Error::CheckpointShape { path, expected, found }) => {
                assert_eq!(path, "conv1.weight");
                assert_eq!(expected, [64, 3, 7, 7]);
                assert_eq!(found, [16, 3, 3, 3]);
            }
            other => panic!("{other:?}"),
        }
        ckpt.metadata.insert("variant".into(), "resnet50".into());
        assert!(matches!(ckpt.validate(), Err(Error::UnsupportedVariant(_))));
    }

    #[test]
    fn missing_entry_is_reported() {
        let mut ckpt = Model::<f32>::build(micro(3, 4), &mut RngState::new(7)).unwrap().to_checkpoint();
        ckpt.entries.shift_remove("layer1.1.bn2.running_var");
        assert!(matches!(ckpt.validate(), Err(Error::MissingEntry(p)) if p == "layer1.1.bn2.running_var"));
    }

    #[test]
    fn pretrained_backbone_fresh_head() {
        let src = Model::<f32>::build(micro(3, 9), &mut RngState::new(7)).unwrap();
        let dst = Model::<f32>::from_pretrained(micro(3, 2), &src.to_checkpoint(), &mut RngState::new(8)).unwrap();
        assert_eq!(dst.tensor("layer1.0.conv1.weight").unwrap(), src.tensor("layer1.0.conv1.weight").unwrap());
        assert_eq!(dst.tensor("fc.weight").unwrap().shape(), &[2, 32]);
        assert!(Model::<f32>::from_pretrained(micro(6, 2), &src.to_checkpoint(), &mut RngState::new(8)).is_err());
    }

    #[test]
    fn rejects_wrong_band_count() {
        let m = Model::<f32>::build(micro(3, 4), &mut RngState::new(7)).unwrap();
        assert!(matches!(m.predict_logits(&batch(1, 5, 8, 1)), Err(Error::Shape(_))));
    }
}
