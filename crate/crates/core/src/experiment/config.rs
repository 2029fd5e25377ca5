use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::data::{default_outcomes, outcome_index, Source, OUTCOMES};
use crate::error::{Error, Result, ResultExt};
use crate::metrics::Aggregation;
use crate::nn::{parse_slots, Variant};
use crate::optim::AdamConfig;

/// Fine-tune fractions accepted by the sweep.
pub const SWEEP_FRACTIONS: [f64; 5] = [0.0, 0.2, 0.4, 0.6, 0.8];

/// Keys understood in config files and as `--key` flags.
pub const CONFIG_KEYS: &[&str] = &[
    "data",
    "survey",
    "manifest",
    "osm",
    "source",
    "variant",
    "crop",
    "batch_size",
    "epochs",
    "lr",
    "weight_decay",
    "lr_decay",
    "holdout_weight_decay",
    "outcomes",
    "folds",
    "threshold",
    "aggregation",
    "pretrained",
    "rgb_slots",
    "hflip",
    "random_crop",
    "val_fraction",
    "patience",
    "finetune_l2",
    "fractions",
    "country",
    "kind",
    "seed",
    "out",
];

/// Ordered `key = value` pairs with the directory relative paths resolve
/// against.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    pub values: BTreeMap<String, (String, PathBuf)>,
}

impl KeyValues {
    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped and later keys override earlier ones.
    pub fn parse(text: &str, file: &str, base: &Path) -> Result<Self> {
        let mut kv = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    file: file.into(),
                    line: i as u64 + 1,
                    msg: format!("expected `key = value`, found {line:?}"),
                });
            };
            kv.set(k.trim(), v.trim(), base)?;
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &path.display().to_string(), &base)
    }

    pub fn set(&mut self, key: &str, value: &str, base: &Path) -> Result<()> {
        let key = key.replace('-', "_");
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(Error::Usage(format!("unknown config key `{key}`")));
        }
        self.values.insert(key, (value.to_string(), base.to_path_buf()));
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(v, _)| v.as_str())
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|(v, base)| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        })
    }

    fn parsed<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Usage(format!("bad value for `{key}`: {v:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineKind {
    Nightlights,
    Osm,
    Spatial,
    Oracle,
}

impl BaselineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Nightlights => "nightlights",
            BaselineKind::Osm => "osm",
            BaselineKind::Spatial => "spatial",
            BaselineKind::Oracle => "oracle",
        }
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nightlights" => Ok(BaselineKind::Nightlights),
            "osm" => Ok(BaselineKind::Osm),
            "spatial" => Ok(BaselineKind::Spatial),
            "oracle" => Ok(BaselineKind::Oracle),
            other => Err(Error::Usage(format!(
                "unknown baseline kind `{other}` (nightlights, osm, spatial, oracle)"
            ))),
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub survey: PathBuf,
    pub manifest: PathBuf,
    pub osm: PathBuf,
    pub source: Source,
    pub variant: Variant,
    /// Network input side; `None` uses the patch side.
    pub crop: Option<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Weight decay used when training for a held-out country.
    pub holdout_weight_decay: f64,
    /// Indices into [`OUTCOMES`], in head order.
    pub outcomes: Vec<usize>,
    pub folds: usize,
    pub threshold: f64,
    pub aggregation: Aggregation,
    pub pretrained: Option<PathBuf>,
    pub rgb_slots: Option<[usize; 3]>,
    pub hflip: f64,
    pub random_crop: bool,
    /// Share of training geocodes held out for validation.
    pub val_fraction: f64,
    /// Early-stopping patience in epochs; 0 trains every epoch.
    pub patience: usize,
    pub finetune_l2: f64,
    pub fractions: Vec<f64>,
    pub country: Option<String>,
    pub kind: Option<BaselineKind>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let data = kv.path("data").unwrap_or_else(|| PathBuf::from("."));
        let file = |key: &str, name: &str| kv.path(key).unwrap_or_else(|| data.join(name));
        let adam = AdamConfig {
            lr: kv.parsed("lr", 1e-4)?,
            weight_decay: kv.parsed("weight_decay", 1e-3)?,
            lr_decay_per_epoch: kv.parsed("lr_decay", 1.0)?,
            ..AdamConfig::default()
        };
        let outcomes = match kv.get("outcomes") {
            None => default_outcomes().iter().map(|o| outcome_index(o)).collect::<Result<_>>()?,
            Some("all") => (0..OUTCOMES.len()).collect(),
            Some(list) => list
                .split(',')
                .map(|o| outcome_index(o.trim()).map_err(|e| Error::Usage(e.to_string())))
                .collect::<Result<Vec<_>>>()?,
        };
        let fractions = match kv.get("fractions") {
            None => SWEEP_FRACTIONS.to_vec(),
            Some(list) => list
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Usage(format!("bad fraction {f:?}")))
                })
                .collect::<Result<_>>()?,
        };
        let crop = match kv.get("crop") {
            None | Some("auto") => None,
            Some(_) => Some(kv.parsed("crop", 0usize)?),
        };
        let aggregation = match kv.get("aggregation") {
            None | Some("pooled") => Aggregation::Pooled,
            Some("mean_per_fold") => Aggregation::MeanPerFold,
            Some(other) => return Err(Error::Usage(format!("unknown aggregation `{other}`"))),
        };
        let usage = |e: Error| Error::Usage(e.to_string());
        let cfg = Self {
            survey: file("survey", crate::data::synth::SURVEY_FILE),
            manifest: file("manifest", crate::data::synth::MANIFEST_FILE),
            osm: file("osm", crate::data::synth::OSM_FILE),
            source: kv.get("source").unwrap_or("landsat8").parse().map_err(usage)?,
            variant: kv.get("variant").unwrap_or("micro").parse().map_err(usage)?,
            crop,
            batch_size: kv.parsed("batch_size", 16)?,
            epochs: kv.parsed("epochs", 10)?,
            adam,
            holdout_weight_decay: kv.parsed("holdout_weight_decay", 0.01)?,
            outcomes,
            folds: kv.parsed("folds", 5)?,
            threshold: kv.parsed("threshold", 0.5)?,
            aggregation,
            pretrained: kv.path("pretrained"),
            rgb_slots: kv.get("rgb_slots").map(parse_slots).transpose().map_err(usage)?,
            hflip: kv.parsed("hflip", 0.5)?,
            random_crop: kv.parsed("random_crop", false)?,
            val_fraction: kv.parsed("val_fraction", 0.2)?,
            patience: kv.parsed("patience", 0)?,
            finetune_l2: kv.parsed("finetune_l2", 0.1)?,
            fractions,
            country: kv.get("country").map(str::to_string),
            kind: kv.get("kind").map(str::parse).transpose()?,
            seed: kv.get("seed").map(|_| kv.parsed("seed", 0u64)).transpose()?,
            out: kv.path("out"),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Usage(m));
        self.adam.validate().map_err(|e| Error::Usage(e.to_string()))?;
        if self.batch_size == 0 || self.folds < 2 || self.outcomes.is_empty() {
            return bad("batch_size must be positive, folds at least 2 and outcomes non-empty".into());
        }
        if self.crop == Some(0) {
            return bad("crop must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.threshold) || !(0.0..=1.0).contains(&self.hflip) {
            return bad("threshold and hflip must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must lie in [0, 1)".into());
        }
        for &f in &self.fractions {
            if !SWEEP_FRACTIONS.contains(&f) {
                return bad(format!("fraction {f} is not one of 0, 0.2, 0.4, 0.6, 0.8"));
            }
        }
        let mut seen = self.outcomes.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.outcomes.len() {
            return bad("outcomes are listed twice".into());
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Usage("missing required flag --seed".into()))
    }

    pub fn require_out(&self) -> Result<&Path> {
        self.out
            .as_deref()
            .ok_or_else(|| Error::Usage("missing required flag --out".into()))
    }

    pub fn outcome_names(&self) -> Vec<&'static str> {
        self.outcomes.iter().map(|&o| OUTCOMES[o]).collect()
    }

    /// Every semantically meaningful field as sorted `key=value` lines.
    /// Seed and output directory are excluded.
    pub fn canonical(&self) -> String {
        let p = |p: &Path| p.display().to_string();
        let mut fields: Vec<(&str, String)> = vec![
            ("survey", p(&self.survey)),
            ("manifest", p(&self.manifest)),
            ("osm", p(&self.osm)),
            ("source", self.source.name().into()),
            ("variant", self.variant.to_string()),
            ("crop", self.crop.map_or("auto".into(), |c| c.to_string())),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", fmt_f(self.adam.lr)),
            ("weight_decay", fmt_f(self.adam.weight_decay)),
            ("lr_decay", fmt_f(self.adam.lr_decay_per_epoch)),
            ("beta1", fmt_f(self.adam.beta1)),
            ("beta2", fmt_f(self.adam.beta2)),
            ("epsilon", fmt_f(self.adam.epsilon)),
            ("holdout_weight_decay", fmt_f(self.holdout_weight_decay)),
            ("outcomes", self.outcome_names().join(",")),
            ("folds", self.folds.to_string()),
            ("threshold", fmt_f(self.threshold)),
            (
                "aggregation",
                match self.aggregation {
                    Aggregation::Pooled => "pooled".into(),
                    Aggregation::MeanPerFold => "mean_per_fold".into(),
                },
            ),
            ("pretrained", self.pretrained.as_deref().map_or("none".into(), p)),
            (
                "rgb_slots",
                self.rgb_slots.map_or("default".into(), |s| s.map(|v| v.to_string()).join(",")),
            ),
            ("hflip", fmt_f(self.hflip)),
            ("random_crop", self.random_crop.to_string()),
            ("val_fraction", fmt_f(self.val_fraction)),
            ("patience", self.patience.to_string()),
            ("finetune_l2", fmt_f(self.finetune_l2)),
            ("fractions", self.fractions.iter().map(|f| fmt_f(*f)).collect::<Vec<_>>().join(",")),
            ("country", self.country.clone().unwrap_or_else(|| "none".into())),
            ("kind", self.kind.map_or("none".into(), |k| k.to_string())),
        ];
        fields.sort();
        fields.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical`].
    pub fn config_hash(&self) -> String {
        let digest = Sha256::digest(self.canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

fn fmt_f(v: f64) -> String {
    format!("{v:?}")
}

/// Reads `--config` (if given) and applies `--key value` overrides on top.
pub fn resolve_config(config_path: Option<&Path>, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut kv = match config_path {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::default(),
    };
    let cwd = PathBuf::from(".");
    for (k, v) in overrides {
        kv.set(k, v, &cwd)?;
    }
    ExperimentConfig::from_key_values(&kv).context(|| "resolving configuration".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> ExperimentConfig {
        let kv = KeyValues::parse(text, "cfg", Path::new("/d")).unwrap();
        ExperimentConfig::from_key_values(&kv).unwrap()
    }

    #[test]
    fn parses_flat_text() {
        let c = cfg("# comment\ndata = sub\nlr = 0.001 # trailing\n\nfolds=3\noutcomes = electricity, road\n");
        assert_eq!(c.survey, PathBuf::from("/d/sub/survey.csv"));
        assert_eq!(c.adam.lr, 0.001);
        assert_eq!(c.folds, 3);
        assert_eq!(c.outcome_names(), ["electricity", "road"]);
        assert_eq!(c.outcomes.len(), 2);
    }

    #[test]
    fn rejects_bad_input() {
        let base = Path::new(".");
        assert!(matches!(KeyValues::parse("nonsense", "c", base), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(KeyValues::parse("colour = red", "c", base), Err(Error::Usage(_))));
        let kv = KeyValues::parse("fractions = 0.3", "c", base).unwrap();
        assert!(matches!(ExperimentConfig::from_key_values(&kv), Err(Error::Usage(_))));
        let kv = KeyValues::parse("epochs = many", "c", base).unwrap();
        assert!(ExperimentConfig::from_key_values(&kv).is_err());
    }

    #[test]
    fn hash_ignores_layout_seed_and_output() {
        let a = cfg("lr = 0.001\nfolds = 3\n");
        let b = cfg("  folds=3\n\n# x\nlr   =   0.001\nseed = 9\nout = elsewhere\n");
        assert_eq!(a.config_hash(), b.config_hash());
        assert_eq!(a.config_hash().len(), 16);
        let c = cfg("lr = 0.002\nfolds = 3\n");
        assert_ne!(a.config_hash(), c.config_hash());
        let d = cfg("lr = 0.001\nfolds = 3\nhflip = 0.25\n");
        assert_ne!(a.config_hash(), d.config_hash());
    }

    #[test]
    fn cli_overrides_win() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg");
        std::fs::write(&p, "epochs = 3\ndata = .\n").unwrap();
        let c = resolve_config(Some(&p), &[("epochs".into(), "7".into()), ("batch-size".into(), "4".into())]).unwrap();
        assert_eq!(c.epochs, 7);
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.survey, dir.path().join("./survey.csv"));
    }
}
