use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};

use super::artifacts::{save_metrics, save_predictions, write_run_manifest, PredictionRow, METRICS_FILE, PREDICTIONS_FILE};
use super::config::{BaselineKind, ExperimentConfig};
use crate::baselines::{
    fit_logreg_fixed, load_osm, logreg_fit, nearest_neighbor_predict, nightlights_features, oracle_fit,
    osm_features, SpatialPoint, DEFAULT_L2_GRID,
};
use crate::data::{
    load_survey, make_splits, split_validation, Augment, Dataset, Manifest, NormalizationStats, RasterPatch, Source,
    SplitMode, SurveyRecord, FINETUNE, HELD_OUT_TEST, OUTCOMES,
};
use crate::error::{Error, Result, ResultExt};
use crate::metrics::{aggregate_kfold, auroc, FoldPredictions, MetricsReport};
use crate::nn::{extend_input_channels, load_checkpoint, save_checkpoint, Model, NetworkConfig};
use crate::optim::{train_epoch, AdamConfig, AdamState, TrainConfig};
use crate::rng::RngState;
use crate::tensor::sigmoid;

const PREDICT_BATCH: usize = 64;
const INNER_FOLDS: usize = 5;

/// Survey records joined with one imagery patch per geocode.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub records: Vec<SurveyRecord>,
    pub patches: BTreeMap<String, RasterPatch>,
}

impl LoadedData {
    /// Patch side shared by every patch.
    pub fn patch_side(&self) -> Result<usize> {
        let mut sides = self.patches.values().map(|p| p.height.min(p.width));
        let first = sides.next().ok_or_else(|| Error::Data("no imagery loaded".into()))?;
        Ok(sides.fold(first, usize::min))
    }

    pub fn bands(&self) -> Result<usize> {
        let mut it = self.patches.iter();
        let (_, first) = it.next().ok_or_else(|| Error::Data("no imagery loaded".into()))?;
        for (g, p) in it {
            if p.bands != first.bands {
                return Err(Error::Data(format!(
                    "geocode {g} has {} bands, others have {}",
                    p.bands, first.bands
                )));
            }
        }
        Ok(first.bands)
    }
}

fn distinct_geocodes(records: &[SurveyRecord]) -> Vec<&str> {
    records.iter().map(|r| r.geocode.as_str()).collect::<BTreeSet<_>>().into_iter().collect()
}

pub fn load_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let records = load_survey(&cfg.survey)?;
    let patches = load_source(cfg, &records, cfg.source)?;
    let data = LoadedData { records, patches };
    data.bands()?;
    Ok(data)
}

pub fn load_source(
    cfg: &ExperimentConfig,
    records: &[SurveyRecord],
    source: Source,
) -> Result<BTreeMap<String, RasterPatch>> {
    let manifest = Manifest::load(&cfg.manifest)?;
    manifest.load_patches(distinct_geocodes(records), source)
}

/// A trained network with the normalization fitted on its training set.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub model: Model<f32>,
    pub stats: NormalizationStats,
    pub crop: usize,
    pub epochs_run: usize,
    pub best_val_auroc: Option<f64>,
}

impl FittedModel {
    /// Stores the normalization next to the weights so the file is
    /// self-contained.
    pub fn checkpoint(&self, extra: &[(&str, String)]) -> crate::nn::Checkpoint {
        let mut c = self.model.to_checkpoint();
        let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        c.metadata.insert("norm_mean".into(), join(&self.stats.mean));
        c.metadata.insert("norm_std".into(), join(&self.stats.std));
        for (k, v) in extra {
            c.metadata.insert((*k).into(), v.clone());
        }
        c
    }
}

fn build_model(cfg: &ExperimentConfig, config: NetworkConfig, rng: &mut RngState) -> Result<Model<f32>> {
    let Some(path) = &cfg.pretrained else {
        return Model::build(config, rng);
    };
    let mut ckpt = load_checkpoint(path)?;
    let channels = ckpt.network_config()?.input_channels;
    if channels != config.input_channels {
        let slots = cfg.rgb_slots.unwrap_or_else(|| cfg.source.default_rgb_slots());
        ckpt = extend_input_channels(&ckpt, config.input_channels, slots, rng)
            .context(|| format!("extending {} to {} bands", path.display(), config.input_channels))?;
    }
    Model::from_pretrained(config, &ckpt, rng)
}

/// Sigmoid scores `[n][k]` for the given records, center-cropped.
pub fn predict_scores(fitted: &FittedModel, data: &LoadedData, idx: &[usize], outcomes: &[usize]) -> Result<Vec<Vec<f64>>> {
    let ds = Dataset::assemble(&data.records, idx, &data.patches, outcomes, Some(&fitted.stats))?;
    let augment = Augment::center(fitted.crop);
    let mut out = Vec::with_capacity(idx.len());
    let order: Vec<usize> = (0..ds.len()).collect();
    for chunk in order.chunks(PREDICT_BATCH) {
        let (x, _) = ds.batch(chunk, &augment, None)?;
        let logits = fitted.model.predict_logits(&x)?;
        let k = outcomes.len();
        for row in logits.data().chunks(k) {
            out.push(row.iter().map(|&v| sigmoid(v as f64)).collect());
        }
    }
    Ok(out)
}

/// Pooled eval-mode features `[n][D]` for the given records.
pub fn extract_features(fitted: &FittedModel, data: &LoadedData, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    let ds = Dataset::assemble(&data.records, idx, &data.patches, &[0], Some(&fitted.stats))?;
    let augment = Augment::center(fitted.crop);
    let d = fitted.model.feature_dim();
    let mut out = Vec::with_capacity(idx.len());
    let order: Vec<usize> = (0..ds.len()).collect();
    for chunk in order.chunks(PREDICT_BATCH) {
        let (x, _) = ds.batch(chunk, &augment, None)?;
        let f = fitted.model.predict_features(&x)?;
        for row in f.data().chunks(d) {
            out.push(row.iter().map(|&v| v as f64).collect());
        }
    }
    Ok(out)
}

fn mean_auroc(scores: &[Vec<f64>], labels: &[Vec<Option<bool>>]) -> Option<f64> {
    let k = labels.first().map_or(0, Vec::len);
    let mut vals = Vec::new();
    for o in 0..k {
        let (s, y): (Vec<f64>, Vec<bool>) = scores
            .iter()
            .zip(labels)
            .filter_map(|(s, l)| l[o].map(|y| (s[o], y)))
            .unzip();
        if let Ok(a) = auroc(&s, &y) {
            vals.push(a);
        }
    }
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Fits normalization and a network on `train`. With a positive patience a
/// validation share is carved out and the best epoch by mean validation
/// AUROC is kept.
pub fn train_model(
    cfg: &ExperimentConfig,
    data: &LoadedData,
    train: &[usize],
    adam: AdamConfig,
    rng: &mut RngState,
) -> Result<FittedModel> {
    let (fit, val) = if cfg.patience > 0 {
        split_validation(&data.records, train, cfg.val_fraction, rng)
    } else {
        (train.to_vec(), Vec::new())
    };
    if fit.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    let fit_geocodes: BTreeSet<&str> = fit.iter().map(|&i| data.records[i].geocode.as_str()).collect();
    let stats = NormalizationStats::fit(fit_geocodes.iter().filter_map(|g| data.patches.get(*g)))?;
    let crop = match cfg.crop {
        Some(c) => c,
        None => data.patch_side()?,
    };
    let config = NetworkConfig::new(cfg.variant, data.bands()?, cfg.outcomes.len()).with_input_size(crop);
    let model = build_model(cfg, config, rng)?;
    let ds = Dataset::assemble(&data.records, &fit, &data.patches, &cfg.outcomes, Some(&stats))?;
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        epochs: cfg.epochs,
        augment: Augment {
            crop,
            random_crop: cfg.random_crop,
            hflip_probability: cfg.hflip,
        },
    };
    let mut state = AdamState::new(adam)?;
    let mut fitted = FittedModel {
        model,
        stats,
        crop,
        epochs_run: 0,
        best_val_auroc: None,
    };
    let val_labels: Vec<Vec<Option<bool>>> = val
        .iter()
        .map(|&i| cfg.outcomes.iter().map(|&o| data.records[i].outcomes[o]).collect())
        .collect();
    let mut best: Option<(f64, Model<f32>)> = None;
    let mut stale = 0;
    for epoch in 0..train_cfg.epochs {
        let s = train_epoch(&mut fitted.model, &ds, &train_cfg, &mut state, rng)
            .context(|| format!("epoch {epoch}"))?;
        fitted.epochs_run = epoch + 1;
        info!("epoch {epoch}: loss {:.5} over {} examples", s.mean_loss, s.examples);
        if val.is_empty() {
            continue;
        }
        let scores = predict_scores(&fitted, data, &val, &cfg.outcomes)?;
        let Some(a) = mean_auroc(&scores, &val_labels) else {
            continue;
        };
        info!("epoch {epoch}: validation AUROC {a:.4}");
        if best.as_ref().is_none_or(|(b, _)| a > *b) {
            best = Some((a, fitted.model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    if let Some((a, m)) = best {
        fitted.model = m;
        fitted.best_val_auroc = Some(a);
    }
    Ok(fitted)
}

fn prediction_rows(
    data: &LoadedData,
    idx: &[usize],
    outcomes: &[usize],
    scores: &[Vec<f64>],
    fold: usize,
) -> Vec<PredictionRow> {
    let mut rows = Vec::with_capacity(idx.len() * outcomes.len());
    for (&i, s) in idx.iter().zip(scores) {
        let r = &data.records[i];
        for (k, &o) in outcomes.iter().enumerate() {
            rows.push(PredictionRow {
                geocode: r.geocode.clone(),
                lat: r.lat,
                lon: r.lon,
                outcome: OUTCOMES[o].to_string(),
                score: s[k],
                label: r.outcomes[o],
                fold,
                record: i,
            });
        }
    }
    rows
}

/// Pools prediction rows per outcome; rows without labels are not scored.
pub fn reports_from_rows(
    rows: &[PredictionRow],
    outcomes: &[&str],
    threshold: f64,
    mode: crate::metrics::Aggregation,
) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::new();
    for &o in outcomes {
        let mut folds: BTreeMap<usize, FoldPredictions> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.outcome == o) {
            if let Some(y) = r.label {
                folds
                    .entry(r.fold)
                    .or_insert_with(|| FoldPredictions {
                        fold: r.fold,
                        rows: Vec::new(),
                    })
                    .rows
                    .push((r.geocode.clone(), r.score, y));
            }
        }
        let folds: Vec<FoldPredictions> = folds.into_values().collect();
        if folds.is_empty() {
            warn!("outcome {o}: no labelled predictions, skipped");
            continue;
        }
        let report = aggregate_kfold(o, &folds, threshold, mode)?;
        if report.auroc.is_none() {
            warn!("outcome {o}: AUROC undefined, labels hold a single class");
        }
        out.push(report);
    }
    Ok(out)
}

/// Everything a run writes to its output directory.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub dir: Option<PathBuf>,
    pub reports: Vec<MetricsReport>,
    pub rows: Vec<PredictionRow>,
    pub checkpoints: Vec<PathBuf>,
}

impl RunArtifacts {
    pub fn auroc_of(&self, outcome: &str) -> Option<f64> {
        self.reports.iter().find(|r| r.outcome == outcome).and_then(|r| r.auroc)
    }
}

fn finish_run(
    cfg: &ExperimentConfig,
    command: &str,
    seed: u64,
    dir: Option<&Path>,
    reports: Vec<MetricsReport>,
    rows: Vec<PredictionRow>,
    checkpoints: Vec<PathBuf>,
    notes: &[String],
) -> Result<RunArtifacts> {
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        save_metrics(d.join(METRICS_FILE), &reports)?;
        save_predictions(d.join(PREDICTIONS_FILE), &rows)?;
        write_run_manifest(d, command, &cfg.config_hash(), seed, &cfg.canonical(), notes)?;
    }
    Ok(RunArtifacts {
        dir: dir.map(Path::to_path_buf),
        reports,
        rows,
        checkpoints,
    })
}

/// K-fold training over `subset` (all records when `None`); fold models are
/// saved under `dir/checkpoints/`.
pub fn run_train_cv(cfg: &ExperimentConfig, data: &LoadedData, subset: Option<&[usize]>, seed: u64, dir: Option<&Path>) -> Result<RunArtifacts> {
    let hash = cfg.config_hash();
    let all: Vec<usize> = match subset {
        Some(s) => s.to_vec(),
        None => (0..data.records.len()).collect(),
    };
    let sub: Vec<SurveyRecord> = all.iter().map(|&i| data.records[i].clone()).collect();
    let split = make_splits(&sub, cfg.folds, seed, SplitMode::KFold)?;
    let mut rows = Vec::new();
    let mut checkpoints = Vec::new();
    for fold in 0..cfg.folds {
        let ctx = || format!("fold {fold} (config {hash})");
        let (tr, te) = split.round(&sub, fold);
        let train: Vec<usize> = tr.iter().map(|&i| all[i]).collect();
        let test: Vec<usize> = te.iter().map(|&i| all[i]).collect();
        info!("fold {fold}: {} train, {} test records", train.len(), test.len());
        let mut rng = RngState::new(seed).derive(0xf01d_0000 + fold as u64);
        let fitted = train_model(cfg, data, &train, cfg.adam, &mut rng).context(ctx)?;
        let scores = predict_scores(&fitted, data, &test, &cfg.outcomes).context(ctx)?;
        rows.extend(prediction_rows(data, &test, &cfg.outcomes, &scores, fold));
        if let Some(d) = dir {
            let cdir = d.join("checkpoints");
            std::fs::create_dir_all(&cdir)?;
            let path = cdir.join(format!("fold{fold}.gick"));
            let ckpt = fitted.checkpoint(&[
                ("fold", fold.to_string()),
                ("seed", seed.to_string()),
                ("config_hash", hash.clone()),
                ("outcomes", cfg.outcome_names().join(",")),
            ]);
            save_checkpoint(&ckpt, &path).context(ctx)?;
            checkpoints.push(path);
        }
    }
    let reports = reports_from_rows(&rows, &cfg.outcome_names(), cfg.threshold, cfg.aggregation)?;
    finish_run(cfg, "train", seed, dir, reports, rows, checkpoints, &[])
}

/// Features and labels for one baseline on a set of records.
struct BaselineInputs {
    nightlights: Vec<(Source, BTreeMap<String, Vec<f64>>)>,
    osm: BTreeMap<String, Vec<f64>>,
}

fn baseline_inputs(cfg: &ExperimentConfig, records: &[SurveyRecord], kind: BaselineKind) -> Result<BaselineInputs> {
    let mut inputs = BaselineInputs {
        nightlights: Vec::new(),
        osm: BTreeMap::new(),
    };
    match kind {
        BaselineKind::Nightlights => {
            for source in [Source::Dmsp, Source::Viirs] {
                let patches = load_source(cfg, records, source)?;
                let feats = patches
                    .iter()
                    .map(|(g, p)| Ok((g.clone(), nightlights_features(p, source).context(|| format!("geocode {g}"))?)))
                    .collect::<Result<_>>()?;
                inputs.nightlights.push((source, feats));
            }
        }
        BaselineKind::Osm => {
            let rows = load_osm(&cfg.osm)?;
            for g in distinct_geocodes(records) {
                let r = rows
                    .get(g)
                    .ok_or_else(|| Error::Data(format!("no OSM counts for geocode {g}")))?;
                inputs.osm.insert(g.to_string(), osm_features(r).to_vec());
            }
        }
        BaselineKind::Spatial | BaselineKind::Oracle => {}
    }
    Ok(inputs)
}

/// Scores for `test` from a baseline fitted on `train`, for outcome `o`.
fn baseline_scores(
    kind: BaselineKind,
    inputs: &BaselineInputs,
    records: &[SurveyRecord],
    train: &[usize],
    test: &[usize],
    o: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let labelled: Vec<usize> = train.iter().copied().filter(|&i| records[i].outcomes[o].is_some()).collect();
    let y: Vec<bool> = labelled.iter().map(|&i| records[i].outcomes[o].unwrap()).collect();
    let groups: Vec<String> = labelled.iter().map(|&i| records[i].geocode.clone()).collect();
    let logistic = |table: &BTreeMap<String, Vec<f64>>| -> Result<(Vec<f64>, Option<f64>)> {
        let x: Vec<Vec<f64>> = labelled.iter().map(|&i| table[&records[i].geocode].clone()).collect();
        let (m, cv) = logreg_fit(&x, &y, &groups, &DEFAULT_L2_GRID, INNER_FOLDS, seed)?;
        Ok((test.iter().map(|&i| m.predict(&table[&records[i].geocode])).collect(), cv))
    };
    match kind {
        BaselineKind::Nightlights => {
            let mut best: Option<(Option<f64>, Source, Vec<f64>)> = None;
            for (source, table) in &inputs.nightlights {
                let (s, cv) = logistic(table)?;
                info!("outcome {}: {} validation AUROC {cv:?}", OUTCOMES[o], source.name());
                if best.as_ref().is_none_or(|(b, _, _)| cv > *b) {
                    best = Some((cv, *source, s));
                }
            }
            Ok(best.map(|b| b.2).unwrap_or_default())
        }
        BaselineKind::Osm => Ok(logistic(&inputs.osm)?.0),
        BaselineKind::Spatial => {
            let pts: Vec<SpatialPoint> = labelled
                .iter()
                .map(|&i| SpatialPoint {
                    geocode: records[i].geocode.clone(),
                    lat: records[i].lat,
                    lon: records[i].lon,
                    label: records[i].outcomes[o].unwrap(),
                })
                .collect();
            test.iter()
                .map(|&i| Ok(nearest_neighbor_predict(&pts, records[i].lat, records[i].lon)? as u8 as f64))
                .collect()
        }
        BaselineKind::Oracle => {
            let tr: Vec<&SurveyRecord> = train.iter().map(|&i| &records[i]).collect();
            let m = oracle_fit(&tr, o, seed)?;
            Ok(test.iter().map(|&i| m.predict(&records[i])).collect())
        }
    }
}

/// A baseline pooled over the same geocode-safe folds as the network runs.
/// A fold whose training labels hold one class predicts that class's
/// training balance.
pub fn run_baseline(cfg: &ExperimentConfig, records: &[SurveyRecord], kind: BaselineKind, seed: u64, dir: Option<&Path>) -> Result<RunArtifacts> {
    let inputs = baseline_inputs(cfg, records, kind)?;
    let split = make_splits(records, cfg.folds, seed, SplitMode::KFold)?;
    let data = LoadedData {
        records: records.to_vec(),
        patches: BTreeMap::new(),
    };
    let mut rows = Vec::new();
    for fold in 0..cfg.folds {
        let (train, test) = split.round(records, fold);
        let mut scores = vec![vec![0.0; cfg.outcomes.len()]; test.len()];
        for (k, &o) in cfg.outcomes.iter().enumerate() {
            let fold_seed = RngState::new(seed).derive(((fold as u64) << 8) | o as u64).next_u64();
            let s = match baseline_scores(kind, &inputs, records, &train, &test, o, fold_seed) {
                Ok(s) => s,
                Err(Error::Degenerate(msg)) => {
                    warn!("fold {fold}, outcome {}: {msg}; predicting the training balance", OUTCOMES[o]);
                    let obs: Vec<bool> = train.iter().filter_map(|&i| records[i].outcomes[o]).collect();
                    let p = obs.iter().filter(|&&v| v).count() as f64 / obs.len().max(1) as f64;
                    vec![p; test.len()]
                }
                Err(e) => return Err(e).context(|| format!("{kind} baseline, fold {fold}")),
            };
            for (row, v) in scores.iter_mut().zip(s) {
                row[k] = v;
            }
        }
        rows.extend(prediction_rows(&data, &test, &cfg.outcomes, &scores, fold));
    }
    let reports = reports_from_rows(&rows, &cfg.outcome_names(), cfg.threshold, cfg.aggregation)?;
    finish_run(cfg, &format!("baseline {kind}"), seed, dir, reports, rows, Vec::new(), &[])
}

#[derive(Debug, Clone)]
pub struct StratumRun {
    pub urban: bool,
    pub records: usize,
    pub artifacts: RunArtifacts,
}

/// Independent k-fold runs within the urban and the rural records.
/// Records without an urban flag belong to neither stratum.
pub fn run_urban_rural(cfg: &ExperimentConfig, data: &LoadedData, seed: u64, dir: Option<&Path>) -> Result<Vec<StratumRun>> {
    let mut out = Vec::new();
    for urban in [true, false] {
        let name = if urban { "urban" } else { "rural" };
        let subset: Vec<usize> = (0..data.records.len())
            .filter(|&i| data.records[i].urban == Some(urban))
            .collect();
        if subset.is_empty() {
            return Err(Error::Data(format!("{name} stratum is empty")));
        }
        info!("{name} stratum: {} records", subset.len());
        let sub_dir = dir.map(|d| d.join(name));
        let artifacts = run_train_cv(cfg, data, Some(&subset), seed, sub_dir.as_deref())
            .context(|| format!("{name} stratum"))?;
        out.push(StratumRun {
            urban,
            records: subset.len(),
            artifacts,
        });
    }
    if let Some(d) = dir {
        let mut text = String::from("stratum,records\n");
        for s in &out {
            text.push_str(&format!("{},{}\n", if s.urban { "urban" } else { "rural" }, s.records));
        }
        std::fs::write(d.join("strata.csv"), text)?;
    }
    Ok(out)
}

/// Result of training without one country.
#[derive(Debug, Clone)]
pub struct HoldoutRun {
    pub fitted: FittedModel,
    /// Scores on the validation share of the training countries.
    pub in_sample: Vec<MetricsReport>,
    /// Scores on every record of the held-out country.
    pub holdout: RunArtifacts,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

fn country_of(cfg: &ExperimentConfig) -> Result<&str> {
    cfg.country
        .as_deref()
        .ok_or_else(|| Error::Usage("missing required flag --country".into()))
}

fn train_without_country(cfg: &ExperimentConfig, data: &LoadedData, country: &str, seed: u64) -> Result<(FittedModel, Vec<MetricsReport>, Vec<usize>, Vec<usize>)> {
    let split = make_splits(&data.records, 2, seed, SplitMode::Holdout { country: country.into() })?;
    let train = split.indices_in(&data.records, 0);
    let test = split.indices_in(&data.records, 1);
    let mut rng = RngState::new(seed).derive(0x401d);
    let (fit, val) = split_validation(&data.records, &train, cfg.val_fraction, &mut rng);
    let adam = AdamConfig {
        weight_decay: cfg.holdout_weight_decay,
        ..cfg.adam
    };
    let fitted = train_model(cfg, data, &fit, adam, &mut rng).context(|| format!("training without {country}"))?;
    let in_sample = if val.is_empty() {
        Vec::new()
    } else {
        let s = predict_scores(&fitted, data, &val, &cfg.outcomes)?;
        let rows = prediction_rows(data, &val, &cfg.outcomes, &s, 0);
        reports_from_rows(&rows, &cfg.outcome_names(), cfg.threshold, cfg.aggregation)?
    };
    Ok((fitted, in_sample, train, test))
}

/// Trains on every other country (with the stronger holdout weight decay)
/// and evaluates only on `country`.
pub fn run_holdout(cfg: &ExperimentConfig, data: &LoadedData, seed: u64, dir: Option<&Path>) -> Result<HoldoutRun> {
    let country = country_of(cfg)?;
    let (fitted, in_sample, train, test) = train_without_country(cfg, data, country, seed)?;
    let scores = predict_scores(&fitted, data, &test, &cfg.outcomes)?;
    let rows = prediction_rows(data, &test, &cfg.outcomes, &scores, 1);
    let reports = reports_from_rows(&rows, &cfg.outcome_names(), cfg.threshold, cfg.aggregation)?;
    let mut checkpoints = Vec::new();
    if let Some(d) = dir {
        std::fs::create_dir_all(d.join("checkpoints"))?;
        let path = d.join("checkpoints").join("holdout.gick");
        save_checkpoint(&fitted.checkpoint(&[("holdout_country", country.into())]), &path)?;
        checkpoints.push(path);
        save_metrics(d.join("in_sample_metrics.csv"), &in_sample)?;
    }
    let notes = vec![format!("held-out country {country}")];
    let holdout = finish_run(cfg, "holdout", seed, dir, reports, rows, checkpoints, &notes)?;
    Ok(HoldoutRun {
        fitted,
        in_sample,
        holdout,
        train,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub fraction: f64,
    pub outcome: String,
    pub auroc: Option<f64>,
    pub finetune_records: usize,
    pub test_records: usize,
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub in_sample: Vec<MetricsReport>,
    pub rows: Vec<SweepRow>,
}

/// Fine-tunes a fresh logistic head on frozen features for each fraction
/// of the held-out country and evaluates on the rest of that country.
/// Fraction 0 keeps the base head.
pub fn run_finetune_sweep(cfg: &ExperimentConfig, data: &LoadedData, seed: u64, dir: Option<&Path>) -> Result<SweepRun> {
    let country = country_of(cfg)?;
    let (fitted, in_sample, _, _) = train_without_country(cfg, data, country, seed)?;
    let stratify = cfg.outcomes.first().copied();
    let mut sweep = Vec::new();
    let mut all_rows = Vec::new();
    for (fi, &fraction) in cfg.fractions.iter().enumerate() {
        let mode = SplitMode::Fraction {
            country: country.into(),
            fraction,
            stratify_by: stratify,
        };
        let split = make_splits(&data.records, 3, seed, mode)?;
        let tune = split.indices_in(&data.records, FINETUNE);
        let test = split.indices_in(&data.records, HELD_OUT_TEST);
        let mut scores = predict_scores(&fitted, data, &test, &cfg.outcomes)?;
        if !tune.is_empty() {
            let ft = extract_features(&fitted, data, &tune)?;
            let fx = extract_features(&fitted, data, &test)?;
            for (k, &o) in cfg.outcomes.iter().enumerate() {
                let (x, y): (Vec<Vec<f64>>, Vec<bool>) = tune
                    .iter()
                    .zip(&ft)
                    .filter_map(|(&i, f)| data.records[i].outcomes[o].map(|y| (f.clone(), y)))
                    .unzip();
                match fit_logreg_fixed(&x, &y, cfg.finetune_l2) {
                    Ok(head) => {
                        for (row, f) in scores.iter_mut().zip(&fx) {
                            row[k] = head.predict(f);
                        }
                    }
                    Err(Error::Degenerate(msg)) => {
                        warn!("fraction {fraction}, outcome {}: {msg}; keeping the base head", OUTCOMES[o]);
                    }
                    Err(e) => return Err(e),
                }
            }
        }
        let rows = prediction_rows(data, &test, &cfg.outcomes, &scores, fi);
        for &name in &cfg.outcome_names() {
            let (s, y): (Vec<f64>, Vec<bool>) = rows
                .iter()
                .filter(|r| r.outcome == name)
                .filter_map(|r| r.label.map(|y| (r.score, y)))
                .unzip();
            let a = match auroc(&s, &y) {
                Ok(a) => Some(a),
                Err(Error::Degenerate(_)) | Err(Error::InvalidArgument(_)) => {
                    warn!("fraction {fraction}, outcome {name}: AUROC undefined");
                    None
                }
                Err(e) => return Err(e),
            };
            sweep.push(SweepRow {
                fraction,
                outcome: name.to_string(),
                auroc: a,
                finetune_records: tune.len(),
                test_records: test.len(),
            });
        }
        all_rows.extend(rows);
    }
    if let Some(d) = dir {
        std::fs::create_dir_all(d)?;
        let mut text = String::from("fraction,outcome,auroc,finetune_records,test_records\n");
        for r in &sweep {
            let a = r.auroc.map_or("NA".into(), |v| format!("{v:.6}"));
            text.push_str(&format!("{:.1},{},{a},{},{}\n", r.fraction, r.outcome, r.finetune_records, r.test_records));
        }
        std::fs::write(d.join("sweep.csv"), text)?;
        save_metrics(d.join("in_sample_metrics.csv"), &in_sample)?;
        save_predictions(d.join(PREDICTIONS_FILE), &all_rows)?;
        let notes = vec![format!("held-out country {country}"), "fold column indexes the fraction list".into()];
        write_run_manifest(d, "finetune-sweep", &cfg.config_hash(), seed, &cfg.canonical(), &notes)?;
    }
    Ok(SweepRun { in_sample, rows: sweep })
}

/// Checks that every surveyed geocode resolves to imagery of the configured
/// source. Returns `(records, geocodes, bands)`.
pub fn ingest_check(cfg: &ExperimentConfig) -> Result<(usize, usize, usize)> {
    let data = load_data(cfg)?;
    for r in &data.records {
        r.validate()?;
    }
    if let Some(b) = cfg.source.bands() {
        let found = data.bands()?;
        if found != b {
            return Err(Error::BandMismatch {
                source_name: cfg.source.name(),
                expected: b,
                found,
            });
        }
    }
    let side = data.patch_side()?;
    if let Some(c) = cfg.crop {
        if c > side {
            return Err(Error::Data(format!("crop {c} exceeds the smallest patch side {side}")));
        }
    }
    Ok((data.records.len(), data.patches.len(), data.bands()?))
}
