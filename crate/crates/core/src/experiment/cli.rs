use std::path::{Path, PathBuf};

use log::{info, warn};

use super::artifacts::{emit_prediction_geojson, load_predictions, save_metrics};
use super::config::{resolve_config, ExperimentConfig, CONFIG_KEYS};
use super::runner;
use crate::data::{outcome_index, synth_generate, write_dataset, SynthSpec};
use crate::error::{Error, ErrorClass, Result};

pub const USAGE: &str = "\
usage: infrasight <command> [--config FILE] [--key value ...]

commands:
  synth           write a synthetic dataset      --out DIR --seed N [--n --bands --side --source
                  --correlation-length-km --shifted-country --signal --pixel-noise --missing-rate
                  --shared-geocode-rate --shared-loading --urban-fraction --urban-equals
                  --duplicate A,B --independent O]
  ingest-check    validate survey, manifest and imagery
  train           k-fold network training         --seed N [--out DIR]
  baseline        k-fold baseline                 --kind nightlights|osm|spatial|oracle --seed N
  holdout         train without one country       --country NAME --seed N
  finetune-sweep  holdout plus head fine-tuning   --country NAME --seed N [--fractions 0,0.2,...]
  urban-rural     separate urban and rural runs   --seed N
  export-geojson  prediction map for one outcome  --predictions FILE --outcome NAME --out FILE
  eval            metrics from a prediction table --predictions FILE --out FILE

Every config key can be given as a flag: data, survey, manifest, osm, source, variant,
crop, batch-size, epochs, lr, weight-decay, lr-decay, holdout-weight-decay, outcomes, folds,
threshold, aggregation, pretrained, rgb-slots, hflip, random-crop, val-fraction, patience,
finetune-l2, fractions, country, kind, seed, out.

exit codes: 0 success, 1 usage error, 2 data error, 3 runtime error
";

const SYNTH_KEYS: &[&str] = &[
    "n",
    "bands",
    "side",
    "source",
    "correlation_length_km",
    "shifted_country",
    "signal",
    "pixel_noise",
    "missing_rate",
    "shared_geocode_rate",
    "shared_loading",
    "urban_fraction",
    "urban_equals",
    "duplicate",
    "independent",
    "seed",
    "out",
];

const TABLE_KEYS: &[&str] = &["predictions", "outcome", "outcomes", "threshold", "aggregation", "out"];

const COMMANDS: &[&str] = &[
    "synth",
    "ingest-check",
    "train",
    "baseline",
    "holdout",
    "finetune-sweep",
    "urban-rural",
    "export-geojson",
    "eval",
];

/// Splits `--key value` pairs; keys are normalized to underscores.
fn parse_flags(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let Some(key) = a.strip_prefix("--") else {
            return Err(Error::Usage(format!("unexpected argument `{a}`")));
        };
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::Usage(format!("flag --{key} needs a value")))?;
                (key.to_string(), v.clone())
            }
        };
        out.push((key.replace('-', "_"), value));
    }
    Ok(out)
}

fn check_known(flags: &[(String, String)], allowed: &[&str]) -> Result<()> {
    for (k, _) in flags {
        if !allowed.contains(&k.as_str()) {
            return Err(Error::Usage(format!("unknown flag --{}", k.replace('_', "-"))));
        }
    }
    Ok(())
}

fn flag<'a>(flags: &'a [(String, String)], key: &str) -> Option<&'a str> {
    flags.iter().rev().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

fn parsed<T: std::str::FromStr>(flags: &[(String, String)], key: &str) -> Result<Option<T>> {
    flag(flags, key)
        .map(|v| {
            v.parse()
                .map_err(|_| Error::Usage(format!("bad value for --{}: {v:?}", key.replace('_', "-"))))
        })
        .transpose()
}

fn require<'a>(flags: &'a [(String, String)], key: &str) -> Result<&'a str> {
    flag(flags, key).ok_or_else(|| Error::Usage(format!("missing required flag --{}", key.replace('_', "-"))))
}

/// Runs one command line (without the program name) and returns the exit
/// code. Errors are reported on stderr.
pub fn run_cli(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.class() == ErrorClass::Usage {
                eprintln!("\n{USAGE}");
            }
            e.class().exit_code()
        }
    }
}

fn dispatch(args: &[String]) -> Result<()> {
    let Some(command) = args.first() else {
        return Err(Error::Usage("no command given".into()));
    };
    if command == "--help" || command == "-h" || command == "help" {
        print!("{USAGE}");
        return Ok(());
    }
    if !COMMANDS.contains(&command.as_str()) {
        return Err(Error::Usage(format!("unknown command `{command}`")));
    }
    if args[1..].iter().any(|a| a == "--help" || a == "-h") {
        print!("{USAGE}");
        return Ok(());
    }
    let flags = parse_flags(&args[1..])?;
    match command.as_str() {
        "synth" => synth(&flags),
        "export-geojson" => export_geojson(&flags),
        "eval" => eval(&flags),
        _ => experiment(command, &flags),
    }
}

fn synth(flags: &[(String, String)]) -> Result<()> {
    check_known(flags, SYNTH_KEYS)?;
    let seed: u64 = parsed(flags, "seed")?.ok_or_else(|| Error::Usage("missing required flag --seed".into()))?;
    let out = PathBuf::from(require(flags, "out")?);
    let mut spec = SynthSpec::default();
    if let Some(s) = flag(flags, "source") {
        spec.source = s.parse().map_err(|e: Error| Error::Usage(e.to_string()))?;
        spec.bands = spec.source.bands().unwrap_or(spec.bands);
    }
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = parsed(flags, stringify!($field))? {
                spec.$field = v;
            }
        };
    }
    set!(n);
    set!(bands);
    set!(side);
    set!(correlation_length_km);
    set!(signal);
    set!(pixel_noise);
    set!(missing_rate);
    set!(shared_geocode_rate);
    set!(shared_loading);
    set!(urban_fraction);
    let usage = |e: Error| Error::Usage(e.to_string());
    spec.shifted_country = flag(flags, "shifted_country").map(str::to_string);
    if let Some(o) = flag(flags, "urban_equals") {
        spec.urban_equals = Some(outcome_index(o).map_err(usage)?);
    }
    if let Some(o) = flag(flags, "independent") {
        spec = spec.with_independent(o).map_err(usage)?;
    }
    if let Some(pair) = flag(flags, "duplicate") {
        let (a, b) = pair
            .split_once(',')
            .ok_or_else(|| Error::Usage(format!("--duplicate needs `a,b`, found {pair:?}")))?;
        spec = spec.with_duplicate(a.trim(), b.trim()).map_err(usage)?;
    }
    spec.validate().map_err(usage)?;
    let ds = synth_generate(&spec, seed)?;
    write_dataset(&ds, &out)?;
    let cfg = format!(
        "# synthetic dataset, seed {seed}\ndata = .\nsource = {}\n",
        spec.source.name()
    );
    std::fs::write(out.join("cfg"), cfg)?;
    println!("wrote {} records to {}", ds.records.len(), out.display());
    Ok(())
}

fn experiment(command: &str, flags: &[(String, String)]) -> Result<()> {
    let mut allowed: Vec<&str> = CONFIG_KEYS.to_vec();
    allowed.push("config");
    check_known(flags, &allowed)?;
    let config_path = flag(flags, "config").map(Path::new);
    let overrides: Vec<(String, String)> = flags.iter().filter(|(k, _)| k != "config").cloned().collect();
    let cfg = resolve_config(config_path, &overrides)?;
    if command == "ingest-check" {
        let (records, geocodes, bands) = runner::ingest_check(&cfg)?;
        println!("ok: {records} records, {geocodes} geocodes, {bands} bands of {}", cfg.source.name());
        return Ok(());
    }
    let seed = cfg.require_seed()?;
    let out = default_out(&cfg, command, seed);
    info!("{command}: config {} seed {seed}, writing {}", cfg.config_hash(), out.display());
    match command {
        "train" => {
            let data = runner::load_data(&cfg)?;
            let run = runner::run_train_cv(&cfg, &data, None, seed, Some(&out))?;
            print_reports(&run.reports);
        }
        "baseline" => {
            let kind = cfg
                .kind
                .ok_or_else(|| Error::Usage("missing required flag --kind".into()))?;
            let records = crate::data::load_survey(&cfg.survey)?;
            let run = runner::run_baseline(&cfg, &records, kind, seed, Some(&out))?;
            print_reports(&run.reports);
        }
        "holdout" => {
            let data = runner::load_data(&cfg)?;
            let run = runner::run_holdout(&cfg, &data, seed, Some(&out))?;
            println!("in-sample:");
            print_reports(&run.in_sample);
            println!("held out:");
            print_reports(&run.holdout.reports);
        }
        "finetune-sweep" => {
            let data = runner::load_data(&cfg)?;
            let run = runner::run_finetune_sweep(&cfg, &data, seed, Some(&out))?;
            for r in &run.rows {
                let a = r.auroc.map_or("NA".into(), |v| format!("{v:.4}"));
                println!("{:.1} {} {a}", r.fraction, r.outcome);
            }
        }
        "urban-rural" => {
            let data = runner::load_data(&cfg)?;
            for s in runner::run_urban_rural(&cfg, &data, seed, Some(&out))? {
                println!("{} ({} records):", if s.urban { "urban" } else { "rural" }, s.records);
                print_reports(&s.artifacts.reports);
            }
        }
        other => unreachable!("command {other}"),
    }
    println!("outputs in {}", out.display());
    Ok(())
}

/// `--out`, or `runs/<command>-<hash>-s<seed>` next to the survey file.
fn default_out(cfg: &ExperimentConfig, command: &str, seed: u64) -> PathBuf {
    match &cfg.out {
        Some(o) => o.clone(),
        None => {
            let base = cfg.survey.parent().map(Path::to_path_buf).unwrap_or_default();
            base.join("runs").join(format!("{command}-{}-s{seed}", cfg.config_hash()))
        }
    }
}

fn print_reports(reports: &[crate::metrics::MetricsReport]) {
    for r in reports {
        let a = r.auroc.map_or("NA".into(), |v| format!("{v:.4}"));
        println!("  {:<14} auroc {a}  accuracy {:.4}  n {}", r.outcome, r.accuracy, r.n);
    }
}

fn export_geojson(flags: &[(String, String)]) -> Result<()> {
    check_known(flags, TABLE_KEYS)?;
    let rows = load_predictions(require(flags, "predictions")?)?;
    let outcome = require(flags, "outcome")?;
    outcome_index(outcome).map_err(|e| Error::Usage(e.to_string()))?;
    let threshold = parsed(flags, "threshold")?.unwrap_or(0.5);
    let text = emit_prediction_geojson(&rows, outcome, threshold)?;
    let out = require(flags, "out")?;
    std::fs::write(out, text)?;
    println!("wrote {out}");
    Ok(())
}

fn eval(flags: &[(String, String)]) -> Result<()> {
    check_known(flags, TABLE_KEYS)?;
    let rows = load_predictions(require(flags, "predictions")?)?;
    let threshold = parsed(flags, "threshold")?.unwrap_or(0.5);
    let aggregation = match flag(flags, "aggregation") {
        None | Some("pooled") => crate::metrics::Aggregation::Pooled,
        Some("mean_per_fold") => crate::metrics::Aggregation::MeanPerFold,
        Some(o) => return Err(Error::Usage(format!("unknown aggregation `{o}`"))),
    };
    let mut names: Vec<String> = Vec::new();
    for r in &rows {
        if !names.contains(&r.outcome) {
            names.push(r.outcome.clone());
        }
    }
    if let Some(list) = flag(flags, "outcomes") {
        names = list.split(',').map(|s| s.trim().to_string()).collect();
    }
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    let reports = runner::reports_from_rows(&rows, &refs, threshold, aggregation)?;
    if reports.is_empty() {
        warn!("no labelled rows to evaluate");
    }
    save_metrics(require(flags, "out")?, &reports)?;
    print_reports(&reports);
    Ok(())
}
