use std::collections::{BTreeMap, BTreeSet};

use super::SurveyRecord;
use crate::error::{Error, Result};
use crate::rng::RngState;

#[derive(Debug, Clone, PartialEq)]
pub enum SplitMode {
    /// Folds `0..K`; fold `i` is the test set of round `i`.
    KFold,
    /// Fold 0 trains, fold 1 (every geocode of `country`) tests.
    Holdout { country: String },
    /// Fold 0 is the other countries, fold 1 the fine-tune sample of
    /// `country`, fold 2 its remaining geocodes. The sample is stratified on
    /// `stratify_by` (an outcome index) when both classes are present.
    Fraction {
        country: String,
        fraction: f64,
        stratify_by: Option<usize>,
    },
}

pub const BASE: usize = 0;
pub const FINETUNE: usize = 1;
pub const HELD_OUT_TEST: usize = 2;

/// A fold index per geocode.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitSpec {
    pub k: usize,
    pub seed: u64,
    pub mode: SplitMode,
    pub folds: BTreeMap<String, usize>,
}

impl SplitSpec {
    pub fn fold_of(&self, geocode: &str) -> Option<usize> {
        self.folds.get(geocode).copied()
    }

    /// Record indices whose geocode sits in `fold`.
    pub fn indices_in(&self, records: &[SurveyRecord], fold: usize) -> Vec<usize> {
        (0..records.len())
            .filter(|&i| self.fold_of(&records[i].geocode) == Some(fold))
            .collect()
    }

    /// `(train, test)` record indices for k-fold round `fold`.
    pub fn round(&self, records: &[SurveyRecord], fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..records.len()).partition(|&i| self.fold_of(&records[i].geocode) != Some(fold))
    }
}

fn unique_geocodes<'a>(records: impl IntoIterator<Item = &'a SurveyRecord>) -> Vec<String> {
    let set: BTreeSet<&str> = records.into_iter().map(|r| r.geocode.as_str()).collect();
    set.into_iter().map(str::to_string).collect()
}

fn country_of_geocodes(records: &[SurveyRecord]) -> Result<BTreeMap<&str, &str>> {
    let mut out: BTreeMap<&str, &str> = BTreeMap::new();
    for r in records {
        let c = out.entry(&r.geocode).or_insert(&r.country);
        if *c != r.country {
            return Err(Error::Data(format!(
                "geocode {} spans countries {} and {}",
                r.geocode, c, r.country
            )));
        }
    }
    Ok(out)
}

pub fn make_splits(records: &[SurveyRecord], k: usize, seed: u64, mode: SplitMode) -> Result<SplitSpec> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty record set".into()));
    }
    let mut rng = RngState::new(seed).derive(0x5eed_5917);
    let mut folds = BTreeMap::new();
    let k = match &mode {
        SplitMode::KFold => {
            let mut geo = unique_geocodes(records);
            if k < 2 || k > geo.len() {
                return Err(Error::InvalidArgument(format!(
                    "k = {k} folds for {} geocodes",
                    geo.len()
                )));
            }
            rng.shuffle(&mut geo);
            for (i, g) in geo.into_iter().enumerate() {
                folds.insert(g, i % k);
            }
            k
        }
        SplitMode::Holdout { country } => {
            let owner = country_of_geocodes(records)?;
            if !owner.values().any(|c| c == country) {
                return Err(Error::Data(format!("unknown country `{country}`")));
            }
            for (g, c) in owner {
                folds.insert(g.to_string(), usize::from(c == country));
            }
            2
        }
        SplitMode::Fraction {
            country,
            fraction,
            stratify_by,
        } => {
            if !(0.0..=0.8).contains(fraction) {
                return Err(Error::InvalidArgument(format!(
                    "fine-tune fraction {fraction} outside [0, 0.8]"
                )));
            }
            let owner = country_of_geocodes(records)?;
            if !owner.values().any(|c| c == country) {
                return Err(Error::Data(format!("unknown country `{country}`")));
            }
            let mut held = Vec::new();
            for (g, c) in &owner {
                if c == country {
                    held.push(g.to_string());
                } else {
                    folds.insert(g.to_string(), BASE);
                }
            }
            for g in sample_fraction(records, &held, *fraction, *stratify_by, &mut rng) {
                folds.insert(g, FINETUNE);
            }
            for g in held {
                folds.entry(g).or_insert(HELD_OUT_TEST);
            }
            3
        }
    };
    Ok(SplitSpec { k, seed, mode, folds })
}

/// Label of a geocode: the first observed value among its records.
fn geocode_label(records: &[SurveyRecord], outcome: usize) -> BTreeMap<&str, bool> {
    let mut out = BTreeMap::new();
    for r in records {
        if let Some(v) = r.outcomes[outcome] {
            out.entry(r.geocode.as_str()).or_insert(v);
        }
    }
    out
}

fn take_fraction(mut pool: Vec<String>, fraction: f64, rng: &mut RngState) -> Vec<String> {
    rng.shuffle(&mut pool);
    let n = (fraction * pool.len() as f64).round() as usize;
    pool.truncate(n);
    pool
}

fn sample_fraction(
    records: &[SurveyRecord],
    geocodes: &[String],
    fraction: f64,
    stratify_by: Option<usize>,
    rng: &mut RngState,
) -> Vec<String> {
    if fraction == 0.0 {
        return Vec::new();
    }
    let Some(outcome) = stratify_by else {
        return take_fraction(geocodes.to_vec(), fraction, rng);
    };
    let labels = geocode_label(records, outcome);
    let mut strata: [Vec<String>; 3] = Default::default();
    for g in geocodes {
        let s = match labels.get(g.as_str()) {
            Some(true) => 0,
            Some(false) => 1,
            None => 2,
        };
        strata[s].push(g.clone());
    }
    if strata[0].is_empty() || strata[1].is_empty() {
        return take_fraction(geocodes.to_vec(), fraction, rng);
    }
    strata
        .into_iter()
        .flat_map(|s| take_fraction(s, fraction, rng))
        .collect()
}

/// Geocode-safe split of `subset` (record indices) into `(train, validation)`
/// with roughly `fraction` of the geocodes in validation.
pub fn split_validation(
    records: &[SurveyRecord],
    subset: &[usize],
    fraction: f64,
    rng: &mut RngState,
) -> (Vec<usize>, Vec<usize>) {
    let geo = unique_geocodes(subset.iter().map(|&i| &records[i]));
    let val: BTreeSet<String> = take_fraction(geo, fraction, rng).into_iter().collect();
    subset
        .iter()
        .partition(|&&i| !val.contains(&records[i].geocode))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(geocode: &str, country: &str, y: Option<bool>) -> SurveyRecord {
        let mut outcomes = [None; 11];
        outcomes[0] = y;
        SurveyRecord {
            geocode: geocode.into(),
            lat: 0.0,
            lon: 0.0,
            country: country.into(),
            urban: None,
            outcomes,
        }
    }

    #[test]
    fn hundred_geocodes_five_even_folds() {
        let recs: Vec<_> = (0..100).map(|i| rec(&format!("G{i}"), "UG", None)).collect();
        let s = make_splits(&recs, 5, 3, SplitMode::KFold).unwrap();
        for f in 0..5 {
            assert_eq!(s.indices_in(&recs, f).len(), 20);
        }
    }

    #[test]
    fn shared_geocode_stays_together() {
        let mut recs: Vec<_> = (0..30).map(|i| rec(&format!("G{i}"), "UG", None)).collect();
        recs.push(rec("G1", "UG", None));
        for seed in 0..50 {
            let s = make_splits(&recs, 5, seed, SplitMode::KFold).unwrap();
            let (train, test) = s.round(&recs, s.fold_of("G1").unwrap());
            assert!(test.contains(&1) && test.contains(&30));
            assert!(!train.contains(&1));
        }
    }

    #[test]
    fn holdout_contract() {
        let mut recs: Vec<_> = (0..10).map(|i| rec(&format!("U{i}"), "Uganda", None)).collect();
        recs.extend((0..20).map(|i| rec(&format!("K{i}"), "Kenya", None)));
        let s = make_splits(&recs, 5, 1, SplitMode::Holdout { country: "Uganda".into() }).unwrap();
        let test = s.indices_in(&recs, 1);
        assert_eq!(test, (0..10).collect::<Vec<_>>());
        assert!(make_splits(&recs, 5, 1, SplitMode::Holdout { country: "Chad".into() }).is_err());
        recs.push(rec("U0", "Kenya", None));
        assert!(make_splits(&recs, 5, 1, SplitMode::Holdout { country: "Uganda".into() }).is_err());
    }

    #[test]
    fn fraction_is_stratified() {
        let mut recs: Vec<_> = (0..40).map(|i| rec(&format!("U{i}"), "Uganda", Some(i < 10))).collect();
        recs.extend((0..5).map(|i| rec(&format!("K{i}"), "Kenya", Some(true))));
        let mode = SplitMode::Fraction {
            country: "Uganda".into(),
            fraction: 0.4,
            stratify_by: Some(0),
        };
        let s = make_splits(&recs, 5, 1, mode).unwrap();
        let ft = s.indices_in(&recs, FINETUNE);
        assert_eq!(ft.len(), 16);
        assert_eq!(ft.iter().filter(|&&i| i < 10).count(), 4);
        assert_eq!(s.indices_in(&recs, BASE).len(), 5);
        assert_eq!(s.indices_in(&recs, HELD_OUT_TEST).len(), 24);
        let bad = SplitMode::Fraction {
            country: "Uganda".into(),
            fraction: 0.9,
            stratify_by: None,
        };
        assert!(make_splits(&recs, 5, 1, bad).is_err());
    }

    #[test]
    fn validation_split_is_geocode_safe() {
        let recs: Vec<_> = (0..50).map(|i| rec(&format!("G{}", i / 2), "UG", None)).collect();
        let all: Vec<usize> = (0..50).collect();
        let (tr, va) = split_validation(&recs, &all, 0.2, &mut RngState::new(4));
        assert_eq!(va.len(), 10);
        for &v in &va {
            assert!(tr.iter().all(|&t| recs[t].geocode != recs[v].geocode));
        }
    }
}
