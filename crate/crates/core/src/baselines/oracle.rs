use super::logreg::{logreg_fit, LogRegModel, DEFAULT_L2_GRID};
use crate::data::{SurveyRecord, OUTCOMES};
use crate::error::{Error, Result};

const N: usize = OUTCOMES.len();

/// Predictors for `target`: for every other outcome its value (missing as 0)
/// followed by a missingness indicator. Outcome `target` is never read.
pub fn oracle_features(record: &SurveyRecord, target: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(2 * (N - 1));
    for (j, v) in record.outcomes.iter().enumerate() {
        if j == target {
            continue;
        }
        f.push(if *v == Some(true) { 1.0 } else { 0.0 });
        f.push(if v.is_none() { 1.0 } else { 0.0 });
    }
    f
}

/// Logistic model of one outcome given all the others.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    pub target: usize,
    pub model: LogRegModel,
}

impl OracleModel {
    pub fn predict(&self, record: &SurveyRecord) -> f64 {
        self.model.predict(&oracle_features(record, self.target))
    }

    /// Raw-scale weights on each other outcome's value, indexed by outcome
    /// (0 on the diagonal), and the bias for a fully observed record.
    pub fn value_weights(&self) -> ([f64; N], f64) {
        let s = &self.model.standardizer;
        let mut w = [0.0; N];
        let mut bias = self.model.bias;
        for (k, (&wk, (&m, &sd))) in self.model.weights.iter().zip(s.mean.iter().zip(&s.std)).enumerate() {
            bias -= wk * m / sd;
            if k % 2 == 0 {
                let j = k / 2;
                w[if j >= self.target { j + 1 } else { j }] = wk / sd;
            }
        }
        (w, bias)
    }
}

/// Fits outcome `target` from the other outcomes on the given records,
/// skipping those where the target itself is missing.
pub fn oracle_fit(records: &[&SurveyRecord], target: usize, seed: u64) -> Result<OracleModel> {
    if target >= N {
        return Err(Error::InvalidArgument(format!("outcome index {target} is out of range")));
    }
    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut groups = Vec::new();
    for r in records {
        if let Some(v) = r.outcomes[target] {
            x.push(oracle_features(r, target));
            y.push(v);
            groups.push(r.geocode.clone());
        }
    }
    let (model, _) = logreg_fit(&x, &y, &groups, &DEFAULT_L2_GRID, 5, seed)
        .map_err(|e| match e {
            Error::Degenerate(m) => Error::Degenerate(format!("oracle target {}: {m}", OUTCOMES[target])),
            e => e,
        })?;
    Ok(OracleModel { target, model })
}

/// `W[i][j]` predicts outcome `i` from outcome `j`; row `i` has zero weight on
/// itself by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleWeights {
    pub w: [[f64; N]; N],
    pub bias: [f64; N],
}

impl OracleWeights {
    pub fn fit(records: &[&SurveyRecord], seed: u64) -> Result<Self> {
        let mut w = [[0.0; N]; N];
        let mut bias = [0.0; N];
        for i in 0..N {
            let (row, b) = oracle_fit(records, i, seed)?.value_weights();
            w[i] = row;
            bias[i] = b;
        }
        Ok(Self { w, bias })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::split_validation;
    use crate::metrics::auroc;
    use crate::rng::RngState;
    use crate::tensor::sigmoid;

    fn record(i: usize, outcomes: [Option<bool>; N]) -> SurveyRecord {
        SurveyRecord {
            geocode: format!("G{i:05}"),
            lat: 0.0,
            lon: 0.0,
            country: "Uganda".into(),
            urban: None,
            outcomes,
        }
    }

    fn split(records: &[SurveyRecord], seed: u64) -> (Vec<&SurveyRecord>, Vec<&SurveyRecord>) {
        let all: Vec<usize> = (0..records.len()).collect();
        let (tr, te) = split_validation(records, &all, 0.2, &mut RngState::new(seed));
        (tr.iter().map(|&i| &records[i]).collect(), te.iter().map(|&i| &records[i]).collect())
    }

    fn eval(m: &OracleModel, test: &[&SurveyRecord]) -> f64 {
        let s: Vec<f64> = test.iter().map(|r| m.predict(r)).collect();
        let y: Vec<bool> = test.iter().map(|r| r.outcomes[m.target].unwrap()).collect();
        auroc(&s, &y).unwrap()
    }

    fn random_records(n: usize, rng: &mut RngState) -> Vec<SurveyRecord> {
        (0..n)
            .map(|i| record(i, std::array::from_fn(|_| Some(rng.bernoulli(0.5)))))
            .collect()
    }

    #[test]
    fn features_skip_target() {
        let mut o = [Some(false); N];
        o[3] = Some(true);
        o[5] = None;
        let f = oracle_features(&record(0, o), 3);
        assert_eq!(f.len(), 20);
        assert_eq!(f[6..8], [0.0, 0.0]); // outcome 4 now sits at pair 3
        assert_eq!(f[8..10], [0.0, 1.0]);
        assert!(f.iter().step_by(2).all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_outcome_is_perfect() {
        let mut rng = RngState::new(1);
        let mut recs = random_records(300, &mut rng);
        for r in &mut recs {
            r.outcomes[2] = r.outcomes[7];
        }
        let (tr, te) = split(&recs, 2);
        let m = oracle_fit(&tr, 2, 3).unwrap();
        assert_eq!(eval(&m, &te), 1.0);
    }

    #[test]
    fn bayes_fixture() {
        let mut rng = RngState::new(7);
        let mut recs = random_records(4000, &mut rng);
        let post = |r: &SurveyRecord| {
            let x = |j: usize| r.outcomes[j].unwrap() as u8 as f64;
            sigmoid(-0.8 + 1.2 * x(1) - 0.9 * x(4) + 0.6 * x(9))
        };
        for r in &mut recs {
            r.outcomes[0] = Some(rng.bernoulli(post(r)));
        }
        let (tr, te) = split(&recs, 8);
        let m = oracle_fit(&tr, 0, 9).unwrap();
        let bayes: Vec<f64> = te.iter().map(|r| post(r)).collect();
        let y: Vec<bool> = te.iter().map(|r| r.outcomes[0].unwrap()).collect();
        let b = auroc(&bayes, &y).unwrap();
        let a = eval(&m, &te);
        assert!((a - b).abs() < 0.03, "oracle {a} vs bayes {b}");
    }

    #[test]
    fn independent_target_is_null() {
        let mut total = 0.0;
        let mut inside = 0;
        for t in 0..100 {
            let mut rng = RngState::new(100 + t);
            let recs = random_records(500, &mut rng);
            let (tr, te) = split(&recs, t);
            let a = eval(&oracle_fit(&tr, 6, t).unwrap(), &te);
            total += a;
            inside += (0.4..=0.6).contains(&a) as usize;
        }
        assert!((0.45..=0.55).contains(&(total / 100.0)));
        assert!(inside >= 90, "{inside} of 100 trials inside [0.4, 0.6]");
    }

    #[test]
    fn correlated_pair_has_positive_weights() {
        let mut rng = RngState::new(3);
        let mut recs = random_records(1000, &mut rng);
        for r in &mut recs {
            let a = r.outcomes[1].unwrap();
            r.outcomes[8] = Some(if rng.bernoulli(0.8) { a } else { !a });
        }
        let all: Vec<&SurveyRecord> = recs.iter().collect();
        let (w1, _) = oracle_fit(&all, 1, 1).unwrap().value_weights();
        let (w8, _) = oracle_fit(&all, 8, 1).unwrap().value_weights();
        assert!(w1[8] > 0.0 && w8[1] > 0.0);
        assert_eq!(w1[1], 0.0);
    }

    #[test]
    fn degenerate_target_errors() {
        let mut rng = RngState::new(3);
        let mut recs = random_records(50, &mut rng);
        for r in &mut recs {
            r.outcomes[0] = Some(true);
        }
        let all: Vec<&SurveyRecord> = recs.iter().collect();
        assert!(matches!(oracle_fit(&all, 0, 1), Err(Error::Degenerate(_))));
    }
}
