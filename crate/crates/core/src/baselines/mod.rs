//! Comparison methods: nightlights patches, OSM counts, nearest-neighbor
//! interpolation and a cross-label oracle. All except the spatial
//! interpolator are logistic models behind the [`Classifier`] interface.

mod logreg;
mod nightlights;
mod oracle;
mod osm;
mod spatial;

pub use logreg::{
    cv_auroc, fit_logreg_fixed, group_folds, logreg_fit, newton_logistic, LogRegModel,
    Standardizer, DEFAULT_L2_GRID,
};
pub use nightlights::{nightlights_features, nightlights_side};
pub use oracle::{oracle_features, oracle_fit, OracleModel, OracleWeights};
pub use osm::{load_osm, osm_features, read_osm, write_osm, OsmFeatureRow, OSM_HEADER};
pub use spatial::{haversine_km, nearest_neighbor_predict, SpatialPoint, EARTH_RADIUS_KM};

use crate::error::Result;

/// A binary classifier over fixed-length feature rows. Further model
/// families (SVMs, forests) plug in here.
pub trait Classifier {
    /// `groups` keeps rows that share a location in the same inner fold.
    fn fit(&mut self, x: &[Vec<f64>], y: &[bool], groups: &[String], seed: u64) -> Result<()>;
    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>>;
}

/// Logistic regression with the penalty chosen by inner-fold AUROC.
#[derive(Debug, Clone)]
pub struct LogisticClassifier {
    pub grid: Vec<f64>,
    pub inner_folds: usize,
    pub model: Option<LogRegModel>,
}

impl Default for LogisticClassifier {
    fn default() -> Self {
        Self {
            grid: DEFAULT_L2_GRID.to_vec(),
            inner_folds: 5,
            model: None,
        }
    }
}

impl Classifier for LogisticClassifier {
    fn fit(&mut self, x: &[Vec<f64>], y: &[bool], groups: &[String], seed: u64) -> Result<()> {
        self.model = Some(logreg_fit(x, y, groups, &self.grid, self.inner_folds, seed)?.0);
        Ok(())
    }

    fn predict(&self, x: &[Vec<f64>]) -> Result<Vec<f64>> {
        let m = self
            .model
            .as_ref()
            .ok_or_else(|| crate::error::Error::InvalidArgument("classifier is not fitted".into()))?;
        Ok(m.predict_all(x))
    }
}
