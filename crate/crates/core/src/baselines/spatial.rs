use crate::error::{Error, Result};

pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// Great-circle distance between two WGS84 points given in degrees.
pub fn haversine_km(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dp = p2 - p1;
    let dl = (lon2 - lon1).to_radians();
    let a = (dp / 2.0).sin().powi(2) + p1.cos() * p2.cos() * (dl / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * a.sqrt().min(1.0).asin()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialPoint {
    pub geocode: String,
    pub lat: f64,
    pub lon: f64,
    pub label: bool,
}

/// Label of the nearest training point by haversine distance. Exact
/// distance ties go to the lexicographically smallest geocode.
pub fn nearest_neighbor_predict(train: &[SpatialPoint], lat: f64, lon: f64) -> Result<bool> {
    let mut best: Option<(f64, &SpatialPoint)> = None;
    for p in train {
        let d = haversine_km(lat, lon, p.lat, p.lon);
        let better = match best {
            None => true,
            Some((bd, bp)) => d < bd || (d == bd && p.geocode < bp.geocode),
        };
        if better {
            best = Some((d, p));
        }
    }
    best.map(|(_, p)| p.label)
        .ok_or_else(|| Error::InvalidArgument("nearest neighbor needs training points".into()))
}
