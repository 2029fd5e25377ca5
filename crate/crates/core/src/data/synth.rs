//! Deterministic synthetic survey + imagery datasets with planted signals.
//!
//! Every outcome `o` has a latent score per geocode,
//! `z_o = sqrt(rho) * S + sqrt(1 - rho) * F_o`, where `S` is a shared factor
//! and `F_o` an outcome-specific one. With a positive correlation length both
//! are smooth Gaussian random fields over the map (random Fourier features of
//! a squared-exponential kernel); with length zero they are iid per geocode.
//! Records add a small jitter to their geocode's latent, and labels threshold
//! each latent at its empirical quantile so the positive count is exactly
//! `round(balance * n)`.
//!
//! Imagery plants the latents: band 0 carries `z_electricity` as a uniform
//! intensity offset, band `b` in `1..bands` carries outcome `b`, and outcomes
//! beyond the band count ride on horizontal stripes of band `1 + j % (bands-1)`.
//! Nightlights patches carry `z_electricity`; OSM counts are Poisson with log
//! rates linear in `z_road` (highways) and `z_electricity` (buildings).

use std::collections::BTreeMap;
use std::path::Path;

use super::survey::{outcome_index, save_survey, SurveyRecord, SURVEY_BALANCES};
use super::{save_raster, Manifest, ManifestEntry, RasterPatch, Source};
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const DMSP_SIDE: usize = 9;
pub const VIIRS_SIDE: usize = 16;
const KM_PER_DEGREE: f64 = 111.2;
const FOURIER_FEATURES: usize = 256;
const RECORD_JITTER: f64 = 0.1;
/// Pixel units per unit of latent signal.
const SCALE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct CountryBox {
    pub name: String,
    pub lat: (f64, f64),
    pub lon: (f64, f64),
}

impl CountryBox {
    pub fn new(name: &str, lat: (f64, f64), lon: (f64, f64)) -> Self {
        Self {
            name: name.into(),
            lat,
            lon,
        }
    }
}

pub fn default_countries() -> Vec<CountryBox> {
    vec![
        CountryBox::new("Uganda", (0.0, 3.0), (30.5, 34.0)),
        CountryBox::new("Tanzania", (-8.0, -4.0), (31.0, 37.0)),
        CountryBox::new("Kenya", (-2.0, 2.0), (35.0, 39.0)),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n: usize,
    pub bands: usize,
    pub side: usize,
    pub source: Source,
    pub balances: [f64; 11],
    /// Length scale of the label fields in km; 0 gives iid labels.
    pub correlation_length_km: f64,
    /// Weight of the shared factor in every latent, in `[0, 1)`.
    pub shared_loading: f64,
    /// Planted signal amplitude relative to unit pixel noise.
    pub signal: f64,
    pub pixel_noise: f64,
    pub countries: Vec<CountryBox>,
    /// Country whose band-0 signal is negated.
    pub shifted_country: Option<String>,
    /// `(a, b)`: outcome `b` copies outcome `a`.
    pub duplicate: Option<(usize, usize)>,
    /// Outcome drawn independently of location, the shared factor and imagery.
    pub independent: Option<usize>,
    pub missing_rate: f64,
    /// Probability that a record reuses the previous geocode of its country.
    pub shared_geocode_rate: f64,
    pub urban_fraction: f64,
    /// Makes the urban flag equal to this outcome's label.
    pub urban_equals: Option<usize>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n: 500,
            bands: 6,
            side: 64,
            source: Source::Landsat8,
            balances: SURVEY_BALANCES,
            correlation_length_km: 0.0,
            shared_loading: 0.3,
            signal: 1.0,
            pixel_noise: 1.0,
            countries: default_countries(),
            shifted_country: None,
            duplicate: None,
            independent: None,
            missing_rate: 0.0,
            shared_geocode_rate: 0.1,
            urban_fraction: 0.4,
            urban_equals: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OsmCounts {
    pub highway_count: u64,
    pub building_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub records: Vec<SurveyRecord>,
    /// Keyed by geocode.
    pub patches: BTreeMap<String, RasterPatch>,
    pub dmsp: BTreeMap<String, RasterPatch>,
    pub viirs: BTreeMap<String, RasterPatch>,
    pub osm: BTreeMap<String, OsmCounts>,
    /// Per-record latent scores, indexed like the outcomes.
    pub latents: Vec<[f64; 11]>,
}

/// `f(x) = sqrt(2/M) * sum cos(w_m . x + b_m)` with `w ~ N(0, 1/l^2)`:
/// approximately a unit-variance field with covariance `exp(-d^2 / (2 l^2))`.
struct FourierField {
    w: Vec<(f64, f64)>,
    b: Vec<f64>,
}

impl FourierField {
    fn new(length_km: f64, rng: &mut RngState) -> Self {
        let mut w = Vec::with_capacity(FOURIER_FEATURES);
        let mut b = Vec::with_capacity(FOURIER_FEATURES);
        for _ in 0..FOURIER_FEATURES {
            w.push((rng.normal() / length_km, rng.normal() / length_km));
            b.push(rng.uniform_range(0.0, 2.0 * std::f64::consts::PI));
        }
        Self { w, b }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let s: f64 = self
            .w
            .iter()
            .zip(&self.b)
            .map(|(&(wx, wy), &b)| (wx * x + wy * y + b).cos())
            .sum();
        s * (2.0 / FOURIER_FEATURES as f64).sqrt()
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n < 2 || self.bands == 0 || self.side == 0 || self.countries.is_empty() {
            return bad(format!(
                "synthetic spec needs n >= 2, bands, side and countries: n={} bands={} side={}",
                self.n, self.bands, self.side
            ));
        }
        if let Some(b) = self.source.bands() {
            if b != self.bands {
                return Err(Error::BandMismatch {
                    source_name: self.source.name(),
                    expected: b,
                    found: self.bands,
                });
            }
        }
        for (o, &b) in self.balances.iter().enumerate() {
            let pos = (b * self.n as f64).round() as usize;
            if !(b > 0.0 && b < 1.0) || pos == 0 || pos == self.n {
                return bad(format!(
                    "balance {b} for outcome {o} is infeasible with {} records",
                    self.n
                ));
            }
        }
        if !(0.0..1.0).contains(&self.shared_loading)
            || !(0.0..1.0).contains(&self.missing_rate)
            || !(0.0..1.0).contains(&self.shared_geocode_rate)
            || !(0.0..=1.0).contains(&self.urban_fraction)
            || self.correlation_length_km < 0.0
        {
            return bad("synthetic rates must lie in [0, 1) and lengths be non-negative".into());
        }
        if let Some((a, b)) = self.duplicate {
            if a == b || a >= 11 || b >= 11 {
                return bad(format!("bad duplicate pair ({a}, {b})"));
            }
        }
        if self.independent.is_some_and(|i| i >= 11) {
            return bad("independent outcome index out of range".into());
        }
        if let Some(c) = &self.shifted_country {
            if !self.countries.iter().any(|b| &b.name == c) {
                return bad(format!("shifted country `{c}` is not generated"));
            }
        }
        Ok(())
    }

    /// Named outcome helpers.
    pub fn with_duplicate(mut self, a: &str, b: &str) -> Result<Self> {
        self.duplicate = Some((outcome_index(a)?, outcome_index(b)?));
        Ok(self)
    }

    pub fn with_independent(mut self, o: &str) -> Result<Self> {
        self.independent = Some(outcome_index(o)?);
        Ok(self)
    }
}

fn country_code(name: &str) -> String {
    name.chars().filter(|c| c.is_ascii_alphabetic()).take(2).collect::<String>().to_uppercase()
}

fn quantile_labels(z: &[f64], balance: f64) -> Vec<bool> {
    let n = z.len();
    let pos = (balance * n as f64).round() as usize;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a].total_cmp(&z[b]).then(a.cmp(&b)));
    let mut out = vec![false; n];
    for &i in &order[n - pos..] {
        out[i] = true;
    }
    out
}

pub fn synth_generate(spec: &SynthSpec, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    let root = RngState::new(seed);
    let mut loc_rng = root.derive(1);
    let mut field_rng = root.derive(2);
    let mut jitter_rng = root.derive(3);
    let mut pixel_rng = root.derive(4);
    let mut missing_rng = root.derive(5);
    let mut light_rng = root.derive(6);
    let mut osm_rng = root.derive(7);

    // geocodes and locations
    struct Site {
        geocode: String,
        country: usize,
        lat: f64,
        lon: f64,
    }
    let mut sites: Vec<Site> = Vec::new();
    let mut last_site: Vec<Option<usize>> = vec![None; spec.countries.len()];
    let mut record_site = Vec::with_capacity(spec.n);
    let mut record_loc = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let c = i % spec.countries.len();
        let reuse = loc_rng.bernoulli(spec.shared_geocode_rate);
        let site = match (reuse, last_site[c]) {
            (true, Some(s)) => s,
            _ => {
                let b = &spec.countries[c];
                sites.push(Site {
                    geocode: format!("{}{:05}", country_code(&b.name), sites.len()),
                    country: c,
                    lat: loc_rng.uniform_range(b.lat.0, b.lat.1),
                    lon: loc_rng.uniform_range(b.lon.0, b.lon.1),
                });
                sites.len() - 1
            }
        };
        last_site[c] = Some(site);
        record_site.push(site);
        let s = &sites[site];
        let (dlat, dlon) = if reuse {
            (loc_rng.uniform_range(-0.01, 0.01), loc_rng.uniform_range(-0.01, 0.01))
        } else {
            (0.0, 0.0)
        };
        record_loc.push(((s.lat + dlat).clamp(-90.0, 90.0), (s.lon + dlon).clamp(-180.0, 180.0)));
    }

    // per-site latents: index 0..11 outcomes, 11 the shared factor
    let mut site_z = vec![[0.0f64; 12]; sites.len()];
    if spec.correlation_length_km > 0.0 {
        let fields: Vec<FourierField> = (0..12)
            .map(|_| FourierField::new(spec.correlation_length_km, &mut field_rng))
            .collect();
        for (s, z) in sites.iter().zip(site_z.iter_mut()) {
            let (x, y) = (s.lon * KM_PER_DEGREE, s.lat * KM_PER_DEGREE);
            for (f, v) in fields.iter().zip(z.iter_mut()) {
                *v = f.eval(x, y);
            }
        }
    } else {
        for z in site_z.iter_mut() {
            for v in z.iter_mut() {
                *v = field_rng.normal();
            }
        }
    }
    let (a, b) = (spec.shared_loading.sqrt(), (1.0 - spec.shared_loading).sqrt());
    for z in site_z.iter_mut() {
        let shared = z[11];
        for v in z[..11].iter_mut() {
            *v = a * shared + b * *v;
        }
    }

    // record latents and labels
    let mut latents: Vec<[f64; 11]> = record_site
        .iter()
        .map(|&s| {
            let mut z = [0.0; 11];
            for (o, v) in z.iter_mut().enumerate() {
                *v = site_z[s][o] + RECORD_JITTER * jitter_rng.normal();
            }
            z
        })
        .collect();
    if let Some(o) = spec.independent {
        for z in latents.iter_mut() {
            z[o] = jitter_rng.normal();
        }
    }
    if let Some((src, dst)) = spec.duplicate {
        for z in latents.iter_mut() {
            z[dst] = z[src];
        }
    }
    let mut balances = spec.balances;
    if let Some((src, dst)) = spec.duplicate {
        balances[dst] = balances[src];
    }
    let labels: Vec<Vec<bool>> = (0..11)
        .map(|o| {
            let z: Vec<f64> = latents.iter().map(|l| l[o]).collect();
            quantile_labels(&z, balances[o])
        })
        .collect();
    let shared: Vec<f64> = record_site.iter().map(|&s| site_z[s][11]).collect();
    let urban = match spec.urban_equals {
        Some(o) => labels[o].clone(),
        None => quantile_labels(&shared, spec.urban_fraction),
    };

    let mut records = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let s = &sites[record_site[i]];
        let mut outcomes = [None; 11];
        for (o, slot) in outcomes.iter_mut().enumerate() {
            let drop = spec.missing_rate > 0.0 && missing_rng.bernoulli(spec.missing_rate);
            *slot = (!drop).then_some(labels[o][i]);
        }
        records.push(SurveyRecord {
            geocode: s.geocode.clone(),
            lat: record_loc[i].0,
            lon: record_loc[i].1,
            country: spec.countries[s.country].name.clone(),
            urban: Some(urban[i]),
            outcomes,
        });
    }

    // imagery and auxiliary sources, one per geocode
    let mut patches = BTreeMap::new();
    let mut dmsp = BTreeMap::new();
    let mut viirs = BTreeMap::new();
    let mut osm = BTreeMap::new();
    let plane = spec.side * spec.side;
    for (si, s) in sites.iter().enumerate() {
        let z = &site_z[si];
        let flip = spec.shifted_country.as_deref() == Some(spec.countries[s.country].name.as_str());
        let mut px = Vec::with_capacity(spec.bands * plane);
        for band in 0..spec.bands {
            let base = 1000.0 + 100.0 * band as f64;
            let level = match band {
                0 if flip => -z[0],
                0 => z[0],
                b if b < 11 => z[b],
                _ => 0.0,
            };
            for y in 0..spec.side {
                let mut stripes = 0.0;
                if band > 0 && spec.bands > 1 {
                    for o in spec.bands.max(1)..11 {
                        let j = o - spec.bands;
                        if 1 + j % (spec.bands - 1) == band {
                            let period = 2usize << (j / (spec.bands - 1));
                            let sign = if (y / (period / 2)) % 2 == 0 { 1.0 } else { -1.0 };
                            stripes += sign * z[o];
                        }
                    }
                }
                for _ in 0..spec.side {
                    let v = base
                        + SCALE * (spec.signal * (level + stripes) + spec.pixel_noise * pixel_rng.normal());
                    px.push(v as f32);
                }
            }
        }
        let mut p = RasterPatch::new(spec.source, spec.bands, spec.side, spec.side, px)?;
        p.center_lat = s.lat;
        p.center_lon = s.lon;
        p.meters_per_pixel = 30.0;
        patches.insert(s.geocode.clone(), p);

        for (source, side, noise, mpp, map) in [
            (Source::Dmsp, DMSP_SIDE, 1.0, 1000.0, &mut dmsp),
            (Source::Viirs, VIIRS_SIDE, 0.7, 500.0, &mut viirs),
        ] {
            let px = (0..side * side)
                .map(|_| (10.0 + 5.0 * z[0] + 5.0 * noise * light_rng.normal()) as f32)
                .collect();
            let mut p = RasterPatch::new(source, 1, side, side, px)?;
            p.center_lat = s.lat;
            p.center_lon = s.lon;
            p.meters_per_pixel = mpp;
            map.insert(s.geocode.clone(), p);
        }

        osm.insert(
            s.geocode.clone(),
            OsmCounts {
                highway_count: osm_rng.poisson((1.5 + 0.8 * z[3]).exp()),
                building_count: osm_rng.poisson((3.0 + 0.8 * z[0]).exp()),
            },
        );
    }

    Ok(SynthDataset {
        records,
        patches,
        dmsp,
        viirs,
        osm,
        latents,
    })
}

pub const SURVEY_FILE: &str = "survey.csv";
pub const MANIFEST_FILE: &str = "manifest.csv";
pub const OSM_FILE: &str = "osm.csv";

/// Writes `survey.csv`, `manifest.csv`, `osm.csv` and `rasters/*.girp`.
pub fn write_dataset(ds: &SynthDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir.join("rasters"))?;
    save_survey(dir.join(SURVEY_FILE), &ds.records)?;
    let mut manifest = Manifest {
        base: dir.to_path_buf(),
        entries: Vec::new(),
    };
    for map in [&ds.patches, &ds.dmsp, &ds.viirs] {
        for (g, p) in map {
            let rel = Path::new("rasters").join(format!("{g}_{}.girp", p.source.name()));
            save_raster(p, dir.join(&rel))?;
            manifest.entries.push(ManifestEntry {
                geocode: g.clone(),
                source: p.source,
                priority: 0,
                path: rel,
            });
        }
    }
    manifest.save(dir.join(MANIFEST_FILE))?;
    let f = std::fs::File::create(dir.join(OSM_FILE))?;
    crate::baselines::write_osm(std::io::BufWriter::new(f), &ds.osm)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthSpec {
        SynthSpec {
            n,
            side: 8,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn exact_balances() {
        let ds = synth_generate(&small(1000), 3).unwrap();
        let pos = ds.records.iter().filter(|r| r.outcomes[0] == Some(true)).count();
        assert_eq!(pos, 667);
        for (o, &b) in SURVEY_BALANCES.iter().enumerate() {
            let p = ds.records.iter().filter(|r| r.outcomes[o] == Some(true)).count();
            assert_eq!(p, (b * 1000.0).round() as usize);
        }
    }

    #[test]
    fn deterministic() {
        let a = synth_generate(&small(60), 9).unwrap();
        let b = synth_generate(&small(60), 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, synth_generate(&small(60), 10).unwrap());
    }

    #[test]
    fn band_zero_tracks_electricity() {
        let ds = synth_generate(&small(200), 1).unwrap();
        let mean0 = |g: &str| ds.patches[g].band(0).iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        let (mut pos, mut neg) = (Vec::new(), Vec::new());
        for r in &ds.records {
            let m = mean0(&r.geocode);
            if r.outcomes[0] == Some(true) { pos.push(m) } else { neg.push(m) }
        }
        let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(avg(&pos) > avg(&neg) + 50.0);
    }

    #[test]
    fn shifted_country_negates_band_zero() {
        let mut spec = small(90);
        spec.shifted_country = Some("Kenya".into());
        spec.pixel_noise = 0.0;
        let ds = synth_generate(&spec, 2).unwrap();
        let plain = synth_generate(&SynthSpec { pixel_noise: 0.0, ..small(90) }, 2).unwrap();
        for (g, p) in &ds.patches {
            let q = &plain.patches[g];
            let same = p.band(0) == q.band(0);
            assert_eq!(same, !g.starts_with("KE"), "{g}");
            assert_eq!(p.band(1), q.band(1));
        }
    }

    #[test]
    fn duplicate_and_independent_outcomes() {
        let spec = small(300).with_duplicate("electricity", "bank").unwrap().with_independent("road").unwrap();
        let ds = synth_generate(&spec, 4).unwrap();
        assert!(ds.records.iter().all(|r| r.outcomes[0] == r.outcomes[7]));
    }

    #[test]
    fn geocodes_are_country_local() {
        let ds = synth_generate(&SynthSpec { shared_geocode_rate: 0.5, ..small(120) }, 5).unwrap();
        let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
        for r in &ds.records {
            assert_eq!(*owner.entry(&r.geocode).or_insert(&r.country), r.country);
        }
        assert!(owner.len() < 120);
        assert_eq!(ds.patches.len(), owner.len());
    }

    #[test]
    fn infeasible_balance() {
        let mut spec = small(10);
        spec.balances[3] = 0.01;
        assert!(synth_generate(&spec, 1).is_err());
        spec.balances[3] = 1.0;
        assert!(synth_generate(&spec, 1).is_err());
    }

    #[test]
    fn written_dataset_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_generate(&small(30), 6).unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let recs = crate::data::load_survey(dir.path().join(SURVEY_FILE)).unwrap();
        assert_eq!(recs.len(), 30);
        let m = Manifest::load(dir.path().join(MANIFEST_FILE)).unwrap();
        let g = &recs[0].geocode;
        assert_eq!(&m.load_patch(g, Source::Landsat8).unwrap(), &ds.patches[g]);
        assert_eq!(&m.load_patch(g, Source::Viirs).unwrap(), &ds.viirs[g]);
    }
}
