use std::io::{Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result, ResultExt};
use crate::metrics::{write_metrics_csv, MetricsReport};

pub const PREDICTIONS_HEADER: [&str; 8] = ["geocode", "lat", "lon", "outcome", "score", "label", "fold", "record"];
pub const METRICS_FILE: &str = "metrics.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const RUN_MANIFEST_FILE: &str = "manifest.txt";

/// One test prediction. `record` indexes the survey so that several
/// records sharing a geocode stay distinct.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub geocode: String,
    pub lat: f64,
    pub lon: f64,
    pub outcome: String,
    pub score: f64,
    pub label: Option<bool>,
    pub fold: usize,
    pub record: usize,
}

pub fn write_predictions<W: Write>(writer: W, rows: &[PredictionRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(PREDICTIONS_HEADER)?;
    for r in rows {
        w.write_record([
            r.geocode.clone(),
            format!("{:.6}", r.lat),
            format!("{:.6}", r.lon),
            r.outcome.clone(),
            format!("{:.6}", r.score),
            match r.label {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => "NA".into(),
            },
            r.fold.to_string(),
            r.record.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_predictions<R: Read>(reader: R, file: &str) -> Result<Vec<PredictionRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != PREDICTIONS_HEADER {
        return Err(Error::Parse {
            file: file.into(),
            line: 1,
            msg: format!("expected header {}", PREDICTIONS_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i as u64 + 2;
        let err = |msg: String| Error::Parse {
            file: file.into(),
            line,
            msg,
        };
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad {} {:?}", PREDICTIONS_HEADER[k], &rec[k])))
        };
        let int = |k: usize| -> Result<usize> {
            rec[k]
                .trim()
                .parse()
                .map_err(|_| err(format!("bad {} {:?}", PREDICTIONS_HEADER[k], &rec[k])))
        };
        let label = match rec[5].trim() {
            "1" => Some(true),
            "0" => Some(false),
            "NA" | "" => None,
            other => return Err(err(format!("bad label {other:?}"))),
        };
        rows.push(PredictionRow {
            geocode: rec[0].to_string(),
            lat: num(1)?,
            lon: num(2)?,
            outcome: rec[3].to_string(),
            score: num(4)?,
            label,
            fold: int(6)?,
            record: int(7)?,
        });
    }
    Ok(rows)
}

pub fn save_predictions(path: impl AsRef<Path>, rows: &[PredictionRow]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(Error::from).context(|| format!("creating {}", path.display()))?;
    write_predictions(std::io::BufWriter::new(f), rows)
}

pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    read_predictions(f, &path.display().to_string())
}

pub fn save_metrics(path: impl AsRef<Path>, reports: &[MetricsReport]) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(Error::from).context(|| format!("creating {}", path.display()))?;
    write_metrics_csv(std::io::BufWriter::new(f), reports)
}

/// Text file recording what produced a run directory.
pub fn write_run_manifest(dir: &Path, command: &str, hash: &str, seed: u64, canonical: &str, notes: &[String]) -> Result<()> {
    let mut text = format!("command = {command}\nconfig_hash = {hash}\nseed = {seed}\n");
    for n in notes {
        text.push_str(&format!("note = {n}\n"));
    }
    text.push_str("\n[config]\n");
    text.push_str(canonical);
    std::fs::write(dir.join(RUN_MANIFEST_FILE), text)?;
    Ok(())
}

/// Point features for one outcome's predictions. `predicted` applies the
/// `score >= threshold` rule.
pub fn emit_prediction_geojson(rows: &[PredictionRow], outcome: &str, threshold: f64) -> Result<String> {
    let selected: Vec<&PredictionRow> = rows.iter().filter(|r| r.outcome == outcome).collect();
    if selected.is_empty() {
        return Err(Error::Data(format!("no predictions for outcome `{outcome}`")));
    }
    let bad: Vec<&str> = selected
        .iter()
        .filter(|r| !(r.lat.is_finite() && r.lon.is_finite()) || r.lat.abs() > 90.0 || r.lon.abs() > 180.0)
        .map(|r| r.geocode.as_str())
        .collect();
    if !bad.is_empty() {
        return Err(Error::Data(format!("missing or invalid coordinates for {}", bad.join(", "))));
    }
    let features: Vec<Value> = selected
        .iter()
        .map(|r| {
            json!({
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [r.lon, r.lat]},
                "properties": {
                    "geocode": r.geocode,
                    "outcome": r.outcome,
                    "score": r.score,
                    "label": r.label.map(u8::from),
                    "predicted": u8::from(r.score >= threshold),
                },
            })
        })
        .collect();
    let doc = json!({"type": "FeatureCollection", "features": features});
    Ok(serde_json::to_string_pretty(&doc).map_err(|e| Error::Data(e.to_string()))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(g: &str, lat: f64, score: f64) -> PredictionRow {
        PredictionRow {
            geocode: g.into(),
            lat,
            lon: 32.5,
            outcome: "electricity".into(),
            score,
            label: Some(true),
            fold: 1,
            record: 4,
        }
    }

    #[test]
    fn predictions_roundtrip() {
        let mut rows = vec![row("A", 1.25, 0.5), row("B", -3.0, 0.125)];
        rows[1].label = None;
        let mut buf = Vec::new();
        write_predictions(&mut buf, &rows).unwrap();
        assert!(String::from_utf8_lossy(&buf).starts_with("geocode,lat,lon,outcome,score,label,fold,record\n"));
        assert_eq!(read_predictions(buf.as_slice(), "p").unwrap(), rows);
    }

    #[test]
    fn geojson_points() {
        let rows = vec![row("A", 1.0, 0.73), row("B", 2.0, 0.2)];
        let text = emit_prediction_geojson(&rows, "electricity", 0.5).unwrap();
        let v: Value = serde_json::from_str(&text).unwrap();
        let f = v["features"].as_array().unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f[0]["geometry"]["coordinates"], json!([32.5, 1.0]));
        assert_eq!(f[0]["properties"]["predicted"], 1);
        assert_eq!(f[1]["properties"]["predicted"], 0);
        let mut broken = rows.clone();
        broken[1].lat = f64::NAN;
        let err = emit_prediction_geojson(&broken, "electricity", 0.5).unwrap_err();
        assert!(err.to_string().contains('B'));
    }
}
