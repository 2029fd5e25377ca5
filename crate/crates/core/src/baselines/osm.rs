use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result, ResultExt};

pub use crate::data::OsmCounts as OsmFeatureRow;

pub const OSM_HEADER: [&str; 3] = ["geocode", "highway_count", "building_count"];

/// `[h, b, ln(1+h), ln(1+b), sqrt(h), sqrt(b), h/(b+1)]`, unstandardized.
pub fn osm_features(row: &OsmFeatureRow) -> [f64; 7] {
    let h = row.highway_count as f64;
    let b = row.building_count as f64;
    [h, b, h.ln_1p(), b.ln_1p(), h.sqrt(), b.sqrt(), h / (b + 1.0)]
}

/// Parses `geocode,highway_count,building_count`; counts must be
/// nonnegative integers and geocodes unique.
pub fn read_osm<R: Read>(reader: R, file: &str) -> Result<BTreeMap<String, OsmFeatureRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header != OSM_HEADER {
        return Err(Error::Parse {
            file: file.into(),
            line: 1,
            msg: format!("expected header {}, found {}", OSM_HEADER.join(","), header.join(",")),
        });
    }
    let mut out = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let line = i as u64 + 2;
        let rec = rec?;
        let parse_err = |msg: String| Error::Parse {
            file: file.into(),
            line,
            msg,
        };
        if rec.len() != 3 {
            return Err(parse_err(format!("expected 3 fields, found {}", rec.len())));
        }
        let count = |k: usize| -> Result<u64> {
            let s = rec[k].trim();
            s.parse::<u64>().map_err(|_| {
                parse_err(format!("{} must be a nonnegative integer, found {s:?}", OSM_HEADER[k]))
            })
        };
        let row = OsmFeatureRow {
            highway_count: count(1)?,
            building_count: count(2)?,
        };
        let g = rec[0].trim().to_string();
        if out.insert(g.clone(), row).is_some() {
            return Err(parse_err(format!("duplicate geocode {g}")));
        }
    }
    Ok(out)
}

pub fn load_osm(path: impl AsRef<Path>) -> Result<BTreeMap<String, OsmFeatureRow>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path)
        .map_err(Error::from)
        .context(|| format!("opening {}", path.display()))?;
    read_osm(f, &path.display().to_string())
}

pub fn write_osm<W: Write>(writer: W, rows: &BTreeMap<String, OsmFeatureRow>) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(OSM_HEADER)?;
    for (g, c) in rows {
        w.write_record([g.as_str(), &c.highway_count.to_string(), &c.building_count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
