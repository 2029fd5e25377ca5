use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::{load_raster, RasterPatch, Source};
use crate::error::{Error, Result, ResultExt};

pub const MANIFEST_HEADER: [&str; 4] = ["geocode", "source", "priority", "path"];

/// One raster available for a geocode. Lower priority wins (e.g. an
/// ascending Sentinel pass at 0 ahead of a descending one at 1).
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub geocode: String,
    pub source: Source,
    pub priority: u32,
    pub path: PathBuf,
}

/// Geocode to raster file index. Relative paths resolve against `base`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub base: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read<R: std::io::Read>(reader: R, file: &str, base: PathBuf) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
        if header != MANIFEST_HEADER {
            return Err(Error::Parse {
                file: file.into(),
                line: 1,
                msg: format!("manifest header must be {}", MANIFEST_HEADER.join(",")),
            });
        }
        let mut entries = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let err = |msg: String| Error::Parse {
                file: file.into(),
                line,
                msg,
            };
            let geocode = row[0].trim().to_string();
            if geocode.is_empty() {
                return Err(err("empty geocode".into()));
            }
            let source: Source = row[1].trim().parse().map_err(|e: Error| err(e.to_string()))?;
            let priority = row[2]
                .trim()
                .parse()
                .map_err(|_| err(format!("priority must be a non-negative integer, got {:?}", &row[2])))?;
            entries.push(ManifestEntry {
                geocode,
                source,
                priority,
                path: PathBuf::from(row[3].trim()),
            });
        }
        Ok(Self { base, entries })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::read(f, &path.display().to_string(), base)
    }

    pub fn write<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(MANIFEST_HEADER)?;
        for e in &self.entries {
            w.write_record([
                e.geocode.as_str(),
                e.source.name(),
                &e.priority.to_string(),
                &e.path.to_string_lossy(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(std::fs::File::create(path)?)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base.join(&entry.path)
        }
    }

    /// Candidates for `(geocode, source)` in priority order (ties keep file order).
    pub fn candidates(&self, geocode: &str, source: Source) -> Vec<&ManifestEntry> {
        let mut c: Vec<_> = self
            .entries
            .iter()
            .filter(|e| e.geocode == geocode && e.source == source)
            .collect();
        c.sort_by_key(|e| e.priority);
        c
    }

    /// The highest-priority candidate whose file exists.
    pub fn select(&self, geocode: &str, source: Source) -> Result<&ManifestEntry> {
        self.candidates(geocode, source)
            .into_iter()
            .find(|e| self.resolve(e).is_file())
            .ok_or_else(|| Error::Data(format!("no {source} raster available for geocode {geocode}")))
    }

    pub fn load_patch(&self, geocode: &str, source: Source) -> Result<RasterPatch> {
        let e = self.select(geocode, source)?;
        load_raster(self.resolve(e)).context(|| format!("geocode {geocode}"))
    }

    /// Loads one patch per distinct geocode requested.
    pub fn load_patches<'a>(
        &self,
        geocodes: impl IntoIterator<Item = &'a str>,
        source: Source,
    ) -> Result<BTreeMap<String, RasterPatch>> {
        let mut out = BTreeMap::new();
        for g in geocodes {
            if !out.contains_key(g) {
                out.insert(g.to_string(), self.load_patch(g, source)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::save_raster;

    #[test]
    fn picks_first_available_by_priority() {
        let dir = tempfile::tempdir().unwrap();
        let p = RasterPatch::new(Source::Sentinel1, 5, 2, 2, vec![1.0; 20]).unwrap();
        save_raster(&p, dir.path().join("desc.girp")).unwrap();
        let text = "geocode,source,priority,path\nG1,sentinel1,1,desc.girp\nG1,sentinel1,0,asc.girp\n";
        let m = Manifest::read(text.as_bytes(), "m.csv", dir.path().into()).unwrap();
        assert_eq!(m.candidates("G1", Source::Sentinel1)[0].priority, 0);
        // the ascending file is absent, so the descending one is used
        assert_eq!(m.select("G1", Source::Sentinel1).unwrap().priority, 1);
        save_raster(&p, dir.path().join("asc.girp")).unwrap();
        assert_eq!(m.select("G1", Source::Sentinel1).unwrap().priority, 0);
        assert!(m.select("G2", Source::Sentinel1).is_err());
        assert!(m.select("G1", Source::Landsat8).is_err());
    }

    #[test]
    fn rejects_bad_rows() {
        let text = "geocode,source,priority,path\nG1,modis,0,a.girp\n";
        assert!(matches!(
            Manifest::read(text.as_bytes(), "m.csv", PathBuf::new()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(Manifest::read("a,b\n".as_bytes(), "m.csv", PathBuf::new()).is_err());
    }
}
