use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result, ResultExt};
use crate::rng::RngState;

const MAGIC: [u8; 4] = *b"GIRP";
const VERSION: u32 = 1;
const FORMAT: &str = "raster";
const HEADER_LEN: usize = 4 + 4 + 1 + 12 + 16 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    /// Blue, Green, Red, NIR, SWIR1, SWIR2.
    Landsat8,
    /// VV, VH, look angle and two further polarization products.
    Sentinel1,
    Dmsp,
    Viirs,
    Synthetic,
}

impl Source {
    pub fn code(self) -> u8 {
        match self {
            Source::Landsat8 => 0,
            Source::Sentinel1 => 1,
            Source::Dmsp => 2,
            Source::Viirs => 3,
            Source::Synthetic => 4,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => Source::Landsat8,
            1 => Source::Sentinel1,
            2 => Source::Dmsp,
            3 => Source::Viirs,
            4 => Source::Synthetic,
            other => return Err(Error::Data(format!("unknown raster source code {other}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Source::Landsat8 => "landsat8",
            Source::Sentinel1 => "sentinel1",
            Source::Dmsp => "dmsp",
            Source::Viirs => "viirs",
            Source::Synthetic => "synthetic",
        }
    }

    /// Declared band count; `None` for synthetic rasters.
    pub fn bands(self) -> Option<usize> {
        match self {
            Source::Landsat8 => Some(6),
            Source::Sentinel1 => Some(5),
            Source::Dmsp | Source::Viirs => Some(1),
            Source::Synthetic => None,
        }
    }

    /// Band slots that receive pretrained RGB filters, in R, G, B order.
    pub fn default_rgb_slots(self) -> [usize; 3] {
        match self {
            Source::Landsat8 => [2, 1, 0],
            _ => [0, 1, 2],
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "landsat8" => Source::Landsat8,
            "sentinel1" => Source::Sentinel1,
            "dmsp" => Source::Dmsp,
            "viirs" => Source::Viirs,
            "synthetic" => Source::Synthetic,
            other => return Err(Error::Data(format!("unknown raster source `{other}`"))),
        })
    }
}

/// A georeferenced multi-band image, band-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterPatch {
    pub source: Source,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    pub meters_per_pixel: f32,
    pub pixels: Vec<f32>,
}

impl RasterPatch {
    pub fn new(source: Source, bands: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        let p = Self {
            source,
            bands,
            height,
            width,
            center_lat: 0.0,
            center_lon: 0.0,
            meters_per_pixel: 30.0,
            pixels,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Data(format!(
                "raster dimensions must be positive, got {}x{}x{}",
                self.bands, self.height, self.width
            )));
        }
        if let Some(expected) = self.source.bands() {
            if expected != self.bands {
                return Err(Error::BandMismatch {
                    source_name: self.source.name(),
                    expected,
                    found: self.bands,
                });
            }
        }
        if self.pixels.len() != self.bands * self.height * self.width {
            return Err(Error::Data(format!(
                "raster holds {} pixels, dimensions need {}",
                self.pixels.len(),
                self.bands * self.height * self.width
            )));
        }
        Ok(())
    }

    pub fn band(&self, b: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[b * n..(b + 1) * n]
    }

    pub fn at(&self, b: usize, y: usize, x: usize) -> f32 {
        self.pixels[(b * self.height + y) * self.width + x]
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let dim = |v: usize| {
            u32::try_from(v).map_err(|_| Error::InvalidArgument(format!("raster dimension {v} exceeds u32")))
        };
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.pixels.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.source.code());
        for v in [self.bands, self.height, self.width] {
            out.extend_from_slice(&dim(v)?.to_le_bytes());
        }
        out.extend_from_slice(&self.center_lat.to_le_bytes());
        out.extend_from_slice(&self.center_lon.to_le_bytes());
        out.extend_from_slice(&self.meters_per_pixel.to_le_bytes());
        for v in &self.pixels {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 {
            return Err(Error::Truncated(FORMAT));
        }
        let magic: [u8; 4] = bytes[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                format: FORMAT,
                expected: MAGIC,
                found: magic,
            });
        }
        if bytes.len() < 8 {
            return Err(Error::Truncated(FORMAT));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                format: FORMAT,
                expected: VERSION,
                found: version,
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated(FORMAT));
        }
        let source = Source::from_code(bytes[8])?;
        let (bands, height, width) = (u32_at(9) as usize, u32_at(13) as usize, u32_at(17) as usize);
        let center_lat = f64::from_le_bytes(bytes[21..29].try_into().unwrap());
        let center_lon = f64::from_le_bytes(bytes[29..37].try_into().unwrap());
        let meters_per_pixel = f32::from_le_bytes(bytes[37..41].try_into().unwrap());
        if let Some(expected) = source.bands() {
            if expected != bands {
                return Err(Error::BandMismatch {
                    source_name: source.name(),
                    expected,
                    found: bands,
                });
            }
        }
        let payload = bands
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(4))
            .ok_or(Error::Truncated(FORMAT))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() < payload {
            return Err(Error::Truncated(FORMAT));
        }
        if body.len() > payload {
            return Err(Error::TrailingBytes(FORMAT, body.len() - payload));
        }
        let pixels = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let p = Self {
            source,
            bands,
            height,
            width,
            center_lat,
            center_lon,
            meters_per_pixel,
            pixels,
        };
        p.validate()?;
        Ok(p)
    }

    /// Window of `side x side` whose top-left corner is `(top, left)`.
    pub fn crop_at(&self, top: usize, left: usize, side: usize) -> Result<Self> {
        if side == 0 || top + side > self.height || left + side > self.width {
            return Err(Error::InvalidArgument(format!(
                "crop {side}x{side} at ({top},{left}) exceeds {}x{} raster",
                self.height, self.width
            )));
        }
        let mut pixels = Vec::with_capacity(self.bands * side * side);
        for b in 0..self.bands {
            for y in top..top + side {
                let row = (b * self.height + y) * self.width;
                pixels.extend_from_slice(&self.pixels[row + left..row + left + side]);
            }
        }
        Ok(Self {
            height: side,
            width: side,
            pixels,
            ..self.clone()
        })
    }

    /// Offsets of the centered window; an odd margin leaves its extra pixel at
    /// the bottom/right.
    pub fn center_offsets(&self, side: usize) -> Result<(usize, usize)> {
        if side == 0 || side > self.height || side > self.width {
            return Err(Error::InvalidArgument(format!(
                "center crop side {side} exceeds {}x{} raster",
                self.height, self.width
            )));
        }
        Ok(((self.height - side) / 2, (self.width - side) / 2))
    }

    pub fn flipped_horizontal(&self) -> Self {
        let mut out = self.clone();
        for row in out.pixels.chunks_mut(self.width) {
            row.reverse();
        }
        out
    }
}

pub fn center_crop(patch: &RasterPatch, side: usize) -> Result<RasterPatch> {
    let (top, left) = patch.center_offsets(side)?;
    patch.crop_at(top, left, side)
}

/// Uniformly placed `side x side` window.
pub fn random_crop(patch: &RasterPatch, side: usize, rng: &mut RngState) -> Result<RasterPatch> {
    patch.center_offsets(side)?;
    let top = rng.below(patch.height - side + 1);
    let left = rng.below(patch.width - side + 1);
    patch.crop_at(top, left, side)
}

/// Mirrors columns with probability `p`. Exactly one uniform draw is consumed.
pub fn random_hflip(patch: &RasterPatch, rng: &mut RngState, p: f64) -> RasterPatch {
    if rng.bernoulli(p) {
        patch.flipped_horizontal()
    } else {
        patch.clone()
    }
}

pub fn save_raster(patch: &RasterPatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, patch.to_bytes()?)
        .map_err(Error::from)
        .context(|| format!("writing {}", path.display()))
}

pub fn load_raster(path: impl AsRef<Path>) -> Result<RasterPatch> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)
        .map_err(Error::from)
        .context(|| format!("reading {}", path.display()))?;
    RasterPatch::from_bytes(&bytes).context(|| path.display().to_string())
}
