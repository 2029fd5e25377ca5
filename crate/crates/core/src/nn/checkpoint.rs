use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use indexmap::IndexMap;

use super::{NetworkConfig, Variant};
use crate::error::{Error, Result, ResultExt};
use crate::tensor::Tensor;

const MAGIC: [u8; 4] = *b"GICK";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;
const FORMAT: &str = "checkpoint";

/// Named tensors plus string metadata, in file order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub entries: IndexMap<String, Tensor<f32>>,
    pub metadata: BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, path: &str) -> Result<&Tensor<f32>> {
        self.entries
            .get(path)
            .ok_or_else(|| Error::MissingEntry(path.to_string()))
    }

    fn meta_usize(&self, key: &str) -> Result<Option<usize>> {
        match self.metadata.get(key) {
            None => Ok(None),
            Some(v) => v.parse().map(Some).map_err(|_| {
                Error::Data(format!("checkpoint metadata `{key}` is not an integer: {v:?}"))
            }),
        }
    }

    /// Network configuration declared by the metadata. Channel and output
    /// counts fall back to the first-conv and head shapes when absent.
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let variant: Variant = self
            .metadata
            .get("variant")
            .ok_or_else(|| Error::MissingEntry("metadata key `variant`".into()))?
            .parse()?;
        let channels = match self.meta_usize("input_channels")? {
            Some(c) => c,
            None => *self.get("conv1.weight")?.shape().get(1).unwrap_or(&0),
        };
        let outputs = match self.meta_usize("num_outputs")? {
            Some(k) => k,
            None => self.get("fc.weight")?.shape()[0],
        };
        let mut config = NetworkConfig::new(variant, channels, outputs);
        if let Some(side) = self.meta_usize("input_size")? {
            config.input_size = side;
        }
        config.validate()?;
        Ok(config)
    }

    /// Checks that every path of the declared layout is present with its
    /// declared shape. Entries outside the layout are allowed.
    pub fn validate(&self) -> Result<NetworkConfig> {
        let config = self.network_config()?;
        for spec in config.param_specs() {
            let t = self.get(&spec.path)?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::CheckpointShape {
                    path: spec.path,
                    expected: spec.shape,
                    found: t.shape().to_vec(),
                });
            }
        }
        Ok(config)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(self.entries.len(), "entry count")?.to_le_bytes());
        for (path, t) in &self.entries {
            put_str(&mut out, path)?;
            out.push(DTYPE_F32);
            let ndim = u8::try_from(t.shape().len())
                .map_err(|_| Error::InvalidArgument(format!("`{path}` has too many axes")))?;
            out.push(ndim);
            for &d in t.shape() {
                out.extend_from_slice(&len_u32(d, "dimension")?.to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&len_u32(self.metadata.len(), "metadata count")?.to_le_bytes());
        for (k, v) in &self.metadata {
            put_str(&mut out, k)?;
            put_str(&mut out, v)?;
        }
        Ok(out)
    }

    /// Parses the binary layout without validating against a variant.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(Error::BadMagic {
                format: FORMAT,
                expected: MAGIC,
                found: magic,
            });
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                format: FORMAT,
                expected: VERSION,
                found: version,
            });
        }
        let count = r.u32()? as usize;
        let mut entries = IndexMap::new();
        for _ in 0..count {
            let path = r.string()?;
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(Error::Data(format!("`{path}` has unsupported dtype {dtype}")));
            }
            let ndim = r.u8()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or(Error::Truncated(FORMAT))?;
            let payload = r.take(n.checked_mul(4).ok_or(Error::Truncated(FORMAT))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| Error::Data(format!("entry `{path}`: {e}")))?;
            if entries.insert(path.clone(), t).is_some() {
                return Err(Error::Data(format!("duplicate checkpoint entry `{path}`")));
            }
        }
        let meta_count = r.u32()? as usize;
        let mut metadata = BTreeMap::new();
        for _ in 0..meta_count {
            let k = r.string()?;
            let v = r.string()?;
            metadata.insert(k, v);
        }
        if r.pos != bytes.len() {
            return Err(Error::TrailingBytes(FORMAT, bytes.len() - r.pos));
        }
        Ok(Self { entries, metadata })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = checkpoint.to_bytes()?;
    fs::write(path, bytes).map_err(Error::from).context(|| format!("writing {}", path.display()))
}

/// Reads a checkpoint and validates it against the variant in its metadata.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::from).context(|| format!("reading {}", path.display()))?;
    let ckpt = Checkpoint::from_bytes(&bytes)?;
    ckpt.validate()?;
    Ok(ckpt)
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} {n} exceeds u32")))
}

fn put_str(out: &mut Vec<u8>, s: &str) -> Result<()> {
    let n = u16::try_from(s.len())
        .map_err(|_| Error::InvalidArgument(format!("string of {} bytes exceeds u16", s.len())))?;
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(s.as_bytes());
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::Truncated(FORMAT))?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::Truncated(FORMAT))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u16()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Data("checkpoint string is not UTF-8".into()))
    }
}
