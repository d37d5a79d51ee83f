//! Binary checkpoint container.
//!
//! Layout (little endian): magic `F2SCKPT1`, u32 version, u32 config length
//! + config JSON bytes, u32 entry count, then per entry: u16 name length,
//! name, u8 dtype (0 = f64), u8 ndim, ndim x u32 dims, u64 byte length,
//! raw values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use crate::{Array, ParamStore, TensorError};

const MAGIC: &[u8; 8] = b"F2SCKPT1";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 0;

pub struct Checkpoint {
    pub config: String,
    pub tensors: BTreeMap<String, Array>,
}

impl Checkpoint {
    pub fn from_store(config: impl Into<String>, store: &ParamStore) -> Self {
        Self {
            config: config.into(),
            tensors: store.snapshot(),
        }
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<(), TensorError> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.config.len() as u32).to_le_bytes())?;
        w.write_all(self.config.as_bytes())?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, a) in &self.tensors {
            let nb = name.as_bytes();
            if nb.len() > u16::MAX as usize || a.ndim() > u8::MAX as usize {
                return Err(TensorError::Format(format!("entry {name} too large")));
            }
            w.write_all(&(nb.len() as u16).to_le_bytes())?;
            w.write_all(nb)?;
            w.write_all(&[DTYPE_F64, a.ndim() as u8])?;
            for &d in a.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            w.write_all(&((a.numel() * 8) as u64).to_le_bytes())?;
            let mut buf = Vec::with_capacity(a.numel() * 8);
            for v in a.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, TensorError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(TensorError::Format("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(TensorError::Format(format!("unsupported version {version}")));
        }
        let clen = read_u32(r)? as usize;
        let mut cfg = vec![0u8; clen];
        r.read_exact(&mut cfg)?;
        let config =
            String::from_utf8(cfg).map_err(|_| TensorError::Format("config is not utf-8".into()))?;
        let n = read_u32(r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..n {
            let mut b2 = [0u8; 2];
            r.read_exact(&mut b2)?;
            let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| TensorError::Format("entry name is not utf-8".into()))?;
            let mut hdr = [0u8; 2];
            r.read_exact(&mut hdr)?;
            if hdr[0] != DTYPE_F64 {
                return Err(TensorError::Format(format!("{name}: unknown dtype {}", hdr[0])));
            }
            let shape = (0..hdr[1])
                .map(|_| read_u32(r).map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let mut b8 = [0u8; 8];
            r.read_exact(&mut b8)?;
            let bytes = u64::from_le_bytes(b8) as usize;
            let count: usize = shape.iter().product();
            if bytes != count * 8 {
                return Err(TensorError::Format(format!("{name}: {bytes} bytes for {shape:?}")));
            }
            let mut raw = vec![0u8; bytes];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            if tensors.insert(name.clone(), Array::new(&shape, data)).is_some() {
                return Err(TensorError::Format(format!("duplicate entry {name}")));
            }
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<(), TensorError> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, TensorError> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }

    /// Copy the stored values into `store`, checking names and shapes.
    pub fn restore_into(&self, store: &ParamStore) -> Result<(), TensorError> {
        if self.tensors.len() != store.len() {
            return Err(TensorError::Structure(format!(
                "checkpoint has {} entries, model has {}",
                self.tensors.len(),
                store.len()
            )));
        }
        store.load_values(&self.tensors)
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, TensorError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}
