//! Named, flat parameter storage and its binary checkpoint format.
//!
//! Layout of a checkpoint file (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  b"HAMFLOW\0"
//! version  u32      currently 1
//! count    u32      number of tensors
//! count × { name_len u32, name (UTF-8), rows u32, cols u32 }
//! values   f64 × Σ rows·cols, in declaration order, row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayView2, ArrayViewMut2};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HAMFLOW\0";
const VERSION: u32 = 1;

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl ParamInfo {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable parameters of a model, stored contiguously.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    infos: Vec<ParamInfo>,
    values: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a `rows × cols` tensor, filling it from `init` in row-major order.
    pub fn register(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        mut init: impl FnMut() -> f64,
    ) -> Result<ParamId> {
        let name = name.into();
        if self.infos.iter().any(|i| i.name == name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        let offset = self.values.len();
        self.values.extend((0..rows * cols).map(|_| init()));
        self.infos.push(ParamInfo {
            name,
            rows,
            cols,
            offset,
        });
        Ok(ParamId(self.infos.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor_count(&self) -> usize {
        self.infos.len()
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.infos[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.infos.iter().position(|i| i.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> Option<ArrayView2<'_, f64>> {
        let info = self.infos.get(id.0)?;
        let slice = &self.values[info.offset..info.offset + info.len()];
        ArrayView2::from_shape((info.rows, info.cols), slice).ok()
    }

    pub fn tensor(&self, id: ParamId) -> ArrayView2<'_, f64> {
        self.get(id).expect("parameter id from another store")
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let info = &self.infos[id.0];
        let (rows, cols, offset, len) = (info.rows, info.cols, info.offset, info.len());
        ArrayViewMut2::from_shape((rows, cols), &mut self.values[offset..offset + len])
            .expect("shape matches registration")
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.infos.len() as u32).to_le_bytes());
        for info in &self.infos {
            out.extend_from_slice(&(info.name.len() as u32).to_le_bytes());
            out.extend_from_slice(info.name.as_bytes());
            out.extend_from_slice(&(info.rows as u32).to_le_bytes());
            out.extend_from_slice(&(info.cols as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        if cursor.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cursor.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = cursor.u32()? as usize;
        let mut store = ParamStore::new();
        let mut total = 0usize;
        for _ in 0..count {
            let name_len = cursor.u32()? as usize;
            let name = std::str::from_utf8(cursor.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_owned();
            let rows = cursor.u32()? as usize;
            let cols = cursor.u32()? as usize;
            if store.infos.iter().any(|i| i.name == name) {
                return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
            }
            store.infos.push(ParamInfo {
                name,
                rows,
                cols,
                offset: total,
            });
            total = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_add(total))
                .ok_or_else(|| Error::Checkpoint("parameter sizes overflow".into()))?;
        }
        let rest = &bytes[cursor.pos..];
        if rest.len() != total * 8 {
            return Err(Error::Checkpoint(format!(
                "expected {} value bytes, found {}",
                total * 8,
                rest.len()
            )));
        }
        store.values = rest
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        Ok(store)
    }

    /// Writes the checkpoint atomically (temporary file, then rename).
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::from_bytes(&bytes)
    }

    /// Copies values from `other`, which must have an identical layout.
    pub fn assign(&mut self, other: &ParamStore) -> Result<()> {
        if self.infos != other.infos {
            return Err(Error::Checkpoint(
                "checkpoint layout does not match the model".into(),
            ));
        }
        self.values.copy_from_slice(&other.values);
        Ok(())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated header".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
