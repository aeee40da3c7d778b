//! Named parameter storage and its on-disk container.
//!
//! Container layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   "TSMXPARM"
//! version   u32       currently 1
//! meta_len  u32       length of the provenance string
//! meta      bytes     UTF-8, e.g. "tsmixer 0.1.0 seed=7"
//! count     u32       number of tensors
//! count x entry:
//!   name_len u32, name bytes (UTF-8)
//!   rank     u32, then rank x u64 extents
//!   offset   u64      element offset of this tensor in the data section
//! data      f64 values, little-endian, tensors back to back in entry order
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CONTAINER_MAGIC: &[u8; 8] = b"TSMXPARM";
pub const CONTAINER_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let slot = &mut self.tensors[id.0];
        if slot.shape() != value.shape() {
            return Err(Error::dim("ParamStore::set", slot.shape(), value.shape()));
        }
        *slot = value;
        Ok(())
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Overwrites values from `other` by name; shapes must agree and every
    /// local name must be present.
    pub fn load_from(&mut self, other: &[(String, Tensor)]) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let (_, t) = other
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::Container(format!("missing tensor `{name}`")))?;
            if t.shape() != slot.shape() {
                return Err(Error::dim("load_from", slot.shape(), t.shape()));
            }
            *slot = t.clone();
        }
        Ok(())
    }
}

pub fn encode_container<'a>(meta: &str, entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Vec<u8> {
    let entries: Vec<_> = entries.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for (name, t) in &entries {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        offset += t.len() as u64;
    }
    for (_, t) in &entries {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Container(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Container("non UTF-8 string".into()))
    }
}

/// Decodes a container into its provenance string and named tensors.
pub fn decode_container(bytes: &[u8]) -> Result<(String, Vec<(String, Tensor)>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != CONTAINER_MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let version = r.u32()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let meta = r.string()?;
    let count = r.u32()? as usize;
    let mut headers = Vec::with_capacity(count);
    for _ in 0..count {
        let name = r.string()?;
        let rank = r.u32()? as usize;
        if rank == 0 || rank > crate::tensor::MAX_RANK {
            return Err(Error::Container(format!("tensor `{name}` has rank {rank}")));
        }
        let shape = (0..rank)
            .map(|_| r.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64()? as usize;
        headers.push((name, shape, offset));
    }
    let data_start = r.pos;
    let mut out = Vec::with_capacity(count);
    for (name, shape, offset) in headers {
        let n: usize = shape.iter().product();
        let start = data_start + offset * 8;
        let end = start + n * 8;
        if end > bytes.len() {
            return Err(Error::Container(format!("tensor `{name}` runs past end of data")));
        }
        let data = bytes[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok((meta, out))
}

pub fn write_container<'a>(
    path: &Path,
    meta: &str,
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<()> {
    std::fs::write(path, encode_container(meta, entries)).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path) -> Result<(String, Vec<(String, Tensor)>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    proptest! {
        #[test]
        fn container_roundtrip(
            shapes in prop::collection::vec(prop::collection::vec(1usize..5, 1..=3), 0..5),
            seed in any::<u64>(),
        ) {
            let mut rng = crate::rng::SeededRng::new(seed);
            let tensors: Vec<(String, Tensor)> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| (format!("t{i}.weight"), Tensor::random_normal(s, &mut rng).unwrap()))
                .collect();
            let bytes = encode_container("meta", tensors.iter().map(|(n, t)| (n.as_str(), t)));
            let (meta, back) = decode_container(&bytes).unwrap();
            prop_assert_eq!(meta, "meta");
            prop_assert_eq!(back, tensors);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode_container(b"nope").is_err());
        let t = Tensor::ones(&[2, 2]).unwrap();
        let mut bytes = encode_container("", [("w", &t)]);
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(decode_container(&bytes), Err(Error::Container(_))));
    }

    #[test]
    fn load_by_name() {
        let mut store = ParamStore::new();
        let id = store.add("a", Tensor::zeros(&[2]).unwrap());
        let src = vec![("a".to_string(), Tensor::ones(&[2]).unwrap())];
        store.load_from(&src).unwrap();
        assert_eq!(store.get(id).data(), &[1.0, 1.0]);
        let bad = vec![("a".to_string(), Tensor::ones(&[3]).unwrap())];
        assert!(store.load_from(&bad).is_err());
    }
}
