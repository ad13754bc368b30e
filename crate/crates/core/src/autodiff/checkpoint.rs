//! Named parameter sets and their binary checkpoint encoding.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "BATCKPT1"
//! repeated until EOF:
//!     name_len: u32, name: [u8; name_len] (UTF-8)
//!     rank: u32, dims: [u32; rank]
//!     payload: [f64; product(dims)]
//! ```
//!
//! Entries are written in lexicographic name order.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"BATCKPT1";

/// Ordered name → tensor map holding every learned quantity.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: BTreeMap<String, Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn expect(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.params.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for (name, t) in &self.params {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fmt = |msg: String| Error::Format {
            path: origin.to_path_buf(),
            msg,
        };
        let mut cur = Cursor { bytes, pos: 0 };
        if cur.take(8).map_err(&fmt)? != MAGIC {
            return Err(fmt("missing BATCKPT1 magic".into()));
        }
        let mut params = BTreeMap::new();
        while cur.pos < bytes.len() {
            let name_len = cur.u32().map_err(&fmt)? as usize;
            let name = std::str::from_utf8(cur.take(name_len).map_err(&fmt)?)
                .map_err(|e| fmt(format!("parameter name is not UTF-8: {e}")))?
                .to_owned();
            let rank = cur.u32().map_err(&fmt)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u32().map_err(&fmt)? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = cur.take(n * 8).map_err(&fmt)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.insert(name, Tensor::from_parts(shape, data));
        }
        Ok(Self { params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!(
                "truncated at byte {} (wanted {n} more of {})",
                self.pos,
                self.bytes.len()
            )),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_documented_bytes() {
        let mut p = ParamSet::new();
        p.insert("w", Tensor::new(vec![1, 2], vec![1.0, -2.5]).unwrap());
        let b = p.to_bytes();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(&b[8..12], &1u32.to_le_bytes());
        assert_eq!(b[12], b'w');
        assert_eq!(&b[13..17], &2u32.to_le_bytes());
        assert_eq!(&b[17..21], &1u32.to_le_bytes());
        assert_eq!(&b[21..25], &2u32.to_le_bytes());
        assert_eq!(&b[25..33], &1.0f64.to_le_bytes());
        assert_eq!(b.len(), 41);
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let mut p = ParamSet::new();
        p.insert("a", Tensor::vector(vec![1.0, 2.0]));
        let b = p.to_bytes();
        let err = ParamSet::from_bytes(&b[..b.len() - 3], Path::new("x.ckpt")).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
        assert!(ParamSet::from_bytes(b"NOTMAGIC", Path::new("x")).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(
            entries in prop::collection::vec(
                ("[a-z.]{1,12}", prop::collection::vec(any::<f64>(), 0..20)),
                0..6,
            )
        ) {
            let mut p = ParamSet::new();
            for (name, data) in entries {
                p.insert(name, Tensor::vector(data));
            }
            let back = ParamSet::from_bytes(&p.to_bytes(), Path::new("mem")).unwrap();
            prop_assert_eq!(back.len(), p.len());
            for ((n1, t1), (n2, t2)) in p.iter().zip(back.iter()) {
                prop_assert_eq!(n1, n2);
                prop_assert_eq!(t1.shape(), t2.shape());
                let a: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
                let b: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
