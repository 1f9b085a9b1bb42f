//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "NLCK" | u32 version | u32 meta_len | meta bytes (UTF-8)
//! u32 count | count x (u32 name_len | name | u64 rows | u64 cols | rows*cols f64)
//! ```

use ndarray::Array2;

use super::{NumError, Tensor};

const MAGIC: &[u8; 4] = b"NLCK";
const VERSION: u32 = 1;

/// Named tensors plus a free-form metadata string.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
            for x in t.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NumError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NumError::Invalid("checkpoint: bad magic at byte 0".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NumError::Invalid(format!("checkpoint: unsupported version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta_at = r.pos;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| NumError::Invalid(format!("checkpoint: metadata at byte {meta_at} is not UTF-8")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name_at = r.pos;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| NumError::Invalid(format!("checkpoint: name at byte {name_at} is not UTF-8")))?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let n = rows
                .checked_mul(cols)
                .ok_or_else(|| NumError::Invalid(format!("checkpoint: tensor {name} too large")))?;
            let raw = r.take(n.saturating_mul(8))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            let t = Array2::from_shape_vec((rows, cols), data).expect("length checked");
            tensors.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(NumError::Invalid(format!("checkpoint: trailing data at byte {}", r.pos)));
        }
        Ok(Self { meta, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NumError> {
        if self.bytes.len() - self.pos < n {
            return Err(NumError::Invalid(format!(
                "checkpoint: truncated at byte {} (need {n} more bytes)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, NumError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, NumError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_exact() {
        let ck = Checkpoint {
            meta: "{\"kind\":\"gcn\"}".into(),
            tensors: vec![
                ("w1".into(), array![[0.1, -1e-300], [f64::MAX, 3.0]]),
                ("w2".into(), Array2::zeros((0, 4))),
            ],
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.get("w1").unwrap()[[1, 0]], f64::MAX);
    }

    #[test]
    fn truncation_reports_offset() {
        let ck = Checkpoint { meta: String::new(), tensors: vec![("w".into(), array![[1.0, 2.0]])] };
        let bytes = ck.to_bytes();
        let err = Checkpoint::from_bytes(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated at byte"), "{err}");
    }
}
