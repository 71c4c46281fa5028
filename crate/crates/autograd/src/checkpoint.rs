//! Portable parameter container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! u32  format version (currently 1)
//! u32  record count
//! per record:
//!   u32        name length in bytes, then the UTF-8 name
//!   u32        rank, then rank x u64 dimension sizes
//!   f64 x N    values in row-major order, N = product of dimensions
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::{ParamStore, Tensor};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O: {0}")]
    Io(#[from] io::Error),
    #[error("unsupported checkpoint format version {found} (this build reads version {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint (format version {FORMAT_VERSION}) does not match model: {0}")]
    Mismatch(#[from] crate::TensorError),
}

pub fn write_records<W: Write>(mut w: W, records: &[(String, Tensor)]) -> Result<(), CheckpointError> {
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u32).to_le_bytes())?;
    for (name, t) in records {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let count = read_u32(&mut r)? as usize;
    let mut records = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        records.push((name, t));
    }
    Ok(records)
}

pub fn save<W: Write>(w: W, store: &ParamStore) -> Result<(), CheckpointError> {
    write_records(w, &store.records())
}

/// Loads values into an already-constructed store; names and shapes must match.
pub fn load_into<R: Read>(r: R, store: &mut ParamStore) -> Result<(), CheckpointError> {
    let records = read_records(r)?;
    store.load_values(&records)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.add("a.w", Tensor::new(vec![2, 2], vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap());
        store.add("é", Tensor::scalar(-3.5));
        let mut buf = Vec::new();
        save(&mut buf, &store).unwrap();
        let records = read_records(buf.as_slice()).unwrap();
        for ((n1, t1), (n2, t2)) in records.iter().zip(store.records()) {
            assert_eq!(n1, &n2);
            assert_eq!(t1.shape(), t2.shape());
            let bits1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits1, bits2);
        }
        let mut again = Vec::new();
        write_records(&mut again, &records).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_other_versions_and_shape_mismatch() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&7u32.to_le_bytes());
        buf.extend_from_slice(&0u32.to_le_bytes());
        assert!(matches!(read_records(buf.as_slice()), Err(CheckpointError::Version { found: 7 })));

        let mut store = ParamStore::new();
        store.add("w", Tensor::zeros(&[3]));
        let mut other = ParamStore::new();
        other.add("w", Tensor::zeros(&[4]));
        let mut buf = Vec::new();
        save(&mut buf, &other).unwrap();
        assert!(matches!(load_into(buf.as_slice(), &mut store), Err(CheckpointError::Mismatch(_))));
    }
}
