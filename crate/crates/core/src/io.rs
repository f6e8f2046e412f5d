//! Binary tensor containers.
//!
//! A single tensor is stored as an `MMF1` record:
//!
//! ```text
//! magic  b"MMF1"
//! rank   u32 little-endian
//! extent u64 little-endian, `rank` times
//! data   f64 little-endian, product(extents) times, row-major
//! ```
//!
//! A bundle (checkpoints) is `b"MMCK"`, a u32 length-prefixed UTF-8 metadata
//! string, a u32 entry count, then per entry a u32 length-prefixed name
//! followed by one `MMF1` record.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"MMF1";
pub const BUNDLE_MAGIC: &[u8; 4] = b"MMCK";

const MAX_RANK: u32 = 16;

pub fn write_tensor<T: Scalar, W: Write>(w: &mut W, t: &Tensor<T>) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in t.data() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_tensor<T: Scalar, R: Read>(r: &mut R) -> Result<Tensor<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad tensor magic {magic:?}")));
    }
    let rank = read_u32(r)?;
    if rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    let mut count: usize = 1;
    for _ in 0..rank {
        let d = usize::try_from(read_u64(r)?).map_err(|_| Error::Format("extent overflow".into()))?;
        count = count.checked_mul(d).ok_or_else(|| Error::Format("element count overflow".into()))?;
        shape.push(d);
    }
    let mut data = Vec::with_capacity(count.min(1 << 24));
    let mut b = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        data.push(T::lit(f64::from_le_bytes(b)));
    }
    let t = Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?;
    if !t.is_finite() {
        return Err(Error::Format("non-finite value in tensor payload".into()));
    }
    Ok(t)
}

pub fn save_tensor<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_tensor(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_tensor<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    read_tensor(&mut BufReader::new(File::open(path)?))
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Format(e.to_string()))
}

/// Named tensors plus a free-form metadata string.
#[derive(Clone, Debug, PartialEq)]
pub struct Bundle<T> {
    pub meta: String,
    pub tensors: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Bundle<T> {
    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(BUNDLE_MAGIC)?;
        write_str(w, &self.meta)?;
        w.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            write_str(w, name)?;
            write_tensor(w, t)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BUNDLE_MAGIC {
            return Err(Error::Format(format!("bad bundle magic {magic:?}")));
        }
        let meta = read_str(r)?;
        let count = read_u32(r)?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = read_str(r)?;
            tensors.push((name, read_tensor(r)?));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::<f64>::from_f64(&[1, 2], &[1.5, -2.0]).unwrap();
        let mut buf = Vec::new();
        write_tensor(&mut buf, &t).unwrap();
        let mut expected = b"MMF1".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u64.to_le_bytes());
        expected.extend_from_slice(&2u64.to_le_bytes());
        expected.extend_from_slice(&1.5f64.to_le_bytes());
        expected.extend_from_slice(&(-2.0f64).to_le_bytes());
        assert_eq!(buf, expected);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(read_tensor::<f64, _>(&mut &b"MMF2\0\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_tensor(&mut buf, &Tensor::<f64>::ones(&[3])).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_tensor::<f64, _>(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn tensor_round_trip(shape in prop::collection::vec(1usize..4, 0..4), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::<f64>::uniform(&shape, 10.0, &mut rng);
            let mut buf = Vec::new();
            write_tensor(&mut buf, &t).unwrap();
            let back: Tensor<f64> = read_tensor(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }
    }

    #[test]
    fn bundle_round_trip() {
        let b = Bundle {
            meta: "{\"k\":1}".to_string(),
            tensors: vec![
                ("a".to_string(), Tensor::<f64>::eye(2)),
                ("b.c".to_string(), Tensor::<f64>::scalar(3.0)),
            ],
        };
        let mut buf = Vec::new();
        b.write(&mut buf).unwrap();
        assert_eq!(Bundle::<f64>::read(&mut buf.as_slice()).unwrap(), b);
    }
}
