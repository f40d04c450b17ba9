//! CKPT1 named-tensor checkpoint format.
//!
//! Layout (little-endian): magic "CKPT", u16 version = 1, u32 tensor count,
//! then per tensor: u16 name length, name bytes, u8 dtype (0 = f32),
//! u8 rank, u32 dims, raw f32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const CKPT_MAGIC: &[u8; 4] = b"CKPT";
pub const CKPT_VERSION: u16 = 1;
const DTYPE_F32: u8 = 0;

/// Write named tensors in the given order; values are stored as f32.
pub fn write_ckpt1<E: Scalar, W: Write>(mut w: W, entries: &[(String, &Tensor<E>)]) -> Result<()> {
    w.write_all(CKPT_MAGIC)?;
    w.write_u16::<LittleEndian>(CKPT_VERSION)?;
    w.write_u32::<LittleEndian>(entries.len() as u32)?;
    for (name, tensor) in entries {
        let bytes = name.as_bytes();
        w.write_u16::<LittleEndian>(bytes.len() as u16)?;
        w.write_all(bytes)?;
        w.write_u8(DTYPE_F32)?;
        w.write_u8(tensor.shape().len() as u8)?;
        for &d in tensor.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for v in tensor.data() {
            w.write_f32::<LittleEndian>(v.to_f64_val() as f32)?;
        }
    }
    Ok(())
}

pub fn read_ckpt1<R: Read>(mut r: R) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Format(format!("bad CKPT1 magic {:?}", magic)));
    }
    let version = r.read_u16::<LittleEndian>()?;
    if version != CKPT_VERSION {
        return Err(Error::Format(format!("unsupported CKPT1 version {}", version)));
    }
    let count = r.read_u32::<LittleEndian>()?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.read_u16::<LittleEndian>()? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let dtype = r.read_u8()?;
        if dtype != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype {} for '{}'", dtype, name)));
        }
        let rank = r.read_u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(r.read_f32::<LittleEndian>()?);
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn write_ckpt1_file<E: Scalar>(path: &Path, entries: &[(String, &Tensor<E>)]) -> Result<()> {
    write_ckpt1(BufWriter::new(File::create(path)?), entries)
}

pub fn read_ckpt1_file(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    read_ckpt1(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_values() {
        let a = Tensor::<f32>::from_fn(&[2, 3], |i| i as f32 * 0.5 - 1.0);
        let b = Tensor::<f32>::from_fn(&[4], |i| -(i as f32));
        let scalar = Tensor::<f32>::scalar(7.25);
        let entries = vec![
            ("enc0.wx.f".to_string(), &a),
            ("enc0.b.f".to_string(), &b),
            ("head.scale".to_string(), &scalar),
        ];
        let mut buf = Vec::new();
        write_ckpt1(&mut buf, &entries).unwrap();
        let back = read_ckpt1(&buf[..]).unwrap();
        assert_eq!(back.len(), 3);
        for ((name, tensor), (bname, btensor)) in entries.iter().zip(&back) {
            assert_eq!(name, bname);
            assert_eq!(tensor.shape(), btensor.shape());
            assert_eq!(tensor.data(), btensor.data());
        }
        // write -> read -> write is a fixed point.
        let refs: Vec<(String, &Tensor<f32>)> =
            back.iter().map(|(n, t)| (n.clone(), t)).collect();
        let mut buf2 = Vec::new();
        write_ckpt1(&mut buf2, &refs).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        assert!(matches!(read_ckpt1(&b"NOPE\x01\x00\x00\x00\x00\x00"[..]), Err(Error::Format(_))));
        let mut buf = Vec::new();
        write_ckpt1::<f32, _>(&mut buf, &[]).unwrap();
        buf[4] = 9; // corrupt version
        assert!(matches!(read_ckpt1(&buf[..]), Err(Error::Format(_))));
    }

    #[test]
    fn f64_tensors_store_as_f32() {
        let t = Tensor::<f64>::from_fn(&[3], |i| i as f64 + 0.125);
        let entries = vec![("x".to_string(), &t)];
        let mut buf = Vec::new();
        write_ckpt1(&mut buf, &entries).unwrap();
        let back = read_ckpt1(&buf[..]).unwrap();
        assert_eq!(back[0].1.data(), &[0.125f32, 1.125, 2.125]);
    }
}
