//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `GTCK`, u32 version, u32 tensor count, then
//! per tensor: u32 name length, UTF-8 name, u32 rank, u64 per dim, f32 data.

use std::io::{Read, Write};

use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"GTCK";
const VERSION: u32 = 1;

pub fn write_tensors<T: Real, W: Write>(
    mut w: W,
    tensors: &[(String, Tensor<T>)],
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &x in t.data() {
            w.write_all(&(x.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Format {
        path: "<checkpoint>".into(),
        line: 0,
        msg: msg.into(),
    }
}

pub fn read_tensors<T: Real, R: Read>(mut r: R) -> Result<Vec<(String, Tensor<T>)>> {
    let io = |e: std::io::Error| bad(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r).map_err(io)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r).map_err(io)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8"))?;
        let rank = read_u32(&mut r).map_err(io)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(io)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io)?;
            data.push(T::of_f64(f32::from_le_bytes(b) as f64));
        }
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_f32_values() {
        let tensors = vec![
            (
                "a".to_string(),
                Tensor::new(&[2, 3], vec![1.0f32, -2.5, 3.25, 0.0, 1e-7, 7.0]).unwrap(),
            ),
            ("layer.0.bias".to_string(), Tensor::scalar(0.125f32)),
        ];
        let mut buf = Vec::new();
        write_tensors(&mut buf, &tensors).unwrap();
        assert_eq!(&buf[..4], b"GTCK");
        let back: Vec<(String, Tensor<f32>)> = read_tensors(buf.as_slice()).unwrap();
        assert_eq!(back, tensors);
    }

    #[test]
    fn rejects_garbage() {
        assert!(read_tensors::<f32, _>(&b"NOPE\x01\0\0\0"[..]).is_err());
        let mut buf = Vec::new();
        write_tensors(&mut buf, &[("x".to_string(), Tensor::scalar(1.0f32))]).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(read_tensors::<f32, _>(buf.as_slice()).is_err());
    }
}
