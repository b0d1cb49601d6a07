//! Binary checkpoint: magic, version, then named little-endian `f32` arrays.

use std::io::{Read, Write};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VSCANCKP";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_checkpoint(w: &mut impl Write, arrays: &[NamedArray]) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, arrays.len() as u32)?;
    for a in arrays {
        put_u32(w, a.name.len() as u32)?;
        w.write_all(a.name.as_bytes())?;
        put_u32(w, a.shape.len() as u32)?;
        for &d in &a.shape {
            put_u32(w, d as u32)?;
        }
        for v in &a.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Vec<NamedArray>> {
    let bad = |e: std::io::Error| Error::invalid(format!("truncated checkpoint: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(bad)?;
    if &magic != MAGIC {
        return Err(Error::invalid("not a checkpoint file"));
    }
    let version = get_u32(r).map_err(bad)?;
    if version != VERSION {
        return Err(Error::invalid(format!("unsupported checkpoint version {version}")));
    }
    let count = get_u32(r).map_err(bad)?;
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = get_u32(r).map_err(bad)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(bad)?;
        let name = String::from_utf8(name).map_err(|_| Error::invalid("checkpoint name is not UTF-8"))?;
        let ndim = get_u32(r).map_err(bad)? as usize;
        let shape = (0..ndim)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(bad)?;
        let n: usize = shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes).map_err(bad)?;
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push(NamedArray { name, shape, values });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let arrays = vec![
            NamedArray {
                name: "a.weight".into(),
                shape: vec![2, 3],
                values: vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE, 0.0, 7.0],
            },
            NamedArray {
                name: "a.bias".into(),
                shape: vec![2],
                values: vec![0.5, -0.5],
            },
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &arrays).unwrap();
        assert_eq!(read_checkpoint(&mut buf.as_slice()).unwrap(), arrays);
    }

    #[test]
    fn rejects_garbage_and_truncation() {
        assert!(read_checkpoint(&mut &b"nonsense-bytes"[..]).is_err());
        let mut buf = Vec::new();
        let a = NamedArray {
            name: "x".into(),
            shape: vec![4],
            values: vec![1.0; 4],
        };
        write_checkpoint(&mut buf, &[a]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(read_checkpoint(&mut buf.as_slice()).is_err());
    }
}
