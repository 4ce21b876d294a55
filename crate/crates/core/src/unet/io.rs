//! Binary model file, all little-endian:
//!
//! ```text
//! magic "HSIUNET\0" | u32 version | u32 in_channels | u32 base_filters | u32 depth
//! u64 seed | u64 epochs | u8 has_scaling [ f64 mean × C | f64 std × C ]
//! u32 tensor count | per tensor: u32 rank, u32 dims × rank, f32 values (row major)
//! ```
//!
//! Tensors follow [`UNet::convs`] order, weight then bias for each layer.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array4};

use super::{InputScaling, UNet, UNetModel, UNetSpec};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSIUNET\0";
pub const VERSION: u32 = 1;

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn put_tensor<W: Write>(w: &mut W, dims: &[usize], values: impl Iterator<Item = f32>) -> Result<()> {
    put_u32(w, dims.len() as u32)?;
    for d in dims {
        put_u32(w, *d as u32)?;
    }
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_model<W: Write>(m: &UNetModel, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, VERSION)?;
    put_u32(&mut w, m.spec.in_channels as u32)?;
    put_u32(&mut w, m.spec.base_filters as u32)?;
    put_u32(&mut w, m.spec.depth as u32)?;
    put_u64(&mut w, m.seed)?;
    put_u64(&mut w, m.epochs as u64)?;
    match &m.scaling {
        None => w.write_all(&[0])?,
        Some(s) => {
            w.write_all(&[1])?;
            for v in s.mean.iter().chain(&s.std) {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    let convs = m.convs();
    put_u32(&mut w, 2 * convs.len() as u32)?;
    for c in convs {
        let (o, i, k, _) = c.weight.dim();
        put_tensor(&mut w, &[o, i, k, k], c.weight.iter().copied())?;
        put_tensor(&mut w, &[o], c.bias.iter().copied())?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_model(m: &UNetModel, path: impl AsRef<Path>) -> Result<()> {
    write_model(m, BufWriter::new(File::create(path)?))
}

fn get<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| Error::Format(format!("truncated model file: {e}")))?;
    Ok(b)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(get::<4, _>(r)?))
}

fn get_tensor<R: Read>(r: &mut R, expect: &[usize]) -> Result<Vec<f32>> {
    let rank = get_u32(r)? as usize;
    let dims: Vec<usize> = (0..rank).map(|_| get_u32(r).map(|d| d as usize)).collect::<Result<_>>()?;
    if dims != expect {
        return Err(Error::Format(format!("tensor shape {dims:?}, expected {expect:?}")));
    }
    (0..dims.iter().product::<usize>()).map(|_| Ok(f32::from_le_bytes(get::<4, _>(r)?))).collect()
}

pub fn read_model<R: Read>(mut r: R) -> Result<UNetModel> {
    if &get::<8, _>(&mut r)? != MAGIC {
        return Err(Error::Format("not a U-Net model file".into()));
    }
    let version = get_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported model version {version}")));
    }
    let spec = UNetSpec {
        in_channels: get_u32(&mut r)? as usize,
        base_filters: get_u32(&mut r)? as usize,
        depth: get_u32(&mut r)? as usize,
    };
    spec.validate().map_err(|e| Error::Format(e.to_string()))?;
    if spec.depth > 16 || spec.base_filters << spec.depth > 1 << 20 {
        return Err(Error::Format(format!("implausible spec {spec:?}")));
    }
    let mut m = UNet::<f32>::zeros(&spec);
    m.seed = u64::from_le_bytes(get::<8, _>(&mut r)?);
    m.epochs = u64::from_le_bytes(get::<8, _>(&mut r)?) as usize;
    m.scaling = match get::<1, _>(&mut r)?[0] {
        0 => None,
        1 => {
            let mut vals = (0..2 * spec.in_channels).map(|_| Ok(f64::from_le_bytes(get::<8, _>(&mut r)?)));
            let mean = vals.by_ref().take(spec.in_channels).collect::<Result<Vec<_>>>()?;
            let std = vals.collect::<Result<Vec<_>>>()?;
            Some(InputScaling { mean, std })
        }
        f => return Err(Error::Format(format!("bad scaling flag {f}"))),
    };
    let count = get_u32(&mut r)? as usize;
    let mut convs = m.convs_mut();
    if count != 2 * convs.len() {
        return Err(Error::Format(format!("{count} tensors, expected {}", 2 * convs.len())));
    }
    for c in convs.iter_mut() {
        let (o, i, k, _) = c.weight.dim();
        c.weight = Array4::from_shape_vec((o, i, k, k), get_tensor(&mut r, &[o, i, k, k])?).expect("checked shape");
        c.bias = Array1::from_vec(get_tensor(&mut r, &[o])?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after model".into()));
    }
    if !m.is_finite() {
        return Err(Error::Format("non-finite weights".into()));
    }
    Ok(m)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<UNetModel> {
    read_model(BufReader::new(File::open(path)?))
}
