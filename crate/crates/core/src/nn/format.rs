//! Binary model format.
//!
//! ```text
//! magic        b"XLK1"
//! version      u16
//! input rank   u32, then rank x u32 dims
//! layer count  u32
//! per layer    u8 kind tag, u32 dims, then little-endian f64 weights and biases
//! ```
//!
//! Kind tags: 0 dense (in, out), 1 conv2d (in_c, out_c, kernel, stride),
//! 2 relu, 3 flatten, 4 avgpool2d (size).

use std::io::{Read, Write};

use super::{LayerSpec, Network};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"XLK1";
pub const MODEL_FORMAT_VERSION: u16 = 1;

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64s(r: &mut impl Read, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_network(net: &Network, w: &mut impl Write) -> Result<()> {
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_FORMAT_VERSION.to_le_bytes())?;
    put_u32(w, net.input_shape().len())?;
    for &d in net.input_shape() {
        put_u32(w, d)?;
    }
    put_u32(w, net.layers().len())?;
    for (i, layer) in net.layers().iter().enumerate() {
        match *layer {
            LayerSpec::Dense { input, output } => {
                w.write_all(&[0])?;
                put_u32(w, input)?;
                put_u32(w, output)?;
            }
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
            } => {
                w.write_all(&[1])?;
                for v in [in_channels, out_channels, kernel, stride] {
                    put_u32(w, v)?;
                }
            }
            LayerSpec::Relu => w.write_all(&[2])?,
            LayerSpec::Flatten => w.write_all(&[3])?,
            LayerSpec::AvgPool2d { size } => {
                w.write_all(&[4])?;
                put_u32(w, size)?;
            }
        }
        for v in net.weights()[i].iter().chain(&net.biases()[i]) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_network(r: &mut impl Read) -> Result<Network> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Format("bad model magic".into()));
    }
    let mut vb = [0u8; 2];
    r.read_exact(&mut vb)?;
    let version = u16::from_le_bytes(vb);
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported model format version {version}")));
    }
    let rank = get_u32(r)?;
    if rank == 0 || rank > 8 {
        return Err(Error::Format(format!("implausible input rank {rank}")));
    }
    let input_shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
    let count = get_u32(r)?;
    let mut layers = Vec::with_capacity(count);
    let mut weights = Vec::with_capacity(count);
    let mut biases = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let layer = match tag[0] {
            0 => LayerSpec::Dense {
                input: get_u32(r)?,
                output: get_u32(r)?,
            },
            1 => LayerSpec::Conv2d {
                in_channels: get_u32(r)?,
                out_channels: get_u32(r)?,
                kernel: get_u32(r)?,
                stride: get_u32(r)?,
            },
            2 => LayerSpec::Relu,
            3 => LayerSpec::Flatten,
            4 => LayerSpec::AvgPool2d { size: get_u32(r)? },
            t => return Err(Error::Format(format!("unknown layer tag {t}"))),
        };
        let (nw, nb) = layer.param_counts();
        weights.push(get_f64s(r, nw)?);
        biases.push(get_f64s(r, nb)?);
        layers.push(layer);
    }
    Network::from_parts(&input_shape, layers, weights, biases)
}
