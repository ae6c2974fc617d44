//! Network checkpoint serialization.
//!
//! Layout: magic "ADMMNET1", input shape (u32 count + u32 dims), layer
//! count, then per layer a kind tag byte, its u32 config dims, and for
//! trainable layers the raw little-endian f32 weight and bias data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};
use crate::tensor::WeightTensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ADMMNET1";

const TAG_DENSE: u8 = 0;
const TAG_CONV2D: u8 = 1;
const TAG_MAXPOOL: u8 = 2;
const TAG_RELU: u8 = 3;
const TAG_FLATTEN: u8 = 4;

fn layer_dims(spec: &LayerSpec) -> (u8, Vec<u32>) {
    match *spec {
        LayerSpec::Dense { in_dim, out_dim } => (TAG_DENSE, vec![in_dim as u32, out_dim as u32]),
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => (
            TAG_CONV2D,
            vec![in_ch as u32, out_ch as u32, kernel as u32, stride as u32],
        ),
        LayerSpec::MaxPool { size, stride } => (TAG_MAXPOOL, vec![size as u32, stride as u32]),
        LayerSpec::Relu => (TAG_RELU, vec![]),
        LayerSpec::Flatten => (TAG_FLATTEN, vec![]),
    }
}

fn spec_from(tag: u8, dims: &[u32]) -> Result<LayerSpec> {
    let want = |n: usize| -> Result<()> {
        if dims.len() != n {
            return Err(Error::Format(format!(
                "layer tag {} expects {} dims, got {}",
                tag,
                n,
                dims.len()
            )));
        }
        Ok(())
    };
    match tag {
        TAG_DENSE => {
            want(2)?;
            Ok(LayerSpec::Dense { in_dim: dims[0] as usize, out_dim: dims[1] as usize })
        }
        TAG_CONV2D => {
            want(4)?;
            Ok(LayerSpec::Conv2d {
                in_ch: dims[0] as usize,
                out_ch: dims[1] as usize,
                kernel: dims[2] as usize,
                stride: dims[3] as usize,
            })
        }
        TAG_MAXPOOL => {
            want(2)?;
            Ok(LayerSpec::MaxPool { size: dims[0] as usize, stride: dims[1] as usize })
        }
        TAG_RELU => {
            want(0)?;
            Ok(LayerSpec::Relu)
        }
        TAG_FLATTEN => {
            want(0)?;
            Ok(LayerSpec::Flatten)
        }
        other => Err(Error::Format(format!("unknown layer tag {}", other))),
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn write_f32_slice(w: &mut impl Write, data: &[f32]) -> Result<()> {
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32_vec(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CHECKPOINT_MAGIC)?;
    write_u32(&mut w, net.input_shape().len() as u32)?;
    for &d in net.input_shape() {
        write_u32(&mut w, d as u32)?;
    }
    write_u32(&mut w, net.specs().len() as u32)?;
    let mut t = 0usize;
    for spec in net.specs() {
        let (tag, dims) = layer_dims(spec);
        w.write_all(&[tag])?;
        write_u32(&mut w, dims.len() as u32)?;
        for d in dims {
            write_u32(&mut w, d)?;
        }
        if spec.is_trainable() {
            let p = &net.params()[t];
            write_f32_slice(&mut w, p.weights.data())?;
            write_f32_slice(&mut w, p.bias.data())?;
            t += 1;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?} in {}",
            magic,
            path.display()
        )));
    }
    let in_dims = read_u32(&mut r)? as usize;
    let mut input_shape = Vec::with_capacity(in_dims);
    for _ in 0..in_dims {
        input_shape.push(read_u32(&mut r)? as usize);
    }
    let layer_count = read_u32(&mut r)? as usize;
    let mut specs = Vec::with_capacity(layer_count);
    let mut raw_params = Vec::new();
    for _ in 0..layer_count {
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let ndims = read_u32(&mut r)? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(read_u32(&mut r)?);
        }
        let spec = spec_from(tag[0], &dims)?;
        if spec.is_trainable() {
            let (w_shape, b_len) = match spec {
                LayerSpec::Dense { in_dim, out_dim } => (vec![in_dim, out_dim], out_dim),
                LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                    (vec![out_ch, in_ch, kernel, kernel], out_ch)
                }
                _ => unreachable!(),
            };
            let w_numel: usize = w_shape.iter().product();
            let weights = WeightTensor::new(w_shape, read_f32_vec(&mut r, w_numel)?)?;
            let bias = WeightTensor::new(vec![b_len], read_f32_vec(&mut r, b_len)?)?;
            raw_params.push((weights, bias));
        }
        specs.push(spec);
    }

    let mut net = Network::new(input_shape, specs, 0)?;
    for (t, (weights, bias)) in raw_params.into_iter().enumerate() {
        net.params_mut()[t].weights = weights;
        net.params_mut()[t].bias = bias;
    }
    Ok(net)
}
