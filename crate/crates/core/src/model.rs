//! Bit-exact compressed storage of pruned + discretized networks, and the
//! compression-ratio accounting.
//!
//! Stream layout ("ADMMCMP1", all integers little-endian): input shape,
//! layer table (tag + dims, as in checkpoints), then per trainable layer a
//! codebook, the survivor count, a 4-bit relative-index stream with
//! escape nibbles, packed n-bit codes in flat order, and the raw f32
//! biases.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, Network};
use crate::projection::QuantSpec;
use crate::tensor::{PruneMask, WeightTensor};

pub const COMPRESSED_MAGIC: &[u8; 8] = b"ADMMCMP1";

/// Escape nibble: add 15 to the running gap without consuming a survivor.
const GAP_ESCAPE: u8 = 0xF;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodebookKind {
    Quant,
    Cluster,
}

/// Ordered list of representative values for one layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebook {
    pub layer: usize,
    pub kind: CodebookKind,
    /// Strictly increasing representative values.
    pub entries: Vec<f32>,
    /// Code width in bits; 2^bits >= entries.len().
    pub bits: u32,
    /// Level interval, quant kind only.
    pub interval: Option<f32>,
}

impl Codebook {
    pub fn quant(layer: usize, spec: &QuantSpec, bits: u32) -> Result<Self> {
        let entries = spec.levels();
        let cb = Self {
            layer,
            kind: CodebookKind::Quant,
            entries,
            bits,
            interval: Some(spec.q),
        };
        cb.validate()?;
        Ok(cb)
    }

    pub fn cluster(layer: usize, centroids: &[f32], bits: u32) -> Result<Self> {
        let mut entries = centroids.to_vec();
        entries.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        entries.dedup();
        let cb = Self {
            layer,
            kind: CodebookKind::Cluster,
            entries,
            bits,
            interval: None,
        };
        cb.validate()?;
        Ok(cb)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bits == 0 || self.bits > 16 {
            return Err(Error::Config(format!("bits {} out of range 1..=16", self.bits)));
        }
        if self.entries.is_empty() {
            return Err(Error::Config("empty codebook".into()));
        }
        if self.entries.len() > (1usize << self.bits) {
            return Err(Error::Config(format!(
                "{} entries exceed 2^{} codes",
                self.entries.len(),
                self.bits
            )));
        }
        if self.entries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("codebook entries must be strictly increasing".into()));
        }
        if self.kind == CodebookKind::Quant {
            let q = self
                .interval
                .ok_or_else(|| Error::Config("quant codebook needs an interval".into()))?;
            let spec = QuantSpec::new(self.entries.len(), q)?;
            if spec.levels() != self.entries {
                return Err(Error::Config(
                    "quant codebook entries must equal the level set".into(),
                ));
            }
        }
        Ok(())
    }

    /// Bytes this codebook contributes to the stored stream: quant stores
    /// only the interval, cluster stores every centroid.
    pub fn stored_bytes(&self) -> usize {
        match self.kind {
            CodebookKind::Quant => 4,
            CodebookKind::Cluster => 4 * self.entries.len(),
        }
    }

    fn index_of(&self, w: f32) -> Option<usize> {
        self.entries.iter().position(|e| e.to_bits() == w.to_bits())
    }
}

/// One trainable layer's compressed payload.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedLayer {
    pub codebook: Codebook,
    pub mask: PruneMask,
    /// Codebook index per surviving weight, flat order.
    pub codes: Vec<u32>,
    pub bias: Vec<f32>,
}

/// A fully compressed model, convertible to and from bytes and back into
/// a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedModel {
    pub input_shape: Vec<usize>,
    pub specs: Vec<LayerSpec>,
    pub layers: Vec<CompressedLayer>,
}

impl CompressedModel {
    /// Builds the compressed form. Every surviving weight must sit
    /// bit-exactly on a codebook entry of its layer, otherwise the
    /// finalization phase was skipped and this fails.
    pub fn from_network(
        net: &Network,
        masks: &[PruneMask],
        codebooks: &[Codebook],
    ) -> Result<Self> {
        if masks.len() != net.trainable_count() || codebooks.len() != net.trainable_count() {
            return Err(Error::Config(
                "masks/codebooks must cover every trainable layer".into(),
            ));
        }
        let mut layers = Vec::with_capacity(net.trainable_count());
        for (t, (mask, codebook)) in masks.iter().zip(codebooks).enumerate() {
            codebook.validate()?;
            let w = &net.params()[t].weights;
            if mask.shape() != w.shape() {
                return Err(Error::Config(format!("layer {}: mask shape mismatch", t)));
            }
            let mut codes = Vec::with_capacity(mask.count_ones());
            for (i, (&v, &k)) in w.data().iter().zip(mask.keep()).enumerate() {
                if !k {
                    if v != 0.0 {
                        return Err(Error::Exactness(format!(
                            "layer {}: pruned weight at {} is {} instead of zero",
                            t, i, v
                        )));
                    }
                    continue;
                }
                let Some(code) = codebook.index_of(v) else {
                    return Err(Error::Exactness(format!(
                        "layer {}: weight {} at {} is not in the codebook (finalization skipped?)",
                        t, v, i
                    )));
                };
                codes.push(code as u32);
            }
            layers.push(CompressedLayer {
                codebook: codebook.clone(),
                mask: mask.clone(),
                codes,
                bias: net.params()[t].bias.data().to_vec(),
            });
        }
        Ok(Self {
            input_shape: net.input_shape().to_vec(),
            specs: net.specs().to_vec(),
            layers,
        })
    }

    /// Reconstructs the dense network: surviving weights take their
    /// codebook values, pruned weights are exactly zero.
    pub fn to_network(&self) -> Result<Network> {
        let mut net = Network::new(self.input_shape.clone(), self.specs.clone(), 0)?;
        for (t, layer) in self.layers.iter().enumerate() {
            let shape = net.params()[t].weights.shape().to_vec();
            let mut data = vec![0.0f32; net.params()[t].weights.numel()];
            let mut ci = 0usize;
            for (i, &k) in layer.mask.keep().iter().enumerate() {
                if k {
                    data[i] = layer.codebook.entries[layer.codes[ci] as usize];
                    ci += 1;
                }
            }
            net.params_mut()[t].weights = WeightTensor::new(shape, data)?;
            net.params_mut()[t].bias =
                WeightTensor::new(vec![layer.bias.len()], layer.bias.clone())?;
        }
        Ok(net)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(COMPRESSED_MAGIC);
        push_u32(&mut out, self.input_shape.len() as u32);
        for &d in &self.input_shape {
            push_u32(&mut out, d as u32);
        }
        push_u32(&mut out, self.specs.len() as u32);
        let mut t = 0usize;
        for spec in &self.specs {
            let (tag, dims) = spec_tag_dims(spec);
            out.push(tag);
            push_u32(&mut out, dims.len() as u32);
            for d in dims {
                push_u32(&mut out, d);
            }
            if spec.is_trainable() {
                let layer = &self.layers[t];
                encode_codebook(&mut out, &layer.codebook);
                push_u32(&mut out, layer.codes.len() as u32);
                let index_stream = encode_gaps(&layer.mask);
                push_u32(&mut out, index_stream.len() as u32);
                out.extend_from_slice(&index_stream);
                let code_stream = pack_codes(&layer.codes, layer.codebook.bits);
                push_u32(&mut out, code_stream.len() as u32);
                out.extend_from_slice(&code_stream);
                for &b in &layer.bias {
                    out.extend_from_slice(&b.to_le_bytes());
                }
                t += 1;
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != COMPRESSED_MAGIC {
            return Err(Error::Format(format!(
                "bad compressed-model magic {:?}",
                &magic[..magic.len().min(8)]
            )));
        }
        let in_dims = r.u32()? as usize;
        let mut input_shape = Vec::with_capacity(in_dims);
        for _ in 0..in_dims {
            input_shape.push(r.u32()? as usize);
        }
        let layer_count = r.u32()? as usize;
        let mut specs = Vec::with_capacity(layer_count);
        let mut layers = Vec::new();
        let mut shape = input_shape.clone();
        for t in 0..layer_count {
            let tag = r.take(1)?[0];
            let ndims = r.u32()? as usize;
            let mut dims = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                dims.push(r.u32()?);
            }
            let spec = spec_from_tag(tag, &dims)?;
            let out_shape = spec.out_shape(&shape)?;
            if spec.is_trainable() {
                let codebook = decode_codebook(&mut r, layers.len())?;
                let survivors = r.u32()? as usize;
                let index_len = r.u32()? as usize;
                let index_stream = r.take(index_len)?.to_vec();
                let code_len = r.u32()? as usize;
                let code_stream = r.take(code_len)?.to_vec();

                let (w_shape, b_len) = match spec {
                    LayerSpec::Dense { in_dim, out_dim } => (vec![in_dim, out_dim], out_dim),
                    LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => {
                        (vec![out_ch, in_ch, kernel, kernel], out_ch)
                    }
                    _ => unreachable!(),
                };
                let numel: usize = w_shape.iter().product();
                let mask = decode_gaps(&index_stream, survivors, numel, &w_shape)
                    .map_err(|e| Error::Format(format!("layer {}: {}", t, e)))?;
                let codes = unpack_codes(&code_stream, survivors, codebook.bits)?;
                for &c in &codes {
                    if c as usize >= codebook.entries.len() {
                        return Err(Error::Format(format!(
                            "layer {}: code {} out of codebook range {}",
                            t,
                            c,
                            codebook.entries.len()
                        )));
                    }
                }
                let mut bias = Vec::with_capacity(b_len);
                for _ in 0..b_len {
                    let b = r.take(4)?;
                    bias.push(f32::from_le_bytes([b[0], b[1], b[2], b[3]]));
                }
                layers.push(CompressedLayer {
                    codebook,
                    mask,
                    codes,
                    bias,
                });
            }
            specs.push(spec);
            shape = out_shape;
        }
        Ok(Self {
            input_shape,
            specs,
            layers,
        })
    }

    /// Per-layer stats for the ratio report, using the actual encoded
    /// stream lengths.
    pub fn layer_stats(&self) -> Vec<LayerStats> {
        self.layers
            .iter()
            .map(|l| LayerStats {
                numel: l.mask.len(),
                survivors: l.codes.len(),
                bits: l.codebook.bits,
                codebook_bytes: Some(l.codebook.stored_bytes() as f64),
                index_bytes: Some(encode_gaps(&l.mask).len() as f64),
                code_bytes: Some(pack_codes(&l.codes, l.codebook.bits).len() as f64),
            })
            .collect()
    }
}

// --- byte helpers ---

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated stream: wanted {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn spec_tag_dims(spec: &LayerSpec) -> (u8, Vec<u32>) {
    match *spec {
        LayerSpec::Dense { in_dim, out_dim } => (0, vec![in_dim as u32, out_dim as u32]),
        LayerSpec::Conv2d { in_ch, out_ch, kernel, stride } => {
            (1, vec![in_ch as u32, out_ch as u32, kernel as u32, stride as u32])
        }
        LayerSpec::MaxPool { size, stride } => (2, vec![size as u32, stride as u32]),
        LayerSpec::Relu => (3, vec![]),
        LayerSpec::Flatten => (4, vec![]),
    }
}

fn spec_from_tag(tag: u8, dims: &[u32]) -> Result<LayerSpec> {
    match (tag, dims) {
        (0, [i, o]) => Ok(LayerSpec::Dense { in_dim: *i as usize, out_dim: *o as usize }),
        (1, [i, o, k, s]) => Ok(LayerSpec::Conv2d {
            in_ch: *i as usize,
            out_ch: *o as usize,
            kernel: *k as usize,
            stride: *s as usize,
        }),
        (2, [k, s]) => Ok(LayerSpec::MaxPool { size: *k as usize, stride: *s as usize }),
        (3, []) => Ok(LayerSpec::Relu),
        (4, []) => Ok(LayerSpec::Flatten),
        _ => Err(Error::Format(format!("bad layer tag {} / dims {:?}", tag, dims))),
    }
}

fn encode_codebook(out: &mut Vec<u8>, cb: &Codebook) {
    out.push(match cb.kind {
        CodebookKind::Quant => 0,
        CodebookKind::Cluster => 1,
    });
    out.push(cb.bits as u8);
    match cb.kind {
        CodebookKind::Quant => {
            out.extend_from_slice(&cb.interval.unwrap().to_le_bytes());
        }
        CodebookKind::Cluster => {
            out.extend_from_slice(&(cb.entries.len() as u16).to_le_bytes());
            for &e in &cb.entries {
                out.extend_from_slice(&e.to_le_bytes());
            }
        }
    }
}

fn decode_codebook(r: &mut Reader<'_>, layer: usize) -> Result<Codebook> {
    let kind = match r.take(1)?[0] {
        0 => CodebookKind::Quant,
        1 => CodebookKind::Cluster,
        k => return Err(Error::Format(format!("bad codebook kind {}", k))),
    };
    let bits = r.take(1)?[0] as u32;
    let cb = match kind {
        CodebookKind::Quant => {
            let b = r.take(4)?;
            let q = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
            let m = 1usize << bits;
            let spec = QuantSpec::new(m, q)
                .map_err(|e| Error::Format(format!("layer {}: bad interval: {}", layer, e)))?;
            Codebook {
                layer,
                kind,
                entries: spec.levels(),
                bits,
                interval: Some(q),
            }
        }
        CodebookKind::Cluster => {
            let b = r.take(2)?;
            let count = u16::from_le_bytes([b[0], b[1]]) as usize;
            let mut entries = Vec::with_capacity(count);
            for _ in 0..count {
                let e = r.take(4)?;
                entries.push(f32::from_le_bytes([e[0], e[1], e[2], e[3]]));
            }
            Codebook {
                layer,
                kind,
                entries,
                bits,
                interval: None,
            }
        }
    };
    cb.validate().map_err(|e| Error::Format(format!("layer {}: {}", layer, e)))?;
    Ok(cb)
}

/// Packs survivor positions as 4-bit gaps with escape nibbles: values
/// 0..=14 close a gap (a survivor follows); 15 adds 15 to the running gap.
pub fn encode_gaps(mask: &PruneMask) -> Vec<u8> {
    let mut nibbles: Vec<u8> = Vec::new();
    let mut gap = 0u32;
    for &k in mask.keep() {
        if k {
            while gap >= 15 {
                nibbles.push(GAP_ESCAPE);
                gap -= 15;
            }
            nibbles.push(gap as u8);
            gap = 0;
        } else {
            gap += 1;
        }
    }
    let mut out = Vec::with_capacity(nibbles.len().div_ceil(2));
    for pair in nibbles.chunks(2) {
        let lo = pair[0];
        let hi = if pair.len() == 2 { pair[1] } else { 0 };
        out.push(lo | (hi << 4));
    }
    out
}

pub fn decode_gaps(
    stream: &[u8],
    survivors: usize,
    numel: usize,
    shape: &[usize],
) -> Result<PruneMask> {
    let mut keep = vec![false; numel];
    let mut pos = 0usize;
    let mut found = 0usize;
    let mut gap = 0usize;
    'outer: for (bi, &byte) in stream.iter().enumerate() {
        for half in 0..2 {
            let nib = if half == 0 { byte & 0xF } else { byte >> 4 };
            if found == survivors {
                break 'outer;
            }
            if nib == GAP_ESCAPE {
                gap += 15;
            } else {
                pos += gap + nib as usize;
                gap = 0;
                if pos >= numel {
                    return Err(Error::Format(format!(
                        "index stream overruns tensor at byte {}",
                        bi
                    )));
                }
                keep[pos] = true;
                pos += 1;
                found += 1;
            }
        }
    }
    if found != survivors {
        return Err(Error::Format(format!(
            "index stream holds {} survivors, expected {}",
            found, survivors
        )));
    }
    PruneMask::new(shape.to_vec(), keep)
}

/// Packs codes LSB-first at `bits` per code.
pub fn pack_codes(codes: &[u32], bits: u32) -> Vec<u8> {
    let total_bits = codes.len() * bits as usize;
    let mut out = vec![0u8; total_bits.div_ceil(8)];
    let mut bit = 0usize;
    for &c in codes {
        for b in 0..bits as usize {
            if (c >> b) & 1 == 1 {
                out[bit / 8] |= 1 << (bit % 8);
            }
            bit += 1;
        }
    }
    out
}

pub fn unpack_codes(stream: &[u8], count: usize, bits: u32) -> Result<Vec<u32>> {
    let need = (count * bits as usize).div_ceil(8);
    if stream.len() < need {
        return Err(Error::Format(format!(
            "code stream has {} bytes, needs {}",
            stream.len(),
            need
        )));
    }
    let mut out = Vec::with_capacity(count);
    let mut bit = 0usize;
    for _ in 0..count {
        let mut c = 0u32;
        for b in 0..bits as usize {
            if (stream[bit / 8] >> (bit % 8)) & 1 == 1 {
                c |= 1 << b;
            }
            bit += 1;
        }
        out.push(c);
    }
    Ok(out)
}

// --- ratio accounting ---

/// Inputs to the compression-ratio calculator for one layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerStats {
    pub numel: usize,
    pub survivors: usize,
    pub bits: u32,
    /// Stored codebook bytes; None means "interval only" (4 bytes).
    pub codebook_bytes: Option<f64>,
    /// Actual index-stream bytes; None estimates the 4-bit gap scheme.
    pub index_bytes: Option<f64>,
    /// Actual packed code bytes; None uses survivors*bits/8 exactly.
    pub code_bytes: Option<f64>,
}

impl LayerStats {
    pub fn new(numel: usize, survivors: usize, bits: u32) -> Self {
        Self {
            numel,
            survivors,
            bits,
            codebook_bytes: None,
            index_bytes: None,
            code_bytes: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerRatioRow {
    pub numel: usize,
    pub survivors: usize,
    pub bits: u32,
    pub data_bytes: f64,
    pub index_bytes: f64,
}

/// The ratio report mirrored into the JSON summaries.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatioReport {
    pub layers: Vec<LayerRatioRow>,
    pub baseline_bytes: f64,
    pub data_size_bytes: f64,
    pub model_size_bytes: f64,
    pub data_ratio: f64,
    pub model_ratio: f64,
    pub include_codebook: bool,
}

/// Computes data and model sizes against the 32-bit dense baseline.
///
/// Data size is the packed weight codes plus (optionally) the codebook;
/// model size adds the prune-index stream. `include_codebook = false`
/// drops codebook bytes from the data size.
pub fn compute_ratios(stats: &[LayerStats], include_codebook: bool) -> Result<RatioReport> {
    let mut baseline = 0.0f64;
    let mut data = 0.0f64;
    let mut index_total = 0.0f64;
    let mut layers = Vec::with_capacity(stats.len());
    for (i, s) in stats.iter().enumerate() {
        if s.survivors > s.numel {
            return Err(Error::Config(format!(
                "layer {}: survivors {} exceed numel {}",
                i, s.survivors, s.numel
            )));
        }
        if s.bits == 0 || s.bits > 32 {
            return Err(Error::Config(format!("layer {}: bits {} out of 1..=32", i, s.bits)));
        }
        baseline += s.numel as f64 * 4.0;
        let code_bytes = s
            .code_bytes
            .unwrap_or(s.survivors as f64 * s.bits as f64 / 8.0);
        let codebook_bytes = s.codebook_bytes.unwrap_or(4.0);
        let index_bytes = s.index_bytes.unwrap_or_else(|| {
            // 4-bit gaps: one nibble per survivor plus escape nibbles for
            // the zeros in between.
            let zeros = (s.numel - s.survivors) as f64;
            (s.survivors as f64 + zeros / 15.0) / 2.0
        });
        let layer_data = code_bytes + if include_codebook { codebook_bytes } else { 0.0 };
        data += layer_data;
        index_total += index_bytes;
        layers.push(LayerRatioRow {
            numel: s.numel,
            survivors: s.survivors,
            bits: s.bits,
            data_bytes: layer_data,
            index_bytes,
        });
    }
    let model = data + index_total;
    Ok(RatioReport {
        layers,
        baseline_bytes: baseline,
        data_size_bytes: data,
        model_size_bytes: model,
        data_ratio: if data > 0.0 { baseline / data } else { 1.0 },
        model_ratio: if model > 0.0 { baseline / model } else { 1.0 },
        include_codebook,
    })
}
