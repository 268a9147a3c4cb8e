//! FMXM v1 model file format and the CRC-32 shared by all wire formats.

use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::{BnParams, ConvParams, ModelParams};
use crate::spec::{LayerDesc, ModelSpec};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: [u8; 4] = *b"FMXM";
pub const MODEL_VERSION: u16 = 1;

/// CRC-32, IEEE polynomial (reflected 0xEDB88320), as used by zlib/PNG.
pub fn crc32(bytes: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in bytes {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xEDB8_8320 & mask);
        }
    }
    !crc
}

/// Little-endian byte writer.
#[derive(Default)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32s(&mut self, vs: &[f32]) {
        for &v in vs {
            self.f32(v);
        }
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    /// Append the CRC-32 of everything written so far and return the buffer.
    pub fn finish_with_crc(mut self) -> Vec<u8> {
        let crc = crc32(&self.buf);
        self.buf.extend_from_slice(&crc.to_le_bytes());
        self.buf
    }
    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

/// Little-endian byte reader over a checked slice.
pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Corrupt("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        self.take(n)
    }
    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    pub fn position(&self) -> usize {
        self.pos
    }
}

/// Serialize spec + parameters to FMXM v1 bytes.
pub fn encode_model(spec: &ModelSpec, params: &ModelParams) -> Result<Vec<u8>> {
    spec.validate()?;
    params.validate(spec)?;
    let mut w = ByteWriter::new();
    w.bytes(&MODEL_MAGIC);
    w.u16(MODEL_VERSION);
    w.u16(spec.layers.len() as u16);
    w.u16(spec.input.0 as u16);
    w.u16(spec.input.1 as u16);
    w.u16(spec.input.2 as u16);
    w.u16(spec.feature_dim as u16);
    w.u16(spec.classes as u16);
    w.f32(spec.temperature);
    for layer in &spec.layers {
        match *layer {
            LayerDesc::Conv2d {
                in_ch,
                out_ch,
                kernel,
                stride,
                padding,
            } => {
                w.u8(0);
                w.u16(in_ch as u16);
                w.u16(out_ch as u16);
                w.u16(kernel as u16);
                w.u16(stride as u16);
                w.u16(padding as u16);
            }
            LayerDesc::BatchNorm { channels, eps, momentum } => {
                w.u8(1);
                w.u16(channels as u16);
                w.f32(eps);
                w.f32(momentum);
            }
            LayerDesc::Relu => w.u8(2),
            LayerDesc::GlobalAvgPool => w.u8(3),
        }
    }
    let (mut ci, mut bi) = (0usize, 0usize);
    for layer in &spec.layers {
        match layer {
            LayerDesc::Conv2d { .. } => {
                w.f32s(params.convs[ci].weight.data());
                w.f32s(params.convs[ci].bias.data());
                ci += 1;
            }
            LayerDesc::BatchNorm { .. } => {
                let bn = &params.bns[bi];
                w.f32s(&bn.gamma);
                w.f32s(&bn.beta);
                w.f32s(&bn.running_mean);
                w.f32s(&bn.running_var);
                bi += 1;
            }
            _ => {}
        }
    }
    w.f32s(params.prototypes.data());
    Ok(w.finish_with_crc())
}

/// Parse FMXM v1 bytes, verifying magic, version and CRC.
pub fn decode_model(bytes: &[u8]) -> Result<(ModelSpec, ModelParams)> {
    if bytes.len() < 8 {
        return Err(NnError::Corrupt("model file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32(body) != stored {
        return Err(NnError::Corrupt("model file CRC mismatch".into()));
    }
    let mut r = ByteReader::new(body);
    if r.bytes(4)? != MODEL_MAGIC {
        return Err(NnError::Corrupt("not an FMXM model file".into()));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(NnError::Corrupt(format!(
            "unsupported model file version {version}"
        )));
    }
    let n_layers = r.u16()? as usize;
    let input = (r.u16()? as usize, r.u16()? as usize, r.u16()? as usize);
    let feature_dim = r.u16()? as usize;
    let classes = r.u16()? as usize;
    let temperature = r.f32()?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let layer = match r.u8()? {
            0 => LayerDesc::Conv2d {
                in_ch: r.u16()? as usize,
                out_ch: r.u16()? as usize,
                kernel: r.u16()? as usize,
                stride: r.u16()? as usize,
                padding: r.u16()? as usize,
            },
            1 => LayerDesc::BatchNorm {
                channels: r.u16()? as usize,
                eps: r.f32()?,
                momentum: r.f32()?,
            },
            2 => LayerDesc::Relu,
            3 => LayerDesc::GlobalAvgPool,
            tag => return Err(NnError::Corrupt(format!("unknown layer tag {tag}"))),
        };
        layers.push(layer);
    }
    let spec = ModelSpec {
        input,
        layers,
        feature_dim,
        classes,
        temperature,
    };
    spec.validate()
        .map_err(|e| NnError::Corrupt(format!("model file spec invalid: {e}")))?;

    let mut convs = Vec::new();
    let mut bns = Vec::new();
    for layer in &spec.layers {
        match *layer {
            LayerDesc::Conv2d {
                in_ch,
                out_ch,
                kernel,
                ..
            } => {
                let weight = Tensor::new(
                    vec![out_ch, in_ch, kernel, kernel],
                    r.f32s(out_ch * in_ch * kernel * kernel)?,
                )?;
                let bias = Tensor::new(vec![out_ch], r.f32s(out_ch)?)?;
                convs.push(ConvParams { weight, bias });
            }
            LayerDesc::BatchNorm { channels, .. } => {
                bns.push(BnParams {
                    gamma: r.f32s(channels)?,
                    beta: r.f32s(channels)?,
                    running_mean: r.f32s(channels)?,
                    running_var: r.f32s(channels)?,
                });
            }
            _ => {}
        }
    }
    let prototypes = Tensor::new(vec![classes, feature_dim], r.f32s(classes * feature_dim)?)?;
    if r.remaining() != 0 {
        return Err(NnError::Corrupt("trailing bytes in model file".into()));
    }
    let params = ModelParams {
        convs,
        bns,
        prototypes,
    };
    params
        .validate(&spec)
        .map_err(|e| NnError::Corrupt(format!("model file parameters invalid: {e}")))?;
    Ok((spec, params))
}

pub fn save_model(path: &Path, spec: &ModelSpec, params: &ModelParams) -> Result<()> {
    std::fs::write(path, encode_model(spec, params)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<(ModelSpec, ModelParams)> {
    decode_model(&std::fs::read(path)?)
}
