//! FMXD v1 dataset file format (little-endian, CRC-32 trailer).

use std::path::Path;

use nn_engine::io::{crc32, ByteReader, ByteWriter};
use nn_engine::{Dataset, Tensor};

use crate::error::{DataError, Result};

pub const DATA_MAGIC: [u8; 4] = *b"FMXD";
pub const DATA_VERSION: u16 = 1;

pub fn encode_dataset(data: &Dataset, classes: usize) -> Result<Vec<u8>> {
    let shape = data.images.shape();
    if shape[1] != 1 || shape[2] != shape[3] {
        return Err(DataError::InvalidArgument(
            "FMXD stores single-channel square images".into(),
        ));
    }
    let side = shape[2];
    let mut w = ByteWriter::new();
    w.bytes(&DATA_MAGIC);
    w.u16(DATA_VERSION);
    w.u32(data.len() as u32);
    w.u16(classes as u16);
    w.u16(side as u16);
    w.f32s(data.images.data());
    for &y in &data.labels {
        w.u16(y);
    }
    Ok(w.finish_with_crc())
}

/// Returns the dataset and its declared class count.
pub fn decode_dataset(bytes: &[u8]) -> Result<(Dataset, usize)> {
    if bytes.len() < 8 {
        return Err(DataError::Corrupt("dataset file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32(body) != stored {
        return Err(DataError::Corrupt("dataset file CRC mismatch".into()));
    }
    let mut r = ByteReader::new(body);
    let corrupt = |msg: &str| DataError::Corrupt(msg.into());
    if r.bytes(4).map_err(|_| corrupt("truncated header"))? != DATA_MAGIC {
        return Err(corrupt("not an FMXD dataset file"));
    }
    let version = r.u16().map_err(|_| corrupt("truncated header"))?;
    if version != DATA_VERSION {
        return Err(DataError::Corrupt(format!(
            "unsupported dataset file version {version}"
        )));
    }
    let n = r.u32().map_err(|_| corrupt("truncated header"))? as usize;
    let classes = r.u16().map_err(|_| corrupt("truncated header"))? as usize;
    let side = r.u16().map_err(|_| corrupt("truncated header"))? as usize;
    if n == 0 || classes < 2 || side == 0 {
        return Err(corrupt("implausible dataset header"));
    }
    let pixels = r
        .f32s(n * side * side)
        .map_err(|_| corrupt("truncated pixel data"))?;
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        labels.push(r.u16().map_err(|_| corrupt("truncated labels"))?);
    }
    if r.remaining() != 0 {
        return Err(corrupt("trailing bytes in dataset file"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y as usize >= classes) {
        return Err(DataError::Corrupt(format!(
            "label {bad} out of range for {classes} classes"
        )));
    }
    let images = Tensor::new(vec![n, 1, side, side], pixels)?;
    Ok((Dataset::new(images, labels)?, classes))
}

pub fn save_dataset(path: &Path, data: &Dataset, classes: usize) -> Result<()> {
    std::fs::write(path, encode_dataset(data, classes)?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<(Dataset, usize)> {
    decode_dataset(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::DataConfig;
    use crate::gen::gen_source;

    #[test]
    fn round_trip_is_exact() {
        let cfg = DataConfig {
            train_size: 50,
            test_size: 50,
            ..DataConfig::default()
        };
        let (_, test, _) = gen_source(&cfg).unwrap();
        let bytes = encode_dataset(&test, cfg.classes).unwrap();
        let (back, classes) = decode_dataset(&bytes).unwrap();
        assert_eq!(back, test);
        assert_eq!(classes, cfg.classes);
        assert_eq!(bytes, encode_dataset(&back, classes).unwrap());
    }

    #[test]
    fn corruption_and_truncation_detected() {
        let cfg = DataConfig {
            train_size: 10,
            test_size: 10,
            ..DataConfig::default()
        };
        let (_, test, _) = gen_source(&cfg).unwrap();
        let mut bytes = encode_dataset(&test, cfg.classes).unwrap();
        bytes[20] ^= 0x01;
        assert!(matches!(decode_dataset(&bytes), Err(DataError::Corrupt(_))));
        let bytes = encode_dataset(&test, cfg.classes).unwrap();
        assert!(decode_dataset(&bytes[..bytes.len() - 2]).is_err());
    }
}
