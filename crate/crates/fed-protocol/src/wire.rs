//! FMX1 v1 frames: fixed little-endian layout with a trailing CRC-32.
//!
//! Layout: magic "FMX1" (4) | version u16 | message type u16 | round u32 |
//! client id u32 | sample count u32 | n_layers u16 | n_layers x 4 f32
//! coefficients | CRC-32 over everything before it. 22 + 16n + 4 bytes total.

use bn_adapt::LccsCoefficients;
use nn_engine::io::{crc32, ByteWriter};

use crate::error::{invalid_arg, FedError, Result};

pub const WIRE_MAGIC: [u8; 4] = *b"FMX1";
pub const WIRE_VERSION: u16 = 1;
pub const MSG_CLIENT_UPDATE: u16 = 1;
pub const MSG_GLOBAL: u16 = 2;
/// Client id carried by global-coefficient frames.
pub const GLOBAL_CLIENT_ID: u32 = 0xFFFF_FFFF;

pub const FRAME_HEADER_LEN: usize = 22;

/// Encoded frame length for a given BN layer count.
pub fn frame_len(n_layers: usize) -> usize {
    FRAME_HEADER_LEN + 16 * n_layers + 4
}

/// One client's learnt coefficient set plus its aggregation weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub round: u32,
    pub client_id: u32,
    /// |D_Ti|: the number of target instances behind this update.
    pub n_samples: u32,
    pub coefficients: LccsCoefficients,
}

/// Aggregated coefficients broadcast back to the clients.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalCoefficients {
    pub round: u32,
    pub coefficients: LccsCoefficients,
}

fn encode_frame(
    msg_type: u16,
    round: u32,
    client_id: u32,
    n_samples: u32,
    coefficients: &LccsCoefficients,
) -> Result<Vec<u8>> {
    if coefficients.n_layers() == 0 {
        return invalid_arg("cannot encode an empty coefficient set");
    }
    if !coefficients.all_finite() {
        return invalid_arg("cannot encode non-finite coefficients");
    }
    let mut w = ByteWriter::new();
    w.bytes(&WIRE_MAGIC);
    w.u16(WIRE_VERSION);
    w.u16(msg_type);
    w.u32(round);
    w.u32(client_id);
    w.u32(n_samples);
    w.u16(coefficients.n_layers() as u16);
    w.f32s(&coefficients.flat());
    Ok(w.finish_with_crc())
}

fn decode_frame(bytes: &[u8]) -> Result<(u16, u32, u32, u32, LccsCoefficients)> {
    if bytes.len() < 4 {
        return Err(FedError::Incomplete("frame shorter than magic".into()));
    }
    if bytes[..4] != WIRE_MAGIC {
        return Err(FedError::WrongProtocol(format!(
            "bad magic {:02x?}",
            &bytes[..4]
        )));
    }
    if bytes.len() < FRAME_HEADER_LEN {
        return Err(FedError::Incomplete("frame shorter than header".into()));
    }
    let u16_at = |i: usize| u16::from_le_bytes(bytes[i..i + 2].try_into().unwrap());
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != WIRE_VERSION {
        return Err(FedError::UnsupportedVersion(version));
    }
    let msg_type = u16_at(6);
    let round = u32_at(8);
    let client_id = u32_at(12);
    let n_samples = u32_at(16);
    let n_layers = u16_at(20) as usize;
    let expected = frame_len(n_layers);
    if bytes.len() < expected {
        return Err(FedError::Incomplete(format!(
            "frame has {} bytes, layout needs {expected}",
            bytes.len()
        )));
    }
    if bytes.len() > expected {
        return Err(FedError::Corrupt(format!(
            "frame has {} trailing bytes",
            bytes.len() - expected
        )));
    }
    let stored = u32_at(expected - 4);
    let computed = crc32(&bytes[..expected - 4]);
    if stored != computed {
        return Err(FedError::Corrupt(format!(
            "CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"
        )));
    }
    if n_layers == 0 {
        return Err(FedError::Corrupt("frame with zero layers".into()));
    }
    let mut flat = Vec::with_capacity(n_layers * 4);
    for i in 0..n_layers * 4 {
        let off = FRAME_HEADER_LEN + 4 * i;
        flat.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()));
    }
    let coefficients = LccsCoefficients::from_flat(&flat)
        .map_err(|e| FedError::Corrupt(format!("coefficient reconstruction: {e}")))?;
    Ok((msg_type, round, client_id, n_samples, coefficients))
}

pub fn encode_client_update(u: &ClientUpdate) -> Result<Vec<u8>> {
    if u.n_samples == 0 {
        return invalid_arg("client update needs a positive sample count");
    }
    encode_frame(
        MSG_CLIENT_UPDATE,
        u.round,
        u.client_id,
        u.n_samples,
        &u.coefficients,
    )
}

pub fn decode_client_update(bytes: &[u8]) -> Result<ClientUpdate> {
    let (msg_type, round, client_id, n_samples, coefficients) = decode_frame(bytes)?;
    if msg_type != MSG_CLIENT_UPDATE {
        return Err(FedError::Corrupt(format!(
            "expected client-update frame, got message type {msg_type}"
        )));
    }
    if n_samples == 0 {
        return Err(FedError::Corrupt("client update with zero samples".into()));
    }
    Ok(ClientUpdate {
        round,
        client_id,
        n_samples,
        coefficients,
    })
}

pub fn encode_global(g: &GlobalCoefficients) -> Result<Vec<u8>> {
    encode_frame(MSG_GLOBAL, g.round, GLOBAL_CLIENT_ID, 0, &g.coefficients)
}

pub fn decode_global(bytes: &[u8]) -> Result<GlobalCoefficients> {
    let (msg_type, round, client_id, _, coefficients) = decode_frame(bytes)?;
    if msg_type != MSG_GLOBAL {
        return Err(FedError::Corrupt(format!(
            "expected global frame, got message type {msg_type}"
        )));
    }
    if client_id != GLOBAL_CLIENT_ID {
        return Err(FedError::Corrupt(format!(
            "global frame with client id {client_id:#010x}"
        )));
    }
    Ok(GlobalCoefficients {
        round,
        coefficients,
    })
}
