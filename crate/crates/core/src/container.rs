//! Versioned binary container used for corpora and checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 8    | magic (`VASBCORP` or `VASBCKPT`)        |
//! | 8      | 4    | format version (`u32`)                  |
//! | 12     | 8    | payload length `n` (`u64`)              |
//! | 20     | n    | payload, bincode 1.x default encoding   |
//! | 20 + n | 8    | `stable_hash64(payload)` (`u64`)        |
//!
//! `f64` values are stored as their IEEE-754 bit patterns, so a decode/encode
//! round trip reproduces the file byte for byte.

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::ndcore::stable_hash64;

pub const CORPUS_MAGIC: [u8; 8] = *b"VASBCORP";
pub const CHECKPOINT_MAGIC: [u8; 8] = *b"VASBCKPT";

const HEADER: usize = 20;

pub fn encode<T: Serialize>(magic: [u8; 8], version: u32, value: &T) -> Result<Vec<u8>> {
    let payload = bincode::serialize(value).map_err(|e| Error::Format(e.to_string()))?;
    let mut out = Vec::with_capacity(HEADER + payload.len() + 8);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out.extend_from_slice(&stable_hash64(&payload).to_le_bytes());
    Ok(out)
}

pub fn decode<T: DeserializeOwned>(magic: [u8; 8], version: u32, bytes: &[u8]) -> Result<T> {
    if bytes.len() < HEADER + 8 {
        return Err(Error::Format("truncated header".into()));
    }
    if bytes[..8] != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            String::from_utf8_lossy(&magic)
        )));
    }
    let found = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if found != version {
        return Err(Error::Compatibility(format!(
            "container version {found}, this build reads {version}"
        )));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    if bytes.len() != HEADER + len + 8 {
        return Err(Error::Format(format!(
            "payload length {len} does not match file size {}",
            bytes.len()
        )));
    }
    let payload = &bytes[HEADER..HEADER + len];
    let sum = u64::from_le_bytes(bytes[HEADER + len..].try_into().expect("8 bytes"));
    if sum != stable_hash64(payload) {
        return Err(Error::Format("checksum mismatch".into()));
    }
    bincode::deserialize(payload).map_err(|e| Error::Format(e.to_string()))
}

/// Fingerprint of a whole container file.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    stable_hash64(bytes)
}
