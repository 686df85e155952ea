use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use serde_json::{Map, Value};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"CARL";
pub const PACKET_VERSION: u8 = 1;
/// Magic, version byte and 32-bit length.
pub const HEADER_LEN: usize = 9;

#[derive(Debug, Error)]
pub enum DownlinkError {
    #[error("packet is {actual} bytes, budget allows {allowed}")]
    Budget { actual: usize, allowed: usize },
    #[error("packet integrity: {0}")]
    Integrity(String),
    #[error("entry {index} has no field {field:?}")]
    UnknownField { index: usize, field: String },
    #[error("entry {0} is not a JSON object")]
    NotAnObject(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownlinkPacket {
    pub format_version: u8,
    pub uncompressed_length: u32,
    /// Raw DEFLATE stream of the JSON-lines body.
    pub payload: Vec<u8>,
}

impl DownlinkPacket {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.payload.len());
        out.extend_from_slice(MAGIC);
        out.push(self.format_version);
        out.extend_from_slice(&self.uncompressed_length.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DownlinkError> {
        if bytes.len() < HEADER_LEN {
            return Err(DownlinkError::Integrity(format!("{} bytes is shorter than the header", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(DownlinkError::Integrity("bad magic".into()));
        }
        if bytes[4] != PACKET_VERSION {
            return Err(DownlinkError::Integrity(format!("unsupported version {}", bytes[4])));
        }
        let len = u32::from_le_bytes(bytes[5..9].try_into().expect("four bytes"));
        Ok(DownlinkPacket { format_version: bytes[4], uncompressed_length: len, payload: bytes[HEADER_LEN..].to_vec() })
    }

    pub fn len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uncompressed_length == 0
    }
}

/// Keeps only whitelisted top-level fields.
pub fn prune(entries: &[Value], whitelist: &[String]) -> Result<Vec<Value>, DownlinkError> {
    entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let obj = e.as_object().ok_or(DownlinkError::NotAnObject(i))?;
            let mut kept = Map::new();
            for f in whitelist {
                let v = obj.get(f).ok_or_else(|| DownlinkError::UnknownField { index: i, field: f.clone() })?;
                kept.insert(f.clone(), v.clone());
            }
            Ok(Value::Object(kept))
        })
        .collect()
}

/// Uncompressed JSON-lines body for pruned entries.
pub fn body(entries: &[Value]) -> Vec<u8> {
    entries.iter().flat_map(|e| (e.to_string() + "\n").into_bytes()).collect()
}

pub fn pack_downlink(entries: &[Value], whitelist: &[String], budget: usize) -> Result<DownlinkPacket, DownlinkError> {
    let raw = body(&prune(entries, whitelist)?);
    let uncompressed_length = u32::try_from(raw.len())
        .map_err(|_| DownlinkError::Budget { actual: raw.len(), allowed: budget })?;
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&raw).expect("in-memory write");
    let payload = enc.finish().expect("in-memory write");
    let packet = DownlinkPacket { format_version: PACKET_VERSION, uncompressed_length, payload };
    if packet.len() > budget {
        return Err(DownlinkError::Budget { actual: packet.len(), allowed: budget });
    }
    Ok(packet)
}

pub fn unpack_downlink(bytes: &[u8]) -> Result<Vec<Value>, DownlinkError> {
    let packet = DownlinkPacket::from_bytes(bytes)?;
    let mut raw = Vec::new();
    DeflateDecoder::new(&packet.payload[..])
        .take(packet.uncompressed_length as u64 + 1)
        .read_to_end(&mut raw)
        .map_err(|e| DownlinkError::Integrity(format!("payload does not inflate: {e}")))?;
    if raw.len() != packet.uncompressed_length as usize {
        return Err(DownlinkError::Integrity(format!(
            "header says {} bytes, payload inflates to {}",
            packet.uncompressed_length,
            raw.len()
        )));
    }
    let text = String::from_utf8(raw).map_err(|_| DownlinkError::Integrity("payload is not UTF-8".into()))?;
    text.lines()
        .map(|l| serde_json::from_str(l).map_err(|e| DownlinkError::Integrity(format!("bad entry: {e}"))))
        .collect()
}
