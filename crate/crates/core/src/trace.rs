//! Replay container for timed frame sequences.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! [0..4)   magic "BSWT"
//! [4..8)   version u32
//! [8..16)  count u64
//! then `count` records of: emit_time_ns u64, frame [u8; 1088]
//! ```

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::frame::{PacketFrame, FRAME_LEN};

pub const TRACE_MAGIC: [u8; 4] = *b"BSWT";
pub const TRACE_VERSION: u32 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 8 + FRAME_LEN;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("bad trace magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported trace version {0}")]
    UnsupportedVersion(u32),
    #[error("trace truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: u64, found: u64 },
    #[error("trace has {0} trailing bytes")]
    TrailingBytes(u64),
    #[error("emit time goes backwards at record {index}")]
    NonMonotonicTime { index: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub emit_time_ns: u64,
    pub frame: PacketFrame,
}

/// Expected file length for `count` records.
pub fn trace_len(count: u64) -> u64 {
    HEADER_LEN as u64 + count * RECORD_LEN as u64
}

pub fn encode_trace(records: &[TraceRecord]) -> Result<Vec<u8>, TraceError> {
    check_monotonic(records)?;
    let mut out = Vec::with_capacity(trace_len(records.len() as u64) as usize);
    out.extend_from_slice(&TRACE_MAGIC);
    out.extend_from_slice(&TRACE_VERSION.to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for rec in records {
        out.extend_from_slice(&rec.emit_time_ns.to_le_bytes());
        out.extend_from_slice(rec.frame.as_bytes());
    }
    Ok(out)
}

pub fn decode_trace(bytes: &[u8]) -> Result<Vec<TraceRecord>, TraceError> {
    if bytes.len() < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != TRACE_MAGIC {
            return Err(TraceError::BadMagic(bytes[..4].try_into().unwrap()));
        }
        return Err(TraceError::TruncatedFile {
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != TRACE_MAGIC {
        return Err(TraceError::BadMagic(magic));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TRACE_VERSION {
        return Err(TraceError::UnsupportedVersion(version));
    }
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let expected = count
        .checked_mul(RECORD_LEN as u64)
        .and_then(|n| n.checked_add(HEADER_LEN as u64))
        .unwrap_or(u64::MAX);
    let found = bytes.len() as u64;
    if found < expected {
        return Err(TraceError::TruncatedFile { expected, found });
    }
    if found > expected {
        return Err(TraceError::TrailingBytes(found - expected));
    }
    let records: Vec<TraceRecord> = bytes[HEADER_LEN..]
        .chunks_exact(RECORD_LEN)
        .map(|chunk| TraceRecord {
            emit_time_ns: u64::from_le_bytes(chunk[..8].try_into().unwrap()),
            frame: PacketFrame::from_bytes(&chunk[8..]).expect("fixed record size"),
        })
        .collect();
    check_monotonic(&records)?;
    Ok(records)
}

pub fn write_trace(path: impl AsRef<Path>, records: &[TraceRecord]) -> Result<(), TraceError> {
    let bytes = encode_trace(records)?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceRecord>, TraceError> {
    decode_trace(&fs::read(path)?)
}

fn check_monotonic(records: &[TraceRecord]) -> Result<(), TraceError> {
    match records.windows(2).position(|w| w[1].emit_time_ns < w[0].emit_time_ns) {
        Some(i) => Err(TraceError::NonMonotonicTime { index: i + 1 }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{build_frame, PAYLOAD_LEN};

    fn records(n: usize) -> Vec<TraceRecord> {
        (0..n)
            .map(|i| TraceRecord {
                emit_time_ns: i as u64 * 10_000,
                frame: build_frame((i % 2) as u32, &[i as u8; PAYLOAD_LEN], [0; 8]).unwrap(),
            })
            .collect()
    }

    #[test]
    fn empty_trace_is_header_only() {
        let bytes = encode_trace(&[]).unwrap();
        assert_eq!(bytes.len(), 16);
        assert!(decode_trace(&bytes).unwrap().is_empty());
    }

    #[test]
    fn length_formula() {
        let bytes = encode_trace(&records(64)).unwrap();
        assert_eq!(bytes.len(), 70160);
        assert_eq!(trace_len(64), 70160);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode_trace(&records(2)).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_trace(&bytes), Err(TraceError::BadMagic(_))));
    }

    #[test]
    fn truncated_and_trailing() {
        let bytes = encode_trace(&records(3)).unwrap();
        assert!(matches!(
            decode_trace(&bytes[..bytes.len() - 1]),
            Err(TraceError::TruncatedFile { .. })
        ));
        assert!(matches!(
            decode_trace(&bytes[..10]),
            Err(TraceError::TruncatedFile { .. })
        ));
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode_trace(&longer), Err(TraceError::TrailingBytes(1))));
    }

    #[test]
    fn time_must_not_go_backwards() {
        let mut recs = records(4);
        recs[2].emit_time_ns = 1;
        assert!(matches!(
            encode_trace(&recs),
            Err(TraceError::NonMonotonicTime { index: 2 })
        ));
        // equal timestamps are allowed
        recs[2].emit_time_ns = recs[1].emit_time_ns;
        assert!(encode_trace(&recs).is_ok());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.bswt");
        let recs = records(5);
        write_trace(&path, &recs).unwrap();
        assert_eq!(read_trace(&path).unwrap(), recs);
        assert_eq!(fs::metadata(&path).unwrap().len(), trace_len(5));
    }
}
