//! Fixed 1088-byte packet representation.
//!
//! A frame is seventeen 64-byte blocks. Block 0 (`reg0`) carries the
//! metadata that selects the resident model; blocks 1..=16 carry the
//! 1024-byte payload that is presented to the executor unchanged.
//!
//! ```text
//! reg0   [0..4)    slot_id         u32 LE
//!        [4..8)    format_version  u32 LE
//!        [8..16)   control         opaque
//!        [16..64)  padding         opaque
//! reg1..reg16      payload, bit j of byte i is input i*8+j (1 => +1, 0 => -1)
//! ```

use std::fmt;

use thiserror::Error;

pub const BLOCK_LEN: usize = 64;
pub const META_LEN: usize = BLOCK_LEN;
pub const PAYLOAD_LEN: usize = 1024;
pub const FRAME_LEN: usize = META_LEN + PAYLOAD_LEN;
/// Number of binary inputs carried by one payload.
pub const INPUT_BITS: usize = PAYLOAD_LEN * 8;
/// Format version written by [`build_frame`] and expected by the default parser.
pub const FORMAT_VERSION: u32 = 1;

const SLOT_OFFSET: usize = 0;
const VERSION_OFFSET: usize = 4;
const CONTROL_OFFSET: usize = 8;
const PADDING_OFFSET: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame length {0} != {FRAME_LEN}")]
    WrongLength(usize),
    #[error("payload length {0} != {PAYLOAD_LEN}")]
    WrongPayloadLength(usize),
    #[error("format version {found} does not match expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

/// One owned 1088-byte sample.
#[derive(Clone, PartialEq, Eq)]
pub struct PacketFrame(Box<[u8; FRAME_LEN]>);

impl PacketFrame {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FrameError> {
        let arr: [u8; FRAME_LEN] = bytes.try_into().map_err(|_| FrameError::WrongLength(bytes.len()))?;
        Ok(PacketFrame(Box::new(arr)))
    }

    pub fn zeroed() -> Self {
        PacketFrame(Box::new([0u8; FRAME_LEN]))
    }

    pub fn as_bytes(&self) -> &[u8; FRAME_LEN] {
        &self.0
    }

    pub fn as_bytes_mut(&mut self) -> &mut [u8; FRAME_LEN] {
        &mut self.0
    }

    pub fn slot_id(&self) -> u32 {
        read_u32(&self.0[..], SLOT_OFFSET)
    }

    pub fn set_slot_id(&mut self, slot_id: u32) {
        self.0[SLOT_OFFSET..SLOT_OFFSET + 4].copy_from_slice(&slot_id.to_le_bytes());
    }

    pub fn set_format_version(&mut self, version: u32) {
        self.0[VERSION_OFFSET..VERSION_OFFSET + 4].copy_from_slice(&version.to_le_bytes());
    }

    pub fn payload(&self) -> PayloadView<'_> {
        PayloadView::new(self.0[META_LEN..].try_into().expect("fixed split"))
    }
}

impl fmt::Debug for PacketFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PacketFrame")
            .field("slot_id", &self.slot_id())
            .field("format_version", &read_u32(&self.0[..], VERSION_OFFSET))
            .finish_non_exhaustive()
    }
}

impl AsRef<[u8]> for PacketFrame {
    fn as_ref(&self) -> &[u8] {
        &self.0[..]
    }
}

/// Parsed contents of reg0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reg0Metadata {
    pub slot_id: u32,
    pub format_version: u32,
    pub control: [u8; 8],
    pub padding: [u8; 48],
}

impl Reg0Metadata {
    /// Decodes reg0 at fixed offsets. No version check.
    pub fn decode(block: &[u8; META_LEN]) -> Self {
        Reg0Metadata {
            slot_id: read_u32(block, SLOT_OFFSET),
            format_version: read_u32(block, VERSION_OFFSET),
            control: block[CONTROL_OFFSET..PADDING_OFFSET].try_into().unwrap(),
            padding: block[PADDING_OFFSET..META_LEN].try_into().unwrap(),
        }
    }

    /// Metadata for a well-formed frame addressed to `slot_id`.
    pub fn for_slot(slot_id: u32) -> Self {
        Reg0Metadata {
            slot_id,
            format_version: FORMAT_VERSION,
            control: [0; 8],
            padding: [0; 48],
        }
    }
}

/// Read-only view of the 8192 binary inputs carried by a payload.
#[derive(Clone, Copy, PartialEq, Eq)]
pub struct PayloadView<'a> {
    bytes: &'a [u8; PAYLOAD_LEN],
}

impl<'a> PayloadView<'a> {
    pub fn new(bytes: &'a [u8; PAYLOAD_LEN]) -> Self {
        PayloadView { bytes }
    }

    pub fn as_bytes(&self) -> &'a [u8; PAYLOAD_LEN] {
        self.bytes
    }

    pub fn len_bits(&self) -> usize {
        INPUT_BITS
    }

    /// Raw bit at input index `idx` (LSB-first within each byte).
    #[inline]
    pub fn bit(&self, idx: usize) -> bool {
        (self.bytes[idx / 8] >> (idx % 8)) & 1 == 1
    }

    /// Input value at `idx` as +1 / -1.
    #[inline]
    pub fn sign(&self, idx: usize) -> i32 {
        if self.bit(idx) {
            1
        } else {
            -1
        }
    }
}

impl AsRef<[u8]> for PayloadView<'_> {
    fn as_ref(&self) -> &[u8] {
        &self.bytes[..]
    }
}

impl fmt::Debug for PayloadView<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ones: u32 = self.bytes.iter().map(|b| b.count_ones()).sum();
        write!(f, "PayloadView {{ ones: {ones} }}")
    }
}

/// Parses reg0 and exposes the payload, checking the format version.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameParser {
    pub expected_version: u32,
}

impl Default for FrameParser {
    fn default() -> Self {
        FrameParser {
            expected_version: FORMAT_VERSION,
        }
    }
}

impl FrameParser {
    pub fn new(expected_version: u32) -> Self {
        FrameParser { expected_version }
    }

    #[inline]
    pub fn parse<'a>(&self, bytes: &'a [u8]) -> Result<(Reg0Metadata, PayloadView<'a>), FrameError> {
        let frame: &[u8; FRAME_LEN] = bytes.try_into().map_err(|_| FrameError::WrongLength(bytes.len()))?;
        let meta = Reg0Metadata::decode(frame[..META_LEN].try_into().unwrap());
        if meta.format_version != self.expected_version {
            return Err(FrameError::VersionMismatch {
                found: meta.format_version,
                expected: self.expected_version,
            });
        }
        let payload = PayloadView::new(frame[META_LEN..].try_into().unwrap());
        Ok((meta, payload))
    }
}

/// Parses with the default expected version.
pub fn parse_frame(bytes: &[u8]) -> Result<(Reg0Metadata, PayloadView<'_>), FrameError> {
    FrameParser::default().parse(bytes)
}

/// Builds a frame carrying the current format version and zeroed padding.
pub fn build_frame(slot_id: u32, payload: &[u8], control: [u8; 8]) -> Result<PacketFrame, FrameError> {
    if payload.len() != PAYLOAD_LEN {
        return Err(FrameError::WrongPayloadLength(payload.len()));
    }
    let mut frame = PacketFrame::zeroed();
    frame.set_slot_id(slot_id);
    frame.set_format_version(FORMAT_VERSION);
    frame.0[CONTROL_OFFSET..PADDING_OFFSET].copy_from_slice(&control);
    frame.0[META_LEN..].copy_from_slice(payload);
    Ok(frame)
}

#[inline]
fn read_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_le_bytes(bytes[offset..offset + 4].try_into().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, RngCore, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_frame_with_version_parses() {
        let mut frame = PacketFrame::zeroed();
        frame.set_format_version(1);
        let (meta, payload) = parse_frame(frame.as_ref()).unwrap();
        assert_eq!(meta.slot_id, 0);
        assert!(payload.as_bytes().iter().all(|&b| b == 0));
    }

    #[test]
    fn short_input_is_wrong_length() {
        assert_eq!(parse_frame(&[0u8; 1087]).unwrap_err(), FrameError::WrongLength(1087));
        assert_eq!(parse_frame(&[0u8; 1089]).unwrap_err(), FrameError::WrongLength(1089));
        assert!(PacketFrame::from_bytes(&[0u8; 1087]).is_err());
    }

    #[test]
    fn slot_id_is_little_endian() {
        let mut bytes = build_frame(0, &[0; PAYLOAD_LEN], [0; 8]).unwrap();
        bytes.as_bytes_mut()[..4].copy_from_slice(&[0x05, 0x00, 0x00, 0x00]);
        let (meta, _) = parse_frame(bytes.as_ref()).unwrap();
        assert_eq!(meta.slot_id, 5);
    }

    #[test]
    fn version_mismatch_is_distinct() {
        let mut frame = build_frame(3, &[0; PAYLOAD_LEN], [0; 8]).unwrap();
        frame.set_format_version(2);
        assert_eq!(
            parse_frame(frame.as_ref()).unwrap_err(),
            FrameError::VersionMismatch { found: 2, expected: 1 }
        );
        assert!(FrameParser::new(2).parse(frame.as_ref()).is_ok());
    }

    #[test]
    fn build_zero_frame() {
        let frame = build_frame(0, &[0; PAYLOAD_LEN], [0; 8]).unwrap();
        assert_eq!(frame.as_bytes().len(), FRAME_LEN);
        assert_eq!(&frame.as_bytes()[4..8], &FORMAT_VERSION.to_le_bytes());
        assert!(frame.as_bytes()[16..64].iter().all(|&b| b == 0));
        assert_eq!(
            build_frame(0, &[0; 1023], [0; 8]).unwrap_err(),
            FrameError::WrongPayloadLength(1023)
        );
    }

    #[test]
    fn round_trip_recovers_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        for _ in 0..1000 {
            let mut payload = [0u8; PAYLOAD_LEN];
            rng.fill_bytes(&mut payload);
            let control: [u8; 8] = rng.gen();
            let frame = build_frame(15, &payload, control).unwrap();
            let (meta, view) = parse_frame(frame.as_ref()).unwrap();
            assert_eq!(meta.slot_id, 15);
            assert_eq!(meta.format_version, FORMAT_VERSION);
            assert_eq!(meta.control, control);
            assert_eq!(meta.padding, [0; 48]);
            assert_eq!(view.as_bytes(), &payload);
        }
    }

    #[test]
    fn bit_extraction_matches_per_bit_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let mut payload = [0u8; PAYLOAD_LEN];
            rng.fill_bytes(&mut payload);
            let view = PayloadView::new(&payload);
            let mut idx = 0;
            for byte in payload {
                let mut b = byte;
                for _ in 0..8 {
                    assert_eq!(view.bit(idx), b & 1 == 1);
                    assert_eq!(view.sign(idx), if b & 1 == 1 { 1 } else { -1 });
                    b >>= 1;
                    idx += 1;
                }
            }
            assert_eq!(idx, INPUT_BITS);
        }
    }
}
