//! Framed binary protocol linking device, hub and dashboard.
//!
//! ```text
//! A5 | 01 | type | seq:u16le | len:u16le | payload[len] | crc:u16le
//! ```
//! The CRC is CRC-16/CCITT-FALSE over everything from the magic byte to the
//! end of the payload.

mod codec;
mod crc;
mod message;

pub use codec::{
    decode_frame, encode_frame, encode_raw, DecodeError, Decoded, DecoderStats, FrameDecoder,
    FrameError, StreamEvent, CRC_LEN, HEADER_LEN, MAGIC, MAX_PAYLOAD, VERSION,
};
pub use crc::{crc16, Crc16};
pub use message::{Message, MessageKind, SLACK_STEP};

/// Per-direction sequence counter.
#[derive(Debug, Clone, Copy, Default)]
pub struct SeqCounter(u16);

impl SeqCounter {
    pub fn next(&mut self) -> u16 {
        let s = self.0;
        self.0 = self.0.wrapping_add(1);
        s
    }

    pub fn peek(&self) -> u16 {
        self.0
    }
}
