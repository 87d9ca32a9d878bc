use thiserror::Error;

use super::crc::crc16;
use super::message::{Message, MessageKind};

pub const MAGIC: u8 = 0xA5;
pub const VERSION: u8 = 0x01;
pub const HEADER_LEN: usize = 7;
pub const CRC_LEN: usize = 2;
pub const MAX_PAYLOAD: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds {MAX_PAYLOAD}")]
    FrameTooLarge(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("expected magic 0xA5, found {0:#04x}")]
    BadMagic(u8),
    #[error("declared payload length {0} exceeds {MAX_PAYLOAD}")]
    BadLength(usize),
    #[error("crc mismatch: computed {computed:#06x}, frame carries {received:#06x}")]
    BadCrc { computed: u16, received: u16 },
    #[error("unsupported protocol version {0}")]
    UnsupportedVersion(u8),
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("malformed payload for {0:?}")]
    BadPayload(MessageKind),
    #[error("need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
}

/// A successfully decoded frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decoded {
    pub seq: u16,
    pub message: Message,
    /// Bytes the frame occupied.
    pub len: usize,
}

pub fn encode_frame(msg: &Message, seq: u16) -> Result<Vec<u8>, FrameError> {
    let mut payload = Vec::with_capacity(msg.kind().payload_len());
    msg.write_payload(&mut payload);
    encode_raw(msg.kind().to_byte(), seq, &payload)
}

/// Frame arbitrary payload bytes under `msg_type`.
pub fn encode_raw(msg_type: u8, seq: u16, payload: &[u8]) -> Result<Vec<u8>, FrameError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(FrameError::FrameTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.push(MAGIC);
    out.push(VERSION);
    out.push(msg_type);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc16(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Decode one frame starting at `bytes[0]`.
pub fn decode_frame(bytes: &[u8]) -> Result<Decoded, DecodeError> {
    let truncated = |needed: usize| DecodeError::Truncated {
        needed,
        have: bytes.len(),
    };
    match bytes.first() {
        None => return Err(truncated(1)),
        Some(&b) if b != MAGIC => return Err(DecodeError::BadMagic(b)),
        _ => {}
    }
    if bytes.len() < HEADER_LEN {
        return Err(truncated(HEADER_LEN));
    }
    let payload_len = u16::from_le_bytes([bytes[5], bytes[6]]) as usize;
    if payload_len > MAX_PAYLOAD {
        return Err(DecodeError::BadLength(payload_len));
    }
    let total = HEADER_LEN + payload_len + CRC_LEN;
    if bytes.len() < total {
        return Err(truncated(total));
    }
    let body = &bytes[..HEADER_LEN + payload_len];
    let computed = crc16(body);
    let received = u16::from_le_bytes([bytes[total - 2], bytes[total - 1]]);
    if computed != received {
        return Err(DecodeError::BadCrc { computed, received });
    }
    if bytes[1] != VERSION {
        return Err(DecodeError::UnsupportedVersion(bytes[1]));
    }
    let kind = MessageKind::from_byte(bytes[2]).ok_or(DecodeError::UnknownType(bytes[2]))?;
    let payload = &body[HEADER_LEN..];
    if payload.len() != kind.payload_len() {
        return Err(DecodeError::BadPayload(kind));
    }
    let message = Message::read_payload(kind, payload).ok_or(DecodeError::BadPayload(kind))?;
    Ok(Decoded {
        seq: u16::from_le_bytes([bytes[3], bytes[4]]),
        message,
        len: total,
    })
}

/// Counters kept by a [`FrameDecoder`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecoderStats {
    pub frames: u64,
    pub bad_magic_bytes: u64,
    pub bad_length: u64,
    pub bad_crc: u64,
    pub unknown_type: u64,
    pub bad_payload: u64,
    /// Sequence numbers skipped between consecutive good frames.
    pub seq_gaps: u64,
}

/// Non-fatal problems reported by the stream decoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StreamEvent {
    Frame(Decoded),
    /// Discarded input; the decoder has already resynchronized.
    Dropped(DecodeError),
}

/// Resynchronizing decoder over an ordered byte stream. One per connection.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    start: usize,
    last_seq: Option<u16>,
    stats: DecoderStats,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.start
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.start > 4096 && self.start * 2 > self.buf.len() {
            self.buf.drain(..self.start);
            self.start = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    /// Next frame or drop event; `None` when more bytes are needed.
    pub fn next_event(&mut self) -> Option<StreamEvent> {
        loop {
            let window = &self.buf[self.start..];
            if window.is_empty() {
                return None;
            }
            match decode_frame(window) {
                Ok(d) => {
                    self.start += d.len;
                    self.stats.frames += 1;
                    if let Some(prev) = self.last_seq {
                        self.stats.seq_gaps += d.seq.wrapping_sub(prev).wrapping_sub(1) as u64;
                    }
                    self.last_seq = Some(d.seq);
                    return Some(StreamEvent::Frame(d));
                }
                Err(DecodeError::Truncated { .. }) => return None,
                Err(DecodeError::BadMagic(_)) => {
                    // Skip to the next candidate magic byte.
                    let skip = window[1..]
                        .iter()
                        .position(|&b| b == MAGIC)
                        .map_or(window.len(), |p| p + 1);
                    self.start += skip;
                    self.stats.bad_magic_bytes += skip as u64;
                }
                Err(e @ DecodeError::BadLength(_)) => {
                    self.start += 1;
                    self.stats.bad_length += 1;
                    return Some(StreamEvent::Dropped(e));
                }
                Err(e @ DecodeError::BadCrc { .. }) => {
                    let total = frame_span(window);
                    self.start += resync_within(window, total);
                    self.stats.bad_crc += 1;
                    return Some(StreamEvent::Dropped(e));
                }
                Err(e) => {
                    // CRC verified but contents unusable: drop the whole frame.
                    self.start += frame_span(window);
                    match e {
                        DecodeError::UnknownType(_) => self.stats.unknown_type += 1,
                        _ => self.stats.bad_payload += 1,
                    }
                    return Some(StreamEvent::Dropped(e));
                }
            }
        }
    }

    /// Push `bytes` and drain every complete event.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<StreamEvent> {
        self.push(bytes);
        std::iter::from_fn(|| self.next_event()).collect()
    }
}

fn frame_span(window: &[u8]) -> usize {
    HEADER_LEN + u16::from_le_bytes([window[5], window[6]]) as usize + CRC_LEN
}

/// After a CRC failure, bytes to skip: up to the first embedded magic that
/// begins a valid frame, else the whole declared span.
fn resync_within(window: &[u8], span: usize) -> usize {
    for j in 1..span {
        if window[j] != MAGIC {
            continue;
        }
        if decode_frame(&window[j..]).is_ok() {
            return j;
        }
    }
    span
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{FitColor, Motor};

    #[test]
    fn calibrate_cmd_layout() {
        let f = encode_frame(&Message::CalibrateCmd, 0).unwrap();
        assert_eq!(f.len(), 9);
        assert_eq!(&f[..7], &[0xA5, 0x01, 0x05, 0x00, 0x00, 0x00, 0x00]);
        let crc = crc16(&f[..7]);
        assert_eq!(&f[7..], &crc.to_le_bytes());
    }

    #[test]
    fn multibyte_fields_little_endian() {
        let f = encode_frame(
            &Message::HumiditySample {
                ts_ms: 0x0403_0201,
                resistance_code: 0xBEEF,
            },
            0x1234,
        )
        .unwrap();
        assert_eq!(&f[3..5], &[0x34, 0x12]);
        assert_eq!(&f[5..7], &[6, 0]);
        assert_eq!(&f[7..13], &[1, 2, 3, 4, 0xEF, 0xBE]);
    }

    #[test]
    fn oversize_payload_rejected() {
        assert_eq!(
            encode_raw(0x01, 0, &[0u8; 513]),
            Err(FrameError::FrameTooLarge(513))
        );
        assert!(encode_raw(0x01, 0, &[0u8; 512]).is_ok());
    }

    #[test]
    fn decode_error_kinds() {
        let f = encode_frame(
            &Message::MotorCommand {
                motor: Motor::Left,
                step: 1,
            },
            3,
        )
        .unwrap();
        assert!(matches!(decode_frame(&f[..5]), Err(DecodeError::Truncated { .. })));
        assert!(matches!(decode_frame(&[0x00]), Err(DecodeError::BadMagic(0))));
        let unknown = encode_raw(0x0A, 0, &[]).unwrap();
        assert_eq!(decode_frame(&unknown), Err(DecodeError::UnknownType(0x0A)));
        let short = encode_raw(0x04, 0, &[0]).unwrap();
        assert_eq!(
            decode_frame(&short),
            Err(DecodeError::BadPayload(MessageKind::MotorCommand))
        );
        let bad_color = encode_raw(0x03, 0, &[9; 8]).unwrap();
        assert!(matches!(decode_frame(&bad_color), Err(DecodeError::BadPayload(_))));
    }

    #[test]
    fn stream_resyncs_after_garbage() {
        let good = encode_frame(
            &Message::FitStateUpdate {
                colors: [FitColor::Green; 8],
            },
            7,
        )
        .unwrap();
        let mut stream = vec![0x00, 0xA5, 0x13, 0xA5, 0x01, 0x02, 0x00, 0x00, 0x10, 0x00, 0x42];
        stream.extend_from_slice(&good);
        let mut dec = FrameDecoder::new();
        let frames: Vec<_> = dec
            .feed(&stream)
            .into_iter()
            .filter_map(|e| match e {
                StreamEvent::Frame(d) => Some(d),
                _ => None,
            })
            .collect();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].seq, 7);
    }

    #[test]
    fn byte_at_a_time() {
        let msgs = [
            Message::CalibrateCmd,
            Message::Alert {
                code: crate::types::AlertCode::HumidityDoff,
            },
        ];
        let mut bytes = Vec::new();
        for (i, m) in msgs.iter().enumerate() {
            bytes.extend(encode_frame(m, i as u16).unwrap());
        }
        let mut dec = FrameDecoder::new();
        let mut out = Vec::new();
        for b in bytes {
            out.extend(dec.feed(&[b]));
        }
        assert_eq!(out.len(), 2);
        assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn seq_gap_counted() {
        let mut dec = FrameDecoder::new();
        for seq in [0u16, 1, 2, 5, 6, 65535, 0] {
            dec.feed(&encode_frame(&Message::CalibrateCmd, seq).unwrap());
        }
        // 2→5 skips 2, 6→65535 skips 65528, 65535→0 wraps cleanly
        assert_eq!(dec.stats().seq_gaps, 2 + 65528);
        assert_eq!(dec.stats().frames, 7);
    }

    #[test]
    fn corrupted_frame_counted_once_next_frame_survives() {
        let a = encode_frame(
            &Message::PressureFrame {
                ts_ms: 10,
                codes: [0xA5A5u16 as i16; 8],
            },
            1,
        )
        .unwrap();
        let b = encode_frame(&Message::CalibrateCmd, 2).unwrap();
        let mut bad = a.clone();
        bad[9] ^= 0x01;
        let mut stream = bad;
        stream.extend(&b);
        let mut dec = FrameDecoder::new();
        let ev = dec.feed(&stream);
        assert_eq!(dec.stats().bad_crc, 1);
        assert!(matches!(ev.last(), Some(StreamEvent::Frame(d)) if d.seq == 2));
    }
}
