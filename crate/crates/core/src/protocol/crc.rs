//! CRC-16/CCITT-FALSE (poly 0x1021, init 0xFFFF, no reflection, no xor-out).

use crc::{Crc, Digest, CRC_16_IBM_3740};

static CCITT_FALSE: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CCITT_FALSE.checksum(bytes)
}

/// Incremental CRC state; `Crc16::new().update(a).update(b)` equals
/// `crc16(a ++ b)`.
#[derive(Clone)]
pub struct Crc16 {
    digest: Digest<'static, u16>,
}

impl Crc16 {
    pub fn new() -> Self {
        Self {
            digest: CCITT_FALSE.digest(),
        }
    }

    pub fn update(mut self, bytes: &[u8]) -> Self {
        self.digest.update(bytes);
        self
    }

    pub fn finish(self) -> u16 {
        self.digest.finalize()
    }
}

impl Default for Crc16 {
    fn default() -> Self {
        Self::new()
    }
}
