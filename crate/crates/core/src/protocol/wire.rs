//! Bit-exact framing for the over-the-air messages.
//!
//! Air time is billed per bit, so frames are packed to their exact widths
//! rather than byte-aligned structs. Frame kinds are distinguished by their
//! total bit length plus fixed command codes, mirroring how a slotted-ALOHA
//! air interface distinguishes its short control frames:
//!
//! | frame            | bits (default profile) | layout |
//! |------------------|------------------------|--------|
//! | `Query`          | 22  | `1000` ‖ 9 mode bits ‖ 4-bit Q ‖ 5-bit checksum |
//! | `Rn16`           | 16  | raw handle |
//! | `AckChallenge`   | 50  | `01` ‖ 16-bit handle echo ‖ challenge |
//! | `AuthRequest`    | 872 | `R1 ‖ R2` |
//! | `Final`          | 384 | `B` |
//!
//! The mode and checksum fields are carried as constant zeros: link-layer
//! error detection is modeled by the radio module, not by per-frame CRCs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{AuthRequest, SizeProfile};
use crate::crypto::{KemCiphertext, SymCiphertext};

const QUERY_COMMAND: u64 = 0b1000;
const ACK_COMMAND: u64 = 0b01;

/// A frame captured at bit granularity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitString {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitString {
    pub fn bit_len(&self) -> usize {
        self.bit_len
    }

    /// Backing bytes, most-significant bit first; trailing pad bits in the
    /// last byte are zero.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Wraps raw bytes as a frame of `bit_len` bits. Used by harnesses that
    /// inject noise; `bit_len` may not exceed the supplied storage.
    pub fn from_bytes(bytes: Vec<u8>, bit_len: usize) -> Option<Self> {
        if bit_len > bytes.len() * 8 {
            return None;
        }
        let mut bs = BitString { bytes, bit_len };
        bs.bytes.truncate(bit_len.div_ceil(8));
        // Zero the pad bits so equal frames compare equal bytewise.
        if let (Some(last), rem @ 1..=7) = (bs.bytes.last_mut(), bit_len % 8) {
            *last &= 0xffu8 << (8 - rem);
        }
        Some(bs)
    }
}

struct BitWriter {
    bytes: Vec<u8>,
    bit_len: usize,
}

impl BitWriter {
    fn new() -> Self {
        BitWriter {
            bytes: Vec::new(),
            bit_len: 0,
        }
    }

    /// Appends the low `bits` bits of `value`, most significant first.
    fn push(&mut self, value: u64, bits: u32) {
        debug_assert!(bits <= 64);
        for i in (0..bits).rev() {
            let bit = (value >> i) & 1;
            if self.bit_len % 8 == 0 {
                self.bytes.push(0);
            }
            if bit == 1 {
                *self.bytes.last_mut().unwrap() |= 1 << (7 - self.bit_len % 8);
            }
            self.bit_len += 1;
        }
    }

    fn push_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.push(u64::from(b), 8);
        }
    }

    fn finish(self) -> BitString {
        BitString {
            bytes: self.bytes,
            bit_len: self.bit_len,
        }
    }
}

struct BitReader<'a> {
    bits: &'a BitString,
    pos: usize,
}

impl<'a> BitReader<'a> {
    fn new(bits: &'a BitString) -> Self {
        BitReader { bits, pos: 0 }
    }

    fn read(&mut self, bits: u32) -> u64 {
        debug_assert!(self.pos + bits as usize <= self.bits.bit_len);
        let mut v = 0u64;
        for _ in 0..bits {
            let byte = self.bits.bytes[self.pos / 8];
            let bit = (byte >> (7 - self.pos % 8)) & 1;
            v = (v << 1) | u64::from(bit);
            self.pos += 1;
        }
        v
    }

    fn read_bytes(&mut self, n: usize) -> Vec<u8> {
        (0..n).map(|_| self.read(8) as u8).collect()
    }
}

/// Every frame a tag or reader puts on the air.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WireMessage {
    /// Step 1: opens a frame of `2^q` slots.
    Query { q: u8 },
    /// Step 2: a tag's random handle, sent in its chosen slot.
    Rn16 { value: u16 },
    /// Step 3: acknowledges `rn16` and issues the reader challenge.
    AckChallenge { rn16: u16, cr: u32 },
    /// Step 4: the tag's encrypted response pair.
    AuthRequest(AuthRequest),
    /// Step 7: the server's encrypted final message, forwarded by the
    /// reader.
    Final { b: SymCiphertext },
}

impl WireMessage {
    /// Transmitted width under `profile`.
    pub fn bit_len(&self, profile: &SizeProfile) -> usize {
        match self {
            WireMessage::Query { .. } => profile.query_bits(),
            WireMessage::Rn16 { .. } => profile.rn16_bits(),
            WireMessage::AckChallenge { .. } => profile.ack_bits(),
            WireMessage::AuthRequest(_) => profile.auth_bits(),
            WireMessage::Final { .. } => profile.final_bits(),
        }
    }
}

/// Decoding failure: the frame matches no message shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("no frame shape is {0} bits wide")]
    UnknownLength(usize),
    #[error("frame failed structural validation")]
    Malformed,
}

/// Packs a message to its exact wire width.
///
/// # Panics
///
/// Panics if a ciphertext's width disagrees with `profile` — sessions are
/// always encoded under the profile that produced them.
pub fn encode(msg: &WireMessage, profile: &SizeProfile) -> BitString {
    let mut w = BitWriter::new();
    match msg {
        WireMessage::Query { q } => {
            w.push(QUERY_COMMAND, 4);
            w.push(0, 9); // mode bits, constant in this model
            w.push(u64::from(*q & 0x0f), 4);
            w.push(0, 5); // checksum field, constant in this model
        }
        WireMessage::Rn16 { value } => w.push(u64::from(*value), 16),
        WireMessage::AckChallenge { rn16, cr } => {
            w.push(ACK_COMMAND, 2);
            w.push(u64::from(*rn16), 16);
            w.push(u64::from(profile.mask_cr(*cr)), profile.cr_bits());
        }
        WireMessage::AuthRequest(auth) => {
            assert_eq!(auth.r1.bit_len(), profile.r1_bits());
            assert_eq!(auth.r2.bit_len(), profile.r2_bits());
            w.push_bytes(&auth.r1.to_bytes());
            w.push_bytes(&auth.r2.to_bytes());
        }
        WireMessage::Final { b } => {
            assert_eq!(b.bit_len(), profile.final_bits());
            w.push_bytes(&b.to_bytes());
        }
    }
    let bits = w.finish();
    debug_assert_eq!(bits.bit_len(), msg.bit_len(profile));
    bits
}

/// Recovers a message from a frame, dispatching on its exact bit length.
pub fn decode(bits: &BitString, profile: &SizeProfile) -> Result<WireMessage, WireError> {
    let len = bits.bit_len();
    let mut r = BitReader::new(bits);
    if len == profile.query_bits() {
        if r.read(4) != QUERY_COMMAND || r.read(9) != 0 {
            return Err(WireError::Malformed);
        }
        let q = r.read(4) as u8;
        if r.read(5) != 0 {
            return Err(WireError::Malformed);
        }
        Ok(WireMessage::Query { q })
    } else if len == profile.rn16_bits() {
        Ok(WireMessage::Rn16 {
            value: r.read(16) as u16,
        })
    } else if len == profile.ack_bits() {
        if r.read(2) != ACK_COMMAND {
            return Err(WireError::Malformed);
        }
        Ok(WireMessage::AckChallenge {
            rn16: r.read(16) as u16,
            cr: r.read(profile.cr_bits()) as u32,
        })
    } else if len == profile.auth_bits() {
        let r1_bytes = r.read_bytes(profile.r1_bits() / 8);
        let r2_bytes = r.read_bytes(profile.r2_bits() / 8);
        let r1 = SymCiphertext::from_bytes(&r1_bytes).map_err(|_| WireError::Malformed)?;
        let r2 = KemCiphertext::from_bytes(&r2_bytes).map_err(|_| WireError::Malformed)?;
        Ok(WireMessage::AuthRequest(AuthRequest { r1, r2 }))
    } else if len == profile.final_bits() {
        let b_bytes = r.read_bytes(profile.final_bits() / 8);
        let b = SymCiphertext::from_bytes(&b_bytes).map_err(|_| WireError::Malformed)?;
        Ok(WireMessage::Final { b })
    } else {
        Err(WireError::UnknownLength(len))
    }
}
