//! Authenticated symmetric encryption for handshake payloads.
//!
//! Payloads are encrypted with AES-128 in CBC mode under a fresh random IV.
//! Before encryption the payload is extended with a 32-bit integrity check
//! (the leading bytes of its SHA-256 digest) and unambiguous `0x80`-marker
//! padding, so decryption under a wrong key or of tampered bytes fails
//! loudly instead of yielding garbage. The ciphertext layout is
//! `IV ‖ C₁ ‖ … ‖ Cₙ` where `n = ⌈(len + 5) / 16⌉`.

use aes::cipher::{BlockDecrypt, BlockEncrypt, KeyInit};
use aes::{Aes128, Block};
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

use super::{ct_eq, IntegrityFailure};

/// Cipher block width in bytes.
pub const BLOCK_BYTES: usize = 16;
/// Width of the truncated-digest integrity check appended to every payload.
pub const CHECK_BYTES: usize = 4;
/// Symmetric key width in bytes (128-bit security level).
pub const KEY_BYTES: usize = 16;
/// Construction identifier recorded in run metadata.
pub const SYM_CIPHER_NAME: &str = "aes128-cbc-check32";

/// A 128-bit symmetric session key.
#[derive(Clone, PartialEq, Eq)]
pub struct SymKey([u8; KEY_BYTES]);

impl SymKey {
    /// Draws a fresh uniformly random key.
    pub fn generate(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; KEY_BYTES];
        rng.fill_bytes(&mut bytes);
        SymKey(bytes)
    }

    pub fn from_bytes(bytes: [u8; KEY_BYTES]) -> Self {
        SymKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_BYTES] {
        &self.0
    }
}

// Keys never appear in logs or debug dumps.
impl fmt::Debug for SymKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymKey(<redacted>)")
    }
}

/// An IV-prefixed CBC ciphertext.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SymCiphertext {
    pub iv: [u8; BLOCK_BYTES],
    pub blocks: Vec<[u8; BLOCK_BYTES]>,
}

impl SymCiphertext {
    /// Total transmitted width, IV included.
    pub fn bit_len(&self) -> usize {
        8 * BLOCK_BYTES * (1 + self.blocks.len())
    }

    /// Flat wire form: `IV ‖ C₁ ‖ … ‖ Cₙ`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(BLOCK_BYTES * (1 + self.blocks.len()));
        out.extend_from_slice(&self.iv);
        for block in &self.blocks {
            out.extend_from_slice(block);
        }
        out
    }

    /// Parses the flat wire form; the length must be a positive multiple of
    /// the block width beyond the IV.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IntegrityFailure> {
        if bytes.len() < 2 * BLOCK_BYTES || bytes.len() % BLOCK_BYTES != 0 {
            return Err(IntegrityFailure);
        }
        let mut iv = [0u8; BLOCK_BYTES];
        iv.copy_from_slice(&bytes[..BLOCK_BYTES]);
        let blocks = bytes[BLOCK_BYTES..]
            .chunks_exact(BLOCK_BYTES)
            .map(|c| {
                let mut b = [0u8; BLOCK_BYTES];
                b.copy_from_slice(c);
                b
            })
            .collect();
        Ok(SymCiphertext { iv, blocks })
    }
}

/// Number of ciphertext blocks (IV excluded) produced for a payload of
/// `len` bytes: the payload grows by the 4-byte check and at least one
/// padding byte before rounding up to the block width.
pub fn block_count(len: usize) -> usize {
    (len + CHECK_BYTES + 1).div_ceil(BLOCK_BYTES)
}

fn check_value(msg: &[u8]) -> [u8; CHECK_BYTES] {
    let digest = Sha256::digest(msg);
    let mut check = [0u8; CHECK_BYTES];
    check.copy_from_slice(&digest[..CHECK_BYTES]);
    check
}

/// Encrypts `plaintext` under a fresh random IV.
///
/// # Panics
///
/// Panics if `plaintext` is empty; every protocol payload carries at least
/// an identifier or nonce.
pub fn sym_encrypt(key: &SymKey, plaintext: &[u8], rng: &mut impl RngCore) -> SymCiphertext {
    assert!(!plaintext.is_empty(), "plaintext must be non-empty");
    let mut iv = [0u8; BLOCK_BYTES];
    rng.fill_bytes(&mut iv);

    let mut payload = Vec::with_capacity(block_count(plaintext.len()) * BLOCK_BYTES);
    payload.extend_from_slice(plaintext);
    payload.extend_from_slice(&check_value(plaintext));
    payload.push(0x80);
    payload.resize(payload.len().div_ceil(BLOCK_BYTES) * BLOCK_BYTES, 0);

    let cipher = Aes128::new_from_slice(key.as_bytes()).expect("16-byte key");
    let mut blocks = Vec::with_capacity(payload.len() / BLOCK_BYTES);
    let mut chain = iv;
    for chunk in payload.chunks_exact(BLOCK_BYTES) {
        let mut block = Block::default();
        for (i, byte) in block.iter_mut().enumerate() {
            *byte = chunk[i] ^ chain[i];
        }
        cipher.encrypt_block(&mut block);
        chain.copy_from_slice(&block);
        blocks.push(chain);
    }
    SymCiphertext { iv, blocks }
}

/// Decrypts and verifies a ciphertext, returning the original payload.
pub fn sym_decrypt(key: &SymKey, ct: &SymCiphertext) -> Result<Vec<u8>, IntegrityFailure> {
    if ct.blocks.is_empty() {
        return Err(IntegrityFailure);
    }
    let cipher = Aes128::new_from_slice(key.as_bytes()).expect("16-byte key");
    let mut payload = Vec::with_capacity(ct.blocks.len() * BLOCK_BYTES);
    let mut chain = ct.iv;
    for block in &ct.blocks {
        let mut plain = Block::default();
        plain.copy_from_slice(block);
        cipher.decrypt_block(&mut plain);
        for (i, byte) in plain.iter_mut().enumerate() {
            *byte ^= chain[i];
        }
        chain = *block;
        payload.extend_from_slice(&plain);
    }

    // Strip `0x80 ‖ 0…0` padding: at most BLOCK_BYTES - 1 zero fill bytes may
    // trail the marker, and the marker must be present.
    let mut end = payload.len();
    while end > 0 && payload[end - 1] == 0 {
        end -= 1;
    }
    if end == 0 || payload.len() - end > BLOCK_BYTES - 1 || payload[end - 1] != 0x80 {
        return Err(IntegrityFailure);
    }
    let body = &payload[..end - 1];
    if body.len() <= CHECK_BYTES {
        return Err(IntegrityFailure);
    }
    let (msg, check) = body.split_at(body.len() - CHECK_BYTES);
    if !ct_eq(check, &check_value(msg)) {
        return Err(IntegrityFailure);
    }
    Ok(msg.to_vec())
}
