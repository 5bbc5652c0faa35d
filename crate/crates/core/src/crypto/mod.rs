//! Cryptographic primitives for the mutual-authentication handshake.
//!
//! Tags carry only a lightweight symmetric cipher plus one elliptic-curve
//! encapsulation per session: the session key and challenge travel to the
//! server under ECC ([`kem`]), while identity and nonce material travels
//! under AES with an integrity check ([`sym`]). The [`keysizes`] table
//! documents why that split is attractive on constrained hardware — at equal
//! security the ECC key is an order of magnitude smaller than RSA or Rabin
//! moduli.

mod kem;
mod keysizes;
mod sym;

pub use kem::{
    kem_decapsulate, kem_encapsulate, kem_keygen, KemCiphertext, KemPrivateKey, KemPublicKey,
    CURVE_FIELD_BITS, KEM_NAME, POINT_BYTES, TAG_BYTES,
};
pub use keysizes::{level_for_sym_bits, SecurityLevel, SECURITY_LEVELS};
pub use sym::{
    block_count, sym_decrypt, sym_encrypt, SymCiphertext, SymKey, BLOCK_BYTES, CHECK_BYTES,
    KEY_BYTES, SYM_CIPHER_NAME,
};

use thiserror::Error;

/// Returned when a ciphertext fails verification: wrong key, tampered bytes,
/// malformed padding, or an undecodable ephemeral point.
///
/// The error is deliberately opaque — callers learn that verification failed,
/// never which internal step rejected the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("ciphertext failed integrity verification")]
pub struct IntegrityFailure;

/// Constant-time byte comparison; the accumulated fold avoids early exit on
/// the first mismatching byte.
pub(crate) fn ct_eq(a: &[u8], b: &[u8]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut acc = 0u8;
    for (x, y) in a.iter().zip(b) {
        acc |= x ^ y;
    }
    acc == 0
}

pub(crate) fn to_hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

pub(crate) fn from_hex(s: &str) -> Option<Vec<u8>> {
    if s.len() % 2 != 0 {
        return None;
    }
    (0..s.len() / 2)
        .map(|i| u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok())
        .collect()
}

/// Serde adapter storing fixed-width byte arrays as hex strings, used for
/// fields wider than serde's native array support.
pub(crate) mod serde_hex {
    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(
        bytes: &[u8; N],
        ser: S,
    ) -> Result<S::Ok, S::Error> {
        ser.serialize_str(&super::to_hex(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        de: D,
    ) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(de)?;
        let v = super::from_hex(&s).ok_or_else(|| D::Error::custom("invalid hex"))?;
        v.try_into()
            .map_err(|_| D::Error::custom("unexpected byte width"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ct_eq_matches_slice_equality() {
        assert!(ct_eq(b"abcd", b"abcd"));
        assert!(!ct_eq(b"abcd", b"abce"));
        assert!(!ct_eq(b"abc", b"abcd"));
        assert!(ct_eq(b"", b""));
    }

    #[test]
    fn hex_roundtrip() {
        let bytes = [0x00, 0x01, 0xab, 0xff];
        assert_eq!(to_hex(&bytes), "0001abff");
        assert_eq!(from_hex("0001abff").unwrap(), bytes);
        assert!(from_hex("0x1").is_none());
        assert!(from_hex("zz").is_none());
    }
}
