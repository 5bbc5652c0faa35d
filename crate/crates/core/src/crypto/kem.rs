//! Key encapsulation over the NIST P-256 curve.
//!
//! A tag encrypts its session key and counter-challenge to the server's
//! long-term public key with an ephemeral Diffie–Hellman exchange: a fresh
//! scalar `r` yields an ephemeral point `R = rG` sent in the clear, the
//! shared point `rP` is hashed into a keystream that wraps the payload, and
//! a truncated digest binds the wrapped bytes to the exchange. The 256-bit
//! field places the construction at the 128-bit security level, matching the
//! symmetric key it carries (see [`super::keysizes`]).

use p256::elliptic_curve::point::AffineCoordinates;
use p256::elliptic_curve::sec1::{FromEncodedPoint, ToEncodedPoint};
use p256::{AffinePoint, EncodedPoint, NonZeroScalar, ProjectivePoint};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;

use super::{ct_eq, IntegrityFailure};

/// Compressed SEC1 width of a curve point.
pub const POINT_BYTES: usize = 33;
/// Width of the truncated binding tag.
pub const TAG_BYTES: usize = 8;
/// Field width of the curve in bits.
pub const CURVE_FIELD_BITS: usize = 256;
/// Construction identifier recorded in run metadata.
pub const KEM_NAME: &str = "p256-ecdh-sha256";

/// Long-term decapsulation key held only by the back-end server.
#[derive(Clone)]
pub struct KemPrivateKey(NonZeroScalar);

impl fmt::Debug for KemPrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("KemPrivateKey(<redacted>)")
    }
}

/// Long-term encapsulation key provisioned into every tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KemPublicKey(AffinePoint);

/// An encapsulated payload: ephemeral point, keystream-wrapped bytes, and
/// binding tag. On the wire this is `264 + 8·len + 64` bits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KemCiphertext {
    #[serde(with = "super::serde_hex")]
    pub ephemeral_point: [u8; POINT_BYTES],
    pub wrapped: Vec<u8>,
    pub tag: [u8; TAG_BYTES],
}

impl KemCiphertext {
    /// Total transmitted width.
    pub fn bit_len(&self) -> usize {
        8 * (POINT_BYTES + self.wrapped.len() + TAG_BYTES)
    }

    /// Flat wire form: `R ‖ wrapped ‖ tag`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(POINT_BYTES + self.wrapped.len() + TAG_BYTES);
        out.extend_from_slice(&self.ephemeral_point);
        out.extend_from_slice(&self.wrapped);
        out.extend_from_slice(&self.tag);
        out
    }

    /// Parses the flat wire form; the wrapped width is whatever remains
    /// between the fixed-size point and tag.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, IntegrityFailure> {
        if bytes.len() < POINT_BYTES + TAG_BYTES {
            return Err(IntegrityFailure);
        }
        let mut ephemeral_point = [0u8; POINT_BYTES];
        ephemeral_point.copy_from_slice(&bytes[..POINT_BYTES]);
        let mut tag = [0u8; TAG_BYTES];
        tag.copy_from_slice(&bytes[bytes.len() - TAG_BYTES..]);
        Ok(KemCiphertext {
            ephemeral_point,
            wrapped: bytes[POINT_BYTES..bytes.len() - TAG_BYTES].to_vec(),
            tag,
        })
    }
}

/// Generates the server's long-term keypair.
pub fn kem_keygen<R: RngCore + CryptoRng>(rng: &mut R) -> (KemPrivateKey, KemPublicKey) {
    let sk = NonZeroScalar::random(rng);
    let pk = (ProjectivePoint::GENERATOR * *sk).to_affine();
    (KemPrivateKey(sk), KemPublicKey(pk))
}

/// Encapsulates `payload` to `pk` under a fresh ephemeral scalar.
pub fn kem_encapsulate<R: RngCore + CryptoRng>(
    pk: &KemPublicKey,
    payload: &[u8],
    rng: &mut R,
) -> KemCiphertext {
    let eph = NonZeroScalar::random(rng);
    let eph_affine = (ProjectivePoint::GENERATOR * *eph).to_affine();
    let mut ephemeral_point = [0u8; POINT_BYTES];
    ephemeral_point.copy_from_slice(eph_affine.to_encoded_point(true).as_bytes());

    let shared = (ProjectivePoint::from(pk.0) * *eph).to_affine();
    let secret = shared.x();
    let wrapped = xor_keystream(&secret, &ephemeral_point, payload);
    let tag = binding_tag(&secret, &ephemeral_point, &wrapped);
    KemCiphertext {
        ephemeral_point,
        wrapped,
        tag,
    }
}

/// Recovers the payload, rejecting undecodable points and any ciphertext
/// whose binding tag fails to verify.
pub fn kem_decapsulate(sk: &KemPrivateKey, ct: &KemCiphertext) -> Result<Vec<u8>, IntegrityFailure> {
    let encoded = EncodedPoint::from_bytes(ct.ephemeral_point).map_err(|_| IntegrityFailure)?;
    // A compressed 33-byte encoding can never be the identity, so a
    // successful decode is always a proper curve point.
    let eph: AffinePoint =
        Option::from(AffinePoint::from_encoded_point(&encoded)).ok_or(IntegrityFailure)?;
    let shared = (ProjectivePoint::from(eph) * *sk.0).to_affine();
    let secret = shared.x();
    let expected = binding_tag(&secret, &ct.ephemeral_point, &ct.wrapped);
    if !ct_eq(&expected, &ct.tag) {
        return Err(IntegrityFailure);
    }
    Ok(xor_keystream(&secret, &ct.ephemeral_point, &ct.wrapped))
}

/// XORs `data` with a SHA-256 counter-mode keystream bound to the shared
/// secret and the ephemeral point.
fn xor_keystream(secret: &[u8], point: &[u8; POINT_BYTES], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    let mut counter: u32 = 0;
    while out.len() < data.len() {
        let mut h = Sha256::new();
        h.update(b"kem-wrap-v1");
        h.update(secret);
        h.update(point);
        h.update(counter.to_be_bytes());
        let block = h.finalize();
        for (i, key_byte) in block.iter().enumerate() {
            let pos = counter as usize * block.len() + i;
            if pos >= data.len() {
                break;
            }
            out.push(data[pos] ^ key_byte);
        }
        counter += 1;
    }
    out
}

/// Truncated digest binding the wrapped bytes to this particular exchange.
fn binding_tag(secret: &[u8], point: &[u8; POINT_BYTES], wrapped: &[u8]) -> [u8; TAG_BYTES] {
    let mut h = Sha256::new();
    h.update(b"kem-tag-v1");
    h.update(secret);
    h.update(point);
    h.update(wrapped);
    let digest = h.finalize();
    let mut tag = [0u8; TAG_BYTES];
    tag.copy_from_slice(&digest[..TAG_BYTES]);
    tag
}
