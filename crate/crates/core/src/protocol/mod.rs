//! The eight-step mutual-authentication handshake.
//!
//! One session between a singulated tag, the roadside reader, and the
//! back-end server proceeds:
//!
//! 1. reader broadcasts a `Query` opening a slotted frame;
//! 2. the tag answers in its chosen slot with a 16-bit random handle;
//! 3. the reader acknowledges the handle and attaches a random challenge
//!    `Cr`;
//! 4. the tag replies with `R1 = AES_k(ID ‖ Cr)` and
//!    `R2 = KEM(pk_server, k ‖ Ct)` where `k` and the counter-challenge
//!    `Ct` are fresh per session;
//! 5. the reader estimates the tag's remaining time in coverage and
//!    forwards `(R1, R2, Cr, Time)` to the server;
//! 6. the server decapsulates `k`, decrypts `R1`, looks the identity up in
//!    O(1), verifies `Cr`, and answers `B = AES_k(Cr ‖ Ct ‖ Time)`;
//! 7. the reader forwards `B` to the tag;
//! 8. the tag decrypts `B`, verifies both nonces — authenticating the
//!    server, since only a holder of the decapsulation key could have
//!    recovered `k` and `Ct` — and sleeps for `Time`.
//!
//! Replay of a recorded `(R1, R2)` fails at step 6 because the server
//! compares the decrypted `Cr` against the fresh challenge of the current
//! session; forging `B` without `k` fails at step 8.

mod wire;

pub use wire::{decode, encode, BitString, WireError, WireMessage};

use crate::crypto::{
    block_count, kem_decapsulate, kem_encapsulate, kem_keygen, sym_decrypt, sym_encrypt,
    KemCiphertext, KemPrivateKey, KemPublicKey, SymCiphertext, SymKey, POINT_BYTES, TAG_BYTES,
};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

/// Width of a tag identifier in bytes (a 96-bit EPC-class code).
pub const TAG_ID_BYTES: usize = 12;

// TagId renders as hex in traces; a macro keeps Debug and Display in sync.
macro_rules! fmt_as_hex {
    () => {
        fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            for b in &self.0 {
                write!(f, "{b:02x}")?;
            }
            Ok(())
        }
    };
}

/// A 96-bit tag identifier.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TagId(pub [u8; TAG_ID_BYTES]);

impl fmt::Display for TagId {
    fmt_as_hex!();
}

impl TagId {
    /// Deterministic identifier from a serial number; convenient for
    /// simulations where tag 17 should be recognizable in traces.
    pub fn from_serial(serial: u64) -> Self {
        let mut bytes = [0u8; TAG_ID_BYTES];
        bytes[TAG_ID_BYTES - 8..].copy_from_slice(&serial.to_be_bytes());
        TagId(bytes)
    }

    /// Uniformly random identifier.
    pub fn random(rng: &mut impl RngCore) -> Self {
        let mut bytes = [0u8; TAG_ID_BYTES];
        rng.fill_bytes(&mut bytes);
        TagId(bytes)
    }
}

impl fmt::Debug for TagId {
    fmt_as_hex!();
}

/// Nonce and message widths shared by every party in a deployment.
///
/// Challenge widths are configurable in byte steps; all derived message
/// sizes follow from them. The default 32-bit nonces give the frozen wire
/// sizes documented on each accessor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeProfile {
    cr_bits: u32,
    ct_bits: u32,
}

/// Invalid nonce-width combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("nonce widths must be byte-aligned and within 8..=32 bits, got cr={cr_bits} ct={ct_bits}")]
pub struct ProfileError {
    pub cr_bits: u32,
    pub ct_bits: u32,
}

impl Default for SizeProfile {
    fn default() -> Self {
        SizeProfile {
            cr_bits: 32,
            ct_bits: 32,
        }
    }
}

impl SizeProfile {
    /// Validates nonce widths: byte-aligned, between 8 and 32 bits.
    pub fn new(cr_bits: u32, ct_bits: u32) -> Result<Self, ProfileError> {
        let valid = |b: u32| (8..=32).contains(&b) && b % 8 == 0;
        if valid(cr_bits) && valid(ct_bits) {
            Ok(SizeProfile { cr_bits, ct_bits })
        } else {
            Err(ProfileError { cr_bits, ct_bits })
        }
    }

    pub fn cr_bits(&self) -> u32 {
        self.cr_bits
    }

    pub fn ct_bits(&self) -> u32 {
        self.ct_bits
    }

    pub fn cr_bytes(&self) -> usize {
        self.cr_bits as usize / 8
    }

    pub fn ct_bytes(&self) -> usize {
        self.ct_bits as usize / 8
    }

    /// Truncates a draw to the configured reader-challenge width.
    pub fn mask_cr(&self, v: u32) -> u32 {
        mask_to(v, self.cr_bits)
    }

    /// Truncates a draw to the configured tag-challenge width.
    pub fn mask_ct(&self, v: u32) -> u32 {
        mask_to(v, self.ct_bits)
    }

    /// Frame-opening query: 4-bit command, 9 protocol-mode bits, 4-bit
    /// frame exponent, 5-bit checksum field. 22 bits.
    pub const fn query_bits(&self) -> usize {
        22
    }

    /// Slot-reply handle width. 16 bits.
    pub const fn rn16_bits(&self) -> usize {
        16
    }

    /// Acknowledgement: 2-bit command, echoed handle, reader challenge.
    /// 50 bits at the default widths.
    pub fn ack_bits(&self) -> usize {
        2 + 16 + self.cr_bits as usize
    }

    /// `R1 = AES_k(ID ‖ Cr)` with IV: 384 bits at the default widths.
    pub fn r1_bits(&self) -> usize {
        128 * (1 + block_count(TAG_ID_BYTES + self.cr_bytes()))
    }

    /// `R2 = KEM(k ‖ Ct)`: compressed point, wrapped payload, binding tag.
    /// 488 bits at the default widths.
    pub fn r2_bits(&self) -> usize {
        8 * (POINT_BYTES + SESSION_KEY_BYTES + self.ct_bytes() + TAG_BYTES)
    }

    /// Combined tag response `R1 ‖ R2`: 872 bits at the default widths.
    pub fn auth_bits(&self) -> usize {
        self.r1_bits() + self.r2_bits()
    }

    /// `B = AES_k(Cr ‖ Ct ‖ Time)` with IV: 384 bits at the default widths.
    pub fn final_bits(&self) -> usize {
        128 * (1 + block_count(self.cr_bytes() + self.ct_bytes() + TIME_BYTES))
    }

    /// Every bit a complete handshake puts on the air, query included:
    /// 1344 bits at the default widths.
    pub fn handshake_air_bits(&self) -> usize {
        self.query_bits()
            + self.rn16_bits()
            + self.ack_bits()
            + self.auth_bits()
            + self.final_bits()
    }

    /// Air bits between a tag hearing the query and accepting the final
    /// message, i.e. the serial transmission time of one authentication at
    /// zero processing and backhaul delay: 1322 bits at the default widths.
    pub fn tag_latency_bits(&self) -> usize {
        self.rn16_bits() + self.ack_bits() + self.auth_bits() + self.final_bits()
    }
}

/// Session-key width carried inside `R2` (an AES-128 key).
pub const SESSION_KEY_BYTES: usize = crate::crypto::KEY_BYTES;
/// Width of the sleep-time field in the final message: 64-bit microseconds.
pub const TIME_BYTES: usize = 8;

fn mask_to(v: u32, bits: u32) -> u32 {
    if bits >= 32 {
        v
    } else {
        v & ((1u32 << bits) - 1)
    }
}

/// Writes an integer nonce as its configured-width big-endian byte string.
fn nonce_bytes(v: u32, bytes: usize) -> Vec<u8> {
    v.to_be_bytes()[4 - bytes..].to_vec()
}

fn nonce_from_bytes(bytes: &[u8]) -> u32 {
    let mut v = 0u32;
    for &b in bytes {
        v = (v << 8) | b as u32;
    }
    v
}

/// The tag's combined step-4 response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthRequest {
    /// `AES_k(ID ‖ Cr)` — readable only once the server recovers `k`.
    pub r1: SymCiphertext,
    /// `KEM(pk_server, k ‖ Ct)` — readable only by the server.
    pub r2: KemCiphertext,
}

/// Step-5 backhaul message from reader to server.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerRequest {
    pub auth: AuthRequest,
    /// The challenge this reader issued for the session being verified.
    pub cr: u32,
    /// Reader's estimate of the tag's remaining time in coverage.
    pub time_estimate_us: u64,
}

/// Step-6 backhaul reply: the encrypted final message, forwarded verbatim
/// to the tag in step 7.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServerResponse {
    pub b: SymCiphertext,
}

/// Tag authentication lifecycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagPhase {
    /// Listening for a query.
    Idle,
    /// Drew a slot in the current frame, waiting for it to come up.
    Arbitrating,
    /// Handle acknowledged; auth request is on the air.
    Acknowledged,
    /// Auth request delivered; waiting for the final message.
    AwaitingFinal,
    /// Authenticated and powered down.
    Sleeping,
}

/// Per-session secrets and arbitration state held by a tag.
#[derive(Debug, Clone)]
pub struct SessionState {
    /// Fresh symmetric session key, also delivered to the server in `R2`.
    pub k: SymKey,
    /// The tag's counter-challenge to the server.
    pub ct: u32,
    /// The reader challenge, once received in step 3.
    pub cr: Option<u32>,
    /// Random slot-reply handle.
    pub rn16: u16,
    /// Chosen slot within the current frame.
    pub slot: u32,
}

/// Why a tag discarded a final message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagRejectReason {
    /// Not in a session awaiting a final message.
    NotListening,
    /// Ciphertext failed decryption under the session key.
    Integrity,
    /// Decrypted nonces do not match this session.
    NonceMismatch,
}

/// Result of delivering a final message to a tag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FinalOutcome {
    /// Mutual authentication complete; power down for this many seconds.
    Accept { sleep_s: f64 },
    Reject(TagRejectReason),
}

/// The tag half of the handshake: a provisioned identity plus the
/// session-by-session state machine.
#[derive(Debug, Clone)]
pub struct TagProtocol {
    id: TagId,
    server_key: KemPublicKey,
    profile: SizeProfile,
    phase: TagPhase,
    session: Option<SessionState>,
}

impl TagProtocol {
    pub fn new(id: TagId, server_key: KemPublicKey, profile: SizeProfile) -> Self {
        TagProtocol {
            id,
            server_key,
            profile,
            phase: TagPhase::Idle,
            session: None,
        }
    }

    pub fn id(&self) -> TagId {
        self.id
    }

    pub fn phase(&self) -> TagPhase {
        self.phase
    }

    pub fn session(&self) -> Option<&SessionState> {
        self.session.as_ref()
    }

    /// Step 2 (tag side): an idle tag hearing a query draws a slot in
    /// `[0, 2^q)`, a reply handle, and fresh session secrets. Returns the
    /// drawn slot, or `None` when the tag is not idle (sleeping tags and
    /// tags mid-session ignore queries).
    pub fn start_session<R: RngCore + CryptoRng>(&mut self, q: u8, rng: &mut R) -> Option<u32> {
        if self.phase != TagPhase::Idle {
            return None;
        }
        let slot = if q == 0 {
            0
        } else {
            rng.next_u32() >> (32 - u32::from(q.min(31)))
        };
        let session = SessionState {
            k: SymKey::generate(rng),
            ct: self.profile.mask_ct(rng.next_u32()),
            cr: None,
            rn16: rng.next_u32() as u16,
            slot,
        };
        self.session = Some(session);
        self.phase = TagPhase::Arbitrating;
        Some(slot)
    }

    /// The handle this tag will transmit in its slot.
    pub fn rn16(&self) -> Option<u16> {
        self.session.as_ref().map(|s| s.rn16)
    }

    /// Step 4 (tag side): on an acknowledgement echoing its own handle,
    /// the tag stores the reader challenge and produces its encrypted
    /// response. Acknowledgements echoing a different handle are ignored.
    pub fn on_ack<R: RngCore + CryptoRng>(
        &mut self,
        rn16: u16,
        cr: u32,
        rng: &mut R,
    ) -> Option<AuthRequest> {
        if self.phase != TagPhase::Arbitrating {
            return None;
        }
        let session = self.session.as_mut()?;
        if session.rn16 != rn16 {
            return None;
        }
        session.cr = Some(cr);

        // R1 = AES_k(ID ‖ Cr)
        let mut r1_plain = Vec::with_capacity(TAG_ID_BYTES + self.profile.cr_bytes());
        r1_plain.extend_from_slice(&self.id.0);
        r1_plain.extend_from_slice(&nonce_bytes(cr, self.profile.cr_bytes()));
        let r1 = sym_encrypt(&session.k, &r1_plain, rng);

        // R2 = KEM(pk, k ‖ Ct)
        let mut r2_plain = Vec::with_capacity(SESSION_KEY_BYTES + self.profile.ct_bytes());
        r2_plain.extend_from_slice(session.k.as_bytes());
        r2_plain.extend_from_slice(&nonce_bytes(session.ct, self.profile.ct_bytes()));
        let r2 = kem_encapsulate(&self.server_key, &r2_plain, rng);

        self.phase = TagPhase::Acknowledged;
        Some(AuthRequest { r1, r2 })
    }

    /// Marks the auth request as fully transmitted; the tag now listens
    /// for the final message.
    pub fn auth_sent(&mut self) {
        if self.phase == TagPhase::Acknowledged {
            self.phase = TagPhase::AwaitingFinal;
        }
    }

    /// Step 8: verify the final message. Acceptance requires decryption
    /// under the session key plus an exact match of both nonces; the tag
    /// then powers down for the commanded duration.
    pub fn on_final(&mut self, b: &SymCiphertext) -> FinalOutcome {
        if self.phase != TagPhase::AwaitingFinal {
            return FinalOutcome::Reject(TagRejectReason::NotListening);
        }
        let session = match &self.session {
            Some(s) => s,
            None => return FinalOutcome::Reject(TagRejectReason::NotListening),
        };
        let plain = match sym_decrypt(&session.k, b) {
            Ok(p) => p,
            Err(_) => return FinalOutcome::Reject(TagRejectReason::Integrity),
        };
        let cr_bytes = self.profile.cr_bytes();
        let ct_bytes = self.profile.ct_bytes();
        if plain.len() != cr_bytes + ct_bytes + TIME_BYTES {
            return FinalOutcome::Reject(TagRejectReason::Integrity);
        }
        let cr = nonce_from_bytes(&plain[..cr_bytes]);
        let ct = nonce_from_bytes(&plain[cr_bytes..cr_bytes + ct_bytes]);
        if Some(cr) != session.cr || ct != session.ct {
            return FinalOutcome::Reject(TagRejectReason::NonceMismatch);
        }
        let mut time = [0u8; TIME_BYTES];
        time.copy_from_slice(&plain[cr_bytes + ct_bytes..]);
        self.phase = TagPhase::Sleeping;
        self.session = None;
        FinalOutcome::Accept {
            sleep_s: u64::from_be_bytes(time) as f64 * 1e-6,
        }
    }

    /// Abandons an unfinished session (collision, frame restart, or the
    /// vehicle leaving coverage). Sleeping tags are unaffected.
    pub fn reset(&mut self) {
        if self.phase != TagPhase::Sleeping {
            self.phase = TagPhase::Idle;
            self.session = None;
        }
    }

    /// Powers the tag down directly, without a handshake. Used by the
    /// timing-reference protocol profile, where reads are modelled as a
    /// fixed air occupancy with no cryptographic exchange.
    pub fn sleep(&mut self) {
        self.session = None;
        self.phase = TagPhase::Sleeping;
    }

    /// Ends the sleep period; the tag rejoins arbitration at the next query.
    pub fn wake(&mut self) {
        if self.phase == TagPhase::Sleeping {
            self.phase = TagPhase::Idle;
        }
    }
}

/// Draws a reader challenge of the configured width.
pub fn make_challenge<R: RngCore + CryptoRng>(profile: &SizeProfile, rng: &mut R) -> u32 {
    profile.mask_cr(rng.next_u32())
}

/// Why the server refused a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    /// `R2` failed decapsulation or carried a malformed payload.
    KemFailure,
    /// `R1` failed decryption under the recovered session key.
    SymFailure,
    /// The decrypted identity is not in the directory.
    UnknownId,
    /// The decrypted challenge is not the one issued for this session —
    /// the signature of a replayed response.
    ChallengeMismatch,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RejectReason::KemFailure => "key decapsulation failed",
            RejectReason::SymFailure => "identity ciphertext failed verification",
            RejectReason::UnknownId => "identity not registered",
            RejectReason::ChallengeMismatch => "challenge mismatch (possible replay)",
        };
        f.write_str(s)
    }
}

/// Directory entry for one registered tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagRecord {
    pub id: TagId,
}

/// Cumulative cryptographic work performed by the server, used to verify
/// that per-request cost is independent of directory size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ServerOpCounts {
    pub kem_decapsulations: u64,
    pub sym_decryptions: u64,
    pub sym_encryptions: u64,
}

/// The back-end verifier: holds the long-term decapsulation key and the
/// registered-tag directory.
///
/// Lookup is by decrypted identity in a hash map, so the per-request work —
/// one decapsulation, one decryption, one encryption — does not grow with
/// the directory.
pub struct AuthServer {
    sk: KemPrivateKey,
    pk: KemPublicKey,
    profile: SizeProfile,
    directory: HashMap<TagId, TagRecord>,
    decap_ops: AtomicU64,
    decrypt_ops: AtomicU64,
    encrypt_ops: AtomicU64,
}

impl AuthServer {
    pub fn new<R: RngCore + CryptoRng>(profile: SizeProfile, rng: &mut R) -> Self {
        let (sk, pk) = kem_keygen(rng);
        AuthServer {
            sk,
            pk,
            profile,
            directory: HashMap::new(),
            decap_ops: AtomicU64::new(0),
            decrypt_ops: AtomicU64::new(0),
            encrypt_ops: AtomicU64::new(0),
        }
    }

    /// The encapsulation key provisioned into tags.
    pub fn public_key(&self) -> KemPublicKey {
        self.pk
    }

    pub fn profile(&self) -> SizeProfile {
        self.profile
    }

    /// Registers a tag identity; idempotent.
    pub fn register(&mut self, id: TagId) {
        self.directory.insert(id, TagRecord { id });
    }

    /// Revokes a tag. Subsequent sessions from it fail the directory
    /// lookup even though their cryptography is sound.
    pub fn deregister(&mut self, id: TagId) -> bool {
        self.directory.remove(&id).is_some()
    }

    pub fn directory_len(&self) -> usize {
        self.directory.len()
    }

    pub fn op_counts(&self) -> ServerOpCounts {
        ServerOpCounts {
            kem_decapsulations: self.decap_ops.load(Ordering::Relaxed),
            sym_decryptions: self.decrypt_ops.load(Ordering::Relaxed),
            sym_encryptions: self.encrypt_ops.load(Ordering::Relaxed),
        }
    }

    /// Step 6: verify a forwarded session and produce the final message.
    ///
    /// Failures are reported in pipeline order — decapsulation, identity
    /// decryption, directory lookup, challenge comparison — and the
    /// cryptographic work up to the failing step is always performed.
    pub fn authenticate<R: RngCore + CryptoRng>(
        &self,
        req: &ServerRequest,
        rng: &mut R,
    ) -> Result<ServerResponse, RejectReason> {
        // Recover k ‖ Ct.
        self.decap_ops.fetch_add(1, Ordering::Relaxed);
        let r2_plain =
            kem_decapsulate(&self.sk, &req.auth.r2).map_err(|_| RejectReason::KemFailure)?;
        if r2_plain.len() != SESSION_KEY_BYTES + self.profile.ct_bytes() {
            return Err(RejectReason::KemFailure);
        }
        let mut key_bytes = [0u8; SESSION_KEY_BYTES];
        key_bytes.copy_from_slice(&r2_plain[..SESSION_KEY_BYTES]);
        let k = SymKey::from_bytes(key_bytes);
        let ct = nonce_from_bytes(&r2_plain[SESSION_KEY_BYTES..]);

        // Recover ID ‖ Cr.
        self.decrypt_ops.fetch_add(1, Ordering::Relaxed);
        let r1_plain = sym_decrypt(&k, &req.auth.r1).map_err(|_| RejectReason::SymFailure)?;
        if r1_plain.len() != TAG_ID_BYTES + self.profile.cr_bytes() {
            return Err(RejectReason::SymFailure);
        }
        let mut id = [0u8; TAG_ID_BYTES];
        id.copy_from_slice(&r1_plain[..TAG_ID_BYTES]);
        let cr = nonce_from_bytes(&r1_plain[TAG_ID_BYTES..]);

        // Constant-time directory lookup, then challenge freshness.
        if !self.directory.contains_key(&TagId(id)) {
            return Err(RejectReason::UnknownId);
        }
        if cr != self.profile.mask_cr(req.cr) {
            return Err(RejectReason::ChallengeMismatch);
        }

        // B = AES_k(Cr ‖ Ct ‖ Time)
        self.encrypt_ops.fetch_add(1, Ordering::Relaxed);
        let mut b_plain =
            Vec::with_capacity(self.profile.cr_bytes() + self.profile.ct_bytes() + TIME_BYTES);
        b_plain.extend_from_slice(&nonce_bytes(cr, self.profile.cr_bytes()));
        b_plain.extend_from_slice(&nonce_bytes(ct, self.profile.ct_bytes()));
        b_plain.extend_from_slice(&req.time_estimate_us.to_be_bytes());
        Ok(ServerResponse {
            b: sym_encrypt(&k, &b_plain, rng),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};
    use rand_chacha::ChaCha8Rng;

    fn rngs() -> (ChaCha8Rng, ChaCha8Rng, ChaCha8Rng) {
        (
            stream(3, StreamId::Tag),
            stream(3, StreamId::Reader),
            stream(3, StreamId::Server),
        )
    }

    fn server_with_tags(n: u64, rng: &mut ChaCha8Rng) -> AuthServer {
        let mut server = AuthServer::new(SizeProfile::default(), rng);
        for serial in 0..n {
            server.register(TagId::from_serial(serial));
        }
        server
    }

    /// Drives steps 1–5 for one tag and returns everything the reader
    /// would forward.
    fn run_to_server_request_with(
        tag: &mut TagProtocol,
        profile: SizeProfile,
        tag_rng: &mut ChaCha8Rng,
        reader_rng: &mut ChaCha8Rng,
        time_estimate_us: u64,
    ) -> ServerRequest {
        tag.start_session(4, tag_rng).expect("tag should join");
        assert_eq!(tag.phase(), TagPhase::Arbitrating);
        let rn16 = tag.rn16().unwrap();
        let cr = make_challenge(&profile, reader_rng);
        let auth = tag.on_ack(rn16, cr, tag_rng).expect("handle echoed");
        assert_eq!(tag.phase(), TagPhase::Acknowledged);
        tag.auth_sent();
        assert_eq!(tag.phase(), TagPhase::AwaitingFinal);
        ServerRequest {
            auth,
            cr,
            time_estimate_us,
        }
    }

    fn run_to_server_request(
        tag: &mut TagProtocol,
        tag_rng: &mut ChaCha8Rng,
        reader_rng: &mut ChaCha8Rng,
        time_estimate_us: u64,
    ) -> ServerRequest {
        run_to_server_request_with(
            tag,
            SizeProfile::default(),
            tag_rng,
            reader_rng,
            time_estimate_us,
        )
    }

    #[test]
    fn full_handshake_mutually_authenticates() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let mut server = server_with_tags(100, &mut server_rng);
        server.register(TagId::from_serial(17));
        let mut tag =
            TagProtocol::new(TagId::from_serial(17), server.public_key(), server.profile());

        let req = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 3_200_000);
        let resp = server.authenticate(&req, &mut server_rng).expect("accept");
        match tag.on_final(&resp.b) {
            FinalOutcome::Accept { sleep_s } => assert!((sleep_s - 3.2).abs() < 1e-9),
            other => panic!("expected accept, got {other:?}"),
        }
        assert_eq!(tag.phase(), TagPhase::Sleeping);
        tag.wake();
        assert_eq!(tag.phase(), TagPhase::Idle);
    }

    #[test]
    fn message_sizes_match_frozen_defaults() {
        let p = SizeProfile::default();
        assert_eq!(p.query_bits(), 22);
        assert_eq!(p.rn16_bits(), 16);
        assert_eq!(p.ack_bits(), 50);
        assert_eq!(p.r1_bits(), 384);
        assert_eq!(p.r2_bits(), 488);
        assert_eq!(p.auth_bits(), 872);
        assert_eq!(p.final_bits(), 384);
        assert_eq!(p.handshake_air_bits(), 1344);
        assert_eq!(p.tag_latency_bits(), 1322);
    }

    #[test]
    fn narrow_nonce_profile_still_authenticates() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let profile = SizeProfile::new(16, 8).unwrap();
        let mut server = AuthServer::new(profile, &mut server_rng);
        server.register(TagId::from_serial(9));
        let mut tag = TagProtocol::new(TagId::from_serial(9), server.public_key(), profile);

        assert_eq!(profile.ack_bits(), 34);
        assert_eq!(profile.r2_bits(), 464);
        let req = run_to_server_request_with(
            &mut tag,
            profile,
            &mut tag_rng,
            &mut reader_rng,
            250_000,
        );
        assert_eq!(req.auth.r1.bit_len(), profile.r1_bits());
        assert_eq!(req.auth.r2.bit_len(), profile.r2_bits());
        let resp = server.authenticate(&req, &mut server_rng).expect("accept");
        assert!(matches!(tag.on_final(&resp.b), FinalOutcome::Accept { .. }));
    }

    #[test]
    fn replayed_auth_request_is_rejected_as_challenge_mismatch() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let mut server = server_with_tags(100, &mut server_rng);
        server.register(TagId::from_serial(5));
        let mut tag =
            TagProtocol::new(TagId::from_serial(5), server.public_key(), server.profile());

        let first = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 1_000_000);
        server.authenticate(&first, &mut server_rng).expect("accept");

        // An eavesdropper replays the same (R1, R2) against a later
        // session that carries a fresh challenge.
        let fresh_cr = make_challenge(&server.profile(), &mut reader_rng);
        let replay = ServerRequest {
            auth: first.auth.clone(),
            cr: fresh_cr,
            time_estimate_us: 1_000_000,
        };
        assert_eq!(
            server.authenticate(&replay, &mut server_rng),
            Err(RejectReason::ChallengeMismatch)
        );
    }

    #[test]
    fn unknown_identity_is_rejected_after_full_decryption() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let server = server_with_tags(100, &mut server_rng);
        // Tag provisioned with the right server key but never registered.
        let mut tag = TagProtocol::new(
            TagId::from_serial(999_999),
            server.public_key(),
            server.profile(),
        );
        let req = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 0);
        let before = server.op_counts();
        assert_eq!(
            server.authenticate(&req, &mut server_rng),
            Err(RejectReason::UnknownId)
        );
        let after = server.op_counts();
        // Both decryption steps ran before the directory lookup failed.
        assert_eq!(after.kem_decapsulations, before.kem_decapsulations + 1);
        assert_eq!(after.sym_decryptions, before.sym_decryptions + 1);
    }

    #[test]
    fn garbage_r2_is_a_kem_failure() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let mut server = server_with_tags(10, &mut server_rng);
        server.register(TagId::from_serial(1));
        let mut tag =
            TagProtocol::new(TagId::from_serial(1), server.public_key(), server.profile());
        let mut req = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 0);
        req.auth.r2.tag[0] ^= 0xff;
        assert_eq!(
            server.authenticate(&req, &mut server_rng),
            Err(RejectReason::KemFailure)
        );
    }

    #[test]
    fn tampered_r1_is_a_sym_failure() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let mut server = server_with_tags(10, &mut server_rng);
        server.register(TagId::from_serial(1));
        let mut tag =
            TagProtocol::new(TagId::from_serial(1), server.public_key(), server.profile());
        let mut req = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 0);
        req.auth.r1.blocks[0][3] ^= 0x10;
        assert_eq!(
            server.authenticate(&req, &mut server_rng),
            Err(RejectReason::SymFailure)
        );
    }

    #[test]
    fn tag_rejects_forged_final_and_stays_recoverable() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let mut server = server_with_tags(10, &mut server_rng);
        server.register(TagId::from_serial(2));
        let mut tag =
            TagProtocol::new(TagId::from_serial(2), server.public_key(), server.profile());
        let _req = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 500_000);

        // A forger without k cannot produce an acceptable B.
        let forged_key = SymKey::generate(&mut reader_rng);
        let forged = sym_encrypt(&forged_key, &[0u8; 16], &mut reader_rng);
        assert_eq!(
            tag.on_final(&forged),
            FinalOutcome::Reject(TagRejectReason::Integrity)
        );

        // The honest response still lands afterwards? No — a rejected final
        // aborts the session; the tag must rejoin from Idle.
        tag.reset();
        assert_eq!(tag.phase(), TagPhase::Idle);
        let req2 = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 500_000);
        let resp = server.authenticate(&req2, &mut server_rng).expect("accept");
        assert!(matches!(tag.on_final(&resp.b), FinalOutcome::Accept { .. }));
    }

    #[test]
    fn stale_final_from_previous_session_is_nonce_mismatch() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let mut server = server_with_tags(10, &mut server_rng);
        server.register(TagId::from_serial(3));
        let mut tag =
            TagProtocol::new(TagId::from_serial(3), server.public_key(), server.profile());

        let req1 = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 0);
        let resp1 = server.authenticate(&req1, &mut server_rng).expect("accept");
        // First session is abandoned before the final arrives (for example
        // a collision on the forward link); tag starts over.
        tag.reset();
        let _req2 = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 0);
        // The stale final decrypts under the wrong (new) session key.
        assert_eq!(
            tag.on_final(&resp1.b),
            FinalOutcome::Reject(TagRejectReason::Integrity)
        );
    }

    #[test]
    fn sleeping_and_mid_session_tags_ignore_queries() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let mut server = server_with_tags(10, &mut server_rng);
        server.register(TagId::from_serial(4));
        let mut tag =
            TagProtocol::new(TagId::from_serial(4), server.public_key(), server.profile());

        let req = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 0);
        // Mid-session: a new query must not restart arbitration.
        assert_eq!(tag.start_session(4, &mut tag_rng), None);
        let resp = server.authenticate(&req, &mut server_rng).expect("accept");
        assert!(matches!(tag.on_final(&resp.b), FinalOutcome::Accept { .. }));
        // Sleeping: queries are ignored and reset must not wake the tag.
        assert_eq!(tag.start_session(4, &mut tag_rng), None);
        tag.reset();
        assert_eq!(tag.phase(), TagPhase::Sleeping);
        // Duplicate final delivery is idempotent.
        assert_eq!(
            tag.on_final(&resp.b),
            FinalOutcome::Reject(TagRejectReason::NotListening)
        );
    }

    #[test]
    fn ack_with_foreign_handle_is_ignored() {
        let (mut tag_rng, mut reader_rng, _) = rngs();
        let mut server_rng = stream(3, StreamId::Server);
        let server = server_with_tags(1, &mut server_rng);
        let mut tag =
            TagProtocol::new(TagId::from_serial(0), server.public_key(), server.profile());
        tag.start_session(4, &mut tag_rng).unwrap();
        let other_handle = tag.rn16().unwrap().wrapping_add(1);
        let cr = make_challenge(&server.profile(), &mut reader_rng);
        assert!(tag.on_ack(other_handle, cr, &mut tag_rng).is_none());
        assert_eq!(tag.phase(), TagPhase::Arbitrating);
    }

    #[test]
    fn per_request_work_is_independent_of_directory_size() {
        let (mut tag_rng, mut reader_rng, mut server_rng) = rngs();
        let mut counts = Vec::new();
        for n in [10u64, 10_000] {
            let mut server = server_with_tags(n, &mut server_rng);
            server.register(TagId::from_serial(1));
            let mut tag =
                TagProtocol::new(TagId::from_serial(1), server.public_key(), server.profile());
            let req = run_to_server_request(&mut tag, &mut tag_rng, &mut reader_rng, 0);
            server.authenticate(&req, &mut server_rng).expect("accept");
            counts.push(server.op_counts());
        }
        assert_eq!(counts[0], counts[1]);
        assert_eq!(counts[0].kem_decapsulations, 1);
        assert_eq!(counts[0].sym_decryptions, 1);
        assert_eq!(counts[0].sym_encryptions, 1);
    }

    #[test]
    fn nonce_helpers_roundtrip() {
        for bytes in 1..=4usize {
            let v = 0xDDCCBBAAu32 & if bytes == 4 { u32::MAX } else { (1 << (8 * bytes)) - 1 };
            assert_eq!(nonce_from_bytes(&nonce_bytes(v, bytes)), v);
        }
        let p = SizeProfile::new(16, 8).unwrap();
        assert_eq!(p.mask_cr(0xFFFF_FFFF), 0xFFFF);
        assert_eq!(p.mask_ct(0xFFFF_FFFF), 0xFF);
        assert!(SizeProfile::new(12, 32).is_err());
        assert!(SizeProfile::new(0, 32).is_err());
        assert!(SizeProfile::new(40, 32).is_err());
    }
}
