//! Discrete-event simulator and protocol library for RFID mutual
//! authentication of vehicle-mounted tags.
//!
//! The library models a roadside reader interrogating passing vehicles over
//! a slotted-ALOHA air interface. Each singulated tag runs a hybrid
//! AES + elliptic-curve mutual-authentication handshake with a back-end
//! server, then sleeps for the reader-estimated remainder of its pass
//! through coverage so it stops competing for slots. Modules:
//!
//! - [`crypto`]: symmetric record cipher, ECC key encapsulation, key-size
//!   comparisons.
//! - [`protocol`]: wire messages, bit-exact codec, and the tag / reader /
//!   server handshake state machines.
//! - [`anticollision`]: framed slotted-ALOHA with adaptive frame sizing.
//! - [`radio`]: link budget, timing, and coverage geometry.
//! - [`traffic`]: vehicle arrival and motion models.
//! - [`simcore`]: the discrete-event engine tying it all together.
//! - [`adversary`]: replay, impersonation, tracking, and flooding harnesses.
//! - [`metrics`]: run summaries, parameter sweeps, and CSV/JSON emission.
//! - [`config`]: TOML scenario files and validation.

pub mod anticollision;
pub mod adversary;
pub mod config;
pub mod crypto;
pub mod metrics;
pub mod protocol;
pub mod radio;
pub mod rng;
pub mod simcore;
pub mod traffic;
