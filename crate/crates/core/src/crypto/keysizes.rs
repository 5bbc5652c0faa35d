//! Comparative key widths across cipher families at matched security levels.
//!
//! The table records, for each symmetric key width, the asymmetric key
//! widths conventionally regarded as equivalent. It motivates the hybrid
//! design: at the 128-bit level an ECC key fits in 256–383 bits while RSA
//! and Rabin moduli need 3072, an order of magnitude more storage and
//! transmission for a resource-limited tag.

/// One security level: a symmetric width and the matching asymmetric widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecurityLevel {
    /// Symmetric key width in bits.
    pub sym_bits: u32,
    /// Inclusive lower bound of the equivalent ECC key range.
    pub ecc_min_bits: u32,
    /// Inclusive upper bound of the ECC range; `None` for the open-ended
    /// top level.
    pub ecc_max_bits: Option<u32>,
    /// Equivalent Rabin modulus width in bits.
    pub rabin_bits: u32,
    /// Equivalent RSA modulus width in bits.
    pub rsa_bits: u32,
}

impl SecurityLevel {
    /// True when an ECC key of `bits` falls in this level's range.
    pub fn ecc_range_contains(&self, bits: u32) -> bool {
        bits >= self.ecc_min_bits && self.ecc_max_bits.map_or(true, |max| bits <= max)
    }
}

/// The matched-width table, ordered by increasing strength.
pub const SECURITY_LEVELS: [SecurityLevel; 6] = [
    SecurityLevel {
        sym_bits: 56,
        ecc_min_bits: 112,
        ecc_max_bits: Some(159),
        rabin_bits: 512,
        rsa_bits: 512,
    },
    SecurityLevel {
        sym_bits: 80,
        ecc_min_bits: 160,
        ecc_max_bits: Some(223),
        rabin_bits: 1024,
        rsa_bits: 1024,
    },
    SecurityLevel {
        sym_bits: 112,
        ecc_min_bits: 224,
        ecc_max_bits: Some(255),
        rabin_bits: 2048,
        rsa_bits: 2048,
    },
    SecurityLevel {
        sym_bits: 128,
        ecc_min_bits: 256,
        ecc_max_bits: Some(383),
        rabin_bits: 3072,
        rsa_bits: 3072,
    },
    SecurityLevel {
        sym_bits: 192,
        ecc_min_bits: 384,
        ecc_max_bits: Some(511),
        rabin_bits: 7680,
        rsa_bits: 7680,
    },
    SecurityLevel {
        sym_bits: 256,
        ecc_min_bits: 512,
        ecc_max_bits: None,
        rabin_bits: 15360,
        rsa_bits: 15360,
    },
];

/// Returns the level whose symmetric width is exactly `sym_bits`.
pub fn level_for_sym_bits(sym_bits: u32) -> Option<&'static SecurityLevel> {
    SECURITY_LEVELS.iter().find(|l| l.sym_bits == sym_bits)
}
