//! The one digest primitive used everywhere a 256-bit hash is needed:
//! certificate fingerprints and PKCE challenges share it so their values
//! are directly comparable in fixtures and audit output.

use sha2::{Digest, Sha256};

/// SHA-256 of `data`, lowercase hex, always 64 chars.
pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}
