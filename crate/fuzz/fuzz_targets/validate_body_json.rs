//! Wire-shaped validate bodies driven through a live registry. With
//! the right provider credential the call must always produce a
//! verdict (never an error, never a panic) and append one audit row.

#![no_main]

use ipc_auth_sim::device::{CertHash, SigningKey};
use ipc_auth_sim::registry::{PartnerRegistry, ValidateRequest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(req) = serde_json::from_slice::<ValidateRequest>(data) else { return };
    let key = SigningKey::new(b"fuzz-partner-key".to_vec(), "fuzz").unwrap();
    let mut registry = PartnerRegistry::new("fuzz-credential");
    registry
        .register_partner("com.fuzz.partner", CertHash::of_key(&key), "client-fuzz")
        .unwrap();
    let before = registry.audit_len();
    registry
        .validate(&req, "fuzz-credential")
        .expect("correct credential never errors");
    assert_eq!(registry.audit_len(), before + 1);
});
