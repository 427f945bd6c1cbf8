//! Registry db file parser. Accepted inputs must survive a
//! serialize/parse cycle and land on a serialization fixpoint.

#![no_main]

use ipc_auth_sim::registry::{ClockMode, PartnerRegistry};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(reg) = PartnerRegistry::from_json(data, "fuzz-credential", ClockMode::Tick) {
        let first = reg.to_json();
        let reparsed = PartnerRegistry::from_json(first.as_bytes(), "fuzz-credential", ClockMode::Tick)
            .expect("own serialization must parse");
        assert_eq!(first, reparsed.to_json());
    }
});
