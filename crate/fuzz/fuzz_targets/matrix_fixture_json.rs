//! Property-matrix fixture parser (what `ipcsim matrix --fixture`
//! reads). Round-trip must be lossless.

#![no_main]

use ipc_auth_sim::auth::PropertyMatrix;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(matrix) = PropertyMatrix::from_json(text) {
        let json = matrix.to_json();
        let reparsed = PropertyMatrix::from_json(&json).expect("own serialization must parse");
        assert_eq!(matrix, reparsed);
    }
});
