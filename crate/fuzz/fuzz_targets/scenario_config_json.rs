//! Scenario config document parser, plus applying the parsed config
//! to a request, which must never panic whatever the field values.

#![no_main]

use ipc_auth_sim::scenario::{ScenarioConfig, ScenarioRequest};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(config) = ScenarioConfig::from_json(text) {
        let request = ScenarioRequest::new("table3_secure").apply_config(&config);
        if let Some(trials) = config.trials {
            assert_eq!(request.trials, Some(trials));
        }
    }
});
