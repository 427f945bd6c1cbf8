//! Scenario report parser. Accepted reports must re-serialize to a
//! fixpoint so stored reports stay byte-stable across load cycles.

#![no_main]

use ipc_auth_sim::report::{render_markdown, ScenarioReport};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(report) = ScenarioReport::from_json(text) {
        let first = report.to_json();
        let reparsed = ScenarioReport::from_json(&first).expect("own serialization must parse");
        assert_eq!(first, reparsed.to_json());
        // Markdown rendering must also hold up on arbitrary parsed input.
        let _ = render_markdown(&report);
    }
});
