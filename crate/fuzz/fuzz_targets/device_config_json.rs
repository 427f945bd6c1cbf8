//! Device config parser and builder. Building may reject a config
//! (duplicate packages, empty key material) but must never panic,
//! and every installed package must resolve through the UID table.

#![no_main]

use ipc_auth_sim::device::DeviceConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(config) = DeviceConfig::from_json(text) else { return };
    if let Ok(device) = config.build() {
        for app in &config.apps {
            let installed = device.app(&app.package).expect("built app must be installed");
            assert!(device.get_packages_for_uid(installed.uid).contains(&app.package));
        }
    }
});
