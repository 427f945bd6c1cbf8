//! Notification text masking. The first input byte picks the platform
//! policy; the rest is the text. Masking replaces exactly the maximal
//! 4..=8 digit runs, so afterwards no such run can remain, the char
//! count is unchanged, a second pass is a no-op, and the policy-off
//! path is the identity.

#![no_main]

use ipc_auth_sim::device::PlatformPolicy;
use ipc_auth_sim::notifications::mask_sensitive;
use libfuzzer_sys::fuzz_target;

fn longest_otp_shaped_run(text: &str) -> bool {
    let mut run = 0usize;
    for c in text.chars().chain(std::iter::once(' ')) {
        if c.is_ascii_digit() {
            run += 1;
        } else {
            if (4..=8).contains(&run) {
                return true;
            }
            run = 0;
        }
    }
    false
}

fuzz_target!(|data: &[u8]| {
    let Some((&selector, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    if selector % 2 == 0 {
        assert_eq!(mask_sensitive(text, PlatformPolicy::Android14), text);
    } else {
        let masked = mask_sensitive(text, PlatformPolicy::Android15Masking);
        assert_eq!(masked.chars().count(), text.chars().count());
        assert!(!longest_otp_shaped_run(&masked), "OTP-shaped digit run survived: {masked:?}");
        assert_eq!(mask_sensitive(&masked, PlatformPolicy::Android15Masking), masked);
    }
});
