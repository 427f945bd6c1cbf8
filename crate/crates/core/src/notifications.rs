//! Notification posting, listener delivery, and content masking.
//!
//! Notifications are the exfiltration channel of the attack: any app
//! holding the notification-listener capability receives every posted
//! notification, embedded intent tokens included. The Android-15 style
//! masking policy redacts OTP-looking digit runs from the *text* of a
//! delivered notification, but tokens are structural fields and pass
//! through untouched, which is why masking does not stop token theft.
//!
//! Masking rule: every maximal run of 4 to 8 ASCII digits is replaced by
//! a '•' run of equal length, in both title and text. Shorter and longer
//! digit runs are left alone. Character length is always preserved.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::device::{Capability, DeviceState, PlatformPolicy, Uid};
use crate::kernel::ProcessHandle;
use crate::pending_intent::PendingIntentToken;

pub const MASK_GLYPH: char = '\u{2022}';

#[derive(Debug, Error, PartialEq, Eq)]
pub enum NotifyError {
    #[error("process handle for uid {0} no longer resolves to an installed app")]
    HandleInvalid(Uid),
    #[error("package {0} does not hold the notification-listener capability")]
    NotAListener(String),
}

#[derive(Debug, Clone)]
pub struct Notification {
    pub title: String,
    pub text: String,
    pub content_intent: PendingIntentToken,
    pub action_intents: Vec<PendingIntentToken>,
}

#[derive(Debug, Clone)]
pub struct StatusBarNotification {
    pub package_name: String,
    pub post_time: u64,
    pub notification: Notification,
}

/// Replaces each maximal 4..=8 digit run with an equal-length mask run.
pub fn mask_sensitive(text: &str, policy: PlatformPolicy) -> String {
    if policy == PlatformPolicy::Android14 {
        return text.to_string();
    }
    let chars: Vec<char> = text.chars().collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let run = j - i;
            if (4..=8).contains(&run) {
                out.extend(std::iter::repeat(MASK_GLYPH).take(run));
            } else {
                out.extend(&chars[i..j]);
            }
            i = j;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

/// Posts, deliveries, and per-listener inboxes. Delivery happens at post
/// time: one masked copy per listener, in listener name order, each
/// notification exactly once.
#[derive(Debug, Default)]
pub struct NotificationCenter {
    inboxes: BTreeMap<String, Vec<StatusBarNotification>>,
    clock: u64,
}

impl NotificationCenter {
    pub fn new() -> Self {
        Self::default()
    }

    /// Delivers `notification` to every listener-capable app. The poster
    /// must still be installed; the poster's package is stamped on the
    /// delivered record from its verified handle.
    pub fn post_notification(
        &mut self,
        device: &DeviceState,
        poster: &ProcessHandle,
        notification: Notification,
    ) -> Result<(), NotifyError> {
        let poster_package = device
            .get_packages_for_uid(poster.uid())
            .into_iter()
            .next()
            .ok_or(NotifyError::HandleInvalid(poster.uid()))?;
        let post_time = self.clock;
        self.clock += 1;
        let policy = device.policy();
        for listener in device.packages_with_capability(Capability::NotificationListener) {
            let delivered = Notification {
                title: mask_sensitive(&notification.title, policy),
                text: mask_sensitive(&notification.text, policy),
                content_intent: notification.content_intent.clone(),
                action_intents: notification.action_intents.clone(),
            };
            self.inboxes.entry(listener).or_default().push(StatusBarNotification {
                package_name: poster_package.clone(),
                post_time,
                notification: delivered,
            });
        }
        Ok(())
    }

    pub fn inbox(&self, listener: &str) -> &[StatusBarNotification] {
        self.inboxes.get(listener).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Listener-side extraction: returns every intent token embedded in the
/// delivered notification (content intent first, then action intents).
/// Requires the caller to actually hold the listener capability.
pub fn on_notification_posted(
    device: &DeviceState,
    listener: &str,
    sbn: &StatusBarNotification,
) -> Result<Vec<PendingIntentToken>, NotifyError> {
    let holds = device
        .app(listener)
        .map(|a| a.capabilities.contains(&Capability::NotificationListener))
        .unwrap_or(false);
    if !holds {
        return Err(NotifyError::NotAListener(listener.to_string()));
    }
    let mut tokens = vec![sbn.notification.content_intent.clone()];
    tokens.extend(sbn.notification.action_intents.iter().cloned());
    Ok(tokens)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::{AppSpec, SigningKey};
    use crate::kernel::Kernel;
    use crate::pending_intent::{Mutability, TokenMint, WrappedIntent};
    use crate::rng::DetRng;

    fn key(material: &str) -> SigningKey {
        SigningKey::new(material.as_bytes().to_vec(), "test").unwrap()
    }

    struct World {
        device: DeviceState,
        kernel: Kernel,
        mint: TokenMint,
        center: NotificationCenter,
    }

    fn world(policy: PlatformPolicy) -> World {
        let mut device = DeviceState::new(policy);
        for pkg in ["com.poc.partner", "com.poc.attacker", "com.other.listener", "com.mute.app"] {
            device
                .install_app(AppSpec::new(pkg, key(&format!("key-material-{pkg}"))))
                .unwrap();
        }
        device
            .grant_capability("com.poc.attacker", Capability::NotificationListener)
            .unwrap();
        device
            .grant_capability("com.other.listener", Capability::NotificationListener)
            .unwrap();
        World { device, kernel: Kernel::new(), mint: TokenMint::new(), center: NotificationCenter::new() }
    }

    fn sample_notification(w: &mut World, title: &str, text: &str) -> Notification {
        let creator = w.kernel.mint_handle(&w.device, "com.poc.partner").unwrap();
        let token = w
            .mint
            .create_pending_intent(
                &w.device,
                &creator,
                WrappedIntent::new("com.poc.partner.OPEN", BTreeMap::new(), "com.poc.partner"),
                Mutability::Immutable,
            )
            .unwrap();
        Notification {
            title: title.to_string(),
            text: text.to_string(),
            content_intent: token,
            action_intents: Vec::new(),
        }
    }

    // ── Masking rule ────────────────────────────────────────────────────

    // Expected strings frozen from an independent implementation of the
    // rule before this module was written.
    #[test]
    fn masking_matches_frozen_oracle() {
        let p = PlatformPolicy::Android15Masking;
        assert_eq!(mask_sensitive("Your code is 482913", p), "Your code is ••••••");
        assert_eq!(mask_sensitive("pin 123", p), "pin 123");
        assert_eq!(mask_sensitive("id 123456789", p), "id 123456789");
        assert_eq!(mask_sensitive("a1234b 12345678c 999", p), "a••••b ••••••••c 999");
        assert_eq!(mask_sensitive("", p), "");
        assert_eq!(mask_sensitive("2026-08-16 otp 7777", p), "••••-08-16 otp ••••");
    }

    #[test]
    fn masking_is_identity_without_the_policy() {
        assert_eq!(
            mask_sensitive("Your code is 482913", PlatformPolicy::Android14),
            "Your code is 482913"
        );
    }

    #[test]
    fn masking_preserves_char_length_over_random_inputs() {
        let mut rng = DetRng::new(5);
        for _ in 0..500 {
            let len = rng.next_below(40) as usize;
            let s: String = (0..len)
                .map(|_| match rng.next_below(4) {
                    0 => char::from(b'0' + rng.next_below(10) as u8),
                    1 => char::from(b'a' + rng.next_below(26) as u8),
                    2 => ' ',
                    _ => '•',
                })
                .collect();
            let masked = mask_sensitive(&s, PlatformPolicy::Android15Masking);
            assert_eq!(s.chars().count(), masked.chars().count(), "input {s:?}");
            // Non-digit characters come through unchanged, position by position.
            for (a, b) in s.chars().zip(masked.chars()) {
                if !a.is_ascii_digit() {
                    assert_eq!(a, b);
                } else {
                    assert!(b == a || b == MASK_GLYPH);
                }
            }
        }
    }

    // ── Delivery ────────────────────────────────────────────────────────

    #[test]
    fn every_listener_gets_each_post_exactly_once_in_order() {
        let mut w = world(PlatformPolicy::Android14);
        let poster = w.kernel.mint_handle(&w.device, "com.poc.partner").unwrap();
        for i in 0..3 {
            let n = sample_notification(&mut w, &format!("title {i}"), "text");
            w.center.post_notification(&w.device, &poster, n).unwrap();
        }
        for listener in ["com.poc.attacker", "com.other.listener"] {
            let inbox = w.center.inbox(listener);
            assert_eq!(inbox.len(), 3);
            let times: Vec<u64> = inbox.iter().map(|s| s.post_time).collect();
            assert_eq!(times, vec![0, 1, 2]);
            assert!(inbox.iter().all(|s| s.package_name == "com.poc.partner"));
        }
        assert!(w.center.inbox("com.mute.app").is_empty());
    }

    #[test]
    fn extraction_requires_the_listener_capability() {
        let mut w = world(PlatformPolicy::Android14);
        let poster = w.kernel.mint_handle(&w.device, "com.poc.partner").unwrap();
        let n = sample_notification(&mut w, "t", "x");
        w.center.post_notification(&w.device, &poster, n).unwrap();
        let sbn = w.center.inbox("com.poc.attacker")[0].clone();
        assert!(on_notification_posted(&w.device, "com.poc.attacker", &sbn).is_ok());
        assert_eq!(
            on_notification_posted(&w.device, "com.mute.app", &sbn).unwrap_err(),
            NotifyError::NotAListener("com.mute.app".into())
        );
    }

    // ── Masking never touches tokens ────────────────────────────────────

    #[test]
    fn masked_delivery_preserves_token_identity() {
        let mut w = world(PlatformPolicy::Android15Masking);
        let poster = w.kernel.mint_handle(&w.device, "com.poc.partner").unwrap();
        let n = sample_notification(&mut w, "Security alert 483920", "Your code is 482913");
        let posted_id = n.content_intent.token_id();
        w.center.post_notification(&w.device, &poster, n).unwrap();

        let sbn = &w.center.inbox("com.poc.attacker")[0];
        assert_eq!(sbn.notification.title, "Security alert ••••••");
        assert_eq!(sbn.notification.text, "Your code is ••••••");
        assert_eq!(
            sbn.notification.text.chars().count(),
            "Your code is 482913".chars().count()
        );

        let harvested =
            on_notification_posted(&w.device, "com.poc.attacker", sbn).unwrap();
        assert_eq!(harvested.len(), 1);
        assert_eq!(harvested[0].token_id(), posted_id);
        assert_eq!(harvested[0].creator_package(), "com.poc.partner");
    }

    #[test]
    fn action_intents_are_harvested_after_the_content_intent() {
        let mut w = world(PlatformPolicy::Android14);
        let creator = w.kernel.mint_handle(&w.device, "com.poc.partner").unwrap();
        let mk = |w: &mut World| {
            w.mint
                .create_pending_intent(
                    &w.device,
                    &creator,
                    WrappedIntent::new("a", BTreeMap::new(), "com.poc.partner"),
                    Mutability::Immutable,
                )
                .unwrap()
        };
        let content = mk(&mut w);
        let action_a = mk(&mut w);
        let action_b = mk(&mut w);
        let expected = vec![content.token_id(), action_a.token_id(), action_b.token_id()];
        let n = Notification {
            title: "t".into(),
            text: "x".into(),
            content_intent: content,
            action_intents: vec![action_a, action_b],
        };
        let poster = w.kernel.mint_handle(&w.device, "com.poc.partner").unwrap();
        w.center.post_notification(&w.device, &poster, n).unwrap();
        let sbn = w.center.inbox("com.poc.attacker")[0].clone();
        let harvested =
            on_notification_posted(&w.device, "com.poc.attacker", &sbn).unwrap();
        let ids: Vec<u64> = harvested.iter().map(|t| t.token_id()).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn posting_with_retired_handle_fails() {
        let mut w = world(PlatformPolicy::Android14);
        let poster = w.kernel.mint_handle(&w.device, "com.poc.partner").unwrap();
        let n = sample_notification(&mut w, "t", "x");
        w.device.uninstall_app("com.poc.partner").unwrap();
        assert_eq!(
            w.center.post_notification(&w.device, &poster, n).unwrap_err(),
            NotifyError::HandleInvalid(poster.uid())
        );
    }
}
