//! PendingIntent-style capability tokens.
//!
//! A token is a sealed, pre-authorized operation that executes with its
//! creator's identity no matter who fires it. The properties that make
//! the token-replay attack work are all modeled here:
//!
//! 1. Opacity: the wrapped intent (action, extras, target) is sealed at
//!    creation. No accessor exposes it, to the creator or anyone else;
//!    even `Debug` redacts it.
//! 2. Provenance: `creator_uid` / `creator_package` are resolved by the
//!    system at creation time and never change, however many processes
//!    the token passes through.
//! 3. Presenter-blindness: nothing observable on a token distinguishes
//!    the creator holding it from a thief holding it. The presenter's
//!    identity exists only in the dispatch record the harness keeps.
//! 4. The immutability flag controls whether a presenter's fill-in can
//!    alter the dispatched extras. It has no effect on identity, which
//!    is why it is no defense against the attack.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::device::{DeviceState, Uid};
use crate::kernel::ProcessHandle;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TokenError {
    #[error("process handle for uid {0} no longer resolves to an installed app")]
    HandleInvalid(Uid),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mutability {
    Immutable,
    Mutable,
}

impl Mutability {
    pub fn as_str(self) -> &'static str {
        match self {
            Mutability::Immutable => "immutable",
            Mutability::Mutable => "mutable",
        }
    }
}

/// The operation sealed inside a token. Constructed by the creator,
/// readable by no one afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WrappedIntent {
    pub action: String,
    pub extras: BTreeMap<String, String>,
    pub target_package: String,
}

impl WrappedIntent {
    pub fn new(
        action: impl Into<String>,
        extras: BTreeMap<String, String>,
        target_package: impl Into<String>,
    ) -> Self {
        Self { action: action.into(), extras, target_package: target_package.into() }
    }
}

/// Transferable capability token. Cloning models handing the token to
/// another process: every copy shares the token id and the creator
/// identity stamped at creation.
#[derive(Clone, PartialEq, Eq)]
pub struct PendingIntentToken {
    token_id: u64,
    creator_uid: Uid,
    creator_package: String,
    mutability: Mutability,
    sealed: WrappedIntent,
}

impl PendingIntentToken {
    pub fn token_id(&self) -> u64 {
        self.token_id
    }

    /// Who created the token. Answerable by any holder; this is exactly
    /// the value a provider must not treat as the presenter's identity.
    pub fn creator_package(&self) -> &str {
        &self.creator_package
    }

    pub fn creator_uid(&self) -> Uid {
        self.creator_uid
    }

    pub fn mutability(&self) -> Mutability {
        self.mutability
    }
}

impl std::fmt::Debug for PendingIntentToken {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PendingIntentToken")
            .field("token_id", &self.token_id)
            .field("creator_uid", &self.creator_uid)
            .field("creator_package", &self.creator_package)
            .field("mutability", &self.mutability)
            .field("sealed", &"<sealed>")
            .finish()
    }
}

/// What the system executed when a token was fired. `presenter_uid` is
/// audit data for the harness; application-level authenticators never
/// receive a dispatch record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DispatchRecord {
    pub executed_as_uid: Uid,
    pub executed_as_package: String,
    pub effective_action: String,
    pub effective_extras: BTreeMap<String, String>,
    pub presenter_uid: Uid,
}

/// System-side token factory. Ids are unique for the life of the mint.
#[derive(Debug, Default)]
pub struct TokenMint {
    next_id: u64,
}

impl TokenMint {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seals `intent` into a token stamped with the creator's identity,
    /// resolved from the creator's verified handle, never from a claim.
    pub fn create_pending_intent(
        &mut self,
        device: &DeviceState,
        creator: &ProcessHandle,
        intent: WrappedIntent,
        mutability: Mutability,
    ) -> Result<PendingIntentToken, TokenError> {
        let creator_package = device
            .get_packages_for_uid(creator.uid())
            .into_iter()
            .next()
            .ok_or(TokenError::HandleInvalid(creator.uid()))?;
        let token_id = self.next_id;
        self.next_id += 1;
        Ok(PendingIntentToken {
            token_id,
            creator_uid: creator.uid(),
            creator_package,
            mutability,
            sealed: intent,
        })
    }
}

/// Fires a token. Any holder with a live process may present it; the
/// operation always executes as the creator. A presenter's fill-in is
/// merged into the extras only for mutable tokens (presenter's entries
/// win on key collisions); on immutable tokens it is dropped with a
/// warning.
pub fn send(
    device: &DeviceState,
    token: &PendingIntentToken,
    presenter: &ProcessHandle,
    fill_in: Option<BTreeMap<String, String>>,
) -> Result<DispatchRecord, TokenError> {
    if !device.uid_resolves(presenter.uid()) {
        return Err(TokenError::HandleInvalid(presenter.uid()));
    }
    let mut effective_extras = token.sealed.extras.clone();
    match (token.mutability, fill_in) {
        (Mutability::Mutable, Some(fill)) => {
            for (k, v) in fill {
                effective_extras.insert(k, v);
            }
        }
        (Mutability::Immutable, Some(_)) => {
            log::warn!(
                "fill-in ignored: token {} is immutable",
                token.token_id
            );
        }
        _ => {}
    }
    Ok(DispatchRecord {
        executed_as_uid: token.creator_uid,
        executed_as_package: token.creator_package.clone(),
        effective_action: token.sealed.action.clone(),
        effective_extras,
        presenter_uid: presenter.uid(),
    })
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
