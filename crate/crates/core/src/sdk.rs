//! The provider-side SDK service: the thing partners publish through
//! and attackers attack.
//!
//! Four provider builds share one entry point, `handle_publish`:
//!
//! * `VulnerablePi` — trusts `PendingIntentToken::creator_package()`.
//!   Accepts any request carrying a token whose creator is allowlisted,
//!   no matter who sent it.
//! * `Secure3Layer` — layered caller verification. L1: kernel-stamped
//!   UID resolved to a package. L2: the package's installed signing
//!   cert must match the fingerprint enrolled in the partner registry.
//!   L3: server-side validation of the (package, cert, client id)
//!   triple, which also writes the audit trail. Any registry failure is
//!   a rejection, never a pass.
//! * `AltAHardcoded` — L1 plus a cert allowlist compiled into the
//!   provider. Sound, but the day a partner rotates keys this build is
//!   wrong until redeployed.
//! * `AltBNoCert` — L1 plus server-side lookup, but nobody checks the
//!   signing cert. A sideloaded clone of a partner package walks in.
//!
//! Rejections name the layer that refused (`layer_rejected`) so the
//! fault-injection scenarios can tell the builds apart.

use std::collections::BTreeSet;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::auth::authenticate_pi_creator;
use crate::device::{CertHash, DeviceState};
use crate::kernel::{BoundService, HandlerCtx, HandlerError, Parcel, Transaction};
use crate::pending_intent::PendingIntentToken;
use crate::registry::{ClientError, RegistryClient, RejectReason, ValidateRequest, Verdict};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    VulnerablePi,
    Secure3Layer,
    AltAHardcoded,
    AltBNoCert,
}

impl ProviderMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderMode::VulnerablePi => "vulnerable_pi",
            ProviderMode::Secure3Layer => "secure_3layer",
            ProviderMode::AltAHardcoded => "alt_a_hardcoded",
            ProviderMode::AltBNoCert => "alt_b_no_cert",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProviderConfig {
    pub mode: ProviderMode,
    /// Creator packages the vulnerable build accepts tokens from.
    pub pi_allowlist: BTreeSet<String>,
    /// Cert fingerprints compiled into the ALT-A build.
    pub hardcoded_hashes: BTreeSet<CertHash>,
    /// Bearer credential for registry calls.
    pub provider_credential: String,
}

impl ProviderConfig {
    pub fn vulnerable(pi_allowlist: BTreeSet<String>, credential: impl Into<String>) -> Self {
        Self {
            mode: ProviderMode::VulnerablePi,
            pi_allowlist,
            hardcoded_hashes: BTreeSet::new(),
            provider_credential: credential.into(),
        }
    }

    pub fn secure(credential: impl Into<String>) -> Self {
        Self {
            mode: ProviderMode::Secure3Layer,
            pi_allowlist: BTreeSet::new(),
            hardcoded_hashes: BTreeSet::new(),
            provider_credential: credential.into(),
        }
    }

    pub fn alt_a(hardcoded_hashes: BTreeSet<CertHash>, credential: impl Into<String>) -> Self {
        Self {
            mode: ProviderMode::AltAHardcoded,
            pi_allowlist: BTreeSet::new(),
            hardcoded_hashes,
            provider_credential: credential.into(),
        }
    }

    pub fn alt_b(credential: impl Into<String>) -> Self {
        Self {
            mode: ProviderMode::AltBNoCert,
            pi_allowlist: BTreeSet::new(),
            hardcoded_hashes: BTreeSet::new(),
            provider_credential: credential.into(),
        }
    }
}

// ---------------------------------------------------------------------------
// Requests and outcomes
// ---------------------------------------------------------------------------

/// A publish call as it arrives over the wire: attacker-controllable
/// content, an optional token offered as proof of identity, and the
/// client id the caller claims to be.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishRequest {
    pub content: String,
    pub credential: Option<PendingIntentToken>,
    pub client_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Layer {
    L1,
    L2,
    L3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PublishReason {
    /// Vulnerable build: the presented token's creator was allowlisted.
    CreatorAllowlisted,
    CreatorNotAllowlisted,
    MissingCredential,
    /// L1: the transaction's call scope has expired (stored evidence).
    StaleTransaction,
    /// L1: the stamped UID resolves to no installed package.
    UnknownCaller,
    /// L2: installed cert does not match the enrolled fingerprint.
    CertMismatch,
    /// L2 (ALT-A): installed cert is not in the compiled-in set.
    HashNotEnrolled,
    /// L3 accepted the (package, cert, client id) triple.
    PartnerValidated,
    RegistryUnknownPartner,
    RegistryRevoked,
    RegistryCertMismatch,
    RegistryCredentialRefused,
    /// Registry unreachable; the provider fails closed.
    RegistryUnreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartnerAttribution {
    pub package_name: String,
    pub client_id: String,
}

/// Result of one publish call. Invariant, enforced by the constructors:
/// `accepted` implies an attribution and no rejecting layer, and a
/// rejection carries no attribution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublishOutcome {
    pub accepted: bool,
    pub attributed_partner: Option<PartnerAttribution>,
    pub layer_rejected: Option<Layer>,
    pub reason: PublishReason,
    /// Kernel-truth caller package when L1 resolution got that far.
    /// Diagnostic only; never consulted for the accept decision.
    pub resolved_caller: Option<String>,
}

impl PublishOutcome {
    pub fn accept(
        package_name: impl Into<String>,
        client_id: impl Into<String>,
        reason: PublishReason,
        resolved_caller: Option<String>,
    ) -> Self {
        Self {
            accepted: true,
            attributed_partner: Some(PartnerAttribution {
                package_name: package_name.into(),
                client_id: client_id.into(),
            }),
            layer_rejected: None,
            reason,
            resolved_caller,
        }
    }

    pub fn reject(layer: Layer, reason: PublishReason, resolved_caller: Option<String>) -> Self {
        Self {
            accepted: false,
            attributed_partner: None,
            layer_rejected: Some(layer),
            reason,
            resolved_caller,
        }
    }

    /// Vulnerable-build rejection: no layered pipeline to blame.
    pub fn reject_unlayered(reason: PublishReason, resolved_caller: Option<String>) -> Self {
        Self {
            accepted: false,
            attributed_partner: None,
            layer_rejected: None,
            reason,
            resolved_caller,
        }
    }
}

// ---------------------------------------------------------------------------
// The publish pipeline
// ---------------------------------------------------------------------------

/// L1: kernel-stamped identity. Returns the caller package or the
/// rejection to emit.
fn layer1_resolve(txn: &Transaction, device: &DeviceState) -> Result<String, PublishOutcome> {
    let uid = txn
        .calling_uid()
        .map_err(|_| PublishOutcome::reject(Layer::L1, PublishReason::StaleTransaction, None))?;
    device
        .get_packages_for_uid(uid)
        .into_iter()
        .next()
        .ok_or_else(|| PublishOutcome::reject(Layer::L1, PublishReason::UnknownCaller, None))
}

fn registry_failure(err: ClientError, caller: &str) -> PublishOutcome {
    let reason = match err {
        ClientError::CredentialRefused => PublishReason::RegistryCredentialRefused,
        ClientError::Transport(detail) => {
            log::warn!("registry unreachable, failing closed: {detail}");
            PublishReason::RegistryUnreachable
        }
    };
    PublishOutcome::reject(Layer::L3, reason, Some(caller.to_string()))
}

fn reject_reason_to_publish(reason: RejectReason) -> PublishReason {
    match reason {
        RejectReason::UnknownPartner => PublishReason::RegistryUnknownPartner,
        RejectReason::Revoked => PublishReason::RegistryRevoked,
        RejectReason::CertMismatch => PublishReason::RegistryCertMismatch,
        RejectReason::BadProviderCredential => PublishReason::RegistryCredentialRefused,
    }
}

/// L3: server-side validation of the caller triple. `cert_hash` is the
/// *installed* fingerprint (kernel truth), or None for the ALT-B build
/// that never looked.
fn layer3_validate(
    registry: &mut dyn RegistryClient,
    caller: &str,
    cert_hash: Option<CertHash>,
    client_id: &str,
    credential: &str,
) -> PublishOutcome {
    let include_cert = cert_hash.is_some();
    let request = ValidateRequest {
        package_name: caller.to_string(),
        cert_hash,
        client_id: client_id.to_string(),
        include_cert,
    };
    match registry.validate(&request, credential) {
        Ok(Verdict::Accept) => PublishOutcome::accept(
            caller,
            client_id,
            PublishReason::PartnerValidated,
            Some(caller.to_string()),
        ),
        Ok(Verdict::Reject(r)) => PublishOutcome::reject(
            Layer::L3,
            reject_reason_to_publish(r),
            Some(caller.to_string()),
        ),
        Err(e) => registry_failure(e, caller),
    }
}

/// Handles one publish call under the given provider build.
///
/// Also reports how long the on-device part of the check took (L1
/// resolution plus L2 cert comparison) via `verify_nanos`, so the
/// overhead scenario can time exactly the code a real SDK would run
/// in-process, excluding the registry round trip.
pub fn handle_publish(
    txn: &Transaction,
    req: &PublishRequest,
    config: &ProviderConfig,
    ctx: &mut HandlerCtx<'_>,
    verify_nanos: &mut u64,
) -> PublishOutcome {
    match config.mode {
        ProviderMode::VulnerablePi => {
            // Who is calling? Nobody asks. Only the token speaks.
            let diagnostic_caller = txn
                .calling_uid()
                .ok()
                .and_then(|uid| ctx.device.get_packages_for_uid(uid).into_iter().next());
            let token = match &req.credential {
                Some(t) => t,
                None => {
                    return PublishOutcome::reject_unlayered(
                        PublishReason::MissingCredential,
                        diagnostic_caller,
                    )
                }
            };
            let decision = authenticate_pi_creator(token, &config.pi_allowlist);
            if decision.accepted {
                PublishOutcome::accept(
                    token.creator_package(),
                    &req.client_id,
                    PublishReason::CreatorAllowlisted,
                    diagnostic_caller,
                )
            } else {
                PublishOutcome::reject_unlayered(
                    PublishReason::CreatorNotAllowlisted,
                    diagnostic_caller,
                )
            }
        }

        ProviderMode::Secure3Layer => {
            let started = Instant::now();
            let caller = match layer1_resolve(txn, ctx.device) {
                Ok(c) => c,
                Err(outcome) => {
                    *verify_nanos = started.elapsed().as_nanos() as u64;
                    return outcome;
                }
            };
            let registry = match ctx.registry.as_deref_mut() {
                Some(r) => r,
                None => {
                    *verify_nanos = started.elapsed().as_nanos() as u64;
                    return PublishOutcome::reject(
                        Layer::L3,
                        PublishReason::RegistryUnreachable,
                        Some(caller),
                    );
                }
            };
            // L2: compare the installed cert against the enrolled one.
            // No enrolled record is not an L2 pass — it defers to L3,
            // which rejects with the audited reason.
            let enrolled = match registry.registered_cert_hash(
                &caller,
                &req.client_id,
                &config.provider_credential,
            ) {
                Ok(e) => e,
                Err(e) => {
                    *verify_nanos = started.elapsed().as_nanos() as u64;
                    return registry_failure(e, &caller);
                }
            };
            if let Some(expected) = &enrolled {
                match ctx.device.has_signing_certificate(&caller, expected) {
                    Ok(true) => {}
                    Ok(false) => {
                        *verify_nanos = started.elapsed().as_nanos() as u64;
                        return PublishOutcome::reject(
                            Layer::L2,
                            PublishReason::CertMismatch,
                            Some(caller),
                        );
                    }
                    Err(_) => {
                        *verify_nanos = started.elapsed().as_nanos() as u64;
                        return PublishOutcome::reject(
                            Layer::L1,
                            PublishReason::UnknownCaller,
                            Some(caller),
                        );
                    }
                }
            }
            *verify_nanos = started.elapsed().as_nanos() as u64;
            let installed = ctx
                .device
                .app(&caller)
                .map(|app| app.cert_hash.clone());
            layer3_validate(
                registry,
                &caller,
                installed,
                &req.client_id,
                &config.provider_credential,
            )
        }

        ProviderMode::AltAHardcoded => {
            let started = Instant::now();
            let caller = match layer1_resolve(txn, ctx.device) {
                Ok(c) => c,
                Err(outcome) => {
                    *verify_nanos = started.elapsed().as_nanos() as u64;
                    return outcome;
                }
            };
            let installed = match ctx.device.app(&caller) {
                Some(app) => app.cert_hash.clone(),
                None => {
                    *verify_nanos = started.elapsed().as_nanos() as u64;
                    return PublishOutcome::reject(
                        Layer::L1,
                        PublishReason::UnknownCaller,
                        Some(caller),
                    );
                }
            };
            let enrolled = config.hardcoded_hashes.contains(&installed);
            *verify_nanos = started.elapsed().as_nanos() as u64;
            if enrolled {
                PublishOutcome::accept(
                    &caller,
                    &req.client_id,
                    PublishReason::PartnerValidated,
                    Some(caller.clone()),
                )
            } else {
                PublishOutcome::reject(
                    Layer::L2,
                    PublishReason::HashNotEnrolled,
                    Some(caller),
                )
            }
        }

        ProviderMode::AltBNoCert => {
            let started = Instant::now();
            let caller = match layer1_resolve(txn, ctx.device) {
                Ok(c) => c,
                Err(outcome) => {
                    *verify_nanos = started.elapsed().as_nanos() as u64;
                    return outcome;
                }
            };
            *verify_nanos = started.elapsed().as_nanos() as u64;
            let registry = match ctx.registry.as_deref_mut() {
                Some(r) => r,
                None => {
                    return PublishOutcome::reject(
                        Layer::L3,
                        PublishReason::RegistryUnreachable,
                        Some(caller),
                    )
                }
            };
            // Never looks at the signing cert — that's the flaw.
            layer3_validate(registry, &caller, None, &req.client_id, &config.provider_credential)
        }
    }
}

// ---------------------------------------------------------------------------
// Bound-service wrapper
// ---------------------------------------------------------------------------

#[derive(Debug, Default, Clone)]
pub struct ProviderStats {
    pub publishes: u64,
    pub accepts: u64,
    /// Nanoseconds spent in on-device verification (L1 + L2), one entry
    /// per publish on the layered builds.
    pub verify_nanos: Vec<u64>,
}

/// The provider as a bound service: unwraps `Parcel::Publish`, runs the
/// configured pipeline, replies `Parcel::PublishReply`.
pub struct ProviderService {
    config: ProviderConfig,
    stats: Arc<Mutex<ProviderStats>>,
}

impl ProviderService {
    pub fn new(config: ProviderConfig) -> Self {
        Self { config, stats: Arc::new(Mutex::new(ProviderStats::default())) }
    }

    /// Shared handle to the running totals; stays valid after the
    /// service is boxed into the kernel.
    pub fn stats(&self) -> Arc<Mutex<ProviderStats>> {
        Arc::clone(&self.stats)
    }
}

impl BoundService for ProviderService {
    fn on_transact(
        &mut self,
        txn: &Transaction,
        ctx: &mut HandlerCtx<'_>,
    ) -> Result<Parcel, HandlerError> {
        let req = match txn.payload() {
            Parcel::Publish(req) => req.clone(),
            other => {
                return Err(HandlerError::BadRequest(format!(
                    "provider only handles publish parcels, got {other:?}"
                )))
            }
        };
        let mut verify_nanos = 0u64;
        let outcome = handle_publish(txn, &req, &self.config, ctx, &mut verify_nanos);
        let mut stats = self.stats.lock().unwrap();
        stats.publishes += 1;
        if outcome.accepted {
            stats.accepts += 1;
        }
        if self.config.mode != ProviderMode::VulnerablePi {
            stats.verify_nanos.push(verify_nanos);
        }
        Ok(Parcel::PublishReply(outcome))
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
