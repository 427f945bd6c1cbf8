//! The authentication mechanisms a provider can choose from, and the
//! property matrix comparing them.
//!
//! Eight mechanisms are modeled. Each authenticator takes the evidence
//! its real counterpart would see, plus nothing else: in particular,
//! none of them can observe who is presenting a token, which is the
//! whole problem with creator-based checks.
//!
//! Five properties are scored per mechanism: kernel-backed, unforgeable,
//! replay-resistant, scalable without manifest changes, bidirectional.
//! Cells marked `SCENARIO` are filled from attack/defense scenario
//! outcomes at matrix-build time; cells marked `ANALYTIC` carry fixed
//! marks that follow from the mechanism's structure (for example, the
//! "partial" kernel backing of permission checks: enforcement is kernel
//! adjacent but identity still isn't delivered to the handler).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{DeviceState, InstalledApp, Manifest};
use crate::digest::sha256_hex;
use crate::kernel::{ProcessHandle, Transaction};
use crate::pending_intent::PendingIntentToken;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AuthError {
    #[error("referrer is only observable from a foreground activity context")]
    NoActivityContext,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PkceError {
    #[error("no such flow: {0}")]
    UnknownFlow(u64),
    #[error("authorization code or verifier does not match the flow")]
    CodeMismatch,
}

// ---------------------------------------------------------------------------
// Decisions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    CreatorAllowlisted,
    CreatorNotAllowlisted,
    CallerAllowlisted,
    CallerNotAllowlisted,
    UnknownCaller,
    StaleTransaction,
    ReferrerAllowlisted,
    ReferrerNotAllowlisted,
    PermissionHeld,
    PermissionMissing,
    SignerEnrolled,
    SignerNotEnrolled,
    ChallengeVerified,
    ChallengeMismatch,
}

/// Outcome of one authentication attempt. `authenticated_as` is present
/// exactly when the attempt was accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub accepted: bool,
    pub authenticated_as: Option<String>,
    pub reason: DecisionReason,
}

impl AuthDecision {
    pub fn accept(identity: impl Into<String>, reason: DecisionReason) -> Self {
        Self { accepted: true, authenticated_as: Some(identity.into()), reason }
    }

    pub fn reject(reason: DecisionReason) -> Self {
        Self { accepted: false, authenticated_as: None, reason }
    }
}

// ---------------------------------------------------------------------------
// Mechanisms
// ---------------------------------------------------------------------------

/// Accepts iff the token's *creator* is allowlisted. This is the broken
/// pattern: the creator travels with the token, so a stolen token
/// authenticates its thief.
pub fn authenticate_pi_creator(
    token: &PendingIntentToken,
    allowlist: &BTreeSet<String>,
) -> AuthDecision {
    if allowlist.contains(token.creator_package()) {
        AuthDecision::accept(token.creator_package(), DecisionReason::CreatorAllowlisted)
    } else {
        AuthDecision::reject(DecisionReason::CreatorNotAllowlisted)
    }
}

/// Accepts iff the kernel-stamped caller resolves to an allowlisted
/// package. The evidence is the live transaction itself; a stored one
/// has expired scope and is rejected, and an unresolvable UID (caller
/// gone) is rejected rather than guessed at.
pub fn authenticate_bound_uid(
    txn: &Transaction,
    device: &DeviceState,
    allowlist: &BTreeSet<String>,
) -> AuthDecision {
    let uid = match txn.calling_uid() {
        Ok(uid) => uid,
        Err(_) => return AuthDecision::reject(DecisionReason::StaleTransaction),
    };
    let package = match device.get_packages_for_uid(uid).into_iter().next() {
        Some(p) => p,
        None => return AuthDecision::reject(DecisionReason::UnknownCaller),
    };
    if allowlist.contains(&package) {
        AuthDecision::accept(package, DecisionReason::CallerAllowlisted)
    } else {
        AuthDecision::reject(DecisionReason::CallerNotAllowlisted)
    }
}

/// What `getReferrer()`-style checks actually see: a string the sender
/// context supplies. Nothing ties it to a kernel identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReferrerEvidence {
    pub claimed_referrer: String,
    pub activity_context: bool,
}

impl ReferrerEvidence {
    /// Evidence as produced by an honest foreground flow.
    pub fn from_activity(caller_package: impl Into<String>) -> Self {
        Self { claimed_referrer: caller_package.into(), activity_context: true }
    }

    /// Evidence as seen by a background/service entry point.
    pub fn background(caller_package: impl Into<String>) -> Self {
        Self { claimed_referrer: caller_package.into(), activity_context: false }
    }
}

/// One-call attack primitive: a task-hijacking attacker produces
/// referrer evidence naming its victim. Indistinguishable, by
/// construction, from the honest evidence the victim would produce.
pub fn spoof_via_task_hijack(_attacker: &ProcessHandle, victim_package: &str) -> ReferrerEvidence {
    ReferrerEvidence::from_activity(victim_package)
}

/// Accepts iff the claimed referrer is allowlisted. Only answerable in
/// an activity context at all.
pub fn authenticate_referrer(
    evidence: &ReferrerEvidence,
    allowlist: &BTreeSet<String>,
) -> Result<AuthDecision, AuthError> {
    if !evidence.activity_context {
        return Err(AuthError::NoActivityContext);
    }
    Ok(if allowlist.contains(&evidence.claimed_referrer) {
        AuthDecision::accept(evidence.claimed_referrer.clone(), DecisionReason::ReferrerAllowlisted)
    } else {
        AuthDecision::reject(DecisionReason::ReferrerNotAllowlisted)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermissionKind {
    Broadcast,
    Provider,
}

/// Manifest-permission gate as used by protected broadcasts and content
/// providers. Strong against forgery (manifests are fixed at install),
/// but onboarding a new partner means every partner ships a manifest
/// change.
pub fn authenticate_custom_permission(
    caller: &InstalledApp,
    permission: &str,
    kind: PermissionKind,
) -> AuthDecision {
    log::debug!("{kind:?} permission gate: {} needs {permission}", caller.package_name);
    if caller.manifest.used_permissions.contains(permission) {
        AuthDecision::accept(caller.package_name.clone(), DecisionReason::PermissionHeld)
    } else {
        AuthDecision::reject(DecisionReason::PermissionMissing)
    }
}

/// Signature gate: accepts iff the caller's installed cert fingerprint
/// is enrolled in the host's `knownSignerHashes`. Rotating a partner key
/// strands the partner until the host ships a new manifest.
pub fn authenticate_known_signers(caller: &InstalledApp, host_manifest: &Manifest) -> AuthDecision {
    if host_manifest.known_signer_hashes.contains(&caller.cert_hash) {
        AuthDecision::accept(caller.package_name.clone(), DecisionReason::SignerEnrolled)
    } else {
        AuthDecision::reject(DecisionReason::SignerNotEnrolled)
    }
}

// ---------------------------------------------------------------------------
// PKCE
// ---------------------------------------------------------------------------

/// The S256-style challenge: digest of the verifier, hex encoded. Same
/// digest primitive as certificate fingerprints.
pub fn pkce_challenge(verifier: &str) -> String {
    sha256_hex(verifier.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PkceFlow {
    pub flow_id: u64,
    pub code_challenge: String,
    pub claimed_client_id: String,
    pub issued_code: String,
    pub completed: bool,
}

/// Authorization-server side of PKCE. It guarantees session continuity,
/// nothing more: whoever opened the flow can claim any client id, and
/// completing the exchange authenticates them *as that claim*.
#[derive(Debug, Default)]
pub struct PkceAuthority {
    flows: BTreeMap<u64, PkceFlow>,
    next_flow: u64,
}

impl PkceAuthority {
    pub fn new() -> Self {
        Self::default()
    }

    /// Opens a flow and issues an authorization code bound to it.
    pub fn initiate(&mut self, claimed_client_id: &str, code_challenge: &str) -> PkceFlow {
        let flow_id = self.next_flow;
        self.next_flow += 1;
        let flow = PkceFlow {
            flow_id,
            code_challenge: code_challenge.to_string(),
            claimed_client_id: claimed_client_id.to_string(),
            issued_code: format!("ac-{flow_id:06}"),
            completed: false,
        };
        self.flows.insert(flow_id, flow.clone());
        flow
    }

    /// Completes a flow: the code must be the issued one and the
    /// verifier must digest to the stored challenge. On success the
    /// caller is authenticated as whatever client id the flow claimed;
    /// PKCE never checked that claim against anything.
    pub fn exchange(
        &mut self,
        flow_id: u64,
        code: &str,
        verifier: &str,
    ) -> Result<AuthDecision, PkceError> {
        let flow = self.flows.get_mut(&flow_id).ok_or(PkceError::UnknownFlow(flow_id))?;
        if flow.completed {
            return Err(PkceError::UnknownFlow(flow_id));
        }
        if code != flow.issued_code || pkce_challenge(verifier) != flow.code_challenge {
            return Err(PkceError::CodeMismatch);
        }
        flow.completed = true;
        Ok(AuthDecision::accept(flow.claimed_client_id.clone(), DecisionReason::ChallengeVerified))
    }
}

// ---------------------------------------------------------------------------
// Capture and replay
// ---------------------------------------------------------------------------

/// Evidence an attacker managed to store for later. What *can* be stored
/// decides replay resistance: tokens and authorization codes store fine,
/// a kernel transaction does not survive its handler scope.
#[derive(Debug, Clone)]
pub enum CapturedEvidence {
    StolenToken(PendingIntentToken),
    StoredTransaction(Transaction),
    StolenPkceCode { flow_id: u64, code: String },
}

/// Re-presents captured evidence one tick later, against the same
/// authenticator that would have accepted the original.
pub fn capture_and_replay(
    evidence: &CapturedEvidence,
    device: &DeviceState,
    allowlist: &BTreeSet<String>,
    pkce: &mut PkceAuthority,
) -> AuthDecision {
    match evidence {
        CapturedEvidence::StolenToken(token) => authenticate_pi_creator(token, allowlist),
        CapturedEvidence::StoredTransaction(txn) => authenticate_bound_uid(txn, device, allowlist),
        CapturedEvidence::StolenPkceCode { flow_id, code } => {
            match pkce.exchange(*flow_id, code, "replay-guess-verifier") {
                Ok(decision) => decision,
                Err(_) => AuthDecision::reject(DecisionReason::ChallengeMismatch),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Property matrix
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mechanism {
    StartActivityForResult,
    GetReferrer,
    PiGetCreatorPackage,
    BroadcastPermission,
    ProviderPermission,
    KnownSigners,
    Pkce,
    BoundServiceUid,
}

impl Mechanism {
    pub const ALL: [Mechanism; 8] = [
        Mechanism::StartActivityForResult,
        Mechanism::GetReferrer,
        Mechanism::PiGetCreatorPackage,
        Mechanism::BroadcastPermission,
        Mechanism::ProviderPermission,
        Mechanism::KnownSigners,
        Mechanism::Pkce,
        Mechanism::BoundServiceUid,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            Mechanism::StartActivityForResult => "startActivityForResult",
            Mechanism::GetReferrer => "getReferrer()",
            Mechanism::PiGetCreatorPackage => "PI.getCreatorPackage()",
            Mechanism::BroadcastPermission => "BroadcastReceiver (perm.)",
            Mechanism::ProviderPermission => "ContentProvider (perm.)",
            Mechanism::KnownSigners => "Signature/knownSigners",
            Mechanism::Pkce => "PKCE",
            Mechanism::BoundServiceUid => "Bound Service + Binder UID",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthProperty {
    KernelBacked,
    Unforgeable,
    ReplayResistant,
    ScalableNoManifest,
    Bidirectional,
}

impl AuthProperty {
    pub const ALL: [AuthProperty; 5] = [
        AuthProperty::KernelBacked,
        AuthProperty::Unforgeable,
        AuthProperty::ReplayResistant,
        AuthProperty::ScalableNoManifest,
        AuthProperty::Bidirectional,
    ];

    pub fn display_name(self) -> &'static str {
        match self {
            AuthProperty::KernelBacked => "Kernel-backed",
            AuthProperty::Unforgeable => "Unforgeable",
            AuthProperty::ReplayResistant => "Replay-resistant",
            AuthProperty::ScalableNoManifest => "Scalable (no manifest)",
            AuthProperty::Bidirectional => "Bidirectional",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mark {
    Yes,
    No,
    Partial,
}

impl Mark {
    pub fn glyph(self) -> &'static str {
        match self {
            Mark::Yes => "YES",
            Mark::No => "NO",
            Mark::Partial => "PARTIAL",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CellProvenance {
    /// Mark observed from an executed attack/defense scenario.
    Scenario,
    /// Mark fixed by the mechanism's structure; no scenario exercises it.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub mark: Mark,
    pub provenance: CellProvenance,
}

/// One scenario-observed mark, produced by the mechanism scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioOutcome {
    pub mechanism: Mechanism,
    pub property: AuthProperty,
    pub mark: Mark,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("missing scenario outcomes for cells: {0:?}")]
    IncompleteOutcomes(Vec<(Mechanism, AuthProperty)>),
}

enum CellPlan {
    /// Mark must come from an executed scenario.
    Scenario,
    /// Mark is structural.
    Analytic(Mark),
}

/// Which cells are scenario-backed and what the analytic cells say.
/// The three PARTIAL kernel-backed cells are the permission-gated rows:
/// the kernel enforces the gate, but the handler still never receives a
/// kernel identity it can act on.
fn cell_plan(mechanism: Mechanism, property: AuthProperty) -> CellPlan {
    use AuthProperty as P;
    use CellPlan::{Analytic, Scenario};
    use Mark::{No, Partial, Yes};
    use Mechanism as M;

    match (mechanism, property) {
        // startActivityForResult / getReferrer share one authenticator.
        (M::StartActivityForResult | M::GetReferrer, P::KernelBacked) => Analytic(No),
        (M::StartActivityForResult | M::GetReferrer, P::Unforgeable) => Scenario,
        (M::StartActivityForResult | M::GetReferrer, P::ReplayResistant) => Analytic(Yes),
        (M::StartActivityForResult | M::GetReferrer, P::ScalableNoManifest) => Analytic(Yes),
        (M::StartActivityForResult | M::GetReferrer, P::Bidirectional) => Analytic(No),

        (M::PiGetCreatorPackage, P::KernelBacked) => Analytic(No),
        (M::PiGetCreatorPackage, P::Unforgeable) => Scenario,
        (M::PiGetCreatorPackage, P::ReplayResistant) => Scenario,
        (M::PiGetCreatorPackage, P::ScalableNoManifest) => Analytic(Yes),
        (M::PiGetCreatorPackage, P::Bidirectional) => Analytic(Yes),

        (M::BroadcastPermission | M::ProviderPermission | M::KnownSigners, P::KernelBacked) => {
            Analytic(Partial)
        }
        (M::BroadcastPermission | M::ProviderPermission | M::KnownSigners, P::Unforgeable) => {
            Scenario
        }
        (M::BroadcastPermission | M::ProviderPermission | M::KnownSigners, P::ReplayResistant) => {
            Analytic(Yes)
        }
        (
            M::BroadcastPermission | M::ProviderPermission | M::KnownSigners,
            P::ScalableNoManifest,
        ) => Scenario,
        (M::BroadcastPermission | M::ProviderPermission | M::KnownSigners, P::Bidirectional) => {
            Analytic(No)
        }

        (M::Pkce, P::KernelBacked) => Analytic(No),
        (M::Pkce, P::Unforgeable) => Scenario,
        (M::Pkce, P::ReplayResistant) => Scenario,
        (M::Pkce, P::ScalableNoManifest) => Analytic(Yes),
        (M::Pkce, P::Bidirectional) => Analytic(No),

        (M::BoundServiceUid, _) => Scenario,
    }
}

/// The scenario-backed cells, in row-major matrix order.
pub fn scenario_backed_cells() -> Vec<(Mechanism, AuthProperty)> {
    let mut cells = Vec::new();
    for mechanism in Mechanism::ALL {
        for property in AuthProperty::ALL {
            if matches!(cell_plan(mechanism, property), CellPlan::Scenario) {
                cells.push((mechanism, property));
            }
        }
    }
    cells
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct MatrixRow {
    mechanism: Mechanism,
    cells: BTreeMap<AuthProperty, MatrixCell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyMatrix {
    schema_version: u32,
    rows: Vec<MatrixRow>,
}

impl PropertyMatrix {
    pub fn cell(&self, mechanism: Mechanism, property: AuthProperty) -> Option<MatrixCell> {
        self.rows
            .iter()
            .find(|r| r.mechanism == mechanism)
            .and_then(|r| r.cells.get(&property).copied())
    }

    pub fn mechanisms(&self) -> impl Iterator<Item = Mechanism> + '_ {
        self.rows.iter().map(|r| r.mechanism)
    }

    pub fn to_json(&self) -> String {
        let mut json = serde_json::to_string_pretty(self).expect("matrix serializes");
        json.push('\n');
        json
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

/// Assembles the full 8×5 matrix. Scenario-backed cells take their marks
/// from `outcomes` and fail loudly when an outcome is missing; analytic
/// cells carry their structural marks.
pub fn build_property_matrix(outcomes: &[ScenarioOutcome]) -> Result<PropertyMatrix, MatrixError> {
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for mechanism in Mechanism::ALL {
        let mut cells = BTreeMap::new();
        for property in AuthProperty::ALL {
            let cell = match cell_plan(mechanism, property) {
                CellPlan::Analytic(mark) => {
                    MatrixCell { mark, provenance: CellProvenance::Analytic }
                }
                CellPlan::Scenario => {
                    match outcomes
                        .iter()
                        .find(|o| o.mechanism == mechanism && o.property == property)
                    {
                        Some(outcome) => MatrixCell {
                            mark: outcome.mark,
                            provenance: CellProvenance::Scenario,
                        },
                        None => {
                            missing.push((mechanism, property));
                            continue;
                        }
                    }
                }
            };
            cells.insert(property, cell);
        }
        rows.push(MatrixRow { mechanism, cells });
    }
    if missing.is_empty() {
        Ok(PropertyMatrix { schema_version: 1, rows })
    } else {
        Err(MatrixError::IncompleteOutcomes(missing))
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
