//! Server-side partner registry: the third defense layer.
//!
//! The registry is the provider's source of truth for who may publish.
//! It validates (packageName, certHash, clientId) triples against its
//! partner table, refuses callers that lack the provider credential, and
//! appends one audit entry for every validation verdict, refusals
//! included.
//!
//! Lifecycle rules:
//!
//! 1. (packageName, clientId) is unique among ACTIVE records; several
//!    packages may share a clientId (multi-app partners).
//! 2. Registration, rotation, and revocation take effect on the next
//!    validate call. No provider redeploy is ever involved.
//! 3. A REVOKED record never returns to ACTIVE; re-onboarding creates a
//!    fresh record.
//! 4. Audit timestamps are monotonically non-decreasing. In-process they
//!    are logical ticks; the network server uses wall-clock milliseconds.
//!
//! Persistence is a single JSON document (`schema_version` 1) holding
//! partners and audit entries; persisting, loading, and persisting again
//! yields byte-identical files.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::CertHash;

pub type Tick = u64;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("provider credential mismatch")]
    BadProviderCredential,
    #[error("no active partner record for {0}")]
    NotFound(String),
    #[error("active partner record already exists for {0}")]
    DuplicateActive(String),
    #[error("io failure: {0}")]
    Io(String),
    #[error("not a valid registry file: {0}")]
    CorruptFile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerStatus {
    Active,
    Revoked,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartnerRecord {
    pub package_name: String,
    pub cert_hash: CertHash,
    pub client_id: String,
    pub status: PartnerStatus,
    pub registered_at: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum AuditVerdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    BadProviderCredential,
    UnknownPartner,
    Revoked,
    CertMismatch,
}

/// One validation verdict, exactly one per validate call.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub timestamp: Tick,
    pub package_name: String,
    pub cert_hash: Option<CertHash>,
    pub client_id: String,
    pub verdict: AuditVerdict,
    pub reason: Option<RejectReason>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn accepted(&self) -> bool {
        matches!(self, Verdict::Accept)
    }

    pub fn reject_reason(&self) -> Option<RejectReason> {
        match self {
            Verdict::Accept => None,
            Verdict::Reject(r) => Some(*r),
        }
    }
}

/// What a provider submits for validation. `cert_hash` may be omitted
/// only together with `include_cert = false` (the weakened variant that
/// skips certificate binding).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidateRequest {
    pub package_name: String,
    pub cert_hash: Option<CertHash>,
    pub client_id: String,
    pub include_cert: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditFilter {
    pub package_name: Option<String>,
    pub verdict: Option<AuditVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockMode {
    /// Logical ticks; fully deterministic. The in-process default.
    Tick,
    /// Wall-clock milliseconds, clamped to stay non-decreasing.
    WallClockMs,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryFile {
    schema_version: u32,
    partners: Vec<PartnerRecord>,
    audit: Vec<AuditEntry>,
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub struct PartnerRegistry {
    provider_credential: String,
    partners: Vec<PartnerRecord>,
    audit: Vec<AuditEntry>,
    clock_mode: ClockMode,
    clock: Tick,
}

impl PartnerRegistry {
    pub fn new(provider_credential: impl Into<String>) -> Self {
        Self::with_clock(provider_credential, ClockMode::Tick)
    }

    pub fn with_clock(provider_credential: impl Into<String>, clock_mode: ClockMode) -> Self {
        Self {
            provider_credential: provider_credential.into(),
            partners: Vec::new(),
            audit: Vec::new(),
            clock_mode,
            clock: 0,
        }
    }

    fn now(&mut self) -> Tick {
        let t = match self.clock_mode {
            ClockMode::Tick => self.clock + 1,
            ClockMode::WallClockMs => {
                let wall = std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_millis() as u64)
                    .unwrap_or(0);
                wall.max(self.clock)
            }
        };
        self.clock = t;
        t
    }

    fn active_index(&self, package_name: &str, client_id: &str) -> Option<usize> {
        self.partners.iter().position(|r| {
            r.status == PartnerStatus::Active
                && r.package_name == package_name
                && r.client_id == client_id
        })
    }

    /// Onboards a partner. Effective on the very next validate call.
    pub fn register_partner(
        &mut self,
        package_name: &str,
        cert_hash: CertHash,
        client_id: &str,
    ) -> Result<&PartnerRecord, RegistryError> {
        if self.active_index(package_name, client_id).is_some() {
            return Err(RegistryError::DuplicateActive(format!("{package_name}/{client_id}")));
        }
        let registered_at = self.now();
        self.partners.push(PartnerRecord {
            package_name: package_name.to_string(),
            cert_hash,
            client_id: client_id.to_string(),
            status: PartnerStatus::Active,
            registered_at,
        });
        Ok(self.partners.last().expect("just pushed"))
    }

    /// Replaces the registered fingerprint. The old hash stops
    /// validating immediately.
    pub fn rotate_certificate(
        &mut self,
        package_name: &str,
        client_id: &str,
        new_hash: CertHash,
    ) -> Result<(), RegistryError> {
        let idx = self
            .active_index(package_name, client_id)
            .ok_or_else(|| RegistryError::NotFound(format!("{package_name}/{client_id}")))?;
        self.partners[idx].cert_hash = new_hash;
        Ok(())
    }

    /// Deactivates a partner. The record stays, REVOKED, forever; a
    /// second revoke finds no active record and fails.
    pub fn revoke_partner(&mut self, package_name: &str, client_id: &str) -> Result<(), RegistryError> {
        let idx = self
            .active_index(package_name, client_id)
            .ok_or_else(|| RegistryError::NotFound(format!("{package_name}/{client_id}")))?;
        self.partners[idx].status = PartnerStatus::Revoked;
        Ok(())
    }

    /// Validates a triple. The provider credential is checked before any
    /// lookup; every call, including a credential refusal, appends
    /// exactly one audit entry.
    pub fn validate(
        &mut self,
        req: &ValidateRequest,
        provider_credential: &str,
    ) -> Result<Verdict, RegistryError> {
        let timestamp = self.now();
        if provider_credential != self.provider_credential {
            self.audit.push(AuditEntry {
                timestamp,
                package_name: req.package_name.clone(),
                cert_hash: req.cert_hash.clone(),
                client_id: req.client_id.clone(),
                verdict: AuditVerdict::Reject,
                reason: Some(RejectReason::BadProviderCredential),
            });
            return Err(RegistryError::BadProviderCredential);
        }

        let verdict = match self.active_index(&req.package_name, &req.client_id) {
            Some(idx) => {
                let record = &self.partners[idx];
                if req.include_cert && req.cert_hash.as_ref() != Some(&record.cert_hash) {
                    Verdict::Reject(RejectReason::CertMismatch)
                } else {
                    Verdict::Accept
                }
            }
            None => {
                let revoked_match = self.partners.iter().any(|r| {
                    r.status == PartnerStatus::Revoked
                        && r.package_name == req.package_name
                        && r.client_id == req.client_id
                });
                if revoked_match {
                    Verdict::Reject(RejectReason::Revoked)
                } else {
                    Verdict::Reject(RejectReason::UnknownPartner)
                }
            }
        };

        self.audit.push(AuditEntry {
            timestamp,
            package_name: req.package_name.clone(),
            cert_hash: req.cert_hash.clone(),
            client_id: req.client_id.clone(),
            verdict: if verdict.accepted() { AuditVerdict::Accept } else { AuditVerdict::Reject },
            reason: verdict.reject_reason(),
        });
        Ok(verdict)
    }

    /// The fingerprint a caller claiming (package, client_id) is
    /// expected to have, per the ACTIVE partner table. This is the
    /// lookup the provider's certificate layer runs before calling
    /// validate; it is a read, not a verdict, so it is not audited.
    pub fn registered_cert_hash(&self, package_name: &str, client_id: &str) -> Option<CertHash> {
        self.active_index(package_name, client_id)
            .map(|idx| self.partners[idx].cert_hash.clone())
    }

    pub fn list_audit(&self, filter: &AuditFilter) -> Vec<&AuditEntry> {
        self.audit
            .iter()
            .filter(|e| {
                filter
                    .package_name
                    .as_ref()
                    .map(|p| &e.package_name == p)
                    .unwrap_or(true)
                    && filter.verdict.map(|v| e.verdict == v).unwrap_or(true)
            })
            .collect()
    }

    pub fn audit_len(&self) -> usize {
        self.audit.len()
    }

    pub fn partners(&self) -> &[PartnerRecord] {
        &self.partners
    }

    // ── Persistence ─────────────────────────────────────────────────────

    pub fn to_json(&self) -> String {
        let file = RegistryFile {
            schema_version: SCHEMA_VERSION,
            partners: self.partners.clone(),
            audit: self.audit.clone(),
        };
        let mut json = serde_json::to_string_pretty(&file).expect("registry state serializes");
        json.push('\n');
        json
    }

    pub fn persist(&self, path: &Path) -> Result<(), RegistryError> {
        std::fs::write(path, self.to_json()).map_err(|e| RegistryError::Io(e.to_string()))
    }

    pub fn from_json(
        json: &[u8],
        provider_credential: impl Into<String>,
        clock_mode: ClockMode,
    ) -> Result<Self, RegistryError> {
        let file: RegistryFile = serde_json::from_slice(json)
            .map_err(|e| RegistryError::CorruptFile(e.to_string()))?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(RegistryError::CorruptFile(format!(
                "unsupported schema_version {}",
                file.schema_version
            )));
        }
        // Resume the clock past everything recorded so timestamps stay
        // monotonic across restarts.
        let clock = file
            .audit
            .iter()
            .map(|e| e.timestamp)
            .chain(file.partners.iter().map(|p| p.registered_at))
            .max()
            .unwrap_or(0);
        Ok(Self {
            provider_credential: provider_credential.into(),
            partners: file.partners,
            audit: file.audit,
            clock_mode,
            clock,
        })
    }

    pub fn load(
        path: &Path,
        provider_credential: impl Into<String>,
        clock_mode: ClockMode,
    ) -> Result<Self, RegistryError> {
        let bytes = std::fs::read(path).map_err(|e| RegistryError::Io(e.to_string()))?;
        Self::from_json(&bytes, provider_credential, clock_mode)
    }
}

// ---------------------------------------------------------------------------
// Client interface
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ClientError {
    #[error("registry transport failure: {0}")]
    Transport(String),
    #[error("registry refused the provider credential")]
    CredentialRefused,
}

/// How a provider reaches its registry. The in-process client calls the
/// table directly; the HTTP client speaks the wire protocol. Providers
/// treat every error fail-closed.
pub trait RegistryClient {
    fn validate(
        &mut self,
        req: &ValidateRequest,
        provider_credential: &str,
    ) -> Result<Verdict, ClientError>;

    fn registered_cert_hash(
        &mut self,
        package_name: &str,
        client_id: &str,
        provider_credential: &str,
    ) -> Result<Option<CertHash>, ClientError>;
}

pub struct InProcessClient<'a> {
    registry: &'a mut PartnerRegistry,
}

impl<'a> InProcessClient<'a> {
    pub fn new(registry: &'a mut PartnerRegistry) -> Self {
        Self { registry }
    }
}

impl RegistryClient for InProcessClient<'_> {
    fn validate(
        &mut self,
        req: &ValidateRequest,
        provider_credential: &str,
    ) -> Result<Verdict, ClientError> {
        match self.registry.validate(req, provider_credential) {
            Ok(v) => Ok(v),
            Err(RegistryError::BadProviderCredential) => Err(ClientError::CredentialRefused),
            Err(e) => Err(ClientError::Transport(e.to_string())),
        }
    }

    fn registered_cert_hash(
        &mut self,
        package_name: &str,
        client_id: &str,
        _provider_credential: &str,
    ) -> Result<Option<CertHash>, ClientError> {
        Ok(self.registry.registered_cert_hash(package_name, client_id))
    }
}

/// Registry that is down. Every call fails at the transport, which a
/// correct provider must treat as a rejection.
pub struct UnreachableRegistry;

impl RegistryClient for UnreachableRegistry {
    fn validate(&mut self, _req: &ValidateRequest, _cred: &str) -> Result<Verdict, ClientError> {
        Err(ClientError::Transport("connection refused".into()))
    }

    fn registered_cert_hash(
        &mut self,
        _package_name: &str,
        _client_id: &str,
        _cred: &str,
    ) -> Result<Option<CertHash>, ClientError> {
        Err(ClientError::Transport("connection refused".into()))
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::SigningKey;

    const CRED: &str = "provider-secret-1";

    fn hash(material: &str) -> CertHash {
        CertHash::of_key(&SigningKey::new(material.as_bytes().to_vec(), "t").unwrap())
    }

    fn req(pkg: &str, h: Option<CertHash>, client: &str, include_cert: bool) -> ValidateRequest {
        ValidateRequest {
            package_name: pkg.into(),
            cert_hash: h,
            client_id: client.into(),
            include_cert,
        }
    }

    fn seeded() -> PartnerRegistry {
        let mut r = PartnerRegistry::new(CRED);
        r.register_partner("com.poc.partner", hash("partner-key-material"), "client-partner")
            .unwrap();
        r
    }

    // ── Validation ──────────────────────────────────────────────────────

    #[test]
    fn matching_triple_is_accepted() {
        let mut r = seeded();
        let v = r
            .validate(&req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true), CRED)
            .unwrap();
        assert_eq!(v, Verdict::Accept);
    }

    #[test]
    fn wrong_hash_is_cert_mismatch() {
        let mut r = seeded();
        let v = r
            .validate(&req("com.poc.partner", Some(hash("other-key-material")), "client-partner", true), CRED)
            .unwrap();
        assert_eq!(v, Verdict::Reject(RejectReason::CertMismatch));
    }

    #[test]
    fn missing_hash_with_include_cert_is_cert_mismatch() {
        let mut r = seeded();
        let v = r
            .validate(&req("com.poc.partner", None, "client-partner", true), CRED)
            .unwrap();
        assert_eq!(v, Verdict::Reject(RejectReason::CertMismatch));
    }

    #[test]
    fn unknown_partner_is_rejected() {
        let mut r = seeded();
        let v = r
            .validate(&req("com.poc.attacker", Some(hash("attacker-key-mat")), "client-partner", true), CRED)
            .unwrap();
        assert_eq!(v, Verdict::Reject(RejectReason::UnknownPartner));
    }

    #[test]
    fn include_cert_false_skips_the_hash_check() {
        // The weakened variant: package plus client id alone validate.
        let mut r = seeded();
        let v = r
            .validate(&req("com.poc.partner", None, "client-partner", false), CRED)
            .unwrap();
        assert_eq!(v, Verdict::Accept);
        let v = r
            .validate(&req("com.poc.partner", Some(hash("wrong-key-material")), "client-partner", false), CRED)
            .unwrap();
        assert_eq!(v, Verdict::Accept);
    }

    #[test]
    fn bad_credential_refused_before_lookup_and_audited() {
        let mut r = seeded();
        let err = r
            .validate(&req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true), "wrong")
            .unwrap_err();
        assert_eq!(err, RegistryError::BadProviderCredential);
        let entries = r.list_audit(&AuditFilter::default());
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].verdict, AuditVerdict::Reject);
        assert_eq!(entries[0].reason, Some(RejectReason::BadProviderCredential));
    }

    // ── Lifecycle ───────────────────────────────────────────────────────

    #[test]
    fn duplicate_active_registration_fails() {
        let mut r = seeded();
        let err = r
            .register_partner("com.poc.partner", hash("partner-key-material"), "client-partner")
            .unwrap_err();
        assert_eq!(err, RegistryError::DuplicateActive("com.poc.partner/client-partner".into()));
    }

    #[test]
    fn several_packages_may_share_a_client_id() {
        let mut r = seeded();
        r.register_partner("com.poc.partner.tv", hash("tv-key-material-1"), "client-partner")
            .unwrap();
        assert!(r
            .validate(&req("com.poc.partner.tv", Some(hash("tv-key-material-1")), "client-partner", true), CRED)
            .unwrap()
            .accepted());
    }

    #[test]
    fn registration_is_effective_on_the_next_validate() {
        let mut r = PartnerRegistry::new(CRED);
        let v = r
            .validate(&req("com.new.partner", Some(hash("new-key-material-x")), "client-new", true), CRED)
            .unwrap();
        assert_eq!(v, Verdict::Reject(RejectReason::UnknownPartner));
        r.register_partner("com.new.partner", hash("new-key-material-x"), "client-new")
            .unwrap();
        let v = r
            .validate(&req("com.new.partner", Some(hash("new-key-material-x")), "client-new", true), CRED)
            .unwrap();
        assert_eq!(v, Verdict::Accept);
    }

    #[test]
    fn rotation_invalidates_the_old_hash_immediately() {
        let mut r = seeded();
        r.rotate_certificate("com.poc.partner", "client-partner", hash("rotated-key-material"))
            .unwrap();
        let old = r
            .validate(&req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true), CRED)
            .unwrap();
        assert_eq!(old, Verdict::Reject(RejectReason::CertMismatch));
        let new = r
            .validate(&req("com.poc.partner", Some(hash("rotated-key-material")), "client-partner", true), CRED)
            .unwrap();
        assert_eq!(new, Verdict::Accept);
    }

    #[test]
    fn rotation_of_unknown_partner_fails() {
        let mut r = seeded();
        assert_eq!(
            r.rotate_certificate("com.ghost.app", "client-x", hash("whatever-key-mat")).unwrap_err(),
            RegistryError::NotFound("com.ghost.app/client-x".into())
        );
    }

    #[test]
    fn revocation_flips_the_next_verdict() {
        let mut r = seeded();
        let q = req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true);
        assert!(r.validate(&q, CRED).unwrap().accepted());
        r.revoke_partner("com.poc.partner", "client-partner").unwrap();
        assert_eq!(r.validate(&q, CRED).unwrap(), Verdict::Reject(RejectReason::Revoked));
    }

    #[test]
    fn double_revoke_fails_and_revoked_stays_revoked() {
        let mut r = seeded();
        r.revoke_partner("com.poc.partner", "client-partner").unwrap();
        assert!(matches!(
            r.revoke_partner("com.poc.partner", "client-partner"),
            Err(RegistryError::NotFound(_))
        ));
        // Re-onboarding creates a second record; the first stays revoked.
        r.register_partner("com.poc.partner", hash("partner-key-material"), "client-partner")
            .unwrap();
        assert_eq!(r.partners().len(), 2);
        assert_eq!(r.partners()[0].status, PartnerStatus::Revoked);
        assert_eq!(r.partners()[1].status, PartnerStatus::Active);
    }

    #[test]
    fn expected_hash_lookup_sees_only_active_records() {
        let mut r = seeded();
        assert_eq!(
            r.registered_cert_hash("com.poc.partner", "client-partner"),
            Some(hash("partner-key-material"))
        );
        r.revoke_partner("com.poc.partner", "client-partner").unwrap();
        assert_eq!(r.registered_cert_hash("com.poc.partner", "client-partner"), None);
    }

    // ── Audit ───────────────────────────────────────────────────────────

    #[test]
    fn every_validate_call_appends_exactly_one_entry() {
        let mut r = seeded();
        let q = req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true);
        for _ in 0..5 {
            r.validate(&q, CRED).unwrap();
        }
        let _ = r.validate(&q, "wrong");
        let _ = r.validate(&req("com.x.y", None, "c", true), CRED);
        assert_eq!(r.audit_len(), 7);
    }

    #[test]
    fn audit_timestamps_are_monotonic() {
        let mut r = seeded();
        let q = req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true);
        for _ in 0..10 {
            r.validate(&q, CRED).unwrap();
        }
        let entries = r.list_audit(&AuditFilter::default());
        for pair in entries.windows(2) {
            assert!(pair[0].timestamp <= pair[1].timestamp);
        }
    }

    #[test]
    fn audit_filter_matches_package_and_verdict() {
        let mut r = seeded();
        r.validate(&req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true), CRED)
            .unwrap();
        r.validate(&req("com.poc.attacker", None, "client-partner", true), CRED)
            .unwrap();
        let accepts = r.list_audit(&AuditFilter {
            package_name: None,
            verdict: Some(AuditVerdict::Accept),
        });
        assert_eq!(accepts.len(), 1);
        assert_eq!(accepts[0].package_name, "com.poc.partner");
        let attacker = r.list_audit(&AuditFilter {
            package_name: Some("com.poc.attacker".into()),
            verdict: None,
        });
        assert_eq!(attacker.len(), 1);
        assert_eq!(attacker[0].verdict, AuditVerdict::Reject);
    }

    // ── Persistence ─────────────────────────────────────────────────────

    #[test]
    fn persist_load_persist_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path_a = dir.path().join("a.json");
        let path_b = dir.path().join("b.json");
        let mut r = seeded();
        r.validate(&req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true), CRED)
            .unwrap();
        let _ = r.validate(&req("com.poc.partner", None, "client-partner", true), "nope");
        r.persist(&path_a).unwrap();
        let loaded = PartnerRegistry::load(&path_a, CRED, ClockMode::Tick).unwrap();
        loaded.persist(&path_b).unwrap();
        assert_eq!(std::fs::read(&path_a).unwrap(), std::fs::read(&path_b).unwrap());
    }

    #[test]
    fn clock_resumes_past_persisted_timestamps() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let mut r = seeded();
        let q = req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true);
        for _ in 0..3 {
            r.validate(&q, CRED).unwrap();
        }
        let last = r.list_audit(&AuditFilter::default()).last().unwrap().timestamp;
        r.persist(&path).unwrap();
        let mut reloaded = PartnerRegistry::load(&path, CRED, ClockMode::Tick).unwrap();
        reloaded.validate(&q, CRED).unwrap();
        let next = reloaded.list_audit(&AuditFilter::default()).last().unwrap().timestamp;
        assert!(next > last);
    }

    #[test]
    fn corrupt_and_missing_files_are_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("missing.json");
        assert!(matches!(
            PartnerRegistry::load(&missing, CRED, ClockMode::Tick),
            Err(RegistryError::Io(_))
        ));
        let garbled = dir.path().join("garbled.json");
        std::fs::write(&garbled, b"{not json").unwrap();
        assert!(matches!(
            PartnerRegistry::load(&garbled, CRED, ClockMode::Tick),
            Err(RegistryError::CorruptFile(_))
        ));
        let wrong_schema = dir.path().join("schema.json");
        std::fs::write(&wrong_schema, br#"{"schema_version": 9, "partners": [], "audit": []}"#)
            .unwrap();
        assert!(matches!(
            PartnerRegistry::load(&wrong_schema, CRED, ClockMode::Tick),
            Err(RegistryError::CorruptFile(_))
        ));
    }

    // ── Client wrappers ─────────────────────────────────────────────────

    #[test]
    fn in_process_client_maps_credential_refusal() {
        let mut r = seeded();
        let mut client = InProcessClient::new(&mut r);
        let q = req("com.poc.partner", Some(hash("partner-key-material")), "client-partner", true);
        assert_eq!(client.validate(&q, "wrong").unwrap_err(), ClientError::CredentialRefused);
        assert!(client.validate(&q, CRED).unwrap().accepted());
    }

    #[test]
    fn unreachable_registry_fails_at_the_transport() {
        let mut client = UnreachableRegistry;
        let q = req("com.poc.partner", None, "client-partner", false);
        assert!(matches!(client.validate(&q, CRED), Err(ClientError::Transport(_))));
    }
}
