//! Device model: installed applications, their signing identities, and
//! platform policy.
//!
//! This is the ground truth every authentication layer ultimately
//! resolves against:
//!
//! 1. UIDs are allocated sequentially from 10000 at install time and are
//!    never reused, even after uninstall. A UID therefore identifies at
//!    most one package for the lifetime of a device.
//! 2. An app's manifest (permissions, known signer hashes, exported
//!    services) is fixed at install; there is no post-install mutation.
//! 3. Certificate fingerprints are a 256-bit digest of the signing key,
//!    rendered as 64 lowercase hex chars.
//! 4. Platform policy gates capability grants: under the Android-15
//!    masking policy, sideloaded apps cannot be granted notification
//!    access (Restricted Settings), store-installed apps can.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;

/// Kernel-level app identity. Allocated by [`DeviceState::install_app`],
/// never forged and never reused.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Uid(u32);

impl Uid {
    pub const FIRST_APP: u32 = 10_000;

    pub fn as_u32(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for Uid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum DeviceError {
    #[error("package {0} is already installed")]
    DuplicatePackage(String),
    #[error("package {0} is not installed")]
    UnknownPackage(String),
    #[error("signing key material must be at least {min} bytes, got {got}")]
    KeyTooShort { min: usize, got: usize },
    #[error("cert hash must be 64 lowercase hex chars, got {0:?}")]
    MalformedCertHash(String),
    #[error("restricted settings block notification access for sideloaded package {0}")]
    RestrictedSettingsBlocked(String),
    #[error("package name {0:?} is not a dotted identifier")]
    InvalidPackageName(String),
}

// ---------------------------------------------------------------------------
// Signing identity
// ---------------------------------------------------------------------------

/// Developer signing key. Only its digest ever leaves this type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SigningKey {
    material: Vec<u8>,
    label: String,
}

impl SigningKey {
    pub const MIN_LEN: usize = 16;

    pub fn new(material: impl Into<Vec<u8>>, label: impl Into<String>) -> Result<Self, DeviceError> {
        let material = material.into();
        if material.len() < Self::MIN_LEN {
            return Err(DeviceError::KeyTooShort { min: Self::MIN_LEN, got: material.len() });
        }
        Ok(Self { material, label: label.into() })
    }

    pub fn label(&self) -> &str {
        &self.label
    }
}

/// 256-bit certificate fingerprint, lowercase hex.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CertHash(String);

impl CertHash {
    pub fn of_key(key: &SigningKey) -> Self {
        Self(sha256_hex(&key.material))
    }

    pub fn parse(s: &str) -> Result<Self, DeviceError> {
        let ok = s.len() == 64
            && s.chars().all(|c| c.is_ascii_hexdigit() && !c.is_ascii_uppercase());
        if ok {
            Ok(Self(s.to_string()))
        } else {
            Err(DeviceError::MalformedCertHash(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for CertHash {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

// ---------------------------------------------------------------------------
// Manifest and app records
// ---------------------------------------------------------------------------

/// Static install-time declarations. Immutable once installed; changing
/// any field in a real deployment means shipping a new APK.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub defined_permissions: BTreeSet<String>,
    #[serde(default)]
    pub used_permissions: BTreeSet<String>,
    #[serde(default)]
    pub known_signer_hashes: BTreeSet<CertHash>,
    #[serde(default)]
    pub exported_services: BTreeSet<String>,
}

impl Manifest {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn with_exported_service(mut self, name: impl Into<String>) -> Self {
        self.exported_services.insert(name.into());
        self
    }

    pub fn with_defined_permission(mut self, name: impl Into<String>) -> Self {
        self.defined_permissions.insert(name.into());
        self
    }

    pub fn with_used_permission(mut self, name: impl Into<String>) -> Self {
        self.used_permissions.insert(name.into());
        self
    }

    pub fn with_known_signer(mut self, hash: CertHash) -> Self {
        self.known_signer_hashes.insert(hash);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstallSource {
    Store,
    Sideload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    /// Notification listener access: the app sees every posted
    /// notification, including embedded intent tokens.
    NotificationListener,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlatformPolicy {
    Android14,
    #[serde(rename = "android15")]
    Android15Masking,
}

impl PlatformPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            PlatformPolicy::Android14 => "android14",
            PlatformPolicy::Android15Masking => "android15",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "android14" => Some(PlatformPolicy::Android14),
            "android15" => Some(PlatformPolicy::Android15Masking),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct InstalledApp {
    pub package_name: String,
    pub uid: Uid,
    pub cert_hash: CertHash,
    pub manifest: Manifest,
    pub capabilities: BTreeSet<Capability>,
    pub install_source: InstallSource,
}

/// Everything needed to install one app.
#[derive(Debug, Clone)]
pub struct AppSpec {
    pub package_name: String,
    pub key: SigningKey,
    pub manifest: Manifest,
    pub install_source: InstallSource,
}

impl AppSpec {
    pub fn new(package_name: impl Into<String>, key: SigningKey) -> Self {
        Self {
            package_name: package_name.into(),
            key,
            manifest: Manifest::empty(),
            install_source: InstallSource::Store,
        }
    }

    pub fn manifest(mut self, manifest: Manifest) -> Self {
        self.manifest = manifest;
        self
    }

    pub fn sideloaded(mut self) -> Self {
        self.install_source = InstallSource::Sideload;
        self
    }
}

// ---------------------------------------------------------------------------
// Device state
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DeviceState {
    apps: BTreeMap<String, InstalledApp>,
    uid_index: BTreeMap<Uid, String>,
    next_uid: u32,
    policy: PlatformPolicy,
}

impl DeviceState {
    pub fn new(policy: PlatformPolicy) -> Self {
        Self {
            apps: BTreeMap::new(),
            uid_index: BTreeMap::new(),
            next_uid: Uid::FIRST_APP,
            policy,
        }
    }

    pub fn policy(&self) -> PlatformPolicy {
        self.policy
    }

    /// Installs an app, allocating the next sequential UID. UIDs are
    /// consumed forever: uninstalling does not free the slot.
    pub fn install_app(&mut self, spec: AppSpec) -> Result<Uid, DeviceError> {
        if !spec.package_name.contains('.') || spec.package_name.trim().is_empty() {
            return Err(DeviceError::InvalidPackageName(spec.package_name));
        }
        if self.apps.contains_key(&spec.package_name) {
            return Err(DeviceError::DuplicatePackage(spec.package_name));
        }
        let uid = Uid(self.next_uid);
        self.next_uid += 1;
        let app = InstalledApp {
            package_name: spec.package_name.clone(),
            uid,
            cert_hash: CertHash::of_key(&spec.key),
            manifest: spec.manifest,
            capabilities: BTreeSet::new(),
            install_source: spec.install_source,
        };
        self.uid_index.insert(uid, spec.package_name.clone());
        self.apps.insert(spec.package_name, app);
        Ok(uid)
    }

    /// Kernel-side reverse lookup. Unknown or retired UIDs resolve to
    /// nothing; a live UID resolves to exactly one package.
    pub fn get_packages_for_uid(&self, uid: Uid) -> Vec<String> {
        self.uid_index.get(&uid).cloned().into_iter().collect()
    }

    /// True iff the installed package's fingerprint equals `hash`.
    pub fn has_signing_certificate(&self, package: &str, hash: &CertHash) -> Result<bool, DeviceError> {
        let app = self
            .apps
            .get(package)
            .ok_or_else(|| DeviceError::UnknownPackage(package.to_string()))?;
        Ok(&app.cert_hash == hash)
    }

    /// Grants a capability, subject to platform policy: the Android-15
    /// masking policy refuses notification access for sideloaded apps.
    pub fn grant_capability(&mut self, package: &str, cap: Capability) -> Result<(), DeviceError> {
        let policy = self.policy;
        let app = self
            .apps
            .get_mut(package)
            .ok_or_else(|| DeviceError::UnknownPackage(package.to_string()))?;
        if cap == Capability::NotificationListener
            && policy == PlatformPolicy::Android15Masking
            && app.install_source == InstallSource::Sideload
        {
            return Err(DeviceError::RestrictedSettingsBlocked(package.to_string()));
        }
        app.capabilities.insert(cap);
        Ok(())
    }

    /// Removes the app from both tables. Its UID is retired, so any
    /// process handle minted for it stops resolving immediately.
    pub fn uninstall_app(&mut self, package: &str) -> Result<(), DeviceError> {
        let app = self
            .apps
            .remove(package)
            .ok_or_else(|| DeviceError::UnknownPackage(package.to_string()))?;
        self.uid_index.remove(&app.uid);
        Ok(())
    }

    pub fn app(&self, package: &str) -> Option<&InstalledApp> {
        self.apps.get(package)
    }

    pub fn is_installed(&self, package: &str) -> bool {
        self.apps.contains_key(package)
    }

    pub fn uid_resolves(&self, uid: Uid) -> bool {
        self.uid_index.contains_key(&uid)
    }

    /// Packages holding a capability, in deterministic (sorted) order.
    pub fn packages_with_capability(&self, cap: Capability) -> Vec<String> {
        self.apps
            .values()
            .filter(|a| a.capabilities.contains(&cap))
            .map(|a| a.package_name.clone())
            .collect()
    }

    pub fn packages(&self) -> impl Iterator<Item = &str> {
        self.apps.keys().map(String::as_str)
    }
}

// ---------------------------------------------------------------------------
// JSON scenario-config
// ---------------------------------------------------------------------------

/// One app entry in a device-config document. Key material is given as a
/// UTF-8 string (minimum 16 bytes); the installed fingerprint is its
/// digest, so configs with equal `key_material` model apps signed by the
/// same developer key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppConfig {
    pub package: String,
    pub key_material: String,
    #[serde(default)]
    pub key_label: String,
    #[serde(default)]
    pub manifest: Manifest,
    #[serde(default = "AppConfig::default_source")]
    pub source: InstallSource,
    #[serde(default)]
    pub notification_listener: bool,
}

impl AppConfig {
    fn default_source() -> InstallSource {
        InstallSource::Store
    }

    pub fn to_spec(&self) -> Result<AppSpec, DeviceError> {
        let key = SigningKey::new(self.key_material.as_bytes().to_vec(), self.key_label.clone())?;
        Ok(AppSpec {
            package_name: self.package.clone(),
            key,
            manifest: self.manifest.clone(),
            install_source: self.source,
        })
    }
}

/// Full device setup document: platform policy plus an ordered app list.
/// Install order is list order, which fixes the UID assignment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeviceConfig {
    pub platform: PlatformPolicy,
    #[serde(default)]
    pub apps: Vec<AppConfig>,
}

impl DeviceConfig {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }

    pub fn build(&self) -> Result<DeviceState, DeviceError> {
        let mut device = DeviceState::new(self.platform);
        for app in &self.apps {
            device.install_app(app.to_spec()?)?;
            if app.notification_listener {
                device.grant_capability(&app.package, Capability::NotificationListener)?;
            }
        }
        Ok(device)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
