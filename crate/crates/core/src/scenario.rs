//! Executable scenarios: the token-replay attack, the layered defense,
//! the fault-injected variants, and the mechanism probes that fill the
//! property matrix.
//!
//! Every scenario is a pure function of (name, trials, seed, platform,
//! extra apps): trials run against fresh device state, all randomness
//! comes from one seeded stream, and the resulting report is
//! byte-stable apart from wall-clock timing.
//!
//! The standard cast, installed in this order on every base device:
//! `com.poc.partner` (the honest client), `com.poc.attacker` (holds the
//! notification-listener capability), then any scenario-specific
//! provider processes and extra apps.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::Deserialize;
use thiserror::Error;

use crate::auth::{
    self, authenticate_bound_uid, authenticate_custom_permission, authenticate_known_signers,
    authenticate_pi_creator, authenticate_referrer, capture_and_replay, pkce_challenge,
    spoof_via_task_hijack, AuthDecision, AuthProperty, CapturedEvidence, Mark, Mechanism,
    PermissionKind, PkceAuthority, ScenarioOutcome,
};
use crate::device::{
    AppConfig, AppSpec, Capability, CertHash, DeviceError, DeviceState, Manifest, PlatformPolicy,
    SigningKey,
};
use crate::kernel::{
    BoundService, EchoService, HandlerCtx, HandlerError, Kernel, KernelError, Parcel, Transaction,
};
use crate::notifications::{
    on_notification_posted, Notification, NotificationCenter, NotifyError, StatusBarNotification,
};
use crate::pending_intent::{
    send, Mutability, TokenError, TokenMint, WrappedIntent,
};
use crate::registry::{InProcessClient, PartnerRegistry, RegistryError};
use crate::report::{ScenarioReport, TrialDigest, WallTimeStats, REPORT_SCHEMA_VERSION};
use crate::rng::DetRng;
use crate::sdk::{
    Layer, ProviderConfig, ProviderService, ProviderStats, PublishOutcome, PublishReason,
    PublishRequest,
};

// The standard cast and its key material.
pub const PARTNER_PKG: &str = "com.poc.partner";
pub const ATTACKER_PKG: &str = "com.poc.attacker";
pub const VULNERABLE_SDK_PKG: &str = "com.poc.vulnerable.sdk";
pub const SECURE_SDK_PKG: &str = "com.poc.secure.sdk";
pub const ALT_A_SDK_PKG: &str = "com.poc.alta.sdk";
pub const ALT_B_SDK_PKG: &str = "com.poc.altb.sdk";
pub const NEW_PARTNER_PKG: &str = "com.poc.newpartner";
pub const CLIENT_PARTNER: &str = "client-partner";
pub const CLIENT_NEW_PARTNER: &str = "client-newpartner";
pub const PROVIDER_CRED: &str = "provider-credential-0001";

const PARTNER_KEY_A: &str = "partner-signing-key-A-0001";
const PARTNER_KEY_B: &str = "partner-signing-key-B-0002";
const CLONE_KEY: &str = "cloned-repack-key-9999";
const ATTACKER_KEY: &str = "attacker-signing-key-0001";
const NEW_PARTNER_KEY: &str = "newpartner-signing-key-0001";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("unknown scenario {0:?}; run `list` for the catalog")]
    UnknownScenario(String),
    #[error("invalid scenario request: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Token(#[from] TokenError),
    #[error(transparent)]
    Notify(#[from] NotifyError),
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error("scenario internal error: {0}")]
    Internal(String),
}

// ---------------------------------------------------------------------------
// Requests and configuration
// ---------------------------------------------------------------------------

/// Overrides loadable from a JSON file (`run --config`).
#[derive(Debug, Default, Clone, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub trials: Option<u32>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub platform: Option<PlatformPolicy>,
    /// Installed on the base device after the standard cast.
    #[serde(default)]
    pub extra_apps: Vec<AppConfig>,
}

impl ScenarioConfig {
    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(json)
    }
}

#[derive(Debug, Clone)]
pub struct ScenarioRequest {
    pub name: String,
    pub trials: Option<u32>,
    pub seed: u64,
    pub platform: Option<PlatformPolicy>,
    pub extra_apps: Vec<AppConfig>,
}

impl ScenarioRequest {
    pub fn new(name: impl Into<String>) -> Self {
        Self { name: name.into(), trials: None, seed: 42, platform: None, extra_apps: Vec::new() }
    }

    pub fn apply_config(mut self, config: &ScenarioConfig) -> Self {
        if let Some(trials) = config.trials {
            self.trials = Some(trials);
        }
        if let Some(seed) = config.seed {
            self.seed = seed;
        }
        if let Some(platform) = config.platform {
            self.platform = Some(platform);
        }
        self.extra_apps.extend(config.extra_apps.iter().cloned());
        self
    }
}

/// Name and one-line description of every scenario, in catalog order.
pub const SCENARIOS: [(&str, &str); 11] = [
    ("table3_vulnerable", "token-replay attack against the creator-trusting provider"),
    ("table3_secure", "same attack against the three-layer provider"),
    ("immutable_vs_mutable", "attack outcome is independent of token mutability"),
    ("sideload_layer2", "sideloaded clone of the partner stops at the cert check"),
    ("alt_a_key_rotation", "hardcoded cert allowlist breaks on partner key rotation"),
    ("alt_b_sideload", "skipping the cert check lets a sideloaded clone through"),
    ("revocation_instant", "server-side revocation takes effect on the next call"),
    ("onboarding_no_update", "new partner onboards with a registry write only"),
    ("android15_masking", "notification masking hides the code, not the token"),
    ("mechanism_matrix", "probes each mechanism and assembles the property matrix"),
    ("overhead_micro", "times the on-device verification path"),
];

pub fn scenario_names() -> Vec<&'static str> {
    SCENARIOS.iter().map(|(name, _)| *name).collect()
}

fn default_trials(name: &str) -> u32 {
    match name {
        "overhead_micro" => 1000,
        "mechanism_matrix" => 1,
        _ => 50,
    }
}

// ---------------------------------------------------------------------------
// Simulation plumbing
// ---------------------------------------------------------------------------

struct Sim {
    device: DeviceState,
    kernel: Kernel,
    mint: TokenMint,
    notifications: NotificationCenter,
    registry: PartnerRegistry,
}

fn signing_key(material: &str) -> Result<SigningKey, ScenarioError> {
    Ok(SigningKey::new(material.as_bytes().to_vec(), material)?)
}

fn cert_of(material: &str) -> Result<CertHash, ScenarioError> {
    Ok(CertHash::of_key(&signing_key(material)?))
}

/// Fresh standard device: partner and attacker installed, attacker
/// listening, partner enrolled in a fresh registry.
fn base_sim(platform: PlatformPolicy, extra_apps: &[AppConfig]) -> Result<Sim, ScenarioError> {
    let mut device = DeviceState::new(platform);
    device.install_app(AppSpec::new(PARTNER_PKG, signing_key(PARTNER_KEY_A)?))?;
    device.install_app(AppSpec::new(ATTACKER_PKG, signing_key(ATTACKER_KEY)?))?;
    device.grant_capability(ATTACKER_PKG, Capability::NotificationListener)?;
    for app in extra_apps {
        device.install_app(app.to_spec()?)?;
        if app.notification_listener {
            device.grant_capability(&app.package, Capability::NotificationListener)?;
        }
    }
    let mut registry = PartnerRegistry::new(PROVIDER_CRED);
    registry.register_partner(PARTNER_PKG, cert_of(PARTNER_KEY_A)?, CLIENT_PARTNER)?;
    Ok(Sim {
        device,
        kernel: Kernel::new(),
        mint: TokenMint::new(),
        notifications: NotificationCenter::new(),
        registry,
    })
}

fn install_provider(
    sim: &mut Sim,
    package: &str,
    config: ProviderConfig,
) -> Result<Arc<Mutex<ProviderStats>>, ScenarioError> {
    sim.device
        .install_app(AppSpec::new(package, signing_key(&format!("provider-key-{package}"))?))?;
    let handle = sim.kernel.mint_handle(&sim.device, package)?;
    let service = ProviderService::new(config);
    let stats = service.stats();
    sim.kernel.register_service(&sim.device, &handle, "publish", true, Box::new(service))?;
    Ok(stats)
}

fn vulnerable_config() -> ProviderConfig {
    ProviderConfig::vulnerable(
        [PARTNER_PKG.to_string()].into_iter().collect(),
        PROVIDER_CRED,
    )
}

/// Binds `caller` to the provider and performs one publish transaction,
/// with the in-process registry wired up.
fn publish(
    sim: &mut Sim,
    caller: &str,
    provider_pkg: &str,
    request: PublishRequest,
) -> Result<PublishOutcome, ScenarioError> {
    let handle = sim.kernel.mint_handle(&sim.device, caller)?;
    let conn = sim.kernel.bind_service(&sim.device, &handle, provider_pkg, "publish")?;
    let Sim { device, kernel, registry, .. } = sim;
    let mut client = InProcessClient::new(registry);
    let reply = kernel.transact(device, &conn, Parcel::Publish(request), Some(&mut client))?;
    match reply {
        Parcel::PublishReply(outcome) => Ok(outcome),
        other => Err(ScenarioError::Internal(format!("unexpected reply parcel {other:?}"))),
    }
}

fn partner_request(content: impl Into<String>) -> PublishRequest {
    PublishRequest { content: content.into(), credential: None, client_id: CLIENT_PARTNER.into() }
}

struct AttackRun {
    outcome: PublishOutcome,
    seen_by_attacker: StatusBarNotification,
    otp: String,
}

/// The token-replay attack, end to end: the partner posts a one-time
/// code with a tap-to-open token attached, the listening attacker
/// harvests the token off the status bar and presents it to the
/// provider as its own credential.
fn run_attack(
    sim: &mut Sim,
    provider_pkg: &str,
    rng: &mut DetRng,
    mutability: Mutability,
    trial: u32,
) -> Result<AttackRun, ScenarioError> {
    let otp = format!("{:06}", rng.next_below(1_000_000));
    let partner = sim.kernel.mint_handle(&sim.device, PARTNER_PKG)?;
    let token = sim.mint.create_pending_intent(
        &sim.device,
        &partner,
        WrappedIntent::new(
            "com.poc.partner.VIEW_OTP",
            [("otp".to_string(), otp.clone())].into_iter().collect(),
            PARTNER_PKG,
        ),
        mutability,
    )?;
    sim.notifications.post_notification(
        &sim.device,
        &partner,
        Notification {
            title: "Verification code".into(),
            text: format!("Your one-time code is {otp}"),
            content_intent: token,
            action_intents: Vec::new(),
        },
    )?;

    let seen_by_attacker = sim
        .notifications
        .inbox(ATTACKER_PKG)
        .last()
        .cloned()
        .ok_or_else(|| ScenarioError::Internal("attacker inbox empty after post".into()))?;
    let harvested = on_notification_posted(&sim.device, ATTACKER_PKG, &seen_by_attacker)?;
    let stolen = harvested
        .into_iter()
        .next()
        .ok_or_else(|| ScenarioError::Internal("no token on the notification".into()))?;

    let outcome = publish(
        sim,
        ATTACKER_PKG,
        provider_pkg,
        PublishRequest {
            content: format!("attacker-content-{trial}"),
            credential: Some(stolen),
            client_id: CLIENT_PARTNER.into(),
        },
    )?;
    Ok(AttackRun { outcome, seen_by_attacker, otp })
}

fn attack_succeeded(outcome: &PublishOutcome) -> bool {
    outcome.accepted
        && outcome.attributed_partner.as_ref().is_some_and(|a| {
            a.package_name == PARTNER_PKG && a.client_id == CLIENT_PARTNER
        })
}

/// Replaces the partner with a sideloaded same-name package signed by a
/// different key. The registry still holds the genuine fingerprint.
fn sideload_clone(sim: &mut Sim) -> Result<(), ScenarioError> {
    sim.device.uninstall_app(PARTNER_PKG)?;
    sim.device
        .install_app(AppSpec::new(PARTNER_PKG, signing_key(CLONE_KEY)?).sideloaded())?;
    Ok(())
}

struct ReportSkeleton {
    name: String,
    trials: u32,
    seed: u64,
    platform: PlatformPolicy,
}

impl ReportSkeleton {
    fn finish(
        self,
        successes: u32,
        per_trial: Vec<TrialDigest>,
        details: BTreeMap<String, String>,
    ) -> ScenarioReport {
        ScenarioReport {
            schema_version: REPORT_SCHEMA_VERSION,
            name: self.name,
            trials: self.trials,
            seed: self.seed,
            platform: self.platform.as_str().to_string(),
            successes,
            per_trial,
            matrix: None,
            wall_time_stats: None,
            details,
        }
    }
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

pub fn run_scenario(req: &ScenarioRequest) -> Result<ScenarioReport, ScenarioError> {
    let trials = req.trials.unwrap_or_else(|| default_trials(&req.name));
    let platform = match (req.name.as_str(), req.platform) {
        ("android15_masking", Some(PlatformPolicy::Android14)) => {
            return Err(ScenarioError::InvalidSpec(
                "android15_masking only makes sense on platform android15".into(),
            ))
        }
        ("android15_masking", _) => PlatformPolicy::Android15Masking,
        (_, chosen) => chosen.unwrap_or(PlatformPolicy::Android14),
    };
    let skeleton = ReportSkeleton { name: req.name.clone(), trials, seed: req.seed, platform };
    let mut rng = DetRng::new(req.seed);
    let extra = req.extra_apps.as_slice();

    match req.name.as_str() {
        "table3_vulnerable" => table3_vulnerable(skeleton, &mut rng, extra),
        "table3_secure" => table3_secure(skeleton, &mut rng, extra),
        "immutable_vs_mutable" => immutable_vs_mutable(skeleton, &mut rng, extra),
        "sideload_layer2" => sideload_layer2(skeleton, &mut rng, extra),
        "alt_a_key_rotation" => alt_a_key_rotation(skeleton, &mut rng, extra),
        "alt_b_sideload" => alt_b_sideload(skeleton, &mut rng, extra),
        "revocation_instant" => revocation_instant(skeleton, &mut rng, extra),
        "onboarding_no_update" => onboarding_no_update(skeleton, &mut rng, extra),
        "android15_masking" => android15_masking(skeleton, &mut rng, extra),
        "mechanism_matrix" => mechanism_matrix(skeleton, extra),
        "overhead_micro" => overhead_micro(skeleton, &mut rng, extra),
        other => Err(ScenarioError::UnknownScenario(other.to_string())),
    }
}

// ---------------------------------------------------------------------------
// Attack / defense scenarios
// ---------------------------------------------------------------------------

fn table3_vulnerable(
    skeleton: ReportSkeleton,
    rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut successes = 0;
    let mut per_trial = Vec::new();
    for trial in 0..skeleton.trials {
        let mut sim = base_sim(skeleton.platform, extra)?;
        install_provider(&mut sim, VULNERABLE_SDK_PKG, vulnerable_config())?;
        let run = run_attack(&mut sim, VULNERABLE_SDK_PKG, rng, Mutability::Immutable, trial)?;
        if attack_succeeded(&run.outcome) {
            successes += 1;
        }
        per_trial.push(TrialDigest::from_outcome(trial, &run.outcome, format!("otp={}", run.otp)));
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "attacker publish accepted and attributed to the partner".into(),
    );
    details.insert("attack_rate".into(), format!("{successes}/{}", skeleton.trials));
    Ok(skeleton.finish(successes, per_trial, details))
}

fn table3_secure(
    skeleton: ReportSkeleton,
    rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut successes = 0;
    let mut attacker_resolved = 0;
    let mut layer_counts: BTreeMap<String, u32> = BTreeMap::new();
    let mut per_trial = Vec::new();
    for trial in 0..skeleton.trials {
        let mut sim = base_sim(skeleton.platform, extra)?;
        install_provider(&mut sim, SECURE_SDK_PKG, ProviderConfig::secure(PROVIDER_CRED))?;
        let run = run_attack(&mut sim, SECURE_SDK_PKG, rng, Mutability::Immutable, trial)?;
        if run.outcome.accepted {
            successes += 1;
        }
        if run.outcome.resolved_caller.as_deref() == Some(ATTACKER_PKG) {
            attacker_resolved += 1;
        }
        if let Some(layer) = run.outcome.layer_rejected {
            *layer_counts.entry(format!("{layer:?}")).or_insert(0) += 1;
        }
        per_trial.push(TrialDigest::from_outcome(trial, &run.outcome, format!("otp={}", run.otp)));
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "attacker publish accepted (any acceptance is a defense failure)".into(),
    );
    details.insert("attack_rate".into(), format!("{successes}/{}", skeleton.trials));
    details.insert("rejections_resolving_attacker".into(), attacker_resolved.to_string());
    for (layer, count) in layer_counts {
        details.insert(format!("rejections_at_{layer}"), count.to_string());
    }
    Ok(skeleton.finish(successes, per_trial, details))
}

fn immutable_vs_mutable(
    skeleton: ReportSkeleton,
    rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut per_trial = Vec::new();
    let mut successes_by_mode = BTreeMap::new();
    for (offset, mutability) in [Mutability::Immutable, Mutability::Mutable].into_iter().enumerate()
    {
        let mut successes = 0u32;
        for trial in 0..skeleton.trials {
            let mut sim = base_sim(skeleton.platform, extra)?;
            install_provider(&mut sim, VULNERABLE_SDK_PKG, vulnerable_config())?;
            let run = run_attack(&mut sim, VULNERABLE_SDK_PKG, rng, mutability, trial)?;
            if attack_succeeded(&run.outcome) {
                successes += 1;
            }
            let mut detail = format!("{}", mutability.as_str());
            if mutability == Mutability::Mutable {
                // The mutable token also lets the attacker tamper with
                // the dispatch itself — a separate effect from the auth
                // bypass, which is identical either way.
                let token = on_notification_posted(
                    &sim.device,
                    ATTACKER_PKG,
                    &run.seen_by_attacker,
                )?
                .into_iter()
                .next()
                .ok_or_else(|| ScenarioError::Internal("token disappeared".into()))?;
                let attacker = sim.kernel.mint_handle(&sim.device, ATTACKER_PKG)?;
                let dispatch = send(
                    &sim.device,
                    &token,
                    &attacker,
                    Some([("otp".to_string(), "000000".to_string())].into_iter().collect()),
                )?;
                detail.push_str(&format!(
                    " fill_in_applied={} executed_as={}",
                    dispatch.effective_extras.get("otp").map(|v| v == "000000").unwrap_or(false),
                    dispatch.executed_as_package
                ));
            }
            per_trial.push(TrialDigest::from_outcome(
                (offset as u32) * skeleton.trials + trial,
                &run.outcome,
                detail,
            ));
        }
        successes_by_mode.insert(mutability.as_str().to_string(), successes);
    }
    let immutable = successes_by_mode["immutable"];
    let mutable = successes_by_mode["mutable"];
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "attacker publish accepted and attributed to the partner".into(),
    );
    details.insert("successes_immutable".into(), immutable.to_string());
    details.insert("successes_mutable".into(), mutable.to_string());
    details.insert("mutability_changes_outcome".into(), (immutable != mutable).to_string());
    Ok(skeleton.finish(immutable + mutable, per_trial, details))
}

fn sideload_layer2(
    skeleton: ReportSkeleton,
    _rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut successes = 0;
    let mut l2_rejections = 0;
    let mut per_trial = Vec::new();
    for trial in 0..skeleton.trials {
        let mut sim = base_sim(skeleton.platform, extra)?;
        sideload_clone(&mut sim)?;
        install_provider(&mut sim, SECURE_SDK_PKG, ProviderConfig::secure(PROVIDER_CRED))?;
        let outcome = publish(
            &mut sim,
            PARTNER_PKG,
            SECURE_SDK_PKG,
            partner_request(format!("clone-publish-{trial}")),
        )?;
        if outcome.accepted {
            successes += 1;
        }
        if outcome.layer_rejected == Some(Layer::L2) {
            l2_rejections += 1;
        }
        per_trial.push(TrialDigest::from_outcome(trial, &outcome, "sideloaded clone"));
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "clone publish accepted (any acceptance is a defense failure)".into(),
    );
    details.insert("l2_rejections".into(), l2_rejections.to_string());
    details.insert("enrolled_cert".into(), cert_of(PARTNER_KEY_A)?.to_string());
    details.insert("installed_cert".into(), cert_of(CLONE_KEY)?.to_string());
    Ok(skeleton.finish(successes, per_trial, details))
}

fn alt_a_key_rotation(
    skeleton: ReportSkeleton,
    _rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut successes = 0;
    let mut secure_accepts_after = 0;
    let mut alt_a_rejections_after = 0;
    let mut per_trial = Vec::new();
    for trial in 0..skeleton.trials {
        let mut sim = base_sim(skeleton.platform, extra)?;
        install_provider(
            &mut sim,
            ALT_A_SDK_PKG,
            ProviderConfig::alt_a(
                [cert_of(PARTNER_KEY_A)?].into_iter().collect(),
                PROVIDER_CRED,
            ),
        )?;
        install_provider(&mut sim, SECURE_SDK_PKG, ProviderConfig::secure(PROVIDER_CRED))?;

        let before =
            publish(&mut sim, PARTNER_PKG, ALT_A_SDK_PKG, partner_request("pre-rotation"))?;

        // The partner rotates its signing key; the registry record is
        // rotated in the same maintenance window. No provider changed.
        sim.device.uninstall_app(PARTNER_PKG)?;
        sim.device.install_app(AppSpec::new(PARTNER_PKG, signing_key(PARTNER_KEY_B)?))?;
        sim.registry.rotate_certificate(PARTNER_PKG, CLIENT_PARTNER, cert_of(PARTNER_KEY_B)?)?;

        let alt_a_after =
            publish(&mut sim, PARTNER_PKG, ALT_A_SDK_PKG, partner_request("post-rotation"))?;
        let secure_after =
            publish(&mut sim, PARTNER_PKG, SECURE_SDK_PKG, partner_request("post-rotation"))?;

        if secure_after.accepted {
            secure_accepts_after += 1;
        }
        if alt_a_after.layer_rejected == Some(Layer::L2) {
            alt_a_rejections_after += 1;
        }
        if before.accepted && !alt_a_after.accepted && secure_after.accepted {
            successes += 1;
        }
        per_trial.push(TrialDigest::from_outcome(
            trial,
            &alt_a_after,
            format!(
                "hardcoded build after rotation; before={} secure_after={}",
                before.accepted, secure_after.accepted
            ),
        ));
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "hardcoded build strands the rotated partner while the registry-backed build keeps working"
            .into(),
    );
    details.insert("provider_redeploys".into(), "0".into());
    details.insert("secure_accepts_after_rotation".into(), secure_accepts_after.to_string());
    details.insert("alt_a_l2_rejections_after_rotation".into(), alt_a_rejections_after.to_string());
    Ok(skeleton.finish(successes, per_trial, details))
}

fn alt_b_sideload(
    skeleton: ReportSkeleton,
    _rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut successes = 0;
    let mut secure_l2_rejections = 0;
    let mut per_trial = Vec::new();
    for trial in 0..skeleton.trials {
        let mut sim = base_sim(skeleton.platform, extra)?;
        sideload_clone(&mut sim)?;
        install_provider(&mut sim, ALT_B_SDK_PKG, ProviderConfig::alt_b(PROVIDER_CRED))?;
        install_provider(&mut sim, SECURE_SDK_PKG, ProviderConfig::secure(PROVIDER_CRED))?;

        let alt_b = publish(
            &mut sim,
            PARTNER_PKG,
            ALT_B_SDK_PKG,
            partner_request(format!("clone-publish-{trial}")),
        )?;
        let secure = publish(
            &mut sim,
            PARTNER_PKG,
            SECURE_SDK_PKG,
            partner_request(format!("clone-publish-{trial}")),
        )?;

        if alt_b.accepted {
            successes += 1;
        }
        if secure.layer_rejected == Some(Layer::L2) {
            secure_l2_rejections += 1;
        }
        per_trial.push(TrialDigest::from_outcome(
            trial,
            &alt_b,
            format!("cert-blind build; secure_rejected_at_l2={}", secure.layer_rejected == Some(Layer::L2)),
        ));
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "sideloaded clone accepted by the build that skips the cert check".into(),
    );
    details.insert("secure_l2_rejections".into(), secure_l2_rejections.to_string());
    Ok(skeleton.finish(successes, per_trial, details))
}

fn revocation_instant(
    skeleton: ReportSkeleton,
    _rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut successes = 0;
    let mut per_trial = Vec::new();
    let mut audit_entries = 0;
    for trial in 0..skeleton.trials {
        let mut sim = base_sim(skeleton.platform, extra)?;
        install_provider(&mut sim, SECURE_SDK_PKG, ProviderConfig::secure(PROVIDER_CRED))?;

        let before =
            publish(&mut sim, PARTNER_PKG, SECURE_SDK_PKG, partner_request("pre-revocation"))?;
        sim.registry.revoke_partner(PARTNER_PKG, CLIENT_PARTNER)?;
        let after =
            publish(&mut sim, PARTNER_PKG, SECURE_SDK_PKG, partner_request("post-revocation"))?;

        let clean = before.accepted
            && !after.accepted
            && after.layer_rejected == Some(Layer::L3)
            && after.reason == PublishReason::RegistryRevoked;
        if clean {
            successes += 1;
        }
        audit_entries = sim.registry.audit_len();
        per_trial.push(TrialDigest::from_outcome(
            trial,
            &after,
            format!("before={}", before.accepted),
        ));
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "accepted before revocation, rejected on the very next call after it".into(),
    );
    details.insert("audit_entries_per_trial".into(), audit_entries.to_string());
    Ok(skeleton.finish(successes, per_trial, details))
}

fn onboarding_no_update(
    skeleton: ReportSkeleton,
    _rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut successes = 0;
    let mut per_trial = Vec::new();
    for trial in 0..skeleton.trials {
        let mut sim = base_sim(skeleton.platform, extra)?;
        install_provider(&mut sim, SECURE_SDK_PKG, ProviderConfig::secure(PROVIDER_CRED))?;
        sim.device.install_app(AppSpec::new(NEW_PARTNER_PKG, signing_key(NEW_PARTNER_KEY)?))?;

        let new_request = || PublishRequest {
            content: "hello from the new partner".into(),
            credential: None,
            client_id: CLIENT_NEW_PARTNER.into(),
        };
        let before = publish(&mut sim, NEW_PARTNER_PKG, SECURE_SDK_PKG, new_request())?;
        // Onboarding is one server-side write. The provider process and
        // every manifest on the device stay exactly as they were.
        sim.registry.register_partner(
            NEW_PARTNER_PKG,
            cert_of(NEW_PARTNER_KEY)?,
            CLIENT_NEW_PARTNER,
        )?;
        let after = publish(&mut sim, NEW_PARTNER_PKG, SECURE_SDK_PKG, new_request())?;

        let clean = !before.accepted
            && before.reason == PublishReason::RegistryUnknownPartner
            && after.accepted;
        if clean {
            successes += 1;
        }
        per_trial.push(TrialDigest::from_outcome(
            trial,
            &after,
            format!("before_reason={:?}", before.reason),
        ));
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "unknown partner rejected, then accepted after a registry write alone".into(),
    );
    details.insert("provider_redeploys".into(), "0".into());
    details.insert("manifest_changes".into(), "0".into());
    Ok(skeleton.finish(successes, per_trial, details))
}

fn android15_masking(
    skeleton: ReportSkeleton,
    rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut successes = 0;
    let mut per_trial = Vec::new();
    let mut example_masked = String::new();
    let mut sideload_blocked = true;
    for trial in 0..skeleton.trials {
        let mut sim = base_sim(skeleton.platform, extra)?;
        install_provider(&mut sim, VULNERABLE_SDK_PKG, vulnerable_config())?;
        let run = run_attack(&mut sim, VULNERABLE_SDK_PKG, rng, Mutability::Immutable, trial)?;

        let masked_text = run.seen_by_attacker.notification.text.clone();
        let code_hidden = !masked_text.contains(&run.otp);
        let title_intact = run.seen_by_attacker.notification.title == "Verification code";
        if example_masked.is_empty() {
            example_masked = masked_text.clone();
        }

        // Masking is a listener-side policy; sideloaded listeners are
        // refused outright on this platform.
        sim.device
            .install_app(AppSpec::new("com.poc.sideload.spy", signing_key("spy-key-material-01")?).sideloaded())?;
        if sim
            .device
            .grant_capability("com.poc.sideload.spy", Capability::NotificationListener)
            .is_ok()
        {
            sideload_blocked = false;
        }

        if attack_succeeded(&run.outcome) && code_hidden && title_intact {
            successes += 1;
        }
        per_trial.push(TrialDigest::from_outcome(
            trial,
            &run.outcome,
            format!("masked_text={masked_text:?} code_hidden={code_hidden}"),
        ));
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "code masked on the listener copy, yet the stolen token still publishes".into(),
    );
    details.insert("example_masked_text".into(), example_masked);
    details.insert("sideloaded_listener_blocked".into(), sideload_blocked.to_string());
    Ok(skeleton.finish(successes, per_trial, details))
}

// ---------------------------------------------------------------------------
// Mechanism probes
// ---------------------------------------------------------------------------

/// Bound service that authenticates every caller against an allowlist
/// and logs the decisions, for probes to inspect.
struct AuthProbeService {
    allowlist: BTreeSet<String>,
    decisions: Arc<Mutex<Vec<AuthDecision>>>,
}

impl BoundService for AuthProbeService {
    fn on_transact(
        &mut self,
        txn: &Transaction,
        ctx: &mut HandlerCtx<'_>,
    ) -> Result<Parcel, HandlerError> {
        let decision = authenticate_bound_uid(txn, ctx.device, &self.allowlist);
        let reply = Parcel::Text(if decision.accepted { "ok" } else { "refused" }.to_string());
        self.decisions.lock().unwrap().push(decision);
        Ok(reply)
    }
}

/// Bound service that stows a clone of the live transaction so a probe
/// can try to replay it after the call returns.
struct StashService {
    stash: Arc<Mutex<Option<Transaction>>>,
}

impl BoundService for StashService {
    fn on_transact(
        &mut self,
        txn: &Transaction,
        _ctx: &mut HandlerCtx<'_>,
    ) -> Result<Parcel, HandlerError> {
        *self.stash.lock().unwrap() = Some(txn.clone());
        Ok(Parcel::Empty)
    }
}

struct ProbeWorld {
    device: DeviceState,
    kernel: Kernel,
    mint: TokenMint,
}

fn probe_world() -> Result<ProbeWorld, ScenarioError> {
    let mut device = DeviceState::new(PlatformPolicy::Android14);
    device.install_app(AppSpec::new(PARTNER_PKG, signing_key(PARTNER_KEY_A)?))?;
    device.install_app(AppSpec::new(ATTACKER_PKG, signing_key(ATTACKER_KEY)?))?;
    device.install_app(AppSpec::new(SECURE_SDK_PKG, signing_key("provider-key-probe")?))?;
    Ok(ProbeWorld { device, kernel: Kernel::new(), mint: TokenMint::new() })
}

fn partner_allowlist() -> BTreeSet<String> {
    [PARTNER_PKG.to_string()].into_iter().collect()
}

fn mark(yes: bool) -> Mark {
    if yes {
        Mark::Yes
    } else {
        Mark::No
    }
}

fn outcome(mechanism: Mechanism, property: AuthProperty, m: Mark) -> ScenarioOutcome {
    ScenarioOutcome { mechanism, property, mark: m }
}

/// Runs each mechanism probe once and reports the observed mark for
/// every scenario-backed matrix cell. Marks are computed from what the
/// probes actually did — a regression in any mechanism flips its cell.
fn probe_all_mechanisms() -> Result<Vec<ScenarioOutcome>, ScenarioError> {
    let mut outcomes = Vec::new();

    // Token creator checks: can the attacker pass one off? (forgeability)
    {
        let mut w = probe_world()?;
        let partner = w.kernel.mint_handle(&w.device, PARTNER_PKG)?;
        let token = w.mint.create_pending_intent(
            &w.device,
            &partner,
            WrappedIntent::new("com.poc.partner.VIEW_OTP", BTreeMap::new(), PARTNER_PKG),
            Mutability::Immutable,
        )?;
        // The attacker, holding someone else's token, presents it as its
        // own credential.
        let stolen = token.clone();
        let decision = authenticate_pi_creator(&stolen, &partner_allowlist());
        let attacker_impersonated =
            decision.accepted && decision.authenticated_as.as_deref() == Some(PARTNER_PKG);
        outcomes.push(outcome(
            Mechanism::PiGetCreatorPackage,
            AuthProperty::Unforgeable,
            mark(!attacker_impersonated),
        ));

        // ...and stored for later: replays verbatim.
        let mut pkce = PkceAuthority::new();
        let replayed = capture_and_replay(
            &CapturedEvidence::StolenToken(stolen),
            &w.device,
            &partner_allowlist(),
            &mut pkce,
        );
        outcomes.push(outcome(
            Mechanism::PiGetCreatorPackage,
            AuthProperty::ReplayResistant,
            mark(!replayed.accepted),
        ));
    }

    // Referrer-style checks, for both entry points that rely on them.
    for mechanism in [Mechanism::StartActivityForResult, Mechanism::GetReferrer] {
        let w = probe_world()?;
        let attacker = w.kernel.mint_handle(&w.device, ATTACKER_PKG)?;
        let forged = spoof_via_task_hijack(&attacker, PARTNER_PKG);
        let decision = authenticate_referrer(&forged, &partner_allowlist())
            .map_err(|e| ScenarioError::Internal(e.to_string()))?;
        let forgery_passed =
            decision.accepted && decision.authenticated_as.as_deref() == Some(PARTNER_PKG);
        outcomes.push(outcome(mechanism, AuthProperty::Unforgeable, mark(!forgery_passed)));
    }

    // Manifest-permission gates: forgery and onboarding cost.
    for (mechanism, kind) in [
        (Mechanism::BroadcastPermission, PermissionKind::Broadcast),
        (Mechanism::ProviderPermission, PermissionKind::Provider),
    ] {
        let permission = "com.poc.sdk.PUBLISH";
        let mut device = DeviceState::new(PlatformPolicy::Android14);
        device.install_app(
            AppSpec::new(PARTNER_PKG, signing_key(PARTNER_KEY_A)?)
                .manifest(Manifest::empty().with_used_permission(permission)),
        )?;
        device.install_app(AppSpec::new(ATTACKER_PKG, signing_key(ATTACKER_KEY)?))?;
        device.install_app(AppSpec::new(NEW_PARTNER_PKG, signing_key(NEW_PARTNER_KEY)?))?;

        let partner_ok =
            authenticate_custom_permission(device.app(PARTNER_PKG).unwrap(), permission, kind)
                .accepted;
        let attacker_in =
            authenticate_custom_permission(device.app(ATTACKER_PKG).unwrap(), permission, kind)
                .accepted;
        // Manifests are immutable once installed: there is no API that
        // grants the attacker this permission without a reinstall.
        outcomes.push(outcome(
            mechanism,
            AuthProperty::Unforgeable,
            mark(partner_ok && !attacker_in),
        ));

        // Onboarding: the new partner shipped without the permission and
        // cannot authenticate until a manifest change lands.
        let new_partner_in = authenticate_custom_permission(
            device.app(NEW_PARTNER_PKG).unwrap(),
            permission,
            kind,
        )
        .accepted;
        outcomes.push(outcome(mechanism, AuthProperty::ScalableNoManifest, mark(new_partner_in)));
    }

    // Signature allowlist compiled into the host's manifest.
    {
        let mut device = DeviceState::new(PlatformPolicy::Android14);
        device.install_app(AppSpec::new(PARTNER_PKG, signing_key(PARTNER_KEY_A)?))?;
        device.install_app(AppSpec::new(ATTACKER_PKG, signing_key(ATTACKER_KEY)?))?;
        device.install_app(AppSpec::new(NEW_PARTNER_PKG, signing_key(NEW_PARTNER_KEY)?))?;
        let host_manifest = Manifest::empty().with_known_signer(cert_of(PARTNER_KEY_A)?);

        let partner_ok =
            authenticate_known_signers(device.app(PARTNER_PKG).unwrap(), &host_manifest).accepted;
        let attacker_in =
            authenticate_known_signers(device.app(ATTACKER_PKG).unwrap(), &host_manifest).accepted;
        outcomes.push(outcome(
            Mechanism::KnownSigners,
            AuthProperty::Unforgeable,
            mark(partner_ok && !attacker_in),
        ));

        let new_partner_in =
            authenticate_known_signers(device.app(NEW_PARTNER_PKG).unwrap(), &host_manifest)
                .accepted;
        outcomes.push(outcome(
            Mechanism::KnownSigners,
            AuthProperty::ScalableNoManifest,
            mark(new_partner_in),
        ));
    }

    // PKCE: session continuity without identity.
    {
        let mut pkce = PkceAuthority::new();
        // The attacker opens its own flow claiming the partner's client
        // id and completes it with its own verifier.
        let flow = pkce.initiate(CLIENT_PARTNER, &pkce_challenge("attacker-chosen-verifier"));
        let decision = pkce
            .exchange(flow.flow_id, &flow.issued_code, "attacker-chosen-verifier")
            .map_err(|e| ScenarioError::Internal(e.to_string()))?;
        let impersonated =
            decision.accepted && decision.authenticated_as.as_deref() == Some(CLIENT_PARTNER);
        outcomes.push(outcome(Mechanism::Pkce, AuthProperty::Unforgeable, mark(!impersonated)));

        // A code stolen off the wire replays only with the verifier,
        // which never left the honest client.
        let mut pkce2 = PkceAuthority::new();
        let victim_flow =
            pkce2.initiate(CLIENT_PARTNER, &pkce_challenge("victim-secret-verifier"));
        let world = probe_world()?;
        let replayed = capture_and_replay(
            &CapturedEvidence::StolenPkceCode {
                flow_id: victim_flow.flow_id,
                code: victim_flow.issued_code,
            },
            &world.device,
            &partner_allowlist(),
            &mut pkce2,
        );
        outcomes.push(outcome(
            Mechanism::Pkce,
            AuthProperty::ReplayResistant,
            mark(!replayed.accepted),
        ));
    }

    // Bound service + kernel-stamped UID: all five properties.
    {
        let mut w = probe_world()?;
        let decisions = Arc::new(Mutex::new(Vec::new()));
        let stash = Arc::new(Mutex::new(None));
        let provider = w.kernel.mint_handle(&w.device, SECURE_SDK_PKG)?;
        w.kernel.register_service(
            &w.device,
            &provider,
            "auth-probe",
            true,
            Box::new(AuthProbeService {
                allowlist: partner_allowlist(),
                decisions: decisions.clone(),
            }),
        )?;
        w.kernel.register_service(
            &w.device,
            &provider,
            "stash",
            true,
            Box::new(StashService { stash: stash.clone() }),
        )?;
        w.kernel.register_service(
            &w.device,
            &provider,
            "echo",
            true,
            Box::new(EchoService),
        )?;

        let partner = w.kernel.mint_handle(&w.device, PARTNER_PKG)?;
        let attacker = w.kernel.mint_handle(&w.device, ATTACKER_PKG)?;

        // Kernel-backed: the attacker's payload claims to be the partner;
        // the echoed stamp is still the attacker's UID.
        let echo_conn = w.kernel.bind_service(&w.device, &attacker, SECURE_SDK_PKG, "echo")?;
        let reply = w.kernel.transact(
            &w.device,
            &echo_conn,
            Parcel::Text(format!("i am {PARTNER_PKG}")),
            None,
        )?;
        let attacker_uid = attacker.uid();
        let stamp_is_kernel_truth =
            reply == Parcel::Text(format!("{attacker_uid}:i am {PARTNER_PKG}"));
        outcomes.push(outcome(
            Mechanism::BoundServiceUid,
            AuthProperty::KernelBacked,
            mark(stamp_is_kernel_truth),
        ));

        // Unforgeable: partner accepted, attacker refused on the same
        // service with the same allowlist.
        let probe_conn_p =
            w.kernel.bind_service(&w.device, &partner, SECURE_SDK_PKG, "auth-probe")?;
        let probe_conn_a =
            w.kernel.bind_service(&w.device, &attacker, SECURE_SDK_PKG, "auth-probe")?;
        w.kernel.transact(&w.device, &probe_conn_p, Parcel::Text("hi".into()), None)?;
        w.kernel.transact(&w.device, &probe_conn_a, Parcel::Text("hi".into()), None)?;
        let observed = decisions.lock().unwrap().clone();
        let partner_in = observed
            .first()
            .is_some_and(|d| d.accepted && d.authenticated_as.as_deref() == Some(PARTNER_PKG));
        let attacker_out = observed.get(1).is_some_and(|d| !d.accepted);
        outcomes.push(outcome(
            Mechanism::BoundServiceUid,
            AuthProperty::Unforgeable,
            mark(partner_in && attacker_out),
        ));

        // Replay-resistant: the stashed transaction is a dead credential
        // the moment the handler returned.
        let stash_conn = w.kernel.bind_service(&w.device, &partner, SECURE_SDK_PKG, "stash")?;
        w.kernel.transact(&w.device, &stash_conn, Parcel::Empty, None)?;
        let stored = stash
            .lock()
            .unwrap()
            .clone()
            .ok_or_else(|| ScenarioError::Internal("stash service kept nothing".into()))?;
        let mut pkce = PkceAuthority::new();
        let replayed = capture_and_replay(
            &CapturedEvidence::StoredTransaction(stored),
            &w.device,
            &partner_allowlist(),
            &mut pkce,
        );
        outcomes.push(outcome(
            Mechanism::BoundServiceUid,
            AuthProperty::ReplayResistant,
            mark(!replayed.accepted),
        ));

        // Scalable: onboarding the new partner is one allowlist-data
        // update — no manifest shipped, no provider reinstalled.
        w.device.install_app(AppSpec::new(NEW_PARTNER_PKG, signing_key(NEW_PARTNER_KEY)?))?;
        let new_partner = w.kernel.mint_handle(&w.device, NEW_PARTNER_PKG)?;
        let decisions2 = Arc::new(Mutex::new(Vec::new()));
        let mut grown = partner_allowlist();
        grown.insert(NEW_PARTNER_PKG.to_string());
        w.kernel.register_service(
            &w.device,
            &provider,
            "auth-probe-updated",
            true,
            Box::new(AuthProbeService { allowlist: grown, decisions: decisions2.clone() }),
        )?;
        let conn_new =
            w.kernel.bind_service(&w.device, &new_partner, SECURE_SDK_PKG, "auth-probe-updated")?;
        w.kernel.transact(&w.device, &conn_new, Parcel::Text("hi".into()), None)?;
        let onboarded = decisions2.lock().unwrap().first().is_some_and(|d| d.accepted);
        outcomes.push(outcome(
            Mechanism::BoundServiceUid,
            AuthProperty::ScalableNoManifest,
            mark(onboarded),
        ));

        // Bidirectional: the same connection carries a provider-initiated
        // callback to the verified caller.
        w.kernel.register_callback(&probe_conn_p)?;
        let delivered = w.kernel.invoke_callback(&probe_conn_p, "publish-complete")?;
        outcomes.push(outcome(
            Mechanism::BoundServiceUid,
            AuthProperty::Bidirectional,
            mark(delivered == "publish-complete"),
        ));
    }

    Ok(outcomes)
}

fn mechanism_matrix(
    skeleton: ReportSkeleton,
    _extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let outcomes = probe_all_mechanisms()?;
    let matrix = auth::build_property_matrix(&outcomes)
        .map_err(|e| ScenarioError::Internal(e.to_string()))?;
    // The probes are pure; each extra trial re-runs the suite and must
    // land on the identical grid.
    let mut stable_runs = 0;
    for _ in 0..skeleton.trials {
        let rerun = auth::build_property_matrix(&probe_all_mechanisms()?)
            .map_err(|e| ScenarioError::Internal(e.to_string()))?;
        if rerun == matrix {
            stable_runs += 1;
        }
    }
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "probe suite rerun lands on the identical grid".into(),
    );
    details.insert("cells_total".into(), "40".into());
    details.insert("cells_scenario_backed".into(), outcomes.len().to_string());
    let mut report = skeleton.finish(stable_runs, Vec::new(), details);
    report.matrix = Some(matrix);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Overhead
// ---------------------------------------------------------------------------

fn overhead_micro(
    skeleton: ReportSkeleton,
    _rng: &mut DetRng,
    extra: &[AppConfig],
) -> Result<ScenarioReport, ScenarioError> {
    let mut sim = base_sim(skeleton.platform, extra)?;
    let stats = install_provider(&mut sim, SECURE_SDK_PKG, ProviderConfig::secure(PROVIDER_CRED))?;
    let partner = sim.kernel.mint_handle(&sim.device, PARTNER_PKG)?;
    let conn = sim.kernel.bind_service(&sim.device, &partner, SECURE_SDK_PKG, "publish")?;
    let mut accepted = 0u32;
    for i in 0..skeleton.trials {
        let Sim { device, kernel, registry, .. } = &mut sim;
        let mut client = InProcessClient::new(registry);
        let reply = kernel.transact(
            device,
            &conn,
            Parcel::Publish(partner_request(format!("publish-{i}"))),
            Some(&mut client),
        )?;
        if matches!(reply, Parcel::PublishReply(o) if o.accepted) {
            accepted += 1;
        }
    }
    let samples = stats.lock().unwrap().verify_nanos.clone();
    let wall = WallTimeStats::from_samples(&samples);
    let mut details = BTreeMap::new();
    details.insert(
        "success_criterion".into(),
        "partner publish accepted (each call times the on-device check)".into(),
    );
    details.insert("timed_calls".into(), samples.len().to_string());
    let mut report = skeleton.finish(accepted, Vec::new(), details);
    report.wall_time_stats = wall;
    Ok(report)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
