//! Acceptance gate: one test per shipping criterion, each printing a
//! single PASS line (visible with `--nocapture`) once its assertions
//! hold. Every test drives the public API or the installed binary —
//! nothing here reaches into crate internals.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use ipc_auth_sim::auth::{AuthProperty, CellProvenance, Mark, Mechanism, PropertyMatrix};
use ipc_auth_sim::device::{
    AppSpec, Capability, CertHash, DeviceState, PlatformPolicy, SigningKey, Uid,
};
use ipc_auth_sim::kernel::{
    BoundService, HandlerCtx, HandlerError, Kernel, KernelError, Parcel, Transaction,
};
use ipc_auth_sim::notifications::{on_notification_posted, Notification, NotificationCenter};
use ipc_auth_sim::pending_intent::{send, Mutability, TokenMint, WrappedIntent};
use ipc_auth_sim::registry::{InProcessClient, PartnerRegistry, PartnerStatus};
use ipc_auth_sim::report::ScenarioReport;
use ipc_auth_sim::rng::DetRng;
use ipc_auth_sim::scenario::{run_scenario, ScenarioRequest, ATTACKER_PKG, PARTNER_PKG};
use ipc_auth_sim::sdk::{ProviderConfig, ProviderService, PublishOutcome, PublishRequest};

fn run(name: &str, trials: u32, seed: u64) -> ScenarioReport {
    let mut request = ScenarioRequest::new(name);
    request.trials = Some(trials);
    request.seed = seed;
    run_scenario(&request).unwrap_or_else(|e| panic!("{name} failed: {e}"))
}

fn key(material: &str) -> SigningKey {
    SigningKey::new(material.as_bytes().to_vec(), material).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Headline attack rates, via the shipped binary
// ---------------------------------------------------------------------------

#[test]
fn criterion_01_attack_rates_100_to_0() {
    let started = Instant::now();
    let output = Command::new(env!("CARGO_BIN_EXE_ipcsim"))
        .arg("table3")
        .output()
        .expect("binary runs");
    let elapsed = started.elapsed();
    let stdout = String::from_utf8(output.stdout).unwrap();
    assert!(output.status.success(), "table3 exited nonzero:\n{stdout}");
    assert!(
        stdout.contains("| com.poc.vulnerable.sdk (token-creator auth) | 50/50 (100%) | \u{2717} |"),
        "missing vulnerable row:\n{stdout}"
    );
    assert!(
        stdout.contains("| com.poc.secure.sdk (three-layer auth) | 0/50 (0%) | \u{2713} |"),
        "missing secure row:\n{stdout}"
    );
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget is 5s");
    println!(
        "PASS criterion 1: attack lands 50/50 on the token-trusting build and 0/50 on the layered build in {elapsed:?}"
    );
}

// ---------------------------------------------------------------------------
// 2. Attribution strings
// ---------------------------------------------------------------------------

#[test]
fn criterion_02_attribution_is_exact() {
    let vulnerable = run("table3_vulnerable", 50, 1);
    assert_eq!(vulnerable.successes, 50);
    for t in &vulnerable.per_trial {
        assert!(t.accepted);
        assert_eq!(t.attributed_package.as_deref(), Some("com.poc.partner"));
        assert_eq!(t.attributed_client.as_deref(), Some("client-partner"));
    }
    let secure = run("table3_secure", 50, 1);
    assert_eq!(secure.successes, 0);
    for t in &secure.per_trial {
        assert!(!t.accepted);
        assert_eq!(t.resolved_caller.as_deref(), Some("com.poc.attacker"));
        assert_ne!(t.attributed_package.as_deref(), Some("com.poc.partner"));
        assert!(t.attributed_package.is_none());
    }
    println!(
        "PASS criterion 2: every acceptance attributes com.poc.partner, every rejection resolves com.poc.attacker"
    );
}

// ---------------------------------------------------------------------------
// 3. Mutability is orthogonal to the bypass
// ---------------------------------------------------------------------------

#[test]
fn criterion_03_mutability_orthogonal() {
    let report = run("immutable_vs_mutable", 50, 1);
    let immutable: u32 = report.details["successes_immutable"].parse().unwrap();
    let mutable: u32 = report.details["successes_mutable"].parse().unwrap();
    assert_eq!(immutable, 50);
    assert_eq!(mutable, 50);
    println!("PASS criterion 3: success counts identical under both token flags (50 == 50)");
}

// ---------------------------------------------------------------------------
// 4. The mechanism/property grid
// ---------------------------------------------------------------------------

#[test]
fn criterion_04_matrix_matches_fixture() {
    let output = Command::new(env!("CARGO_BIN_EXE_ipcsim"))
        .arg("matrix")
        .output()
        .expect("binary runs");
    assert!(
        output.status.success(),
        "matrix exited nonzero:\n{}",
        String::from_utf8_lossy(&output.stdout)
    );

    let fixture_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/table1.json");
    let fixture = PropertyMatrix::from_json(&std::fs::read_to_string(fixture_path).unwrap())
        .expect("fixture parses");
    let mut total = 0;
    for m in Mechanism::ALL {
        for p in AuthProperty::ALL {
            assert!(fixture.cell(m, p).is_some(), "missing cell {m:?}/{p:?}");
            total += 1;
        }
    }
    assert_eq!(total, 40);

    use AuthProperty::*;
    use Mechanism::*;
    let required_scenario_cells: &[(Mechanism, AuthProperty, Mark)] = &[
        (PiGetCreatorPackage, ReplayResistant, Mark::No),
        (PiGetCreatorPackage, Unforgeable, Mark::No),
        (BoundServiceUid, KernelBacked, Mark::Yes),
        (BoundServiceUid, Unforgeable, Mark::Yes),
        (BoundServiceUid, ReplayResistant, Mark::Yes),
        (BoundServiceUid, ScalableNoManifest, Mark::Yes),
        (BoundServiceUid, Bidirectional, Mark::Yes),
        (StartActivityForResult, Unforgeable, Mark::No),
        (GetReferrer, Unforgeable, Mark::No),
        (BroadcastPermission, Unforgeable, Mark::Yes),
        (BroadcastPermission, ScalableNoManifest, Mark::No),
        (ProviderPermission, Unforgeable, Mark::Yes),
        (ProviderPermission, ScalableNoManifest, Mark::No),
        (KnownSigners, Unforgeable, Mark::Yes),
        (KnownSigners, ScalableNoManifest, Mark::No),
        (Pkce, Unforgeable, Mark::No),
        (Pkce, ReplayResistant, Mark::Yes),
    ];
    for &(m, p, mark) in required_scenario_cells {
        let cell = fixture.cell(m, p).unwrap();
        assert_eq!(cell.provenance, CellProvenance::Scenario, "{m:?}/{p:?} must be probe-backed");
        assert_eq!(cell.mark, mark, "{m:?}/{p:?} mark");
    }
    println!(
        "PASS criterion 4: matrix command exits 0; all 40 cells present; {} cells probe-backed with the expected marks",
        required_scenario_cells.len()
    );
}

// ---------------------------------------------------------------------------
// 5. The weakened variants fail exactly as designed
// ---------------------------------------------------------------------------

#[test]
fn criterion_05_weakened_variants_contrast() {
    let alt_b = run("alt_b_sideload", 50, 1);
    assert_eq!(alt_b.successes, 50, "cert-blind build must accept the clone");
    assert_eq!(alt_b.details["secure_l2_rejections"], "50");
    let secure_clone = run("sideload_layer2", 50, 1);
    assert_eq!(secure_clone.successes, 0);
    for t in &secure_clone.per_trial {
        assert_eq!(t.layer_rejected.as_deref(), Some("L2"), "exact rejection layer");
    }

    let alt_a = run("alt_a_key_rotation", 50, 1);
    assert_eq!(alt_a.successes, 50);
    assert_eq!(alt_a.details["provider_redeploys"], "0");
    assert_eq!(alt_a.details["secure_accepts_after_rotation"], "50");
    assert_eq!(alt_a.details["alt_a_l2_rejections_after_rotation"], "50");
    println!(
        "PASS criterion 5: clone passes the cert-blind build but stops at L2 on the layered one; rotation strands only the hardcoded build, zero redeploys"
    );
}

// ---------------------------------------------------------------------------
// 6. Revocation and onboarding lifecycle
// ---------------------------------------------------------------------------

#[test]
fn criterion_06_lifecycle() {
    let revocation = run("revocation_instant", 50, 1);
    assert_eq!(revocation.successes, 50, "every trial must flip accept -> reject");
    let onboarding = run("onboarding_no_update", 50, 1);
    assert_eq!(onboarding.successes, 50, "every trial must flip reject -> accept");
    assert_eq!(onboarding.details["provider_redeploys"], "0");
    assert_eq!(onboarding.details["manifest_changes"], "0");
    println!(
        "PASS criterion 6: revocation rejects on the very next call; onboarding needs one registry write and zero redeploys"
    );
}

// ---------------------------------------------------------------------------
// 7. Masking platform: text hidden, token intact, sideload listener refused
// ---------------------------------------------------------------------------

#[test]
fn criterion_07_masking_platform() {
    let mut device = DeviceState::new(PlatformPolicy::Android15Masking);
    device.install_app(AppSpec::new(PARTNER_PKG, key("partner-signing-key-A-0001"))).unwrap();
    device.install_app(AppSpec::new(ATTACKER_PKG, key("attacker-signing-key-0001"))).unwrap();
    device
        .install_app(AppSpec::new("com.poc.sideload.spy", key("spy-key-material-01")).sideloaded())
        .unwrap();
    device.grant_capability(ATTACKER_PKG, Capability::NotificationListener).unwrap();
    device
        .grant_capability("com.poc.sideload.spy", Capability::NotificationListener)
        .unwrap_err();

    let kernel = Kernel::new();
    let mut mint = TokenMint::new();
    let mut notifications = NotificationCenter::new();
    let partner = kernel.mint_handle(&device, PARTNER_PKG).unwrap();
    let token = mint
        .create_pending_intent(
            &device,
            &partner,
            WrappedIntent::new("com.poc.partner.VIEW_OTP", BTreeMap::new(), PARTNER_PKG),
            Mutability::Immutable,
        )
        .unwrap();
    let posted_id = token.token_id();
    notifications
        .post_notification(
            &device,
            &partner,
            Notification {
                title: "Verification code".into(),
                text: "Your one-time code is 481516".into(),
                content_intent: token,
                action_intents: Vec::new(),
            },
        )
        .unwrap();

    let sbn = notifications.inbox(ATTACKER_PKG).last().cloned().unwrap();
    assert!(!sbn.notification.text.chars().any(|c| c.is_ascii_digit()), "digits must be masked");
    assert!(sbn.notification.text.contains('\u{2022}'));
    let harvested = on_notification_posted(&device, ATTACKER_PKG, &sbn).unwrap();
    assert_eq!(harvested[0].token_id(), posted_id, "masking must not touch the token");

    let report = run("android15_masking", 50, 1);
    assert_eq!(report.successes, 50, "attack must still land with masked text");
    assert_eq!(report.details["sideloaded_listener_blocked"], "true");
    println!(
        "PASS criterion 7: delivered text masked, harvested token id identical, sideloaded listener refused, attack still 50/50"
    );
}

// ---------------------------------------------------------------------------
// 8. Kernel stamping under randomized churn; token hand-off chains
// ---------------------------------------------------------------------------

struct UidRecorder {
    log: Arc<Mutex<Vec<Uid>>>,
}

impl BoundService for UidRecorder {
    fn on_transact(
        &mut self,
        txn: &Transaction,
        _ctx: &mut HandlerCtx<'_>,
    ) -> Result<Parcel, HandlerError> {
        let uid = txn.calling_uid().map_err(|e| HandlerError::BadRequest(e.to_string()))?;
        self.log.lock().unwrap().push(uid);
        Ok(Parcel::Empty)
    }
}

#[test]
fn criterion_08_kernel_stamping_fuzz_and_handoff_chains() {
    let mut rng = DetRng::new(0xACCE97);
    let mut device = DeviceState::new(PlatformPolicy::Android14);
    let mut kernel = Kernel::new();
    let log = Arc::new(Mutex::new(Vec::new()));

    device.install_app(AppSpec::new("com.fuzz.provider", key("fuzz-provider-key-0001"))).unwrap();
    let provider = kernel.mint_handle(&device, "com.fuzz.provider").unwrap();
    kernel
        .register_service(&device, &provider, "probe", true, Box::new(UidRecorder { log: log.clone() }))
        .unwrap();

    // Shadow of the install table: the oracle for every stamped UID.
    let mut oracle: BTreeMap<String, Uid> = BTreeMap::new();
    let mut pool: Vec<String> = Vec::new();
    let mut conns: Vec<(ipc_auth_sim::kernel::Connection, String)> = Vec::new();
    let mut next_app = 0u32;
    let (mut live_transacts, mut stale_transacts) = (0u32, 0u32);

    for step in 0..1000 {
        let roll = rng.next_below(100);
        if roll < 15 || pool.is_empty() {
            let pkg = format!("com.fuzz.app{next_app:03}");
            next_app += 1;
            let uid = device
                .install_app(AppSpec::new(&pkg, key(&format!("fuzz-key-{pkg}"))))
                .unwrap();
            oracle.insert(pkg.clone(), uid);
            pool.push(pkg);
        } else if roll < 25 {
            let victim = pool.swap_remove(rng.next_below(pool.len() as u64) as usize);
            device.uninstall_app(&victim).unwrap();
            oracle.remove(&victim);
        } else if roll < 50 {
            let pkg = pool[rng.next_below(pool.len() as u64) as usize].clone();
            let handle = kernel.mint_handle(&device, &pkg).unwrap();
            let conn = kernel.bind_service(&device, &handle, "com.fuzz.provider", "probe").unwrap();
            conns.push((conn, pkg));
        } else if let Some((conn, pkg)) = conns.get(rng.next_below(conns.len().max(1) as u64) as usize)
        {
            let result = kernel.transact(&device, conn, Parcel::Empty, None);
            match (oracle.get(pkg), result) {
                (Some(&expected), Ok(_)) => {
                    let stamped = *log.lock().unwrap().last().unwrap();
                    assert_eq!(stamped, expected, "step {step}: stamped UID diverged for {pkg}");
                    live_transacts += 1;
                }
                (None, Err(KernelError::HandleInvalid(_))) => stale_transacts += 1,
                (expected, result) => {
                    panic!("step {step}: {pkg} expected {expected:?}, kernel said {result:?}")
                }
            }
        }
    }
    assert!(live_transacts >= 200, "coverage too thin: {live_transacts} live transacts");
    assert!(stale_transacts >= 10, "coverage too thin: {stale_transacts} stale transacts");

    // Hand-off chains: a token forwarded through five listening apps
    // keeps its creator identity at every hop and still executes as the
    // creator at the end.
    let mut chain_device = DeviceState::new(PlatformPolicy::Android14);
    let chain_kernel = Kernel::new();
    let mut chains_run = 0;
    for chain in 0..5 {
        let mut notifications = NotificationCenter::new();
        let mut mint = TokenMint::new();
        let creator_pkg = format!("com.chain{chain}.origin");
        let holders: Vec<String> =
            (0..5).map(|i| format!("com.chain{chain}.holder{i}")).collect();
        let creator_uid =
            chain_device.install_app(AppSpec::new(&creator_pkg, key(&format!("chain-key-{creator_pkg}")))).unwrap();
        for h in &holders {
            chain_device.install_app(AppSpec::new(h, key(&format!("chain-key-{h}")))).unwrap();
            chain_device.grant_capability(h, Capability::NotificationListener).unwrap();
        }
        let creator = chain_kernel.mint_handle(&chain_device, &creator_pkg).unwrap();
        let token = mint
            .create_pending_intent(
                &chain_device,
                &creator,
                WrappedIntent::new("com.chain.ACT", BTreeMap::new(), &creator_pkg),
                Mutability::Immutable,
            )
            .unwrap();
        let original_id = token.token_id();

        let mut poster = creator;
        let mut current = token;
        for holder in &holders {
            notifications
                .post_notification(
                    &chain_device,
                    &poster,
                    Notification {
                        title: "forward".into(),
                        text: "pass it on".into(),
                        content_intent: current,
                        action_intents: Vec::new(),
                    },
                )
                .unwrap();
            let sbn = notifications.inbox(holder).last().cloned().unwrap();
            let harvested = on_notification_posted(&chain_device, holder, &sbn).unwrap();
            current = harvested.into_iter().next().unwrap();
            assert_eq!(current.token_id(), original_id);
            assert_eq!(current.creator_package(), creator_pkg, "creator survives each hop");
            assert_eq!(current.creator_uid(), creator_uid);
            assert_eq!(current.mutability(), Mutability::Immutable);
            poster = chain_kernel.mint_handle(&chain_device, holder).unwrap();
        }
        let last_holder = chain_kernel
            .mint_handle(&chain_device, holders.last().unwrap())
            .unwrap();
        let dispatch = send(&chain_device, &current, &last_holder, None).unwrap();
        assert_eq!(dispatch.executed_as_package, creator_pkg);
        assert_eq!(dispatch.executed_as_uid, creator_uid);
        chains_run += 1;
    }
    assert_eq!(chains_run, 5);
    println!(
        "PASS criterion 8: {live_transacts} live + {stale_transacts} stale transacts over 1000 steps with zero UID mismatches; 5 hand-off chains of length 5 preserved creator identity"
    );
}

// ---------------------------------------------------------------------------
// 9. Secure verdicts vs an independent brute-force oracle
// ---------------------------------------------------------------------------

/// What the layered provider should decide, from first principles: accept
/// exactly when some ACTIVE record matches the caller's package, the
/// claimed client id, and the certificate actually installed right now.
fn oracle_accepts(
    registry: &PartnerRegistry,
    caller_pkg: &str,
    claimed_client: &str,
    installed_hash: &CertHash,
) -> bool {
    registry.partners().iter().any(|r| {
        r.status == PartnerStatus::Active
            && r.package_name == caller_pkg
            && r.client_id == claimed_client
            && r.cert_hash == *installed_hash
    })
}

#[test]
fn criterion_09_defense_agrees_with_brute_force_oracle() {
    const CRED: &str = "oracle-provider-credential";
    let callers = ["com.enum.a", "com.enum.b", "com.enum.c", "com.enum.d"];
    let clients = ["client-one", "client-two"];
    let key1 = key("enum-key-material-0001");
    let key2 = key("enum-key-material-0002");
    let record_hash = CertHash::of_key(&key1);

    let mut checked = 0u32;
    // Key assignment: bit i of `keys` picks caller i's signing key.
    for keys in 0u32..16 {
        // Record states for the four (package, client) pairs over the
        // first two callers: 0 = absent, 1 = active, 2 = revoked.
        for records in 0u32..81 {
            let mut device = DeviceState::new(PlatformPolicy::Android14);
            for (i, pkg) in callers.iter().enumerate() {
                let k = if keys & (1 << i) == 0 { &key1 } else { &key2 };
                device.install_app(AppSpec::new(*pkg, k.clone())).unwrap();
            }
            device.install_app(AppSpec::new("com.enum.provider", key("enum-provider-key-01"))).unwrap();

            let mut registry = PartnerRegistry::new(CRED);
            let mut state = records;
            for pkg in &callers[..2] {
                for client in &clients {
                    match state % 3 {
                        0 => {}
                        1 => {
                            registry.register_partner(pkg, record_hash.clone(), client).unwrap();
                        }
                        _ => {
                            registry.register_partner(pkg, record_hash.clone(), client).unwrap();
                            registry.revoke_partner(pkg, client).unwrap();
                        }
                    }
                    state /= 3;
                }
            }

            let mut kernel = Kernel::new();
            let provider = kernel.mint_handle(&device, "com.enum.provider").unwrap();
            kernel
                .register_service(
                    &device,
                    &provider,
                    "publish",
                    true,
                    Box::new(ProviderService::new(ProviderConfig::secure(CRED))),
                )
                .unwrap();

            for caller in &callers {
                let installed_hash = CertHash::of_key(if keys
                    & (1 << callers.iter().position(|c| c == caller).unwrap())
                    == 0
                {
                    &key1
                } else {
                    &key2
                });
                let handle = kernel.mint_handle(&device, caller).unwrap();
                let conn = kernel
                    .bind_service(&device, &handle, "com.enum.provider", "publish")
                    .unwrap();
                for client in &clients {
                    let expected = oracle_accepts(&registry, caller, client, &installed_hash);
                    let mut client_shim = InProcessClient::new(&mut registry);
                    let reply = kernel
                        .transact(
                            &device,
                            &conn,
                            Parcel::Publish(PublishRequest {
                                content: "enumeration".into(),
                                credential: None,
                                client_id: client.to_string(),
                            }),
                            Some(&mut client_shim),
                        )
                        .unwrap();
                    let outcome: PublishOutcome = match reply {
                        Parcel::PublishReply(o) => o,
                        other => panic!("unexpected reply {other:?}"),
                    };
                    assert_eq!(
                        outcome.accepted, expected,
                        "disagreement: keys={keys:04b} records={records} caller={caller} client={client} outcome={outcome:?}"
                    );
                    checked += 1;
                }
            }
        }
    }
    assert_eq!(checked, 16 * 81 * 4 * 2);
    println!(
        "PASS criterion 9: layered verdict agreed with the brute-force oracle on all {checked} enumerated cases"
    );
}

// ---------------------------------------------------------------------------
// 10. Verification overhead
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_verification_overhead_under_1ms() {
    let report = run("overhead_micro", 1000, 1);
    assert_eq!(report.successes, 1000);
    let stats = report.wall_time_stats.expect("overhead run reports timing");
    assert!(stats.calls >= 1000, "need at least 1000 timed calls, got {}", stats.calls);
    assert!(
        stats.mean_nanos < 1_000_000,
        "mean verification time {}ns exceeds 1ms",
        stats.mean_nanos
    );
    println!(
        "PASS criterion 10: mean on-device verification {}ns over {} calls (< 1ms)",
        stats.mean_nanos, stats.calls
    );
}
