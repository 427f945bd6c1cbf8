//! The full loop with a real wire in the middle: a provider running in
//! the simulated kernel performs its server-side validation against a
//! registry served over HTTP on a real socket.

use std::fs;

use ipc_auth_sim::device::{AppSpec, CertHash, DeviceState, PlatformPolicy, SigningKey};
use ipc_auth_sim::kernel::{Kernel, Parcel};
use ipc_auth_sim::registry::{AuditVerdict, ClockMode, PartnerRegistry, RegistryClient};
use ipc_auth_sim::registry_http::{http_request, spawn_registry_server, HttpRegistryClient};
use ipc_auth_sim::sdk::{Layer, ProviderConfig, ProviderService, PublishOutcome, PublishReason, PublishRequest};

const CRED: &str = "http-test-provider-credential";
const PARTNER: &str = "com.poc.partner";
const ATTACKER: &str = "com.poc.attacker";
const PROVIDER: &str = "com.poc.secure.sdk";

fn key(material: &str) -> SigningKey {
    SigningKey::new(material.as_bytes().to_vec(), material).unwrap()
}

struct World {
    device: DeviceState,
    kernel: Kernel,
}

fn world_with_provider() -> World {
    let mut device = DeviceState::new(PlatformPolicy::Android14);
    device.install_app(AppSpec::new(PARTNER, key("partner-signing-key-A-0001"))).unwrap();
    device.install_app(AppSpec::new(ATTACKER, key("attacker-signing-key-0001"))).unwrap();
    device.install_app(AppSpec::new(PROVIDER, key("provider-signing-key-0001"))).unwrap();
    let mut kernel = Kernel::new();
    let provider = kernel.mint_handle(&device, PROVIDER).unwrap();
    kernel
        .register_service(
            &device,
            &provider,
            "publish",
            true,
            Box::new(ProviderService::new(ProviderConfig::secure(CRED))),
        )
        .unwrap();
    World { device, kernel }
}

fn publish_via(
    world: &mut World,
    caller: &str,
    client_id: &str,
    registry: &mut dyn RegistryClient,
) -> PublishOutcome {
    let handle = world.kernel.mint_handle(&world.device, caller).unwrap();
    let conn = world.kernel.bind_service(&world.device, &handle, PROVIDER, "publish").unwrap();
    let reply = world
        .kernel
        .transact(
            &world.device,
            &conn,
            Parcel::Publish(PublishRequest {
                content: "hello over the wire".into(),
                credential: None,
                client_id: client_id.into(),
            }),
            Some(registry),
        )
        .unwrap();
    match reply {
        Parcel::PublishReply(outcome) => outcome,
        other => panic!("unexpected reply {other:?}"),
    }
}

#[test]
fn secure_publish_validates_over_live_http() {
    let mut world = world_with_provider();
    let mut registry = PartnerRegistry::new(CRED);
    registry
        .register_partner(PARTNER, CertHash::of_key(&key("partner-signing-key-A-0001")), "client-partner")
        .unwrap();
    let handle = spawn_registry_server("127.0.0.1:0", registry, CRED, None).unwrap();
    let mut client = HttpRegistryClient::new(handle.addr());

    let accepted = publish_via(&mut world, PARTNER, "client-partner", &mut client);
    assert!(accepted.accepted, "partner must pass: {accepted:?}");
    let attribution = accepted.attributed_partner.unwrap();
    assert_eq!(attribution.package_name, PARTNER);
    assert_eq!(attribution.client_id, "client-partner");

    let rejected = publish_via(&mut world, ATTACKER, "client-partner", &mut client);
    assert!(!rejected.accepted);
    assert_eq!(rejected.layer_rejected, Some(Layer::L3));
    assert_eq!(rejected.reason, PublishReason::RegistryUnknownPartner);
    assert_eq!(rejected.resolved_caller.as_deref(), Some(ATTACKER));

    // Both decisions landed on the server-side audit trail.
    let shared = handle.registry();
    let reg = shared.lock().unwrap();
    assert_eq!(reg.audit_len(), 2);
    let verdicts: Vec<AuditVerdict> =
        reg.list_audit(&Default::default()).iter().map(|e| e.verdict).collect();
    assert_eq!(verdicts, vec![AuditVerdict::Accept, AuditVerdict::Reject]);
}

#[test]
fn provider_fails_closed_when_the_registry_dies() {
    let mut world = world_with_provider();
    let mut registry = PartnerRegistry::new(CRED);
    registry
        .register_partner(PARTNER, CertHash::of_key(&key("partner-signing-key-A-0001")), "client-partner")
        .unwrap();
    let mut handle = spawn_registry_server("127.0.0.1:0", registry, CRED, None).unwrap();
    let mut client = HttpRegistryClient::new(handle.addr());

    assert!(publish_via(&mut world, PARTNER, "client-partner", &mut client).accepted);

    handle.shutdown();

    let outcome = publish_via(&mut world, PARTNER, "client-partner", &mut client);
    assert!(!outcome.accepted, "no reachable registry may never mean accept");
    assert_eq!(outcome.layer_rejected, Some(Layer::L3));
    assert_eq!(outcome.reason, PublishReason::RegistryUnreachable);
}

#[test]
fn registry_db_survives_a_server_restart() {
    let dir = tempfile::tempdir().unwrap();
    let db = dir.path().join("registry.json");
    let partner_hash = CertHash::of_key(&key("partner-signing-key-A-0001"));

    let first = spawn_registry_server(
        "127.0.0.1:0",
        PartnerRegistry::with_clock(CRED, ClockMode::WallClockMs),
        CRED,
        Some(db.clone()),
    )
    .unwrap();
    let reply = http_request(
        first.addr(),
        "POST",
        "/v1/partners",
        Some(CRED),
        Some(&format!(
            r#"{{"package_name":"{PARTNER}","cert_hash":"{}","client_id":"client-partner"}}"#,
            partner_hash.as_str()
        )),
    )
    .unwrap();
    assert_eq!(reply.status, 201, "{}", reply.body);
    drop(first);

    let persisted = fs::read_to_string(&db).unwrap();
    assert!(persisted.contains(partner_hash.as_str()));

    // A fresh server over the same db still knows the partner.
    let reloaded = PartnerRegistry::load(&db, CRED, ClockMode::WallClockMs).unwrap();
    let second = spawn_registry_server("127.0.0.1:0", reloaded, CRED, Some(db.clone())).unwrap();
    let mut client = HttpRegistryClient::new(second.addr());
    let looked_up = client
        .registered_cert_hash(PARTNER, "client-partner", CRED)
        .unwrap()
        .expect("enrollment survives the restart");
    assert_eq!(looked_up, partner_hash);

    let mut world = world_with_provider();
    assert!(publish_via(&mut world, PARTNER, "client-partner", &mut client).accepted);
}
