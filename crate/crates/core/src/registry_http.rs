//! HTTP transport for the partner registry.
//!
//! The wire protocol, all bodies JSON, all requests bearer-authorized
//! with the provider credential:
//!
//! | Method | Path                     | Body / query                              | Replies |
//! |--------|--------------------------|-------------------------------------------|---------|
//! | POST   | /v1/validate             | package_name, cert_hash?, client_id,      | 200 verdict, 400, 401 |
//! |        |                          | include_cert                              |         |
//! | POST   | /v1/partners             | package_name, cert_hash, client_id        | 201 record, 400, 401, 409 |
//! | POST   | /v1/partners/rotate      | package_name, client_id, new_cert_hash    | 200, 400, 401, 404 |
//! | POST   | /v1/partners/revoke      | package_name, client_id                   | 200, 400, 401, 404 |
//! | GET    | /v1/audit                | ?package_name=&verdict=                   | 200 entries, 400, 401 |
//! | GET    | /v1/partners/cert_hash   | ?package_name=&client_id=                 | 200 {cert_hash}, 400, 401 |
//!
//! A bad bearer on `/v1/validate` is refused *through* the registry, so
//! the refusal lands on the audit trail like any other; bad bearers on
//! the admin endpoints are refused at the door. When started with a db
//! path, the server rewrites the file after every state change —
//! including validates, which append audit entries.

use std::collections::BTreeMap;
use std::io::Read;
use std::net::{SocketAddr, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tiny_http::{Header, Method, Response, Server};

use crate::device::CertHash;
use crate::registry::{
    AuditFilter, AuditVerdict, ClientError, PartnerRegistry, RegistryClient, RegistryError,
    RejectReason, ValidateRequest, Verdict,
};

const MAX_BODY_BYTES: u64 = 1 << 20;
const CLIENT_TIMEOUT: Duration = Duration::from_secs(5);

// ---------------------------------------------------------------------------
// Wire bodies
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct ValidateBody {
    package_name: String,
    #[serde(default)]
    cert_hash: Option<String>,
    client_id: String,
    include_cert: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct VerdictBody {
    verdict: AuditVerdict,
    reason: Option<RejectReason>,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegisterBody {
    package_name: String,
    cert_hash: String,
    client_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RotateBody {
    package_name: String,
    client_id: String,
    new_cert_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct RevokeBody {
    package_name: String,
    client_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct CertHashBody {
    cert_hash: Option<CertHash>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    error: String,
}

// ---------------------------------------------------------------------------
// Server
// ---------------------------------------------------------------------------

/// Running registry server. Shuts down on `shutdown()` or drop; the
/// registry itself stays shared so tests and the process that spawned
/// the server can inspect it.
pub struct RegistryServerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    registry: Arc<Mutex<PartnerRegistry>>,
    join: Option<JoinHandle<()>>,
}

impl RegistryServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn registry(&self) -> Arc<Mutex<PartnerRegistry>> {
        Arc::clone(&self.registry)
    }

    pub fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

impl Drop for RegistryServerHandle {
    fn drop(&mut self) {
        self.shutdown();
    }
}

/// Serves `registry` on `bind_addr` (use port 0 to pick a free port).
/// `credential` guards the admin endpoints and must match the one the
/// registry was built with.
pub fn spawn_registry_server(
    bind_addr: &str,
    registry: PartnerRegistry,
    credential: impl Into<String>,
    db_path: Option<PathBuf>,
) -> Result<RegistryServerHandle, RegistryError> {
    let server = Arc::new(
        Server::http(bind_addr).map_err(|e| RegistryError::Io(e.to_string()))?,
    );
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| RegistryError::Io("server has no ip address".into()))?;
    let registry = Arc::new(Mutex::new(registry));
    let credential = credential.into();

    let thread_server = Arc::clone(&server);
    let thread_registry = Arc::clone(&registry);
    let join = std::thread::spawn(move || {
        while let Ok(request) = thread_server.recv() {
            handle_request(request, &thread_registry, &credential, db_path.as_deref());
        }
    });

    Ok(RegistryServerHandle { addr, server, registry, join: Some(join) })
}

fn json_response<T: Serialize>(status: u16, body: &T) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_string(serde_json::to_string(body).expect("wire body serializes"))
        .with_status_code(status)
        .with_header(header)
}

fn error_response(status: u16, message: impl Into<String>) -> Response<std::io::Cursor<Vec<u8>>> {
    json_response(status, &ErrorBody { error: message.into() })
}

fn bearer_of(request: &tiny_http::Request) -> Option<String> {
    request
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .and_then(|h| h.value.as_str().strip_prefix("Bearer "))
        .map(str::to_string)
}

/// Splits a request url into its path and decoded query pairs.
fn split_query(url: &str) -> (&str, BTreeMap<String, String>) {
    let (path, query) = match url.split_once('?') {
        Some((p, q)) => (p, q),
        None => (url, ""),
    };
    let mut pairs = BTreeMap::new();
    for piece in query.split('&').filter(|p| !p.is_empty()) {
        let (k, v) = piece.split_once('=').unwrap_or((piece, ""));
        pairs.insert(percent_decode(k), percent_decode(v));
    }
    (path, pairs)
}

fn percent_decode(s: &str) -> String {
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'%' => {
                let hex = bytes.get(i + 1..i + 3).and_then(|h| std::str::from_utf8(h).ok());
                match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
                    Some(b) => {
                        out.push(b);
                        i += 3;
                    }
                    None => {
                        out.push(b'%');
                        i += 1;
                    }
                }
            }
            b'+' => {
                out.push(b' ');
                i += 1;
            }
            b => {
                out.push(b);
                i += 1;
            }
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

fn percent_encode(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for b in s.bytes() {
        match b {
            b'A'..=b'Z' | b'a'..=b'z' | b'0'..=b'9' | b'-' | b'.' | b'_' | b'~' => {
                out.push(b as char)
            }
            _ => out.push_str(&format!("%{b:02X}")),
        }
    }
    out
}

fn read_body(request: &mut tiny_http::Request) -> Result<String, String> {
    let mut body = String::new();
    request
        .as_reader()
        .take(MAX_BODY_BYTES)
        .read_to_string(&mut body)
        .map_err(|e| e.to_string())?;
    Ok(body)
}

fn parse_body<T: for<'de> Deserialize<'de>>(
    request: &mut tiny_http::Request,
) -> Result<T, Response<std::io::Cursor<Vec<u8>>>> {
    let body = read_body(request).map_err(|e| error_response(400, format!("unreadable body: {e}")))?;
    serde_json::from_str(&body).map_err(|e| error_response(400, format!("malformed body: {e}")))
}

fn parse_cert(s: &str) -> Result<CertHash, Response<std::io::Cursor<Vec<u8>>>> {
    CertHash::parse(s).map_err(|e| error_response(400, e.to_string()))
}

fn persist_if_configured(registry: &PartnerRegistry, db_path: Option<&std::path::Path>) {
    if let Some(path) = db_path {
        if let Err(e) = registry.persist(path) {
            log::error!("failed to persist registry to {}: {e}", path.display());
        }
    }
}

fn handle_request(
    mut request: tiny_http::Request,
    registry: &Mutex<PartnerRegistry>,
    credential: &str,
    db_path: Option<&std::path::Path>,
) {
    let url = request.url().to_string();
    let (path, query) = split_query(&url);
    let method = request.method().clone();

    let response = match (&method, path) {
        (&Method::Post, "/v1/validate") => handle_validate(&mut request, registry, db_path),
        (&Method::Post, "/v1/partners") => {
            handle_register(&mut request, registry, credential, db_path)
        }
        (&Method::Post, "/v1/partners/rotate") => {
            handle_rotate(&mut request, registry, credential, db_path)
        }
        (&Method::Post, "/v1/partners/revoke") => {
            handle_revoke(&mut request, registry, credential, db_path)
        }
        (&Method::Get, "/v1/audit") => handle_audit(&request, &query, registry, credential),
        (&Method::Get, "/v1/partners/cert_hash") => {
            handle_cert_hash(&request, &query, registry, credential)
        }
        (_, "/v1/validate" | "/v1/partners" | "/v1/partners/rotate" | "/v1/partners/revoke"
            | "/v1/audit" | "/v1/partners/cert_hash") => error_response(405, "method not allowed"),
        _ => error_response(404, "no such endpoint"),
    };
    if let Err(e) = request.respond(response) {
        log::warn!("failed to send response: {e}");
    }
}

fn handle_validate(
    request: &mut tiny_http::Request,
    registry: &Mutex<PartnerRegistry>,
    db_path: Option<&std::path::Path>,
) -> Response<std::io::Cursor<Vec<u8>>> {
    // No bearer at all never reaches the registry: there is nothing to
    // attribute the attempt to.
    let bearer = match bearer_of(request) {
        Some(b) => b,
        None => return error_response(401, "missing bearer credential"),
    };
    let body: ValidateBody = match parse_body(request) {
        Ok(b) => b,
        Err(resp) => return resp,
    };
    let cert_hash = match &body.cert_hash {
        Some(s) => match parse_cert(s) {
            Ok(h) => Some(h),
            Err(resp) => return resp,
        },
        None => None,
    };
    let req = ValidateRequest {
        package_name: body.package_name,
        cert_hash,
        client_id: body.client_id,
        include_cert: body.include_cert,
    };
    let mut reg = registry.lock().unwrap();
    let result = reg.validate(&req, &bearer);
    persist_if_configured(&reg, db_path);
    match result {
        Ok(Verdict::Accept) => {
            json_response(200, &VerdictBody { verdict: AuditVerdict::Accept, reason: None })
        }
        Ok(Verdict::Reject(reason)) => json_response(
            200,
            &VerdictBody { verdict: AuditVerdict::Reject, reason: Some(reason) },
        ),
        Err(RegistryError::BadProviderCredential) => {
            error_response(401, "provider credential refused")
        }
        Err(e) => error_response(500, e.to_string()),
    }
}

fn require_admin_bearer(
    request: &tiny_http::Request,
    credential: &str,
) -> Option<Response<std::io::Cursor<Vec<u8>>>> {
    match bearer_of(request) {
        Some(b) if b == credential => None,
        Some(_) => Some(error_response(401, "provider credential refused")),
        None => Some(error_response(401, "missing bearer credential")),
    }
}

fn handle_register(
    request: &mut tiny_http::Request,
    registry: &Mutex<PartnerRegistry>,
    credential: &str,
    db_path: Option<&std::path::Path>,
) -> Response<std::io::Cursor<Vec<u8>>> {
    if let Some(resp) = require_admin_bearer(request, credential) {
        return resp;
    }
    let body: RegisterBody = match parse_body(request) {
        Ok(b) => b,
        Err(resp) => return resp,
    };
    let cert = match parse_cert(&body.cert_hash) {
        Ok(h) => h,
        Err(resp) => return resp,
    };
    let mut reg = registry.lock().unwrap();
    let result = reg
        .register_partner(&body.package_name, cert, &body.client_id)
        .map(Clone::clone);
    persist_if_configured(&reg, db_path);
    match result {
        Ok(record) => json_response(201, &record),
        Err(e @ RegistryError::DuplicateActive(_)) => error_response(409, e.to_string()),
        Err(e) => error_response(500, e.to_string()),
    }
}

fn handle_rotate(
    request: &mut tiny_http::Request,
    registry: &Mutex<PartnerRegistry>,
    credential: &str,
    db_path: Option<&std::path::Path>,
) -> Response<std::io::Cursor<Vec<u8>>> {
    if let Some(resp) = require_admin_bearer(request, credential) {
        return resp;
    }
    let body: RotateBody = match parse_body(request) {
        Ok(b) => b,
        Err(resp) => return resp,
    };
    let cert = match parse_cert(&body.new_cert_hash) {
        Ok(h) => h,
        Err(resp) => return resp,
    };
    let mut reg = registry.lock().unwrap();
    let result = reg.rotate_certificate(&body.package_name, &body.client_id, cert);
    persist_if_configured(&reg, db_path);
    match result {
        Ok(()) => json_response(200, &serde_json::json!({ "ok": true })),
        Err(e @ RegistryError::NotFound(_)) => error_response(404, e.to_string()),
        Err(e) => error_response(500, e.to_string()),
    }
}

fn handle_revoke(
    request: &mut tiny_http::Request,
    registry: &Mutex<PartnerRegistry>,
    credential: &str,
    db_path: Option<&std::path::Path>,
) -> Response<std::io::Cursor<Vec<u8>>> {
    if let Some(resp) = require_admin_bearer(request, credential) {
        return resp;
    }
    let body: RevokeBody = match parse_body(request) {
        Ok(b) => b,
        Err(resp) => return resp,
    };
    let mut reg = registry.lock().unwrap();
    let result = reg.revoke_partner(&body.package_name, &body.client_id);
    persist_if_configured(&reg, db_path);
    match result {
        Ok(()) => json_response(200, &serde_json::json!({ "ok": true })),
        Err(e @ RegistryError::NotFound(_)) => error_response(404, e.to_string()),
        Err(e) => error_response(500, e.to_string()),
    }
}

fn handle_audit(
    request: &tiny_http::Request,
    query: &BTreeMap<String, String>,
    registry: &Mutex<PartnerRegistry>,
    credential: &str,
) -> Response<std::io::Cursor<Vec<u8>>> {
    if let Some(resp) = require_admin_bearer(request, credential) {
        return resp;
    }
    let verdict = match query.get("verdict").map(String::as_str) {
        None => None,
        Some("ACCEPT") => Some(AuditVerdict::Accept),
        Some("REJECT") => Some(AuditVerdict::Reject),
        Some(other) => return error_response(400, format!("unknown verdict filter {other:?}")),
    };
    let filter = AuditFilter { package_name: query.get("package_name").cloned(), verdict };
    let reg = registry.lock().unwrap();
    json_response(200, &reg.list_audit(&filter))
}

fn handle_cert_hash(
    request: &tiny_http::Request,
    query: &BTreeMap<String, String>,
    registry: &Mutex<PartnerRegistry>,
    credential: &str,
) -> Response<std::io::Cursor<Vec<u8>>> {
    if let Some(resp) = require_admin_bearer(request, credential) {
        return resp;
    }
    let (package_name, client_id) = match (query.get("package_name"), query.get("client_id")) {
        (Some(p), Some(c)) => (p, c),
        _ => return error_response(400, "package_name and client_id query params are required"),
    };
    let reg = registry.lock().unwrap();
    json_response(200, &CertHashBody { cert_hash: reg.registered_cert_hash(package_name, client_id) })
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

/// Minimal HTTP/1.1 response: status code and body.
#[derive(Debug)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// One-shot HTTP exchange over a fresh connection. Used by the registry
/// client and by tests poking the wire protocol directly.
pub fn http_request(
    addr: SocketAddr,
    method: &str,
    path_and_query: &str,
    bearer: Option<&str>,
    body: Option<&str>,
) -> std::io::Result<HttpReply> {
    use std::io::Write;

    let mut stream = TcpStream::connect_timeout(&addr, CLIENT_TIMEOUT)?;
    stream.set_read_timeout(Some(CLIENT_TIMEOUT))?;
    stream.set_write_timeout(Some(CLIENT_TIMEOUT))?;

    let mut request = format!("{method} {path_and_query} HTTP/1.1\r\nHost: {addr}\r\n");
    if let Some(bearer) = bearer {
        request.push_str(&format!("Authorization: Bearer {bearer}\r\n"));
    }
    let body = body.unwrap_or("");
    request.push_str(&format!(
        "Content-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    ));
    stream.write_all(request.as_bytes())?;

    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    parse_http_reply(&raw)
}

fn parse_http_reply(raw: &[u8]) -> std::io::Result<HttpReply> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let text = String::from_utf8_lossy(raw);
    let (head, body) = text.split_once("\r\n\r\n").ok_or_else(|| bad("missing header end"))?;
    let status_line = head.lines().next().ok_or_else(|| bad("empty response"))?;
    let status = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse::<u16>().ok())
        .ok_or_else(|| bad("malformed status line"))?;
    // Connection: close lets us take everything after the headers as the
    // body; tiny_http does not chunk its responses to closing clients.
    Ok(HttpReply { status, body: body.to_string() })
}

/// `RegistryClient` over the wire protocol. Every provider call opens a
/// fresh connection; any transport or protocol hiccup surfaces as
/// `ClientError::Transport`, which providers treat fail-closed.
pub struct HttpRegistryClient {
    addr: SocketAddr,
}

impl HttpRegistryClient {
    pub fn new(addr: SocketAddr) -> Self {
        Self { addr }
    }

    fn post_validate(&self, req: &ValidateRequest, bearer: &str) -> Result<HttpReply, ClientError> {
        let body = serde_json::to_string(&ValidateBody {
            package_name: req.package_name.clone(),
            cert_hash: req.cert_hash.as_ref().map(|h| h.as_str().to_string()),
            client_id: req.client_id.clone(),
            include_cert: req.include_cert,
        })
        .expect("wire body serializes");
        http_request(self.addr, "POST", "/v1/validate", Some(bearer), Some(&body))
            .map_err(|e| ClientError::Transport(e.to_string()))
    }
}

impl RegistryClient for HttpRegistryClient {
    fn validate(
        &mut self,
        req: &ValidateRequest,
        provider_credential: &str,
    ) -> Result<Verdict, ClientError> {
        let reply = self.post_validate(req, provider_credential)?;
        match reply.status {
            200 => {
                let verdict: VerdictBody = serde_json::from_str(&reply.body)
                    .map_err(|e| ClientError::Transport(format!("malformed verdict: {e}")))?;
                match (verdict.verdict, verdict.reason) {
                    (AuditVerdict::Accept, _) => Ok(Verdict::Accept),
                    (AuditVerdict::Reject, Some(reason)) => Ok(Verdict::Reject(reason)),
                    (AuditVerdict::Reject, None) => {
                        Err(ClientError::Transport("reject without a reason".into()))
                    }
                }
            }
            401 => Err(ClientError::CredentialRefused),
            other => Err(ClientError::Transport(format!("unexpected status {other}"))),
        }
    }

    fn registered_cert_hash(
        &mut self,
        package_name: &str,
        client_id: &str,
        provider_credential: &str,
    ) -> Result<Option<CertHash>, ClientError> {
        let path = format!(
            "/v1/partners/cert_hash?package_name={}&client_id={}",
            percent_encode(package_name),
            percent_encode(client_id)
        );
        let reply = http_request(self.addr, "GET", &path, Some(provider_credential), None)
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        match reply.status {
            200 => {
                let body: CertHashBody = serde_json::from_str(&reply.body)
                    .map_err(|e| ClientError::Transport(format!("malformed body: {e}")))?;
                Ok(body.cert_hash)
            }
            401 => Err(ClientError::CredentialRefused),
            other => Err(ClientError::Transport(format!("unexpected status {other}"))),
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
