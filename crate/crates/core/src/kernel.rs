//! Binder-style IPC core: process handles, service registry, and
//! kernel-stamped transactions.
//!
//! The trust model lives here:
//!
//! 1. A [`ProcessHandle`] can only be minted by the kernel, and only for
//!    an installed app. There is no constructor that accepts a UID.
//! 2. Every [`Transaction`] carries the caller's UID stamped from the
//!    handle the kernel verified; the payload, which the caller fully
//!    controls, has no influence on it.
//! 3. `calling_uid` is only answerable while the handler call that
//!    received the transaction is on the stack. A stored transaction is
//!    a dead credential: asking it for the caller's identity afterwards
//!    is a contract violation and errors rather than returning a stale
//!    value.
//! 4. Binding to a service performs no authentication. Any installed app
//!    may bind to an exported service; authentication happens inside the
//!    handler, per call, or not at all.
//! 5. Uninstall retires the app's UID, so handles minted for it stop
//!    resolving and outstanding transactions built from them fail.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::device::{DeviceState, Uid};
use crate::registry::RegistryClient;
use crate::sdk::{PublishOutcome, PublishRequest};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum KernelError {
    #[error("package {0} is not installed")]
    UnknownPackage(String),
    #[error("process handle for uid {0} no longer resolves to an installed app")]
    HandleInvalid(Uid),
    #[error("service {0} is already registered")]
    DuplicateService(String),
    #[error("service {0} is not registered")]
    ServiceNotFound(String),
    #[error("service {0} is not exported and the caller is not its owner")]
    NotExported(String),
    #[error("connection {0} is not live")]
    UnknownConnection(u64),
    #[error("connection {0} has no registered callback endpoint")]
    NoCallback(u64),
    #[error("calling uid requested outside the handler scope of the transaction")]
    CallScopeExpired,
    #[error("handler rejected the transaction: {0}")]
    Handler(#[from] HandlerError),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HandlerError {
    #[error("malformed request: {0}")]
    BadRequest(String),
}

// ---------------------------------------------------------------------------
// Identity and wire values
// ---------------------------------------------------------------------------

/// Kernel-minted identity of a running app process. The UID inside is
/// readable but not writable, and the only way to obtain a handle is
/// [`Kernel::mint_handle`] against the install table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProcessHandle {
    uid: Uid,
}

impl ProcessHandle {
    pub fn uid(&self) -> Uid {
        self.uid
    }
}

/// Transaction payloads. Binder parcels are opaque to the kernel; the
/// variants here are just the shapes the simulated services speak.
#[derive(Debug, Clone, PartialEq)]
pub enum Parcel {
    Publish(PublishRequest),
    PublishReply(PublishOutcome),
    Text(String),
    Empty,
}

/// One in-flight call. `calling_uid` was stamped by the kernel from the
/// verified caller handle; nothing in the payload can change it. A clone
/// kept past the handler's return shares the expired scope flag, so it
/// cannot be replayed as identity evidence later.
#[derive(Debug, Clone)]
pub struct Transaction {
    calling_uid: Uid,
    payload: Parcel,
    in_scope: Arc<AtomicBool>,
}

impl Transaction {
    pub fn calling_uid(&self) -> Result<Uid, KernelError> {
        if self.in_scope.load(Ordering::SeqCst) {
            Ok(self.calling_uid)
        } else {
            Err(KernelError::CallScopeExpired)
        }
    }

    pub fn payload(&self) -> &Parcel {
        &self.payload
    }
}

/// Kernel-stamped caller identity for the current handler invocation.
pub fn get_calling_uid(txn: &Transaction) -> Result<Uid, KernelError> {
    txn.calling_uid()
}

// ---------------------------------------------------------------------------
// Services and connections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct ServiceKey {
    provider: String,
    name: String,
}

#[derive(Debug, Clone)]
pub struct ServiceRegistration {
    pub provider_package: String,
    pub provider_uid: Uid,
    pub name: String,
    pub exported: bool,
}

/// What a bound service sees besides the transaction itself: read access
/// to the device's install table and, for services that consult a
/// partner registry, a client for it.
pub struct HandlerCtx<'a> {
    pub device: &'a DeviceState,
    pub registry: Option<&'a mut dyn RegistryClient>,
}

pub trait BoundService: Send {
    fn on_transact(&mut self, txn: &Transaction, ctx: &mut HandlerCtx<'_>)
        -> Result<Parcel, HandlerError>;
}

/// Replies `"<calling_uid>:<text>"`. Exists so tests and the kernel
/// fuzz scenario can observe the stamped UID without shared state.
pub struct EchoService;

impl BoundService for EchoService {
    fn on_transact(
        &mut self,
        txn: &Transaction,
        _ctx: &mut HandlerCtx<'_>,
    ) -> Result<Parcel, HandlerError> {
        let uid = txn.calling_uid().map_err(|e| HandlerError::BadRequest(e.to_string()))?;
        let body = match txn.payload() {
            Parcel::Text(t) => t.clone(),
            other => return Err(HandlerError::BadRequest(format!("unsupported parcel {other:?}"))),
        };
        Ok(Parcel::Text(format!("{uid}:{body}")))
    }
}

/// Caller-held connection to a bound service. Constructed only by
/// [`Kernel::bind_service`]; holding one proves nothing about identity —
/// the caller and target live in kernel state, keyed by the id.
#[derive(Debug, Clone)]
pub struct Connection {
    id: u64,
}

impl Connection {
    pub fn id(&self) -> u64 {
        self.id
    }
}

struct ServiceEntry {
    registration: ServiceRegistration,
    handler: Box<dyn BoundService>,
}

struct ConnState {
    caller_uid: Uid,
    service: ServiceKey,
    callback_inbox: Option<Vec<String>>,
}

// ---------------------------------------------------------------------------
// Kernel
// ---------------------------------------------------------------------------

#[derive(Default)]
pub struct Kernel {
    services: BTreeMap<ServiceKey, ServiceEntry>,
    connections: BTreeMap<u64, ConnState>,
    next_connection: u64,
}

impl Kernel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mints the identity handle for an installed app. The only path to
    /// a [`ProcessHandle`], and it consults the install table.
    pub fn mint_handle(
        &self,
        device: &DeviceState,
        package: &str,
    ) -> Result<ProcessHandle, KernelError> {
        let app = device
            .app(package)
            .ok_or_else(|| KernelError::UnknownPackage(package.to_string()))?;
        Ok(ProcessHandle { uid: app.uid })
    }

    pub fn register_service(
        &mut self,
        device: &DeviceState,
        provider: &ProcessHandle,
        name: &str,
        exported: bool,
        handler: Box<dyn BoundService>,
    ) -> Result<(), KernelError> {
        let provider_package = self
            .resolve_handle(device, provider)
            .ok_or(KernelError::HandleInvalid(provider.uid))?;
        let key = ServiceKey { provider: provider_package.clone(), name: name.to_string() };
        if self.services.contains_key(&key) {
            return Err(KernelError::DuplicateService(format!("{provider_package}/{name}")));
        }
        self.services.insert(
            key,
            ServiceEntry {
                registration: ServiceRegistration {
                    provider_package,
                    provider_uid: provider.uid,
                    name: name.to_string(),
                    exported,
                },
                handler,
            },
        );
        Ok(())
    }

    /// Opens a connection. Exported services accept any installed
    /// caller; non-exported services only their own app. No identity is
    /// established here beyond handle validity.
    pub fn bind_service(
        &mut self,
        device: &DeviceState,
        caller: &ProcessHandle,
        provider_package: &str,
        service_name: &str,
    ) -> Result<Connection, KernelError> {
        if self.resolve_handle(device, caller).is_none() {
            return Err(KernelError::HandleInvalid(caller.uid));
        }
        let key = ServiceKey { provider: provider_package.to_string(), name: service_name.to_string() };
        let entry = self
            .services
            .get(&key)
            .ok_or_else(|| KernelError::ServiceNotFound(format!("{provider_package}/{service_name}")))?;
        if !entry.registration.exported && entry.registration.provider_uid != caller.uid {
            return Err(KernelError::NotExported(format!("{provider_package}/{service_name}")));
        }
        let id = self.next_connection;
        self.next_connection += 1;
        self.connections.insert(
            id,
            ConnState { caller_uid: caller.uid, service: key, callback_inbox: None },
        );
        Ok(Connection { id })
    }

    /// Synchronous call: validates the caller is still installed, stamps
    /// its UID into a fresh transaction, runs the handler, then expires
    /// the transaction's identity scope before returning the reply.
    pub fn transact<'a>(
        &mut self,
        device: &'a DeviceState,
        conn: &Connection,
        payload: Parcel,
        registry: Option<&'a mut dyn RegistryClient>,
    ) -> Result<Parcel, KernelError> {
        let state = self
            .connections
            .get(&conn.id)
            .ok_or(KernelError::UnknownConnection(conn.id))?;
        let caller_uid = state.caller_uid;
        let service = state.service.clone();
        if !device.uid_resolves(caller_uid) {
            return Err(KernelError::HandleInvalid(caller_uid));
        }
        if !device.is_installed(&service.provider) {
            return Err(KernelError::ServiceNotFound(format!(
                "{}/{}",
                service.provider, service.name
            )));
        }
        let entry = self
            .services
            .get_mut(&service)
            .ok_or_else(|| KernelError::ServiceNotFound(format!(
                "{}/{}",
                service.provider, service.name
            )))?;

        let in_scope = Arc::new(AtomicBool::new(true));
        let txn = Transaction {
            calling_uid: caller_uid,
            payload,
            in_scope: Arc::clone(&in_scope),
        };
        let mut ctx = HandlerCtx { device, registry };
        let result = entry.handler.on_transact(&txn, &mut ctx);
        in_scope.store(false, Ordering::SeqCst);
        Ok(result?)
    }

    /// Opens the reverse channel on a connection. Until this is called,
    /// the provider has nowhere to push.
    pub fn register_callback(&mut self, conn: &Connection) -> Result<(), KernelError> {
        let state = self
            .connections
            .get_mut(&conn.id)
            .ok_or(KernelError::UnknownConnection(conn.id))?;
        state.callback_inbox.get_or_insert_with(Vec::new);
        Ok(())
    }

    /// Provider-side push to the caller. Returns the delivered message.
    pub fn invoke_callback(&mut self, conn: &Connection, message: &str) -> Result<String, KernelError> {
        let state = self
            .connections
            .get_mut(&conn.id)
            .ok_or(KernelError::UnknownConnection(conn.id))?;
        let inbox = state
            .callback_inbox
            .as_mut()
            .ok_or(KernelError::NoCallback(conn.id))?;
        inbox.push(message.to_string());
        Ok(message.to_string())
    }

    /// Caller-side read of pushed messages, in delivery order.
    pub fn drain_callbacks(&mut self, conn: &Connection) -> Result<Vec<String>, KernelError> {
        let state = self
            .connections
            .get_mut(&conn.id)
            .ok_or(KernelError::UnknownConnection(conn.id))?;
        Ok(state.callback_inbox.as_mut().map(std::mem::take).unwrap_or_default())
    }

    fn resolve_handle(&self, device: &DeviceState, handle: &ProcessHandle) -> Option<String> {
        device.get_packages_for_uid(handle.uid).into_iter().next()
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
