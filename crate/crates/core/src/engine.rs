//! Service engine: hosts deployed services, runs their request handler
//! chains, dispatches calls, and describes services as WSDL-lite documents.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::Router;
use chrono::{DateTime, Utc};
use serde::Serialize;
use tokio::net::TcpListener;

use crate::broker::{RegistryClient, ServiceRecord};
use crate::envelope::{
    decode_envelope, encode_envelope, BeanRegistry, BeanSchema, Call, Envelope, Fault, FaultCode, Response, TypeTag,
    TypedValue,
};
use crate::net::{spawn_server, ServerHandle};
use crate::wsdd::{
    self, BeanCatalog, DeploymentDescriptor, KnownImpls, ServiceDecl, UndeploymentDescriptor,
    Violation,
};
use crate::xml;

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(10);
pub const DEFAULT_LOG_CAPACITY: usize = 10_000;

/// One exposed method: ordered parameter schema and result type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OperationSig {
    pub name: String,
    pub params: Vec<(String, TypeTag)>,
    pub result: TypeTag,
}

impl OperationSig {
    pub fn new<S: Into<String>>(name: &str, params: impl IntoIterator<Item = (S, TypeTag)>, result: TypeTag) -> Self {
        Self {
            name: name.to_string(),
            params: params.into_iter().map(|(n, t)| (n.into(), t)).collect(),
            result,
        }
    }

    /// Checks that `params` match this signature by name, order and tag, and
    /// that every value conforms to `registry`.
    pub fn check_params(&self, params: &[TypedValue], registry: &BeanRegistry) -> Result<(), String> {
        if params.len() != self.params.len() {
            return Err(format!(
                "{} takes {} parameters, got {}",
                self.name,
                self.params.len(),
                params.len()
            ));
        }
        for ((name, tag), p) in self.params.iter().zip(params) {
            if *name != p.name || *tag != p.tag {
                return Err(format!(
                    "{}: expected parameter {name}:{tag}, got {}:{}",
                    self.name, p.name, p.tag
                ));
            }
            registry.check_value(p).map_err(|e| e.to_string())?;
        }
        Ok(())
    }
}

/// An implementation a deployment descriptor binds to via `className`.
#[async_trait]
pub trait ServiceImpl: Send + Sync {
    fn class_name(&self) -> &str;

    /// The signature table of every public method.
    fn operations(&self) -> Vec<OperationSig>;

    /// Beans the implementation needs beyond the descriptor's mappings, in
    /// dependency order.
    fn support_beans(&self) -> Vec<(String, BeanSchema)> {
        Vec::new()
    }

    /// Called with parameters already checked against the signature.
    async fn invoke(&self, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, Fault>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct HandlerInvocation {
    pub handler: String,
    pub timestamp: DateTime<Utc>,
    pub service: String,
    pub method: String,
}

/// Size-bounded in-memory ring of handler invocations, optionally mirrored to
/// a line-oriented file.
pub struct InvocationLog {
    capacity: usize,
    ring: Mutex<VecDeque<HandlerInvocation>>,
    file: Option<Mutex<std::fs::File>>,
}

impl InvocationLog {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            ring: Mutex::new(VecDeque::new()),
            file: None,
        }
    }

    pub fn with_file(capacity: usize, path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            file: Some(Mutex::new(f)),
            ..Self::new(capacity)
        })
    }

    pub fn append(&self, entry: HandlerInvocation) {
        // file write and ring push happen under the ring lock so both see the
        // same order
        let mut ring = self.ring.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(file) = &self.file {
            let line = format!(
                "{}\t{}\t{}\t{}\n",
                entry.timestamp.to_rfc3339(),
                entry.handler,
                entry.service,
                entry.method
            );
            let mut f = file.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = f.write_all(line.as_bytes()) {
                tracing::warn!(error = %e, "handler log write failed");
            }
        }
        if ring.len() == self.capacity {
            ring.pop_front();
        }
        ring.push_back(entry);
    }

    pub fn entries(&self) -> Vec<HandlerInvocation> {
        self.ring
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.ring.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Pre-dispatch interceptor: may pass the call on (possibly rewritten) or
/// stop it with a fault.
pub trait Handler: Send + Sync {
    fn name(&self) -> &str;
    fn intercept(&self, call: Call) -> Result<Call, Fault>;
}

pub struct LogHandler {
    name: String,
    log: Arc<InvocationLog>,
}

impl LogHandler {
    pub fn new(name: impl Into<String>, log: Arc<InvocationLog>) -> Self {
        Self { name: name.into(), log }
    }
}

impl Handler for LogHandler {
    fn name(&self) -> &str {
        &self.name
    }

    fn intercept(&self, call: Call) -> Result<Call, Fault> {
        self.log.append(HandlerInvocation {
            handler: self.name.clone(),
            timestamp: Utc::now(),
            service: call.service.clone(),
            method: call.method.clone(),
        });
        Ok(call)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("service {0} is not deployed")]
    ServiceNotFound(String),
    #[error("already deployed: {}", .0.join(", "))]
    AlreadyDeployed(Vec<String>),
    #[error("validation failed: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    ValidationFailed(Vec<Violation>),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct UndeployReport {
    pub undeployed: Vec<String>,
    pub not_deployed: Vec<String>,
}

struct Deployed {
    decl: ServiceDecl,
    imp: Arc<dyn ServiceImpl>,
    handlers: Vec<Arc<dyn Handler>>,
    ops: BTreeMap<String, OperationSig>,
    beans: Vec<String>,
}

#[derive(Default)]
struct HostState {
    deployed: BTreeMap<String, Arc<Deployed>>,
    registry: Arc<BeanRegistry>,
}

struct HostInner {
    base_url: String,
    impls: BTreeMap<String, Arc<dyn ServiceImpl>>,
    catalog: BeanCatalog,
    log: Arc<InvocationLog>,
    request_timeout: Duration,
    state: RwLock<HostState>,
}

/// Deployed services keyed by name, plus the implementations they may bind
/// to. Cloning is cheap and shares state.
#[derive(Clone)]
pub struct ServiceHost {
    inner: Arc<HostInner>,
}

pub struct ServiceHostBuilder {
    base_url: String,
    impls: BTreeMap<String, Arc<dyn ServiceImpl>>,
    catalog: BeanCatalog,
    log: Option<Arc<InvocationLog>>,
    request_timeout: Duration,
}

impl ServiceHostBuilder {
    pub fn implementation(mut self, imp: Arc<dyn ServiceImpl>) -> Self {
        self.impls.insert(imp.class_name().to_string(), imp);
        self
    }

    pub fn catalog(mut self, catalog: BeanCatalog) -> Self {
        self.catalog = catalog;
        self
    }

    pub fn log(mut self, log: Arc<InvocationLog>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn request_timeout(mut self, timeout: Duration) -> Self {
        self.request_timeout = timeout;
        self
    }

    pub fn build(self) -> ServiceHost {
        ServiceHost {
            inner: Arc::new(HostInner {
                base_url: self.base_url.trim_end_matches('/').to_string(),
                impls: self.impls,
                catalog: self.catalog,
                log: self
                    .log
                    .unwrap_or_else(|| Arc::new(InvocationLog::new(DEFAULT_LOG_CAPACITY))),
                request_timeout: self.request_timeout,
                state: RwLock::new(HostState::default()),
            }),
        }
    }
}

impl ServiceHost {
    /// `base_url` is the externally visible listen URL, e.g.
    /// `http://127.0.0.1:7101`.
    pub fn builder(base_url: impl Into<String>) -> ServiceHostBuilder {
        ServiceHostBuilder {
            base_url: base_url.into(),
            impls: BTreeMap::new(),
            catalog: crate::domain::bean_catalog(),
            log: None,
            request_timeout: DEFAULT_REQUEST_TIMEOUT,
        }
    }

    pub fn base_url(&self) -> &str {
        &self.inner.base_url
    }

    pub fn endpoint_url(&self, service: &str) -> String {
        format!("{}/services/{service}", self.inner.base_url)
    }

    pub fn wsdl_url(&self, service: &str) -> String {
        format!("{}?wsdl", self.endpoint_url(service))
    }

    pub fn invocation_log(&self) -> &Arc<InvocationLog> {
        &self.inner.log
    }

    pub fn known_impls(&self) -> KnownImpls {
        self.inner
            .impls
            .iter()
            .map(|(k, imp)| (k.clone(), imp.operations().into_iter().map(|o| o.name).collect::<BTreeSet<_>>()))
            .collect()
    }

    /// Current bean registry. Grows as descriptors are deployed.
    pub fn registry(&self) -> Arc<BeanRegistry> {
        self.state_read().registry.clone()
    }

    fn state_read(&self) -> std::sync::RwLockReadGuard<'_, HostState> {
        self.inner.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn state_write(&self) -> std::sync::RwLockWriteGuard<'_, HostState> {
        self.inner.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn list_services(&self) -> Vec<String> {
        self.state_read().deployed.keys().cloned().collect()
    }

    pub fn is_deployed(&self, name: &str) -> bool {
        self.state_read().deployed.contains_key(name)
    }

    /// Validates and deploys every service in `d`. Either all services are
    /// deployed or none is.
    pub fn deploy(&self, d: &DeploymentDescriptor) -> Result<Vec<String>, EngineError> {
        let mut state = self.state_write();

        let known = self.known_impls();
        wsdd::validate(d, &known, &self.inner.catalog, &state.registry).map_err(EngineError::ValidationFailed)?;
        let mut registry = (*state.registry).clone();
        let mut violations = wsdd::apply_bean_mappings(d, &self.inner.catalog, &mut registry);
        for s in &d.services {
            for (q, schema) in self.inner.impls[&s.class_name].support_beans() {
                if let Err(e) = registry.ensure_bean(&q, schema) {
                    violations.push(Violation {
                        service: Some(s.name.clone()),
                        message: format!("support bean: {e}"),
                    });
                }
            }
        }
        if !violations.is_empty() {
            return Err(EngineError::ValidationFailed(violations));
        }

        let already: Vec<String> = d
            .services
            .iter()
            .filter(|s| state.deployed.contains_key(&s.name))
            .map(|s| s.name.clone())
            .collect();
        if !already.is_empty() {
            return Err(EngineError::AlreadyDeployed(already));
        }

        let mut entries = Vec::new();
        for s in &d.services {
            let imp = self.inner.impls[&s.class_name].clone();
            let ops: BTreeMap<String, OperationSig> = imp
                .operations()
                .into_iter()
                .filter(|o| s.allowed_methods.allows(&o.name))
                .map(|o| (o.name.clone(), o))
                .collect();
            let handlers = s
                .request_flow
                .iter()
                .map(|h| Arc::new(LogHandler::new(h.clone(), self.inner.log.clone())) as Arc<dyn Handler>)
                .collect();
            // auxiliary beans first, so the WSDL can describe list items
            let mut beans: Vec<String> = Vec::new();
            for m in &s.bean_mappings {
                if let Some(entry) = self.inner.catalog.get(m.binding_key()) {
                    beans.extend(entry.requires.iter().map(|(q, _)| q.clone()));
                }
                beans.push(m.qname.clone());
            }
            beans.extend(imp.support_beans().into_iter().map(|(q, _)| q));
            beans.extend(ops.values().flat_map(|o| {
                o.params
                    .iter()
                    .map(|(_, t)| t)
                    .chain(std::iter::once(&o.result))
                    .filter_map(|t| match t {
                        TypeTag::Bean(q) => Some(q.clone()),
                        TypeTag::Primitive(_) => None,
                    })
            }));
            entries.push(Deployed {
                decl: s.clone(),
                imp,
                handlers,
                ops,
                beans,
            });
        }
        state.registry = Arc::new(registry);
        let names = d.service_names();
        for e in entries {
            tracing::info!(service = %e.decl.name, class = %e.decl.class_name, "deployed");
            state.deployed.insert(e.decl.name.clone(), Arc::new(e));
        }
        Ok(names)
    }

    /// Removes the named services. Requests already dispatched to them run to
    /// completion; later ones fault with ServiceNotFound.
    pub fn undeploy(&self, u: &UndeploymentDescriptor) -> UndeployReport {
        let mut state = self.state_write();
        let mut report = UndeployReport::default();
        for name in &u.service_names {
            if state.deployed.remove(name).is_some() {
                tracing::info!(service = %name, "undeployed");
                report.undeployed.push(name.clone());
            } else {
                report.not_deployed.push(name.clone());
            }
        }
        report
    }

    /// Runs a call through its handler chain and implementation. Every
    /// failure comes back as a fault envelope.
    pub async fn dispatch(&self, request: Envelope) -> Envelope {
        let call = match request {
            Envelope::Call(c) => c,
            other => {
                return Envelope::fault(
                    FaultCode::Client,
                    format!("expected a call envelope, got {:?}", other.kind()),
                )
            }
        };
        let (deployed, registry) = {
            let state = self.state_read();
            (state.deployed.get(&call.service).cloned(), state.registry.clone())
        };
        let Some(deployed) = deployed else {
            return Envelope::fault(
                FaultCode::ServiceNotFound,
                format!("service {} is not deployed", call.service),
            );
        };
        let Some(sig) = deployed.ops.get(&call.method).cloned() else {
            return Envelope::fault(
                FaultCode::MethodNotFound,
                format!("{} has no method {}", call.service, call.method),
            );
        };
        if let Err(msg) = sig.check_params(&call.params, &registry) {
            return Envelope::fault(FaultCode::TypeMismatch, msg);
        }

        let mut call = call;
        for h in &deployed.handlers {
            match h.intercept(call) {
                Ok(c) => call = c,
                Err(f) => return Envelope::Fault(f),
            }
        }

        let imp = deployed.imp.clone();
        let method = call.method.clone();
        let mut task = tokio::spawn(async move { imp.invoke(&call.method, call.params).await });
        let outcome = tokio::time::timeout(self.inner.request_timeout, &mut task).await;
        match outcome {
            Err(_) => {
                task.abort();
                Envelope::fault(FaultCode::Server, "timeout")
            }
            Ok(Err(join)) => Envelope::fault(FaultCode::Server, format!("{method} failed: {join}")),
            Ok(Ok(Err(fault))) => Envelope::Fault(fault),
            Ok(Ok(Ok(result))) => {
                if result.tag != sig.result {
                    return Envelope::fault(
                        FaultCode::Server,
                        format!("{method} returned {} instead of {}", result.tag, sig.result),
                    );
                }
                Envelope::Response(Response { method, result })
            }
        }
    }

    pub fn generate_wsdl(&self, service: &str) -> Result<WsdlDoc, EngineError> {
        let state = self.state_read();
        let deployed = state
            .deployed
            .get(service)
            .ok_or_else(|| EngineError::ServiceNotFound(service.to_string()))?;
        Ok(WsdlDoc {
            service: service.to_string(),
            endpoint: self.endpoint_url(service),
            operations: deployed.ops.values().cloned().collect(),
            types: state
                .registry
                .closure_ordered(deployed.beans.iter().map(String::as_str)),
        })
    }

    pub fn service_record(&self, service: &str) -> ServiceRecord {
        ServiceRecord::new(service, self.endpoint_url(service), self.wsdl_url(service))
    }
}

// ---------------------------------------------------------------------------
// WSDL-lite

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid WSDL: {0}")]
pub struct WsdlError(pub String);

/// Self-description of one deployed service: where to call it, which methods
/// it exposes, and the bean schemas needed to encode and decode them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WsdlDoc {
    pub service: String,
    pub endpoint: String,
    pub operations: Vec<OperationSig>,
    /// Dependency-ordered bean schemas.
    pub types: Vec<(String, BeanSchema)>,
}

impl WsdlDoc {
    pub fn operation(&self, name: &str) -> Option<&OperationSig> {
        self.operations.iter().find(|o| o.name == name)
    }

    /// A bean registry holding exactly the document's types.
    pub fn registry(&self) -> Result<BeanRegistry, WsdlError> {
        let mut reg = BeanRegistry::new();
        for (q, s) in &self.types {
            reg.register_bean(q, s.clone()).map_err(|e| WsdlError(e.to_string()))?;
        }
        Ok(reg)
    }

    pub fn to_xml(&self) -> String {
        let mut out = String::from(crate::envelope::XML_DECL);
        let _ = write!(
            out,
            "<i3:wsdl service=\"{}\" endpoint=\"{}\">",
            xml::escape(&self.service),
            xml::escape(&self.endpoint)
        );
        out.push_str("<i3:types>");
        for (q, schema) in &self.types {
            let _ = write!(out, "<i3:bean qname=\"{}\">", xml::escape(q));
            for (name, tag) in &schema.fields {
                let _ = write!(out, "<i3:field name=\"{}\" i3type=\"{}\"/>", xml::escape(name), xml::escape(tag.as_str()));
            }
            out.push_str("</i3:bean>");
        }
        out.push_str("</i3:types>");
        for op in &self.operations {
            let _ = write!(out, "<i3:operation name=\"{}\">", xml::escape(&op.name));
            for (name, tag) in &op.params {
                let _ = write!(out, "<i3:param name=\"{}\" i3type=\"{}\"/>", xml::escape(name), xml::escape(tag.as_str()));
            }
            let _ = write!(out, "<i3:result i3type=\"{}\"/>", xml::escape(op.result.as_str()));
            out.push_str("</i3:operation>");
        }
        out.push_str("</i3:wsdl>");
        out
    }

    pub fn from_xml(bytes: &[u8]) -> Result<Self, WsdlError> {
        let err = |m: String| WsdlError(m);
        let root = xml::parse_document(bytes).map_err(|e| err(e.to_string()))?;
        if root.name != "i3:wsdl" {
            return Err(err(format!("root element is {}", root.name)));
        }
        let attr = |el: &xml::Element, name: &str| -> Result<String, WsdlError> {
            el.attr(name)
                .map(str::to_string)
                .ok_or_else(|| WsdlError(format!("{} is missing {name}", el.name)))
        };
        let tag = |el: &xml::Element| -> Result<TypeTag, WsdlError> {
            attr(el, "i3type")?.parse().map_err(|e: crate::envelope::CodecError| WsdlError(e.to_string()))
        };
        let mut doc = WsdlDoc {
            service: attr(&root, "service")?,
            endpoint: attr(&root, "endpoint")?,
            operations: Vec::new(),
            types: Vec::new(),
        };
        for child in root.elements() {
            match child.name.as_str() {
                "i3:types" => {
                    for bean in child.elements() {
                        if bean.name != "i3:bean" {
                            return Err(err(format!("unexpected {} in types", bean.name)));
                        }
                        let mut fields = Vec::new();
                        for f in bean.elements() {
                            if f.name != "i3:field" {
                                return Err(err(format!("unexpected {} in bean", f.name)));
                            }
                            fields.push((attr(f, "name")?, tag(f)?));
                        }
                        doc.types.push((attr(bean, "qname")?, BeanSchema { fields }));
                    }
                }
                "i3:operation" => {
                    let mut params = Vec::new();
                    let mut result = None;
                    for p in child.elements() {
                        match p.name.as_str() {
                            "i3:param" => params.push((attr(p, "name")?, tag(p)?)),
                            "i3:result" if result.is_none() => result = Some(tag(p)?),
                            other => return Err(err(format!("unexpected {other} in operation"))),
                        }
                    }
                    doc.operations.push(OperationSig {
                        name: attr(child, "name")?,
                        params,
                        result: result.ok_or_else(|| err("operation without result".into()))?,
                    });
                }
                other => return Err(err(format!("unexpected element {other}"))),
            }
        }
        doc.registry()?;
        Ok(doc)
    }
}

// ---------------------------------------------------------------------------
// HTTP

pub const XML_CONTENT_TYPE: &str = "text/xml; charset=utf-8";

/// Transport status for an envelope.
pub fn http_status(env: &Envelope) -> StatusCode {
    match env {
        Envelope::Response(_) | Envelope::Call(_) => StatusCode::OK,
        Envelope::Fault(f) => match f.code {
            FaultCode::Client | FaultCode::TypeMismatch => StatusCode::BAD_REQUEST,
            FaultCode::ServiceNotFound | FaultCode::MethodNotFound => StatusCode::NOT_FOUND,
            FaultCode::Server => StatusCode::INTERNAL_SERVER_ERROR,
        },
    }
}

fn envelope_response(env: Envelope, registry: &BeanRegistry) -> HttpResponse {
    let (status, body) = match encode_envelope(&env, registry) {
        Ok(body) => (http_status(&env), body),
        Err(e) => {
            let fault = Envelope::fault(FaultCode::Server, format!("cannot encode response: {e}"));
            let body = encode_envelope(&fault, registry).expect("plain faults always encode");
            (StatusCode::INTERNAL_SERVER_ERROR, body)
        }
    };
    (status, [(header::CONTENT_TYPE, XML_CONTENT_TYPE)], body).into_response()
}

fn fault_response(code: FaultCode, message: impl Into<String>) -> HttpResponse {
    envelope_response(Envelope::fault(code, message), &BeanRegistry::new())
}

#[derive(Clone)]
struct EngineState {
    host: ServiceHost,
    publisher: Option<RegistryClient>,
}

#[derive(Serialize)]
struct ApiError {
    code: String,
    message: String,
    detail: serde_json::Value,
}

fn admin_error(status: StatusCode, code: &str, message: String, detail: serde_json::Value) -> HttpResponse {
    (
        status,
        axum::Json(ApiError {
            code: code.to_string(),
            message,
            detail,
        }),
    )
        .into_response()
}

async fn list_handler(State(st): State<EngineState>) -> HttpResponse {
    let mut body = st.host.list_services().join("\n");
    if !body.is_empty() {
        body.push('\n');
    }
    ([(header::CONTENT_TYPE, "text/plain; charset=utf-8")], body).into_response()
}

async fn wsdl_handler(State(st): State<EngineState>, Path(name): Path<String>, RawQuery(q): RawQuery) -> HttpResponse {
    let wants_wsdl = q
        .as_deref()
        .is_some_and(|q| q.split('&').any(|p| p.eq_ignore_ascii_case("wsdl") || p.to_ascii_lowercase().starts_with("wsdl=")));
    if !wants_wsdl {
        return fault_response(FaultCode::Client, "GET requires ?wsdl; POST a call envelope to invoke");
    }
    match st.host.generate_wsdl(&name) {
        Ok(doc) => ([(header::CONTENT_TYPE, XML_CONTENT_TYPE)], doc.to_xml()).into_response(),
        Err(e) => fault_response(FaultCode::ServiceNotFound, e.to_string()),
    }
}

async fn call_handler(State(st): State<EngineState>, Path(name): Path<String>, body: Bytes) -> HttpResponse {
    let registry = st.host.registry();
    let env = match decode_envelope(&body, &registry) {
        Ok(env) => env,
        Err(crate::envelope::CodecError::TypeMismatch(m)) => {
            return envelope_response(Envelope::fault(FaultCode::TypeMismatch, m), &registry)
        }
        Err(e) => return envelope_response(Envelope::fault(FaultCode::Client, e.to_string()), &registry),
    };
    if let Envelope::Call(c) = &env {
        if c.service != name {
            return envelope_response(
                Envelope::fault(
                    FaultCode::Client,
                    format!("call names service {} but was posted to {name}", c.service),
                ),
                &registry,
            );
        }
    }
    let reply = st.host.dispatch(env).await;
    envelope_response(reply, &st.host.registry())
}

async fn deploy_handler(State(st): State<EngineState>, body: Bytes) -> HttpResponse {
    let d = match wsdd::parse_wsdd(&body) {
        Ok(d) => d,
        Err(e) => return admin_error(StatusCode::BAD_REQUEST, "InvalidDescriptor", e.to_string(), serde_json::Value::Null),
    };
    match st.host.deploy(&d) {
        Ok(names) => {
            if let Some(publisher) = &st.publisher {
                for n in &names {
                    if let Err(e) = publisher.publish(&st.host.service_record(n)).await {
                        tracing::warn!(service = %n, error = %e, "publish after deploy failed");
                    }
                }
            }
            axum::Json(serde_json::json!({ "deployed": names })).into_response()
        }
        Err(EngineError::AlreadyDeployed(names)) => admin_error(
            StatusCode::CONFLICT,
            "AlreadyDeployed",
            format!("already deployed: {}", names.join(", ")),
            serde_json::json!(names),
        ),
        Err(EngineError::ValidationFailed(v)) => admin_error(
            StatusCode::UNPROCESSABLE_ENTITY,
            "ValidationFailed",
            format!("{} violation(s)", v.len()),
            serde_json::json!(v.iter().map(ToString::to_string).collect::<Vec<_>>()),
        ),
        Err(e) => admin_error(StatusCode::INTERNAL_SERVER_ERROR, "Server", e.to_string(), serde_json::Value::Null),
    }
}

async fn undeploy_handler(State(st): State<EngineState>, body: Bytes) -> HttpResponse {
    match wsdd::parse_undeploy(&body) {
        Ok(u) => axum::Json(st.host.undeploy(&u)).into_response(),
        Err(e) => admin_error(StatusCode::BAD_REQUEST, "InvalidDescriptor", e.to_string(), serde_json::Value::Null),
    }
}

async fn fallback_handler() -> HttpResponse {
    fault_response(FaultCode::ServiceNotFound, "no such endpoint")
}

pub fn router(host: ServiceHost, publisher: Option<RegistryClient>) -> Router {
    Router::new()
        .route("/services", get(list_handler))
        .route("/services/{name}", get(wsdl_handler).post(call_handler))
        .route("/admin/deploy", post(deploy_handler))
        .route("/admin/undeploy", post(undeploy_handler))
        .fallback(fallback_handler)
        .with_state(EngineState { host, publisher })
}

/// Serves `host` on `listener`. When `publisher` is set, services deployed
/// through the admin endpoint are published to that registry.
pub fn serve(host: ServiceHost, listener: TcpListener, publisher: Option<RegistryClient>) -> ServerHandle {
    spawn_server(listener, router(host, publisher))
}

// ---------------------------------------------------------------------------
// Admin client

#[derive(Debug, thiserror::Error)]
pub enum AdminError {
    #[error("host unreachable: {0}")]
    Unreachable(String),
    #[error("{code}: {message}")]
    Rejected {
        code: String,
        message: String,
        detail: serde_json::Value,
    },
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

#[derive(serde::Deserialize)]
struct RejectBody {
    code: String,
    message: String,
    #[serde(default)]
    detail: serde_json::Value,
}

async fn admin_post(host_url: &str, path: &str, body: Vec<u8>) -> Result<serde_json::Value, AdminError> {
    let url = format!("{}{path}", host_url.trim_end_matches('/'));
    let resp = reqwest::Client::new()
        .post(&url)
        .header(reqwest::header::CONTENT_TYPE, XML_CONTENT_TYPE)
        .body(body)
        .send()
        .await
        .map_err(|e| AdminError::Unreachable(format!("{url}: {e}")))?;
    let ok = resp.status().is_success();
    let bytes = resp
        .bytes()
        .await
        .map_err(|e| AdminError::Unreachable(format!("{url}: {e}")))?;
    if ok {
        serde_json::from_slice(&bytes).map_err(|e| AdminError::Protocol(e.to_string()))
    } else {
        let r: RejectBody = serde_json::from_slice(&bytes).map_err(|e| AdminError::Protocol(e.to_string()))?;
        Err(AdminError::Rejected {
            code: r.code,
            message: r.message,
            detail: r.detail,
        })
    }
}

/// Posts a deployment descriptor to a running host; returns the names it
/// deployed.
pub async fn remote_deploy(host_url: &str, wsdd_text: &[u8]) -> Result<Vec<String>, AdminError> {
    let v = admin_post(host_url, "/admin/deploy", wsdd_text.to_vec()).await?;
    serde_json::from_value(v["deployed"].clone()).map_err(|e| AdminError::Protocol(e.to_string()))
}

pub async fn remote_undeploy(host_url: &str, wsdd_text: &[u8]) -> Result<UndeployReport, AdminError> {
    let v = admin_post(host_url, "/admin/undeploy", wsdd_text.to_vec()).await?;
    serde_json::from_value(v).map_err(|e| AdminError::Protocol(e.to_string()))
}
