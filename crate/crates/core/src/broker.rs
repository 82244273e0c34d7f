//! Name-to-record directory over HTTP/JSON, plus the client side of the
//! find, fetch-WSDL, bind, invoke sequence.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path as FsPath, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::get;
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use url::Url;

use crate::engine::{WsdlDoc, XML_CONTENT_TYPE};
use crate::envelope::{decode_envelope, encode_envelope, BeanRegistry, Call, Envelope, Fault, TypedValue};
use crate::net::{spawn_server, ServerHandle};

#[derive(Debug, thiserror::Error)]
pub enum BrokerError {
    #[error("service {0} is not registered")]
    NotFound(String),
    #[error("invalid service record: {0}")]
    InvalidRecord(String),
    #[error("registry journal {path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("registry unreachable: {0}")]
    RegistryUnreachable(String),
    #[error("cannot fetch WSDL: {0}")]
    WsdlFetchFailed(String),
    #[error("endpoint unreachable: {0}")]
    EndpointUnreachable(String),
    #[error("method {0} is not described by the service WSDL")]
    MethodNotInWsdl(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("remote fault: {0}")]
    RemoteFault(Fault),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// A broker entry: where a service lives and where its WSDL can be fetched.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub name: String,
    pub endpoint_url: String,
    pub wsdl_url: String,
    pub published_at: DateTime<Utc>,
}

fn check_absolute(field: &str, value: &str) -> Result<(), BrokerError> {
    let u = Url::parse(value).map_err(|e| BrokerError::InvalidRecord(format!("{field} {value:?}: {e}")))?;
    if !matches!(u.scheme(), "http" | "https") || u.host_str().is_none() {
        return Err(BrokerError::InvalidRecord(format!("{field} {value:?} is not an absolute http URL")));
    }
    Ok(())
}

impl ServiceRecord {
    pub fn new(name: impl Into<String>, endpoint_url: impl Into<String>, wsdl_url: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            endpoint_url: endpoint_url.into(),
            wsdl_url: wsdl_url.into(),
            published_at: Utc::now(),
        }
    }

    pub fn validate(&self) -> Result<(), BrokerError> {
        if self.name.is_empty() || self.name.contains('/') {
            return Err(BrokerError::InvalidRecord(format!("bad service name {:?}", self.name)));
        }
        check_absolute("endpoint_url", &self.endpoint_url)?;
        check_absolute("wsdl_url", &self.wsdl_url)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
enum JournalOp {
    Publish { record: ServiceRecord },
    Unpublish { name: String },
}

struct Journal {
    path: PathBuf,
    file: File,
}

impl Journal {
    fn append(&mut self, op: &JournalOp) -> Result<(), BrokerError> {
        let mut line = serde_json::to_vec(op).expect("journal ops serialize");
        line.push(b'\n');
        let io = |source| BrokerError::Journal {
            path: self.path.clone(),
            source,
        };
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)
    }
}

#[derive(Default)]
struct RegistryState {
    records: BTreeMap<String, ServiceRecord>,
    journal: Option<Journal>,
}

/// The directory itself. Each operation is atomic; cloning shares state.
#[derive(Clone, Default)]
pub struct Registry {
    state: Arc<Mutex<RegistryState>>,
}

impl Registry {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a journal and replays it. A torn final line, left
    /// by a crash mid-append, is dropped.
    pub fn open(journal: impl AsRef<FsPath>) -> Result<Self, BrokerError> {
        let path = journal.as_ref().to_path_buf();
        let io = |source| BrokerError::Journal {
            path: path.clone(),
            source,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io)?;
        }
        let mut records = BTreeMap::new();
        let mut good_len = 0u64;
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(io)?);
            for line in reader.split(b'\n') {
                let line = line.map_err(io)?;
                let Ok(op) = serde_json::from_slice::<JournalOp>(&line) else {
                    if line.iter().all(u8::is_ascii_whitespace) {
                        good_len += line.len() as u64 + 1;
                        continue;
                    }
                    tracing::warn!(path = %path.display(), "dropping unreadable journal tail");
                    break;
                };
                good_len += line.len() as u64 + 1;
                match op {
                    JournalOp::Publish { record } => {
                        records.insert(record.name.clone(), record);
                    }
                    JournalOp::Unpublish { name } => {
                        records.remove(&name);
                    }
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        let actual = file.metadata().map_err(io)?.len();
        if actual > good_len {
            file.set_len(good_len).map_err(io)?;
        }
        Ok(Self {
            state: Arc::new(Mutex::new(RegistryState {
                records,
                journal: Some(Journal { path, file }),
            })),
        })
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, RegistryState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Stores `record`, replacing any earlier record of the same name.
    pub fn publish(&self, record: ServiceRecord) -> Result<ServiceRecord, BrokerError> {
        record.validate()?;
        let mut st = self.lock();
        let op = JournalOp::Publish { record };
        if let Some(j) = st.journal.as_mut() {
            j.append(&op)?;
        }
        let JournalOp::Publish { record } = op else { unreachable!() };
        st.records.insert(record.name.clone(), record.clone());
        Ok(record)
    }

    pub fn find(&self, name: &str) -> Result<ServiceRecord, BrokerError> {
        self.lock()
            .records
            .get(name)
            .cloned()
            .ok_or_else(|| BrokerError::NotFound(name.to_string()))
    }

    pub fn unpublish(&self, name: &str) -> Result<(), BrokerError> {
        let mut st = self.lock();
        if !st.records.contains_key(name) {
            return Err(BrokerError::NotFound(name.to_string()));
        }
        if let Some(j) = st.journal.as_mut() {
            j.append(&JournalOp::Unpublish { name: name.to_string() })?;
        }
        st.records.remove(name);
        Ok(())
    }

    pub fn list(&self) -> Vec<ServiceRecord> {
        self.lock().records.values().cloned().collect()
    }
}

// ---------------------------------------------------------------------------
// HTTP server

#[derive(Debug, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

fn error_response(status: StatusCode, code: &str, message: String) -> HttpResponse {
    (
        status,
        Json(ErrorBody {
            code: code.to_string(),
            message,
        }),
    )
        .into_response()
}

fn broker_error_response(e: BrokerError) -> HttpResponse {
    match e {
        BrokerError::NotFound(_) => error_response(StatusCode::NOT_FOUND, "NotFound", e.to_string()),
        BrokerError::InvalidRecord(_) => error_response(StatusCode::BAD_REQUEST, "InvalidRecord", e.to_string()),
        other => error_response(StatusCode::INTERNAL_SERVER_ERROR, "Server", other.to_string()),
    }
}

#[derive(Deserialize)]
struct PublishBody {
    #[serde(default)]
    name: Option<String>,
    endpoint_url: String,
    wsdl_url: String,
}

async fn put_record(State(reg): State<Registry>, Path(name): Path<String>, body: Bytes) -> HttpResponse {
    let body: PublishBody = match serde_json::from_slice(&body) {
        Ok(b) => b,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, "InvalidRecord", e.to_string()),
    };
    if body.name.as_deref().is_some_and(|n| n != name) {
        return error_response(
            StatusCode::BAD_REQUEST,
            "InvalidRecord",
            format!("record name does not match path {name}"),
        );
    }
    // the registry's clock is authoritative for published_at
    let record = ServiceRecord::new(name, body.endpoint_url, body.wsdl_url);
    match reg.publish(record) {
        Ok(r) => Json(r).into_response(),
        Err(e) => broker_error_response(e),
    }
}

async fn get_record(State(reg): State<Registry>, Path(name): Path<String>) -> HttpResponse {
    match reg.find(&name) {
        Ok(r) => Json(r).into_response(),
        Err(e) => broker_error_response(e),
    }
}

async fn delete_record(State(reg): State<Registry>, Path(name): Path<String>) -> HttpResponse {
    match reg.unpublish(&name) {
        Ok(()) => StatusCode::NO_CONTENT.into_response(),
        Err(e) => broker_error_response(e),
    }
}

async fn list_records(State(reg): State<Registry>) -> HttpResponse {
    Json(reg.list()).into_response()
}

pub fn registry_router(reg: Registry) -> Router {
    Router::new()
        .route("/registry", get(list_records))
        .route("/registry/{name}", get(get_record).put(put_record).delete(delete_record))
        .fallback(|| async { error_response(StatusCode::NOT_FOUND, "NotFound", "no such endpoint".into()) })
        .with_state(reg)
}

pub fn serve_registry(reg: Registry, listener: TcpListener) -> ServerHandle {
    spawn_server(listener, registry_router(reg))
}

// ---------------------------------------------------------------------------
// Clients

pub const DEFAULT_CLIENT_TIMEOUT: Duration = Duration::from_secs(15);

fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(DEFAULT_CLIENT_TIMEOUT)
        .build()
        .expect("HTTP client builds with static settings")
}

/// HTTP client for a registry at `base_url` (e.g. `http://127.0.0.1:7000`).
#[derive(Clone)]
pub struct RegistryClient {
    base: String,
    http: reqwest::Client,
}

impl RegistryClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: http_client(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn record_url(&self, name: &str) -> String {
        format!("{}/registry/{name}", self.base)
    }

    async fn send(&self, req: reqwest::RequestBuilder) -> Result<(StatusCode, Bytes), BrokerError> {
        let unreachable = |e: reqwest::Error| BrokerError::RegistryUnreachable(format!("{}: {e}", self.base));
        let resp = req.send().await.map_err(unreachable)?;
        let status = StatusCode::from_u16(resp.status().as_u16()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        let body = resp.bytes().await.map_err(unreachable)?;
        Ok((status, body))
    }

    fn remote_error(name: &str, status: StatusCode, body: &[u8]) -> BrokerError {
        let parsed: Option<ErrorBody> = serde_json::from_slice(body).ok();
        match (status, parsed) {
            (StatusCode::NOT_FOUND, _) => BrokerError::NotFound(name.to_string()),
            (StatusCode::BAD_REQUEST, Some(e)) => BrokerError::InvalidRecord(e.message),
            (_, Some(e)) => BrokerError::Protocol(format!("{}: {}", e.code, e.message)),
            (s, None) => BrokerError::Protocol(format!("registry answered {s}")),
        }
    }

    pub async fn publish(&self, record: &ServiceRecord) -> Result<ServiceRecord, BrokerError> {
        record.validate()?;
        let body = serde_json::to_vec(record).expect("records serialize");
        let req = self
            .http
            .put(self.record_url(&record.name))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body);
        let (status, body) = self.send(req).await?;
        if status != StatusCode::OK {
            return Err(Self::remote_error(&record.name, status, &body));
        }
        serde_json::from_slice(&body).map_err(|e| BrokerError::Protocol(e.to_string()))
    }

    pub async fn find(&self, name: &str) -> Result<ServiceRecord, BrokerError> {
        let (status, body) = self.send(self.http.get(self.record_url(name))).await?;
        if status != StatusCode::OK {
            return Err(Self::remote_error(name, status, &body));
        }
        serde_json::from_slice(&body).map_err(|e| BrokerError::Protocol(e.to_string()))
    }

    pub async fn unpublish(&self, name: &str) -> Result<(), BrokerError> {
        let (status, body) = self.send(self.http.delete(self.record_url(name))).await?;
        if !status.is_success() {
            return Err(Self::remote_error(name, status, &body));
        }
        Ok(())
    }

    pub async fn list(&self) -> Result<Vec<ServiceRecord>, BrokerError> {
        let (status, body) = self.send(self.http.get(format!("{}/registry", self.base))).await?;
        if status != StatusCode::OK {
            return Err(Self::remote_error("", status, &body));
        }
        serde_json::from_slice(&body).map_err(|e| BrokerError::Protocol(e.to_string()))
    }
}

/// Fetches and parses the WSDL document at `wsdl_url`.
pub async fn fetch_wsdl(http: &reqwest::Client, wsdl_url: &str) -> Result<WsdlDoc, BrokerError> {
    let fail = |m: String| BrokerError::WsdlFetchFailed(format!("{wsdl_url}: {m}"));
    let resp = http.get(wsdl_url).send().await.map_err(|e| fail(e.to_string()))?;
    let status = resp.status();
    let body = resp.bytes().await.map_err(|e| fail(e.to_string()))?;
    if !status.is_success() {
        return Err(fail(format!("HTTP {status}")));
    }
    WsdlDoc::from_xml(&body).map_err(|e| fail(e.to_string()))
}

/// Finds `service` in the registry, fetches its WSDL and returns a proxy
/// built from that document alone.
pub async fn bind(registry_url: &str, service: &str) -> Result<ServiceProxy, BrokerError> {
    let client = RegistryClient::new(registry_url);
    let record = client.find(service).await?;
    let wsdl = fetch_wsdl(&client.http, &record.wsdl_url).await?;
    ServiceProxy::new(record, wsdl, client.http.clone())
}

/// A bound service. Immutable after construction and cheap to clone.
#[derive(Clone)]
pub struct ServiceProxy {
    record: ServiceRecord,
    wsdl: Arc<WsdlDoc>,
    registry: Arc<BeanRegistry>,
    http: reqwest::Client,
    timeout: Option<Duration>,
}

impl ServiceProxy {
    pub fn new(record: ServiceRecord, wsdl: WsdlDoc, http: reqwest::Client) -> Result<Self, BrokerError> {
        let registry = wsdl.registry().map_err(|e| BrokerError::WsdlFetchFailed(e.to_string()))?;
        Ok(Self {
            record,
            wsdl: Arc::new(wsdl),
            registry: Arc::new(registry),
            http,
            timeout: None,
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn record(&self) -> &ServiceRecord {
        &self.record
    }

    pub fn wsdl(&self) -> &WsdlDoc {
        &self.wsdl
    }

    pub fn registry(&self) -> &BeanRegistry {
        &self.registry
    }

    /// Calls `method` with `params`, which must match the WSDL signature.
    pub async fn invoke(&self, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, BrokerError> {
        let sig = self
            .wsdl
            .operation(method)
            .ok_or_else(|| BrokerError::MethodNotInWsdl(method.to_string()))?;
        sig.check_params(&params, &self.registry).map_err(BrokerError::TypeMismatch)?;
        let call = Envelope::Call(Call::new(self.record.name.clone(), method, params));
        let body = encode_envelope(&call, &self.registry).map_err(|e| BrokerError::TypeMismatch(e.to_string()))?;

        let mut req = self
            .http
            .post(&self.record.endpoint_url)
            .header(reqwest::header::CONTENT_TYPE, XML_CONTENT_TYPE)
            .body(body);
        if let Some(t) = self.timeout {
            req = req.timeout(t);
        }
        let unreachable = |e: reqwest::Error| BrokerError::EndpointUnreachable(format!("{}: {e}", self.record.endpoint_url));
        let resp = req.send().await.map_err(unreachable)?;
        let bytes = resp.bytes().await.map_err(unreachable)?;
        match decode_envelope(&bytes, &self.registry) {
            Ok(Envelope::Response(r)) if r.result.tag == sig.result => Ok(r.result),
            Ok(Envelope::Response(r)) => Err(BrokerError::Protocol(format!(
                "{method} returned {} instead of {}",
                r.result.tag, sig.result
            ))),
            Ok(Envelope::Fault(f)) => Err(BrokerError::RemoteFault(f)),
            Ok(Envelope::Call(_)) => Err(BrokerError::Protocol("server answered with a call".into())),
            Err(e) => Err(BrokerError::Protocol(format!("undecodable reply: {e}"))),
        }
    }
}
