//! EMIS: verifies a student's standing across departments and gates degree
//! certificates on the outcome. Also serves the JSON gateway used by the
//! registrar console.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use async_trait::async_trait;
use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response as HttpResponse};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;

use crate::broker::{self, BrokerError, RegistryClient, ServiceProxy};
use crate::depts::{AMIS_SERVICE, CAMPUS_SERVICE, HMIS_SERVICE, LMIS_SERVICE};
use crate::domain::{
    beans_from_list, AuditEntry, Bean, Certificate, DefaulterDepartment, DefaulterReport, Department, DeptStatus,
    ExamRecord, HostelStudentRecord, LibraryStudentRecord, ListItem, Overall, StudentRecord, VerificationResult,
};
use crate::envelope::{Fault, TypedValue};
use crate::net::{spawn_server, ServerHandle};
use crate::storage::{StorageError, Store};

pub const DEFAULT_CALL_TIMEOUT: Duration = Duration::from_secs(3);

/// Reason recorded when AMIS has no record of the student.
pub const NO_ADMISSION_RECORD: &str = "no admission record";

#[derive(Debug, thiserror::Error)]
pub enum EmisError {
    #[error("registry unreachable: {0}")]
    BrokerUnreachable(String),
    #[error("verification blocked for {}", .0.student_id)]
    VerificationBlocked(VerificationResult),
    #[error("student {student_id} has not passed {programme_id}")]
    ExamNotPassed { student_id: String, programme_id: String },
    #[error("no exam record for student {student_id} in {programme_id}")]
    ExamRecordMissing { student_id: String, programme_id: String },
    #[error("certificate {0} not found")]
    CertificateNotFound(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

impl EmisError {
    pub fn code(&self) -> &'static str {
        match self {
            EmisError::BrokerUnreachable(_) => "BrokerUnreachable",
            EmisError::VerificationBlocked(_) => "VerificationBlocked",
            EmisError::ExamNotPassed { .. } => "ExamNotPassed",
            EmisError::ExamRecordMissing { .. } => "ExamRecordMissing",
            EmisError::CertificateNotFound(_) => "CertificateNotFound",
            EmisError::Storage(_) => "Storage",
        }
    }
}

/// Asks one department about one student. An `Err` means the department
/// could not answer and is recorded as Unreachable.
#[async_trait]
pub trait DepartmentProbe: Send + Sync {
    fn department(&self) -> Department;
    async fn probe(&self, student_id: &str) -> Result<DeptStatus, String>;
}

async fn bind_service(registry_url: &str, service: &str, timeout: Duration) -> Result<ServiceProxy, String> {
    broker::bind(registry_url, service)
        .await
        .map(|p| p.with_timeout(timeout))
        .map_err(|e| e.to_string())
}

/// Admission standing: Clear iff AMIS knows the student.
pub struct AdmissionProbe {
    registry_url: String,
    timeout: Duration,
}

impl AdmissionProbe {
    pub fn new(registry_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            registry_url: registry_url.into(),
            timeout,
        }
    }
}

#[async_trait]
impl DepartmentProbe for AdmissionProbe {
    fn department(&self) -> Department {
        Department::Admission
    }

    async fn probe(&self, student_id: &str) -> Result<DeptStatus, String> {
        let proxy = bind_service(&self.registry_url, AMIS_SERVICE, self.timeout).await?;
        match proxy
            .invoke("getStudent", vec![TypedValue::string("student_id", student_id)])
            .await
        {
            Ok(v) => StudentRecord::from_typed(&v)
                .map(|_| DeptStatus::Clear)
                .map_err(|e| e.to_string()),
            Err(BrokerError::RemoteFault(f)) if f.detail.as_deref() == Some("StudentNotFound") => {
                Ok(DeptStatus::Defaulter {
                    reason: NO_ADMISSION_RECORD.to_string(),
                })
            }
            Err(e) => Err(e.to_string()),
        }
    }
}

/// Library or hostel standing: fetch the full defaulter report and look the
/// student up locally.
pub struct DefaulterProbe {
    registry_url: String,
    department: Department,
    timeout: Duration,
}

impl DefaulterProbe {
    pub fn new(registry_url: impl Into<String>, department: Department, timeout: Duration) -> Self {
        Self {
            registry_url: registry_url.into(),
            department,
            timeout,
        }
    }

    fn target(&self) -> (&'static str, DefaulterDepartment) {
        match self.department {
            Department::Hostel => (HMIS_SERVICE, DefaulterDepartment::Hostel),
            _ => (LMIS_SERVICE, DefaulterDepartment::Library),
        }
    }
}

#[async_trait]
impl DepartmentProbe for DefaulterProbe {
    fn department(&self) -> Department {
        self.department
    }

    async fn probe(&self, student_id: &str) -> Result<DeptStatus, String> {
        let (service, dept) = self.target();
        let proxy = bind_service(&self.registry_url, service, self.timeout).await?;
        let v = proxy.invoke("defaulterReport", vec![]).await.map_err(|e| e.to_string())?;
        let report = DefaulterReport::from_typed(dept, &v).map_err(|e| e.to_string())?;
        Ok(match report.entry_for(student_id) {
            Some(e) => DeptStatus::Defaulter {
                reason: e.reason.clone(),
            },
            None => DeptStatus::Clear,
        })
    }
}

/// Probes for `departments`, each reached through the registry at
/// `registry_url`.
pub fn broker_probes(registry_url: &str, departments: &[Department], timeout: Duration) -> Vec<Arc<dyn DepartmentProbe>> {
    departments
        .iter()
        .map(|d| -> Arc<dyn DepartmentProbe> {
            match d {
                Department::Admission => Arc::new(AdmissionProbe::new(registry_url, timeout)),
                other => Arc::new(DefaulterProbe::new(registry_url, *other, timeout)),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FanOutMode {
    #[default]
    Concurrent,
    /// One department after another. Only useful to measure the difference.
    Sequential,
}

/// Serializes issuance per (student, programme).
type IssueLock = Arc<tokio::sync::Mutex<()>>;

pub struct Orchestrator {
    store: Arc<Store>,
    registry: Option<RegistryClient>,
    probes: Vec<Arc<dyn DepartmentProbe>>,
    call_timeout: Duration,
    mode: FanOutMode,
    audit_seq: Mutex<u64>,
    issue_locks: Mutex<HashMap<(String, String), IssueLock>>,
}

pub struct OrchestratorBuilder {
    store: Arc<Store>,
    registry: Option<RegistryClient>,
    probes: Vec<Arc<dyn DepartmentProbe>>,
    call_timeout: Duration,
    mode: FanOutMode,
}

impl OrchestratorBuilder {
    /// Checked before each verification; its absence skips the check.
    pub fn registry(mut self, registry_url: &str) -> Self {
        self.registry = Some(RegistryClient::new(registry_url));
        self
    }

    pub fn probe(mut self, probe: Arc<dyn DepartmentProbe>) -> Self {
        self.probes.push(probe);
        self
    }

    pub fn probes(mut self, probes: impl IntoIterator<Item = Arc<dyn DepartmentProbe>>) -> Self {
        self.probes.extend(probes);
        self
    }

    pub fn call_timeout(mut self, t: Duration) -> Self {
        self.call_timeout = t;
        self
    }

    pub fn mode(mut self, mode: FanOutMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn build(self) -> Orchestrator {
        let last = self
            .store
            .scan::<AuditEntry>()
            .last()
            .map(|e| e.sequence)
            .unwrap_or(0);
        Orchestrator {
            store: self.store,
            registry: self.registry,
            probes: self.probes,
            call_timeout: self.call_timeout,
            mode: self.mode,
            audit_seq: Mutex::new(last),
            issue_locks: Mutex::new(HashMap::new()),
        }
    }
}

impl Orchestrator {
    pub fn builder(store: Arc<Store>) -> OrchestratorBuilder {
        OrchestratorBuilder {
            store,
            registry: None,
            probes: Vec::new(),
            call_timeout: DEFAULT_CALL_TIMEOUT,
            mode: FanOutMode::Concurrent,
        }
    }

    /// The standard setup: admission, library and hostel probes through the
    /// registry at `registry_url`.
    pub fn with_broker(store: Arc<Store>, registry_url: &str) -> Self {
        Self::builder(store)
            .registry(registry_url)
            .probes(broker_probes(registry_url, &Department::ALL, DEFAULT_CALL_TIMEOUT))
            .build()
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn registry_url(&self) -> Option<&str> {
        self.registry.as_ref().map(RegistryClient::base_url)
    }

    pub fn add_exam(&self, exam: ExamRecord) -> Result<(), EmisError> {
        Ok(self.store.put(exam)?)
    }

    pub fn audit(&self) -> Vec<AuditEntry> {
        self.store.scan()
    }

    pub fn certificate(&self, id: &str) -> Result<Certificate, EmisError> {
        self.store
            .get(id)
            .ok_or_else(|| EmisError::CertificateNotFound(id.to_string()))
    }

    async fn run_probe(&self, probe: Arc<dyn DepartmentProbe>, student_id: String) -> (Department, DeptStatus, u64) {
        let dept = probe.department();
        let started = Instant::now();
        let timeout = self.call_timeout;
        let status = match tokio::time::timeout(timeout, probe.probe(&student_id)).await {
            Ok(Ok(s)) => s,
            Ok(Err(e)) => {
                tracing::warn!(department = %dept, error = %e, "department unreachable");
                DeptStatus::Unreachable
            }
            Err(_) => {
                tracing::warn!(department = %dept, "department timed out");
                DeptStatus::Unreachable
            }
        };
        (dept, status, started.elapsed().as_millis() as u64)
    }

    /// Queries every configured department and records the outcome in the
    /// audit log. Departments that are not configured count as Unreachable.
    pub async fn verify_student(&self, student_id: &str) -> Result<VerificationResult, EmisError> {
        if let Some(reg) = &self.registry {
            reg.list()
                .await
                .map_err(|e| EmisError::BrokerUnreachable(e.to_string()))?;
        }

        let outcomes = match self.mode {
            FanOutMode::Concurrent => {
                let calls = self
                    .probes
                    .iter()
                    .map(|p| self.run_probe(p.clone(), student_id.to_string()));
                futures::future::join_all(calls).await
            }
            FanOutMode::Sequential => {
                let mut out = Vec::new();
                for p in &self.probes {
                    out.push(self.run_probe(p.clone(), student_id.to_string()).await);
                }
                out
            }
        };

        let mut per_department: BTreeMap<Department, DeptStatus> =
            Department::ALL.iter().map(|d| (*d, DeptStatus::Unreachable)).collect();
        let mut durations_ms = BTreeMap::new();
        for (dept, status, ms) in outcomes {
            per_department.insert(dept, status);
            durations_ms.insert(dept, ms);
        }
        let result = VerificationResult::new(student_id, per_department);

        let mut seq = self.audit_seq.lock().unwrap_or_else(|e| e.into_inner());
        let entry = AuditEntry {
            sequence: *seq + 1,
            student_id: student_id.to_string(),
            timestamp: Utc::now(),
            result: result.clone(),
            durations_ms,
        };
        self.store.put(entry)?;
        *seq += 1;
        Ok(result)
    }

    fn issue_lock(&self, student_id: &str, programme_id: &str) -> IssueLock {
        self.issue_locks
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry((student_id.to_string(), programme_id.to_string()))
            .or_default()
            .clone()
    }

    fn existing_certificate(&self, student_id: &str, programme_id: &str) -> Option<Certificate> {
        self.store
            .scan::<Certificate>()
            .into_iter()
            .find(|c| c.student_id == student_id && c.programme_id == programme_id)
    }

    /// Verifies afresh and issues a certificate when every department is
    /// clear and the exam is passed. Returns the certificate and whether it
    /// was created by this call.
    pub async fn issue(&self, student_id: &str, programme_id: &str) -> Result<(Certificate, bool), EmisError> {
        let lock = self.issue_lock(student_id, programme_id);
        let _guard = lock.lock().await;

        let result = self.verify_student(student_id).await?;
        if result.overall != Overall::Clear {
            return Err(EmisError::VerificationBlocked(result));
        }
        let exam = self
            .store
            .get::<ExamRecord>(&ExamRecord::key_for(student_id, programme_id))
            .ok_or_else(|| EmisError::ExamRecordMissing {
                student_id: student_id.to_string(),
                programme_id: programme_id.to_string(),
            })?;
        if !exam.passed {
            return Err(EmisError::ExamNotPassed {
                student_id: student_id.to_string(),
                programme_id: programme_id.to_string(),
            });
        }
        if let Some(c) = self.existing_certificate(student_id, programme_id) {
            return Ok((c, false));
        }
        let cert = Certificate {
            certificate_id: uuid::Uuid::new_v4().to_string(),
            student_id: student_id.to_string(),
            programme_id: programme_id.to_string(),
            issued_at: Utc::now(),
            verification: result,
        };
        self.store.put(cert.clone())?;
        Ok((cert, true))
    }

    pub async fn issue_certificate(&self, student_id: &str, programme_id: &str) -> Result<Certificate, EmisError> {
        self.issue(student_id, programme_id).await.map(|(c, _)| c)
    }
}

// ---------------------------------------------------------------------------
// JSON gateway

#[derive(Debug, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub detail: serde_json::Value,
}

fn api_error(status: StatusCode, code: &str, message: impl Into<String>, detail: serde_json::Value) -> HttpResponse {
    (
        status,
        Json(ApiError {
            code: code.to_string(),
            message: message.into(),
            detail,
        }),
    )
        .into_response()
}

fn emis_error(e: EmisError) -> HttpResponse {
    let code = e.code();
    match e {
        EmisError::VerificationBlocked(r) => {
            let detail = serde_json::to_value(&r).unwrap_or_default();
            api_error(StatusCode::CONFLICT, code, format!("verification blocked for {}", r.student_id), detail)
        }
        EmisError::ExamNotPassed { .. } => api_error(StatusCode::CONFLICT, code, e.to_string(), serde_json::Value::Null),
        EmisError::ExamRecordMissing { .. } | EmisError::CertificateNotFound(_) => {
            api_error(StatusCode::NOT_FOUND, code, e.to_string(), serde_json::Value::Null)
        }
        EmisError::BrokerUnreachable(_) => {
            api_error(StatusCode::SERVICE_UNAVAILABLE, code, e.to_string(), serde_json::Value::Null)
        }
        EmisError::Storage(_) => api_error(StatusCode::INTERNAL_SERVER_ERROR, code, e.to_string(), serde_json::Value::Null),
    }
}

/// Maps a failed remote call. Department faults carry their error code in
/// the fault detail.
fn broker_error(e: BrokerError) -> HttpResponse {
    match e {
        BrokerError::RemoteFault(f) => fault_error(f),
        BrokerError::NotFound(name) => api_error(
            StatusCode::BAD_GATEWAY,
            "Unreachable",
            format!("service {name} is not registered"),
            serde_json::Value::Null,
        ),
        BrokerError::RegistryUnreachable(_) => {
            api_error(StatusCode::SERVICE_UNAVAILABLE, "BrokerUnreachable", e.to_string(), serde_json::Value::Null)
        }
        other => api_error(StatusCode::BAD_GATEWAY, "Unreachable", other.to_string(), serde_json::Value::Null),
    }
}

fn fault_error(f: Fault) -> HttpResponse {
    let code = f.detail.clone().unwrap_or_else(|| f.code.as_str().to_string());
    let status = match code.as_str() {
        "StudentNotFound" | "NotRegistered" | "BookNotFound" | "RoomNotFound" => StatusCode::NOT_FOUND,
        "AlreadyRegistered" | "DuplicateStudent" | "BookAlreadyIssued" | "RoomFull" | "AlreadyAllotted" => {
            StatusCode::CONFLICT
        }
        "AmisUnreachable" => StatusCode::BAD_GATEWAY,
        _ => match f.code {
            crate::envelope::FaultCode::Server => StatusCode::BAD_GATEWAY,
            _ => StatusCode::BAD_REQUEST,
        },
    };
    api_error(status, &code, f.message, serde_json::Value::Null)
}

#[derive(Clone)]
struct GatewayState {
    orch: Arc<Orchestrator>,
    registry_url: String,
}

impl GatewayState {
    async fn call(&self, service: &str, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, HttpResponse> {
        let proxy = broker::bind(&self.registry_url, service)
            .await
            .map_err(broker_error)?
            .with_timeout(DEFAULT_CALL_TIMEOUT * 2);
        proxy.invoke(method, params).await.map_err(broker_error)
    }
}

fn decode_failed(e: impl std::fmt::Display) -> HttpResponse {
    api_error(StatusCode::BAD_GATEWAY, "Unreachable", format!("bad reply: {e}"), serde_json::Value::Null)
}

async fn list_students(State(st): State<GatewayState>) -> HttpResponse {
    match st.call(AMIS_SERVICE, "listStudents", vec![]).await {
        Ok(v) => match beans_from_list::<ListItem>(&v) {
            Ok(items) => Json(items).into_response(),
            Err(e) => decode_failed(e),
        },
        Err(r) => r,
    }
}

async fn get_student(State(st): State<GatewayState>, Path(id): Path<String>) -> HttpResponse {
    match st
        .call(AMIS_SERVICE, "getStudent", vec![TypedValue::string("student_id", id)])
        .await
    {
        Ok(v) => match StudentRecord::from_typed(&v) {
            Ok(s) => Json(s).into_response(),
            Err(e) => decode_failed(e),
        },
        Err(r) => r,
    }
}

async fn register(State(st): State<GatewayState>, Path((dept, id)): Path<(String, String)>) -> HttpResponse {
    let service = match dept.as_str() {
        "library" => LMIS_SERVICE,
        "hostel" => HMIS_SERVICE,
        "campus" => CAMPUS_SERVICE,
        other => {
            return api_error(
                StatusCode::NOT_FOUND,
                "UnknownDepartment",
                format!("cannot register with {other}; expected library, hostel or campus"),
                serde_json::Value::Null,
            )
        }
    };
    let v = match st
        .call(service, "registerStudent", vec![TypedValue::string("student_id", id)])
        .await
    {
        Ok(v) => v,
        Err(r) => return r,
    };
    let body = match dept.as_str() {
        "library" => LibraryStudentRecord::from_typed(&v).map(|r| serde_json::to_value(r).unwrap_or_default()),
        "hostel" => HostelStudentRecord::from_typed(&v).map(|r| serde_json::to_value(r).unwrap_or_default()),
        _ => StudentRecord::from_typed(&v).map(|r| serde_json::to_value(r).unwrap_or_default()),
    };
    match body {
        Ok(b) => (StatusCode::CREATED, Json(b)).into_response(),
        Err(e) => decode_failed(e),
    }
}

async fn verify(State(st): State<GatewayState>, Path(id): Path<String>) -> HttpResponse {
    match st.orch.verify_student(&id).await {
        Ok(r) => Json(r).into_response(),
        Err(e) => emis_error(e),
    }
}

#[derive(Deserialize)]
struct IssueRequest {
    student_id: String,
    programme_id: String,
}

async fn issue(State(st): State<GatewayState>, body: Bytes) -> HttpResponse {
    let req: IssueRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return api_error(StatusCode::BAD_REQUEST, "BadRequest", e.to_string(), serde_json::Value::Null),
    };
    match st.orch.issue(&req.student_id, &req.programme_id).await {
        Ok((c, true)) => (StatusCode::CREATED, Json(c)).into_response(),
        Ok((c, false)) => Json(c).into_response(),
        Err(e) => emis_error(e),
    }
}

async fn get_certificate(State(st): State<GatewayState>, Path(id): Path<String>) -> HttpResponse {
    match st.orch.certificate(&id) {
        Ok(c) => Json(c).into_response(),
        Err(e) => emis_error(e),
    }
}

async fn audit(State(st): State<GatewayState>) -> HttpResponse {
    Json(st.orch.audit()).into_response()
}

pub fn gateway_router(orch: Arc<Orchestrator>, registry_url: &str) -> Router {
    Router::new()
        .route("/api/students", get(list_students))
        .route("/api/students/{id}", get(get_student))
        .route("/api/register/{dept}/{id}", post(register))
        .route("/api/verify/{id}", post(verify))
        .route("/api/certificates", post(issue))
        .route("/api/certificates/{id}", get(get_certificate))
        .route("/api/audit", get(audit))
        .fallback(|| async { api_error(StatusCode::NOT_FOUND, "NotFound", "no such endpoint", serde_json::Value::Null) })
        .with_state(GatewayState {
            orch,
            registry_url: registry_url.trim_end_matches('/').to_string(),
        })
}

pub fn serve_gateway(orch: Arc<Orchestrator>, registry_url: &str, listener: TcpListener) -> ServerHandle {
    spawn_server(listener, gateway_router(orch, registry_url))
}

// ---------------------------------------------------------------------------
// Gateway client

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("gateway unreachable: {0}")]
    Unreachable(String),
    #[error("{}: {}", .0.code, .0.message)]
    Api(ApiError),
    #[error("unexpected reply: {0}")]
    Protocol(String),
}

/// HTTP client for the JSON gateway.
#[derive(Clone)]
pub struct GatewayClient {
    base: String,
    http: reqwest::Client,
}

impl GatewayClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: reqwest::Client::new(),
        }
    }

    async fn send<T: serde::de::DeserializeOwned>(&self, req: reqwest::RequestBuilder) -> Result<T, GatewayError> {
        let unreachable = |e: reqwest::Error| GatewayError::Unreachable(format!("{}: {e}", self.base));
        let resp = req.send().await.map_err(unreachable)?;
        let ok = resp.status().is_success();
        let body = resp.bytes().await.map_err(unreachable)?;
        if ok {
            serde_json::from_slice(&body).map_err(|e| GatewayError::Protocol(e.to_string()))
        } else {
            let e: ApiError = serde_json::from_slice(&body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
            Err(GatewayError::Api(e))
        }
    }

    pub async fn students(&self) -> Result<Vec<ListItem>, GatewayError> {
        self.send(self.http.get(format!("{}/api/students", self.base))).await
    }

    pub async fn student(&self, id: &str) -> Result<StudentRecord, GatewayError> {
        self.send(self.http.get(format!("{}/api/students/{id}", self.base))).await
    }

    pub async fn register(&self, dept: &str, id: &str) -> Result<serde_json::Value, GatewayError> {
        self.send(self.http.post(format!("{}/api/register/{dept}/{id}", self.base)))
            .await
    }

    pub async fn verify(&self, id: &str) -> Result<VerificationResult, GatewayError> {
        self.send(self.http.post(format!("{}/api/verify/{id}", self.base))).await
    }

    pub async fn issue(&self, student_id: &str, programme_id: &str) -> Result<Certificate, GatewayError> {
        let body = serde_json::json!({ "student_id": student_id, "programme_id": programme_id });
        let req = self
            .http
            .post(format!("{}/api/certificates", self.base))
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_string());
        self.send(req).await
    }

    pub async fn certificate(&self, id: &str) -> Result<Certificate, GatewayError> {
        self.send(self.http.get(format!("{}/api/certificates/{id}", self.base)))
            .await
    }

    pub async fn audit(&self) -> Result<Vec<AuditEntry>, GatewayError> {
        self.send(self.http.get(format!("{}/api/audit", self.base))).await
    }
}
