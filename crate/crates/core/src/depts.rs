//! Departmental services: admission (AMIS), library (LMIS), hostel (HMIS)
//! and campus registration, each over its own store.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use chrono::{NaiveDate, Utc};
use serde::de::DeserializeOwned;

use crate::broker::{self, BrokerError};
use crate::domain::{
    validate_record, Bean, BookIssue, BookRecord, CampusStudentRecord, DefaulterDepartment, DefaulterReport,
    DepartmentRecord, ExamRecord, HostelStudentRecord, LibraryStudentRecord, ListItem, ProgrammeRecord,
    RoomAllotment, RoomRecord, StudentRecord, Validate,
};
use crate::engine::{OperationSig, ServiceImpl};
use crate::envelope::{BeanSchema, Fault, FaultCode, TypeTag, TypedValue};
use crate::storage::{typed_get, typed_scan, StorageError, StorageFormat, Store};

pub const AMIS_SERVICE: &str = "AdmissionDataBaseManagerService";
pub const LMIS_SERVICE: &str = "LibraryDataBaseManagerService";
pub const HMIS_SERVICE: &str = "HostelDataBaseManagerService";
pub const CAMPUS_SERVICE: &str = "CampusDataBaseManagerService";

pub const AMIS_CLASS: &str = "AdmissionDataBaseManager";
pub const LMIS_CLASS: &str = "LibraryDataBaseManager";
pub const HMIS_CLASS: &str = "HostelDataBaseManager";
pub const CAMPUS_CLASS: &str = "CampusDataBaseManager";

#[derive(Debug, thiserror::Error)]
pub enum DeptError {
    #[error("student {0} already exists")]
    DuplicateStudent(String),
    #[error("record is invalid: {}", .0.join("; "))]
    ValidationFailed(Vec<String>),
    #[error("student {0} not found")]
    StudentNotFound(String),
    #[error("student {0} is already registered")]
    AlreadyRegistered(String),
    #[error("admission service unreachable: {0}")]
    AmisUnreachable(String),
    #[error("book {0} not found")]
    BookNotFound(String),
    #[error("book {0} is already issued")]
    BookAlreadyIssued(String),
    #[error("student {student} has no outstanding issue of book {book}")]
    NoOutstandingIssue { student: String, book: String },
    #[error("student {0} is not registered")]
    NotRegistered(String),
    #[error("room {0} not found")]
    RoomNotFound(String),
    #[error("room {0} is full")]
    RoomFull(String),
    #[error("student {0} already has an open room allotment")]
    AlreadyAllotted(String),
    #[error("student {0} has no open room allotment")]
    NoOpenAllotment(String),
    #[error(transparent)]
    Storage(#[from] StorageError),
}

impl DeptError {
    pub fn code(&self) -> &'static str {
        match self {
            DeptError::DuplicateStudent(_) => "DuplicateStudent",
            DeptError::ValidationFailed(_) => "ValidationFailed",
            DeptError::StudentNotFound(_) => "StudentNotFound",
            DeptError::AlreadyRegistered(_) => "AlreadyRegistered",
            DeptError::AmisUnreachable(_) => "AmisUnreachable",
            DeptError::BookNotFound(_) => "BookNotFound",
            DeptError::BookAlreadyIssued(_) => "BookAlreadyIssued",
            DeptError::NoOutstandingIssue { .. } => "NoOutstandingIssue",
            DeptError::NotRegistered(_) => "NotRegistered",
            DeptError::RoomNotFound(_) => "RoomNotFound",
            DeptError::RoomFull(_) => "RoomFull",
            DeptError::AlreadyAllotted(_) => "AlreadyAllotted",
            DeptError::NoOpenAllotment(_) => "NoOpenAllotment",
            DeptError::Storage(_) => "Storage",
        }
    }

    /// Domain errors become client faults whose detail is the error code;
    /// storage failures and an unreachable AMIS are server faults.
    pub fn to_fault(&self) -> Fault {
        let code = match self {
            DeptError::Storage(_) | DeptError::AmisUnreachable(_) => FaultCode::Server,
            _ => FaultCode::Client,
        };
        Fault::new(code, self.to_string()).with_detail(self.code())
    }
}

fn check_valid<R: Validate>(r: &R) -> Result<(), DeptError> {
    validate_record(r).map_err(|v| DeptError::ValidationFailed(v.iter().map(ToString::to_string).collect()))
}

/// Where registration services look students up.
#[async_trait]
pub trait StudentDirectory: Send + Sync {
    async fn fetch_student(&self, student_id: &str) -> Result<StudentRecord, DeptError>;
}

/// Looks students up in AMIS through the registry: find, fetch WSDL, bind,
/// then `getStudent`.
pub struct BrokerDirectory {
    registry_url: String,
    service: String,
    timeout: Duration,
}

impl BrokerDirectory {
    pub fn new(registry_url: impl Into<String>) -> Self {
        Self {
            registry_url: registry_url.into(),
            service: AMIS_SERVICE.to_string(),
            timeout: Duration::from_secs(5),
        }
    }
}

#[async_trait]
impl StudentDirectory for BrokerDirectory {
    async fn fetch_student(&self, student_id: &str) -> Result<StudentRecord, DeptError> {
        let unreachable = |e: BrokerError| DeptError::AmisUnreachable(e.to_string());
        let proxy = broker::bind(&self.registry_url, &self.service)
            .await
            .map_err(unreachable)?
            .with_timeout(self.timeout);
        match proxy
            .invoke("getStudent", vec![TypedValue::string("student_id", student_id)])
            .await
        {
            Ok(v) => StudentRecord::from_typed(&v).map_err(|e| DeptError::AmisUnreachable(e.to_string())),
            Err(BrokerError::RemoteFault(f)) if f.detail.as_deref() == Some("StudentNotFound") => {
                Err(DeptError::StudentNotFound(student_id.to_string()))
            }
            Err(e) => Err(unreachable(e)),
        }
    }
}

fn today() -> NaiveDate {
    Utc::now().date_naive()
}

// ---------------------------------------------------------------------------
// AMIS

pub struct Admission {
    store: Arc<Store>,
}

impl Admission {
    pub fn new(store: Arc<Store>) -> Self {
        Self { store }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn add_student(&self, r: StudentRecord) -> Result<String, DeptError> {
        check_valid(&r)?;
        let mut w = self.store.write();
        if typed_get::<StudentRecord>(w.as_ref(), &r.student_id).is_some() {
            return Err(DeptError::DuplicateStudent(r.student_id));
        }
        let id = r.student_id.clone();
        w.put(crate::storage::Storable::into_record(r))?;
        Ok(id)
    }

    pub fn get_student(&self, student_id: &str) -> Result<StudentRecord, DeptError> {
        self.store
            .get(student_id)
            .ok_or_else(|| DeptError::StudentNotFound(student_id.to_string()))
    }

    pub fn list_students(&self) -> Vec<ListItem> {
        self.store
            .scan::<StudentRecord>()
            .into_iter()
            .map(|s| ListItem {
                label: s.full_name(),
                id: s.student_id,
            })
            .collect()
    }

    pub fn list_departments(&self) -> Vec<DepartmentRecord> {
        self.store.scan()
    }

    pub fn list_programmes(&self) -> Vec<ProgrammeRecord> {
        self.store.scan()
    }

    pub fn add_department(&self, r: DepartmentRecord) -> Result<(), DeptError> {
        check_valid(&r)?;
        Ok(self.store.put(r)?)
    }

    /// The programme's department must already exist.
    pub fn add_programme(&self, r: ProgrammeRecord) -> Result<(), DeptError> {
        check_valid(&r)?;
        let mut w = self.store.write();
        if typed_get::<DepartmentRecord>(w.as_ref(), &r.department_id).is_none() {
            return Err(DeptError::ValidationFailed(vec![format!(
                "department_id: {} does not exist",
                r.department_id
            )]));
        }
        w.put(crate::storage::Storable::into_record(r))?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// LMIS

pub struct Library {
    store: Arc<Store>,
    directory: Arc<dyn StudentDirectory>,
}

impl Library {
    pub fn new(store: Arc<Store>, directory: Arc<dyn StudentDirectory>) -> Self {
        Self { store, directory }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn add_book(&self, b: BookRecord) -> Result<(), DeptError> {
        check_valid(&b)?;
        Ok(self.store.put(b)?)
    }

    pub fn books(&self) -> Vec<BookRecord> {
        self.store.scan()
    }

    pub async fn register_student(&self, student_id: &str) -> Result<LibraryStudentRecord, DeptError> {
        if self.store.get::<LibraryStudentRecord>(student_id).is_some() {
            return Err(DeptError::AlreadyRegistered(student_id.to_string()));
        }
        let student = self.directory.fetch_student(student_id).await?;
        let mut w = self.store.write();
        if typed_get::<LibraryStudentRecord>(w.as_ref(), &student.student_id).is_some() {
            return Err(DeptError::AlreadyRegistered(student.student_id));
        }
        let rec = LibraryStudentRecord::new(student.student_id);
        w.put(crate::storage::Storable::into_record(rec.clone()))?;
        Ok(rec)
    }

    pub fn student_record(&self, student_id: &str) -> Result<LibraryStudentRecord, DeptError> {
        self.store
            .get(student_id)
            .ok_or_else(|| DeptError::NotRegistered(student_id.to_string()))
    }

    pub fn issue_book(&self, student_id: &str, book_id: &str) -> Result<(), DeptError> {
        self.issue_book_on(student_id, book_id, today())
    }

    pub fn issue_book_on(&self, student_id: &str, book_id: &str, date: NaiveDate) -> Result<(), DeptError> {
        let mut w = self.store.write();
        let mut rec = typed_get::<LibraryStudentRecord>(w.as_ref(), student_id)
            .ok_or_else(|| DeptError::NotRegistered(student_id.to_string()))?;
        if typed_get::<BookRecord>(w.as_ref(), book_id).is_none() {
            return Err(DeptError::BookNotFound(book_id.to_string()));
        }
        let taken = typed_scan::<LibraryStudentRecord>(w.as_ref())
            .iter()
            .flat_map(|r| &r.issued_books)
            .any(|i| i.book_id == book_id && i.is_outstanding());
        if taken {
            return Err(DeptError::BookAlreadyIssued(book_id.to_string()));
        }
        rec.issued_books.push(BookIssue {
            book_id: book_id.to_string(),
            issue_date: date,
            return_date: None,
        });
        w.put(crate::storage::Storable::into_record(rec))?;
        Ok(())
    }

    pub fn return_book(&self, student_id: &str, book_id: &str) -> Result<(), DeptError> {
        self.return_book_on(student_id, book_id, today())
    }

    pub fn return_book_on(&self, student_id: &str, book_id: &str, date: NaiveDate) -> Result<(), DeptError> {
        let mut w = self.store.write();
        let mut rec = typed_get::<LibraryStudentRecord>(w.as_ref(), student_id)
            .ok_or_else(|| DeptError::NotRegistered(student_id.to_string()))?;
        if typed_get::<BookRecord>(w.as_ref(), book_id).is_none() {
            return Err(DeptError::BookNotFound(book_id.to_string()));
        }
        let issue = rec
            .issued_books
            .iter_mut()
            .find(|i| i.book_id == book_id && i.is_outstanding())
            .ok_or_else(|| DeptError::NoOutstandingIssue {
                student: student_id.to_string(),
                book: book_id.to_string(),
            })?;
        // a return can't predate its issue
        issue.return_date = Some(date.max(issue.issue_date));
        w.put(crate::storage::Storable::into_record(rec))?;
        Ok(())
    }

    pub fn defaulter_report(&self) -> DefaulterReport {
        let records = self.store.scan::<LibraryStudentRecord>();
        DefaulterReport::from_records(DefaulterDepartment::Library, &records)
    }
}

// ---------------------------------------------------------------------------
// HMIS

pub struct Hostel {
    store: Arc<Store>,
    directory: Arc<dyn StudentDirectory>,
}

impl Hostel {
    pub fn new(store: Arc<Store>, directory: Arc<dyn StudentDirectory>) -> Self {
        Self { store, directory }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn add_room(&self, r: RoomRecord) -> Result<(), DeptError> {
        check_valid(&r)?;
        Ok(self.store.put(r)?)
    }

    pub fn rooms(&self) -> Vec<RoomRecord> {
        self.store.scan()
    }

    pub async fn register_student(&self, student_id: &str) -> Result<HostelStudentRecord, DeptError> {
        if self.store.get::<HostelStudentRecord>(student_id).is_some() {
            return Err(DeptError::AlreadyRegistered(student_id.to_string()));
        }
        let student = self.directory.fetch_student(student_id).await?;
        let mut w = self.store.write();
        if typed_get::<HostelStudentRecord>(w.as_ref(), &student.student_id).is_some() {
            return Err(DeptError::AlreadyRegistered(student.student_id));
        }
        let rec = HostelStudentRecord::new(student.student_id);
        w.put(crate::storage::Storable::into_record(rec.clone()))?;
        Ok(rec)
    }

    pub fn student_record(&self, student_id: &str) -> Result<HostelStudentRecord, DeptError> {
        self.store
            .get(student_id)
            .ok_or_else(|| DeptError::NotRegistered(student_id.to_string()))
    }

    /// Students currently holding an open allotment in `room_id`.
    pub fn occupancy(&self, room_id: &str) -> usize {
        occupancy(&self.store.scan::<HostelStudentRecord>(), room_id)
    }

    pub fn allot_room(&self, student_id: &str, room_id: &str) -> Result<(), DeptError> {
        self.allot_room_on(student_id, room_id, today())
    }

    pub fn allot_room_on(&self, student_id: &str, room_id: &str, date: NaiveDate) -> Result<(), DeptError> {
        let mut w = self.store.write();
        let mut rec = typed_get::<HostelStudentRecord>(w.as_ref(), student_id)
            .ok_or_else(|| DeptError::NotRegistered(student_id.to_string()))?;
        let room = typed_get::<RoomRecord>(w.as_ref(), room_id)
            .ok_or_else(|| DeptError::RoomNotFound(room_id.to_string()))?;
        if rec.open_allotment().is_some() {
            return Err(DeptError::AlreadyAllotted(student_id.to_string()));
        }
        let used = occupancy(&typed_scan::<HostelStudentRecord>(w.as_ref()), room_id);
        if used as i64 >= room.capacity {
            return Err(DeptError::RoomFull(room_id.to_string()));
        }
        rec.allotments.push(RoomAllotment {
            room_id: room_id.to_string(),
            allot_date: date,
            vacate_date: None,
        });
        w.put(crate::storage::Storable::into_record(rec))?;
        Ok(())
    }

    pub fn vacate_room(&self, student_id: &str) -> Result<(), DeptError> {
        self.vacate_room_on(student_id, today())
    }

    pub fn vacate_room_on(&self, student_id: &str, date: NaiveDate) -> Result<(), DeptError> {
        let mut w = self.store.write();
        let mut rec = typed_get::<HostelStudentRecord>(w.as_ref(), student_id)
            .ok_or_else(|| DeptError::NotRegistered(student_id.to_string()))?;
        let open = rec
            .allotments
            .iter_mut()
            .find(|a| a.is_open())
            .ok_or_else(|| DeptError::NoOpenAllotment(student_id.to_string()))?;
        open.vacate_date = Some(date.max(open.allot_date));
        w.put(crate::storage::Storable::into_record(rec))?;
        Ok(())
    }

    pub fn defaulter_report(&self) -> DefaulterReport {
        let records = self.store.scan::<HostelStudentRecord>();
        DefaulterReport::from_records(DefaulterDepartment::Hostel, &records)
    }
}

fn occupancy(records: &[HostelStudentRecord], room_id: &str) -> usize {
    records
        .iter()
        .filter(|r| r.open_allotment().is_some_and(|a| a.room_id == room_id))
        .count()
}

// ---------------------------------------------------------------------------
// Campus

pub struct Campus {
    store: Arc<Store>,
    directory: Arc<dyn StudentDirectory>,
}

impl Campus {
    pub fn new(store: Arc<Store>, directory: Arc<dyn StudentDirectory>) -> Self {
        Self { store, directory }
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Copies the student's admission record into the campus store.
    pub async fn register_student(&self, student_id: &str) -> Result<StudentRecord, DeptError> {
        if self.store.get::<CampusStudentRecord>(student_id).is_some() {
            return Err(DeptError::AlreadyRegistered(student_id.to_string()));
        }
        let student = self.directory.fetch_student(student_id).await?;
        let mut w = self.store.write();
        if typed_get::<CampusStudentRecord>(w.as_ref(), &student.student_id).is_some() {
            return Err(DeptError::AlreadyRegistered(student.student_id));
        }
        w.put(crate::storage::Storable::into_record(CampusStudentRecord(student.clone())))?;
        Ok(student)
    }

    pub fn get_student(&self, student_id: &str) -> Result<StudentRecord, DeptError> {
        self.store
            .get::<CampusStudentRecord>(student_id)
            .map(|c| c.0)
            .ok_or_else(|| DeptError::NotRegistered(student_id.to_string()))
    }
}

// ---------------------------------------------------------------------------
// Engine bindings

fn param_str<'a>(params: &'a [TypedValue], name: &str) -> Result<&'a str, Fault> {
    params
        .iter()
        .find(|p| p.name == name)
        .and_then(TypedValue::as_str)
        .ok_or_else(|| Fault::new(FaultCode::TypeMismatch, format!("missing string parameter {name}")))
}

fn unknown_method(method: &str) -> Fault {
    Fault::new(FaultCode::MethodNotFound, format!("no method {method}"))
}

fn ok() -> TypedValue {
    TypedValue::bool("result", true)
}

fn sid() -> (&'static str, TypeTag) {
    ("student_id", TypeTag::STRING)
}

fn list_item_support() -> Vec<(String, BeanSchema)> {
    vec![(ListItem::QNAME.to_string(), ListItem::schema())]
}

#[async_trait]
impl ServiceImpl for Admission {
    fn class_name(&self) -> &str {
        AMIS_CLASS
    }

    fn operations(&self) -> Vec<OperationSig> {
        let student = TypeTag::bean(StudentRecord::QNAME);
        vec![
            OperationSig::new("getStudent", [sid()], student.clone()),
            OperationSig::new("listStudents", Vec::<(String, TypeTag)>::new(), TypeTag::LIST),
            OperationSig::new("addStudent", [("student", student)], TypeTag::STRING),
            OperationSig::new("listDepartments", Vec::<(String, TypeTag)>::new(), TypeTag::LIST),
            OperationSig::new("listProgrammes", Vec::<(String, TypeTag)>::new(), TypeTag::LIST),
        ]
    }

    fn support_beans(&self) -> Vec<(String, BeanSchema)> {
        list_item_support()
    }

    async fn invoke(&self, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, Fault> {
        let fault = |e: DeptError| e.to_fault();
        match method {
            "getStudent" => {
                let s = self.get_student(param_str(&params, "student_id")?).map_err(fault)?;
                Ok(s.to_typed("result"))
            }
            "listStudents" => Ok(crate::domain::beans_to_list("result", "item", &self.list_students())),
            "addStudent" => {
                let r = StudentRecord::from_typed(&params[0])
                    .map_err(|e| Fault::new(FaultCode::TypeMismatch, e.to_string()))?;
                let id = self.add_student(r).map_err(fault)?;
                Ok(TypedValue::string("result", id))
            }
            "listDepartments" => Ok(crate::domain::beans_to_list("result", "item", &self.list_departments())),
            "listProgrammes" => Ok(crate::domain::beans_to_list("result", "item", &self.list_programmes())),
            other => Err(unknown_method(other)),
        }
    }
}

#[async_trait]
impl ServiceImpl for Library {
    fn class_name(&self) -> &str {
        LMIS_CLASS
    }

    fn operations(&self) -> Vec<OperationSig> {
        let rec = TypeTag::bean(LibraryStudentRecord::QNAME);
        let book = ("book_id", TypeTag::STRING);
        vec![
            OperationSig::new("registerStudent", [sid()], rec.clone()),
            OperationSig::new("getStudentRecord", [sid()], rec),
            OperationSig::new("issueBook", [sid(), book.clone()], TypeTag::BOOL),
            OperationSig::new("returnBook", [sid(), book], TypeTag::BOOL),
            OperationSig::new("defaulterReport", Vec::<(String, TypeTag)>::new(), TypeTag::LIST),
        ]
    }

    fn support_beans(&self) -> Vec<(String, BeanSchema)> {
        list_item_support()
    }

    async fn invoke(&self, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, Fault> {
        let fault = |e: DeptError| e.to_fault();
        match method {
            "registerStudent" => {
                let r = self
                    .register_student(param_str(&params, "student_id")?)
                    .await
                    .map_err(fault)?;
                Ok(r.to_typed("result"))
            }
            "getStudentRecord" => {
                let r = self.student_record(param_str(&params, "student_id")?).map_err(fault)?;
                Ok(r.to_typed("result"))
            }
            "issueBook" => {
                self.issue_book(param_str(&params, "student_id")?, param_str(&params, "book_id")?)
                    .map_err(fault)?;
                Ok(ok())
            }
            "returnBook" => {
                self.return_book(param_str(&params, "student_id")?, param_str(&params, "book_id")?)
                    .map_err(fault)?;
                Ok(ok())
            }
            "defaulterReport" => Ok(self.defaulter_report().to_typed("result")),
            other => Err(unknown_method(other)),
        }
    }
}

#[async_trait]
impl ServiceImpl for Hostel {
    fn class_name(&self) -> &str {
        HMIS_CLASS
    }

    fn operations(&self) -> Vec<OperationSig> {
        let rec = TypeTag::bean(HostelStudentRecord::QNAME);
        vec![
            OperationSig::new("registerStudent", [sid()], rec.clone()),
            OperationSig::new("getStudentRecord", [sid()], rec),
            OperationSig::new("allotRoom", [sid(), ("room_id", TypeTag::STRING)], TypeTag::BOOL),
            OperationSig::new("vacateRoom", [sid()], TypeTag::BOOL),
            OperationSig::new("defaulterReport", Vec::<(String, TypeTag)>::new(), TypeTag::LIST),
        ]
    }

    fn support_beans(&self) -> Vec<(String, BeanSchema)> {
        list_item_support()
    }

    async fn invoke(&self, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, Fault> {
        let fault = |e: DeptError| e.to_fault();
        match method {
            "registerStudent" => {
                let r = self
                    .register_student(param_str(&params, "student_id")?)
                    .await
                    .map_err(fault)?;
                Ok(r.to_typed("result"))
            }
            "getStudentRecord" => {
                let r = self.student_record(param_str(&params, "student_id")?).map_err(fault)?;
                Ok(r.to_typed("result"))
            }
            "allotRoom" => {
                self.allot_room(param_str(&params, "student_id")?, param_str(&params, "room_id")?)
                    .map_err(fault)?;
                Ok(ok())
            }
            "vacateRoom" => {
                self.vacate_room(param_str(&params, "student_id")?).map_err(fault)?;
                Ok(ok())
            }
            "defaulterReport" => Ok(self.defaulter_report().to_typed("result")),
            other => Err(unknown_method(other)),
        }
    }
}

#[async_trait]
impl ServiceImpl for Campus {
    fn class_name(&self) -> &str {
        CAMPUS_CLASS
    }

    fn operations(&self) -> Vec<OperationSig> {
        let student = TypeTag::bean(StudentRecord::QNAME);
        vec![
            OperationSig::new("registerStudent", [sid()], student.clone()),
            OperationSig::new("getStudent", [sid()], student),
        ]
    }

    async fn invoke(&self, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, Fault> {
        let fault = |e: DeptError| e.to_fault();
        match method {
            "registerStudent" => {
                let r = self
                    .register_student(param_str(&params, "student_id")?)
                    .await
                    .map_err(fault)?;
                Ok(r.to_typed("result"))
            }
            "getStudent" => {
                let r = self.get_student(param_str(&params, "student_id")?).map_err(fault)?;
                Ok(r.to_typed("result"))
            }
            other => Err(unknown_method(other)),
        }
    }
}

/// Wraps a service so every call first sleeps for `delay`. Used to inject
/// latency in fan-out tests.
pub struct Delayed {
    inner: Arc<dyn ServiceImpl>,
    delay: Duration,
}

impl Delayed {
    pub fn new(inner: Arc<dyn ServiceImpl>, delay: Duration) -> Self {
        Self { inner, delay }
    }
}

#[async_trait]
impl ServiceImpl for Delayed {
    fn class_name(&self) -> &str {
        self.inner.class_name()
    }

    fn operations(&self) -> Vec<OperationSig> {
        self.inner.operations()
    }

    fn support_beans(&self) -> Vec<(String, BeanSchema)> {
        self.inner.support_beans()
    }

    async fn invoke(&self, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, Fault> {
        tokio::time::sleep(self.delay).await;
        self.inner.invoke(method, params).await
    }
}

// ---------------------------------------------------------------------------
// Service kinds and seed data

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ServiceKind {
    Amis,
    Lmis,
    Hmis,
    Campus,
    Emis,
}

impl ServiceKind {
    pub const ALL: [ServiceKind; 5] = [
        ServiceKind::Amis,
        ServiceKind::Lmis,
        ServiceKind::Hmis,
        ServiceKind::Campus,
        ServiceKind::Emis,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ServiceKind::Amis => "amis",
            ServiceKind::Lmis => "lmis",
            ServiceKind::Hmis => "hmis",
            ServiceKind::Campus => "campus",
            ServiceKind::Emis => "emis",
        }
    }

    /// The service name a kind deploys under; EMIS is a consumer only.
    pub fn service_name(self) -> Option<&'static str> {
        match self {
            ServiceKind::Amis => Some(AMIS_SERVICE),
            ServiceKind::Lmis => Some(LMIS_SERVICE),
            ServiceKind::Hmis => Some(HMIS_SERVICE),
            ServiceKind::Campus => Some(CAMPUS_SERVICE),
            ServiceKind::Emis => None,
        }
    }

    pub fn default_format(self) -> StorageFormat {
        match self {
            ServiceKind::Amis | ServiceKind::Emis => StorageFormat::BinaryLog,
            ServiceKind::Lmis | ServiceKind::Campus => StorageFormat::TabularText,
            ServiceKind::Hmis => StorageFormat::JsonLines,
        }
    }
}

impl std::fmt::Display for ServiceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ServiceKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ServiceKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown service kind {s:?} (expected amis, lmis, hmis, campus or emis)"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SeedError {
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Record {
        path: String,
        #[source]
        source: DeptError,
    },
}

/// Reads a headed CSV file into records. Column names match field names.
pub fn read_seed_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, SeedError> {
    let wrap = |source| SeedError::Csv {
        path: path.display().to_string(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(wrap)?;
    rdr.deserialize().collect::<Result<Vec<T>, _>>().map_err(wrap)
}

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct SeedCounts {
    pub students: usize,
    pub departments: usize,
    pub programmes: usize,
    pub books: usize,
    pub rooms: usize,
    pub exams: usize,
    /// Library or hostel records created from issue/allotment fixtures.
    pub registrations: usize,
}

#[derive(serde::Deserialize)]
struct IssueRow {
    student_id: String,
    book_id: String,
    issue_date: NaiveDate,
    return_date: Option<NaiveDate>,
}

#[derive(serde::Deserialize)]
struct AllotmentRow {
    student_id: String,
    room_id: String,
    allot_date: NaiveDate,
    vacate_date: Option<NaiveDate>,
}

fn seed_file<T: DeserializeOwned>(dir: &Path, name: &str) -> Result<Vec<T>, SeedError> {
    let p = dir.join(name);
    if p.exists() {
        read_seed_csv(&p)
    } else {
        Ok(Vec::new())
    }
}

fn record_err(dir: &Path, name: &str) -> impl Fn(DeptError) -> SeedError {
    let path = dir.join(name).display().to_string();
    move |source| SeedError::Record {
        path: path.clone(),
        source,
    }
}

/// Loads the slice of the seed directory a service kind owns. Records that
/// already exist are left as they are, so seeding twice is harmless.
pub fn seed_store(kind: ServiceKind, store: &Arc<Store>, dir: &Path) -> Result<SeedCounts, SeedError> {
    let mut n = SeedCounts::default();
    match kind {
        ServiceKind::Amis => {
            let amis = Admission::new(store.clone());
            for d in seed_file::<DepartmentRecord>(dir, "departments.csv")? {
                if store.get::<DepartmentRecord>(&d.department_id).is_none() {
                    amis.add_department(d).map_err(record_err(dir, "departments.csv"))?;
                    n.departments += 1;
                }
            }
            for p in seed_file::<ProgrammeRecord>(dir, "programmes.csv")? {
                if store.get::<ProgrammeRecord>(&p.programme_id).is_none() {
                    amis.add_programme(p).map_err(record_err(dir, "programmes.csv"))?;
                    n.programmes += 1;
                }
            }
            for s in seed_file::<StudentRecord>(dir, "students.csv")? {
                match amis.add_student(s) {
                    Ok(_) => n.students += 1,
                    Err(DeptError::DuplicateStudent(_)) => {}
                    Err(e) => return Err(record_err(dir, "students.csv")(e)),
                }
            }
        }
        ServiceKind::Lmis => {
            for b in seed_file::<BookRecord>(dir, "books.csv")? {
                if store.get::<BookRecord>(&b.book_id).is_none() {
                    check_valid(&b).map_err(record_err(dir, "books.csv"))?;
                    store.put(b).map_err(|e| record_err(dir, "books.csv")(e.into()))?;
                    n.books += 1;
                }
            }
            let mut by_student: BTreeMap<String, LibraryStudentRecord> = BTreeMap::new();
            for row in seed_file::<IssueRow>(dir, "library_issues.csv")? {
                by_student
                    .entry(row.student_id.clone())
                    .or_insert_with(|| LibraryStudentRecord::new(row.student_id))
                    .issued_books
                    .push(BookIssue {
                        book_id: row.book_id,
                        issue_date: row.issue_date,
                        return_date: row.return_date,
                    });
            }
            for (id, rec) in by_student {
                if store.get::<LibraryStudentRecord>(&id).is_none() {
                    check_valid(&rec).map_err(record_err(dir, "library_issues.csv"))?;
                    store.put(rec).map_err(|e| record_err(dir, "library_issues.csv")(e.into()))?;
                    n.registrations += 1;
                }
            }
        }
        ServiceKind::Hmis => {
            for r in seed_file::<RoomRecord>(dir, "rooms.csv")? {
                if store.get::<RoomRecord>(&r.room_id).is_none() {
                    check_valid(&r).map_err(record_err(dir, "rooms.csv"))?;
                    store.put(r).map_err(|e| record_err(dir, "rooms.csv")(e.into()))?;
                    n.rooms += 1;
                }
            }
            let mut by_student: BTreeMap<String, HostelStudentRecord> = BTreeMap::new();
            for row in seed_file::<AllotmentRow>(dir, "hostel_allotments.csv")? {
                by_student
                    .entry(row.student_id.clone())
                    .or_insert_with(|| HostelStudentRecord::new(row.student_id))
                    .allotments
                    .push(RoomAllotment {
                        room_id: row.room_id,
                        allot_date: row.allot_date,
                        vacate_date: row.vacate_date,
                    });
            }
            for (id, rec) in by_student {
                if store.get::<HostelStudentRecord>(&id).is_none() {
                    check_valid(&rec).map_err(record_err(dir, "hostel_allotments.csv"))?;
                    store.put(rec).map_err(|e| record_err(dir, "hostel_allotments.csv")(e.into()))?;
                    n.registrations += 1;
                }
            }
        }
        ServiceKind::Emis => {
            for e in seed_file::<ExamRecord>(dir, "exams.csv")? {
                if store.get::<ExamRecord>(&e.key()).is_none() {
                    check_valid(&e).map_err(record_err(dir, "exams.csv"))?;
                    store.put(e).map_err(|err| record_err(dir, "exams.csv")(err.into()))?;
                    n.exams += 1;
                }
            }
        }
        ServiceKind::Campus => {}
    }
    Ok(n)
}
