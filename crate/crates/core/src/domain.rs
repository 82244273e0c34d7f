//! Record types for the five information levels and the rules that decide
//! clearance.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::envelope::{BeanRegistry, BeanSchema, TypeTag, TypedValue};
use crate::wsdd::{BeanCatalog, CatalogEntry};
use crate::xml;

/// Admission, Hostel, Library, Campus and Examination levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InfoLevel {
    AL,
    HL,
    LL,
    CL,
    EL,
}

impl InfoLevel {
    pub const ALL: [InfoLevel; 5] = [InfoLevel::AL, InfoLevel::HL, InfoLevel::LL, InfoLevel::CL, InfoLevel::EL];

    pub fn description(self) -> &'static str {
        match self {
            InfoLevel::AL => "Admission Level",
            InfoLevel::HL => "Hostel Level",
            InfoLevel::LL => "Library Level",
            InfoLevel::CL => "Campus Level",
            InfoLevel::EL => "Examination Level",
        }
    }
}

pub const GRADUATION_YEAR_RANGE: std::ops::RangeInclusive<i64> = 1900..=2200;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: String,
    pub first_name: String,
    pub last_name: String,
    pub address: String,
    pub contact_number: String,
    pub institution_name: String,
    pub department_name: String,
    pub degree_program: String,
    pub graduation_year: i64,
}

impl StudentRecord {
    pub fn full_name(&self) -> String {
        format!("{} {}", self.first_name, self.last_name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DepartmentRecord {
    pub department_id: String,
    pub department_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProgrammeRecord {
    pub programme_id: String,
    pub programme_name: String,
    pub department_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ListItem {
    pub id: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookRecord {
    pub book_id: String,
    pub isbn: String,
    pub title: String,
    pub author: String,
    pub publisher: String,
    pub year: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BookIssue {
    pub book_id: String,
    pub issue_date: NaiveDate,
    pub return_date: Option<NaiveDate>,
}

impl BookIssue {
    pub fn is_outstanding(&self) -> bool {
        self.return_date.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibraryStudentRecord {
    pub student_id: String,
    pub issued_books: Vec<BookIssue>,
}

impl LibraryStudentRecord {
    pub fn new(student_id: impl Into<String>) -> Self {
        Self {
            student_id: student_id.into(),
            issued_books: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomRecord {
    pub room_id: String,
    pub capacity: i64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoomAllotment {
    pub room_id: String,
    pub allot_date: NaiveDate,
    pub vacate_date: Option<NaiveDate>,
}

impl RoomAllotment {
    pub fn is_open(&self) -> bool {
        self.vacate_date.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostelStudentRecord {
    pub student_id: String,
    pub allotments: Vec<RoomAllotment>,
}

impl HostelStudentRecord {
    pub fn new(student_id: impl Into<String>) -> Self {
        Self {
            student_id: student_id.into(),
            allotments: Vec::new(),
        }
    }

    pub fn open_allotment(&self) -> Option<&RoomAllotment> {
        self.allotments.iter().find(|a| a.is_open())
    }
}

/// Campus-level copy of a student's admission record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampusStudentRecord(pub StudentRecord);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExamRecord {
    pub student_id: String,
    pub programme_id: String,
    pub passed: bool,
    pub completion_date: NaiveDate,
}

impl ExamRecord {
    pub fn key_for(student_id: &str, programme_id: &str) -> String {
        format!("{student_id}/{programme_id}")
    }

    pub fn key(&self) -> String {
        Self::key_for(&self.student_id, &self.programme_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Department {
    Admission,
    Library,
    Hostel,
}

impl Department {
    pub const ALL: [Department; 3] = [Department::Admission, Department::Library, Department::Hostel];
}

impl fmt::Display for Department {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Department::Admission => "Admission",
            Department::Library => "Library",
            Department::Hostel => "Hostel",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status")]
pub enum DeptStatus {
    Clear,
    Defaulter { reason: String },
    Unreachable,
}

impl DeptStatus {
    pub fn is_clear(&self) -> bool {
        matches!(self, DeptStatus::Clear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Overall {
    Clear,
    Blocked,
}

impl Overall {
    /// Clear iff every department is Clear. An empty set is Blocked.
    pub fn from_statuses<'a>(statuses: impl IntoIterator<Item = &'a DeptStatus>) -> Overall {
        let mut any = false;
        for s in statuses {
            if !s.is_clear() {
                return Overall::Blocked;
            }
            any = true;
        }
        if any {
            Overall::Clear
        } else {
            Overall::Blocked
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub student_id: String,
    pub per_department: BTreeMap<Department, DeptStatus>,
    pub overall: Overall,
}

impl VerificationResult {
    pub fn new(student_id: impl Into<String>, per_department: BTreeMap<Department, DeptStatus>) -> Self {
        let overall = Overall::from_statuses(per_department.values());
        Self {
            student_id: student_id.into(),
            per_department,
            overall,
        }
    }

    pub fn status(&self, dept: Department) -> Option<&DeptStatus> {
        self.per_department.get(&dept)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefaulterDepartment {
    Library,
    Hostel,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaulterEntry {
    pub student_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefaulterReport {
    pub department: DefaulterDepartment,
    pub entries: Vec<DefaulterEntry>,
}

impl DefaulterReport {
    /// Builds a report from every record in a store; entries are sorted by
    /// student id.
    pub fn from_records<'a, R: Defaulting + 'a>(
        department: DefaulterDepartment,
        records: impl IntoIterator<Item = &'a R>,
    ) -> Self {
        let mut entries: Vec<DefaulterEntry> = records
            .into_iter()
            .filter_map(|r| {
                let check = r.defaulter_check();
                check.is_defaulter().then(|| DefaulterEntry {
                    student_id: r.student_id().to_string(),
                    reason: check.reason(),
                })
            })
            .collect();
        entries.sort_by(|a, b| a.student_id.cmp(&b.student_id));
        Self { department, entries }
    }

    pub fn entry_for(&self, student_id: &str) -> Option<&DefaulterEntry> {
        self.entries.iter().find(|e| e.student_id == student_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DefaulterCheck {
    Library { outstanding_books: Vec<String> },
    Hostel { open_rooms: Vec<String> },
}

impl DefaulterCheck {
    pub fn is_defaulter(&self) -> bool {
        !self.offending_ids().is_empty()
    }

    pub fn offending_ids(&self) -> &[String] {
        match self {
            DefaulterCheck::Library { outstanding_books } => outstanding_books,
            DefaulterCheck::Hostel { open_rooms } => open_rooms,
        }
    }

    /// `outstanding books: B1, B2` or `open room allotment: R1`; ids sorted.
    pub fn reason(&self) -> String {
        let mut ids = self.offending_ids().to_vec();
        ids.sort();
        match self {
            DefaulterCheck::Library { .. } => format!("outstanding books: {}", ids.join(", ")),
            DefaulterCheck::Hostel { .. } => format!("open room allotment: {}", ids.join(", ")),
        }
    }
}

pub trait Defaulting {
    fn student_id(&self) -> &str;
    fn defaulter_check(&self) -> DefaulterCheck;
}

impl Defaulting for LibraryStudentRecord {
    fn student_id(&self) -> &str {
        &self.student_id
    }

    fn defaulter_check(&self) -> DefaulterCheck {
        DefaulterCheck::Library {
            outstanding_books: self
                .issued_books
                .iter()
                .filter(|i| i.is_outstanding())
                .map(|i| i.book_id.clone())
                .collect(),
        }
    }
}

impl Defaulting for HostelStudentRecord {
    fn student_id(&self) -> &str {
        &self.student_id
    }

    fn defaulter_check(&self) -> DefaulterCheck {
        DefaulterCheck::Hostel {
            open_rooms: self
                .allotments
                .iter()
                .filter(|a| a.is_open())
                .map(|a| a.room_id.clone())
                .collect(),
        }
    }
}

/// Returns whether the record's owner is a defaulter, and the reason naming
/// the offending book or room ids.
pub fn is_defaulter<R: Defaulting>(record: &R) -> (bool, Option<String>) {
    let check = record.defaulter_check();
    if check.is_defaulter() {
        (true, Some(check.reason()))
    } else {
        (false, None)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub certificate_id: String,
    pub student_id: String,
    pub programme_id: String,
    pub issued_at: DateTime<Utc>,
    pub verification: VerificationResult,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub sequence: u64,
    pub student_id: String,
    pub timestamp: DateTime<Utc>,
    pub result: VerificationResult,
    /// Round-trip time per department in milliseconds.
    pub durations_ms: BTreeMap<Department, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl Violation {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

/// Context-free invariant checks. Returns every violation, never just the
/// first.
pub trait Validate {
    fn violations(&self) -> Vec<Violation>;
}

pub fn validate_record<R: Validate + ?Sized>(record: &R) -> Result<(), Vec<Violation>> {
    let v = record.violations();
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[derive(Default)]
struct Checker(Vec<Violation>);

impl Checker {
    fn id(&mut self, field: &str, value: &str) -> &mut Self {
        if value.is_empty() {
            self.0.push(Violation::new(field, "must not be empty"));
        } else if value.trim() != value || value.chars().any(|c| c.is_control() || c == '/') {
            self.0
                .push(Violation::new(field, "must not contain '/', control characters or surrounding spaces"));
        }
        self
    }

    fn text(&mut self, field: &str, value: &str) -> &mut Self {
        if value.chars().any(|c| !xml::is_xml_char(c)) {
            self.0.push(Violation::new(field, "contains characters that cannot be exchanged"));
        }
        self
    }

    fn push(&mut self, field: &str, message: impl Into<String>) -> &mut Self {
        self.0.push(Violation::new(field, message));
        self
    }

    fn done(&mut self) -> Vec<Violation> {
        std::mem::take(&mut self.0)
    }
}

impl Validate for StudentRecord {
    fn violations(&self) -> Vec<Violation> {
        let mut c = Checker::default();
        c.id("student_id", &self.student_id)
            .text("first_name", &self.first_name)
            .text("last_name", &self.last_name)
            .text("address", &self.address)
            .text("contact_number", &self.contact_number)
            .text("institution_name", &self.institution_name)
            .text("department_name", &self.department_name)
            .text("degree_program", &self.degree_program);
        if !GRADUATION_YEAR_RANGE.contains(&self.graduation_year) {
            c.push(
                "graduation_year",
                format!("{} outside [1900, 2200]", self.graduation_year),
            );
        }
        c.done()
    }
}

impl Validate for CampusStudentRecord {
    fn violations(&self) -> Vec<Violation> {
        self.0.violations()
    }
}

impl Validate for DepartmentRecord {
    fn violations(&self) -> Vec<Violation> {
        Checker::default()
            .id("department_id", &self.department_id)
            .text("department_name", &self.department_name)
            .done()
    }
}

impl Validate for ProgrammeRecord {
    fn violations(&self) -> Vec<Violation> {
        Checker::default()
            .id("programme_id", &self.programme_id)
            .text("programme_name", &self.programme_name)
            .id("department_id", &self.department_id)
            .done()
    }
}

impl Validate for ListItem {
    fn violations(&self) -> Vec<Violation> {
        let mut c = Checker::default();
        if self.id.is_empty() {
            c.push("id", "must not be empty");
        }
        c.text("id", &self.id).text("label", &self.label).done()
    }
}

impl Validate for BookRecord {
    fn violations(&self) -> Vec<Violation> {
        Checker::default()
            .id("book_id", &self.book_id)
            .text("isbn", &self.isbn)
            .text("title", &self.title)
            .text("author", &self.author)
            .text("publisher", &self.publisher)
            .done()
    }
}

impl Validate for RoomRecord {
    fn violations(&self) -> Vec<Violation> {
        let mut c = Checker::default();
        c.id("room_id", &self.room_id);
        if self.capacity <= 0 {
            c.push("capacity", "must be positive");
        }
        c.done()
    }
}

impl Validate for LibraryStudentRecord {
    fn violations(&self) -> Vec<Violation> {
        let mut c = Checker::default();
        c.id("student_id", &self.student_id);
        let mut outstanding = std::collections::HashSet::new();
        for (i, issue) in self.issued_books.iter().enumerate() {
            let field = format!("issued_books[{i}]");
            c.id(&format!("{field}.book_id"), &issue.book_id);
            if issue.return_date.is_some_and(|r| r < issue.issue_date) {
                c.push(&field, "returned before it was issued");
            }
            if issue.is_outstanding() && !outstanding.insert(issue.book_id.as_str()) {
                c.push(&field, format!("book {} is outstanding twice", issue.book_id));
            }
        }
        c.done()
    }
}

impl Validate for HostelStudentRecord {
    fn violations(&self) -> Vec<Violation> {
        let mut c = Checker::default();
        c.id("student_id", &self.student_id);
        for (i, a) in self.allotments.iter().enumerate() {
            c.id(&format!("allotments[{i}].room_id"), &a.room_id);
            if a.vacate_date.is_some_and(|v| v < a.allot_date) {
                c.push(&format!("allotments[{i}]"), "vacated before it was allotted");
            }
        }
        let open = self.allotments.iter().filter(|a| a.is_open()).count();
        if open > 1 {
            c.push("allotments", format!("{open} open allotments, at most one allowed"));
        }
        c.done()
    }
}

impl Validate for ExamRecord {
    fn violations(&self) -> Vec<Violation> {
        Checker::default()
            .id("student_id", &self.student_id)
            .id("programme_id", &self.programme_id)
            .done()
    }
}

// ---------------------------------------------------------------------------
// Wire mapping

pub const NS: &str = "myNS";
pub const STUDENT_RECORD: &str = "myNS:StudentRecord";
pub const DEPARTMENT_RECORD: &str = "myNS:DepartmentRecord";
pub const PROGRAMME_RECORD: &str = "myNS:ProgrammeRecord";
pub const LIST_ITEM: &str = "myNS:ListItem";
pub const LIBRARY_STUDENT_RECORD: &str = "myNS:LibraryStudentRecord";
pub const HOSTEL_STUDENT_RECORD: &str = "myNS:HostelStudentRecord";
pub const BOOK_ISSUE: &str = "myNS:BookIssue";
pub const ROOM_ALLOTMENT: &str = "myNS:RoomAllotment";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot read {qname} from wire value: {reason}")]
pub struct WireError {
    pub qname: &'static str,
    pub reason: String,
}

/// A record type with a fixed wire schema.
///
/// Optional dates travel as a `list` holding zero or one `date` item, since
/// the wire grammar has no null.
pub trait Bean: Sized {
    const QNAME: &'static str;
    /// Binding key used by deployment descriptors (`java:StudentRecord` → `StudentRecord`).
    const BINDING_KEY: &'static str;

    fn schema() -> BeanSchema;
    fn to_fields(&self) -> Vec<TypedValue>;
    fn from_fields(value: &TypedValue) -> Result<Self, WireError>;

    fn to_typed(&self, name: &str) -> TypedValue {
        TypedValue::bean(name, Self::QNAME, self.to_fields())
    }

    fn from_typed(value: &TypedValue) -> Result<Self, WireError> {
        if value.tag != TypeTag::bean(Self::QNAME) {
            return Err(WireError {
                qname: Self::QNAME,
                reason: format!("value is tagged {}", value.tag),
            });
        }
        Self::from_fields(value)
    }
}

struct Fields<'a> {
    qname: &'static str,
    value: &'a TypedValue,
}

impl<'a> Fields<'a> {
    fn of<B: Bean>(value: &'a TypedValue) -> Self {
        Self {
            qname: B::QNAME,
            value,
        }
    }

    fn err(&self, reason: String) -> WireError {
        WireError {
            qname: self.qname,
            reason,
        }
    }

    fn get(&self, name: &str) -> Result<&'a TypedValue, WireError> {
        self.value
            .field(name)
            .ok_or_else(|| self.err(format!("missing field {name}")))
    }

    fn str(&self, name: &str) -> Result<String, WireError> {
        self.get(name)?
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| self.err(format!("{name} is not a string")))
    }

    fn int(&self, name: &str) -> Result<i64, WireError> {
        self.get(name)?
            .as_int()
            .ok_or_else(|| self.err(format!("{name} is not an int")))
    }

    fn date(&self, name: &str) -> Result<NaiveDate, WireError> {
        self.get(name)?
            .as_date()
            .ok_or_else(|| self.err(format!("{name} is not a date")))
    }

    fn opt_date(&self, name: &str) -> Result<Option<NaiveDate>, WireError> {
        let items = self
            .get(name)?
            .as_list()
            .ok_or_else(|| self.err(format!("{name} is not a list")))?;
        match items {
            [] => Ok(None),
            [d] => d
                .as_date()
                .map(Some)
                .ok_or_else(|| self.err(format!("{name} item is not a date"))),
            _ => Err(self.err(format!("{name} holds more than one date"))),
        }
    }

    fn beans<B: Bean>(&self, name: &str) -> Result<Vec<B>, WireError> {
        let items = self
            .get(name)?
            .as_list()
            .ok_or_else(|| self.err(format!("{name} is not a list")))?;
        items.iter().map(B::from_typed).collect()
    }
}

fn opt_date(name: &str, d: Option<NaiveDate>) -> TypedValue {
    TypedValue::list(name, d.map(|d| TypedValue::date("date", d)).into_iter().collect())
}

impl Bean for StudentRecord {
    const QNAME: &'static str = STUDENT_RECORD;
    const BINDING_KEY: &'static str = "StudentRecord";

    fn schema() -> BeanSchema {
        BeanSchema::new([
            ("student_id", TypeTag::STRING),
            ("first_name", TypeTag::STRING),
            ("last_name", TypeTag::STRING),
            ("address", TypeTag::STRING),
            ("contact_number", TypeTag::STRING),
            ("institution_name", TypeTag::STRING),
            ("department_name", TypeTag::STRING),
            ("degree_program", TypeTag::STRING),
            ("graduation_year", TypeTag::INT),
        ])
    }

    fn to_fields(&self) -> Vec<TypedValue> {
        vec![
            TypedValue::string("student_id", &self.student_id),
            TypedValue::string("first_name", &self.first_name),
            TypedValue::string("last_name", &self.last_name),
            TypedValue::string("address", &self.address),
            TypedValue::string("contact_number", &self.contact_number),
            TypedValue::string("institution_name", &self.institution_name),
            TypedValue::string("department_name", &self.department_name),
            TypedValue::string("degree_program", &self.degree_program),
            TypedValue::int("graduation_year", self.graduation_year),
        ]
    }

    fn from_fields(value: &TypedValue) -> Result<Self, WireError> {
        let f = Fields::of::<Self>(value);
        Ok(Self {
            student_id: f.str("student_id")?,
            first_name: f.str("first_name")?,
            last_name: f.str("last_name")?,
            address: f.str("address")?,
            contact_number: f.str("contact_number")?,
            institution_name: f.str("institution_name")?,
            department_name: f.str("department_name")?,
            degree_program: f.str("degree_program")?,
            graduation_year: f.int("graduation_year")?,
        })
    }
}

impl Bean for DepartmentRecord {
    const QNAME: &'static str = DEPARTMENT_RECORD;
    const BINDING_KEY: &'static str = "DepartmentRecord";

    fn schema() -> BeanSchema {
        BeanSchema::new([("department_id", TypeTag::STRING), ("department_name", TypeTag::STRING)])
    }

    fn to_fields(&self) -> Vec<TypedValue> {
        vec![
            TypedValue::string("department_id", &self.department_id),
            TypedValue::string("department_name", &self.department_name),
        ]
    }

    fn from_fields(value: &TypedValue) -> Result<Self, WireError> {
        let f = Fields::of::<Self>(value);
        Ok(Self {
            department_id: f.str("department_id")?,
            department_name: f.str("department_name")?,
        })
    }
}

impl Bean for ProgrammeRecord {
    const QNAME: &'static str = PROGRAMME_RECORD;
    const BINDING_KEY: &'static str = "ProgrammeRecord";

    fn schema() -> BeanSchema {
        BeanSchema::new([
            ("programme_id", TypeTag::STRING),
            ("programme_name", TypeTag::STRING),
            ("department_id", TypeTag::STRING),
        ])
    }

    fn to_fields(&self) -> Vec<TypedValue> {
        vec![
            TypedValue::string("programme_id", &self.programme_id),
            TypedValue::string("programme_name", &self.programme_name),
            TypedValue::string("department_id", &self.department_id),
        ]
    }

    fn from_fields(value: &TypedValue) -> Result<Self, WireError> {
        let f = Fields::of::<Self>(value);
        Ok(Self {
            programme_id: f.str("programme_id")?,
            programme_name: f.str("programme_name")?,
            department_id: f.str("department_id")?,
        })
    }
}

impl Bean for ListItem {
    const QNAME: &'static str = LIST_ITEM;
    const BINDING_KEY: &'static str = "ListItem";

    fn schema() -> BeanSchema {
        BeanSchema::new([("id", TypeTag::STRING), ("label", TypeTag::STRING)])
    }

    fn to_fields(&self) -> Vec<TypedValue> {
        vec![TypedValue::string("id", &self.id), TypedValue::string("label", &self.label)]
    }

    fn from_fields(value: &TypedValue) -> Result<Self, WireError> {
        let f = Fields::of::<Self>(value);
        Ok(Self {
            id: f.str("id")?,
            label: f.str("label")?,
        })
    }
}

impl Bean for BookIssue {
    const QNAME: &'static str = BOOK_ISSUE;
    const BINDING_KEY: &'static str = "BookIssue";

    fn schema() -> BeanSchema {
        BeanSchema::new([
            ("book_id", TypeTag::STRING),
            ("issue_date", TypeTag::DATE),
            ("return_date", TypeTag::LIST),
        ])
    }

    fn to_fields(&self) -> Vec<TypedValue> {
        vec![
            TypedValue::string("book_id", &self.book_id),
            TypedValue::date("issue_date", self.issue_date),
            opt_date("return_date", self.return_date),
        ]
    }

    fn from_fields(value: &TypedValue) -> Result<Self, WireError> {
        let f = Fields::of::<Self>(value);
        Ok(Self {
            book_id: f.str("book_id")?,
            issue_date: f.date("issue_date")?,
            return_date: f.opt_date("return_date")?,
        })
    }
}

impl Bean for LibraryStudentRecord {
    const QNAME: &'static str = LIBRARY_STUDENT_RECORD;
    const BINDING_KEY: &'static str = "LibraryStudentRecord";

    fn schema() -> BeanSchema {
        BeanSchema::new([("student_id", TypeTag::STRING), ("issued_books", TypeTag::LIST)])
    }

    fn to_fields(&self) -> Vec<TypedValue> {
        vec![
            TypedValue::string("student_id", &self.student_id),
            TypedValue::list(
                "issued_books",
                self.issued_books.iter().map(|i| i.to_typed("issue")).collect(),
            ),
        ]
    }

    fn from_fields(value: &TypedValue) -> Result<Self, WireError> {
        let f = Fields::of::<Self>(value);
        Ok(Self {
            student_id: f.str("student_id")?,
            issued_books: f.beans("issued_books")?,
        })
    }
}

impl Bean for RoomAllotment {
    const QNAME: &'static str = ROOM_ALLOTMENT;
    const BINDING_KEY: &'static str = "RoomAllotment";

    fn schema() -> BeanSchema {
        BeanSchema::new([
            ("room_id", TypeTag::STRING),
            ("allot_date", TypeTag::DATE),
            ("vacate_date", TypeTag::LIST),
        ])
    }

    fn to_fields(&self) -> Vec<TypedValue> {
        vec![
            TypedValue::string("room_id", &self.room_id),
            TypedValue::date("allot_date", self.allot_date),
            opt_date("vacate_date", self.vacate_date),
        ]
    }

    fn from_fields(value: &TypedValue) -> Result<Self, WireError> {
        let f = Fields::of::<Self>(value);
        Ok(Self {
            room_id: f.str("room_id")?,
            allot_date: f.date("allot_date")?,
            vacate_date: f.opt_date("vacate_date")?,
        })
    }
}

impl Bean for HostelStudentRecord {
    const QNAME: &'static str = HOSTEL_STUDENT_RECORD;
    const BINDING_KEY: &'static str = "HostelStudentRecord";

    fn schema() -> BeanSchema {
        BeanSchema::new([("student_id", TypeTag::STRING), ("allotments", TypeTag::LIST)])
    }

    fn to_fields(&self) -> Vec<TypedValue> {
        vec![
            TypedValue::string("student_id", &self.student_id),
            TypedValue::list(
                "allotments",
                self.allotments.iter().map(|a| a.to_typed("allotment")).collect(),
            ),
        ]
    }

    fn from_fields(value: &TypedValue) -> Result<Self, WireError> {
        let f = Fields::of::<Self>(value);
        Ok(Self {
            student_id: f.str("student_id")?,
            allotments: f.beans("allotments")?,
        })
    }
}

impl DefaulterReport {
    /// Wire form: a list of `myNS:ListItem` (id = student id, label = reason).
    pub fn to_typed(&self, name: &str) -> TypedValue {
        TypedValue::list(
            name,
            self.entries
                .iter()
                .map(|e| {
                    ListItem {
                        id: e.student_id.clone(),
                        label: e.reason.clone(),
                    }
                    .to_typed("entry")
                })
                .collect(),
        )
    }

    pub fn from_typed(department: DefaulterDepartment, value: &TypedValue) -> Result<Self, WireError> {
        let items = value.as_list().ok_or_else(|| WireError {
            qname: LIST_ITEM,
            reason: "defaulter report is not a list".into(),
        })?;
        let entries = items
            .iter()
            .map(|v| {
                ListItem::from_typed(v).map(|li| DefaulterEntry {
                    student_id: li.id,
                    reason: li.label,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self { department, entries })
    }
}

/// Decodes a `list` of beans of one type.
pub fn beans_from_list<B: Bean>(value: &TypedValue) -> Result<Vec<B>, WireError> {
    value
        .as_list()
        .ok_or_else(|| WireError {
            qname: B::QNAME,
            reason: format!("{} is not a list", value.name),
        })?
        .iter()
        .map(B::from_typed)
        .collect()
}

pub fn beans_to_list<B: Bean>(name: &str, item_name: &str, beans: &[B]) -> TypedValue {
    TypedValue::list(name, beans.iter().map(|b| b.to_typed(item_name)).collect())
}

fn catalog_entry<B: Bean>(requires: Vec<(String, BeanSchema)>) -> (&'static str, CatalogEntry) {
    (
        B::BINDING_KEY,
        CatalogEntry {
            schema: B::schema(),
            requires,
        },
    )
}

/// Every bean type a deployment descriptor may bind to.
pub fn bean_catalog() -> BeanCatalog {
    let mut catalog = BeanCatalog::new();
    let issue = vec![(BookIssue::QNAME.to_string(), BookIssue::schema())];
    let allotment = vec![(RoomAllotment::QNAME.to_string(), RoomAllotment::schema())];
    for (key, entry) in [
        catalog_entry::<StudentRecord>(vec![]),
        catalog_entry::<DepartmentRecord>(vec![]),
        catalog_entry::<ProgrammeRecord>(vec![]),
        catalog_entry::<ListItem>(vec![]),
        catalog_entry::<BookIssue>(vec![]),
        catalog_entry::<RoomAllotment>(vec![]),
        catalog_entry::<LibraryStudentRecord>(issue),
        catalog_entry::<HostelStudentRecord>(allotment),
    ] {
        catalog.insert(key, entry);
    }
    catalog
}

/// Registry holding every bean type used on the wire, registered under its
/// canonical qname.
pub fn full_registry() -> BeanRegistry {
    let mut reg = BeanRegistry::new();
    for (q, s) in [
        (StudentRecord::QNAME, StudentRecord::schema()),
        (DepartmentRecord::QNAME, DepartmentRecord::schema()),
        (ProgrammeRecord::QNAME, ProgrammeRecord::schema()),
        (ListItem::QNAME, ListItem::schema()),
        (BookIssue::QNAME, BookIssue::schema()),
        (LibraryStudentRecord::QNAME, LibraryStudentRecord::schema()),
        (RoomAllotment::QNAME, RoomAllotment::schema()),
        (HostelStudentRecord::QNAME, HostelStudentRecord::schema()),
    ] {
        reg.register_bean(q, s).expect("built-in schemas are consistent");
    }
    reg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::{decode_envelope, encode_envelope, BeanRegistry, Envelope, Response};

    pub(crate) fn student(id: &str) -> StudentRecord {
        StudentRecord {
            student_id: id.into(),
            first_name: "Amna".into(),
            last_name: "Soomro".into(),
            address: "Jamshoro".into(),
            contact_number: "+92-22-0000".into(),
            institution_name: "University of Sindh".into(),
            department_name: "Computer Science".into(),
            degree_program: "BS".into(),
            graduation_year: 2014,
        }
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn five_information_levels() {
        assert_eq!(InfoLevel::ALL.len(), 5);
        assert_eq!(InfoLevel::EL.description(), "Examination Level");
    }

    #[test]
    fn student_validation() {
        assert_eq!(validate_record(&student("S001")), Ok(()));
        let mut bad = student("");
        assert_eq!(validate_record(&bad).unwrap_err().len(), 1);
        bad.student_id = "S1".into();
        bad.graduation_year = 1500;
        assert_eq!(validate_record(&bad).unwrap_err()[0].field, "graduation_year");
    }

    #[test]
    fn two_open_allotments_is_one_violation() {
        let r = HostelStudentRecord {
            student_id: "S1".into(),
            allotments: vec![
                RoomAllotment {
                    room_id: "R1".into(),
                    allot_date: d("2020-01-01"),
                    vacate_date: None,
                },
                RoomAllotment {
                    room_id: "R2".into(),
                    allot_date: d("2020-02-01"),
                    vacate_date: None,
                },
            ],
        };
        assert_eq!(validate_record(&r).unwrap_err().len(), 1);
    }

    #[test]
    fn library_defaulter_rules() {
        let mut r = LibraryStudentRecord::new("S1");
        assert_eq!(is_defaulter(&r), (false, None));
        r.issued_books.push(BookIssue {
            book_id: "B7".into(),
            issue_date: d("2021-03-01"),
            return_date: Some(d("2021-03-05")),
        });
        r.issued_books.push(BookIssue {
            book_id: "B9".into(),
            issue_date: d("2021-04-01"),
            return_date: None,
        });
        // oracle: scan the issues list directly
        let expected: Vec<&str> = r
            .issued_books
            .iter()
            .filter(|i| i.return_date.is_none())
            .map(|i| i.book_id.as_str())
            .collect();
        assert_eq!(expected, vec!["B9"]);
        let (flag, reason) = is_defaulter(&r);
        assert!(flag);
        assert_eq!(reason.as_deref(), Some("outstanding books: B9"));
    }

    #[test]
    fn vacated_allotment_is_clear() {
        let r = HostelStudentRecord {
            student_id: "S1".into(),
            allotments: vec![RoomAllotment {
                room_id: "R1".into(),
                allot_date: d("2020-01-01"),
                vacate_date: Some(d("2020-06-01")),
            }],
        };
        assert_eq!(is_defaulter(&r), (false, None));
    }

    #[test]
    fn overall_is_clear_only_when_every_department_is() {
        let statuses = [
            DeptStatus::Clear,
            DeptStatus::Defaulter { reason: "x".into() },
            DeptStatus::Unreachable,
        ];
        let mut clear_cells = 0;
        for a in &statuses {
            for l in &statuses {
                for h in &statuses {
                    let map = BTreeMap::from([
                        (Department::Admission, a.clone()),
                        (Department::Library, l.clone()),
                        (Department::Hostel, h.clone()),
                    ]);
                    let r = VerificationResult::new("S1", map);
                    let expect = a.is_clear() && l.is_clear() && h.is_clear();
                    assert_eq!(r.overall == Overall::Clear, expect);
                    clear_cells += usize::from(expect);
                }
            }
        }
        assert_eq!(clear_cells, 1);
    }

    #[test]
    fn report_sorted_by_student() {
        let mk = |id: &str, open: bool| LibraryStudentRecord {
            student_id: id.into(),
            issued_books: vec![BookIssue {
                book_id: format!("B-{id}"),
                issue_date: d("2022-01-01"),
                return_date: (!open).then(|| d("2022-02-01")),
            }],
        };
        let records = [mk("S3", true), mk("S1", true), mk("S2", false)];
        let report = DefaulterReport::from_records(DefaulterDepartment::Library, &records);
        let ids: Vec<_> = report.entries.iter().map(|e| e.student_id.as_str()).collect();
        assert_eq!(ids, vec!["S1", "S3"]);
    }

    #[test]
    fn beans_round_trip_through_codec() {
        let mut reg = BeanRegistry::new();
        for (q, s) in [
            (StudentRecord::QNAME, StudentRecord::schema()),
            (BookIssue::QNAME, BookIssue::schema()),
            (LibraryStudentRecord::QNAME, LibraryStudentRecord::schema()),
        ] {
            reg.register_bean(q, s).unwrap();
        }
        let lib = LibraryStudentRecord {
            student_id: "S1".into(),
            issued_books: vec![BookIssue {
                book_id: "B1".into(),
                issue_date: d("2021-01-02"),
                return_date: None,
            }],
        };
        for value in [student("S1").to_typed("result"), lib.to_typed("result")] {
            let env = Envelope::Response(Response {
                method: "m".into(),
                result: value.clone(),
            });
            let xml = encode_envelope(&env, &reg).unwrap();
            assert_eq!(decode_envelope(xml.as_bytes(), &reg).unwrap(), env);
        }
        assert_eq!(LibraryStudentRecord::from_typed(&lib.to_typed("r")).unwrap(), lib);
    }
}
