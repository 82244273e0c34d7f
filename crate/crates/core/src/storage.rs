//! File-backed record stores in three deliberately incompatible formats.
//!
//! * `TabularText`: one CSV file per record kind, header row first.
//! * `JsonLines`: a single `store.jsonl`, one tagged JSON object per line.
//! * `BinaryLog`: a single `store.binlog` of length-prefixed, checksummed
//!   frames with an index frame after every [`INDEX_INTERVAL`] records.
//!
//! All three are append-only: a `put` appends the full record and the last
//! write for a key wins on replay. A torn final entry (a crash mid-append) is
//! discarded and truncated on open; damage anywhere else is reported as
//! [`StorageError::Corrupt`].

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::domain::{
    AuditEntry, BookRecord, CampusStudentRecord, Certificate, DepartmentRecord, ExamRecord, HostelStudentRecord,
    LibraryStudentRecord, ProgrammeRecord, RoomRecord, StudentRecord,
};

#[derive(Debug, thiserror::Error)]
pub enum StorageError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt store {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },
    #[error("cannot encode record: {0}")]
    Encode(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn corrupt(path: &Path, detail: impl Into<String>) -> StorageError {
    StorageError::Corrupt {
        path: path.to_path_buf(),
        detail: detail.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageFormat {
    TabularText,
    JsonLines,
    BinaryLog,
}

impl StorageFormat {
    pub const ALL: [StorageFormat; 3] = [
        StorageFormat::TabularText,
        StorageFormat::JsonLines,
        StorageFormat::BinaryLog,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StorageFormat::TabularText => "tabular-text",
            StorageFormat::JsonLines => "json-lines",
            StorageFormat::BinaryLog => "binary-log",
        }
    }
}

impl fmt::Display for StorageFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StorageFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tabular-text" | "tabular" | "csv" => Ok(StorageFormat::TabularText),
            "json-lines" | "jsonl" | "json" => Ok(StorageFormat::JsonLines),
            "binary-log" | "binlog" | "binary" => Ok(StorageFormat::BinaryLog),
            other => Err(format!(
                "unknown storage format {other:?} (expected tabular-text, json-lines or binary-log)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    Student,
    Department,
    Programme,
    Book,
    Room,
    LibraryStudent,
    HostelStudent,
    CampusStudent,
    Exam,
    Certificate,
    Audit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Col {
    Str,
    Int,
    Bool,
    Json,
}

const STUDENT_COLS: &[(&str, Col)] = &[
    ("student_id", Col::Str),
    ("first_name", Col::Str),
    ("last_name", Col::Str),
    ("address", Col::Str),
    ("contact_number", Col::Str),
    ("institution_name", Col::Str),
    ("department_name", Col::Str),
    ("degree_program", Col::Str),
    ("graduation_year", Col::Int),
];

impl RecordKind {
    pub const ALL: [RecordKind; 11] = [
        RecordKind::Student,
        RecordKind::Department,
        RecordKind::Programme,
        RecordKind::Book,
        RecordKind::Room,
        RecordKind::LibraryStudent,
        RecordKind::HostelStudent,
        RecordKind::CampusStudent,
        RecordKind::Exam,
        RecordKind::Certificate,
        RecordKind::Audit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RecordKind::Student => "student",
            RecordKind::Department => "department",
            RecordKind::Programme => "programme",
            RecordKind::Book => "book",
            RecordKind::Room => "room",
            RecordKind::LibraryStudent => "library_student",
            RecordKind::HostelStudent => "hostel_student",
            RecordKind::CampusStudent => "campus_student",
            RecordKind::Exam => "exam",
            RecordKind::Certificate => "certificate",
            RecordKind::Audit => "audit",
        }
    }

    /// File name used by the tabular format.
    pub fn table_file(self) -> String {
        let stem = match self {
            RecordKind::Student => "students",
            RecordKind::Department => "departments",
            RecordKind::Programme => "programmes",
            RecordKind::Book => "books",
            RecordKind::Room => "rooms",
            RecordKind::LibraryStudent => "library_students",
            RecordKind::HostelStudent => "hostel_students",
            RecordKind::CampusStudent => "campus_students",
            RecordKind::Exam => "exams",
            RecordKind::Certificate => "certificates",
            RecordKind::Audit => "audit",
        };
        format!("{stem}.csv")
    }

    fn code(self) -> u8 {
        RecordKind::ALL.iter().position(|k| *k == self).expect("kind listed") as u8 + 1
    }

    fn from_code(code: u8) -> Option<Self> {
        RecordKind::ALL.get(usize::from(code).checked_sub(1)?).copied()
    }

    fn columns(self) -> &'static [(&'static str, Col)] {
        match self {
            RecordKind::Student | RecordKind::CampusStudent => STUDENT_COLS,
            RecordKind::Department => &[("department_id", Col::Str), ("department_name", Col::Str)],
            RecordKind::Programme => &[
                ("programme_id", Col::Str),
                ("programme_name", Col::Str),
                ("department_id", Col::Str),
            ],
            RecordKind::Book => &[
                ("book_id", Col::Str),
                ("isbn", Col::Str),
                ("title", Col::Str),
                ("author", Col::Str),
                ("publisher", Col::Str),
                ("year", Col::Int),
            ],
            RecordKind::Room => &[("room_id", Col::Str), ("capacity", Col::Int)],
            RecordKind::LibraryStudent => &[("student_id", Col::Str), ("issued_books", Col::Json)],
            RecordKind::HostelStudent => &[("student_id", Col::Str), ("allotments", Col::Json)],
            RecordKind::Exam => &[
                ("student_id", Col::Str),
                ("programme_id", Col::Str),
                ("passed", Col::Bool),
                ("completion_date", Col::Str),
            ],
            RecordKind::Certificate => &[
                ("certificate_id", Col::Str),
                ("student_id", Col::Str),
                ("programme_id", Col::Str),
                ("issued_at", Col::Str),
                ("verification", Col::Json),
            ],
            RecordKind::Audit => &[
                ("sequence", Col::Int),
                ("student_id", Col::Str),
                ("timestamp", Col::Str),
                ("result", Col::Json),
                ("durations_ms", Col::Json),
            ],
        }
    }

    pub fn column_names(self) -> Vec<&'static str> {
        self.columns().iter().map(|(n, _)| *n).collect()
    }
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "record", rename_all = "snake_case")]
pub enum Record {
    Student(StudentRecord),
    Department(DepartmentRecord),
    Programme(ProgrammeRecord),
    Book(BookRecord),
    Room(RoomRecord),
    LibraryStudent(LibraryStudentRecord),
    HostelStudent(HostelStudentRecord),
    CampusStudent(CampusStudentRecord),
    Exam(ExamRecord),
    Certificate(Certificate),
    Audit(AuditEntry),
}

impl Record {
    pub fn kind(&self) -> RecordKind {
        match self {
            Record::Student(_) => RecordKind::Student,
            Record::Department(_) => RecordKind::Department,
            Record::Programme(_) => RecordKind::Programme,
            Record::Book(_) => RecordKind::Book,
            Record::Room(_) => RecordKind::Room,
            Record::LibraryStudent(_) => RecordKind::LibraryStudent,
            Record::HostelStudent(_) => RecordKind::HostelStudent,
            Record::CampusStudent(_) => RecordKind::CampusStudent,
            Record::Exam(_) => RecordKind::Exam,
            Record::Certificate(_) => RecordKind::Certificate,
            Record::Audit(_) => RecordKind::Audit,
        }
    }

    pub fn key(&self) -> String {
        match self {
            Record::Student(r) => r.student_id.clone(),
            Record::Department(r) => r.department_id.clone(),
            Record::Programme(r) => r.programme_id.clone(),
            Record::Book(r) => r.book_id.clone(),
            Record::Room(r) => r.room_id.clone(),
            Record::LibraryStudent(r) => r.student_id.clone(),
            Record::HostelStudent(r) => r.student_id.clone(),
            Record::CampusStudent(r) => r.0.student_id.clone(),
            Record::Exam(r) => r.key(),
            Record::Certificate(r) => r.certificate_id.clone(),
            // zero-padded so key order is sequence order
            Record::Audit(r) => format!("{:012}", r.sequence),
        }
    }

    fn inner_json(&self) -> Result<serde_json::Map<String, Json>, StorageError> {
        let tagged = serde_json::to_value(self).map_err(|e| StorageError::Encode(e.to_string()))?;
        match tagged.get("record") {
            Some(Json::Object(map)) => Ok(map.clone()),
            _ => Err(StorageError::Encode(format!("{} does not serialize to an object", self.kind()))),
        }
    }

    fn from_inner_json(kind: RecordKind, inner: Json) -> Result<Record, String> {
        let tagged = serde_json::json!({ "kind": kind.as_str(), "record": inner });
        serde_json::from_value(tagged).map_err(|e| e.to_string())
    }

    /// One string per column of [`RecordKind::column_names`]; nested values
    /// are carried as compact JSON.
    pub fn to_row(&self) -> Result<Vec<String>, StorageError> {
        let map = self.inner_json()?;
        self.kind()
            .columns()
            .iter()
            .map(|(name, _)| match map.get(*name) {
                Some(Json::String(s)) => Ok(s.clone()),
                Some(Json::Bool(b)) => Ok(b.to_string()),
                Some(Json::Number(n)) => Ok(n.to_string()),
                Some(other) => Ok(other.to_string()),
                None => Err(StorageError::Encode(format!("{} has no field {name}", self.kind()))),
            })
            .collect()
    }

    pub fn from_row(kind: RecordKind, row: &[String]) -> Result<Record, String> {
        let cols = kind.columns();
        if row.len() != cols.len() {
            return Err(format!("{kind}: expected {} columns, found {}", cols.len(), row.len()));
        }
        let mut map = serde_json::Map::new();
        for ((name, col), cell) in cols.iter().zip(row) {
            let v = match col {
                Col::Str => Json::String(cell.clone()),
                Col::Int => Json::from(
                    cell.parse::<i64>()
                        .map_err(|_| format!("{kind}.{name}: {cell:?} is not an integer"))?,
                ),
                Col::Bool => Json::Bool(
                    cell.parse::<bool>()
                        .map_err(|_| format!("{kind}.{name}: {cell:?} is not a bool"))?,
                ),
                Col::Json => serde_json::from_str(cell).map_err(|e| format!("{kind}.{name}: {e}"))?,
            };
            map.insert((*name).to_string(), v);
        }
        Record::from_inner_json(kind, Json::Object(map))
    }
}

/// A typed record that lives in a store.
pub trait Storable: Sized + Clone {
    const KIND: RecordKind;
    fn into_record(self) -> Record;
    fn from_record(record: Record) -> Option<Self>;
}

macro_rules! storable {
    ($ty:ty, $variant:ident) => {
        impl Storable for $ty {
            const KIND: RecordKind = RecordKind::$variant;

            fn into_record(self) -> Record {
                Record::$variant(self)
            }

            fn from_record(record: Record) -> Option<Self> {
                match record {
                    Record::$variant(r) => Some(r),
                    _ => None,
                }
            }
        }
    };
}

storable!(StudentRecord, Student);
storable!(DepartmentRecord, Department);
storable!(ProgrammeRecord, Programme);
storable!(BookRecord, Book);
storable!(RoomRecord, Room);
storable!(LibraryStudentRecord, LibraryStudent);
storable!(HostelStudentRecord, HostelStudent);
storable!(CampusStudentRecord, CampusStudent);
storable!(ExamRecord, Exam);
storable!(Certificate, Certificate);
storable!(AuditEntry, Audit);

/// Key-value access to domain records, independent of the on-disk format.
pub trait StorageAdapter: Send + Sync {
    fn format(&self) -> StorageFormat;
    fn get(&self, kind: RecordKind, key: &str) -> Option<Record>;
    /// Appends `record`; once this returns `Ok` the write survives a process
    /// restart.
    fn put(&mut self, record: Record) -> Result<(), StorageError>;
    /// Every record of `kind` exactly once, ordered by key.
    fn scan(&self, kind: RecordKind) -> Vec<Record>;
}

pub fn open_adapter(format: StorageFormat, dir: &Path) -> Result<Box<dyn StorageAdapter>, StorageError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    Ok(match format {
        StorageFormat::TabularText => Box::new(TabularText::open(dir)?),
        StorageFormat::JsonLines => Box::new(JsonLines::open(dir)?),
        StorageFormat::BinaryLog => Box::new(BinaryLog::open(dir)?),
    })
}

#[derive(Default)]
struct MemIndex(BTreeMap<RecordKind, BTreeMap<String, Record>>);

impl MemIndex {
    fn insert(&mut self, record: Record) {
        self.0.entry(record.kind()).or_default().insert(record.key(), record);
    }

    fn get(&self, kind: RecordKind, key: &str) -> Option<Record> {
        self.0.get(&kind)?.get(key).cloned()
    }

    fn scan(&self, kind: RecordKind) -> Vec<Record> {
        self.0
            .get(&kind)
            .map(|m| m.values().cloned().collect())
            .unwrap_or_default()
    }
}

fn open_append(path: &Path) -> Result<File, StorageError> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))
}

fn truncate_to(path: &Path, len: u64) -> Result<(), StorageError> {
    tracing::warn!(path = %path.display(), len, "discarding torn tail");
    let f = OpenOptions::new().write(true).open(path).map_err(io_err(path))?;
    f.set_len(len).map_err(io_err(path))
}

// ---------------------------------------------------------------------------

pub struct TabularText {
    dir: PathBuf,
    index: MemIndex,
    files: BTreeMap<RecordKind, File>,
}

impl TabularText {
    pub fn open(dir: &Path) -> Result<Self, StorageError> {
        let mut index = MemIndex::default();
        for kind in RecordKind::ALL {
            let path = dir.join(kind.table_file());
            if path.exists() {
                Self::load(&path, kind, &mut index)?;
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            index,
            files: BTreeMap::new(),
        })
    }

    fn load(path: &Path, kind: RecordKind, index: &mut MemIndex) -> Result<(), StorageError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        if bytes.is_empty() {
            return Ok(());
        }
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_reader(bytes.as_slice());
        let mut rows = Vec::new();
        let mut record = csv::StringRecord::new();
        loop {
            let start = reader.position().byte();
            match reader.read_record(&mut record) {
                Ok(false) => break,
                Ok(true) => rows.push((start, record.iter().map(str::to_string).collect::<Vec<_>>())),
                Err(e) => return Err(corrupt(path, e.to_string())),
            }
        }
        let complete = bytes.ends_with(b"\n");
        let Some(((_, header), body)) = rows.split_first() else {
            return Ok(());
        };
        if *header != kind.column_names() {
            // only a torn header with nothing after it is recoverable
            if body.is_empty() && !complete {
                return truncate_to(path, 0);
            }
            return Err(corrupt(path, format!("unexpected header {header:?}")));
        }
        for (i, (start, row)) in body.iter().enumerate() {
            let last = i + 1 == body.len();
            match Record::from_row(kind, row) {
                Ok(r) if !(last && !complete) => index.insert(r),
                Ok(_) => return truncate_to(path, *start),
                Err(_) if last => return truncate_to(path, *start),
                Err(e) => return Err(corrupt(path, e)),
            }
        }
        if body.is_empty() && !complete {
            // header row without its line break
            return truncate_to(path, 0);
        }
        Ok(())
    }

    fn file(&mut self, kind: RecordKind) -> Result<&mut File, StorageError> {
        if !self.files.contains_key(&kind) {
            let path = self.dir.join(kind.table_file());
            let fresh = fs::metadata(&path).map(|m| m.len() == 0).unwrap_or(true);
            let mut f = open_append(&path)?;
            if fresh {
                let header = csv_line(kind.column_names().iter().copied())?;
                f.write_all(&header).map_err(io_err(&path))?;
            }
            self.files.insert(kind, f);
        }
        Ok(self.files.get_mut(&kind).expect("inserted above"))
    }
}

fn csv_line<'a>(fields: impl IntoIterator<Item = &'a str>) -> Result<Vec<u8>, StorageError> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(fields).map_err(|e| StorageError::Encode(e.to_string()))?;
    w.into_inner().map_err(|e| StorageError::Encode(e.to_string()))
}

impl StorageAdapter for TabularText {
    fn format(&self) -> StorageFormat {
        StorageFormat::TabularText
    }

    fn get(&self, kind: RecordKind, key: &str) -> Option<Record> {
        self.index.get(kind, key)
    }

    fn put(&mut self, record: Record) -> Result<(), StorageError> {
        let row = record.to_row()?;
        let line = csv_line(row.iter().map(String::as_str))?;
        let kind = record.kind();
        let path = self.dir.join(kind.table_file());
        let f = self.file(kind)?;
        f.write_all(&line).map_err(io_err(&path))?;
        f.flush().map_err(io_err(&path))?;
        self.index.insert(record);
        Ok(())
    }

    fn scan(&self, kind: RecordKind) -> Vec<Record> {
        self.index.scan(kind)
    }
}

// ---------------------------------------------------------------------------

pub const JSONL_FILE: &str = "store.jsonl";

pub struct JsonLines {
    path: PathBuf,
    index: MemIndex,
    file: File,
}

impl JsonLines {
    pub fn open(dir: &Path) -> Result<Self, StorageError> {
        let path = dir.join(JSONL_FILE);
        let mut index = MemIndex::default();
        if path.exists() {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let mut offset = 0usize;
            let mut lines = bytes.split_inclusive(|b| *b == b'\n').peekable();
            while let Some(line) = lines.next() {
                let last = lines.peek().is_none();
                let terminated = line.ends_with(b"\n");
                let parsed = serde_json::from_slice::<Record>(line);
                match parsed {
                    Ok(r) if terminated => index.insert(r),
                    _ if last => {
                        truncate_to(&path, offset as u64)?;
                        break;
                    }
                    Ok(_) => unreachable!("only the last line can be unterminated"),
                    Err(e) => return Err(corrupt(&path, format!("line at byte {offset}: {e}"))),
                }
                offset += line.len();
            }
        }
        let file = open_append(&path)?;
        Ok(Self { path, index, file })
    }
}

impl StorageAdapter for JsonLines {
    fn format(&self) -> StorageFormat {
        StorageFormat::JsonLines
    }

    fn get(&self, kind: RecordKind, key: &str) -> Option<Record> {
        self.index.get(kind, key)
    }

    fn put(&mut self, record: Record) -> Result<(), StorageError> {
        let mut line = serde_json::to_vec(&record).map_err(|e| StorageError::Encode(e.to_string()))?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.index.insert(record);
        Ok(())
    }

    fn scan(&self, kind: RecordKind) -> Vec<Record> {
        self.index.scan(kind)
    }
}

// ---------------------------------------------------------------------------

pub const BINLOG_FILE: &str = "store.binlog";
pub const BINLOG_MAGIC: &[u8; 8] = b"I3BLOG01";
/// An index frame follows every this many record frames.
pub const INDEX_INTERVAL: usize = 32;
const FRAME_RECORD: u8 = 1;
const FRAME_INDEX: u8 = 2;
const MAX_FRAME: u32 = 16 << 20;

/// Frame layout: `tag:u8 | len:u32le | payload[len] | crc32(payload):u32le`.
///
/// Record payload: `kind:u8 | nfields:u16le | (len:u32le | utf8)*`.
/// Index payload: `count:u32le | (kind:u8 | keylen:u16le | key | offset:u64le)*`
/// covering the record frames written since the previous index frame.
pub struct BinaryLog {
    path: PathBuf,
    index: MemIndex,
    file: File,
    pending: Vec<(RecordKind, String, u64)>,
    len: u64,
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }

    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn encode_record_payload(record: &Record) -> Result<Vec<u8>, StorageError> {
    let row = record.to_row()?;
    let mut out = vec![record.kind().code()];
    out.extend_from_slice(&(row.len() as u16).to_le_bytes());
    for field in row {
        let len = u32::try_from(field.len()).map_err(|_| StorageError::Encode("field too large".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(field.as_bytes());
    }
    Ok(out)
}

fn decode_record_payload(payload: &[u8]) -> Result<Record, String> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let kind = c
        .u8()
        .and_then(RecordKind::from_code)
        .ok_or("bad record kind")?;
    let n = c.u16().ok_or("truncated field count")?;
    let mut row = Vec::with_capacity(usize::from(n));
    for _ in 0..n {
        let len = c.u32().ok_or("truncated field length")? as usize;
        let bytes = c.take(len).ok_or("truncated field")?;
        row.push(String::from_utf8(bytes.to_vec()).map_err(|_| "field is not UTF-8")?);
    }
    if !c.done() {
        return Err("trailing bytes in record".into());
    }
    Record::from_row(kind, &row)
}

fn decode_index_payload(payload: &[u8]) -> Result<Vec<(RecordKind, String, u64)>, String> {
    let mut c = Cursor { buf: payload, pos: 0 };
    let n = c.u32().ok_or("truncated index count")?;
    let mut out = Vec::new();
    for _ in 0..n {
        let kind = c.u8().and_then(RecordKind::from_code).ok_or("bad index kind")?;
        let klen = c.u16().ok_or("truncated key length")?;
        let key = c.take(usize::from(klen)).ok_or("truncated key")?;
        let key = String::from_utf8(key.to_vec()).map_err(|_| "key is not UTF-8")?;
        let offset = c.u64().ok_or("truncated offset")?;
        out.push((kind, key, offset));
    }
    if !c.done() {
        return Err("trailing bytes in index".into());
    }
    Ok(out)
}

fn frame(tag: u8, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(payload.len() + 9);
    out.push(tag);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    out
}

impl BinaryLog {
    pub fn open(dir: &Path) -> Result<Self, StorageError> {
        let path = dir.join(BINLOG_FILE);
        let mut index = MemIndex::default();
        let mut pending = Vec::new();
        let mut len = 0u64;
        if path.exists() {
            let mut bytes = Vec::new();
            File::open(&path)
                .and_then(|mut f| f.read_to_end(&mut bytes))
                .map_err(io_err(&path))?;
            len = Self::replay(&path, &bytes, &mut index, &mut pending)?;
        }
        let mut file = OpenOptions::new()
            .create(true)
            .read(true)
            .write(true)
            .truncate(false)
            .open(&path)
            .map_err(io_err(&path))?;
        if len == 0 {
            file.set_len(0).map_err(io_err(&path))?;
            file.write_all(BINLOG_MAGIC).map_err(io_err(&path))?;
            len = BINLOG_MAGIC.len() as u64;
        }
        file.seek(SeekFrom::Start(len)).map_err(io_err(&path))?;
        Ok(Self {
            path,
            index,
            file,
            pending,
            len,
        })
    }

    /// Returns the length of the valid prefix, truncating a torn tail.
    fn replay(
        path: &Path,
        bytes: &[u8],
        index: &mut MemIndex,
        pending: &mut Vec<(RecordKind, String, u64)>,
    ) -> Result<u64, StorageError> {
        if bytes.len() < BINLOG_MAGIC.len() {
            if BINLOG_MAGIC.starts_with(bytes) {
                truncate_to(path, 0)?;
                return Ok(0);
            }
            return Err(corrupt(path, "bad magic"));
        }
        if &bytes[..BINLOG_MAGIC.len()] != BINLOG_MAGIC {
            return Err(corrupt(path, "bad magic"));
        }
        let mut pos = BINLOG_MAGIC.len();
        while pos < bytes.len() {
            let mut c = Cursor { buf: bytes, pos };
            let header = (c.u8(), c.u32());
            let (Some(tag), Some(plen)) = header else {
                truncate_to(path, pos as u64)?;
                return Ok(pos as u64);
            };
            if plen > MAX_FRAME {
                return Err(corrupt(path, format!("frame at {pos} claims {plen} bytes")));
            }
            let (Some(payload), Some(crc)) = (c.take(plen as usize), c.u32()) else {
                truncate_to(path, pos as u64)?;
                return Ok(pos as u64);
            };
            let at_end = c.pos == bytes.len();
            if crc32fast::hash(payload) != crc {
                if at_end {
                    truncate_to(path, pos as u64)?;
                    return Ok(pos as u64);
                }
                return Err(corrupt(path, format!("checksum mismatch at {pos}")));
            }
            match tag {
                FRAME_RECORD => {
                    let record = decode_record_payload(payload).map_err(|e| corrupt(path, format!("at {pos}: {e}")))?;
                    pending.push((record.kind(), record.key(), pos as u64));
                    index.insert(record);
                }
                FRAME_INDEX => {
                    let entries = decode_index_payload(payload).map_err(|e| corrupt(path, format!("at {pos}: {e}")))?;
                    if entries != *pending {
                        return Err(corrupt(path, format!("index frame at {pos} disagrees with the records before it")));
                    }
                    pending.clear();
                }
                other => return Err(corrupt(path, format!("unknown frame tag {other} at {pos}"))),
            }
            pos = c.pos;
        }
        Ok(pos as u64)
    }

    fn append(&mut self, bytes: &[u8]) -> Result<(), StorageError> {
        self.file.write_all(bytes).map_err(io_err(&self.path))?;
        self.len += bytes.len() as u64;
        Ok(())
    }
}

impl StorageAdapter for BinaryLog {
    fn format(&self) -> StorageFormat {
        StorageFormat::BinaryLog
    }

    fn get(&self, kind: RecordKind, key: &str) -> Option<Record> {
        self.index.get(kind, key)
    }

    fn put(&mut self, record: Record) -> Result<(), StorageError> {
        let payload = encode_record_payload(&record)?;
        let offset = self.len;
        let mut bytes = frame(FRAME_RECORD, &payload);
        let mut pending = self.pending.clone();
        pending.push((record.kind(), record.key(), offset));
        if pending.len() >= INDEX_INTERVAL {
            let mut idx = (pending.len() as u32).to_le_bytes().to_vec();
            for (kind, key, off) in &pending {
                idx.push(kind.code());
                idx.extend_from_slice(&(key.len() as u16).to_le_bytes());
                idx.extend_from_slice(key.as_bytes());
                idx.extend_from_slice(&off.to_le_bytes());
            }
            bytes.extend_from_slice(&frame(FRAME_INDEX, &idx));
            pending.clear();
        }
        self.append(&bytes)?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.pending = pending;
        self.index.insert(record);
        Ok(())
    }

    fn scan(&self, kind: RecordKind) -> Vec<Record> {
        self.index.scan(kind)
    }
}

// ---------------------------------------------------------------------------

/// A storage adapter shared by one service: writes are serialized, reads may
/// run concurrently and only observe completed writes.
pub struct Store {
    format: StorageFormat,
    dir: PathBuf,
    adapter: RwLock<Box<dyn StorageAdapter>>,
}

impl Store {
    pub fn open(format: StorageFormat, dir: impl Into<PathBuf>) -> Result<Self, StorageError> {
        let dir = dir.into();
        let adapter = open_adapter(format, &dir)?;
        Ok(Self {
            format,
            dir,
            adapter: RwLock::new(adapter),
        })
    }

    pub fn format(&self) -> StorageFormat {
        self.format
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn read(&self) -> RwLockReadGuard<'_, Box<dyn StorageAdapter>> {
        self.adapter.read().unwrap_or_else(|e| e.into_inner())
    }

    /// Exclusive access for read-modify-write sequences.
    pub fn write(&self) -> RwLockWriteGuard<'_, Box<dyn StorageAdapter>> {
        self.adapter.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn get<T: Storable>(&self, key: &str) -> Option<T> {
        self.read().get(T::KIND, key).and_then(T::from_record)
    }

    pub fn put<T: Storable>(&self, value: T) -> Result<(), StorageError> {
        self.write().put(value.into_record())
    }

    pub fn scan<T: Storable>(&self) -> Vec<T> {
        self.read()
            .scan(T::KIND)
            .into_iter()
            .filter_map(T::from_record)
            .collect()
    }
}

pub fn typed_get<T: Storable>(adapter: &dyn StorageAdapter, key: &str) -> Option<T> {
    adapter.get(T::KIND, key).and_then(T::from_record)
}

pub fn typed_scan<T: Storable>(adapter: &dyn StorageAdapter) -> Vec<T> {
    adapter.scan(T::KIND).into_iter().filter_map(T::from_record).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BookIssue, RoomAllotment};
    use chrono::NaiveDate;

    fn student(id: &str, name: &str) -> StudentRecord {
        StudentRecord {
            student_id: id.into(),
            first_name: name.into(),
            last_name: "Memon, \"Jr\"\nline".into(),
            address: "House 1, Hyderabad".into(),
            contact_number: "0300".into(),
            institution_name: "UoS".into(),
            department_name: "CS".into(),
            degree_program: "BS".into(),
            graduation_year: 2012,
        }
    }

    fn lib(id: &str) -> LibraryStudentRecord {
        LibraryStudentRecord {
            student_id: id.into(),
            issued_books: vec![BookIssue {
                book_id: "B1".into(),
                issue_date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
                return_date: None,
            }],
        }
    }

    #[test]
    fn put_get_scan_and_restart_for_every_format() {
        for format in StorageFormat::ALL {
            let dir = tempfile::tempdir().unwrap();
            {
                let mut a = open_adapter(format, dir.path()).unwrap();
                for i in 0..(INDEX_INTERVAL * 2 + 3) {
                    a.put(Record::Student(student(&format!("S{i:03}"), "A"))).unwrap();
                }
                a.put(Record::Student(student("S000", "Updated"))).unwrap();
                a.put(Record::LibraryStudent(lib("S001"))).unwrap();
                a.put(Record::HostelStudent(HostelStudentRecord {
                    student_id: "S002".into(),
                    allotments: vec![RoomAllotment {
                        room_id: "R1".into(),
                        allot_date: NaiveDate::from_ymd_opt(2020, 1, 2).unwrap(),
                        vacate_date: Some(NaiveDate::from_ymd_opt(2020, 3, 2).unwrap()),
                    }],
                }))
                .unwrap();
            }
            let a = open_adapter(format, dir.path()).unwrap();
            assert_eq!(a.scan(RecordKind::Student).len(), INDEX_INTERVAL * 2 + 3, "{format}");
            let s0 = typed_get::<StudentRecord>(a.as_ref(), "S000").unwrap();
            assert_eq!(s0.first_name, "Updated", "{format}");
            assert_eq!(s0.last_name, "Memon, \"Jr\"\nline");
            assert_eq!(typed_get::<LibraryStudentRecord>(a.as_ref(), "S001").unwrap(), lib("S001"));
            assert_eq!(a.scan(RecordKind::HostelStudent).len(), 1);
        }
    }

    #[test]
    fn torn_tail_is_discarded() {
        for format in StorageFormat::ALL {
            let dir = tempfile::tempdir().unwrap();
            let file = {
                let mut a = open_adapter(format, dir.path()).unwrap();
                a.put(Record::Student(student("S1", "A"))).unwrap();
                a.put(Record::Student(student("S2", "B"))).unwrap();
                match format {
                    StorageFormat::TabularText => dir.path().join(RecordKind::Student.table_file()),
                    StorageFormat::JsonLines => dir.path().join(JSONL_FILE),
                    StorageFormat::BinaryLog => dir.path().join(BINLOG_FILE),
                }
            };
            let len = fs::metadata(&file).unwrap().len();
            let f = OpenOptions::new().write(true).open(&file).unwrap();
            f.set_len(len - 5).unwrap();
            drop(f);
            let mut a = open_adapter(format, dir.path()).unwrap();
            let ids: Vec<_> = a.scan(RecordKind::Student).iter().map(Record::key).collect();
            assert_eq!(ids, vec!["S1"], "{format}");
            a.put(Record::Student(student("S3", "C"))).unwrap();
            drop(a);
            let a = open_adapter(format, dir.path()).unwrap();
            assert_eq!(a.scan(RecordKind::Student).len(), 2, "{format}");
        }
    }

    #[test]
    fn formats_are_not_interchangeable() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut a = open_adapter(StorageFormat::BinaryLog, dir.path()).unwrap();
            a.put(Record::Student(student("S1", "A"))).unwrap();
        }
        let bin = fs::read(dir.path().join(BINLOG_FILE)).unwrap();
        fs::write(dir.path().join(JSONL_FILE), &bin).unwrap();
        assert!(open_adapter(StorageFormat::JsonLines, dir.path()).is_err());
        fs::write(dir.path().join(RecordKind::Student.table_file()), &bin).unwrap();
        assert!(open_adapter(StorageFormat::TabularText, dir.path()).is_err());
    }

    #[test]
    fn binlog_index_frames_are_checked() {
        let dir = tempfile::tempdir().unwrap();
        {
            let mut a = open_adapter(StorageFormat::BinaryLog, dir.path()).unwrap();
            for i in 0..INDEX_INTERVAL {
                a.put(Record::Student(student(&format!("S{i}"), "A"))).unwrap();
            }
        }
        let path = dir.path().join(BINLOG_FILE);
        let mut bytes = fs::read(&path).unwrap();
        // flip a byte inside the first record payload
        bytes[BINLOG_MAGIC.len() + 8] ^= 0xff;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            open_adapter(StorageFormat::BinaryLog, dir.path()),
            Err(StorageError::Corrupt { .. })
        ));
    }

    #[test]
    fn row_round_trip() {
        let r = Record::LibraryStudent(lib("S9"));
        let row = r.to_row().unwrap();
        assert_eq!(row[0], "S9");
        assert_eq!(Record::from_row(RecordKind::LibraryStudent, &row).unwrap(), r);
    }
}
