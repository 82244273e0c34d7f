//! Reads store directories straight from disk, without the storage module,
//! and answers questions about them by brute force. Used as an oracle.

use std::collections::BTreeMap;
use std::path::Path;

use i3_core::domain::{Department, DeptStatus};
use i3_core::storage::StorageFormat;
use serde_json::{Map, Value};

/// Record kinds in on-disk code order (binary log kind byte = index + 1).
const KINDS: [&str; 11] = [
    "student",
    "department",
    "programme",
    "book",
    "room",
    "library_student",
    "hostel_student",
    "campus_student",
    "exam",
    "certificate",
    "audit",
];

fn table_file(kind: &str) -> String {
    let stem = match kind {
        "student" => "students",
        "department" => "departments",
        "programme" => "programmes",
        "book" => "books",
        "room" => "rooms",
        "library_student" => "library_students",
        "hostel_student" => "hostel_students",
        "campus_student" => "campus_students",
        "exam" => "exams",
        "certificate" => "certificates",
        other => other,
    };
    format!("{stem}.csv")
}

fn columns(kind: &str) -> &'static [&'static str] {
    match kind {
        "student" | "campus_student" => &[
            "student_id",
            "first_name",
            "last_name",
            "address",
            "contact_number",
            "institution_name",
            "department_name",
            "degree_program",
            "graduation_year",
        ],
        "department" => &["department_id", "department_name"],
        "programme" => &["programme_id", "programme_name", "department_id"],
        "book" => &["book_id", "isbn", "title", "author", "publisher", "year"],
        "room" => &["room_id", "capacity"],
        "library_student" => &["student_id", "issued_books"],
        "hostel_student" => &["student_id", "allotments"],
        "exam" => &["student_id", "programme_id", "passed", "completion_date"],
        "certificate" => &["certificate_id", "student_id", "programme_id", "issued_at", "verification"],
        "audit" => &["sequence", "student_id", "timestamp", "result", "durations_ms"],
        _ => &[],
    }
}

const JSON_COLUMNS: [&str; 5] = ["issued_books", "allotments", "verification", "result", "durations_ms"];

fn key_of(kind: &str, rec: &Map<String, Value>) -> String {
    let s = |k: &str| match rec.get(k) {
        Some(Value::String(s)) => s.clone(),
        Some(v) => v.to_string(),
        None => String::new(),
    };
    match kind {
        "department" => s("department_id"),
        "programme" => s("programme_id"),
        "book" => s("book_id"),
        "room" => s("room_id"),
        "exam" => format!("{}/{}", s("student_id"), s("programme_id")),
        "certificate" => s("certificate_id"),
        "audit" => s("sequence"),
        _ => s("student_id"),
    }
}

/// Cells as written: strings, except nested columns which are parsed JSON.
fn row_to_map(kind: &str, cells: Vec<String>) -> Map<String, Value> {
    columns(kind)
        .iter()
        .zip(cells)
        .map(|(name, cell)| {
            let v = if JSON_COLUMNS.contains(name) {
                serde_json::from_str(&cell).unwrap_or(Value::String(cell))
            } else {
                Value::String(cell)
            };
            (name.to_string(), v)
        })
        .collect()
}

/// Every record in a store directory, last write per key winning.
#[derive(Debug, Default)]
pub struct RawStore {
    records: BTreeMap<(String, String), Map<String, Value>>,
}

impl RawStore {
    pub fn load(format: StorageFormat, dir: &Path) -> Self {
        let mut store = RawStore::default();
        match format {
            StorageFormat::TabularText => {
                for kind in KINDS {
                    let path = dir.join(table_file(kind));
                    if !path.exists() {
                        continue;
                    }
                    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(&path).unwrap();
                    for row in rdr.records() {
                        let row = row.unwrap();
                        store.insert(kind, row_to_map(kind, row.iter().map(str::to_string).collect()));
                    }
                }
            }
            StorageFormat::JsonLines => {
                let path = dir.join("store.jsonl");
                let text = std::fs::read_to_string(&path).unwrap_or_default();
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    let v: Value = serde_json::from_str(line).unwrap();
                    let kind = v["kind"].as_str().unwrap().to_string();
                    let mut rec = v["record"].as_object().unwrap().clone();
                    // numbers and bools as they would appear in a text cell
                    for (k, val) in rec.iter_mut() {
                        if !JSON_COLUMNS.contains(&k.as_str()) && !val.is_string() {
                            *val = Value::String(val.to_string());
                        }
                    }
                    store.insert(&kind, rec);
                }
            }
            StorageFormat::BinaryLog => {
                let bytes = std::fs::read(dir.join("store.binlog")).unwrap_or_default();
                if bytes.is_empty() {
                    return store;
                }
                assert_eq!(&bytes[..8], b"I3BLOG01", "binary log magic");
                let mut pos = 8;
                while pos + 5 <= bytes.len() {
                    let tag = bytes[pos];
                    let len = u32::from_le_bytes(bytes[pos + 1..pos + 5].try_into().unwrap()) as usize;
                    let payload = &bytes[pos + 5..pos + 5 + len];
                    let crc = u32::from_le_bytes(bytes[pos + 5 + len..pos + 9 + len].try_into().unwrap());
                    assert_eq!(crc32fast::hash(payload), crc, "frame checksum at {pos}");
                    if tag == 1 {
                        let kind = KINDS[usize::from(payload[0]) - 1];
                        let n = u16::from_le_bytes([payload[1], payload[2]]) as usize;
                        let mut at = 3;
                        let mut cells = Vec::with_capacity(n);
                        for _ in 0..n {
                            let flen = u32::from_le_bytes(payload[at..at + 4].try_into().unwrap()) as usize;
                            at += 4;
                            cells.push(String::from_utf8(payload[at..at + flen].to_vec()).unwrap());
                            at += flen;
                        }
                        store.insert(kind, row_to_map(kind, cells));
                    }
                    pos += 9 + len;
                }
            }
        }
        store
    }

    fn insert(&mut self, kind: &str, rec: Map<String, Value>) {
        let key = key_of(kind, &rec);
        self.records.insert((kind.to_string(), key), rec);
    }

    pub fn get(&self, kind: &str, key: &str) -> Option<&Map<String, Value>> {
        self.records.get(&(kind.to_string(), key.to_string()))
    }

    pub fn keys(&self, kind: &str) -> Vec<String> {
        self.records
            .keys()
            .filter(|(k, _)| k == kind)
            .map(|(_, key)| key.clone())
            .collect()
    }

    pub fn count(&self, kind: &str) -> usize {
        self.keys(kind).len()
    }

    /// Ids from a nested list column whose `open_field` is null.
    fn open_ids(&self, kind: &str, student_id: &str, list: &str, id_field: &str, open_field: &str) -> Vec<String> {
        let Some(rec) = self.get(kind, student_id) else {
            return Vec::new();
        };
        let mut ids: Vec<String> = rec
            .get(list)
            .and_then(Value::as_array)
            .into_iter()
            .flatten()
            .filter(|e| e.get(open_field).is_none_or(Value::is_null))
            .map(|e| e[id_field].as_str().unwrap().to_string())
            .collect();
        ids.sort();
        ids
    }
}

/// What each department should report for `student_id`, worked out from
/// the raw files of the three stores.
pub fn expected_statuses(amis: &RawStore, lmis: &RawStore, hmis: &RawStore, student_id: &str) -> BTreeMap<Department, DeptStatus> {
    let mut out = BTreeMap::new();
    out.insert(
        Department::Admission,
        if amis.get("student", student_id).is_some() {
            DeptStatus::Clear
        } else {
            DeptStatus::Defaulter {
                reason: "no admission record".into(),
            }
        },
    );
    let books = lmis.open_ids("library_student", student_id, "issued_books", "book_id", "return_date");
    out.insert(
        Department::Library,
        if books.is_empty() {
            DeptStatus::Clear
        } else {
            DeptStatus::Defaulter {
                reason: format!("outstanding books: {}", books.join(", ")),
            }
        },
    );
    let rooms = hmis.open_ids("hostel_student", student_id, "allotments", "room_id", "vacate_date");
    out.insert(
        Department::Hostel,
        if rooms.is_empty() {
            DeptStatus::Clear
        } else {
            DeptStatus::Defaulter {
                reason: format!("open room allotment: {}", rooms.join(", ")),
            }
        },
    );
    out
}
