use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

pub fn seed_dir() -> PathBuf {
    fixtures_dir().join("seed")
}

/// One CSV row as column name → cell, read straight from the file.
pub type Row = BTreeMap<String, String>;

pub fn read_rows(path: &Path) -> Vec<Row> {
    let mut rdr = csv::Reader::from_path(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let headers = rdr.headers().unwrap().clone();
    rdr.records()
        .map(|r| {
            let r = r.unwrap();
            headers
                .iter()
                .zip(r.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect()
        })
        .collect()
}

/// The seeded `students.csv` row for `student_id`.
pub fn seed_student(student_id: &str) -> Option<Row> {
    read_rows(&seed_dir().join("students.csv"))
        .into_iter()
        .find(|r| r.get("student_id").map(String::as_str) == Some(student_id))
}

/// Collapses runs of whitespace and trims each value, so records read from
/// different sources compare on content only.
pub fn normalize(row: &Row) -> Row {
    row.iter()
        .map(|(k, v)| (k.clone(), v.split_whitespace().collect::<Vec<_>>().join(" ")))
        .collect()
}

/// Flattens a JSON object into a [`Row`]; strings stay unquoted.
pub fn json_row(v: &serde_json::Value) -> Row {
    v.as_object()
        .expect("object")
        .iter()
        .map(|(k, v)| {
            let s = match v {
                serde_json::Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            (k.clone(), s)
        })
        .collect()
}
