//! The acceptance scenarios. Each returns a one-line summary on success or
//! a description of what went wrong.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};
use std::sync::Arc;
use std::time::{Duration, Instant};

use i3_core::broker::{bind, fetch_wsdl, BrokerError, RegistryClient, ServiceProxy};
use i3_core::depts::{ServiceKind, AMIS_SERVICE, HMIS_SERVICE, LMIS_SERVICE};
use i3_core::domain::{Bean, Department, DeptStatus, ExamRecord, Overall, StudentRecord};
use i3_core::emis::{broker_probes, EmisError, FanOutMode, Orchestrator, DEFAULT_CALL_TIMEOUT};
use i3_core::engine::{remote_deploy, remote_undeploy};
use i3_core::envelope::{decode_envelope, encode_envelope, FaultCode, TypedValue, Value};
use i3_core::node::{slice_for, start_node, start_registry, NodeConfig, BUILTIN_WSDD};
use i3_core::storage::{StorageFormat, Store};
use i3_core::wsdd::parse_wsdd;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::fixtures::{fixtures_dir, json_row, normalize, seed_dir, seed_student};
use crate::gen::{fuzz_inputs, sample_envelopes, Coverage};
use crate::raw::{expected_statuses, RawStore};
use crate::stack::{node_config, start_stack, StackOptions};
use crate::stubs::{grid_states, StubOutcome, StubProbe};

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let took = started.elapsed();
    if took < limit {
        Ok(took)
    } else {
        Err(format!("took {took:?}, limit {limit:?}"))
    }
}

// 1 ---------------------------------------------------------------------------

pub fn wsdd_fidelity() -> Outcome {
    let started = Instant::now();
    let text = std::fs::read(fixtures_dir().join("i3.wsdd")).map_err(|e| e.to_string())?;
    let d = parse_wsdd(&text).map_err(|e| e.to_string())?;
    let names = d.service_names();
    ensure!(
        names == [AMIS_SERVICE, LMIS_SERVICE, HMIS_SERVICE],
        "service names {names:?}"
    );
    let counts: Vec<usize> = d.services.iter().map(|s| s.bean_mappings.len()).collect();
    ensure!(counts == [4, 1, 1], "bean mapping counts {counts:?}");
    for s in &d.services {
        ensure!(s.request_flow == ["print"], "{} request flow {:?}", s.name, s.request_flow);
    }
    let took = within(Duration::from_secs(1), started)?;
    Ok(format!("3 services, mappings {counts:?}, flows [print] ({took:.1?})"))
}

// 2 ---------------------------------------------------------------------------

pub fn codec_soundness(seed: u64) -> Outcome {
    let started = Instant::now();
    let registry = i3_core::domain::full_registry();
    let envelopes = sample_envelopes(1000, seed);
    let coverage = Coverage::of(&envelopes);
    ensure!(coverage.is_complete(), "sample misses kinds or beans: {coverage:?}");

    let mut encoded = Vec::with_capacity(envelopes.len());
    for (i, e) in envelopes.iter().enumerate() {
        let text = encode_envelope(e, &registry).map_err(|err| format!("envelope {i} does not encode: {err}"))?;
        let back = decode_envelope(text.as_bytes(), &registry).map_err(|err| format!("envelope {i}: {err}\n{text}"))?;
        ensure!(back == *e, "envelope {i} changed in a round trip:\n{text}");
        encoded.push(text);
    }

    let inputs = fuzz_inputs(&encoded, 10_000, seed);
    let mut accepted = 0;
    for (i, bytes) in inputs.iter().enumerate() {
        let outcome = std::panic::catch_unwind(|| decode_envelope(bytes, &registry));
        match outcome {
            Err(_) => return Err(format!("decoder panicked on fuzz input {i}: {:?}", String::from_utf8_lossy(bytes))),
            Ok(Ok(env)) => {
                accepted += 1;
                // anything accepted must survive a second round trip
                let again = encode_envelope(&env, &registry)
                    .and_then(|t| decode_envelope(t.as_bytes(), &registry))
                    .map_err(|e| format!("fuzz input {i} decoded but does not re-encode: {e}"))?;
                ensure!(again == env, "fuzz input {i} is not stable");
            }
            Ok(Err(_)) => {}
        }
    }
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "1000 round trips over {} bean types, 10000 fuzz inputs ({accepted} accepted, rest rejected) ({took:.1?})",
        coverage.beans.len()
    ))
}

// 3 ---------------------------------------------------------------------------

/// Child process killed on drop.
pub struct Proc(pub Child);

impl Drop for Proc {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

/// Starts `bin args…` and waits for its `listening on URL` line.
pub fn spawn_listening(bin: &Path, args: &[&str]) -> Result<(Proc, String), String> {
    let mut child = Command::new(bin)
        .args(args)
        .stdout(Stdio::piped())
        .stderr(Stdio::inherit())
        .spawn()
        .map_err(|e| format!("cannot start {}: {e}", bin.display()))?;
    let stdout = child.stdout.take().expect("piped");
    let proc = Proc(child);
    let mut lines = BufReader::new(stdout).lines();
    for line in lines.by_ref() {
        let line = line.map_err(|e| e.to_string())?;
        if let Some(url) = line.strip_prefix("listening on ") {
            let url = url.trim().to_string();
            // keep draining so the child never blocks on a full pipe
            std::thread::spawn(move || lines.for_each(drop));
            return Ok((proc, url));
        }
    }
    Err(format!("{args:?} exited before listening"))
}

pub async fn lifecycle_triangle(bin: &Path) -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = dir.path().to_str().unwrap().to_string();
    let seed = seed_dir().to_str().unwrap().to_string();

    let (_registry, registry_url) = tokio::task::block_in_place(|| {
        spawn_listening(bin, &["--data-dir", &data, "registry", "--listen", "127.0.0.1:0"])
    })?;
    let (_amis, amis_url) = tokio::task::block_in_place(|| {
        spawn_listening(
            bin,
            &[
                "--data-dir", &data, "--registry-url", &registry_url, "service", "amis", "--listen", "127.0.0.1:0",
                "--seed", &seed,
            ],
        )
    })?;

    // publish happened at service start; find it
    let client = RegistryClient::new(registry_url.clone());
    let record = {
        let deadline = Instant::now() + Duration::from_secs(5);
        loop {
            match client.find(AMIS_SERVICE).await {
                Ok(r) => break r,
                Err(BrokerError::NotFound(_)) if Instant::now() < deadline => {
                    tokio::time::sleep(Duration::from_millis(50)).await
                }
                Err(e) => return Err(format!("find: {e}")),
            }
        }
    };
    ensure!(record.endpoint_url.starts_with(&amis_url), "published endpoint {} vs {amis_url}", record.endpoint_url);
    let wsdl = fetch_wsdl(&reqwest_client(), &record.wsdl_url)
        .await
        .map_err(|e| format!("WSDL fetch: {e}"))?;
    ensure!(wsdl.operation("getStudent").is_some(), "WSDL lacks getStudent");
    let proxy = bind(&registry_url, AMIS_SERVICE).await.map_err(|e| format!("bind: {e}"))?;
    let value = proxy
        .invoke("getStudent", vec![TypedValue::string("student_id", "S001")])
        .await
        .map_err(|e| format!("getStudent: {e}"))?;
    let got = StudentRecord::from_typed(&value).map_err(|e| e.to_string())?;
    let expected = seed_student("S001").ok_or("S001 missing from the seed")?;
    let got_row = json_row(&serde_json::to_value(&got).map_err(|e| e.to_string())?);
    ensure!(
        normalize(&got_row) == normalize(&expected),
        "record differs from the seed:\n got {got_row:?}\nseed {expected:?}"
    );
    let took = within(Duration::from_secs(10), started)?;
    Ok(format!("publish, find, WSDL, bind, getStudent(S001) matches seed ({took:.1?})"))
}

fn reqwest_client() -> reqwest::Client {
    reqwest::Client::new()
}

// 4 ---------------------------------------------------------------------------

/// Renders a wire value compactly. Dates become `<date>` because the suite
/// runs against today's clock.
pub fn render(v: &TypedValue) -> String {
    match &v.value {
        Value::Str(s) => s.clone(),
        Value::Int(i) => i.to_string(),
        Value::Bool(b) => b.to_string(),
        Value::Date(_) => "<date>".into(),
        Value::List(items) => format!("[{}]", items.iter().map(render).collect::<Vec<_>>().join(", ")),
        Value::Bean(fields) => format!(
            "{{{}}}",
            fields
                .iter()
                .map(|f| format!("{}={}", f.name, render(f)))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    }
}

fn outcome_line(op: &str, r: Result<TypedValue, BrokerError>) -> String {
    match r {
        Ok(v) => format!("{op} -> {}", render(&v)),
        Err(BrokerError::RemoteFault(f)) => {
            format!("{op} -> fault {} {}", f.code, f.detail.unwrap_or_default())
        }
        Err(e) => format!("{op} -> error {e}"),
    }
}

fn sid(id: &str) -> Vec<TypedValue> {
    vec![TypedValue::string("student_id", id)]
}

fn sid_book(id: &str, book: &str) -> Vec<TypedValue> {
    vec![TypedValue::string("student_id", id), TypedValue::string("book_id", book)]
}

/// Every LMIS operation, success and failure paths, against a seeded LMIS
/// on `format`, including a restart. Returns the transcript.
pub async fn lmis_suite(format: StorageFormat) -> Result<Vec<String>, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let registry = start_registry("127.0.0.1:0", None).await.map_err(|e| e.to_string())?;
    let opts = StackOptions {
        formats: [StorageFormat::BinaryLog, format, StorageFormat::JsonLines],
        ..StackOptions::default()
    };
    let amis = start_node(node_config(ServiceKind::Amis, dir.path(), &registry.url, &opts))
        .await
        .map_err(|e| e.to_string())?;
    let lmis_cfg = node_config(ServiceKind::Lmis, dir.path(), &registry.url, &opts);
    let lmis = start_node(lmis_cfg.clone()).await.map_err(|e| e.to_string())?;
    let p = bind(&registry.url, LMIS_SERVICE).await.map_err(|e| e.to_string())?;

    let mut t = Vec::new();
    async fn step(t: &mut Vec<String>, p: &ServiceProxy, label: &str, method: &str, params: Vec<TypedValue>) {
        t.push(outcome_line(label, p.invoke(method, params).await));
    }
    step(&mut t, &p, "registerStudent S010", "registerStudent", sid("S010")).await;
    step(&mut t, &p, "registerStudent S010", "registerStudent", sid("S010")).await;
    step(&mut t, &p, "registerStudent NOPE", "registerStudent", sid("NOPE")).await;
    step(&mut t, &p, "getStudentRecord S011", "getStudentRecord", sid("S011")).await;
    step(&mut t, &p, "issueBook S010 B002", "issueBook", sid_book("S010", "B002")).await;
    step(&mut t, &p, "issueBook S010 B001", "issueBook", sid_book("S010", "B001")).await;
    step(&mut t, &p, "issueBook S010 B999", "issueBook", sid_book("S010", "B999")).await;
    step(&mut t, &p, "issueBook S011 B005", "issueBook", sid_book("S011", "B005")).await;
    step(&mut t, &p, "returnBook S010 B005", "returnBook", sid_book("S010", "B005")).await;
    step(&mut t, &p, "getStudentRecord S010", "getStudentRecord", sid("S010")).await;
    step(&mut t, &p, "defaulterReport", "defaulterReport", vec![]).await;
    step(&mut t, &p, "returnBook S010 B002", "returnBook", sid_book("S010", "B002")).await;
    step(&mut t, &p, "returnBook S010 B002", "returnBook", sid_book("S010", "B002")).await;
    step(&mut t, &p, "defaulterReport", "defaulterReport", vec![]).await;
    step(&mut t, &p, "issueBook S010 B002", "issueBook", sid_book("S010", "B002")).await;
    step(&mut t, &p, "returnBook S002 B001", "returnBook", sid_book("S002", "B001")).await;
    step(&mut t, &p, "getStudentRecord S002", "getStudentRecord", sid("S002")).await;

    // everything above must survive a restart
    lmis.shutdown().await;
    let lmis = start_node(lmis_cfg).await.map_err(|e| e.to_string())?;
    let p = bind(&registry.url, LMIS_SERVICE).await.map_err(|e| e.to_string())?;
    t.push("-- restart".into());
    step(&mut t, &p, "getStudentRecord S010", "getStudentRecord", sid("S010")).await;
    step(&mut t, &p, "defaulterReport", "defaulterReport", vec![]).await;

    lmis.shutdown().await;
    amis.shutdown().await;
    registry.shutdown().await;
    Ok(t)
}

/// The transcript every format must produce, worked out by hand from the
/// seed fixtures: S002 holds B001 and B003, S005 holds B004.
pub fn lmis_expected() -> Vec<String> {
    [
        "registerStudent S010 -> {student_id=S010 issued_books=[]}",
        "registerStudent S010 -> fault Client AlreadyRegistered",
        "registerStudent NOPE -> fault Client StudentNotFound",
        "getStudentRecord S011 -> fault Client NotRegistered",
        "issueBook S010 B002 -> true",
        "issueBook S010 B001 -> fault Client BookAlreadyIssued",
        "issueBook S010 B999 -> fault Client BookNotFound",
        "issueBook S011 B005 -> fault Client NotRegistered",
        "returnBook S010 B005 -> fault Client NoOutstandingIssue",
        "getStudentRecord S010 -> {student_id=S010 issued_books=[{book_id=B002 issue_date=<date> return_date=[]}]}",
        "defaulterReport -> [{id=S002 label=outstanding books: B001, B003}, {id=S005 label=outstanding books: B004}, {id=S010 label=outstanding books: B002}]",
        "returnBook S010 B002 -> true",
        "returnBook S010 B002 -> fault Client NoOutstandingIssue",
        "defaulterReport -> [{id=S002 label=outstanding books: B001, B003}, {id=S005 label=outstanding books: B004}]",
        "issueBook S010 B002 -> true",
        "returnBook S002 B001 -> true",
        "getStudentRecord S002 -> {student_id=S002 issued_books=[{book_id=B001 issue_date=<date> return_date=[<date>]}, {book_id=B003 issue_date=<date> return_date=[]}]}",
        "-- restart",
        "getStudentRecord S010 -> {student_id=S010 issued_books=[{book_id=B002 issue_date=<date> return_date=[<date>]}, {book_id=B002 issue_date=<date> return_date=[]}]}",
        "defaulterReport -> [{id=S002 label=outstanding books: B003}, {id=S005 label=outstanding books: B004}, {id=S010 label=outstanding books: B002}]",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

pub async fn heterogeneity() -> Outcome {
    let started = Instant::now();
    for format in StorageFormat::ALL {
        let got = lmis_suite(format).await?;
        let want = lmis_expected();
        if got != want {
            let diff: Vec<String> = got
                .iter()
                .zip(&want)
                .filter(|(g, w)| g != w)
                .map(|(g, w)| format!("got  {g}\nwant {w}"))
                .collect();
            return Err(format!("LMIS suite on {format}: {} lines vs {}\n{}", got.len(), want.len(), diff.join("\n")));
        }
    }

    // one end-to-end verification with every service on a different format
    let stack = start_stack(StackOptions {
        formats: [StorageFormat::TabularText, StorageFormat::JsonLines, StorageFormat::BinaryLog],
        ..StackOptions::default()
    })
    .await;
    let orch = stack.orchestrator().clone();
    let clear = orch.verify_student("S001").await.map_err(|e| e.to_string())?;
    ensure!(clear.overall == Overall::Clear, "S001 not clear: {clear:?}");
    let blocked = orch.verify_student("S002").await.map_err(|e| e.to_string())?;
    ensure!(
        blocked.status(Department::Library)
            == Some(&DeptStatus::Defaulter {
                reason: "outstanding books: B001, B003".into()
            }),
        "S002 library status {blocked:?}"
    );
    let cert = orch.issue_certificate("S001", "P01").await.map_err(|e| e.to_string())?;
    stack.shutdown().await;
    let took = within(Duration::from_secs(120), started)?;
    Ok(format!(
        "LMIS suite identical on {} formats; mixed-format stack issued {} ({took:.1?})",
        StorageFormat::ALL.len(),
        cert.certificate_id
    ))
}

// 5 ---------------------------------------------------------------------------

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(header).unwrap();
    for r in rows {
        w.write_record(&r).unwrap();
    }
    w.flush().unwrap();
}

/// Writes a random fixture: `students` admitted students, books and rooms.
fn random_seed(dir: &Path, rng: &mut StdRng, students: usize, books: usize, rooms: usize) {
    let names = ["Amna", "Bilal", "Sana", "Danish", "Hira", "Zain", "Ayesha", "Faraz"];
    write_csv(
        &dir.join("students.csv"),
        &[
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
        (0..students).map(|i| {
            vec![
                format!("R{i:03}"),
                names[rng.random_range(0..names.len())].to_string(),
                names[rng.random_range(0..names.len())].to_string(),
                format!("House {}, Block {}", rng.random_range(1..200), rng.random_range(1..9)),
                format!("0300-{:07}", rng.random_range(0..10_000_000)),
                "QUEST".into(),
                "Computer Systems".into(),
                "BE".into(),
                rng.random_range(2015..2030).to_string(),
            ]
        }),
    );
    write_csv(
        &dir.join("books.csv"),
        &["book_id", "isbn", "title", "author", "publisher", "year"],
        (0..books).map(|i| {
            vec![
                format!("K{i:02}"),
                format!("978-{i:010}"),
                format!("Title {i}"),
                "Author".into(),
                "Press".into(),
                "2000".into(),
            ]
        }),
    );
    write_csv(
        &dir.join("rooms.csv"),
        &["room_id", "capacity"],
        (0..rooms).map(|i| vec![format!("Q{i:02}"), rng.random_range(1..4).to_string()]),
    );
}

pub async fn verification_correctness(seed: u64) -> Outcome {
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(seed);
    let fixture = tempfile::tempdir().map_err(|e| e.to_string())?;
    random_seed(fixture.path(), &mut rng, 100, 40, 25);

    let mut formats = StorageFormat::ALL;
    for i in (1..formats.len()).rev() {
        formats.swap(i, rng.random_range(0..=i));
    }
    let stack = start_stack(StackOptions {
        formats,
        seed: Some(fixture.path().to_path_buf()),
        ..StackOptions::default()
    })
    .await;
    let lmis = bind(&stack.registry.url, LMIS_SERVICE).await.map_err(|e| e.to_string())?;
    let hmis = bind(&stack.registry.url, HMIS_SERVICE).await.map_err(|e| e.to_string())?;
    let ids: Vec<String> = (0..100).map(|i| format!("R{i:03}")).collect();

    for id in &ids {
        if rng.random_bool(0.8) {
            let _ = lmis.invoke("registerStudent", sid(id)).await;
        }
        if rng.random_bool(0.7) {
            let _ = hmis.invoke("registerStudent", sid(id)).await;
        }
    }

    // issues and returns; failures (not registered, already issued...) are
    // part of the mix
    let mut issued: Vec<(String, String)> = Vec::new();
    let book_ops = rng.random_range(150..=200);
    for _ in 0..book_ops {
        if !issued.is_empty() && rng.random_bool(0.35) {
            let (s, b) = issued.swap_remove(rng.random_range(0..issued.len()));
            let _ = lmis.invoke("returnBook", sid_book(&s, &b)).await;
        } else {
            let s = &ids[rng.random_range(0..ids.len())];
            let b = format!("K{:02}", rng.random_range(0..40));
            if lmis.invoke("issueBook", sid_book(s, &b)).await.is_ok() {
                issued.push((s.clone(), b));
            }
        }
    }
    let mut allotted: Vec<String> = Vec::new();
    let room_ops = rng.random_range(70..=100);
    for _ in 0..room_ops {
        if !allotted.is_empty() && rng.random_bool(0.3) {
            let s = allotted.swap_remove(rng.random_range(0..allotted.len()));
            let _ = hmis.invoke("vacateRoom", sid(&s)).await;
        } else {
            let s = &ids[rng.random_range(0..ids.len())];
            let params = vec![
                TypedValue::string("student_id", s.as_str()),
                TypedValue::string("room_id", format!("Q{:02}", rng.random_range(0..25))),
            ];
            if hmis.invoke("allotRoom", params).await.is_ok() {
                allotted.push(s.clone());
            }
        }
    }

    let orch = stack.orchestrator().clone();
    let mut results = BTreeMap::new();
    for id in &ids {
        results.insert(id.clone(), orch.verify_student(id).await.map_err(|e| e.to_string())?);
    }

    let amis_raw = RawStore::load(formats[0], &stack.store_dir(ServiceKind::Amis));
    let lmis_raw = RawStore::load(formats[1], &stack.store_dir(ServiceKind::Lmis));
    let hmis_raw = RawStore::load(formats[2], &stack.store_dir(ServiceKind::Hmis));
    ensure!(amis_raw.count("student") == 100, "raw AMIS holds {} students", amis_raw.count("student"));

    let mut mismatches = Vec::new();
    let mut blocked = 0;
    for (id, r) in &results {
        let want = expected_statuses(&amis_raw, &lmis_raw, &hmis_raw, id);
        if r.per_department != want {
            mismatches.push(format!("{id}: got {:?}, oracle {want:?}", r.per_department));
        }
        if r.overall == Overall::Blocked {
            blocked += 1;
        }
    }
    let audits = orch.audit().len();
    stack.shutdown().await;
    ensure!(
        mismatches.is_empty(),
        "{} mismatches (formats {formats:?}):\n{}",
        mismatches.len(),
        mismatches.join("\n")
    );
    ensure!(audits == ids.len(), "{audits} audit entries for {} verifications", ids.len());
    let took = within(Duration::from_secs(60), started)?;
    Ok(format!(
        "100 students, {book_ops} book ops, {room_ops} room ops, formats {formats:?}: 0 mismatches, {blocked} blocked ({took:.1?})"
    ))
}

// 6 ---------------------------------------------------------------------------

pub async fn fail_closed_grid() -> Outcome {
    let started = Instant::now();
    let states = grid_states();
    let mut issued = 0;
    let mut refused = 0;
    for a in &states {
        for l in &states {
            for h in &states {
                let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
                let store = Arc::new(Store::open(StorageFormat::BinaryLog, dir.path()).map_err(|e| e.to_string())?);
                let orch = Orchestrator::builder(store.clone())
                    .probe(StubProbe::new(Department::Admission, a.clone()))
                    .probe(StubProbe::new(Department::Library, l.clone()))
                    .probe(StubProbe::new(Department::Hostel, h.clone()))
                    .build();
                orch.add_exam(ExamRecord {
                    student_id: "S1".into(),
                    programme_id: "P1".into(),
                    passed: true,
                    completion_date: chrono::NaiveDate::from_ymd_opt(2024, 6, 30).unwrap(),
                })
                .map_err(|e| e.to_string())?;
                let all_clear = [a, l, h].iter().all(|s| **s == StubOutcome::Answer(DeptStatus::Clear));
                let cell = format!("[{a:?}, {l:?}, {h:?}]");
                match orch.issue_certificate("S1", "P1").await {
                    Ok(c) => {
                        ensure!(all_clear, "certificate {} issued in cell {cell}", c.certificate_id);
                        issued += 1;
                    }
                    Err(EmisError::VerificationBlocked(r)) => {
                        ensure!(!all_clear, "all-clear cell refused");
                        ensure!(r.overall == Overall::Blocked, "blocked result says {:?}", r.overall);
                        let certs = store.scan::<i3_core::domain::Certificate>();
                        ensure!(certs.is_empty(), "cell {cell} stored a certificate");
                        refused += 1;
                    }
                    Err(e) => return Err(format!("cell {cell}: unexpected error {e}")),
                }
            }
        }
    }
    ensure!(issued == 1 && refused == 26, "{issued} issued, {refused} refused");
    let took = within(Duration::from_secs(30), started)?;
    Ok(format!("27 cells: 1 issued, 26 refused ({took:.1?})"))
}

// 7 ---------------------------------------------------------------------------

pub async fn fan_out_concurrency(trials: usize) -> Outcome {
    let delay = Duration::from_millis(500);
    let stack = start_stack(StackOptions {
        delay: Some(delay),
        gateway: false,
        ..StackOptions::default()
    })
    .await;
    let url = stack.registry.url.clone();
    let build = |mode| -> Result<Orchestrator, String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?.keep();
        let store = Arc::new(Store::open(StorageFormat::BinaryLog, dir).map_err(|e| e.to_string())?);
        Ok(Orchestrator::builder(store)
            .registry(&url)
            .probes(broker_probes(&url, &Department::ALL, DEFAULT_CALL_TIMEOUT))
            .mode(mode)
            .build())
    };
    let concurrent = build(FanOutMode::Concurrent)?;
    let sequential = build(FanOutMode::Sequential)?;

    let mut worst_concurrent = Duration::ZERO;
    let mut best_sequential = Duration::MAX;
    for trial in 0..trials {
        let t = Instant::now();
        let r = concurrent.verify_student("S001").await.map_err(|e| e.to_string())?;
        let took = t.elapsed();
        ensure!(r.overall == Overall::Clear, "trial {trial}: {r:?}");
        ensure!(took < Duration::from_millis(1000), "trial {trial}: concurrent verification took {took:?}");
        worst_concurrent = worst_concurrent.max(took);

        let t = Instant::now();
        let r = sequential.verify_student("S001").await.map_err(|e| e.to_string())?;
        let took = t.elapsed();
        ensure!(r.overall == Overall::Clear, "trial {trial}: {r:?}");
        ensure!(took >= Duration::from_millis(1500), "trial {trial}: sequential verification took only {took:?}");
        best_sequential = best_sequential.min(took);
    }
    stack.shutdown().await;
    Ok(format!(
        "{trials} trials: concurrent max {worst_concurrent:.0?} < 1000ms, sequential min {best_sequential:.0?} >= 1500ms"
    ))
}

// 8 ---------------------------------------------------------------------------

pub async fn deploy_undeploy(in_flight: usize) -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let registry = start_registry("127.0.0.1:0", None).await.map_err(|e| e.to_string())?;
    let opts = StackOptions::default();
    let amis = start_node(node_config(ServiceKind::Amis, dir.path(), &registry.url, &opts))
        .await
        .map_err(|e| e.to_string())?;
    let mut cfg: NodeConfig = node_config(ServiceKind::Lmis, dir.path(), &registry.url, &opts);
    cfg.delay = Some(Duration::from_millis(800));
    let lmis = start_node(cfg).await.map_err(|e| e.to_string())?;
    let proxy = bind(&registry.url, LMIS_SERVICE).await.map_err(|e| e.to_string())?;

    let calls: Vec<_> = (0..in_flight)
        .map(|_| {
            let p = proxy.clone();
            tokio::spawn(async move { p.invoke("getStudentRecord", sid("S002")).await })
        })
        .collect();
    tokio::time::sleep(Duration::from_millis(200)).await;

    let undeploy = std::fs::read(fixtures_dir().join("i3-undeploy.wsdd")).map_err(|e| e.to_string())?;
    let report = remote_undeploy(&lmis.url, &undeploy).await.map_err(|e| e.to_string())?;
    ensure!(report.undeployed == [LMIS_SERVICE], "undeploy report {report:?}");

    let after = proxy.invoke("getStudentRecord", sid("S002")).await;
    match after {
        Err(BrokerError::RemoteFault(f)) if f.code == FaultCode::ServiceNotFound => {}
        other => return Err(format!("call after undeploy: {other:?}")),
    }
    let mut completed = 0;
    for c in calls {
        match c.await.map_err(|e| e.to_string())? {
            Ok(_) => completed += 1,
            Err(e) => return Err(format!("in-flight call failed: {e}")),
        }
    }

    let descriptor = parse_wsdd(BUILTIN_WSDD.as_bytes()).map_err(|e| e.to_string())?;
    let slice = slice_for(&descriptor, &[ServiceKind::Lmis]);
    let names = remote_deploy(&lmis.url, slice.to_xml().as_bytes())
        .await
        .map_err(|e| format!("redeploy: {e}"))?;
    ensure!(names == [LMIS_SERVICE], "redeploy returned {names:?}");
    let back = proxy
        .invoke("getStudentRecord", sid("S002"))
        .await
        .map_err(|e| format!("call after redeploy: {e}"))?;
    ensure!(render(&back).contains("B003"), "record after redeploy: {}", render(&back));

    lmis.shutdown().await;
    amis.shutdown().await;
    registry.shutdown().await;
    let took = within(Duration::from_secs(20), started)?;
    Ok(format!(
        "{completed}/{in_flight} in-flight calls completed, ServiceNotFound after undeploy, restored by redeploy ({took:.1?})"
    ))
}
