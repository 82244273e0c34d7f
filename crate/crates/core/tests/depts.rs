use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use async_trait::async_trait;
use i3_core::broker::{bind, BrokerError};
use i3_core::depts::{
    seed_store, Admission, BrokerDirectory, Campus, DeptError, Hostel, Library, SeedCounts, ServiceKind,
    StudentDirectory, AMIS_SERVICE, HMIS_SERVICE, LMIS_SERVICE,
};
use i3_core::domain::{Bean, BookRecord, Department, DeptStatus, RoomRecord, StudentRecord};
use i3_core::envelope::TypedValue;
use i3_core::storage::{StorageFormat, Store};
use i3_testkit::fixtures::{read_rows, seed_dir};
use i3_testkit::raw::{expected_statuses, RawStore};
use i3_testkit::stack::{start_stack, Stack, StackOptions};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn student(id: &str) -> StudentRecord {
    StudentRecord {
        student_id: id.into(),
        first_name: "Zara".into(),
        last_name: "Soomro".into(),
        address: "Latifabad, Hyderabad".into(),
        contact_number: "022-1".into(),
        institution_name: "UoS".into(),
        department_name: "IT".into(),
        degree_program: "BS".into(),
        graduation_year: 2012,
    }
}

/// Every id is admitted; nothing goes over the network.
struct Everyone;

#[async_trait]
impl StudentDirectory for Everyone {
    async fn fetch_student(&self, id: &str) -> Result<StudentRecord, DeptError> {
        Ok(student(id))
    }
}

fn store(format: StorageFormat, dir: &Path) -> Arc<Store> {
    Arc::new(Store::open(format, dir).unwrap())
}

/// Store files by name. The handler log is the engine's, not the store's.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        if e.file_name() == "handler.log" {
            continue;
        }
        out.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap());
    }
    out
}

#[test]
fn admission_crud_in_every_format() {
    for format in StorageFormat::ALL {
        let dir = tempfile::tempdir().unwrap();
        let amis = Admission::new(store(format, dir.path()));
        assert!(amis.list_students().is_empty());
        assert!(matches!(amis.get_student("S1"), Err(DeptError::StudentNotFound(_))));
        assert_eq!(amis.add_student(student("S1")).unwrap(), "S1");
        assert_eq!(amis.get_student("S1").unwrap(), student("S1"));
        assert!(matches!(amis.add_student(student("S1")), Err(DeptError::DuplicateStudent(_))));
        let mut old = student("S2");
        old.graduation_year = 1500;
        assert!(matches!(amis.add_student(old), Err(DeptError::ValidationFailed(_))));
        assert_eq!(amis.list_students().len(), 1, "{format}");
    }
}

#[test]
fn list_students_matches_the_raw_file() {
    for format in StorageFormat::ALL {
        let dir = tempfile::tempdir().unwrap();
        let s = store(format, dir.path());
        seed_store(ServiceKind::Amis, &s, &seed_dir()).unwrap();
        let amis = Admission::new(s);
        for i in 0..45 {
            amis.add_student(student(&format!("N{i:02}"))).unwrap();
        }
        let listed: Vec<String> = amis.list_students().into_iter().map(|i| i.id).collect();
        let raw = RawStore::load(format, dir.path());
        assert_eq!(listed, raw.keys("student"), "{format}");
        assert_eq!(listed.len(), 12 + 45);
        let item = amis.list_students().into_iter().find(|i| i.id == "N00").unwrap();
        assert_eq!(item.label, "Zara Soomro");
    }
}

#[test]
fn seeding_twice_changes_nothing() {
    for kind in [ServiceKind::Amis, ServiceKind::Lmis, ServiceKind::Hmis] {
        let dir = tempfile::tempdir().unwrap();
        let s = store(kind.default_format(), dir.path());
        let first = seed_store(kind, &s, &seed_dir()).unwrap();
        assert_ne!(first, SeedCounts::default(), "{kind}");
        let before = snapshot(dir.path());
        assert_eq!(seed_store(kind, &s, &seed_dir()).unwrap(), SeedCounts::default(), "{kind}");
        assert_eq!(snapshot(dir.path()), before, "{kind}");
    }
}

/// Brute force over the fixture file itself: students with an issue row
/// that has no return date.
#[test]
fn seeded_library_report_matches_the_fixture_file() {
    let mut oracle: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for row in read_rows(&seed_dir().join("library_issues.csv")) {
        if row["return_date"].trim().is_empty() {
            oracle.entry(row["student_id"].clone()).or_default().push(row["book_id"].clone());
        }
    }
    assert_eq!(oracle.values().map(Vec::len).sum::<usize>(), 3);
    assert_eq!(oracle.len(), 2);
    for format in StorageFormat::ALL {
        let dir = tempfile::tempdir().unwrap();
        let s = store(format, dir.path());
        seed_store(ServiceKind::Lmis, &s, &seed_dir()).unwrap();
        let lib = Library::new(s, Arc::new(Everyone));
        let report = lib.defaulter_report();
        let ids: Vec<&String> = report.entries.iter().map(|e| &e.student_id).collect();
        assert_eq!(ids, oracle.keys().collect::<Vec<_>>(), "{format}");
        assert_eq!(lib.defaulter_report(), report);
    }
}

#[tokio::test]
async fn library_rules() {
    let dir = tempfile::tempdir().unwrap();
    let lib = Library::new(store(StorageFormat::TabularText, dir.path()), Arc::new(Everyone));
    lib.add_book(BookRecord {
        book_id: "B1".into(),
        isbn: "978-0".into(),
        title: "Web Services".into(),
        author: "Erl".into(),
        publisher: "PH".into(),
        year: 2005,
    })
    .unwrap();
    assert!(matches!(lib.issue_book("S1", "B1"), Err(DeptError::NotRegistered(_))));
    assert!(lib.register_student("S1").await.unwrap().issued_books.is_empty());
    assert!(matches!(lib.register_student("S1").await, Err(DeptError::AlreadyRegistered(_))));
    lib.register_student("S2").await.unwrap();
    assert!(matches!(lib.issue_book("S1", "B9"), Err(DeptError::BookNotFound(_))));
    assert!(matches!(lib.return_book("S1", "B1"), Err(DeptError::NoOutstandingIssue { .. })));
    lib.issue_book("S1", "B1").unwrap();
    assert!(matches!(lib.issue_book("S2", "B1"), Err(DeptError::BookAlreadyIssued(_))));
    assert_eq!(lib.defaulter_report().entries.len(), 1);
    lib.return_book("S1", "B1").unwrap();
    assert!(lib.defaulter_report().entries.is_empty());
    lib.issue_book("S2", "B1").unwrap();
    assert_eq!(lib.defaulter_report().entries[0].student_id, "S2");
}

/// Random issue/return/allot/vacate traffic; after every batch both
/// reports must equal a recomputation from the raw files, and no room may
/// hold more open allotments than its capacity.
#[tokio::test]
async fn reports_match_a_raw_file_recount_under_random_traffic() {
    for (seed, (lf, hf)) in [
        (1u64, (StorageFormat::TabularText, StorageFormat::JsonLines)),
        (2, (StorageFormat::BinaryLog, StorageFormat::TabularText)),
        (3, (StorageFormat::JsonLines, StorageFormat::BinaryLog)),
    ] {
        let mut rng = StdRng::seed_from_u64(seed);
        let (ld, hd) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let lib = Library::new(store(lf, ld.path()), Arc::new(Everyone));
        let hostel = Hostel::new(store(hf, hd.path()), Arc::new(Everyone));
        let capacity: BTreeMap<String, i64> = (0..6).map(|r| (format!("R{r}"), rng.random_range(1..=3))).collect();
        for (room_id, cap) in &capacity {
            hostel.add_room(RoomRecord { room_id: room_id.clone(), capacity: *cap }).unwrap();
        }
        for b in 0..15 {
            lib.add_book(BookRecord {
                book_id: format!("B{b:02}"),
                isbn: "x".into(),
                title: "t".into(),
                author: "a".into(),
                publisher: "p".into(),
                year: 2000,
            })
            .unwrap();
        }
        let students: Vec<String> = (0..20).map(|i| format!("S{i:02}")).collect();
        for s in &students {
            lib.register_student(s).await.unwrap();
            hostel.register_student(s).await.unwrap();
        }
        for step in 0..1000 {
            let s = &students[rng.random_range(0..students.len())];
            let book = format!("B{:02}", rng.random_range(0..15));
            let room = format!("R{}", rng.random_range(0..6));
            // errors are part of the workload; only the stores' final state matters
            let _ = match rng.random_range(0..4) {
                0 => lib.issue_book(s, &book),
                1 => lib.return_book(s, &book),
                2 => hostel.allot_room(s, &room),
                _ => hostel.vacate_room(s),
            };
            if step % 250 == 249 {
                let lraw = RawStore::load(lf, ld.path());
                let hraw = RawStore::load(hf, hd.path());
                let mut want_lib = Vec::new();
                let mut want_hostel = Vec::new();
                let mut open = BTreeMap::<String, i64>::new();
                for s in &students {
                    let st = expected_statuses(&RawStore::default(), &lraw, &hraw, s);
                    if let DeptStatus::Defaulter { reason } = &st[&Department::Library] {
                        want_lib.push((s.clone(), reason.clone()));
                    }
                    if let DeptStatus::Defaulter { reason } = &st[&Department::Hostel] {
                        want_hostel.push((s.clone(), reason.clone()));
                        let room = reason.rsplit(' ').next().unwrap().to_string();
                        *open.entry(room).or_default() += 1;
                    }
                }
                let got = |r: i3_core::domain::DefaulterReport| -> Vec<(String, String)> {
                    r.entries.into_iter().map(|e| (e.student_id, e.reason)).collect()
                };
                assert_eq!(got(lib.defaulter_report()), want_lib, "seed {seed} step {step}");
                assert_eq!(got(hostel.defaulter_report()), want_hostel, "seed {seed} step {step}");
                for (room, n) in open {
                    assert!(n <= capacity[&room], "{room} over capacity");
                }
            }
        }
    }
}

#[tokio::test]
async fn registration_goes_through_amis_and_never_touches_its_files() {
    let stack = start_stack(StackOptions {
        gateway: false,
        ..StackOptions::default()
    })
    .await;
    let reg = stack.registry.url.clone();
    let amis_dir = stack.store_dir(ServiceKind::Amis);
    let before = snapshot(&amis_dir);

    let lmis = bind(&reg, LMIS_SERVICE).await.unwrap();
    let hmis = bind(&reg, HMIS_SERVICE).await.unwrap();
    let sid = |v: &str| TypedValue::string("student_id", v);
    lmis.invoke("registerStudent", vec![sid("S010")]).await.unwrap();
    lmis.invoke("issueBook", vec![sid("S010"), TypedValue::string("book_id", "B009")]).await.unwrap();
    lmis.invoke("returnBook", vec![sid("S010"), TypedValue::string("book_id", "B009")]).await.unwrap();
    hmis.invoke("registerStudent", vec![sid("S010")]).await.unwrap();
    hmis.invoke("allotRoom", vec![sid("S010"), TypedValue::string("room_id", "R201")]).await.unwrap();
    hmis.invoke("vacateRoom", vec![sid("S010")]).await.unwrap();

    // two campus instances, each with its own directory
    let (c1, c2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&c1, &c2] {
        let campus = Campus::new(store(StorageFormat::TabularText, d.path()), Arc::new(BrokerDirectory::new(&reg)));
        let copy = campus.register_student("S011").await.unwrap();
        let amis = bind(&reg, AMIS_SERVICE).await.unwrap();
        let original = amis.invoke("getStudent", vec![sid("S011")]).await.unwrap();
        assert_eq!(copy, StudentRecord::from_typed(&original).unwrap());
        assert!(matches!(campus.register_student("S999").await, Err(DeptError::StudentNotFound(_))));
    }
    for d in [&c1, &c2] {
        assert_eq!(RawStore::load(StorageFormat::TabularText, d.path()).keys("campus_student"), ["S011"]);
    }
    assert_eq!(snapshot(&amis_dir), before);

    match lmis.invoke("registerStudent", vec![sid("S999")]).await {
        Err(BrokerError::RemoteFault(f)) => assert_eq!(f.detail.as_deref(), Some("StudentNotFound")),
        other => panic!("{other:?}"),
    }

    let Stack { amis, hmis: hmis_node, lmis: lmis_node, registry, .. } = stack;
    amis.shutdown().await;
    match hmis.invoke("registerStudent", vec![sid("S012")]).await {
        Err(BrokerError::RemoteFault(f)) => assert_eq!(f.detail.as_deref(), Some("AmisUnreachable")),
        other => panic!("{other:?}"),
    }
    lmis_node.shutdown().await;
    assert!(matches!(
        lmis.invoke("getStudentRecord", vec![sid("S010")]).await,
        Err(BrokerError::EndpointUnreachable(_))
    ));
    hmis_node.shutdown().await;
    registry.shutdown().await;
}
