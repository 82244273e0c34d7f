use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use i3_core::domain::{Department, DeptStatus, ExamRecord, Overall};
use i3_core::emis::{DepartmentProbe, EmisError, FanOutMode, Orchestrator};
use i3_core::storage::{StorageFormat, Store};
use i3_testkit::stubs::{StubOutcome, StubProbe};
use i3_testkit::suite;

fn clear(d: Department) -> Arc<dyn DepartmentProbe> {
    StubProbe::new(d, StubOutcome::Answer(DeptStatus::Clear))
}

fn all_clear() -> Vec<Arc<dyn DepartmentProbe>> {
    Department::ALL.iter().map(|d| clear(*d)).collect()
}

fn store(dir: &std::path::Path) -> Arc<Store> {
    Arc::new(Store::open(StorageFormat::BinaryLog, dir).unwrap())
}

fn exam(student: &str, programme: &str, passed: bool) -> ExamRecord {
    ExamRecord {
        student_id: student.into(),
        programme_id: programme.into(),
        passed,
        completion_date: NaiveDate::from_ymd_opt(2024, 6, 30).unwrap(),
    }
}

#[tokio::test]
async fn fail_closed_grid() {
    let detail = suite::fail_closed_grid().await.unwrap();
    println!("{detail}");
}

#[tokio::test]
async fn concurrent_fan_out_overlaps_the_calls() {
    let dir = tempfile::tempdir().unwrap();
    let delay = Duration::from_millis(300);
    let build = |mode| {
        let probes: Vec<Arc<dyn DepartmentProbe>> = Department::ALL
            .iter()
            .map(|d| StubProbe::delayed(*d, StubOutcome::Answer(DeptStatus::Clear), delay) as Arc<dyn DepartmentProbe>)
            .collect();
        Orchestrator::builder(store(dir.path())).probes(probes).mode(mode).build()
    };
    let concurrent = build(FanOutMode::Concurrent);
    let t = Instant::now();
    assert_eq!(concurrent.verify_student("S1").await.unwrap().overall, Overall::Clear);
    assert!(t.elapsed() < delay * 2, "{:?}", t.elapsed());
    drop(concurrent);

    let sequential = build(FanOutMode::Sequential);
    let t = Instant::now();
    sequential.verify_student("S1").await.unwrap();
    assert!(t.elapsed() >= delay * 3, "{:?}", t.elapsed());
}

#[tokio::test]
async fn a_hanging_department_times_out_as_unreachable() {
    let dir = tempfile::tempdir().unwrap();
    let orch = Orchestrator::builder(store(dir.path()))
        .probe(clear(Department::Admission))
        .probe(StubProbe::new(Department::Library, StubOutcome::Hang))
        .probe(clear(Department::Hostel))
        .call_timeout(Duration::from_millis(150))
        .build();
    let t = Instant::now();
    let r = orch.verify_student("S1").await.unwrap();
    assert!(t.elapsed() < Duration::from_secs(1));
    assert_eq!(r.per_department[&Department::Library], DeptStatus::Unreachable);
    assert_eq!(r.overall, Overall::Blocked);
    let audit = orch.audit();
    assert!(audit[0].durations_ms[&Department::Library] >= 150);
}

#[tokio::test]
async fn unconfigured_departments_count_as_unreachable() {
    let dir = tempfile::tempdir().unwrap();
    let orch = Orchestrator::builder(store(dir.path()))
        .probe(clear(Department::Admission))
        .probe(clear(Department::Library))
        .build();
    let r = orch.verify_student("S1").await.unwrap();
    assert_eq!(r.per_department[&Department::Hostel], DeptStatus::Unreachable);
    assert_eq!(r.overall, Overall::Blocked);

    let none = Orchestrator::builder(store(tempfile::tempdir().unwrap().path())).build();
    let r = none.verify_student("S1").await.unwrap();
    assert!(r.per_department.values().all(|s| *s == DeptStatus::Unreachable));
    assert_eq!(r.overall, Overall::Blocked);
}

#[tokio::test]
async fn every_verification_is_audited_and_the_log_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    {
        let orch = Orchestrator::builder(store(dir.path())).probes(all_clear()).build();
        for i in 0..7 {
            orch.verify_student(&format!("S{i}")).await.unwrap();
        }
    }
    let orch = Orchestrator::builder(store(dir.path())).probes(all_clear()).build();
    orch.verify_student("S7").await.unwrap();
    let audit = orch.audit();
    let seqs: Vec<u64> = audit.iter().map(|e| e.sequence).collect();
    assert_eq!(seqs, (1..=8).collect::<Vec<_>>());
    let ids: Vec<String> = audit.iter().map(|e| e.student_id.clone()).collect();
    assert_eq!(ids, (0..8).map(|i| format!("S{i}")).collect::<Vec<_>>());
    assert!(audit.iter().all(|e| e.durations_ms.len() == 3));
}

#[tokio::test]
async fn issuing_checks_standing_and_exams_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let orch = Arc::new(Orchestrator::builder(store(dir.path())).probes(all_clear()).build());
    orch.add_exam(exam("S1", "P1", true)).unwrap();
    orch.add_exam(exam("S6", "P4", false)).unwrap();

    assert!(matches!(orch.issue("S6", "P4").await, Err(EmisError::ExamNotPassed { .. })));
    assert!(matches!(orch.issue("S1", "P9").await, Err(EmisError::ExamRecordMissing { .. })));

    let calls: Vec<_> = (0..10)
        .map(|_| {
            let o = orch.clone();
            tokio::spawn(async move { o.issue("S1", "P1").await.unwrap() })
        })
        .collect();
    let mut ids = Vec::new();
    let mut created = 0;
    for c in calls {
        let (cert, new) = c.await.unwrap();
        ids.push(cert.certificate_id);
        created += usize::from(new);
    }
    assert_eq!(created, 1);
    ids.dedup();
    assert_eq!(ids.len(), 1);
    let cert = orch.certificate(&ids[0]).unwrap();
    assert_eq!(cert.verification.overall, Overall::Clear);
    assert!(matches!(orch.certificate("nope"), Err(EmisError::CertificateNotFound(_))));

    let blocked = Orchestrator::builder(store(tempfile::tempdir().unwrap().path()))
        .probe(clear(Department::Admission))
        .probe(StubProbe::new(
            Department::Library,
            StubOutcome::Answer(DeptStatus::Defaulter { reason: "outstanding books: B1".into() }),
        ))
        .probe(clear(Department::Hostel))
        .build();
    blocked.add_exam(exam("S1", "P1", true)).unwrap();
    match blocked.issue("S1", "P1").await {
        Err(EmisError::VerificationBlocked(r)) => assert_eq!(r.overall, Overall::Blocked),
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn a_dead_registry_stops_verification_before_any_probe() {
    let dir = tempfile::tempdir().unwrap();
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let probe = StubProbe::new(Department::Admission, StubOutcome::Answer(DeptStatus::Clear));
    let orch = Orchestrator::builder(store(dir.path()))
        .registry(&format!("http://127.0.0.1:{port}"))
        .probe(probe.clone())
        .build();
    assert!(matches!(orch.verify_student("S1").await, Err(EmisError::BrokerUnreachable(_))));
    assert_eq!(probe.calls(), 0);
    assert!(orch.audit().is_empty());
}
