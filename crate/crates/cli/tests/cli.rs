use std::path::Path;
use std::process::{Command, Output};

use i3_core::broker::bind;
use i3_core::depts::LMIS_SERVICE;
use i3_core::envelope::TypedValue;
use i3_testkit::fixtures::{fixtures_dir, seed_dir};
use i3_testkit::suite::spawn_listening;

const BIN: &str = env!("CARGO_BIN_EXE_i3");

fn i3(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const SUBCOMMANDS: [&str; 10] = [
    "registry", "service", "deploy", "undeploy", "seed", "verify", "issue", "wsdl", "gateway", "demo",
];

#[test]
fn every_subcommand_has_help() {
    assert_eq!(i3(&["--help"]).status.code(), Some(0));
    for sub in SUBCOMMANDS {
        let o = i3(&[sub, "--help"]);
        assert_eq!(o.status.code(), Some(0), "{sub}");
        assert!(stdout(&o).contains("Usage"), "{sub}");
    }
}

#[test]
fn usage_errors_exit_with_2() {
    assert_eq!(i3(&["--bogus"]).status.code(), Some(2));
    for sub in SUBCOMMANDS {
        assert_eq!(i3(&[sub, "--no-such-flag"]).status.code(), Some(2), "{sub}");
    }
    assert_eq!(i3(&["service", "dorm"]).status.code(), Some(2));
    assert_eq!(i3(&["service", "amis,emis"]).status.code(), Some(2));
    assert_eq!(i3(&["seed", "amis"]).status.code(), Some(2));
    assert_eq!(i3(&["deploy", "--host", "http://127.0.0.1:1", "/no/such/file"]).status.code(), Some(2));
    assert_eq!(i3(&["--log-level", "[[", "wsdl", "X"]).status.code(), Some(2));
}

#[test]
fn an_unreachable_registry_is_a_domain_error() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}");
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    assert_eq!(i3(&["--data-dir", data, "--registry-url", &url, "verify", "S001"]).status.code(), Some(1));
    assert_eq!(i3(&["--registry-url", &url, "wsdl", "AdmissionDataBaseManagerService"]).status.code(), Some(1));
}

#[test]
fn operate_the_stack_from_the_command_line() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().to_str().unwrap();
    let seed = seed_dir();
    let seed = seed.to_str().unwrap();
    let bin = Path::new(BIN);

    let (_registry, reg) = spawn_listening(bin, &["--data-dir", data, "registry", "--listen", "127.0.0.1:0"]).unwrap();
    let (_depts, _) = spawn_listening(
        bin,
        &["--data-dir", data, "--registry-url", &reg, "service", "all", "--listen", "127.0.0.1:0", "--seed", seed],
    )
    .unwrap();
    let with = |args: &[&str]| {
        let mut full = vec!["--data-dir", data, "--registry-url", reg.as_str()];
        full.extend_from_slice(args);
        i3(&full)
    };

    let o = with(&["verify", "S001"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).lines().last().unwrap() == "CLEAR");

    let o = with(&["verify", "S002"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Library: DEFAULTER (outstanding books: B001, B003)"), "{}", stdout(&o));

    assert_eq!(with(&["seed", "emis", "--from", seed]).status.code(), Some(0));
    let o = with(&["issue", "S001", "P01"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let first = stdout(&o).lines().next().unwrap().to_string();
    let again = with(&["issue", "S001", "P01"]);
    assert_eq!(stdout(&again).lines().next().unwrap(), first);
    let o = with(&["issue", "S003", "P03"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("Hostel: DEFAULTER (open room allotment: R101)"));

    let o = with(&["wsdl", "LibraryDataBaseManagerService"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("issueBook"));

    // a bare host takes the shipped descriptor and gives the services back
    let (_bare, host) = spawn_listening(
        bin,
        &[
            "--data-dir", &format!("{data}/bare"), "--registry-url", &reg, "service", "amis,lmis,hmis", "--no-deploy",
            "--listen", "127.0.0.1:0",
        ],
    )
    .unwrap();
    let wsdd = fixtures_dir().join("i3.wsdd");
    let o = with(&["deploy", "--host", &host, wsdd.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(
        stdout(&o).lines().collect::<Vec<_>>(),
        [
            "AdmissionDataBaseManagerService",
            "LibraryDataBaseManagerService",
            "HostelDataBaseManagerService"
        ]
    );
    assert_eq!(with(&["deploy", "--host", &host, wsdd.to_str().unwrap()]).status.code(), Some(1));
    let undeploy = fixtures_dir().join("i3-undeploy.wsdd");
    let o = with(&["undeploy", "--host", &host, undeploy.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(stdout(&o).trim(), "undeployed LibraryDataBaseManagerService");
    assert_eq!(with(&["undeploy", "--host", &host, undeploy.to_str().unwrap()]).status.code(), Some(1));
}

/// Kills an LMIS process without warning after acknowledged writes; a new
/// process over the same directory must see them.
#[tokio::test(flavor = "multi_thread")]
async fn acknowledged_writes_survive_a_kill() {
    for format in ["tabular-text", "json-lines", "binary-log"] {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().to_str().unwrap().to_string();
        let seed = seed_dir().to_str().unwrap().to_string();
        let bin = Path::new(BIN);
        let (_registry, reg) = tokio::task::block_in_place(|| {
            spawn_listening(bin, &["--data-dir", &data, "registry", "--listen", "127.0.0.1:0"])
        })
        .unwrap();
        let (_amis, _) = tokio::task::block_in_place(|| {
            spawn_listening(
                bin,
                &["--data-dir", &data, "--registry-url", &reg, "service", "amis", "--listen", "127.0.0.1:0", "--seed", &seed],
            )
        })
        .unwrap();
        let lmis_args = [
            "--data-dir", &data, "--registry-url", &reg, "service", "lmis", "--listen", "127.0.0.1:0", "--format", format,
            "--seed", &seed,
        ];
        let (mut lmis, _) = tokio::task::block_in_place(|| spawn_listening(bin, &lmis_args)).unwrap();

        let sid = |v: &str| TypedValue::string("student_id", v);
        let book = |v: &str| TypedValue::string("book_id", v);
        let proxy = bind(&reg, LMIS_SERVICE).await.unwrap();
        proxy.invoke("registerStudent", vec![sid("S009")]).await.unwrap();
        proxy.invoke("issueBook", vec![sid("S009"), book("B007")]).await.unwrap();
        proxy.invoke("issueBook", vec![sid("S009"), book("B008")]).await.unwrap();
        proxy.invoke("returnBook", vec![sid("S009"), book("B007")]).await.unwrap();
        lmis.0.kill().unwrap();
        lmis.0.wait().unwrap();

        let (_lmis, _) = tokio::task::block_in_place(|| spawn_listening(bin, &lmis_args)).unwrap();
        let proxy = bind(&reg, LMIS_SERVICE).await.unwrap();
        let rec = proxy.invoke("getStudentRecord", vec![sid("S009")]).await.unwrap();
        let rec = <i3_core::domain::LibraryStudentRecord as i3_core::domain::Bean>::from_typed(&rec).unwrap();
        let open: Vec<&str> = rec
            .issued_books
            .iter()
            .filter(|i| i.return_date.is_none())
            .map(|i| i.book_id.as_str())
            .collect();
        assert_eq!(rec.issued_books.len(), 2, "{format}");
        assert_eq!(open, ["B008"], "{format}");
    }
}

#[test]
fn e2e_script_passes() {
    if Command::new("curl").arg("--version").output().is_err() {
        eprintln!("curl not installed; skipping the shell walkthrough");
        return;
    }
    let script = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/e2e.sh");
    let o = Command::new("bash").arg(script).env("I3_BIN", BIN).output().unwrap();
    let out = stdout(&o);
    print!("{out}");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(out.lines().filter(|l| l.starts_with("PASS criterion")).count(), 8);
}
