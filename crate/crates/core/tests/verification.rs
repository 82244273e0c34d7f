use i3_core::broker::bind;
use i3_core::domain::{Bean, Department, DeptStatus, Overall, StudentRecord};
use i3_core::envelope::TypedValue;
use i3_testkit::stack::{start_stack, StackOptions};
use i3_testkit::suite;

#[tokio::test(flavor = "multi_thread")]
async fn seeded_stack_verifies_students() {
    let stack = start_stack(StackOptions::default()).await;
    let orch = stack.orchestrator().clone();

    let r = orch.verify_student("S001").await.unwrap();
    assert_eq!(r.overall, Overall::Clear, "{r:?}");

    let r = orch.verify_student("S002").await.unwrap();
    assert_eq!(
        r.status(Department::Library),
        Some(&DeptStatus::Defaulter {
            reason: "outstanding books: B001, B003".into()
        })
    );
    assert_eq!(r.overall, Overall::Blocked);

    let r = orch.verify_student("S003").await.unwrap();
    assert_eq!(
        r.status(Department::Hostel),
        Some(&DeptStatus::Defaulter {
            reason: "open room allotment: R101".into()
        })
    );

    let r = orch.verify_student("NOPE").await.unwrap();
    assert_eq!(
        r.status(Department::Admission),
        Some(&DeptStatus::Defaulter {
            reason: "no admission record".into()
        })
    );
    assert_eq!(orch.audit().len(), 4);

    let proxy = bind(&stack.registry.url, "AdmissionDataBaseManagerService").await.unwrap();
    let v = proxy
        .invoke("getStudent", vec![TypedValue::string("student_id", "S001")])
        .await
        .unwrap();
    assert_eq!(StudentRecord::from_typed(&v).unwrap().first_name, "Amna");
    stack.shutdown().await;
}

#[tokio::test(flavor = "multi_thread")]
async fn randomized_verification_matches_raw_file_oracle() {
    for seed in [7, 2024] {
        let summary = suite::verification_correctness(seed).await.unwrap_or_else(|e| panic!("seed {seed}: {e}"));
        println!("{summary}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn verification_fans_out_concurrently() {
    println!("{}", suite::fan_out_concurrency(3).await.unwrap());
}

#[tokio::test(flavor = "multi_thread")]
async fn undeploy_lets_in_flight_calls_finish() {
    println!("{}", suite::deploy_undeploy(8).await.unwrap());
}

#[tokio::test(flavor = "multi_thread")]
async fn lmis_behaves_the_same_on_every_format() {
    println!("{}", suite::heterogeneity().await.unwrap());
}
