use i3_core::broker::bind;
use i3_core::depts::{ServiceKind, AMIS_SERVICE};
use i3_core::domain::{beans_from_list, Department, DeptStatus, ListItem, Overall};
use i3_core::emis::{GatewayClient, GatewayError};
use i3_core::node::start_node;
use i3_testkit::fixtures::{json_row, normalize, seed_student};
use i3_testkit::stack::{node_config, start_stack, StackOptions};
use serde_json::{json, Value};

async fn post(url: String, body: Option<Value>) -> (u16, Value) {
    let mut req = reqwest::Client::new().post(url);
    if let Some(b) = body {
        req = req.header("content-type", "application/json").body(b.to_string());
    }
    let r = req.send().await.unwrap();
    let status = r.status().as_u16();
    (status, serde_json::from_slice(&r.bytes().await.unwrap()).unwrap())
}

async fn get(url: String) -> (u16, Value) {
    let r = reqwest::get(url).await.unwrap();
    let status = r.status().as_u16();
    (status, serde_json::from_slice(&r.bytes().await.unwrap()).unwrap())
}

fn api_code(e: GatewayError) -> String {
    match e {
        GatewayError::Api(a) => a.code,
        other => panic!("{other:?}"),
    }
}

#[tokio::test]
async fn gateway_endpoints_and_status_codes() {
    let stack = start_stack(StackOptions::default()).await;
    let gw = stack.gateway_url().to_string();
    let client = GatewayClient::new(&gw);
    let mut verifies = 0;

    // pass-through of AMIS
    let amis = bind(&stack.registry.url, AMIS_SERVICE).await.unwrap();
    let direct: Vec<ListItem> = beans_from_list(&amis.invoke("listStudents", vec![]).await.unwrap()).unwrap();
    assert_eq!(client.students().await.unwrap(), direct);
    assert_eq!(direct.len(), 12);
    let s = client.student("S004").await.unwrap();
    assert_eq!(normalize(&json_row(&serde_json::to_value(&s).unwrap())), normalize(&seed_student("S004").unwrap()));
    assert_eq!(api_code(client.student("S999").await.unwrap_err()), "StudentNotFound");
    assert_eq!(get(format!("{gw}/api/students/S999")).await.0, 404);

    // registration
    let (st, body) = post(format!("{gw}/api/register/library/S010"), None).await;
    assert_eq!(st, 201);
    assert_eq!(body, json!({"student_id": "S010", "issued_books": []}));
    let (st, body) = post(format!("{gw}/api/register/library/S010"), None).await;
    assert_eq!((st, body["code"].as_str()), (409, Some("AlreadyRegistered")));
    let (st, body) = post(format!("{gw}/api/register/hostel/S999"), None).await;
    assert_eq!((st, body["code"].as_str()), (404, Some("StudentNotFound")));
    let (st, body) = post(format!("{gw}/api/register/dorm/S001"), None).await;
    assert_eq!((st, body["code"].as_str()), (404, Some("UnknownDepartment")));
    // no campus service yet
    let (st, body) = post(format!("{gw}/api/register/campus/S001"), None).await;
    assert_eq!((st, body["code"].as_str()), (502, Some("Unreachable")));
    let campus = start_node(node_config(ServiceKind::Campus, stack.dir.path(), &stack.registry.url, &stack.opts))
        .await
        .unwrap();
    let reg = client.register("campus", "S001").await.unwrap();
    assert_eq!(normalize(&json_row(&reg)), normalize(&seed_student("S001").unwrap()));

    // verification
    let r = client.verify("S002").await.unwrap();
    verifies += 1;
    assert_eq!(r.overall, Overall::Blocked);
    assert_eq!(
        r.per_department[&Department::Library],
        DeptStatus::Defaulter { reason: "outstanding books: B001, B003".into() }
    );
    let (st, raw) = post(format!("{gw}/api/verify/S001"), None).await;
    verifies += 1;
    assert_eq!(st, 200);
    assert_eq!(raw["overall"], "Clear");

    // certificates
    let (st, first) = post(format!("{gw}/api/certificates"), Some(json!({"student_id": "S001", "programme_id": "P01"}))).await;
    verifies += 1;
    assert_eq!(st, 201);
    let (st, again) = post(format!("{gw}/api/certificates"), Some(json!({"student_id": "S001", "programme_id": "P01"}))).await;
    verifies += 1;
    assert_eq!(st, 200);
    assert_eq!(again["certificate_id"], first["certificate_id"]);
    let id = first["certificate_id"].as_str().unwrap();
    assert_eq!(client.certificate(id).await.unwrap().student_id, "S001");
    assert_eq!(api_code(client.certificate("missing").await.unwrap_err()), "CertificateNotFound");

    let (st, body) = post(format!("{gw}/api/certificates"), Some(json!({"student_id": "S003", "programme_id": "P03"}))).await;
    verifies += 1;
    assert_eq!((st, body["code"].as_str()), (409, Some("VerificationBlocked")));
    assert_eq!(
        body["detail"]["per_department"]["Hostel"],
        json!({"status": "Defaulter", "reason": "open room allotment: R101"})
    );
    assert_eq!(body["detail"]["per_department"]["Admission"], json!({"status": "Clear"}));
    let (st, body) = post(format!("{gw}/api/certificates"), Some(json!({"student_id": "S006", "programme_id": "P04"}))).await;
    verifies += 1;
    assert_eq!((st, body["code"].as_str()), (409, Some("ExamNotPassed")));
    assert_eq!(api_code(client.issue("S001", "P99").await.unwrap_err()), "ExamRecordMissing");
    verifies += 1;
    let (st, body) = post(format!("{gw}/api/certificates"), Some(json!({"student": "S001"}))).await;
    assert_eq!((st, body["code"].as_str()), (400, Some("BadRequest")));

    assert_eq!(client.audit().await.unwrap().len(), verifies);
    let (st, body) = get(format!("{gw}/api/nowhere")).await;
    assert_eq!((st, body["code"].as_str()), (404, Some("NotFound")));

    // with the registry gone nothing can be looked up
    campus.shutdown().await;
    let emis = stack.emis;
    stack.registry.shutdown().await;
    let (st, body) = post(format!("{gw}/api/verify/S001"), None).await;
    assert_eq!((st, body["code"].as_str()), (503, Some("BrokerUnreachable")));
    let (st, body) = get(format!("{gw}/api/students")).await;
    assert_eq!((st, body["code"].as_str()), (503, Some("BrokerUnreachable")));
    emis.unwrap().shutdown().await;
    assert!(matches!(client.audit().await, Err(GatewayError::Unreachable(_))));
    stack.amis.shutdown().await;
    stack.lmis.shutdown().await;
    stack.hmis.shutdown().await;
}
