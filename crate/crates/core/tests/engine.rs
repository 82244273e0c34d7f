use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use i3_core::broker::{fetch_wsdl, BrokerError, ServiceProxy};
use i3_core::domain::{full_registry, Bean, ListItem};
use i3_core::engine::{
    http_status, remote_deploy, remote_undeploy, serve, AdminError, EngineError, InvocationLog, OperationSig,
    ServiceHost, ServiceImpl, WsdlDoc,
};
use i3_core::envelope::{
    decode_envelope, encode_envelope, Call, Envelope, Fault, FaultCode, TypeTag, TypedValue,
};
use i3_core::net::{bind, ServerHandle};
use i3_core::node::advertised_url;
use i3_core::wsdd::{parse_undeploy, parse_wsdd};

struct Echo;

#[async_trait]
impl ServiceImpl for Echo {
    fn class_name(&self) -> &str {
        "EchoImpl"
    }

    fn operations(&self) -> Vec<OperationSig> {
        vec![
            OperationSig::new("echo", [("text", TypeTag::STRING)], TypeTag::STRING),
            OperationSig::new("add", [("a", TypeTag::INT), ("b", TypeTag::INT)], TypeTag::INT),
            OperationSig::new("item", [("id", TypeTag::STRING)], TypeTag::bean(ListItem::QNAME)),
            OperationSig::new("slow", Vec::<(String, TypeTag)>::new(), TypeTag::STRING),
            OperationSig::new("lies", Vec::<(String, TypeTag)>::new(), TypeTag::STRING),
            OperationSig::new("refuses", Vec::<(String, TypeTag)>::new(), TypeTag::BOOL),
        ]
    }

    async fn invoke(&self, method: &str, params: Vec<TypedValue>) -> Result<TypedValue, Fault> {
        match method {
            "echo" => Ok(TypedValue::string("result", params[0].as_str().unwrap())),
            "add" => Ok(TypedValue::int("result", params[0].as_int().unwrap() + params[1].as_int().unwrap())),
            "item" => Ok(ListItem {
                id: params[0].as_str().unwrap().to_string(),
                label: "an item".into(),
            }
            .to_typed("result")),
            "slow" => {
                tokio::time::sleep(Duration::from_millis(400)).await;
                Ok(TypedValue::string("result", "done"))
            }
            "lies" => Ok(TypedValue::int("result", 1)),
            "refuses" => Err(Fault::new(FaultCode::Client, "no").with_detail("Refused")),
            other => Err(Fault::new(FaultCode::MethodNotFound, other)),
        }
    }
}

fn descriptor(service: &str, handlers: usize, allowed: &str) -> String {
    let decls: String = (0..handlers)
        .map(|i| format!(r#"<handler name="h{i}" type="java:LogHandler"/>"#))
        .collect();
    let flow: String = (0..handlers).map(|i| format!(r#"<handler type="h{i}"/>"#)).collect();
    format!(
        r#"<deployment xmlns="http://xml.apache.org/axis/wsdd/">{decls}
  <service name="{service}" provider="java:RPC">
    <requestFlow>{flow}</requestFlow>
    <parameter name="className" value="EchoImpl"/>
    <parameter name="allowedMethods" value="{allowed}"/>
    <beanMapping qname="myNS:ListItem" xmlns:myNS="urn:BeanService" languageSpecificType="java:ListItem"/>
  </service>
</deployment>"#
    )
}

fn host(url: &str, timeout: Duration) -> ServiceHost {
    ServiceHost::builder(url)
        .implementation(Arc::new(Echo))
        .request_timeout(timeout)
        .build()
}

fn deployed_host() -> ServiceHost {
    let h = host("http://127.0.0.1:1", Duration::from_millis(200));
    h.deploy(&parse_wsdd(descriptor("Echo", 1, "").as_bytes()).unwrap()).unwrap();
    h
}

fn call(service: &str, method: &str, params: Vec<TypedValue>) -> Envelope {
    Envelope::Call(Call::new(service, method, params))
}

fn fault_code(e: &Envelope) -> Option<FaultCode> {
    match e {
        Envelope::Fault(f) => Some(f.code),
        _ => None,
    }
}

#[tokio::test]
async fn dispatch_runs_calls_and_reports_every_failure_as_a_fault() {
    let h = deployed_host();
    let ok = h.dispatch(call("Echo", "add", vec![TypedValue::int("a", 2), TypedValue::int("b", 40)])).await;
    match ok {
        Envelope::Response(r) => assert_eq!(r.result.as_int(), Some(42)),
        other => panic!("{other:?}"),
    }
    let cases = [
        (call("Nope", "echo", vec![]), FaultCode::ServiceNotFound),
        (call("Echo", "nope", vec![]), FaultCode::MethodNotFound),
        (call("Echo", "add", vec![TypedValue::int("a", 1)]), FaultCode::TypeMismatch),
        (call("Echo", "echo", vec![TypedValue::int("text", 1)]), FaultCode::TypeMismatch),
        (call("Echo", "slow", vec![]), FaultCode::Server),
        (call("Echo", "lies", vec![]), FaultCode::Server),
        (call("Echo", "refuses", vec![]), FaultCode::Client),
        (Envelope::fault(FaultCode::Client, "not a call"), FaultCode::Client),
    ];
    for (req, want) in cases {
        let got = h.dispatch(req.clone()).await;
        assert_eq!(fault_code(&got), Some(want), "{req:?} gave {got:?}");
    }
    let Envelope::Fault(f) = h.dispatch(call("Echo", "slow", vec![])).await else {
        panic!()
    };
    assert_eq!(f.message, "timeout");
}

#[test]
fn deploy_is_all_or_nothing() {
    let h = host("http://127.0.0.1:1", Duration::from_secs(1));
    let d = parse_wsdd(descriptor("Echo", 1, "").as_bytes()).unwrap();
    assert_eq!(h.deploy(&d).unwrap(), ["Echo"]);
    assert_eq!(h.deploy(&d), Err(EngineError::AlreadyDeployed(vec!["Echo".into()])));

    // one good service and one bound to a missing class: neither deploys
    let mut two = parse_wsdd(descriptor("Other", 1, "").as_bytes()).unwrap();
    let mut bad = two.services[0].clone();
    bad.name = "Broken".into();
    bad.class_name = "MissingImpl".into();
    two.services.push(bad);
    assert!(matches!(h.deploy(&two), Err(EngineError::ValidationFailed(v)) if v.len() == 1));
    assert_eq!(h.list_services(), ["Echo"]);

    let restricted = parse_wsdd(descriptor("Picky", 1, "echo teleport").as_bytes()).unwrap();
    assert!(matches!(h.deploy(&restricted), Err(EngineError::ValidationFailed(_))));

    let report = h.undeploy(&parse_undeploy(br#"<undeployment><service name="Echo"/><service name="Ghost"/></undeployment>"#).unwrap());
    assert_eq!(report.undeployed, ["Echo"]);
    assert_eq!(report.not_deployed, ["Ghost"]);
    assert!(h.list_services().is_empty());
    h.deploy(&d).unwrap();
    assert!(h.is_deployed("Echo"));
}

#[tokio::test]
async fn allowed_methods_limit_what_is_callable() {
    let h = host("http://127.0.0.1:1", Duration::from_secs(1));
    h.deploy(&parse_wsdd(descriptor("Echo", 0, "echo").as_bytes()).unwrap()).unwrap();
    let r = h.dispatch(call("Echo", "add", vec![TypedValue::int("a", 1), TypedValue::int("b", 1)])).await;
    assert_eq!(fault_code(&r), Some(FaultCode::MethodNotFound));
    let ops: Vec<String> = h.generate_wsdl("Echo").unwrap().operations.into_iter().map(|o| o.name).collect();
    assert_eq!(ops, ["echo"]);
}

#[tokio::test]
async fn every_handler_in_the_flow_runs_once_in_order() {
    for n in [0usize, 1, 3, 7] {
        let log = Arc::new(InvocationLog::new(100));
        let h = ServiceHost::builder("http://127.0.0.1:1")
            .implementation(Arc::new(Echo))
            .log(log.clone())
            .build();
        h.deploy(&parse_wsdd(descriptor("Echo", n, "").as_bytes()).unwrap()).unwrap();
        h.dispatch(call("Echo", "echo", vec![TypedValue::string("text", "x")])).await;
        let names: Vec<String> = log.entries().into_iter().map(|e| e.handler).collect();
        let want: Vec<String> = (0..n).map(|i| format!("h{i}")).collect();
        assert_eq!(names, want);
        // rejected calls never reach the chain
        h.dispatch(call("Echo", "nope", vec![])).await;
        assert_eq!(log.len(), n);
    }
}

#[test]
fn invocation_log_is_bounded_and_mirrored_to_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("handler.log");
    let log = InvocationLog::with_file(3, &path).unwrap();
    for i in 0..5 {
        log.append(i3_core::engine::HandlerInvocation {
            handler: "print".into(),
            timestamp: chrono::Utc::now(),
            service: "S".into(),
            method: format!("m{i}"),
        });
    }
    let kept: Vec<String> = log.entries().into_iter().map(|e| e.method).collect();
    assert_eq!(kept, ["m2", "m3", "m4"]);
    assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 5);
}

async fn serve_echo() -> (ServiceHost, ServerHandle, String) {
    let listener = bind("127.0.0.1:0").await.unwrap();
    let url = advertised_url(listener.local_addr().unwrap());
    let h = host(&url, Duration::from_millis(200));
    let server = serve(h.clone(), listener, None);
    (h, server, url)
}

async fn post(url: &str, body: impl Into<reqwest::Body>) -> (u16, String) {
    let r = reqwest::Client::new().post(url).body(body).send().await.unwrap();
    (r.status().as_u16(), r.text().await.unwrap())
}

#[tokio::test]
async fn http_transport_matches_in_process_dispatch() {
    let (h, server, url) = serve_echo().await;
    remote_deploy(&url, descriptor("Echo", 1, "").as_bytes()).await.unwrap();
    let reg = full_registry();
    let requests = [
        call("Echo", "echo", vec![TypedValue::string("text", "<&> \"quoted\"\n")]),
        call("Echo", "item", vec![TypedValue::string("id", "I1")]),
        call("Echo", "add", vec![TypedValue::string("a", "1"), TypedValue::int("b", 1)]),
        call("Echo", "nope", vec![]),
        call("Echo", "refuses", vec![]),
        call("Echo", "slow", vec![]),
    ];
    for req in requests {
        let local = h.dispatch(req.clone()).await;
        let (status, body) = post(&format!("{url}/services/Echo"), encode_envelope(&req, &reg).unwrap()).await;
        let remote = decode_envelope(body.as_bytes(), &reg).unwrap();
        assert_eq!(remote, local, "{req:?}");
        assert_eq!(status, http_status(&local).as_u16());
    }
    server.shutdown().await;
}

#[tokio::test]
async fn http_status_codes_and_routes() {
    let (_h, server, url) = serve_echo().await;
    remote_deploy(&url, descriptor("Echo", 1, "").as_bytes()).await.unwrap();
    let reg = full_registry();
    let fault = |body: &str| match decode_envelope(body.as_bytes(), &reg).unwrap() {
        Envelope::Fault(f) => f.code,
        other => panic!("{other:?}"),
    };

    let (s, body) = post(&format!("{url}/services/Echo"), "<not-xml").await;
    assert_eq!((s, fault(&body)), (400, FaultCode::Client));
    let (s, body) = post(&format!("{url}/services/Ghost"), encode_envelope(&call("Ghost", "x", vec![]), &reg).unwrap()).await;
    assert_eq!((s, fault(&body)), (404, FaultCode::ServiceNotFound));
    let (s, body) = post(&format!("{url}/services/Other"), encode_envelope(&call("Echo", "echo", vec![TypedValue::string("text", "x")]), &reg).unwrap()).await;
    assert_eq!((s, fault(&body)), (400, FaultCode::Client));
    let (s, body) = post(&format!("{url}/nowhere"), "").await;
    assert_eq!((s, fault(&body)), (404, FaultCode::ServiceNotFound));

    let list = reqwest::get(format!("{url}/services")).await.unwrap().text().await.unwrap();
    assert_eq!(list, "Echo\n");
    let r = reqwest::get(format!("{url}/services/Echo?wsdl")).await.unwrap();
    assert_eq!(r.status().as_u16(), 200);
    assert!(r.headers()["content-type"].to_str().unwrap().starts_with("text/xml"));
    let r = reqwest::get(format!("{url}/services/Ghost?wsdl")).await.unwrap();
    assert_eq!(r.status().as_u16(), 404);

    match remote_deploy(&url, descriptor("Echo", 1, "").as_bytes()).await {
        Err(AdminError::Rejected { code, .. }) => assert_eq!(code, "AlreadyDeployed"),
        other => panic!("{other:?}"),
    }
    match remote_deploy(&url, b"<deployment><bogus/></deployment>").await {
        Err(AdminError::Rejected { code, .. }) => assert_eq!(code, "InvalidDescriptor"),
        other => panic!("{other:?}"),
    }
    match remote_deploy(&url, descriptor("Other", 1, "warp").as_bytes()).await {
        Err(AdminError::Rejected { code, .. }) => assert_eq!(code, "ValidationFailed"),
        other => panic!("{other:?}"),
    }
    let report = remote_undeploy(&url, br#"<undeployment><service name="Echo"/></undeployment>"#).await.unwrap();
    assert_eq!(report.undeployed, ["Echo"]);
    server.shutdown().await;
    assert!(matches!(
        remote_deploy(&url, descriptor("Echo", 1, "").as_bytes()).await,
        Err(AdminError::Unreachable(_))
    ));
}

#[tokio::test]
async fn a_client_needs_nothing_but_the_wsdl() {
    let (h, server, url) = serve_echo().await;
    remote_deploy(&url, descriptor("Echo", 1, "").as_bytes()).await.unwrap();
    let http = reqwest::Client::new();
    let doc = fetch_wsdl(&http, &h.wsdl_url("Echo")).await.unwrap();
    assert_eq!(WsdlDoc::from_xml(doc.to_xml().as_bytes()).unwrap(), doc);
    assert_eq!(doc.endpoint, h.endpoint_url("Echo"));
    let proxy = ServiceProxy::new(h.service_record("Echo"), doc, http).unwrap();

    assert_eq!(
        proxy.invoke("echo", vec![TypedValue::string("text", "hi")]).await.unwrap().as_str(),
        Some("hi")
    );
    let item = proxy.invoke("item", vec![TypedValue::string("id", "Z")]).await.unwrap();
    assert_eq!(ListItem::from_typed(&item).unwrap().id, "Z");
    assert!(matches!(
        proxy.invoke("add", vec![TypedValue::int("a", 1)]).await,
        Err(BrokerError::TypeMismatch(_))
    ));
    assert!(matches!(proxy.invoke("teleport", vec![]).await, Err(BrokerError::MethodNotInWsdl(_))));
    match proxy.invoke("refuses", vec![]).await {
        Err(BrokerError::RemoteFault(f)) => assert_eq!(f.detail.as_deref(), Some("Refused")),
        other => panic!("{other:?}"),
    }
    server.shutdown().await;
}
