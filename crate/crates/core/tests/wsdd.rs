use i3_core::node::builtin_descriptor;
use i3_core::wsdd::{parse_undeploy, parse_wsdd, AllowedMethods, WsddError};
use i3_testkit::fixtures::fixtures_dir;
use i3_testkit::suite;

fn fixture(name: &str) -> Vec<u8> {
    std::fs::read(fixtures_dir().join(name)).unwrap()
}

#[test]
fn checked_in_descriptor_has_three_services() {
    println!("{}", suite::wsdd_fidelity().unwrap());
}

#[test]
fn descriptor_fields_in_detail() {
    let d = parse_wsdd(&fixture("i3.wsdd")).unwrap();
    assert_eq!(d.handlers.len(), 1);
    assert_eq!(d.handlers[0].name, "print");
    assert_eq!(d.handlers[0].kind(), "LogHandler");

    let classes: Vec<&str> = d.services.iter().map(|s| s.class_name.as_str()).collect();
    assert_eq!(
        classes,
        ["AdmissionDataBaseManager", "LibraryDataBaseManager", "HostelDataBaseManager"]
    );
    for s in &d.services {
        assert_eq!(s.provider, "java:RPC");
        assert_eq!(s.allowed_methods, AllowedMethods::All);
    }
    let amis: Vec<(&str, &str)> = d.services[0]
        .bean_mappings
        .iter()
        .map(|m| (m.qname.as_str(), m.binding_key()))
        .collect();
    assert_eq!(
        amis,
        [
            ("myNS:StudentRecord", "StudentRecord"),
            ("myNS:DepartmentRecord", "DepartmentRecord"),
            ("myNS:ProgrammeRecord", "ProgrammeRecord"),
            ("myNS:ListItem", "ListItem"),
        ]
    );
    assert_eq!(d.services[1].bean_mappings[0].qname, "myNS:LibraryStudentRecord");
    assert_eq!(d.services[2].bean_mappings[0].qname, "myNS:HostelStudentRecord");
}

#[test]
fn descriptors_survive_serialization() {
    for name in ["i3.wsdd", "campus.wsdd"] {
        let d = parse_wsdd(&fixture(name)).unwrap();
        assert_eq!(parse_wsdd(d.to_xml().as_bytes()).unwrap(), d, "{name}");
    }
    let u = parse_undeploy(&fixture("i3-undeploy.wsdd")).unwrap();
    assert_eq!(u.service_names, ["LibraryDataBaseManagerService"]);
    assert_eq!(parse_undeploy(u.to_xml().as_bytes()).unwrap(), u);
}

#[test]
fn builtin_descriptor_adds_campus() {
    let names = builtin_descriptor().service_names();
    assert_eq!(names.len(), 4);
    assert_eq!(names[3], "CampusDataBaseManagerService");
}

#[test]
fn broken_descriptors_are_refused() {
    let text = String::from_utf8(fixture("i3.wsdd")).unwrap();
    let dup = text.replace("LibraryDataBaseManagerService", "AdmissionDataBaseManagerService");
    assert!(matches!(parse_wsdd(dup.as_bytes()), Err(WsddError::DuplicateService(_))));

    let undeclared = text.replacen(r#"<handler type="print"/>"#, r#"<handler type="audit"/>"#, 1);
    assert!(matches!(
        parse_wsdd(undeclared.as_bytes()),
        Err(WsddError::UndeclaredHandler { .. })
    ));

    let truncated = &text.as_bytes()[..text.len() / 2];
    assert!(matches!(parse_wsdd(truncated), Err(WsddError::MalformedXml(_))));

    assert!(matches!(
        parse_undeploy(br#"<undeployment xmlns="http://xml.apache.org/axis/wsdd/"/>"#),
        Err(WsddError::EmptyDescriptor)
    ));
}
