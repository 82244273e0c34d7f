use i3_core::domain::{
    full_registry, Bean, DepartmentRecord, HostelStudentRecord, LibraryStudentRecord, ListItem, ProgrammeRecord,
    StudentRecord,
};
use i3_core::envelope::{decode_envelope, encode_envelope, BeanRegistry, CodecError, Envelope, Fault, FaultCode};
use i3_testkit::gen;
use i3_testkit::suite;
use proptest::prelude::*;

#[test]
fn thousand_envelopes_and_ten_thousand_fuzz_inputs() {
    println!("{}", suite::codec_soundness(0x13).unwrap());
}

#[test]
fn other_seeds_hold_too() {
    for seed in [1, 99] {
        suite::codec_soundness(seed).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
    }
}

fn round_trip(e: &Envelope) -> Envelope {
    let reg = full_registry();
    let text = encode_envelope(e, &reg).unwrap();
    decode_envelope(text.as_bytes(), &reg).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn envelopes_round_trip(e in gen::envelope()) {
        prop_assert_eq!(round_trip(&e), e);
    }

    #[test]
    fn encoding_is_deterministic(e in gen::envelope()) {
        let reg = full_registry();
        prop_assert_eq!(encode_envelope(&e, &reg).unwrap(), encode_envelope(&e.clone(), &reg).unwrap());
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..400)) {
        let _ = decode_envelope(&bytes, &full_registry());
    }

    #[test]
    fn students_survive_the_wire(s in gen::student()) {
        prop_assert_eq!(StudentRecord::from_typed(&s.to_typed("s")).unwrap(), s);
    }

    #[test]
    fn library_records_survive_the_wire(r in gen::library_record()) {
        let v = r.to_typed("result");
        let e = round_trip(&Envelope::Response(i3_core::envelope::Response { method: "m".into(), result: v }));
        let Envelope::Response(resp) = e else { panic!("not a response") };
        prop_assert_eq!(LibraryStudentRecord::from_typed(&resp.result).unwrap(), r);
    }

    #[test]
    fn hostel_records_survive_the_wire(r in gen::hostel_record()) {
        let v = r.to_typed("result");
        let e = round_trip(&Envelope::Response(i3_core::envelope::Response { method: "m".into(), result: v }));
        let Envelope::Response(resp) = e else { panic!("not a response") };
        prop_assert_eq!(HostelStudentRecord::from_typed(&resp.result).unwrap(), r);
    }

    #[test]
    fn small_beans_survive_the_wire(d in gen::department(), p in gen::programme(), i in gen::list_item()) {
        prop_assert_eq!(DepartmentRecord::from_typed(&d.to_typed("d")).unwrap(), d);
        prop_assert_eq!(ProgrammeRecord::from_typed(&p.to_typed("p")).unwrap(), p);
        prop_assert_eq!(ListItem::from_typed(&i.to_typed("i")).unwrap(), i);
    }
}

const CALL: &str = r#"<?xml version="1.0" encoding="UTF-8"?><i3:Envelope><i3:Body><getStudent service="AdmissionDataBaseManagerService"><student_id i3type="string">S001</student_id></getStudent></i3:Body></i3:Envelope>"#;

#[test]
fn decodes_a_hand_written_call() {
    let e = decode_envelope(CALL.as_bytes(), &full_registry()).unwrap();
    let Envelope::Call(c) = &e else { panic!("{e:?}") };
    assert_eq!(c.service, "AdmissionDataBaseManagerService");
    assert_eq!(c.method, "getStudent");
    assert_eq!(c.param("student_id").and_then(|p| p.as_str()), Some("S001"));
    assert_eq!(encode_envelope(&e, &full_registry()).unwrap(), CALL);
}

#[test]
fn faults_encode_code_detail_and_message() {
    let f = Envelope::Fault(Fault::new(FaultCode::Client, "a < b & c").with_detail("StudentNotFound"));
    let text = encode_envelope(&f, &full_registry()).unwrap();
    assert!(text.contains(r#"<i3:Fault code="Client" detail="StudentNotFound">a &lt; b &amp; c</i3:Fault>"#), "{text}");
    assert_eq!(round_trip(&f), f);
}

#[test]
fn unknown_beans_are_rejected_by_both_sides() {
    let s = gen_student();
    let e = Envelope::Response(i3_core::envelope::Response {
        method: "getStudent".into(),
        result: s.to_typed("result"),
    });
    let empty = BeanRegistry::new();
    assert!(matches!(encode_envelope(&e, &empty), Err(CodecError::UnregisteredBean(_))));
    let text = encode_envelope(&e, &full_registry()).unwrap();
    assert!(matches!(decode_envelope(text.as_bytes(), &empty), Err(CodecError::UnregisteredBean(_))));
}

#[test]
fn malformed_inputs_map_to_declared_errors() {
    let reg = full_registry();
    type Expect = fn(&CodecError) -> bool;
    let cases: &[(&str, Expect)] = &[
        ("", |e| matches!(e, CodecError::MalformedXml(_))),
        ("<i3:Envelope>", |e| matches!(e, CodecError::MalformedXml(_))),
        ("<x/>", |e| matches!(e, CodecError::MalformedXml(_) | CodecError::InvalidEnvelope(_))),
        (
            r#"<i3:Envelope><i3:Body><m service="s"><a i3type="int">x</a></m></i3:Body></i3:Envelope>"#,
            |e| matches!(e, CodecError::TypeMismatch(_)),
        ),
        (
            r#"<i3:Envelope><i3:Body><m service="s"><a i3type="myNS:Nope"></a></m></i3:Body></i3:Envelope>"#,
            |e| matches!(e, CodecError::UnregisteredBean(_)),
        ),
        (
            r#"<!DOCTYPE x [<!ENTITY a "b">]><i3:Envelope/>"#,
            |e| matches!(e, CodecError::MalformedXml(_)),
        ),
    ];
    for (input, ok) in cases {
        let err = decode_envelope(input.as_bytes(), &reg).unwrap_err();
        assert!(ok(&err), "{input}: {err:?}");
    }
}

fn gen_student() -> StudentRecord {
    StudentRecord {
        student_id: "S001".into(),
        first_name: "Amna".into(),
        last_name: "Soomro".into(),
        address: "House 12, Qasimabad".into(),
        contact_number: "0300-1234567".into(),
        institution_name: "QUEST".into(),
        department_name: "Computer Systems".into(),
        degree_program: "BE".into(),
        graduation_year: 2024,
    }
}
