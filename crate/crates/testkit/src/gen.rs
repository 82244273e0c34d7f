//! proptest strategies for envelopes and the six wire bean types.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use i3_core::domain::{
    Bean, BookIssue, DepartmentRecord, HostelStudentRecord, LibraryStudentRecord, ListItem, ProgrammeRecord,
    RoomAllotment, StudentRecord, GRADUATION_YEAR_RANGE,
};
use i3_core::envelope::{Call, Envelope, EnvelopeKind, Fault, FaultCode, Response, TypedValue, Value};
use i3_core::xml::is_xml_char;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

/// The bean types carried as call parameters and results.
pub const WIRE_BEANS: [&str; 6] = [
    StudentRecord::QNAME,
    DepartmentRecord::QNAME,
    ProgrammeRecord::QNAME,
    ListItem::QNAME,
    LibraryStudentRecord::QNAME,
    HostelStudentRecord::QNAME,
];

fn xml_char() -> impl Strategy<Value = char> {
    prop_oneof![
        6 => proptest::char::range('a', 'z'),
        2 => proptest::sample::select(vec![' ', '<', '>', '&', '"', '\'', '\t', '\n', '\r', ';', '#', ']']),
        1 => proptest::char::range('\u{80}', '\u{2FFF}'),
        1 => any::<char>().prop_filter("XML char", |c| is_xml_char(*c)),
    ]
}

/// Strings that XML can carry, markup characters and line ends included.
pub fn xml_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(xml_char(), 0..16).prop_map(|v| v.into_iter().collect())
}

pub fn ident() -> impl Strategy<Value = String> {
    "[a-zA-Z_][a-zA-Z0-9_]{0,10}"
}

pub fn date() -> impl Strategy<Value = NaiveDate> {
    // years 1000..=9999 so the four digit form is exact
    (365_000i32..3_650_000).prop_map(|d| NaiveDate::from_num_days_from_ce_opt(d).expect("in range"))
}

pub fn student() -> impl Strategy<Value = StudentRecord> {
    (
        (ident(), xml_text(), xml_text(), xml_text()),
        (xml_text(), xml_text(), xml_text(), xml_text()),
        GRADUATION_YEAR_RANGE,
    )
        .prop_map(|((id, f, l, a), (c, i, d, p), y)| StudentRecord {
            student_id: id,
            first_name: f,
            last_name: l,
            address: a,
            contact_number: c,
            institution_name: i,
            department_name: d,
            degree_program: p,
            graduation_year: y,
        })
}

pub fn department() -> impl Strategy<Value = DepartmentRecord> {
    (ident(), xml_text()).prop_map(|(department_id, department_name)| DepartmentRecord {
        department_id,
        department_name,
    })
}

pub fn programme() -> impl Strategy<Value = ProgrammeRecord> {
    (ident(), xml_text(), ident()).prop_map(|(programme_id, programme_name, department_id)| ProgrammeRecord {
        programme_id,
        programme_name,
        department_id,
    })
}

pub fn list_item() -> impl Strategy<Value = ListItem> {
    (ident(), xml_text()).prop_map(|(id, label)| ListItem { id, label })
}

pub fn library_record() -> impl Strategy<Value = LibraryStudentRecord> {
    let issue = (ident(), date(), proptest::option::of(date())).prop_map(|(book_id, issue_date, return_date)| {
        BookIssue {
            book_id,
            issue_date,
            return_date,
        }
    });
    (ident(), proptest::collection::vec(issue, 0..4)).prop_map(|(student_id, issued_books)| LibraryStudentRecord {
        student_id,
        issued_books,
    })
}

pub fn hostel_record() -> impl Strategy<Value = HostelStudentRecord> {
    let allotment = (ident(), date(), proptest::option::of(date())).prop_map(|(room_id, allot_date, vacate_date)| {
        RoomAllotment {
            room_id,
            allot_date,
            vacate_date,
        }
    });
    (ident(), proptest::collection::vec(allotment, 0..4)).prop_map(|(student_id, allotments)| HostelStudentRecord {
        student_id,
        allotments,
    })
}

/// A value of one of the six bean types, under the given element name.
pub fn bean_value(name: String) -> BoxedStrategy<TypedValue> {
    prop_oneof![
        student().prop_map({
            let n = name.clone();
            move |b| b.to_typed(&n)
        }),
        department().prop_map({
            let n = name.clone();
            move |b| b.to_typed(&n)
        }),
        programme().prop_map({
            let n = name.clone();
            move |b| b.to_typed(&n)
        }),
        list_item().prop_map({
            let n = name.clone();
            move |b| b.to_typed(&n)
        }),
        library_record().prop_map({
            let n = name.clone();
            move |b| b.to_typed(&n)
        }),
        hostel_record().prop_map(move |b| b.to_typed(&name)),
    ]
    .boxed()
}

fn leaf(name: String) -> BoxedStrategy<TypedValue> {
    let n = name.clone();
    prop_oneof![
        2 => xml_text().prop_map({
            let n = n.clone();
            move |s| TypedValue::string(n.clone(), s)
        }),
        1 => any::<i64>().prop_map({
            let n = n.clone();
            move |i| TypedValue::int(n.clone(), i)
        }),
        1 => any::<bool>().prop_map({
            let n = n.clone();
            move |b| TypedValue::bool(n.clone(), b)
        }),
        1 => date().prop_map({
            let n = n.clone();
            move |d| TypedValue::date(n.clone(), d)
        }),
        2 => bean_value(name),
    ]
    .boxed()
}

/// Any typed value: primitives, beans, and lists nested up to three deep.
pub fn typed_value() -> impl Strategy<Value = TypedValue> {
    ident().prop_flat_map(|name| value_named(name, 3))
}

fn value_named(name: String, depth: u32) -> BoxedStrategy<TypedValue> {
    if depth == 0 {
        return leaf(name);
    }
    let items = proptest::collection::vec(
        ident().prop_flat_map(move |n| value_named(n, depth - 1)),
        0..4,
    );
    let n = name.clone();
    prop_oneof![
        3 => leaf(name),
        1 => items.prop_map(move |items| TypedValue::list(n.clone(), items)),
    ]
    .boxed()
}

fn unique_names(mut params: Vec<TypedValue>) -> Vec<TypedValue> {
    let mut seen = BTreeSet::new();
    for (i, p) in params.iter_mut().enumerate() {
        if !seen.insert(p.name.clone()) {
            p.name = format!("{}_{i}", p.name);
            seen.insert(p.name.clone());
        }
    }
    params
}

pub fn fault_code() -> impl Strategy<Value = FaultCode> {
    proptest::sample::select(FaultCode::ALL.to_vec())
}

pub fn envelope() -> impl Strategy<Value = Envelope> {
    let call = (ident(), ident(), proptest::collection::vec(typed_value(), 0..5)).prop_map(|(service, method, params)| {
        Envelope::Call(Call {
            service,
            method,
            params: unique_names(params),
        })
    });
    let response = (ident(), typed_value()).prop_map(|(method, result)| Envelope::Response(Response { method, result }));
    let fault = (
        fault_code(),
        xml_text().prop_filter("non-empty", |s| !s.is_empty()),
        proptest::option::of(xml_text()),
    )
        .prop_map(|(code, message, detail)| Envelope::Fault(Fault { code, message, detail }));
    prop_oneof![3 => call, 2 => response, 1 => fault]
}

/// `n` envelopes drawn deterministically from `seed`.
pub fn sample_envelopes(n: usize, seed: u64) -> Vec<Envelope> {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    let rng = TestRng::from_seed(RngAlgorithm::ChaCha, &bytes);
    let mut runner = TestRunner::new_with_rng(Config::default(), rng);
    let strategy = envelope();
    (0..n)
        .map(|_| strategy.new_tree(&mut runner).expect("strategy generates").current())
        .collect()
}

/// Which envelope kinds and bean types a sample exercises.
#[derive(Debug, Default)]
pub struct Coverage {
    pub kinds: BTreeSet<&'static str>,
    pub beans: BTreeSet<String>,
}

impl Coverage {
    pub fn of(envelopes: &[Envelope]) -> Self {
        let mut c = Coverage::default();
        for e in envelopes {
            c.kinds.insert(match e.kind() {
                EnvelopeKind::Call => "call",
                EnvelopeKind::Response => "response",
                EnvelopeKind::Fault => "fault",
            });
            match e {
                Envelope::Call(call) => call.params.iter().for_each(|p| c.visit(p)),
                Envelope::Response(r) => c.visit(&r.result),
                Envelope::Fault(_) => {}
            }
        }
        c
    }

    fn visit(&mut self, v: &TypedValue) {
        match &v.value {
            Value::List(items) => items.iter().for_each(|i| self.visit(i)),
            Value::Bean(fields) => {
                self.beans.insert(v.tag.to_string());
                fields.iter().for_each(|f| self.visit(f));
            }
            _ => {}
        }
    }

    /// True when all three kinds and all six wire beans appear.
    pub fn is_complete(&self) -> bool {
        self.kinds.len() == 3 && WIRE_BEANS.iter().all(|b| self.beans.contains(*b))
    }
}

/// Byte inputs for the decoder: valid encodings damaged in assorted ways,
/// plus plain noise. Deterministic in `seed`.
pub fn fuzz_inputs(valid: &[String], n: usize, seed: u64) -> Vec<Vec<u8>> {
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    let mut rng = StdRng::seed_from_u64(seed);
    let tokens: &[&[u8]] = &[
        b"<", b">", b"</", b"/>", b"&", b"&amp;", b"&#0;", b"&#x110000;", b"\"", b"i3type=\"list\"", b"<!DOCTYPE x>",
        b"<![CDATA[", b"]]>", b"<?pi?>", b"<!--", b"-->", b"i3:Envelope", b"i3:Body", b"\xff\xfe", b"\0",
    ];
    (0..n)
        .map(|_| {
            let mut bytes = if valid.is_empty() || rng.random_ratio(1, 10) {
                let len = rng.random_range(0..200);
                (0..len).map(|_| rng.random()).collect()
            } else {
                valid[rng.random_range(0..valid.len())].clone().into_bytes()
            };
            for _ in 0..rng.random_range(1..4) {
                let len = bytes.len();
                match rng.random_range(0..6) {
                    0 if len > 0 => bytes.truncate(rng.random_range(0..len)),
                    1 if len > 0 => {
                        let i = rng.random_range(0..len);
                        bytes[i] ^= 1 << rng.random_range(0..8);
                    }
                    2 => {
                        let t = tokens[rng.random_range(0..tokens.len())];
                        let at = rng.random_range(0..=len);
                        bytes.splice(at..at, t.iter().copied());
                    }
                    3 if len > 1 => {
                        let a = rng.random_range(0..len);
                        let b = rng.random_range(a..len);
                        bytes.drain(a..b);
                    }
                    4 if len > 1 => {
                        let a = rng.random_range(0..len);
                        let b = rng.random_range(a..len);
                        let chunk = bytes[a..b].to_vec();
                        let at = rng.random_range(0..=len);
                        bytes.splice(at..at, chunk);
                    }
                    _ => {
                        let at = rng.random_range(0..=len);
                        bytes.insert(at, rng.random());
                    }
                }
            }
            bytes
        })
        .collect()
}
