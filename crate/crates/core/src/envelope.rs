//! SOAP-style envelope codec.
//!
//! Calls are encoded as
//! `<i3:Envelope><i3:Body><METHOD service="SERVICE"><PARAM i3type="TAG">VALUE</PARAM>...</METHOD></i3:Body></i3:Envelope>`,
//! responses as `<i3:Response method="METHOD">` wrapping one typed value, and
//! faults as `<i3:Fault code="CODE">MESSAGE</i3:Fault>`. Bean values expand
//! to one child element per schema field, in schema order.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::xml::{self, Element};

pub const XML_DECL: &str = r#"<?xml version="1.0" encoding="UTF-8"?>"#;
const ENVELOPE: &str = "i3:Envelope";
const BODY: &str = "i3:Body";
const FAULT: &str = "i3:Fault";
const RESPONSE: &str = "i3:Response";
const TYPE_ATTR: &str = "i3type";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrimitiveTag {
    String,
    Int,
    Bool,
    Date,
    List,
}

impl PrimitiveTag {
    pub const ALL: [PrimitiveTag; 5] = [
        PrimitiveTag::String,
        PrimitiveTag::Int,
        PrimitiveTag::Bool,
        PrimitiveTag::Date,
        PrimitiveTag::List,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveTag::String => "string",
            PrimitiveTag::Int => "int",
            PrimitiveTag::Bool => "bool",
            PrimitiveTag::Date => "date",
            PrimitiveTag::List => "list",
        }
    }
}

/// Either a primitive tag or a registered bean qname.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TypeTag {
    Primitive(PrimitiveTag),
    Bean(String),
}

impl TypeTag {
    pub const STRING: TypeTag = TypeTag::Primitive(PrimitiveTag::String);
    pub const INT: TypeTag = TypeTag::Primitive(PrimitiveTag::Int);
    pub const BOOL: TypeTag = TypeTag::Primitive(PrimitiveTag::Bool);
    pub const DATE: TypeTag = TypeTag::Primitive(PrimitiveTag::Date);
    pub const LIST: TypeTag = TypeTag::Primitive(PrimitiveTag::List);

    pub fn bean(qname: impl Into<String>) -> Self {
        TypeTag::Bean(qname.into())
    }

    pub fn as_str(&self) -> &str {
        match self {
            TypeTag::Primitive(p) => p.as_str(),
            TypeTag::Bean(q) => q,
        }
    }
}

impl fmt::Display for TypeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TypeTag {
    type Err = CodecError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(p) = PrimitiveTag::ALL.iter().find(|p| p.as_str() == s) {
            return Ok(TypeTag::Primitive(*p));
        }
        if xml::is_valid_name(s) {
            Ok(TypeTag::Bean(s.to_string()))
        } else {
            Err(CodecError::TypeMismatch(format!("invalid type tag {s:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Str(String),
    Int(i64),
    Bool(bool),
    Date(NaiveDate),
    List(Vec<TypedValue>),
    /// Bean fields in schema order.
    Bean(Vec<TypedValue>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TypedValue {
    pub name: String,
    pub tag: TypeTag,
    pub value: Value,
}

impl TypedValue {
    pub fn string(name: impl Into<String>, v: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            tag: TypeTag::STRING,
            value: Value::Str(v.into()),
        }
    }

    pub fn int(name: impl Into<String>, v: i64) -> Self {
        Self {
            name: name.into(),
            tag: TypeTag::INT,
            value: Value::Int(v),
        }
    }

    pub fn bool(name: impl Into<String>, v: bool) -> Self {
        Self {
            name: name.into(),
            tag: TypeTag::BOOL,
            value: Value::Bool(v),
        }
    }

    pub fn date(name: impl Into<String>, v: NaiveDate) -> Self {
        Self {
            name: name.into(),
            tag: TypeTag::DATE,
            value: Value::Date(v),
        }
    }

    pub fn list(name: impl Into<String>, items: Vec<TypedValue>) -> Self {
        Self {
            name: name.into(),
            tag: TypeTag::LIST,
            value: Value::List(items),
        }
    }

    pub fn bean(name: impl Into<String>, qname: impl Into<String>, fields: Vec<TypedValue>) -> Self {
        Self {
            name: name.into(),
            tag: TypeTag::Bean(qname.into()),
            value: Value::Bean(fields),
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match &self.value {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self.value {
            Value::Int(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self.value {
            Value::Bool(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_date(&self) -> Option<NaiveDate> {
        match self.value {
            Value::Date(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[TypedValue]> {
        match &self.value {
            Value::List(items) => Some(items),
            _ => None,
        }
    }

    /// Looks up a bean field by name.
    pub fn field(&self, name: &str) -> Option<&TypedValue> {
        match &self.value {
            Value::Bean(fields) => fields.iter().find(|f| f.name == name),
            _ => None,
        }
    }
}

/// Ordered field schema of one bean type.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BeanSchema {
    pub fields: Vec<(String, TypeTag)>,
}

impl BeanSchema {
    pub fn new<I, S>(fields: I) -> Self
    where
        I: IntoIterator<Item = (S, TypeTag)>,
        S: Into<String>,
    {
        Self {
            fields: fields.into_iter().map(|(n, t)| (n.into(), t)).collect(),
        }
    }

    /// Bean qnames referenced directly by this schema.
    pub fn references(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().filter_map(|(_, t)| match t {
            TypeTag::Bean(q) => Some(q.as_str()),
            TypeTag::Primitive(_) => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("bean {0} is already registered")]
    DuplicateQName(String),
    #[error("bean {qname}: field {field} references unregistered type {referenced}")]
    UnknownNestedType {
        qname: String,
        field: String,
        referenced: String,
    },
    #[error("bean {qname}: {reason}")]
    InvalidSchema { qname: String, reason: String },
    #[error("bean {0} is already registered with a different schema")]
    Conflict(String),
}

/// qname → field schema. Schemas may only reference types registered before
/// them, so cycles cannot be formed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BeanRegistry {
    mappings: BTreeMap<String, BeanSchema>,
}

impl BeanRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_bean(&mut self, qname: &str, schema: BeanSchema) -> Result<(), RegistryError> {
        if self.mappings.contains_key(qname) {
            return Err(RegistryError::DuplicateQName(qname.to_string()));
        }
        self.check_schema(qname, &schema)?;
        self.mappings.insert(qname.to_string(), schema);
        Ok(())
    }

    /// Registers `schema` unless an identical schema is already present.
    pub fn ensure_bean(&mut self, qname: &str, schema: BeanSchema) -> Result<(), RegistryError> {
        match self.mappings.get(qname) {
            Some(existing) if *existing == schema => Ok(()),
            Some(_) => Err(RegistryError::Conflict(qname.to_string())),
            None => self.register_bean(qname, schema),
        }
    }

    /// Whether `ensure_bean(qname, schema)` would succeed, without mutating.
    pub fn check_compatible(&self, qname: &str, schema: &BeanSchema) -> Result<(), RegistryError> {
        match self.mappings.get(qname) {
            Some(existing) if existing == schema => Ok(()),
            Some(_) => Err(RegistryError::Conflict(qname.to_string())),
            None => self.check_schema(qname, schema),
        }
    }

    fn check_schema(&self, qname: &str, schema: &BeanSchema) -> Result<(), RegistryError> {
        let invalid = |reason: String| RegistryError::InvalidSchema {
            qname: qname.to_string(),
            reason,
        };
        if !xml::is_valid_name(qname) || !qname.contains(':') {
            return Err(invalid("qname must have the form prefix:Name".into()));
        }
        let mut seen = HashSet::new();
        for (field, tag) in &schema.fields {
            if !xml::is_valid_name(field) || field.contains(':') {
                return Err(invalid(format!("invalid field name {field:?}")));
            }
            if !seen.insert(field.as_str()) {
                return Err(invalid(format!("duplicate field {field}")));
            }
            if let TypeTag::Bean(referenced) = tag {
                if !self.mappings.contains_key(referenced) {
                    return Err(RegistryError::UnknownNestedType {
                        qname: qname.to_string(),
                        field: field.clone(),
                        referenced: referenced.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, qname: &str) -> Option<&BeanSchema> {
        self.mappings.get(qname)
    }

    pub fn contains(&self, qname: &str) -> bool {
        self.mappings.contains_key(qname)
    }

    pub fn len(&self) -> usize {
        self.mappings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mappings.is_empty()
    }

    pub fn qnames(&self) -> impl Iterator<Item = &str> {
        self.mappings.keys().map(String::as_str)
    }

    /// `roots` plus every bean they reference, ordered so that each schema
    /// comes after the beans it references.
    pub fn closure_ordered<'a>(&self, roots: impl IntoIterator<Item = &'a str>) -> Vec<(String, BeanSchema)> {
        fn visit(
            reg: &BeanRegistry,
            qname: &str,
            seen: &mut HashSet<String>,
            out: &mut Vec<(String, BeanSchema)>,
        ) {
            if !seen.insert(qname.to_string()) {
                return;
            }
            if let Some(schema) = reg.get(qname) {
                for r in schema.references() {
                    visit(reg, r, seen, out);
                }
                out.push((qname.to_string(), schema.clone()));
            }
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for root in roots {
            visit(self, root, &mut seen, &mut out);
        }
        out
    }

    /// Checks a value against its tag and, for beans, the registered schema.
    pub fn check_value(&self, v: &TypedValue) -> Result<(), CodecError> {
        self.check_value_at(v, 0)
    }

    fn check_value_at(&self, v: &TypedValue, depth: usize) -> Result<(), CodecError> {
        if depth > xml::MAX_DEPTH / 2 {
            return Err(CodecError::InvalidEnvelope("value nesting too deep".into()));
        }
        match (&v.tag, &v.value) {
            (TypeTag::Primitive(PrimitiveTag::String), Value::Str(s)) => check_text(s),
            (TypeTag::Primitive(PrimitiveTag::Int), Value::Int(_))
            | (TypeTag::Primitive(PrimitiveTag::Bool), Value::Bool(_)) => Ok(()),
            (TypeTag::Primitive(PrimitiveTag::Date), Value::Date(d)) => {
                if (0..=9999).contains(&d.year()) {
                    Ok(())
                } else {
                    Err(CodecError::InvalidEnvelope(format!("date {d} outside years 0000-9999")))
                }
            }
            (TypeTag::Primitive(PrimitiveTag::List), Value::List(items)) => {
                for item in items {
                    check_name(&item.name)?;
                    self.check_value_at(item, depth + 1)?;
                }
                Ok(())
            }
            (TypeTag::Bean(qname), Value::Bean(fields)) => {
                let schema = self
                    .get(qname)
                    .ok_or_else(|| CodecError::UnregisteredBean(qname.clone()))?;
                if schema.fields.len() != fields.len() {
                    return Err(CodecError::TypeMismatch(format!(
                        "bean {qname} expects {} fields, got {}",
                        schema.fields.len(),
                        fields.len()
                    )));
                }
                for ((fname, ftag), fv) in schema.fields.iter().zip(fields) {
                    if *fname != fv.name || *ftag != fv.tag {
                        return Err(CodecError::TypeMismatch(format!(
                            "bean {qname}: expected field {fname}:{ftag}, got {}:{}",
                            fv.name, fv.tag
                        )));
                    }
                    self.check_value_at(fv, depth + 1)?;
                }
                Ok(())
            }
            (tag, _) => Err(CodecError::TypeMismatch(format!(
                "value of {} does not match its tag {tag}",
                v.name
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultCode {
    Client,
    Server,
    ServiceNotFound,
    MethodNotFound,
    TypeMismatch,
}

impl FaultCode {
    pub const ALL: [FaultCode; 5] = [
        FaultCode::Client,
        FaultCode::Server,
        FaultCode::ServiceNotFound,
        FaultCode::MethodNotFound,
        FaultCode::TypeMismatch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FaultCode::Client => "Client",
            FaultCode::Server => "Server",
            FaultCode::ServiceNotFound => "ServiceNotFound",
            FaultCode::MethodNotFound => "MethodNotFound",
            FaultCode::TypeMismatch => "TypeMismatch",
        }
    }
}

impl fmt::Display for FaultCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FaultCode {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        FaultCode::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Call {
    pub service: String,
    pub method: String,
    pub params: Vec<TypedValue>,
}

impl Call {
    pub fn new(service: impl Into<String>, method: impl Into<String>, params: Vec<TypedValue>) -> Self {
        Self {
            service: service.into(),
            method: method.into(),
            params,
        }
    }

    pub fn param(&self, name: &str) -> Option<&TypedValue> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub method: String,
    pub result: TypedValue,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fault {
    pub code: FaultCode,
    pub message: String,
    pub detail: Option<String>,
}

impl Fault {
    pub fn new(code: FaultCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            detail: None,
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)?;
        if let Some(d) = &self.detail {
            write!(f, " ({d})")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvelopeKind {
    Call,
    Response,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Envelope {
    Call(Call),
    Response(Response),
    Fault(Fault),
}

impl Envelope {
    pub fn kind(&self) -> EnvelopeKind {
        match self {
            Envelope::Call(_) => EnvelopeKind::Call,
            Envelope::Response(_) => EnvelopeKind::Response,
            Envelope::Fault(_) => EnvelopeKind::Fault,
        }
    }

    pub fn fault(code: FaultCode, message: impl Into<String>) -> Self {
        Envelope::Fault(Fault::new(code, message))
    }
}

impl From<Fault> for Envelope {
    fn from(f: Fault) -> Self {
        Envelope::Fault(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unregistered bean {0}")]
    UnregisteredBean(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("invalid envelope: {0}")]
    InvalidEnvelope(String),
}

impl From<xml::XmlError> for CodecError {
    fn from(e: xml::XmlError) -> Self {
        CodecError::MalformedXml(e.0)
    }
}

fn check_name(name: &str) -> Result<(), CodecError> {
    if xml::is_valid_name(name) && !name.contains(':') {
        Ok(())
    } else {
        Err(CodecError::InvalidEnvelope(format!("invalid element name {name:?}")))
    }
}

fn check_text(s: &str) -> Result<(), CodecError> {
    match s.chars().find(|c| !xml::is_xml_char(*c)) {
        Some(c) => Err(CodecError::InvalidEnvelope(format!(
            "character U+{:04X} cannot be carried in XML",
            c as u32
        ))),
        None => Ok(()),
    }
}

/// Checks the structural invariants of an envelope against `registry`.
pub fn validate_envelope(env: &Envelope, registry: &BeanRegistry) -> Result<(), CodecError> {
    match env {
        Envelope::Call(call) => {
            check_name(&call.service)?;
            check_name(&call.method)?;
            let mut names = HashSet::new();
            for p in &call.params {
                check_name(&p.name)?;
                if !names.insert(p.name.as_str()) {
                    return Err(CodecError::InvalidEnvelope(format!("duplicate parameter {}", p.name)));
                }
                registry.check_value(p)?;
            }
            Ok(())
        }
        Envelope::Response(resp) => {
            check_name(&resp.method)?;
            check_name(&resp.result.name)?;
            registry.check_value(&resp.result)
        }
        Envelope::Fault(fault) => {
            if fault.message.is_empty() {
                return Err(CodecError::InvalidEnvelope("fault message is empty".into()));
            }
            check_text(&fault.message)?;
            if let Some(d) = &fault.detail {
                check_text(d)?;
            }
            Ok(())
        }
    }
}

/// Encodes an envelope. Output is deterministic for equal inputs.
pub fn encode_envelope(env: &Envelope, registry: &BeanRegistry) -> Result<String, CodecError> {
    validate_envelope(env, registry)?;
    let mut out = String::with_capacity(256);
    out.push_str(XML_DECL);
    out.push_str("<i3:Envelope><i3:Body>");
    match env {
        Envelope::Call(call) => {
            let _ = write!(out, "<{} service=\"", call.method);
            xml::escape_into(&mut out, &call.service);
            out.push_str("\">");
            for p in &call.params {
                write_typed(&mut out, p);
            }
            let _ = write!(out, "</{}>", call.method);
        }
        Envelope::Response(resp) => {
            let _ = write!(out, "<{RESPONSE} method=\"{}\">", resp.method);
            write_typed(&mut out, &resp.result);
            let _ = write!(out, "</{RESPONSE}>");
        }
        Envelope::Fault(fault) => {
            let _ = write!(out, "<{FAULT} code=\"{}\"", fault.code);
            if let Some(d) = &fault.detail {
                out.push_str(" detail=\"");
                xml::escape_into(&mut out, d);
                out.push('"');
            }
            out.push('>');
            xml::escape_into(&mut out, &fault.message);
            let _ = write!(out, "</{FAULT}>");
        }
    }
    out.push_str("</i3:Body></i3:Envelope>");
    Ok(out)
}

/// `<name i3type="tag">content</name>`
fn write_typed(out: &mut String, v: &TypedValue) {
    let _ = write!(out, "<{} {TYPE_ATTR}=\"{}\">", v.name, v.tag);
    write_content(out, &v.value);
    let _ = write!(out, "</{}>", v.name);
}

fn write_content(out: &mut String, value: &Value) {
    match value {
        Value::Str(s) => xml::escape_into(out, s),
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Date(d) => {
            let _ = write!(out, "{}", d.format("%Y-%m-%d"));
        }
        Value::List(items) => {
            for item in items {
                write_typed(out, item);
            }
        }
        Value::Bean(fields) => {
            // bean fields are typed by the schema, so no i3type attribute
            for f in fields {
                let _ = write!(out, "<{}>", f.name);
                write_content(out, &f.value);
                let _ = write!(out, "</{}>", f.name);
            }
        }
    }
}

/// Decodes an envelope. Any input yields either an envelope or one of the
/// declared [`CodecError`]s.
pub fn decode_envelope(bytes: &[u8], registry: &BeanRegistry) -> Result<Envelope, CodecError> {
    let env = decode_unchecked(bytes, registry)?;
    // whatever decodes must also encode
    validate_envelope(&env, registry)?;
    Ok(env)
}

fn decode_unchecked(bytes: &[u8], registry: &BeanRegistry) -> Result<Envelope, CodecError> {
    let root = xml::parse_document(bytes)?;
    if root.name != ENVELOPE {
        return Err(malformed(format!("root element is {}, expected {ENVELOPE}", root.name)));
    }
    check_only_xmlns(&root)?;
    let body = single_child(&root)?;
    if body.name != BODY {
        return Err(malformed(format!("expected {BODY}, found {}", body.name)));
    }
    check_only_xmlns(body)?;
    let payload = single_child(body)?;

    match payload.name.as_str() {
        FAULT => decode_fault(payload),
        RESPONSE => {
            let method = required_attr(payload, "method")?;
            check_attrs(payload, &["method"])?;
            let result = single_child(payload)?;
            Ok(Envelope::Response(Response {
                method: method.to_string(),
                result: decode_typed(result, registry, 0)?,
            }))
        }
        method => {
            if method.contains(':') || !xml::is_valid_name(method) {
                return Err(malformed(format!("unexpected body element {method}")));
            }
            let service = required_attr(payload, "service")?;
            check_attrs(payload, &["service"])?;
            if !xml::is_valid_name(service) || service.contains(':') {
                return Err(malformed(format!("invalid service name {service:?}")));
            }
            if payload.has_significant_text() {
                return Err(malformed("text inside call element"));
            }
            let mut params = Vec::new();
            let mut names = HashSet::new();
            for child in payload.elements() {
                let p = decode_typed(child, registry, 0)?;
                if !names.insert(p.name.clone()) {
                    return Err(malformed(format!("duplicate parameter {}", p.name)));
                }
                params.push(p);
            }
            Ok(Envelope::Call(Call {
                service: service.to_string(),
                method: method.to_string(),
                params,
            }))
        }
    }
}

fn decode_fault(el: &Element) -> Result<Envelope, CodecError> {
    let code_str = required_attr(el, "code")?;
    check_attrs(el, &["code", "detail"])?;
    let code = FaultCode::from_str(code_str).map_err(|_| malformed(format!("unknown fault code {code_str:?}")))?;
    let message = el
        .text()
        .ok_or_else(|| malformed("fault message must be text"))?;
    if message.is_empty() {
        return Err(malformed("empty fault message"));
    }
    Ok(Envelope::Fault(Fault {
        code,
        message,
        detail: el.attr("detail").map(str::to_string),
    }))
}

fn decode_typed(el: &Element, registry: &BeanRegistry, depth: usize) -> Result<TypedValue, CodecError> {
    if el.name.contains(':') || !xml::is_valid_name(&el.name) {
        return Err(malformed(format!("invalid value element {}", el.name)));
    }
    let tag_str = required_attr(el, TYPE_ATTR)?;
    check_attrs(el, &[TYPE_ATTR])?;
    let tag = TypeTag::from_str(tag_str)?;
    let value = decode_content(el, &tag, registry, depth)?;
    Ok(TypedValue {
        name: el.name.clone(),
        tag,
        value,
    })
}

fn decode_content(
    el: &Element,
    tag: &TypeTag,
    registry: &BeanRegistry,
    depth: usize,
) -> Result<Value, CodecError> {
    if depth > xml::MAX_DEPTH / 2 {
        return Err(malformed("value nesting too deep"));
    }
    let text = || {
        el.text()
            .ok_or_else(|| CodecError::TypeMismatch(format!("{} must contain text only", el.name)))
    };
    match tag {
        TypeTag::Primitive(PrimitiveTag::String) => Ok(Value::Str(text()?)),
        TypeTag::Primitive(PrimitiveTag::Int) => {
            let t = text()?;
            parse_int(&t)
                .map(Value::Int)
                .ok_or_else(|| CodecError::TypeMismatch(format!("{}: {t:?} is not an int", el.name)))
        }
        TypeTag::Primitive(PrimitiveTag::Bool) => match text()?.as_str() {
            "true" => Ok(Value::Bool(true)),
            "false" => Ok(Value::Bool(false)),
            other => Err(CodecError::TypeMismatch(format!("{}: {other:?} is not a bool", el.name))),
        },
        TypeTag::Primitive(PrimitiveTag::Date) => {
            let t = text()?;
            parse_date(&t)
                .map(Value::Date)
                .ok_or_else(|| CodecError::TypeMismatch(format!("{}: {t:?} is not a YYYY-MM-DD date", el.name)))
        }
        TypeTag::Primitive(PrimitiveTag::List) => {
            if el.has_significant_text() {
                return Err(CodecError::TypeMismatch(format!("{}: text inside list", el.name)));
            }
            el.elements()
                .map(|item| decode_typed(item, registry, depth + 1))
                .collect::<Result<Vec<_>, _>>()
                .map(Value::List)
        }
        TypeTag::Bean(qname) => {
            let schema = registry
                .get(qname)
                .ok_or_else(|| CodecError::UnregisteredBean(qname.clone()))?;
            if el.has_significant_text() {
                return Err(CodecError::TypeMismatch(format!("{}: text inside bean", el.name)));
            }
            let children: Vec<&Element> = el.elements().collect();
            if children.len() != schema.fields.len() {
                return Err(CodecError::TypeMismatch(format!(
                    "bean {qname} expects {} fields, found {}",
                    schema.fields.len(),
                    children.len()
                )));
            }
            let mut fields = Vec::with_capacity(children.len());
            for ((fname, ftag), child) in schema.fields.iter().zip(children) {
                if child.name != *fname {
                    return Err(CodecError::TypeMismatch(format!(
                        "bean {qname}: expected field {fname}, found {}",
                        child.name
                    )));
                }
                if !child.attrs.is_empty() {
                    return Err(malformed(format!("unexpected attributes on field {fname}")));
                }
                fields.push(TypedValue {
                    name: fname.clone(),
                    tag: ftag.clone(),
                    value: decode_content(child, ftag, registry, depth + 1)?,
                });
            }
            Ok(Value::Bean(fields))
        }
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let digits = s.strip_prefix('-').unwrap_or(s);
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn parse_date(s: &str) -> Option<NaiveDate> {
    let b = s.as_bytes();
    let shape_ok = b.len() == 10
        && b[4] == b'-'
        && b[7] == b'-'
        && b.iter()
            .enumerate()
            .all(|(i, c)| i == 4 || i == 7 || c.is_ascii_digit());
    if !shape_ok {
        return None;
    }
    NaiveDate::from_ymd_opt(s[0..4].parse().ok()?, s[5..7].parse().ok()?, s[8..10].parse().ok()?)
}

fn malformed(msg: impl Into<String>) -> CodecError {
    CodecError::MalformedXml(msg.into())
}

fn single_child(el: &Element) -> Result<&Element, CodecError> {
    if el.has_significant_text() {
        return Err(malformed(format!("unexpected text in {}", el.name)));
    }
    let mut it = el.elements();
    match (it.next(), it.next()) {
        (Some(c), None) => Ok(c),
        (None, _) => Err(malformed(format!("{} is empty", el.name))),
        (Some(_), Some(_)) => Err(malformed(format!("{} has more than one child", el.name))),
    }
}

fn required_attr<'a>(el: &'a Element, name: &str) -> Result<&'a str, CodecError> {
    el.attr(name)
        .ok_or_else(|| malformed(format!("{} is missing attribute {name}", el.name)))
}

fn check_attrs(el: &Element, allowed: &[&str]) -> Result<(), CodecError> {
    match el.attrs.iter().find(|(k, _)| !allowed.contains(&k.as_str())) {
        Some((k, _)) => Err(malformed(format!("unexpected attribute {k} on {}", el.name))),
        None => Ok(()),
    }
}

fn check_only_xmlns(el: &Element) -> Result<(), CodecError> {
    match el
        .attrs
        .iter()
        .find(|(k, _)| k != "xmlns" && !k.starts_with("xmlns:"))
    {
        Some((k, _)) => Err(malformed(format!("unexpected attribute {k} on {}", el.name))),
        None => Ok(()),
    }
}
