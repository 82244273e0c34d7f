//! Deployment and undeployment descriptors in the Axis WSDD dialect.
//!
//! Supported nodes: `deployment`, `handler`, `service`, `requestFlow`,
//! `parameter` (`className`, `allowedMethods`) and `beanMapping`. Anything
//! else is rejected. Provider and type prefixes such as `java:` are opaque;
//! bindings use the suffix after the colon.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::{self, Write as _};

use crate::envelope::{BeanRegistry, BeanSchema};
use crate::xml::{self, Element};

pub const LOG_HANDLER: &str = "LogHandler";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WsddError {
    #[error("malformed XML: {0}")]
    MalformedXml(String),
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{node} is missing {attribute}")]
    MissingAttribute { node: String, attribute: String },
    #[error("service {0} is declared more than once")]
    DuplicateService(String),
    #[error("handler {0} is declared more than once")]
    DuplicateHandler(String),
    #[error("service {service} references undeclared handler {handler}")]
    UndeclaredHandler { service: String, handler: String },
    #[error("{0}")]
    Invalid(String),
    #[error("undeployment descriptor lists no services")]
    EmptyDescriptor,
}

impl From<xml::XmlError> for WsddError {
    fn from(e: xml::XmlError) -> Self {
        WsddError::MalformedXml(e.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HandlerDecl {
    pub name: String,
    /// Raw type attribute, e.g. `java:LogHandler`.
    pub handler_type: String,
}

impl HandlerDecl {
    pub fn kind(&self) -> &str {
        binding_suffix(&self.handler_type)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AllowedMethods {
    All,
    Only(Vec<String>),
}

impl AllowedMethods {
    pub fn parse(value: &str) -> Self {
        let tokens: Vec<String> = value
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(str::to_string)
            .collect();
        if tokens.is_empty() || tokens.iter().any(|t| t == "*") {
            AllowedMethods::All
        } else {
            AllowedMethods::Only(tokens)
        }
    }

    pub fn allows(&self, method: &str) -> bool {
        match self {
            AllowedMethods::All => true,
            AllowedMethods::Only(list) => list.iter().any(|m| m == method),
        }
    }

    pub fn as_attr(&self) -> String {
        match self {
            AllowedMethods::All => String::new(),
            AllowedMethods::Only(list) => list.join(" "),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BeanMapping {
    pub qname: String,
    /// Raw `languageSpecificType`, e.g. `java:StudentRecord`.
    pub language_type: String,
}

impl BeanMapping {
    pub fn binding_key(&self) -> &str {
        binding_suffix(&self.language_type)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceDecl {
    pub name: String,
    pub provider: String,
    pub class_name: String,
    pub allowed_methods: AllowedMethods,
    pub request_flow: Vec<String>,
    pub bean_mappings: Vec<BeanMapping>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct DeploymentDescriptor {
    pub handlers: Vec<HandlerDecl>,
    pub services: Vec<ServiceDecl>,
}

impl DeploymentDescriptor {
    pub fn handler(&self, name: &str) -> Option<&HandlerDecl> {
        self.handlers.iter().find(|h| h.name == name)
    }

    pub fn service(&self, name: &str) -> Option<&ServiceDecl> {
        self.services.iter().find(|s| s.name == name)
    }

    pub fn service_names(&self) -> Vec<String> {
        self.services.iter().map(|s| s.name.clone()).collect()
    }

    /// A descriptor holding only the services accepted by `keep`, and the
    /// handlers they reference.
    pub fn filtered(&self, keep: impl Fn(&ServiceDecl) -> bool) -> Self {
        let services: Vec<ServiceDecl> = self.services.iter().filter(|s| keep(s)).cloned().collect();
        let used: HashSet<&str> = services
            .iter()
            .flat_map(|s| s.request_flow.iter().map(String::as_str))
            .collect();
        Self {
            handlers: self
                .handlers
                .iter()
                .filter(|h| used.contains(h.name.as_str()))
                .cloned()
                .collect(),
            services,
        }
    }

    /// Pretty-printed WSDD text that parses back to an equal descriptor.
    pub fn to_xml(&self) -> String {
        let mut out = String::new();
        out.push_str("<deployment xmlns=\"http://xml.apache.org/axis/wsdd/\"\n");
        out.push_str("  xmlns:java=\"http://xml.apache.org/axis/wsdd/providers/java\">\n");
        for h in &self.handlers {
            let _ = writeln!(
                out,
                "  <handler name=\"{}\" type=\"{}\"/>",
                xml::escape(&h.name),
                xml::escape(&h.handler_type)
            );
        }
        for s in &self.services {
            let _ = writeln!(
                out,
                "  <service name=\"{}\" provider=\"{}\">",
                xml::escape(&s.name),
                xml::escape(&s.provider)
            );
            if !s.request_flow.is_empty() {
                out.push_str("    <requestFlow>");
                for h in &s.request_flow {
                    let _ = write!(out, "<handler type=\"{}\"/>", xml::escape(h));
                }
                out.push_str("</requestFlow>\n");
            }
            let _ = writeln!(
                out,
                "    <parameter name=\"className\" value=\"{}\"/>",
                xml::escape(&s.class_name)
            );
            let _ = writeln!(
                out,
                "    <parameter name=\"allowedMethods\" value=\"{}\"/>",
                xml::escape(&s.allowed_methods.as_attr())
            );
            for m in &s.bean_mappings {
                let prefix = m.qname.split_once(':').map(|(p, _)| p).unwrap_or("myNS");
                let _ = writeln!(
                    out,
                    "    <beanMapping qname=\"{}\" xmlns:{prefix}=\"urn:BeanService\"\n      languageSpecificType=\"{}\"/>",
                    xml::escape(&m.qname),
                    xml::escape(&m.language_type)
                );
            }
            out.push_str("  </service>\n");
        }
        out.push_str("</deployment>\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UndeploymentDescriptor {
    pub service_names: Vec<String>,
}

impl UndeploymentDescriptor {
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<undeployment xmlns=\"http://xml.apache.org/axis/wsdd/\">\n");
        for n in &self.service_names {
            let _ = writeln!(out, "  <service name=\"{}\"/>", xml::escape(n));
        }
        out.push_str("</undeployment>\n");
        out
    }
}

/// `java:StudentRecord` → `StudentRecord`; strings without a prefix are
/// returned unchanged.
pub fn binding_suffix(s: &str) -> &str {
    s.rsplit_once(':').map(|(_, suffix)| suffix).unwrap_or(s)
}

fn attr<'a>(el: &'a Element, name: &str) -> Result<&'a str, WsddError> {
    el.attr(name).ok_or_else(|| WsddError::MissingAttribute {
        node: el.name.clone(),
        attribute: name.to_string(),
    })
}

fn check_attrs(el: &Element, allowed: &[&str]) -> Result<(), WsddError> {
    for (k, _) in &el.attrs {
        if k == "xmlns" || k.starts_with("xmlns:") || allowed.contains(&k.as_str()) {
            continue;
        }
        return Err(WsddError::UnknownNode(format!("{}@{k}", el.name)));
    }
    if el.has_significant_text() {
        return Err(WsddError::MalformedXml(format!("unexpected text inside {}", el.name)));
    }
    Ok(())
}

fn non_empty<'a>(el: &Element, name: &str, value: &'a str) -> Result<&'a str, WsddError> {
    if value.trim().is_empty() {
        Err(WsddError::Invalid(format!("{}@{name} must not be empty", el.name)))
    } else {
        Ok(value)
    }
}

pub fn parse_wsdd(text: &[u8]) -> Result<DeploymentDescriptor, WsddError> {
    let root = xml::parse_document(text)?;
    if root.name != "deployment" {
        return Err(WsddError::UnknownNode(root.name));
    }
    check_attrs(&root, &[])?;

    let mut d = DeploymentDescriptor::default();
    let mut service_els = Vec::new();
    for child in root.elements() {
        match child.name.as_str() {
            "handler" => {
                check_attrs(child, &["name", "type"])?;
                let name = non_empty(child, "name", attr(child, "name")?)?.to_string();
                let handler_type = non_empty(child, "type", attr(child, "type")?)?.to_string();
                if child.elements().next().is_some() {
                    return Err(WsddError::UnknownNode(format!(
                        "{} inside handler",
                        child.elements().next().map(|e| e.name.as_str()).unwrap_or_default()
                    )));
                }
                if d.handler(&name).is_some() {
                    return Err(WsddError::DuplicateHandler(name));
                }
                d.handlers.push(HandlerDecl { name, handler_type });
            }
            "service" => service_els.push(child),
            other => return Err(WsddError::UnknownNode(other.to_string())),
        }
    }

    for el in service_els {
        let service = parse_service(el, &d)?;
        if d.service(&service.name).is_some() {
            return Err(WsddError::DuplicateService(service.name));
        }
        d.services.push(service);
    }
    Ok(d)
}

fn parse_service(el: &Element, d: &DeploymentDescriptor) -> Result<ServiceDecl, WsddError> {
    check_attrs(el, &["name", "provider"])?;
    let name = non_empty(el, "name", attr(el, "name")?)?.to_string();
    if !xml::is_valid_name(&name) || name.contains(':') {
        return Err(WsddError::Invalid(format!("invalid service name {name:?}")));
    }
    let provider = attr(el, "provider")?.to_string();
    let mut params: BTreeMap<String, String> = BTreeMap::new();
    let mut request_flow = Vec::new();
    let mut bean_mappings = Vec::new();

    for child in el.elements() {
        match child.name.as_str() {
            "requestFlow" => {
                check_attrs(child, &[])?;
                for h in child.elements() {
                    if h.name != "handler" {
                        return Err(WsddError::UnknownNode(format!("{} inside requestFlow", h.name)));
                    }
                    check_attrs(h, &["type"])?;
                    let handler = attr(h, "type")?.to_string();
                    if d.handler(&handler).is_none() {
                        return Err(WsddError::UndeclaredHandler {
                            service: name.clone(),
                            handler,
                        });
                    }
                    request_flow.push(handler);
                }
            }
            "parameter" => {
                check_attrs(child, &["name", "value"])?;
                let pname = attr(child, "name")?;
                let value = attr(child, "value")?;
                if !matches!(pname, "className" | "allowedMethods") {
                    return Err(WsddError::UnknownNode(format!("parameter {pname}")));
                }
                if params.insert(pname.to_string(), value.to_string()).is_some() {
                    return Err(WsddError::Invalid(format!("service {name}: parameter {pname} given twice")));
                }
            }
            "beanMapping" => {
                check_attrs(child, &["qname", "languageSpecificType"])?;
                let qname = attr(child, "qname")?.to_string();
                if !xml::is_valid_name(&qname) || !qname.contains(':') {
                    return Err(WsddError::Invalid(format!("invalid bean qname {qname:?}")));
                }
                let language_type = non_empty(child, "languageSpecificType", attr(child, "languageSpecificType")?)?;
                bean_mappings.push(BeanMapping {
                    qname,
                    language_type: language_type.to_string(),
                });
            }
            other => return Err(WsddError::UnknownNode(other.to_string())),
        }
    }

    let class_name = params
        .remove("className")
        .ok_or_else(|| WsddError::MissingAttribute {
            node: format!("service {name}"),
            attribute: "parameter className".into(),
        })?;
    if class_name.trim().is_empty() {
        return Err(WsddError::Invalid(format!("service {name}: className is empty")));
    }
    let allowed_methods = AllowedMethods::parse(params.get("allowedMethods").map(String::as_str).unwrap_or(""));

    Ok(ServiceDecl {
        name,
        provider,
        class_name,
        allowed_methods,
        request_flow,
        bean_mappings,
    })
}

pub fn parse_undeploy(text: &[u8]) -> Result<UndeploymentDescriptor, WsddError> {
    let root = xml::parse_document(text)?;
    if root.name != "undeployment" {
        return Err(WsddError::UnknownNode(root.name));
    }
    check_attrs(&root, &[])?;
    let mut service_names = Vec::new();
    for child in root.elements() {
        if child.name != "service" {
            return Err(WsddError::UnknownNode(child.name.clone()));
        }
        check_attrs(child, &["name"])?;
        if let Some(inner) = child.elements().next() {
            return Err(WsddError::UnknownNode(inner.name.clone()));
        }
        service_names.push(non_empty(child, "name", attr(child, "name")?)?.to_string());
    }
    if service_names.is_empty() {
        return Err(WsddError::EmptyDescriptor);
    }
    Ok(UndeploymentDescriptor { service_names })
}

/// Schema bound to a binding key, plus the auxiliary beans it references.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogEntry {
    pub schema: BeanSchema,
    pub requires: Vec<(String, BeanSchema)>,
}

/// Binding key → bean schema, the language-neutral stand-in for
/// `languageSpecificType` classes.
#[derive(Debug, Clone, Default)]
pub struct BeanCatalog {
    entries: BTreeMap<String, CatalogEntry>,
}

impl BeanCatalog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, entry: CatalogEntry) {
        self.entries.insert(key.into(), entry);
    }

    pub fn get(&self, key: &str) -> Option<&CatalogEntry> {
        self.entries.get(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Class name → exposed method names of each available implementation.
pub type KnownImpls = BTreeMap<String, BTreeSet<String>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub service: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.service {
            Some(s) => write!(f, "service {s}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Registers every bean mapping of `d` into `registry`, returning one
/// violation per mapping that cannot be registered. Mappings that succeed are
/// kept even when others fail; callers wanting atomicity work on a clone.
pub fn apply_bean_mappings(
    d: &DeploymentDescriptor,
    catalog: &BeanCatalog,
    registry: &mut BeanRegistry,
) -> Vec<Violation> {
    let mut violations = Vec::new();
    for s in &d.services {
        for m in &s.bean_mappings {
            let mut push = |message: String| {
                violations.push(Violation {
                    service: Some(s.name.clone()),
                    message,
                })
            };
            let Some(entry) = catalog.get(m.binding_key()) else {
                push(format!("bean {}: no type bound to {}", m.qname, m.language_type));
                continue;
            };
            let mut failed = false;
            for (q, schema) in &entry.requires {
                if let Err(e) = registry.ensure_bean(q, schema.clone()) {
                    push(format!("bean {}: {e}", m.qname));
                    failed = true;
                    break;
                }
            }
            if failed {
                continue;
            }
            if let Err(e) = registry.ensure_bean(&m.qname, entry.schema.clone()) {
                push(e.to_string());
            }
        }
    }
    violations
}

/// Checks that every service binds to a known implementation, every handler
/// kind is supported, and every bean mapping registers without conflict.
/// Returns the full list of violations.
pub fn validate(
    d: &DeploymentDescriptor,
    known_impls: &KnownImpls,
    catalog: &BeanCatalog,
    registry: &BeanRegistry,
) -> Result<(), Vec<Violation>> {
    let mut violations = Vec::new();
    for h in &d.handlers {
        if h.kind() != LOG_HANDLER {
            violations.push(Violation {
                service: None,
                message: format!("handler {} has unsupported type {}", h.name, h.handler_type),
            });
        }
    }
    for s in &d.services {
        match known_impls.get(&s.class_name) {
            None => violations.push(Violation {
                service: Some(s.name.clone()),
                message: format!("unknown implementation class {}", s.class_name),
            }),
            Some(methods) => {
                if let AllowedMethods::Only(list) = &s.allowed_methods {
                    for m in list.iter().filter(|m| !methods.contains(*m)) {
                        violations.push(Violation {
                            service: Some(s.name.clone()),
                            message: format!("allowed method {m} is not implemented by {}", s.class_name),
                        });
                    }
                }
            }
        }
    }
    let mut scratch = registry.clone();
    violations.extend(apply_bean_mappings(d, catalog, &mut scratch));
    if violations.is_empty() {
        Ok(())
    } else {
        Err(violations)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SMALL: &str = r#"<deployment xmlns="http://xml.apache.org/axis/wsdd/">
  <handler name="print" type="java:LogHandler"/>
  <service name="A" provider="java:RPC">
    <requestFlow><handler type="print"/></requestFlow>
    <parameter name="className" value="AImpl"/>
    <parameter name="allowedMethods" value="get put"/>
  </service>
</deployment>"#;

    #[test]
    fn parses_small_descriptor() {
        let d = parse_wsdd(SMALL.as_bytes()).unwrap();
        assert_eq!(d.handlers[0].kind(), "LogHandler");
        let s = &d.services[0];
        assert_eq!(s.request_flow, vec!["print"]);
        assert_eq!(s.allowed_methods, AllowedMethods::Only(vec!["get".into(), "put".into()]));
        assert_eq!(parse_wsdd(d.to_xml().as_bytes()).unwrap(), d);
    }

    #[test]
    fn duplicate_service_rejected() {
        let doc = SMALL.replace("</deployment>", "<service name=\"A\" provider=\"java:RPC\"><parameter name=\"className\" value=\"X\"/></service></deployment>");
        assert_eq!(parse_wsdd(doc.as_bytes()), Err(WsddError::DuplicateService("A".into())));
    }

    #[test]
    fn unknown_nodes_and_missing_attributes() {
        let doc = SMALL.replace("<handler name", "<typeMapping/><handler name");
        assert_eq!(parse_wsdd(doc.as_bytes()), Err(WsddError::UnknownNode("typeMapping".into())));
        let doc = SMALL.replace(" provider=\"java:RPC\"", "");
        assert!(matches!(parse_wsdd(doc.as_bytes()), Err(WsddError::MissingAttribute { .. })));
        let doc = SMALL.replace("<parameter name=\"className\" value=\"AImpl\"/>", "");
        assert!(matches!(parse_wsdd(doc.as_bytes()), Err(WsddError::MissingAttribute { .. })));
        let doc = SMALL.replace("type=\"print\"", "type=\"nope\"");
        assert!(matches!(parse_wsdd(doc.as_bytes()), Err(WsddError::UndeclaredHandler { .. })));
        assert!(matches!(parse_wsdd(b"<deployment>"), Err(WsddError::MalformedXml(_))));
    }

    #[test]
    fn undeploy_parsing() {
        let u = parse_undeploy(
            br#"<undeployment xmlns="http://xml.apache.org/axis/wsdd/"><service name="LibraryDataBaseManagerService"/></undeployment>"#,
        )
        .unwrap();
        assert_eq!(u.service_names, vec!["LibraryDataBaseManagerService"]);
        assert_eq!(parse_undeploy(b"<undeployment/>"), Err(WsddError::EmptyDescriptor));
        assert_eq!(
            parse_undeploy(SMALL.as_bytes()),
            Err(WsddError::UnknownNode("deployment".into()))
        );
        assert_eq!(parse_undeploy(u.to_xml().as_bytes()).unwrap(), u);
    }

    #[test]
    fn allowed_methods_forms() {
        assert_eq!(AllowedMethods::parse(""), AllowedMethods::All);
        assert_eq!(AllowedMethods::parse("*"), AllowedMethods::All);
        assert!(AllowedMethods::parse("a b").allows("b"));
        assert!(!AllowedMethods::parse("a b").allows("c"));
    }

    #[test]
    fn validate_reports_unknown_class_and_methods() {
        let d = parse_wsdd(SMALL.as_bytes()).unwrap();
        let mut known = KnownImpls::new();
        let errs = validate(&d, &known, &BeanCatalog::new(), &BeanRegistry::new()).unwrap_err();
        assert_eq!(errs.len(), 1);
        known.insert("AImpl".into(), ["get".to_string()].into());
        let errs = validate(&d, &known, &BeanCatalog::new(), &BeanRegistry::new()).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].message.contains("put"));
    }
}
