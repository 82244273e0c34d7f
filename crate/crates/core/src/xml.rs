//! Minimal XML element tree over `quick-xml`, plus the escaping rules the
//! wire formats share.

use std::fmt::Write as _;

use quick_xml::events::attributes::Attribute;
use quick_xml::events::{BytesRef, BytesStart, Event};
use quick_xml::Reader;

/// Nesting deeper than this is rejected as malformed.
pub const MAX_DEPTH: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("malformed XML: {0}")]
pub struct XmlError(pub String);

impl XmlError {
    fn new(msg: impl Into<String>) -> Self {
        XmlError(msg.into())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Element(Element),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<Node>,
}

impl Element {
    pub fn attr(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    /// Child elements, skipping text.
    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|n| match n {
            Node::Element(e) => Some(e),
            Node::Text(_) => None,
        })
    }

    /// True when any text child carries non-whitespace characters.
    pub fn has_significant_text(&self) -> bool {
        self.children.iter().any(|n| match n {
            Node::Text(t) => !t.chars().all(is_xml_whitespace),
            Node::Element(_) => false,
        })
    }

    /// Concatenated text content. Returns `None` if the element has element
    /// children.
    pub fn text(&self) -> Option<String> {
        let mut out = String::new();
        for child in &self.children {
            match child {
                Node::Text(t) => out.push_str(t),
                Node::Element(_) => return None,
            }
        }
        Some(out)
    }
}

fn is_xml_whitespace(c: char) -> bool {
    matches!(c, ' ' | '\t' | '\n' | '\r')
}

/// Characters permitted by the XML 1.0 `Char` production.
pub fn is_xml_char(c: char) -> bool {
    matches!(c,
        '\u{9}' | '\u{A}' | '\u{D}'
        | '\u{20}'..='\u{D7FF}'
        | '\u{E000}'..='\u{FFFD}'
        | '\u{10000}'..='\u{10FFFF}')
}

/// Element and attribute names accepted by the wire formats: an optional
/// single `prefix:` followed by an ASCII identifier.
pub fn is_valid_name(name: &str) -> bool {
    fn ident(s: &str) -> bool {
        let mut chars = s.chars();
        match chars.next() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
            _ => return false,
        }
        chars.all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
    }
    match name.split_once(':') {
        Some((prefix, local)) => ident(prefix) && ident(local),
        None => ident(name),
    }
}

/// Escapes text content. Tabs and line breaks become character references so
/// parsers that normalize line ends cannot alter the value.
pub fn escape_into(out: &mut String, text: &str) {
    for c in text.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            '\r' => out.push_str("&#13;"),
            '\n' => out.push_str("&#10;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    escape_into(&mut out, text);
    out
}

/// Parses a complete document into its root element.
///
/// Comments and processing instructions are skipped; an XML declaration is
/// accepted only before the root; DOCTYPE declarations are rejected.
pub fn parse_document(bytes: &[u8]) -> Result<Element, XmlError> {
    let text = std::str::from_utf8(bytes).map_err(|_| XmlError::new("input is not UTF-8"))?;
    let text = text.strip_prefix('\u{FEFF}').unwrap_or(text);
    let mut reader = Reader::from_str(text);
    reader.config_mut().check_end_names = true;

    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;
    let mut seen_any = false;

    loop {
        let event = reader
            .read_event()
            .map_err(|e| XmlError::new(format!("at byte {}: {e}", reader.buffer_position())))?;
        match event {
            Event::Decl(_) => {
                if seen_any {
                    return Err(XmlError::new("XML declaration after content"));
                }
            }
            Event::DocType(_) => return Err(XmlError::new("DOCTYPE is not supported")),
            Event::Comment(_) | Event::PI(_) => {}
            Event::Start(start) => {
                if root.is_some() {
                    return Err(XmlError::new("content after the root element"));
                }
                if stack.len() >= MAX_DEPTH {
                    return Err(XmlError::new("nesting too deep"));
                }
                stack.push(open_element(&start)?);
            }
            Event::Empty(start) => {
                if root.is_some() {
                    return Err(XmlError::new("content after the root element"));
                }
                let el = open_element(&start)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Element(el)),
                    None => root = Some(el),
                }
            }
            Event::End(_) => {
                let el = stack
                    .pop()
                    .ok_or_else(|| XmlError::new("unexpected closing tag"))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(Node::Element(el)),
                    None => root = Some(el),
                }
            }
            Event::Text(t) => {
                let content = t
                    .xml10_content()
                    .map_err(|e| XmlError::new(e.to_string()))?;
                push_text(&mut stack, root.is_some(), &content)?;
            }
            Event::CData(c) => {
                let content = c.decode().map_err(|e| XmlError::new(e.to_string()))?;
                if stack.is_empty() {
                    return Err(XmlError::new("CDATA outside the root element"));
                }
                push_text(&mut stack, root.is_some(), &content)?;
            }
            Event::GeneralRef(r) => {
                if stack.is_empty() {
                    return Err(XmlError::new("reference outside the root element"));
                }
                let resolved = resolve_ref(&r)?;
                push_text(&mut stack, root.is_some(), resolved.encode_utf8(&mut [0; 4]))?;
            }
            Event::Eof => break,
        }
        seen_any = true;
    }

    if !stack.is_empty() {
        return Err(XmlError::new("unexpected end of input"));
    }
    root.ok_or_else(|| XmlError::new("no root element"))
}

fn push_text(stack: &mut [Element], after_root: bool, content: &str) -> Result<(), XmlError> {
    if let Some(c) = content.chars().find(|c| !is_xml_char(*c)) {
        return Err(XmlError::new(format!("illegal character U+{:04X}", c as u32)));
    }
    match stack.last_mut() {
        Some(parent) => {
            if let Some(Node::Text(prev)) = parent.children.last_mut() {
                prev.push_str(content);
            } else {
                parent.children.push(Node::Text(content.to_string()));
            }
            Ok(())
        }
        None if content.chars().all(is_xml_whitespace) => Ok(()),
        None if after_root => Err(XmlError::new("content after the root element")),
        None => Err(XmlError::new("text outside the root element")),
    }
}

fn resolve_ref(r: &BytesRef<'_>) -> Result<char, XmlError> {
    if r.is_char_ref() {
        let c = r
            .resolve_char_ref()
            .map_err(|e| XmlError::new(e.to_string()))?
            .ok_or_else(|| XmlError::new("bad character reference"))?;
        if !is_xml_char(c) {
            return Err(XmlError::new(format!("illegal character U+{:04X}", c as u32)));
        }
        return Ok(c);
    }
    let name = r.decode().map_err(|e| XmlError::new(e.to_string()))?;
    match name.as_ref() {
        "lt" => Ok('<'),
        "gt" => Ok('>'),
        "amp" => Ok('&'),
        "apos" => Ok('\''),
        "quot" => Ok('"'),
        other => Err(XmlError::new(format!("unknown entity &{other};"))),
    }
}

fn open_element(start: &BytesStart<'_>) -> Result<Element, XmlError> {
    let name = std::str::from_utf8(start.name().as_ref())
        .map_err(|_| XmlError::new("element name is not UTF-8"))?
        .to_string();
    let mut attrs = Vec::new();
    for attr in start.attributes() {
        let attr: Attribute<'_> = attr.map_err(|e| XmlError::new(e.to_string()))?;
        let key = std::str::from_utf8(attr.key.as_ref())
            .map_err(|_| XmlError::new("attribute name is not UTF-8"))?
            .to_string();
        let value = attr
            .unescape_value()
            .map_err(|e| XmlError::new(e.to_string()))?
            .into_owned();
        if let Some(c) = value.chars().find(|c| !is_xml_char(*c)) {
            return Err(XmlError::new(format!("illegal character U+{:04X}", c as u32)));
        }
        attrs.push((key, value));
    }
    Ok(Element {
        name,
        attrs,
        children: Vec::new(),
    })
}

/// Writes `el` as compact XML (no whitespace between elements).
pub fn write_element(out: &mut String, el: &Element) {
    out.push('<');
    out.push_str(&el.name);
    for (k, v) in &el.attrs {
        let _ = write!(out, " {k}=\"");
        escape_into(out, v);
        out.push('"');
    }
    if el.children.is_empty() {
        out.push_str("/>");
        return;
    }
    out.push('>');
    for child in &el.children {
        match child {
            Node::Element(e) => write_element(out, e),
            Node::Text(t) => escape_into(out, t),
        }
    }
    let _ = write!(out, "</{}>", el.name);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_elements_and_text() {
        let root = parse_document(b"<?xml version=\"1.0\"?><a x=\"1\"><b>hi &amp; bye</b><c/></a>")
            .unwrap();
        assert_eq!(root.name, "a");
        assert_eq!(root.attr("x"), Some("1"));
        let kids: Vec<_> = root.elements().collect();
        assert_eq!(kids[0].text().as_deref(), Some("hi & bye"));
        assert_eq!(kids[1].name, "c");
    }

    #[test]
    fn rejects_truncated_and_trailing_content() {
        assert!(parse_document(b"<a><b></b>").is_err());
        assert!(parse_document(b"<a/><b/>").is_err());
        assert!(parse_document(b"<a/>junk").is_err());
        assert!(parse_document(b"").is_err());
        assert!(parse_document(b"<a></b>").is_err());
        assert!(parse_document(b"<a>&nope;</a>").is_err());
        assert!(parse_document(b"<a>&#1;</a>").is_err());
    }

    #[test]
    fn escaped_line_breaks_survive() {
        let mut out = String::new();
        let el = Element {
            name: "v".into(),
            attrs: vec![],
            children: vec![Node::Text("a\r\nb\t<&>".into())],
        };
        write_element(&mut out, &el);
        let back = parse_document(out.as_bytes()).unwrap();
        assert_eq!(back.text().as_deref(), Some("a\r\nb\t<&>"));
    }

    #[test]
    fn depth_is_bounded() {
        let doc = "<a>".repeat(MAX_DEPTH + 1) + &"</a>".repeat(MAX_DEPTH + 1);
        assert!(parse_document(doc.as_bytes()).is_err());
    }

    #[test]
    fn name_rules() {
        assert!(is_valid_name("getStudent"));
        assert!(is_valid_name("myNS:StudentRecord"));
        assert!(!is_valid_name("1abc"));
        assert!(!is_valid_name("a:b:c"));
        assert!(!is_valid_name(""));
    }
}
