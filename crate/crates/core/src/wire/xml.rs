//! Codec for the host-requirements XML fragment a developer submits with a
//! service registration.
//!
//! The canonical root tag is `HostRequirments` (sic); `HostRequirements` is
//! accepted as an alias on decode. Only elements and character data are
//! supported: no attributes, namespaces, or DTDs.

use thiserror::Error;

use crate::domain::{PlatformRequirement, ResourceVector, Version};

pub const ROOT_TAG: &str = "HostRequirments";
pub const ROOT_TAG_ALIAS: &str = "HostRequirements";
const MAX_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostRequirementsMessage {
    pub platform: PlatformRequirement,
    pub min_resources: ResourceVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum XmlError {
    #[error("document is not valid UTF-8")]
    Encoding,
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown root element <{0}>")]
    UnknownRoot(String),
    #[error("missing element <{0}>")]
    MissingElement(&'static str),
    #[error("element <{0}> appears more than once")]
    DuplicateElement(&'static str),
    #[error("element <{element}> has invalid value `{value}`")]
    InvalidValue { element: &'static str, value: String },
}

impl XmlError {
    /// The element the error is about, when there is one.
    pub fn element(&self) -> Option<&str> {
        match self {
            XmlError::UnknownRoot(name) => Some(name),
            XmlError::MissingElement(e) | XmlError::DuplicateElement(e) => Some(e),
            XmlError::InvalidValue { element, .. } => Some(element),
            _ => None,
        }
    }
}

/// Emits the canonical form: LF line endings, two-space indentation,
/// trailing newline.
pub fn encode_requirements(msg: &HostRequirementsMessage) -> Vec<u8> {
    let r = &msg.min_resources;
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\" ?>\n\
         <{ROOT_TAG}>\n\
         \x20 <Platform>\n\
         \x20   <OS>{os}</OS>\n\
         \x20   <MinVersion>{ver}</MinVersion>\n\
         \x20 </Platform>\n\
         \x20 <MinRequiredResources>\n\
         \x20   <CPU>{cpu}</CPU>\n\
         \x20   <Memory>{mem}</Memory>\n\
         \x20   <Storage>{sto}</Storage>\n\
         \x20   <Energy>{en}</Energy>\n\
         \x20 </MinRequiredResources>\n\
         </{ROOT_TAG}>\n",
        os = escape(&msg.platform.os_name),
        ver = msg.platform.min_version,
        cpu = r.cpu,
        mem = r.memory,
        sto = r.storage,
        en = r.energy,
    )
    .into_bytes()
}

pub fn decode_requirements(bytes: &[u8]) -> Result<HostRequirementsMessage, XmlError> {
    let text = std::str::from_utf8(bytes).map_err(|_| XmlError::Encoding)?;
    let root = Parser::new(text).document()?;
    if root.name != ROOT_TAG && root.name != ROOT_TAG_ALIAS {
        return Err(XmlError::UnknownRoot(root.name));
    }
    let platform = root.child("Platform")?;
    let os_name = platform.child("OS")?.text.trim().to_owned();
    if os_name.is_empty() || os_name.chars().any(char::is_whitespace) {
        return Err(XmlError::InvalidValue { element: "OS", value: os_name });
    }
    let version_text = platform.child("MinVersion")?.text.trim();
    let min_version: Version = version_text
        .parse()
        .map_err(|_| XmlError::InvalidValue { element: "MinVersion", value: version_text.to_owned() })?;

    let res = root.child("MinRequiredResources")?;
    let min_resources = ResourceVector {
        cpu: res.integer("CPU")?,
        memory: res.integer("Memory")?,
        storage: res.integer("Storage")?,
        energy: res.integer("Energy")?,
    };
    Ok(HostRequirementsMessage {
        platform: PlatformRequirement { os_name, min_version },
        min_resources,
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

#[derive(Debug)]
struct Element {
    name: String,
    text: String,
    children: Vec<Element>,
}

impl Element {
    fn child(&self, name: &'static str) -> Result<&Element, XmlError> {
        let mut found = self.children.iter().filter(|c| c.name == name);
        let first = found.next().ok_or(XmlError::MissingElement(name))?;
        if found.next().is_some() {
            return Err(XmlError::DuplicateElement(name));
        }
        Ok(first)
    }

    fn integer(&self, name: &'static str) -> Result<u64, XmlError> {
        let raw = self.child(name)?.text.trim();
        if raw.is_empty() || !raw.bytes().all(|b| b.is_ascii_digit()) {
            return Err(XmlError::InvalidValue { element: name, value: raw.to_owned() });
        }
        raw.parse().map_err(|_| XmlError::InvalidValue { element: name, value: raw.to_owned() })
    }
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn new(src: &'a str) -> Self {
        Self { src, pos: 0 }
    }

    fn rest(&self) -> &'a str {
        &self.src[self.pos..]
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, XmlError> {
        Err(XmlError::Syntax { offset: self.pos, message: message.into() })
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn skip_until(&mut self, terminator: &str, what: &str) -> Result<(), XmlError> {
        match self.rest().find(terminator) {
            Some(i) => {
                self.pos += i + terminator.len();
                Ok(())
            }
            None => self.err(format!("unterminated {what}")),
        }
    }

    /// Skips whitespace, comments, and the `...` elision marker that
    /// excerpted documents carry between the declaration and the root.
    fn skip_misc(&mut self, allow_elision: bool) -> Result<(), XmlError> {
        loop {
            self.skip_ws();
            if self.eat("<!--") {
                self.skip_until("-->", "comment")?;
            } else if allow_elision && self.eat("...") {
                continue;
            } else {
                return Ok(());
            }
        }
    }

    fn document(&mut self) -> Result<Element, XmlError> {
        self.eat("\u{feff}");
        self.skip_ws();
        if self.eat("<?xml") {
            self.skip_until("?>", "XML declaration")?;
        }
        self.skip_misc(true)?;
        if !self.rest().starts_with('<') {
            return self.err("expected root element");
        }
        let root = self.element(0)?;
        self.skip_misc(false)?;
        if !self.rest().is_empty() {
            return self.err("content after root element");
        }
        Ok(root)
    }

    fn name(&mut self) -> Result<String, XmlError> {
        let rest = self.rest();
        let end = rest
            .find(|c: char| !(c.is_alphanumeric() || matches!(c, '_' | '-' | '.' | ':')))
            .unwrap_or(rest.len());
        if end == 0 {
            return self.err("expected element name");
        }
        self.pos += end;
        Ok(rest[..end].to_owned())
    }

    fn element(&mut self, depth: usize) -> Result<Element, XmlError> {
        if depth > MAX_DEPTH {
            return self.err("elements nested too deeply");
        }
        if !self.eat("<") {
            return self.err("expected `<`");
        }
        let name = self.name()?;
        self.skip_ws();
        if self.eat("/>") {
            return Ok(Element { name, text: String::new(), children: Vec::new() });
        }
        if !self.eat(">") {
            return self.err(format!("attributes are not supported on <{name}>"));
        }

        let mut text = String::new();
        let mut children = Vec::new();
        loop {
            if self.rest().is_empty() {
                return self.err(format!("unterminated element <{name}>"));
            }
            if self.eat("</") {
                let close = self.name()?;
                self.skip_ws();
                if !self.eat(">") {
                    return self.err("expected `>` in closing tag");
                }
                if close != name {
                    return self.err(format!("mismatched closing tag </{close}> for <{name}>"));
                }
                break;
            }
            if self.eat("<!--") {
                self.skip_until("-->", "comment")?;
                continue;
            }
            if self.rest().starts_with("<!") || self.rest().starts_with("<?") {
                return self.err("unsupported markup");
            }
            if self.rest().starts_with('<') {
                children.push(self.element(depth + 1)?);
                continue;
            }
            let rest = self.rest();
            let end = rest.find('<').unwrap_or(rest.len());
            let chunk = &rest[..end];
            let start = self.pos;
            text.push_str(&unescape(chunk).map_err(|m| XmlError::Syntax { offset: start, message: m })?);
            self.pos += end;
        }

        if !children.is_empty() && !text.trim().is_empty() {
            return Err(XmlError::Syntax {
                offset: self.pos,
                message: format!("mixed content in <{name}>"),
            });
        }
        Ok(Element { name, text, children })
    }
}

fn unescape(chunk: &str) -> Result<String, String> {
    let mut out = String::with_capacity(chunk.len());
    let mut rest = chunk;
    while let Some(amp) = rest.find('&') {
        out.push_str(&rest[..amp]);
        let after = &rest[amp + 1..];
        let semi = after.find(';').ok_or_else(|| "unterminated entity".to_owned())?;
        let entity = &after[..semi];
        let ch = match entity {
            "lt" => '<',
            "gt" => '>',
            "amp" => '&',
            "quot" => '"',
            "apos" => '\'',
            _ => {
                let code = if let Some(hex) = entity.strip_prefix("#x") {
                    u32::from_str_radix(hex, 16).ok()
                } else if let Some(dec) = entity.strip_prefix('#') {
                    dec.parse().ok()
                } else {
                    None
                };
                code.and_then(char::from_u32).ok_or_else(|| format!("unknown entity `&{entity};`"))?
            }
        };
        out.push(ch);
        rest = &after[semi + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
