//! A deterministic YAML subset used for every document the controller reads
//! or writes: stack manifests, the network catalog, the host registry and the
//! compose fragments handed to RAN hosts.
//!
//! Supported: block mappings, block sequences (including the compact
//! `key:\n- item` form), single-line flow collections, plain, single-quoted
//! and double-quoted scalars, and `#` comments. Anchors, aliases, tags, block
//! scalars and multi-document streams are rejected with the offending line.
//!
//! Scalars are kept as strings; typed readers decide how to interpret them.
//! A plain `~`, `null` or an empty value is [`Node::Null`].

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Node {
    Null,
    Scalar(String),
    Seq(Vec<Node>),
    Map(Vec<(String, Node)>),
}

impl Node {
    pub fn scalar(s: impl Into<String>) -> Self {
        Node::Scalar(s.into())
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Node::Scalar(s) => Some(s),
            _ => None,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Node::Null => "null",
            Node::Scalar(_) => "scalar",
            Node::Seq(_) => "sequence",
            Node::Map(_) => "mapping",
        }
    }
}

/// Malformed document text. `line` is 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub message: String,
}

/// Well-formed text whose structure does not match the expected schema.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{field}: {reason}")]
pub struct SchemaError {
    pub field: String,
    pub reason: String,
}

impl SchemaError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone)]
struct Line {
    number: usize,
    indent: usize,
    text: String,
}

fn syntax(line: usize, message: impl Into<String>) -> SyntaxError {
    SyntaxError {
        line,
        message: message.into(),
    }
}

/// Parses a document. An empty document is [`Node::Null`].
pub fn parse(text: &str) -> Result<Node, SyntaxError> {
    let mut lines = Vec::new();
    let mut seen_content = false;
    for (idx, raw) in text.lines().enumerate() {
        let number = idx + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        let indent = raw.len() - raw.trim_start_matches(' ').len();
        if raw[indent..].starts_with('\t') {
            return Err(syntax(number, "tab characters are not allowed in indentation"));
        }
        let body = strip_comment(&raw[indent..]).trim_end();
        if body.is_empty() {
            continue;
        }
        if body == "---" && indent == 0 {
            if seen_content {
                return Err(syntax(number, "multiple documents are not supported"));
            }
            continue;
        }
        if body == "..." && indent == 0 {
            return Err(syntax(number, "document end markers are not supported"));
        }
        if body.starts_with('%') && indent == 0 {
            return Err(syntax(number, "directives are not supported"));
        }
        seen_content = true;
        lines.push(Line {
            number,
            indent,
            text: body.to_string(),
        });
    }
    if lines.is_empty() {
        return Ok(Node::Null);
    }
    let mut parser = Parser { lines, pos: 0 };
    let indent = parser.lines[0].indent;
    let node = parser.block(indent)?;
    if let Some(line) = parser.lines.get(parser.pos) {
        return Err(syntax(line.number, "unexpected content after document"));
    }
    Ok(node)
}

fn strip_comment(s: &str) -> &str {
    let mut in_single = false;
    let mut in_double = false;
    let mut escaped = false;
    let mut prev_space = true;
    for (i, c) in s.char_indices() {
        if in_double {
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_double = false;
            }
        } else if in_single {
            if c == '\'' {
                in_single = false;
            }
        } else if c == '#' && prev_space {
            return &s[..i];
        } else if c == '"' && prev_space_or_indicator(s, i) {
            in_double = true;
        } else if c == '\'' && prev_space_or_indicator(s, i) {
            in_single = true;
        }
        prev_space = c == ' ' || c == '\t';
    }
    s
}

// Quotes only open a quoted scalar at the start of a value, not inside a
// plain scalar such as `it's`.
fn prev_space_or_indicator(s: &str, i: usize) -> bool {
    match s[..i].chars().last() {
        None => true,
        Some(c) => matches!(c, ' ' | '[' | '{' | ',' | ':' | '-'),
    }
}

struct Parser {
    lines: Vec<Line>,
    pos: usize,
}

impl Parser {
    fn current(&self) -> Option<&Line> {
        self.lines.get(self.pos)
    }

    fn block(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let line = self.lines[self.pos].clone();
        if is_seq_item(&line.text) {
            self.seq(indent)
        } else if split_key(&line.text, line.number)?.is_some() {
            self.map(indent)
        } else {
            self.pos += 1;
            parse_inline(&line.text, line.number)
        }
    }

    fn map(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let mut entries: Vec<(String, Node)> = Vec::new();
        while let Some(line) = self.current().cloned() {
            if line.indent < indent {
                break;
            }
            if line.indent > indent {
                return Err(syntax(line.number, "unexpected indentation"));
            }
            if is_seq_item(&line.text) {
                return Err(syntax(line.number, "sequence item where a mapping key was expected"));
            }
            let Some((key, rest)) = split_key(&line.text, line.number)? else {
                return Err(syntax(line.number, "expected `key: value`"));
            };
            if entries.iter().any(|(k, _)| *k == key) {
                return Err(syntax(line.number, format!("duplicate key `{key}`")));
            }
            self.pos += 1;
            let value = if rest.is_empty() {
                match self.current() {
                    Some(next) if next.indent > indent => {
                        let child = next.indent;
                        self.block(child)?
                    }
                    Some(next) if next.indent == indent && is_seq_item(&next.text) => {
                        self.seq(indent)?
                    }
                    _ => Node::Null,
                }
            } else {
                parse_inline(rest, line.number)?
            };
            entries.push((key, value));
        }
        Ok(Node::Map(entries))
    }

    fn seq(&mut self, indent: usize) -> Result<Node, SyntaxError> {
        let mut items = Vec::new();
        while let Some(line) = self.current().cloned() {
            if line.indent < indent || !is_seq_item(&line.text) {
                if line.indent > indent {
                    return Err(syntax(line.number, "unexpected indentation"));
                }
                break;
            }
            if line.indent > indent {
                return Err(syntax(line.number, "unexpected indentation"));
            }
            let after_dash = &line.text[1..];
            let rest = after_dash.trim_start_matches(' ');
            if rest.is_empty() {
                self.pos += 1;
                let value = match self.current() {
                    Some(next) if next.indent > indent => {
                        let child = next.indent;
                        self.block(child)?
                    }
                    _ => Node::Null,
                };
                items.push(value);
                continue;
            }
            let column = line.indent + 1 + (after_dash.len() - rest.len());
            if is_seq_item(rest) || split_key(rest, line.number)?.is_some() {
                // Re-anchor the remainder of the line at its own column and
                // parse it as a nested block.
                self.lines[self.pos] = Line {
                    number: line.number,
                    indent: column,
                    text: rest.to_string(),
                };
                items.push(self.block(column)?);
            } else {
                self.pos += 1;
                items.push(parse_inline(rest, line.number)?);
            }
        }
        Ok(Node::Seq(items))
    }
}

fn is_seq_item(text: &str) -> bool {
    text == "-" || text.starts_with("- ")
}

/// Splits `key: rest` at the first mapping indicator outside quotes.
fn split_key(text: &str, line: usize) -> Result<Option<(String, &str)>, SyntaxError> {
    let first = text.chars().next().unwrap_or(' ');
    if first == '[' || first == '{' {
        return Ok(None);
    }
    if first == '"' || first == '\'' {
        let (key, consumed) = quoted_prefix(text, line)?;
        let tail = &text[consumed..];
        let tail_trim = tail.trim_start_matches(' ');
        if let Some(after) = tail_trim.strip_prefix(':') {
            if after.is_empty() || after.starts_with(' ') {
                return Ok(Some((key, after.trim_start_matches(' '))));
            }
        }
        return Ok(None);
    }
    let bytes = text.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b':' && (i + 1 == bytes.len() || bytes[i + 1] == b' ') {
            let key = text[..i].trim_end();
            if key.is_empty() {
                return Err(syntax(line, "empty mapping key"));
            }
            check_plain(key, line)?;
            return Ok(Some((key.to_string(), text[i + 1..].trim_start_matches(' '))));
        }
    }
    Ok(None)
}

fn check_plain(s: &str, line: usize) -> Result<(), SyntaxError> {
    match s.chars().next() {
        Some('&') | Some('*') => Err(syntax(line, "anchors and aliases are not supported")),
        Some('!') => Err(syntax(line, "tags are not supported")),
        Some('|') | Some('>') => Err(syntax(line, "block scalars are not supported")),
        Some('@') | Some('`') | Some('%') => {
            Err(syntax(line, format!("reserved indicator at start of `{s}`")))
        }
        Some('?') if s == "?" || s.starts_with("? ") => {
            Err(syntax(line, "complex mapping keys are not supported"))
        }
        _ => Ok(()),
    }
}

fn plain_node(s: &str) -> Node {
    match s {
        "" | "~" | "null" | "Null" | "NULL" => Node::Null,
        _ => Node::Scalar(s.to_string()),
    }
}

fn parse_inline(text: &str, line: usize) -> Result<Node, SyntaxError> {
    let first = text.chars().next().unwrap_or(' ');
    match first {
        '[' | '{' => {
            let mut flow = Flow {
                chars: text.char_indices().collect(),
                pos: 0,
                text,
                line,
            };
            let node = flow.value()?;
            flow.skip_ws();
            if flow.pos != flow.chars.len() {
                return Err(syntax(line, "trailing characters after flow collection"));
            }
            Ok(node)
        }
        '"' | '\'' => {
            let (value, consumed) = quoted_prefix(text, line)?;
            if !text[consumed..].trim().is_empty() {
                return Err(syntax(line, "trailing characters after quoted scalar"));
            }
            Ok(Node::Scalar(value))
        }
        _ => {
            check_plain(text, line)?;
            if text.contains(": ") || text.ends_with(':') {
                return Err(syntax(line, "nested mapping is not allowed in a value"));
            }
            Ok(plain_node(text))
        }
    }
}

/// Reads a quoted scalar at the start of `text`; returns the value and the
/// number of bytes consumed.
fn quoted_prefix(text: &str, line: usize) -> Result<(String, usize), SyntaxError> {
    let mut chars = text.char_indices();
    let (_, quote) = chars.next().expect("non-empty");
    let mut out = String::new();
    if quote == '\'' {
        let mut iter = chars.peekable();
        while let Some((i, c)) = iter.next() {
            if c == '\'' {
                if let Some(&(_, '\'')) = iter.peek() {
                    iter.next();
                    out.push('\'');
                    continue;
                }
                return Ok((out, i + 1));
            }
            out.push(c);
        }
        return Err(syntax(line, "unterminated single-quoted scalar"));
    }
    while let Some((i, c)) = chars.next() {
        match c {
            '"' => return Ok((out, i + 1)),
            '\\' => {
                let Some((_, esc)) = chars.next() else {
                    break;
                };
                match esc {
                    '\\' => out.push('\\'),
                    '"' => out.push('"'),
                    '/' => out.push('/'),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    '0' => out.push('\0'),
                    'x' | 'u' => {
                        let len = if esc == 'x' { 2 } else { 4 };
                        let mut hex = String::new();
                        for _ in 0..len {
                            let Some((_, h)) = chars.next() else {
                                return Err(syntax(line, "truncated escape sequence"));
                            };
                            hex.push(h);
                        }
                        let code = u32::from_str_radix(&hex, 16)
                            .ok()
                            .and_then(char::from_u32)
                            .ok_or_else(|| syntax(line, format!("invalid escape `\\{esc}{hex}`")))?;
                        out.push(code);
                    }
                    other => return Err(syntax(line, format!("unknown escape `\\{other}`"))),
                }
            }
            c => out.push(c),
        }
    }
    Err(syntax(line, "unterminated double-quoted scalar"))
}

struct Flow<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    text: &'a str,
    line: usize,
}

impl Flow<'_> {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn offset(&self) -> usize {
        self.chars.get(self.pos).map_or(self.text.len(), |&(i, _)| i)
    }

    fn skip_ws(&mut self) {
        while self.peek() == Some(' ') {
            self.pos += 1;
        }
    }

    fn expect(&mut self, c: char) -> Result<(), SyntaxError> {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(syntax(self.line, format!("expected `{c}` in flow collection")))
        }
    }

    fn value(&mut self) -> Result<Node, SyntaxError> {
        self.skip_ws();
        match self.peek() {
            Some('[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() == Some(']') {
                    self.pos += 1;
                    return Ok(Node::Seq(items));
                }
                loop {
                    items.push(self.value()?);
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some(']') => {
                            self.pos += 1;
                            return Ok(Node::Seq(items));
                        }
                        _ => return Err(syntax(self.line, "expected `,` or `]`")),
                    }
                }
            }
            Some('{') => {
                self.pos += 1;
                let mut entries: Vec<(String, Node)> = Vec::new();
                self.skip_ws();
                if self.peek() == Some('}') {
                    self.pos += 1;
                    return Ok(Node::Map(entries));
                }
                loop {
                    let key = match self.value()? {
                        Node::Scalar(s) => s,
                        _ => return Err(syntax(self.line, "flow mapping keys must be scalars")),
                    };
                    if entries.iter().any(|(k, _)| *k == key) {
                        return Err(syntax(self.line, format!("duplicate key `{key}`")));
                    }
                    self.expect(':')?;
                    let value = self.value()?;
                    entries.push((key, value));
                    self.skip_ws();
                    match self.peek() {
                        Some(',') => self.pos += 1,
                        Some('}') => {
                            self.pos += 1;
                            return Ok(Node::Map(entries));
                        }
                        _ => return Err(syntax(self.line, "expected `,` or `}`")),
                    }
                }
            }
            Some('"') | Some('\'') => {
                let start = self.offset();
                let (value, consumed) = quoted_prefix(&self.text[start..], self.line)?;
                let end = start + consumed;
                while self.offset() < end {
                    self.pos += 1;
                }
                Ok(Node::Scalar(value))
            }
            Some(_) => {
                let start = self.offset();
                while let Some(c) = self.peek() {
                    if matches!(c, ',' | ']' | '}') {
                        break;
                    }
                    if c == ':' {
                        let next = self.chars.get(self.pos + 1).map(|&(_, c)| c);
                        if matches!(next, None | Some(' ') | Some(',') | Some(']') | Some('}')) {
                            break;
                        }
                    }
                    self.pos += 1;
                }
                let raw = self.text[start..self.offset()].trim_end();
                if raw.is_empty() {
                    return Err(syntax(self.line, "empty entry in flow collection"));
                }
                check_plain(raw, self.line)?;
                Ok(plain_node(raw))
            }
            None => Err(syntax(self.line, "unterminated flow collection")),
        }
    }
}

/// Serializes a node in block style. `parse(&emit(n)) == n` for every node
/// whose mappings have unique keys.
pub fn emit(node: &Node) -> String {
    let mut out = String::new();
    match node {
        Node::Map(entries) if !entries.is_empty() => emit_map(entries, 0, &mut out),
        Node::Seq(items) if !items.is_empty() => emit_seq(items, 0, &mut out),
        other => {
            out.push_str(&inline(other));
            out.push('\n');
        }
    }
    out
}

fn inline(node: &Node) -> String {
    match node {
        Node::Null => "~".to_string(),
        Node::Scalar(s) => quote_if_needed(s),
        Node::Seq(_) => "[]".to_string(),
        Node::Map(_) => "{}".to_string(),
    }
}

fn is_block(node: &Node) -> bool {
    match node {
        Node::Seq(items) => !items.is_empty(),
        Node::Map(entries) => !entries.is_empty(),
        _ => false,
    }
}

fn emit_map(entries: &[(String, Node)], indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    for (key, value) in entries {
        out.push_str(&pad);
        out.push_str(&quote_if_needed(key));
        out.push(':');
        if is_block(value) {
            out.push('\n');
            match value {
                Node::Map(inner) => emit_map(inner, indent + 2, out),
                Node::Seq(inner) => emit_seq(inner, indent + 2, out),
                _ => unreachable!(),
            }
        } else {
            out.push(' ');
            out.push_str(&inline(value));
            out.push('\n');
        }
    }
}

fn emit_seq(items: &[Node], indent: usize, out: &mut String) {
    let pad = " ".repeat(indent);
    for item in items {
        if is_block(item) {
            let mut nested = String::new();
            match item {
                Node::Map(inner) => emit_map(inner, indent + 2, &mut nested),
                Node::Seq(inner) => emit_seq(inner, indent + 2, &mut nested),
                _ => unreachable!(),
            }
            out.push_str(&pad);
            out.push_str("- ");
            out.push_str(&nested[indent + 2..]);
        } else {
            out.push_str(&pad);
            out.push_str("- ");
            out.push_str(&inline(item));
            out.push('\n');
        }
    }
}

fn quote_if_needed(s: &str) -> String {
    let needs = s.is_empty()
        || matches!(s, "~" | "null" | "Null" | "NULL" | "-" | "---" | "...")
        || s.starts_with(|c: char| {
            matches!(
                c,
                ' ' | '-' | '?' | ':' | ',' | '[' | ']' | '{' | '}' | '#' | '&' | '*' | '!' | '|'
                    | '>' | '\'' | '"' | '%' | '@' | '`'
            )
        })
        || s.ends_with(' ')
        || s.ends_with(':')
        || s.contains(": ")
        || s.contains(" #")
        || s.contains([',', '[', ']', '{', '}'])
        || s.chars().any(|c| c.is_control());
    if !needs {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() && (c as u32) < 0x100 => {
                out.push_str(&format!("\\x{:02x}", c as u32));
            }
            c if c.is_control() => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

impl fmt::Display for Node {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&emit(self))
    }
}

/// Typed access to a mapping node that tracks which keys were consumed so
/// that leftovers can be rejected.
pub struct MapReader<'a> {
    path: String,
    entries: &'a [(String, Node)],
    used: Vec<bool>,
}

pub(crate) fn join_path(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

impl<'a> MapReader<'a> {
    pub fn new(node: &'a Node, path: &str) -> Result<Self, SchemaError> {
        match node {
            Node::Map(entries) => Ok(Self {
                path: path.to_string(),
                entries,
                used: vec![false; entries.len()],
            }),
            other => Err(SchemaError::new(
                if path.is_empty() { "<document>" } else { path },
                format!("expected a mapping, found {}", other.kind()),
            )),
        }
    }

    pub fn field(&self, key: &str) -> String {
        join_path(&self.path, key)
    }

    /// Returns the value for `key`, or `None` when absent or null.
    pub fn get(&mut self, key: &str) -> Option<&'a Node> {
        let idx = self.entries.iter().position(|(k, _)| k == key)?;
        self.used[idx] = true;
        match &self.entries[idx].1 {
            Node::Null => None,
            node => Some(node),
        }
    }

    pub fn required(&mut self, key: &str) -> Result<&'a Node, SchemaError> {
        self.get(key)
            .ok_or_else(|| SchemaError::new(self.field(key), "required field is missing"))
    }

    pub fn string(&mut self, key: &str) -> Result<String, SchemaError> {
        let node = self.required(key)?;
        expect_str(node, &self.field(key)).map(str::to_string)
    }

    pub fn opt_string(&mut self, key: &str) -> Result<Option<String>, SchemaError> {
        match self.get(key) {
            None => Ok(None),
            Some(node) => expect_str(node, &self.field(key)).map(|s| Some(s.to_string())),
        }
    }

    pub fn opt_seq(&mut self, key: &str) -> Result<&'a [Node], SchemaError> {
        match self.get(key) {
            None => Ok(&[]),
            Some(Node::Seq(items)) => Ok(items),
            Some(other) => Err(SchemaError::new(
                self.field(key),
                format!("expected a sequence, found {}", other.kind()),
            )),
        }
    }

    /// Rejects any key that was not consumed.
    pub fn finish(self) -> Result<(), SchemaError> {
        for ((key, _), used) in self.entries.iter().zip(&self.used) {
            if !used {
                return Err(SchemaError::new(join_path(&self.path, key), "unknown key"));
            }
        }
        Ok(())
    }
}

pub fn expect_str<'a>(node: &'a Node, field: &str) -> Result<&'a str, SchemaError> {
    match node {
        Node::Scalar(s) => Ok(s),
        other => Err(SchemaError::new(
            field,
            format!("expected a scalar, found {}", other.kind()),
        )),
    }
}
