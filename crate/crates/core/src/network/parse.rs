//! Sectioned text format for networks:
//!
//! ```text
//! [NODES]
//! # id  elevation_m  kind        demand_col  outlet_class
//! PS    47.0         fixed_head
//! J1    52.5         junction    J1          DN150
//! [PIPES]
//! # id  from  to  length_m  diameter_mm  material  roughness_mm
//! P1    PS    J1  120       1200         MSCL      10.6
//! [SOURCES]
//! # id  head_m  [pump]
//! PS    47.0    pump
//! [OUTLETS]
//! # class  a0  a1  a2  [q_max_lps]
//! DN150    5.95 0.0456 0.00221 100
//! ```
//!
//! `#` and `;` start comments. `-` leaves an optional column empty.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::{Network, NetworkError, Node, NodeKind, OutletClassSpec, Pipe};
use crate::units::{m_to_mm, mm_to_m};

#[derive(Debug, Clone, PartialEq)]
pub struct ParseWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Nodes,
    Pipes,
    Sources,
    Outlets,
    Unknown,
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let body = match line.find(['#', ';']) {
        Some(i) => &line[..i],
        None => line,
    };
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in body.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push(Token { text: &body[s..i], column: body[..s].chars().count() + 1 });
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(Token { text: &body[s..], column: body[..s].chars().count() + 1 });
    }
    out
}

fn syntax(line: usize, column: usize, message: impl Into<String>) -> NetworkError {
    NetworkError::Syntax { line, column, message: message.into() }
}

fn number(tok: &Token<'_>, line: usize, what: &str) -> Result<f64, NetworkError> {
    tok.text
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| syntax(line, tok.column, format!("expected number for {what}, found `{}`", tok.text)))
}

fn optional(tok: Option<&Token<'_>>) -> Option<String> {
    tok.filter(|t| t.text != "-").map(|t| t.text.to_string())
}

pub fn parse_network(text: &str) -> Result<Network, NetworkError> {
    parse_network_with_warnings(text).map(|(net, _)| net)
}

/// Accepts arbitrary bytes; invalid UTF-8 is a syntax error.
pub fn parse_network_bytes(bytes: &[u8]) -> Result<Network, NetworkError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        syntax(line, 1, "input is not valid UTF-8")
    })?;
    parse_network(text)
}

pub fn parse_network_with_warnings(text: &str) -> Result<(Network, Vec<ParseWarning>), NetworkError> {
    let mut warnings = Vec::new();
    let mut nodes: Vec<Node> = Vec::new();
    let mut pipes: Vec<Pipe> = Vec::new();
    let mut sources: Vec<(usize, usize, String, f64, bool)> = Vec::new();
    let mut classes = BTreeMap::new();
    let mut section = Section::None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let toks = tokenize(raw);
        let Some(first) = toks.first() else { continue };

        if first.text.starts_with('[') {
            if toks.len() != 1 || !first.text.ends_with(']') {
                return Err(syntax(line, first.column, "malformed section header"));
            }
            let name = &first.text[1..first.text.len() - 1];
            section = match name.to_ascii_uppercase().as_str() {
                "NODES" | "JUNCTIONS" => Section::Nodes,
                "PIPES" => Section::Pipes,
                "SOURCES" => Section::Sources,
                "OUTLETS" => Section::Outlets,
                _ => {
                    let message = format!("ignoring unknown section [{name}]");
                    log::warn!("line {line}: {message}");
                    warnings.push(ParseWarning { line, message });
                    Section::Unknown
                }
            };
            continue;
        }

        match section {
            Section::None => return Err(syntax(line, first.column, "data before first section header")),
            Section::Unknown => {}
            Section::Nodes => {
                if !(3..=5).contains(&toks.len()) {
                    return Err(syntax(line, first.column, "NODES rows need: id elevation kind [demand_col] [outlet_class]"));
                }
                let elevation = number(&toks[1], line, "elevation")?;
                let kind = match toks[2].text.to_ascii_lowercase().as_str() {
                    "junction" => NodeKind::Junction,
                    "fixed_head" | "reservoir" => NodeKind::FixedHead { head: elevation, pump: false },
                    other => return Err(syntax(line, toks[2].column, format!("unknown node kind `{other}`"))),
                };
                nodes.push(Node {
                    id: first.text.to_string(),
                    elevation,
                    kind,
                    demand_ref: optional(toks.get(3)),
                    outlet_class: optional(toks.get(4)),
                });
            }
            Section::Pipes => {
                if toks.len() != 7 {
                    return Err(syntax(
                        line,
                        first.column,
                        "PIPES rows need: id from to length_m diameter_mm material roughness_mm",
                    ));
                }
                pipes.push(Pipe {
                    id: first.text.to_string(),
                    from: toks[1].text.to_string(),
                    to: toks[2].text.to_string(),
                    length: number(&toks[3], line, "length")?,
                    diameter: mm_to_m(number(&toks[4], line, "diameter")?),
                    material: toks[5].text.parse().expect("infallible"),
                    roughness: number(&toks[6], line, "roughness")?,
                });
            }
            Section::Sources => {
                if !(2..=3).contains(&toks.len()) {
                    return Err(syntax(line, first.column, "SOURCES rows need: id head_m [pump]"));
                }
                let head = number(&toks[1], line, "head")?;
                let pump = match toks.get(2) {
                    None => false,
                    Some(t) if t.text.eq_ignore_ascii_case("pump") => true,
                    Some(t) => return Err(syntax(line, t.column, format!("expected `pump`, found `{}`", t.text))),
                };
                sources.push((line, first.column, first.text.to_string(), head, pump));
            }
            Section::Outlets => {
                if !(4..=5).contains(&toks.len()) {
                    return Err(syntax(line, first.column, "OUTLETS rows need: class a0 a1 a2 [q_max]"));
                }
                let spec = OutletClassSpec {
                    a0: number(&toks[1], line, "a0")?,
                    a1: number(&toks[2], line, "a1")?,
                    a2: number(&toks[3], line, "a2")?,
                    q_max: toks.get(4).map(|t| number(t, line, "q_max")).transpose()?,
                };
                if classes.insert(first.text.to_string(), spec).is_some() {
                    return Err(NetworkError::DuplicateId { kind: "outlet class", id: first.text.to_string() });
                }
            }
        }
    }

    let mut seen_sources = std::collections::HashSet::new();
    for (line, column, id, head, pump) in sources {
        if !seen_sources.insert(id.clone()) {
            return Err(NetworkError::DuplicateId { kind: "source", id });
        }
        let node = nodes
            .iter_mut()
            .find(|n| n.id == id)
            .ok_or_else(|| syntax(line, column, format!("source `{id}` is not a declared node")))?;
        match &mut node.kind {
            NodeKind::FixedHead { head: h, pump: p } => {
                *h = head;
                *p = pump;
            }
            NodeKind::Junction => return Err(syntax(line, column, format!("source `{id}` is a junction"))),
        }
    }

    Network::new(nodes, pipes, classes).map(|net| (net, warnings))
}

/// Shortest decimal millimetre string that parses back to exactly `d` metres.
fn diameter_mm_repr(d: f64) -> String {
    let mm = m_to_mm(d);
    let plain = format!("{mm}");
    if plain.parse::<f64>().map(mm_to_m) == Ok(d) {
        return plain;
    }
    for prec in 0..=17 {
        let s = format!("{mm:.prec$}");
        if s.parse::<f64>().map(mm_to_m) == Ok(d) {
            return s;
        }
    }
    // Neighbouring representable values of the mm figure.
    let mut cand = mm;
    for _ in 0..4 {
        cand = f64::from_bits(cand.to_bits() + 1);
        if mm_to_m(cand) == d {
            return format!("{cand}");
        }
    }
    let mut cand = mm;
    for _ in 0..4 {
        cand = f64::from_bits(cand.to_bits() - 1);
        if mm_to_m(cand) == d {
            return format!("{cand}");
        }
    }
    plain
}

/// Canonical text form. `parse_network(serialize_network(n)) == n`.
pub fn serialize_network(net: &Network) -> String {
    let mut out = String::new();
    out.push_str("[NODES]\n# id elevation_m kind demand_col outlet_class\n");
    for n in net.nodes() {
        let kind = if n.is_junction() { "junction" } else { "fixed_head" };
        let _ = write!(out, "{} {} {}", n.id, n.elevation, kind);
        match (&n.demand_ref, &n.outlet_class) {
            (None, None) => {}
            (Some(d), None) => {
                let _ = write!(out, " {d}");
            }
            (d, Some(c)) => {
                let _ = write!(out, " {} {c}", d.as_deref().unwrap_or("-"));
            }
        }
        out.push('\n');
    }
    out.push_str("\n[PIPES]\n# id from to length_m diameter_mm material roughness_mm\n");
    for p in net.pipes() {
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {}",
            p.id,
            p.from,
            p.to,
            p.length,
            diameter_mm_repr(p.diameter),
            p.material,
            p.roughness
        );
    }
    out.push_str("\n[SOURCES]\n# id head_m [pump]\n");
    for &i in net.fixed_nodes() {
        let n = &net.nodes()[i];
        if let NodeKind::FixedHead { head, pump } = n.kind {
            let _ = writeln!(out, "{} {}{}", n.id, head, if pump { " pump" } else { "" });
        }
    }
    if !net.outlet_classes().is_empty() {
        out.push_str("\n[OUTLETS]\n# class a0 a1 a2 [q_max]\n");
        for (class, s) in net.outlet_classes() {
            let _ = write!(out, "{class} {} {} {}", s.a0, s.a1, s.a2);
            if let Some(q) = s.q_max {
                let _ = write!(out, " {q}");
            }
            out.push('\n');
        }
    }
    out
}
