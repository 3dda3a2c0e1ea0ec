//! Minimal GML writer for node/edge attributed graphs.

use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Int(i64),
    Real(f64),
    Str(String),
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<u64> for Value {
    fn from(v: u64) -> Self {
        Value::Int(v as i64)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.to_string())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Graph {
    pub directed: bool,
    pub attrs: Vec<(String, Value)>,
    pub nodes: Vec<(usize, Vec<(String, Value)>)>,
    pub edges: Vec<(usize, usize, Vec<(String, Value)>)>,
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Int(i) => write!(out, "{i}").unwrap(),
        // Debug keeps a decimal point or exponent so the token stays a real.
        Value::Real(r) => write!(out, "{r:?}").unwrap(),
        Value::Str(s) => {
            out.push('"');
            for c in s.chars() {
                match c {
                    '"' => out.push_str("&quot;"),
                    '&' => out.push_str("&amp;"),
                    _ => out.push(c),
                }
            }
            out.push('"');
        }
    }
}

fn write_attrs(out: &mut String, indent: &str, attrs: &[(String, Value)]) {
    for (k, v) in attrs {
        out.push_str(indent);
        out.push_str(k);
        out.push(' ');
        write_value(out, v);
        out.push('\n');
    }
}

impl Graph {
    pub fn to_gml(&self) -> String {
        let mut out = String::from("graph [\n");
        writeln!(out, "  directed {}", u8::from(self.directed)).unwrap();
        write_attrs(&mut out, "  ", &self.attrs);
        for (id, attrs) in &self.nodes {
            out.push_str("  node [\n");
            writeln!(out, "    id {id}").unwrap();
            write_attrs(&mut out, "    ", attrs);
            out.push_str("  ]\n");
        }
        for (s, t, attrs) in &self.edges {
            out.push_str("  edge [\n");
            writeln!(out, "    source {s}\n    target {t}").unwrap();
            write_attrs(&mut out, "    ", attrs);
            out.push_str("  ]\n");
        }
        out.push_str("]\n");
        out
    }
}
