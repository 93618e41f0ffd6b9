//! Line-oriented event trace.
//!
//! Each line is `t=<ns> node=<name> comp=<component> ev=<NAME> k=v ...`,
//! written in processing order. Keys after `ev` keep the order the emitter
//! gives them, so two identical runs produce byte-identical files.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};

use crate::engine::SimTime;

#[derive(Debug, Clone, Default)]
pub struct Tracer {
    enabled: bool,
    out: String,
    lines: usize,
}

impl Tracer {
    pub fn new(enabled: bool) -> Self {
        Tracer {
            enabled,
            out: String::new(),
            lines: 0,
        }
    }

    pub fn enabled(&self) -> bool {
        self.enabled
    }

    pub fn emit(&mut self, t: SimTime, node: &str, comp: &str, ev: &str, kv: fmt::Arguments<'_>) {
        if !self.enabled {
            return;
        }
        write!(
            self.out,
            "t={} node={node} comp={comp} ev={ev}",
            t.as_nanos()
        )
        .unwrap();
        let rest = kv.to_string();
        if !rest.is_empty() {
            self.out.push(' ');
            self.out.push_str(&rest);
        }
        self.out.push('\n');
        self.lines += 1;
    }

    pub fn lines(&self) -> usize {
        self.lines
    }

    pub fn text(&self) -> &str {
        &self.out
    }

    pub fn into_text(self) -> String {
        self.out
    }
}

/// One parsed trace line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub line: usize,
    pub t: u64,
    pub node: String,
    pub comp: String,
    pub ev: String,
    pub kv: BTreeMap<String, String>,
}

impl TraceRecord {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.kv.get(key).map(String::as_str)
    }

    /// The IPCP (or application) part of `comp`, before the slash.
    pub fn owner(&self) -> &str {
        self.comp.split('/').next().unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for TraceParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "trace line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for TraceParseError {}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>, TraceParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.is_empty() {
            continue;
        }
        let err = |message: String| TraceParseError { line, message };
        let mut fields = BTreeMap::new();
        let mut order = Vec::new();
        for tok in raw.split(' ') {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| err(format!("token `{tok}` is not key=value")))?;
            order.push(k.to_string());
            fields.insert(k.to_string(), v.to_string());
        }
        if order.len() < 4 || order[..4] != ["t", "node", "comp", "ev"] {
            return Err(err("line must start with t, node, comp, ev".into()));
        }
        let t = fields["t"]
            .parse()
            .map_err(|_| err("bad timestamp".into()))?;
        let node = fields.remove("node").unwrap();
        let comp = fields.remove("comp").unwrap();
        let ev = fields.remove("ev").unwrap();
        fields.remove("t");
        out.push(TraceRecord {
            line,
            t,
            node,
            comp,
            ev,
            kv: fields,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emit_and_parse() {
        let mut tr = Tracer::new(true);
        tr.emit(
            SimTime::from_nanos(42),
            "Host1",
            "H1.top/fa",
            "FA_ALLOC_REQ",
            format_args!("src={} dst={}", "A", "B"),
        );
        tr.emit(
            SimTime::from_nanos(43),
            "Host1",
            "H1.top/rmt",
            "RMT_DEQ",
            format_args!(""),
        );
        assert_eq!(
            tr.text(),
            "t=42 node=Host1 comp=H1.top/fa ev=FA_ALLOC_REQ src=A dst=B\nt=43 node=Host1 comp=H1.top/rmt ev=RMT_DEQ\n"
        );
        let recs = parse_trace(tr.text()).unwrap();
        assert_eq!(recs[0].t, 42);
        assert_eq!(recs[0].get("dst"), Some("B"));
        assert_eq!(recs[0].owner(), "H1.top");
        assert_eq!(recs[1].ev, "RMT_DEQ");
    }

    #[test]
    fn disabled_tracer_is_silent() {
        let mut tr = Tracer::new(false);
        tr.emit(SimTime::ZERO, "n", "c", "E", format_args!("k=v"));
        assert_eq!(tr.text(), "");
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_trace("t=1 node=a ev=X comp=b").is_err());
        assert!(parse_trace("garbage").is_err());
    }
}
