//! Line-oriented text formats.
//!
//! DAG files start with `dag <n> <p> <m>` followed by one `edge <src> <dst>
//! <label>` line per edge. Vector files hold one number per line. In both,
//! `#` starts a comment and blank lines are ignored.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dag::{Dag, Edge};
use crate::linalg::BandMatrix;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError {
        line,
        message: message.into(),
    }
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(k, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = body.split_whitespace().collect();
        (!tokens.is_empty()).then_some((k + 1, tokens))
    })
}

fn parse_field<T: std::str::FromStr>(line: usize, tok: &str, what: &str) -> Result<T, ParseError> {
    tok.parse().map_err(|_| err(line, format!("invalid {what} `{tok}`")))
}

pub fn parse_dag(text: &str) -> Result<Dag, ParseError> {
    let mut lines = content_lines(text);
    let (hline, header) = lines.next().ok_or_else(|| err(1, "missing `dag n p m` header"))?;
    if header.len() != 4 || header[0] != "dag" {
        return Err(err(hline, "expected `dag <n> <p> <m>`"));
    }
    let n: usize = parse_field(hline, header[1], "input count")?;
    let p: usize = parse_field(hline, header[2], "intermediate count")?;
    let m: usize = parse_field(hline, header[3], "output count")?;
    let mut edges = Vec::new();
    for (line, tokens) in lines {
        match tokens.as_slice() {
            ["edge", s, d, l] => edges.push(Edge::new(
                parse_field(line, s, "source id")?,
                parse_field(line, d, "target id")?,
                parse_field(line, l, "label")?,
            )),
            [word, ..] => {
                return Err(err(
                    line,
                    format!("unexpected `{word}`, expected `edge <src> <dst> <label>`"),
                ))
            }
            [] => unreachable!(),
        }
    }
    Ok(Dag::new(n, p, m, edges))
}

/// Canonical rendering; `parse_dag(&write_dag(d))` reproduces the edges.
pub fn write_dag(dag: &Dag) -> String {
    let mut s = format!(
        "dag {} {} {}\n",
        dag.num_inputs(),
        dag.num_intermediates(),
        dag.num_outputs()
    );
    for e in dag.edges() {
        let _ = writeln!(s, "edge {} {} {:?}", e.src, e.dst, e.label);
    }
    s
}

pub fn parse_vector(text: &str) -> Result<Vec<f64>, ParseError> {
    content_lines(text)
        .map(|(line, tokens)| match tokens.as_slice() {
            [v] => parse_field(line, v, "number"),
            _ => Err(err(line, "expected one number per line")),
        })
        .collect()
}

pub fn write_vector(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:?}\n")).collect()
}

/// Debug dump: `band n ml mu` then one row of `ml+mu+1` band values per
/// matrix row (offsets `-ml..=mu`, out-of-matrix slots shown as 0).
pub fn write_band(a: &BandMatrix) -> String {
    let (ml, mu) = a.bandwidths();
    let n = a.dim();
    let mut s = format!("band {n} {ml} {mu}\n");
    for i in 0..n {
        let row: Vec<String> = (-(ml as i64)..=mu as i64)
            .map(|d| {
                let j = i as i64 + d;
                let v = if j < 0 || j >= n as i64 {
                    0.0
                } else {
                    a.get(i, j as usize)
                };
                format!("{v:?}")
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}
