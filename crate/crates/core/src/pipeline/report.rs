//! Report serialization, side-by-side comparison and error reduction.
//!
//! Line-delimited report: the first line is a header object
//! `{"format":"textnorm-eval","version":1,"mode":..,"total":..,"errors":..,
//! "ser":"0.0150","by_failure":{..},"by_class":{..}}`, then one
//! [`SentenceResult`] object per line in corpus order.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{EvalError, EvalReport, SentenceResult};

pub const REPORT_FORMAT: &str = "textnorm-eval";
pub const REPORT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    mode: String,
    total: usize,
    errors: usize,
    ser: String,
    by_failure: BTreeMap<String, usize>,
    by_class: BTreeMap<String, usize>,
}

impl EvalReport {
    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: REPORT_FORMAT.into(),
            version: REPORT_VERSION,
            mode: self.mode.clone(),
            total: self.total,
            errors: self.errors,
            ser: self.ser().to_string(),
            by_failure: self.by_failure.clone(),
            by_class: self.by_class.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.sentences {
            out.push_str(&serde_json::to_string(r).expect("result serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let bad = |line: usize, message: String| EvalError::BadReport { line: line + 1, message };
        let (hl, first) = lines.next().ok_or_else(|| bad(0, "empty report".into()))?;
        let header: Header = serde_json::from_str(first).map_err(|e| bad(hl, e.to_string()))?;
        if header.format != REPORT_FORMAT || header.version != REPORT_VERSION {
            return Err(bad(hl, format!("unsupported report {} v{}", header.format, header.version)));
        }
        let sentences = lines
            .map(|(i, l)| serde_json::from_str::<SentenceResult>(l).map_err(|e| bad(i, e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let report = EvalReport::from_results(header.mode, sentences)?;
        if report.total != header.total || report.errors != header.errors {
            return Err(bad(hl, "header counts disagree with the records".into()));
        }
        Ok(report)
    }

    /// Human-readable summary table.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let ser = self.ser();
        let _ = writeln!(out, "mode       {}", self.mode);
        let _ = writeln!(out, "sentences  {}", self.total);
        let _ = writeln!(out, "errors     {}", self.errors);
        let _ = writeln!(out, "SER        {ser}");
        if !self.by_failure.is_empty() {
            let _ = writeln!(out, "\nfailure kind         count");
            for (k, v) in &self.by_failure {
                let _ = writeln!(out, "{k:<20} {v:>5}");
            }
        }
        if !self.by_class.is_empty() {
            let _ = writeln!(out, "\nclass                count");
            for (k, v) in &self.by_class {
                let _ = writeln!(out, "{k:<20} {v:>5}");
            }
        }
        out
    }
}

/// `(base - golden) / base`.
pub fn error_reduction(base: f64, golden: f64) -> Result<f64, EvalError> {
    if base == 0.0 {
        return Err(EvalError::ZeroBase);
    }
    Ok((base - golden) / base)
}

impl EvalReport {
    /// Relative error reduction of `golden` over `self`, from exact counts.
    pub fn error_reduction_to(&self, golden: &EvalReport) -> Result<f64, EvalError> {
        let (b, g) = (self.ser(), golden.ser());
        if b.errors == 0 {
            return Err(EvalError::ZeroBase);
        }
        // (eb/tb - eg/tg) / (eb/tb) = (eb*tg - eg*tb) / (eb*tg)
        let num = b.errors as i128 * g.total as i128 - g.errors as i128 * b.total as i128;
        let den = b.errors as i128 * g.total as i128;
        Ok(num as f64 / den as f64)
    }

    pub fn same_split(&self, other: &EvalReport) -> bool {
        self.sentences.len() == other.sentences.len()
            && self.sentences.iter().zip(&other.sentences).all(|(a, b)| a.id == b.id && a.written == b.written)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub id: String,
    /// Written sentence with the offending token in brackets.
    pub context: String,
    pub reference: String,
    pub a: String,
    pub b: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SideBySide {
    pub fixed_by_b: Vec<ComparisonRow>,
    pub broken_by_b: Vec<ComparisonRow>,
    pub both_wrong: Vec<ComparisonRow>,
}

impl SideBySide {
    pub fn is_empty(&self) -> bool {
        self.fixed_by_b.is_empty() && self.broken_by_b.is_empty() && self.both_wrong.is_empty()
    }

    pub fn render(&self, a_name: &str, b_name: &str) -> String {
        let mut out = String::new();
        for (title, rows) in
            [("fixed by B", &self.fixed_by_b), ("broken by B", &self.broken_by_b), ("both wrong", &self.both_wrong)]
        {
            let _ = writeln!(out, "== {title} ({}) ==", rows.len());
            for r in rows.iter() {
                let _ = writeln!(out, "{}\t{}", r.id, r.context);
                let _ = writeln!(out, "  reference  {}", r.reference);
                let _ = writeln!(out, "  {a_name:<10} {}", r.a);
                let _ = writeln!(out, "  {b_name:<10} {}", r.b);
            }
        }
        out
    }
}

fn bracketed(written: &[String], token: Option<usize>) -> String {
    written
        .iter()
        .enumerate()
        .map(|(i, w)| if Some(i) == token { format!("[{w}]") } else { w.clone() })
        .collect::<Vec<_>>()
        .join(" ")
}

fn row(a: &SentenceResult, b: &SentenceResult) -> ComparisonRow {
    let blamed = if b.error { b } else { a };
    ComparisonRow {
        id: a.id.clone(),
        context: bracketed(&a.written, blamed.offending_token),
        reference: blamed.offending_reference.join(" "),
        a: a.predicted.join(" "),
        b: b.predicted.join(" "),
    }
}

/// Sentences where the two runs differ in error status or output.
pub fn side_by_side(a: &EvalReport, b: &EvalReport) -> Result<SideBySide, EvalError> {
    if !a.same_split(b) {
        return Err(EvalError::SplitMismatch(format!("{} vs {} sentences or differing ids", a.total, b.total)));
    }
    let mut out = SideBySide::default();
    for (ra, rb) in a.sentences.iter().zip(&b.sentences) {
        match (ra.error, rb.error) {
            (true, false) => out.fixed_by_b.push(row(ra, rb)),
            (false, true) => out.broken_by_b.push(row(ra, rb)),
            (true, true) if ra.predicted != rb.predicted || ra.failure != rb.failure => out.both_wrong.push(row(ra, rb)),
            _ => {}
        }
    }
    Ok(out)
}
