use std::fmt::Write as _;

use serde::Deserialize;

use crate::rpn::{validate_rpn, Program};
use crate::vocab::{TokenId, TokenSequence, Vocabulary};

/// One corpus example.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    /// Skeleton text, e.g. `"C x1 sin *"`.
    pub expr: String,
    pub tokens: TokenSequence,
    /// Generation-time constants in placeholder order (diagnostics only).
    pub constants: Vec<f64>,
    /// `(x1, x2, y)` triples.
    pub points: Vec<[f64; 3]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    expr: String,
    tokens: Vec<TokenId>,
    constants: Vec<f64>,
    points: Vec<Vec<f64>>,
}

fn push_f64(out: &mut String, v: f64) {
    // 17 significant digits round-trip every f64
    write!(out, "{v:.16e}").expect("write to string");
}

impl SampleRecord {
    /// One JSON line (no trailing newline).
    pub fn to_json_line(&self) -> String {
        let mut out = String::with_capacity(64 + self.points.len() * 80);
        out.push_str("{\"expr\":");
        out.push_str(&serde_json::to_string(&self.expr).expect("string serializes"));
        out.push_str(",\"tokens\":[");
        for (i, id) in self.tokens.ids().iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{id}").expect("write to string");
        }
        out.push_str("],\"constants\":[");
        for (i, &c) in self.constants.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            push_f64(&mut out, c);
        }
        out.push_str("],\"points\":[");
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push('[');
            for (j, &v) in p.iter().enumerate() {
                if j > 0 {
                    out.push(',');
                }
                push_f64(&mut out, v);
            }
            out.push(']');
        }
        out.push_str("]}");
        out
    }

    /// Parses a line and checks the shape against `n_points` and `max_len`.
    pub fn from_json_line(line: &str, n_points: usize, max_len: usize, vocab_size: usize) -> Result<Self, String> {
        let raw: RawRecord = serde_json::from_str(line).map_err(|e| e.to_string())?;
        if raw.points.len() != n_points {
            return Err(format!("expected {n_points} points, found {}", raw.points.len()));
        }
        if raw.tokens.len() != max_len {
            return Err(format!("expected {max_len} tokens, found {}", raw.tokens.len()));
        }
        if let Some(id) = raw.tokens.iter().find(|&&id| id as usize >= vocab_size) {
            return Err(format!("token id {id} outside vocabulary of size {vocab_size}"));
        }
        let points = raw
            .points
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                <[f64; 3]>::try_from(p.as_slice()).map_err(|_| format!("point {i} has {} coordinates, expected 3", p.len()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { expr: raw.expr, tokens: TokenSequence::new(raw.tokens), constants: raw.constants, points })
    }
}

/// Re-checks the record invariants: finite y, valid postfix, and the
/// stored constants reproduce every y to 1e-9 relative.
pub fn check_record(record: &SampleRecord, vocab: &Vocabulary) -> Result<(), String> {
    let validity = validate_rpn(&record.tokens, vocab);
    if !validity.valid {
        return Err(format!("tokens fail postfix validation: {:?}", validity.failure));
    }
    if vocab.detokenize(&record.tokens) != record.expr {
        return Err("expr text does not match tokens".into());
    }
    let program = Program::compile(&record.tokens, vocab).map_err(|e| e.to_string())?;
    for (i, p) in record.points.iter().enumerate() {
        if !p.iter().all(|v| v.is_finite()) {
            return Err(format!("point {i} is not finite"));
        }
        let y = program.eval(&p[..2], &record.constants).map_err(|e| format!("point {i}: {e}"))?;
        if (y - p[2]).abs() > 1e-9 * p[2].abs() {
            return Err(format!("point {i}: stored y {} but expression gives {y}", p[2]));
        }
    }
    Ok(())
}
