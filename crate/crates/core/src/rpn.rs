//! Postfix stack machine: validity check and evaluation.

use thiserror::Error;

use crate::vocab::{BinaryOp, TokenKind, TokenSequence, UnaryOp, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RpnFailure {
    /// An operator at this position found too few operands.
    Underflow { position: usize },
    /// The stack did not end with exactly one value.
    NonUnitFinalStack { depth: usize },
    /// A non-pad token at this position follows a pad.
    PadInterleaved { position: usize },
    /// Token id outside the vocabulary.
    UnknownId { position: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RpnValidity {
    pub valid: bool,
    pub failure: Option<RpnFailure>,
}

impl RpnValidity {
    fn ok() -> Self {
        Self { valid: true, failure: None }
    }

    fn fail(failure: RpnFailure) -> Self {
        Self { valid: false, failure: Some(failure) }
    }
}

/// Simulates the operand stack over the sequence. Valid iff no underflow,
/// the final depth is exactly one, and nothing but pads follows the first pad.
pub fn validate_rpn(seq: &TokenSequence, vocab: &Vocabulary) -> RpnValidity {
    let mut depth = 0usize;
    let mut seen_pad = false;
    for (position, &id) in seq.ids().iter().enumerate() {
        let Some(kind) = vocab.kind(id) else {
            return RpnValidity::fail(RpnFailure::UnknownId { position });
        };
        if kind == TokenKind::Pad {
            seen_pad = true;
            continue;
        }
        if seen_pad {
            return RpnValidity::fail(RpnFailure::PadInterleaved { position });
        }
        match kind.arity() {
            0 => depth += 1,
            1 if depth >= 1 => {}
            2 if depth >= 2 => depth -= 1,
            _ => return RpnValidity::fail(RpnFailure::Underflow { position }),
        }
    }
    if depth == 1 {
        RpnValidity::ok()
    } else {
        RpnValidity::fail(RpnFailure::NonUnitFinalStack { depth })
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("invalid postfix expression: {0:?}")]
    Invalid(RpnFailure),
    #[error("expected {expected} constants, got {got}")]
    ConstantCountMismatch { expected: usize, got: usize },
    #[error("variable x{} not present in input of dimension {dim}", .index + 1)]
    MissingVariable { index: usize, dim: usize },
    #[error("evaluation produced a non-finite value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Instr {
    Var(usize),
    Const(usize),
    Unary(UnaryOp),
    Binary(BinaryOp),
}

/// A validated skeleton compiled for repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    instrs: Vec<Instr>,
    n_constants: usize,
    max_depth: usize,
}

impl Program {
    pub fn compile(seq: &TokenSequence, vocab: &Vocabulary) -> Result<Self, EvalError> {
        let validity = validate_rpn(seq, vocab);
        if let Some(failure) = validity.failure {
            return Err(EvalError::Invalid(failure));
        }
        let mut instrs = Vec::new();
        let mut n_constants = 0;
        let (mut depth, mut max_depth) = (0usize, 0usize);
        for &id in seq.prefix(vocab.pad()) {
            let instr = match vocab.kind(id).expect("validated") {
                TokenKind::Variable(i) => Instr::Var(i),
                TokenKind::ConstPlaceholder => {
                    n_constants += 1;
                    Instr::Const(n_constants - 1)
                }
                TokenKind::Unary(op) => Instr::Unary(op),
                TokenKind::Binary(op) => Instr::Binary(op),
                TokenKind::Pad => unreachable!("prefix excludes pads"),
            };
            match instr {
                Instr::Var(_) | Instr::Const(_) => depth += 1,
                Instr::Binary(_) => depth -= 1,
                Instr::Unary(_) => {}
            }
            max_depth = max_depth.max(depth);
            instrs.push(instr);
        }
        Ok(Self { instrs, n_constants, max_depth })
    }

    pub fn n_constants(&self) -> usize {
        self.n_constants
    }

    /// Highest variable index referenced plus one.
    pub fn n_variables(&self) -> usize {
        self.instrs
            .iter()
            .filter_map(|i| match i {
                Instr::Var(v) => Some(v + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    /// Evaluates at one point; the result may be non-finite.
    pub fn eval_raw(&self, x: &[f64], constants: &[f64]) -> f64 {
        let mut stack = [0.0f64; 64];
        let mut heap;
        let stack: &mut [f64] = if self.max_depth <= stack.len() {
            &mut stack
        } else {
            heap = vec![0.0; self.max_depth];
            &mut heap
        };
        let mut top = 0usize;
        for instr in &self.instrs {
            match *instr {
                Instr::Var(i) => {
                    stack[top] = x[i];
                    top += 1;
                }
                Instr::Const(i) => {
                    stack[top] = constants[i];
                    top += 1;
                }
                Instr::Unary(op) => stack[top - 1] = op.apply(stack[top - 1]),
                Instr::Binary(op) => {
                    top -= 1;
                    stack[top - 1] = op.apply(stack[top - 1], stack[top]);
                }
            }
        }
        stack[0]
    }

    pub fn eval(&self, x: &[f64], constants: &[f64]) -> Result<f64, EvalError> {
        if constants.len() != self.n_constants {
            return Err(EvalError::ConstantCountMismatch { expected: self.n_constants, got: constants.len() });
        }
        if self.n_variables() > x.len() {
            return Err(EvalError::MissingVariable { index: self.n_variables() - 1, dim: x.len() });
        }
        let y = self.eval_raw(x, constants);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(EvalError::NonFinite)
        }
    }
}

/// Evaluates a postfix skeleton at `x`, substituting `constants` for the
/// placeholders in left-to-right order.
pub fn eval_rpn(seq: &TokenSequence, vocab: &Vocabulary, x: &[f64], constants: &[f64]) -> Result<f64, EvalError> {
    Program::compile(seq, vocab)?.eval(x, constants)
}

/// Number of constant placeholders in the non-pad prefix.
pub fn count_placeholders(seq: &TokenSequence, vocab: &Vocabulary) -> usize {
    seq.prefix(vocab.pad()).iter().filter(|&&id| id == vocab.placeholder()).count()
}

/// Postfix text with placeholders replaced by the given values; surplus
/// placeholders stay as `C`.
pub fn render_with_constants(seq: &TokenSequence, vocab: &Vocabulary, constants: &[f64]) -> String {
    let mut next = constants.iter();
    seq.prefix(vocab.pad())
        .iter()
        .map(|&id| {
            if id == vocab.placeholder() {
                if let Some(c) = next.next() {
                    return format!("{c}");
                }
            }
            vocab.text(id).unwrap_or("<?>").to_string()
        })
        .collect::<Vec<_>>()
        .join(" ")
}
