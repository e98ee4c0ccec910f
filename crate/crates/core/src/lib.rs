//! Symbolic-regression plumbing that does not depend on a neural network:
//! the token vocabulary and postfix expression engine, the synthetic
//! bivariate corpus, constant fitting, and scoring.

pub mod constfit;
pub mod dataset;
pub mod metrics;
pub mod rng;
pub mod rpn;
pub mod vocab;

pub use rpn::{eval_rpn, validate_rpn, EvalError, Program, RpnFailure, RpnValidity};
pub use vocab::{TokenId, TokenKind, TokenSequence, Vocabulary, VocabError, MAX_SEQ_LEN};
