//! Token vocabulary and fixed-length token sequences.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default maximum sequence length.
pub const MAX_SEQ_LEN: usize = 32;

pub type TokenId = u32;

#[derive(Debug, Error, PartialEq)]
pub enum VocabError {
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("sequence of {len} tokens exceeds maximum length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {size}")]
    IdOutOfRange { id: TokenId, size: usize },
    #[error("invalid vocabulary: {0}")]
    Invalid(String),
    #[error("malformed vocabulary JSON: {0}")]
    Json(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinaryOp {
    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryOp::Add => a + b,
            BinaryOp::Sub => a - b,
            BinaryOp::Mul => a * b,
            BinaryOp::Div => a / b,
            BinaryOp::Pow => a.powf(b),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Pow => "pow",
        }
    }

    fn from_symbol(text: &str) -> Option<Self> {
        Some(match text {
            "+" => BinaryOp::Add,
            "-" => BinaryOp::Sub,
            "*" => BinaryOp::Mul,
            "/" => BinaryOp::Div,
            "pow" => BinaryOp::Pow,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnaryOp {
    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnaryOp::Sin => a.sin(),
            UnaryOp::Cos => a.cos(),
            UnaryOp::Exp => a.exp(),
            UnaryOp::Log => a.ln(),
            UnaryOp::Sqrt => a.sqrt(),
            UnaryOp::Abs => a.abs(),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Sin => "sin",
            UnaryOp::Cos => "cos",
            UnaryOp::Exp => "exp",
            UnaryOp::Log => "log",
            UnaryOp::Sqrt => "sqrt",
            UnaryOp::Abs => "abs",
        }
    }

    fn from_symbol(text: &str) -> Option<Self> {
        Some(match text {
            "sin" => UnaryOp::Sin,
            "cos" => UnaryOp::Cos,
            "exp" => UnaryOp::Exp,
            "log" => UnaryOp::Log,
            "sqrt" => UnaryOp::Sqrt,
            "abs" => UnaryOp::Abs,
            _ => return None,
        })
    }
}

/// What a token means to the stack machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TokenKind {
    /// Input coordinate, zero-based (`x1` is variable 0).
    Variable(usize),
    ConstPlaceholder,
    Binary(BinaryOp),
    Unary(UnaryOp),
    Pad,
}

impl TokenKind {
    pub fn arity(self) -> usize {
        match self {
            TokenKind::Binary(_) => 2,
            TokenKind::Unary(_) => 1,
            TokenKind::Variable(_) | TokenKind::ConstPlaceholder | TokenKind::Pad => 0,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            TokenKind::Variable(_) => "variable",
            TokenKind::ConstPlaceholder => "const-placeholder",
            TokenKind::Binary(_) => "binary-op",
            TokenKind::Unary(_) => "unary-op",
            TokenKind::Pad => "pad",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub text: String,
    pub kind: TokenKind,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TokenRecord {
    id: TokenId,
    text: String,
    kind: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabRecord {
    tokens: Vec<TokenRecord>,
}

/// Ordered token set with contiguous ids `0..K`, exactly one pad and one
/// constant placeholder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<Token>,
    by_text: HashMap<String, TokenId>,
    pad: TokenId,
    placeholder: TokenId,
}

impl Vocabulary {
    /// The bivariate vocabulary used throughout: `PAD x1 x2 C + - * / pow
    /// sin cos exp log sqrt abs`.
    pub fn standard() -> Self {
        let texts = [
            "PAD", "x1", "x2", "C", "+", "-", "*", "/", "pow", "sin", "cos", "exp", "log", "sqrt",
            "abs",
        ];
        Self::from_texts(&texts).expect("standard vocabulary is well formed")
    }

    /// Builds a vocabulary from token texts; ids follow list order.
    pub fn from_texts(texts: &[&str]) -> Result<Self, VocabError> {
        let tokens = texts
            .iter()
            .enumerate()
            .map(|(i, text)| {
                let kind = kind_of(text).ok_or_else(|| VocabError::UnknownToken(text.to_string()))?;
                Ok(Token { id: i as TokenId, text: text.to_string(), kind })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_tokens(tokens)
    }

    fn from_tokens(tokens: Vec<Token>) -> Result<Self, VocabError> {
        let mut by_text = HashMap::new();
        let mut pad = None;
        let mut placeholder = None;
        for (i, tok) in tokens.iter().enumerate() {
            if tok.id as usize != i {
                return Err(VocabError::Invalid(format!("token ids must be contiguous, found {} at {i}", tok.id)));
            }
            if by_text.insert(tok.text.clone(), tok.id).is_some() {
                return Err(VocabError::Invalid(format!("duplicate token {:?}", tok.text)));
            }
            match tok.kind {
                TokenKind::Pad if pad.replace(tok.id).is_some() => {
                    return Err(VocabError::Invalid("more than one pad token".into()))
                }
                TokenKind::ConstPlaceholder if placeholder.replace(tok.id).is_some() => {
                    return Err(VocabError::Invalid("more than one constant placeholder".into()))
                }
                _ => {}
            }
        }
        let pad = pad.ok_or_else(|| VocabError::Invalid("missing pad token".into()))?;
        let placeholder = placeholder.ok_or_else(|| VocabError::Invalid("missing constant placeholder".into()))?;
        Ok(Self { tokens, by_text, pad, placeholder })
    }

    /// Number of token categories K.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn pad(&self) -> TokenId {
        self.pad
    }

    pub fn placeholder(&self) -> TokenId {
        self.placeholder
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn id(&self, text: &str) -> Option<TokenId> {
        self.by_text.get(text).copied()
    }

    pub fn text(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(|t| t.text.as_str())
    }

    pub fn kind(&self, id: TokenId) -> Option<TokenKind> {
        self.tokens.get(id as usize).map(|t| t.kind)
    }

    pub fn arity(&self, id: TokenId) -> Option<usize> {
        self.kind(id).map(TokenKind::arity)
    }

    /// Ids of a given arity, in id order. Pad is excluded.
    pub fn ids_with_arity(&self, arity: usize) -> Vec<TokenId> {
        self.tokens
            .iter()
            .filter(|t| t.kind != TokenKind::Pad && t.kind.arity() == arity)
            .map(|t| t.id)
            .collect()
    }

    /// Canonical JSON text. Datasets and checkpoints compare these bytes.
    pub fn to_json(&self) -> String {
        let record = VocabRecord {
            tokens: self
                .tokens
                .iter()
                .map(|t| TokenRecord { id: t.id, text: t.text.clone(), kind: t.kind.tag().to_string() })
                .collect(),
        };
        serde_json::to_string(&record).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, VocabError> {
        let record: VocabRecord = serde_json::from_str(text).map_err(|e| VocabError::Json(e.to_string()))?;
        let tokens = record
            .tokens
            .into_iter()
            .map(|r| {
                let kind = kind_of(&r.text).ok_or_else(|| VocabError::UnknownToken(r.text.clone()))?;
                if kind.tag() != r.kind {
                    return Err(VocabError::Invalid(format!("token {:?} declared as {:?}, expected {:?}", r.text, r.kind, kind.tag())));
                }
                Ok(Token { id: r.id, text: r.text, kind })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_tokens(tokens)
    }

    /// Parses whitespace-separated token texts into a sequence padded to `max_len`.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenSequence, VocabError> {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.len() > max_len {
            return Err(VocabError::SequenceTooLong { len: words.len(), max: max_len });
        }
        let mut ids = Vec::with_capacity(max_len);
        for w in words {
            ids.push(self.id(w).ok_or_else(|| VocabError::UnknownToken(w.to_string()))?);
        }
        ids.resize(max_len, self.pad);
        Ok(TokenSequence::new(ids))
    }

    /// Space-joined texts of the non-pad prefix.
    pub fn detokenize(&self, seq: &TokenSequence) -> String {
        seq.prefix(self.pad)
            .iter()
            .map(|&id| self.text(id).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn kind_of(text: &str) -> Option<TokenKind> {
    if text == "PAD" {
        return Some(TokenKind::Pad);
    }
    if text == "C" {
        return Some(TokenKind::ConstPlaceholder);
    }
    if let Some(n) = text.strip_prefix('x').and_then(|s| s.parse::<usize>().ok()) {
        return (n >= 1).then_some(TokenKind::Variable(n - 1));
    }
    BinaryOp::from_symbol(text)
        .map(TokenKind::Binary)
        .or_else(|| UnaryOp::from_symbol(text).map(TokenKind::Unary))
}

/// Fixed-length array of token ids. Canonical sequences keep all pads as a
/// trailing suffix.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Self { ids }
    }

    pub fn padded(mut ids: Vec<TokenId>, len: usize, pad: TokenId) -> Self {
        ids.resize(len, pad);
        Self { ids }
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Number of non-pad tokens anywhere in the sequence.
    pub fn active_len(&self, pad: TokenId) -> usize {
        self.ids.iter().filter(|&&id| id != pad).count()
    }

    /// Tokens before the first pad.
    pub fn prefix(&self, pad: TokenId) -> &[TokenId] {
        let end = self.ids.iter().position(|&id| id == pad).unwrap_or(self.ids.len());
        &self.ids[..end]
    }

    pub fn check_range(&self, vocab_size: usize) -> Result<(), VocabError> {
        match self.ids.iter().find(|&&id| id as usize >= vocab_size) {
            Some(&id) => Err(VocabError::IdOutOfRange { id, size: vocab_size }),
            None => Ok(()),
        }
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.ids)
    }
}
