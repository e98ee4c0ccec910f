use crate::rng::PortableRng;
use crate::vocab::{BinaryOp, TokenId, TokenKind, TokenSequence, UnaryOp, Vocabulary};

use super::DatasetConfig;

const P_BINARY: f64 = 0.4;
const P_UNARY: f64 = 0.2;

/// Expression tree with concrete constant values.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Var(usize),
    Const(f64),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

impl Expr {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Var(i) => x[*i],
            Expr::Const(c) => *c,
            Expr::Unary(op, a) => op.apply(a.eval(x)),
            Expr::Binary(op, a, b) => op.apply(a.eval(x), b.eval(x)),
        }
    }

    /// Root-only tree has depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Expr::Var(_) | Expr::Const(_) => 1,
            Expr::Unary(_, a) => 1 + a.depth(),
            Expr::Binary(_, a, b) => 1 + a.depth().max(b.depth()),
        }
    }

    pub fn has_variable(&self) -> bool {
        match self {
            Expr::Var(_) => true,
            Expr::Const(_) => false,
            Expr::Unary(_, a) => a.has_variable(),
            Expr::Binary(_, a, b) => a.has_variable() || b.has_variable(),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Expr::Var(_) | Expr::Const(_) => 1,
            Expr::Unary(_, a) => 1 + a.node_count(),
            Expr::Binary(_, a, b) => 1 + a.node_count() + b.node_count(),
        }
    }

    /// Postfix token ids with constants replaced by the placeholder, plus
    /// the constants in placeholder order.
    pub fn postfix(&self, vocab: &Vocabulary) -> (Vec<TokenId>, Vec<f64>) {
        let mut ids = Vec::new();
        let mut constants = Vec::new();
        self.push_postfix(vocab, &mut ids, &mut constants);
        (ids, constants)
    }

    fn push_postfix(&self, vocab: &Vocabulary, ids: &mut Vec<TokenId>, constants: &mut Vec<f64>) {
        match self {
            Expr::Var(i) => ids.push(vocab.id(&format!("x{}", i + 1)).expect("variable in vocabulary")),
            Expr::Const(c) => {
                ids.push(vocab.placeholder());
                constants.push(*c);
            }
            Expr::Unary(op, a) => {
                a.push_postfix(vocab, ids, constants);
                ids.push(vocab.id(op.symbol()).expect("operator in vocabulary"));
            }
            Expr::Binary(op, a, b) => {
                a.push_postfix(vocab, ids, constants);
                b.push_postfix(vocab, ids, constants);
                ids.push(vocab.id(op.symbol()).expect("operator in vocabulary"));
            }
        }
    }
}

/// A drawn expression: the tree, its padded skeleton and its constants.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledExpression {
    pub tree: Expr,
    pub skeleton: TokenSequence,
    pub constants: Vec<f64>,
}

struct Alphabet {
    leaves: Vec<TokenKind>,
    unary: Vec<UnaryOp>,
    binary: Vec<BinaryOp>,
}

impl Alphabet {
    fn new(vocab: &Vocabulary) -> Self {
        let mut leaves = Vec::new();
        let mut unary = Vec::new();
        let mut binary = Vec::new();
        for tok in vocab.tokens() {
            match tok.kind {
                TokenKind::Variable(_) | TokenKind::ConstPlaceholder => leaves.push(tok.kind),
                TokenKind::Unary(op) => unary.push(op),
                TokenKind::Binary(op) => binary.push(op),
                TokenKind::Pad => {}
            }
        }
        Self { leaves, unary, binary }
    }
}

fn pick<T: Copy>(rng: &mut PortableRng, items: &[T]) -> T {
    items[rng.below(items.len() as u64) as usize]
}

fn grow(rng: &mut PortableRng, alphabet: &Alphabet, config: &DatasetConfig, depth: usize) -> Expr {
    let u = if depth >= config.max_depth { 1.0 } else { rng.next_f64() };
    if u < P_BINARY && !alphabet.binary.is_empty() {
        let op = pick(rng, &alphabet.binary);
        let a = grow(rng, alphabet, config, depth + 1);
        let b = grow(rng, alphabet, config, depth + 1);
        Expr::Binary(op, Box::new(a), Box::new(b))
    } else if u < P_BINARY + P_UNARY && !alphabet.unary.is_empty() {
        let op = pick(rng, &alphabet.unary);
        Expr::Unary(op, Box::new(grow(rng, alphabet, config, depth + 1)))
    } else {
        match pick(rng, &alphabet.leaves) {
            TokenKind::Variable(i) => Expr::Var(i),
            _ => Expr::Const(rng.uniform(config.const_range.0, config.const_range.1)),
        }
    }
}

/// Grows a random tree of depth at most `max_depth`, rejecting draws without
/// a variable or whose postfix form exceeds `max_len`.
pub fn sample_expression(rng: &mut PortableRng, config: &DatasetConfig, vocab: &Vocabulary) -> SampledExpression {
    let alphabet = Alphabet::new(vocab);
    loop {
        let tree = grow(rng, &alphabet, config, 1);
        if !tree.has_variable() {
            continue;
        }
        let (ids, constants) = tree.postfix(vocab);
        if ids.len() > config.max_len {
            continue;
        }
        let skeleton = TokenSequence::padded(ids, config.max_len, vocab.pad());
        return SampledExpression { tree, skeleton, constants };
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rpn::{eval_rpn, validate_rpn};

    #[test]
    fn depth_one_yields_a_variable() {
        let vocab = Vocabulary::standard();
        let config = DatasetConfig { max_depth: 1, ..DatasetConfig::default() };
        let mut rng = PortableRng::new(0, 0);
        for _ in 0..200 {
            let s = sample_expression(&mut rng, &config, &vocab);
            assert!(matches!(s.tree, Expr::Var(_)));
            assert!(s.constants.is_empty());
            let text = vocab.detokenize(&s.skeleton);
            assert!(text == "x1" || text == "x2");
        }
    }

    #[test]
    fn ten_thousand_draws_respect_bounds() {
        let vocab = Vocabulary::standard();
        let config = DatasetConfig::default();
        let mut rng = PortableRng::new(11, 0);
        let mut total_len = 0;
        for _ in 0..10_000 {
            let s = sample_expression(&mut rng, &config, &vocab);
            assert!(s.tree.depth() <= config.max_depth);
            assert!(s.tree.has_variable());
            let len = s.skeleton.active_len(vocab.pad());
            assert!(len <= config.max_len);
            assert_eq!(len, s.tree.node_count());
            assert!(validate_rpn(&s.skeleton, &vocab).valid);
            total_len += len;
        }
        assert!(total_len as f64 / 10_000.0 < config.max_len as f64 / 2.0);
    }

    #[test]
    fn skeleton_evaluates_like_the_tree() {
        let vocab = Vocabulary::standard();
        let config = DatasetConfig::default();
        let mut rng = PortableRng::new(5, 0);
        for _ in 0..500 {
            let s = sample_expression(&mut rng, &config, &vocab);
            let x = [rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0)];
            let direct = s.tree.eval(&x);
            match eval_rpn(&s.skeleton, &vocab, &x, &s.constants) {
                Ok(y) => assert_eq!(y.to_bits(), direct.to_bits()),
                Err(_) => assert!(!direct.is_finite()),
            }
        }
    }
}
