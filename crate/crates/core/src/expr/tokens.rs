//! Prefix (Polish) token sequences in two dialects.
//!
//! The manual-order dialect serializes a tree exactly as stored and writes
//! field derivatives as shorthand leaves (`u_t`, `u_xx`). The canonical
//! dialect serializes the canonical form of the tree, writes the field as the
//! single token `u(x,t)`, and writes derivatives with the bracket pattern
//! `∂ ( u(x,t) , x )` / `∂ ( u(x,t) , ( x , 3 ) )`.

use std::fmt;

use thiserror::Error;

use super::{BinOp, DerivVar, Equation, Expr, UnaryFn};
use crate::canon::{canonicalize, CanonError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dialect {
    #[serde(alias = "manual_order")]
    Manual,
    Canonical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shorthand {
    Ut,
    Ux,
    Uxx,
    Uxxx,
}

impl Shorthand {
    pub fn text(self) -> &'static str {
        match self {
            Shorthand::Ut => "u_t",
            Shorthand::Ux => "u_x",
            Shorthand::Uxx => "u_xx",
            Shorthand::Uxxx => "u_xxx",
        }
    }

    pub fn derivative(self) -> (DerivVar, u32) {
        match self {
            Shorthand::Ut => (DerivVar::T, 1),
            Shorthand::Ux => (DerivVar::X, 1),
            Shorthand::Uxx => (DerivVar::X, 2),
            Shorthand::Uxxx => (DerivVar::X, 3),
        }
    }

    fn from_derivative(var: DerivVar, order: u32) -> Option<Shorthand> {
        match (var, order) {
            (DerivVar::T, 1) => Some(Shorthand::Ut),
            (DerivVar::X, 1) => Some(Shorthand::Ux),
            (DerivVar::X, 2) => Some(Shorthand::Uxx),
            (DerivVar::X, 3) => Some(Shorthand::Uxxx),
            _ => None,
        }
    }
}

/// One vocabulary entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Sin,
    Cos,
    Neg,
    Partial,
    LParen,
    RParen,
    Comma,
    Field,
    Shorthand(Shorthand),
    Var(String),
    Int(i64),
    Float(f64),
    Placeholder,
}

impl Token {
    /// Text of the token as emitted in `dialect`.
    pub fn text(&self, dialect: Dialect) -> String {
        match self {
            Token::Add => "+".into(),
            Token::Sub => "−".into(),
            Token::Mul => "×".into(),
            Token::Div => "÷".into(),
            Token::Pow => "pow".into(),
            Token::Sin => "sin".into(),
            Token::Cos => "cos".into(),
            Token::Neg => "neg".into(),
            Token::Partial => "∂".into(),
            Token::LParen => "(".into(),
            Token::RParen => ")".into(),
            Token::Comma => ",".into(),
            Token::Field => match dialect {
                Dialect::Manual => "u".into(),
                Dialect::Canonical => "u(x,t)".into(),
            },
            Token::Shorthand(s) => s.text().into(),
            Token::Var(name) => name.clone(),
            Token::Int(i) => i.to_string(),
            Token::Float(v) => match dialect {
                Dialect::Manual => format!("{v:?}"),
                Dialect::Canonical => format_sig3(*v),
            },
            Token::Placeholder => "[?]".into(),
        }
    }

    /// Look up a vocabulary entry. ASCII aliases `-`, `*`, `/` are accepted
    /// for the operator glyphs.
    pub fn parse(s: &str) -> Result<Token, DecodeError> {
        let tok = match s {
            "+" => Token::Add,
            "−" | "-" => Token::Sub,
            "×" | "*" => Token::Mul,
            "÷" | "/" => Token::Div,
            "pow" => Token::Pow,
            "sin" => Token::Sin,
            "cos" => Token::Cos,
            "neg" => Token::Neg,
            "∂" => Token::Partial,
            "(" => Token::LParen,
            ")" => Token::RParen,
            "," => Token::Comma,
            "u" | "u(x,t)" => Token::Field,
            "u_t" => Token::Shorthand(Shorthand::Ut),
            "u_x" => Token::Shorthand(Shorthand::Ux),
            "u_xx" => Token::Shorthand(Shorthand::Uxx),
            "u_xxx" => Token::Shorthand(Shorthand::Uxxx),
            "[?]" => Token::Placeholder,
            _ => return Self::parse_atom(s),
        };
        Ok(tok)
    }

    fn parse_atom(s: &str) -> Result<Token, DecodeError> {
        let oov = || DecodeError::OutOfVocabulary(s.to_string());
        let digits = s.strip_prefix('-').unwrap_or(s);
        if !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit()) {
            return s.parse().map(Token::Int).map_err(|_| oov());
        }
        if digits.starts_with(|c: char| c.is_ascii_digit()) {
            return match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(Token::Float(v)),
                _ => Err(oov()),
            };
        }
        let mut chars = s.chars();
        let first = chars.next().ok_or_else(oov)?;
        let rest = chars.as_str();
        let generic = first.is_ascii_lowercase()
            && first != 'u'
            && (rest.is_empty()
                || (rest.len() > 1
                    && rest.starts_with('_')
                    && rest[1..].bytes().all(|b| b.is_ascii_digit())));
        if generic {
            Ok(Token::Var(s.to_string()))
        } else {
            Err(oov())
        }
    }
}

/// A token sequence tagged with the dialect that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSeq {
    pub dialect: Dialect,
    pub tokens: Vec<Token>,
}

impl TokenSeq {
    pub fn to_strings(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.text(self.dialect)).collect()
    }

    pub fn from_strings<S: AsRef<str>>(
        dialect: Dialect,
        items: impl IntoIterator<Item = S>,
    ) -> Result<TokenSeq, DecodeError> {
        let tokens = items
            .into_iter()
            .map(|s| Token::parse(s.as_ref()))
            .collect::<Result<_, _>>()?;
        Ok(TokenSeq { dialect, tokens })
    }

    /// Split on whitespace and look up each entry.
    pub fn parse(dialect: Dialect, text: &str) -> Result<TokenSeq, DecodeError> {
        Self::from_strings(dialect, text.split_whitespace())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl fmt::Display for TokenSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_strings().join(" "))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TokenError {
    #[error("node `{0}` has no token form in this dialect")]
    UnsupportedNode(String),
    #[error(transparent)]
    Canon(#[from] CanonError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("token sequence ended early")]
    Truncated,
    #[error("{0} unused token(s) after a complete expression")]
    Trailing(usize),
    #[error("unexpected token `{token}` at position {position}")]
    Unexpected { position: usize, token: String },
    #[error("token `{token}` at position {position} is not allowed in the {dialect:?} dialect")]
    WrongDialect {
        position: usize,
        token: String,
        dialect: Dialect,
    },
}

/// Round to three significant digits.
pub fn quantize_sig3(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.2e}").parse().unwrap_or(v)
}

/// Three-significant-digit text: positional for magnitudes in
/// `[0.001, 100)`, otherwise scientific (`1.23e-4`, `4.56e2`).
pub fn format_sig3(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.2}");
    }
    let sci = format!("{v:.2e}");
    let exp: i32 = sci
        .split_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .unwrap_or(0);
    if (-3..=1).contains(&exp) {
        let q: f64 = sci.parse().unwrap_or(v);
        format!("{:.*}", (2 - exp) as usize, q)
    } else {
        sci
    }
}

/// Whether `s` is a float literal with exactly three significant digits.
pub fn is_sig3(s: &str) -> bool {
    let body = s.strip_prefix('-').unwrap_or(s);
    if let Some((mant, exp)) = body.split_once('e') {
        let exp_ok = {
            let e = exp.strip_prefix('-').unwrap_or(exp);
            !e.is_empty() && e.bytes().all(|b| b.is_ascii_digit())
        };
        let m = mant.as_bytes();
        return exp_ok
            && m.len() == 4
            && (b'1'..=b'9').contains(&m[0])
            && m[1] == b'.'
            && m[2].is_ascii_digit()
            && m[3].is_ascii_digit();
    }
    if body.matches('.').count() != 1 || body.starts_with('.') || body.ends_with('.') {
        return false;
    }
    if !body.bytes().all(|b| b.is_ascii_digit() || b == b'.') {
        return false;
    }
    let digits: String = body.chars().filter(|c| *c != '.').collect();
    let significant = digits.trim_start_matches('0');
    significant.len() == 3 && !body.starts_with("00")
}

fn binop_token(op: BinOp) -> Token {
    match op {
        BinOp::Add => Token::Add,
        BinOp::Sub => Token::Sub,
        BinOp::Mul => Token::Mul,
        BinOp::Div => Token::Div,
        BinOp::Pow => Token::Pow,
    }
}

fn unary_token(f: UnaryFn) -> Token {
    match f {
        UnaryFn::Sin => Token::Sin,
        UnaryFn::Cos => Token::Cos,
        UnaryFn::Neg => Token::Neg,
    }
}

fn is_field_derivative(e: &Expr) -> bool {
    match e {
        Expr::Field => true,
        Expr::Deriv { child, .. } => is_field_derivative(child),
        _ => false,
    }
}

fn emit(e: &Expr, dialect: Dialect, out: &mut Vec<Token>) -> Result<(), TokenError> {
    match e {
        Expr::Const(c) => out.push(Token::Float(match dialect {
            Dialect::Manual => *c,
            Dialect::Canonical => quantize_sig3(*c),
        })),
        Expr::Int(i) => out.push(Token::Int(*i)),
        Expr::Var(name) => out.push(Token::Var(name.clone())),
        Expr::Field => out.push(Token::Field),
        Expr::Placeholder => out.push(Token::Placeholder),
        Expr::Unary(f, a) => {
            out.push(unary_token(*f));
            emit(a, dialect, out)?;
        }
        Expr::Binary(op, a, b) => {
            out.push(binop_token(*op));
            emit(a, dialect, out)?;
            emit(b, dialect, out)?;
        }
        Expr::Deriv { child, var, order } => {
            // canonical forms keep mixed partials as nested derivatives of the field
            let supported = match dialect {
                Dialect::Manual => matches!(**child, Expr::Field),
                Dialect::Canonical => is_field_derivative(child),
            };
            if !supported {
                return Err(TokenError::UnsupportedNode(e.to_string()));
            }
            match dialect {
                Dialect::Manual => {
                    let s = Shorthand::from_derivative(*var, *order)
                        .ok_or_else(|| TokenError::UnsupportedNode(e.to_string()))?;
                    out.push(Token::Shorthand(s));
                }
                Dialect::Canonical => {
                    out.extend([Token::Partial, Token::LParen]);
                    emit(child, dialect, out)?;
                    out.push(Token::Comma);
                    let v = Token::Var(var.name().into());
                    if *order == 1 {
                        out.push(v);
                    } else {
                        out.extend([
                            Token::LParen,
                            v,
                            Token::Comma,
                            Token::Int(*order as i64),
                            Token::RParen,
                        ]);
                    }
                    out.push(Token::RParen);
                }
            }
        }
    }
    Ok(())
}

/// Prefix traversal of the tree exactly as stored.
pub fn to_manual_tokens(eq: &Equation) -> Result<TokenSeq, TokenError> {
    let mut tokens = Vec::new();
    emit(&eq.residual, Dialect::Manual, &mut tokens)?;
    Ok(TokenSeq {
        dialect: Dialect::Manual,
        tokens,
    })
}

/// Prefix traversal of the canonical form; floats carry three significant digits.
pub fn to_canonical_tokens(eq: &Equation) -> Result<TokenSeq, TokenError> {
    let mut canon = canonicalize(&eq.residual)?;
    // quantizing can turn a coefficient integral or make two terms equal, so
    // normalize again until the quantized tree is stable
    for _ in 0..4 {
        let next = canonicalize(&canon.map_consts(&mut quantize_sig3))?;
        if next == canon {
            break;
        }
        canon = next;
    }
    let mut tokens = Vec::new();
    emit(&canon, Dialect::Canonical, &mut tokens)?;
    Ok(TokenSeq {
        dialect: Dialect::Canonical,
        tokens,
    })
}

struct Decoder<'a> {
    seq: &'a TokenSeq,
    pos: usize,
}

impl Decoder<'_> {
    fn next(&mut self) -> Result<(usize, &Token), DecodeError> {
        let tok = self
            .seq
            .tokens
            .get(self.pos)
            .ok_or(DecodeError::Truncated)?;
        self.pos += 1;
        Ok((self.pos - 1, tok))
    }

    fn unexpected(&self, position: usize) -> DecodeError {
        DecodeError::Unexpected {
            position,
            token: self.seq.tokens[position].text(self.seq.dialect),
        }
    }

    fn expect(&mut self, want: &Token) -> Result<(), DecodeError> {
        let (p, tok) = self.next()?;
        if tok == want {
            Ok(())
        } else {
            Err(self.unexpected(p))
        }
    }

    fn deriv_var(&mut self) -> Result<DerivVar, DecodeError> {
        let (p, tok) = self.next()?;
        match tok {
            Token::Var(v) if v == "x" => Ok(DerivVar::X),
            Token::Var(v) if v == "t" => Ok(DerivVar::T),
            _ => Err(self.unexpected(p)),
        }
    }

    fn expr(&mut self) -> Result<Expr, DecodeError> {
        let dialect = self.seq.dialect;
        let (p, tok) = self.next()?;
        let wrong = |tok: &Token| DecodeError::WrongDialect {
            position: p,
            token: tok.text(dialect),
            dialect,
        };
        Ok(match tok.clone() {
            Token::Add => self.binary(BinOp::Add)?,
            Token::Sub => self.binary(BinOp::Sub)?,
            Token::Mul => self.binary(BinOp::Mul)?,
            Token::Div => self.binary(BinOp::Div)?,
            Token::Pow => self.binary(BinOp::Pow)?,
            Token::Sin => Expr::sin(self.expr()?),
            Token::Cos => Expr::cos(self.expr()?),
            Token::Neg => Expr::neg(self.expr()?),
            Token::Field => Expr::Field,
            Token::Placeholder => Expr::Placeholder,
            Token::Var(name) => Expr::Var(name),
            Token::Int(i) => Expr::Int(i),
            Token::Float(v) => Expr::Const(v),
            Token::Shorthand(s) => {
                if dialect != Dialect::Manual {
                    return Err(wrong(tok));
                }
                let (var, order) = s.derivative();
                Expr::field_deriv(var, order)
            }
            Token::Partial => {
                if dialect != Dialect::Canonical {
                    return Err(wrong(tok));
                }
                self.expect(&Token::LParen)?;
                let child = self.expr()?;
                self.expect(&Token::Comma)?;
                let (var, order) = if self.seq.tokens.get(self.pos) == Some(&Token::LParen) {
                    self.pos += 1;
                    let var = self.deriv_var()?;
                    self.expect(&Token::Comma)?;
                    let (q, n) = self.next()?;
                    let order = match n {
                        Token::Int(n) if *n >= 1 && *n <= u32::MAX as i64 => *n as u32,
                        _ => return Err(self.unexpected(q)),
                    };
                    self.expect(&Token::RParen)?;
                    (var, order)
                } else {
                    (self.deriv_var()?, 1)
                };
                self.expect(&Token::RParen)?;
                Expr::deriv(child, var, order)
            }
            Token::LParen | Token::RParen | Token::Comma => {
                if dialect == Dialect::Manual {
                    return Err(wrong(tok));
                }
                return Err(self.unexpected(p));
            }
        })
    }

    fn binary(&mut self, op: BinOp) -> Result<Expr, DecodeError> {
        let a = self.expr()?;
        let b = self.expr()?;
        Ok(Expr::binary(op, a, b))
    }
}

/// Decode a prefix sequence produced by either serializer.
pub fn from_tokens(seq: &TokenSeq) -> Result<Equation, DecodeError> {
    let mut d = Decoder { seq, pos: 0 };
    let residual = d.expr()?;
    if d.pos != seq.tokens.len() {
        return Err(DecodeError::Trailing(seq.tokens.len() - d.pos));
    }
    Ok(Equation::new(residual))
}
