//! Recursive-descent parser for infix equations.
//!
//! ```text
//! equation := expr ("=" expr)?
//! expr     := term (("+" | "-") term)*
//! term     := unary (("*" | "/") unary)*
//! unary    := "-" unary | power
//! power    := postfix ("^" ["-"] int)?
//! postfix  := "(" expr ")" ("_" ("t" | "x" | "xx" | "xxx"))? | base
//! base     := number | ident | "[?]" | ("sin" | "cos") "(" expr ")"
//! ```
//!
//! A run of `*` nests to the right (`a*b*c` is `a*(b*c)`); a run that
//! contains `/` nests to the left.

use thiserror::Error;

use super::{DerivVar, Equation, Expr};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("unknown symbol `{name}` at byte {offset}")]
    UnknownSymbol { offset: usize, name: String },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Number(String),
    Ident(String),
    Placeholder,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Equals,
    /// `_x`, `_xx`, `_t` following a closing parenthesis.
    Suffix(String),
}

struct Lexed {
    tok: Tok,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Lexed>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        let start = i;
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            '^' => Some(Tok::Caret),
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '=' => Some(Tok::Equals),
            _ => None,
        };
        if let Some(tok) = simple {
            i += 1;
            out.push(Lexed { tok, offset: start });
            if c == ')' && i < bytes.len() && bytes[i] == b'_' {
                i += 1;
                let s = i;
                while i < bytes.len() && bytes[i].is_ascii_alphabetic() {
                    i += 1;
                }
                out.push(Lexed {
                    tok: Tok::Suffix(src[s..i].to_string()),
                    offset: s - 1,
                });
            }
            continue;
        }
        if src[i..].starts_with("[?]") {
            i += 3;
            out.push(Lexed {
                tok: Tok::Placeholder,
                offset: start,
            });
            continue;
        }
        if c.is_ascii_digit() || c == '.' {
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            // exponent part, only when followed by a digit (optionally signed)
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    i = j;
                }
            }
            out.push(Lexed {
                tok: Tok::Number(src[start..i].to_string()),
                offset: start,
            });
            continue;
        }
        if c.is_ascii_alphabetic() {
            let mut name = String::new();
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                name.push(bytes[i] as char);
                i += 1;
                // `u_{xx}` and `q_{1}` brace forms
                if name.ends_with('_') && i < bytes.len() && bytes[i] == b'{' {
                    let close = src[i..].find('}').ok_or_else(|| ParseError::Syntax {
                        offset: i,
                        message: "unclosed `{` in subscript".into(),
                    })?;
                    name.push_str(&src[i + 1..i + close]);
                    i += close + 1;
                }
            }
            out.push(Lexed {
                tok: Tok::Ident(name),
                offset: start,
            });
            continue;
        }
        return Err(ParseError::Syntax {
            offset: start,
            message: format!(
                "unexpected character `{}`",
                src[start..].chars().next().unwrap_or(c)
            ),
        });
    }
    Ok(out)
}

fn derivative_suffix(s: &str) -> Option<(DerivVar, u32)> {
    match s {
        "t" => Some((DerivVar::T, 1)),
        "x" => Some((DerivVar::X, 1)),
        "xx" => Some((DerivVar::X, 2)),
        "xxx" => Some((DerivVar::X, 3)),
        _ => None,
    }
}

fn is_generic_var(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    if !first.is_ascii_lowercase() || first == 'u' {
        return false;
    }
    let rest: &str = chars.as_str();
    rest.is_empty()
        || (rest.len() > 1
            && rest.starts_with('_')
            && rest[1..].bytes().all(|b| b.is_ascii_digit()))
}

struct Parser<'a> {
    toks: &'a [Lexed],
    pos: usize,
    end: usize,
    implicit_mul: bool,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|l| &l.tok)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |l| l.offset)
    }

    fn syntax<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError::Syntax {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expect(&mut self, tok: Tok, what: &str) -> Result<(), ParseError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.syntax(format!("expected {what}"))
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.term()?;
        loop {
            match self.peek() {
                Some(Tok::Plus) => {
                    self.pos += 1;
                    acc = Expr::add(acc, self.term()?);
                }
                Some(Tok::Minus) => {
                    self.pos += 1;
                    acc = Expr::sub(acc, self.term()?);
                }
                _ => return Ok(acc),
            }
        }
    }

    fn starts_operand(&self) -> bool {
        matches!(
            self.peek(),
            Some(Tok::Number(_) | Tok::Ident(_) | Tok::Placeholder | Tok::LParen)
        )
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let first = self.unary()?;
        let mut rest: Vec<(bool, Expr)> = Vec::new();
        loop {
            let is_div = match self.peek() {
                Some(Tok::Star) => false,
                Some(Tok::Slash) => true,
                _ if self.implicit_mul && self.starts_operand() => {
                    rest.push((false, self.unary()?));
                    continue;
                }
                _ => break,
            };
            self.pos += 1;
            rest.push((is_div, self.unary()?));
        }
        if rest.iter().any(|(d, _)| *d) {
            Ok(rest.into_iter().fold(first, |acc, (d, e)| {
                if d {
                    Expr::div(acc, e)
                } else {
                    Expr::mul(acc, e)
                }
            }))
        } else {
            let mut factors: Vec<Expr> = std::iter::once(first)
                .chain(rest.into_iter().map(|(_, e)| e))
                .collect();
            let mut acc = factors.pop().expect("at least one factor");
            while let Some(f) = factors.pop() {
                acc = Expr::mul(f, acc);
            }
            Ok(acc)
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            if let Some(Tok::Number(text)) = self.peek().cloned() {
                // `-2.5` is a negative literal unless an exponent follows
                if self.toks.get(self.pos + 1).map(|l| &l.tok) != Some(&Tok::Caret) {
                    self.pos += 1;
                    return self.number(&format!("-{text}"));
                }
            }
            return Ok(Expr::neg(self.unary()?));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.postfix()?;
        if self.peek() != Some(&Tok::Caret) {
            return Ok(base);
        }
        self.pos += 1;
        let negative = if self.peek() == Some(&Tok::Minus) {
            self.pos += 1;
            true
        } else {
            false
        };
        match self.peek().cloned() {
            Some(Tok::Number(text)) if text.bytes().all(|b| b.is_ascii_digit()) => {
                let n: i64 = text.parse().map_err(|_| ParseError::Syntax {
                    offset: self.offset(),
                    message: "exponent out of range".into(),
                })?;
                self.pos += 1;
                Ok(Expr::pow(base, if negative { -n } else { n }))
            }
            _ => self.syntax("exponent must be an integer literal"),
        }
    }

    fn postfix(&mut self) -> Result<Expr, ParseError> {
        if self.peek() != Some(&Tok::LParen) {
            return self.base();
        }
        self.pos += 1;
        let inner = self.expr()?;
        self.expect(Tok::RParen, "`)`")?;
        if let Some(Tok::Suffix(s)) = self.peek().cloned() {
            let Some((var, order)) = derivative_suffix(&s) else {
                return Err(ParseError::UnknownSymbol {
                    offset: self.offset(),
                    name: format!("_{s}"),
                });
            };
            self.pos += 1;
            return Ok(Expr::deriv(inner, var, order));
        }
        Ok(inner)
    }

    fn number(&self, text: &str) -> Result<Expr, ParseError> {
        let bad = || ParseError::Syntax {
            offset: self.toks[self.pos - 1].offset,
            message: format!("malformed number `{text}`"),
        };
        if text.contains(['.', 'e', 'E']) {
            text.parse::<f64>().map(Expr::Const).map_err(|_| bad())
        } else {
            text.parse::<i64>().map(Expr::Int).map_err(|_| bad())
        }
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let offset = self.offset();
        let Some(tok) = self.peek().cloned() else {
            return self.syntax("unexpected end of input");
        };
        self.pos += 1;
        match tok {
            Tok::Number(text) => self.number(&text),
            Tok::Placeholder => Ok(Expr::Placeholder),
            Tok::Ident(name) => match name.as_str() {
                "u" => Ok(Expr::Field),
                "sin" | "cos" => {
                    self.expect(Tok::LParen, "`(` after function name")?;
                    let arg = self.expr()?;
                    self.expect(Tok::RParen, "`)`")?;
                    Ok(if name == "sin" {
                        Expr::sin(arg)
                    } else {
                        Expr::cos(arg)
                    })
                }
                n if n.starts_with("u_") => match derivative_suffix(&n[2..]) {
                    Some((var, order)) => Ok(Expr::field_deriv(var, order)),
                    None => Err(ParseError::UnknownSymbol { offset, name }),
                },
                n if is_generic_var(n) => Ok(Expr::Var(name)),
                _ => Err(ParseError::UnknownSymbol { offset, name }),
            },
            _ => {
                self.pos -= 1;
                self.syntax("expected an operand")
            }
        }
    }
}

fn parse_with(src: &str, implicit_mul: bool) -> Result<Equation, ParseError> {
    let toks = lex(src)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        end: src.len(),
        implicit_mul,
    };
    let lhs = p.expr()?;
    let residual = if p.peek() == Some(&Tok::Equals) {
        p.pos += 1;
        let rhs = p.expr()?;
        if rhs.is_zero_constant() {
            lhs
        } else {
            Expr::sub(lhs, rhs)
        }
    } else {
        lhs
    };
    if p.pos != toks.len() {
        return p.syntax(if p.peek() == Some(&Tok::Equals) {
            "at most one `=` is allowed"
        } else {
            "unexpected trailing input"
        });
    }
    Ok(Equation::new(residual))
}

/// Parse `lhs = rhs` (residual `lhs - rhs`, or `lhs` when `rhs` is `0`) or a
/// bare expression. Multiplication must be explicit.
pub fn parse_infix(src: &str) -> Result<Equation, ParseError> {
    parse_with(src, false)
}

/// Like [`parse_infix`] but reads juxtaposed operands as a product, so
/// `u_t + q_1 (u^2)_x = q_2 u_xx` is accepted.
pub fn parse_infix_lenient(src: &str) -> Result<Equation, ParseError> {
    parse_with(src, true)
}

/// Parse a single expression; `=` is rejected.
pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    if let Some(offset) = src.find('=') {
        return Err(ParseError::Syntax {
            offset,
            message: "`=` is not allowed in an expression".into(),
        });
    }
    parse_infix(src).map(|eq| eq.residual)
}
