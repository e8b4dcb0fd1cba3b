//! Expression trees for time-dependent PDEs.
//!
//! An [`Equation`] stores a single residual expression; the equation it
//! represents is `residual = 0`. Trees are immutable values: every
//! transformation in this crate builds a new tree.

mod parse;
mod tokens;

use std::fmt;

pub use parse::{parse_expr, parse_infix, parse_infix_lenient, ParseError};
pub use tokens::{
    format_sig3, from_tokens, is_sig3, quantize_sig3, to_canonical_tokens, to_manual_tokens,
    DecodeError, Dialect, Shorthand, Token, TokenError, TokenSeq,
};

/// Independent variable a partial derivative is taken with respect to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DerivVar {
    X,
    T,
}

impl DerivVar {
    pub fn name(self) -> &'static str {
        match self {
            DerivVar::X => "x",
            DerivVar::T => "t",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryFn {
    Sin,
    Cos,
    Neg,
}

impl UnaryFn {
    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Neg => "neg",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn is_commutative(self) -> bool {
        matches!(self, BinOp::Add | BinOp::Mul)
    }
}

/// A node of a PDE expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Int(i64),
    /// `x`, `t`, or a generic variable such as `x_1` or `y`.
    Var(String),
    /// The unknown field `u(x,t)`.
    Field,
    /// A masked coefficient, `[?]`.
    Placeholder,
    Unary(UnaryFn, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    /// `order`-th partial derivative of `child` with respect to `var`; `order >= 1`.
    Deriv {
        child: Box<Expr>,
        var: DerivVar,
        order: u32,
    },
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Expr {
        Expr::Var(name.into())
    }

    pub fn unary(f: UnaryFn, a: Expr) -> Expr {
        Expr::Unary(f, Box::new(a))
    }

    pub fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Add, a, b)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Sub, a, b)
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Mul, a, b)
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::binary(BinOp::Div, a, b)
    }

    pub fn pow(base: Expr, exponent: i64) -> Expr {
        Expr::binary(BinOp::Pow, base, Expr::Int(exponent))
    }

    pub fn sin(a: Expr) -> Expr {
        Expr::unary(UnaryFn::Sin, a)
    }

    pub fn cos(a: Expr) -> Expr {
        Expr::unary(UnaryFn::Cos, a)
    }

    pub fn neg(a: Expr) -> Expr {
        Expr::unary(UnaryFn::Neg, a)
    }

    /// Panics if `order == 0`.
    pub fn deriv(child: Expr, var: DerivVar, order: u32) -> Expr {
        assert!(order >= 1, "derivative order must be positive");
        Expr::Deriv {
            child: Box::new(child),
            var,
            order,
        }
    }

    /// `u_t`, `u_x`, `u_xx`, ... applied directly to the field.
    pub fn field_deriv(var: DerivVar, order: u32) -> Expr {
        Expr::deriv(Expr::Field, var, order)
    }

    /// Sum of `terms` nested left to right. Empty input gives `Int(0)`.
    pub fn sum_of(terms: impl IntoIterator<Item = Expr>) -> Expr {
        let mut it = terms.into_iter();
        match it.next() {
            None => Expr::Int(0),
            Some(first) => it.fold(first, Expr::add),
        }
    }

    /// Product of `factors` nested left to right. Empty input gives `Int(1)`.
    pub fn product_of(factors: impl IntoIterator<Item = Expr>) -> Expr {
        let mut it = factors.into_iter();
        match it.next() {
            None => Expr::Int(1),
            Some(first) => it.fold(first, Expr::mul),
        }
    }

    pub fn is_zero_constant(&self) -> bool {
        match self {
            Expr::Const(c) => *c == 0.0,
            Expr::Int(i) => *i == 0,
            _ => false,
        }
    }

    pub fn children(&self) -> Vec<&Expr> {
        match self {
            Expr::Unary(_, a) => vec![a],
            Expr::Binary(_, a, b) => vec![a, b],
            Expr::Deriv { child, .. } => vec![child],
            _ => Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self
            .children()
            .iter()
            .map(|c| c.node_count())
            .sum::<usize>()
    }

    /// Largest total derivative order along any root-to-leaf path.
    pub fn derivative_depth(&self) -> u32 {
        match self {
            Expr::Deriv { child, order, .. } => order + child.derivative_depth(),
            _ => self
                .children()
                .iter()
                .map(|c| c.derivative_depth())
                .max()
                .unwrap_or(0),
        }
    }

    pub fn contains_placeholder(&self) -> bool {
        matches!(self, Expr::Placeholder)
            || self.children().iter().any(|c| c.contains_placeholder())
    }

    /// Apply `f` to every `Const` leaf.
    pub fn map_consts(&self, f: &mut impl FnMut(f64) -> f64) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(f(*c)),
            Expr::Unary(g, a) => Expr::unary(*g, a.map_consts(f)),
            Expr::Binary(op, a, b) => Expr::binary(*op, a.map_consts(f), b.map_consts(f)),
            Expr::Deriv { child, var, order } => Expr::deriv(child.map_consts(f), *var, *order),
            other => other.clone(),
        }
    }
}

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        Expr::Unary(UnaryFn::Neg, _) => 3,
        Expr::Const(c) if c.is_sign_negative() => 3,
        Expr::Int(i) if *i < 0 => 3,
        Expr::Binary(BinOp::Pow, ..) => 4,
        _ => 5,
    }
}

fn is_op(e: &Expr, op: BinOp) -> bool {
    matches!(e, Expr::Binary(o, ..) if *o == op)
}

// Pure `*` chains parse right-nested and chains containing `/` parse
// left-nested, so the printer parenthesizes whatever would re-associate.
fn needs_parens(op: BinOp, right: bool, child: &Expr) -> bool {
    let p = precedence(child);
    match (op, right) {
        (BinOp::Add | BinOp::Sub, false) => false,
        (BinOp::Add | BinOp::Sub, true) => p <= 1,
        (BinOp::Mul, false) => p <= 2,
        (BinOp::Mul, true) => p < 2 || is_op(child, BinOp::Div),
        (BinOp::Div, false) => p < 2 || is_op(child, BinOp::Mul),
        (BinOp::Div, true) => p <= 2,
        (BinOp::Pow, _) => p < 5,
    }
}

fn is_literal(e: &Expr) -> bool {
    matches!(e, Expr::Const(_) | Expr::Int(_))
}

/// Infix rendering accepted back by [`parse_expr`].
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c:?}"),
            Expr::Int(i) => write!(f, "{i}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Field => f.write_str("u"),
            Expr::Placeholder => f.write_str("[?]"),
            Expr::Unary(UnaryFn::Neg, a) => {
                if precedence(a) < 4 || is_literal(a) {
                    write!(f, "-({a})")
                } else {
                    write!(f, "-{a}")
                }
            }
            Expr::Unary(g, a) => write!(f, "{}({a})", g.name()),
            Expr::Binary(BinOp::Pow, a, b) if matches!(**b, Expr::Int(_)) => {
                if needs_parens(BinOp::Pow, false, a) {
                    write!(f, "({a})^{b}")
                } else {
                    write!(f, "{a}^{b}")
                }
            }
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => " + ",
                    BinOp::Sub => " - ",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                for (i, side) in [a, b].into_iter().enumerate() {
                    if i == 1 {
                        f.write_str(sym)?;
                    }
                    if needs_parens(*op, i == 1, side) {
                        write!(f, "({side})")?;
                    } else {
                        write!(f, "{side}")?;
                    }
                }
                Ok(())
            }
            Expr::Deriv { child, var, order } => {
                let suffix: String = var.name().repeat(*order as usize);
                if matches!(**child, Expr::Field) {
                    write!(f, "u_{suffix}")
                } else {
                    write!(f, "({child})_{suffix}")
                }
            }
        }
    }
}

/// A PDE in residual form: `residual = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Equation {
    pub residual: Expr,
}

impl Equation {
    pub fn new(residual: Expr) -> Self {
        Equation { residual }
    }
}

impl fmt::Display for Equation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = 0", self.residual)
    }
}
