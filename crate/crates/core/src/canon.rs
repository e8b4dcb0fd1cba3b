//! Canonical forms for expression trees.
//!
//! Every expression is normalized to a sum of terms, each term a numeric
//! coefficient times a sorted multiset of factors with integer exponents.
//! Subtraction and negation become multiplication by `-1`, nested sums and
//! products are flattened, constants are folded, like terms are merged, and
//! derivatives of composite expressions are expanded with the product and
//! chain rules so that `(u^2)_x` and `2*u*u_x` coincide. The result is
//! rebuilt as a left-nested binary tree in which every term is written
//! `coefficient * factor * ...`.
//!
//! Constant folding visits operands in sorted order, so the floating-point
//! result does not depend on the order in which operands were written.

use std::cmp::Ordering;

use thiserror::Error;

use crate::expr::{BinOp, DerivVar, Expr, UnaryFn};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CanonError {
    #[error("division by zero while folding constants")]
    DivisionByZero,
    #[error("exponent `{0}` is not an integer constant")]
    NonIntegerExponent(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum KeyPart {
    Rank(u8),
    Count(u32),
    Num(u64),
    Int(i64),
    Text(String),
}

/// Total order over expression trees used to sort terms and factors.
///
/// Class order: placeholder, `sin`/`cos`, the field, field derivatives (by
/// total order, then by number of time derivatives), variables by name,
/// compound nodes, constants by value. Equal keys mean identical trees.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct CanonicalKey(Vec<KeyPart>);

fn ordered_bits(v: f64) -> u64 {
    let b = v.to_bits();
    if b >> 63 == 1 {
        !b
    } else {
        b | (1 << 63)
    }
}

impl CanonicalKey {
    pub fn of(e: &Expr) -> CanonicalKey {
        let mut parts = Vec::new();
        push_key(e, &mut parts);
        CanonicalKey(parts)
    }
}

fn push_key(e: &Expr, out: &mut Vec<KeyPart>) {
    match e {
        Expr::Placeholder => out.push(KeyPart::Rank(0)),
        Expr::Unary(f, a) => {
            out.push(KeyPart::Rank(1));
            out.push(KeyPart::Rank(match f {
                UnaryFn::Sin => 0,
                UnaryFn::Cos => 1,
                UnaryFn::Neg => 2,
            }));
            push_key(a, out);
        }
        Expr::Field => out.push(KeyPart::Rank(2)),
        Expr::Deriv { .. } => {
            let mut chain = Vec::new();
            let mut node = e;
            while let Expr::Deriv { child, var, order } = node {
                chain.push((*var, *order));
                node = child;
            }
            let total: u32 = chain.iter().map(|(_, n)| n).sum();
            let in_t: u32 = chain
                .iter()
                .filter(|(v, _)| *v == DerivVar::T)
                .map(|(_, n)| n)
                .sum();
            out.push(KeyPart::Rank(3));
            out.push(KeyPart::Count(total));
            out.push(KeyPart::Count(in_t));
            out.push(KeyPart::Count(chain.len() as u32));
            for (v, n) in chain {
                out.push(KeyPart::Rank(v as u8));
                out.push(KeyPart::Count(n));
            }
            push_key(node, out);
        }
        Expr::Var(name) => {
            out.push(KeyPart::Rank(4));
            out.push(KeyPart::Text(name.clone()));
        }
        Expr::Binary(op, a, b) => {
            out.push(KeyPart::Rank(5));
            out.push(KeyPart::Rank(*op as u8));
            push_key(a, out);
            push_key(b, out);
        }
        Expr::Int(i) => {
            out.push(KeyPart::Rank(6));
            out.push(KeyPart::Num(ordered_bits(*i as f64)));
            out.push(KeyPart::Rank(0));
            out.push(KeyPart::Int(*i));
        }
        Expr::Const(c) => {
            out.push(KeyPart::Rank(6));
            out.push(KeyPart::Num(ordered_bits(*c)));
            out.push(KeyPart::Rank(1));
        }
    }
}

#[derive(Debug, Clone)]
enum Factor {
    Func(UnaryFn, Poly),
    Placeholder,
    Field,
    /// Field derivative with `x` derivatives of order `x` and `t` derivatives of order `t`.
    Deriv {
        x: u32,
        t: u32,
    },
    Var(String),
    /// A sum of at least two terms that cannot be distributed.
    Group(Poly),
}

impl Factor {
    fn to_expr(&self) -> Expr {
        match self {
            Factor::Func(f, p) => Expr::unary(*f, p.to_nested_expr()),
            Factor::Placeholder => Expr::Placeholder,
            Factor::Field => Expr::Field,
            Factor::Deriv { x, t } => match (*x, *t) {
                (x, 0) => Expr::field_deriv(DerivVar::X, x),
                (0, t) => Expr::field_deriv(DerivVar::T, t),
                (x, t) => Expr::deriv(Expr::field_deriv(DerivVar::T, t), DerivVar::X, x),
            },
            Factor::Var(name) => Expr::Var(name.clone()),
            Factor::Group(p) => p.to_nested_expr(),
        }
    }
}

#[derive(Debug, Clone)]
struct Keyed {
    key: CanonicalKey,
    factor: Factor,
}

impl Keyed {
    fn new(factor: Factor) -> Keyed {
        Keyed {
            key: CanonicalKey::of(&factor.to_expr()),
            factor,
        }
    }
}

/// Factors sorted by key, each with a nonzero exponent.
type Monomial = Vec<(Keyed, i64)>;

fn cmp_mono(a: &Monomial, b: &Monomial) -> Ordering {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => return Ordering::Equal,
        (true, false) => return Ordering::Greater,
        (false, true) => return Ordering::Less,
        _ => {}
    }
    for ((fa, ea), (fb, eb)) in a.iter().zip(b) {
        let c = fa.key.cmp(&fb.key).then(ea.cmp(eb));
        if c != Ordering::Equal {
            return c;
        }
    }
    a.len().cmp(&b.len())
}

fn merge_monos<'a>(monos: impl IntoIterator<Item = &'a Monomial>) -> Monomial {
    let mut all: Vec<(Keyed, i64)> = monos.into_iter().flatten().cloned().collect();
    all.sort_by(|a, b| a.0.key.cmp(&b.0.key));
    let mut out: Monomial = Vec::with_capacity(all.len());
    for (f, e) in all {
        match out.last_mut() {
            Some((g, acc)) if g.key == f.key => *acc += e,
            _ => out.push((f, e)),
        }
    }
    out.retain(|(_, e)| *e != 0);
    out
}

#[derive(Debug, Clone)]
struct Term {
    coeff: f64,
    mono: Monomial,
}

/// Sum of terms with distinct monomials and nonzero coefficients, sorted.
#[derive(Debug, Clone)]
struct Poly {
    terms: Vec<Term>,
}

/// Product of magnitudes in ascending order; sign by parity.
fn fold_product(values: &[f64]) -> f64 {
    let negative = values.iter().filter(|v| v.is_sign_negative()).count() % 2 == 1;
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let p = mags.into_iter().fold(1.0, |acc, v| acc * v);
    if negative {
        -p
    } else {
        p
    }
}

fn is_integral(c: f64) -> bool {
    c.fract() == 0.0 && c.abs() < 9.007_199_254_740_992e15
}

fn coeff_expr(c: f64) -> Expr {
    if is_integral(c) {
        Expr::Int(c as i64)
    } else {
        Expr::Const(c)
    }
}

impl Poly {
    fn zero() -> Poly {
        Poly { terms: Vec::new() }
    }

    fn constant(c: f64) -> Poly {
        if c == 0.0 {
            Poly::zero()
        } else {
            Poly {
                terms: vec![Term {
                    coeff: c,
                    mono: Vec::new(),
                }],
            }
        }
    }

    fn factor(f: Factor) -> Poly {
        Poly {
            terms: vec![Term {
                coeff: 1.0,
                mono: vec![(Keyed::new(f), 1)],
            }],
        }
    }

    fn monomial(coeff: f64, mono: Monomial) -> Poly {
        if coeff == 0.0 {
            Poly::zero()
        } else {
            Poly {
                terms: vec![Term { coeff, mono }],
            }
        }
    }

    fn as_constant(&self) -> Option<f64> {
        match self.terms.as_slice() {
            [] => Some(0.0),
            [t] if t.mono.is_empty() => Some(t.coeff),
            _ => None,
        }
    }

    fn scaled(mut self, c: f64) -> Poly {
        for t in &mut self.terms {
            t.coeff *= c;
        }
        self.terms.retain(|t| t.coeff != 0.0);
        self
    }

    /// Merge all terms of `parts`, summing like coefficients in sorted order.
    fn sum(parts: impl IntoIterator<Item = Poly>) -> Poly {
        let mut all: Vec<Term> = parts.into_iter().flat_map(|p| p.terms).collect();
        all.sort_by(|a, b| cmp_mono(&a.mono, &b.mono).then(a.coeff.total_cmp(&b.coeff)));
        let mut terms: Vec<Term> = Vec::with_capacity(all.len());
        for t in all {
            match terms.last_mut() {
                Some(last) if cmp_mono(&last.mono, &t.mono) == Ordering::Equal => {
                    last.coeff += t.coeff
                }
                _ => terms.push(t),
            }
        }
        terms.retain(|t| t.coeff != 0.0);
        Poly { terms }
    }

    fn product(parts: Vec<Poly>) -> Poly {
        if parts.iter().any(|p| p.terms.is_empty()) {
            return Poly::zero();
        }
        let mut coeffs = Vec::new();
        let mut monos: Vec<Monomial> = Vec::new();
        let mut groups: Vec<Poly> = Vec::new();
        for p in parts {
            if p.terms.len() == 1 {
                let t = p.terms.into_iter().next().expect("one term");
                coeffs.push(t.coeff);
                if !t.mono.is_empty() {
                    monos.push(t.mono);
                }
            } else {
                groups.push(p);
            }
        }
        let coeff = fold_product(&coeffs);
        if monos.is_empty() && groups.len() == 1 {
            return groups.pop().expect("one group").scaled(coeff);
        }
        let group_monos: Vec<Monomial> = groups
            .into_iter()
            .map(|g| vec![(Keyed::new(Factor::Group(g)), 1)])
            .collect();
        let mono = merge_monos(monos.iter().chain(group_monos.iter()));
        Poly::monomial(coeff, mono)
    }

    fn pow(self, n: i64) -> Result<Poly, CanonError> {
        if n == 0 {
            return Ok(Poly::constant(1.0));
        }
        if let Some(c) = self.as_constant() {
            if c == 0.0 && n < 0 {
                return Err(CanonError::DivisionByZero);
            }
            let n32 =
                i32::try_from(n).map_err(|_| CanonError::NonIntegerExponent(n.to_string()))?;
            return Ok(Poly::constant(c.powi(n32)));
        }
        if n == 1 {
            return Ok(self);
        }
        if self.terms.len() == 1 {
            let t = self.terms.into_iter().next().expect("one term");
            let n32 =
                i32::try_from(n).map_err(|_| CanonError::NonIntegerExponent(n.to_string()))?;
            let mono = t.mono.into_iter().map(|(f, e)| (f, e * n)).collect();
            return Ok(Poly::monomial(t.coeff.powi(n32), mono));
        }
        Ok(Poly::monomial(
            1.0,
            vec![(Keyed::new(Factor::Group(self)), n)],
        ))
    }

    fn func(f: UnaryFn, arg: Poly) -> Poly {
        match arg.as_constant() {
            Some(c) => Poly::constant(match f {
                UnaryFn::Sin => c.sin(),
                UnaryFn::Cos => c.cos(),
                UnaryFn::Neg => -c,
            }),
            None => Poly::factor(Factor::Func(f, arg)),
        }
    }

    fn diff(&self, var: DerivVar) -> Poly {
        Poly::sum(self.terms.iter().map(|t| diff_term(t, var)))
    }

    fn to_expr(&self) -> Expr {
        Expr::sum_of(self.terms.iter().map(|t| term_expr(t, true)))
    }

    /// Inside function arguments and groups a unit coefficient is left implicit.
    fn to_nested_expr(&self) -> Expr {
        Expr::sum_of(self.terms.iter().map(|t| term_expr(t, false)))
    }
}

fn factor_power_expr(f: &Keyed, e: i64) -> Expr {
    let base = f.factor.to_expr();
    if e == 1 {
        base
    } else {
        Expr::pow(base, e)
    }
}

fn term_expr(t: &Term, explicit_unit: bool) -> Expr {
    if t.mono.is_empty() {
        return coeff_expr(t.coeff);
    }
    let placeholder_lead = t.coeff == 1.0
        && (!explicit_unit
            || matches!(t.mono.first(), Some((k, 1)) if matches!(k.factor, Factor::Placeholder)));
    let factors = t.mono.iter().map(|(f, e)| factor_power_expr(f, *e));
    if placeholder_lead {
        Expr::product_of(factors)
    } else {
        Expr::product_of(std::iter::once(coeff_expr(t.coeff)).chain(factors))
    }
}

fn diff_factor(f: &Factor, var: DerivVar) -> Poly {
    let bump = |x: u32, t: u32| match var {
        DerivVar::X => Factor::Deriv { x: x + 1, t },
        DerivVar::T => Factor::Deriv { x, t: t + 1 },
    };
    match f {
        Factor::Field => Poly::factor(bump(0, 0)),
        Factor::Deriv { x, t } => Poly::factor(bump(*x, *t)),
        Factor::Var(name) => {
            if name == var.name() {
                Poly::constant(1.0)
            } else {
                Poly::zero()
            }
        }
        Factor::Placeholder => Poly::zero(),
        Factor::Func(UnaryFn::Sin, q) => {
            Poly::product(vec![Poly::func(UnaryFn::Cos, q.clone()), q.diff(var)])
        }
        Factor::Func(UnaryFn::Cos, q) => Poly::product(vec![
            Poly::constant(-1.0),
            Poly::func(UnaryFn::Sin, q.clone()),
            q.diff(var),
        ]),
        Factor::Func(UnaryFn::Neg, q) => q.diff(var).scaled(-1.0),
        Factor::Group(q) => q.diff(var),
    }
}

fn diff_term(t: &Term, var: DerivVar) -> Poly {
    let mut parts = Vec::with_capacity(t.mono.len());
    for (i, (f, e)) in t.mono.iter().enumerate() {
        let df = diff_factor(&f.factor, var);
        if df.terms.is_empty() {
            continue;
        }
        let mut rest: Monomial = t
            .mono
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .map(|(_, fe)| fe.clone())
            .collect();
        if *e != 1 {
            rest.push((f.clone(), e - 1));
            rest = merge_monos([&rest]);
        }
        parts.push(Poly::product(vec![
            Poly::constant(t.coeff * *e as f64),
            Poly::monomial(1.0, rest),
            df,
        ]));
    }
    Poly::sum(parts)
}

fn collect_sum<'a>(e: &'a Expr, negate: bool, out: &mut Vec<(&'a Expr, bool)>) {
    match e {
        Expr::Binary(BinOp::Add, a, b) => {
            collect_sum(a, negate, out);
            collect_sum(b, negate, out);
        }
        Expr::Binary(BinOp::Sub, a, b) => {
            collect_sum(a, negate, out);
            collect_sum(b, !negate, out);
        }
        Expr::Unary(UnaryFn::Neg, a) => collect_sum(a, !negate, out),
        other => out.push((other, negate)),
    }
}

fn collect_product(e: &Expr, out: &mut Vec<Poly>) -> Result<(), CanonError> {
    match e {
        Expr::Binary(BinOp::Mul, a, b) => {
            collect_product(a, out)?;
            collect_product(b, out)
        }
        Expr::Binary(BinOp::Div, a, b) => {
            collect_product(a, out)?;
            out.push(normalize(b)?.pow(-1)?);
            Ok(())
        }
        Expr::Unary(UnaryFn::Neg, a) => {
            out.push(Poly::constant(-1.0));
            collect_product(a, out)
        }
        other => {
            out.push(normalize(other)?);
            Ok(())
        }
    }
}

fn normalize(e: &Expr) -> Result<Poly, CanonError> {
    match e {
        Expr::Const(c) => Ok(Poly::constant(*c)),
        Expr::Int(i) => Ok(Poly::constant(*i as f64)),
        Expr::Var(name) => Ok(Poly::factor(Factor::Var(name.clone()))),
        Expr::Field => Ok(Poly::factor(Factor::Field)),
        Expr::Placeholder => Ok(Poly::factor(Factor::Placeholder)),
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) | Expr::Unary(UnaryFn::Neg, _) => {
            let mut operands = Vec::new();
            collect_sum(e, false, &mut operands);
            let parts = operands
                .into_iter()
                .map(|(op, neg)| {
                    let p = normalize_non_sum(op)?;
                    Ok(if neg { p.scaled(-1.0) } else { p })
                })
                .collect::<Result<Vec<_>, CanonError>>()?;
            Ok(Poly::sum(parts))
        }
        other => normalize_non_sum(other),
    }
}

fn normalize_non_sum(e: &Expr) -> Result<Poly, CanonError> {
    match e {
        Expr::Binary(BinOp::Mul | BinOp::Div, ..) => {
            let mut parts = Vec::new();
            collect_product(e, &mut parts)?;
            Ok(Poly::product(parts))
        }
        Expr::Binary(BinOp::Pow, base, exp) => {
            let n = normalize(exp)?
                .as_constant()
                .filter(|c| is_integral(*c))
                .ok_or_else(|| CanonError::NonIntegerExponent(exp.to_string()))?;
            normalize(base)?.pow(n as i64)
        }
        Expr::Unary(f @ (UnaryFn::Sin | UnaryFn::Cos), a) => Ok(Poly::func(*f, normalize(a)?)),
        Expr::Deriv { child, var, order } => {
            let mut p = normalize(child)?;
            for _ in 0..*order {
                p = p.diff(*var);
            }
            Ok(p)
        }
        Expr::Binary(BinOp::Add | BinOp::Sub, ..) | Expr::Unary(UnaryFn::Neg, _) => normalize(e),
        leaf => normalize(leaf),
    }
}

/// Canonical form of `e`. Idempotent.
pub fn canonicalize(e: &Expr) -> Result<Expr, CanonError> {
    Ok(normalize(e)?.to_expr())
}

/// Whether `a` and `b` have structurally identical canonical forms.
pub fn equivalent(a: &Expr, b: &Expr) -> bool {
    match (canonicalize(a), canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Canonical form with every term's coefficient replaced by a placeholder.
pub(crate) fn mask_terms(e: &Expr) -> Result<Expr, CanonError> {
    let p = normalize(e)?;
    let masked = Poly::sum(p.terms.into_iter().map(|t| {
        let placeholder = vec![(Keyed::new(Factor::Placeholder), 1)];
        let mono = merge_monos([&placeholder, &t.mono]);
        Poly::monomial(1.0, mono)
    }));
    Ok(masked.to_expr())
}
