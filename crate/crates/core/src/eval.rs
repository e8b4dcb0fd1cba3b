//! Pointwise evaluation of expression trees with the field replaced by a
//! known smooth function.
//!
//! Values are carried as truncated bivariate Taylor series in `(dx, dt)`
//! ("jets"), so a derivative of any subexpression is read off exactly
//! without symbolic manipulation. This is deliberately a separate route from
//! the symbolic differentiation in [`crate::canon`].

use std::collections::BTreeMap;

use thiserror::Error;

use crate::expr::{BinOp, DerivVar, Expr, UnaryFn};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("placeholder coefficient cannot be evaluated")]
    Placeholder,
    #[error("no value bound to variable `{0}`")]
    UnboundVariable(String),
    #[error("exponent is not an integer literal")]
    NonIntegerExponent,
    #[error("division by zero")]
    DivisionByZero,
}

/// Truncated Taylor series `sum c[i][j] dx^i dt^j` over `i + j <= degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    degree: usize,
    coeffs: Vec<f64>,
}

fn idx(i: usize, j: usize) -> usize {
    // row-major over total degree s = i + j
    let s = i + j;
    s * (s + 1) / 2 + j
}

impl Jet {
    pub fn zero(degree: usize) -> Jet {
        Jet {
            degree,
            coeffs: vec![0.0; (degree + 1) * (degree + 2) / 2],
        }
    }

    pub fn constant(degree: usize, v: f64) -> Jet {
        let mut j = Jet::zero(degree);
        j.coeffs[0] = v;
        j
    }

    /// Build from a closure giving the coefficient of `dx^i dt^j`.
    pub fn from_fn(degree: usize, f: impl Fn(usize, usize) -> f64) -> Jet {
        let mut j = Jet::zero(degree);
        for s in 0..=degree {
            for b in 0..=s {
                j.coeffs[idx(s - b, b)] = f(s - b, b);
            }
        }
        j
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// Coefficient of `dx^i dt^j`.
    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.degree {
            0.0
        } else {
            self.coeffs[idx(i, j)]
        }
    }

    fn truncated(&self, degree: usize) -> Jet {
        Jet::from_fn(degree, |i, j| self.coeff(i, j))
    }

    fn zip(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        let d = self.degree.min(other.degree);
        Jet::from_fn(d, |i, j| f(self.coeff(i, j), other.coeff(i, j)))
    }

    pub fn add(&self, other: &Jet) -> Jet {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet {
            degree: self.degree,
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        let d = self.degree.min(other.degree);
        let mut out = Jet::zero(d);
        for s in 0..=d {
            for q in 0..=s {
                let p = s - q;
                let a = self.coeff(p, q);
                if a == 0.0 {
                    continue;
                }
                for s2 in 0..=(d - s) {
                    for q2 in 0..=s2 {
                        out.coeffs[idx(p + s2 - q2, q + q2)] += a * other.coeff(s2 - q2, q2);
                    }
                }
            }
        }
        out
    }

    /// The jet with its constant term removed.
    fn nilpotent_part(&self) -> Jet {
        let mut h = self.clone();
        h.coeffs[0] = 0.0;
        h
    }

    pub fn recip(&self) -> Result<Jet, EvalError> {
        let a0 = self.value();
        if a0 == 0.0 {
            return Err(EvalError::DivisionByZero);
        }
        // 1/(a0 (1 + h)) = (1/a0) sum (-h)^k
        let h = self.nilpotent_part().scale(-1.0 / a0);
        let mut term = Jet::constant(self.degree, 1.0);
        let mut acc = term.clone();
        for _ in 0..self.degree {
            term = term.mul(&h);
            acc = acc.add(&term);
        }
        Ok(acc.scale(1.0 / a0))
    }

    pub fn powi(&self, n: i64) -> Result<Jet, EvalError> {
        let base = if n < 0 { self.recip()? } else { self.clone() };
        let mut e = n.unsigned_abs();
        let mut acc = Jet::constant(self.degree, 1.0);
        let mut sq = base;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc.mul(&sq);
            }
            e >>= 1;
            if e > 0 {
                sq = sq.mul(&sq);
            }
        }
        Ok(acc)
    }

    /// `(sin(self), cos(self))`.
    pub fn sin_cos(&self) -> (Jet, Jet) {
        let a0 = self.value();
        let h = self.nilpotent_part();
        // sin(h), cos(h) as power series in the nilpotent h
        let mut sin_h = Jet::zero(self.degree);
        let mut cos_h = Jet::constant(self.degree, 1.0);
        let mut power = Jet::constant(self.degree, 1.0);
        let mut factorial = 1.0;
        for k in 1..=self.degree {
            power = power.mul(&h);
            factorial *= k as f64;
            let sign = if (k / 2) % 2 == 0 { 1.0 } else { -1.0 };
            let term = power.scale(sign / factorial);
            if k % 2 == 1 {
                sin_h = sin_h.add(&term);
            } else {
                cos_h = cos_h.add(&term);
            }
        }
        let (s0, c0) = a0.sin_cos();
        let sin = sin_h.scale(c0).add(&cos_h.scale(s0));
        let cos = cos_h.scale(c0).sub(&sin_h.scale(s0));
        (sin, cos)
    }

    /// Partial derivative; the result is exact through `degree - 1`.
    pub fn diff(&self, var: DerivVar) -> Jet {
        let d = self.degree.saturating_sub(1);
        match var {
            DerivVar::X => Jet::from_fn(d, |i, j| (i + 1) as f64 * self.coeff(i + 1, j)),
            DerivVar::T => Jet::from_fn(d, |i, j| (j + 1) as f64 * self.coeff(i, j + 1)),
        }
    }
}

/// A smooth stand-in for the unknown field with exact Taylor expansions.
pub trait FieldModel {
    /// Taylor jet of the field about `(x, t)` through total degree `degree`.
    fn jet(&self, x: f64, t: f64, degree: usize) -> Jet;
}

/// Evaluates expressions pointwise for a given field model.
pub struct Evaluator<'a, F: FieldModel + ?Sized> {
    pub field: &'a F,
    /// Values of generic variables (anything other than `x` and `t`).
    pub vars: BTreeMap<String, f64>,
}

impl<'a, F: FieldModel + ?Sized> Evaluator<'a, F> {
    pub fn new(field: &'a F) -> Self {
        Evaluator {
            field,
            vars: BTreeMap::new(),
        }
    }

    pub fn with_vars(field: &'a F, vars: BTreeMap<String, f64>) -> Self {
        Evaluator { field, vars }
    }

    /// Value of `e` at `(x, t)`.
    pub fn eval(&self, e: &Expr, x: f64, t: f64) -> Result<f64, EvalError> {
        let degree = e.derivative_depth() as usize;
        let field = self.field.jet(x, t, degree);
        Ok(self.jet(e, x, t, degree, &field)?.value())
    }

    fn jet(&self, e: &Expr, x: f64, t: f64, degree: usize, field: &Jet) -> Result<Jet, EvalError> {
        Ok(match e {
            Expr::Const(c) => Jet::constant(degree, *c),
            Expr::Int(i) => Jet::constant(degree, *i as f64),
            Expr::Var(name) => match name.as_str() {
                "x" => Jet::from_fn(degree, |i, j| match (i, j) {
                    (0, 0) => x,
                    (1, 0) => 1.0,
                    _ => 0.0,
                }),
                "t" => Jet::from_fn(degree, |i, j| match (i, j) {
                    (0, 0) => t,
                    (0, 1) => 1.0,
                    _ => 0.0,
                }),
                other => Jet::constant(
                    degree,
                    *self
                        .vars
                        .get(other)
                        .ok_or_else(|| EvalError::UnboundVariable(other.to_string()))?,
                ),
            },
            Expr::Field => field.truncated(degree),
            Expr::Placeholder => return Err(EvalError::Placeholder),
            Expr::Unary(f, a) => {
                let a = self.jet(a, x, t, degree, field)?;
                match f {
                    UnaryFn::Neg => a.scale(-1.0),
                    UnaryFn::Sin => a.sin_cos().0,
                    UnaryFn::Cos => a.sin_cos().1,
                }
            }
            Expr::Binary(BinOp::Pow, base, exp) => {
                let n = match **exp {
                    Expr::Int(n) => n,
                    Expr::Const(c) if c.fract() == 0.0 && c.abs() < 1e15 => c as i64,
                    _ => return Err(EvalError::NonIntegerExponent),
                };
                self.jet(base, x, t, degree, field)?.powi(n)?
            }
            Expr::Binary(op, a, b) => {
                let a = self.jet(a, x, t, degree, field)?;
                let b = self.jet(b, x, t, degree, field)?;
                match op {
                    BinOp::Add => a.add(&b),
                    BinOp::Sub => a.sub(&b),
                    BinOp::Mul => a.mul(&b),
                    BinOp::Div => a.mul(&b.recip()?),
                    BinOp::Pow => unreachable!("handled above"),
                }
            }
            Expr::Deriv { child, var, order } => {
                let inner_degree = degree + *order as usize;
                let inner_field = if inner_degree > field.degree() {
                    self.field.jet(x, t, inner_degree)
                } else {
                    field.clone()
                };
                let mut j = self.jet(child, x, t, inner_degree, &inner_field)?;
                for _ in 0..*order {
                    j = j.diff(*var);
                }
                j.truncated(degree)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expr;

    /// u(x, t) = sin(x) * exp(t), expanded exactly.
    struct SinExp;

    impl FieldModel for SinExp {
        fn jet(&self, x: f64, t: f64, degree: usize) -> Jet {
            let fact = |n: usize| (1..=n).map(|k| k as f64).product::<f64>();
            Jet::from_fn(degree, |i, j| {
                let dsin = match i % 4 {
                    0 => x.sin(),
                    1 => x.cos(),
                    2 => -x.sin(),
                    _ => -x.cos(),
                };
                dsin / fact(i) * t.exp() / fact(j)
            })
        }
    }

    fn eval(src: &str, x: f64, t: f64) -> f64 {
        Evaluator::new(&SinExp)
            .eval(&parse_expr(src).unwrap(), x, t)
            .unwrap()
    }

    #[test]
    fn field_and_derivatives() {
        let (x, t): (f64, f64) = (0.3, 0.2);
        assert!((eval("u", x, t) - x.sin() * t.exp()).abs() < 1e-14);
        assert!((eval("u_xx", x, t) + x.sin() * t.exp()).abs() < 1e-14);
        assert!((eval("u_xxx", x, t) + x.cos() * t.exp()).abs() < 1e-14);
        assert!((eval("u_t", x, t) - x.sin() * t.exp()).abs() < 1e-14);
    }

    #[test]
    fn chain_rule_through_jets() {
        let (x, t): (f64, f64) = (0.7, -0.4);
        let u = x.sin() * t.exp();
        let ux = x.cos() * t.exp();
        let uxx = -u;
        // (sin(u))_x = cos(u) u_x
        assert!((eval("(sin(u))_x", x, t) - u.cos() * ux).abs() < 1e-13);
        // (u^3)_xx = 6 u ux^2 + 3 u^2 uxx
        let expected = 6.0 * u * ux * ux + 3.0 * u * u * uxx;
        assert!((eval("(u^3)_xx", x, t) - expected).abs() < 1e-13);
        // (1/u)_x = -ux / u^2
        assert!((eval("(1/u)_x", x, t) + ux / (u * u)).abs() < 1e-12);
        // x-dependence of explicit variables
        assert!((eval("(x*u)_x", x, t) - (u + x * ux)).abs() < 1e-13);
        assert!(
            (eval("((cos(u))_x)_x", x, t) - (-u.cos() * ux * ux - u.sin() * uxx)).abs() < 1e-13
        );
    }

    #[test]
    fn errors() {
        let ev = Evaluator::new(&SinExp);
        assert_eq!(
            ev.eval(&Expr::Placeholder, 0.0, 0.0),
            Err(EvalError::Placeholder)
        );
        assert_eq!(
            ev.eval(&Expr::var("y"), 0.0, 0.0),
            Err(EvalError::UnboundVariable("y".into()))
        );
        assert_eq!(
            ev.eval(&parse_expr("1/u").unwrap(), 0.0, 0.0),
            Err(EvalError::DivisionByZero)
        );
    }
}
