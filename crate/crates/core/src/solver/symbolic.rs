//! Conversion between [`ConservationLaw`] values and symbolic equations.

use crate::canon::canonicalize;
use crate::expr::{BinOp, DerivVar, Equation, Expr};

use super::{ConservationLaw, FluxKind, SolverError};

/// Top-level terms of a canonical sum.
fn terms(e: &Expr) -> Vec<&Expr> {
    match e {
        Expr::Binary(BinOp::Add, a, b) => {
            let mut out = terms(a);
            out.push(b);
            out
        }
        _ => vec![e],
    }
}

/// Split a canonical term `c * f1 * ... * fn` into `c` and the factor product.
fn split_term(t: &Expr) -> (Option<f64>, Expr) {
    match t {
        Expr::Int(i) => (Some(*i as f64), Expr::Int(1)),
        Expr::Const(c) => (Some(*c), Expr::Int(1)),
        Expr::Binary(BinOp::Mul, a, b) => {
            let (c, rest) = split_term(a);
            if c.is_none() {
                return (None, t.clone());
            }
            let rest = if rest == Expr::Int(1) {
                (**b).clone()
            } else {
                Expr::mul(rest, (**b).clone())
            };
            (c, rest)
        }
        other => (None, other.clone()),
    }
}

fn monomial(src: Expr) -> (f64, Expr) {
    let canon = canonicalize(&src).expect("reference term canonicalizes");
    let (c, rest) = split_term(&canon);
    (c.expect("reference term has a coefficient"), rest)
}

fn flux_term(flux: FluxKind) -> Expr {
    let u = Expr::Field;
    let f = match flux {
        FluxKind::Quadratic => Expr::pow(u, 2),
        FluxKind::Cubic => Expr::pow(u, 3),
        FluxKind::Sine => Expr::sin(u),
    };
    Expr::deriv(f, DerivVar::X, 1)
}

impl ConservationLaw {
    /// `u_t + q1*(f(u))_x - q2*u_xx = 0`, omitting the diffusion term when `q2 = 0`.
    pub fn to_equation(&self) -> Equation {
        let mut e = Expr::add(
            Expr::field_deriv(DerivVar::T, 1),
            Expr::mul(Expr::Const(self.q1), flux_term(self.flux)),
        );
        if self.q2 != 0.0 {
            e = Expr::sub(
                e,
                Expr::mul(Expr::Const(self.q2), Expr::field_deriv(DerivVar::X, 2)),
            );
        }
        Equation::new(e)
    }

    /// Recognize `a*u_t + b*(f(u))_x + c*u_xx = 0` for one of the supported
    /// fluxes, returning `q1 = b/a`, `q2 = -c/a`.
    pub fn from_equation(eq: &Equation) -> Result<ConservationLaw, SolverError> {
        let not = |m: String| SolverError::NotSolvable(m);
        let canon = canonicalize(&eq.residual).map_err(|e| not(e.to_string()))?;
        let (_, time) = monomial(Expr::field_deriv(DerivVar::T, 1));
        let (_, diffusion) = monomial(Expr::field_deriv(DerivVar::X, 2));
        let fluxes: Vec<(FluxKind, f64, Expr)> =
            [FluxKind::Quadratic, FluxKind::Cubic, FluxKind::Sine]
                .into_iter()
                .map(|k| {
                    let (scale, m) = monomial(flux_term(k));
                    (k, scale, m)
                })
                .collect();

        let mut a = None;
        let mut c = 0.0;
        let mut flux: Option<(FluxKind, f64)> = None;
        for t in terms(&canon) {
            if t.is_zero_constant() {
                continue;
            }
            let (coeff, rest) = split_term(t);
            let coeff =
                coeff.ok_or_else(|| not(format!("term `{t}` has no numeric coefficient")))?;
            if rest == time {
                a = Some(coeff);
            } else if rest == diffusion {
                c = coeff;
            } else if let Some((k, scale, _)) = fluxes.iter().find(|(_, _, m)| *m == rest) {
                if flux.is_some() {
                    return Err(not("more than one flux term".into()));
                }
                flux = Some((*k, coeff / scale));
            } else {
                return Err(not(format!("unsupported term `{t}`")));
            }
        }
        let a = a.ok_or_else(|| not("no u_t term".into()))?;
        let (kind, b) = flux.unwrap_or((FluxKind::Quadratic, 0.0));
        let q2 = if c == 0.0 { 0.0 } else { -c / a };
        ConservationLaw::new(kind, b / a, q2).map_err(|e| not(e.to_string()))
    }
}
