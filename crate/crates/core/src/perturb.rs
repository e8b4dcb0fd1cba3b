//! Perturbed variants of a clean equation: random operand order, injected
//! spurious terms, and masked coefficients.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canon::{self, CanonError};
use crate::expr::{quantize_sig3, BinOp, DerivVar, Equation, Expr};
use crate::rng;

const SWAP_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerturbError {
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("empty noise coefficient range [{0}, {1}]")]
    EmptyRange(f64, f64),
    #[error("noise term library is empty")]
    EmptyLibrary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbConfig {
    pub swap_prob: f64,
    pub noise_prob: f64,
    pub noise_term_library: Vec<Expr>,
    pub noise_coeff_range: (f64, f64),
    pub seed: u64,
}

/// `u`, `u*u_x`, `u_xx`, `sin(u)`.
pub fn default_noise_library() -> Vec<Expr> {
    vec![
        Expr::Field,
        Expr::mul(Expr::Field, Expr::field_deriv(DerivVar::X, 1)),
        Expr::field_deriv(DerivVar::X, 2),
        Expr::sin(Expr::Field),
    ]
}

impl Default for PerturbConfig {
    fn default() -> Self {
        PerturbConfig {
            swap_prob: 0.5,
            noise_prob: 0.5,
            noise_term_library: default_noise_library(),
            noise_coeff_range: (0.1, 1.0),
            seed: 0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<(), PerturbError> {
        for p in [self.swap_prob, self.noise_prob] {
            if !(0.0..=1.0).contains(&p) {
                return Err(PerturbError::Probability(p));
            }
        }
        let (lo, hi) = self.noise_coeff_range;
        if !(lo < hi) {
            return Err(PerturbError::EmptyRange(lo, hi));
        }
        if self.noise_term_library.is_empty() {
            return Err(PerturbError::EmptyLibrary);
        }
        Ok(())
    }
}

/// Swap the operands of each `+`, `-` and `*` node independently with
/// probability `swap_prob`. A swapped difference `a - b` becomes
/// `(-1)*b + a`. The result is always equivalent to the input.
pub fn swap_branches(e: &Expr, cfg: &PerturbConfig) -> Expr {
    let mut rng = rng::stream(cfg.seed, &[SWAP_STREAM]);
    swap_node(e, cfg.swap_prob, &mut rng)
}

fn swap_node(e: &Expr, p: f64, rng: &mut impl Rng) -> Expr {
    match e {
        Expr::Binary(op, a, b) => {
            // one draw per node in pre-order keeps the stream layout stable
            let fire = p > 0.0 && rng.random_bool(p);
            let a = swap_node(a, p, rng);
            let b = swap_node(b, p, rng);
            match (op, fire) {
                (BinOp::Add | BinOp::Mul, true) => Expr::binary(*op, b, a),
                (BinOp::Sub, true) => Expr::add(Expr::mul(Expr::Int(-1), b), a),
                _ => Expr::binary(*op, a, b),
            }
        }
        Expr::Unary(f, a) => Expr::unary(*f, swap_node(a, p, rng)),
        Expr::Deriv { child, var, order } => Expr::deriv(swap_node(child, p, rng), *var, *order),
        leaf => leaf.clone(),
    }
}

/// An equation together with the term that was added to it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Injected {
    pub equation: Equation,
    pub injected_term: Option<Expr>,
}

/// With probability `noise_prob`, append `c*T` with `T` drawn from the
/// library and `c` uniform in the coefficient range (3 significant digits).
pub fn inject_noise_term(eq: &Equation, cfg: &PerturbConfig) -> Injected {
    let mut rng = rng::stream(cfg.seed, &[NOISE_STREAM]);
    let fire = cfg.noise_prob > 0.0 && rng.random_bool(cfg.noise_prob);
    if !fire || cfg.noise_term_library.is_empty() {
        return Injected {
            equation: eq.clone(),
            injected_term: None,
        };
    }
    let template = &cfg.noise_term_library[rng.random_range(0..cfg.noise_term_library.len())];
    let (lo, hi) = cfg.noise_coeff_range;
    let c = quantize_sig3(rng.random_range(lo..hi));
    let term = Expr::mul(Expr::Const(c), template.clone());
    Injected {
        equation: Equation::new(Expr::add(eq.residual.clone(), term.clone())),
        injected_term: Some(term),
    }
}

/// Canonical form with every term's coefficient replaced by `[?]`.
pub fn mask_coefficients(eq: &Equation) -> Result<Equation, CanonError> {
    Ok(Equation::new(canon::mask_terms(&eq.residual)?))
}

/// JSON-friendly summary of one perturbation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbReport {
    pub input_tokens: Vec<String>,
    pub output_tokens: Vec<String>,
    pub injected_term: Option<String>,
}
