//! Error metrics for predicted trajectories and learned equations.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::{EvalError, Evaluator, FieldModel, Jet};
use crate::expr::{from_tokens, DecodeError, Equation, TokenSeq};
use crate::rng;
use crate::solver::{self, ConservationLaw, SolverError, SpaceTimeField};

const SURROGATE_STREAM: u64 = 31;
const MAX_SURROGATE_DRAWS: u64 = 1000;
/// Surrogates whose true residual has a smaller grid RMS are redrawn.
pub const MIN_RESIDUAL_RMS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0} vs {1}")]
    ShapeMismatch(usize, usize),
    #[error("reference has zero norm or variance")]
    DegenerateReference,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn norm_sq(u: &[f64]) -> f64 {
    u.iter().map(|v| v * v).sum()
}

/// `||u - v|| / ||u||` over all entries.
pub fn rel_l2(u: &[f64], v: &[f64]) -> Result<f64, MetricsError> {
    if u.len() != v.len() {
        return Err(MetricsError::ShapeMismatch(u.len(), v.len()));
    }
    let denom = norm_sq(u);
    if denom == 0.0 {
        return Err(MetricsError::DegenerateReference);
    }
    let num: f64 = u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((num / denom).sqrt())
}

/// `1 - sum_i ||u_i - v_i||^2 / sum_i ||u_i - mean(u_i)||^2`, with `mean(u_i)`
/// the scalar mean of sample `i`.
pub fn r2_score<T: AsRef<[f64]>, P: AsRef<[f64]>>(
    targets: &[T],
    preds: &[P],
) -> Result<f64, MetricsError> {
    if targets.len() != preds.len() {
        return Err(MetricsError::ShapeMismatch(targets.len(), preds.len()));
    }
    let mut residual = 0.0;
    let mut spread = 0.0;
    for (u, v) in targets.iter().zip(preds) {
        let (u, v) = (u.as_ref(), v.as_ref());
        if u.len() != v.len() {
            return Err(MetricsError::ShapeMismatch(u.len(), v.len()));
        }
        let mean = u.iter().sum::<f64>() / u.len() as f64;
        residual += u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        spread += u.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>();
    }
    if spread == 0.0 {
        return Err(MetricsError::DegenerateReference);
    }
    Ok(1.0 - residual / spread)
}

/// `P(x, t) = (c0 + c1 t + c2 t^2)(c3 + c4 x + c5 x^2 + c6 x^3 + c7 x^4)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolySurrogate {
    pub c: [f64; 8],
}

/// Taylor coefficients of the polynomial `coeffs` (ascending) about `z`.
fn shifted(coeffs: &[f64], z: f64) -> Vec<f64> {
    // repeated synthetic division
    let mut a = coeffs.to_vec();
    let n = a.len();
    for k in 0..n {
        for j in (k..n - 1).rev() {
            a[j] += z * a[j + 1];
        }
    }
    a
}

impl PolySurrogate {
    /// Coefficients drawn from `Unif(-1, 1)`.
    pub fn random(rng: &mut impl Rng) -> PolySurrogate {
        let mut c = [0.0; 8];
        for v in &mut c {
            *v = rng.random_range(-1.0..1.0);
        }
        PolySurrogate { c }
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        let c = &self.c;
        (c[0] + t * (c[1] + t * c[2])) * (c[3] + x * (c[4] + x * (c[5] + x * (c[6] + x * c[7]))))
    }
}

impl FieldModel for PolySurrogate {
    fn jet(&self, x: f64, t: f64, degree: usize) -> Jet {
        let time = shifted(&self.c[0..3], t);
        let space = shifted(&self.c[3..8], x);
        Jet::from_fn(degree, |i, j| {
            space.get(i).copied().unwrap_or(0.0) * time.get(j).copied().unwrap_or(0.0)
        })
    }
}

/// Evaluation points for the symbolic error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub nx: usize,
    pub nt: usize,
    pub x_range: (f64, f64),
    pub t_range: (f64, f64),
}

impl Default for SampleGrid {
    fn default() -> Self {
        SampleGrid {
            nx: 32,
            nt: 32,
            x_range: (0.0, 1.0),
            t_range: (0.0, 1.0),
        }
    }
}

impl SampleGrid {
    fn axis(n: usize, (lo, hi): (f64, f64)) -> Vec<f64> {
        if n == 1 {
            return vec![lo];
        }
        (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        let xs = SampleGrid::axis(self.nx, self.x_range);
        let ts = SampleGrid::axis(self.nt, self.t_range);
        ts.iter()
            .flat_map(|&t| xs.iter().map(move |&x| (x, t)))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymbolicErrorConfig {
    pub n_polys: usize,
    pub grid: SampleGrid,
    pub seed: u64,
}

impl Default for SymbolicErrorConfig {
    fn default() -> Self {
        SymbolicErrorConfig {
            n_polys: 10,
            grid: SampleGrid::default(),
            seed: 0,
        }
    }
}

fn residual_values(
    eq: &Equation,
    field: &PolySurrogate,
    points: &[(f64, f64)],
) -> Result<Vec<f64>, EvalError> {
    let ev = Evaluator::with_vars(field, BTreeMap::new());
    points
        .iter()
        .map(|&(x, t)| ev.eval(&eq.residual, x, t))
        .collect()
}

/// Mean relative L2 discrepancy between the residuals of `learned` and
/// `truth` with random polynomial surrogates substituted for the field.
pub fn symbolic_error(
    learned: &Equation,
    truth: &Equation,
    cfg: &SymbolicErrorConfig,
) -> Result<f64, MetricsError> {
    let points = cfg.grid.points();
    let mut total = 0.0;
    for k in 0..cfg.n_polys {
        let (surrogate, truth_vals) = (0..MAX_SURROGATE_DRAWS)
            .find_map(|attempt| {
                let mut rng = rng::stream(cfg.seed, &[SURROGATE_STREAM, k as u64, attempt]);
                let p = PolySurrogate::random(&mut rng);
                match residual_values(truth, &p, &points) {
                    Ok(v) if (norm_sq(&v) / v.len() as f64).sqrt() < MIN_RESIDUAL_RMS => None,
                    other => Some(other.map(|v| (p, v))),
                }
            })
            .ok_or(MetricsError::DegenerateReference)??;
        let learned_vals = residual_values(learned, &surrogate, &points)?;
        total += rel_l2(&truth_vals, &learned_vals)?;
    }
    Ok(total / cfg.n_polys as f64)
}

/// Share of `generated` sequences that decode and have symbolic error below 1.
pub fn valid_fraction(
    generated: &[TokenSeq],
    truths: &[Equation],
    cfg: &SymbolicErrorConfig,
) -> f64 {
    if generated.is_empty() {
        return 0.0;
    }
    let valid = generated
        .iter()
        .zip(truths)
        .filter(|(seq, truth)| {
            from_tokens(seq)
                .map_err(MetricsError::from)
                .and_then(|eq| symbolic_error(&eq, truth, cfg))
                .is_ok_and(|err| err < 1.0)
        })
        .count();
    valid as f64 / generated.len() as f64
}

/// Relative L2 error of re-simulating `law` from the first frame of `truth`.
pub fn law_time_series_error(
    law: &ConservationLaw,
    truth: &SpaceTimeField,
) -> Result<f64, MetricsError> {
    let predicted = solver::solve_at(law, truth.frame(0), &truth.grid, &truth.times)?;
    rel_l2(&truth.values, &predicted.values)
}

/// Relative L2 error of re-simulating `refined` from `u0` over the
/// timestamps of `truth`.
pub fn time_series_error(
    refined: &Equation,
    u0: &[f64],
    truth: &SpaceTimeField,
) -> Result<f64, MetricsError> {
    let law = ConservationLaw::from_equation(refined)?;
    let predicted = solver::solve_at(&law, u0, &truth.grid, &truth.times)?;
    rel_l2(&truth.values, &predicted.values)
}

/// Standardize with the scalar mean and standard deviation of all entries.
pub fn normalize(field: &SpaceTimeField) -> Result<(SpaceTimeField, f64, f64), MetricsError> {
    let n = field.values.len() as f64;
    let mean = field.values.iter().sum::<f64>() / n;
    let var = field
        .values
        .iter()
        .map(|v| (v - mean) * (v - mean))
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(MetricsError::DegenerateReference);
    }
    let mut out = field.clone();
    out.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
    Ok((out, mean, std))
}

pub fn denormalize(field: &SpaceTimeField, mean: f64, std: f64) -> SpaceTimeField {
    let mut out = field.clone();
    out.values.iter_mut().for_each(|v| *v = *v * std + mean);
    out
}

/// One row of an evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rel_l2: Option<f64>,
    pub r2: Option<f64>,
    pub symbolic_error: Option<f64>,
    pub valid_fraction: Option<f64>,
    pub time_series_error: Option<f64>,
}
