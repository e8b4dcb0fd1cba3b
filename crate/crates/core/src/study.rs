//! Coefficient-refinement study: start from coefficients with a known
//! relative error, refine them against the observed trajectory, and compare
//! symbolic and time-series errors before and after refinement.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{generate_sample, Family};
use crate::filter::{self, FilterConfig, FilterError, LawTemplate, ObservationSeq};
use crate::metrics::{self, MetricsError, SymbolicErrorConfig};
use crate::par::map_indexed;
use crate::rng;
use crate::solver::SolverError;

const SAMPLE_STREAM: u64 = 41;
const SIGN_STREAM: u64 = 42;
const FILTER_STREAM: u64 = 43;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyError {
    #[error("trials must be at least 1")]
    NoTrials,
    #[error("{family} trial {trial}: {source}")]
    Filter {
        family: Family,
        trial: usize,
        source: FilterError,
    },
    #[error("{family} trial {trial}: {source}")]
    Metrics {
        family: Family,
        trial: usize,
        source: MetricsError,
    },
    #[error("{family} trial {trial}: {source}")]
    Solver {
        family: Family,
        trial: usize,
        source: SolverError,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub families: Vec<Family>,
    pub trials: usize,
    /// Relative error applied to every true coefficient with a random sign.
    pub coeff_error: f64,
    pub filter: FilterConfig,
    pub symbolic: SymbolicErrorConfig,
    pub seed: u64,
}

/// The five families with a refinement row in the reference results.
pub const TABLE_FAMILIES: [Family; 5] = [
    Family::Burgers,
    Family::InviscidBurgers,
    Family::ClCubic,
    Family::IclCubic,
    Family::IclSine,
];

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            families: TABLE_FAMILIES.to_vec(),
            trials: 20,
            coeff_error: 0.03,
            filter: FilterConfig::default(),
            symbolic: SymbolicErrorConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub family: Family,
    pub trial: usize,
    pub true_coefficients: Vec<f64>,
    pub initial_coefficients: Vec<f64>,
    pub refined_coefficients: Vec<f64>,
    pub symbolic_error_without: f64,
    pub symbolic_error_with: f64,
    pub time_series_error_without: f64,
    pub time_series_error_with: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySummary {
    pub family: Family,
    pub expression: String,
    pub trials: usize,
    pub symbolic_error_without: f64,
    pub symbolic_error_with: f64,
    pub time_series_error_without: f64,
    pub time_series_error_with: f64,
}

impl FamilySummary {
    /// Both mean errors are lower after refinement.
    pub fn improved(&self) -> bool {
        self.symbolic_error_with < self.symbolic_error_without
            && self.time_series_error_with < self.time_series_error_without
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub config: StudyConfig,
    pub summaries: Vec<FamilySummary>,
    pub trials: Vec<TrialRecord>,
}

pub fn expression(family: Family) -> &'static str {
    match family {
        Family::Burgers => "u_t + q1*(u^2)_x = q2*u_xx",
        Family::InviscidBurgers => "u_t + q*(u^2)_x = 0",
        Family::ClCubic => "u_t + q1*(u^3)_x = q2*u_xx",
        Family::IclCubic => "u_t + q*(u^3)_x = 0",
        Family::ClSine => "u_t + q1*(sin(u))_x = q2*u_xx",
        Family::IclSine => "u_t + q*(sin(u))_x = 0",
    }
}

fn run_trial(
    cfg: &StudyConfig,
    family_idx: usize,
    trial: usize,
) -> Result<TrialRecord, StudyError> {
    let family = cfg.families[family_idx];
    let spec = family.spec();
    let (f, t) = (family_idx as u64, trial as u64);
    let solver_err = |source| StudyError::Solver {
        family,
        trial,
        source,
    };
    let metrics_err = |source| StudyError::Metrics {
        family,
        trial,
        source,
    };

    let sample_seed = rng::derive_seed(cfg.seed, &[SAMPLE_STREAM]);
    let sample = generate_sample(&spec, sample_seed, family_idx, trial, 0).map_err(solver_err)?;
    let template = LawTemplate::of(&sample.law);
    let truth = template.coefficients(&sample.law);

    let mut signs = rng::stream(cfg.seed, &[SIGN_STREAM, f, t]);
    let initial: Vec<f64> = truth
        .iter()
        .map(|q| {
            let sign = if signs.random_bool(0.5) { 1.0 } else { -1.0 };
            q * (1.0 + sign * cfg.coeff_error)
        })
        .collect();

    let filter_cfg = FilterConfig {
        seed: rng::derive_seed(cfg.seed, &[FILTER_STREAM, f, t]),
        ..cfg.filter.clone()
    };
    let obs = ObservationSeq::from_field(&sample.field, filter_cfg.steps + 1);
    let refined = filter::refine(&initial, &obs, &template, &filter_cfg)
        .map_err(|source| StudyError::Filter {
            family,
            trial,
            source,
        })?
        .coefficients;

    let truth_eq = sample.law.to_equation();
    let score = |coeffs: &[f64]| -> Result<(f64, f64), StudyError> {
        let law = template.law(coeffs).ok_or_else(|| {
            solver_err(SolverError::InvalidArgument(format!(
                "coefficients {coeffs:?}"
            )))
        })?;
        let sym = metrics::symbolic_error(&law.to_equation(), &truth_eq, &cfg.symbolic)
            .map_err(metrics_err)?;
        let ts = metrics::law_time_series_error(&law, &sample.field).map_err(metrics_err)?;
        Ok((sym, ts))
    };
    let (sym_without, ts_without) = score(&initial)?;
    let (sym_with, ts_with) = score(&refined)?;
    Ok(TrialRecord {
        family,
        trial,
        true_coefficients: truth,
        initial_coefficients: initial,
        refined_coefficients: refined,
        symbolic_error_without: sym_without,
        symbolic_error_with: sym_with,
        time_series_error_without: ts_without,
        time_series_error_with: ts_with,
    })
}

pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport, StudyError> {
    if cfg.trials == 0 {
        return Err(StudyError::NoTrials);
    }
    cfg.filter.validate().map_err(|source| StudyError::Filter {
        family: cfg.families.first().copied().unwrap_or(Family::Burgers),
        trial: 0,
        source,
    })?;
    let n = cfg.families.len() * cfg.trials;
    let trials = map_indexed(n, |k| run_trial(cfg, k / cfg.trials, k % cfg.trials))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let summaries = cfg
        .families
        .iter()
        .enumerate()
        .map(|(fi, &family)| {
            let rows = &trials[fi * cfg.trials..(fi + 1) * cfg.trials];
            let mean =
                |f: fn(&TrialRecord) -> f64| rows.iter().map(f).sum::<f64>() / rows.len() as f64;
            FamilySummary {
                family,
                expression: expression(family).to_string(),
                trials: rows.len(),
                symbolic_error_without: mean(|r| r.symbolic_error_without),
                symbolic_error_with: mean(|r| r.symbolic_error_with),
                time_series_error_without: mean(|r| r.time_series_error_without),
                time_series_error_with: mean(|r| r.time_series_error_with),
            }
        })
        .collect();
    Ok(StudyReport {
        config: cfg.clone(),
        summaries,
        trials,
    })
}

impl StudyReport {
    /// Plain-text table with errors in percent.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let groups = format!(
            "{:<49} {:^37} {:^37}",
            "", "Symbolic error", "Time-series error"
        );
        let _ = writeln!(out, "{}", groups.trim_end());
        let _ = writeln!(
            out,
            "{:<18} {:<30} {:>18} {:>18} {:>18} {:>18}",
            "family",
            "expression",
            "Without filtering",
            "With filtering",
            "Without filtering",
            "With filtering"
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{:<18} {:<30} {:>17.2}% {:>17.2}% {:>17.2}% {:>17.2}%",
                s.family.name(),
                s.expression,
                100.0 * s.symbolic_error_without,
                100.0 * s.symbolic_error_with,
                100.0 * s.time_series_error_without,
                100.0 * s.time_series_error_with
            );
        }
        out
    }

    pub fn csv(&self) -> String {
        let mut out = String::from(
            "family,trials,symbolic_error_without,symbolic_error_with,time_series_error_without,time_series_error_with\n",
        );
        for s in &self.summaries {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                s.family.name(),
                s.trials,
                s.symbolic_error_without,
                s.symbolic_error_with,
                s.time_series_error_without,
                s.time_series_error_with
            );
        }
        out
    }
}
