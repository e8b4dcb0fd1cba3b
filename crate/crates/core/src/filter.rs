//! Sequential Monte Carlo refinement of equation coefficients against an
//! observed trajectory.
//!
//! Each step perturbs every particle with Gaussian process noise, advances
//! the previous observed frame with the particle's coefficients, weights the
//! particle by a Gaussian likelihood of the next observed frame, and
//! resamples through the weighted empirical CDF. The refined estimate is the
//! ensemble mean after the last step.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par::map_indexed;
use crate::rng;
use crate::solver::{self, ConservationLaw, FluxKind, Grid1D, SolverError, SpaceTimeField};

const INIT_STREAM: u64 = 11;
const PROPAGATE_STREAM: u64 = 12;
const RESAMPLE_STREAM: u64 = 13;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error("initial coefficient {0} is zero; the relative prior interval is empty")]
    ZeroCoefficient(usize),
    #[error("expected {expected} coefficients, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("need at least {needed} observation frames, have {have}")]
    TooFewFrames { needed: usize, have: usize },
    #[error("every particle produced a non-finite simulation")]
    AllWeightsDegenerate,
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// How the residual between a simulated and an observed frame is scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    /// Independent Gaussian noise at every grid point:
    /// `-sum_i r_i^2 / (2 eps^2)`.
    PerPoint,
    /// One Gaussian on the discrete L2 norm of the residual:
    /// `-sum_i r_i^2 dx / (2 eps^2)`.
    FieldNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub particles: usize,
    pub steps: usize,
    pub process_var: f64,
    /// Observation noise scale relative to the L2 norm of the first frame.
    pub obs_scale: f64,
    pub init_rel_halfwidth: f64,
    pub likelihood: Likelihood,
    pub seed: u64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            particles: 500,
            steps: 10,
            process_var: 1e-5,
            obs_scale: 0.05,
            init_rel_halfwidth: 0.1,
            likelihood: Likelihood::PerPoint,
            seed: 0,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), FilterError> {
        let bad = |m: String| Err(FilterError::InvalidConfig(m));
        if self.particles < 2 {
            return bad(format!("particles = {} < 2", self.particles));
        }
        if self.steps < 1 {
            return bad("steps must be at least 1".into());
        }
        if !(self.process_var >= 0.0) || !self.process_var.is_finite() {
            return bad(format!("process_var = {}", self.process_var));
        }
        if !(self.obs_scale > 0.0) || !self.obs_scale.is_finite() {
            return bad(format!("obs_scale = {}", self.obs_scale));
        }
        if !(self.init_rel_halfwidth >= 0.0) || !self.init_rel_halfwidth.is_finite() {
            return bad(format!("init_rel_halfwidth = {}", self.init_rel_halfwidth));
        }
        Ok(())
    }
}

/// Which coefficients of a conservation law are being refined:
/// `[q1]` for inviscid laws, `[q1, q2]` for viscous ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LawTemplate {
    pub flux: FluxKind,
    pub viscous: bool,
}

impl LawTemplate {
    pub fn of(law: &ConservationLaw) -> LawTemplate {
        LawTemplate {
            flux: law.flux,
            viscous: law.q2 != 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        if self.viscous {
            2
        } else {
            1
        }
    }

    pub fn coefficients(&self, law: &ConservationLaw) -> Vec<f64> {
        if self.viscous {
            vec![law.q1, law.q2]
        } else {
            vec![law.q1]
        }
    }

    /// `None` if the coefficients do not describe a valid law (e.g. negative viscosity).
    pub fn law(&self, coeffs: &[f64]) -> Option<ConservationLaw> {
        let q2 = if self.viscous { coeffs[1] } else { 0.0 };
        ConservationLaw::new(self.flux, coeffs[0], q2).ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleEnsemble {
    pub particles: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Unweighted mean of each coordinate.
    pub fn mean(&self) -> Vec<f64> {
        let m = self.len() as f64;
        let d = self.particles.first().map_or(0, Vec::len);
        (0..d)
            .map(|j| self.particles.iter().map(|p| p[j]).sum::<f64>() / m)
            .collect()
    }

    /// Unweighted standard deviation of each coordinate.
    pub fn spread(&self) -> Vec<f64> {
        let m = self.len() as f64;
        self.mean()
            .iter()
            .enumerate()
            .map(|(j, mu)| {
                (self
                    .particles
                    .iter()
                    .map(|p| (p[j] - mu).powi(2))
                    .sum::<f64>()
                    / m)
                    .sqrt()
            })
            .collect()
    }

    /// `1 / sum p_i^2`.
    pub fn ess(&self) -> f64 {
        1.0 / self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Observed frames consumed by the filter, one per step plus the start.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeq {
    pub grid: Grid1D,
    pub frames: Vec<(f64, Vec<f64>)>,
}

impl ObservationSeq {
    /// The first `n` frames of a trajectory.
    pub fn from_field(field: &SpaceTimeField, n: usize) -> ObservationSeq {
        ObservationSeq {
            grid: field.grid,
            frames: field
                .frames()
                .zip(&field.times)
                .take(n)
                .map(|(u, &t)| (t, u.to_vec()))
                .collect(),
        }
    }

    /// Standard deviation of the observation noise, `obs_scale * ||u(t_0)||`.
    pub fn noise_scale(&self, obs_scale: f64) -> f64 {
        obs_scale * self.grid.l2_norm(&self.frames[0].1)
    }
}

pub fn init_ensemble(alpha0: &[f64], cfg: &FilterConfig) -> Result<ParticleEnsemble, FilterError> {
    cfg.validate()?;
    if let Some(j) = alpha0.iter().position(|&a| a == 0.0) {
        return Err(FilterError::ZeroCoefficient(j));
    }
    let h = cfg.init_rel_halfwidth;
    let particles = map_indexed(cfg.particles, |i| {
        let mut rng = rng::stream(cfg.seed, &[INIT_STREAM, i as u64]);
        alpha0
            .iter()
            .map(|&a| {
                let (lo, hi) = ((1.0 - h) * a, (1.0 + h) * a);
                let (lo, hi) = (lo.min(hi), lo.max(hi));
                if lo == hi {
                    a
                } else {
                    rng.random_range(lo..=hi)
                }
            })
            .collect()
    });
    let m = cfg.particles;
    Ok(ParticleEnsemble {
        particles,
        weights: vec![1.0 / m as f64; m],
    })
}

/// Add `N(0, process_var)` noise to every coordinate. `step` selects the
/// random stream so each refinement step draws fresh noise.
pub fn propagate(ens: &ParticleEnsemble, cfg: &FilterConfig, step: usize) -> ParticleEnsemble {
    if cfg.process_var == 0.0 {
        return ens.clone();
    }
    let noise = Normal::new(0.0, cfg.process_var.sqrt()).expect("finite positive std");
    let particles = map_indexed(ens.len(), |i| {
        let mut rng = rng::stream(cfg.seed, &[PROPAGATE_STREAM, step as u64, i as u64]);
        ens.particles[i]
            .iter()
            .map(|a| a + noise.sample(&mut rng))
            .collect()
    });
    ParticleEnsemble {
        particles,
        weights: ens.weights.clone(),
    }
}

/// Log-likelihood of `observed` given `simulated`, up to a constant.
pub fn log_likelihood(
    simulated: &[f64],
    observed: &[f64],
    grid: &Grid1D,
    sigma: f64,
    mode: Likelihood,
) -> f64 {
    let sq: f64 = simulated
        .iter()
        .zip(observed)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let sq = match mode {
        Likelihood::PerPoint => sq,
        Likelihood::FieldNorm => sq * grid.dx,
    };
    -sq / (2.0 * sigma * sigma)
}

/// Normalized weights from log-weights; `-inf` entries get weight 0.
pub fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>, FilterError> {
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(FilterError::AllWeightsDegenerate);
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|v| v / total).collect())
}

/// Weight each particle by how well it carries `u_prev` to `u_obs` over `dt_obs`.
#[allow(clippy::too_many_arguments)]
pub fn reweight(
    ens: &ParticleEnsemble,
    u_prev: &[f64],
    u_obs: &[f64],
    template: &LawTemplate,
    cfg: &FilterConfig,
    grid: &Grid1D,
    dt_obs: f64,
    sigma: f64,
) -> Result<ParticleEnsemble, FilterError> {
    if u_prev.len() != grid.nx || u_obs.len() != grid.nx {
        return Err(FilterError::DimensionMismatch {
            expected: grid.nx,
            got: u_prev.len().min(u_obs.len()),
        });
    }
    let log_w = map_indexed(ens.len(), |i| {
        let Some(law) = template.law(&ens.particles[i]) else {
            return f64::NEG_INFINITY;
        };
        match solver::advance(&law, u_prev, grid, dt_obs) {
            Ok(sim) => log_likelihood(&sim, u_obs, grid, sigma, cfg.likelihood),
            Err(_) => f64::NEG_INFINITY,
        }
    });
    Ok(ParticleEnsemble {
        particles: ens.particles.clone(),
        weights: normalize_log_weights(&log_w)?,
    })
}

/// `n_draws` multinomial draws of indices with probabilities `weights`,
/// by inverting the cumulative distribution.
pub fn resample_indices(weights: &[f64], n_draws: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let last = weights.len() - 1;
    (0..n_draws)
        .map(|_| {
            let u = rng.random::<f64>() * acc;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect()
}

/// Multinomial resampling back to uniform weights.
pub fn resample(ens: &ParticleEnsemble, cfg: &FilterConfig, step: usize) -> ParticleEnsemble {
    let mut rng = rng::stream(cfg.seed, &[RESAMPLE_STREAM, step as u64]);
    let m = ens.len();
    let particles = resample_indices(&ens.weights, m, &mut rng)
        .into_iter()
        .map(|i| ens.particles[i].clone())
        .collect();
    ParticleEnsemble {
        particles,
        weights: vec![1.0 / m as f64; m],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Refinement {
    pub coefficients: Vec<f64>,
    pub ess_per_step: Vec<f64>,
    pub spread_per_step: Vec<Vec<f64>>,
}

pub fn refine(
    alpha0: &[f64],
    obs: &ObservationSeq,
    template: &LawTemplate,
    cfg: &FilterConfig,
) -> Result<Refinement, FilterError> {
    refine_observed(alpha0, obs, template, cfg, |_, _| {})
}

/// [`refine`], calling `on_step(k, ensemble)` after the initial draw
/// (`k = 0`) and after each resampling step.
pub fn refine_observed(
    alpha0: &[f64],
    obs: &ObservationSeq,
    template: &LawTemplate,
    cfg: &FilterConfig,
    mut on_step: impl FnMut(usize, &ParticleEnsemble),
) -> Result<Refinement, FilterError> {
    cfg.validate()?;
    if alpha0.len() != template.dim() {
        return Err(FilterError::DimensionMismatch {
            expected: template.dim(),
            got: alpha0.len(),
        });
    }
    if obs.frames.len() < cfg.steps + 1 {
        return Err(FilterError::TooFewFrames {
            needed: cfg.steps + 1,
            have: obs.frames.len(),
        });
    }
    let sigma = obs.noise_scale(cfg.obs_scale);
    if !(sigma > 0.0) {
        return Err(FilterError::InvalidConfig(
            "first observed frame is zero".into(),
        ));
    }
    let mut ens = init_ensemble(alpha0, cfg)?;
    on_step(0, &ens);
    let mut ess_per_step = Vec::with_capacity(cfg.steps);
    let mut spread_per_step = Vec::with_capacity(cfg.steps);
    for k in 1..=cfg.steps {
        let (t_prev, u_prev) = &obs.frames[k - 1];
        let (t_obs, u_obs) = &obs.frames[k];
        ens = propagate(&ens, cfg, k);
        ens = reweight(
            &ens,
            u_prev,
            u_obs,
            template,
            cfg,
            &obs.grid,
            t_obs - t_prev,
            sigma,
        )?;
        ess_per_step.push(ens.ess());
        ens = resample(&ens, cfg, k);
        spread_per_step.push(ens.spread());
        on_step(k, &ens);
    }
    Ok(Refinement {
        coefficients: ens.mean(),
        ess_per_step,
        spread_per_step,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn cfg(particles: usize, seed: u64) -> FilterConfig {
        FilterConfig {
            particles,
            seed,
            ..FilterConfig::default()
        }
    }

    #[test]
    fn initial_cloud_within_interval() {
        let ens = init_ensemble(&[1.0], &cfg(500, 1)).unwrap();
        assert_eq!(ens.len(), 500);
        assert!(ens.particles.iter().all(|p| (0.9..=1.1).contains(&p[0])));
        assert!(ens.weights.iter().all(|&w| w == 0.002));

        let ens = init_ensemble(&[0.5, 0.01], &cfg(200, 2)).unwrap();
        assert!(ens.particles.iter().all(|p| (0.45..=0.55).contains(&p[0])));
        assert!(ens
            .particles
            .iter()
            .all(|p| (0.009..=0.011).contains(&p[1])));
    }

    #[test]
    fn degenerate_interval_and_zero_coefficient() {
        let c = FilterConfig {
            init_rel_halfwidth: 0.0,
            ..cfg(10, 0)
        };
        let ens = init_ensemble(&[0.7], &c).unwrap();
        assert!(ens.particles.iter().all(|p| p[0] == 0.7));
        assert_eq!(
            init_ensemble(&[0.7, 0.0], &c),
            Err(FilterError::ZeroCoefficient(1))
        );
    }

    #[test]
    fn zero_process_noise_is_identity() {
        let c = FilterConfig {
            process_var: 0.0,
            ..cfg(20, 4)
        };
        let ens = init_ensemble(&[0.3], &c).unwrap();
        assert_eq!(propagate(&ens, &c, 1), ens);
    }

    #[test]
    fn process_noise_variance() {
        let c = cfg(100_000, 9);
        let ens = ParticleEnsemble {
            particles: vec![vec![0.0]; 100_000],
            weights: vec![1e-5; 100_000],
        };
        let moved = propagate(&ens, &c, 1);
        let var = moved.particles.iter().map(|p| p[0] * p[0]).sum::<f64>() / 1e5;
        assert!((0.9e-5..=1.1e-5).contains(&var), "{var}");
        let mean = moved.mean()[0];
        assert!(mean.abs() <= 4.0 * (1e-5f64 / 1e5).sqrt());
    }

    #[test]
    fn weight_ratio_matches_gaussian() {
        let lw = [-1.0, -4.0];
        let w = normalize_log_weights(&lw).unwrap();
        assert!((w[0] / w[1] - 3f64.exp()).abs() < 1e-12);
        assert_eq!(
            normalize_log_weights(&[f64::NEG_INFINITY; 3]),
            Err(FilterError::AllWeightsDegenerate)
        );
        let w = normalize_log_weights(&[-1e6, -1e6 - 1.0, f64::NEG_INFINITY]).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(w[2], 0.0);
    }

    #[test]
    fn point_mass_resampling() {
        let ens = ParticleEnsemble {
            particles: vec![vec![1.0], vec![2.0], vec![3.0]],
            weights: vec![0.0, 1.0, 0.0],
        };
        let out = resample(&ens, &cfg(3, 0), 1);
        assert!(out.particles.iter().all(|p| p[0] == 2.0));
    }

    #[test]
    fn multinomial_counts() {
        let mut rng = rng::stream(5, &[]);
        let idx = resample_indices(&[0.75, 0.25], 10_000, &mut rng);
        let first = idx.iter().filter(|&&i| i == 0).count();
        assert!((7350..=7650).contains(&first), "{first}");
    }

    #[test]
    fn true_coefficient_outweighs_offset_one() {
        let grid = Grid1D::periodic(128, 0.0, 1.0).unwrap();
        let u0: Vec<f64> = grid.nodes().iter().map(|x| (2.0 * PI * x).sin()).collect();
        let law = ConservationLaw::new(FluxKind::Quadratic, 0.5, 0.0).unwrap();
        let dt = 1.0 / 31.0;
        let u1 = solver::advance(&law, &u0, &grid, dt).unwrap();
        let ens = ParticleEnsemble {
            particles: vec![vec![0.5], vec![0.55]],
            weights: vec![0.5, 0.5],
        };
        let template = LawTemplate::of(&law);
        for mode in [Likelihood::PerPoint, Likelihood::FieldNorm] {
            let c = FilterConfig {
                likelihood: mode,
                ..cfg(2, 0)
            };
            let out = reweight(&ens, &u0, &u1, &template, &c, &grid, dt, 0.05).unwrap();
            assert!(out.weights[0] > out.weights[1]);
        }
    }

    #[test]
    fn refine_is_deterministic_and_close() {
        let grid = Grid1D::periodic(64, 0.0, 1.0).unwrap();
        let u0: Vec<f64> = grid.nodes().iter().map(|x| (2.0 * PI * x).sin()).collect();
        let law = ConservationLaw::new(FluxKind::Quadratic, 0.5, 0.0).unwrap();
        let field = solver::solve(&law, &u0, &grid, 1.0, 32).unwrap();
        let obs = ObservationSeq::from_field(&field, 6);
        let c = FilterConfig {
            steps: 5,
            ..cfg(100, 3)
        };
        let template = LawTemplate::of(&law);
        let a = refine(&[0.5], &obs, &template, &c).unwrap();
        let b = refine(&[0.5], &obs, &template, &c).unwrap();
        assert_eq!(a, b);
        assert!((a.coefficients[0] - 0.5).abs() <= 5.0 * (5.0 * 1e-5f64).sqrt());
        assert_eq!(a.ess_per_step.len(), 5);
    }

    #[test]
    fn too_few_frames() {
        let grid = Grid1D::periodic(16, 0.0, 1.0).unwrap();
        let obs = ObservationSeq {
            grid,
            frames: vec![(0.0, vec![1.0; 16])],
        };
        let template = LawTemplate {
            flux: FluxKind::Sine,
            viscous: false,
        };
        assert_eq!(
            refine(&[1.0], &obs, &template, &cfg(10, 0)),
            Err(FilterError::TooFewFrames {
                needed: 11,
                have: 1
            })
        );
    }
}
