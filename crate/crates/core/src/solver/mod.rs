//! Finite-volume solver for scalar conservation laws
//! `u_t + q1 (f(u))_x = q2 u_xx` on a periodic 1-D grid.
//!
//! Fluxes are local Lax-Friedrichs (Rusanov), diffusion is the central
//! second difference, and time integration is Heun's method (two forward
//! Euler stages averaged) with an adaptive CFL step.

mod gridfile;
mod symbolic;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use gridfile::{read_grid, read_grid_file, write_grid, write_grid_file, GridFileError};

/// Safety factor applied to the stability limit.
pub const CFL_SAFETY: f64 = 0.4;
/// Step used when neither advection nor diffusion limits the step.
pub const DT_MAX: f64 = 1e-2;
/// Heun steps allowed for one call to [`advance`] before giving up.
pub const MAX_STEPS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("time step {dt} exceeds the stability limit {limit}")]
    CflViolation { dt: f64, limit: f64 },
    #[error("solution became non-finite")]
    NonFinite,
    #[error("stable step {dt:e} needs more than {max_steps} steps to cover {duration}")]
    StepLimit {
        dt: f64,
        duration: f64,
        max_steps: usize,
    },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("equation is not a supported conservation law: {0}")]
    NotSolvable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FluxKind {
    /// `f(u) = u^2`
    Quadratic,
    /// `f(u) = u^3`
    Cubic,
    /// `f(u) = sin(u)`
    Sine,
}

impl FluxKind {
    #[inline]
    pub fn f(self, u: f64) -> f64 {
        match self {
            FluxKind::Quadratic => u * u,
            FluxKind::Cubic => u * u * u,
            FluxKind::Sine => u.sin(),
        }
    }

    #[inline]
    pub fn df(self, u: f64) -> f64 {
        match self {
            FluxKind::Quadratic => 2.0 * u,
            FluxKind::Cubic => 3.0 * u * u,
            FluxKind::Sine => u.cos(),
        }
    }
}

/// `u_t + q1 (f(u))_x = q2 u_xx`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConservationLaw {
    pub flux: FluxKind,
    pub q1: f64,
    pub q2: f64,
}

impl ConservationLaw {
    pub fn new(flux: FluxKind, q1: f64, q2: f64) -> Result<Self, SolverError> {
        if !q1.is_finite() || !q2.is_finite() || q2 < 0.0 {
            return Err(SolverError::InvalidArgument(format!(
                "coefficients q1={q1}, q2={q2} (need finite, q2 >= 0)"
            )));
        }
        Ok(ConservationLaw { flux, q1, q2 })
    }

    pub fn inviscid(&self) -> bool {
        self.q2 == 0.0
    }
}

/// Uniform periodic grid with nodes `x_i = x0 + i*dx`, `i < nx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub nx: usize,
    pub x0: f64,
    pub dx: f64,
}

impl Grid1D {
    pub fn periodic(nx: usize, x0: f64, length: f64) -> Result<Grid1D, SolverError> {
        if nx < 8 {
            return Err(SolverError::InvalidGrid(format!("nx={nx} < 8")));
        }
        if !(length > 0.0) || !x0.is_finite() || !length.is_finite() {
            return Err(SolverError::InvalidGrid(format!("domain length {length}")));
        }
        Ok(Grid1D {
            nx,
            x0,
            dx: length / nx as f64,
        })
    }

    pub fn length(&self) -> f64 {
        self.dx * self.nx as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x0 + i as f64 * self.dx
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }

    /// `sum u_i * dx`
    pub fn integral(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() * self.dx
    }

    /// Discrete L2 norm `sqrt(sum u_i^2 * dx)`.
    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        (u.iter().map(|v| v * v).sum::<f64>() * self.dx).sqrt()
    }
}

/// Solution snapshots stored time-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeField {
    pub grid: Grid1D,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(grid: Grid1D, times: Vec<f64>, values: Vec<f64>) -> Result<Self, SolverError> {
        if values.len() != times.len() * grid.nx {
            return Err(SolverError::InvalidArgument(format!(
                "{} values for {} frames of {} cells",
                values.len(),
                times.len(),
                grid.nx
            )));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(SolverError::InvalidArgument(
                "times not strictly increasing".into(),
            ));
        }
        Ok(SpaceTimeField {
            grid,
            times,
            values,
        })
    }

    pub fn nt(&self) -> usize {
        self.times.len()
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let nx = self.grid.nx;
        &self.values[k * nx..(k + 1) * nx]
    }

    pub fn frames(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.grid.nx)
    }

    /// The first `n` frames.
    pub fn truncated(&self, n: usize) -> SpaceTimeField {
        let n = n.min(self.nt());
        SpaceTimeField {
            grid: self.grid,
            times: self.times[..n].to_vec(),
            values: self.values[..n * self.grid.nx].to_vec(),
        }
    }
}

/// Largest stable step for `u`, scaled by [`CFL_SAFETY`].
pub fn cfl_dt(law: &ConservationLaw, u: &[f64], grid: &Grid1D) -> f64 {
    let speed = u
        .iter()
        .map(|&v| (law.q1 * law.flux.df(v)).abs())
        .fold(0.0, f64::max);
    let advective = if speed > 0.0 {
        grid.dx / speed
    } else {
        f64::INFINITY
    };
    let diffusive = if law.q2 > 0.0 {
        grid.dx * grid.dx / (2.0 * law.q2)
    } else {
        f64::INFINITY
    };
    let limit = advective.min(diffusive);
    if limit.is_finite() {
        CFL_SAFETY * limit
    } else {
        DT_MAX
    }
}

/// Spatial operator `L(u) = -(F_{i+1/2} - F_{i-1/2})/dx + q2 (u_{i+1} - 2u_i + u_{i-1})/dx^2`.
fn rhs(law: &ConservationLaw, u: &[f64], dx: f64, flux: &mut [f64], out: &mut [f64]) {
    let n = u.len();
    for i in 0..n {
        let (l, r) = (u[i], u[(i + 1) % n]);
        let a = (law.q1 * law.flux.df(l))
            .abs()
            .max((law.q1 * law.flux.df(r)).abs());
        flux[i] = 0.5 * (law.q1 * law.flux.f(l) + law.q1 * law.flux.f(r)) - 0.5 * a * (r - l);
    }
    let inv_dx = 1.0 / dx;
    let diff = law.q2 * inv_dx * inv_dx;
    for i in 0..n {
        let left = (i + n - 1) % n;
        let right = (i + 1) % n;
        let mut v = -(flux[i] - flux[left]) * inv_dx;
        if law.q2 != 0.0 {
            v += diff * (u[right] - 2.0 * u[i] + u[left]);
        }
        out[i] = v;
    }
}

fn check_finite(u: &[f64]) -> Result<(), SolverError> {
    if u.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SolverError::NonFinite)
    }
}

fn check_cfl(law: &ConservationLaw, u: &[f64], dt: f64, grid: &Grid1D) -> Result<(), SolverError> {
    let limit = cfl_dt(law, u, grid);
    if dt > limit {
        Err(SolverError::CflViolation { dt, limit })
    } else {
        Ok(())
    }
}

/// Reusable buffers for repeated stepping on one grid.
struct Workspace {
    flux: Vec<f64>,
    rate: Vec<f64>,
    stage: Vec<f64>,
    second: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Workspace {
            flux: vec![0.0; n],
            rate: vec![0.0; n],
            stage: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    fn euler(&mut self, law: &ConservationLaw, u: &[f64], dt: f64, dx: f64, out: &mut [f64]) {
        rhs(law, u, dx, &mut self.flux, &mut self.rate);
        for ((o, &v), &r) in out.iter_mut().zip(u).zip(&self.rate) {
            *o = v + dt * r;
        }
    }

    fn heun(&mut self, law: &ConservationLaw, u: &mut [f64], dt: f64, dx: f64) {
        let mut stage = std::mem::take(&mut self.stage);
        let mut second = std::mem::take(&mut self.second);
        self.euler(law, u, dt, dx, &mut stage);
        self.euler(law, &stage, dt, dx, &mut second);
        for (v, s) in u.iter_mut().zip(&second) {
            *v = 0.5 * *v + 0.5 * s;
        }
        self.stage = stage;
        self.second = second;
    }
}

/// One forward-Euler update.
pub fn step(
    law: &ConservationLaw,
    u: &[f64],
    dt: f64,
    grid: &Grid1D,
) -> Result<Vec<f64>, SolverError> {
    check_len(u, grid)?;
    check_cfl(law, u, dt, grid)?;
    let mut out = vec![0.0; u.len()];
    Workspace::new(u.len()).euler(law, u, dt, grid.dx, &mut out);
    check_finite(&out)?;
    Ok(out)
}

/// One Heun (two-stage) update.
pub fn heun_step(
    law: &ConservationLaw,
    u: &[f64],
    dt: f64,
    grid: &Grid1D,
) -> Result<Vec<f64>, SolverError> {
    check_len(u, grid)?;
    check_cfl(law, u, dt, grid)?;
    let mut out = u.to_vec();
    Workspace::new(u.len()).heun(law, &mut out, dt, grid.dx);
    check_finite(&out)?;
    Ok(out)
}

fn check_len(u: &[f64], grid: &Grid1D) -> Result<(), SolverError> {
    if u.len() != grid.nx {
        return Err(SolverError::InvalidArgument(format!(
            "state has {} cells, grid has {}",
            u.len(),
            grid.nx
        )));
    }
    Ok(())
}

/// Integrate `u` forward by `duration` with adaptive Heun steps, landing
/// exactly on the end time.
pub fn advance(
    law: &ConservationLaw,
    u: &[f64],
    grid: &Grid1D,
    duration: f64,
) -> Result<Vec<f64>, SolverError> {
    check_len(u, grid)?;
    let mut state = u.to_vec();
    let mut ws = Workspace::new(u.len());
    advance_in_place(law, &mut state, grid, duration, &mut ws)?;
    Ok(state)
}

fn advance_in_place(
    law: &ConservationLaw,
    u: &mut [f64],
    grid: &Grid1D,
    duration: f64,
    ws: &mut Workspace,
) -> Result<(), SolverError> {
    if !duration.is_finite() || duration < 0.0 {
        return Err(SolverError::InvalidArgument(format!("duration {duration}")));
    }
    let mut elapsed = 0.0;
    let mut steps = 0;
    while elapsed < duration {
        let remaining = duration - elapsed;
        let dt = cfl_dt(law, u, grid);
        steps += 1;
        if steps > MAX_STEPS || !(dt > 0.0) {
            return Err(SolverError::StepLimit {
                dt,
                duration,
                max_steps: MAX_STEPS,
            });
        }
        let (dt, last) = if dt >= remaining {
            (remaining, true)
        } else {
            (dt, false)
        };
        ws.heun(law, u, dt, grid.dx);
        check_finite(u)?;
        elapsed = if last { duration } else { elapsed + dt };
    }
    Ok(())
}

/// `nt_out` uniform timestamps `k * t_final / (nt_out - 1)`.
pub fn uniform_times(t_final: f64, nt_out: usize) -> Vec<f64> {
    let denom = (nt_out - 1) as f64;
    (0..nt_out).map(|k| t_final * k as f64 / denom).collect()
}

/// Solve from `u0` and sample at `nt_out` uniform times over `[0, t_final]`.
pub fn solve(
    law: &ConservationLaw,
    u0: &[f64],
    grid: &Grid1D,
    t_final: f64,
    nt_out: usize,
) -> Result<SpaceTimeField, SolverError> {
    if !(t_final > 0.0) {
        return Err(SolverError::InvalidArgument(format!("t_final {t_final}")));
    }
    if nt_out < 2 {
        return Err(SolverError::InvalidArgument(format!("nt_out {nt_out} < 2")));
    }
    solve_at(law, u0, grid, &uniform_times(t_final, nt_out))
}

/// Solve from `u0` (given at `times[0]`) and sample at each of `times`.
pub fn solve_at(
    law: &ConservationLaw,
    u0: &[f64],
    grid: &Grid1D,
    times: &[f64],
) -> Result<SpaceTimeField, SolverError> {
    check_len(u0, grid)?;
    check_finite(u0)?;
    if times.is_empty() {
        return Err(SolverError::InvalidArgument("no output times".into()));
    }
    let mut values = Vec::with_capacity(times.len() * grid.nx);
    values.extend_from_slice(u0);
    let mut state = u0.to_vec();
    let mut ws = Workspace::new(grid.nx);
    for w in times.windows(2) {
        advance_in_place(law, &mut state, grid, w[1] - w[0], &mut ws)?;
        values.extend_from_slice(&state);
    }
    SpaceTimeField::new(*grid, times.to_vec(), values)
}
