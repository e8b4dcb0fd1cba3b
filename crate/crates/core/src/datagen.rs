//! Synthetic datasets of conservation-law trajectories.
//!
//! Every sample is a jittered coefficient pair for one equation family, a
//! random multi-mode sine initial condition, and the solved trajectory.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::to_canonical_tokens;
use crate::par::map_indexed;
use crate::rng;
use crate::solver::{
    self, write_grid_file, ConservationLaw, FluxKind, Grid1D, GridFileError, SolverError,
    SpaceTimeField,
};

const PARAM_STREAM: u64 = 21;
const IC_STREAM: u64 = 22;
const IC_MODES: usize = 5;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("unknown family `{0}`")]
    UnknownFamily(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    GridFile(#[from] GridFileError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Burgers,
    InviscidBurgers,
    ClCubic,
    IclCubic,
    ClSine,
    IclSine,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Burgers,
        Family::InviscidBurgers,
        Family::ClCubic,
        Family::IclCubic,
        Family::ClSine,
        Family::IclSine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Burgers => "burgers",
            Family::InviscidBurgers => "inviscid_burgers",
            Family::ClCubic => "cl_cubic",
            Family::IclCubic => "icl_cubic",
            Family::ClSine => "cl_sine",
            Family::IclSine => "icl_sine",
        }
    }

    pub fn flux(self) -> FluxKind {
        match self {
            Family::Burgers | Family::InviscidBurgers => FluxKind::Quadratic,
            Family::ClCubic | Family::IclCubic => FluxKind::Cubic,
            Family::ClSine | Family::IclSine => FluxKind::Sine,
        }
    }

    pub fn viscous(self) -> bool {
        matches!(self, Family::Burgers | Family::ClCubic | Family::ClSine)
    }

    /// `(q1, q2)` before jitter.
    pub fn base_coeffs(self) -> (f64, f64) {
        match self {
            Family::Burgers => (0.5, 0.05),
            Family::InviscidBurgers => (0.5, 0.0),
            Family::ClCubic => (0.33, 0.05),
            Family::IclCubic => (0.33, 0.0),
            Family::ClSine => (1.0, 0.05),
            Family::IclSine => (1.0, 0.0),
        }
    }

    pub fn spec(self) -> FamilySpec {
        FamilySpec {
            family: self,
            base_coeffs: self.base_coeffs(),
            t_f: 1.0,
            x_f: 1.0,
            nx: 128,
            nt: 32,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = DatagenError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| DatagenError::UnknownFamily(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilySpec {
    pub family: Family,
    pub base_coeffs: (f64, f64),
    pub t_f: f64,
    pub x_f: f64,
    pub nx: usize,
    /// Total stored frames; the first half is the input window.
    pub nt: usize,
}

impl FamilySpec {
    pub fn grid(&self) -> Result<Grid1D, SolverError> {
        Grid1D::periodic(self.nx, 0.0, self.x_f)
    }

    pub fn law(&self, (q1, q2): (f64, f64)) -> Result<ConservationLaw, SolverError> {
        ConservationLaw::new(self.family.flux(), q1, q2)
    }
}

/// Multiply each nonzero base coefficient by `Unif(0.9, 1.1)`.
pub fn sample_params(spec: &FamilySpec, rng: &mut impl Rng) -> (f64, f64) {
    let mut jitter = |c: f64| {
        if c == 0.0 {
            0.0
        } else {
            c * rng.random_range(0.9..=1.1)
        }
    };
    let q1 = jitter(spec.base_coeffs.0);
    let q2 = jitter(spec.base_coeffs.1);
    (q1, q2)
}

/// `sum_j a_j sin(2 pi j x / x_f + phi_j)` on the grid nodes, scaled so the
/// largest magnitude is 1. Returns zeros if every amplitude is zero.
pub fn sine_modes(grid: &Grid1D, x_f: f64, amps: &[f64], phases: &[f64]) -> Vec<f64> {
    let u: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|x| {
            amps.iter()
                .zip(phases)
                .enumerate()
                .map(|(j, (a, p))| a * (2.0 * PI * (j + 1) as f64 * x / x_f + p).sin())
                .sum()
        })
        .collect();
    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        u
    } else {
        u.into_iter().map(|v| v / peak).collect()
    }
}

/// Random five-mode sine initial condition with `max |u0| = 1`.
pub fn sample_ic(spec: &FamilySpec, rng: &mut impl Rng) -> Result<Vec<f64>, SolverError> {
    let grid = spec.grid()?;
    loop {
        let (amps, phases): (Vec<f64>, Vec<f64>) = (0..IC_MODES)
            .map(|_| (rng.random_range(-0.5..0.5), rng.random_range(0.0..2.0 * PI)))
            .unzip();
        let u = sine_modes(&grid, spec.x_f, &amps, &phases);
        if u.iter().any(|&v| v != 0.0) {
            return Ok(u);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub families: Vec<FamilySpec>,
    pub params_per_family: usize,
    pub ics_per_param: usize,
    pub seed: u64,
    pub split: Split,
}

impl DatasetManifest {
    /// 64 parameter draws x 8 initial conditions per family for training,
    /// 16 x 4 for testing.
    pub fn desk_scale(split: Split, seed: u64) -> DatasetManifest {
        let (params, ics) = match split {
            Split::Train => (64, 8),
            Split::Test => (16, 4),
        };
        DatasetManifest {
            families: Family::ALL.iter().map(|f| f.spec()).collect(),
            params_per_family: params,
            ics_per_param: ics,
            seed,
            split,
        }
    }

    fn effective_seed(&self) -> u64 {
        // the split tag keeps train and test streams disjoint for equal seeds
        rng::derive_seed(self.seed, &[self.split as u64])
    }

    fn validate(&self) -> Result<(), DatagenError> {
        if self.families.is_empty() || self.params_per_family == 0 || self.ics_per_param == 0 {
            return Err(DatagenError::InvalidManifest(
                "all counts must be at least 1".into(),
            ));
        }
        for spec in &self.families {
            if spec.nt < 2 || !(spec.t_f > 0.0) {
                return Err(DatagenError::InvalidManifest(format!(
                    "{}: need nt >= 2 and t_f > 0",
                    spec.family
                )));
            }
            spec.grid()?;
        }
        Ok(())
    }
}

/// One generated trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub family: Family,
    pub law: ConservationLaw,
    pub field: SpaceTimeField,
}

impl Sample {
    pub fn initial(&self) -> &[f64] {
        self.field.frame(0)
    }
}

/// Generate the sample for `(family index, parameter draw, initial condition)`.
pub fn generate_sample(
    spec: &FamilySpec,
    seed: u64,
    family_idx: usize,
    param_idx: usize,
    ic_idx: usize,
) -> Result<Sample, SolverError> {
    let (f, p, i) = (family_idx as u64, param_idx as u64, ic_idx as u64);
    let coeffs = sample_params(spec, &mut rng::stream(seed, &[PARAM_STREAM, f, p]));
    let u0 = sample_ic(spec, &mut rng::stream(seed, &[IC_STREAM, f, p, i]))?;
    let law = spec.law(coeffs)?;
    let grid = spec.grid()?;
    let field = solver::solve(&law, &u0, &grid, spec.t_f, spec.nt)?;
    Ok(Sample {
        id: format!("{}_{param_idx:03}_{ic_idx:03}", spec.family),
        family: spec.family,
        law,
        field,
    })
}

/// Contents of `eq_{id}.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquationRecord {
    pub family: Family,
    pub coefficients: Vec<f64>,
    pub infix: String,
    pub canonical_tokens: Vec<String>,
}

impl EquationRecord {
    pub fn of(family: Family, law: &ConservationLaw) -> EquationRecord {
        let eq = law.to_equation();
        let tokens = to_canonical_tokens(&eq).expect("conservation laws tokenize");
        EquationRecord {
            family,
            coefficients: vec![law.q1, law.q2],
            infix: eq.to_string(),
            canonical_tokens: tokens.to_strings(),
        }
    }

    pub fn law(&self) -> Result<ConservationLaw, SolverError> {
        let q1 = self.coefficients.first().copied().unwrap_or(0.0);
        let q2 = self.coefficients.get(1).copied().unwrap_or(0.0);
        ConservationLaw::new(self.family.flux(), q1, q2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub family: Family,
    pub coefficients: Vec<f64>,
    pub equation: String,
    pub trajectory: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedEntry {
    pub id: String,
    pub reason: String,
}

/// Contents of `manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub manifest: DatasetManifest,
    pub entries: Vec<IndexEntry>,
    pub skipped: Vec<SkippedEntry>,
}

/// Generate every sample of `manifest` into `dir`.
pub fn generate(manifest: &DatasetManifest, dir: &Path) -> Result<DatasetIndex, DatagenError> {
    manifest.validate()?;
    fs::create_dir_all(dir)?;
    let seed = manifest.effective_seed();
    let per_family = manifest.params_per_family * manifest.ics_per_param;
    let total = manifest.families.len() * per_family;
    let results = map_indexed(total, |n| {
        let f = n / per_family;
        let p = (n % per_family) / manifest.ics_per_param;
        let i = n % manifest.ics_per_param;
        let spec = &manifest.families[f];
        let id = format!("{}_{p:03}_{i:03}", spec.family);
        generate_sample(spec, seed, f, p, i)
            .map_err(DatagenError::from)
            .and_then(|sample| write_sample(&sample, dir))
            .map_err(|e| (id, e))
    });
    let mut entries = Vec::new();
    let mut skipped = Vec::new();
    for r in results {
        match r {
            Ok(entry) => entries.push(entry),
            Err((id, e @ DatagenError::Solver(SolverError::NonFinite))) => {
                skipped.push(SkippedEntry {
                    id,
                    reason: e.to_string(),
                })
            }
            Err((_, e)) => return Err(e),
        }
    }
    let index = DatasetIndex {
        manifest: manifest.clone(),
        entries,
        skipped,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_vec_pretty(&index)?,
    )?;
    Ok(index)
}

fn write_sample(sample: &Sample, dir: &Path) -> Result<IndexEntry, DatagenError> {
    let record = EquationRecord::of(sample.family, &sample.law);
    let equation = format!("eq_{}.json", sample.id);
    let trajectory = format!("traj_{}.grid", sample.id);
    fs::write(dir.join(&equation), serde_json::to_vec_pretty(&record)?)?;
    write_grid_file(dir.join(&trajectory), &sample.field)?;
    Ok(IndexEntry {
        id: sample.id.clone(),
        family: sample.family,
        coefficients: record.coefficients,
        equation,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jitter_bounds() {
        let mut rng = rng::stream(1, &[]);
        let spec = Family::IclSine.spec();
        let mut sum = 0.0;
        for _ in 0..10_000 {
            let (q1, q2) = sample_params(&spec, &mut rng);
            assert!((0.9..=1.1).contains(&q1));
            assert_eq!(q2, 0.0);
            sum += q1;
        }
        assert!((sum / 10_000.0 - 1.0).abs() < 0.003);
    }

    #[test]
    fn single_mode_is_pure_sine() {
        let spec = Family::Burgers.spec();
        let grid = spec.grid().unwrap();
        let u = sine_modes(&grid, 1.0, &[1.0, 0.0, 0.0, 0.0, 0.0], &[0.0; 5]);
        for (x, v) in grid.nodes().iter().zip(&u) {
            assert!((v - (2.0 * PI * x).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn initial_conditions_have_unit_peak() {
        let spec = Family::Burgers.spec();
        let mut rng = rng::stream(2, &[]);
        for _ in 0..50 {
            let u = sample_ic(&spec, &mut rng).unwrap();
            let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!((peak - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
            assert_eq!(f.viscous(), f.base_coeffs().1 != 0.0);
        }
        assert!("kdv".parse::<Family>().is_err());
    }

    #[test]
    fn sample_is_reproducible() {
        let spec = Family::ClCubic.spec();
        let a = generate_sample(&spec, 5, 2, 1, 0).unwrap();
        let b = generate_sample(&spec, 5, 2, 1, 0).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.field.nt(), a.field.grid.nx), (32, 128));
        let c = generate_sample(&spec, 5, 2, 1, 1).unwrap();
        assert_eq!(a.law, c.law);
        assert_ne!(a.field, c.field);
    }
}
