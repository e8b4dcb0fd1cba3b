use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use pdesym::datagen::{
    generate, sample_ic, DatasetManifest, EquationRecord, Family, FamilySpec, Split,
};
use pdesym::expr::{
    from_tokens, parse_infix, parse_infix_lenient, to_canonical_tokens, to_manual_tokens, Dialect,
    Equation, TokenSeq,
};
use pdesym::filter::{refine_observed, FilterConfig, LawTemplate, Likelihood, ObservationSeq};
use pdesym::metrics::{
    self, r2_score, rel_l2, symbolic_error, valid_fraction, EvalReport, SymbolicErrorConfig,
};
use pdesym::perturb::{
    inject_noise_term, mask_coefficients, swap_branches, PerturbConfig, PerturbReport,
};
use pdesym::solver::{
    read_grid_file, solve, write_grid_file, ConservationLaw, Grid1D, SpaceTimeField,
};
use pdesym::study::{run_study, StudyConfig};

use crate::error::CliError;
use crate::{Cli, Command, DialectArg, Format, Global, LawSource, LikelihoodArg, SplitArg};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    let out = match &cli.command {
        Command::Parse { eq, lenient } => parse(g, eq, *lenient)?,
        Command::Canon {
            expr,
            mask,
            lenient,
        } => canon(g, expr, *mask, *lenient)?,
        Command::Tokens {
            dialect,
            eq,
            decode,
            lenient,
        } => tokens(g, *dialect, eq.as_deref(), decode.as_deref(), *lenient)?,
        Command::Perturb {
            eq,
            swap_prob,
            noise_prob,
            mask,
            dialect,
            lenient,
        } => {
            let cfg = PerturbConfig {
                swap_prob: *swap_prob,
                noise_prob: *noise_prob,
                seed: g.seed,
                ..PerturbConfig::default()
            };
            perturb(g, eq, &cfg, *mask, *dialect, *lenient)?
        }
        Command::Solve {
            law,
            coefficients,
            initial,
            nx,
            nt,
            t_final,
            grid,
        } => solve_cmd(
            g,
            law,
            coefficients.as_deref(),
            initial.as_deref(),
            *nx,
            *nt,
            *t_final,
            grid.as_deref(),
        )?,
        Command::Gen {
            split,
            families,
            params_per_family,
            ics_per_param,
        } => {
            // --output names the dataset directory, so the summary goes to stdout
            let summary = gen(
                g,
                *split,
                families.as_deref(),
                *params_per_family,
                *ics_per_param,
            )?;
            return write_stdout(&summary);
        }
        Command::Refine {
            law,
            observations,
            coefficients,
            particles,
            steps,
            process_var,
            obs_scale,
            likelihood,
            timing,
            cloud,
        } => {
            let cfg = FilterConfig {
                particles: *particles,
                steps: *steps,
                process_var: *process_var,
                obs_scale: *obs_scale,
                likelihood: match likelihood {
                    LikelihoodArg::PerPoint => Likelihood::PerPoint,
                    LikelihoodArg::FieldNorm => Likelihood::FieldNorm,
                },
                seed: g.seed,
                ..FilterConfig::default()
            };
            refine_cmd(
                g,
                law,
                observations,
                coefficients.as_deref(),
                &cfg,
                *timing,
                cloud.as_deref(),
            )?
        }
        Command::Eval {
            learned,
            truth,
            trajectory,
            prediction,
        } => eval(g, learned, truth, trajectory, prediction)?,
        Command::Study {
            families,
            trials,
            coeff_error,
            particles,
            steps,
            table,
        } => {
            let mut cfg = StudyConfig {
                trials: *trials,
                coeff_error: *coeff_error,
                filter: FilterConfig {
                    particles: *particles,
                    steps: *steps,
                    ..FilterConfig::default()
                },
                seed: g.seed,
                ..StudyConfig::default()
            };
            if let Some(names) = families {
                cfg.families = parse_families(names)?;
            }
            study(g, &cfg, *table)?
        }
    };
    emit(g, &out)
}

fn emit(g: &Global, text: &str) -> Result<()> {
    match &g.output {
        Some(path) => fs::write(path, text).map_err(CliError::io(path.display().to_string())),
        None => write_stdout(text),
    }
}

fn write_stdout(text: &str) -> Result<()> {
    io::stdout()
        .write_all(text.as_bytes())
        .map_err(CliError::io("stdout"))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(CliError::json("serialize output"))?;
    s.push('\n');
    Ok(s)
}

fn to_csv<R: Serialize>(rows: impl IntoIterator<Item = R>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Data(e.to_string()))
}

fn render<T: Serialize, R: Serialize>(
    g: &Global,
    value: &T,
    rows: impl FnOnce() -> Vec<R>,
) -> Result<String> {
    match g.format {
        Format::Json => to_json(value),
        Format::Csv => to_csv(rows()),
    }
}

fn parse_eq(src: &str, lenient: bool) -> Result<Equation> {
    Ok(if lenient {
        parse_infix_lenient(src)?
    } else {
        parse_infix(src)?
    })
}

fn parse_families(names: &[String]) -> Result<Vec<Family>> {
    names
        .iter()
        .map(|n| {
            n.parse::<Family>()
                .map_err(|e| CliError::Usage(e.to_string()))
        })
        .collect()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(CliError::io(path.display().to_string()))?;
    serde_json::from_slice(&bytes).map_err(CliError::json(path.display().to_string()))
}

fn read_grid(path: &Path) -> Result<SpaceTimeField> {
    read_grid_file(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

#[derive(Serialize)]
struct ParseOut {
    infix: String,
    nodes: usize,
    derivative_depth: u32,
    manual_tokens: Option<Vec<String>>,
}

fn parse(g: &Global, src: &str, lenient: bool) -> Result<String> {
    let eq = parse_eq(src, lenient)?;
    let out = ParseOut {
        infix: eq.to_string(),
        nodes: eq.residual.node_count(),
        derivative_depth: eq.residual.derivative_depth(),
        manual_tokens: to_manual_tokens(&eq).ok().map(|t| t.to_strings()),
    };
    render(g, &out, || {
        vec![(
            out.infix.clone(),
            out.nodes,
            out.derivative_depth,
            out.manual_tokens.as_ref().map(|t| t.join(" ")),
        )]
    })
    .map(|s| with_header(g, s, "infix,nodes,derivative_depth,manual_tokens"))
}

/// Tuples serialize without a header row.
fn with_header(g: &Global, body: String, header: &str) -> String {
    match g.format {
        Format::Json => body,
        Format::Csv => format!("{header}\n{body}"),
    }
}

#[derive(Serialize)]
struct CanonOut {
    canonical: String,
    tokens: Vec<String>,
}

fn canon(g: &Global, src: &str, mask: bool, lenient: bool) -> Result<String> {
    let eq = parse_eq(src, lenient)?;
    let eq = if mask { mask_coefficients(&eq)? } else { eq };
    let tokens = to_canonical_tokens(&eq)?;
    let out = CanonOut {
        canonical: from_tokens(&tokens)?.to_string(),
        tokens: tokens.to_strings(),
    };
    render(g, &out, || token_rows(&out.tokens)).map(|s| with_header(g, s, "position,token"))
}

fn token_rows(tokens: &[String]) -> Vec<(usize, String)> {
    tokens.iter().cloned().enumerate().collect()
}

#[derive(Serialize)]
struct TokensOut {
    dialect: Dialect,
    tokens: Vec<String>,
    infix: String,
}

fn tokens(
    g: &Global,
    dialect: DialectArg,
    eq: Option<&str>,
    decode: Option<&str>,
    lenient: bool,
) -> Result<String> {
    let dialect = match dialect {
        DialectArg::Manual => Dialect::Manual,
        DialectArg::Canonical => Dialect::Canonical,
    };
    let out = match (eq, decode) {
        (Some(src), _) => {
            let eq = parse_eq(src, lenient)?;
            let seq = match dialect {
                Dialect::Manual => to_manual_tokens(&eq)?,
                Dialect::Canonical => to_canonical_tokens(&eq)?,
            };
            TokensOut {
                dialect,
                tokens: seq.to_strings(),
                infix: eq.to_string(),
            }
        }
        (None, Some(text)) => {
            let seq = TokenSeq::parse(dialect, text)?;
            TokensOut {
                dialect,
                tokens: seq.to_strings(),
                infix: from_tokens(&seq)?.to_string(),
            }
        }
        (None, None) => return Err(CliError::Usage("pass --eq or --decode".into())),
    };
    render(g, &out, || token_rows(&out.tokens)).map(|s| with_header(g, s, "position,token"))
}

fn perturb(
    g: &Global,
    src: &str,
    cfg: &PerturbConfig,
    mask: bool,
    dialect: DialectArg,
    lenient: bool,
) -> Result<String> {
    cfg.validate()?;
    let eq = parse_eq(src, lenient)?;
    let swapped = Equation::new(swap_branches(&eq.residual, cfg));
    let injected = inject_noise_term(&swapped, cfg);
    let perturbed = if mask {
        mask_coefficients(&injected.equation)?
    } else {
        injected.equation
    };
    let encode = |e: &Equation| -> Result<Vec<String>> {
        let seq = match (dialect, mask) {
            (DialectArg::Manual, false) => to_manual_tokens(e)?,
            _ => to_canonical_tokens(e)?,
        };
        Ok(seq.to_strings())
    };
    let report = PerturbReport {
        input_tokens: encode(&eq)?,
        output_tokens: encode(&perturbed)?,
        injected_term: injected.injected_term.map(|t| t.to_string()),
    };
    render(g, &report, || {
        vec![(
            report.input_tokens.join(" "),
            report.output_tokens.join(" "),
            report.injected_term.clone(),
        )]
    })
    .map(|s| with_header(g, s, "input_tokens,output_tokens,injected_term"))
}

fn family_of(law: &ConservationLaw) -> Family {
    Family::ALL
        .into_iter()
        .find(|f| f.flux() == law.flux && f.viscous() != law.inviscid())
        .expect("every flux has a viscous and an inviscid family")
}

/// Resolve the law named on the command line, applying coefficient overrides.
fn resolve_law(src: &LawSource, coefficients: Option<&[f64]>) -> Result<ConservationLaw> {
    let (flux, (q1, q2)) = if let Some(path) = &src.equation {
        let record: EquationRecord = read_json(path)?;
        let law = record.law()?;
        (law.flux, (law.q1, law.q2))
    } else if let Some(text) = &src.eq {
        let law = ConservationLaw::from_equation(&parse_eq(text, false)?)?;
        (law.flux, (law.q1, law.q2))
    } else if let Some(name) = &src.family {
        let family: Family = name
            .parse()
            .map_err(|e: pdesym::datagen::DatagenError| CliError::Usage(e.to_string()))?;
        (family.flux(), family.base_coeffs())
    } else {
        return Err(CliError::Usage("pass --equation, --eq or --family".into()));
    };
    let (q1, q2) = match coefficients {
        None => (q1, q2),
        Some([a]) => (*a, 0.0),
        Some([a, b]) => (*a, *b),
        Some(other) => {
            return Err(CliError::Usage(format!(
                "expected one or two coefficients, got {}",
                other.len()
            )))
        }
    };
    Ok(ConservationLaw::new(flux, q1, q2)?)
}

#[derive(Serialize)]
struct SolveOut {
    family: Family,
    coefficients: [f64; 2],
    nx: usize,
    nt: usize,
    t_final: f64,
    mass_drift: f64,
    max_abs: f64,
    grid: Option<PathBuf>,
}

#[derive(Serialize)]
struct FieldRow {
    t: f64,
    x: f64,
    u: f64,
}

#[allow(clippy::too_many_arguments)]
fn solve_cmd(
    g: &Global,
    src: &LawSource,
    coefficients: Option<&[f64]>,
    initial: Option<&Path>,
    nx: usize,
    nt: usize,
    t_final: f64,
    grid_out: Option<&Path>,
) -> Result<String> {
    let law = resolve_law(src, coefficients)?;
    let family = family_of(&law);
    let (grid, u0) = match initial {
        Some(path) => {
            let field = read_grid(path)?;
            (field.grid, field.frame(0).to_vec())
        }
        None => {
            let spec = FamilySpec {
                nx,
                nt,
                t_f: t_final,
                ..family.spec()
            };
            let grid = spec.grid()?;
            let u0 = sample_ic(&spec, &mut pdesym::rng::stream(g.seed, &[]))?;
            (grid, u0)
        }
    };
    let field = solve(&law, &u0, &grid, t_final, nt)?;
    if let Some(path) = grid_out {
        write_grid_file(path, &field)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }
    let m0 = grid.integral(&u0);
    let out = SolveOut {
        family,
        coefficients: [law.q1, law.q2],
        nx: grid.nx,
        nt,
        t_final,
        mass_drift: field
            .frames()
            .map(|f| (grid.integral(f) - m0).abs())
            .fold(0.0, f64::max),
        max_abs: field.values.iter().fold(0.0, |m, v| m.max(v.abs())),
        grid: grid_out.map(Path::to_path_buf),
    };
    render(g, &out, || field_rows(&field))
}

fn field_rows(field: &SpaceTimeField) -> Vec<FieldRow> {
    let grid: &Grid1D = &field.grid;
    field
        .frames()
        .zip(&field.times)
        .flat_map(|(frame, &t)| {
            frame
                .iter()
                .enumerate()
                .map(move |(i, &u)| FieldRow { t, x: grid.x(i), u })
        })
        .collect()
}

#[derive(Serialize)]
struct GenOut {
    directory: PathBuf,
    samples: usize,
    skipped: Vec<String>,
}

#[derive(Serialize)]
struct IndexRow {
    id: String,
    family: Family,
    q1: f64,
    q2: f64,
    equation: String,
    trajectory: String,
}

fn gen(
    g: &Global,
    split: SplitArg,
    families: Option<&[String]>,
    params_per_family: Option<usize>,
    ics_per_param: Option<usize>,
) -> Result<String> {
    let dir = g
        .output
        .clone()
        .ok_or_else(|| CliError::Usage("gen needs --output <directory>".into()))?;
    let split = match split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let mut manifest = DatasetManifest::desk_scale(split, g.seed);
    if let Some(names) = families {
        manifest.families = parse_families(names)?
            .into_iter()
            .map(Family::spec)
            .collect();
    }
    if let Some(p) = params_per_family {
        manifest.params_per_family = p;
    }
    if let Some(i) = ics_per_param {
        manifest.ics_per_param = i;
    }
    let index = generate(&manifest, &dir)?;
    let out = GenOut {
        directory: dir,
        samples: index.entries.len(),
        skipped: index.skipped.iter().map(|s| s.id.clone()).collect(),
    };
    render(g, &out, || {
        index
            .entries
            .iter()
            .map(|e| IndexRow {
                id: e.id.clone(),
                family: e.family,
                q1: e.coefficients[0],
                q2: e.coefficients[1],
                equation: e.equation.clone(),
                trajectory: e.trajectory.clone(),
            })
            .collect()
    })
}

#[derive(Serialize)]
struct RefineOut {
    refined_coefficients: Vec<f64>,
    ess_per_step: Vec<f64>,
    elapsed: Option<f64>,
}

#[derive(Serialize)]
struct EssRow {
    step: usize,
    ess: f64,
}

fn refine_cmd(
    g: &Global,
    src: &LawSource,
    observations: &Path,
    coefficients: Option<&[f64]>,
    cfg: &FilterConfig,
    timing: bool,
    cloud: Option<&Path>,
) -> Result<String> {
    let start = Instant::now();
    cfg.validate()?;
    let law = resolve_law(src, coefficients)?;
    let template = LawTemplate::of(&law);
    let alpha0 = template.coefficients(&law);
    let field = read_grid(observations)?;
    let obs = ObservationSeq::from_field(&field, cfg.steps + 1);

    let mut cloud_rows = Vec::new();
    let refined = refine_observed(&alpha0, &obs, &template, cfg, |step, ens| {
        if cloud.is_some() {
            for (i, p) in ens.particles.iter().enumerate() {
                cloud_rows.push((step, i, p.first().copied(), p.get(1).copied()));
            }
        }
    })?;
    if let Some(path) = cloud {
        let body = to_csv(cloud_rows)?;
        fs::write(path, format!("step,particle,q1,q2\n{body}"))
            .map_err(CliError::io(path.display().to_string()))?;
    }
    let out = RefineOut {
        refined_coefficients: refined.coefficients,
        ess_per_step: refined.ess_per_step,
        elapsed: timing.then(|| start.elapsed().as_secs_f64()),
    };
    render(g, &out, || {
        out.ess_per_step
            .iter()
            .enumerate()
            .map(|(k, &ess)| EssRow { step: k + 1, ess })
            .collect()
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn eval(
    g: &Global,
    learned: &[PathBuf],
    truth: &[PathBuf],
    trajectories: &[PathBuf],
    predictions: &[PathBuf],
) -> Result<String> {
    if learned.len() != truth.len() {
        return Err(CliError::Usage(format!(
            "{} --learned but {} --truth",
            learned.len(),
            truth.len()
        )));
    }
    for (flag, n) in [
        ("--trajectory", trajectories.len()),
        ("--prediction", predictions.len()),
    ] {
        if n != 0 && n != learned.len() {
            return Err(CliError::Usage(format!(
                "{flag} must be given once per pair or not at all"
            )));
        }
    }
    if !predictions.is_empty() && trajectories.is_empty() {
        return Err(CliError::Usage("--prediction needs --trajectory".into()));
    }

    let cfg = SymbolicErrorConfig {
        seed: g.seed,
        ..SymbolicErrorConfig::default()
    };
    let generated = learned
        .iter()
        .map(|p| {
            let record: EquationRecord = read_json(p)?;
            // out-of-vocabulary tokens count as a decode failure, like truncation
            Ok(
                TokenSeq::from_strings(Dialect::Canonical, &record.canonical_tokens)
                    .unwrap_or_else(|_| {
                        TokenSeq::parse(Dialect::Canonical, "").expect("empty sequence parses")
                    }),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let truths = truth
        .iter()
        .map(|p| Ok(read_json::<EquationRecord>(p)?.law()?.to_equation()))
        .collect::<Result<Vec<_>>>()?;
    let decoded: Vec<Option<Equation>> = generated.iter().map(|s| from_tokens(s).ok()).collect();

    let sym: Vec<f64> = decoded
        .iter()
        .zip(&truths)
        .filter_map(|(d, t)| symbolic_error(d.as_ref()?, t, &cfg).ok())
        .collect();

    let observed = trajectories
        .iter()
        .map(|p| read_grid(p))
        .collect::<Result<Vec<_>>>()?;
    let ts: Vec<f64> = decoded
        .iter()
        .zip(&observed)
        .filter_map(|(d, field)| {
            metrics::time_series_error(d.as_ref()?, field.frame(0), field).ok()
        })
        .collect();

    let (rel, r2) = if predictions.is_empty() {
        (None, None)
    } else {
        let predicted = predictions
            .iter()
            .map(|p| read_grid(p))
            .collect::<Result<Vec<_>>>()?;
        let rels = observed
            .iter()
            .zip(&predicted)
            .map(|(u, v)| rel_l2(&u.values, &v.values))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let targets: Vec<&[f64]> = observed.iter().map(|f| f.values.as_slice()).collect();
        let preds: Vec<&[f64]> = predicted.iter().map(|f| f.values.as_slice()).collect();
        (mean(&rels), Some(r2_score(&targets, &preds)?))
    };

    let report = EvalReport {
        rel_l2: rel,
        r2,
        symbolic_error: mean(&sym),
        valid_fraction: Some(valid_fraction(&generated, &truths, &cfg)),
        time_series_error: mean(&ts),
    };
    render(g, &report, || vec![report.clone()])
}

fn study(g: &Global, cfg: &StudyConfig, table: bool) -> Result<String> {
    let report = run_study(cfg)?;
    if table {
        return Ok(report.table());
    }
    match g.format {
        Format::Json => to_json(&report),
        Format::Csv => Ok(report.csv()),
    }
}
