use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pdesym::datagen::{generate, DatasetIndex, DatasetManifest, EquationRecord, Family, Split};
use pdesym::expr::{from_tokens, Dialect, TokenSeq};
use pdesym::filter::{refine, FilterConfig, LawTemplate, ObservationSeq};
use pdesym::metrics::{symbolic_error, time_series_error, SymbolicErrorConfig};
use pdesym::solver::{read_grid_file, solve};

fn small_manifest(seed: u64) -> DatasetManifest {
    DatasetManifest {
        params_per_family: 4,
        ics_per_param: 2,
        ..DatasetManifest::desk_scale(Split::Test, seed)
    }
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().into_string().unwrap(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

#[test]
fn generated_dataset_layout_and_reproducibility() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let index = generate(&small_manifest(3), a.path()).unwrap();
    generate(&small_manifest(3), b.path()).unwrap();

    let files = snapshot(a.path());
    assert_eq!(files.len(), 48 * 2 + 1);
    assert_eq!(files.keys().filter(|k| k.ends_with(".grid")).count(), 48);
    assert_eq!(files.keys().filter(|k| k.starts_with("eq_")).count(), 48);
    assert_eq!(files, snapshot(b.path()));
    assert!(index.skipped.is_empty());

    let stored: DatasetIndex = serde_json::from_slice(&files["manifest.json"]).unwrap();
    assert_eq!(stored, index);

    let train = tempfile::tempdir().unwrap();
    let train_index = generate(
        &DatasetManifest {
            split: Split::Train,
            ..small_manifest(3)
        },
        train.path(),
    )
    .unwrap();
    assert_ne!(
        train_index.entries[0].coefficients,
        index.entries[0].coefficients
    );
}

#[test]
fn stored_equations_reproduce_their_trajectories() {
    let dir = tempfile::tempdir().unwrap();
    let index = generate(&small_manifest(8), dir.path()).unwrap();
    for entry in &index.entries {
        let record: EquationRecord =
            serde_json::from_slice(&fs::read(dir.path().join(&entry.equation)).unwrap()).unwrap();
        let field = read_grid_file(dir.path().join(&entry.trajectory)).unwrap();
        assert_eq!((field.nt(), field.grid.nx), (32, 128));

        let spec = record.family.spec();
        let law = record.law().unwrap();
        let (q1, q2) = spec.base_coeffs;
        assert!(law.q1 >= 0.9 * q1 && law.q1 <= 1.1 * q1);
        assert!(law.q2 >= 0.9 * q2 && law.q2 <= 1.1 * q2);

        let again = solve(&law, field.frame(0), &field.grid, spec.t_f, spec.nt).unwrap();
        assert_eq!(again, field);

        if law.inviscid() {
            let m0 = field.grid.integral(field.frame(0));
            for frame in field.frames() {
                assert!((field.grid.integral(frame) - m0).abs() <= 1e-12 * (1.0 + m0.abs()));
            }
        }

        let seq = TokenSeq::from_strings(Dialect::Canonical, &record.canonical_tokens).unwrap();
        let decoded = from_tokens(&seq).unwrap();
        let err = symbolic_error(
            &decoded,
            &law.to_equation(),
            &SymbolicErrorConfig::default(),
        )
        .unwrap();
        // tokens carry three significant digits
        assert!(err < 5e-3, "{}: {err}", entry.id);
    }
}

#[test]
fn refinement_from_files_reduces_trajectory_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = DatasetManifest {
        families: vec![Family::IclSine.spec()],
        params_per_family: 1,
        ics_per_param: 1,
        ..small_manifest(5)
    };
    let index = generate(&manifest, dir.path()).unwrap();
    let entry = &index.entries[0];
    let field = read_grid_file(dir.path().join(&entry.trajectory)).unwrap();
    let record: EquationRecord =
        serde_json::from_slice(&fs::read(dir.path().join(&entry.equation)).unwrap()).unwrap();
    let law = record.law().unwrap();
    let template = LawTemplate::of(&law);

    let start = vec![law.q1 * 1.04];
    let cfg = FilterConfig {
        particles: 200,
        seed: 1,
        ..FilterConfig::default()
    };
    let obs = ObservationSeq::from_field(&field, cfg.steps + 1);
    let refined = refine(&start, &obs, &template, &cfg).unwrap();
    let before = template.law(&start).unwrap().to_equation();
    let after = template.law(&refined.coefficients).unwrap().to_equation();
    let u0 = field.frame(0);
    assert!(
        time_series_error(&after, u0, &field).unwrap()
            < time_series_error(&before, u0, &field).unwrap()
    );
    assert!(refined
        .ess_per_step
        .iter()
        .all(|&e| e >= 1.0 && e <= 200.0 + 1e-9));
}
