use std::path::PathBuf;

use relgof::harness::{
    load_matrix, run_trials, save_matrix, ExternalPaths, Method, MethodSpec, Problem, ProblemConfig, Role,
    TrialOptions,
};
use relgof::Error;

fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn fixture_paths() -> ExternalPaths {
    ExternalPaths {
        x: fixture("x.csv"),
        y: fixture("y.csv"),
        z: fixture("z.csv"),
    }
}

#[test]
fn csv_fixtures_load_with_expected_shape() {
    for name in ["x.csv", "y.csv", "z.csv"] {
        assert_eq!(load_matrix(fixture(name)).unwrap().dim(), (300, 2));
    }
}

#[test]
fn external_samples_favour_the_closer_model() {
    let problem = Problem::new(ProblemConfig::external(200, fixture_paths())).unwrap();
    let methods = [
        MethodSpec::new(Method::RelUmeRandom, 3),
        MethodSpec::new(Method::RelUmeOpt, 2),
        MethodSpec::new(Method::RelMmdMedian, 1),
    ];
    let opts = TrialOptions {
        trials: 5,
        seed: 11,
        ..TrialOptions::default()
    };
    let report = run_trials(&problem, &methods, &opts).unwrap();
    for s in &report.summaries {
        assert_eq!(s.failures, 0, "{}", s.method);
        assert_eq!(s.rejections, 5, "{}", s.method);
    }
}

#[test]
fn binary_copy_reproduces_csv_draws() {
    let dir = tempfile::tempdir().unwrap();
    let mut paths = fixture_paths();
    for (slot, name) in [(&mut paths.x, "x.bin"), (&mut paths.y, "y.bin"), (&mut paths.z, "z.bin")] {
        let target = dir.path().join(name);
        save_matrix(&target, &load_matrix(&*slot).unwrap()).unwrap();
        *slot = target;
    }
    let from_csv = Problem::new(ProblemConfig::external(100, fixture_paths())).unwrap();
    let from_bin = Problem::new(ProblemConfig::external(100, paths)).unwrap();
    for role in [Role::X, Role::Y, Role::Z] {
        assert_eq!(from_csv.draw_role(role, 4).unwrap(), from_bin.draw_role(role, 4).unwrap());
    }
}

#[test]
fn too_few_rows_is_rejected() {
    let err = Problem::new(ProblemConfig::external(301, fixture_paths())).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(_)), "{err}");
}

#[test]
fn malformed_csv_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "1.0,2.0\n3.0,oops\n").unwrap();
    let mut paths = fixture_paths();
    paths.y = bad;
    let msg = Problem::new(ProblemConfig::external(10, paths)).unwrap_err().to_string();
    assert!(msg.contains("bad.csv") && msg.contains("line 2"), "{msg}");
}
