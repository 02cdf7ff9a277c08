//! The four-file dataset directory.

use std::fs;
use std::path::{Path, PathBuf};

use bpgnn::data::{load_dataset, save_dataset, synthetic, validate, SyntheticConfig};
use bpgnn::Error;

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
}

#[test]
fn fixture_loads_with_expected_contents() {
    let ds = load_dataset(fixture()).unwrap();
    assert_eq!(ds.name, "tiny");
    assert_eq!(ds.num_nodes(), 5);
    assert_eq!(ds.num_features(), 3);
    assert_eq!(ds.labels, vec![0, 1, 0, 1, 0]);
    assert_eq!((ds.train.clone(), ds.val.clone(), ds.test.clone()), (vec![0, 1], vec![2], vec![3]));
    // (1, 0) duplicates (0, 1).
    assert_eq!(ds.edges.num_edges(), 4);
    assert!(ds.edges.contains(4, 3));
    let report = validate(&ds);
    assert!(report.is_valid(), "{:?}", report.violations);
    assert!((report.average_degree - 8.0 / 5.0).abs() < 1e-15);
    assert_eq!(ds.features.get(1, 2), 0.25);
}

#[test]
fn save_then_load_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let ds = synthetic(&SyntheticConfig { features: 7, ..Default::default() }).unwrap();
    let path = dir.path().join("synthetic");
    save_dataset(&ds, &path).unwrap();
    let back = load_dataset(&path).unwrap();
    assert_eq!(back, ds);
    let bits = |t: &bpgnn::Tensor| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&back.features), bits(&ds.features));
    // Each undirected edge is written once.
    let lines = fs::read_to_string(path.join("edges.tsv")).unwrap().lines().count();
    assert_eq!(lines, ds.edges.num_edges());
}

fn broken_copy(file: &str, body: &str) -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("broken");
    fs::create_dir(&path).unwrap();
    for f in ["features.tsv", "labels.tsv", "masks.tsv", "edges.tsv"] {
        fs::copy(fixture().join(f), path.join(f)).unwrap();
    }
    fs::write(path.join(file), body).unwrap();
    (dir, path)
}

fn parse_line(err: Error) -> (String, usize) {
    match err {
        Error::Parse { path, line, .. } => (path.file_name().unwrap().to_string_lossy().into_owned(), line),
        other => panic!("expected a parse error, got {other}"),
    }
}

#[test]
fn malformed_files_report_file_and_line() {
    let cases = [
        ("edges.tsv", "0\t1\n1\t9\n", 2),
        ("edges.tsv", "0\t1\n2\n", 2),
        ("features.tsv", "1\t0\t0\n1\t0\n0\t0\t0\n0\t0\t0\n0\t0\t0\n", 2),
        ("features.tsv", "1\t0\t0\n1\t0\t0\n1\tNaN\t0\n0\t0\t0\n0\t0\t0\n", 3),
        ("labels.tsv", "0\n1\nx\n1\n0\n", 3),
        ("masks.tsv", "train\ntrain\nval\nholdout\nnone\n", 4),
        ("masks.tsv", "train\ntrain\n", 3),
    ];
    for (file, body, line) in cases {
        let (_dir, path) = broken_copy(file, body);
        let err = load_dataset(&path).unwrap_err();
        assert_eq!(parse_line(err), (file.to_string(), line), "{file}: {body:?}");
    }
}

#[test]
fn missing_directory_is_an_io_error() {
    let err = load_dataset("/definitely/not/here").unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
}
