//! Command-line behavior of the `dlsr` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use grasp_dlsr::bundle::{decode_sections, load_bundle, Section};

const SMALL: &str = r#"
atoms = 12
epochs = 8
c_grid = [1.0]
outer_folds = 2
inner_folds = 2
detection_folds = 2

[front_end]
patches = 2000

[grid]
stride = 8
widths = [24.0]
heights = [10.0]
angles = [0.0, 45.0, 90.0, 135.0]
"#;

fn dlsr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlsr"))
        .args(args)
        .env_remove("DLSR_DATA")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A synthetic dataset plus a small config file.
fn fixture(dir: &Path, kind: &str, scenes: usize) -> (PathBuf, PathBuf) {
    let data = dir.join("data");
    let o = dlsr(&[
        "synth",
        "--kind",
        kind,
        "--scenes",
        &scenes.to_string(),
        "--seed",
        "4",
        "--out",
        s(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = dir.join("small.toml");
    fs::write(&cfg, SMALL).unwrap();
    (data, cfg)
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&dlsr(&["no-such-command"])), 1);
    assert_eq!(
        code(&dlsr(&["learn-dict", "--method", "bogus", "--out", "x"])),
        1
    );
    assert_eq!(code(&dlsr(&["train", "--out", "x"])), 1);
    assert_eq!(code(&dlsr(&["--help"])), 0);
}

#[test]
fn incompatible_encoder_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), "recognition", 4);
    let o = dlsr(&[
        "--config",
        s(&cfg),
        "train",
        "--data",
        s(&data),
        "--dict",
        "gsvq",
        "--encoder",
        "kmeanstri",
        "--out",
        s(&dir.path().join("m.bundle")),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("Usage"));
}

#[test]
fn missing_data_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = dlsr(&[
        "preprocess",
        "--data",
        s(&dir.path().join("absent")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("absent"), "{}", stderr(&o));
}

#[test]
fn malformed_rect_file_names_file_and_line() {
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = fixture(dir.path(), "recognition", 2);
    let pos = data.join("synth0000cpos.txt");
    let mut text = fs::read_to_string(&pos).unwrap();
    text.push_str("1.0 oops\n");
    fs::write(&pos, text).unwrap();
    let o = dlsr(&[
        "preprocess",
        "--data",
        s(&data),
        "--out",
        s(&dir.path().join("cache")),
    ]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    let lines = fs::read_to_string(&pos).unwrap().lines().count();
    assert!(
        err.contains(&format!("synth0000cpos.txt:{lines}:")),
        "{err}"
    );
}

#[test]
fn random_dictionary_has_unit_atoms() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.bundle");
    let o = dlsr(&[
        "learn-dict",
        "--method",
        "r",
        "--atoms",
        "300",
        "--seed",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let b = load_bundle(&out).unwrap();
    let atoms = b.codebook.dictionary.atoms();
    assert_eq!(atoms.ncols(), 300);
    for c in atoms.column_iter() {
        assert!((c.norm() - 1.0).abs() < 1e-9);
    }
    let bytes = fs::read(&out).unwrap();
    let sections = decode_sections(&bytes).unwrap();
    let (_, dict) = sections.iter().find(|(n, _)| n == "dictionary").unwrap();
    match dict {
        Section::Matrix(m) => assert_eq!(m.len() * 8, 300 * 288 * 8),
        Section::Text(_) => panic!("dictionary stored as text"),
    }
}

#[test]
fn scene_without_depth_has_no_foreground() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), "detection", 4);
    let model = dir.path().join("m.bundle");
    let o = dlsr(&[
        "--config",
        s(&cfg),
        "train",
        "--data",
        s(&data),
        "--out",
        s(&model),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    fs::write(data.join("synth0001.txt"), "# x y z rgb index\n").unwrap();
    let o = dlsr(&[
        "--config",
        s(&cfg),
        "detect",
        "--data",
        s(&data),
        "--scene",
        "synth0001",
        "--model",
        s(&model),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("foreground"), "{}", stderr(&o));

    let overlay = dir.path().join("o.png");
    let o = dlsr(&[
        "--config",
        s(&cfg),
        "detect",
        "--data",
        s(&data),
        "--scene",
        "synth0002",
        "--model",
        s(&model),
        "--overlay",
        s(&overlay),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line = String::from_utf8(o.stdout).unwrap();
    assert_eq!(line.trim_end().split('\t').count(), 7, "{line}");
    assert!(line.starts_with("synth0002\t"));
    assert!(overlay.is_file());
}

#[test]
fn empty_self_taught_directory_falls_back() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), "detection", 4);
    let aux = dir.path().join("aux");
    fs::create_dir(&aux).unwrap();
    let out = dir.path().join("rep");
    let o = dlsr(&[
        "--config",
        s(&cfg),
        "detect-cv",
        "--data",
        s(&data),
        "--self-taught",
        s(&aux),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("no auxiliary scenes"), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["self_taught"]["used"], false);
    assert!(out.join("detection.tsv").is_file());
}

#[test]
fn flags_override_config() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), "recognition", 6);
    let out = dir.path().join("rep");
    let o = dlsr(&[
        "--config",
        s(&cfg),
        "recognize-cv",
        "--data",
        s(&data),
        "--dict",
        "nkm",
        "--encoder",
        "natural",
        "--seed",
        "9",
        "--atoms",
        "10",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["settings"]["atoms"], 10);
    assert_eq!(manifest["settings"]["epochs"], 8);
    let table = fs::read_to_string(out.join("recognition.tsv")).unwrap();
    assert!(table.starts_with("dictionary\tNatural\nNKM\t"), "{table}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "atomz = 3\n").unwrap();
    let o = dlsr(&[
        "--config",
        s(&cfg),
        "learn-dict",
        "--method",
        "r",
        "--out",
        s(&dir.path().join("b")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("atomz"), "{}", stderr(&o));
}

#[test]
fn export_atoms_writes_channel_groups() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("r.bundle");
    assert_eq!(
        code(&dlsr(&[
            "learn-dict",
            "--method",
            "r",
            "--atoms",
            "16",
            "--out",
            s(&model)
        ])),
        0
    );
    let out = dir.path().join("atoms");
    let o = dlsr(&["export-atoms", "--model", s(&model), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut names: Vec<String> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 4, "{names:?}");
    // random dictionaries carry no k-means centroids
    assert_eq!(
        code(&dlsr(&[
            "export-atoms",
            "--model",
            s(&model),
            "--centroids",
            "--out",
            s(&out)
        ])),
        2
    );
}

#[test]
fn preprocess_cache_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let (data, cfg) = fixture(dir.path(), "recognition", 4);
    let cache = dir.path().join("cache");
    let o = dlsr(&["preprocess", "--data", s(&data), "--out", s(&cache)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(cache.join("synth0000.chan").is_file());
    let a = dir.path().join("a.bundle");
    let b = dir.path().join("b.bundle");
    for (out, cached) in [(&a, true), (&b, false)] {
        let mut args = vec![
            "--config",
            s(&cfg),
            "learn-dict",
            "--data",
            s(&data),
            "--method",
            "nkm",
            "--out",
            s(out),
        ];
        if cached {
            args.extend(["--cache", s(&cache)]);
        }
        let o = dlsr(&args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(!stderr(&o).contains("stale"));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}
