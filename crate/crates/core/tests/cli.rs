use std::path::Path;
use std::process::Command;

use serde_json::json;

fn plaplab(args: &[&str], dir: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_plaplab"))
        .args(args)
        .current_dir(dir)
        .env_remove("PLAPLAB_THREADS")
        .output()
        .unwrap()
}

fn write(dir: &Path, name: &str, value: serde_json::Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(&value).unwrap()).unwrap();
    path.display().to_string()
}

fn manufactured(verify: serde_json::Value) -> serde_json::Value {
    json!({
        "seed": 3,
        "grid": {"dim": 2, "points": 17, "lo": 0.25},
        "model": {"variant": "p-laplace", "p": 3.0},
        "problem": {"v": {"source": {"kind": "zero"}}, "rhs": {"kind": "manufactured"}},
        "verify": verify,
        "sweep": {"p": [1.5, 2.0, 3.0], "points": [9, 17], "epsilon": [0.01, 0.001]}
    })
}

#[test]
fn linear_verify_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", manufactured(json!({"estimate": "linear"})));
    let out = plaplab(&["verify", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("o/verify.json")).unwrap()).unwrap();
    assert_eq!(report["passed"], json!(true));
    assert!(report["max_constant"].as_f64().unwrap() <= 1.1);
}

#[test]
fn tight_cap_file_fails_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", manufactured(json!({"estimate": "apl"})));
    let caps = write(dir.path(), "caps.json", json!({"apl": 1e-6}));
    let out = plaplab(&["verify", "--config", &cfg, "--cap-file", &caps, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(dir.path().join("o/verify.csv").exists());
}

#[test]
fn sweep_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.json", manufactured(json!({"estimate": "apl"})));
    let out = plaplab(&["sweep", "--config", &cfg, "--out", "o", "--threads", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("o/sweep.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3 * 2 * 2);
    let cells: Vec<usize> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(cells, (0..12).collect::<Vec<_>>());
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        json!({
            "seed": 9,
            "grid": {"dim": 2, "points": 17},
            "model": {"variant": "p-laplace", "p": 2.5},
            "problem": {
                "v": {"source": {"kind": "random-lognormal", "sigma": 0.4}, "amplitude": 0.3},
                "boundary": {"kind": "sine-product"},
                "rhs": {"kind": "coupled", "b": {"kind": "modulated", "gamma": 1.0, "q": 0.5}}
            },
            "sweep": {"p": [2.0, 2.5], "points": [9, 17], "amplitude": [0.5, 1.0]}
        }),
    );
    for cmd in ["solve", "sweep"] {
        let a = plaplab(&[cmd, "--config", &cfg, "--out", "a", "--threads", "1"], dir.path());
        let mut b = Command::new(env!("CARGO_BIN_EXE_plaplab"));
        // thread count from the environment this time
        let b = b
            .args([cmd, "--config", &cfg, "--out", "b"])
            .current_dir(dir.path())
            .env("PLAPLAB_THREADS", "4")
            .output()
            .unwrap();
        assert_eq!(a.status.code(), b.status.code());
        for entry in std::fs::read_dir(dir.path().join("a")).unwrap() {
            let name = entry.unwrap().file_name();
            let x = std::fs::read(dir.path().join("a").join(&name)).unwrap();
            let y = std::fs::read(dir.path().join("b").join(&name)).unwrap();
            assert!(x == y, "{cmd}: {name:?} differs");
        }
    }
}

#[test]
fn seed_flag_changes_catalog_fields() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        json!({
            "seed": 1,
            "grid": {"dim": 2, "points": 17},
            "problem": {"v": {"source": {"kind": "random-lognormal", "sigma": 0.5}}, "rhs": {"kind": "manufactured"}},
            "potential": {"radius": 0.2, "samples": 5}
        }),
    );
    plaplab(&["potential", "--config", &cfg, "--out", "a"], dir.path());
    plaplab(&["potential", "--config", &cfg, "--out", "b", "--seed", "2"], dir.path());
    let a = std::fs::read(dir.path().join("a/potential.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/potential.csv")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn config_errors_name_the_field_and_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.json", json!({"grid": {"dim": 2, "points": 17}, "model": {"variant": "p-laplace", "p": "three"}}));
    let out = plaplab(&["solve", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("model.p"), "{err}");

    let cfg = write(
        dir.path(),
        "missing.json",
        json!({
            "grid": {"dim": 2, "points": 17},
            "model": {"variant": "p-laplace", "p": 2.0},
            "problem": {"v": {"source": {"kind": "file", "path": "nowhere.plf"}}, "rhs": {"kind": "manufactured"}}
        }),
    );
    let out = plaplab(&["solve", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.plf"));
}

#[test]
fn field_file_source_is_used() {
    let dir = tempfile::tempdir().unwrap();
    let grid = plaplab::fields::Grid::cube(2, 17, 0.0, 1.0).unwrap();
    let v = plaplab::fields::ScalarField::from_fn(&grid, |x| x[0]).to_vector();
    plaplab::fields::io::write(&dir.path().join("v.plf"), &v).unwrap();
    let cfg = write(
        dir.path(),
        "c.json",
        json!({
            "grid": {"dim": 2, "points": 17},
            "model": {"variant": "p-laplace", "p": 2.0},
            "problem": {
                "v": {"source": {"kind": "file", "path": "v.plf"}},
                "rhs": {"kind": "coupled", "b": {"kind": "unit"}}
            }
        }),
    );
    let out = plaplab(&["solve", "--config", &cfg, "--out", "o"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let u = plaplab::fields::io::read(&dir.path().join("o/solution.plf")).unwrap();
    // -Δu = x with zero data is positive inside
    assert!(u.values().iter().all(|&x| x >= 0.0));
    assert!(u.values().iter().any(|&x| x > 0.0));
}

#[test]
fn potential_centers_from_file_and_full_sweep() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("centers.csv"), "0.5, 0.5\n0.25,0.75\n").unwrap();
    let base = |potential: serde_json::Value| {
        json!({
            "grid": {"dim": 2, "points": 9},
            "problem": {"v": {"source": {"kind": "constant"}}, "rhs": {"kind": "manufactured"}},
            "potential": potential
        })
    };
    let cfg = write(dir.path(), "f.json", base(json!({"radius": 0.2, "centers_file": "centers.csv"})));
    let out = plaplab(&["potential", "--config", &cfg, "--out", "f"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv::Reader::from_path(dir.path().join("f/potential.csv")).unwrap().records().count();
    assert_eq!(rows, 2);

    let cfg = write(dir.path(), "s.json", base(json!({"radius": 0.2, "samples": 0})));
    let out = plaplab(&["potential", "--config", &cfg, "--out", "s"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let rows = csv::Reader::from_path(dir.path().join("s/potential.csv")).unwrap().records().count();
    assert_eq!(rows, 81);
}
