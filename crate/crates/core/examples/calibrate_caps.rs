//! Measures the largest empirical constant of each estimate on a calibration
//! catalog and prints a cap file with a safety factor of two, rounded up to
//! one significant digit.
//!
//! `cargo run --release --example calibrate_caps > caps.json`

use serde_json::json;

use plaplab::cli::{run_hodge, run_verify, ExperimentConfig};
use plaplab::estimates::Caps;

const SEEDS: [u64; 3] = [101, 202, 303];

fn config(value: serde_json::Value) -> ExperimentConfig {
    serde_json::from_value(value).expect("valid calibration config")
}

fn manufactured(estimate: &str, seed: u64, model: serde_json::Value) -> ExperimentConfig {
    config(json!({
        "seed": seed,
        "grid": {"dim": 2, "points": 33, "lo": 0.25},
        "model": model,
        "problem": {"v": {"source": {"kind": "zero"}}, "rhs": {"kind": "manufactured"}},
        "verify": {"estimate": estimate, "radius": 0.3, "levels": 10, "centers": 40, "refinements": [17, 33]}
    }))
}

fn coupled(estimate: &str, p: f64, q: f64, seed: u64, source: serde_json::Value, dim: usize) -> ExperimentConfig {
    let points = if dim == 2 { 33 } else { 13 };
    config(json!({
        "seed": seed,
        "grid": {"dim": dim, "points": points},
        "model": {"variant": "p-laplace", "p": p},
        "problem": {
            "v": {"source": source, "amplitude": 0.5},
            "boundary": {"kind": "sine-product"},
            "rhs": {"kind": "coupled", "b": {"kind": "power", "gamma": 1.0, "q": q}}
        },
        "verify": {"estimate": estimate, "radius": 0.3}
    }))
}

/// Twice the observed maximum, rounded up to one significant digit.
fn cap(observed: f64) -> f64 {
    let x = 2.0 * observed;
    if x <= 0.0 {
        return 1.0;
    }
    let e = x.log10().floor() as i32;
    let digit = (x / 10f64.powi(e)).ceil();
    if e < 0 {
        digit / 10f64.powi(-e)
    } else {
        digit * 10f64.powi(e)
    }
}

fn main() -> plaplab::Result<()> {
    // unbounded caps so nothing short-circuits
    let open = Caps {
        caccioppoli: f64::INFINITY,
        oscillation: f64::INFINITY,
        degiorgi: f64::INFINITY,
        apl: f64::INFINITY,
        aes1: f64::INFINITY,
        aes2: f64::INFINITY,
        general_growth: f64::INFINITY,
        lorentz_lipschitz: f64::INFINITY,
        hodge: f64::INFINITY,
        linear: f64::INFINITY,
    };
    let mut worst = std::collections::BTreeMap::<&str, f64>::new();
    let mut record = |name: &'static str, value: f64| {
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(value);
        eprintln!("{name:<18} {value:.4}");
    };
    let sources = [
        json!({"kind": "constant"}),
        json!({"kind": "singular", "center": [0.45, 0.55], "alpha": 0.4}),
        json!({"kind": "random-lognormal", "sigma": 0.7}),
        json!({"kind": "bumps", "count": 5, "width": 0.08}),
    ];
    for &seed in &SEEDS {
        for p in [1.5, 2.0, 3.0, 4.0] {
            let pl = json!({"variant": "p-laplace", "p": p});
            for (name, est) in [("apl", "apl"), ("caccioppoli", "caccioppoli"), ("oscillation", "oscillation"), ("degiorgi", "degiorgi")] {
                record(name, run_verify(&manufactured(est, seed, pl.clone()), &open)?.max_constant);
            }
            record("linear", run_verify(&manufactured("linear", seed, pl), &open)?.max_constant);
            let gg = json!({"variant": "general-growth", "p": p, "profile": "power-log"});
            record("general_growth", run_verify(&manufactured("general-growth", seed, gg), &open)?.max_constant);
        }
        for p in [2.0, 3.0] {
            for src in &sources {
                for frac in [0.25, 0.5, 1.0] {
                    let q = frac * (p - 1.0);
                    record("aes1", run_verify(&coupled("aes1", p, q, seed, src.clone(), 2), &open)?.max_constant);
                    if frac < 1.0 {
                        record("aes2", run_verify(&coupled("aes2", p, q, seed, src.clone(), 2), &open)?.max_constant);
                    }
                }
            }
            let ll = coupled("lorentz-lipschitz", p, 0.0, seed, sources[3].clone(), 3);
            record("lorentz_lipschitz", run_verify(&ll, &open)?.max_constant);
        }
        let hodge = config(json!({
            "seed": seed,
            "grid": {"dim": 2, "points": 33},
            "hodge": {"deltas": [0.05, 0.1, 0.2], "t": 2.5, "samples": 20}
        }));
        let (rows, _) = run_hodge(&hodge, &open)?;
        record("hodge", rows.iter().filter_map(|r| r.ratio).fold(0.0, f64::max));
    }
    let caps = json!({
        "caccioppoli": cap(worst["caccioppoli"]),
        "oscillation": cap(worst["oscillation"]),
        "degiorgi": cap(worst["degiorgi"]),
        "apl": cap(worst["apl"]),
        "aes1": cap(worst["aes1"]),
        "aes2": cap(worst["aes2"]),
        "general_growth": cap(worst["general_growth"]),
        "lorentz_lipschitz": cap(worst["lorentz_lipschitz"]),
        "hodge": cap(worst["hodge"]),
        "linear": 1.1,
    });
    eprintln!("observed maxima: {worst:?}");
    println!("{}", serde_json::to_string_pretty(&caps)?);
    Ok(())
}
