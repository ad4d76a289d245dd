//! Acceptance suite: runs the command-line pipeline on a fresh synthetic
//! market and prints one PASS/FAIL line per criterion.
//!
//! Criteria 1 to 13 come from `vardyn validate --run`, which reuses the
//! calibration produced by the pipeline; criterion 14 is the pipeline itself.
//! The process exits non-zero when any criterion fails.

use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use vardyn::validation::CriterionResult;

const BIN: &str = env!("CARGO_BIN_EXE_vardyn");
const BUDGET_SECONDS: f64 = 900.0;

struct Step {
    name: &'static str,
    ok: bool,
    seconds: f64,
    stdout: String,
}

fn step(name: &'static str, dir: &Path, args: &[&str]) -> Step {
    let t0 = Instant::now();
    let out = Command::new(BIN).current_dir(dir).args(args).output().expect("spawn vardyn");
    let seconds = t0.elapsed().as_secs_f64();
    if !out.status.success() {
        eprintln!("{name} exited with {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    }
    Step { name, ok: out.status.success(), seconds, stdout: String::from_utf8_lossy(&out.stdout).into_owned() }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let d = dir.path();
    let t0 = Instant::now();
    let m = ["--futures", "futures.csv", "--vix", "vix.csv"];
    let plan: Vec<(&'static str, Vec<&str>)> = vec![
        ("synth", vec!["synth", "--out", "."]),
        ("calibrate", [&["calibrate"][..], &m, &["--out", "calibration.json", "--grid", "grid.csv"]].concat()),
        ("extract", [&["extract"][..], &m, &["--spot", "spot.csv", "--calibration", "calibration.json", "--out", "factors.json"]].concat()),
        ("nonlinear", vec!["nonlinear", "--factors", "factors.json", "--calibration", "calibration.json", "--out", "nonlinear.json"]),
        (
            "analytics",
            vec![
                "analytics",
                "--calibration",
                "calibration.json",
                "--nonlinear",
                "nonlinear.json",
                "--maturities",
                "1m,3m,6m",
                "--out",
                "analytics.csv",
            ],
        ),
        ("validate", vec!["validate", "--run", ".", "--out", "validation.json"]),
    ];
    let mut steps = Vec::new();
    for (name, args) in &plan {
        let s = step(name, d, args);
        let ok = s.ok;
        steps.push(s);
        if !ok {
            break;
        }
    }
    let total = t0.elapsed().as_secs_f64();

    let results: Vec<CriterionResult> = std::fs::read_to_string(d.join("validation.json"))
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
        .unwrap_or_default();
    let mut all_pass = true;
    for id in 1..=13u8 {
        match results.iter().find(|r| r.id == id) {
            Some(r) => {
                all_pass &= r.pass;
                println!("{} {:>2} {:<26} {}", if r.pass { "PASS" } else { "FAIL" }, id, r.title, r.detail);
            }
            None => {
                all_pass = false;
                println!("FAIL {id:>2} {:<26} no result (pipeline did not reach validate)", "");
            }
        }
    }

    let rows = std::fs::read_to_string(d.join("analytics.csv")).map(|s| s.lines().count().saturating_sub(1)).unwrap_or(0);
    let table_lines = steps.iter().find(|s| s.name == "validate").map(|s| {
        s.stdout.lines().filter(|l| l.starts_with("PASS ") || l.starts_with("FAIL ")).count()
    });
    let exit_ok = steps.len() == plan.len() && steps.iter().all(|s| s.ok);
    let pass14 = exit_ok && table_lines == Some(13) && rows == 3 && total < BUDGET_SECONDS;
    all_pass &= pass14;
    let timings: Vec<String> = steps.iter().map(|s| format!("{} {:.1}s{}", s.name, s.seconds, if s.ok { "" } else { " [exit != 0]" })).collect();
    println!(
        "{} 14 {:<26} {}; table rows {}; analytics rows {rows}; total {total:.1}s < {BUDGET_SECONDS}s",
        if pass14 { "PASS" } else { "FAIL" },
        "end-to-end pipeline",
        timings.join(", "),
        table_lines.unwrap_or(0)
    );
    if all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
