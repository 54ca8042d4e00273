//! End-to-end checks of the command-line binary: determinism of the
//! benchmark outputs (acceptance criterion: byte-identical CSVs for a
//! fixed seed), the solve/plot round trip, and the exit-code contract.

use std::path::Path;
use std::process::Command;

fn binary() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cmdp-accel"))
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn criterion_11_benchmark_csv_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let out_a = dir.path().join("run_a");
    let out_b = dir.path().join("run_b");
    for out in [&out_a, &out_b] {
        let status = binary()
            .args([
                "benchmark",
                "--seed",
                "7",
                "--states",
                "6",
                "--actions",
                "3",
                "--constraints",
                "1",
                "--epsilon",
                "0.1",
                "--instances",
                "2",
                "--jobs",
                "2",
                "--out",
            ])
            .arg(out)
            .status()
            .expect("benchmark run");
        assert!(status.success());
    }
    for name in ["summary.csv", "trace_00.csv", "trace_01.csv"] {
        let a = read(&out_a.join(name));
        let b = read(&out_b.join(name));
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between identical runs");
    }
    println!("criterion 11 (benchmark CSVs byte-identical across runs): PASS");
}

#[test]
fn solve_then_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let status = binary()
        .args([
            "solve",
            "--seed",
            "3",
            "--states",
            "5",
            "--actions",
            "3",
            "--constraints",
            "1",
            "--solver",
            "arcpo",
            "--epsilon",
            "0.1",
            "--out",
        ])
        .arg(dir.path())
        .status()
        .expect("solve run");
    assert!(status.success());
    for name in [
        "instance.json",
        "certificate.json",
        "trace_arcpo.csv",
        "solution_arcpo.json",
    ] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }

    let svg_path = dir.path().join("plot.svg");
    let status = binary()
        .args(["plot", "--traces"])
        .arg(dir.path().join("trace_arcpo.csv"))
        .arg("--out")
        .arg(&svg_path)
        .status()
        .expect("plot run");
    assert!(status.success());
    let svg = String::from_utf8(read(&svg_path)).unwrap();
    assert!(svg.contains("<svg") && svg.contains("polyline"));

    // Solving the emitted instance file by LP works and exits 0.
    let status = binary()
        .args(["solve", "--solver", "lp", "--instance"])
        .arg(dir.path().join("instance.json"))
        .arg("--out")
        .arg(dir.path())
        .status()
        .expect("lp run");
    assert!(status.success());
}

#[test]
fn exit_codes_follow_the_contract() {
    // Invalid input: missing instance file -> 2.
    let status = binary()
        .args(["solve", "--solver", "lp", "--instance", "/nonexistent/x.json"])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));

    // Malformed CLI usage -> 2 (clap's convention matches the contract).
    let status = binary().args(["solve", "--bogus-flag"]).status().unwrap();
    assert_eq!(status.code(), Some(2));

    // Verify exits 0 on a healthy build.
    let status = binary().args(["verify", "--seed", "1"]).status().unwrap();
    assert_eq!(status.code(), Some(0));
}
