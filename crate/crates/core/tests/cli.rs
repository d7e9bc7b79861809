use std::path::Path;
use std::process::Command;

const BIN: &str = env!("CARGO_BIN_EXE_buckletop");

fn small_config(dir: &Path, extra: &str) -> std::path::PathBuf {
    let cfg = format!(
        r#"[mesh]
nelx = 12
nely = 28

[field]
f = 0.3

[constraint]
Pc_bar = 0.5
n_eigs = 6
n_constraints = 4

[optimizer]
max_iters = 6

[output]
dir = "{}"
checkpoint_every = 2
{extra}"#,
        dir.join("run").display()
    );
    let p = dir.join("cfg.toml");
    std::fs::write(&p, cfg).unwrap();
    p
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .env_remove("BUCKLETOP_OUT")
        .env_remove("BUCKLETOP_THREADS")
        .output()
        .unwrap()
}

#[test]
fn optimize_then_analyze_reproduces_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = run(&["optimize", "--config", cfg.to_str().unwrap(), "--threads", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = dir.path().join("run");
    for f in [
        "history.csv",
        "final_design.csv",
        "final_design.pgm",
        "diagnostics.json",
        "density_0000.pgm",
        "density_0004.pgm",
        "mode_energy_1.pgm",
        "mode_energy_4.pgm",
        "config.toml",
    ] {
        assert!(run_dir.join(f).exists(), "missing {f}");
    }
    let hist = std::fs::read_to_string(run_dir.join("history.csv")).unwrap();
    let lines: Vec<&str> = hist.lines().collect();
    assert!(lines[0].starts_with("iter,p,rho,J,vol,change,lambda_1,"));
    assert!(lines[0].ends_with("lambda_6,g_max"));
    assert_eq!(lines.len(), 7);
    for (i, l) in lines[1..].iter().enumerate() {
        assert!(l.starts_with(&format!("{i},")));
    }
    assert!(std::fs::read_dir(&run_dir)
        .unwrap()
        .all(|e| !e.unwrap().file_name().to_string_lossy().contains(".tmp")));

    let an_dir = dir.path().join("an");
    let design = run_dir.join("final_design.csv");
    let out = run(&[
        "analyze",
        "--config",
        cfg.to_str().unwrap(),
        "--density",
        design.to_str().unwrap(),
        "--out",
        an_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(run_dir.join("diagnostics.json")).unwrap()).unwrap();
    let b: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(an_dir.join("diagnostics.json")).unwrap()).unwrap();
    assert_eq!(a, b["diagnostics"]);
    assert!(a["penalization_assumption"].as_str().unwrap().contains("p = 1"));

    // warm start with zero iterations keeps the stored design
    let cfg0 = small_config(dir.path(), "");
    let text = std::fs::read_to_string(&cfg0).unwrap().replace("max_iters = 6", "max_iters = 0");
    std::fs::write(&cfg0, text).unwrap();
    let warm_dir = dir.path().join("warm");
    let out = run(&[
        "optimize",
        "--config",
        cfg0.to_str().unwrap(),
        "--density",
        design.to_str().unwrap(),
        "--out",
        warm_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let read = |p: &Path| {
        let s = std::fs::read_to_string(p).unwrap();
        s.lines().skip(1).map(|l| l.split(',').nth(3).unwrap().to_string()).collect::<Vec<_>>()
    };
    assert_eq!(read(&design), read(&warm_dir.join("final_design.csv")));
}

#[test]
fn bad_inputs_give_precise_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "[mesh2]\nx = 1\n");
    let out = run(&["optimize", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("cfg.toml") && err.contains("mesh2"), "{err}");

    let cfg = small_config(dir.path(), "");
    let bad = dir.path().join("short.txt");
    std::fs::write(&bad, "0.5 0.5 0.5").unwrap();
    let out = run(&["analyze", "--config", cfg.to_str().unwrap(), "--density", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 336, got 3"));

    let out = run(&["analyze", "--config", dir.path().join("nope.toml").to_str().unwrap()]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.toml"));
}

#[test]
fn fdcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let base = "[mesh]\nnelx = 6\nnely = 4\n[problem]\nkind = \"compressed_beam\"\n[constraint]\nkind = \"ks\"\nrho = 16.0\nn_eigs = 4\nn_constraints = 4\n";
    let good = dir.path().join("good.toml");
    std::fs::write(&good, base).unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, format!("{base}[sensitivity]\nconsistent = false\n")).unwrap();
    let out_dir = dir.path().join("fd");
    let out = run(&["fdcheck", "--config", good.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let csv = std::fs::read_to_string(out_dir.join("fdcheck.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4 * 24);
    let out = run(&["fdcheck", "--config", bad.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("EXCEEDED"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("worst entry"));
}

#[test]
fn verify_column_prints_ladder() {
    let out = run(&["verify-column", "--element", "q4"]);
    assert!(out.status.success());
    let s = String::from_utf8_lossy(&out.stdout);
    assert!(s.contains("closed-form P_c = 2.056"));
    assert_eq!(s.lines().filter(|l| l.starts_with("Q4")).count(), 7);
    assert!(s.contains("160x32"));
}

#[test]
fn shipped_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(root).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            buckletop::driver::RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 2);
}
