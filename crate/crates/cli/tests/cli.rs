use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_whittle-aoi"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

const SYSTEM: &str = "[system]\nalpha = 0.5\nclasses = [{ p = 0.8, gamma = 0.5 }, { p = 0.5, gamma = 0.5 }]\n";

#[test]
fn balpha_reference_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["balpha", "--paper", "--check", "--out", "o", "--no-timestamp"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("o/balpha.csv")).unwrap();
    assert!(csv.starts_with("p_lo,p_hi,D,B_alpha,printed,status\n"));
    assert!(csv.contains("0.2,0.4,5.0000,0.6250,0.6250,match\n"));
    assert!(csv.contains("0.8,0.9,18.1047,0.0720,0.1351,mismatch\n"));
    assert_eq!(csv.lines().count(), 11);
    assert!(!csv.contains('\r'));
}

#[test]
fn balpha_pairs_only() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_in(dir.path(), &["balpha", "--pair", "0.4,0.2", "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let csv = std::fs::read_to_string(dir.path().join("o/balpha.csv")).unwrap();
    assert_eq!(csv, "p_lo,p_hi,D,B_alpha,printed,status\n0.2,0.4,5.0000,0.6250,,\n");
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let sweep = write(
        dir.path(),
        "s.toml",
        &format!("kind = \"sim_sweep\"\nn_list = [8, 16]\nhorizon = 3000\nseeds = 2\n{SYSTEM}"),
    );
    let fluid = write(
        dir.path(),
        "f.toml",
        &format!("kind = \"fluid_run\"\nhorizon = 200\nstate_stride = 5\ninit = {{ random = {{ seed = 4 }} }}\n{SYSTEM}"),
    );
    for (cmd, cfg) in [("compare", &sweep), ("fluid", &fluid)] {
        let mut seen = Vec::new();
        for out_dir in ["a", "b"] {
            let out = run_in(dir.path(), &[cmd, "--config", cfg, "--out", out_dir, "--no-timestamp"]);
            assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
            let mut files: Vec<_> = std::fs::read_dir(dir.path().join(out_dir))
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            files.sort();
            let contents: Vec<(String, Vec<u8>)> = files
                .iter()
                .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(p).unwrap()))
                .collect();
            seen.push(contents);
        }
        assert_eq!(seen[0], seen[1], "{cmd}");
    }
}

#[test]
fn seed_flag_changes_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "s.toml",
        &format!("kind = \"sim_sweep\"\nn_list = [8]\nhorizon = 500\nseeds = 1\n{SYSTEM}"),
    );
    let a = run_in(dir.path(), &["compare", "--config", &cfg, "--out", "a"]);
    let b = run_in(dir.path(), &["compare", "--config", &cfg, "--out", "b", "--seed", "99"]);
    assert!(a.status.success() && b.status.success());
    let ma = std::fs::read_to_string(dir.path().join("a/metrics.csv")).unwrap();
    let mb = std::fs::read_to_string(dir.path().join("b/metrics.csv")).unwrap();
    assert!(ma.contains("\n8,0,whittle,500,"));
    assert!(mb.contains("\n8,99,whittle,500,"));
    let meta = std::fs::read_to_string(dir.path().join("b/compare.meta.json")).unwrap();
    assert!(meta.contains("\"seed\": 99"));
    assert!(meta.contains("\"timestamp\""));
}

#[test]
fn validation_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let typo = write(dir.path(), "t.toml", &format!("kind = \"relaxed_solve\"\nalfa = 1\n{SYSTEM}"));
    let out = run_in(dir.path(), &["relaxed", "--config", &typo]);
    assert_eq!(out.status.code(), Some(1));

    let relaxed = write(dir.path(), "r.toml", &format!("kind = \"relaxed_solve\"\n{SYSTEM}"));
    let out = run_in(dir.path(), &["fluid", "--config", &relaxed]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("belongs to `relaxed`"));

    let out = run_in(dir.path(), &["compare", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(1));

    let uneven = write(
        dir.path(),
        "u.toml",
        &format!("kind = \"sim_sweep\"\nn_list = [7]\nhorizon = 10\nseeds = 1\n{SYSTEM}"),
    );
    let out = run_in(dir.path(), &["compare", "--config", &uneven]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bad_initial_file_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "x.csv", "class,age,mass\n1,1,0.5\n2,zero,0.5\n");
    let cfg = write(
        dir.path(),
        "f.toml",
        &format!("kind = \"fluid_run\"\ninit = {{ file = {{ path = \"x.csv\" }} }}\n{SYSTEM}"),
    );
    let out = run_in(dir.path(), &["fluid", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("x.csv:3:"));
}

#[test]
fn missing_initial_file_is_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "f.toml",
        &format!("kind = \"fluid_run\"\ninit = {{ file = {{ path = \"nope.csv\" }} }}\n{SYSTEM}"),
    );
    let out = run_in(dir.path(), &["fluid", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn failed_check_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "f.toml", &format!("kind = \"fluid_run\"\nhorizon = 3\n{SYSTEM}"));
    let out = run_in(dir.path(), &["fluid", "--config", &cfg, "--out", "o"]);
    assert_eq!(out.status.code(), Some(0));
    let out = run_in(dir.path(), &["fluid", "--config", &cfg, "--out", "o", "--check"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(dir.path().join("o/trajectory.csv").exists());
}

#[test]
fn relaxed_single_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "r.toml",
        "kind = \"relaxed_solve\"\n[system]\nalpha = 0.5\nclasses = [{ p = 1.0, gamma = 1.0 }]\n",
    );
    let out = run_in(dir.path(), &["relaxed", "--config", &cfg, "--out", "o", "--check"]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("l1        [2]"));
    assert!(stdout.contains("C_RP      1.5"));
}

#[test]
fn bundled_configs_parse() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&root).unwrap() {
        let p = e.unwrap().path();
        if p.extension().is_some_and(|x| x == "toml") {
            let text = std::fs::read_to_string(&p).unwrap();
            whittle_aoi::harness::ExperimentSpec::from_toml(&text)
                .unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}
