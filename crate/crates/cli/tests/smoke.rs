use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke").join(name)
}

fn bramble(args: &[&str], out: &Path, workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bramble"));
    cmd.args(args).arg("--out").arg(out).env_remove("BRAMBLE_WORKERS");
    if let Some(w) = workers {
        cmd.env("BRAMBLE_WORKERS", w);
    }
    cmd.output().unwrap()
}

fn run_ok(sub: &str, out: &Path) -> String {
    let cfg = config("tiny.json");
    let o = bramble(&[sub, "--config", cfg.to_str().unwrap()], out, None);
    let stdout = String::from_utf8_lossy(&o.stdout).into_owned();
    assert_eq!(o.status.code(), Some(0), "{sub}: {stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    stdout
}

#[test]
fn every_subcommand_runs_on_the_tiny_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    run_ok("validate-law", out);
    assert!(out.join("certificate.json").exists());
    let norm = run_ok("normalize", out);
    assert!(norm.contains("vartheta = 1.0000"), "{norm}");
    let wc = run_ok("walk-constants", out);
    assert!(wc.contains("PASS constant_chain"), "{wc}");
    run_ok("renewal", out);
    let header = std::fs::read_to_string(out.join("renewal.csv")).unwrap();
    assert!(header.starts_with("u,R,SE"));
    run_ok("simulate", out);
    let traces = std::fs::read_to_string(out.join("traces.csv")).unwrap();
    assert!(traces.starts_with("replica,n,W,D,alpha,W_alpha,D_alpha,min_v,pop,survived,truncated"));
    let spine = run_ok("spine-check", out);
    assert!(spine.contains("spine_vs_identity"), "{spine}");
    let exp = run_ok("experiment", out);
    assert!(exp.lines().all(|l| !l.starts_with("FAIL")), "{exp}");
    for f in ["manifest.json", "counts.csv", "summary.csv", "limsup.csv", "fixed_point.csv", "walk_constants.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn experiment_output_is_independent_of_workers() {
    let cfg = config("tiny.json");
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let args = ["experiment", "--config", cfg.to_str().unwrap(), "--seed", "11"];
    let oa = bramble(&args, a.path(), Some("1"));
    let ob = bramble(&[&args[..], &["--workers", "3"]].concat(), b.path(), None);
    assert_eq!(oa.status.code(), ob.status.code());
    assert_eq!(oa.stdout, ob.stdout);
    let mut names: Vec<_> = std::fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 6);
    for name in names {
        let x = std::fs::read(a.path().join(&name)).unwrap();
        let y = std::fs::read(b.path().join(&name)).unwrap();
        assert!(x == y, "{name:?} differs");
    }
    let manifest = std::fs::read_to_string(a.path().join("manifest.json")).unwrap();
    assert!(manifest.contains("\"seed\": 11"));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let pm = config("plus_minus_one.json");
    let o = bramble(&["validate-law", "--config", pm.to_str().unwrap()], out, None);
    assert_eq!(o.status.code(), Some(5));
    assert!(String::from_utf8_lossy(&o.stderr).contains("boundary case"));

    let raw = config("raw_poisson.json");
    let o = bramble(&["validate-law", "--config", raw.to_str().unwrap()], out, None);
    assert_eq!(o.status.code(), Some(6));

    let o = bramble(&["simulate", "--config", "/nonexistent/config.json"], out, None);
    assert_eq!(o.status.code(), Some(4));

    let bad = out.join("bad.json");
    std::fs::write(&bad, r#"{"law": {"family": "binary_gaussian", "mu": 1.0, "s2": -1.0}}"#).unwrap();
    let o = bramble(&["validate-law", "--config", bad.to_str().unwrap()], out, None);
    assert_eq!(o.status.code(), Some(3));

    let o = bramble(&["frobnicate"], out, None);
    assert_eq!(o.status.code(), Some(2));
    let o = bramble(&["experiment", "--seed", "-3", "--config", raw.to_str().unwrap()], out, None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn help_lists_subcommands_and_exit_codes() {
    let o = Command::new(env!("CARGO_BIN_EXE_bramble")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for sub in ["validate-law", "normalize", "walk-constants", "renewal", "simulate", "spine-check", "experiment"] {
        assert!(text.contains(sub), "{sub}");
    }
    for code in 0..=7 {
        assert!(text.contains(&format!("  {code}  ")), "exit code {code}");
    }
}
