use std::path::PathBuf;
use std::process::{Command, Output};

fn fixture(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name).to_string_lossy().into_owned()
}

fn exactcond(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_exactcond"));
    cmd.args(args).env_remove("GAUSS_COND_TOL");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn first_line(o: &Output) -> String {
    stdout(o).lines().next().unwrap_or_default().to_string()
}

#[test]
fn run_prints_the_posterior_as_json() {
    let o = exactcond(&["run", &fixture("noisy.gauss")], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(first_line(&o).trim()).unwrap();
    assert_eq!(v["status"], "posterior");
    assert!((v["mean"][0].as_f64().unwrap() - 42.0).abs() < 1e-9);
    assert!((v["cov"][0][0].as_f64().unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn both_routes_agree_on_the_command_line() {
    let o = exactcond(&["run", "--both", &fixture("walk_batch.gauss")], &[]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn exit_codes() {
    assert_eq!(exactcond(&["run", &fixture("contradiction.gauss")], &[]).status.code(), Some(2));
    assert_eq!(exactcond(&["fin-run", &fixture("impossible.fin")], &[]).status.code(), Some(2));
    assert_eq!(exactcond(&["run", &fixture("missing.gauss")], &[]).status.code(), Some(1));
    assert_eq!(exactcond(&["no-such-command"], &[]).status.code(), Some(1));
    let d = exactcond(&["equiv", &fixture("cond0.gauss"), &fixture("cond1.gauss")], &[]);
    assert_eq!(d.status.code(), Some(3));
    assert_eq!(first_line(&d), "DISTINGUISHED");
}

#[test]
fn gaussian_equivalence_under_every_method() {
    let pairs = [("cond0.gauss", "cond0_scaled.gauss"), ("walk_batch.gauss", "walk_interleaved.gauss"), ("walk_batch.gauss", "walk_initialized.gauss")];
    for (a, b) in pairs {
        for method in ["canonical", "algebraic", "probe"] {
            let o = exactcond(&["equiv", &fixture(a), &fixture(b), "--method", method], &[]);
            assert_eq!(first_line(&o), "EQUIVALENT", "{a} {b} {method}");
            assert_eq!(o.status.code(), Some(0));
        }
    }
}

#[test]
fn finite_programs_under_both_modes() {
    let o = exactcond(&["fin-run", &fixture("coins.fin")], &[]);
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_str(first_line(&o).trim()).unwrap();
    assert_eq!(v["columns"][0]["total"], "13/25");
    assert_eq!(v["columns"][0]["normalized"][1]["mass"], "4/13");

    let (open, prefixed, normalized) = (fixture("open.fin"), fixture("open_prefixed.fin"), fixture("open_normalized.fin"));
    let verdict = |a: &str, b: &str, mode: &str| first_line(&exactcond(&["fin-equiv", a, b, "--mode", mode], &[]));
    assert_eq!(verdict(&open, &prefixed, "psl"), "EQUIVALENT");
    assert_eq!(verdict(&open, &prefixed, "p"), "DISTINGUISHED");
    assert_eq!(verdict(&open, &normalized, "psl"), "DISTINGUISHED");
    // `equiv` dispatches on the file extension.
    let o = exactcond(&["equiv", &open, &prefixed, "--mode", "psl"], &[]);
    assert_eq!(first_line(&o), "EQUIVALENT");
}

#[test]
fn walk_writes_csv() {
    let o = exactcond(&["walk", "--n", "5", "--obs", "2=1"], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "i,mean,variance\n0,0,0\n1,0.5,0.5\n2,1,0\n3,1,1\n4,1,2\n");
    let dir = std::env::temp_dir().join(format!("exactcond-walk-{}", std::process::id()));
    let path = dir.with_extension("csv");
    let o = exactcond(&["walk", "--n", "5", "--obs", "2=1", "--out", path.to_str().unwrap()], &[]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "i,mean,variance\n0,0,0\n1,0.5,0.5\n2,1,0\n3,1,1\n4,1,2\n");
    let _ = std::fs::remove_file(path);
    assert_eq!(exactcond(&["walk", "--obs", "3"], &[]).status.code(), Some(1));
}

#[test]
fn output_is_deterministic() {
    let runs: Vec<Vec<&str>> = vec![
        vec!["run", "--trace"],
        vec!["normalize"],
        vec!["walk", "--n", "100", "--obs", "20=2.5", "--obs", "40=-1", "--obs", "60=4", "--obs", "80=0.5"],
    ];
    for args in runs {
        let mut args: Vec<String> = args.into_iter().map(String::from).collect();
        if args[0] != "walk" {
            args.push(fixture("noisy.gauss"));
        }
        let args: Vec<&str> = args.iter().map(|s| s.as_str()).collect();
        let a = exactcond(&args, &[]);
        let b = exactcond(&args, &[]);
        assert_eq!(a.status.code(), Some(0), "{args:?}");
        assert_eq!(a.stdout, b.stdout, "{args:?}");
    }
}

#[test]
fn tolerance_comes_from_flag_then_environment() {
    let (c0, c1) = (fixture("cond0.gauss"), fixture("cond1.gauss"));
    let loose = exactcond(&["equiv", &c0, &c1], &[("GAUSS_COND_TOL", "10")]);
    assert_eq!(first_line(&loose), "EQUIVALENT");
    let flag_wins = exactcond(&["equiv", &c0, &c1, "--tol", "1e-8"], &[("GAUSS_COND_TOL", "10")]);
    assert_eq!(first_line(&flag_wins), "DISTINGUISHED");
    assert_eq!(exactcond(&["run", &fixture("noisy.gauss")], &[("GAUSS_COND_TOL", "abc")]).status.code(), Some(1));
    assert_eq!(exactcond(&["run", &fixture("noisy.gauss"), "--tol", "-1"], &[]).status.code(), Some(1));
}
