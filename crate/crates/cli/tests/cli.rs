use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splinenet")).current_dir(dir).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn flops_table_shapes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["flops", "--reference"]);
    assert!(o.status.success());
    let out = stdout(&o);
    for line in ["kan[2,1,1],total,,,,24,612,3", "mlp[2,6,1],total,,,,25,36,0", "powermlp[2,4,1],total,,,,25,48,2"] {
        assert!(out.contains(line), "missing {line}\n{out}");
    }
    assert!(out.contains("564"));
    let o = run(dir.path(), &["flops", "--model", "mlp:[2,6,1]", "--lambda", "7/2", "--csv", "c.csv"]);
    assert!(o.status.success());
    assert!(std::fs::read_to_string(dir.path().join("c.csv")).unwrap().contains("total"));
    assert!(dir.path().join("c.manifest.json").exists());
    assert_eq!(run(dir.path(), &["flops", "--model", "mlp:[2,6,1]", "--lambda=-1"]).status.code(), Some(3));
    assert_eq!(run(dir.path(), &["flops", "--bogus"]).status.code(), Some(3));
}

#[test]
fn data_fit_convert_verify_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["gen-data", "--fn", "ablation_xexp", "--n", "200", "--seed", "3", "--out", "d.csv"]).status.success());
    assert!(d.join("d.test.csv").exists() && d.join("d.manifest.json").exists());

    let o = run(d, &["fit", "--model", "powermlp:[2,3,1]:k=2", "--data", "d.csv", "--epochs", "50", "--lr-grid", "0.001,0.01", "--out-dir", "run"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["model.json", "results.csv", "curve.csv", "grid.csv", "loss.svg", "manifest.json"] {
        assert!(d.join("run").join(f).exists(), "{f}");
    }
    let curve = std::fs::read_to_string(d.join("run/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 51);

    let o = run(d, &["verify", "--a", "run/model.json", "--b", "run/model.json", "--samples", "100"]);
    assert!(o.status.success());
    let report: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(report["max_abs_deviation"], 0.0);

    assert!(run(d, &["convert", "--in", "run/model.json", "--to", "kan", "--box", "1", "--out", "k.json"]).status.success());
    let o = run(d, &["verify", "--a", "run/model.json", "--b", "k.json", "--box", "1", "--samples", "2000", "--tol", "1e-8"]);
    assert!(o.status.success(), "{}", stdout(&o));
    // outside the declared box the KAN no longer matches
    assert_eq!(run(d, &["verify", "--a", "run/model.json", "--b", "k.json", "--box", "5", "--tol", "1e-8"]).status.code(), Some(2));
    // converting a multi-layer KAN with inner basis weights is reported as infeasible
    let o = run(d, &["fit", "--model", "kan:[2,2,1]:k=3:G=3", "--data", "d.csv", "--epochs", "2", "--lr", "0.01", "--out-dir", "kan"]);
    assert!(o.status.success());
    assert_eq!(run(d, &["convert", "--in", "kan/model.json", "--to", "powermlp", "--out", "p.json"]).status.code(), Some(3));
}

#[test]
fn input_errors_exit_with_code_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(run(d, &["gen-data", "--fn", "nope", "--n", "5", "--out", "x.csv"]).status.code(), Some(3));
    std::fs::write(d.join("bad.csv"), "a,b\n1,2\n").unwrap();
    std::fs::write(d.join("bad.test.csv"), "a,b\n1,2\n").unwrap();
    let o = run(d, &["fit", "--model", "mlp:[1,2,1]", "--data", "bad.csv", "--out-dir", "r"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("header"));
    assert_eq!(run(d, &["verify", "--a", "missing.json", "--b", "mlp:[2,1]"]).status.code(), Some(3));
}
