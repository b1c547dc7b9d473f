use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn csmacap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csmacap")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn phy_solve_writes_table_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "phy.conf", "n=1e4\nn=1e5\nseed=1\n");
    let out = dir.path().join("out");
    let res = csmacap(&["phy-solve", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("experiment=phy-solve"));
    assert!(manifest.contains("failed_cells=0"));
    let table = fs::read_to_string(out.join("phy-solve.csv")).unwrap();
    let pbar: Vec<f64> = table
        .lines()
        .filter(|l| l.split(',').nth(3) == Some("pbar") && !l.contains(",all,"))
        .map(|l| l.split(',').nth(5).unwrap().parse().unwrap())
        .collect();
    assert_eq!(pbar.len(), 2);
    assert!(pbar.iter().all(|p| (p - 0.742_904_272_6).abs() < 1e-9), "{pbar:?}");

    let table_path = out.join("phy-solve.csv");
    let res = csmacap(&["validate", table_path.to_str().unwrap(), "--experiment", "phy-solve"]);
    assert!(res.status.success());
}

#[test]
fn open_paths_sweep_passes_and_revalidates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "op.conf", "n=2e4\nseed=1\nseed=2\n");
    let out = dir.path().join("op");
    let res = csmacap(&["open-paths", "--config", &cfg, "--out", out.to_str().unwrap(), "--jobs", "1"]);
    let stdout = String::from_utf8_lossy(&res.stdout);
    assert_eq!(res.status.code(), Some(0), "{stdout}");
    assert!(stdout.contains("PASS n=20000 metric=open_paths"), "{stdout}");
    assert!(out.join("cells").is_dir());

    let table = out.join("open-paths.csv");
    let res = csmacap(&["validate", table.to_str().unwrap(), "--experiment", "open-paths"]);
    assert_eq!(res.status.code(), Some(0));
}

#[test]
fn usage_errors_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "bad.conf", "n=1e4\nseed=1\nbogus=1\n");
    let res = csmacap(&["map", "--config", &cfg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("bogus"));

    let missing = dir.path().join("missing.conf");
    let res = csmacap(&["sd-lines", "--config", missing.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(2));

    let table = write_config(dir.path(), "t.csv", "not,a,table\n");
    let res = csmacap(&["validate", &table, "--experiment", "map"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn failing_bound_exits_with_code_one() {
    let dir = tempfile::tempdir().unwrap();
    let table = write_config(
        dir.path(),
        "t.csv",
        "experiment,n,seed,metric,item,value,bound,sense,pass,ci_low,ci_high\n\
         sd-lines,100000,1,sd_lines,,12.0,9.79,le,0,,\n",
    );
    let res = csmacap(&["validate", &table, "--experiment", "sd-lines"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stdout).contains("FAIL"));
}
