use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn jumpkit(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_jumpkit"));
    cmd.args(args).env_remove("JUMPKIT_THREADS");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let out = dir.join(format!("{name}_out"));
    let path = dir.join(format!("{name}.cfg"));
    fs::write(&path, format!("{body}\noutput_dir = {}\n", out.display())).unwrap();
    path
}

fn out_dir(cfg: &Path) -> PathBuf {
    cfg.with_file_name(format!("{}_out", cfg.file_stem().unwrap().to_str().unwrap()))
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn zeno_smoke_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "z", "experiment = zeno\nN_list = 1,2,4,8");
    let o = jumpkit(&["run", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out_dir(&cfg).join("zeno_survival.csv"));
    assert_eq!(rows.len(), 4);
    let p2: f64 = rows[1][2].parse().unwrap();
    assert!((p2 - 0.25).abs() < 1e-12);
    assert!(out_dir(&cfg).join("manifest").exists());
}

#[test]
fn dissection_flag_overrides_list() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "z", "experiment = zeno");
    let o = jumpkit(&["run", cfg.to_str().unwrap(), "--dissection", "uniform:16"], &[]);
    assert_eq!(code(&o), 0);
    let rows = read_csv(&out_dir(&cfg).join("zeno_survival.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0], "16");

    let times = tmp.path().join("times.txt");
    fs::write(&times, "0\n0.5\n1.0\n1.5707963267948966\n").unwrap();
    let spec = format!("file:{}", times.display());
    let o = jumpkit(&["run", cfg.to_str().unwrap(), "--dissection", &spec], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out_dir(&cfg).join("zeno_survival.csv"));
    assert_eq!(rows[0][0], "3");
    let (p, closed): (f64, f64) = (rows[0][2].parse().unwrap(), rows[0][3].parse().unwrap());
    assert!((p - closed).abs() < 1e-14);

    let o = jumpkit(&["run", cfg.to_str().unwrap(), "--dissection", "grid:4"], &[]);
    assert_eq!(code(&o), 2);
}

#[test]
fn ion_runs_are_byte_identical_across_thread_counts() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "i", "experiment = ion\nhorizon = 2000\nseed = 7\nrecords = 8");
    let a = jumpkit(&["run", cfg.to_str().unwrap()], &[("JUMPKIT_THREADS", "1")]);
    assert_eq!(code(&a), 0);
    let first: Vec<Vec<u8>> = ["ion_record.csv", "ion_ensemble.csv"].iter().map(|f| fs::read(out_dir(&cfg).join(f)).unwrap()).collect();
    let b = jumpkit(&["run", cfg.to_str().unwrap()], &[("JUMPKIT_THREADS", "3")]);
    assert_eq!(code(&b), 0);
    let second: Vec<Vec<u8>> = ["ion_record.csv", "ion_ensemble.csv"].iter().map(|f| fs::read(out_dir(&cfg).join(f)).unwrap()).collect();
    assert_eq!(first, second);
    assert!(first[0].len() > 100);
}

#[test]
fn manifest_reproduces_outputs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "b", "experiment = beables-demo\ntrajectories = 300\nseed = 3");
    assert_eq!(code(&jumpkit(&["run", cfg.to_str().unwrap()], &[])), 0);
    let dir = out_dir(&cfg);
    let before = fs::read(dir.join("beables-demo_born.csv")).unwrap();
    let manifest = tmp.path().join("from_manifest.cfg");
    fs::copy(dir.join("manifest"), &manifest).unwrap();
    fs::remove_file(dir.join("beables-demo_born.csv")).unwrap();
    assert_eq!(code(&jumpkit(&["run", manifest.to_str().unwrap()], &[])), 0);
    assert_eq!(before, fs::read(dir.join("beables-demo_born.csv")).unwrap());
}

#[test]
fn decay_amplitude_slope_matches_gamma() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "d", "experiment = decay\nepsilon = 0.1\ng = 1\nL = 400");
    let o = jumpkit(&["run", cfg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_csv(&out_dir(&cfg).join("decay_amplitude.csv"));
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .map(|r| (r[0].parse::<f64>().unwrap(), r[3].parse::<f64>().unwrap().ln()))
        .filter(|(t, _)| *t >= 20.0)
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let summary = read_csv(&out_dir(&cfg).join("decay_summary.csv"));
    let two_re_gamma: f64 = summary[0][2].parse().unwrap();
    assert!((slope + two_re_gamma).abs() < 0.1 * two_re_gamma, "slope {slope}, 2ReΓ {two_re_gamma}");
}

#[test]
fn validate_and_exit_codes() {
    let tmp = TempDir::new().unwrap();
    let ok = write_config(tmp.path(), "ok", "experiment = decay");
    assert_eq!(code(&jumpkit(&["validate", ok.to_str().unwrap()], &[])), 0);

    let missing = write_config(tmp.path(), "missing", "seed = 4");
    let o = jumpkit(&["validate", missing.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("experiment"));

    let neg = write_config(tmp.path(), "neg", "experiment = decay\nepsilon = -0.1");
    let o = jumpkit(&["validate", neg.to_str().unwrap()], &[]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("epsilon"));

    let nofile = tmp.path().join("absent.cfg");
    assert_eq!(code(&jumpkit(&["run", nofile.to_str().unwrap()], &[])), 4);

    let trunc = write_config(tmp.path(), "trunc", "experiment = ion\nphoton_n_max = 2");
    assert_eq!(code(&jumpkit(&["run", trunc.to_str().unwrap()], &[])), 3);

    assert_eq!(code(&jumpkit(&["run", ok.to_str().unwrap()], &[("JUMPKIT_THREADS", "zero")])), 2);
}
