use std::path::{Path, PathBuf};
use std::process::Command;

use auxmix::sampler::Algorithm;
use auxmix::stats::median;
use auxmix::toy::simulate_toy;
use auxmix_cli::config::sha256_hex;
use auxmix_cli::data::{read_toy, write_toy};
use auxmix_cli::run::{compare, prepare};
use auxmix_cli::RunConfig;
use auxmix::oracle::RwmhConfig;

fn auxmix(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_auxmix")).args(args).output().expect("binary runs")
}

fn toy_config(dir: &Path, c: f64, data_seed: u64, extra: &str) -> PathBuf {
    let data = dir.join(format!("toy_{data_seed}.csv"));
    write_toy(&data, &simulate_toy(30, c, data_seed).unwrap()).unwrap();
    let cfg = dir.join(format!("run_{data_seed}.toml"));
    let text = format!(
        "schema_version = 1\n[data]\npath = \"{}\"\ncovariates = [\"x1\"]\n{extra}",
        data.file_name().unwrap().to_str().unwrap()
    );
    std::fs::write(&cfg, text).unwrap();
    cfg
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulated_files_repeat_and_parse_back_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for p in [&a, &b] {
        let out = auxmix(&["simulate", "--n", "50", "--c", "1.2", "--seed", "9", "--out", p.to_str().unwrap()]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let parsed = read_toy(&a, 1.2).unwrap();
    let direct = simulate_toy(50, 1.2, 9).unwrap();
    assert_eq!(parsed.y, direct.y);
    assert!(parsed.x1.iter().zip(&direct.x1).all(|(p, d)| p.to_bits() == d.to_bits()));
    assert!(parsed.x2.iter().zip(&direct.x2).all(|(p, d)| p.to_bits() == d.to_bits()));
}

#[test]
fn fit_is_reproducible_and_the_manifest_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), 0.0, 0, "[sampler]\niterations = 1600\nburn_in = 1000\nseed = 1\n[output]\nchains = 2\n");
    let mut draws = Vec::new();
    for name in ["first", "second"] {
        let out_dir = dir.path().join(name);
        let out = auxmix(&["fit", "-c", cfg.to_str().unwrap(), "--out", out_dir.to_str().unwrap(), "--workers", "2"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let bytes = std::fs::read(out_dir.join("draws.csv")).unwrap();
        let m = json(&out_dir.join("manifest.json"));
        assert_eq!(m["status"], "ok");
        assert_eq!(m["seed"], 1);
        assert_eq!(m["outputs"]["draws.csv"], sha256_hex(&bytes));
        assert_eq!(m["timings"].as_array().unwrap().len(), 2);
        // the well-specified toy needs no correction
        assert_eq!(m["chosen_algorithm"], serde_json::json!(["IAMS", "IAMS"]));
        let s = json(&out_dir.join("summary.json"));
        assert_eq!(s["parameters"][1]["name"], "beta1");
        assert!(s["parameters"][1]["ess"].as_f64().unwrap() > 0.0);
        draws.push(bytes);
    }
    assert_eq!(draws[0], draws[1]);
    let text = String::from_utf8(draws[0].clone()).unwrap();
    assert!(text.starts_with("chain,beta0,beta1\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 600);
}

#[test]
fn configuration_problems_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), 0.0, 1, "");
    let c = cfg.to_str().unwrap();
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    assert_eq!(auxmix(&["fit", "-c", c, "-o", o, "--iterations", "500", "--burn-in", "500"]).status.code(), Some(2));
    assert_eq!(auxmix(&["fit", "-c", "missing.toml"]).status.code(), Some(2));
    assert_eq!(auxmix(&["fit", "-c", c, "-o", o, "--algorithm", "bogus"]).status.code(), Some(2));
    let bad_column = toy_config(dir.path(), 0.0, 2, "");
    let text = std::fs::read_to_string(&bad_column).unwrap().replace("x1", "x9");
    std::fs::write(&bad_column, text).unwrap();
    assert_eq!(auxmix(&["fit", "-c", bad_column.to_str().unwrap(), "-o", o]).status.code(), Some(2));
    std::fs::write(dir.path().join("toy_1.csv"), "y,x1\n-1,0.5\n2,0.1\n").unwrap();
    assert_eq!(auxmix(&["fit", "-c", c, "-o", o]).status.code(), Some(2));
    let env = Command::new(env!("CARGO_BIN_EXE_auxmix"))
        .args(["fit", "-c", c, "-o", o])
        .env("AUXMIX_WORKERS", "none")
        .output()
        .unwrap();
    assert_eq!(env.status.code(), Some(2));
}

#[test]
fn grouped_random_effects_with_a_structure_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut csv = String::from("y,x1,site\n");
    for i in 0..24 {
        writeln_row(&mut csv, i);
    }
    std::fs::write(dir.path().join("sites.csv"), csv).unwrap();
    // first-order random walk over three ordered sites
    std::fs::write(dir.path().join("rw1.txt"), "1 -1 0\n-1 2 -1\n0 -1 1\n").unwrap();
    let cfg = dir.path().join("re.toml");
    std::fs::write(
        &cfg,
        r#"schema_version = 1
[data]
path = "sites.csv"
covariates = ["x1"]
[[random_effects]]
group = "site"
precision = "rw1.txt"
prior = { kind = "inverse-gamma", shape = 1.0, scale = 0.1 }
[sampler]
algorithm = "mh-iams"
iterations = 700
burn_in = 200
"#,
    )
    .unwrap();
    let out_dir = dir.path().join("out");
    let out = auxmix(&["fit", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let header = std::fs::read_to_string(out_dir.join("draws.csv")).unwrap().lines().next().unwrap().to_string();
    assert_eq!(header, "chain,beta0,beta1,gamma_0_0,gamma_0_1,gamma_0_2,sigma2_0");
    let s = json(&out_dir.join("summary.json"));
    let blocks: Vec<&str> = s["chains"][0]["acceptance"].as_array().unwrap().iter().map(|b| b["block"].as_str().unwrap()).collect();
    assert_eq!(blocks.len(), 3);

    std::fs::write(dir.path().join("bad.txt"), "1 2\n3 1\n").unwrap();
    let text = std::fs::read_to_string(&cfg).unwrap().replace("rw1.txt", "bad.txt");
    std::fs::write(&cfg, text).unwrap();
    assert_eq!(auxmix(&["fit", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap()]).status.code(), Some(2));
}

fn writeln_row(csv: &mut String, i: usize) {
    let x = (i as f64 * 0.37).sin();
    let y = [1, 3, 0, 2, 5, 1][i % 6];
    csv.push_str(&format!("{y},{x},{}\n", ["north", "east", "south"][i % 3]));
}

#[test]
fn diagnose_with_the_exact_law_reports_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy_config(dir.path(), 1.2, 3, "[sampler]\nalgorithm = \"iams\"\niterations = 1400\nburn_in = 1000\n");
    let out_dir = dir.path().join("diag");
    let out = auxmix(&["diagnose", "-c", cfg.to_str().unwrap(), "-o", out_dir.to_str().unwrap(), "--law", "exact", "--stride", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let delta = std::fs::read_to_string(out_dir.join("delta.csv")).unwrap();
    let rows: Vec<&str> = delta.lines().skip(1).collect();
    assert!(!rows.is_empty());
    assert!(rows.iter().all(|r| r.split(',').nth(5) == Some("0")));
    let m = json(&out_dir.join("manifest.json"));
    assert!(m["additivity_relative_error"][0].as_f64().unwrap() <= 1e-8);
}

fn compare_toy(dir: &Path, c: f64, data_seed: u64, algorithms: &[Algorithm]) -> auxmix_cli::run::CompareOutcome {
    let cfg = toy_config(dir, c, data_seed, "[sampler]\niterations = 21000\nburn_in = 1000\nseed = 1\n");
    let mut cfg = RunConfig::load(&cfg).unwrap();
    cfg.output.dir = dir.join(format!("cmp_{data_seed}"));
    let p = prepare(cfg).unwrap();
    compare(&p, algorithms, Some(RwmhConfig::default()), 1).unwrap()
}

#[test]
fn every_algorithm_matches_the_oracle_on_the_clean_toy() {
    let dir = tempfile::tempdir().unwrap();
    let out = compare_toy(dir.path(), 0.0, 0, &Algorithm::ALL);
    assert_eq!(out.oracle.as_ref().unwrap().name(), "grid");
    for r in &out.rows {
        for k in &r.ks {
            assert!(k.unwrap() <= 0.05, "{}: KS {:?}", r.algorithm, r.ks);
        }
    }
    for file in ["densities.csv", "acceptance.csv", "timing.csv", "ks.csv", "manifest.json"] {
        assert!(out.dir.join(file).exists(), "{file}");
    }
    let timing = std::fs::read_to_string(out.dir.join("timing.csv")).unwrap();
    assert!(timing.lines().any(|l| l.starts_with("IAMS,") && l.ends_with(",1")));
}

#[test]
fn iams_drifts_from_the_oracle_on_the_misspecified_toy() {
    // a single data set may have no extreme residual; look at the median over ten
    let dir = tempfile::tempdir().unwrap();
    let ratios: Vec<f64> = (0..10)
        .map(|seed| {
            let out = compare_toy(dir.path(), 1.2, seed, &[Algorithm::Iams, Algorithm::Riams]);
            out.rows[0].ks[1].unwrap() / out.rows[1].ks[1].unwrap()
        })
        .collect();
    let m = median(&ratios).unwrap();
    assert!(m >= 3.0, "median KS ratio {m}, ratios {ratios:?}");
}
