//! The `fit`, `compare` and `diagnose` pipelines and their output files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use auxmix::diagnostics::{delta_additivity_error, delta_discrepancy, effective_sample_size, DeltaLaw, ESS_MIN_LEN};
use auxmix::mixture::MixtureBank;
use auxmix::model::PoissonLgm;
use auxmix::nlg::NlgShape;
use auxmix::oracle::{grid_posterior_1d, grid_posterior_2d, rwmh_reference, GridPosterior, ReferenceChain, RwmhConfig};
use auxmix::sampler::{run_chain, Algorithm, ChainOutput, SamplerConfig};
use auxmix::stats;
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{sha256_hex, RunConfig};
use crate::data::{build_model, Table};
use crate::error::{CliError, CliResult};

/// Points of every kernel density curve.
pub const DENSITY_POINTS: usize = 512;

/// A validated configuration with its model and data fingerprint.
pub struct Prepared {
    pub cfg: RunConfig,
    pub model: PoissonLgm,
    pub data_sha256: String,
}

pub fn prepare(cfg: RunConfig) -> CliResult<Prepared> {
    let bytes = std::fs::read(&cfg.data.path).map_err(CliError::io(format!("reading {}", cfg.data.path.display())))?;
    let table = Table::from_reader(bytes.as_slice()).map_err(|e| crate::error::config_error(format!("{}: {e}", cfg.data.path.display())))?;
    let model = build_model(&cfg, &table)?;
    Ok(Prepared { cfg, model, data_sha256: sha256_hex(&bytes) })
}

type ChainResult = (u64, auxmix::Result<ChainOutput>);

/// Runs `chains` chains of `algorithm` on up to `workers` threads.
pub fn run_algorithm(p: &Prepared, algorithm: Algorithm, workers: usize, stride: Option<usize>) -> CliResult<Vec<ChainResult>> {
    let bank = MixtureBank::shared();
    let base = SamplerConfig { algorithm, residual_stride: stride.or(p.cfg.sampler.residual_stride), ..p.cfg.sampler_config(0)? };
    base.validate().map_err(CliError::run)?;
    let shapes = shapes_of(&p.model);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| CliError::Numerical(e.to_string()))?;
    pool.install(|| {
        bank.prefetch(&shapes).map_err(CliError::run)?;
        Ok((0..p.cfg.output.chains as u64)
            .into_par_iter()
            .map(|chain| (chain, run_chain(&SamplerConfig { chain, ..base.clone() }, &p.model, bank)))
            .collect())
    })
}

fn shapes_of(model: &PoissonLgm) -> Vec<NlgShape> {
    let mut shapes: Vec<NlgShape> = vec![NlgShape::unit()];
    shapes.extend(model.y().iter().filter(|&&y| y > 0).filter_map(|&y| NlgShape::from_count(y).ok()));
    shapes.sort_by(|a, b| a.nu().total_cmp(&b.nu()));
    shapes.dedup();
    shapes
}

fn split(results: Vec<ChainResult>) -> (Vec<ChainOutput>, Vec<(u64, String)>) {
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (chain, r) in results {
        match r {
            Ok(c) => ok.push(c),
            Err(e) => failed.push((chain, e.to_string())),
        }
    }
    (ok, failed)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<String> {
    std::fs::write(path, contents).map_err(CliError::io(format!("writing {}", path.display())))?;
    Ok(sha256_hex(contents))
}

/// Draws of every chain: a `chain` column, then one column per parameter.
pub fn draws_csv(chains: &[ChainOutput]) -> String {
    let mut out = String::new();
    let Some(first) = chains.first() else { return out };
    out.push_str("chain");
    for n in &first.names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for c in chains {
        for row in c.draws.chunks(c.dim()) {
            write!(out, "{}", c.chain).unwrap();
            for v in row {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
    }
    out
}

fn finite_or_null(v: f64) -> Value {
    if v.is_finite() {
        json!(v)
    } else {
        Value::Null
    }
}

/// Pooled posterior summaries; ESS adds up over chains.
pub fn parameter_summaries(chains: &[ChainOutput]) -> Vec<Value> {
    let Some(first) = chains.first() else { return vec![] };
    (0..first.dim())
        .map(|j| {
            let pooled: Vec<f64> = chains.iter().flat_map(|c| c.column(j)).collect();
            let ess: Option<f64> = chains
                .iter()
                .map(|c| {
                    let col = c.column(j);
                    if col.len() < ESS_MIN_LEN {
                        None
                    } else {
                        effective_sample_size(&col).ok().map(|e| e.ess)
                    }
                })
                .sum();
            let q = |p: f64| stats::quantile(&pooled, p).map_or(Value::Null, finite_or_null);
            json!({
                "name": first.names[j],
                "mean": finite_or_null(stats::mean(&pooled)),
                "sd": if pooled.len() > 1 { finite_or_null(stats::sd(&pooled)) } else { Value::Null },
                "q2.5": q(0.025),
                "q50": q(0.5),
                "q97.5": q(0.975),
                "ess": ess.map_or(Value::Null, finite_or_null),
            })
        })
        .collect()
}

fn chain_summary(c: &ChainOutput) -> Value {
    let blocks: Vec<Value> = c
        .acceptance
        .iter()
        .chain(&c.sigma2_acceptance)
        .map(|a| json!({"block": a.block, "accepted": a.accepted, "proposed": a.proposed, "rate": finite_or_null(a.rate())}))
        .collect();
    let monitor = c.monitor.as_ref().map(|m| {
        let ku = m.kappa_upper();
        let kl = m.kappa_lower();
        json!({
            "iterations": m.iterations,
            "max_kappa_upper": ku.iter().cloned().fold(0.0, f64::max),
            "max_kappa_lower": if m.tracks_lower() { json!(kl.iter().cloned().fold(0.0, f64::max)) } else { Value::Null },
        })
    });
    json!({
        "chain": c.chain,
        "requested": c.requested.name(),
        "chosen_algorithm": c.used.name(),
        "acceptance": blocks,
        "tail_flags": c.flagged.iter().map(|&(i, j)| json!({"observation": i, "slot": j})).collect::<Vec<_>>(),
        "monitor": monitor,
        "label_fallbacks": c.label_fallbacks,
        "nonfinite_ratios": c.nonfinite_ratios,
    })
}

fn timing_json(c: &ChainOutput) -> Value {
    let t = &c.timings;
    json!({
        "chain": c.chain,
        "training_seconds": t.training.as_secs_f64(),
        "sampling_seconds": t.sampling.as_secs_f64(),
        "total_seconds": t.total.as_secs_f64(),
        "seconds_per_iteration": t.per_iteration(),
    })
}

fn manifest(command: &str, p: &Prepared, workers: usize, fields: Value) -> Value {
    let mut m = json!({
        "tool": "auxmix",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "schema_version": p.cfg.schema_version,
        "seed": p.cfg.sampler.seed,
        "config_hash": p.cfg.hash(),
        "config": p.cfg,
        "data": {"path": p.cfg.data.path, "sha256": p.data_sha256},
        "chains": p.cfg.output.chains,
        "workers": workers,
        "mixture_fit_hash": MixtureBank::shared().config().hash_hex(),
    });
    if let (Value::Object(a), Value::Object(b)) = (&mut m, fields) {
        a.extend(b);
    }
    m
}

fn write_json(path: &Path, v: &Value) -> CliResult<String> {
    let mut text = serde_json::to_string_pretty(v).expect("JSON value serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

fn failure_error(failed: &[(u64, String)]) -> CliError {
    let list: Vec<String> = failed.iter().map(|(c, e)| format!("chain {c}: {e}")).collect();
    CliError::Numerical(list.join("; "))
}

/// What `fit` produced.
pub struct FitOutcome {
    pub dir: PathBuf,
    pub chains: Vec<ChainOutput>,
    pub parameters: Vec<Value>,
}

/// Runs the configured chains and writes `draws.csv`, `summary.json` and
/// `manifest.json`. Chains that fail leave a failure record; the others are
/// still written.
pub fn fit(p: &Prepared, workers: usize) -> CliResult<FitOutcome> {
    let dir = p.cfg.output.dir.clone();
    create_dir(&dir)?;
    let algorithm = p.cfg.algorithm()?;
    let (chains, failed) = split(run_algorithm(p, algorithm, workers, None)?);
    let draws_hash = write_file(&dir.join("draws.csv"), draws_csv(&chains).as_bytes())?;
    let parameters = parameter_summaries(&chains);
    let summary = json!({
        "parameters": parameters,
        "chains": chains.iter().map(chain_summary).collect::<Vec<_>>(),
    });
    let summary_hash = write_json(&dir.join("summary.json"), &summary)?;
    let status = if failed.is_empty() { "ok" } else { "failed" };
    let m = manifest(
        "fit",
        p,
        workers,
        json!({
            "status": status,
            "algorithm": algorithm.name(),
            "chosen_algorithm": chains.iter().map(|c| c.used.name()).collect::<Vec<_>>(),
            "timings": chains.iter().map(timing_json).collect::<Vec<_>>(),
            "failures": failed.iter().map(|(c, e)| json!({"chain": c, "error": e})).collect::<Vec<_>>(),
            "outputs": {
                "draws.csv": draws_hash,
                "summary.json": summary_hash,
            },
        }),
    );
    write_json(&dir.join("manifest.json"), &m)?;
    if !failed.is_empty() {
        return Err(failure_error(&failed));
    }
    Ok(FitOutcome { dir, chains, parameters })
}

/// Reference posterior used by `compare`.
pub enum Oracle {
    /// Marginals from quadrature (intercept-only or two fixed effects).
    Grid(Vec<GridPosterior>),
    Rwmh(ReferenceChain),
}

impl Oracle {
    pub fn name(&self) -> &'static str {
        match self {
            Oracle::Grid(_) => "grid",
            Oracle::Rwmh(_) => "rwmh",
        }
    }

    /// Grid quadrature where it applies, otherwise adaptive random-walk Metropolis.
    pub fn build(model: &PoissonLgm, rwmh: &RwmhConfig) -> CliResult<Self> {
        if model.blocks().is_empty() && model.p() == 1 {
            let g = grid_posterior_1d(model, 0.0, model.v0()[(0, 0)], 20_001).map_err(CliError::run)?;
            return Ok(Oracle::Grid(vec![g]));
        }
        if model.blocks().is_empty() && model.p() == 2 {
            let [a, b] = grid_posterior_2d(model, 400).map_err(CliError::run)?;
            return Ok(Oracle::Grid(vec![a, b]));
        }
        Ok(Oracle::Rwmh(rwmh_reference(model, rwmh).map_err(CliError::run)?))
    }

    /// Kolmogorov-Smirnov distance between `draws` and the oracle marginal `j`.
    pub fn ks(&self, j: usize, draws: &[f64]) -> Option<f64> {
        match self {
            Oracle::Grid(g) => g.get(j).and_then(|g| stats::ks_one_sample(draws, |x| g.cdf_at(x)).ok()),
            Oracle::Rwmh(r) => (j < r.dim()).then(|| stats::ks_two_sample(draws, &r.column(j)).ok()).flatten(),
        }
    }

    fn density(&self, j: usize) -> Option<(Vec<f64>, Vec<f64>)> {
        match self {
            Oracle::Grid(g) => g.get(j).map(|g| {
                let step = g.len().div_ceil(DENSITY_POINTS).max(1);
                let idx: Vec<usize> = (0..g.len()).step_by(step).collect();
                (idx.iter().map(|&i| g.grid[i]).collect(), idx.iter().map(|&i| g.density[i]).collect())
            }),
            Oracle::Rwmh(r) => (j < r.dim()).then(|| stats::kde(&r.column(j), DENSITY_POINTS).ok()).flatten(),
        }
    }
}

/// One algorithm's results in a comparison.
pub struct CompareRow {
    pub algorithm: Algorithm,
    pub chains: Vec<ChainOutput>,
    pub seconds_per_iteration: f64,
    /// KS distance to the oracle per parameter (None without an oracle).
    pub ks: Vec<Option<f64>>,
}

impl CompareRow {
    pub fn beta_acceptance(&self) -> f64 {
        let (a, p) = self.chains.iter().filter_map(|c| c.acceptance.first()).fold((0, 0), |(a, p), b| (a + b.accepted, p + b.proposed));
        if p == 0 {
            f64::NAN
        } else {
            a as f64 / p as f64
        }
    }

    pub fn pooled(&self, j: usize) -> Vec<f64> {
        self.chains.iter().flat_map(|c| c.column(j)).collect()
    }
}

pub struct CompareOutcome {
    pub dir: PathBuf,
    pub names: Vec<String>,
    pub rows: Vec<CompareRow>,
    pub oracle: Option<Oracle>,
}

impl CompareOutcome {
    /// Per-iteration time relative to IAMS, when IAMS was run.
    pub fn relative_time(&self, algorithm: Algorithm) -> Option<f64> {
        let base = self.rows.iter().find(|r| r.algorithm == Algorithm::Iams)?.seconds_per_iteration;
        let this = self.rows.iter().find(|r| r.algorithm == algorithm)?.seconds_per_iteration;
        (base > 0.0).then_some(this / base)
    }

    pub fn acceptance_table(&self) -> String {
        let mut s = String::from("algorithm,chain,used,block,accepted,proposed,rate\n");
        for r in &self.rows {
            for c in &r.chains {
                for a in c.acceptance.iter().chain(&c.sigma2_acceptance) {
                    writeln!(s, "{},{},{},{},{},{},{}", r.algorithm, c.chain, c.used, a.block, a.accepted, a.proposed, a.rate()).unwrap();
                }
            }
        }
        s
    }

    pub fn timing_table(&self) -> String {
        let mut s = String::from("algorithm,seconds_per_iteration,relative_to_iams\n");
        for r in &self.rows {
            let rel = self.relative_time(r.algorithm).map_or("NA".to_string(), |v| v.to_string());
            writeln!(s, "{},{},{rel}", r.algorithm, r.seconds_per_iteration).unwrap();
        }
        s
    }

    pub fn ks_table(&self) -> String {
        let mut s = String::from("algorithm,parameter,ks\n");
        for r in &self.rows {
            for (j, k) in r.ks.iter().enumerate() {
                if let Some(k) = k {
                    writeln!(s, "{},{},{k}", r.algorithm, self.names[j]).unwrap();
                }
            }
        }
        s
    }

    pub fn density_table(&self) -> String {
        let mut s = String::from("source,parameter,x,density\n");
        let mut push = |source: &str, name: &str, (xs, ys): (Vec<f64>, Vec<f64>)| {
            for (x, y) in xs.iter().zip(&ys) {
                writeln!(s, "{source},{name},{x},{y}").unwrap();
            }
        };
        for r in &self.rows {
            for (j, name) in self.names.iter().enumerate() {
                if let Ok(curve) = stats::kde(&r.pooled(j), DENSITY_POINTS) {
                    push(r.algorithm.name(), name, curve);
                }
            }
        }
        if let Some(o) = &self.oracle {
            for (j, name) in self.names.iter().enumerate() {
                if let Some(curve) = o.density(j) {
                    push(o.name(), name, curve);
                }
            }
        }
        s
    }
}

/// Runs each algorithm (and optionally the oracle) on the shared data set and
/// writes `densities.csv`, `acceptance.csv`, `timing.csv`, `ks.csv` and
/// `manifest.json`.
pub fn compare(p: &Prepared, algorithms: &[Algorithm], oracle: Option<RwmhConfig>, workers: usize) -> CliResult<CompareOutcome> {
    let dir = p.cfg.output.dir.clone();
    create_dir(&dir)?;
    let oracle = oracle.map(|r| Oracle::build(&p.model, &r)).transpose()?;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &algorithm in algorithms {
        let (chains, failed) = split(run_algorithm(p, algorithm, workers, None)?);
        failures.extend(failed.into_iter().map(|(c, e)| (algorithm, c, e)));
        if chains.is_empty() {
            continue;
        }
        let seconds_per_iteration = chains.iter().map(|c| c.timings.per_iteration()).sum::<f64>() / chains.len() as f64;
        let mut row = CompareRow { algorithm, chains, seconds_per_iteration, ks: vec![] };
        row.ks = (0..p.model.dim())
            .map(|j| oracle.as_ref().and_then(|o| o.ks(j, &row.pooled(j))))
            .collect();
        rows.push(row);
    }
    let names = p.model.parameter_names();
    let out = CompareOutcome { dir: dir.clone(), names, rows, oracle };
    let mut outputs = serde_json::Map::new();
    for (file, text) in [
        ("densities.csv", out.density_table()),
        ("acceptance.csv", out.acceptance_table()),
        ("timing.csv", out.timing_table()),
        ("ks.csv", out.ks_table()),
    ] {
        outputs.insert(file.into(), json!(write_file(&dir.join(file), text.as_bytes())?));
    }
    let m = manifest(
        "compare",
        p,
        workers,
        json!({
            "status": if failures.is_empty() { "ok" } else { "failed" },
            "algorithms": algorithms.iter().map(|a| a.name()).collect::<Vec<_>>(),
            "oracle": out.oracle.as_ref().map(Oracle::name),
            "timings": out.rows.iter().map(|r| json!({"algorithm": r.algorithm.name(), "chains": r.chains.iter().map(timing_json).collect::<Vec<_>>()})).collect::<Vec<_>>(),
            "failures": failures.iter().map(|(a, c, e)| json!({"algorithm": a.name(), "chain": c, "error": e})).collect::<Vec<_>>(),
            "outputs": outputs,
        }),
    );
    write_json(&dir.join("manifest.json"), &m)?;
    if !failures.is_empty() {
        let list: Vec<(u64, String)> = failures.into_iter().map(|(a, c, e)| (c, format!("{a}: {e}"))).collect();
        return Err(failure_error(&list));
    }
    Ok(out)
}

/// `(observation, slot, nu, delta, nonfinite)`
pub type DeltaRow = (usize, usize, f64, f64, usize);

pub struct DiagnoseOutcome {
    pub dir: PathBuf,
    pub chains: Vec<ChainOutput>,
    /// Per chain, rows by decreasing |delta|.
    pub extremes: Vec<Vec<DeltaRow>>,
    pub additivity: Vec<f64>,
}

/// Runs the chains with residual traces and writes `delta.csv`, `ess.csv`
/// and `manifest.json`.
pub fn diagnose(p: &Prepared, law: DeltaLaw, stride: usize, workers: usize) -> CliResult<DiagnoseOutcome> {
    let dir = p.cfg.output.dir.clone();
    create_dir(&dir)?;
    let algorithm = p.cfg.algorithm()?;
    let (chains, failed) = split(run_algorithm(p, algorithm, workers, Some(stride))?);
    let bank = MixtureBank::shared();
    let mut delta = String::from("chain,observation,slot,nu,flagged,delta,nonfinite\n");
    let mut extremes = Vec::new();
    let mut additivity = Vec::new();
    for c in &chains {
        let trace = c.trace.as_ref().expect("traces were requested");
        let report = delta_discrepancy(c, law, bank).map_err(CliError::run)?;
        // the identity compares against base-mixture likelihoods
        let base = if law == DeltaLaw::Mixture { report.clone() } else { delta_discrepancy(c, DeltaLaw::Mixture, bank).map_err(CliError::run)? };
        additivity.push(delta_additivity_error(&base, trace).map_err(CliError::run)?);
        for (r, &(i, j)) in report.rows.iter().enumerate() {
            let flagged = c.flagged.contains(&(i, j));
            writeln!(delta, "{},{i},{j},{},{},{},{}", c.chain, trace.shapes[r], u8::from(flagged), report.delta[r], report.nonfinite[r]).unwrap();
        }
        extremes.push(
            report.extremes.iter().map(|&r| (report.rows[r].0, report.rows[r].1, trace.shapes[r], report.delta[r], report.nonfinite[r])).collect(),
        );
    }
    let mut ess = String::from("chain,parameter,ess,degenerate\n");
    for c in &chains {
        for (j, name) in c.names.iter().enumerate() {
            match effective_sample_size(&c.column(j)) {
                Ok(e) => writeln!(ess, "{},{name},{},{}", c.chain, e.ess, e.degenerate).unwrap(),
                Err(_) => writeln!(ess, "{},{name},NA,NA", c.chain).unwrap(),
            }
        }
    }
    let delta_hash = write_file(&dir.join("delta.csv"), delta.as_bytes())?;
    let ess_hash = write_file(&dir.join("ess.csv"), ess.as_bytes())?;
    let m = manifest(
        "diagnose",
        p,
        workers,
        json!({
            "status": if failed.is_empty() { "ok" } else { "failed" },
            "algorithm": algorithm.name(),
            "law": format!("{law:?}"),
            "residual_stride": stride,
            "additivity_relative_error": additivity,
            "timings": chains.iter().map(timing_json).collect::<Vec<_>>(),
            "failures": failed.iter().map(|(c, e)| json!({"chain": c, "error": e})).collect::<Vec<_>>(),
            "outputs": {"delta.csv": delta_hash, "ess.csv": ess_hash},
        }),
    );
    write_json(&dir.join("manifest.json"), &m)?;
    if !failed.is_empty() {
        return Err(failure_error(&failed));
    }
    Ok(DiagnoseOutcome { dir, chains, extremes, additivity })
}
