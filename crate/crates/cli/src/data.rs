//! Headered CSV input and the model it describes.

use std::collections::BTreeMap;
use std::path::Path;

use auxmix::model::{PoissonLgm, RandomEffectBlock};
use auxmix::toy::ToyData;
use nalgebra::DMatrix;

use crate::config::{RandomEffectSpec, RunConfig};
use crate::error::{config_error, CliError, CliResult};

/// String cells by column, in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    columns: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> CliResult<Self> {
        let file = std::fs::File::open(path).map_err(CliError::io(format!("opening {}", path.display())))?;
        Self::from_reader(file).map_err(|e| config_error(format!("{}: {e}", path.display())))
    }

    pub fn from_reader(reader: impl std::io::Read) -> CliResult<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers().map_err(|e| config_error(e.to_string()))?.iter().map(String::from).collect();
        let mut columns = vec![Vec::new(); headers.len()];
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| config_error(format!("row {}: {e}", line + 1)))?;
            for (col, cell) in columns.iter_mut().zip(record.iter()) {
                col.push(cell.to_string());
            }
        }
        Ok(Self { headers, columns })
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn raw(&self, name: &str) -> CliResult<&[String]> {
        self.headers
            .iter()
            .position(|h| h == name)
            .map(|j| self.columns[j].as_slice())
            .ok_or_else(|| config_error(format!("data has no column {name:?} (columns: {})", self.headers.join(", "))))
    }

    pub fn numeric(&self, name: &str) -> CliResult<Vec<f64>> {
        self.raw(name)?
            .iter()
            .enumerate()
            .map(|(i, s)| match s.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(config_error(format!("column {name:?}, row {}: {s:?} is not a finite number", i + 1))),
            })
            .collect()
    }

    pub fn counts(&self, name: &str) -> CliResult<Vec<u64>> {
        self.raw(name)?
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.parse::<u64>().map_err(|_| config_error(format!("column {name:?}, row {}: {s:?} is not a non-negative integer count", i + 1)))
            })
            .collect()
    }
}

/// Writes `y,x1,x2`; floats use the shortest representation that parses
/// back to the same value.
pub fn write_toy(path: &Path, toy: &ToyData) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let err = |e: csv::Error| config_error(format!("{}: {e}", path.display()));
    w.write_record(["y", "x1", "x2"]).map_err(err)?;
    for i in 0..toy.len() {
        w.write_record([toy.y[i].to_string(), toy.x1[i].to_string(), toy.x2[i].to_string()]).map_err(err)?;
    }
    w.flush().map_err(CliError::io(format!("writing {}", path.display())))
}

pub fn read_toy(path: &Path, c: f64) -> CliResult<ToyData> {
    let t = Table::read(path)?;
    Ok(ToyData { y: t.counts("y")?, x1: t.numeric("x1")?, x2: t.numeric("x2")?, c })
}

/// Square matrix from a header-less file of comma or whitespace separated numbers.
pub fn read_matrix(path: &Path) -> CliResult<DMatrix<f64>> {
    let text = std::fs::read_to_string(path).map_err(CliError::io(format!("reading {}", path.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|_| config_error(format!("{} line {}: bad number {s:?}", path.display(), i + 1))))
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(config_error(format!("{} is not a square matrix", path.display())));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}

/// Level index of every row; numeric labels sort numerically, others as strings.
pub fn group_levels(labels: &[String]) -> (Vec<usize>, Vec<String>) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|s| s.parse::<f64>().ok()).collect();
    let mut levels: Vec<String> = labels.to_vec();
    match &numeric {
        Some(_) => levels.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()).then(a.cmp(b))),
        None => levels.sort(),
    }
    levels.dedup();
    let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    (labels.iter().map(|s| index[s.as_str()]).collect(), levels)
}

fn random_effect(spec: &RandomEffectSpec, table: &Table, q: usize) -> CliResult<RandomEffectBlock> {
    let n = table.rows();
    let z = if let Some(group) = &spec.group {
        let (idx, levels) = group_levels(table.raw(group)?);
        DMatrix::from_fn(n, levels.len(), |i, j| if idx[i] == j { 1.0 } else { 0.0 })
    } else {
        let cols = spec.columns.as_ref().expect("validated");
        let data = cols.iter().map(|c| table.numeric(c)).collect::<CliResult<Vec<_>>>()?;
        DMatrix::from_fn(n, cols.len(), |i, j| data[j][i])
    };
    let m = z.ncols();
    let k = match &spec.precision {
        Some(path) => read_matrix(path)?,
        None => DMatrix::identity(m, m),
    };
    RandomEffectBlock::new(z, k, spec.prior.into()).map_err(|e| config_error(format!("random_effects[{q}]: {e}")))
}

/// Model described by `cfg` over `table`.
pub fn build_model(cfg: &RunConfig, table: &Table) -> CliResult<PoissonLgm> {
    let d = &cfg.data;
    let y = table.counts(&d.response)?;
    let n = y.len();
    if n == 0 {
        return Err(config_error("data has no rows"));
    }
    let offset = d.offset.as_deref().map(|c| table.numeric(c)).transpose()?;
    let mut cols: Vec<Vec<f64>> = Vec::new();
    if d.intercept {
        cols.push(vec![1.0; n]);
    }
    for c in &d.covariates {
        cols.push(table.numeric(c)?);
    }
    let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
    let p = x.ncols();
    let blocks = cfg
        .random_effects
        .iter()
        .enumerate()
        .map(|(q, s)| random_effect(s, table, q))
        .collect::<CliResult<Vec<_>>>()?;
    let v0 = DMatrix::identity(p, p) * d.beta_variance;
    PoissonLgm::new(y, offset, x, blocks, Some(v0)).map_err(CliError::setup)
}
