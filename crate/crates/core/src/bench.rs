//! Grid harness for extended runs on user-supplied datasets.
//!
//! A spec file lists `key = value[, value…]` lines; the grid is the
//! cartesian product of every multi-valued key. Each cell trains one model
//! and estimates its MLL. Results are appended to a CSV report.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::decoder::LinkMethod;
use crate::estimators::Estimator;
use crate::geometry::{Covariance, Space};
use crate::seqdata::{compress_site_patterns, parse_alignment};
use crate::trainer::{estimate_mll, train, TrainConfig, TRACE_HEADER};
use crate::VERSION;

/// Published reference values for the first benchmark dataset.
pub const DS1_GEOPHY_MLL: f64 = -7111.55;
pub const DS1_MRBAYES_MLL: f64 = -7108.42;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("spec defines no datasets")]
    NoDatasets,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// A named dataset path.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub path: PathBuf,
}

/// Parsed grid definition.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchSpec {
    pub datasets: Vec<Dataset>,
    pub spaces: Vec<Space>,
    pub dims: Vec<usize>,
    pub covs: Vec<Covariance>,
    pub estimators: Vec<Estimator>,
    pub ks: Vec<usize>,
    pub links: Vec<LinkMethod>,
    pub lrs: Vec<f64>,
    pub seeds: Vec<u64>,
    pub nle_budget: u64,
    pub trace_every: u64,
    pub mll_k: usize,
    pub mll_reps: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        let base = TrainConfig::default();
        Self {
            datasets: Vec::new(),
            spaces: vec![base.space],
            dims: vec![base.dim],
            covs: vec![base.cov],
            estimators: vec![base.estimator],
            ks: vec![base.k],
            links: vec![base.link],
            lrs: vec![base.lr],
            seeds: vec![base.seed],
            nle_budget: base.nle_budget,
            trace_every: 1000,
            mll_k: 1000,
            mll_reps: 1,
        }
    }
}

fn parse_list<T>(line: usize, raw: &str, f: impl Fn(&str) -> Option<T>) -> Result<Vec<T>, BenchError> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            f(s).ok_or_else(|| BenchError::Parse {
                line,
                msg: format!("bad value {s:?}"),
            })
        })
        .collect()
}

fn parse_single<T>(line: usize, raw: &str, f: impl Fn(&str) -> Option<T>) -> Result<T, BenchError> {
    let mut v = parse_list(line, raw, f)?;
    if v.len() != 1 {
        return Err(BenchError::Parse {
            line,
            msg: "expected exactly one value".into(),
        });
    }
    Ok(v.remove(0))
}

impl BenchSpec {
    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let mut spec = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| BenchError::Parse {
                line,
                msg: "expected key = value".into(),
            })?;
            let value = value.trim();
            match key.trim() {
                "dataset" | "datasets" => {
                    spec.datasets = parse_list(line, value, |s| {
                        let (name, path) = s.split_once(':')?;
                        Some(Dataset {
                            name: name.trim().to_string(),
                            path: PathBuf::from(path.trim()),
                        })
                    })?
                }
                "space" => {
                    spec.spaces = parse_list(line, value, |s| match s {
                        "euclidean" | "normal" => Some(Space::Euclidean),
                        "hyperbolic" | "wrapped_normal" => Some(Space::Hyperbolic),
                        _ => None,
                    })?
                }
                "dim" => spec.dims = parse_list(line, value, |s| s.parse().ok())?,
                "cov" => {
                    spec.covs = parse_list(line, value, |s| match s {
                        "diag" | "diagonal" => Some(Covariance::Diagonal),
                        "full" => Some(Covariance::Full),
                        _ => None,
                    })?
                }
                "estimator" => spec.estimators = parse_list(line, value, |s| s.parse().ok())?,
                "k" | "K" => spec.ks = parse_list(line, value, |s| s.parse().ok())?,
                "link" => {
                    spec.links = parse_list(line, value, |s| match s {
                        "nj" => Some(LinkMethod::Nj),
                        "upgma" => Some(LinkMethod::Upgma),
                        _ => None,
                    })?
                }
                "lr" => spec.lrs = parse_list(line, value, |s| s.parse().ok())?,
                "seed" | "seeds" => spec.seeds = parse_list(line, value, |s| s.parse().ok())?,
                "nle_budget" => spec.nle_budget = parse_single(line, value, |s| s.parse().ok())?,
                "trace_every" => spec.trace_every = parse_single(line, value, |s| s.parse().ok())?,
                "mll_k" => spec.mll_k = parse_single(line, value, |s| s.parse().ok())?,
                "mll_reps" => spec.mll_reps = parse_single(line, value, |s| s.parse().ok())?,
                other => {
                    return Err(BenchError::Parse {
                        line,
                        msg: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        if spec.datasets.is_empty() {
            return Err(BenchError::NoDatasets);
        }
        Ok(spec)
    }

    /// Every `(dataset, config)` pair of the grid in a fixed order.
    pub fn cells(&self) -> Vec<(Dataset, TrainConfig)> {
        let mut out = Vec::new();
        for ds in &self.datasets {
            for &space in &self.spaces {
                for &dim in &self.dims {
                    for &cov in &self.covs {
                        for &estimator in &self.estimators {
                            for &k in &self.ks {
                                for &link in &self.links {
                                    for &lr in &self.lrs {
                                        for &seed in &self.seeds {
                                            let cfg = TrainConfig {
                                                space,
                                                dim,
                                                cov,
                                                estimator,
                                                k,
                                                link,
                                                lr,
                                                seed,
                                                nle_budget: self.nle_budget,
                                                trace_every: self.trace_every,
                                                ..TrainConfig::default()
                                            };
                                            out.push((ds.clone(), cfg));
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Short stable digest of a configuration, seed excluded so repeats share it.
pub fn config_hash(dataset: &str, cfg: &TrainConfig) -> String {
    let mut c = cfg.clone();
    c.seed = 0;
    let text = format!("{dataset}|{}", serde_json::to_string(&c).expect("config serializes"));
    let digest = Sha256::digest(text.as_bytes());
    digest[..6].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Outcome of one grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub dataset: String,
    pub config: TrainConfig,
    pub hash: String,
    pub status: String,
    pub mll_mean: f64,
    pub mll_std: f64,
    pub final_elbo: f64,
    pub steps: u64,
    pub skipped: u64,
}

pub const REPORT_HEADER: &str = "dataset,space,dim,cov,estimator,k,link,lr,nle_budget,seed,config_hash,version,status,mll_mean,mll_std,final_elbo,steps,skipped";
pub const SUMMARY_HEADER: &str = "dataset,config_hash,version,seeds,mll_mean_of_means,mll_std_across_seeds,mll_pooled_std";

fn space_name(s: Space) -> &'static str {
    match s {
        Space::Euclidean => "euclidean",
        Space::Hyperbolic => "hyperbolic",
    }
}

fn cov_name(c: Covariance) -> &'static str {
    match c {
        Covariance::Diagonal => "diag",
        Covariance::Full => "full",
    }
}

fn link_name(l: LinkMethod) -> &'static str {
    match l {
        LinkMethod::Nj => "nj",
        LinkMethod::Upgma => "upgma",
    }
}

impl CellResult {
    pub fn to_csv(&self) -> String {
        let c = &self.config;
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.dataset,
            space_name(c.space),
            c.dim,
            cov_name(c.cov),
            c.estimator,
            c.k,
            link_name(c.link),
            c.lr,
            c.nle_budget,
            c.seed,
            self.hash,
            VERSION,
            self.status,
            self.mll_mean,
            self.mll_std,
            self.final_elbo,
            self.steps,
            self.skipped
        )
    }
}

/// Trains and evaluates one cell; a trace CSV is written when `trace_dir` is set.
pub fn run_cell(
    dataset: &Dataset,
    cfg: &TrainConfig,
    spec: &BenchSpec,
    trace_dir: Option<&Path>,
) -> CellResult {
    let hash = config_hash(&dataset.name, cfg);
    let mut result = CellResult {
        dataset: dataset.name.clone(),
        config: cfg.clone(),
        hash: hash.clone(),
        status: "ok".into(),
        mll_mean: f64::NAN,
        mll_std: f64::NAN,
        final_elbo: f64::NAN,
        steps: 0,
        skipped: 0,
    };
    let bytes = match fs::read(&dataset.path) {
        Ok(b) => b,
        Err(e) => {
            result.status = format!("missing dataset: {e}").replace(',', ";");
            return result;
        }
    };
    let aln = match parse_alignment(&bytes) {
        Ok(a) => a,
        Err(e) => {
            result.status = format!("bad dataset: {e}").replace(',', ";");
            return result;
        }
    };
    let data = compress_site_patterns(&aln);
    match train(cfg, &data) {
        Ok(out) => {
            result.steps = out.steps;
            result.skipped = out.skipped_steps;
            result.final_elbo = out.trace.last().map_or(f64::NAN, |r| r.elbo);
            let mll = estimate_mll(&data, out.family, cfg.link, &out.state, spec.mll_k, spec.mll_reps, cfg.seed);
            result.mll_mean = mll.mean;
            result.mll_std = mll.std;
            if let Some(dir) = trace_dir {
                let path = dir.join(format!("{}_{}_seed{}.csv", dataset.name, hash, cfg.seed));
                let mut text = format!("# {VERSION}\n{TRACE_HEADER}\n");
                for row in &out.trace {
                    text.push_str(&row.to_csv());
                    text.push('\n');
                }
                if let Err(e) = fs::write(&path, text) {
                    result.status = format!("trace not written: {e}").replace(',', ";");
                }
            }
        }
        Err(e) => result.status = format!("failed: {e}").replace(',', ";"),
    }
    result
}

/// Per-configuration statistics across seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct PooledRow {
    pub dataset: String,
    pub hash: String,
    pub seeds: usize,
    pub mean: f64,
    pub std_across_seeds: f64,
    pub pooled_std: f64,
}

impl PooledRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.dataset, self.hash, VERSION, self.seeds, self.mean, self.std_across_seeds, self.pooled_std
        )
    }
}

/// Groups successful cells by configuration hash.
pub fn pool(results: &[CellResult]) -> Vec<PooledRow> {
    let mut groups: Vec<(String, String, Vec<&CellResult>)> = Vec::new();
    for r in results.iter().filter(|r| r.status == "ok") {
        match groups.iter_mut().find(|g| g.1 == r.hash && g.0 == r.dataset) {
            Some(g) => g.2.push(r),
            None => groups.push((r.dataset.clone(), r.hash.clone(), vec![r])),
        }
    }
    groups
        .into_iter()
        .map(|(dataset, hash, rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().map(|r| r.mll_mean).sum::<f64>() / n;
            let across = if rs.len() > 1 {
                (rs.iter().map(|r| (r.mll_mean - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            let pooled = (rs.iter().map(|r| r.mll_std.powi(2)).sum::<f64>() / n).sqrt();
            PooledRow {
                dataset,
                hash,
                seeds: rs.len(),
                mean,
                std_across_seeds: across,
                pooled_std: pooled,
            }
        })
        .collect()
}

fn append_rows(path: &Path, header: &str, rows: &[String]) -> Result<(), BenchError> {
    let io = |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    };
    let fresh = !path.exists();
    let mut file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
    let mut text = String::new();
    if fresh {
        text.push_str(&format!("# {VERSION}\n{header}\n"));
    }
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    file.write_all(text.as_bytes()).map_err(io)
}

/// Runs every cell, calling `progress` after each, and appends to
/// `report.csv` and `summary.csv` under `out_dir`.
pub fn run_matrix(
    spec: &BenchSpec,
    out_dir: &Path,
    mut progress: impl FnMut(&CellResult),
) -> Result<Vec<CellResult>, BenchError> {
    let traces = out_dir.join("traces");
    fs::create_dir_all(&traces).map_err(|source| BenchError::Io {
        path: traces.clone(),
        source,
    })?;
    let mut results = Vec::new();
    for (ds, cfg) in spec.cells() {
        let r = run_cell(&ds, &cfg, spec, Some(&traces));
        append_rows(&out_dir.join("report.csv"), REPORT_HEADER, &[r.to_csv()])?;
        progress(&r);
        results.push(r);
    }
    let summary: Vec<String> = pool(&results).iter().map(PooledRow::to_csv).collect();
    append_rows(&out_dir.join("summary.csv"), SUMMARY_HEADER, &summary)?;
    Ok(results)
}
