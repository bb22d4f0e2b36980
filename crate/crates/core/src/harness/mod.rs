//! Experiment configuration, estimators with error bars, persistence, and
//! the experiment suite.

mod config;
mod experiments;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

pub use config::{defaults_for, merge, ExperimentConfig, GeoConfig, Tolerances, ZConfig, EXPERIMENTS};
pub use experiments::*;

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// |estimate − target| ≤ max(atol, k·stderr)
    Within,
    /// estimate ≤ target
    AtMost,
    /// reported only
    Recorded,
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimatorResult {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub target: f64,
    pub k: f64,
    pub atol: f64,
    pub check: CheckKind,
    pub pass: bool,
    /// kept out of the JSON result so reruns are byte-identical; timings
    /// go to the metadata block
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl EstimatorResult {
    pub fn within(name: impl Into<String>, estimate: f64, stderr: f64, n: usize, target: f64, k: f64, atol: f64) -> Self {
        let pass = (estimate - target).abs() <= atol.max(k * stderr);
        Self {
            name: name.into(),
            estimate,
            stderr,
            n,
            target,
            k,
            atol,
            check: CheckKind::Within,
            pass,
            wall_time_s: 0.0,
        }
    }

    pub fn at_most(name: impl Into<String>, estimate: f64, n: usize, bound: f64) -> Self {
        Self {
            name: name.into(),
            estimate,
            stderr: 0.0,
            n,
            target: bound,
            k: 0.0,
            atol: 0.0,
            check: CheckKind::AtMost,
            pass: estimate <= bound,
            wall_time_s: 0.0,
        }
    }

    pub fn recorded(name: impl Into<String>, estimate: f64, n: usize) -> Self {
        Self {
            name: name.into(),
            estimate,
            stderr: 0.0,
            n,
            target: f64::NAN,
            k: 0.0,
            atol: 0.0,
            check: CheckKind::Recorded,
            pass: true,
            wall_time_s: 0.0,
        }
    }

    /// Mean/stderr of `xs` compared against `target`.
    pub fn from_samples(name: impl Into<String>, xs: &[f64], target: f64, k: f64, atol: f64) -> Self {
        let m = crate::flowlab::Moments::from_slice(xs);
        Self::within(name, m.mean(), m.stderr(), xs.len(), target, k, atol)
    }

    pub fn timed(mut self, start: Instant) -> Self {
        self.wall_time_s = start.elapsed().as_secs_f64();
        self
    }

    pub fn line(&self) -> String {
        let verdict = match (self.check, self.pass) {
            (CheckKind::Recorded, _) => "INFO",
            (_, true) => "PASS",
            (_, false) => "FAIL",
        };
        match self.check {
            CheckKind::Within => format!(
                "{verdict} {}: {:.6e} ± {:.2e} vs {:.6e} (k={}, atol={:.1e}, n={})",
                self.name, self.estimate, self.stderr, self.target, self.k, self.atol, self.n
            ),
            CheckKind::AtMost => format!("{verdict} {}: {:.6e} <= {:.6e}", self.name, self.estimate, self.target),
            CheckKind::Recorded => format!("{verdict} {}: {:.6e}", self.name, self.estimate),
        }
    }
}

/// Headered CSV table emitted next to the JSON summary.
#[derive(Debug, Clone, Serialize)]
pub struct Table {
    pub name: String,
    pub headers: Vec<String>,
    #[serde(skip)]
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, headers: &[&str]) -> Self {
        Self {
            name: name.into(),
            headers: headers.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    pub fn write<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.headers)?;
        for r in &self.rows {
            wr.write_record(r)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Number formatting used in every CSV so outputs are reproducible.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Debug, Clone, Serialize)]
pub struct Metadata {
    pub version: String,
    pub threads: usize,
    pub started_unix_s: u64,
    pub wall_time_s: f64,
    pub timings: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutput {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub pass: bool,
    pub failures: Vec<String>,
    pub results: Vec<EstimatorResult>,
    pub tables: Vec<Table>,
    /// extra structured reports specific to the experiment
    pub reports: BTreeMap<String, serde_json::Value>,
    pub metadata: Metadata,
}

impl ExperimentOutput {
    pub fn new(config: &ExperimentConfig) -> Self {
        let started = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self {
            experiment: config.experiment.clone(),
            config: config.clone(),
            pass: true,
            failures: Vec::new(),
            results: Vec::new(),
            tables: Vec::new(),
            reports: BTreeMap::new(),
            metadata: Metadata {
                version: env!("CARGO_PKG_VERSION").into(),
                threads: rayon::current_num_threads(),
                started_unix_s: started,
                wall_time_s: 0.0,
                timings: BTreeMap::new(),
            },
        }
    }

    pub fn push(&mut self, r: EstimatorResult) {
        if !r.pass {
            self.pass = false;
            self.failures.push(r.name.clone());
        }
        self.metadata.timings.insert(r.name.clone(), r.wall_time_s);
        self.results.push(r);
    }

    pub fn report<T: Serialize>(&mut self, key: &str, value: &T) -> Result<()> {
        self.reports.insert(key.into(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn result(&self, name: &str) -> Option<&EstimatorResult> {
        self.results.iter().find(|r| r.name == name)
    }

    /// Writes `<experiment>.json` and `<experiment>_<table>.csv` into `dir`;
    /// returns the written paths.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for t in &self.tables {
            let p = dir.join(format!("{}_{}.csv", self.experiment, t.name));
            t.write(std::fs::File::create(&p)?)?;
            paths.push(p);
        }
        let p = dir.join(format!("{}.json", self.experiment));
        std::fs::write(&p, serde_json::to_string_pretty(self)? + "\n")?;
        paths.push(p);
        Ok(paths)
    }
}

/// Linear-interpolated percentile, q ∈ [0, 1].
pub fn percentile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Dispatch by experiment id.
pub fn run(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    let start = Instant::now();
    let mut out = match config.experiment.as_str() {
        "sample" => run_sample(config),
        "local-law" => run_local_law(config),
        "diffusion" => run_diffusion(config),
        "deloc" => run_deloc(config),
        "lk" => run_lk(config),
        "kloop" => run_kloop(config),
        "flow-check" => run_flow_check(config),
        "ward-check" => run_ward_check(config),
        "decay" => run_decay(config),
        other => Err(crate::Error::Config {
            path: "experiment".into(),
            msg: format!("unknown experiment {other:?}"),
        }),
    }?;
    out.metadata.wall_time_s = start.elapsed().as_secs_f64();
    Ok(out)
}
