use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bandlab::harness::{self, ExperimentConfig};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "bandlab", version, about = "Numerical lab for block random band matrices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample H, check hermiticity and entry variances, dump it to --out
    Sample(Common),
    /// Entrywise and averaged local-law ratios
    LocalLaw(Common),
    /// 2-loops against the quantum-diffusion profile, shell by shell
    Diffusion(Common),
    /// Bulk eigenvector sup-norms against a GUE baseline
    Deloc(Common),
    /// G-loops against primitive loops along the flow
    Lk(Common),
    /// Primitive loops: explicit, tree and ODE routes
    Kloop(Common),
    /// Hierarchy residual, quadratic variation and the flow/direct check
    FlowCheck(Common),
    /// Ward identities and the Ward inequality
    WardCheck(Common),
    /// Propagator algebra and measured decay constants
    Decay(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; unspecified fields take the experiment defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    samples: Option<usize>,
    /// Output directory for the JSON summary and CSV tables
    /// [default: the config's `out`, else bandlab-out]
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, env = "BANDLAB_THREADS")]
    threads: Option<usize>,
    /// Loop length
    #[arg(long)]
    n: Option<usize>,
    /// Charge string such as "+-+"
    #[arg(long)]
    sigma: Option<String>,
}

impl Command {
    fn split(&self) -> (&'static str, &Common) {
        match self {
            Command::Sample(c) => ("sample", c),
            Command::LocalLaw(c) => ("local-law", c),
            Command::Diffusion(c) => ("diffusion", c),
            Command::Deloc(c) => ("deloc", c),
            Command::Lk(c) => ("lk", c),
            Command::Kloop(c) => ("kloop", c),
            Command::FlowCheck(c) => ("flow-check", c),
            Command::WardCheck(c) => ("ward-check", c),
            Command::Decay(c) => ("decay", c),
        }
    }
}

fn overrides(experiment: &str, c: &Common) -> anyhow::Result<Value> {
    let mut v = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| bandlab::Error::Config {
                path: p.display().to_string(),
                msg: e.to_string(),
            })?;
            serde_json::from_str::<Value>(&text).map_err(|e| bandlab::Error::Config {
                path: format!("{}:{}:{}", p.display(), e.line(), e.column()),
                msg: e.to_string(),
            })?
        }
        None => json!({}),
    };
    let mut cli = json!({});
    if let Some(o) = &c.out {
        cli["out"] = json!(o);
    }
    if let Some(s) = c.seed {
        cli["seed"] = json!(s);
    }
    if let Some(s) = c.samples {
        cli["samples"] = json!(s);
    }
    if let Some(n) = c.n {
        cli["n"] = json!(n);
        if c.sigma.is_none() && v.get("sigma").is_none() {
            let alt: String = (0..n).map(|i| if i % 2 == 0 { '+' } else { '-' }).collect();
            cli["sigma"] = json!(alt);
            if experiment == "flow-check" {
                cli["blocks"] = json!((0..n).collect::<Vec<_>>());
            }
        }
    }
    if let Some(s) = &c.sigma {
        cli["sigma"] = json!(s);
    }
    if v.is_object() {
        harness::merge(&mut v, &cli);
    }
    Ok(v)
}

fn write_failure_summary(dir: &Path, experiment: &str, kind: &str, err: &str, path: Option<&str>) {
    let summary = json!({
        "experiment": experiment,
        "pass": false,
        "error": { "kind": kind, "path": path, "message": err },
    });
    if std::fs::create_dir_all(dir).is_ok() {
        let _ = std::fs::write(
            dir.join(format!("{experiment}.json")),
            serde_json::to_string_pretty(&summary).unwrap_or_default() + "\n",
        );
    }
}

const DEFAULT_OUT: &str = "bandlab-out";

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, common) = cli.command.split();
    if let Some(t) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: could not configure {t} threads: {e}");
            return ExitCode::from(2);
        }
    }
    let cfg = overrides(experiment, common)
        .and_then(|v| Ok(ExperimentConfig::resolve(experiment, &v)?));
    let cfg = match cfg {
        Ok(c) => c,
        Err(e) => {
            let path = match e.downcast_ref::<bandlab::Error>() {
                Some(bandlab::Error::Config { path, .. }) => Some(path.clone()),
                _ => None,
            };
            eprintln!("error: {e}");
            let dir = common.out.clone().unwrap_or_else(|| DEFAULT_OUT.into());
            write_failure_summary(&dir, experiment, "config", &e.to_string(), path.as_deref());
            return ExitCode::from(2);
        }
    };
    let mut cfg = cfg;
    let dir = cfg.out.get_or_insert_with(|| DEFAULT_OUT.into()).clone();
    let out = match harness::run(&cfg) {
        Ok(o) => o,
        Err(e) => {
            let (kind, code, path) = match &e {
                bandlab::Error::Config { path, .. } => ("config", 2, Some(path.as_str())),
                _ => ("runtime", 1, None),
            };
            eprintln!("error: {e}");
            write_failure_summary(&dir, experiment, kind, &e.to_string(), path);
            return ExitCode::from(code);
        }
    };
    for r in &out.results {
        println!("{}", r.line());
    }
    match out.write(&dir) {
        Ok(paths) => {
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Err(e) => {
            eprintln!("error: writing outputs: {e}");
            return ExitCode::from(1);
        }
    }
    if out.pass {
        ExitCode::SUCCESS
    } else {
        for f in &out.failures {
            eprintln!("FAILED: {f}");
        }
        ExitCode::from(1)
    }
}
