use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::lattice::TorusGeometry;
use crate::model::VarianceProfile;
use crate::C64;

pub const EXPERIMENTS: &[&str] = &[
    "sample",
    "local-law",
    "diffusion",
    "deloc",
    "lk",
    "kloop",
    "flow-check",
    "ward-check",
    "decay",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoConfig {
    pub d: usize,
    pub w: usize,
    pub l: usize,
}

impl GeoConfig {
    pub fn geometry(&self) -> Result<TorusGeometry> {
        TorusGeometry::new(self.d, self.w, self.l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZConfig {
    pub re: f64,
    pub im: f64,
}

impl ZConfig {
    pub fn c64(&self) -> C64 {
        C64::new(self.re, self.im)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// number of standard errors in MC bands
    pub k_sigma: f64,
    /// absolute floor for MC comparisons
    pub atol: f64,
    /// fixed slack replacing N^τ factors on ratio percentiles
    pub slack: f64,
    /// C in median N‖ψ‖_∞² ≤ C (ln N)²
    pub deloc_c: f64,
    pub ward: f64,
    pub loop_ward: f64,
    pub algebra: f64,
    pub kernel: f64,
    pub inequality_slack: f64,
    pub explicit_ode: f64,
    pub tree_ode: f64,
    /// allowed ratio between measured constants at two sizes
    pub stability: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            k_sigma: 3.0,
            atol: 0.0,
            slack: 10.0,
            deloc_c: 3.0,
            ward: 1e-9,
            loop_ward: 1e-8,
            algebra: 1e-10,
            kernel: 1e-12,
            inequality_slack: 1e-12,
            explicit_ode: 1e-6,
            tree_ode: 1e-5,
            stability: 3.0,
        }
    }
}

/// One experiment run. Every field is written back into the outputs after
/// defaults are resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub geo: GeoConfig,
    pub lambda: f64,
    /// spectral parameter for the direct (z-side) experiments
    pub z: ZConfig,
    /// flow coordinates (E, t)
    pub e: f64,
    pub t: f64,
    pub kappa: f64,
    pub samples: usize,
    pub seed: u64,
    /// loop length
    pub n: usize,
    pub sigma: String,
    pub blocks: Vec<usize>,
    pub dt: f64,
    pub steps: usize,
    /// additional geometries (delocalization sizes, stability pairs, ...)
    pub sizes: Vec<GeoConfig>,
    pub t_grid: Vec<f64>,
    pub tolerances: Tolerances,
    pub out: Option<PathBuf>,
}

fn geo(d: usize, w: usize, l: usize) -> Value {
    json!({"d": d, "w": w, "l": l})
}

/// Defaults for `experiment`, as a JSON object that user input is merged onto.
pub fn defaults_for(experiment: &str) -> Result<Value> {
    if !EXPERIMENTS.contains(&experiment) {
        return Err(Error::Config {
            path: "experiment".into(),
            msg: format!("unknown experiment {experiment:?}; expected one of {EXPERIMENTS:?}"),
        });
    }
    let mut v = json!({
        "experiment": experiment,
        "geo": geo(3, 3, 3),
        "lambda": 1.0,
        "z": {"re": 0.2, "im": 0.05},
        "e": 0.2,
        "t": 0.5,
        "kappa": 0.5,
        "samples": 50,
        "seed": 0,
        "n": 2,
        "sigma": "+-",
        "blocks": [0, 1],
        "dt": 5e-4,
        "steps": 10,
        "sizes": [],
        "t_grid": [],
        "tolerances": serde_json::to_value(Tolerances::default())?,
        "out": null,
    });
    let o = v.as_object_mut().unwrap();
    match experiment {
        "sample" => {
            o.insert("samples".into(), json!(1));
        }
        "local-law" => {
            o.insert("samples".into(), json!(100));
        }
        "diffusion" => {
            o.insert("samples".into(), json!(200));
        }
        "deloc" => {
            o.insert("sizes".into(), json!([geo(3, 3, 3)]));
        }
        "lk" => {
            o.insert("samples".into(), json!(100));
        }
        "kloop" => {
            o.insert("geo".into(), geo(3, 1, 2));
            o.insert("e".into(), json!(0.3));
            o.insert("n".into(), json!(4));
            o.insert("sigma".into(), json!("+-+-"));
            o.insert("steps".into(), json!(200));
        }
        "flow-check" => {
            o.insert("t".into(), json!(0.6));
            o.insert("z".into(), json!({"re": 0.2, "im": 0.2}));
            o.insert("samples".into(), json!(200));
            o.insert("t_grid".into(), json!([0.2, 0.4, 0.6]));
        }
        "ward-check" => {
            o.insert("z".into(), json!({"re": 0.2, "im": 1e-3}));
            o.insert("e".into(), json!(0.3));
            o.insert("samples".into(), json!(100));
            o.insert("sizes".into(), json!([geo(3, 2, 2), geo(3, 3, 3)]));
        }
        "decay" => {
            o.insert("e".into(), json!(0.3));
            o.insert("sizes".into(), json!([geo(3, 1, 2), geo(3, 1, 3)]));
            o.insert("t_grid".into(), json!([0.5, 0.9]));
        }
        _ => {}
    }
    Ok(v)
}

/// Recursive merge of `over` onto `base`; objects merge key by key.
pub fn merge(base: &mut Value, over: &Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (b, o) => *b = o.clone(),
    }
}

fn from_value(v: Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(v).map_err(|e| Error::Config {
        path: e.path().to_string(),
        msg: e.inner().to_string(),
    })
}

impl ExperimentConfig {
    /// Defaults for `experiment` with `overrides` merged on top.
    pub fn resolve(experiment: &str, overrides: &Value) -> Result<Self> {
        if let Some(id) = overrides.get("experiment") {
            if id.as_str() != Some(experiment) {
                return Err(Error::Config {
                    path: "experiment".into(),
                    msg: format!("config is for {id}, but {experiment:?} was requested"),
                });
            }
        }
        if !overrides.is_object() && !overrides.is_null() {
            return Err(Error::Config {
                path: ".".into(),
                msg: "config must be a JSON object".into(),
            });
        }
        let mut v = defaults_for(experiment)?;
        if !overrides.is_null() {
            merge(&mut v, overrides);
        }
        let cfg = from_value(v)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Read a JSON config file; its `experiment` field may be omitted.
    pub fn load(path: &Path, experiment: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let v: Value = serde_json::from_str(&text).map_err(|e| Error::Config {
            path: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            msg: e.to_string(),
        })?;
        Self::resolve(experiment, &v)
    }

    pub fn geometry(&self) -> Result<TorusGeometry> {
        self.geo.geometry()
    }

    pub fn profile(&self) -> Result<VarianceProfile> {
        VarianceProfile::new(self.geometry()?, self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: String| {
            Err(Error::Config {
                path: path.into(),
                msg,
            })
        };
        self.geometry().map_err(|e| Error::Config {
            path: "geo".into(),
            msg: e.to_string(),
        })?;
        for (i, g) in self.sizes.iter().enumerate() {
            g.geometry().map_err(|e| Error::Config {
                path: format!("sizes[{i}]"),
                msg: e.to_string(),
            })?;
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad("lambda", format!("must be positive, got {}", self.lambda));
        }
        if !(self.kappa > 0.0 && self.kappa < 2.0) {
            return bad("kappa", format!("must lie in (0, 2), got {}", self.kappa));
        }
        if self.samples == 0 {
            return bad("samples", "must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.t) {
            return bad("t", format!("must lie in [0, 1), got {}", self.t));
        }
        if self.e.abs() >= 2.0 {
            return bad("e", format!("must lie in (-2, 2), got {}", self.e));
        }
        if !(self.z.im > 0.0) {
            return bad("z.im", format!("must be positive, got {}", self.z.im));
        }
        let sigma = crate::spectral::parse_charges(&self.sigma).map_err(|e| Error::Config {
            path: "sigma".into(),
            msg: e.to_string(),
        })?;
        if sigma.is_empty() {
            return bad("sigma", "must be non-empty".into());
        }
        if self.t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("t_grid", "must be strictly increasing".into());
        }
        if self.t_grid.iter().any(|t| !(0.0..1.0).contains(t)) {
            return bad("t_grid", "entries must lie in [0, 1)".into());
        }
        if self.steps == 0 {
            return bad("steps", "must be >= 1".into());
        }
        Ok(())
    }

    /// Bulk-domain precondition for z-side experiments:
    /// |Re z| ≤ 2 − κ and η ≥ 10/N.
    pub fn check_bulk(&self, geo: &TorusGeometry) -> Result<()> {
        let n = geo.n_sites() as f64;
        if self.z.re.abs() > 2.0 - self.kappa || self.z.im < 10.0 / n || self.z.im > 1.0 {
            return Err(Error::Config {
                path: "z".into(),
                msg: format!(
                    "z = {}+{}i is outside the bulk domain |Re z| <= {}, 10/N = {:.3e} <= Im z <= 1",
                    self.z.re,
                    self.z.im,
                    2.0 - self.kappa,
                    10.0 / n
                ),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_for_every_experiment() {
        for e in EXPERIMENTS {
            let cfg = ExperimentConfig::resolve(e, &Value::Null).unwrap();
            assert_eq!(cfg.experiment, *e);
        }
    }

    #[test]
    fn nested_override_keeps_siblings() {
        let cfg = ExperimentConfig::resolve("diffusion", &json!({"geo": {"l": 4}, "tolerances": {"k_sigma": 4.0}})).unwrap();
        assert_eq!((cfg.geo.d, cfg.geo.w, cfg.geo.l), (3, 3, 4));
        assert_eq!(cfg.tolerances.k_sigma, 4.0);
        assert_eq!(cfg.tolerances.slack, 10.0);
    }

    #[test]
    fn unknown_field_reports_path() {
        let err = ExperimentConfig::resolve("diffusion", &json!({"tolerances": {"kk": 1}})).unwrap_err();
        match err {
            Error::Config { path, .. } => assert!(path.starts_with("tolerances"), "{path}"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn wrong_type_reports_path() {
        let err = ExperimentConfig::resolve("local-law", &json!({"geo": {"w": "three"}})).unwrap_err();
        match err {
            Error::Config { path, .. } => assert_eq!(path, "geo.w"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn mismatched_experiment_rejected() {
        assert!(ExperimentConfig::resolve("deloc", &json!({"experiment": "lk"})).is_err());
    }
}
