//! Manifold definition files, spec resolution, and the JSON report.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::connections::ConeResidual;
use crate::error::{Error, Result};
use crate::expr::parse_expr;
use crate::manifold::{Builtin, Interval, ManifoldSpec};
use crate::rolling::{Crosscheck, RollingResiduals, StateRecord};
use crate::structures::{ConverseReport, SasakiResiduals, ThreeSasakiResiduals, TripleReport};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// JSON manifold description. Either `builtin` or `dim` + `metric` must be
/// given; expressions use `coords` (default x1..xn).
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ManifoldFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub dim: Option<usize>,
    #[serde(default)]
    pub coords: Option<Vec<String>>,
    #[serde(default)]
    pub metric: Option<Vec<Vec<String>>>,
    #[serde(default)]
    pub frame: Option<Vec<Vec<String>>>,
    /// `[lo, hi]` per coordinate; `null` for an unbounded end.
    #[serde(default)]
    pub domain: Option<Vec<[Option<f64>; 2]>>,
}

const NUMERIC_CHECK_SAMPLES: usize = 16;

impl ManifoldFile {
    pub fn to_spec(&self) -> Result<ManifoldSpec> {
        if let Some(b) = &self.builtin {
            if self.metric.is_some() || self.frame.is_some() || self.coords.is_some() {
                return Err(Error::InvalidSpec("`builtin` excludes metric, frame and coords".into()));
            }
            let mut spec = ManifoldSpec::builtin(&Builtin::parse(b)?);
            if let Some(d) = self.dim {
                if d != spec.dim {
                    return Err(Error::InvalidSpec(format!("dim {d} does not match built-in dimension {}", spec.dim)));
                }
            }
            if let Some(dom) = &self.domain {
                spec.domain = parse_domain(dom, spec.dim)?;
            }
            if let Some(name) = &self.name {
                spec.name = name.clone();
            }
            return Ok(spec);
        }
        let metric = self.metric.as_ref().ok_or_else(|| Error::InvalidSpec("missing `metric` or `builtin`".into()))?;
        let dim = self.dim.unwrap_or(metric.len());
        if dim == 0 {
            return Err(Error::InvalidSpec("dimension must be positive".into()));
        }
        if metric.len() != dim || metric.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidSpec(format!("metric must be a {dim}x{dim} matrix")));
        }
        let coords = match &self.coords {
            Some(c) if c.len() != dim => return Err(Error::InvalidSpec("coords length must equal dim".into())),
            Some(c) => c.clone(),
            None => (1..=dim).map(|i| format!("x{i}")).collect(),
        };
        let parse_rows = |rows: &Vec<Vec<String>>| -> Result<Vec<Vec<crate::expr::Expr>>> {
            rows.iter().map(|r| r.iter().map(|e| parse_expr(e, &coords)).collect()).collect()
        };
        let spec = ManifoldSpec {
            name: self.name.clone().unwrap_or_else(|| "custom".into()),
            dim,
            coords: coords.clone(),
            metric: parse_rows(metric)?,
            frame: self.frame.as_ref().map(parse_rows).transpose()?,
            domain: match &self.domain {
                Some(d) => parse_domain(d, dim)?,
                None => vec![Interval::REAL_LINE; dim],
            },
            builtin: None,
        };
        spec.validate_shape()?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        spec.validate_numeric(&mut rng, NUMERIC_CHECK_SAMPLES)?;
        Ok(spec)
    }
}

fn parse_domain(dom: &[[Option<f64>; 2]], dim: usize) -> Result<Vec<Interval>> {
    if dom.len() != dim {
        return Err(Error::InvalidSpec("domain must list one interval per coordinate".into()));
    }
    dom.iter()
        .map(|[lo, hi]| {
            let iv = Interval::new(lo.unwrap_or(f64::NEG_INFINITY), hi.unwrap_or(f64::INFINITY));
            if iv.lo < iv.hi {
                Ok(iv)
            } else {
                Err(Error::InvalidSpec(format!("empty interval [{}, {}]", iv.lo, iv.hi)))
            }
        })
        .collect()
}

pub fn parse_manifold(text: &str) -> Result<ManifoldSpec> {
    let file: ManifoldFile = serde_json::from_str(text)?;
    file.to_spec()
}

pub fn load_manifold(path: &Path) -> Result<ManifoldSpec> {
    parse_manifold(&std::fs::read_to_string(path)?)
}

/// A built-in name such as `heisenberg:m=1`, or a path to a manifold file.
pub fn resolve_spec(arg: &str) -> Result<ManifoldSpec> {
    let path = Path::new(arg);
    if path.is_file() {
        return load_manifold(path);
    }
    ManifoldSpec::from_name(arg).map_err(|e| match e {
        Error::InvalidSpec(_) => Error::InvalidSpec(format!("`{arg}` is neither a file nor a known built-in")),
        other => other,
    })
}

/// SHA-256 over a canonical rendering of the chart data.
pub fn spec_digest(spec: &ManifoldSpec) -> String {
    let mut h = Sha256::new();
    let line = |h: &mut Sha256, s: &str| {
        h.update(s.as_bytes());
        h.update(b"\n");
    };
    line(&mut h, &format!("dim {}", spec.dim));
    line(&mut h, &format!("coords {}", spec.coords.join(",")));
    for row in &spec.metric {
        let r: Vec<String> = row.iter().map(|e| e.display(&spec.coords).to_string()).collect();
        line(&mut h, &format!("g {}", r.join(";")));
    }
    if let Some(frame) = &spec.frame {
        for f in frame {
            let r: Vec<String> = f.iter().map(|e| e.display(&spec.coords).to_string()).collect();
            line(&mut h, &format!("e {}", r.join(";")));
        }
    }
    for iv in &spec.domain {
        line(&mut h, &format!("d {:e} {:e}", iv.lo, iv.hi));
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DescribeSection {
    pub builtin: Option<String>,
    pub coords: Vec<String>,
    pub metric: Vec<Vec<String>>,
    pub has_frame: bool,
    pub base: Vec<f64>,
    /// Ricci in the orthonormal frame at `base`.
    pub ricci: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HolonomySection {
    pub base: Vec<f64>,
    pub loops: usize,
    pub rank_tol: f64,
    pub algebra_dim: usize,
    pub commutant_skew_dim: usize,
    pub singular_values: Vec<f64>,
    /// σ_rank / σ_{rank+1}; absent when no smaller value exists.
    pub gap: Option<f64>,
    pub noise_floor: f64,
    pub closure_residual: f64,
    pub label: String,
    pub controllable: bool,
    pub controllability: String,
    pub notes: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SasakiSection {
    pub mode: String,
    pub lattice_step: f64,
    pub sites: usize,
    /// +1 when Z has positive first nonzero frame component at the base.
    pub sign: f64,
    pub residuals: Vec<SasakiResiduals>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub three_sasaki: Option<ThreeSasakiResiduals>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub converse: Option<ConverseReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triple: Option<TripleReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeSection {
    pub loops: usize,
    pub entries: Vec<ConeEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeEntry {
    pub s0: f64,
    pub max_residual: f64,
    /// Same loops at twice the steps.
    pub refined_residual: f64,
    pub shrink: f64,
    pub samples: Vec<ConeResidual>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RollingSection {
    pub residuals: RollingResiduals,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crosscheck: Option<Crosscheck>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<Vec<StateRecord>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub tool_version: String,
    pub command: String,
    pub spec_name: String,
    pub spec_digest: String,
    pub dim: usize,
    pub seed: u64,
    pub steps: usize,
    /// Names of violated tolerances.
    pub failures: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub describe: Option<DescribeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holonomy: Option<HolonomySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sasaki: Option<SasakiSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cone: Option<ConeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rolling: Option<RollingSection>,
}

impl Report {
    pub fn new(command: &str, spec: &ManifoldSpec, seed: u64, steps: usize) -> Report {
        Report {
            tool_version: TOOL_VERSION.to_string(),
            command: command.to_string(),
            spec_name: spec.name.clone(),
            spec_digest: spec_digest(spec),
            dim: spec.dim,
            seed,
            steps,
            failures: Vec::new(),
            describe: None,
            holonomy: None,
            sasaki: None,
            cone: None,
            rolling: None,
        }
    }

    /// JSON text; non-finite numbers are rejected.
    pub fn to_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        if let Some(path) = non_finite_field(&value, "") {
            return Err(Error::NonFinite(format!("report field {path}")));
        }
        Ok(serde_json::to_string_pretty(&value)? + "\n")
    }
}

/// Fields that may legitimately be null.
const NULLABLE: [&str; 2] = ["gap", "builtin"];

/// serde_json writes NaN and infinities as null; finds the first such value.
fn non_finite_field(v: &serde_json::Value, path: &str) -> Option<String> {
    use serde_json::Value;
    match v {
        Value::Object(map) => map.iter().find_map(|(k, x)| {
            let p = format!("{path}/{k}");
            if x.is_null() && !NULLABLE.contains(&k.as_str()) {
                Some(p)
            } else {
                non_finite_field(x, &p)
            }
        }),
        Value::Array(items) => items.iter().enumerate().find_map(|(i, x)| {
            let p = format!("{path}/{i}");
            if x.is_null() {
                Some(p)
            } else {
                non_finite_field(x, &p)
            }
        }),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_files() {
        let h = parse_manifold(r#"{"builtin":"heisenberg:m=1"}"#).unwrap();
        assert_eq!(h.dim, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        h.validate_numeric(&mut rng, 20).unwrap();
        let e = parse_manifold(r#"{"builtin":"euclidean:3"}"#).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(e.metric_at(&[0.3, 0.1, 2.0])[(i, j)], if i == j { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn custom_metric_file() {
        let s = parse_manifold(
            r#"{"name":"warped","dim":2,"metric":[["1","0"],["0","exp(2*x1)"]],"domain":[[null,null],[-1,1]]}"#,
        )
        .unwrap();
        assert_eq!(s.coords, vec!["x1", "x2"]);
        assert!((s.metric_at(&[0.5, 0.0])[(1, 1)] - 1f64.exp()).abs() < 1e-15);
        assert!(!s.contains(&[0.0, 1.5]));
    }

    #[test]
    fn asymmetric_metric_is_rejected() {
        let r = parse_manifold(r#"{"dim":2,"metric":[["1","x1"],["0","1"]]}"#);
        assert!(matches!(r, Err(Error::InvalidSpec(_))), "{r:?}");
    }

    #[test]
    fn shape_errors() {
        assert!(parse_manifold(r#"{"dim":3,"metric":[["1","0"],["0","1"]]}"#).is_err());
        assert!(parse_manifold(r#"{"metric":[["1","0"],["0","1"]],"colour":1}"#).is_err());
        assert!(parse_manifold(r#"{"metric":[["1","0"],["0","y"]]}"#).is_err());
        assert!(parse_manifold(r#"{"builtin":"euclidean:3","dim":2}"#).is_err());
        assert!(parse_manifold(r#"{"metric":[["-1","0"],["0","1"]]}"#).is_err());
    }

    #[test]
    fn non_finite_values_are_rejected() {
        let spec = ManifoldSpec::from_name("euclidean:2").unwrap();
        let mut r = Report::new("test", &spec, 1, 8);
        assert!(r.to_json().is_ok());
        r.rolling = Some(RollingSection {
            residuals: RollingResiduals { ns: f64::NAN, nt: 0.0, max_defect: 0.0, reorthonormalizations: 0, flagged: false },
            crosscheck: None,
            trajectory: None,
        });
        assert!(matches!(r.to_json(), Err(Error::NonFinite(_))));
    }

    #[test]
    fn digest_is_stable_and_discriminating() {
        let a = spec_digest(&ManifoldSpec::from_name("heisenberg:m=1").unwrap());
        let b = spec_digest(&ManifoldSpec::from_name("heisenberg:m=1").unwrap());
        let c = spec_digest(&ManifoldSpec::from_name("euclidean:3").unwrap());
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn resolve_prefers_files() {
        let dir = std::env::temp_dir().join(format!("rollhol-spec-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("plane.json");
        std::fs::write(&p, r#"{"builtin":"euclidean:2","name":"plane"}"#).unwrap();
        assert_eq!(resolve_spec(p.to_str().unwrap()).unwrap().name, "plane");
        assert_eq!(resolve_spec("sphere:3:radius=1").unwrap().dim, 3);
        assert!(resolve_spec("torus:2").is_err());
        std::fs::remove_dir_all(dir).unwrap();
    }
}
