//! Flat `key = value` experiment configuration.
//!
//! ```text
//! # comment
//! prior.dim = 8
//! prior.0.weight = 0.5
//! prior.0.mean = const:2
//! prior.0.cov = identity          # or diag: v1,..  full: row-major  scalar: s
//! prior.csv = prior.csv           # alternative to inline components
//! schedule = linear-flow
//! grid.steps = 100
//! grid.spacing = uniform
//! mask = 1,1,1,1,0,0,0,0          # or mask.file = mask.pgm
//! x_star.from_component = 0       # or x_star = ..., or x_star.file = x.dsmp
//! noisy = false
//! gamma = 0.1
//! eta = 0.8
//! methods = ding, dps, ddnm, diffpir, blended
//! method.dps.zeta = 0.01
//! n_chains = 4000
//! seed = 7
//! output = out
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gmm::{Covariance, GaussianMixture};
use crate::guidance::{Method, SamplerConfig};
use crate::io;
use crate::metrics::DEFAULT_PROJECTIONS;
use crate::problem::MaskOperator;
use crate::schedule::{Schedule, Spacing, TimeGrid};

/// Where the reference signal comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum XStarSource {
    Inline(DVector<f64>),
    /// Drawn from the given prior component with a seed-derived stream.
    FromComponent(usize),
    /// First row of a `.dsmp` file.
    File(PathBuf),
}

/// Per-method hyperparameters after applying overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSettings {
    pub method: Method,
    pub eta: f64,
    pub gamma: f64,
    pub zeta: f64,
    pub lambda: f64,
    pub ding_nz: usize,
    pub final_replacement: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub prior: GaussianMixture,
    pub schedule: Schedule,
    pub steps: usize,
    pub spacing: Spacing,
    pub mask: MaskOperator,
    pub x_star: XStarSource,
    pub noisy: bool,
    pub gamma: f64,
    pub methods: Vec<MethodSettings>,
    pub n_chains: usize,
    pub seed: u64,
    pub output: PathBuf,
    pub trajectories: bool,
    pub projections: usize,
    pub peak: f64,
    pub oracle_samples: usize,
    /// Hex SHA-256 of the config text, truncated to 16 characters.
    pub hash: String,
}

impl ExperimentConfig {
    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.steps, self.spacing)
    }

    /// Sampler configuration for one method; the seed is filled in by the
    /// caller.
    pub fn sampler_config(&self, settings: &MethodSettings) -> Result<SamplerConfig> {
        let mut cfg = SamplerConfig::new(settings.method, self.grid()?, settings.gamma);
        cfg.eta = settings.eta;
        cfg.dps_scale = settings.zeta;
        cfg.diffpir_lambda = settings.lambda;
        cfg.ding_nz = settings.ding_nz;
        cfg.final_replacement = settings.final_replacement;
        cfg.n_chains = self.n_chains;
        cfg.record_trajectories = self.trajectories;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        parse(&text, &base)
    }
}

fn config_hash(text: &str) -> String {
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

struct Entry {
    line: usize,
    value: String,
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = v
        .parse()
        .map_err(|_| Error::config(line, format!("{key}: '{v}' is not a number")))?;
    if !x.is_finite() {
        return Err(Error::config(line, format!("{key} must be finite")));
    }
    Ok(x)
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::config(line, format!("{key}: '{v}' is not a non-negative integer")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::config(line, format!("{key}: '{v}' is not a boolean"))),
    }
}

fn parse_list(line: usize, key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(line, key, s))
        .collect()
}

/// Vector of length `dim`; `const:c` broadcasts.
fn parse_vector(line: usize, key: &str, v: &str, dim: usize) -> Result<DVector<f64>> {
    if let Some(c) = v.strip_prefix("const:") {
        return Ok(DVector::from_element(dim, parse_f64(line, key, c.trim())?));
    }
    let xs = parse_list(line, key, v)?;
    if xs.len() != dim {
        return Err(Error::config(line, format!("{key}: expected {dim} values, got {}", xs.len())));
    }
    Ok(DVector::from_vec(xs))
}

fn parse_cov(line: usize, key: &str, v: &str, dim: usize) -> Result<Covariance> {
    let (kind, rest) = v.split_once(':').map_or((v, ""), |(k, r)| (k.trim(), r.trim()));
    match kind {
        "identity" => Ok(Covariance::identity(dim)),
        "scalar" => Ok(Covariance::Diagonal(DVector::from_element(dim, parse_f64(line, key, rest)?))),
        "diag" => Ok(Covariance::Diagonal(parse_vector(line, key, rest, dim)?)),
        "full" => {
            let xs = parse_list(line, key, rest)?;
            if xs.len() != dim * dim {
                return Err(Error::config(line, format!("{key}: full covariance needs {} values", dim * dim)));
            }
            Ok(Covariance::Full(DMatrix::from_row_slice(dim, dim, &xs)))
        }
        _ => Err(Error::config(
            line,
            format!("{key}: expected identity, scalar:, diag: or full:, got '{v}'"),
        )),
    }
}

fn resolve(base: &Path, v: &str) -> PathBuf {
    let p = Path::new(v);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Wraps an error from a referenced file with the line that named it,
/// keeping I/O failures as I/O failures.
fn at_line(line: usize, e: Error) -> Error {
    match e {
        Error::Io { .. } | Error::Format { .. } => e,
        other => Error::config(line, other.to_string()),
    }
}

/// Range check shared by global and per-method hyperparameters.
fn check_hyper(key: &str, x: f64) -> std::result::Result<(), String> {
    let name = key.rsplit('.').next().unwrap_or(key);
    match name {
        "eta" if !(0.0..=1.0).contains(&x) => Err(format!("{key} must lie in [0, 1], got {x}")),
        "gamma" | "zeta" | "lambda" if x <= 0.0 => Err(format!("{key} must be positive, got {x}")),
        _ => Ok(()),
    }
}

const METHOD_KEYS: [&str; 6] = ["eta", "gamma", "zeta", "lambda", "ding_nz", "final_replacement"];

/// Parses config text; `base` anchors relative paths.
pub fn parse(text: &str, base: &Path) -> Result<ExperimentConfig> {
    let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::config(line, format!("expected 'key = value', got '{content}'")))?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::config(line, "empty key"));
        }
        if let Some(prev) = entries.get(&key) {
            return Err(Error::config(line, format!("duplicate key '{key}' (first set on line {})", prev.line)));
        }
        entries.insert(
            key,
            Entry {
                line,
                value: value.trim().to_string(),
            },
        );
    }
    let hash = config_hash(text);
    Builder { entries }.build(base, hash)
}

struct Builder {
    entries: BTreeMap<String, Entry>,
}

impl Builder {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.entries.remove(key).map(|e| (e.line, e.value))
    }

    fn take_f64(&mut self, key: &str, default: f64) -> Result<f64> {
        self.take(key).map_or(Ok(default), |(l, v)| parse_f64(l, key, &v))
    }

    fn take_usize(&mut self, key: &str, default: usize) -> Result<usize> {
        self.take(key).map_or(Ok(default), |(l, v)| parse_usize(l, key, &v))
    }

    fn take_bool(&mut self, key: &str, default: bool) -> Result<bool> {
        self.take(key).map_or(Ok(default), |(l, v)| parse_bool(l, key, &v))
    }

    fn take_checked(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            Some((l, v)) => {
                let x = parse_f64(l, key, &v)?;
                check_hyper(key, x).map_err(|m| Error::config(l, m))?;
                Ok(x)
            }
            None => Ok(default),
        }
    }

    fn build(mut self, base: &Path, hash: String) -> Result<ExperimentConfig> {
        let (dim_line, dim) = match self.take("prior.dim") {
            Some((l, v)) => (l, parse_usize(l, "prior.dim", &v)?),
            None => return Err(Error::config(0, "missing required key 'prior.dim'")),
        };
        if dim == 0 {
            return Err(Error::config(dim_line, "prior.dim must be at least 1"));
        }
        let prior = self.prior(base, dim, dim_line)?;

        let schedule = match self.take("schedule") {
            Some((l, v)) => v.parse::<Schedule>().map_err(|e| at_line(l, e))?,
            None => Schedule::default(),
        };
        let steps = self.take_usize("grid.steps", 50)?;
        let spacing = match self.take("grid.spacing") {
            Some((l, v)) => v.parse::<Spacing>().map_err(|e| at_line(l, e))?,
            None => Spacing::Uniform,
        };
        if steps == 0 {
            return Err(Error::config(0, "grid.steps must be at least 1"));
        }

        let mask = match (self.take("mask"), self.take("mask.file")) {
            (Some((l, _)), Some(_)) => return Err(Error::config(l, "set either mask or mask.file, not both")),
            (Some((l, v)), None) => {
                MaskOperator::from_values(&parse_list(l, "mask", &v)?).map_err(|e| at_line(l, e))?
            }
            (None, Some((l, v))) => {
                let path = resolve(base, &v);
                let bits = if path.extension().is_some_and(|e| e == "dmsk") {
                    io::read_dmsk(&path)?.as_slice().to_vec()
                } else {
                    io::read_pgm_flat(&path)?
                };
                MaskOperator::from_values(&bits.iter().map(|&b| b as u8 as f64).collect::<Vec<_>>())
                    .map_err(|e| at_line(l, e))?
            }
            (None, None) => return Err(Error::config(0, "missing required key 'mask' or 'mask.file'")),
        };
        if mask.dim() != dim {
            return Err(Error::config(0, format!("mask has {} entries, prior.dim is {dim}", mask.dim())));
        }

        let x_star = match (self.take("x_star"), self.take("x_star.from_component"), self.take("x_star.file")) {
            (Some((l, v)), None, None) => XStarSource::Inline(parse_vector(l, "x_star", &v, dim)?),
            (None, Some((l, v)), None) => {
                let k = parse_usize(l, "x_star.from_component", &v)?;
                if k >= prior.components().len() {
                    return Err(Error::config(l, format!("prior has no component {k}")));
                }
                XStarSource::FromComponent(k)
            }
            (None, None, Some((_, v))) => XStarSource::File(resolve(base, &v)),
            (None, None, None) => XStarSource::FromComponent(0),
            _ => return Err(Error::config(0, "set only one of x_star, x_star.from_component, x_star.file")),
        };
        if let XStarSource::File(p) = &x_star {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::from(std::io::ErrorKind::NotFound)));
            }
        }

        let noisy = self.take_bool("noisy", false)?;
        let gamma = self.take_checked("gamma", 0.1)?;
        let eta = self.take_checked("eta", 0.8)?;
        let n_chains = self.take_usize("n_chains", 1000)?;
        let seed = match self.take("seed") {
            Some((l, v)) => v.parse::<u64>().map_err(|_| Error::config(l, format!("seed: '{v}' is not a u64")))?,
            None => 0,
        };
        let output = self.take("output").map_or_else(|| base.join("out"), |(_, v)| resolve(base, &v));
        let trajectories = self.take_bool("output.trajectories", false)?;
        let projections = self.take_usize("metrics.projections", DEFAULT_PROJECTIONS)?;
        let peak = self.take_f64("metrics.peak", 1.0)?;
        let oracle_samples = self.take_usize("oracle.samples", n_chains)?;
        let methods = self.methods(eta, gamma)?;

        if let Some((key, e)) = self.entries.iter().next() {
            return Err(Error::config(e.line, format!("unknown key '{key}'")));
        }

        let cfg = ExperimentConfig {
            prior,
            schedule,
            steps,
            spacing,
            mask,
            x_star,
            noisy,
            gamma,
            methods,
            n_chains,
            seed,
            output,
            trajectories,
            projections,
            peak,
            oracle_samples,
            hash,
        };
        if cfg.n_chains == 0 {
            return Err(Error::config(0, "n_chains must be at least 1"));
        }
        if cfg.projections == 0 || cfg.oracle_samples == 0 || cfg.peak <= 0.0 {
            return Err(Error::config(0, "metrics.projections, oracle.samples and metrics.peak must be positive"));
        }
        Ok(cfg)
    }

    fn prior(&mut self, base: &Path, dim: usize, dim_line: usize) -> Result<GaussianMixture> {
        if let Some((_, v)) = self.take("prior.csv") {
            return io::read_prior_csv(&resolve(base, &v), dim);
        }
        let mut indices: Vec<usize> = Vec::new();
        for (key, e) in &self.entries {
            if let Some(rest) = key.strip_prefix("prior.") {
                let idx = rest.split('.').next().unwrap_or("");
                let k = parse_usize(e.line, key, idx)?;
                if !indices.contains(&k) {
                    indices.push(k);
                }
            }
        }
        indices.sort_unstable();
        if indices.is_empty() {
            return Err(Error::config(dim_line, "no prior components given (prior.N.* or prior.csv)"));
        }
        if indices.iter().enumerate().any(|(i, &k)| i != k) {
            return Err(Error::config(dim_line, "prior components must be numbered 0, 1, 2, ..."));
        }
        let (mut weights, mut means, mut covs) = (Vec::new(), Vec::new(), Vec::new());
        for k in indices {
            let wk = format!("prior.{k}.weight");
            let mk = format!("prior.{k}.mean");
            let ck = format!("prior.{k}.cov");
            let w = self.take_f64(&wk, 1.0)?;
            let mean = match self.take(&mk) {
                Some((l, v)) => parse_vector(l, &mk, &v, dim)?,
                None => return Err(Error::config(dim_line, format!("missing {mk}"))),
            };
            let cov = match self.take(&ck) {
                Some((l, v)) => parse_cov(l, &ck, &v, dim)?,
                None => Covariance::identity(dim),
            };
            weights.push(w);
            means.push(mean);
            covs.push(cov);
        }
        GaussianMixture::from_unnormalized(weights, means, covs).map_err(|e| at_line(dim_line, e))
    }

    fn methods(&mut self, eta: f64, gamma: f64) -> Result<Vec<MethodSettings>> {
        let list = match self.take("methods") {
            Some((l, v)) => {
                let mut out = Vec::new();
                for name in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let m = name.parse::<Method>().map_err(|e| at_line(l, e))?;
                    if out.contains(&m) {
                        return Err(Error::config(l, format!("method '{name}' listed twice")));
                    }
                    out.push(m);
                }
                if out.is_empty() {
                    return Err(Error::config(l, "methods list is empty"));
                }
                out
            }
            None => vec![Method::Ding],
        };
        let mut overrides: HashMap<(String, String), (usize, String)> = HashMap::new();
        let keys: Vec<String> = self.entries.keys().filter(|k| k.starts_with("method.")).cloned().collect();
        for key in keys {
            let (line, value) = self.take(&key).unwrap();
            let parts: Vec<&str> = key.splitn(3, '.').collect();
            if parts.len() != 3 || !METHOD_KEYS.contains(&parts[2]) {
                return Err(Error::config(line, format!("unknown key '{key}'")));
            }
            let m = parts[1].parse::<Method>().map_err(|e| at_line(line, e))?;
            if !list.contains(&m) {
                log::warn!("line {line}: override for method '{}' ignored, not in methods list", parts[1]);
                continue;
            }
            overrides.insert((m.name().to_string(), parts[2].to_string()), (line, value));
        }
        let get = |m: Method, k: &str| overrides.get(&(m.name().to_string(), k.to_string()));
        list.into_iter()
            .map(|m| {
                let f = |k: &str, d: f64| {
                    get(m, k).map_or(Ok(d), |(l, v)| {
                        let x = parse_f64(*l, k, v)?;
                        check_hyper(k, x).map_err(|msg| Error::config(*l, msg))?;
                        Ok(x)
                    })
                };
                Ok(MethodSettings {
                    method: m,
                    eta: f("eta", eta)?,
                    gamma: f("gamma", gamma)?,
                    zeta: f("zeta", 1.0)?,
                    lambda: f("lambda", 1.0)?,
                    ding_nz: get(m, "ding_nz").map_or(Ok(1), |(l, v)| match parse_usize(*l, "ding_nz", v)? {
                        0 => Err(Error::config(*l, "ding_nz must be at least 1")),
                        n => Ok(n),
                    })?,
                    final_replacement: get(m, "final_replacement")
                        .map_or(Ok(true), |(l, v)| parse_bool(*l, "final_replacement", v))?,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = "\
prior.dim = 2
prior.0.weight = 0.25
prior.0.mean = const:1
prior.1.weight = 0.75
prior.1.mean = -1, 0.5
prior.1.cov = diag: 0.5, 2
mask = 1, 0
gamma = 0.2
methods = ding, dps
method.dps.zeta = 0.01
method.ding.final_replacement = false
n_chains = 10
seed = 3
";

    #[test]
    fn parses_basic_config() {
        let c = parse(BASIC, Path::new("/tmp")).unwrap();
        assert_eq!(c.dim(), 2);
        assert_eq!(c.prior.weights(), &[0.25, 0.75]);
        assert_eq!(c.methods.len(), 2);
        assert_eq!(c.methods[0].method, Method::Ding);
        assert!(!c.methods[0].final_replacement);
        assert_eq!(c.methods[1].zeta, 0.01);
        assert_eq!(c.methods[1].gamma, 0.2);
        assert_eq!(c.seed, 3);
        assert_eq!(c.x_star, XStarSource::FromComponent(0));
        assert_eq!(c.output, Path::new("/tmp/out"));
        assert_eq!(c.hash.len(), 16);
    }

    fn line_of(text: &str) -> usize {
        match parse(text, Path::new(".")) {
            Err(Error::Config { line, .. }) => line,
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn diagnostics_carry_line_numbers() {
        assert_eq!(line_of(&format!("{BASIC}bogus = 1\n")), 14);
        assert_eq!(line_of(&format!("{BASIC}gamma = 3\n")), 14);
        assert_eq!(line_of(&BASIC.replace("gamma = 0.2", "gamma = abc")), 8);
        assert_eq!(line_of(&BASIC.replace("mask = 1, 0", "mask = 1, 2")), 7);
        assert_eq!(line_of(&BASIC.replace("methods = ding, dps", "methods = ding, flair")), 9);
        assert_eq!(line_of(&BASIC.replace("method.dps.zeta", "method.flair.zeta")), 10);
        assert_eq!(line_of(&format!("{BASIC}just text\n")), 14);
    }

    #[test]
    fn rejects_invalid_overrides() {
        assert!(parse(&BASIC.replace("zeta = 0.01", "zeta = -1"), Path::new(".")).is_err());
        assert_eq!(line_of(&format!("{BASIC}method.ding.eta = 1.5\n")), 14);
        assert!(parse(&BASIC.replace("mask = 1, 0", "mask = 1, 0, 1"), Path::new(".")).is_err());
    }

    #[test]
    fn missing_files_are_io_errors() {
        let e = parse(&format!("{BASIC}x_star.file = nope.dsmp\n"), Path::new("/nonexistent")).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        let text = BASIC.replace("mask = 1, 0", "mask.file = nope.pgm");
        assert_eq!(parse(&text, Path::new("/nonexistent")).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn covariance_forms() {
        let c = parse_cov(1, "k", "full: 2, 0.5, 0.5, 1", 2).unwrap();
        assert_eq!(c.to_dense()[(0, 1)], 0.5);
        assert_eq!(parse_cov(1, "k", "scalar: 3", 2).unwrap().to_dense()[(1, 1)], 3.0);
        assert!(parse_cov(1, "k", "banana", 2).is_err());
    }
}
