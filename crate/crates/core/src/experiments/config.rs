//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::lattice::{site, Boundary, Geometry, Occupation, ParticleList, Site};
use crate::measures::{InitialLaw, NuLambda, LAMBDA_CAP};
use crate::oracle::DEFAULT_STATE_CAP;

pub const DEFAULT_REPLICAS: usize = 1000;
pub const MIN_REPLICAS: usize = 100;
pub const DEFAULT_DELTA: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Study {
    SelfDuality,
    Stationarity,
    Coupling,
    OrDistance,
    Convergence,
    Correlation,
    Factorization,
    OracleCheck,
}

impl Study {
    pub const ALL: [Study; 8] = [
        Study::SelfDuality,
        Study::Stationarity,
        Study::Coupling,
        Study::OrDistance,
        Study::Convergence,
        Study::Correlation,
        Study::Factorization,
        Study::OracleCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Study::SelfDuality => "self-duality",
            Study::Stationarity => "stationarity",
            Study::Coupling => "coupling",
            Study::OrDistance => "or-distance",
            Study::Convergence => "convergence",
            Study::Correlation => "correlation",
            Study::Factorization => "factorization",
            Study::OracleCheck => "oracle-check",
        }
    }

    /// Studies whose verdict rests on Monte Carlo estimates.
    pub fn is_statistical(self) -> bool {
        !matches!(self, Study::Factorization | Study::OracleCheck)
    }
}

impl fmt::Display for Study {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Study {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Study::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown study `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key `{key}` (first set on line {first})")]
    Duplicate { line: usize, first: usize, key: String },
    #[error("line {line}: invalid value for `{key}`: {reason}")]
    Domain { line: usize, key: String, reason: String },
    #[error("missing required key `{key}` for study {study}")]
    Missing { key: String, study: Study },
    #[error("config names study `{found}` but `{expected}` was requested")]
    StudyMismatch { expected: Study, found: String },
}

const KEYS: &[&str] = &[
    "study",
    "geometry",
    "dim",
    "side",
    "m",
    "lambda",
    "theta",
    "mixture",
    "xi",
    "eta",
    "sizes",
    "x",
    "y",
    "times",
    "replicas",
    "seed",
    "delta",
    "schedule_start",
    "schedule_doublings",
    "matching",
    "cap",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub study: Study,
    pub geometry: Geometry,
    pub m: f64,
    pub lambda: Option<f64>,
    pub theta: Option<f64>,
    /// `(λ, weight)` atoms.
    pub mixture: Option<Vec<(f64, f64)>>,
    pub xi: Option<ParticleList>,
    pub eta: Option<Occupation>,
    pub sizes: Vec<usize>,
    pub x: Option<ParticleList>,
    pub y: Option<ParticleList>,
    pub times: Vec<f64>,
    pub replicas: usize,
    pub seed: u64,
    pub delta: f64,
    pub schedule_start: f64,
    pub schedule_doublings: u32,
    pub matching: bool,
    pub cap: usize,
}

impl ExperimentConfig {
    /// Built-in configuration for each study.
    pub fn preset(study: Study) -> Self {
        let ring5 = Geometry::torus(1, 5).unwrap();
        let base = Self {
            study,
            geometry: ring5,
            m: 2.0,
            lambda: None,
            theta: None,
            mixture: None,
            xi: None,
            eta: None,
            sizes: Vec::new(),
            x: None,
            y: None,
            times: Vec::new(),
            replicas: DEFAULT_REPLICAS,
            seed: 0,
            delta: DEFAULT_DELTA,
            schedule_start: 100.0,
            schedule_doublings: 6,
            matching: false,
            cap: DEFAULT_STATE_CAP,
        };
        match study {
            Study::SelfDuality | Study::OracleCheck => Self {
                xi: Some(ParticleList::on_line(&[0, 2])),
                eta: Some(Occupation::from_counts([(site(&[0]), 2), (site(&[3]), 1)])),
                times: vec![0.5, 1.0, 2.0],
                ..base
            },
            Study::Stationarity => Self {
                geometry: Geometry::torus(1, 10).unwrap(),
                lambda: Some(0.4),
                sizes: vec![1, 2, 3],
                times: vec![0.0, 1.0],
                replicas: 100_000,
                ..base
            },
            Study::Coupling => Self {
                geometry: Geometry::infinite(1),
                x: Some(ParticleList::on_line(&[0, 10])),
                y: Some(ParticleList::on_line(&[3, 17])),
                times: vec![1e2, 1e3, 1e4],
                replicas: 500,
                ..base
            },
            Study::OrDistance => Self {
                geometry: Geometry::infinite(1),
                x: Some(ParticleList::on_line(&[0, 1])),
                times: vec![1e2, 1e3, 1e4],
                ..base
            },
            Study::Convergence => Self {
                geometry: Geometry::infinite(1),
                theta: Some(1.0),
                xi: Some(ParticleList::on_line(&[0, 1])),
                times: vec![1.0, 10.0, 100.0],
                replicas: 10_000,
                ..base
            },
            Study::Correlation => Self {
                geometry: Geometry::torus(1, 10).unwrap(),
                mixture: Some(vec![(0.2, 0.5), (0.6, 0.5)]),
                sizes: vec![1, 2],
                replicas: 100_000,
                ..base
            },
            Study::Factorization => Self {
                lambda: Some(0.4),
                sizes: vec![1, 2, 3],
                eta: Some(Occupation::from_counts([(site(&[0]), 2), (site(&[3]), 1)])),
                times: vec![1.0, 4.0, 16.0, 64.0],
                ..base
            },
        }
    }

    /// The initial or invariant law named by `lambda`, `theta` or `mixture`.
    pub fn law(&self) -> Option<InitialLaw<f64>> {
        if let Some(atoms) = &self.mixture {
            return Some(InitialLaw::NuMixture {
                atoms: atoms.clone(),
                m: self.m,
            });
        }
        if let Some(theta) = self.theta {
            return Some(InitialLaw::Poisson { theta });
        }
        self.lambda
            .map(|lambda| InitialLaw::Nu(NuLambda::new(lambda, self.m).expect("validated at parse time")))
    }

    /// `ξ` configurations to test: the explicit `xi`, else one line of `n` sites per size.
    pub fn xi_list(&self) -> Vec<ParticleList> {
        if let Some(xi) = &self.xi {
            return vec![xi.clone()];
        }
        let d = self.geometry.dim();
        self.sizes
            .iter()
            .map(|&n| {
                ParticleList::new(
                    (0..n as i64)
                        .map(|k| {
                            let mut s = Site::from_elem(0, d);
                            s[0] = k;
                            s
                        })
                        .collect(),
                )
            })
            .collect()
    }

    pub fn schedule(&self) -> Vec<f64> {
        crate::coupling::doubling_schedule(self.schedule_start, self.schedule_doublings)
    }
}

/// Parses `text` for `study`; keys absent from the file keep the study preset
/// when the preset is only a default, and must be present when required.
pub fn parse_config(text: &str, study: Study) -> Result<ExperimentConfig, ConfigError> {
    let mut entries: BTreeMap<String, (usize, String)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or(ConfigError::Syntax { line })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if let Some((first, _)) = entries.get(key) {
            return Err(ConfigError::Duplicate {
                line,
                first: *first,
                key: key.to_string(),
            });
        }
        entries.insert(key.to_string(), (line, value.to_string()));
    }
    Parser { entries, study }.build()
}

struct Parser {
    entries: BTreeMap<String, (usize, String)>,
    study: Study,
}

impl Parser {
    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.entries.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn domain(&self, key: &str, reason: impl Into<String>) -> ConfigError {
        ConfigError::Domain {
            line: self.entries.get(key).map_or(0, |(l, _)| *l),
            key: key.to_string(),
            reason: reason.into(),
        }
    }

    fn missing(&self, key: &str) -> ConfigError {
        ConfigError::Missing {
            key: key.to_string(),
            study: self.study,
        }
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| self.domain(key, format!("cannot parse `{v}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        match self.raw(key) {
            None => Ok(None),
            Some((_, v)) => v
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| self.domain(key, format!("cannot parse list `{v}`"))),
        }
    }

    fn sites(&self, key: &str, dim: usize) -> Result<Option<Vec<Site>>, ConfigError> {
        let Some((_, v)) = self.raw(key) else {
            return Ok(None);
        };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        let mut out = Vec::new();
        for point in v.split(';') {
            let coords: Vec<i64> = point
                .split(',')
                .map(|c| c.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| self.domain(key, format!("cannot parse lattice point `{point}`")))?;
            if coords.len() != dim {
                return Err(self.domain(key, format!("point `{point}` has {} coordinates, dim is {dim}", coords.len())));
            }
            out.push(site(&coords));
        }
        Ok(Some(out))
    }

    fn require<T>(&self, key: &str, value: Option<T>) -> Result<T, ConfigError> {
        value.ok_or_else(|| self.missing(key))
    }

    fn build(self) -> Result<ExperimentConfig, ConfigError> {
        let study = self.study;
        if let Some((_, name)) = self.raw("study") {
            if name != study.name() {
                return Err(ConfigError::StudyMismatch {
                    expected: study,
                    found: name.to_string(),
                });
            }
        }
        let preset = ExperimentConfig::preset(study);
        // Oracle checks run entirely on the preset unless overridden.
        let lenient = study == Study::OracleCheck;

        let dim: usize = self.get("dim")?.unwrap_or(1);
        if dim == 0 || dim > 8 {
            return Err(self.domain("dim", "must lie in 1..=8"));
        }
        let geometry = match self.raw("geometry") {
            None if lenient => preset.geometry,
            None | Some((_, "infinite")) => {
                if self.raw("side").is_some() {
                    return Err(self.domain("side", "only meaningful with geometry = torus"));
                }
                Geometry::infinite(dim)
            }
            Some((_, "torus")) => {
                let side: i64 = self.require("side", self.get("side")?)?;
                Geometry::new(dim, Boundary::Torus(side)).map_err(|e| self.domain("side", e.to_string()))?
            }
            Some((_, other)) => return Err(self.domain("geometry", format!("expected `infinite` or `torus`, got `{other}`"))),
        };
        let dim = geometry.dim();

        let m: f64 = match self.get("m")? {
            Some(m) => m,
            None if lenient => preset.m,
            None => return Err(self.missing("m")),
        };
        if !(m > 0.0) || !m.is_finite() {
            return Err(self.domain("m", "must be positive"));
        }

        let lambda: Option<f64> = self.get("lambda")?;
        if let Some(l) = lambda {
            if !(0.0..=LAMBDA_CAP).contains(&l) {
                return Err(self.domain("lambda", format!("must lie in [0, {LAMBDA_CAP}], got {l}")));
            }
        }
        let theta: Option<f64> = self.get("theta")?;
        if let Some(t) = theta {
            if !(t >= 0.0) || !t.is_finite() {
                return Err(self.domain("theta", "must be non-negative"));
            }
        }
        let mixture = match self.raw("mixture") {
            None => None,
            Some((_, v)) => Some(self.mixture(v)?),
        };
        let laws = [lambda.is_some(), theta.is_some(), mixture.is_some()]
            .iter()
            .filter(|&&b| b)
            .count();
        if laws > 1 {
            let key = if mixture.is_some() { "mixture" } else { "theta" };
            return Err(self.domain(key, "set only one of lambda, theta, mixture"));
        }

        let check_torus = |key: &str, pts: &[Site]| -> Result<(), ConfigError> {
            match pts.iter().find(|p| !geometry.contains(p)) {
                Some(p) => Err(self.domain(key, format!("point {p:?} lies outside the torus"))),
                None => Ok(()),
            }
        };
        let xi = self.sites("xi", dim)?;
        if let Some(p) = &xi {
            check_torus("xi", p)?;
        }
        let eta = self.sites("eta", dim)?;
        if let Some(p) = &eta {
            check_torus("eta", p)?;
        }
        let x = self.sites("x", dim)?;
        let y = self.sites("y", dim)?;
        for (key, p) in [("x", &x), ("y", &y)] {
            if let Some(p) = p {
                check_torus(key, p)?;
            }
        }
        if let (Some(a), Some(b)) = (&x, &y) {
            if a.len() != b.len() {
                return Err(self.domain("y", format!("has {} points, x has {}", b.len(), a.len())));
            }
        }

        let sizes: Option<Vec<usize>> = self.list("sizes")?;
        let times: Option<Vec<f64>> = self.list("times")?;
        if let Some(ts) = &times {
            if ts.iter().any(|t| !(*t >= 0.0) || !t.is_finite()) {
                return Err(self.domain("times", "times must be finite and non-negative"));
            }
            if ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(self.domain("times", "times must be strictly increasing"));
            }
        }
        let replicas: usize = self.get("replicas")?.unwrap_or(if lenient {
            preset.replicas
        } else {
            DEFAULT_REPLICAS
        });
        if study.is_statistical() && replicas < MIN_REPLICAS {
            return Err(self.domain("replicas", format!("must be at least {MIN_REPLICAS}")));
        }
        let delta: f64 = self.get("delta")?.unwrap_or(DEFAULT_DELTA);
        if !(delta > 0.0 && delta < 1.0) {
            return Err(self.domain("delta", "must lie in (0, 1)"));
        }
        let schedule_start: f64 = self.get("schedule_start")?.unwrap_or(preset.schedule_start);
        if !(schedule_start > 0.0) || !schedule_start.is_finite() {
            return Err(self.domain("schedule_start", "must be positive"));
        }
        let schedule_doublings: u32 = self.get("schedule_doublings")?.unwrap_or(preset.schedule_doublings);
        if schedule_doublings > 40 {
            return Err(self.domain("schedule_doublings", "at most 40"));
        }
        let matching: bool = self.get("matching")?.unwrap_or(false);
        let cap: usize = self.get("cap")?.unwrap_or(DEFAULT_STATE_CAP);
        let seed: u64 = self.get("seed")?.unwrap_or(0);

        let cfg = ExperimentConfig {
            study,
            geometry,
            m,
            lambda,
            theta,
            mixture,
            xi: xi.map(ParticleList::new),
            eta: eta.map(|p| crate::lattice::occupation_of(&ParticleList::new(p))),
            sizes: sizes.unwrap_or_default(),
            x: x.map(ParticleList::new),
            y: y.map(ParticleList::new),
            times: times.unwrap_or_default(),
            replicas,
            seed,
            delta,
            schedule_start,
            schedule_doublings,
            matching,
            cap,
        };
        if lenient {
            return Ok(self.fill_oracle_defaults(cfg, preset));
        }
        self.check_required(&cfg)?;
        Ok(cfg)
    }

    fn mixture(&self, v: &str) -> Result<Vec<(f64, f64)>, ConfigError> {
        let atoms = v
            .split(',')
            .map(|atom| {
                let (l, w) = atom.split_once(':')?;
                Some((l.trim().parse().ok()?, w.trim().parse().ok()?))
            })
            .collect::<Option<Vec<(f64, f64)>>>()
            .ok_or_else(|| self.domain("mixture", format!("expected `lambda:weight,...`, got `{v}`")))?;
        crate::duality::check_mixture(&atoms).map_err(|e| self.domain("mixture", e.to_string()))?;
        Ok(atoms)
    }

    fn fill_oracle_defaults(&self, mut cfg: ExperimentConfig, preset: ExperimentConfig) -> ExperimentConfig {
        if cfg.xi.is_none() {
            cfg.xi = preset.xi;
        }
        if cfg.eta.is_none() {
            cfg.eta = preset.eta;
        }
        if cfg.times.is_empty() {
            cfg.times = preset.times;
        }
        cfg
    }

    fn check_required(&self, cfg: &ExperimentConfig) -> Result<(), ConfigError> {
        let need_torus = |cfg: &ExperimentConfig| -> Result<(), ConfigError> {
            if cfg.geometry.side().is_none() {
                return Err(self.domain("geometry", format!("study {} needs geometry = torus", self.study)));
            }
            Ok(())
        };
        let need_times = |cfg: &ExperimentConfig| -> Result<(), ConfigError> {
            if cfg.times.is_empty() {
                return Err(self.missing("times"));
            }
            Ok(())
        };
        let need_xi_or_sizes = |cfg: &ExperimentConfig| -> Result<(), ConfigError> {
            if cfg.xi.is_none() && cfg.sizes.is_empty() {
                return Err(self.missing("xi"));
            }
            Ok(())
        };
        match self.study {
            Study::SelfDuality => {
                need_torus(cfg)?;
                self.require("xi", cfg.xi.as_ref())?;
                self.require("eta", cfg.eta.as_ref())?;
                need_times(cfg)?;
            }
            Study::Stationarity => {
                need_torus(cfg)?;
                self.require("lambda", cfg.lambda)?;
                need_xi_or_sizes(cfg)?;
                need_times(cfg)?;
            }
            Study::Coupling => {
                self.require("x", cfg.x.as_ref())?;
                self.require("y", cfg.y.as_ref())?;
                need_times(cfg)?;
                if cfg.times.first() == Some(&0.0) {
                    return Err(self.domain("times", "coupling horizons must be positive"));
                }
            }
            Study::OrDistance => {
                self.require("x", cfg.x.as_ref())?;
                need_times(cfg)?;
            }
            Study::Convergence => {
                if cfg.law().is_none() {
                    return Err(self.missing("theta"));
                }
                need_xi_or_sizes(cfg)?;
                need_times(cfg)?;
            }
            Study::Correlation => {
                need_torus(cfg)?;
                self.require("mixture", cfg.mixture.as_ref())?;
                if cfg.sizes.is_empty() {
                    return Err(self.missing("sizes"));
                }
            }
            Study::Factorization => {
                need_torus(cfg)?;
                self.require("lambda", cfg.lambda)?;
                if cfg.sizes.is_empty() {
                    return Err(self.missing("sizes"));
                }
            }
            Study::OracleCheck => {}
        }
        Ok(())
    }
}

/// Renders a configuration back into the flat text format.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    let join_sites = |p: &[Site]| {
        p.iter()
            .map(|s| s.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(","))
            .collect::<Vec<_>>()
            .join(";")
    };
    let join = |v: &[f64]| v.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",");
    let mut out = vec![format!("study = {}", cfg.study), format!("dim = {}", cfg.geometry.dim())];
    match cfg.geometry.side() {
        Some(l) => {
            out.push("geometry = torus".into());
            out.push(format!("side = {l}"));
        }
        None => out.push("geometry = infinite".into()),
    }
    out.push(format!("m = {}", cfg.m));
    if let Some(l) = cfg.lambda {
        out.push(format!("lambda = {l}"));
    }
    if let Some(t) = cfg.theta {
        out.push(format!("theta = {t}"));
    }
    if let Some(atoms) = &cfg.mixture {
        let s: Vec<String> = atoms.iter().map(|(l, w)| format!("{l}:{w}")).collect();
        out.push(format!("mixture = {}", s.join(",")));
    }
    if let Some(xi) = &cfg.xi {
        out.push(format!("xi = {}", join_sites(xi.positions())));
    }
    if let Some(eta) = &cfg.eta {
        out.push(format!("eta = {}", join_sites(eta.to_particles().positions())));
    }
    if !cfg.sizes.is_empty() {
        let s: Vec<String> = cfg.sizes.iter().map(|n| n.to_string()).collect();
        out.push(format!("sizes = {}", s.join(",")));
    }
    if let Some(x) = &cfg.x {
        out.push(format!("x = {}", join_sites(x.positions())));
    }
    if let Some(y) = &cfg.y {
        out.push(format!("y = {}", join_sites(y.positions())));
    }
    if !cfg.times.is_empty() {
        out.push(format!("times = {}", join(&cfg.times)));
    }
    out.push(format!("replicas = {}", cfg.replicas));
    out.push(format!("seed = {}", cfg.seed));
    out.push(format!("delta = {}", cfg.delta));
    out.push(format!("schedule_start = {}", cfg.schedule_start));
    out.push(format!("schedule_doublings = {}", cfg.schedule_doublings));
    out.push(format!("matching = {}", cfg.matching));
    out.push(format!("cap = {}", cfg.cap));
    out.join("\n") + "\n"
}
