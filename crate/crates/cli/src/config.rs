//! Experiment configuration: one TOML file with flat key paths.
//!
//! ```toml
//! kind = "se-sweep"
//! seed = 7
//! source.mixing = [[1.0, 1.0, 0.0], [0.0, 1.0, 1.0]]
//! source.alphas = [0.2, 0.3, 0.2]
//! grid.rho_x = [0.3, 0.5, 0.7]
//! ```
//!
//! Validation never stops at the first problem; every offending field is
//! reported. A valid file resolves to an [`ExperimentConfig`] with every
//! default written out, see [`ExperimentConfig::echo`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use mamp::SourceSpec;
use serde::Serialize;
use serde_json::{json, Value as Json};
use toml::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Rid,
    SeSweep,
    MampRun,
    CoupledRun,
    PhaseBoundary,
    FreshSeCheck,
}

impl Kind {
    pub const ALL: [Kind; 6] = [
        Kind::Rid,
        Kind::SeSweep,
        Kind::MampRun,
        Kind::CoupledRun,
        Kind::PhaseBoundary,
        Kind::FreshSeCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Rid => "rid",
            Kind::SeSweep => "se-sweep",
            Kind::MampRun => "mamp-run",
            Kind::CoupledRun => "coupled-run",
            Kind::PhaseBoundary => "phase-boundary",
            Kind::FreshSeCheck => "fresh-se-check",
        }
    }

    pub fn parse(s: &str) -> Option<Kind> {
        Kind::ALL.into_iter().find(|k| k.name() == s)
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A problem with one field of the configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingConfig {
    pub l_c: usize,
    pub w: usize,
    pub seed_blocks: usize,
    pub seed_boost: f64,
    pub iterations: usize,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Experiment {
    Rid,
    SeSweep {
        rho_x: Vec<f64>,
        rho_y: Vec<f64>,
        tol: f64,
        max_iter: usize,
    },
    MampRun {
        rho_x: f64,
        rho_y: f64,
        n: usize,
        seeds: usize,
        max_iter: usize,
        stop_tol: f64,
        empirical_tau: bool,
    },
    CoupledRun {
        coupling: CouplingConfig,
        delta_x: f64,
        delta_y: f64,
        n_block: usize,
        runs: usize,
        max_iter: usize,
        empirical_phi: bool,
    },
    PhaseBoundary {
        coupling: CouplingConfig,
        delta_x: Vec<f64>,
        lo: f64,
        hi: f64,
        tol: f64,
    },
    FreshSeCheck {
        rho_x: f64,
        rho_y: f64,
        n: usize,
        iterations: usize,
        seeds: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub source: SourceSpec,
    pub mc_samples: usize,
    pub mc_seed: u64,
    pub sigma2_x: f64,
    pub sigma2_y: f64,
    pub experiment: Experiment,
    echo: BTreeMap<String, Json>,
}

impl ExperimentConfig {
    /// Every resolved field, defaults included, by key path.
    pub fn echo(&self) -> &BTreeMap<String, Json> {
        &self.echo
    }

    /// The resolved configuration as TOML text; parsing it back yields the
    /// same configuration.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.echo {
            out.push_str(&format!("{k} = {}\n", json_to_toml(v)));
        }
        out
    }

    /// Replaces the master seed; a Monte-Carlo seed that was defaulted
    /// follows it.
    pub fn override_seed(&mut self, seed: u64) {
        if self.mc_seed == self.seed {
            self.mc_seed = seed;
            self.echo.insert("mc.seed".into(), json!(seed));
        }
        self.seed = seed;
        self.echo.insert("seed".into(), json!(seed));
    }
}

fn json_to_toml(v: &Json) -> String {
    match v {
        Json::Array(items) => {
            let inner: Vec<String> = items.iter().map(json_to_toml).collect();
            format!("[{}]", inner.join(", "))
        }
        Json::Number(n) if n.is_f64() => {
            let f = n.as_f64().unwrap_or(f64::NAN);
            // keep a decimal point so the value reads back as a float
            let s = format!("{f:?}");
            if s.contains('.') || s.contains('e') {
                s
            } else {
                format!("{s}.0")
            }
        }
        other => other.to_string(),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

/// Pulls typed fields out of the flattened file, collecting diagnostics and
/// the resolved echo.
struct Reader {
    raw: BTreeMap<String, Value>,
    used: BTreeSet<String>,
    diags: Vec<Diagnostic>,
    echo: BTreeMap<String, Json>,
}

impl Reader {
    fn diag(&mut self, field: &str, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            field: field.into(),
            message: message.into(),
        });
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.used.insert(key.into());
        self.raw.get(key).cloned()
    }

    fn number(v: &Value) -> Option<f64> {
        match v {
            Value::Float(f) => Some(*f),
            Value::Integer(i) => Some(*i as f64),
            _ => None,
        }
    }

    /// A float field; `check` returns a message when the value is out of range.
    fn float(&mut self, key: &str, default: Option<f64>, check: fn(f64) -> Option<&'static str>) -> f64 {
        let v = match self.take(key) {
            None => match default {
                Some(d) => d,
                None => {
                    self.diag(key, "missing required field");
                    return f64::NAN;
                }
            },
            Some(v) => match Self::number(&v) {
                Some(f) => f,
                None => {
                    self.diag(key, format!("expected a number, found {}", v.type_str()));
                    return f64::NAN;
                }
            },
        };
        if let Some(msg) = check(v) {
            self.diag(key, format!("{v} {msg}"));
        }
        self.echo.insert(key.into(), json!(v));
        v
    }

    fn int(&mut self, key: &str, default: Option<u64>, min: u64) -> u64 {
        let v = match self.take(key) {
            None => match default {
                Some(d) => d,
                None => {
                    self.diag(key, "missing required field");
                    return min;
                }
            },
            Some(Value::Integer(i)) if i >= 0 => i as u64,
            Some(v) => {
                self.diag(key, format!("expected a non-negative integer, found {v}"));
                return min;
            }
        };
        if v < min {
            self.diag(key, format!("{v} is below the minimum {min}"));
        }
        self.echo.insert(key.into(), json!(v));
        v
    }

    fn string(&mut self, key: &str, default: &str, allowed: &[&str]) -> String {
        let v = match self.take(key) {
            None => default.to_string(),
            Some(Value::String(s)) => s,
            Some(v) => {
                self.diag(key, format!("expected a string, found {}", v.type_str()));
                return default.to_string();
            }
        };
        if !allowed.contains(&v.as_str()) {
            self.diag(key, format!("'{v}' is not one of {}", allowed.join(", ")));
        }
        self.echo.insert(key.into(), json!(v));
        v
    }

    fn float_list(
        &mut self,
        key: &str,
        default: Option<Vec<f64>>,
        check: fn(f64) -> Option<&'static str>,
    ) -> Vec<f64> {
        let v = match self.take(key) {
            None => match default {
                Some(d) => d,
                None => {
                    self.diag(key, "missing required field");
                    return Vec::new();
                }
            },
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, it) in items.iter().enumerate() {
                    match Self::number(it) {
                        Some(f) => out.push(f),
                        None => self.diag(&format!("{key}[{i}]"), "expected a number"),
                    }
                }
                out
            }
            Some(v) => {
                self.diag(key, format!("expected a list of numbers, found {}", v.type_str()));
                return Vec::new();
            }
        };
        if v.is_empty() {
            self.diag(key, "list is empty");
        }
        for (i, &f) in v.iter().enumerate() {
            if let Some(msg) = check(f) {
                self.diag(&format!("{key}[{i}]"), format!("{f} {msg}"));
            }
        }
        self.echo.insert(key.into(), json!(v));
        v
    }

    fn matrix(&mut self, key: &str) -> Vec<Vec<f64>> {
        let Some(v) = self.take(key) else {
            self.diag(key, "missing required field");
            return Vec::new();
        };
        let Value::Array(rows) = v else {
            self.diag(key, "expected a list of rows");
            return Vec::new();
        };
        let mut out = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            let Value::Array(items) = row else {
                self.diag(&format!("{key}[{r}]"), "expected a row of numbers");
                continue;
            };
            let mut vals = Vec::new();
            for (c, it) in items.iter().enumerate() {
                match Self::number(it) {
                    Some(f) if f.is_finite() => vals.push(f),
                    _ => self.diag(&format!("{key}[{r}][{c}]"), "expected a finite number"),
                }
            }
            out.push(vals);
        }
        self.echo.insert(key.into(), json!(out));
        out
    }
}

fn positive(v: f64) -> Option<&'static str> {
    (!(v > 0.0 && v.is_finite())).then_some("must be positive")
}

fn non_negative(v: f64) -> Option<&'static str> {
    (!(v >= 0.0 && v.is_finite())).then_some("must be finite and non-negative")
}

fn rate(v: f64) -> Option<&'static str> {
    (!(v > 0.0 && v <= 1.0)).then_some("must lie in (0, 1]")
}

fn alpha(v: f64) -> Option<&'static str> {
    (!(v > 0.0 && v <= 1.0)).then_some("is out of range: alphas must lie in (0, 1]")
}

/// `k` evenly spaced points `1/k, 2/k, .., 1`.
pub fn default_grid(k: usize) -> Vec<f64> {
    (1..=k).map(|i| i as f64 / k as f64).collect()
}

fn coupling(rd: &mut Reader) -> CouplingConfig {
    CouplingConfig {
        l_c: rd.int("coupling.l_c", Some(16), 1) as usize,
        w: rd.int("coupling.w", Some(2), 0) as usize,
        seed_blocks: rd.int("coupling.seed_blocks", Some(3), 0) as usize,
        seed_boost: rd.float("coupling.seed_boost", Some(1.0), non_negative),
        iterations: rd.int("coupling.iterations", Some(400), 1) as usize,
        threshold: rd.float("coupling.threshold", Some(1e-4), positive),
    }
}

/// Parses and validates a configuration file's text.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let table: toml::Table = match raw.parse() {
        Ok(t) => t,
        Err(e) => {
            return Err(vec![Diagnostic {
                field: "<file>".into(),
                message: format!("not valid TOML: {}", e.message()),
            }])
        }
    };
    let mut flat = BTreeMap::new();
    flatten("", &table, &mut flat);
    let mut rd = Reader {
        raw: flat,
        used: BTreeSet::new(),
        diags: Vec::new(),
        echo: BTreeMap::new(),
    };

    let names: Vec<&str> = Kind::ALL.iter().map(|k| k.name()).collect();
    let kind = match rd.take("kind") {
        None => {
            rd.diag("kind", format!("missing required field (one of {})", names.join(", ")));
            None
        }
        Some(Value::String(s)) => match Kind::parse(&s) {
            Some(k) => Some(k),
            None => {
                rd.diag("kind", format!("'{s}' is not one of {}", names.join(", ")));
                None
            }
        },
        Some(v) => {
            rd.diag("kind", format!("expected a string, found {}", v.type_str()));
            None
        }
    };
    if let Some(k) = kind {
        rd.echo.insert("kind".into(), json!(k.name()));
    }
    let seed = rd.int("seed", Some(0), 0);
    let mixing = rd.matrix("source.mixing");
    let alphas = rd.float_list("source.alphas", None, alpha);
    let (mut mc_samples, mut mc_seed) = (0, seed);
    let (mut sigma2_x, mut sigma2_y) = (0.0, 0.0);
    if kind != Some(Kind::Rid) && kind.is_some() {
        mc_samples = rd.int("mc.samples", Some(100_000), 1) as usize;
        mc_seed = rd.int("mc.seed", Some(seed), 0);
        sigma2_x = rd.float("noise.sigma2_x", Some(0.0), non_negative);
        sigma2_y = rd.float("noise.sigma2_y", Some(0.0), non_negative);
    }

    let experiment = kind.map(|k| match k {
        Kind::Rid => Experiment::Rid,
        Kind::SeSweep => Experiment::SeSweep {
            rho_x: rd.float_list("grid.rho_x", Some(default_grid(20)), rate),
            rho_y: rd.float_list("grid.rho_y", Some(default_grid(20)), rate),
            tol: rd.float("se.tol", Some(1e-8), positive),
            max_iter: rd.int("se.max_iter", Some(500), 1) as usize,
        },
        Kind::MampRun => Experiment::MampRun {
            rho_x: rd.float("rates.rho_x", None, rate),
            rho_y: rd.float("rates.rho_y", None, rate),
            n: rd.int("run.n", Some(5000), 1) as usize,
            seeds: rd.int("run.seeds", Some(10), 1) as usize,
            max_iter: rd.int("run.max_iter", Some(100), 1) as usize,
            stop_tol: rd.float("run.stop_tol", Some(1e-8), non_negative),
            empirical_tau: rd.string("run.schedule", "oracle", &["oracle", "empirical"]) == "empirical",
        },
        Kind::CoupledRun => Experiment::CoupledRun {
            coupling: coupling(&mut rd),
            delta_x: rd.float("coupling.delta_x", None, positive),
            delta_y: rd.float("coupling.delta_y", None, positive),
            n_block: rd.int("coupling.n_block", Some(0), 0) as usize,
            runs: rd.int("coupling.runs", Some(5), 1) as usize,
            max_iter: rd.int("coupling.max_iter", Some(100), 1) as usize,
            empirical_phi: rd.string("coupling.schedule", "empirical", &["oracle", "empirical"]) == "empirical",
        },
        Kind::PhaseBoundary => Experiment::PhaseBoundary {
            coupling: coupling(&mut rd),
            delta_x: rd.float_list("boundary.delta_x", Some(vec![0.5, 0.6, 0.7, 0.8]), positive),
            lo: rd.float("boundary.lo", Some(0.05), positive),
            hi: rd.float("boundary.hi", Some(1.0), positive),
            tol: rd.float("boundary.tol", Some(0.005), positive),
        },
        Kind::FreshSeCheck => Experiment::FreshSeCheck {
            rho_x: rd.float("rates.rho_x", None, rate),
            rho_y: rd.float("rates.rho_y", None, rate),
            n: rd.int("fresh.n", Some(1000), 1) as usize,
            iterations: rd.int("fresh.iterations", Some(10), 1) as usize,
            seeds: rd.int("fresh.seeds", Some(10), 1) as usize,
        },
    });

    for key in rd.raw.keys().cloned().collect::<Vec<_>>() {
        if !rd.used.contains(&key) && kind.is_some() {
            let msg = format!("unknown field for kind '{}'", kind.map_or("", Kind::name));
            rd.diag(&key, msg);
        }
    }

    // cross-field checks, only once the fields themselves are sane
    let mut source = None;
    if !mixing.is_empty() && !alphas.is_empty() && !rd.diags.iter().any(|d| d.field.starts_with("source.")) {
        if mixing.iter().any(|r| r.len() != alphas.len()) {
            rd.diag(
                "source.mixing",
                format!("every row needs {} entries, one per alpha", alphas.len()),
            );
        } else if mixing.len() != 2 {
            rd.diag("source.mixing", format!("needs 2 rows (terminals), found {}", mixing.len()));
        } else {
            match SourceSpec::from_rows(&mixing, &alphas) {
                Ok(s) => source = Some(s),
                Err(e) => rd.diag("source.mixing", e.to_string()),
            }
        }
    }
    match &experiment {
        Some(Experiment::PhaseBoundary { lo, hi, .. }) if lo >= hi => {
            rd.diag("boundary.lo", format!("{lo} must be below boundary.hi = {hi}"));
        }
        Some(Experiment::CoupledRun { coupling: c, .. } | Experiment::PhaseBoundary { coupling: c, .. }) => {
            if let Err(e) = mamp::coupling::build_weight_matrix(c.l_c, c.w, c.seed_blocks, c.seed_boost) {
                rd.diag("coupling", e.to_string());
            }
        }
        _ => {}
    }

    match (kind, source, experiment) {
        (Some(kind), Some(source), Some(experiment)) if rd.diags.is_empty() => Ok(ExperimentConfig {
            kind,
            seed,
            source,
            mc_samples,
            mc_seed,
            sigma2_x,
            sigma2_y,
            experiment,
            echo: rd.echo,
        }),
        _ => {
            if rd.diags.is_empty() {
                rd.diag("<file>", "configuration is incomplete");
            }
            Err(rd.diags)
        }
    }
}
