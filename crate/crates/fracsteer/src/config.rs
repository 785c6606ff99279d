//! Run configuration: `key = value` lines grouped under `[section]` headers.
//!
//! ```text
//! [scenario]
//! name = heat
//! q = 0.75
//! dt = 1/256
//! partition = 0, 1, 2, 3, 4, 5
//!
//! [experiment]
//! lambdas = 1e-1, 1e-2, 1e-3
//! ```
//!
//! Everything except `[scenario] name` has a default. Numbers may be written
//! as fractions `a/b`; lists are comma separated; `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use fracsteer_core::scenario::HeatScenario;
use fracsteer_core::solver::{ProductRule, TimePartition};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub scenario: String,
    pub heat: HeatScenario,
    pub seed: u64,
    pub replicates: usize,
    /// Strictly decreasing regularization values for the sweep.
    pub lambdas: Vec<f64>,
    /// Steer only the terminal interval.
    pub final_only: bool,
    /// Ball radius used by the ledger.
    pub radius: f64,
    /// Monte Carlo paths for the noise checks.
    pub fbm_paths: usize,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: "heat".into(),
            heat: HeatScenario::default(),
            seed: 0,
            replicates: 100,
            lambdas: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
            final_only: false,
            radius: 1.0,
            fbm_paths: 10_000,
            output: PathBuf::from("out"),
        }
    }
}

const SCENARIOS: &[&str] = &["heat"];

/// Every accepted `(section, key)`.
const KEYS: &[(&str, &[&str])] = &[
    ("scenario", &["name", "modes", "q", "hurst", "dt", "partition", "noise"]),
    (
        "coefficients",
        &[
            "drift_scale",
            "drift_rate",
            "diffusion_scale",
            "diffusion_rate",
            "impulse_scale",
            "impulse_rate",
            "sigma",
            "wiener_decay",
            "fbm_decay",
            "weight_rate",
            "tau_max",
            "history_amplitude",
        ],
    ),
    (
        "experiment",
        &["seed", "replicates", "lambdas", "final_only", "radius", "fbm_paths", "output"],
    ),
    (
        "tolerances",
        &["picard_tol", "picard_max_iter", "impulse_tol", "impulse_max_iter", "product_rule"],
    ),
];

struct Entry {
    value: String,
    line: usize,
}

struct Table {
    entries: BTreeMap<(String, String), Entry>,
    headers: BTreeMap<String, usize>,
}

impl Table {
    fn get(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries.get(&(section.to_string(), key.to_string()))
    }

    fn line_of(&self, section: &str, key: &str) -> usize {
        self.get(section, key)
            .map(|e| e.line)
            .or_else(|| self.headers.get(section).copied())
            .unwrap_or(1)
    }

    fn read<T>(
        &self,
        section: &str,
        key: &str,
        kind: &str,
        parse: impl Fn(&str) -> Option<T>,
        slot: &mut T,
    ) -> Result<(), ConfigError> {
        if let Some(e) = self.get(section, key) {
            *slot = parse(&e.value)
                .ok_or_else(|| err(e.line, format!("`{key}` expects {kind}, got `{}`", e.value)))?;
        }
        Ok(())
    }

    fn float(&self, section: &str, key: &str, slot: &mut f64) -> Result<(), ConfigError> {
        self.read(section, key, "a number", parse_number, slot)
    }

    fn uint(&self, section: &str, key: &str, slot: &mut usize) -> Result<(), ConfigError> {
        self.read(section, key, "a non-negative integer", |s| s.parse().ok(), slot)
    }

    fn boolean(&self, section: &str, key: &str, slot: &mut bool) -> Result<(), ConfigError> {
        self.read(section, key, "true or false", |s| s.parse().ok(), slot)
    }

    fn list(&self, section: &str, key: &str, slot: &mut Vec<f64>) -> Result<(), ConfigError> {
        self.read(section, key, "a comma-separated list of numbers", parse_list, slot)
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let v = match s.split_once('/') {
        Some((a, b)) => a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?,
        None => s.parse().ok()?,
    };
    v.is_finite().then_some(v)
}

fn parse_list(s: &str) -> Option<Vec<f64>> {
    s.split(',').map(|p| parse_number(p.trim())).collect()
}

fn unquote(s: &str) -> &str {
    s.strip_prefix('"').and_then(|s| s.strip_suffix('"')).unwrap_or(s)
}

fn tokenize(text: &str) -> Result<Table, ConfigError> {
    let mut entries: BTreeMap<(String, String), Entry> = BTreeMap::new();
    let mut headers = BTreeMap::new();
    let mut section: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(line, "unterminated section header"))?
                .trim();
            if !KEYS.iter().any(|(s, _)| *s == name) {
                return Err(err(line, format!("unknown section `[{name}]`")));
            }
            if let Some(prev) = headers.insert(name.to_string(), line) {
                return Err(err(line, format!("section `[{name}]` repeated (lines {prev} and {line})")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| err(line, format!("expected `key = value`, got `{body}`")))?;
        let (key, value) = (key.trim(), unquote(value.trim()));
        let sec = section
            .as_deref()
            .ok_or_else(|| err(line, format!("key `{key}` appears before any section header")))?;
        let known = KEYS.iter().find(|(s, _)| *s == sec).map(|(_, k)| *k).unwrap_or(&[]);
        if !known.contains(&key) {
            return Err(err(line, format!("unknown key `{key}` in section [{sec}]")));
        }
        let slot = (sec.to_string(), key.to_string());
        if let Some(prev) = entries.get(&slot) {
            return Err(err(
                line,
                format!("duplicate key `{key}` in section [{sec}] (lines {} and {line})", prev.line),
            ));
        }
        entries.insert(
            slot,
            Entry {
                value: value.to_string(),
                line,
            },
        );
    }
    Ok(Table { entries, headers })
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let t = tokenize(text)?;
    let mut c = RunConfig::default();

    let name = t
        .get("scenario", "name")
        .ok_or_else(|| err(t.line_of("scenario", "name"), "missing required key `name` in section [scenario]"))?;
    if !SCENARIOS.contains(&name.value.as_str()) {
        return Err(err(
            name.line,
            format!("unknown scenario `{}` (available: {})", name.value, SCENARIOS.join(", ")),
        ));
    }
    c.scenario = name.value.clone();

    let h = &mut c.heat;
    t.uint("scenario", "modes", &mut h.modes)?;
    t.float("scenario", "q", &mut h.q)?;
    t.float("scenario", "hurst", &mut h.hurst)?;
    t.float("scenario", "dt", &mut h.dt)?;
    t.list("scenario", "partition", &mut h.partition)?;
    t.boolean("scenario", "noise", &mut h.noise)?;
    for (key, slot) in [
        ("drift_scale", &mut h.drift_scale),
        ("drift_rate", &mut h.drift_rate),
        ("diffusion_scale", &mut h.diffusion_scale),
        ("diffusion_rate", &mut h.diffusion_rate),
        ("impulse_scale", &mut h.impulse_scale),
        ("impulse_rate", &mut h.impulse_rate),
        ("sigma", &mut h.sigma),
        ("wiener_decay", &mut h.wiener_decay),
        ("fbm_decay", &mut h.fbm_decay),
        ("weight_rate", &mut h.weight_rate),
        ("tau_max", &mut h.tau_max),
        ("history_amplitude", &mut h.history_amplitude),
    ] {
        t.float("coefficients", key, slot)?;
    }
    t.float("tolerances", "picard_tol", &mut h.options.picard_tol)?;
    t.uint("tolerances", "picard_max_iter", &mut h.options.picard_max_iter)?;
    t.float("tolerances", "impulse_tol", &mut h.options.impulse_tol)?;
    t.uint("tolerances", "impulse_max_iter", &mut h.options.impulse_max_iter)?;
    t.read(
        "tolerances",
        "product_rule",
        "`left` or `trapezoidal`",
        |s| match s {
            "left" => Some(ProductRule::LeftRectangle),
            "trapezoidal" => Some(ProductRule::Trapezoidal),
            _ => None,
        },
        &mut h.options.rule,
    )?;

    t.read("experiment", "seed", "a 64-bit unsigned integer", |s| s.parse().ok(), &mut c.seed)?;
    t.uint("experiment", "replicates", &mut c.replicates)?;
    t.list("experiment", "lambdas", &mut c.lambdas)?;
    t.boolean("experiment", "final_only", &mut c.final_only)?;
    t.float("experiment", "radius", &mut c.radius)?;
    t.uint("experiment", "fbm_paths", &mut c.fbm_paths)?;
    t.read("experiment", "output", "a path", |s| (!s.is_empty()).then(|| PathBuf::from(s)), &mut c.output)?;

    validate(&c, &t)?;
    Ok(c)
}

fn validate(c: &RunConfig, t: &Table) -> Result<(), ConfigError> {
    let h = &c.heat;
    let open_half_one = |v: f64| v > 0.5 && v < 1.0;
    let checks: [(bool, &str, &str, &str); 17] = [
        (open_half_one(h.q), "scenario", "q", "q must lie in (1/2,1)"),
        (open_half_one(h.hurst), "scenario", "hurst", "hurst must lie in (1/2,1)"),
        (h.modes >= 1, "scenario", "modes", "modes must be at least 1"),
        (h.dt > 0.0, "scenario", "dt", "dt must be positive"),
        (h.drift_scale >= 0.0, "coefficients", "drift_scale", "drift_scale must be non-negative"),
        (h.drift_rate > 0.0, "coefficients", "drift_rate", "drift_rate must be positive"),
        (h.diffusion_scale >= 0.0, "coefficients", "diffusion_scale", "diffusion_scale must be non-negative"),
        (h.diffusion_rate > 0.0, "coefficients", "diffusion_rate", "diffusion_rate must be positive"),
        (h.impulse_scale >= 0.0, "coefficients", "impulse_scale", "impulse_scale must be non-negative"),
        (h.impulse_rate > 0.0, "coefficients", "impulse_rate", "impulse_rate must be positive"),
        (h.sigma >= 0.0, "coefficients", "sigma", "sigma must be non-negative"),
        (h.weight_rate > 0.0, "coefficients", "weight_rate", "weight_rate must be positive"),
        (h.tau_max > 0.0, "coefficients", "tau_max", "tau_max must be positive"),
        (c.replicates >= 1, "experiment", "replicates", "replicates must be at least 1"),
        (c.radius > 0.0, "experiment", "radius", "radius must be positive"),
        (c.fbm_paths >= 2, "experiment", "fbm_paths", "fbm_paths must be at least 2"),
        (h.options.picard_tol > 0.0, "tolerances", "picard_tol", "picard_tol must be positive"),
    ];
    for (ok, section, key, msg) in checks {
        if !ok {
            return Err(err(t.line_of(section, key), msg));
        }
    }
    if c.lambdas.is_empty()
        || c.lambdas.iter().any(|&l| l <= 0.0)
        || c.lambdas.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(err(
            t.line_of("experiment", "lambdas"),
            "lambdas must be positive and strictly decreasing",
        ));
    }
    if let Err(e) = TimePartition::new(h.partition.clone(), h.dt) {
        return Err(err(t.line_of("scenario", "partition"), format!("invalid partition: {e}")));
    }
    if let Err(e) = h.problem() {
        return Err(err(t.line_of("scenario", "name"), format!("invalid scenario: {e}")));
    }
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(", ")
}

/// Canonical text form; `parse_config` of the result equals `c`.
pub fn serialize_config(c: &RunConfig) -> String {
    let h = &c.heat;
    let o = &h.options;
    let rule = match o.rule {
        ProductRule::LeftRectangle => "left",
        ProductRule::Trapezoidal => "trapezoidal",
    };
    let sections: [(&str, Vec<(&str, String)>); 4] = [
        (
            "scenario",
            vec![
                ("name", c.scenario.clone()),
                ("modes", h.modes.to_string()),
                ("q", h.q.to_string()),
                ("hurst", h.hurst.to_string()),
                ("dt", h.dt.to_string()),
                ("partition", join(&h.partition)),
                ("noise", h.noise.to_string()),
            ],
        ),
        (
            "coefficients",
            vec![
                ("drift_scale", h.drift_scale.to_string()),
                ("drift_rate", h.drift_rate.to_string()),
                ("diffusion_scale", h.diffusion_scale.to_string()),
                ("diffusion_rate", h.diffusion_rate.to_string()),
                ("impulse_scale", h.impulse_scale.to_string()),
                ("impulse_rate", h.impulse_rate.to_string()),
                ("sigma", h.sigma.to_string()),
                ("wiener_decay", h.wiener_decay.to_string()),
                ("fbm_decay", h.fbm_decay.to_string()),
                ("weight_rate", h.weight_rate.to_string()),
                ("tau_max", h.tau_max.to_string()),
                ("history_amplitude", h.history_amplitude.to_string()),
            ],
        ),
        (
            "experiment",
            vec![
                ("seed", c.seed.to_string()),
                ("replicates", c.replicates.to_string()),
                ("lambdas", join(&c.lambdas)),
                ("final_only", c.final_only.to_string()),
                ("radius", c.radius.to_string()),
                ("fbm_paths", c.fbm_paths.to_string()),
                ("output", c.output.display().to_string()),
            ],
        ),
        (
            "tolerances",
            vec![
                ("picard_tol", o.picard_tol.to_string()),
                ("picard_max_iter", o.picard_max_iter.to_string()),
                ("impulse_tol", o.impulse_tol.to_string()),
                ("impulse_max_iter", o.impulse_max_iter.to_string()),
                ("product_rule", rule.to_string()),
            ],
        ),
    ];
    let mut s = String::new();
    for (i, (name, pairs)) in sections.iter().enumerate() {
        if i > 0 {
            s.push('\n');
        }
        writeln!(s, "[{name}]").unwrap();
        for (k, v) in pairs {
            writeln!(s, "{k} = {v}").unwrap();
        }
    }
    s
}
