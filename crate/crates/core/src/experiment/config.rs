//! TOML experiment configs.
//!
//! ```toml
//! [bsde]
//! benchmark = "heat-quadratic"
//!
//! [run]
//! paths = 100000
//! steps = 50
//! seed = 7
//! checks = ["z", "orthogonality"]
//! ```
//!
//! A config names exactly one model: either a benchmark (which brings its
//! model, terminal condition and oracle) or one of `[model.pdmp]` and
//! `[model.jump_diffusion]` together with `bsde.terminal`. Parsing collects
//! every violation before failing.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;
use toml::{Table, Value};

use crate::bsde::{BENCHMARK_IDS, DEFAULT_DEGREE};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config is not valid TOML: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config:\n  - {}", .0.join("\n  - "))]
    Invalid(Vec<String>),
}

impl ConfigError {
    pub fn violations(&self) -> Vec<String> {
        match self {
            ConfigError::Syntax(e) => vec![e.to_string()],
            ConfigError::Invalid(v) => v.clone(),
        }
    }
}

/// One verification step of the runner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Check {
    /// Pathwise measure-transfer identity.
    Transfer,
    /// `E[(W * (mu - nu))_T^2] = E[C(W)_T]` for `W(s, x, e) = e`.
    Bracket,
    /// `J = K` on every path.
    Classification,
    /// `Y` against the oracle.
    Y,
    /// `Z` against `sigma d_x v`.
    Z,
    /// `U` against the jump increment of `v`, split over `nu^c` and `nu^d`.
    U,
    /// Mean-zero test of `H * (mu - nu)` with the solver's `U`.
    Martingale,
    /// Pathwise null test with `U` taken from the oracle.
    Pathwise,
    /// Covariation of the chain-rule remainder with the Brownian path.
    Orthogonality,
    /// Drift of the BSDE martingale residual.
    Residual,
}

pub const ALL_CHECKS: [Check; 10] = [
    Check::Transfer,
    Check::Bracket,
    Check::Classification,
    Check::Y,
    Check::Z,
    Check::U,
    Check::Martingale,
    Check::Pathwise,
    Check::Orthogonality,
    Check::Residual,
];

impl Check {
    pub fn name(self) -> &'static str {
        match self {
            Check::Transfer => "transfer",
            Check::Bracket => "bracket",
            Check::Classification => "classification",
            Check::Y => "y",
            Check::Z => "z",
            Check::U => "u",
            Check::Martingale => "martingale",
            Check::Pathwise => "pathwise",
            Check::Orthogonality => "orthogonality",
            Check::Residual => "residual",
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Check {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_CHECKS
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = ALL_CHECKS.iter().map(|c| c.name()).collect();
                format!("unknown check `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// `h(x) = h[0] + h[1] x`, constant rate, uniform landing states.
#[derive(Debug, Clone, PartialEq)]
pub struct PdmpSpec {
    pub h: [f64; 2],
    pub rate: f64,
    pub landing: Vec<f64>,
    pub x0: f64,
}

/// `dX = drift dt + sigma dW + int e (mu - nu)(dt, de)` with a homogeneous
/// Poisson driving measure and uniformly chosen jump sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpDiffusionSpec {
    pub drift: f64,
    pub sigma: f64,
    pub rate: f64,
    pub marks: Vec<f64>,
    pub x0: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    Benchmark(String),
    Pdmp(PdmpSpec),
    JumpDiffusion(JumpDiffusionSpec),
}

/// Named terminal conditions for explicit models.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Terminal {
    Identity,
    Square,
    Cube,
}

impl Terminal {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Terminal::Identity),
            "square" => Some(Terminal::Square),
            "cube" => Some(Terminal::Cube),
            _ => None,
        }
    }

    pub fn eval(self, x: f64) -> f64 {
        match self {
            Terminal::Identity => x,
            Terminal::Square => x * x,
            Terminal::Cube => x * x * x,
        }
    }
}

/// `f = y * a_y + z * a_z + u * a_u + c`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinearDriver {
    pub y: f64,
    pub z: f64,
    pub u: f64,
    pub c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SolverKind {
    /// `pdmp` for PDMP models, `lsmc` otherwise.
    #[default]
    Auto,
    Lsmc,
    Pdmp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative `L^2` bound for the regression-based identities.
    pub relative: f64,
    /// Standard errors allowed in the mean-zero tests.
    pub se_multiplier: f64,
    /// Standard errors allowed for the BSDE residual drift.
    pub residual_se: f64,
    /// Bound for identities that hold path by path.
    pub pathwise: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            relative: 0.05,
            se_multiplier: crate::stats::Z_999,
            residual_se: 3.0,
            pathwise: crate::identify::PATHWISE_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub degree: usize,
    /// `None` takes the benchmark's horizon.
    pub horizon: Option<f64>,
    pub solver: SolverKind,
    /// `None` runs every check that applies to the model.
    pub checks: Option<Vec<Check>>,
    pub tolerances: Tolerances,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Paths whose measures and atom tables are written out.
    pub dump_paths: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub model: ModelSpec,
    /// Only for explicit models; benchmarks carry their own.
    pub terminal: Option<Terminal>,
    pub driver: LinearDriver,
    /// Multiplies `g`, `f` and the oracle.
    pub scale: f64,
    pub run: RunConfig,
    pub output: OutputConfig,
}

/// Walks a TOML table, recording every violation.
struct Reader {
    errors: Vec<String>,
}

impl Reader {
    fn unknown_keys(&mut self, table: &Table, prefix: &str, known: &[&str]) {
        for key in table.keys() {
            if !known.contains(&key.as_str()) {
                self.errors.push(format!("unknown key `{}`", join(prefix, key)));
            }
        }
    }

    fn table<'a>(&mut self, table: &'a Table, prefix: &str, key: &str) -> Option<&'a Table> {
        match table.get(key) {
            None => None,
            Some(Value::Table(t)) => Some(t),
            Some(_) => {
                self.errors
                    .push(format!("`{}` must be a table", join(prefix, key)));
                None
            }
        }
    }

    fn float(&mut self, table: &Table, prefix: &str, key: &str) -> Option<f64> {
        match table.get(key) {
            None => None,
            Some(Value::Float(x)) if x.is_finite() => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(_) => {
                self.errors
                    .push(format!("`{}` must be a finite number", join(prefix, key)));
                None
            }
        }
    }

    fn required_float(&mut self, table: &Table, prefix: &str, key: &str) -> f64 {
        if !table.contains_key(key) {
            self.errors.push(format!("missing `{}`", join(prefix, key)));
        }
        self.float(table, prefix, key).unwrap_or(f64::NAN)
    }

    fn integer(&mut self, table: &Table, prefix: &str, key: &str) -> Option<i64> {
        match table.get(key) {
            None => None,
            Some(Value::Integer(i)) => Some(*i),
            Some(_) => {
                self.errors
                    .push(format!("`{}` must be an integer", join(prefix, key)));
                None
            }
        }
    }

    fn string<'a>(&mut self, table: &'a Table, prefix: &str, key: &str) -> Option<&'a str> {
        match table.get(key) {
            None => None,
            Some(Value::String(s)) => Some(s),
            Some(_) => {
                self.errors
                    .push(format!("`{}` must be a string", join(prefix, key)));
                None
            }
        }
    }

    fn floats(&mut self, table: &Table, prefix: &str, key: &str) -> Vec<f64> {
        let name = join(prefix, key);
        match table.get(key) {
            None => {
                self.errors.push(format!("missing `{name}`"));
                Vec::new()
            }
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for v in items {
                    match v {
                        Value::Float(x) if x.is_finite() => out.push(*x),
                        Value::Integer(i) => out.push(*i as f64),
                        _ => {
                            self.errors
                                .push(format!("`{name}` must hold finite numbers"));
                            return Vec::new();
                        }
                    }
                }
                if out.is_empty() {
                    self.errors.push(format!("`{name}` must not be empty"));
                }
                out
            }
            Some(_) => {
                self.errors.push(format!("`{name}` must be an array"));
                Vec::new()
            }
        }
    }

    fn violation(&mut self, msg: impl Into<String>) {
        self.errors.push(msg.into());
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

/// Parses and validates a config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let root: Table = text.parse()?;
    let mut r = Reader { errors: Vec::new() };
    r.unknown_keys(&root, "", &["name", "model", "bsde", "run", "output"]);

    let empty = Table::new();
    let bsde = r.table(&root, "", "bsde").unwrap_or(&empty);
    r.unknown_keys(bsde, "bsde", &["benchmark", "terminal", "driver", "scale"]);
    let benchmark = r.string(bsde, "bsde", "benchmark").map(str::to_string);
    if let Some(id) = &benchmark {
        if !BENCHMARK_IDS.contains(&id.as_str()) {
            r.violation(format!(
                "`bsde.benchmark`: unknown benchmark `{id}` (known: {})",
                BENCHMARK_IDS.join(", ")
            ));
        }
    }

    let model_table = r.table(&root, "", "model");
    let mut models: Vec<ModelSpec> = Vec::new();
    if let Some(m) = model_table {
        r.unknown_keys(m, "model", &["pdmp", "jump_diffusion"]);
        if let Some(t) = r.table(m, "model", "pdmp") {
            models.push(ModelSpec::Pdmp(parse_pdmp(&mut r, t)));
        }
        if let Some(t) = r.table(m, "model", "jump_diffusion") {
            models.push(ModelSpec::JumpDiffusion(parse_jump_diffusion(&mut r, t)));
        }
    }
    if let Some(id) = &benchmark {
        models.insert(0, ModelSpec::Benchmark(id.clone()));
    }
    if models.len() != 1 {
        r.violation(format!(
            "exactly one model is required (`bsde.benchmark`, `[model.pdmp]` or `[model.jump_diffusion]`); found {}",
            models.len()
        ));
    }

    let terminal = match r.string(bsde, "bsde", "terminal") {
        Some(name) => {
            let t = Terminal::parse(name);
            if t.is_none() {
                r.violation(format!(
                    "`bsde.terminal`: unknown terminal `{name}` (known: identity, square, cube)"
                ));
            }
            if benchmark.is_some() {
                r.violation("`bsde.terminal` cannot be combined with `bsde.benchmark`");
            }
            t
        }
        None => {
            if benchmark.is_none() {
                r.violation("missing `bsde.terminal` (required without `bsde.benchmark`)");
            }
            None
        }
    };
    let mut driver = LinearDriver::default();
    if let Some(d) = r.table(bsde, "bsde", "driver") {
        r.unknown_keys(d, "bsde.driver", &["y", "z", "u", "c"]);
        if benchmark.is_some() {
            r.violation("`bsde.driver` cannot be combined with `bsde.benchmark`");
        }
        driver = LinearDriver {
            y: r.float(d, "bsde.driver", "y").unwrap_or(0.0),
            z: r.float(d, "bsde.driver", "z").unwrap_or(0.0),
            u: r.float(d, "bsde.driver", "u").unwrap_or(0.0),
            c: r.float(d, "bsde.driver", "c").unwrap_or(0.0),
        };
    }
    let scale = r.float(bsde, "bsde", "scale").unwrap_or(1.0);
    if scale == 0.0 {
        r.violation("`bsde.scale` must be nonzero");
    }

    let run = match r.table(&root, "", "run") {
        Some(t) => parse_run(&mut r, t),
        None => {
            r.violation("missing `[run]` table");
            None
        }
    };
    if let (Some(run), Some(ModelSpec::Pdmp(_) | ModelSpec::JumpDiffusion(_))) =
        (&run, models.first())
    {
        if run.horizon.is_none() {
            r.violation("missing `run.horizon` (required without `bsde.benchmark`)");
        }
    }

    let mut output = OutputConfig {
        dir: PathBuf::from("out"),
        dump_paths: 3,
    };
    if let Some(o) = r.table(&root, "", "output") {
        r.unknown_keys(o, "output", &["dir", "dump_paths"]);
        if let Some(d) = r.string(o, "output", "dir") {
            output.dir = PathBuf::from(d);
        }
        if let Some(n) = r.integer(o, "output", "dump_paths") {
            match usize::try_from(n) {
                Ok(n) => output.dump_paths = n,
                Err(_) => r.violation("`output.dump_paths` must be >= 0"),
            }
        }
    }

    let name = match root.get("name") {
        None => benchmark.clone().unwrap_or_else(|| "custom".to_string()),
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            r.violation("`name` must be a string");
            String::new()
        }
    };

    if !r.errors.is_empty() {
        return Err(ConfigError::Invalid(r.errors));
    }
    Ok(ExperimentConfig {
        name,
        model: models.remove(0),
        terminal,
        driver,
        scale,
        run: run.expect("run table validated"),
        output,
    })
}

fn parse_pdmp(r: &mut Reader, t: &Table) -> PdmpSpec {
    let p = "model.pdmp";
    r.unknown_keys(t, p, &["h", "rate", "landing", "x0"]);
    let h = r.floats(t, p, "h");
    if !h.is_empty() && h.len() != 2 {
        r.violation("`model.pdmp.h` must hold two coefficients [a, b] of h(x) = a + b x");
    }
    let rate = r.required_float(t, p, "rate");
    if rate < 0.0 {
        r.violation("`model.pdmp.rate` must be >= 0");
    }
    let landing = r.floats(t, p, "landing");
    if landing.iter().any(|s| !(0.0..=1.0).contains(s)) {
        r.violation("`model.pdmp.landing` states must lie in [0, 1]");
    }
    let x0 = r.required_float(t, p, "x0");
    if !(0.0..=1.0).contains(&x0) {
        r.violation("`model.pdmp.x0` must lie in [0, 1]");
    }
    PdmpSpec {
        h: [
            h.first().copied().unwrap_or(0.0),
            h.get(1).copied().unwrap_or(0.0),
        ],
        rate,
        landing,
        x0,
    }
}

fn parse_jump_diffusion(r: &mut Reader, t: &Table) -> JumpDiffusionSpec {
    let p = "model.jump_diffusion";
    r.unknown_keys(t, p, &["drift", "sigma", "rate", "marks", "x0"]);
    let rate = r.float(t, p, "rate").unwrap_or(0.0);
    if rate < 0.0 {
        r.violation("`model.jump_diffusion.rate` must be >= 0");
    }
    let marks = if t.contains_key("marks") {
        r.floats(t, p, "marks")
    } else {
        if rate > 0.0 {
            r.violation("missing `model.jump_diffusion.marks` (required when rate > 0)");
        }
        vec![0.0]
    };
    JumpDiffusionSpec {
        drift: r.float(t, p, "drift").unwrap_or(0.0),
        sigma: r.float(t, p, "sigma").unwrap_or(0.0),
        rate,
        marks,
        x0: r.float(t, p, "x0").unwrap_or(0.0),
    }
}

fn parse_run(r: &mut Reader, t: &Table) -> Option<RunConfig> {
    let p = "run";
    r.unknown_keys(
        t,
        p,
        &["paths", "steps", "seed", "degree", "horizon", "solver", "checks", "tolerances"],
    );
    let count = |r: &mut Reader, key: &str, min: i64| -> usize {
        match r.integer(t, p, key) {
            None => {
                r.violation(format!("missing `run.{key}`"));
                0
            }
            Some(n) if n < min => {
                r.violation(format!("`run.{key}` must be >= {min} (got {n})"));
                0
            }
            Some(n) => n as usize,
        }
    };
    let paths = count(r, "paths", 2);
    let steps = count(r, "steps", 2);
    let seed = match r.integer(t, p, "seed") {
        None => {
            r.violation("missing `run.seed` (runs are never seeded implicitly)");
            0
        }
        Some(s) if s < 0 => {
            r.violation("`run.seed` must be >= 0");
            0
        }
        Some(s) => s as u64,
    };
    let degree = match r.integer(t, p, "degree") {
        None => DEFAULT_DEGREE,
        Some(d) if d < 0 => {
            r.violation("`run.degree` must be >= 0");
            DEFAULT_DEGREE
        }
        Some(d) => d as usize,
    };
    let horizon = r.float(t, p, "horizon");
    if horizon.is_some_and(|h| h <= 0.0) {
        r.violation("`run.horizon` must be positive");
    }
    let solver = match r.string(t, p, "solver") {
        None | Some("auto") => SolverKind::Auto,
        Some("lsmc") => SolverKind::Lsmc,
        Some("pdmp") => SolverKind::Pdmp,
        Some(other) => {
            r.violation(format!(
                "`run.solver`: unknown solver `{other}` (expected auto, lsmc or pdmp)"
            ));
            SolverKind::Auto
        }
    };
    let checks = match t.get("checks") {
        None => None,
        Some(Value::Array(items)) => {
            let mut out = Vec::new();
            for v in items {
                match v.as_str().map(str::parse::<Check>) {
                    Some(Ok(c)) => out.push(c),
                    Some(Err(e)) => r.violation(format!("`run.checks`: {e}")),
                    None => r.violation("`run.checks` must hold strings"),
                }
            }
            out.sort();
            out.dedup();
            Some(out)
        }
        Some(_) => {
            r.violation("`run.checks` must be an array of strings");
            None
        }
    };
    let mut tolerances = Tolerances::default();
    if let Some(tt) = r.table(t, p, "tolerances") {
        let q = "run.tolerances";
        r.unknown_keys(tt, q, &["relative", "se_multiplier", "residual_se", "pathwise"]);
        let positive = |r: &mut Reader, key: &str, slot: &mut f64| {
            if let Some(v) = r.float(tt, q, key) {
                if v > 0.0 {
                    *slot = v;
                } else {
                    r.violation(format!("`{q}.{key}` must be positive"));
                }
            }
        };
        positive(r, "relative", &mut tolerances.relative);
        positive(r, "se_multiplier", &mut tolerances.se_multiplier);
        positive(r, "residual_se", &mut tolerances.residual_se);
        positive(r, "pathwise", &mut tolerances.pathwise);
    }
    Some(RunConfig {
        paths,
        steps,
        seed,
        degree,
        horizon,
        solver,
        checks,
        tolerances,
    })
}
