//! Experiment config files: a TOML document validated into a fully typed
//! [`ExperimentConfig`], or a list of [`Diagnostic`]s keyed by dotted path.
//!
//! Relative input paths (`initial.followers_file`, `cost.target_file`) are
//! resolved against the directory holding the config.

use std::fmt;
use std::path::{Path, PathBuf};

use leadfollow::control::{ControlSignal, RunningCost, RunningCostFamily};
use leadfollow::dynamics::TimeGrid;
use leadfollow::kernels::{Kernel, KernelFamily};
use leadfollow::limits_harness::{LimitExperimentSpec, StabilitySettings};
use leadfollow::measures::{EmpiricalMeasure, InitialDensitySpec, SamplingScheme};
use leadfollow::sparse_optimizer::OptimizerSettings;
use serde::Serialize;
use toml::{Table, Value};

pub const PARSE_ERROR: &str = "parse_error";
pub const UNKNOWN_KEY: &str = "unknown_key";
pub const MISSING_KEY: &str = "missing_key";
pub const TYPE_ERROR: &str = "type_error";
pub const CONSTRAINT: &str = "constraint_violation";
pub const FILE_NOT_FOUND: &str = "file_not_found";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Diagnostic {
    pub code: &'static str,
    /// Dotted key path, empty for whole-file problems.
    pub key: String,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.key.is_empty() {
            write!(f, "{}: {}", self.code, self.message)
        } else {
            write!(f, "{} at `{}`: {}", self.code, self.key, self.message)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Simulate,
    Optimize,
    Meanfield,
    Gamma,
    Stability,
    Sweep,
}

impl Mode {
    const ALL: [(&'static str, Mode); 6] = [
        ("simulate", Mode::Simulate),
        ("optimize", Mode::Optimize),
        ("meanfield", Mode::Meanfield),
        ("gamma", Mode::Gamma),
        ("stability", Mode::Stability),
        ("sweep", Mode::Sweep),
    ];

    pub fn name(self) -> &'static str {
        Self::ALL.iter().find(|(_, m)| *m == self).map(|(s, _)| *s).unwrap()
    }

    /// Modes driven by the limit-experiment harness.
    pub fn is_limit(self) -> bool {
        matches!(self, Mode::Meanfield | Mode::Gamma | Mode::Stability | Mode::Sweep)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Followers {
    Density {
        spec: InitialDensitySpec,
        n: usize,
        sampling: SamplingScheme,
    },
    /// Explicit atoms from a measure CSV; `path` is kept as written.
    File { path: String, measure: EmpiricalMeasure },
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControlValues {
    Zero,
    Optimize,
    /// Cell-major values, `cells * m * d` entries.
    Given(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSettings {
    pub n_list: Vec<usize>,
    pub n_ref: usize,
    pub gamma_list: Vec<f64>,
    pub eval_every: usize,
    pub delta0: f64,
    pub trials: usize,
    pub stability_n: usize,
    pub positions_only: bool,
    pub lipschitz_samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputSettings {
    pub directory: Option<String>,
    pub formats: Vec<Format>,
    pub snapshot_cadence: usize,
}

impl OutputSettings {
    pub fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub kernel: Kernel,
    /// Declared growth constant, when it overrides the analytic one.
    pub growth_constant: Option<f64>,
    pub dim: usize,
    /// Leader phase points `[y_k, w_k]`.
    pub leaders: Vec<f64>,
    pub followers: Followers,
    pub cells: usize,
    pub radius: f64,
    pub control: ControlValues,
    pub cost: RunningCost,
    pub cost_target_file: Option<String>,
    pub grid: TimeGrid,
    pub optimizer: OptimizerSettings,
    pub experiment: ExperimentSettings,
    pub output: OutputSettings,
}

impl ExperimentConfig {
    pub fn num_leaders(&self) -> usize {
        self.leaders.len() / (2 * self.dim)
    }

    /// The fixed control, or zero when none is given.
    pub fn fixed_control(&self) -> leadfollow::Result<ControlSignal> {
        let m = self.num_leaders();
        match &self.control {
            ControlValues::Given(v) => ControlSignal::new(self.cells, m, self.dim, self.grid.horizon, self.radius, v.clone()),
            _ => ControlSignal::zeros(self.cells, m, self.dim, self.grid.horizon, self.radius),
        }
    }

    /// Harness spec for the limit modes.
    pub fn limit_spec(&self) -> leadfollow::Result<LimitExperimentSpec> {
        let Followers::Density { spec, sampling, .. } = &self.followers else {
            return Err(leadfollow::Error::InvalidInput {
                module: "cli",
                message: "limit experiments need a follower density".into(),
            });
        };
        Ok(LimitExperimentSpec {
            dim: self.dim,
            leaders: self.leaders.clone(),
            followers: spec.clone(),
            sampling: *sampling,
            kernel: self.kernel.clone(),
            cost: self.cost.clone(),
            control: self.fixed_control()?,
            grid: self.grid.clone(),
            optimizer: self.optimizer,
            n_list: self.experiment.n_list.clone(),
            n_ref: self.experiment.n_ref,
            seed: self.seed,
            eval_every: self.experiment.eval_every,
        })
    }

    pub fn stability_settings(&self) -> StabilitySettings {
        StabilitySettings {
            n: self.experiment.stability_n,
            delta0: self.experiment.delta0,
            trials: self.experiment.trials,
            positions_only: self.experiment.positions_only,
            lipschitz_samples: self.experiment.lipschitz_samples,
        }
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn as_f64(v: &Value) -> Option<f64> {
    match v {
        Value::Float(x) => Some(*x),
        Value::Integer(i) => Some(*i as f64),
        _ => None,
    }
}

fn as_uint(v: &Value) -> Option<usize> {
    match v {
        Value::Integer(i) if *i >= 0 => Some(*i as usize),
        _ => None,
    }
}

fn as_f64_vec(v: &Value) -> Option<Vec<f64>> {
    v.as_array()?.iter().map(as_f64).collect()
}

fn as_uint_vec(v: &Value) -> Option<Vec<usize>> {
    v.as_array()?.iter().map(as_uint).collect()
}

/// Collects diagnostics while walking the document.
#[derive(Default)]
struct Walker {
    diags: Vec<Diagnostic>,
}

impl Walker {
    fn push(&mut self, code: &'static str, key: impl Into<String>, message: impl Into<String>) {
        self.diags.push(Diagnostic {
            code,
            key: key.into(),
            message: message.into(),
        });
    }

    fn unknown(&mut self, t: &Table, prefix: &str, allowed: &[&str]) {
        for k in t.keys() {
            if !allowed.contains(&k.as_str()) {
                self.push(UNKNOWN_KEY, join(prefix, k), format!("unknown key (expected one of: {})", allowed.join(", ")));
            }
        }
    }

    /// `Ok(None)` when absent, `Err(())` after reporting a type error.
    fn get<T>(
        &mut self,
        t: &Table,
        prefix: &str,
        key: &str,
        expected: &str,
        conv: impl Fn(&Value) -> Option<T>,
    ) -> Result<Option<T>, ()> {
        match t.get(key) {
            None => Ok(None),
            Some(v) => match conv(v) {
                Some(x) => Ok(Some(x)),
                None => {
                    self.push(TYPE_ERROR, join(prefix, key), format!("expected {expected}"));
                    Err(())
                }
            },
        }
    }

    fn req<T>(&mut self, t: &Table, prefix: &str, key: &str, expected: &str, conv: impl Fn(&Value) -> Option<T>) -> Option<T> {
        match self.get(t, prefix, key, expected, conv) {
            Ok(Some(x)) => Some(x),
            Ok(None) => {
                self.push(MISSING_KEY, join(prefix, key), format!("required key is missing ({expected})"));
                None
            }
            Err(()) => None,
        }
    }

    fn opt<T>(
        &mut self,
        t: &Table,
        prefix: &str,
        key: &str,
        expected: &str,
        conv: impl Fn(&Value) -> Option<T>,
        default: T,
    ) -> Option<T> {
        match self.get(t, prefix, key, expected, conv) {
            Ok(Some(x)) => Some(x),
            Ok(None) => Some(default),
            Err(()) => None,
        }
    }

    fn table<'a>(&mut self, t: &'a Table, prefix: &str, key: &str, required: bool) -> Option<&'a Table> {
        match t.get(key) {
            None => {
                if required {
                    self.push(MISSING_KEY, join(prefix, key), "required table is missing");
                }
                None
            }
            Some(Value::Table(inner)) => Some(inner),
            Some(_) => {
                self.push(TYPE_ERROR, join(prefix, key), "expected a table");
                None
            }
        }
    }

    fn check(&mut self, ok: bool, key: &str, message: &str) {
        if !ok {
            self.push(CONSTRAINT, key, message);
        }
    }
}

/// Reads and validates a config file. Either every check passes or all
/// problems found are returned.
pub fn validate_config(path: &Path) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let text = match std::fs::read_to_string(path) {
        Ok(s) => s,
        Err(e) => {
            let code = if e.kind() == std::io::ErrorKind::NotFound { FILE_NOT_FOUND } else { PARSE_ERROR };
            return Err(vec![Diagnostic {
                code,
                key: String::new(),
                message: format!("cannot read {}: {e}", path.display()),
            }]);
        }
    };
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    validate_str(&text, &base)
}

/// Validates config text; relative paths resolve against `base`.
pub fn validate_str(text: &str, base: &Path) -> Result<ExperimentConfig, Vec<Diagnostic>> {
    let doc: Table = match text.parse() {
        Ok(t) => t,
        Err(e) => {
            return Err(vec![Diagnostic {
                code: PARSE_ERROR,
                key: String::new(),
                message: e.to_string().trim_end().to_string(),
            }])
        }
    };
    let mut w = Walker::default();
    let cfg = walk(&mut w, &doc, base);
    match cfg {
        Some(c) if w.diags.is_empty() => Ok(c),
        _ => {
            if w.diags.is_empty() {
                w.push(CONSTRAINT, "", "config rejected");
            }
            Err(w.diags)
        }
    }
}

const TOP_KEYS: [&str; 10] = [
    "mode",
    "seed",
    "kernel",
    "initial",
    "control",
    "cost",
    "grid",
    "optimizer",
    "experiment",
    "output",
];

fn walk(w: &mut Walker, doc: &Table, base: &Path) -> Option<ExperimentConfig> {
    w.unknown(doc, "", &TOP_KEYS);
    let mode_name = w.req(doc, "", "mode", "a string", |v| v.as_str().map(str::to_string));
    let mode = mode_name.and_then(|s| match Mode::ALL.iter().find(|(n, _)| *n == s) {
        Some((_, m)) => Some(*m),
        None => {
            w.push(CONSTRAINT, "mode", "must be one of simulate, optimize, meanfield, gamma, stability, sweep");
            None
        }
    });
    let seed = w.opt(doc, "", "seed", "a nonnegative integer", |v| as_uint(v).map(|x| x as u64), 0);

    let initial = w.table(doc, "", "initial", true);
    let kernel_t = w.table(doc, "", "kernel", true);
    let control_t = w.table(doc, "", "control", true);
    let cost_t = w.table(doc, "", "cost", true);
    let grid_t = w.table(doc, "", "grid", true);
    let optimizer_t = w.table(doc, "", "optimizer", false);
    let experiment_t = w.table(doc, "", "experiment", false);
    let output_t = w.table(doc, "", "output", false);

    let init = initial.and_then(|t| walk_initial(w, t, base));
    let dim = init.as_ref().map(|i| i.0);
    let kernel = match (kernel_t, dim) {
        (Some(t), Some(d)) => walk_kernel(w, t, d),
        (Some(t), None) => {
            // Still report key problems without a dimension.
            walk_kernel(w, t, 1);
            None
        }
        _ => None,
    };
    let m = init.as_ref().map(|i| i.1.len() / (2 * i.0));
    let control = control_t.and_then(|t| walk_control(w, t, dim.zip(m)));
    let cost = cost_t.and_then(|t| walk_cost(w, t, dim, base));
    let cells = control.as_ref().map(|c| c.0);
    let grid = grid_t.and_then(|t| walk_grid(w, t, cells));
    let optimizer = match optimizer_t {
        Some(t) => walk_optimizer(w, t),
        None => Some(OptimizerSettings::default()),
    };
    let follower_n = init.as_ref().map(|i| match &i.2 {
        Followers::Density { n, .. } => *n,
        Followers::File { measure, .. } => measure.len(),
    });
    let empty = Table::new();
    let experiment = walk_experiment(w, experiment_t.unwrap_or(&empty), mode, follower_n);
    let output = walk_output(w, output_t.unwrap_or(&empty));

    let (mode, seed, (kernel, growth_constant), (dim, leaders, followers)) = (mode?, seed?, kernel?, init?);
    let (cells, radius, values) = control?;
    let (cost, cost_target_file) = cost?;
    let cfg = ExperimentConfig {
        mode,
        seed,
        kernel,
        growth_constant,
        dim,
        leaders,
        followers,
        cells,
        radius,
        control: values,
        cost,
        cost_target_file,
        grid: grid?,
        optimizer: optimizer?,
        experiment: experiment?,
        output: output?,
    };
    cross_checks(w, &cfg);
    Some(cfg)
}

fn walk_kernel(w: &mut Walker, t: &Table, dim: usize) -> Option<(Kernel, Option<f64>)> {
    let p = "kernel";
    let family = w.req(t, p, "family", "a string", |v| v.as_str().map(str::to_string))?;
    let growth = w.get(t, p, "growth_constant", "a number", as_f64).ok()?;
    let built = match family.as_str() {
        "cucker_smale" => {
            w.unknown(t, p, &["family", "growth_constant", "strength", "scale", "exponent", "sign"]);
            let strength = w.opt(t, p, "strength", "a number", as_f64, 1.0);
            let scale = w.opt(t, p, "scale", "a number", as_f64, 1.0);
            let exponent = w.opt(t, p, "exponent", "a number", as_f64, 0.45);
            let sign = w.opt(t, p, "sign", "a number", as_f64, -1.0);
            let (strength, scale, exponent, sign) = (strength?, scale?, exponent?, sign?);
            w.check(strength > 0.0 && strength.is_finite(), "kernel.strength", "must be positive");
            w.check(scale > 0.0 && scale.is_finite(), "kernel.scale", "must be positive");
            w.check(exponent >= 0.0 && exponent.is_finite(), "kernel.exponent", "must be nonnegative");
            w.check(sign == 1.0 || sign == -1.0, "kernel.sign", "must be 1 or -1");
            Kernel::cucker_smale(dim, strength, scale, exponent, sign)
        }
        "repulsion_attraction" => {
            w.unknown(t, p, &["family", "growth_constant", "sigma_r", "sigma_a", "regularizer"]);
            let sr = w.req(t, p, "sigma_r", "a number", as_f64);
            let sa = w.req(t, p, "sigma_a", "a number", as_f64);
            let eps = w.opt(t, p, "regularizer", "a number", as_f64, 1e-3);
            let (sr, sa, eps) = (sr?, sa?, eps?);
            w.check(sr >= 0.0 && sr.is_finite(), "kernel.sigma_r", "must be nonnegative");
            w.check(sa >= 0.0 && sa.is_finite(), "kernel.sigma_a", "must be nonnegative");
            w.check(eps > 0.0 && eps.is_finite(), "kernel.regularizer", "must be positive");
            Kernel::repulsion_attraction(dim, sr, sa, eps)
        }
        "zero" => {
            w.unknown(t, p, &["family", "growth_constant"]);
            Kernel::zero(dim)
        }
        "custom_table" => {
            w.unknown(t, p, &["family", "growth_constant", "radii", "rates"]);
            let radii = w.req(t, p, "radii", "an array of numbers", as_f64_vec);
            let rates = w.req(t, p, "rates", "an array of numbers", as_f64_vec);
            Kernel::table(dim, radii?, rates?)
        }
        _ => {
            w.push(CONSTRAINT, "kernel.family", "must be one of cucker_smale, repulsion_attraction, zero, custom_table");
            return None;
        }
    };
    let kernel = match built.and_then(|k| match growth {
        Some(c) => k.with_growth_constant(c),
        None => Ok(k),
    }) {
        Ok(k) => k,
        Err(e) => {
            w.push(CONSTRAINT, "kernel", e.to_string());
            return None;
        }
    };
    Some((kernel, growth))
}

fn walk_density(w: &mut Walker, t: &Table) -> Option<InitialDensitySpec> {
    let p = "initial.followers";
    let family = w.req(t, p, "family", "a string", |v| v.as_str().map(str::to_string))?;
    let spec = match family.as_str() {
        "uniform-box" => {
            w.unknown(t, p, &["family", "lo", "hi"]);
            let lo = w.req(t, p, "lo", "an array of numbers", as_f64_vec);
            let hi = w.req(t, p, "hi", "an array of numbers", as_f64_vec);
            InitialDensitySpec::UniformBox { lo: lo?, hi: hi? }
        }
        "gaussian-truncated" => {
            w.unknown(t, p, &["family", "mean", "scale", "radius"]);
            let mean = w.req(t, p, "mean", "an array of numbers", as_f64_vec);
            let scale = w.req(t, p, "scale", "a number", as_f64);
            let radius = w.req(t, p, "radius", "a number", as_f64);
            InitialDensitySpec::GaussianTruncated {
                mean: mean?,
                scale: scale?,
                radius: radius?,
            }
        }
        "two-cluster" => {
            w.unknown(t, p, &["family", "centers", "scale", "radius", "first_weight"]);
            let centers = w.req(t, p, "centers", "two arrays of numbers", |v| {
                let a = v.as_array()?;
                if a.len() != 2 {
                    return None;
                }
                Some([as_f64_vec(&a[0])?, as_f64_vec(&a[1])?])
            });
            let scale = w.req(t, p, "scale", "a number", as_f64);
            let radius = w.req(t, p, "radius", "a number", as_f64);
            let first_weight = w.opt(t, p, "first_weight", "a number", as_f64, 0.5);
            InitialDensitySpec::TwoCluster {
                centers: centers?,
                scale: scale?,
                radius: radius?,
                first_weight: first_weight?,
            }
        }
        _ => {
            w.push(CONSTRAINT, "initial.followers.family", "must be one of uniform-box, gaussian-truncated, two-cluster");
            return None;
        }
    };
    if let Err(e) = spec.validate() {
        w.push(CONSTRAINT, p, e.to_string());
        return None;
    }
    Some(spec)
}

fn resolve(base: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn read_measure(w: &mut Walker, base: &Path, path: &str, key: &str) -> Option<EmpiricalMeasure> {
    let full = resolve(base, path);
    let file = match std::fs::File::open(&full) {
        Ok(f) => f,
        Err(e) => {
            w.push(FILE_NOT_FOUND, key, format!("cannot open {}: {e}", full.display()));
            return None;
        }
    };
    match EmpiricalMeasure::read_csv(file) {
        Ok(m) => Some(m),
        Err(e) => {
            w.push(CONSTRAINT, key, e.to_string());
            None
        }
    }
}

fn walk_initial(w: &mut Walker, t: &Table, base: &Path) -> Option<(usize, Vec<f64>, Followers)> {
    let p = "initial";
    w.unknown(t, p, &["dim", "leaders", "followers", "followers_file", "n", "sampling"]);
    let dim = w.req(t, p, "dim", "a positive integer", as_uint)?;
    if dim == 0 {
        w.push(CONSTRAINT, "initial.dim", "must be positive");
        return None;
    }
    let leaders = w.req(t, p, "leaders", "an array of [y, w] pairs of coordinate arrays", |v| {
        let mut flat = Vec::new();
        for l in v.as_array()? {
            let pair = l.as_array()?;
            if pair.len() != 2 {
                return None;
            }
            flat.push((as_f64_vec(&pair[0])?, as_f64_vec(&pair[1])?));
        }
        Some(flat)
    });
    let leaders = leaders.and_then(|pairs| {
        if pairs.is_empty() {
            w.push(CONSTRAINT, "initial.leaders", "at least one leader is required");
            return None;
        }
        if pairs.iter().any(|(y, v)| y.len() != dim || v.len() != dim) {
            w.push(CONSTRAINT, "initial.leaders", format!("every position and velocity needs {dim} coordinates"));
            return None;
        }
        if pairs.iter().any(|(y, v)| y.iter().chain(v).any(|x| !x.is_finite())) {
            w.push(CONSTRAINT, "initial.leaders", "must be finite");
            return None;
        }
        Some(pairs.into_iter().flat_map(|(y, v)| y.into_iter().chain(v)).collect::<Vec<f64>>())
    });

    let density = w.table(t, p, "followers", false);
    let file = w.get(t, p, "followers_file", "a string", |v| v.as_str().map(str::to_string));
    let n = w.get(t, p, "n", "a positive integer", as_uint);
    let sampling = w.opt(
        t,
        p,
        "sampling",
        "\"random\" or \"sobol\"",
        |v| match v.as_str()? {
            "random" => Some(SamplingScheme::Random),
            "sobol" => Some(SamplingScheme::Sobol),
            _ => None,
        },
        SamplingScheme::Random,
    );
    let followers = match (density, file) {
        (Some(_), Ok(Some(_))) => {
            w.push(CONSTRAINT, "initial.followers_file", "give either a followers table or followers_file, not both");
            None
        }
        (Some(dt), Ok(None)) => {
            let spec = walk_density(w, dt);
            let n = match n {
                Ok(Some(0)) => {
                    w.push(CONSTRAINT, "initial.n", "must be positive");
                    None
                }
                Ok(Some(n)) => Some(n),
                Ok(None) => {
                    w.push(MISSING_KEY, "initial.n", "required with a followers table");
                    None
                }
                Err(()) => None,
            };
            let (spec, n, sampling) = (spec?, n?, sampling?);
            if spec.phase_len() != 2 * dim {
                w.push(CONSTRAINT, "initial.followers", format!("density points need {} coordinates", 2 * dim));
                return None;
            }
            if sampling == SamplingScheme::Sobol && !matches!(spec, InitialDensitySpec::UniformBox { .. }) {
                w.push(CONSTRAINT, "initial.sampling", "sobol sampling needs a uniform-box density");
                return None;
            }
            Some(Followers::Density { spec, n, sampling })
        }
        (None, Ok(Some(path))) => {
            if t.contains_key("n") || t.contains_key("sampling") {
                w.push(CONSTRAINT, "initial.n", "n and sampling only apply to a followers table");
            }
            let measure = read_measure(w, base, &path, "initial.followers_file")?;
            if measure.dim() != dim {
                w.push(CONSTRAINT, "initial.followers_file", format!("atoms need {} coordinates", 2 * dim));
                return None;
            }
            if !measure.is_uniform() {
                w.push(CONSTRAINT, "initial.followers_file", "follower atoms must carry equal weights");
                return None;
            }
            Some(Followers::File { path, measure })
        }
        (None, Ok(None)) => {
            w.push(MISSING_KEY, "initial.followers", "give a followers table or followers_file");
            None
        }
        (_, Err(())) => None,
    };
    Some((dim, leaders?, followers?))
}

fn walk_control(w: &mut Walker, t: &Table, shape: Option<(usize, usize)>) -> Option<(usize, f64, ControlValues)> {
    let p = "control";
    w.unknown(t, p, &["cells", "U", "values"]);
    let cells = w.req(t, p, "cells", "a positive integer", as_uint);
    let radius = w.req(t, p, "U", "a number", as_f64);
    let values = w.opt(
        t,
        p,
        "values",
        "\"zero\", \"optimize\" or an array of numbers",
        |v| match v {
            Value::String(s) if s == "zero" => Some(ControlValues::Zero),
            Value::String(s) if s == "optimize" => Some(ControlValues::Optimize),
            _ => as_f64_vec(v).map(ControlValues::Given),
        },
        ControlValues::Zero,
    );
    if cells == Some(0) {
        w.push(CONSTRAINT, "control.cells", "must be positive");
    }
    if let Some(u) = radius {
        w.check(u > 0.0 && u.is_finite(), "control.U", "must be positive");
    }
    let (cells, radius, values) = (cells?, radius?, values?);
    if let (ControlValues::Given(v), Some((d, m))) = (&values, shape) {
        if v.len() != cells * m * d {
            w.push(CONSTRAINT, "control.values", format!("expected cells * leaders * dim = {} entries", cells * m * d));
        } else if v.iter().any(|x| !x.is_finite()) {
            w.push(CONSTRAINT, "control.values", "must be finite");
        } else if radius > 0.0 {
            for (b, block) in v.chunks_exact(d).enumerate() {
                let r = block.iter().map(|x| x * x).sum::<f64>().sqrt();
                if r > radius {
                    w.push(
                        CONSTRAINT,
                        "control.values",
                        format!("cell {} leader {} has norm {r} > U", b / m, b % m),
                    );
                    break;
                }
            }
        }
    }
    if cells == 0 || !(radius > 0.0 && radius.is_finite()) {
        return None;
    }
    Some((cells, radius, values))
}

fn walk_cost(w: &mut Walker, t: &Table, dim: Option<usize>, base: &Path) -> Option<(RunningCost, Option<String>)> {
    let p = "cost";
    let family = w.req(t, p, "family", "a string", |v| v.as_str().map(str::to_string));
    let gamma = w.req(t, p, "gamma", "a number", as_f64);
    if let Some(g) = gamma {
        w.check(g >= 0.0 && g.is_finite(), "cost.gamma", "must be nonnegative");
    }
    let mut file = None;
    let fam = match family?.as_str() {
        "velocity_consensus" => {
            w.unknown(t, p, &["family", "gamma"]);
            RunningCostFamily::VelocityConsensus
        }
        "leader_tracking" => {
            w.unknown(t, p, &["family", "gamma", "target_y", "target_w"]);
            let ty = w.req(t, p, "target_y", "an array of numbers", as_f64_vec);
            let tw = w.req(t, p, "target_w", "an array of numbers", as_f64_vec);
            let (ty, tw) = (ty?, tw?);
            if let Some(d) = dim {
                w.check(ty.len() == d, "cost.target_y", "length must equal initial.dim");
                w.check(tw.len() == d, "cost.target_w", "length must equal initial.dim");
            }
            RunningCostFamily::LeaderTracking { target_y: ty, target_w: tw }
        }
        "measure_target" => {
            w.unknown(t, p, &["family", "gamma", "target_file"]);
            let path = w.req(t, p, "target_file", "a string", |v| v.as_str().map(str::to_string))?;
            let target = read_measure(w, base, &path, "cost.target_file")?;
            if let Some(d) = dim {
                w.check(target.dim() == d, "cost.target_file", "target atoms must match initial.dim");
            }
            file = Some(path);
            RunningCostFamily::MeasureTarget { target }
        }
        _ => {
            w.push(CONSTRAINT, "cost.family", "must be one of velocity_consensus, leader_tracking, measure_target");
            return None;
        }
    };
    match RunningCost::new(fam, gamma?) {
        Ok(c) => Some((c, file)),
        Err(e) => {
            w.push(CONSTRAINT, p, e.to_string());
            None
        }
    }
}

fn walk_grid(w: &mut Walker, t: &Table, cells: Option<usize>) -> Option<TimeGrid> {
    let p = "grid";
    w.unknown(t, p, &["T", "n_steps"]);
    let horizon = w.req(t, p, "T", "a number", as_f64);
    let steps = w.get(t, p, "n_steps", "a positive integer", as_uint).ok()?;
    let horizon = horizon?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        w.push(CONSTRAINT, "grid.T", "must be positive");
        return None;
    }
    if steps == Some(0) {
        w.push(CONSTRAINT, "grid.n_steps", "must be positive");
        return None;
    }
    let cells = cells?;
    let grid = match steps {
        Some(s) => TimeGrid::new(horizon, s, cells),
        None => TimeGrid::with_default_step(horizon, cells),
    };
    grid.map_err(|e| w.push(CONSTRAINT, p, e.to_string())).ok()
}

fn walk_optimizer(w: &mut Walker, t: &Table) -> Option<OptimizerSettings> {
    let p = "optimizer";
    w.unknown(t, p, &["max_iters", "initial_step", "backtrack", "min_step", "tol_j_rel", "tol_u_rel"]);
    let d = OptimizerSettings::default();
    let max_iters = w.opt(t, p, "max_iters", "a nonnegative integer", as_uint, d.max_iters);
    let initial_step = w.opt(t, p, "initial_step", "a number", as_f64, d.initial_step);
    let backtrack = w.opt(t, p, "backtrack", "a number", as_f64, d.backtrack);
    let min_step = w.opt(t, p, "min_step", "a number", as_f64, d.min_step);
    let tol_j_rel = w.opt(t, p, "tol_j_rel", "a number", as_f64, d.tol_j_rel);
    let tol_u_rel = w.opt(t, p, "tol_u_rel", "a number", as_f64, d.tol_u_rel);
    let s = OptimizerSettings {
        max_iters: max_iters?,
        initial_step: initial_step?,
        backtrack: backtrack?,
        min_step: min_step?,
        tol_j_rel: tol_j_rel?,
        tol_u_rel: tol_u_rel?,
    };
    let n = w.diags.len();
    w.check(s.initial_step > 0.0 && s.initial_step.is_finite(), "optimizer.initial_step", "must be positive");
    w.check(s.backtrack > 0.0 && s.backtrack < 1.0, "optimizer.backtrack", "must lie in (0, 1)");
    w.check(s.min_step > 0.0 && s.min_step.is_finite(), "optimizer.min_step", "must be positive");
    w.check(s.tol_j_rel >= 0.0 && s.tol_j_rel.is_finite(), "optimizer.tol_j_rel", "must be nonnegative");
    w.check(s.tol_u_rel >= 0.0 && s.tol_u_rel.is_finite(), "optimizer.tol_u_rel", "must be nonnegative");
    (w.diags.len() == n).then_some(s)
}

const EXPERIMENT_KEYS: [&str; 9] = [
    "n_list",
    "n_ref",
    "gamma_list",
    "eval_every",
    "delta0",
    "trials",
    "stability_n",
    "positions_only",
    "lipschitz_samples",
];

fn walk_experiment(w: &mut Walker, t: &Table, mode: Option<Mode>, follower_n: Option<usize>) -> Option<ExperimentSettings> {
    let p = "experiment";
    w.unknown(t, p, &EXPERIMENT_KEYS);
    let limit = mode.is_some_and(Mode::is_limit);
    let n_list = w.get(t, p, "n_list", "an array of positive integers", as_uint_vec).ok()?;
    let n_ref = w.get(t, p, "n_ref", "a positive integer", as_uint).ok()?;
    let gamma_list = w.opt(t, p, "gamma_list", "an array of numbers", as_f64_vec, Vec::new());
    let eval_every = w.opt(t, p, "eval_every", "a positive integer", as_uint, 1);
    let delta0 = w.opt(t, p, "delta0", "a number", as_f64, 1e-3);
    let trials = w.opt(t, p, "trials", "a positive integer", as_uint, 20);
    let stability_n = w.get(t, p, "stability_n", "a positive integer", as_uint).ok()?;
    let positions_only = w.opt(t, p, "positions_only", "a boolean", Value::as_bool, false);
    let lipschitz_samples = w.opt(t, p, "lipschitz_samples", "a positive integer", as_uint, 256);
    let (gamma_list, eval_every, delta0, trials, positions_only, lipschitz_samples) =
        (gamma_list?, eval_every?, delta0?, trials?, positions_only?, lipschitz_samples?);

    let stability_n = stability_n.or(follower_n);
    let n_list = match (n_list, mode) {
        (Some(l), _) => l,
        (None, Some(Mode::Stability)) => stability_n.into_iter().collect(),
        (None, Some(m)) if m.is_limit() => {
            w.push(MISSING_KEY, "experiment.n_list", format!("required in {} mode", m.name()));
            return None;
        }
        (None, _) => Vec::new(),
    };
    let before = w.diags.len();
    if limit {
        w.check(!n_list.is_empty() && n_list[0] > 0, "experiment.n_list", "must be nonempty with positive entries");
    }
    w.check(n_list.windows(2).all(|x| x[1] > x[0]), "experiment.n_list", "must be strictly increasing");
    let n_max = n_list.last().copied().unwrap_or(0);
    let n_ref = n_ref.unwrap_or(4 * n_max);
    if limit {
        w.check(n_ref >= 4 * n_max, "experiment.n_ref", "must be at least 4 * max(n_list)");
    }
    w.check(gamma_list.iter().all(|g| *g >= 0.0 && g.is_finite()), "experiment.gamma_list", "must be nonnegative");
    w.check(gamma_list.windows(2).all(|x| x[1] > x[0]), "experiment.gamma_list", "must be strictly increasing");
    if mode == Some(Mode::Sweep) && !t.contains_key("gamma_list") {
        w.push(MISSING_KEY, "experiment.gamma_list", "required in sweep mode");
    } else if mode == Some(Mode::Sweep) {
        w.check(!gamma_list.is_empty(), "experiment.gamma_list", "must be nonempty");
    }
    w.check(eval_every > 0, "experiment.eval_every", "must be positive");
    w.check(delta0 > 0.0 && delta0.is_finite(), "experiment.delta0", "must be positive");
    w.check(trials > 0, "experiment.trials", "must be positive");
    w.check(lipschitz_samples > 0, "experiment.lipschitz_samples", "must be positive");
    if stability_n == Some(0) {
        w.push(CONSTRAINT, "experiment.stability_n", "must be positive");
    }
    if w.diags.len() != before {
        return None;
    }
    Some(ExperimentSettings {
        n_list,
        n_ref,
        gamma_list,
        eval_every,
        delta0,
        trials,
        stability_n: stability_n.unwrap_or(0),
        positions_only,
        lipschitz_samples,
    })
}

fn walk_output(w: &mut Walker, t: &Table) -> Option<OutputSettings> {
    let p = "output";
    w.unknown(t, p, &["directory", "formats", "snapshot_cadence"]);
    let directory = w.get(t, p, "directory", "a string", |v| v.as_str().map(str::to_string)).ok()?;
    let formats = w.opt(
        t,
        p,
        "formats",
        "an array of \"csv\" / \"json\"",
        |v| {
            v.as_array()?
                .iter()
                .map(|f| match f.as_str()? {
                    "csv" => Some(Format::Csv),
                    "json" => Some(Format::Json),
                    _ => None,
                })
                .collect::<Option<Vec<_>>>()
        },
        vec![Format::Csv, Format::Json],
    )?;
    let cadence = w.opt(t, p, "snapshot_cadence", "a positive integer", as_uint, 1)?;
    if formats.is_empty() {
        w.push(CONSTRAINT, "output.formats", "must name at least one format");
        return None;
    }
    if cadence == 0 {
        w.push(CONSTRAINT, "output.snapshot_cadence", "must be positive");
        return None;
    }
    let mut uniq = Vec::new();
    for f in formats {
        if !uniq.contains(&f) {
            uniq.push(f);
        }
    }
    Some(OutputSettings {
        directory,
        formats: uniq,
        snapshot_cadence: cadence,
    })
}

/// Checks spanning several tables, run once everything parsed.
fn cross_checks(w: &mut Walker, cfg: &ExperimentConfig) {
    if cfg.mode.is_limit() {
        if matches!(cfg.followers, Followers::File { .. }) {
            w.push(CONSTRAINT, "initial.followers_file", "limit experiments need a followers table");
        }
        if cfg.control == ControlValues::Optimize {
            w.push(CONSTRAINT, "control.values", "\"optimize\" only applies to simulate and optimize modes");
        }
        if w.diags.is_empty() {
            if let Err(e) = cfg.limit_spec().and_then(|s| s.validate()) {
                w.push(CONSTRAINT, "experiment", e.to_string());
            }
        }
    }
}

fn floats(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| Value::Float(*x)).collect())
}

fn ints(v: &[usize]) -> Value {
    Value::Array(v.iter().map(|x| Value::Integer(*x as i64)).collect())
}

fn table(pairs: Vec<(&str, Value)>) -> Value {
    Value::Table(pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect())
}

/// Writes `cfg` back as config text; [`validate_str`] on the result
/// (against the same base directory) gives back an equal config.
pub fn emit(cfg: &ExperimentConfig) -> String {
    let mut doc = Table::new();
    doc.insert("mode".into(), Value::String(cfg.mode.name().into()));
    doc.insert("seed".into(), Value::Integer(cfg.seed as i64));

    let mut kernel = match &cfg.kernel.family {
        KernelFamily::CuckerSmale {
            strength,
            scale,
            exponent,
            sign,
        } => vec![
            ("family", Value::String("cucker_smale".into())),
            ("strength", Value::Float(*strength)),
            ("scale", Value::Float(*scale)),
            ("exponent", Value::Float(*exponent)),
            ("sign", Value::Float(*sign)),
        ],
        KernelFamily::RepulsionAttraction {
            sigma_r,
            sigma_a,
            regularizer,
        } => vec![
            ("family", Value::String("repulsion_attraction".into())),
            ("sigma_r", Value::Float(*sigma_r)),
            ("sigma_a", Value::Float(*sigma_a)),
            ("regularizer", Value::Float(*regularizer)),
        ],
        KernelFamily::Zero => vec![("family", Value::String("zero".into()))],
        KernelFamily::Table { radii, rates } => vec![
            ("family", Value::String("custom_table".into())),
            ("radii", floats(radii)),
            ("rates", floats(rates)),
        ],
    };
    if let Some(c) = cfg.growth_constant {
        kernel.push(("growth_constant", Value::Float(c)));
    }
    doc.insert("kernel".into(), table(kernel));

    let d = cfg.dim;
    let leaders = Value::Array(
        cfg.leaders
            .chunks_exact(2 * d)
            .map(|p| Value::Array(vec![floats(&p[..d]), floats(&p[d..])]))
            .collect(),
    );
    let mut initial = vec![("dim", Value::Integer(d as i64)), ("leaders", leaders)];
    match &cfg.followers {
        Followers::Density { spec, n, sampling } => {
            let density = match spec {
                InitialDensitySpec::UniformBox { lo, hi } => vec![
                    ("family", Value::String("uniform-box".into())),
                    ("lo", floats(lo)),
                    ("hi", floats(hi)),
                ],
                InitialDensitySpec::GaussianTruncated { mean, scale, radius } => vec![
                    ("family", Value::String("gaussian-truncated".into())),
                    ("mean", floats(mean)),
                    ("scale", Value::Float(*scale)),
                    ("radius", Value::Float(*radius)),
                ],
                InitialDensitySpec::TwoCluster {
                    centers,
                    scale,
                    radius,
                    first_weight,
                } => vec![
                    ("family", Value::String("two-cluster".into())),
                    ("centers", Value::Array(vec![floats(&centers[0]), floats(&centers[1])])),
                    ("scale", Value::Float(*scale)),
                    ("radius", Value::Float(*radius)),
                    ("first_weight", Value::Float(*first_weight)),
                ],
            };
            initial.push(("n", Value::Integer(*n as i64)));
            let s = match sampling {
                SamplingScheme::Random => "random",
                SamplingScheme::Sobol => "sobol",
            };
            initial.push(("sampling", Value::String(s.into())));
            initial.push(("followers", table(density)));
        }
        Followers::File { path, .. } => initial.push(("followers_file", Value::String(path.clone()))),
    }
    doc.insert("initial".into(), table(initial));

    let values = match &cfg.control {
        ControlValues::Zero => Value::String("zero".into()),
        ControlValues::Optimize => Value::String("optimize".into()),
        ControlValues::Given(v) => floats(v),
    };
    doc.insert(
        "control".into(),
        table(vec![
            ("cells", Value::Integer(cfg.cells as i64)),
            ("U", Value::Float(cfg.radius)),
            ("values", values),
        ]),
    );

    let mut cost = vec![("gamma", Value::Float(cfg.cost.weight))];
    match &cfg.cost.family {
        RunningCostFamily::VelocityConsensus => cost.push(("family", Value::String("velocity_consensus".into()))),
        RunningCostFamily::LeaderTracking { target_y, target_w } => {
            cost.push(("family", Value::String("leader_tracking".into())));
            cost.push(("target_y", floats(target_y)));
            cost.push(("target_w", floats(target_w)));
        }
        RunningCostFamily::MeasureTarget { .. } => {
            cost.push(("family", Value::String("measure_target".into())));
            cost.push(("target_file", Value::String(cfg.cost_target_file.clone().unwrap_or_default())));
        }
    }
    doc.insert("cost".into(), table(cost));
    doc.insert(
        "grid".into(),
        table(vec![
            ("T", Value::Float(cfg.grid.horizon)),
            ("n_steps", Value::Integer(cfg.grid.n_steps as i64)),
        ]),
    );
    let o = &cfg.optimizer;
    doc.insert(
        "optimizer".into(),
        table(vec![
            ("max_iters", Value::Integer(o.max_iters as i64)),
            ("initial_step", Value::Float(o.initial_step)),
            ("backtrack", Value::Float(o.backtrack)),
            ("min_step", Value::Float(o.min_step)),
            ("tol_j_rel", Value::Float(o.tol_j_rel)),
            ("tol_u_rel", Value::Float(o.tol_u_rel)),
        ]),
    );
    let e = &cfg.experiment;
    doc.insert(
        "experiment".into(),
        table(vec![
            ("n_list", ints(&e.n_list)),
            ("n_ref", Value::Integer(e.n_ref as i64)),
            ("gamma_list", floats(&e.gamma_list)),
            ("eval_every", Value::Integer(e.eval_every as i64)),
            ("delta0", Value::Float(e.delta0)),
            ("trials", Value::Integer(e.trials as i64)),
            ("stability_n", Value::Integer(e.stability_n as i64)),
            ("positions_only", Value::Boolean(e.positions_only)),
            ("lipschitz_samples", Value::Integer(e.lipschitz_samples as i64)),
        ]),
    );
    let mut output = vec![
        (
            "formats",
            Value::Array(
                cfg.output
                    .formats
                    .iter()
                    .map(|f| {
                        Value::String(
                            match f {
                                Format::Csv => "csv",
                                Format::Json => "json",
                            }
                            .into(),
                        )
                    })
                    .collect(),
            ),
        ),
        ("snapshot_cadence", Value::Integer(cfg.output.snapshot_cadence as i64)),
    ];
    if let Some(dir) = &cfg.output.directory {
        output.push(("directory", Value::String(dir.clone())));
    }
    doc.insert("output".into(), table(output));
    toml::to_string(&doc).expect("config tables serialize")
}
