//! Run configuration: one TOML document with `[problem]`, `[grid]`, `[solver]` and
//! `[outputs]` tables. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mfg_core::CouplingLaw64;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub problem: ProblemSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pipeline {
    Selfsim,
    SolveFlow,
    SolveElliptic,
    Variational,
    Diagnose,
    Acceptance,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Selfsim => "selfsim",
            Pipeline::SolveFlow => "solve-flow",
            Pipeline::SolveElliptic => "solve-elliptic",
            Pipeline::Variational => "variational",
            Pipeline::Diagnose => "diagnose",
            Pipeline::Acceptance => "acceptance",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Planning,
    Terminal,
}

/// Where the marginals come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Data {
    /// Self-similar profiles at `t_start` and `t_start + horizon`.
    #[default]
    Selfsimilar,
    /// `1 + a cos(2 pi x / L)` with `a` from `amplitudes`, normalized to unit mass.
    Cosine,
    /// `(w^2 - x^2)_+` with `w = width`, normalized (same profile at both ends).
    Compact,
    /// Smooth bump translated by `shift` between the two ends.
    Bump,
    /// CSV files `m0_file` and `mt_file` with header `x,m`.
    Profile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyName {
    Torus,
    Neumann,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub pipeline: Pipeline,
    /// `power:THETA` or `log`.
    #[serde(default = "default_coupling")]
    pub coupling: String,
    #[serde(default)]
    pub mode: Mode,
    /// Weight of the terminal cost `c1 T f(m(T))`.
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "one")]
    pub horizon: f64,
    /// Absolute time of the initial marginal for self-similar data.
    #[serde(default = "one")]
    pub t_start: f64,
    #[serde(default)]
    pub data: Data,
    #[serde(default = "default_amplitudes")]
    pub amplitudes: [f64; 2],
    /// Half-width of the compact (default 0.5) or bump (default 1.5) profile.
    pub width: Option<f64>,
    #[serde(default = "one")]
    pub shift: f64,
    /// Weight of the congestion term in the variational program.
    #[serde(default = "one")]
    pub lambda: f64,
    pub m0_file: Option<PathBuf>,
    pub mt_file: Option<PathBuf>,
    /// Edge exponent declared for profile files (defaults to 1 / theta).
    pub edge_exponent: Option<f64>,
    /// Solve the planning problem backwards in time and report it forwards.
    #[serde(default)]
    pub time_reverse: bool,
    /// Field file read by the diagnose pipeline.
    pub input: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nx: Option<usize>,
    pub nt: Option<usize>,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
    pub topology: Option<TopologyName>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Run the default epsilon schedule down to `epsilon`.
    #[serde(default)]
    pub sweep: bool,
    /// Explicit decreasing epsilon schedule (implies a sweep).
    pub epsilons: Option<Vec<f64>>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Diagnose pipeline: checks to run, `all` or names.
    #[serde(default = "default_checks")]
    pub checks: Vec<String>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_rectangles")]
    pub rectangles: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            epsilon: default_epsilon(),
            sweep: false,
            epsilons: None,
            tol: None,
            max_iter: None,
            checks: default_checks(),
            tolerance: default_tolerance(),
            rectangles: default_rectangles(),
            seed: default_seed(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Directory under the output root; defaults to `<pipeline>-<hash>`.
    pub dir: Option<String>,
}

fn one() -> f64 {
    1.0
}
fn default_coupling() -> String {
    "power:1".into()
}
fn default_amplitudes() -> [f64; 2] {
    [0.5, 0.8]
}
fn default_epsilon() -> f64 {
    1e-4
}
fn default_checks() -> Vec<String> {
    vec!["all".into()]
}
fn default_tolerance() -> f64 {
    1e-6
}
fn default_rectangles() -> usize {
    50
}
fn default_seed() -> u64 {
    7
}

/// Checks understood by the diagnose pipeline.
pub const CHECKS: [&str; 6] = ["extremum", "rectangles", "convexity", "energy", "holder", "log"];

fn field(name: &str, message: impl Into<String>) -> CliError {
    CliError::Validation {
        field: name.into(),
        message: message.into(),
    }
}

/// Parses `power:THETA`, `power` (theta = 1) or `log`.
pub fn parse_coupling(s: &str) -> Result<CouplingLaw64, CliError> {
    let bad = |m: String| field("problem.coupling", m);
    match s.trim() {
        "log" => Ok(CouplingLaw64::log()),
        "power" => Ok(CouplingLaw64::power(1.0).expect("theta = 1 is valid")),
        other => {
            let Some(theta) = other.strip_prefix("power:") else {
                return Err(bad(format!("expected `power:THETA` or `log`, got `{other}`")));
            };
            let theta: f64 = theta
                .trim()
                .parse()
                .map_err(|_| bad(format!("`{theta}` is not a number")))?;
            if !(theta > 0.0 && theta.is_finite()) {
                return Err(bad(format!("theta must be positive and finite, got {theta}")));
            }
            CouplingLaw64::power(theta).map_err(|e| bad(e.to_string()))
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Config = toml::from_str(text).map_err(|e| {
            let message = e.message().to_string();
            let key = message
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "config".into());
            field(&key, message)
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| field("config", format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical text of the resolved configuration (what the input hash covers).
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    pub fn coupling(&self) -> Result<CouplingLaw64, CliError> {
        parse_coupling(&self.problem.coupling)
    }

    pub fn theta(&self) -> Result<f64, CliError> {
        self.coupling()?
            .theta()
            .ok_or_else(|| field("problem.coupling", format!("the {} pipeline needs a power coupling", self.problem.pipeline.name())))
    }

    pub fn nx(&self) -> usize {
        self.grid.nx.unwrap_or_else(|| self.default_nodes())
    }

    pub fn nt(&self) -> usize {
        self.grid.nt.unwrap_or_else(|| self.default_nodes())
    }

    fn default_nodes(&self) -> usize {
        match self.problem.pipeline {
            Pipeline::Selfsim => 201,
            Pipeline::Variational => 32,
            _ => 65,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        let coupling = self.coupling()?;
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field(name, format!("must be positive and finite, got {v}")))
            }
        };
        positive("problem.horizon", p.horizon)?;
        positive("problem.t_start", p.t_start)?;
        if let Some(w) = p.width {
            positive("problem.width", w)?;
        }
        positive("solver.epsilon", self.solver.epsilon)?;
        positive("solver.tolerance", self.solver.tolerance)?;
        if !(p.c1 >= 0.0 && p.c1.is_finite()) {
            return Err(field("problem.c1", "must be nonnegative"));
        }
        if !(p.lambda >= 0.0 && p.lambda.is_finite()) {
            return Err(field("problem.lambda", "must be nonnegative"));
        }
        if !p.shift.is_finite() {
            return Err(field("problem.shift", "must be finite"));
        }
        if p.amplitudes.iter().any(|a| !(a.abs() < 1.0)) {
            return Err(field("problem.amplitudes", "cosine amplitudes must lie in (-1, 1)"));
        }
        if let Some(a) = p.edge_exponent {
            positive("problem.edge_exponent", a)?;
        }
        if self.solver.epsilon >= 1.0 {
            return Err(field("solver.epsilon", "must lie in (0, 1)"));
        }
        if let Some(list) = &self.solver.epsilons {
            if list.is_empty() || list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
                return Err(field("solver.epsilons", "entries must lie in (0, 1)"));
            }
            if list.windows(2).any(|w| !(w[1] < w[0])) {
                return Err(field("solver.epsilons", "must be strictly decreasing"));
            }
        }
        if let Some(t) = self.solver.tol {
            positive("solver.tol", t)?;
        }
        if self.solver.max_iter == Some(0) {
            return Err(field("solver.max_iter", "must be at least 1"));
        }
        for (name, n) in [("grid.nx", self.nx()), ("grid.nt", self.nt())] {
            if n < 3 {
                return Err(field(name, format!("needs at least 3 nodes, got {n}")));
            }
        }
        match (self.grid.x_min, self.grid.x_max) {
            (Some(a), Some(b)) if !(b > a) => return Err(field("grid.x_max", "must exceed grid.x_min")),
            (Some(_), None) | (None, Some(_)) => {
                return Err(field("grid.x_min", "set both grid.x_min and grid.x_max or neither"))
            }
            _ => {}
        }
        if p.data == Data::Profile && p.m0_file.is_none() {
            return Err(field("problem.m0_file", "profile data needs m0_file"));
        }
        match p.pipeline {
            Pipeline::Selfsim => {
                self.theta()?;
            }
            Pipeline::SolveFlow => {
                self.theta()?;
                if !matches!(p.data, Data::Selfsimilar | Data::Profile) {
                    return Err(field("problem.data", "solve-flow takes selfsimilar or profile data"));
                }
                if p.data == Data::Profile && p.mode == Mode::Planning && p.mt_file.is_none() {
                    return Err(field("problem.mt_file", "the planning problem needs mt_file"));
                }
                if p.time_reverse && p.mode == Mode::Terminal {
                    return Err(field("problem.time_reverse", "time reversal applies to the planning problem only"));
                }
            }
            Pipeline::SolveElliptic => {
                if p.data == Data::Bump {
                    return Err(field("problem.data", "solve-elliptic takes selfsimilar, cosine, compact or profile data"));
                }
                if p.data == Data::Profile && p.mode == Mode::Planning && p.mt_file.is_none() {
                    return Err(field("problem.mt_file", "the planning problem needs mt_file"));
                }
                if p.data == Data::Selfsimilar && coupling.is_log() {
                    return Err(field("problem.data", "self-similar data belong to the power coupling"));
                }
            }
            Pipeline::Variational => {
                if p.mode == Mode::Terminal {
                    return Err(field("problem.mode", "the variational program is a planning problem"));
                }
                if p.data == Data::Selfsimilar {
                    self.theta()?;
                }
                if p.data == Data::Profile && p.mt_file.is_none() {
                    return Err(field("problem.mt_file", "the planning problem needs mt_file"));
                }
                let max = mfg_core::variational::MAX_NODES;
                for (name, n) in [("grid.nx", self.nx()), ("grid.nt", self.nt())] {
                    if n > max {
                        return Err(field(name, format!("the variational solver takes at most {max} nodes, got {n}")));
                    }
                }
            }
            Pipeline::Diagnose => {
                if p.input.is_none() {
                    return Err(field("problem.input", "diagnose needs an input field file"));
                }
                if self.solver.checks.is_empty() {
                    return Err(field("solver.checks", "name at least one check"));
                }
                for c in &self.solver.checks {
                    if c != "all" && !CHECKS.contains(&c.as_str()) {
                        return Err(field("solver.checks", format!("unknown check `{c}`; known: all, {}", CHECKS.join(", "))));
                    }
                }
                if self.solver.rectangles == 0 {
                    return Err(field("solver.rectangles", "must be at least 1"));
                }
            }
            Pipeline::Acceptance => {}
        }
        Ok(())
    }

    /// A config with defaults for `pipeline`.
    pub fn for_pipeline(pipeline: Pipeline) -> Self {
        Config {
            problem: ProblemSection {
                pipeline,
                coupling: default_coupling(),
                mode: Mode::Planning,
                c1: 1.0,
                horizon: 1.0,
                t_start: 1.0,
                data: Data::Selfsimilar,
                amplitudes: default_amplitudes(),
                width: None,
                shift: 1.0,
                lambda: 1.0,
                m0_file: None,
                mt_file: None,
                edge_exponent: None,
                time_reverse: false,
                input: None,
            },
            grid: GridSection::default(),
            solver: SolverSection::default(),
            outputs: OutputSection::default(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = Config::from_toml("[problem]\npipeline = \"selfsim\"\nthetta = 2\n").unwrap_err();
        match err {
            CliError::Validation { field, .. } => assert_eq!(field, "thetta"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn negative_theta_names_the_field() {
        let err = Config::from_toml("[problem]\npipeline = \"selfsim\"\ncoupling = \"power:-1\"\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        match err {
            CliError::Validation { field, .. } => assert_eq!(field, "problem.coupling"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn canonical_form_round_trips() {
        let c = Config::for_pipeline(Pipeline::SolveElliptic);
        let back = Config::from_toml(&c.canonical()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn coupling_strings() {
        assert!(parse_coupling("log").unwrap().is_log());
        assert_eq!(parse_coupling("power:2.5").unwrap().theta(), Some(2.5));
        assert!(parse_coupling("power:0").is_err());
        assert!(parse_coupling("cubic").is_err());
    }
}
