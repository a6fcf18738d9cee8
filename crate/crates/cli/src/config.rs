//! Run configuration: JSON schema, defaults, flag overrides and validation.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use mfg_core::model::{ControlCost, InitialLaw, NoiseKind};
use mfg_core::{Field, MfgProblem};

/// One schema violation, located by a JSON pointer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    pub pointer: String,
    pub message: String,
}

impl std::fmt::Display for Issue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.pointer, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config:{}", .0.iter().map(|i| format!("\n  {i}")).collect::<String>())]
    Invalid(Vec<Issue>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum FamilyConfig {
    Lq {
        c: f64,
        c_l: f64,
    },
    Tanh {
        c: f64,
        scale: f64,
    },
    /// `L₀ = c a²`, `F = f[0] x² + f[1] x m̄ + f[2] m̄²`, `G` likewise with `g`.
    Quadratic {
        c: f64,
        f: [f64; 3],
        g: [f64; 3],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialConfig {
    Normal { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
    Dirac { x: f64 },
}

/// Unknown keys are rejected by the flattened family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProblemConfig {
    #[serde(flatten)]
    pub family: FamilyConfig,
    pub sigma: f64,
    pub horizon: f64,
    pub periods: usize,
    pub action_bounds: [f64; 2],
    pub noise: NoiseKind,
    pub initial: InitialConfig,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            family: FamilyConfig::Lq { c: 1.0, c_l: 1.0 },
            sigma: 0.5,
            horizon: 1.0,
            periods: 1,
            action_bounds: [-5.0, 5.0],
            noise: NoiseKind::Gaussian,
            initial: InitialConfig::Normal {
                mean: 0.0,
                std: 1.0,
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Pasting,
    Bsde,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericConfig {
    pub paths: usize,
    pub seed: u64,
    pub damping: f64,
    pub tol: Option<f64>,
    pub max_iters: usize,
    pub basis_degree: usize,
}

impl Default for NumericConfig {
    fn default() -> Self {
        NumericConfig {
            paths: 10_000,
            seed: 0,
            damping: 0.5,
            tol: None,
            max_iters: 200,
            basis_degree: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub ks: Vec<usize>,
    pub k_ref: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            ks: vec![2, 4, 8, 16, 32],
            k_ref: 256,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub method: Option<Method>,
    pub numeric: NumericConfig,
    pub sweep: SweepConfig,
    pub output: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let pointer = pointer_of(&e.path().to_string());
            ConfigError::Invalid(vec![Issue {
                pointer,
                message: e.into_inner().to_string(),
            }])
        })?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// All semantic violations, not just the first.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut issues = Vec::new();
        let mut need = |ok: bool, pointer: &str, message: &str| {
            if !ok {
                issues.push(Issue {
                    pointer: pointer.into(),
                    message: message.into(),
                });
            }
        };
        let p = &self.problem;
        match &p.family {
            FamilyConfig::Lq { c, c_l } => {
                need(c.is_finite() && *c > 0.0, "/problem/c", "must be positive");
                need(
                    c_l.is_finite() && *c_l >= 0.0,
                    "/problem/c_l",
                    "must be nonnegative",
                );
            }
            FamilyConfig::Tanh { c, scale } => {
                need(c.is_finite() && *c > 0.0, "/problem/c", "must be positive");
                need(
                    scale.is_finite() && *scale > 0.0,
                    "/problem/scale",
                    "must be positive",
                );
            }
            FamilyConfig::Quadratic { c, f, g } => {
                need(c.is_finite() && *c > 0.0, "/problem/c", "must be positive");
                need(
                    f.iter().all(|v| v.is_finite()),
                    "/problem/f",
                    "must be finite",
                );
                need(
                    g.iter().all(|v| v.is_finite()),
                    "/problem/g",
                    "must be finite",
                );
            }
        }
        need(
            p.sigma.is_finite() && p.sigma > 0.0,
            "/problem/sigma",
            "must be positive",
        );
        need(
            p.horizon.is_finite() && p.horizon > 0.0,
            "/problem/horizon",
            "must be positive",
        );
        need(p.periods > 0, "/problem/periods", "must be at least 1");
        let [lo, hi] = p.action_bounds;
        need(
            lo.is_finite() && hi.is_finite() && lo <= 0.0 && 0.0 <= hi && lo < hi,
            "/problem/action_bounds",
            "must be a finite interval containing 0",
        );
        match p.initial {
            InitialConfig::Normal { mean, std } => {
                need(mean.is_finite(), "/problem/initial/mean", "must be finite");
                need(
                    std.is_finite() && std >= 0.0,
                    "/problem/initial/std",
                    "must be nonnegative",
                );
            }
            InitialConfig::Uniform { lo, hi } => need(
                lo.is_finite() && hi.is_finite() && lo <= hi,
                "/problem/initial",
                "needs lo <= hi",
            ),
            InitialConfig::Dirac { x } => {
                need(x.is_finite(), "/problem/initial/x", "must be finite")
            }
        }
        let n = &self.numeric;
        need(n.paths > 0, "/numeric/paths", "must be at least 1");
        need(
            n.damping > 0.0 && n.damping <= 1.0,
            "/numeric/damping",
            "must lie in (0, 1]",
        );
        need(
            n.tol.is_none_or(|t| t > 0.0),
            "/numeric/tol",
            "must be positive",
        );
        need(n.max_iters > 0, "/numeric/max_iters", "must be at least 1");
        need(!self.sweep.ks.is_empty(), "/sweep/ks", "must not be empty");
        if issues.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(issues))
        }
    }

    pub fn build_problem(&self) -> MfgProblem {
        let p = &self.problem;
        let base = match &p.family {
            FamilyConfig::Lq { c, c_l } => MfgProblem::lq(*c, *c_l),
            FamilyConfig::Tanh { c, scale } => MfgProblem::tanh(*c, *scale),
            FamilyConfig::Quadratic { c, f, g } => {
                let (f, g) = (*f, *g);
                MfgProblem::new(
                    ControlCost::Quadratic { c: *c },
                    Field::of_mean(move |x, m| g[0] * x * x + g[1] * x * m + g[2] * m * m),
                )
                .with_coupling(Field::of_mean(move |x, m| {
                    f[0] * x * x + f[1] * x * m + f[2] * m * m
                }))
            }
        };
        let initial = match p.initial {
            InitialConfig::Normal { mean, std } => InitialLaw::Normal { mean, std },
            InitialConfig::Uniform { lo, hi } => InitialLaw::Uniform { lo, hi },
            InitialConfig::Dirac { x } => InitialLaw::Dirac(x),
        };
        base.with_sigma(p.sigma)
            .with_horizon(p.horizon)
            .with_periods(p.periods)
            .with_actions(p.action_bounds[0], p.action_bounds[1])
            .with_noise(p.noise)
            .with_initial(initial)
    }
}

/// `problem.c` → `/problem/c`; `sweep.ks[2]` → `/sweep/ks/2`.
fn pointer_of(path: &str) -> String {
    if path == "." || path.is_empty() {
        return String::new();
    }
    let mut out = String::new();
    for seg in path.split('.') {
        let mut rest = seg;
        while let Some(i) = rest.find('[') {
            if i > 0 {
                out.push('/');
                out.push_str(&rest[..i]);
            }
            let end = rest[i..].find(']').map_or(rest.len(), |e| i + e);
            out.push('/');
            out.push_str(&rest[i + 1..end]);
            rest = &rest[(end + 1).min(rest.len())..];
        }
        if !rest.is_empty() {
            out.push('/');
            out.push_str(rest);
        }
    }
    out
}
