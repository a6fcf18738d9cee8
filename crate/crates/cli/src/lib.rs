//! The `mfg` command-line tool: configuration, subcommands and artifacts.
//!
//! Every subcommand writes `manifest.json` (the effective configuration, the
//! tool version, the seed and the structural applicability flags) next to
//! its results. Nothing time-dependent is
//! written to disk, so repeated runs with one seed produce identical files.

pub mod config;

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use mfg_core::analytic::{lq_g_recursion, lq_single_period, lq_two_period, LqParams};
use mfg_core::bsde::{solve_mfg_bsde, BsdeOptions, ConditioningBasis, MfgBsdeOptions};
use mfg_core::harness::{donsker_sweep, SweepOptions};
use mfg_core::measures::wasserstein;
use mfg_core::model::{sample_paths, NoiseKind};
use mfg_core::pasting::{paste_equilibrium, PastingOptions};
use mfg_core::single_period::{solve_single_period, SolverOptions};
use mfg_core::{EmpiricalMeasure, MfgError};

pub use config::{ConfigError, Issue, Method, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mfg", version, about = "Discrete-time mean field game solvers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Single-period equilibrium by damped fixed-point iteration.
    SolveSingle(Common),
    /// Multi-period equilibrium.
    SolveMulti {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Discretization sweep against a fine reference.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        kref: Option<usize>,
    },
    /// Check the solvers against the closed-form LQ oracles.
    ValidateLq(Common),
    /// Time the solvers on the configured problem.
    Bench(Common),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Number of periods.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub basis_degree: Option<usize>,
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.numeric.seed = v;
        }
        if let Some(v) = self.paths {
            cfg.numeric.paths = v;
        }
        if let Some(v) = self.k {
            cfg.problem.periods = v;
        }
        if let Some(v) = self.damping {
            cfg.numeric.damping = v;
        }
        if let Some(v) = self.tol {
            cfg.numeric.tol = Some(v);
        }
        if let Some(v) = self.max_iters {
            cfg.numeric.max_iters = v;
        }
        if let Some(v) = self.basis_degree {
            cfg.numeric.basis_degree = v;
        }
        if let Some(v) = &self.out {
            cfg.output = Some(v.clone());
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] MfgError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(MfgError::StageNotConverged { .. }) => EXIT_NOT_CONVERGED,
            _ => EXIT_CONFIG,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn load_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    common.apply(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    fn new(cfg: &RunConfig) -> CliResult<Self> {
        let dir = cfg.output.clone().unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir).map_err(|source| CliError::Write {
            path: dir.clone(),
            source,
        })?;
        Ok(Outputs { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn file(&self, name: &str) -> CliResult<BufWriter<File>> {
        let path = self.path(name);
        File::create(&path)
            .map(BufWriter::new)
            .map_err(|source| CliError::Write { path, source })
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<()> {
        let path = self.path(name);
        let mut text = serde_json::to_string_pretty(value).expect("reports serialize");
        text.push('\n');
        fs::write(&path, text).map_err(|source| CliError::Write { path, source })
    }

    /// The output location is left out: it does not affect results.
    fn manifest(&self, command: &str, cfg: &RunConfig) -> CliResult<()> {
        let cfg = RunConfig {
            output: None,
            ..cfg.clone()
        };
        self.json(
            "manifest.json",
            &json!({
                "tool": "mfg",
                "version": env!("CARGO_PKG_VERSION"),
                "command": command,
                "seed": cfg.numeric.seed,
                "config": &cfg,
                "applicability": cfg.build_problem().applicability(),
            }),
        )
    }
}

fn solver_options(cfg: &RunConfig) -> SolverOptions {
    SolverOptions {
        damping: cfg.numeric.damping,
        max_iters: cfg.numeric.max_iters,
        tol_fp: cfg.numeric.tol,
        ..SolverOptions::default()
    }
}

fn bsde_options(cfg: &RunConfig) -> MfgBsdeOptions {
    MfgBsdeOptions {
        bsde: BsdeOptions {
            basis: ConditioningBasis::Polynomial {
                degree: cfg.numeric.basis_degree,
                bumps: true,
            },
            ..BsdeOptions::default()
        },
        damping: cfg.numeric.damping,
        max_iters: cfg.numeric.max_iters,
        tol_fp: cfg.numeric.tol,
        ..MfgBsdeOptions::default()
    }
}

fn exit_for(converged: bool) -> i32 {
    if converged {
        EXIT_OK
    } else {
        EXIT_NOT_CONVERGED
    }
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = match &cli.command {
        Command::SolveSingle(c) => load_config(c).and_then(|cfg| solve_single(&cfg)),
        Command::SolveMulti { common, method } => load_config(common).and_then(|mut cfg| {
            if method.is_some() {
                cfg.method = *method;
            }
            solve_multi(&cfg)
        }),
        Command::Sweep { common, ks, kref } => {
            // `--out sweep.csv` names the CSV; its directory gets the rest.
            let csv = common
                .out
                .clone()
                .filter(|p| p.extension().is_some_and(|e| e == "csv"));
            let mut common = common.clone();
            if let Some(path) = &csv {
                common.out = Some(
                    path.parent()
                        .filter(|d| !d.as_os_str().is_empty())
                        .unwrap_or(Path::new("."))
                        .to_path_buf(),
                );
            }
            load_config(&common).and_then(|mut cfg| {
                if let Some(ks) = ks {
                    cfg.sweep.ks = ks.clone();
                }
                if let Some(k) = kref {
                    cfg.sweep.k_ref = *k;
                }
                cfg.validate()?;
                sweep(&cfg, csv.as_deref())
            })
        }
        Command::ValidateLq(c) => load_config(c).and_then(|cfg| validate_lq(&cfg)),
        Command::Bench(c) => load_config(c).and_then(|cfg| bench(&cfg)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// `solve-single`: needs `periods = 1`.
pub fn solve_single(cfg: &RunConfig) -> CliResult<i32> {
    if cfg.problem.periods != 1 {
        return Err(ConfigError::Invalid(vec![Issue {
            pointer: "/problem/periods".into(),
            message: "solve-single needs exactly one period".into(),
        }])
        .into());
    }
    let out = Outputs::new(cfg)?;
    out.manifest("solve-single", cfg)?;
    let problem = cfg.build_problem();
    let paths = sample_paths(&problem, cfg.numeric.paths, cfg.numeric.seed)?;
    let sol = solve_single_period(&problem, &problem.terminal_g, &solver_options(cfg), &paths)?;
    sol.policy.write_csv(out.file("policy.csv")?)?;
    sol.measure.write_csv(out.file("measure.csv")?)?;
    out.json("report.json", &sol.report)?;
    Ok(exit_for(sol.report.converged))
}

/// `solve-multi`: pasting (default) or the BSΔE iteration.
pub fn solve_multi(cfg: &RunConfig) -> CliResult<i32> {
    let out = Outputs::new(cfg)?;
    out.manifest("solve-multi", cfg)?;
    let problem = cfg.build_problem();
    let paths = sample_paths(&problem, cfg.numeric.paths, cfg.numeric.seed)?;
    match cfg.method.unwrap_or(Method::Pasting) {
        Method::Pasting => {
            let opts = PastingOptions {
                solver: solver_options(cfg),
                ..PastingOptions::default()
            };
            let sol = paste_equilibrium(&problem, &paths, &opts)?;
            sol.policy.write_csv(out.file("policy.csv")?)?;
            sol.flow.write_csv(out.file("flow.csv")?)?;
            let converged = sol.reports.iter().all(|r| r.converged);
            out.json(
                "report.json",
                &json!({ "method": "pasting", "converged": converged, "periods": sol.reports }),
            )?;
            Ok(exit_for(converged))
        }
        Method::Bsde => {
            let sol = solve_mfg_bsde(&problem, &paths, &bsde_options(cfg))?;
            sol.policy.write_csv(out.file("policy.csv")?)?;
            sol.flow.write_csv(out.file("flow.csv")?)?;
            out.json(
                "report.json",
                &json!({
                    "method": "bsde",
                    "converged": sol.report.converged,
                    "report": sol.report,
                    "bsde_value": sol.bsde_value.mean,
                    "bsde_value_stderr": sol.bsde_value.stderr,
                }),
            )?;
            Ok(exit_for(sol.report.converged))
        }
    }
}

/// `sweep`: CSV of gaps plus `sweep.json` with the fitted slopes.
pub fn sweep(cfg: &RunConfig, csv: Option<&Path>) -> CliResult<i32> {
    let out = Outputs::new(cfg)?;
    out.manifest("sweep", cfg)?;
    let problem = cfg.build_problem();
    let opts = SweepOptions {
        solver: MfgBsdeOptions {
            exploitability: false,
            ..bsde_options(cfg)
        },
        n_paths: cfg.numeric.paths,
        seed: cfg.numeric.seed,
        ..SweepOptions::default()
    };
    let result = donsker_sweep(&problem, &cfg.sweep.ks, cfg.sweep.k_ref, &opts)?;
    let csv_path = csv
        .map(Path::to_path_buf)
        .unwrap_or_else(|| out.path("sweep.csv"));
    let file = File::create(&csv_path).map_err(|source| CliError::Write {
        path: csv_path.clone(),
        source,
    })?;
    result.write_csv(BufWriter::new(file))?;
    out.json("sweep.json", &result)?;
    Ok(exit_for(result.entries.iter().all(|e| e.converged)))
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    value: f64,
    threshold: f64,
    pass: bool,
}

impl Check {
    fn below(name: &'static str, value: f64, threshold: f64) -> Self {
        Check {
            name,
            value,
            threshold,
            pass: value < threshold,
        }
    }
}

/// `validate-lq`: solver output against the closed forms.
pub fn validate_lq(cfg: &RunConfig) -> CliResult<i32> {
    let out = Outputs::new(cfg)?;
    out.manifest("validate-lq", cfg)?;
    let (c, c_l) = match cfg.problem.family {
        config::FamilyConfig::Lq { c, c_l } => (c, c_l),
        _ => {
            return Err(ConfigError::Invalid(vec![Issue {
                pointer: "/problem/family".into(),
                message: "validate-lq needs the lq family".into(),
            }])
            .into())
        }
    };
    let base = cfg.build_problem().with_noise(NoiseKind::Gaussian);
    let sigma2 = cfg.problem.sigma * cfg.problem.sigma;
    let mut checks = Vec::new();

    // One period of unit length.
    let single = base.clone().with_horizon(1.0).with_periods(1);
    let paths = sample_paths(&single, cfg.numeric.paths, cfg.numeric.seed)?;
    let xi = paths.initial_measure()?;
    let (mean, var) = (xi.mean_1d()?, xi.variance_1d()?);
    let exact = lq_single_period(&LqParams::new(c, 0.0, sigma2).with_initial(mean, var))?;
    let sol = solve_single_period(&single, &single.terminal_g, &solver_options(cfg), &paths)?;
    let kappa = exact.policy_coeff;
    let oracle: Vec<f64> = (0..paths.n_paths)
        .map(|p| {
            paths.xi()[p]
                + kappa * (mean - paths.xi()[p])
                + cfg.problem.sigma * paths.increment(p, 0)
        })
        .collect();
    let w2 = wasserstein(&sol.measure, &EmpiricalMeasure::uniform(oracle)?, 2.0)?;
    checks.push(Check::below("single_period_w2", w2, 0.02));
    checks.push(Check::below(
        "single_period_slope_error",
        (sol.policy.map(0).fitted_slope() + kappa).abs(),
        0.02 * kappa,
    ));
    checks.push(Check::below(
        "single_period_exploitability",
        sol.report.exploitability,
        1e-3,
    ));

    // Two periods of unit length.
    let two = base.with_horizon(2.0).with_periods(2);
    let paths = sample_paths(&two, cfg.numeric.paths, cfg.numeric.seed)?;
    let exact = lq_two_period(&LqParams::new(c, c_l, sigma2))?;
    let recursion = lq_g_recursion(&LqParams::new(c, c_l, sigma2), 2)?;
    checks.push(Check::below(
        "recursion_matches_two_period",
        (recursion[1].q - exact.g1_curvature).abs(),
        1e-12,
    ));
    let pasted = paste_equilibrium(
        &two,
        &paths,
        &PastingOptions {
            solver: solver_options(cfg),
            ..PastingOptions::default()
        },
    )?;
    for (i, (name, coeff)) in [
        ("stage1_coeff_rel_error", exact.stage1_coeff),
        ("stage2_coeff_rel_error", exact.stage2_coeff),
    ]
    .into_iter()
    .enumerate()
    {
        let fitted = -pasted.policy.map(i).fitted_slope();
        checks.push(Check::below(name, (fitted - coeff).abs() / coeff, 0.02));
    }
    let all = checks.iter().all(|c| c.pass);
    for ch in &checks {
        println!(
            "{} {}: {:.6e} (threshold {:e})",
            if ch.pass { "PASS" } else { "FAIL" },
            ch.name,
            ch.value,
            ch.threshold
        );
    }
    out.json("validate.json", &json!({ "pass": all, "checks": checks }))?;
    Ok(exit_for(all))
}

/// `bench`: timings go to stderr only, so the written report stays
/// reproducible.
pub fn bench(cfg: &RunConfig) -> CliResult<i32> {
    let out = Outputs::new(cfg)?;
    out.manifest("bench", cfg)?;
    let problem = cfg.build_problem();
    let mut rows = Vec::new();
    let mut converged = true;

    let single = problem
        .clone()
        .with_horizon(problem.delta())
        .with_periods(1);
    let paths = sample_paths(&single, cfg.numeric.paths, cfg.numeric.seed)?;
    let t = Instant::now();
    let s = solve_single_period(&single, &single.terminal_g, &solver_options(cfg), &paths)?;
    eprintln!("solve-single: {:.3} s", t.elapsed().as_secs_f64());
    converged &= s.report.converged;
    rows.push(json!({ "solver": "single_period", "iterations": s.report.iterations, "residual": s.report.residual }));

    let paths = sample_paths(&problem, cfg.numeric.paths, cfg.numeric.seed)?;
    let t = Instant::now();
    let b = solve_mfg_bsde(
        &problem,
        &paths,
        &MfgBsdeOptions {
            exploitability: false,
            ..bsde_options(cfg)
        },
    )?;
    eprintln!("solve-multi bsde: {:.3} s", t.elapsed().as_secs_f64());
    converged &= b.report.converged;
    rows.push(json!({ "solver": "bsde", "iterations": b.report.iterations, "residual": b.report.residual }));

    out.json(
        "bench.json",
        &json!({ "converged": converged, "runs": rows }),
    )?;
    Ok(exit_for(converged))
}
