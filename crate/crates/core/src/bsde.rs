//! The backward stochastic difference equation
//!
//! ```text
//! 𝒴_{t_i} = 𝒴_{t_{i+1}} + H(Y_{t_i}, m_{t_i}, 𝒵_{t_i}) δ − 𝒵_{t_i} ΔZ_{i+1} − ΔC_{i+1},
//! 𝒴_{t_k} = G(Y_{t_k}, m_{t_k}),
//! ```
//!
//! driven by the uncontrolled state `Y`, solved backwards with
//!
//! ```text
//! 𝒵_{t_i} = E[𝒴_{t_{i+1}} ΔZ_{i+1} | F_i] / δ,
//! 𝒴_{t_i} = E[𝒴_{t_{i+1}} | F_i] + δ H(Y_{t_i}, m_{t_i}, 𝒵_{t_i}).
//! ```
//!
//! Conditional expectations are least-squares regressions on `Y_{t_i}`, or
//! exact group averages over paths sharing their history when the noise is
//! discrete. The `𝒵` regression uses the centred target
//! `(𝒴_{t_{i+1}} − E[𝒴_{t_{i+1}} | F_i]) ΔZ`, which has the same conditional
//! mean and a smaller variance.
//!
//! [`solve_mfg_bsde`] alternates a backward sweep with a forward update of
//! the measure flow.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::field::MeasureField;
use crate::measures::{geodesic_mix, wasserstein, EmpiricalMeasure, MeasureFlow};
use crate::model::{
    path_costs, simulate_consistent, simulate_state, ControlCost, MfgProblem, PathBundle,
    Trajectories,
};
use crate::optimize::minimize_scalar;
use crate::policy::{knot_grid, FeedbackPolicy, PolicyMap};
use crate::single_period::EquilibriumReport;
use crate::stats::{correlation, pairwise_sum, Estimate};

/// How `E[· | F_i]` is approximated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConditioningBasis {
    /// Least squares on `1, u, …, u^degree` with `u` the standardized
    /// `Y_{t_i}`, plus Gaussian bumps centred at `u = ±1` when `bumps` is set.
    Polynomial { degree: usize, bumps: bool },
    /// Exact averages over paths with bit-identical `ξ` and increment
    /// prefix. Meaningful for discrete noise with enumerated paths.
    PathHistory,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BsdeOptions {
    pub basis: ConditioningBasis,
    /// Relative ridge added to the normal equations.
    pub ridge: f64,
}

impl Default for BsdeOptions {
    fn default() -> Self {
        BsdeOptions {
            basis: ConditioningBasis::Polynomial {
                degree: 3,
                bumps: true,
            },
            ridge: 1e-8,
        }
    }
}

/// A fitted regression function of `Y_{t_i}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepFit {
    center: f64,
    scale: f64,
    degree: usize,
    bumps: bool,
    lo: f64,
    hi: f64,
    coef_y: Vec<f64>,
    coef_z: Vec<f64>,
}

impl StepFit {
    fn features(&self, y: f64, out: &mut Vec<f64>) {
        features(y, self.center, self.scale, self.degree, self.bumps, out)
    }

    fn dot(&self, coef: &[f64], y: f64) -> f64 {
        let mut f = Vec::with_capacity(coef.len());
        self.features(y.clamp(self.lo, self.hi), &mut f);
        f.iter().zip(coef).map(|(a, b)| a * b).sum()
    }

    /// `E[𝒴_{t_{i+1}} | Y_{t_i} = y]`, with `y` clamped to the fitted range.
    pub fn conditional_mean(&self, y: f64) -> f64 {
        self.dot(&self.coef_y, y)
    }

    /// `𝒵_{t_i}` as a function of `y`, clamped to the fitted range.
    pub fn z(&self, y: f64) -> f64 {
        self.dot(&self.coef_z, y)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }
}

fn features(y: f64, center: f64, scale: f64, degree: usize, bumps: bool, out: &mut Vec<f64>) {
    out.clear();
    let u = (y - center) / scale;
    let mut p = 1.0;
    out.push(1.0);
    for _ in 0..degree {
        p *= u;
        out.push(p);
    }
    if bumps {
        out.push((-0.5 * (u - 1.0) * (u - 1.0)).exp());
        out.push((-0.5 * (u + 1.0) * (u + 1.0)).exp());
    }
}

/// Solution arrays, time-major: `y_values[i][p]` is `𝒴_{t_i}` of path `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct BsdeSolution {
    pub y_values: Vec<Vec<f64>>,
    pub z_values: Vec<Vec<f64>>,
    /// Per step, `corr(ΔC_{i+1}, ΔZ_{i+1})` of the orthogonal residual.
    pub orth_residual: Vec<f64>,
    /// Per-step regression functions (polynomial basis only).
    pub fits: Vec<Option<StepFit>>,
}

impl BsdeSolution {
    pub fn periods(&self) -> usize {
        self.z_values.len()
    }

    pub fn y0_estimate(&self) -> Estimate {
        Estimate::from_samples(&self.y_values[0])
    }
}

const CHUNK: usize = 4096;

/// Regression of several targets on the polynomial features of `ys`.
fn regress(
    ys: &[f64],
    targets: &[&[f64]],
    degree: usize,
    bumps: bool,
    ridge: f64,
) -> Result<(StepFit, Vec<Vec<f64>>)> {
    let n = ys.len();
    let mean = pairwise_sum(ys) / n as f64;
    let sq: Vec<f64> = ys.iter().map(|y| (y - mean) * (y - mean)).collect();
    let sd = (pairwise_sum(&sq) / n as f64).sqrt();
    let degenerate = !(sd > 1e-12 * (1.0 + mean.abs()));
    let (degree, bumps, scale) = if degenerate {
        (0, false, 1.0)
    } else {
        (degree, bumps, sd)
    };
    let p = degree + 1 + if bumps { 2 } else { 0 };
    let t = targets.len();
    let width = p * p + p * t;
    let partials: Vec<Vec<f64>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![0.0; width];
            let mut f = Vec::with_capacity(p);
            for j in c * CHUNK..((c + 1) * CHUNK).min(n) {
                features(ys[j], mean, scale, degree, bumps, &mut f);
                for a in 0..p {
                    for b in 0..p {
                        acc[a * p + b] += f[a] * f[b];
                    }
                    for (r, tg) in targets.iter().enumerate() {
                        acc[p * p + r * p + a] += f[a] * tg[j];
                    }
                }
            }
            acc
        })
        .collect();
    let mut acc = vec![0.0; width];
    for part in &partials {
        for (a, b) in acc.iter_mut().zip(part) {
            *a += b;
        }
    }
    let gram = DMatrix::from_row_slice(p, p, &acc[..p * p]);
    let trace = (0..p).map(|i| gram[(i, i)]).sum::<f64>() / p as f64;
    let mut lambda = ridge;
    let chol = loop {
        let mut m = gram.clone();
        // the intercept is not penalized
        for i in 1..p {
            m[(i, i)] += lambda * trace.max(f64::MIN_POSITIVE);
        }
        match m.cholesky() {
            Some(c) => break c,
            None if lambda < 1e-2 => {
                log::warn!(
                    "regression Gram matrix is ill-conditioned; raising ridge from {lambda:e}"
                );
                lambda = (lambda * 100.0).max(1e-12);
            }
            None => {
                return Err(MfgError::NonFinite(
                    "regression Gram matrix is singular even with ridge".into(),
                ))
            }
        }
    };
    let coefs: Vec<Vec<f64>> = (0..t)
        .map(|r| {
            let rhs = DVector::from_column_slice(&acc[p * p + r * p..p * p + (r + 1) * p]);
            chol.solve(&rhs).iter().copied().collect()
        })
        .collect();
    let (lo, hi) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| {
            (l.min(y), h.max(y))
        });
    let fit = StepFit {
        center: mean,
        scale,
        degree,
        bumps,
        lo,
        hi,
        coef_y: Vec::new(),
        coef_z: Vec::new(),
    };
    Ok((fit, coefs))
}

fn group_means(groups: &[u32], n_groups: usize, values: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (g, v) in groups.iter().zip(values) {
        sums[*g as usize] += v;
        counts[*g as usize] += 1;
    }
    groups
        .iter()
        .map(|g| sums[*g as usize] / counts[*g as usize] as f64)
        .collect()
}

/// History groups: `groups[i][p]` labels the set of paths sharing `ξ` and
/// `ΔZ_1..ΔZ_i` with path `p`.
fn history_groups(paths: &PathBundle) -> Vec<(Vec<u32>, usize)> {
    let n = paths.n_paths;
    let mut out = Vec::with_capacity(paths.periods + 1);
    let mut ids: HashMap<u64, u32> = HashMap::new();
    let g0: Vec<u32> = paths
        .xi()
        .iter()
        .map(|x| {
            let len = ids.len() as u32;
            *ids.entry(x.to_bits()).or_insert(len)
        })
        .collect();
    out.push((g0, ids.len()));
    for j in 0..paths.periods {
        let prev = &out[j].0;
        let mut ids: HashMap<(u32, u64), u32> = HashMap::new();
        let g: Vec<u32> = (0..n)
            .map(|p| {
                let len = ids.len() as u32;
                *ids.entry((prev[p], paths.increment(p, j).to_bits()))
                    .or_insert(len)
            })
            .collect();
        out.push((g, ids.len()));
    }
    out
}

/// Backward sweep with an arbitrary driver `H(step, y, z)` and terminal
/// values `𝒴_{t_k}` given path by path. `states` holds the forward process
/// the conditioning is done on.
pub fn solve_bsde_with_driver(
    terminal: &[f64],
    states: &Trajectories,
    paths: &PathBundle,
    driver: &(dyn Fn(usize, f64, f64) -> f64 + Sync),
    opts: &BsdeOptions,
) -> Result<BsdeSolution> {
    let n = paths.n_paths;
    let k = paths.periods;
    let delta = paths.delta;
    if terminal.len() != n || states.n_paths != n || states.periods != k {
        return Err(MfgError::DimensionMismatch {
            left: terminal.len(),
            right: n,
        });
    }
    if let Some(v) = terminal.iter().find(|v| !v.is_finite()) {
        return Err(MfgError::NonFinite(format!("terminal value {v}")));
    }
    let groups = match opts.basis {
        ConditioningBasis::PathHistory => Some(history_groups(paths)),
        _ => None,
    };
    let mut y_values = vec![Vec::new(); k + 1];
    let mut z_values = vec![Vec::new(); k];
    let mut orth = vec![0.0; k];
    let mut fits = vec![None; k];
    y_values[k] = terminal.to_vec();
    for i in (0..k).rev() {
        let ys = states.column(i);
        let dz = paths.step_increments(i);
        let next = &y_values[i + 1];
        let (cond, z) = match (&opts.basis, &groups) {
            (ConditioningBasis::PathHistory, Some(groups)) => {
                let (g, ng) = &groups[i];
                let cond = group_means(g, *ng, next);
                let prod: Vec<f64> = (0..n)
                    .map(|p| (next[p] - cond[p]) * dz[p] / delta)
                    .collect();
                (cond, group_means(g, *ng, &prod))
            }
            (ConditioningBasis::Polynomial { degree, bumps }, _) => {
                let (mut fit, coefs) = regress(&ys, &[next], *degree, *bumps, opts.ridge)?;
                fit.coef_y = coefs[0].clone();
                let cond: Vec<f64> = ys.par_iter().map(|&y| fit.conditional_mean(y)).collect();
                let prod: Vec<f64> = (0..n)
                    .map(|p| (next[p] - cond[p]) * dz[p] / delta)
                    .collect();
                let (_, zc) = regress(&ys, &[&prod], *degree, *bumps, opts.ridge)?;
                fit.coef_z = zc[0].clone();
                let z: Vec<f64> = ys.par_iter().map(|&y| fit.z(y)).collect();
                fits[i] = Some(fit);
                (cond, z)
            }
            _ => unreachable!(),
        };
        let yi: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|p| cond[p] + delta * driver(i, ys[p], z[p]))
            .collect();
        if let Some(p) = yi.iter().position(|v| !v.is_finite()) {
            return Err(MfgError::NonFinite(format!("𝒴 at step {i}, path {p}")));
        }
        let resid: Vec<f64> = (0..n).map(|p| next[p] - cond[p] - z[p] * dz[p]).collect();
        orth[i] = correlation(&resid, &dz);
        y_values[i] = yi;
        z_values[i] = z;
    }
    Ok(BsdeSolution {
        y_values,
        z_values,
        orth_residual: orth,
        fits,
    })
}

/// `h(x, a, m, z) = L₀(x, a) + F(x, m) + z σ⁻¹ a`.
pub fn hamiltonian(
    x: f64,
    a: f64,
    m: &EmpiricalMeasure,
    z: f64,
    problem: &MfgProblem,
) -> Result<f64> {
    Ok(problem.running_cost(x, a, m)? + z * a / problem.sigma)
}

/// `argmin_{a ∈ A} h(x, a, m, z)`. Closed form `clamp(−z / (2cσ))` for
/// `L₀ = c a²`.
pub fn minimize_hamiltonian(
    x: f64,
    _m: &EmpiricalMeasure,
    z: f64,
    problem: &MfgProblem,
) -> Result<f64> {
    hamiltonian_argmin(problem, x, z, 1e-10)
}

fn hamiltonian_argmin(problem: &MfgProblem, x: f64, z: f64, tol: f64) -> Result<f64> {
    let acts = problem.actions;
    match &problem.control_cost {
        ControlCost::Quadratic { c } => Ok(acts.clamp(-z / (2.0 * c * problem.sigma))),
        l0 => Ok(minimize_scalar(
            |a| l0.eval(x, a) + z * a / problem.sigma,
            acts.lo,
            acts.hi,
            tol,
        )?
        .x),
    }
}

fn require_separated(problem: &MfgProblem) -> Result<()> {
    if !problem.control_drift.is_identity() {
        return Err(MfgError::Unsupported(
            "the BSΔE solver needs drift of the form a + b₀(x, m)".into(),
        ));
    }
    Ok(())
}

/// The uncontrolled process `Y` under the flow `flow`.
pub fn uncontrolled_paths(
    problem: &MfgProblem,
    flow: &MeasureFlow,
    paths: &PathBundle,
) -> Result<Trajectories> {
    simulate_state(
        problem,
        &FeedbackPolicy::zero(problem.periods, problem.actions),
        flow,
        paths,
    )
}

/// Solves the BSΔE with driver `H = inf_a h` for a fixed flow.
pub fn solve_bsde(
    problem: &MfgProblem,
    flow: &MeasureFlow,
    paths: &PathBundle,
    opts: &BsdeOptions,
) -> Result<BsdeSolution> {
    require_separated(problem)?;
    let y = uncontrolled_paths(problem, flow, paths)?;
    sweep(problem, flow, &y, paths, opts)
}

fn sweep(
    problem: &MfgProblem,
    flow: &MeasureFlow,
    y: &Trajectories,
    paths: &PathBundle,
    opts: &BsdeOptions,
) -> Result<BsdeSolution> {
    let k = problem.periods;
    let g = problem.terminal_g.bind(flow.at(k))?;
    let terminal: Vec<f64> = y.column(k).iter().map(|&x| g(x)).collect();
    let f: Vec<_> = (0..k)
        .map(|i| problem.coupling_f.bind(flow.at(i)))
        .collect::<Result<_>>()?;
    let driver = |i: usize, x: f64, z: f64| -> f64 {
        match hamiltonian_argmin(problem, x, z, 1e-10) {
            Ok(a) => problem.control_cost.eval(x, a) + f[i](x) + z * a / problem.sigma,
            Err(_) => f64::NAN,
        }
    };
    solve_bsde_with_driver(&terminal, y, paths, &driver, opts)
}

/// Feedback maps `α_{t_i}(y) = argmin_a h(y, a, m_{t_i}, 𝒵_{t_i}(y))`
/// tabulated on `knots` points per step over `ranges[i]`.
fn policy_from_fits(
    problem: &MfgProblem,
    sol: &BsdeSolution,
    ranges: &[(f64, f64)],
    knots: usize,
) -> Result<FeedbackPolicy> {
    let maps = (0..problem.periods)
        .map(|i| {
            let fit = sol.fits[i].as_ref().ok_or_else(|| {
                MfgError::Unsupported("feedback extraction needs a polynomial basis".into())
            })?;
            let (lo, hi) = ranges[i];
            let xs = knot_grid(lo, hi, knots);
            let ys = xs
                .iter()
                .map(|&x| hamiltonian_argmin(problem, x, fit.z(x), 1e-10))
                .collect::<Result<Vec<_>>>()?;
            PolicyMap::new(xs, ys)
        })
        .collect::<Result<Vec<_>>>()?;
    FeedbackPolicy::new(maps, problem.actions)
}

/// Per-path discrete exponential densities `dP^β/dP`.
#[derive(Clone, Debug, PartialEq)]
pub struct GirsanovWeights {
    pub log_weights: Vec<f64>,
}

impl GirsanovWeights {
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|l| l.exp()).collect()
    }

    pub fn mean(&self) -> Estimate {
        Estimate::from_samples(&self.weights())
    }
}

fn log_density_increment(beta: f64, dz: f64, sigma: f64, delta: f64) -> f64 {
    let u = beta / sigma;
    u * dz - 0.5 * u * u * delta
}

/// `exp(Σ_j σ⁻¹ β_j(Y_j) ΔZ_{j+1} − ½ Σ_j |σ⁻¹ β_j(Y_j)|² δ)` along the
/// uncontrolled paths, accumulated in log space.
pub fn girsanov_weights(
    policy: &FeedbackPolicy,
    uncontrolled: &Trajectories,
    paths: &PathBundle,
    problem: &MfgProblem,
) -> Result<GirsanovWeights> {
    if policy.periods() != paths.periods || uncontrolled.periods != paths.periods {
        return Err(MfgError::DimensionMismatch {
            left: policy.periods(),
            right: paths.periods,
        });
    }
    let log_weights = (0..paths.n_paths)
        .into_par_iter()
        .map(|p| {
            (0..paths.periods)
                .map(|j| {
                    let beta = policy.eval(j, uncontrolled.state(p, j));
                    log_density_increment(beta, paths.increment(p, j), problem.sigma, paths.delta)
                })
                .sum::<f64>()
        })
        .collect();
    Ok(GirsanovWeights { log_weights })
}

/// The controlled flow obtained by reweighting the uncontrolled particles:
/// slice `i` carries the density accumulated up to step `i`.
pub fn girsanov_flow(
    problem: &MfgProblem,
    policy: &FeedbackPolicy,
    flow: &MeasureFlow,
    paths: &PathBundle,
) -> Result<MeasureFlow> {
    require_separated(problem)?;
    let y = uncontrolled_paths(problem, flow, paths)?;
    let n = paths.n_paths;
    let mut logw = vec![0.0; n];
    let mut measures = vec![EmpiricalMeasure::uniform(y.column(0))?];
    for j in 0..problem.periods {
        logw.par_iter_mut().enumerate().for_each(|(p, l)| {
            let beta = policy.eval(j, y.state(p, j));
            *l += log_density_increment(beta, paths.increment(p, j), problem.sigma, paths.delta);
        });
        let shift = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let w: Vec<f64> = logw.iter().map(|l| (l - shift).exp()).collect();
        measures.push(EmpiricalMeasure::weighted(y.column(j + 1), w)?);
    }
    MeasureFlow::new(problem.horizon, measures)
}

#[derive(Clone, Debug)]
pub struct MfgBsdeOptions {
    pub bsde: BsdeOptions,
    pub damping: f64,
    pub max_iters: usize,
    /// Threshold on `max_i W₁(m_{t_i}, Ψ(m)_{t_i})`; defaults to
    /// `1e-3 (1 + max_i ‖m_{t_i}‖₁)` at the initial flow.
    pub tol_fp: Option<f64>,
    /// Knots per step of the extracted feedback maps.
    pub knots: usize,
    pub initial_flow: Option<MeasureFlow>,
    /// Estimate exploitability with one extra best-response sweep.
    pub exploitability: bool,
}

impl Default for MfgBsdeOptions {
    fn default() -> Self {
        MfgBsdeOptions {
            bsde: BsdeOptions::default(),
            damping: 0.5,
            max_iters: 200,
            tol_fp: None,
            knots: 257,
            initial_flow: None,
            exploitability: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MfgBsdeSolution {
    pub policy: FeedbackPolicy,
    pub flow: MeasureFlow,
    pub report: EquilibriumReport,
    /// `E[𝒴_0]` of the last sweep.
    pub bsde_value: Estimate,
}

/// One backward sweep against `flow` followed by feedback extraction.
pub fn best_response_bsde(
    problem: &MfgProblem,
    flow: &MeasureFlow,
    paths: &PathBundle,
    opts: &MfgBsdeOptions,
) -> Result<(FeedbackPolicy, BsdeSolution)> {
    require_separated(problem)?;
    let y = uncontrolled_paths(problem, flow, paths)?;
    let sol = sweep(problem, flow, &y, paths, &opts.bsde)?;
    let ranges: Vec<(f64, f64)> = (0..problem.periods)
        .map(|i| {
            let (lo, hi) = sol.fits[i]
                .as_ref()
                .map(|f| f.range())
                .unwrap_or((0.0, 0.0));
            let (mlo, mhi) = flow.at(i).min_max_1d()?;
            Ok((lo.min(mlo), hi.max(mhi)))
        })
        .collect::<Result<_>>()?;
    let policy = policy_from_fits(problem, &sol, &ranges, opts.knots)?;
    Ok((policy, sol))
}

/// The iterative scheme: backward sweep against the current flow, feedback
/// extraction, forward resimulation of the controlled state, damped
/// per-slice update of the flow.
pub fn solve_mfg_bsde(
    problem: &MfgProblem,
    paths: &PathBundle,
    opts: &MfgBsdeOptions,
) -> Result<MfgBsdeSolution> {
    problem.validate()?;
    require_separated(problem)?;
    if !(opts.damping > 0.0 && opts.damping <= 1.0) || opts.max_iters == 0 {
        return Err(MfgError::InvalidParameter(
            "damping must lie in (0, 1] and max_iters be positive".into(),
        ));
    }
    if matches!(opts.bsde.basis, ConditioningBasis::PathHistory) {
        return Err(MfgError::Unsupported(
            "the equilibrium loop needs a polynomial basis".into(),
        ));
    }
    let k = problem.periods;
    let mut flow = match &opts.initial_flow {
        Some(f) => f.clone(),
        None => simulate_consistent(problem, &FeedbackPolicy::zero(k, problem.actions), paths)?.1,
    };
    let scale = flow
        .measures()
        .iter()
        .map(|m| m.moment(1.0))
        .fold(0.0, f64::max);
    let tol_fp = opts.tol_fp.unwrap_or(1e-3 * (1.0 + scale));
    let mut history = Vec::new();
    let mut iteration = 0;
    loop {
        iteration += 1;
        let (policy, sol) = best_response_bsde(problem, &flow, paths, opts)?;
        let x = simulate_state(problem, &policy, &flow, paths)?;
        let next = x.flow(problem.horizon)?;
        let residual = (1..=k)
            .map(|i| wasserstein(flow.at(i), next.at(i), 1.0))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        history.push(residual);
        log::debug!("bsde iteration {iteration}: residual {residual:.3e}");
        let converged = residual < tol_fp;
        if converged || iteration >= opts.max_iters {
            let own = path_costs(problem, &policy, &next, paths)?;
            let (exploit, _) = if opts.exploitability {
                let (br, _) = best_response_bsde(problem, &next, paths, opts)?;
                let other = path_costs(problem, &br, &next, paths)?;
                let diff: Vec<f64> = own.iter().zip(&other).map(|(a, b)| a - b).collect();
                (Estimate::from_samples(&diff), ())
            } else {
                (
                    Estimate {
                        mean: f64::NAN,
                        stderr: f64::NAN,
                    },
                    (),
                )
            };
            let value = Estimate::from_samples(&own);
            return Ok(MfgBsdeSolution {
                policy,
                flow: next,
                report: EquilibriumReport {
                    iterations: iteration,
                    residual,
                    tol_fp,
                    converged,
                    exploitability: exploit.mean,
                    exploitability_stderr: exploit.stderr,
                    value: value.mean,
                    value_stderr: value.stderr,
                    residual_history: history,
                },
                bsde_value: sol.y0_estimate(),
            });
        }
        let mixed = (0..=k)
            .map(|i| {
                if i == 0 {
                    Ok(flow.at(0).clone())
                } else {
                    geodesic_mix(flow.at(i), next.at(i), opts.damping)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        flow = MeasureFlow::new(problem.horizon, mixed)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Field;
    use crate::model::{sample_paths, NoiseKind};

    #[test]
    fn hamiltonian_argmin_closed_form() {
        let p = MfgProblem::lq(1.0, 0.0)
            .with_sigma(1.0)
            .with_actions(-1.0, 1.0);
        let m = EmpiricalMeasure::dirac(0.0);
        assert_eq!(minimize_hamiltonian(0.3, &m, 0.0, &p).unwrap(), 0.0);
        assert_eq!(minimize_hamiltonian(0.3, &m, 1.0, &p).unwrap(), -0.5);
        assert_eq!(minimize_hamiltonian(0.3, &m, 4.0, &p).unwrap(), -1.0);
        let general = p
            .clone()
            .with_control_cost(ControlCost::general(|_, a| a * a));
        assert!((minimize_hamiltonian(0.3, &m, 1.0, &general).unwrap() + 0.5).abs() < 1e-8);
    }

    #[test]
    fn constant_terminal_and_zero_driver() {
        let p = MfgProblem::new(ControlCost::Quadratic { c: 1.0 }, Field::constant(3.0))
            .with_periods(4);
        let paths = sample_paths(&p, 500, 1).unwrap();
        let flow = simulate_consistent(&p, &FeedbackPolicy::zero(4, p.actions), &paths)
            .unwrap()
            .1;
        let y = uncontrolled_paths(&p, &flow, &paths).unwrap();
        let sol = solve_bsde_with_driver(
            &[3.0; 500],
            &y,
            &paths,
            &|_, _, _| 0.0,
            &BsdeOptions::default(),
        )
        .unwrap();
        for i in 0..4 {
            assert!(sol.y_values[i].iter().all(|v| (v - 3.0).abs() < 1e-10));
            assert!(sol.z_values[i].iter().all(|z| z.abs() < 1e-10));
        }
    }

    #[test]
    fn zero_policy_has_unit_weights() {
        let p = MfgProblem::lq(1.0, 0.0).with_periods(3);
        let paths = sample_paths(&p, 100, 2).unwrap();
        let flow = simulate_consistent(&p, &FeedbackPolicy::zero(3, p.actions), &paths)
            .unwrap()
            .1;
        let y = uncontrolled_paths(&p, &flow, &paths).unwrap();
        let w = girsanov_weights(&FeedbackPolicy::zero(3, p.actions), &y, &paths, &p).unwrap();
        assert!(w.weights().iter().all(|w| *w == 1.0));
    }

    #[test]
    fn history_groups_split_on_increments() {
        let paths = PathBundle::from_parts(
            vec![0.0; 4],
            vec![1.0, 1.0, 1.0, -1.0, -1.0, 1.0, -1.0, -1.0],
            2,
            1.0,
            NoiseKind::Rademacher,
        )
        .unwrap();
        let g = history_groups(&paths);
        assert_eq!(g[0].1, 1);
        assert_eq!(g[1].0, vec![0, 0, 1, 1]);
        assert_eq!(g[2].1, 4);
    }

    #[test]
    fn regression_recovers_polynomials() {
        let ys: Vec<f64> = (0..1000).map(|j| -2.0 + 4.0 * j as f64 / 999.0).collect();
        let t: Vec<f64> = ys.iter().map(|y| 1.0 - 2.0 * y + 0.5 * y * y * y).collect();
        let (mut fit, c) = regress(&ys, &[&t], 3, true, 1e-12).unwrap();
        fit.coef_y = c[0].clone();
        for y in [-1.5, 0.0, 0.7, 2.0] {
            assert!((fit.conditional_mean(y) - (1.0 - 2.0 * y + 0.5 * y * y * y)).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_regressor_uses_constant_basis() {
        let ys = vec![1.0; 10];
        let t: Vec<f64> = (0..10).map(f64::from).collect();
        let (mut fit, c) = regress(&ys, &[&t], 3, true, 1e-8).unwrap();
        fit.coef_y = c[0].clone();
        assert!((fit.conditional_mean(1.0) - 4.5).abs() < 1e-6);
    }
}
