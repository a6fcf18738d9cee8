//! The single-period game: pointwise best responses, the fixed-point map
//! `Ψ(m) = law(X^{a*(·, m_ξ, m)})`, and damped Picard iteration on it.
//!
//! For a population at the initial law `μ` and a candidate terminal law `m`,
//! an agent starting at `x` minimizes
//!
//! ```text
//! a ↦ (L₀(x, a) + F(x, μ)) δ + E[g(x + (β(a) + b₀(x, μ)) δ + σΔZ, m)].
//! ```
//!
//! The expectation uses a fixed [`Quadrature`]; the population's own noise is
//! frozen across iterations, so `Ψ` is a deterministic map of `m`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::field::{MeasureField, StateFn};
use crate::measures::{geodesic_mix, wasserstein, EmpiricalMeasure};
use crate::model::{MfgProblem, PathBundle};
use crate::optimize::{minimize_scalar, Minimum};
use crate::policy::{FeedbackPolicy, PolicyMap};
use crate::quadrature::{Quadrature, QuadratureRule};
use crate::stats::{pairwise_sum, Estimate};

/// `moment(m, p) <= cap` must hold for every iterate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCap {
    pub p: f64,
    pub cap: f64,
}

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Weight of `Ψ(m_n)` in the geodesic mix; 1 is plain Picard iteration.
    pub damping: f64,
    pub max_iters: usize,
    /// Stopping threshold on `W₁(m_n, Ψ(m_n))`. Defaults to
    /// `1e-3 (1 + ‖m₀‖₁)`.
    pub tol_fp: Option<f64>,
    /// Argument tolerance of the pointwise minimizer.
    pub tol_a: f64,
    pub quadrature: QuadratureRule,
    pub moment_cap: Option<MomentCap>,
    /// Knots of the fitted feedback map.
    pub knots: usize,
    /// Particles used by the exploitability estimate (evenly strided); 0
    /// means all.
    pub exploitability_samples: usize,
    /// Skip the exploitability estimate (reported as NaN).
    pub skip_exploitability: bool,
    /// Starting iterate `m₀`; defaults to the law of the uncontrolled state.
    pub initial_guess: Option<EmpiricalMeasure>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            damping: 0.5,
            max_iters: 200,
            tol_fp: None,
            tol_a: 1e-8,
            quadrature: QuadratureRule::Auto,
            moment_cap: None,
            knots: 129,
            exploitability_samples: 20_000,
            skip_exploitability: false,
            initial_guess: None,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(MfgError::InvalidParameter(format!(
                "damping {} outside (0, 1]",
                self.damping
            )));
        }
        if let Some(t) = self.tol_fp {
            if !(t > 0.0) {
                return Err(MfgError::InvalidParameter(format!(
                    "tol_fp = {t} must be positive"
                )));
            }
        }
        if !(self.tol_a > 0.0) {
            return Err(MfgError::InvalidParameter(format!(
                "tol_a = {} must be positive",
                self.tol_a
            )));
        }
        if self.max_iters == 0 || self.knots == 0 {
            return Err(MfgError::InvalidParameter(
                "max_iters and knots must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    pub iterations: usize,
    /// `W₁(m_n, Ψ(m_n))` at the last iterate.
    pub residual: f64,
    pub tol_fp: f64,
    pub converged: bool,
    pub exploitability: f64,
    pub exploitability_stderr: f64,
    /// Expected cost of the returned policy against the returned measure.
    pub value: f64,
    pub value_stderr: f64,
    pub residual_history: Vec<f64>,
}

/// Constants of the growth assumptions entering the a-priori moment bound.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthConstants {
    pub p: f64,
    pub q: f64,
    /// Growth of the drift.
    pub c_b: f64,
    /// Upper growth of the running cost.
    pub c_l_upper: f64,
    /// Growth of the terminal cost.
    pub c_g: f64,
    /// Coercivity of the running cost in the action.
    pub c_l: f64,
}

/// `K = 4^p (2 + E|ξ|^p + (C_J + C_G)/(c_L δ) + E|Z|^p)` with
/// `C_J = 2 max(C_L, 16^q C_b ∨ 1)(1 + E|ξ|^q + E|Z|^q)`; moments of `ξ` and
/// of the period noise `Z` are taken empirically from the samples.
pub fn moment_cap_k(g: &GrowthConstants, delta: f64, xi: &[f64], noise: &[f64]) -> Result<f64> {
    if !(g.c_l > 0.0 && delta > 0.0 && g.p >= 1.0 && g.q >= 1.0) {
        return Err(MfgError::InvalidParameter(
            "moment cap needs c_L > 0, δ > 0, p, q >= 1".into(),
        ));
    }
    let abs_moment = |xs: &[f64], p: f64| {
        let v: Vec<f64> = xs.iter().map(|x| x.abs().powf(p)).collect();
        pairwise_sum(&v) / xs.len().max(1) as f64
    };
    let c_j = 2.0
        * g.c_l_upper.max((16f64.powf(g.q) * g.c_b).max(1.0))
        * (1.0 + abs_moment(xi, g.q) + abs_moment(noise, g.q));
    Ok(4f64.powf(g.p)
        * (2.0 + abs_moment(xi, g.p) + (c_j + g.c_g) / (g.c_l * delta) + abs_moment(noise, g.p)))
}

/// The per-agent objective of one period with both measures frozen.
#[derive(Clone)]
pub(crate) struct PeriodObjective {
    pub problem: MfgProblem,
    pub f: StateFn,
    pub b0: StateFn,
    pub g: StateFn,
    pub quad: Quadrature,
    pub scale: f64,
    pub delta: f64,
}

impl PeriodObjective {
    pub fn new(
        problem: &MfgProblem,
        mu: &EmpiricalMeasure,
        g: StateFn,
        quad: &Quadrature,
    ) -> Result<Self> {
        Ok(PeriodObjective {
            problem: problem.clone(),
            quad: quad.clone(),
            f: problem.coupling_f.bind(mu)?,
            b0: problem.drift_b0.bind(mu)?,
            g,
            scale: problem.noise_scale(),
            delta: problem.delta(),
        })
    }

    #[inline]
    pub fn value(&self, x: f64, a: f64) -> f64 {
        let p = &self.problem;
        let drift = (p.control_drift.eval(a) + (self.b0)(x)) * self.delta;
        let running = (p.control_cost.eval(x, a) + (self.f)(x)) * self.delta;
        running + self.quad.expect(self.scale, |z| (self.g)(x + drift + z))
    }

    pub fn best(&self, x: f64, tol: f64) -> Result<Minimum> {
        let acts = self.problem.actions;
        minimize_scalar(|a| self.value(x, a), acts.lo, acts.hi, tol)
    }

    /// The terminal law reached from `states` under `map`, particle by
    /// particle with the frozen noise.
    pub fn pushforward(
        &self,
        states: &EmpiricalMeasure,
        noise: &[f64],
        map: &PolicyMap,
    ) -> Result<EmpiricalMeasure> {
        let p = &self.problem;
        let pts: Vec<f64> = states
            .points()
            .par_iter()
            .zip(noise.par_iter())
            .map(|(&x, &z)| {
                let a = p.actions.clamp(map.eval_raw(x));
                x + (p.control_drift.eval(a) + (self.b0)(x)) * self.delta + z
            })
            .collect();
        if let Some(x) = pts.iter().find(|x| !x.is_finite()) {
            return Err(MfgError::NonFinite(format!("pushforward produced {x}")));
        }
        EmpiricalMeasure::weighted(pts, states.weights().to_vec())
    }
}

/// Knots for a feedback map fitted on `states`: half uniform over the range,
/// half at quantiles.
pub(crate) fn policy_knots(states: &EmpiricalMeasure, n: usize) -> Result<Vec<f64>> {
    let (lo, hi) = states.min_max_1d()?;
    if !(hi > lo) || n < 2 {
        return Ok(vec![lo]);
    }
    let half = (n / 2).max(2);
    let mut xs: Vec<f64> = (0..half)
        .map(|i| lo + (hi - lo) * i as f64 / (half - 1) as f64)
        .collect();
    let sorted = states.sorted()?;
    for i in 1..n - half {
        xs.push(sorted.quantile(i as f64 / (n - half) as f64));
    }
    xs.sort_by(f64::total_cmp);
    let min_gap = 1e-9 * (hi - lo);
    let mut out: Vec<f64> = Vec::with_capacity(xs.len());
    for x in xs {
        if out.last().is_none_or(|&l| x - l > min_gap) {
            out.push(x);
        }
    }
    if *out.last().unwrap() < hi {
        *out.last_mut().unwrap() = hi;
    }
    Ok(out)
}

pub(crate) fn fit_best_response(
    obj: &PeriodObjective,
    knots: &[f64],
    tol: f64,
) -> Result<PolicyMap> {
    let ys = knots
        .par_iter()
        .map(|&x| obj.best(x, tol).map(|m| m.x))
        .collect::<Result<Vec<_>>>()?;
    PolicyMap::new(knots.to_vec(), ys)
}

/// A single-period game instance: the initial cloud (law `μ`) and the frozen
/// per-particle state noise `σΔZ`.
pub struct PeriodInput<'a> {
    pub states: &'a EmpiricalMeasure,
    pub noise: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct PeriodSolution {
    pub policy: PolicyMap,
    /// `Ψ(m_n)` particle by particle, aligned with the input states.
    pub measure: EmpiricalMeasure,
    pub report: EquilibriumReport,
}

/// Damped Picard iteration for one period with terminal cost `terminal`.
pub fn solve_period(
    problem: &MfgProblem,
    input: &PeriodInput,
    terminal: &dyn MeasureField,
    opts: &SolverOptions,
) -> Result<PeriodSolution> {
    problem.validate()?;
    opts.validate()?;
    let mu = input.states;
    if input.noise.len() != mu.len() {
        return Err(MfgError::DimensionMismatch {
            left: input.noise.len(),
            right: mu.len(),
        });
    }
    let quad = Quadrature::for_noise(problem.noise, opts.quadrature)?;
    let knots = policy_knots(mu, opts.knots)?;
    let zero = PolicyMap::constant(0.0);
    let psi = |m: &EmpiricalMeasure| -> Result<(PolicyMap, EmpiricalMeasure)> {
        let obj = PeriodObjective::new(problem, mu, terminal.bind(m)?, &quad)?;
        let map = fit_best_response(&obj, &knots, opts.tol_a)?;
        let next = obj.pushforward(mu, input.noise, &map)?;
        Ok((map, next))
    };
    let mut m = match &opts.initial_guess {
        Some(g) => g.clone(),
        None => {
            let obj = PeriodObjective::new(problem, mu, terminal.bind(mu)?, &quad)?;
            obj.pushforward(mu, input.noise, &zero)?
        }
    };
    let tol_fp = opts.tol_fp.unwrap_or(1e-3 * (1.0 + m.moment(1.0)));
    let mut history = Vec::new();
    let mut iteration = 0;
    loop {
        iteration += 1;
        if let Some(cap) = opts.moment_cap {
            let moment = m.moment(cap.p);
            if moment > cap.cap {
                return Err(MfgError::MomentCapExceeded {
                    iteration,
                    moment,
                    cap: cap.cap,
                });
            }
        }
        let (map, next) = psi(&m)?;
        let residual = wasserstein(&m, &next, 1.0)?;
        history.push(residual);
        let converged = residual < tol_fp;
        if converged || iteration >= opts.max_iters {
            log::debug!(
                "period solve stopped after {iteration} iterations, residual {residual:.3e}"
            );
            let final_obj = PeriodObjective::new(problem, mu, terminal.bind(&next)?, &quad)?;
            let (exploit, value) = exploitability_of(&final_obj, mu, &map, opts)?;
            return Ok(PeriodSolution {
                policy: map,
                measure: next,
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
            });
        }
        m = geodesic_mix(&m, &next, opts.damping)?;
    }
}

/// Per-particle `J(map) − min_a J` and `J(map)` over a strided subsample.
pub(crate) fn exploitability_of(
    obj: &PeriodObjective,
    mu: &EmpiricalMeasure,
    map: &PolicyMap,
    opts: &SolverOptions,
) -> Result<(Estimate, Estimate)> {
    if opts.skip_exploitability {
        let nan = Estimate {
            mean: f64::NAN,
            stderr: f64::NAN,
        };
        return Ok((nan, nan));
    }
    let n = mu.len();
    let stride = if opts.exploitability_samples == 0 {
        1
    } else {
        n.div_ceil(opts.exploitability_samples)
    };
    let idx: Vec<usize> = (0..n).step_by(stride).collect();
    let acts = obj.problem.actions;
    let rows = idx
        .par_iter()
        .map(|&j| {
            let x = mu.points()[j];
            let own = obj.value(x, acts.clamp(map.eval_raw(x)));
            let best = obj.best(x, opts.tol_a)?;
            Ok(((own - best.value.min(own)), own))
        })
        .collect::<Result<Vec<(f64, f64)>>>()?;
    let ws: Vec<f64> = idx.iter().map(|&j| mu.weights()[j]).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let vals: Vec<f64> = rows.iter().map(|r| r.1).collect();
    Ok((
        Estimate::weighted(&gaps, &ws),
        Estimate::weighted(&vals, &ws),
    ))
}

/// Output of [`solve_single_period`].
#[derive(Clone, Debug)]
pub struct SinglePeriodSolution {
    pub policy: FeedbackPolicy,
    pub measure: EmpiricalMeasure,
    pub report: EquilibriumReport,
}

fn single_period_input(
    problem: &MfgProblem,
    paths: &PathBundle,
) -> Result<(EmpiricalMeasure, Vec<f64>)> {
    if problem.periods != 1 || paths.periods != 1 {
        return Err(MfgError::InvalidParameter(format!(
            "single-period solver needs k = 1 (problem has {}, paths have {})",
            problem.periods, paths.periods
        )));
    }
    let noise = paths
        .increments()
        .iter()
        .map(|dz| problem.sigma * dz)
        .collect();
    Ok((paths.initial_measure()?, noise))
}

/// Equilibrium of the one-period game with initial states `paths.xi()` and
/// noise `σ ΔZ_1`. Non-convergence is reported, not raised.
pub fn solve_single_period(
    problem: &MfgProblem,
    terminal: &dyn MeasureField,
    opts: &SolverOptions,
    paths: &PathBundle,
) -> Result<SinglePeriodSolution> {
    let (mu, noise) = single_period_input(problem, paths)?;
    let sol = solve_period(
        problem,
        &PeriodInput {
            states: &mu,
            noise: &noise,
        },
        terminal,
        opts,
    )?;
    Ok(SinglePeriodSolution {
        policy: FeedbackPolicy::new(vec![sol.policy], problem.actions)?,
        measure: sol.measure,
        report: sol.report,
    })
}

/// Minimizer of the one-period objective at `x` for initial law `mu` and
/// terminal law `m`. Ties resolve to the smallest |a|.
pub fn best_response_pointwise(
    x: f64,
    mu: &EmpiricalMeasure,
    m: &EmpiricalMeasure,
    terminal: &dyn MeasureField,
    problem: &MfgProblem,
    opts: &SolverOptions,
) -> Result<f64> {
    let quad = Quadrature::for_noise(problem.noise, opts.quadrature)?;
    let obj = PeriodObjective::new(problem, mu, terminal.bind(m)?, &quad)?;
    Ok(obj.best(x, opts.tol_a)?.x)
}

/// The one-period objective itself, for probing optimality.
pub fn period_objective(
    x: f64,
    a: f64,
    mu: &EmpiricalMeasure,
    m: &EmpiricalMeasure,
    terminal: &dyn MeasureField,
    problem: &MfgProblem,
    opts: &SolverOptions,
) -> Result<f64> {
    let quad = Quadrature::for_noise(problem.noise, opts.quadrature)?;
    Ok(PeriodObjective::new(problem, mu, terminal.bind(m)?, &quad)?.value(x, a))
}

/// `J_m(policy) − J_m(best response to m)` over the initial states of
/// `paths`, with the noise integrated by the configured quadrature.
pub fn exploitability(
    problem: &MfgProblem,
    policy: &FeedbackPolicy,
    m: &EmpiricalMeasure,
    terminal: &dyn MeasureField,
    paths: &PathBundle,
    opts: &SolverOptions,
) -> Result<Estimate> {
    let (mu, _) = single_period_input(problem, paths)?;
    let quad = Quadrature::for_noise(problem.noise, opts.quadrature)?;
    let obj = PeriodObjective::new(problem, &mu, terminal.bind(m)?, &quad)?;
    Ok(exploitability_of(&obj, &mu, policy.map(0), opts)?.0)
}
