//! Multi-period equilibria by pasting single-period ones.
//!
//! Stage value functions are defined backwards from `g_k = G` by
//!
//! ```text
//! g_{i-1}(x, μ) = inf_a (L(x, a, μ) δ + E[g_i(x + b δ + σΔZ, m^{μ, g_i})]),
//! ```
//!
//! where `m^{μ, g_i}` is the equilibrium of the period game started from `μ`
//! with terminal cost `g_i`. The forward pass then solves period `i` from the
//! law reached at `t_{i-1}` with terminal cost `g_i`.
//!
//! `g_i` is never tabulated in its measure argument. Binding a stage to a
//! measure solves the sub-equilibrium once, tabulates `g_i(·, μ)` on a state
//! grid and caches the result under the measure's quantile fingerprint.
//! The LQ family skips the recursion: its stages are `q_i (x − m̄)² + r_i`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::{lq_g_recursion, LqParams};
use crate::error::{MfgError, Result};
use crate::field::{MeasureField, StateFn};
use crate::measures::{EmpiricalMeasure, Fingerprint, MeasureFlow};
use crate::model::{Family, MfgProblem, NoiseKind, PathBundle};
use crate::policy::FeedbackPolicy;
use crate::quadrature::Quadrature;
use crate::rng::PathRng;
use crate::single_period::{
    solve_period, EquilibriumReport, PeriodInput, PeriodObjective, SolverOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PastingMode {
    /// Closed-form stages for the LQ family, recursion otherwise.
    Auto,
    /// Always recurse, even for LQ.
    Generic,
    /// Closed-form stages; fails outside the LQ family.
    Symbolic,
}

#[derive(Clone, Debug)]
pub struct PastingOptions {
    pub solver: SolverOptions,
    pub mode: PastingMode,
    /// Points of the state grid on which a bound `g_i(·, μ)` is tabulated.
    pub grid_points: usize,
    /// Largest `k` accepted by the generic recursion.
    pub max_generic_periods: usize,
    /// Sub-equilibria are solved on at most this many quantile
    /// representatives of `μ`.
    pub sub_particles: usize,
    /// Seed of the noise draws used inside sub-equilibria.
    pub sub_seed: u64,
}

impl Default for PastingOptions {
    fn default() -> Self {
        PastingOptions {
            solver: SolverOptions::default(),
            mode: PastingMode::Auto,
            grid_points: 513,
            max_generic_periods: 3,
            sub_particles: 4000,
            sub_seed: 0x9e37_79b9,
        }
    }
}

struct StageTable {
    g: StateFn,
}

struct Context {
    problem: MfgProblem,
    opts: PastingOptions,
    quad: Quadrature,
    symbolic: Option<Vec<(f64, f64)>>,
    caches: Vec<Mutex<HashMap<Fingerprint, Arc<StageTable>>>>,
}

/// The family `g_0, …, g_k` of stage value functions of one problem.
#[derive(Clone)]
pub struct ValueFunctions {
    ctx: Arc<Context>,
}

/// `g_i`, usable as a terminal cost.
#[derive(Clone)]
pub struct ValueFunctionStage {
    stage: usize,
    ctx: Arc<Context>,
}

fn lq_params(problem: &MfgProblem) -> Option<LqParams> {
    match problem.family {
        Family::Lq { c, c_l } => {
            let noise_var = match problem.noise {
                NoiseKind::Zero => 0.0,
                _ => problem.sigma * problem.sigma * problem.delta(),
            };
            Some(LqParams::new(c, c_l, noise_var).with_delta(problem.delta()))
        }
        _ => None,
    }
}

impl ValueFunctions {
    pub fn new(problem: &MfgProblem, opts: &PastingOptions) -> Result<Self> {
        problem.validate()?;
        opts.solver.validate()?;
        let k = problem.periods;
        let lq = lq_params(problem);
        let symbolic = match (opts.mode, lq) {
            (PastingMode::Generic, _) | (PastingMode::Auto, None) => None,
            (_, Some(p)) => Some(lq_g_recursion(&p, k)?.iter().map(|s| (s.q, s.r)).collect()),
            (PastingMode::Symbolic, None) => {
                return Err(MfgError::Unsupported(
                    "closed-form stages exist only for the LQ family".into(),
                ))
            }
        };
        if symbolic.is_none() && k > opts.max_generic_periods {
            return Err(MfgError::RecursionBudget {
                periods: k,
                max: opts.max_generic_periods,
            });
        }
        if opts.grid_points < 3 {
            return Err(MfgError::InvalidParameter(
                "value-function grid needs at least 3 points".into(),
            ));
        }
        Ok(ValueFunctions {
            ctx: Arc::new(Context {
                problem: problem.clone(),
                opts: opts.clone(),
                quad: Quadrature::for_noise(problem.noise, opts.solver.quadrature)?,
                symbolic,
                caches: (0..=k).map(|_| Mutex::new(HashMap::new())).collect(),
            }),
        })
    }

    pub fn stage(&self, i: usize) -> Result<ValueFunctionStage> {
        if i > self.ctx.problem.periods {
            return Err(MfgError::InvalidParameter(format!(
                "stage {i} beyond k = {}",
                self.ctx.problem.periods
            )));
        }
        Ok(ValueFunctionStage {
            stage: i,
            ctx: self.ctx.clone(),
        })
    }

    pub fn is_symbolic(&self) -> bool {
        self.ctx.symbolic.is_some()
    }

    /// Number of cached sub-equilibria at stage `i`.
    pub fn cached(&self, i: usize) -> usize {
        self.ctx.caches[i].lock().unwrap().len()
    }
}

impl ValueFunctionStage {
    pub fn index(&self) -> usize {
        self.stage
    }

    fn sub_input(&self, mu: &EmpiricalMeasure) -> Result<(EmpiricalMeasure, Vec<f64>)> {
        let ctx = &self.ctx;
        let n = ctx.opts.sub_particles.max(1);
        let states = if mu.len() <= n {
            mu.clone()
        } else {
            let sorted = mu.sorted()?;
            EmpiricalMeasure::uniform(
                (0..n)
                    .map(|j| sorted.quantile((j as f64 + 0.5) / n as f64))
                    .collect(),
            )?
        };
        let scale = ctx.problem.noise_scale();
        // antithetic pairs keep the empirical noise mean at zero
        let noise = (0..states.len())
            .map(|j| {
                let mut rng = PathRng::new(ctx.opts.sub_seed ^ self.stage as u64, (j / 2) as u64);
                let z = scale * rng.standard_increment(ctx.problem.noise);
                if j % 2 == 0 {
                    z
                } else {
                    -z
                }
            })
            .collect();
        Ok((states, noise))
    }

    fn compute(&self, mu: &EmpiricalMeasure) -> Result<StageTable> {
        let ctx = &self.ctx;
        let next = ValueFunctionStage {
            stage: self.stage + 1,
            ctx: ctx.clone(),
        };
        let (states, noise) = self.sub_input(mu)?;
        let mut sub_opts = ctx.opts.solver.clone();
        sub_opts.skip_exploitability = true;
        sub_opts.initial_guess = None;
        let sub = solve_period(
            &ctx.problem,
            &PeriodInput {
                states: &states,
                noise: &noise,
            },
            &next,
            &sub_opts,
        )?;
        if !sub.report.converged {
            return Err(MfgError::StageNotConverged {
                stage: self.stage + 1,
                residual: sub.report.residual,
            });
        }
        let obj = Arc::new(PeriodObjective::new(
            &ctx.problem,
            mu,
            next.bind(&sub.measure)?,
            &ctx.quad,
        )?);
        let (lo, hi) = mu.min_max_1d()?;
        let acts = ctx.problem.actions;
        let reach = acts.lo.abs().max(acts.hi.abs()) * ctx.problem.delta();
        let pad = 8.5 * ctx.problem.noise_scale() + reach + 0.1 * (hi - lo) + 1e-6;
        let tol = ctx.opts.solver.tol_a;
        let table = HermiteTable::build(lo - pad, hi + pad, ctx.opts.grid_points, |x| {
            obj.best(x, tol).map(|m| m.value)
        })?;
        let g: StateFn = Arc::new(move |x| match table.eval(x) {
            Some(v) => v,
            None => obj.best(x, tol).map(|m| m.value).unwrap_or(f64::NAN),
        });
        Ok(StageTable { g })
    }
}

impl MeasureField for ValueFunctionStage {
    fn bind(&self, mu: &EmpiricalMeasure) -> Result<StateFn> {
        let ctx = &self.ctx;
        let k = ctx.problem.periods;
        if self.stage == k {
            return ctx.problem.terminal_g.bind(mu);
        }
        if let Some(coeffs) = &ctx.symbolic {
            let (q, r) = coeffs[self.stage];
            let mbar = mu.mean_1d()?;
            return Ok(Arc::new(move |x| q * (x - mbar) * (x - mbar) + r));
        }
        let key = mu.fingerprint()?;
        if let Some(t) = ctx.caches[self.stage].lock().unwrap().get(&key) {
            return Ok(t.g.clone());
        }
        let table = Arc::new(self.compute(mu)?);
        let mut cache = ctx.caches[self.stage].lock().unwrap();
        Ok(cache.entry(key).or_insert(table).g.clone())
    }
}

/// `g_i(x, μ)`.
pub fn value_function_eval(
    stage: &ValueFunctionStage,
    x: f64,
    mu: &EmpiricalMeasure,
) -> Result<f64> {
    let v = stage.bind(mu)?(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MfgError::NonFinite(format!("g_{} at x = {x}", stage.stage)))
    }
}

/// Cubic Hermite interpolation on a uniform grid with three-point slopes.
/// Exact for quadratics.
struct HermiteTable {
    lo: f64,
    h: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl HermiteTable {
    fn build(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> Result<f64> + Sync) -> Result<Self> {
        let h = (hi - lo) / (n - 1) as f64;
        let values = (0..n)
            .into_par_iter()
            .map(|j| f(lo + h * j as f64))
            .collect::<Result<Vec<_>>>()?;
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(MfgError::NonFinite(format!("value function {v}")));
        }
        let mut slopes = vec![0.0; n];
        for j in 0..n {
            slopes[j] = if j == 0 {
                (-3.0 * values[0] + 4.0 * values[1] - values[2]) / (2.0 * h)
            } else if j == n - 1 {
                (3.0 * values[n - 1] - 4.0 * values[n - 2] + values[n - 3]) / (2.0 * h)
            } else {
                (values[j + 1] - values[j - 1]) / (2.0 * h)
            };
        }
        Ok(HermiteTable {
            lo,
            h,
            values,
            slopes,
        })
    }

    fn eval(&self, x: f64) -> Option<f64> {
        let u = (x - self.lo) / self.h;
        let n = self.values.len();
        if !(u >= 0.0 && u <= (n - 1) as f64) {
            return None;
        }
        let j = (u.floor() as usize).min(n - 2);
        let t = u - j as f64;
        let (t2, t3) = (t * t, t * t * t);
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        Some(
            h00 * self.values[j]
                + h10 * self.h * self.slopes[j]
                + h01 * self.values[j + 1]
                + h11 * self.h * self.slopes[j + 1],
        )
    }
}

/// Output of [`paste_equilibrium`].
#[derive(Clone)]
pub struct PastingSolution {
    pub policy: FeedbackPolicy,
    pub flow: MeasureFlow,
    /// One report per period, in time order.
    pub reports: Vec<EquilibriumReport>,
    /// `states[i][p]` is `X_{t_i}` of path `p` along the pasted equilibrium.
    pub states: Vec<Vec<f64>>,
    pub value_functions: ValueFunctions,
}

/// Forward pass: period `i` is solved from the law reached at `t_{i-1}` with
/// terminal cost `g_i`, reusing the bundle's noise.
pub fn paste_equilibrium(
    problem: &MfgProblem,
    paths: &PathBundle,
    opts: &PastingOptions,
) -> Result<PastingSolution> {
    let vf = ValueFunctions::new(problem, opts)?;
    let k = problem.periods;
    if paths.periods != k {
        return Err(MfgError::DimensionMismatch {
            left: paths.periods,
            right: k,
        });
    }
    let mut states = paths.initial_measure()?;
    let mut flow = vec![states.clone()];
    let mut columns = vec![paths.xi().to_vec()];
    let mut maps = Vec::with_capacity(k);
    let mut reports = Vec::with_capacity(k);
    for i in 1..=k {
        let noise: Vec<f64> = paths
            .step_increments(i - 1)
            .iter()
            .map(|dz| problem.sigma * dz)
            .collect();
        let stage = vf.stage(i)?;
        let sol = solve_period(
            problem,
            &PeriodInput {
                states: &states,
                noise: &noise,
            },
            &stage,
            &opts.solver,
        )?;
        if !sol.report.converged {
            return Err(MfgError::StageNotConverged {
                stage: i,
                residual: sol.report.residual,
            });
        }
        log::info!(
            "pasting: period {i} of {k} converged in {} iterations",
            sol.report.iterations
        );
        maps.push(sol.policy);
        reports.push(sol.report);
        states = sol.measure;
        columns.push(states.points().to_vec());
        flow.push(states.clone());
    }
    Ok(PastingSolution {
        policy: FeedbackPolicy::new(maps, problem.actions)?,
        flow: MeasureFlow::new(problem.horizon, flow)?,
        reports,
        states: columns,
        value_functions: vf,
    })
}
