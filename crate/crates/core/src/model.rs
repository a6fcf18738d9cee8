//! Problem definitions, noise sampling and forward simulation.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::field::{Field, MeasureField};
use crate::measures::{format_f64, EmpiricalMeasure, MeasureFlow};
use crate::policy::FeedbackPolicy;
use crate::rng::PathRng;
use crate::stats::Estimate;

/// Law of the standardized noise increments `ΔZ / √δ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Gaussian,
    /// `±√δ` with equal probability.
    Rademacher,
    Zero,
}

#[derive(Clone)]
pub enum InitialLaw {
    Normal {
        mean: f64,
        std: f64,
    },
    Uniform {
        lo: f64,
        hi: f64,
    },
    Dirac(f64),
    /// Path `p` starts at `samples[p % len]`.
    Samples(Arc<[f64]>),
}

impl InitialLaw {
    fn draw(&self, rng: &mut PathRng, path: usize) -> f64 {
        match self {
            InitialLaw::Normal { mean, std } => mean + std * rng.normal(),
            InitialLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.uniform(),
            InitialLaw::Dirac(x) => {
                rng.uniform();
                *x
            }
            InitialLaw::Samples(s) => {
                rng.uniform();
                s[path % s.len()]
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            InitialLaw::Normal { mean, std } => mean.is_finite() && std.is_finite() && *std >= 0.0,
            InitialLaw::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
            InitialLaw::Dirac(x) => x.is_finite(),
            InitialLaw::Samples(s) => !s.is_empty() && s.iter().all(|x| x.is_finite()),
        };
        if ok {
            Ok(())
        } else {
            Err(MfgError::InvalidParameter("invalid initial law".into()))
        }
    }
}

impl fmt::Debug for InitialLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialLaw::Normal { mean, std } => write!(f, "Normal({mean}, {std})"),
            InitialLaw::Uniform { lo, hi } => write!(f, "Uniform({lo}, {hi})"),
            InitialLaw::Dirac(x) => write!(f, "Dirac({x})"),
            InitialLaw::Samples(s) => write!(f, "Samples(n = {})", s.len()),
        }
    }
}

/// The closed action interval `[lo, hi]`, which must contain 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSet {
    pub lo: f64,
    pub hi: f64,
}

impl ActionSet {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        let a = ActionSet { lo, hi };
        a.validate()?;
        Ok(a)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= 0.0 && 0.0 <= self.hi) {
            return Err(MfgError::InvalidParameter(format!(
                "action set [{}, {}] must be bounded and contain 0",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn clamp(&self, a: f64) -> f64 {
        a.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, a: f64) -> bool {
        (self.lo..=self.hi).contains(&a)
    }
}

type Fn2 = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// The control part `L₀(x, a)` of the running cost.
#[derive(Clone)]
pub enum ControlCost {
    /// `c a²`.
    Quadratic {
        c: f64,
    },
    General(Fn2),
}

impl ControlCost {
    pub fn general(f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        ControlCost::General(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, x: f64, a: f64) -> f64 {
        match self {
            ControlCost::Quadratic { c } => c * a * a,
            ControlCost::General(f) => f(x, a),
        }
    }

    fn scaled(&self, s: f64) -> Self {
        match self {
            ControlCost::Quadratic { c } => ControlCost::Quadratic { c: c * s },
            ControlCost::General(f) => {
                let f = f.clone();
                ControlCost::General(Arc::new(move |x, a| s * f(x, a)))
            }
        }
    }
}

impl fmt::Debug for ControlCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlCost::Quadratic { c } => write!(f, "Quadratic({c})"),
            ControlCost::General(_) => f.write_str("General(..)"),
        }
    }
}

/// How the action enters the drift: `b = β(a) + b₀(x, m)`.
#[derive(Clone)]
pub enum ControlDrift {
    Identity,
    Custom(Fn1),
}

impl ControlDrift {
    pub fn custom(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ControlDrift::Custom(Arc::new(f))
    }

    #[inline]
    pub fn eval(&self, a: f64) -> f64 {
        match self {
            ControlDrift::Identity => a,
            ControlDrift::Custom(f) => f(a),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, ControlDrift::Identity)
    }
}

impl fmt::Debug for ControlDrift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlDrift::Identity => f.write_str("Identity"),
            ControlDrift::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Which built-in family the coefficients came from. Solvers use it only to
/// unlock closed forms; any coefficient edit resets it to `Custom`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `L₀ = c a²`, `F = c_L (x − m̄)²`, `G = (x − m̄)²`, `b = a`.
    Lq {
        c: f64,
        c_l: f64,
    },
    /// `L₀ = c a²`, `F = 0`, `G = (x − m̄)²`, `b = scale · tanh(a)`.
    Tanh {
        c: f64,
        scale: f64,
    },
    Custom,
}

/// A one-dimensional discrete-time mean field game.
#[derive(Clone, Debug)]
pub struct MfgProblem {
    pub drift_b0: Field,
    pub control_drift: ControlDrift,
    pub control_cost: ControlCost,
    pub coupling_f: Field,
    pub terminal_g: Field,
    pub actions: ActionSet,
    pub sigma: f64,
    pub horizon: f64,
    pub periods: usize,
    pub noise: NoiseKind,
    pub initial: InitialLaw,
    pub family: Family,
}

fn centered_square() -> Field {
    Field::of_mean(|x, mbar| (x - mbar) * (x - mbar))
}

impl MfgProblem {
    /// Zero drift and coupling, unit horizon, one period, `σ = 1`, actions in
    /// `[-10, 10]`, Gaussian noise and `ξ ~ N(0, 1)`.
    pub fn new(control_cost: ControlCost, terminal_g: Field) -> Self {
        MfgProblem {
            drift_b0: Field::zero(),
            control_drift: ControlDrift::Identity,
            control_cost,
            coupling_f: Field::zero(),
            terminal_g,
            actions: ActionSet {
                lo: -10.0,
                hi: 10.0,
            },
            sigma: 1.0,
            horizon: 1.0,
            periods: 1,
            noise: NoiseKind::Gaussian,
            initial: InitialLaw::Normal {
                mean: 0.0,
                std: 1.0,
            },
            family: Family::Custom,
        }
    }

    /// The linear-quadratic game with `L = c a² + c_L (x − m̄)²` and
    /// `G = (x − m̄)²`.
    pub fn lq(c: f64, c_l: f64) -> Self {
        let mut p = Self::new(ControlCost::Quadratic { c }, centered_square());
        p.coupling_f = centered_square().scaled(c_l);
        p.family = Family::Lq { c, c_l };
        p
    }

    /// Bounded drift `b = scale · tanh(a)` with `L = c a²`, `G = (x − m̄)²`.
    pub fn tanh(c: f64, scale: f64) -> Self {
        let mut p = Self::new(ControlCost::Quadratic { c }, centered_square());
        p.control_drift = ControlDrift::custom(move |a| scale * a.tanh());
        p.family = Family::Tanh { c, scale };
        p
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_periods(mut self, periods: usize) -> Self {
        self.periods = periods;
        self
    }

    pub fn with_actions(mut self, lo: f64, hi: f64) -> Self {
        self.actions = ActionSet { lo, hi };
        self
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_initial(mut self, initial: InitialLaw) -> Self {
        self.initial = initial;
        self
    }

    pub fn with_drift(mut self, b0: Field) -> Self {
        self.drift_b0 = b0;
        self.family = Family::Custom;
        self
    }

    pub fn with_control_drift(mut self, beta: ControlDrift) -> Self {
        self.control_drift = beta;
        self.family = Family::Custom;
        self
    }

    pub fn with_coupling(mut self, f: Field) -> Self {
        self.coupling_f = f;
        self.family = Family::Custom;
        self
    }

    pub fn with_terminal(mut self, g: Field) -> Self {
        self.terminal_g = g;
        self.family = Family::Custom;
        self
    }

    pub fn with_control_cost(mut self, l0: ControlCost) -> Self {
        self.control_cost = l0;
        self.family = Family::Custom;
        self
    }

    /// All of `L₀`, `F` and `G` multiplied by `s > 0`.
    pub fn scaled_costs(&self, s: f64) -> Self {
        let mut p = self.clone();
        p.control_cost = self.control_cost.scaled(s);
        p.coupling_f = self.coupling_f.clone().scaled(s);
        p.terminal_g = self.terminal_g.clone().scaled(s);
        p.family = Family::Custom;
        p
    }

    pub fn delta(&self) -> f64 {
        self.horizon / self.periods as f64
    }

    /// Standard deviation of the state noise `σ ΔZ` over one period.
    pub fn noise_scale(&self) -> f64 {
        match self.noise {
            NoiseKind::Zero => 0.0,
            _ => self.sigma * self.delta().sqrt(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(MfgError::InvalidParameter(format!(
                "sigma = {} must be positive",
                self.sigma
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(MfgError::InvalidParameter(format!(
                "horizon = {} must be positive",
                self.horizon
            )));
        }
        if self.periods == 0 {
            return Err(MfgError::InvalidParameter(
                "periods must be positive".into(),
            ));
        }
        if let ControlCost::Quadratic { c } = self.control_cost {
            if !(c.is_finite() && c > 0.0) {
                return Err(MfgError::InvalidParameter(format!(
                    "control cost c = {c} must be positive"
                )));
            }
        }
        self.actions.validate()?;
        self.initial.validate()
    }

    /// `L(x, a, m) = L₀(x, a) + F(x, m)` with `F` already bound.
    pub fn running_cost(&self, x: f64, a: f64, m: &EmpiricalMeasure) -> Result<f64> {
        Ok(self.control_cost.eval(x, a) + self.coupling_f.eval(x, m)?)
    }

    /// Which theorems' hypotheses are structurally visible in the
    /// coefficients. Growth and monotonicity conditions are not checked.
    pub fn applicability(&self) -> Applicability {
        Applicability {
            separated_identity_drift: self.control_drift.is_identity(),
            measure_free_drift: self.drift_b0.is_measure_free(),
            lq_family: matches!(self.family, Family::Lq { .. }),
            bounded_actions: true,
        }
    }
}

/// Structural flags reported alongside every run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Applicability {
    /// `b = a + b₀`: required by the BSΔE solver.
    pub separated_identity_drift: bool,
    /// `b₀` does not depend on the measure: required by the rate theorem.
    pub measure_free_drift: bool,
    /// The LQ family is not Lasry-Lions monotone; monotonicity-based
    /// uniqueness arguments do not cover it.
    pub lq_family: bool,
    pub bounded_actions: bool,
}

/// Initial states and noise increments for `n_paths` paths over `periods`
/// steps. `increments[p * periods + j]` is `ΔZ_{j+1}` of path `p`, with
/// variance `delta`.
#[derive(Clone, Debug, PartialEq)]
pub struct PathBundle {
    pub n_paths: usize,
    pub periods: usize,
    pub delta: f64,
    pub noise: NoiseKind,
    pub seed: u64,
    xi: Vec<f64>,
    increments: Vec<f64>,
}

/// Draws `n_paths` initial states and noise paths. Path `p` is generated from
/// the stream `(seed, p)` alone.
pub fn sample_paths(problem: &MfgProblem, n_paths: usize, seed: u64) -> Result<PathBundle> {
    problem.validate()?;
    if n_paths == 0 {
        return Err(MfgError::InvalidParameter(
            "n_paths must be at least 1".into(),
        ));
    }
    let k = problem.periods;
    let sd = problem.delta().sqrt();
    let rows: Vec<(f64, Vec<f64>)> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PathRng::new(seed, p as u64);
            let xi = problem.initial.draw(&mut rng, p);
            let inc = (0..k)
                .map(|_| sd * rng.standard_increment(problem.noise))
                .collect();
            (xi, inc)
        })
        .collect();
    let mut xi = Vec::with_capacity(n_paths);
    let mut increments = Vec::with_capacity(n_paths * k);
    for (x, inc) in rows {
        xi.push(x);
        increments.extend(inc);
    }
    Ok(PathBundle {
        n_paths,
        periods: k,
        delta: problem.delta(),
        noise: problem.noise,
        seed,
        xi,
        increments,
    })
}

impl PathBundle {
    pub fn from_parts(
        xi: Vec<f64>,
        increments: Vec<f64>,
        periods: usize,
        delta: f64,
        noise: NoiseKind,
    ) -> Result<Self> {
        if xi.is_empty() {
            return Err(MfgError::InvalidParameter(
                "a bundle needs at least one path".into(),
            ));
        }
        if periods == 0 || increments.len() != xi.len() * periods {
            return Err(MfgError::InvalidParameter(format!(
                "{} increments for {} paths and {periods} periods",
                increments.len(),
                xi.len()
            )));
        }
        if !(delta > 0.0) {
            return Err(MfgError::InvalidParameter(format!(
                "delta = {delta} must be positive"
            )));
        }
        if xi.iter().chain(&increments).any(|x| !x.is_finite()) {
            return Err(MfgError::NonFinite("path bundle entry".into()));
        }
        Ok(PathBundle {
            n_paths: xi.len(),
            periods,
            delta,
            noise,
            seed: 0,
            xi,
            increments,
        })
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `ΔZ_{j+1}` of path `p`.
    #[inline]
    pub fn increment(&self, p: usize, j: usize) -> f64 {
        self.increments[p * self.periods + j]
    }

    pub fn path_increments(&self, p: usize) -> &[f64] {
        &self.increments[p * self.periods..(p + 1) * self.periods]
    }

    /// All paths' `ΔZ_{j+1}`.
    pub fn step_increments(&self, j: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.increment(p, j)).collect()
    }

    pub fn initial_measure(&self) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform(self.xi.clone())
    }

    /// Aggregates `factor` consecutive increments so that the coarse noise
    /// equals the fine noise sampled on the coarse grid.
    pub fn coarsen(&self, factor: usize) -> Result<PathBundle> {
        if factor == 0 || !self.periods.is_multiple_of(factor) {
            return Err(MfgError::InvalidParameter(format!(
                "cannot coarsen {} periods by {factor}",
                self.periods
            )));
        }
        let k = self.periods / factor;
        let increments = (0..self.n_paths)
            .flat_map(|p| {
                let row = self.path_increments(p);
                (0..k).map(move |j| row[j * factor..(j + 1) * factor].iter().sum::<f64>())
            })
            .collect();
        Ok(PathBundle {
            n_paths: self.n_paths,
            periods: k,
            delta: self.delta * factor as f64,
            noise: self.noise,
            seed: self.seed,
            xi: self.xi.clone(),
            increments,
        })
    }

    /// `Z_{t_i}` of path `p` for `i = 0..=periods`.
    pub fn cumulative(&self, p: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.periods + 1);
        z.push(0.0);
        let mut s = 0.0;
        for &dz in self.path_increments(p) {
            s += dz;
            z.push(s);
        }
        z
    }

    fn check(&self, problem: &MfgProblem) -> Result<()> {
        if self.periods != problem.periods {
            return Err(MfgError::DimensionMismatch {
                left: self.periods,
                right: problem.periods,
            });
        }
        if ((self.delta - problem.delta()) / problem.delta()).abs() > 1e-12 {
            return Err(MfgError::InvalidParameter(format!(
                "bundle step {} differs from problem step {}",
                self.delta,
                problem.delta()
            )));
        }
        Ok(())
    }
}

/// Simulated states, `states[p * (periods + 1) + i] = X_{t_i}` of path `p`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectories {
    pub n_paths: usize,
    pub periods: usize,
    pub states: Vec<f64>,
}

impl Trajectories {
    #[inline]
    pub fn state(&self, p: usize, i: usize) -> f64 {
        self.states[p * (self.periods + 1) + i]
    }

    pub fn path(&self, p: usize) -> &[f64] {
        &self.states[p * (self.periods + 1)..(p + 1) * (self.periods + 1)]
    }

    /// All paths' `X_{t_i}`.
    pub fn column(&self, i: usize) -> Vec<f64> {
        (0..self.n_paths).map(|p| self.state(p, i)).collect()
    }

    pub fn measure_at(&self, i: usize) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::uniform(self.column(i))
    }

    pub fn flow(&self, horizon: f64) -> Result<MeasureFlow> {
        MeasureFlow::new(
            horizon,
            (0..=self.periods)
                .map(|i| self.measure_at(i))
                .collect::<Result<_>>()?,
        )
    }

    /// CSV with header `path,step,x`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["path", "step", "x"])?;
        for p in 0..self.n_paths {
            for i in 0..=self.periods {
                wtr.write_record([p.to_string(), i.to_string(), format_f64(self.state(p, i))])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

fn check_inputs(
    problem: &MfgProblem,
    policy: &FeedbackPolicy,
    flow: &MeasureFlow,
    paths: &PathBundle,
) -> Result<()> {
    problem.validate()?;
    paths.check(problem)?;
    if flow.periods() != problem.periods {
        return Err(MfgError::DimensionMismatch {
            left: flow.periods(),
            right: problem.periods,
        });
    }
    if policy.periods() != problem.periods {
        return Err(MfgError::DimensionMismatch {
            left: policy.periods(),
            right: problem.periods,
        });
    }
    Ok(())
}

/// Runs `X_{t_{i+1}} = X_{t_i} + (β(α_{t_i}(X_{t_i})) + b₀(X_{t_i}, m_{t_i}))δ + σΔZ_{i+1}`
/// from `X_{t_0} = ξ` along every path of the bundle.
pub fn simulate_state(
    problem: &MfgProblem,
    policy: &FeedbackPolicy,
    flow: &MeasureFlow,
    paths: &PathBundle,
) -> Result<Trajectories> {
    check_inputs(problem, policy, flow, paths)?;
    let k = problem.periods;
    let delta = problem.delta();
    let b0: Vec<_> = (0..k)
        .map(|i| problem.drift_b0.bind(flow.at(i)))
        .collect::<Result<_>>()?;
    let mut states = vec![0.0; paths.n_paths * (k + 1)];
    states
        .par_chunks_mut(k + 1)
        .enumerate()
        .for_each(|(p, row)| {
            let mut x = paths.xi[p];
            row[0] = x;
            for i in 0..k {
                let a = policy.eval(i, x);
                x += (problem.control_drift.eval(a) + b0[i](x)) * delta
                    + problem.sigma * paths.increment(p, i);
                row[i + 1] = x;
            }
        });
    if let Some(pos) = states.iter().position(|x| !x.is_finite()) {
        return Err(MfgError::NonFinite(format!(
            "state of path {} at step {} (divergent coefficients?)",
            pos / (k + 1),
            pos % (k + 1)
        )));
    }
    Ok(Trajectories {
        n_paths: paths.n_paths,
        periods: k,
        states,
    })
}

/// Like [`simulate_state`], but `b₀` sees the law of the simulated state
/// itself at every step. Returns the trajectories and that flow.
pub fn simulate_consistent(
    problem: &MfgProblem,
    policy: &FeedbackPolicy,
    paths: &PathBundle,
) -> Result<(Trajectories, MeasureFlow)> {
    problem.validate()?;
    paths.check(problem)?;
    let k = problem.periods;
    let delta = problem.delta();
    let n = paths.n_paths;
    let mut columns = vec![paths.xi.clone()];
    let mut measures = vec![EmpiricalMeasure::uniform(paths.xi.clone())?];
    for i in 0..k {
        let b0 = problem.drift_b0.bind(&measures[i])?;
        let next: Vec<f64> = (0..n)
            .into_par_iter()
            .map(|p| {
                let x = columns[i][p];
                let a = policy.eval(i, x);
                x + (problem.control_drift.eval(a) + b0(x)) * delta
                    + problem.sigma * paths.increment(p, i)
            })
            .collect();
        if next.iter().any(|x| !x.is_finite()) {
            return Err(MfgError::NonFinite(format!("state at step {}", i + 1)));
        }
        measures.push(EmpiricalMeasure::uniform(next.clone())?);
        columns.push(next);
    }
    let mut states = vec![0.0; n * (k + 1)];
    for (i, col) in columns.iter().enumerate() {
        for (p, x) in col.iter().enumerate() {
            states[p * (k + 1) + i] = *x;
        }
    }
    Ok((
        Trajectories {
            n_paths: n,
            periods: k,
            states,
        },
        MeasureFlow::new(problem.horizon, measures)?,
    ))
}

/// Per-path realized cost `Σ_i L(X_{t_i}, α_{t_i}, m_{t_i})δ + G(X_{t_k}, m_{t_k})`.
pub fn path_costs(
    problem: &MfgProblem,
    policy: &FeedbackPolicy,
    flow: &MeasureFlow,
    paths: &PathBundle,
) -> Result<Vec<f64>> {
    let traj = simulate_state(problem, policy, flow, paths)?;
    let k = problem.periods;
    let delta = problem.delta();
    let f: Vec<_> = (0..k)
        .map(|i| problem.coupling_f.bind(flow.at(i)))
        .collect::<Result<_>>()?;
    let g = problem.terminal_g.bind(flow.at(k))?;
    let costs: Vec<f64> = (0..paths.n_paths)
        .into_par_iter()
        .map(|p| {
            let row = traj.path(p);
            let mut c = 0.0;
            for i in 0..k {
                let x = row[i];
                c += (problem.control_cost.eval(x, policy.eval(i, x)) + f[i](x)) * delta;
            }
            c + g(row[k])
        })
        .collect();
    if let Some(p) = costs.iter().position(|c| !c.is_finite()) {
        return Err(MfgError::NonFinite(format!("cost of path {p}")));
    }
    Ok(costs)
}

/// Monte Carlo estimate of `J^k_m(α)`.
pub fn total_cost(
    problem: &MfgProblem,
    policy: &FeedbackPolicy,
    flow: &MeasureFlow,
    paths: &PathBundle,
) -> Result<Estimate> {
    Ok(Estimate::from_samples(&path_costs(
        problem, policy, flow, paths,
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dirac_flow(k: usize, horizon: f64) -> MeasureFlow {
        MeasureFlow::new(horizon, vec![EmpiricalMeasure::dirac(0.0); k + 1]).unwrap()
    }

    #[test]
    fn zero_noise_bundle() {
        let p = MfgProblem::lq(1.0, 1.0)
            .with_noise(NoiseKind::Zero)
            .with_periods(3);
        let b = sample_paths(&p, 10, 1).unwrap();
        assert!(b.increments().iter().all(|x| *x == 0.0));
    }

    #[test]
    fn rademacher_support() {
        let p = MfgProblem::lq(1.0, 1.0)
            .with_noise(NoiseKind::Rademacher)
            .with_periods(4);
        let b = sample_paths(&p, 100, 1).unwrap();
        assert!(b.increments().iter().all(|x| x.abs() == 0.5));
    }

    #[test]
    fn euler_recursion_with_unit_drift() {
        let p = MfgProblem::lq(1.0, 0.0)
            .with_drift(Field::constant(1.0))
            .with_noise(NoiseKind::Zero)
            .with_initial(InitialLaw::Dirac(0.0))
            .with_horizon(2.0)
            .with_periods(2);
        let b = sample_paths(&p, 3, 0).unwrap();
        let pol = FeedbackPolicy::zero(2, p.actions);
        let t = simulate_state(&p, &pol, &dirac_flow(2, 2.0), &b).unwrap();
        assert_eq!(t.path(1), &[0.0, 1.0, 2.0]);
    }

    #[test]
    fn uncontrolled_state_is_xi_plus_noise() {
        let p = MfgProblem::lq(1.0, 0.0)
            .with_sigma(0.7)
            .with_horizon(1.0)
            .with_periods(4);
        let b = sample_paths(&p, 50, 9).unwrap();
        let pol = FeedbackPolicy::zero(4, p.actions);
        let t = simulate_state(&p, &pol, &dirac_flow(4, 1.0), &b).unwrap();
        for q in 0..50 {
            let z = b.cumulative(q);
            for i in 0..=4 {
                assert!((t.state(q, i) - (b.xi()[q] + 0.7 * z[i])).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn unit_running_cost_sums_to_horizon() {
        let p = MfgProblem::new(ControlCost::general(|_, _| 1.0), Field::zero())
            .with_horizon(3.0)
            .with_periods(6);
        let b = sample_paths(&p, 20, 2).unwrap();
        let pol = FeedbackPolicy::zero(6, p.actions);
        let c = total_cost(&p, &pol, &dirac_flow(6, 3.0), &b).unwrap();
        assert!((c.mean - 3.0).abs() < 1e-12);
    }

    #[test]
    fn coarsening_sums_increments() {
        let p = MfgProblem::lq(1.0, 0.0).with_periods(8);
        let b = sample_paths(&p, 5, 3).unwrap();
        let c = b.coarsen(4).unwrap();
        assert_eq!(c.periods, 2);
        assert!((c.delta - 0.5).abs() < 1e-15);
        let z = b.cumulative(2);
        assert!((c.cumulative(2)[2] - z[8]).abs() < 1e-14);
        assert!(b.coarsen(3).is_err());
    }

    #[test]
    fn validation() {
        assert!(MfgProblem::lq(-1.0, 0.0).validate().is_err());
        assert!(MfgProblem::lq(1.0, 0.0)
            .with_actions(1.0, 2.0)
            .validate()
            .is_err());
        assert!(MfgProblem::lq(1.0, 0.0).with_sigma(0.0).validate().is_err());
        assert!(sample_paths(&MfgProblem::lq(1.0, 0.0), 0, 1).is_err());
    }

    #[test]
    fn mismatched_policy_is_rejected() {
        let p = MfgProblem::lq(1.0, 0.0).with_periods(2);
        let b = sample_paths(&p, 3, 0).unwrap();
        let pol = FeedbackPolicy::zero(3, p.actions);
        assert!(simulate_state(&p, &pol, &dirac_flow(2, 1.0), &b).is_err());
    }
}
