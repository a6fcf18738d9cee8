//! Discretization sweeps: solve at several `k` on one shared noise path,
//! compare against a fine reference solve and fit log-log rates.
//!
//! The coarse solutions are lifted to continuous time as
//!
//! ```text
//! α̂^k_t = α^k_{t_i}(X^k_{t_i}),
//! X̂^k_t = X^k_{t_i} + (β(α̂^k_t) + b₀(X^k_{t_i}, m^k_{t_i}))(t − t_i) + σ (W_t − W_{t_i}),
//! ```
//!
//! for `t ∈ [t_i, t_{i+1})`, and compared with the reference on its grid.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bsde::{solve_mfg_bsde, MfgBsdeOptions, MfgBsdeSolution};
use crate::error::{MfgError, Result};
use crate::field::MeasureField;
use crate::measures::{format_f64, wasserstein, EmpiricalMeasure};
use crate::model::{sample_paths, simulate_state, MfgProblem, PathBundle, Trajectories};
use crate::stats::Estimate;

/// How the Brownian motion is reconstructed between coarse grid points.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseInterpolation {
    /// `W_t` read off the shared reference path.
    #[default]
    FinePath,
    /// `W_t = W_{t_i}` on `[t_i, t_{i+1})`.
    PiecewiseConstant,
}

#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub solver: MfgBsdeOptions,
    pub n_paths: usize,
    pub seed: u64,
    pub interpolation: NoiseInterpolation,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            solver: MfgBsdeOptions {
                exploitability: false,
                ..MfgBsdeOptions::default()
            },
            n_paths: 100_000,
            seed: 0,
            interpolation: NoiseInterpolation::FinePath,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    /// `max_t W₂(law(X̂^k_t), m^ref_t)` over the reference grid.
    pub flow_gap: f64,
    /// `E ∫₀ᵀ |α̂^k_t − α^ref_t|² dt`.
    pub control_gap: f64,
    pub control_stderr: f64,
    /// `E sup_t |X̂^k_t − X^ref_t|²`.
    pub state_gap: f64,
    pub state_stderr: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FittedSlopes {
    pub flow: Option<f64>,
    pub control: Option<f64>,
    pub state: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub k_ref: usize,
    pub entries: Vec<SweepEntry>,
    pub fitted_slopes: FittedSlopes,
    /// `(k, gap name)` where the gap at `2k` exceeds the gap at `k` by more
    /// than three standard errors.
    pub monotone_violations: Vec<(usize, String)>,
}

impl SweepResult {
    pub fn ks(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.k).collect()
    }

    pub fn flow_gaps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.flow_gap).collect()
    }

    pub fn control_gaps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.control_gap).collect()
    }

    pub fn state_gaps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.state_gap).collect()
    }

    /// CSV with header `k,converged,flow_gap,control_gap,control_stderr,state_gap,state_stderr`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "k",
            "converged",
            "flow_gap",
            "control_gap",
            "control_stderr",
            "state_gap",
            "state_stderr",
        ])?;
        for e in &self.entries {
            wtr.write_record([
                e.k.to_string(),
                e.converged.to_string(),
                format_f64(e.flow_gap),
                format_f64(e.control_gap),
                format_f64(e.control_stderr),
                format_f64(e.state_gap),
                format_f64(e.state_stderr),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Ordinary least-squares slope of `log gap` against `log k`.
pub fn fit_rate(ks: &[usize], gaps: &[f64]) -> Result<f64> {
    if ks.len() != gaps.len() {
        return Err(MfgError::DimensionMismatch {
            left: ks.len(),
            right: gaps.len(),
        });
    }
    if ks.len() < 3 {
        return Err(MfgError::TooFewPoints(ks.len()));
    }
    if let Some(g) = gaps.iter().find(|g| !(**g > 0.0 && g.is_finite())) {
        return Err(MfgError::InvalidParameter(format!(
            "gap {g} is not positive"
        )));
    }
    if ks.contains(&0) {
        return Err(MfgError::InvalidParameter("k must be positive".into()));
    }
    let n = ks.len() as f64;
    let xs: Vec<f64> = ks.iter().map(|&k| (k as f64).ln()).collect();
    let ys: Vec<f64> = gaps.iter().map(|g| g.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(MfgError::InvalidParameter("all k are equal".into()));
    }
    Ok(sxy / sxx)
}

fn check_grid(ks: &[usize], k_ref: usize) -> Result<()> {
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) || ks[0] == 0 {
        return Err(MfgError::InvalidParameter(
            "ks must be positive and strictly increasing".into(),
        ));
    }
    let kmax = *ks.last().unwrap();
    if k_ref < 8 * kmax {
        return Err(MfgError::InvalidParameter(format!(
            "k_ref = {k_ref} must be at least 8 max(ks) = {}",
            8 * kmax
        )));
    }
    if let Some(k) = ks.iter().find(|&&k| !k_ref.is_multiple_of(k)) {
        return Err(MfgError::InvalidParameter(format!(
            "k = {k} does not divide k_ref = {k_ref}"
        )));
    }
    Ok(())
}

/// The reference solve and its simulated paths on the fine grid.
pub struct Reference {
    pub problem: MfgProblem,
    pub paths: PathBundle,
    pub solution: MfgBsdeSolution,
    pub states: Trajectories,
}

pub fn reference_solve(
    problem: &MfgProblem,
    k_ref: usize,
    opts: &SweepOptions,
) -> Result<Reference> {
    let problem = problem.clone().with_periods(k_ref);
    let paths = sample_paths(&problem, opts.n_paths, opts.seed)?;
    let solution = solve_mfg_bsde(&problem, &paths, &opts.solver)?;
    if !solution.report.converged {
        log::warn!(
            "reference solve at k = {k_ref} did not converge (residual {:.3e})",
            solution.report.residual
        );
    }
    let states = simulate_state(&problem, &solution.policy, &solution.flow, &paths)?;
    Ok(Reference {
        problem,
        paths,
        solution,
        states,
    })
}

/// Gaps of a coarse solution (computed on `reference.paths` coarsened to `k`
/// periods) against the reference.
pub fn gaps_against_reference(
    reference: &Reference,
    k: usize,
    solution: &MfgBsdeSolution,
    interpolation: NoiseInterpolation,
) -> Result<SweepEntry> {
    let k_ref = reference.problem.periods;
    if k == 0 || !k_ref.is_multiple_of(k) {
        return Err(MfgError::InvalidParameter(format!(
            "k = {k} does not divide k_ref = {k_ref}"
        )));
    }
    let r = k_ref / k;
    let problem = reference.problem.clone().with_periods(k);
    let paths = reference.paths.coarsen(r)?;
    let coarse = simulate_state(&problem, &solution.policy, &solution.flow, &paths)?;
    let b0: Vec<_> = (0..k)
        .map(|i| problem.drift_b0.bind(solution.flow.at(i)))
        .collect::<Result<_>>()?;
    let fine_delta = reference.paths.delta;
    let sigma = problem.sigma;
    let n = reference.paths.n_paths;
    let ref_policy = &reference.solution.policy;

    // Per path: interpolated row, control gap, state sup-gap.
    let rows: Vec<(Vec<f64>, f64, f64)> = (0..n)
        .into_par_iter()
        .map(|p| {
            let xref = reference.states.path(p);
            let inc = reference.paths.path_increments(p);
            let xk = coarse.path(p);
            let mut row = Vec::with_capacity(k_ref + 1);
            let mut control = 0.0;
            let mut sup: f64 = 0.0;
            for i in 0..k {
                let x0 = xk[i];
                let a = solution.policy.eval(i, x0);
                let drift = problem.control_drift.eval(a) + b0[i](x0);
                let mut w = 0.0;
                for j in 0..r {
                    let s = i * r + j;
                    let x = match interpolation {
                        NoiseInterpolation::FinePath => {
                            x0 + drift * fine_delta * j as f64 + sigma * w
                        }
                        NoiseInterpolation::PiecewiseConstant => x0,
                    };
                    row.push(x);
                    sup = sup.max((x - xref[s]).powi(2));
                    let d = a - ref_policy.eval(s, xref[s]);
                    control += d * d * fine_delta;
                    w += inc[s];
                }
            }
            row.push(xk[k]);
            sup = sup.max((xk[k] - xref[k_ref]).powi(2));
            (row, control, sup)
        })
        .collect();
    let controls: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let sups: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let flow_gap = (0..=k_ref)
        .into_par_iter()
        .map(|s| {
            let col: Vec<f64> = rows.iter().map(|r| r.0[s]).collect();
            wasserstein(
                &EmpiricalMeasure::uniform(col)?,
                &reference.states.measure_at(s)?,
                2.0,
            )
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    let c = Estimate::from_samples(&controls);
    let st = Estimate::from_samples(&sups);
    Ok(SweepEntry {
        k,
        converged: solution.report.converged,
        iterations: solution.report.iterations,
        flow_gap,
        control_gap: c.mean,
        control_stderr: c.stderr,
        state_gap: st.mean,
        state_stderr: st.stderr,
    })
}

/// Solves at every `k` in `ks` and at `k_ref` on one shared noise sample and
/// reports the gaps. `ks` must be increasing, divide `k_ref`, and satisfy
/// `k_ref ≥ 8 max(ks)`.
pub fn donsker_sweep(
    problem: &MfgProblem,
    ks: &[usize],
    k_ref: usize,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    check_grid(ks, k_ref)?;
    let reference = reference_solve(problem, k_ref, opts)?;
    let mut entries = Vec::with_capacity(ks.len());
    for &k in ks {
        let coarse_problem = reference.problem.clone().with_periods(k);
        let paths = reference.paths.coarsen(k_ref / k)?;
        let sol = solve_mfg_bsde(&coarse_problem, &paths, &opts.solver)?;
        if !sol.report.converged {
            log::warn!("sweep entry k = {k} did not converge; excluded from the fit");
        }
        let entry = gaps_against_reference(&reference, k, &sol, opts.interpolation)?;
        log::info!(
            "k = {k}: flow {:.3e}, control {:.3e}, state {:.3e}",
            entry.flow_gap,
            entry.control_gap,
            entry.state_gap
        );
        entries.push(entry);
    }
    Ok(summarize(k_ref, entries))
}

/// Fits slopes on the converged entries and flags monotonicity violations.
pub fn summarize(k_ref: usize, entries: Vec<SweepEntry>) -> SweepResult {
    let valid: Vec<&SweepEntry> = entries.iter().filter(|e| e.converged).collect();
    let ks: Vec<usize> = valid.iter().map(|e| e.k).collect();
    let fit = |f: fn(&SweepEntry) -> f64| {
        let gaps: Vec<f64> = valid.iter().map(|e| f(e)).collect();
        fit_rate(&ks, &gaps).ok()
    };
    let fitted_slopes = FittedSlopes {
        flow: fit(|e| e.flow_gap),
        control: fit(|e| e.control_gap),
        state: fit(|e| e.state_gap),
    };
    let mut monotone_violations = Vec::new();
    for w in entries.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.k != 2 * a.k {
            continue;
        }
        if b.control_gap > a.control_gap + 3.0 * (a.control_stderr.hypot(b.control_stderr)) {
            monotone_violations.push((a.k, "control".to_string()));
        }
        if b.state_gap > a.state_gap + 3.0 * (a.state_stderr.hypot(b.state_stderr)) {
            monotone_violations.push((a.k, "state".to_string()));
        }
    }
    SweepResult {
        k_ref,
        entries,
        fitted_slopes,
        monotone_violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let ks = [2, 4, 8, 16, 32];
        let inv: Vec<f64> = ks.iter().map(|&k| 3.0 / k as f64).collect();
        assert!((fit_rate(&ks, &inv).unwrap() + 1.0).abs() < 1e-12);
        let sqrt: Vec<f64> = ks.iter().map(|&k| 0.7 / (k as f64).sqrt()).collect();
        assert!((fit_rate(&ks, &sqrt).unwrap() + 0.5).abs() < 1e-12);
        assert!(fit_rate(&ks, &[2.0; 5]).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        assert!(matches!(
            fit_rate(&[1, 2], &[1.0, 0.5]),
            Err(MfgError::TooFewPoints(2))
        ));
        assert!(fit_rate(&[1, 2, 4], &[1.0, 0.0, 0.5]).is_err());
    }

    #[test]
    fn grid_checks() {
        assert!(check_grid(&[2, 4, 8], 64).is_ok());
        assert!(check_grid(&[2, 4, 8], 32).is_err());
        assert!(check_grid(&[4, 2], 256).is_err());
        assert!(check_grid(&[3], 32).is_err());
    }

    #[test]
    fn nonconverged_entries_are_excluded() {
        let e = |k: usize, g: f64, converged: bool| SweepEntry {
            k,
            converged,
            iterations: 1,
            flow_gap: g,
            control_gap: g,
            control_stderr: 0.0,
            state_gap: g,
            state_stderr: 0.0,
        };
        let r = summarize(
            64,
            vec![
                e(2, 0.5, true),
                e(4, 9.0, false),
                e(8, 0.125, true),
                e(16, 1.0 / 16.0, true),
            ],
        );
        assert!((r.fitted_slopes.control.unwrap() + 1.0).abs() < 1e-12);
        assert!(r.monotone_violations.iter().any(|v| v.0 == 2));
    }
}
