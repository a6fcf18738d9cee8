//! Closed-form linear-quadratic and bounded-drift oracles.
//!
//! The LQ game has `L = c a² + c_L (x − m̄)²`, `G = (x − m̄)²` and `b = a`.
//! With stage value functions of the form `g_i(x, m) = q_i (x − m̄)² + r_i`,
//! one period of length `δ` maps `(q, r)` to
//!
//! ```text
//! q' = c_L δ + c q / (c + q δ),     r' = r + q v,
//! ```
//!
//! where `v` is the per-period variance of the state noise, and the
//! equilibrium feedback in that period is `α(x) = κ (m̄ − x)` with
//! `κ = q / (c + q δ)`. The population mean is preserved.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqParams {
    pub c: f64,
    pub c_l: f64,
    /// Variance of `σ ΔZ` over one period, `σ² δ`.
    pub noise_var: f64,
    /// Period length. The two-period formulas assume `δ = 1`.
    pub delta: f64,
    pub xi_mean: f64,
    pub xi_var: f64,
}

impl LqParams {
    pub fn new(c: f64, c_l: f64, noise_var: f64) -> Self {
        LqParams {
            c,
            c_l,
            noise_var,
            delta: 1.0,
            xi_mean: 0.0,
            xi_var: 1.0,
        }
    }

    pub fn with_initial(mut self, mean: f64, var: f64) -> Self {
        self.xi_mean = mean;
        self.xi_var = var;
        self
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.c,
            self.c_l,
            self.noise_var,
            self.delta,
            self.xi_mean,
            self.xi_var,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite
            || self.c <= 0.0
            || self.c_l < 0.0
            || self.noise_var < 0.0
            || self.delta <= 0.0
            || self.xi_var < 0.0
        {
            return Err(MfgError::InvalidParameter(format!(
                "invalid LQ parameters {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqSinglePeriod {
    /// `κ` in `α(x) = κ (E[ξ] − x)`.
    pub policy_coeff: f64,
    pub equilibrium_mean: f64,
    pub equilibrium_var: f64,
}

/// The single-period equilibrium with terminal cost `(x − m̄)²`.
pub fn lq_single_period(p: &LqParams) -> Result<LqSinglePeriod> {
    p.validate()?;
    let kappa = 1.0 / (p.c + p.delta);
    let keep = 1.0 - kappa * p.delta;
    Ok(LqSinglePeriod {
        policy_coeff: kappa,
        equilibrium_mean: p.xi_mean,
        equilibrium_var: keep * keep * p.xi_var + p.noise_var,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqTwoPeriod {
    pub g1_curvature: f64,
    pub g1_offset: f64,
    pub stage1_coeff: f64,
    pub stage2_coeff: f64,
}

/// The two-period game with unit period length.
pub fn lq_two_period(p: &LqParams) -> Result<LqTwoPeriod> {
    p.validate()?;
    let c_tilde = p.c_l + p.c / (1.0 + p.c);
    Ok(LqTwoPeriod {
        g1_curvature: c_tilde,
        g1_offset: p.noise_var,
        stage1_coeff: c_tilde / (p.c + c_tilde),
        stage2_coeff: 1.0 / (1.0 + p.c),
    })
}

/// Stage `i` of the quadratic recursion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqStage {
    pub q: f64,
    pub r: f64,
}

impl LqStage {
    /// Feedback coefficient of the period ending at this stage.
    pub fn policy_coeff(&self, p: &LqParams) -> f64 {
        self.q / (p.c + self.q * p.delta)
    }
}

/// `(q_i, r_i)` for `i = 0..=k`, starting from `q_k = 1`, `r_k = 0`.
pub fn lq_g_recursion(p: &LqParams, k: usize) -> Result<Vec<LqStage>> {
    p.validate()?;
    if k == 0 {
        return Err(MfgError::InvalidParameter("k must be at least 1".into()));
    }
    let mut stages = vec![LqStage { q: 1.0, r: 0.0 }; k + 1];
    for i in (0..k).rev() {
        let LqStage { q, r } = stages[i + 1];
        stages[i] = LqStage {
            q: p.c_l * p.delta + p.c * q / (p.c + q * p.delta),
            r: r + q * p.noise_var,
        };
    }
    Ok(stages)
}

/// Equilibrium variances `Var(X_{t_i})`, `i = 0..=k`, of the pasted LQ game.
pub fn lq_variances(p: &LqParams, k: usize) -> Result<Vec<f64>> {
    let stages = lq_g_recursion(p, k)?;
    let mut v = vec![p.xi_var];
    for stage in &stages[1..] {
        let keep = 1.0 - stage.policy_coeff(p) * p.delta;
        v.push(keep * keep * v.last().unwrap() + p.noise_var);
    }
    Ok(v)
}

/// `c − (k² + k)`; positive means the bounded-drift objective has a unique
/// minimizer.
pub fn tanh_uniqueness_margin(c: f64, scale_k: f64) -> Result<f64> {
    if !(c > 0.0 && scale_k > 0.0) {
        return Err(MfgError::InvalidParameter(format!(
            "need c > 0 and k > 0, got c = {c}, k = {scale_k}"
        )));
    }
    Ok(c - (scale_k * scale_k + scale_k))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_period_at_unit_cost() {
        let s = lq_single_period(&LqParams::new(1.0, 0.0, 0.25)).unwrap();
        assert_eq!(s.policy_coeff, 0.5);
        assert_eq!(s.equilibrium_mean, 0.0);
        assert!((s.equilibrium_var - 0.5).abs() < 1e-15);
    }

    #[test]
    fn expensive_control_freezes_the_state() {
        let s = lq_single_period(&LqParams::new(1e6, 0.0, 0.25)).unwrap();
        assert!(s.policy_coeff < 1e-5);
        assert!((s.equilibrium_var - 1.25).abs() < 1e-5);
    }

    #[test]
    fn deterministic_initial_state() {
        let s = lq_single_period(&LqParams::new(2.0, 0.0, 0.1).with_initial(3.0, 0.0)).unwrap();
        assert_eq!(s.equilibrium_mean, 3.0);
        assert!((s.equilibrium_var - 0.1).abs() < 1e-15);
    }

    #[test]
    fn two_period_values() {
        let t = lq_two_period(&LqParams::new(1.0, 1.0, 0.25)).unwrap();
        assert_eq!(t.g1_curvature, 1.5);
        assert_eq!(t.g1_offset, 0.25);
        assert!((t.stage1_coeff - 0.6).abs() < 1e-15);
        assert_eq!(t.stage2_coeff, 0.5);
        let t0 = lq_two_period(&LqParams::new(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(t0.g1_curvature, 0.5);
        assert_eq!(t0.g1_offset, 0.0);
    }

    #[test]
    fn recursion_agrees_with_two_period() {
        let p = LqParams::new(1.3, 0.7, 0.4);
        let s = lq_g_recursion(&p, 2).unwrap();
        let t = lq_two_period(&p).unwrap();
        assert_eq!(s[1].q, t.g1_curvature);
        assert_eq!(s[1].r, t.g1_offset);
        assert_eq!(s[1].policy_coeff(&p), t.stage1_coeff);
        assert_eq!(s[2].policy_coeff(&p), t.stage2_coeff);
        let one = lq_g_recursion(&p, 1).unwrap();
        assert_eq!(
            one[1].policy_coeff(&p),
            lq_single_period(&p).unwrap().policy_coeff
        );
    }

    #[test]
    fn tanh_margin() {
        assert_eq!(tanh_uniqueness_margin(3.0, 1.0).unwrap(), 1.0);
        assert_eq!(tanh_uniqueness_margin(2.0, 1.0).unwrap(), 0.0);
        assert_eq!(tanh_uniqueness_margin(1.0, 1.0).unwrap(), -1.0);
        assert!(tanh_uniqueness_margin(0.0, 1.0).is_err());
    }
}
