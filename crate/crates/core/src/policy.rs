//! Feedback policies `α_{t_i}(x)` as piecewise-linear interpolants.

use std::io::{Read, Write};

use crate::error::{MfgError, Result};
use crate::measures::format_f64;
use crate::model::ActionSet;

/// One period's feedback map: linear between sorted knots, constant beyond
/// the outermost knots, clamped to the action set.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyMap {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl PolicyMap {
    /// Knots must be strictly increasing and finite.
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() {
            return Err(MfgError::InvalidParameter(format!(
                "{} knots for {} values",
                xs.len(),
                ys.len()
            )));
        }
        if xs.iter().chain(&ys).any(|v| !v.is_finite()) {
            return Err(MfgError::NonFinite("policy knot".into()));
        }
        if xs.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MfgError::InvalidParameter(
                "policy knots must be strictly increasing".into(),
            ));
        }
        Ok(PolicyMap { xs, ys })
    }

    pub fn constant(a: f64) -> Self {
        PolicyMap {
            xs: vec![0.0],
            ys: vec![a],
        }
    }

    pub fn knots(&self) -> (&[f64], &[f64]) {
        (&self.xs, &self.ys)
    }

    #[inline]
    pub fn eval_raw(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.ys[0];
        }
        if x >= self.xs[n - 1] {
            return self.ys[n - 1];
        }
        let j = self.xs.partition_point(|&k| k <= x);
        let (x0, x1) = (self.xs[j - 1], self.xs[j]);
        let t = (x - x0) / (x1 - x0);
        self.ys[j - 1] + t * (self.ys[j] - self.ys[j - 1])
    }

    /// Least-squares slope of the knot values against the knots, weighted
    /// uniformly. Exact for affine maps.
    pub fn fitted_slope(&self) -> f64 {
        let n = self.xs.len() as f64;
        if self.xs.len() < 2 {
            return 0.0;
        }
        let mx = self.xs.iter().sum::<f64>() / n;
        let my = self.ys.iter().sum::<f64>() / n;
        let sxy: f64 = self
            .xs
            .iter()
            .zip(&self.ys)
            .map(|(x, y)| (x - mx) * (y - my))
            .sum();
        let sxx: f64 = self.xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        sxy / sxx
    }
}

/// Tabulates `f` on `n` knots spread over `[lo, hi]`. Duplicate knots
/// collapse, so a degenerate range yields a single knot.
pub fn tabulate(lo: f64, hi: f64, n: usize, f: impl Fn(f64) -> Result<f64>) -> Result<PolicyMap> {
    let xs = knot_grid(lo, hi, n);
    let ys = xs.iter().map(|&x| f(x)).collect::<Result<Vec<_>>>()?;
    PolicyMap::new(xs, ys)
}

pub(crate) fn knot_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if !(hi > lo) || n < 2 {
        return vec![lo];
    }
    let mut xs: Vec<f64> = (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect();
    xs[n - 1] = hi;
    xs.dedup();
    xs
}

/// Feedback maps for periods `0..k`, all clamped to one action set.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackPolicy {
    maps: Vec<PolicyMap>,
    actions: ActionSet,
}

impl FeedbackPolicy {
    pub fn new(maps: Vec<PolicyMap>, actions: ActionSet) -> Result<Self> {
        if maps.is_empty() {
            return Err(MfgError::InvalidParameter(
                "a policy needs at least one period".into(),
            ));
        }
        Ok(FeedbackPolicy { maps, actions })
    }

    pub fn constant(periods: usize, a: f64, actions: ActionSet) -> Self {
        FeedbackPolicy {
            maps: vec![PolicyMap::constant(a); periods.max(1)],
            actions,
        }
    }

    pub fn zero(periods: usize, actions: ActionSet) -> Self {
        Self::constant(periods, 0.0, actions)
    }

    pub fn periods(&self) -> usize {
        self.maps.len()
    }

    pub fn actions(&self) -> ActionSet {
        self.actions
    }

    pub fn map(&self, i: usize) -> &PolicyMap {
        &self.maps[i]
    }

    pub fn maps(&self) -> &[PolicyMap] {
        &self.maps
    }

    /// `α_{t_i}(x)`, clamped to the action set.
    #[inline]
    pub fn eval(&self, i: usize, x: f64) -> f64 {
        self.actions.clamp(self.maps[i].eval_raw(x))
    }

    /// Concatenates single-period policies in time order.
    pub fn concat(parts: Vec<FeedbackPolicy>) -> Result<Self> {
        let actions = parts
            .first()
            .ok_or(MfgError::InvalidParameter("nothing to concatenate".into()))?
            .actions;
        let maps = parts.into_iter().flat_map(|p| p.maps).collect();
        Self::new(maps, actions)
    }

    /// CSV with header `step,x,action`, one row per knot.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["step", "x", "action"])?;
        for (i, m) in self.maps.iter().enumerate() {
            for (x, y) in m.xs.iter().zip(&m.ys) {
                wtr.write_record([i.to_string(), format_f64(*x), format_f64(*y)])?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, actions: ActionSet) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |s: &str| -> Result<f64> {
                s.trim()
                    .parse()
                    .map_err(|_| MfgError::InvalidParameter(format!("not a number: {s:?}")))
            };
            let step = rec[0]
                .trim()
                .parse()
                .map_err(|_| MfgError::InvalidParameter(format!("bad step {:?}", &rec[0])))?;
            rows.push((step, parse(&rec[1])?, parse(&rec[2])?));
        }
        let periods = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let mut maps = Vec::with_capacity(periods);
        for i in 0..periods {
            let (xs, ys) = rows.iter().filter(|r| r.0 == i).map(|r| (r.1, r.2)).unzip();
            maps.push(PolicyMap::new(xs, ys)?);
        }
        Self::new(maps, actions)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box1() -> ActionSet {
        ActionSet::new(-1.0, 1.0).unwrap()
    }

    #[test]
    fn interpolation_and_extrapolation() {
        let m = PolicyMap::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 0.0]).unwrap();
        assert_eq!(m.eval_raw(-5.0), 0.0);
        assert_eq!(m.eval_raw(0.5), 1.0);
        assert_eq!(m.eval_raw(2.0), 1.0);
        assert_eq!(m.eval_raw(10.0), 0.0);
    }

    #[test]
    fn clamping_to_actions() {
        let m = PolicyMap::new(vec![0.0, 1.0], vec![-5.0, 5.0]).unwrap();
        let p = FeedbackPolicy::new(vec![m], box1()).unwrap();
        assert_eq!(p.eval(0, 0.0), -1.0);
        assert_eq!(p.eval(0, 0.5), 0.0);
        assert_eq!(p.eval(0, 2.0), 1.0);
    }

    #[test]
    fn rejects_unsorted_knots() {
        assert!(PolicyMap::new(vec![1.0, 0.0], vec![0.0, 0.0]).is_err());
        assert!(PolicyMap::new(vec![], vec![]).is_err());
    }

    #[test]
    fn degenerate_tabulation() {
        let m = tabulate(2.0, 2.0, 129, Ok).unwrap();
        assert_eq!(m.knots().0, &[2.0]);
        assert_eq!(m.eval_raw(-1.0), 2.0);
    }

    #[test]
    fn slope_of_affine_map() {
        let m = tabulate(-3.0, 3.0, 17, |x| Ok(0.5 - 0.6 * x)).unwrap();
        assert!((m.fitted_slope() + 0.6).abs() < 1e-14);
    }

    #[test]
    fn csv_round_trip() {
        let a = tabulate(-1.0, 1.0, 5, |x| Ok(x / 3.0)).unwrap();
        let p = FeedbackPolicy::new(vec![a, PolicyMap::constant(0.25)], box1()).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(FeedbackPolicy::read_csv(&buf[..], box1()).unwrap(), p);
    }
}
