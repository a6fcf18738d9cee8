//! Empirical probability measures and the distances and functionals the
//! solvers need on them.
//!
//! Measures are finitely supported weighted particle clouds in `R^d`. One
//! dimensional transport is computed exactly by the quantile coupling; for
//! `d > 1` a sliced approximation with a fixed projection count and seed is
//! used instead.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::field::MeasureField;
use crate::rng::PathRng;
use crate::stats::{pairwise_sum, weighted_sum};

/// Weight normalization tolerance.
pub const WEIGHT_TOL: f64 = 1e-12;

/// A weighted particle cloud. Weights are nonnegative and sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure {
    points: Vec<f64>,
    weights: Vec<f64>,
    dim: usize,
    uniform: bool,
}

impl EmpiricalMeasure {
    /// Builds a measure from row-major `points` (`len = n * dim`) and
    /// nonnegative weights, which are normalized to sum to one.
    pub fn weighted_nd(points: Vec<f64>, weights: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(MfgError::InvalidMeasure(
                "dimension must be positive".into(),
            ));
        }
        if weights.is_empty() {
            return Err(MfgError::EmptyMeasure);
        }
        if points.len() != weights.len() * dim {
            return Err(MfgError::InvalidMeasure(format!(
                "{} coordinates for {} weights in dimension {dim}",
                points.len(),
                weights.len()
            )));
        }
        if let Some(x) = points.iter().find(|x| !x.is_finite()) {
            return Err(MfgError::InvalidMeasure(format!(
                "non-finite coordinate {x}"
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(MfgError::InvalidMeasure(format!("invalid weight {w}")));
        }
        let total = pairwise_sum(&weights);
        if !(total > 0.0) {
            return Err(MfgError::InvalidMeasure("weights sum to zero".into()));
        }
        let uniform = weights.iter().all(|w| *w == weights[0]);
        let n = weights.len();
        let weights = if uniform {
            vec![1.0 / n as f64; n]
        } else {
            weights.into_iter().map(|w| w / total).collect()
        };
        Ok(EmpiricalMeasure {
            points,
            weights,
            dim,
            uniform,
        })
    }

    pub fn weighted(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        Self::weighted_nd(points, weights, 1)
    }

    /// Equal weights on 1-D points.
    pub fn uniform(points: Vec<f64>) -> Result<Self> {
        Self::uniform_nd(points, 1)
    }

    pub fn uniform_nd(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(MfgError::InvalidMeasure(
                "coordinate count not a multiple of dim".into(),
            ));
        }
        let n = points.len() / dim;
        Self::weighted_nd(points, vec![1.0; n], dim)
    }

    pub fn dirac(x: f64) -> Self {
        EmpiricalMeasure {
            points: vec![x],
            weights: vec![1.0],
            dim: 1,
            uniform: true,
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major coordinates.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn is_uniform(&self) -> bool {
        self.uniform
    }

    fn require_1d(&self) -> Result<()> {
        if self.dim != 1 {
            return Err(MfgError::DimensionMismatch {
                left: self.dim,
                right: 1,
            });
        }
        Ok(())
    }

    /// Weighted mean vector.
    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim)
            .map(|c| {
                let coords: Vec<f64> = self
                    .points
                    .iter()
                    .skip(c)
                    .step_by(self.dim)
                    .copied()
                    .collect();
                weighted_sum(&coords, &self.weights)
            })
            .collect()
    }

    pub fn mean_1d(&self) -> Result<f64> {
        self.require_1d()?;
        Ok(weighted_sum(&self.points, &self.weights))
    }

    /// `||m||_p^p`, the weighted `p`-th absolute moment.
    pub fn moment(&self, p: f64) -> f64 {
        let norms: Vec<f64> = (0..self.len())
            .map(|i| {
                let r = self.point(i).iter().map(|x| x * x).sum::<f64>().sqrt();
                r.powf(p)
            })
            .collect();
        weighted_sum(&norms, &self.weights)
    }

    pub fn variance_1d(&self) -> Result<f64> {
        let m = self.mean_1d()?;
        let sq: Vec<f64> = self.points.iter().map(|x| (x - m) * (x - m)).collect();
        Ok(weighted_sum(&sq, &self.weights))
    }

    pub fn min_max_1d(&self) -> Result<(f64, f64)> {
        self.require_1d()?;
        Ok(self
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
                (lo.min(x), hi.max(x))
            }))
    }

    pub(crate) fn sorted(&self) -> Result<Sorted1d> {
        self.require_1d()?;
        Ok(Sorted1d::new(&self.points, &self.weights, self.uniform))
    }

    /// Left-continuous quantile function `inf { x : F(x) >= u }`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        Ok(self.sorted()?.quantile(u))
    }

    /// 16 quantiles rounded to `1e-6`; equal fingerprints are treated as the
    /// same measure by caches.
    pub fn fingerprint(&self) -> Result<Fingerprint> {
        let s = self.sorted()?;
        let mut q = [0i64; 16];
        for (i, slot) in q.iter_mut().enumerate() {
            let u = (i as f64 + 0.5) / 16.0;
            *slot = (s.quantile(u) * 1e6).round() as i64;
        }
        Ok(Fingerprint(q))
    }

    /// Applies `f` to every particle, keeping the weights.
    pub fn map_1d(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        self.require_1d()?;
        let pts: Vec<f64> = self.points.iter().map(|&x| f(x)).collect();
        if let Some(x) = pts.iter().find(|x| !x.is_finite()) {
            return Err(MfgError::NonFinite(format!("pushforward produced {x}")));
        }
        Ok(EmpiricalMeasure {
            points: pts,
            weights: self.weights.clone(),
            dim: 1,
            uniform: self.uniform,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fingerprint(pub [i64; 16]);

/// A 1-D cloud sorted by position.
#[derive(Clone, Debug)]
pub(crate) struct Sorted1d {
    pub xs: Vec<f64>,
    pub ws: Vec<f64>,
    pub uniform: bool,
}

impl Sorted1d {
    pub fn new(points: &[f64], weights: &[f64], uniform: bool) -> Self {
        if uniform {
            let mut xs = points.to_vec();
            xs.sort_by(f64::total_cmp);
            let ws = vec![1.0 / xs.len() as f64; xs.len()];
            return Sorted1d { xs, ws, uniform };
        }
        let mut idx: Vec<usize> = (0..points.len()).collect();
        idx.sort_by(|&a, &b| points[a].total_cmp(&points[b]));
        Sorted1d {
            xs: idx.iter().map(|&i| points[i]).collect(),
            ws: idx.iter().map(|&i| weights[i]).collect(),
            uniform,
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        if self.uniform {
            let n = self.xs.len();
            let i = ((u * n as f64).ceil() as usize).clamp(1, n) - 1;
            return self.xs[i];
        }
        let mut cum = 0.0;
        for (x, w) in self.xs.iter().zip(&self.ws) {
            cum += w;
            if cum >= u {
                return *x;
            }
        }
        *self.xs.last().unwrap()
    }

    /// Atoms `(mass, x_self, x_other)` of the quantile coupling.
    fn coupling<'a>(&'a self, other: &'a Sorted1d) -> Coupling<'a> {
        Coupling {
            a: self,
            b: other,
            i: 0,
            j: 0,
            ra: self.ws[0],
            rb: other.ws[0],
        }
    }

    /// `W_p^p` via the quantile coupling.
    pub fn transport_cost(&self, other: &Sorted1d, p: f64) -> f64 {
        let cost = |d: f64| -> f64 {
            let d = d.abs();
            if p == 1.0 {
                d
            } else if p == 2.0 {
                d * d
            } else {
                d.powf(p)
            }
        };
        if self.uniform && other.uniform && self.xs.len() == other.xs.len() {
            let terms: Vec<f64> = self
                .xs
                .iter()
                .zip(&other.xs)
                .map(|(a, b)| cost(a - b))
                .collect();
            return pairwise_sum(&terms) / self.xs.len() as f64;
        }
        let terms: Vec<f64> = self
            .coupling(other)
            .map(|(w, a, b)| w * cost(a - b))
            .collect();
        pairwise_sum(&terms)
    }
}

struct Coupling<'a> {
    a: &'a Sorted1d,
    b: &'a Sorted1d,
    i: usize,
    j: usize,
    ra: f64,
    rb: f64,
}

impl Iterator for Coupling<'_> {
    type Item = (f64, f64, f64);

    fn next(&mut self) -> Option<Self::Item> {
        if self.i >= self.a.xs.len() || self.j >= self.b.xs.len() {
            return None;
        }
        let (xa, xb) = (self.a.xs[self.i], self.b.xs[self.j]);
        let step;
        if self.ra < self.rb {
            step = self.ra;
            self.rb -= step;
            self.i += 1;
            self.ra = self.a.ws.get(self.i).copied().unwrap_or(0.0);
        } else if self.rb < self.ra {
            step = self.rb;
            self.ra -= step;
            self.j += 1;
            self.rb = self.b.ws.get(self.j).copied().unwrap_or(0.0);
        } else {
            step = self.ra;
            self.i += 1;
            self.j += 1;
            self.ra = self.a.ws.get(self.i).copied().unwrap_or(0.0);
            self.rb = self.b.ws.get(self.j).copied().unwrap_or(0.0);
        }
        Some((step, xa, xb))
    }
}

/// Settings for the sliced approximation used when `d > 1`.
#[derive(Clone, Copy, Debug)]
pub struct SlicedOptions {
    pub projections: usize,
    pub seed: u64,
}

impl Default for SlicedOptions {
    fn default() -> Self {
        SlicedOptions {
            projections: 128,
            seed: 0x51ced,
        }
    }
}

/// Wasserstein distance of order `p`. Exact in one dimension; sliced with
/// default [`SlicedOptions`] otherwise.
pub fn wasserstein(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    wasserstein_with(mu, nu, p, &SlicedOptions::default())
}

pub fn wasserstein_with(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
    sliced: &SlicedOptions,
) -> Result<f64> {
    if mu.dim != nu.dim {
        return Err(MfgError::DimensionMismatch {
            left: mu.dim,
            right: nu.dim,
        });
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(MfgError::EmptyMeasure);
    }
    if !(p >= 1.0) {
        return Err(MfgError::InvalidParameter(format!(
            "Wasserstein order p = {p} < 1"
        )));
    }
    if mu.dim == 1 {
        let cost = mu.sorted()?.transport_cost(&nu.sorted()?, p);
        return Ok(cost.max(0.0).powf(1.0 / p));
    }
    sliced_wasserstein(mu, nu, p, sliced)
}

fn sliced_wasserstein(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    p: f64,
    opts: &SlicedOptions,
) -> Result<f64> {
    if opts.projections == 0 {
        return Err(MfgError::InvalidParameter(
            "sliced Wasserstein needs projections".into(),
        ));
    }
    let d = mu.dim;
    let mut rng = PathRng::new(opts.seed, 0);
    let mut costs = Vec::with_capacity(opts.projections);
    for _ in 0..opts.projections {
        let mut dir: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|x| *x /= norm);
        let project = |m: &EmpiricalMeasure| -> Sorted1d {
            let proj: Vec<f64> = (0..m.len())
                .map(|i| m.point(i).iter().zip(&dir).map(|(a, b)| a * b).sum())
                .collect();
            Sorted1d::new(&proj, &m.weights, m.uniform)
        };
        costs.push(project(mu).transport_cost(&project(nu), p));
    }
    Ok((pairwise_sum(&costs) / costs.len() as f64)
        .max(0.0)
        .powf(1.0 / p))
}

/// Point on the `W_2` geodesic from `mu` (`lambda = 0`) to `nu`
/// (`lambda = 1`): quantile functions are averaged.
pub fn geodesic_mix(
    mu: &EmpiricalMeasure,
    nu: &EmpiricalMeasure,
    lambda: f64,
) -> Result<EmpiricalMeasure> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(MfgError::InvalidParameter(format!(
            "mixing weight {lambda} outside [0, 1]"
        )));
    }
    let (a, b) = (mu.sorted()?, nu.sorted()?);
    if a.uniform && b.uniform && a.xs.len() == b.xs.len() {
        let xs =
            a.xs.iter()
                .zip(&b.xs)
                .map(|(x, y)| (1.0 - lambda) * x + lambda * y)
                .collect();
        return EmpiricalMeasure::uniform(xs);
    }
    let (mut xs, mut ws) = (Vec::new(), Vec::new());
    for (w, x, y) in a.coupling(&b) {
        if w > 0.0 {
            xs.push((1.0 - lambda) * x + lambda * y);
            ws.push(w);
        }
    }
    EmpiricalMeasure::weighted(xs, ws)
}

/// `∫ (U(x, m1) - U(x, m2)) (m1 - m2)(dx)` over the union of both particle
/// sets. Nonnegative for Lasry-Lions monotone `U`.
pub fn ll_monotonicity_gap(
    u: &dyn MeasureField,
    m1: &EmpiricalMeasure,
    m2: &EmpiricalMeasure,
) -> Result<f64> {
    Ok(ll_monotonicity_gap_with_stderr(u, m1, m2)?.gap)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LlGap {
    pub gap: f64,
    /// Sampling error of the two particle sums, treating each cloud as an
    /// i.i.d. sample of its underlying law.
    pub stderr: f64,
}

pub fn ll_monotonicity_gap_with_stderr(
    u: &dyn MeasureField,
    m1: &EmpiricalMeasure,
    m2: &EmpiricalMeasure,
) -> Result<LlGap> {
    m1.require_1d()?;
    m2.require_1d()?;
    let u1 = u.bind(m1)?;
    let u2 = u.bind(m2)?;
    let diffs = |m: &EmpiricalMeasure| -> Result<Vec<f64>> {
        m.points
            .iter()
            .map(|&x| {
                let d = u1(x) - u2(x);
                if d.is_finite() {
                    Ok(d)
                } else {
                    Err(MfgError::NonFinite(format!("U evaluated at x = {x}")))
                }
            })
            .collect()
    };
    let d1 = diffs(m1)?;
    let d2 = diffs(m2)?;
    let s1 = weighted_sum(&d1, &m1.weights);
    let s2 = weighted_sum(&d2, &m2.weights);
    let var = |d: &[f64], m: &EmpiricalMeasure, mean: f64| {
        let sq: Vec<f64> = d
            .iter()
            .zip(&m.weights)
            .map(|(x, w)| w * w * (x - mean) * (x - mean))
            .collect();
        pairwise_sum(&sq)
    };
    Ok(LlGap {
        gap: s1 - s2,
        stderr: (var(&d1, m1, s1) + var(&d2, m2, s2)).sqrt(),
    })
}

/// A time-indexed sequence of measures on the uniform grid `t_i = i T / k`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureFlow {
    times: Vec<f64>,
    measures: Vec<EmpiricalMeasure>,
}

impl MeasureFlow {
    pub fn new(horizon: f64, measures: Vec<EmpiricalMeasure>) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(MfgError::InvalidParameter(format!(
                "horizon {horizon} must be positive"
            )));
        }
        if measures.len() < 2 {
            return Err(MfgError::InvalidParameter(
                "a flow needs at least two measures".into(),
            ));
        }
        let k = measures.len() - 1;
        let mut times: Vec<f64> = (0..=k).map(|i| horizon * i as f64 / k as f64).collect();
        times[k] = horizon;
        Ok(MeasureFlow { times, measures })
    }

    pub fn periods(&self) -> usize {
        self.measures.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[EmpiricalMeasure] {
        &self.measures
    }

    pub fn at(&self, i: usize) -> &EmpiricalMeasure {
        &self.measures[i]
    }

    /// Grid index of the piecewise-constant, right-open interpolation.
    pub fn index_at(&self, t: f64) -> Result<usize> {
        let horizon = self.horizon();
        if !(0.0..=horizon).contains(&t) {
            return Err(MfgError::TimeOutOfRange { t, horizon });
        }
        if t == horizon {
            return Ok(self.periods());
        }
        Ok(self.times.partition_point(|&s| s <= t) - 1)
    }

    /// `m_{t_i}` for `t` in `[t_i, t_{i+1})`, and `m_T` at `t = T`.
    pub fn interpolate(&self, t: f64) -> Result<&EmpiricalMeasure> {
        Ok(&self.measures[self.index_at(t)?])
    }

    /// CSV with header `step,time,x0..,weight`, one row per atom.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let dim = self.measures[0].dim();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = vec!["step".into(), "time".into()];
        header.extend((0..dim).map(|c| format!("x{c}")));
        header.push("weight".into());
        wtr.write_record(&header)?;
        for (i, m) in self.measures.iter().enumerate() {
            for j in 0..m.len() {
                let mut row = vec![i.to_string(), format_f64(self.times[i])];
                row.extend(m.point(j).iter().map(|x| format_f64(*x)));
                row.push(format_f64(m.weights()[j]));
                wtr.write_record(&row)?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Free-function form of [`MeasureFlow::interpolate`].
pub fn interpolate_flow(flow: &MeasureFlow, t: f64) -> Result<EmpiricalMeasure> {
    flow.interpolate(t).cloned()
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PointRepr {
    Scalar(f64),
    Vector(Vec<f64>),
}

#[derive(Serialize, Deserialize)]
struct MeasureJson {
    points: Vec<PointRepr>,
    weights: Vec<f64>,
}

impl EmpiricalMeasure {
    /// `{"points": [[x_1, .., x_d], ..], "weights": [..]}`. In 1-D the points
    /// may also be bare numbers.
    pub fn to_json(&self) -> serde_json::Value {
        let repr = MeasureJson {
            points: (0..self.len())
                .map(|i| PointRepr::Vector(self.point(i).to_vec()))
                .collect(),
            weights: self.weights.clone(),
        };
        serde_json::to_value(repr).expect("measure serializes")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        let repr: MeasureJson = serde_json::from_value(v.clone())?;
        let mut dim = None;
        let mut coords = Vec::new();
        for p in repr.points {
            let row = match p {
                PointRepr::Scalar(x) => vec![x],
                PointRepr::Vector(v) => v,
            };
            match dim {
                None => dim = Some(row.len()),
                Some(d) if d != row.len() => {
                    return Err(MfgError::DimensionMismatch {
                        left: d,
                        right: row.len(),
                    })
                }
                _ => {}
            }
            coords.extend(row);
        }
        Self::weighted_nd(coords, repr.weights, dim.ok_or(MfgError::EmptyMeasure)?)
    }

    /// CSV with header `x0,..,x{d-1},weight`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..self.dim).map(|c| format!("x{c}")).collect();
        header.push("weight".into());
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut row: Vec<String> = self.point(i).iter().map(|x| format_f64(*x)).collect();
            row.push(format_f64(self.weights[i]));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let ncols = rdr.headers()?.len();
        if ncols < 2 {
            return Err(MfgError::InvalidMeasure(
                "CSV needs coordinate and weight columns".into(),
            ));
        }
        let (mut coords, mut weights) = (Vec::new(), Vec::new());
        for rec in rdr.records() {
            let rec = rec?;
            for c in 0..ncols - 1 {
                coords.push(parse_f64(&rec[c])?);
            }
            weights.push(parse_f64(&rec[ncols - 1])?);
        }
        Self::weighted_nd(coords, weights, ncols - 1)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Shortest round-trip decimal representation.
pub(crate) fn format_f64(x: f64) -> String {
    format!("{x:?}")
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| MfgError::InvalidMeasure(format!("not a number: {s:?}")))
}
