//! Bounded scalar minimization: a coarse scan followed by Brent's method.

use crate::error::{MfgError, Result};

const SCAN_POINTS: usize = 33;
const MAX_BRENT_ITERS: usize = 200;
const GOLDEN: f64 = 0.381_966_011_250_105_1;

/// Result of [`minimize_scalar`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Minimum {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Minimizes `f` over `[lo, hi]` to absolute accuracy `tol` in the argument.
///
/// A uniform scan (which always includes 0 when it lies in the interval)
/// selects the bracket; among equal scan values the one with the smallest
/// magnitude wins, so flat objectives resolve to the smallest-|a| minimizer.
pub fn minimize_scalar(f: impl Fn(f64) -> f64, lo: f64, hi: f64, tol: f64) -> Result<Minimum> {
    if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(MfgError::InvalidParameter(format!(
            "bad search interval [{lo}, {hi}]"
        )));
    }
    if !(tol > 0.0) {
        return Err(MfgError::InvalidParameter(format!(
            "tolerance {tol} must be positive"
        )));
    }
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_nan() {
            Err(MfgError::NonFinite(format!("objective is NaN at {x}")))
        } else {
            Ok(v)
        }
    };
    if lo == hi {
        return Ok(Minimum {
            x: lo,
            value: eval(lo)?,
            evaluations: 1,
        });
    }
    let mut grid: Vec<f64> = (0..SCAN_POINTS)
        .map(|i| lo + (hi - lo) * i as f64 / (SCAN_POINTS - 1) as f64)
        .collect();
    grid[SCAN_POINTS - 1] = hi;
    if lo < 0.0 && hi > 0.0 {
        let pos = grid.partition_point(|&x| x < 0.0);
        if grid[pos] != 0.0 {
            grid.insert(pos, 0.0);
        }
    }
    let vals: Vec<f64> = grid.iter().map(|&x| eval(x)).collect::<Result<_>>()?;
    let mut best = 0;
    for i in 1..grid.len() {
        if vals[i] < vals[best] || (vals[i] == vals[best] && grid[i].abs() < grid[best].abs()) {
            best = i;
        }
    }
    let mut evaluations = grid.len();
    let a = grid[best.saturating_sub(1)];
    let b = grid[(best + 1).min(grid.len() - 1)];
    let (x, v, n) = brent(&eval, a, b, grid[best], vals[best], tol)?;
    evaluations += n;
    if v < vals[best] {
        Ok(Minimum {
            x,
            value: v,
            evaluations,
        })
    } else {
        Ok(Minimum {
            x: grid[best],
            value: vals[best],
            evaluations,
        })
    }
}

/// Brent's parabolic/golden minimization on `[a, b]` started from `x`.
fn brent(
    f: &impl Fn(f64) -> Result<f64>,
    mut a: f64,
    mut b: f64,
    x0: f64,
    f0: f64,
    tol: f64,
) -> Result<(f64, f64, usize)> {
    let (mut x, mut w, mut v) = (x0, x0, x0);
    let (mut fx, mut fw, mut fv) = (f0, f0, f0);
    let (mut d, mut e) = (0.0f64, 0.0f64);
    let mut n = 0;
    for _ in 0..MAX_BRENT_ITERS {
        let xm = 0.5 * (a + b);
        let tol1 = 1.5e-8 * x.abs() + 0.5 * tol;
        let tol2 = 2.0 * tol1;
        if (x - xm).abs() <= tol2 - 0.5 * (b - a) {
            return Ok((x, fx, n));
        }
        let mut golden = true;
        if e.abs() > tol1 {
            let r = (x - w) * (fx - fv);
            let mut q = (x - v) * (fx - fw);
            let mut p = (x - v) * q - (x - w) * r;
            q = 2.0 * (q - r);
            if q > 0.0 {
                p = -p;
            }
            q = q.abs();
            let etemp = e;
            if p.abs() < (0.5 * q * etemp).abs() && p > q * (a - x) && p < q * (b - x) {
                e = d;
                d = p / q;
                let u = x + d;
                if u - a < tol2 || b - u < tol2 {
                    d = tol1.copysign(xm - x);
                }
                golden = false;
            }
        }
        if golden {
            e = if x >= xm { a - x } else { b - x };
            d = GOLDEN * e;
        }
        let u = if d.abs() >= tol1 {
            x + d
        } else {
            x + tol1.copysign(d)
        };
        let fu = f(u)?;
        n += 1;
        if fu <= fx {
            if u >= x {
                a = x;
            } else {
                b = x;
            }
            (v, fv) = (w, fw);
            (w, fw) = (x, fx);
            (x, fx) = (u, fu);
        } else {
            if u < x {
                a = u;
            } else {
                b = u;
            }
            if fu <= fw || w == x {
                (v, fv) = (w, fw);
                (w, fw) = (u, fu);
            } else if fu <= fv || v == x || v == w {
                (v, fv) = (u, fu);
            }
        }
    }
    Err(MfgError::OptimizerBudget(format!(
        "Brent did not reach tolerance {tol} within {MAX_BRENT_ITERS} iterations near {x}"
    )))
}
