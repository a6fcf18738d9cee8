//! Order-fixed reductions.
//!
//! Every reduction over paths goes through [`pairwise_sum`], whose
//! association order depends only on the slice length. Results are therefore
//! identical whatever the rayon pool size.

const LEAF: usize = 64;

/// Pairwise (cascade) summation with a fixed split rule.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    pairwise_sum(xs) / xs.len() as f64
}

/// A Monte Carlo estimate: sample mean and its standard error.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        let n = xs.len();
        let m = mean(xs);
        if n < 2 {
            return Estimate {
                mean: m,
                stderr: 0.0,
            };
        }
        let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
        let var = pairwise_sum(&sq) / (n - 1) as f64;
        Estimate {
            mean: m,
            stderr: (var / n as f64).sqrt(),
        }
    }

    /// Weighted mean of `xs` with the standard error of a weighted sample
    /// mean, `sqrt(Σ w² (x − mean)²) / Σ w`.
    pub fn weighted(xs: &[f64], ws: &[f64]) -> Self {
        let total = pairwise_sum(ws);
        let m = weighted_sum(xs, ws) / total;
        let sq: Vec<f64> = xs
            .iter()
            .zip(ws)
            .map(|(x, w)| w * w * (x - m) * (x - m))
            .collect();
        Estimate {
            mean: m,
            stderr: pairwise_sum(&sq).sqrt() / total,
        }
    }

    /// `|mean - target| <= k * stderr`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.stderr
    }
}

/// Weighted mean of `values` under normalized `weights`.
pub fn weighted_sum(values: &[f64], weights: &[f64]) -> f64 {
    let prods: Vec<f64> = values.iter().zip(weights).map(|(v, w)| v * w).collect();
    pairwise_sum(&prods)
}

/// Sample correlation; zero when either side is constant.
pub fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let ma = mean(a);
    let mb = mean(b);
    let cov: Vec<f64> = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).collect();
    let va: Vec<f64> = a.iter().map(|x| (x - ma) * (x - ma)).collect();
    let vb: Vec<f64> = b.iter().map(|y| (y - mb) * (y - mb)).collect();
    let denom = (pairwise_sum(&va) * pairwise_sum(&vb)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        pairwise_sum(&cov) / denom
    }
}
