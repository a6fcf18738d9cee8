//! Expectations over one noise increment.
//!
//! A [`Quadrature`] is a discrete probability on the standardized increment
//! `ΔZ / √δ`. Callers scale the nodes by `σ√δ`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::model::NoiseKind;
use crate::rng::PathRng;

#[derive(Clone, Debug, PartialEq)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// How a solver integrates over the noise.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[derive(Default)]
pub enum QuadratureRule {
    /// Gauss-Hermite with 21 nodes for Gaussian noise, the exact two-point
    /// rule for Rademacher noise, a single node for zero noise.
    #[default]
    Auto,
    GaussHermite(usize),
    /// Equal-weight average over fixed draws of the noise law.
    CommonRandomNumbers {
        draws: usize,
        seed: u64,
    },
}


impl Quadrature {
    pub fn for_noise(kind: NoiseKind, rule: QuadratureRule) -> Result<Self> {
        match (rule, kind) {
            (_, NoiseKind::Zero) => Ok(Self::point()),
            (QuadratureRule::Auto, NoiseKind::Gaussian) => Self::gauss_hermite(21),
            (QuadratureRule::Auto, NoiseKind::Rademacher) => Ok(Self::rademacher()),
            (QuadratureRule::GaussHermite(n), NoiseKind::Gaussian) => Self::gauss_hermite(n),
            (QuadratureRule::GaussHermite(_), NoiseKind::Rademacher) => {
                Err(MfgError::InvalidParameter(
                    "Gauss-Hermite quadrature requires Gaussian noise".into(),
                ))
            }
            (QuadratureRule::CommonRandomNumbers { draws, seed }, kind) => {
                Self::draws(kind, draws, seed)
            }
        }
    }

    pub fn point() -> Self {
        Quadrature {
            nodes: vec![0.0],
            weights: vec![1.0],
        }
    }

    pub fn rademacher() -> Self {
        Quadrature {
            nodes: vec![-1.0, 1.0],
            weights: vec![0.5, 0.5],
        }
    }

    /// Gauss-Hermite rule for the standard normal law (probabilists'
    /// weight), computed by Golub-Welsch.
    pub fn gauss_hermite(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(MfgError::InvalidParameter(
                "quadrature needs at least one node".into(),
            ));
        }
        let mut jacobi = DMatrix::<f64>::zeros(n, n);
        for i in 1..n {
            let b = (i as f64).sqrt();
            jacobi[(i, i - 1)] = b;
            jacobi[(i - 1, i)] = b;
        }
        let eig = SymmetricEigen::new(jacobi);
        let mut pairs: Vec<(f64, f64)> = (0..n)
            .map(|j| (eig.eigenvalues[j], eig.eigenvectors[(0, j)].powi(2)))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        // symmetrize to kill round-off in the odd moments
        for i in 0..n / 2 {
            let (l, r) = (pairs[i], pairs[n - 1 - i]);
            let x = 0.5 * (r.0 - l.0);
            let w = 0.5 * (l.1 + r.1);
            pairs[i] = (-x, w);
            pairs[n - 1 - i] = (x, w);
        }
        if n % 2 == 1 {
            pairs[n / 2].0 = 0.0;
        }
        let total: f64 = pairs.iter().map(|p| p.1).sum();
        Ok(Quadrature {
            nodes: pairs.iter().map(|p| p.0).collect(),
            weights: pairs.iter().map(|p| p.1 / total).collect(),
        })
    }

    /// `draws` standardized samples of the noise law, equally weighted.
    pub fn draws(kind: NoiseKind, draws: usize, seed: u64) -> Result<Self> {
        if draws == 0 {
            return Err(MfgError::InvalidParameter("need at least one draw".into()));
        }
        let mut rng = PathRng::new(seed, u64::MAX);
        let nodes = (0..draws).map(|_| rng.standard_increment(kind)).collect();
        Ok(Quadrature {
            nodes,
            weights: vec![1.0 / draws as f64; draws],
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ w_j f(scale · node_j)`.
    #[inline]
    pub fn expect(&self, scale: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut s = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            s += w * f(scale * x);
        }
        s
    }
}
