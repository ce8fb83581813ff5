//! Canonical parameter of the tangent exponential model and the frequentist
//! modified likelihood root.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{constrained_mle, FitResult};
use crate::information::fd_step;
use crate::model::{signal_mean, Dataset, ModelParams};
use crate::pivot::{Method, PivotEngine, PivotPoint, PivotValue};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Weights {
    gamma: f64,
    beta: f64,
    t: f64,
    u: f64,
}

/// `phi(theta)` with the sample-space directions frozen at the global fit.
///
/// Coordinates: `phi_0 = sum_k gamma_k log m1_k`, then per channel
/// `psi gamma_k log m1_k + u_k gamma_k log gamma_k` and
/// `beta_k log m1_k + t_k beta_k log beta_k`, all weights taken at the MLE.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalMap {
    psi_hat: f64,
    weights: Vec<Weights>,
}

/// Canonical parameter and its Jacobian at one `theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalParam {
    pub phi: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

impl CanonicalMap {
    pub fn new(data: &Dataset, mle: &ModelParams) -> Self {
        let weights = data
            .channels()
            .iter()
            .zip(&mle.lambda)
            .map(|(ch, p)| Weights {
                gamma: p.gamma(),
                beta: p.beta(),
                t: ch.t,
                u: ch.u,
            })
            .collect();
        Self {
            psi_hat: mle.psi,
            weights,
        }
    }

    pub fn dim(&self) -> usize {
        1 + 2 * self.weights.len()
    }

    pub fn eval(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        if theta.len() != self.dim() {
            return Err(Error::Domain(format!("theta has length {}, expected {}", theta.len(), self.dim())));
        }
        let params = ModelParams::from_vector(theta);
        let mut phi = DVector::zeros(self.dim());
        for (k, (w, p)) in self.weights.iter().zip(&params.lambda).enumerate() {
            let m1 = signal_mean(params.psi, p);
            if !(m1 > 0.0) {
                return Err(Error::Domain(format!(
                    "canonical parameter needs a positive signal mean (channel {}, psi = {})",
                    k + 1,
                    params.psi
                )));
            }
            let log_m = m1.ln();
            phi[0] += w.gamma * log_m;
            phi[1 + 2 * k] = self.psi_hat * w.gamma * log_m + w.u * w.gamma * p.log_gamma();
            phi[2 + 2 * k] = w.beta * log_m + w.t * w.beta * p.lambda2;
        }
        Ok(phi)
    }

    /// Central-difference Jacobian `d phi / d theta`.
    pub fn jacobian(&self, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.dim();
        let mut jac = DMatrix::zeros(d, d);
        for c in 0..d {
            let h = fd_step(theta[c]);
            let mut up = theta.clone();
            up[c] += h;
            let mut dn = theta.clone();
            dn[c] -= h;
            let width = up[c] - dn[c];
            let col = (self.eval(&up)? - self.eval(&dn)?) / width;
            jac.set_column(c, &col);
        }
        Ok(jac)
    }
}

pub fn canonical_phi(data: &Dataset, mle: &ModelParams, params: &ModelParams) -> Result<CanonicalParam> {
    let map = CanonicalMap::new(data, mle);
    let theta = params.to_vector();
    Ok(CanonicalParam {
        phi: map.eval(&theta)?,
        jacobian: map.jacobian(&theta)?,
    })
}

/// Likelihood root `r(psi) = sign(psi_hat - psi) sqrt(2 (l(theta_hat) - l(theta_psi)))`.
pub fn likelihood_root(data: &Dataset, mle: &FitResult, constrained: &FitResult) -> Result<f64> {
    PivotEngine::with_mle(data.clone(), mle.clone())?.root_from_fit(constrained)
}

/// Frequentist correction `q(psi)` at a constrained fit.
pub fn q_stat(data: &Dataset, mle: &FitResult, constrained: &FitResult) -> Result<f64> {
    PivotEngine::with_mle(data.clone(), mle.clone())?.q_at(constrained)
}

/// Modified root `r*(psi)`, falling back to `r` where `q` is unusable.
pub fn modified_root(data: &Dataset, psi: f64, mle: &FitResult) -> Result<PivotValue> {
    PivotEngine::with_mle(data.clone(), mle.clone())?.pivot(psi, Method::RStar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    /// Grid in order, each fit warm-started from its neighbour.
    Sequential,
    /// Independent points on the rayon pool, warm-started from the global fit.
    Parallel,
}

/// Pivots along a grid of `psi` values. Failed points keep their error.
#[derive(Debug, Clone)]
pub struct PivotTrace {
    pub points: Vec<std::result::Result<PivotPoint, Error>>,
}

impl PivotTrace {
    pub fn ok_points(&self) -> impl Iterator<Item = &PivotPoint> {
        self.points.iter().filter_map(|p| p.as_ref().ok())
    }
}

pub fn pivot_trace(engine: &PivotEngine, grid: &[f64], mode: TraceMode) -> PivotTrace {
    let points = match mode {
        TraceMode::Parallel => grid.par_iter().map(|&psi| engine.point(psi)).collect(),
        TraceMode::Sequential => {
            let mut warm = engine.mle().params.clone();
            grid.iter()
                .map(|&psi| {
                    let fit = constrained_mle(engine.data(), psi, Some(&warm))
                        .or_else(|_| engine.fit_at(psi))?;
                    warm = fit.params.clone();
                    engine.point_from_fit(&fit)
                })
                .collect()
        }
    };
    PivotTrace { points }
}
