//! Non-informative matching prior and the Bayesian pivot.
//!
//! Conditioning each channel on its total `s = y1 + y2 + y3` gives a
//! trinomial model in `(psi, zeta)` with `zeta = beta / gamma`; the prior is
//! built from its Fisher information after orthogonalizing the nuisance
//! parameter. Only the constant choice of the arbitrary function of the
//! orthogonal parameter is supported.

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::FitResult;
use crate::model::{ChannelData, Dataset, ModelParams};
use crate::pivot::{Method, PivotEngine, PivotValue};

/// One channel of the conditional trinomial model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrinomialChannel {
    pub y1: u64,
    pub y2: u64,
    pub y3: u64,
    pub zeta: f64,
    pub psi: f64,
    pub t: f64,
    pub u: f64,
}

impl TrinomialChannel {
    pub fn new(ch: &ChannelData, psi: f64, zeta: f64) -> Result<Self> {
        let tc = Self {
            y1: ch.y1,
            y2: ch.y2,
            y3: ch.y3,
            zeta,
            psi,
            t: ch.t,
            u: ch.u,
        };
        check_domain(psi, zeta, tc.t, tc.u)?;
        Ok(tc)
    }

    pub fn total(&self) -> u64 {
        self.y1 + self.y2 + self.y3
    }

    /// Normalizer `pi = psi + zeta + u + zeta t`.
    pub fn normalizer(&self) -> f64 {
        self.psi + self.zeta + self.u + self.zeta * self.t
    }

    /// Cell probabilities `((psi + zeta)/pi, t zeta/pi, u/pi)`.
    pub fn cell_probabilities(&self) -> [f64; 3] {
        let pi = self.normalizer();
        [(self.psi + self.zeta) / pi, self.t * self.zeta / pi, self.u / pi]
    }
}

fn check_domain(psi: f64, zeta: f64, t: f64, u: f64) -> Result<()> {
    if !(zeta > 0.0 && psi + zeta > 0.0 && t > 0.0 && u > 0.0 && psi.is_finite() && zeta.is_finite()) {
        return Err(Error::Domain(format!(
            "trinomial model needs zeta > 0 and psi + zeta > 0 (psi = {psi}, zeta = {zeta})"
        )));
    }
    Ok(())
}

/// Records the prior choice used by the Bayesian pivot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// The arbitrary function of the orthogonal parameters is identically one.
    pub g_constant: bool,
    /// Per-channel `(s_k, t_k, u_k)`.
    pub channel_constants: Vec<(f64, f64, f64)>,
}

impl PriorSpec {
    pub fn for_data(data: &Dataset) -> Self {
        Self {
            g_constant: true,
            channel_constants: data
                .channels()
                .iter()
                .map(|c| (c.total() as f64, c.t, c.u))
                .collect(),
        }
    }

    /// Log prior density on the fitting scale `(psi, lambda)`: the
    /// `(psi, zeta)` density times the Jacobian `prod_k zeta_k`.
    pub fn log_density(&self, params: &ModelParams) -> Result<f64> {
        if !self.g_constant {
            return Err(Error::Config("only a constant g is supported".into()));
        }
        let zetas: Vec<f64> = params.lambda.iter().map(|p| p.zeta()).collect();
        let prior = prior_multi(params.psi, &zetas, &self.channel_constants)?;
        let jac: f64 = params.lambda.iter().map(|p| p.lambda1).sum();
        let v = prior.ln() + jac;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Domain(format!("prior is {prior} at psi = {}", params.psi)))
        }
    }
}

/// Conditional log likelihood `y1 log(psi + zeta) + y2 log zeta - s log pi`.
pub fn trinomial_loglik(ch: &TrinomialChannel) -> Result<f64> {
    check_domain(ch.psi, ch.zeta, ch.t, ch.u)?;
    let (y1, y2) = (ch.y1 as f64, ch.y2 as f64);
    let s = ch.total() as f64;
    let mut v = -s * ch.normalizer().ln();
    if ch.y1 > 0 {
        v += y1 * (ch.psi + ch.zeta).ln();
    }
    if ch.y2 > 0 {
        v += y2 * ch.zeta.ln();
    }
    Ok(v)
}

/// Expected information of the trinomial model in `(psi, zeta)`.
pub fn trinomial_fisher(ch: &TrinomialChannel) -> Result<Matrix2<f64>> {
    check_domain(ch.psi, ch.zeta, ch.t, ch.u)?;
    let (psi, zeta, t, u) = (ch.psi, ch.zeta, ch.t, ch.u);
    let pi = ch.normalizer();
    let s = ch.total() as f64;
    let scale = s / (pi * pi * (zeta + psi));
    let off = u - psi * t;
    Ok(Matrix2::new(
        u + zeta * t,
        off,
        off,
        orthogonality_numerator(psi, zeta, t, u) / zeta,
    ) * scale)
}

/// `psi t (psi + u) + zeta u (1 + t)`.
fn orthogonality_numerator(psi: f64, zeta: f64, t: f64, u: f64) -> f64 {
    psi * t * (psi + u) + zeta * u * (1.0 + t)
}

/// Orthogonal nuisance parameter `t log zeta + log(zeta + psi) - (1 + t) log pi`.
pub fn orthogonal_xi(psi: f64, zeta: f64, t: f64, u: f64) -> Result<f64> {
    check_domain(psi, zeta, t, u)?;
    let pi = psi + zeta + u + zeta * t;
    Ok(t * zeta.ln() + (zeta + psi).ln() - (1.0 + t) * pi.ln())
}

/// Right-hand side of the orthogonality equation, `dzeta/dpsi` along a
/// level set of the orthogonal parameter.
pub fn orthogonal_zeta_slope(psi: f64, zeta: f64, t: f64, u: f64) -> Result<f64> {
    check_domain(psi, zeta, t, u)?;
    Ok(zeta * (psi * t - u) / orthogonality_numerator(psi, zeta, t, u))
}

/// Single-channel prior density in `(psi, zeta)` with `g = 1`.
pub fn prior_single(psi: f64, zeta: f64, t: f64, u: f64) -> Result<f64> {
    check_domain(psi, zeta, t, u)?;
    let pi = psi + zeta + u + zeta * t;
    let num = orthogonality_numerator(psi, zeta, t, u);
    let den = zeta * zeta * (zeta + psi) * (zeta + psi) * pi.powi(3);
    Ok((num / den).sqrt())
}

/// Multi-channel prior density in `(psi, zeta_1, ..., zeta_n)` with the
/// function of the orthogonal parameters taken constant. `channels` holds
/// `(s_k, t_k, u_k)`.
pub fn prior_multi(psi: f64, zetas: &[f64], channels: &[(f64, f64, f64)]) -> Result<f64> {
    if zetas.len() != channels.len() || zetas.is_empty() {
        return Err(Error::Domain(format!(
            "{} zetas for {} channels",
            zetas.len(),
            channels.len()
        )));
    }
    let mut info = 0.0;
    let mut log_prod = 0.0;
    for (&zeta, &(s, t, u)) in zetas.iter().zip(channels) {
        check_domain(psi, zeta, t, u)?;
        let pi = zeta + psi + u + zeta * t;
        let a = orthogonality_numerator(psi, zeta, t, u);
        info += s * t * u / (pi * a);
        log_prod += a.ln() - zeta.ln() - (zeta + psi).ln() - pi.ln();
    }
    let v = 0.5 * info.abs().ln() + log_prod;
    Ok(v.exp())
}

/// Bayesian correction `q_B(psi)`, assembled from fresh fits.
pub fn q_bayes(
    data: &Dataset,
    psi: f64,
    mle: &FitResult,
    constrained: &FitResult,
    prior: &PriorSpec,
) -> Result<f64> {
    if constrained.psi() != psi {
        return Err(Error::Domain(format!(
            "constrained fit is at psi = {}, not {psi}",
            constrained.psi()
        )));
    }
    let engine = PivotEngine::with_prior(data.clone(), mle.clone(), prior.clone())?;
    engine.q_bayes_at(constrained)
}

/// Bayesian modified root `r*_B(psi)` with the same interpolation window and
/// fallback rules as the frequentist modified root.
pub fn r_star_bayes(data: &Dataset, psi: f64, mle: &FitResult, prior: &PriorSpec) -> Result<PivotValue> {
    let engine = PivotEngine::with_prior(data.clone(), mle.clone(), prior.clone())?;
    engine.pivot(psi, Method::RStarBayes)
}
