//! The multi-channel Poisson signal-plus-background model.
//!
//! Channel `k` contributes three independent Poisson counts with means
//! `gamma_k * psi + beta_k`, `beta_k * t_k` and `gamma_k * u_k`. Fitting is
//! done on the log scale `lambda1 = log beta - log gamma`, `lambda2 = log beta`,
//! with the parameter vector ordered as
//! `theta = (psi, lambda1_1, lambda2_1, ..., lambda1_n, lambda2_n)`.

use nalgebra::{DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One channel: observed counts and known exposure constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelData {
    pub y1: u64,
    pub y2: u64,
    pub y3: u64,
    pub t: f64,
    pub u: f64,
}

impl ChannelData {
    pub fn new(y1: u64, y2: u64, y3: u64, t: f64, u: f64) -> Result<Self> {
        let ch = Self { y1, y2, y3, t, u };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t.is_finite() && self.t > 0.0) {
            return Err(Error::InvalidData(format!("t must be positive, got {}", self.t)));
        }
        if !(self.u.is_finite() && self.u > 0.0) {
            return Err(Error::InvalidData(format!("u must be positive, got {}", self.u)));
        }
        Ok(())
    }

    /// Total count `s = y1 + y2 + y3`.
    pub fn total(&self) -> u64 {
        self.y1 + self.y2 + self.y3
    }

    pub(crate) fn counts(&self) -> (f64, f64, f64) {
        (self.y1 as f64, self.y2 as f64, self.y3 as f64)
    }
}

/// An ordered, non-empty list of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ChannelData>", into = "Vec<ChannelData>")]
pub struct Dataset {
    channels: Vec<ChannelData>,
}

impl Dataset {
    pub fn new(channels: Vec<ChannelData>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidData("dataset needs at least one channel".into()));
        }
        for (k, ch) in channels.iter().enumerate() {
            ch.validate()
                .map_err(|e| Error::InvalidData(format!("channel {}: {e}", k + 1)))?;
        }
        Ok(Self { channels })
    }

    pub fn single(channel: ChannelData) -> Result<Self> {
        Self::new(vec![channel])
    }

    pub fn channels(&self) -> &[ChannelData] {
        &self.channels
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Dimension of the full parameter, `2n + 1`.
    pub fn dim(&self) -> usize {
        2 * self.channels.len() + 1
    }
}

impl TryFrom<Vec<ChannelData>> for Dataset {
    type Error = Error;

    fn try_from(channels: Vec<ChannelData>) -> Result<Self> {
        Self::new(channels)
    }
}

impl From<Dataset> for Vec<ChannelData> {
    fn from(d: Dataset) -> Self {
        d.channels
    }
}

/// Per-channel nuisance parameters on the fitting scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisancePair {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl NuisancePair {
    pub fn from_natural(beta: f64, gamma: f64) -> Self {
        Self {
            lambda1: beta.ln() - gamma.ln(),
            lambda2: beta.ln(),
        }
    }

    pub fn beta(&self) -> f64 {
        self.lambda2.exp()
    }

    pub fn gamma(&self) -> f64 {
        (self.lambda2 - self.lambda1).exp()
    }

    /// Background-to-acceptance ratio `zeta = beta / gamma`.
    pub fn zeta(&self) -> f64 {
        self.lambda1.exp()
    }

    pub fn log_gamma(&self) -> f64 {
        self.lambda2 - self.lambda1
    }
}

/// Full parameter `theta = (psi, lambda)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub psi: f64,
    pub lambda: Vec<NuisancePair>,
}

impl ModelParams {
    pub fn new(psi: f64, lambda: Vec<NuisancePair>) -> Self {
        Self { psi, lambda }
    }

    pub fn from_natural(psi: f64, beta: &[f64], gamma: &[f64]) -> Self {
        let lambda = beta
            .iter()
            .zip(gamma)
            .map(|(&b, &g)| NuisancePair::from_natural(b, g))
            .collect();
        Self { psi, lambda }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(2 * self.lambda.len() + 1);
        v[0] = self.psi;
        for (k, p) in self.lambda.iter().enumerate() {
            v[1 + 2 * k] = p.lambda1;
            v[2 + 2 * k] = p.lambda2;
        }
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        let n = (v.len() - 1) / 2;
        let lambda = (0..n)
            .map(|k| NuisancePair {
                lambda1: v[1 + 2 * k],
                lambda2: v[2 + 2 * k],
            })
            .collect();
        Self { psi: v[0], lambda }
    }

    /// Checks that every Poisson mean is positive for this parameter.
    pub fn check_domain(&self, data: &Dataset) -> Result<()> {
        if self.lambda.len() != data.n_channels() {
            return Err(Error::Domain(format!(
                "{} nuisance pairs for {} channels",
                self.lambda.len(),
                data.n_channels()
            )));
        }
        if !self.psi.is_finite() {
            return Err(Error::Domain(format!("psi = {}", self.psi)));
        }
        for (k, (ch, p)) in data.channels().iter().zip(&self.lambda).enumerate() {
            if !(p.lambda1.is_finite() && p.lambda2.is_finite()) {
                return Err(Error::Domain(format!("channel {}: non-finite lambda", k + 1)));
            }
            let m1 = signal_mean(self.psi, p);
            if m1 < 0.0 || (m1 == 0.0 && ch.y1 > 0) {
                return Err(Error::Domain(format!(
                    "channel {}: main-measurement mean {m1} at psi = {}",
                    k + 1,
                    self.psi
                )));
            }
        }
        Ok(())
    }
}

/// Mean of the main measurement, `gamma * psi + beta`.
#[inline]
pub(crate) fn signal_mean(psi: f64, p: &NuisancePair) -> f64 {
    // gamma * (zeta + psi) is exactly zero at psi = -zeta
    p.gamma() * (p.zeta() + psi)
}

/// Channel contribution to the log likelihood, log-factorials and the
/// `y2 log t + y3 log u` constants omitted.
pub(crate) fn channel_loglik(ch: &ChannelData, psi: f64, p: &NuisancePair) -> f64 {
    let (y1, y2, y3) = ch.counts();
    let beta = p.beta();
    let gamma = p.gamma();
    let m1 = signal_mean(psi, p);
    let main = if ch.y1 == 0 {
        if m1 < 0.0 {
            return f64::NAN;
        }
        0.0
    } else {
        y1 * m1.ln()
    };
    main + y2 * p.lambda2 + y3 * p.log_gamma() - (psi + ch.u) * gamma - (1.0 + ch.t) * beta
}

/// Gradient of the channel contribution with respect to `(psi, lambda1, lambda2)`.
pub(crate) fn channel_gradient(ch: &ChannelData, psi: f64, p: &NuisancePair) -> [f64; 3] {
    let (y1, y2, y3) = ch.counts();
    let beta = p.beta();
    let gamma = p.gamma();
    let m1 = signal_mean(psi, p);
    let ratio = if ch.y1 == 0 { 0.0 } else { y1 / m1 };
    let d_psi = gamma * (ratio - 1.0);
    let d_l1 = -ratio * psi * gamma - y3 + (psi + ch.u) * gamma;
    let d_l2 = y1 + y2 + y3 - (psi + ch.u) * gamma - (1.0 + ch.t) * beta;
    [d_psi, d_l1, d_l2]
}

/// Analytic Hessian of the channel contribution in `(lambda1, lambda2)` at fixed psi.
pub(crate) fn channel_nuisance_hessian(ch: &ChannelData, psi: f64, p: &NuisancePair) -> Matrix2<f64> {
    let y1 = ch.y1 as f64;
    let beta = p.beta();
    let gamma = p.gamma();
    let a = (psi + ch.u) * gamma;
    let b = (1.0 + ch.t) * beta;
    let curv = if ch.y1 == 0 {
        0.0
    } else {
        let m1 = signal_mean(psi, p);
        let w = psi * gamma / m1;
        y1 * w * (1.0 - w)
    };
    Matrix2::new(curv - a, a, a, -a - b)
}

pub(crate) fn channel_nuisance_gradient(ch: &ChannelData, psi: f64, p: &NuisancePair) -> Vector2<f64> {
    let g = channel_gradient(ch, psi, p);
    Vector2::new(g[1], g[2])
}

/// Log likelihood `sum_k {alpha_k(theta) . y_k - c_k(theta)}`.
pub fn log_likelihood(data: &Dataset, params: &ModelParams) -> Result<f64> {
    params.check_domain(data)?;
    let value: f64 = data
        .channels()
        .iter()
        .zip(&params.lambda)
        .map(|(ch, p)| channel_loglik(ch, params.psi, p))
        .sum();
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain(format!("log likelihood is {value} at psi = {}", params.psi)))
    }
}

/// Score vector in the `theta` ordering.
pub fn score(data: &Dataset, params: &ModelParams) -> Result<DVector<f64>> {
    params.check_domain(data)?;
    let mut g = DVector::zeros(data.dim());
    for (k, (ch, p)) in data.channels().iter().zip(&params.lambda).enumerate() {
        let [d_psi, d_l1, d_l2] = channel_gradient(ch, params.psi, p);
        g[0] += d_psi;
        g[1 + 2 * k] = d_l1;
        g[2 + 2 * k] = d_l2;
    }
    if g.iter().all(|x| x.is_finite()) {
        Ok(g)
    } else {
        Err(Error::Domain(format!("non-finite score at psi = {}", params.psi)))
    }
}

/// Curved exponential family pieces for one channel: `alpha_k(theta)` and `c_k(theta)`.
pub fn canonical_terms(ch: &ChannelData, psi: f64, p: &NuisancePair) -> ([f64; 3], f64) {
    let gamma = p.gamma();
    let beta = p.beta();
    let alpha = [signal_mean(psi, p).ln(), p.lambda2, p.log_gamma()];
    let c = (psi + ch.u) * gamma + (1.0 + ch.t) * beta;
    (alpha, c)
}
