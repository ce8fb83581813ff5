//! Shared evaluator for the pivots `r`, `r*` and `r*_B`.
//!
//! Everything that depends only on the global fit (canonical parameter and
//! its Jacobian at the MLE, the observed information, the prior at the MLE)
//! is computed once. Near `psi_hat` the corrections `log(q/r)/r` are 0/0; for
//! `|r| < WINDOW` the correction is interpolated by a cubic in `r` through two
//! nodes on each side of the window.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bayes::PriorSpec;
use crate::error::{Error, Result};
use crate::fit::{constrained_mle, global_mle, profile_score, FitResult};
use crate::higher_order::CanonicalMap;
use crate::information::{determinant, nuisance_information, observed_information, profile_information_from};
use crate::model::Dataset;

/// Half-width of the interpolation window in the `r` scale.
pub const WINDOW: f64 = 0.05;

/// Radicand slack (relative to `|l(theta_hat)|`) before a negative profile
/// drop is treated as an optimizer failure.
const RADICAND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "r")]
    R,
    #[serde(rename = "rstar")]
    RStar,
    #[serde(rename = "rstar_bayes")]
    RStarBayes,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::R, Method::RStar, Method::RStarBayes];

    pub fn label(self) -> &'static str {
        match self {
            Method::R => "r",
            Method::RStar => "rstar",
            Method::RStarBayes => "rstar_bayes",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "r" => Ok(Method::R),
            "rstar" | "r*" => Ok(Method::RStar),
            "rstar_bayes" | "bayes" | "rstarb" => Ok(Method::RStarBayes),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Value of a pivot at one `psi`; `fallback` marks that `r` was used in place
/// of a higher-order pivot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PivotValue {
    pub value: f64,
    pub fallback: bool,
}

/// All pivots at one `psi`.
#[derive(Debug, Clone, PartialEq)]
pub struct PivotPoint {
    pub psi: f64,
    pub r: f64,
    pub q: Option<f64>,
    pub rstar: PivotValue,
    pub q_bayes: Option<f64>,
    pub rstar_bayes: PivotValue,
}

impl PivotPoint {
    pub fn value(&self, method: Method) -> PivotValue {
        match method {
            Method::R => PivotValue {
                value: self.r,
                fallback: false,
            },
            Method::RStar => self.rstar,
            Method::RStarBayes => self.rstar_bayes,
        }
    }
}

#[derive(Debug, Clone)]
struct AtMle {
    phi: DVector<f64>,
    det_phi_theta: f64,
    det_j: f64,
    det_jll: f64,
    profile_info: f64,
}

/// Cubic interpolant of `g(r) = pivot - r` through four nodes.
#[derive(Debug, Clone)]
struct Window {
    r: [f64; 4],
    g: [f64; 4],
}

impl Window {
    fn eval(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..4 {
            let mut li = 1.0;
            for j in 0..4 {
                if i != j {
                    li *= (x - self.r[j]) / (self.r[i] - self.r[j]);
                }
            }
            acc += li * self.g[i];
        }
        acc
    }
}

#[derive(Debug)]
pub struct PivotEngine {
    data: Dataset,
    mle: FitResult,
    map: CanonicalMap,
    prior: PriorSpec,
    at_mle: std::result::Result<AtMle, Error>,
    log_prior_mle: std::result::Result<f64, Error>,
    windows: [OnceLock<Option<Window>>; 2],
}

impl PivotEngine {
    pub fn new(data: Dataset) -> Result<Self> {
        let mle = global_mle(&data)?;
        let prior = PriorSpec::for_data(&data);
        Self::with_prior(data, mle, prior)
    }

    pub fn with_mle(data: Dataset, mle: FitResult) -> Result<Self> {
        let prior = PriorSpec::for_data(&data);
        Self::with_prior(data, mle, prior)
    }

    pub fn with_prior(data: Dataset, mle: FitResult, prior: PriorSpec) -> Result<Self> {
        mle.params.check_domain(&data)?;
        let map = CanonicalMap::new(&data, &mle.params);
        let at_mle = Self::mle_quantities(&data, &mle, &map);
        let log_prior_mle = if mle.on_boundary() {
            Err(Error::Boundary("global fit on the boundary".into()))
        } else {
            prior.log_density(&mle.params)
        };
        Ok(Self {
            data,
            mle,
            map,
            prior,
            at_mle,
            log_prior_mle,
            windows: [OnceLock::new(), OnceLock::new()],
        })
    }

    fn mle_quantities(data: &Dataset, mle: &FitResult, map: &CanonicalMap) -> Result<AtMle> {
        if mle.on_boundary() {
            return Err(Error::Boundary(format!(
                "global fit on the boundary (clamped channels {:?}, constrained channels {:?})",
                mle.clamped_channels, mle.constraint_channels
            )));
        }
        let theta = mle.params.to_vector();
        let phi = map.eval(&theta)?;
        let det_phi_theta = determinant(&map.jacobian(&theta)?);
        if det_phi_theta == 0.0 || !det_phi_theta.is_finite() {
            return Err(Error::Singular("canonical parameter Jacobian at the MLE".into()));
        }
        let j = observed_information(data, &mle.params)?;
        let det_j = determinant(&j);
        let d = j.nrows();
        let det_jll = determinant(&j.view((1, 1), (d - 1, d - 1)).into_owned());
        if !(det_j > 0.0 && det_jll > 0.0) {
            return Err(Error::Singular("observed information at the MLE is not positive definite".into()));
        }
        let profile_info = profile_information_from(&j)?;
        Ok(AtMle {
            phi,
            det_phi_theta,
            det_j,
            det_jll,
            profile_info,
        })
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn mle(&self) -> &FitResult {
        &self.mle
    }

    pub fn psi_hat(&self) -> f64 {
        self.mle.psi()
    }

    pub fn prior(&self) -> &PriorSpec {
        &self.prior
    }

    pub fn canonical_map(&self) -> &CanonicalMap {
        &self.map
    }

    /// Whether the frequentist higher-order pivot is computable at all.
    pub fn higher_order_available(&self) -> bool {
        self.at_mle.is_ok()
    }

    pub fn bayes_available(&self) -> bool {
        self.at_mle.is_ok() && self.log_prior_mle.is_ok()
    }

    /// Profile information at `psi_hat`, when computable.
    pub fn profile_information(&self) -> Option<f64> {
        self.at_mle.as_ref().ok().map(|m| m.profile_info)
    }

    /// Scale used to bracket roots: `j_p(psi_hat)^(-1/2)`, or a
    /// curvature-free fallback for boundary fits.
    pub fn standard_error(&self) -> f64 {
        match self.profile_information() {
            Some(jp) => 1.0 / jp.sqrt(),
            None => {
                // curvature of l_p by a wide central difference
                let psi = self.psi_hat();
                let h = 0.1 * psi.abs().max(1.0);
                let lp = |x: f64| constrained_mle(&self.data, x, Some(&self.mle.params)).map(|f| f.loglik);
                match (lp(psi + h), lp(psi + 2.0 * h)) {
                    (Ok(a), Ok(b)) => {
                        let drop = (self.mle.loglik - a).max(1e-12);
                        let slope = (a - b).max(1e-12) / h;
                        (h / (2.0 * drop).sqrt()).min(1.0 / slope).clamp(1e-6, 1e6)
                    }
                    _ => psi.abs().max(1.0),
                }
            }
        }
    }

    /// Constrained fit at `psi`, warm-started from the global fit.
    pub fn fit_at(&self, psi: f64) -> Result<FitResult> {
        constrained_mle(&self.data, psi, Some(&self.mle.params))
    }

    /// Likelihood root from a constrained fit.
    pub fn root_from_fit(&self, fit: &FitResult) -> Result<f64> {
        let drop = self.mle.loglik - fit.loglik;
        let slack = RADICAND_SLACK * self.mle.loglik.abs().max(1.0);
        if drop < -slack {
            return Err(Error::OptimizerFailure {
                psi: fit.psi(),
                excess: -drop,
            });
        }
        let r = (2.0 * drop.max(0.0)).sqrt();
        let diff = self.psi_hat() - fit.psi();
        Ok(if diff > 0.0 {
            r
        } else if diff < 0.0 {
            -r
        } else {
            0.0
        })
    }

    /// Frequentist correction `q(psi)` from a constrained fit.
    pub fn q_at(&self, fit: &FitResult) -> Result<f64> {
        let m = self.at_mle.as_ref().map_err(Clone::clone)?;
        if fit.on_boundary() {
            return Err(Error::Boundary(format!("constrained fit at psi = {} on the boundary", fit.psi())));
        }
        let theta = fit.params.to_vector();
        let phi = self.map.eval(&theta)?;
        let jac = self.map.jacobian(&theta)?;
        let d = theta.len();
        let mut num = DMatrix::zeros(d, d);
        num.set_column(0, &(&m.phi - &phi));
        for c in 1..d {
            num.set_column(c, &jac.column(c));
        }
        let det_jll = determinant(&nuisance_information(&self.data, &fit.params)?);
        if !(det_jll > 0.0) {
            return Err(Error::Singular(format!("nuisance information at psi = {}", fit.psi())));
        }
        let q = determinant(&num) / m.det_phi_theta * (m.det_j / det_jll).sqrt();
        if q.is_finite() {
            Ok(q)
        } else {
            Err(Error::Boundary(format!("q is {q} at psi = {}", fit.psi())))
        }
    }

    /// Bayesian correction `q_B(psi)` from a constrained fit.
    pub fn q_bayes_at(&self, fit: &FitResult) -> Result<f64> {
        let m = self.at_mle.as_ref().map_err(Clone::clone)?;
        let log_prior_mle = *self.log_prior_mle.as_ref().map_err(Clone::clone)?;
        if fit.on_boundary() {
            return Err(Error::Boundary(format!("constrained fit at psi = {} on the boundary", fit.psi())));
        }
        let score = profile_score(&self.data, fit);
        let det_jll = determinant(&nuisance_information(&self.data, &fit.params)?);
        if !(det_jll > 0.0) {
            return Err(Error::Singular(format!("nuisance information at psi = {}", fit.psi())));
        }
        let log_prior = self.prior.log_density(&fit.params)?;
        let q = score / m.profile_info.sqrt() * (det_jll / m.det_jll).sqrt() * (log_prior_mle - log_prior).exp();
        if q.is_finite() {
            Ok(q)
        } else {
            Err(Error::Boundary(format!("q_B is {q} at psi = {}", fit.psi())))
        }
    }

    fn correction(r: f64, q: f64) -> Option<f64> {
        let ratio = q / r;
        if ratio > 0.0 && ratio.is_finite() {
            let g = ratio.ln() / r;
            g.is_finite().then_some(g)
        } else {
            None
        }
    }

    fn correction_at(&self, fit: &FitResult, r: f64, method: Method) -> Option<f64> {
        let q = match method {
            Method::R => return Some(0.0),
            Method::RStar => self.q_at(fit).ok()?,
            Method::RStarBayes => self.q_bayes_at(fit).ok()?,
        };
        Self::correction(r, q)
    }

    fn window(&self, method: Method) -> Option<&Window> {
        let slot = match method {
            Method::R => return None,
            Method::RStar => &self.windows[0],
            Method::RStarBayes => &self.windows[1],
        };
        slot.get_or_init(|| self.build_window(method)).as_ref()
    }

    fn build_window(&self, method: Method) -> Option<Window> {
        let se = self.standard_error();
        let psi_hat = self.psi_hat();
        let mut r = [0.0; 4];
        let mut g = [0.0; 4];
        let targets = [(-1.0, 0.15), (-1.0, 0.07), (1.0, 0.07), (1.0, 0.15)];
        for (i, &(side, base)) in targets.iter().enumerate() {
            let need = if base < 0.1 { 1.2 * WINDOW } else { 2.5 * WINDOW };
            let mut c = base;
            let mut found = None;
            for _ in 0..40 {
                // r is positive below psi_hat
                let psi = psi_hat - side * c * se;
                let fit = self.fit_at(psi).ok()?;
                let rv = self.root_from_fit(&fit).ok()?;
                if rv.abs() >= need {
                    found = Some((fit, rv));
                    break;
                }
                c *= 1.5;
            }
            let (fit, rv) = found?;
            r[i] = rv;
            g[i] = self.correction_at(&fit, rv, method)?;
        }
        Some(Window { r, g })
    }

    fn higher_order(&self, fit: &FitResult, r: f64, method: Method) -> PivotValue {
        let ok = match method {
            Method::R => true,
            Method::RStar => self.higher_order_available(),
            Method::RStarBayes => self.bayes_available(),
        };
        let fallback = PivotValue {
            value: r,
            fallback: true,
        };
        if !ok {
            return fallback;
        }
        if r.abs() < WINDOW {
            return match self.window(method) {
                Some(w) => PivotValue {
                    value: r + w.eval(r),
                    fallback: false,
                },
                None => fallback,
            };
        }
        match self.correction_at(fit, r, method) {
            Some(g) => PivotValue {
                value: r + g,
                fallback: false,
            },
            None => fallback,
        }
    }

    /// Pivot for `method` from an existing constrained fit at `fit.psi()`.
    pub fn pivot_from_fit(&self, fit: &FitResult, method: Method) -> Result<PivotValue> {
        let r = self.root_from_fit(fit)?;
        Ok(match method {
            Method::R => PivotValue {
                value: r,
                fallback: false,
            },
            _ => self.higher_order(fit, r, method),
        })
    }

    pub fn pivot(&self, psi: f64, method: Method) -> Result<PivotValue> {
        let fit = self.fit_at(psi)?;
        self.pivot_from_fit(&fit, method)
    }

    /// Every pivot at `psi` from one constrained fit.
    pub fn point(&self, psi: f64) -> Result<PivotPoint> {
        let fit = self.fit_at(psi)?;
        self.point_from_fit(&fit)
    }

    pub fn point_from_fit(&self, fit: &FitResult) -> Result<PivotPoint> {
        let r = self.root_from_fit(fit)?;
        Ok(PivotPoint {
            psi: fit.psi(),
            r,
            q: self.q_at(fit).ok(),
            rstar: self.higher_order(fit, r, Method::RStar),
            q_bayes: self.q_bayes_at(fit).ok(),
            rstar_bayes: self.higher_order(fit, r, Method::RStarBayes),
        })
    }
}
