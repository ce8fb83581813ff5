//! Significance functions, p-values, confidence bounds and median-unbiased
//! estimates.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::pivot::{Method, PivotEngine, PivotValue};
use crate::roots::{brent_root_with, RootOptions};
use crate::model::Dataset;

/// Solver tolerance in `psi` for bounds and estimates.
pub const ROOT_XTOL: f64 = 1e-9;
const MAX_DOUBLINGS: usize = 40;

pub fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Lower,
    Upper,
}

/// `psi -> Phi(pivot(psi))` for one method.
#[derive(Debug, Clone)]
pub struct SignificanceFunction {
    method: Method,
    engine: Arc<PivotEngine>,
    normal: Normal,
}

/// A bound before and after clamping to the physical region `psi >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub raw: f64,
    pub clamped: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundPair {
    /// Solves `Phi(pivot) = 1 - alpha`.
    pub lower: f64,
    /// Solves `Phi(pivot) = alpha`.
    pub upper: f64,
    pub lower_clamped: f64,
    pub upper_clamped: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub global_iterations: usize,
    pub boundary_channels: Vec<usize>,
    /// Smallest and largest `psi` evaluated while solving.
    pub grid_extent: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub method: Method,
    pub psi_hat: f64,
    pub median_unbiased: f64,
    /// Keyed by the decimal form of `psi0`.
    pub p_value_at: BTreeMap<String, f64>,
    /// Keyed by the decimal form of `alpha`.
    pub bounds: BTreeMap<String, BoundPair>,
    pub fallback_used: bool,
    pub warnings: Vec<String>,
    pub diagnostics: Diagnostics,
}

impl SignificanceFunction {
    pub fn new(engine: Arc<PivotEngine>, method: Method) -> Self {
        Self {
            method,
            engine,
            normal: std_normal(),
        }
    }

    pub fn from_data(data: Dataset, method: Method) -> Result<Self> {
        Ok(Self::new(Arc::new(PivotEngine::new(data)?), method))
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn engine(&self) -> &PivotEngine {
        &self.engine
    }

    pub fn psi_hat(&self) -> f64 {
        self.engine.psi_hat()
    }

    /// The pivot itself, on the normal scale.
    pub fn pivot(&self, psi: f64) -> Result<PivotValue> {
        self.engine.pivot(psi, self.method)
    }

    pub fn evaluate(&self, psi: f64) -> Result<f64> {
        Ok(self.normal.cdf(self.pivot(psi)?.value))
    }

    /// Solves `pivot(psi) = z` by bracketing outward from `psi_hat`.
    fn solve(&self, z: f64, extent: &mut (f64, f64)) -> Result<f64> {
        let center = self.psi_hat();
        let mut f = |psi: f64| -> Result<f64> {
            extent.0 = extent.0.min(psi);
            extent.1 = extent.1.max(psi);
            Ok(self.pivot(psi)?.value - z)
        };
        let f0 = f(center)?;
        if f0 == 0.0 {
            return Ok(center);
        }
        // the pivot decreases in psi, so the root lies above psi_hat iff f0 > 0
        let dir = if f0 > 0.0 { 1.0 } else { -1.0 };
        let se = self.engine.standard_error();
        let mut k = 2.0;
        let (mut near, mut f_near) = (center, f0);
        for _ in 0..MAX_DOUBLINGS {
            let far = center + dir * k * se;
            let f_far = match f(far) {
                Ok(v) => v,
                Err(_) => {
                    return Err(Error::Bracket {
                        lower: near.min(far),
                        upper: near.max(far),
                    })
                }
            };
            if f_far == 0.0 {
                return Ok(far);
            }
            if f_far.signum() != f_near.signum() {
                let opts = RootOptions {
                    xtol: ROOT_XTOL,
                    ..RootOptions::default()
                };
                return brent_root_with(&mut f, near, f_near, far, f_far, opts);
            }
            near = far;
            f_near = f_far;
            k *= 2.0;
        }
        Err(Error::Bracket {
            lower: center.min(near),
            upper: center.max(near),
        })
    }

    /// One-sided p-value `1 - Phi(pivot(psi0))` for `psi = psi0` against `psi > psi0`.
    pub fn p_value(&self, psi0: f64) -> Result<f64> {
        Ok(self.normal.cdf(-self.pivot(psi0)?.value))
    }

    pub fn bound(&self, alpha: f64, side: Side) -> Result<Bound> {
        let mut extent = (f64::INFINITY, f64::NEG_INFINITY);
        self.bound_tracked(alpha, side, &mut extent)
    }

    fn bound_tracked(&self, alpha: f64, side: Side, extent: &mut (f64, f64)) -> Result<Bound> {
        if !(alpha > 0.0 && alpha < 0.5) {
            return Err(Error::Config(format!("alpha must lie in (0, 0.5), got {alpha}")));
        }
        let z = self.normal.inverse_cdf(1.0 - alpha);
        let target = match side {
            Side::Lower => z,
            Side::Upper => -z,
        };
        let raw = self.solve(target, extent)?;
        Ok(Bound {
            raw,
            clamped: raw.max(0.0),
        })
    }

    pub fn median_unbiased(&self) -> Result<f64> {
        let mut extent = (f64::INFINITY, f64::NEG_INFINITY);
        self.solve(0.0, &mut extent)
    }

    pub fn report(&self, alphas: &[f64], psi0s: &[f64]) -> Result<InferenceReport> {
        let mut extent = (self.psi_hat(), self.psi_hat());
        let median = self.solve(0.0, &mut extent)?;
        let mut fallback = self.pivot(median)?.fallback;
        let mut p_value_at = BTreeMap::new();
        for &psi0 in psi0s {
            let pv = self.pivot(psi0)?;
            fallback |= pv.fallback;
            p_value_at.insert(psi0.to_string(), self.normal.cdf(-pv.value));
        }
        let mut bounds = BTreeMap::new();
        let mut warnings = Vec::new();
        for &alpha in alphas {
            let lower = self.bound_tracked(alpha, Side::Lower, &mut extent)?;
            let upper = self.bound_tracked(alpha, Side::Upper, &mut extent)?;
            fallback |= self.pivot(lower.raw)?.fallback | self.pivot(upper.raw)?.fallback;
            if upper.raw < 0.0 {
                warnings.push(format!(
                    "upper bound at level {alpha} is negative ({}); the interval is empty in the physical region, which may indicate an inappropriate model",
                    upper.raw
                ));
            }
            bounds.insert(
                alpha.to_string(),
                BoundPair {
                    lower: lower.raw,
                    upper: upper.raw,
                    lower_clamped: lower.clamped,
                    upper_clamped: upper.clamped,
                },
            );
        }
        let fit = self.engine.mle();
        if fit.on_boundary() {
            warnings.push(format!(
                "global fit on the boundary (channels {:?}); higher-order pivots fall back to r",
                boundary_channels(fit)
            ));
        }
        Ok(InferenceReport {
            method: self.method,
            psi_hat: self.psi_hat(),
            median_unbiased: median,
            p_value_at,
            bounds,
            fallback_used: fallback,
            warnings,
            diagnostics: Diagnostics {
                global_iterations: fit.iterations,
                boundary_channels: boundary_channels(fit),
                grid_extent: extent,
            },
        })
    }
}

fn boundary_channels(fit: &crate::fit::FitResult) -> Vec<usize> {
    let mut v: Vec<usize> = fit
        .clamped_channels
        .iter()
        .chain(&fit.constraint_channels)
        .copied()
        .collect();
    v.sort_unstable();
    v.dedup();
    v
}

pub fn p_value(sig: &SignificanceFunction, psi0: f64) -> Result<f64> {
    sig.p_value(psi0)
}

pub fn bound(sig: &SignificanceFunction, alpha: f64, side: Side) -> Result<Bound> {
    sig.bound(alpha, side)
}

pub fn median_unbiased(sig: &SignificanceFunction) -> Result<f64> {
    sig.median_unbiased()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub psi: f64,
    pub r: f64,
    pub rstar: f64,
    pub rstar_bayes: f64,
    pub rstar_fallback: bool,
    pub rstar_bayes_fallback: bool,
}

impl TableRow {
    pub fn value(&self, method: Method) -> f64 {
        match method {
            Method::R => self.r,
            Method::RStar => self.rstar,
            Method::RStarBayes => self.rstar_bayes,
        }
    }
}

/// Significance values `Phi(pivot)` of all three pivots along `grid`.
pub fn significance_table(engine: &PivotEngine, grid: &[f64]) -> Result<Vec<TableRow>> {
    let normal = std_normal();
    let trace = crate::higher_order::pivot_trace(engine, grid, crate::higher_order::TraceMode::Sequential);
    trace
        .points
        .into_iter()
        .map(|p| {
            let p = p?;
            Ok(TableRow {
                psi: p.psi,
                r: normal.cdf(p.r),
                rstar: normal.cdf(p.rstar.value),
                rstar_bayes: normal.cdf(p.rstar_bayes.value),
                rstar_fallback: p.rstar.fallback,
                rstar_bayes_fallback: p.rstar_bayes.fallback,
            })
        })
        .collect()
}

/// Grid from the `alpha = 0.001` lower bound to the upper bound of the
/// widest of `methods`, with `steps` points.
pub fn auto_grid(engine: &Arc<PivotEngine>, methods: &[Method], steps: usize) -> Result<Vec<f64>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &m in methods {
        let sig = SignificanceFunction::new(engine.clone(), m);
        lo = lo.min(sig.bound(0.001, Side::Lower)?.raw);
        hi = hi.max(sig.bound(0.001, Side::Upper)?.raw);
    }
    Ok(linspace(lo, hi, steps))
}

pub fn linspace(lo: f64, hi: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..steps)
            .map(|i| {
                if i + 1 == steps {
                    hi
                } else {
                    lo + (hi - lo) * i as f64 / (steps - 1) as f64
                }
            })
            .collect(),
    }
}

/// Reports for each method on one dataset, sharing the global fit.
pub fn analyze(data: &Dataset, methods: &[Method], alphas: &[f64], psi0s: &[f64]) -> Result<Vec<InferenceReport>> {
    let engine = Arc::new(PivotEngine::new(data.clone())?);
    methods
        .iter()
        .map(|&m| SignificanceFunction::new(engine.clone(), m).report(alphas, psi0s))
        .collect()
}
