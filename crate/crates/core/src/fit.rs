//! Global and constrained maximum likelihood.
//!
//! Channels share only `psi`, so a constrained fit at fixed `psi` splits into
//! independent two-parameter problems in `(lambda1_k, lambda2_k)`. These are
//! solved by damped Newton with an analytic Hessian, falling back to
//! coordinate ascent. The global fit maximizes the profile log likelihood in
//! `psi` (closed form for a single channel).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    channel_gradient, channel_loglik, channel_nuisance_gradient, channel_nuisance_hessian, signal_mean,
    ChannelData, Dataset, ModelParams, NuisancePair,
};
use crate::roots::brent_maximize;

/// Gradient infinity-norm tolerance on the lambda scale.
pub const GRAD_TOL: f64 = 1e-8;
/// Tolerance on psi for the outer profile maximization.
pub const PSI_TOL: f64 = 1e-6;
/// Log-scale floor for beta and gamma when the data push them to zero.
pub const LOG_FLOOR: f64 = -30.0;
/// Fitted beta, gamma or zeta below `exp(BOUNDARY_LOG)` marks a boundary fit.
pub const BOUNDARY_LOG: f64 = -15.0;
/// Relative margin kept between `exp(lambda1)` and `-psi`.
pub const CONSTRAINT_MARGIN: f64 = 1e-12;

const NEWTON_MAX_ITER: usize = 100;
const COORD_MAX_ITER: usize = 50;
const MAX_LOG_STEP: f64 = 5.0;

/// Result of a global or constrained fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: ModelParams,
    /// Log likelihood at `params`; for a constrained fit this is `l_p(psi)`.
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// 1-based channels whose beta, gamma or zeta was driven towards zero.
    pub clamped_channels: Vec<usize>,
    /// 1-based channels where `exp(lambda1) > -psi` is active.
    pub constraint_channels: Vec<usize>,
}

impl FitResult {
    pub fn psi(&self) -> f64 {
        self.params.psi
    }

    /// True when any channel sits on a boundary of the parameter space.
    pub fn on_boundary(&self) -> bool {
        !self.clamped_channels.is_empty() || !self.constraint_channels.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct ChannelFit {
    pair: NuisancePair,
    loglik: f64,
    iterations: usize,
    converged: bool,
    clamped: bool,
    constrained: bool,
}

/// Closed-form fit for a single channel with `y2 > 0` and `y3 > 0`:
/// fitted means equal the observed counts.
pub fn saturated_mle_single(channel: &ChannelData) -> Result<ModelParams> {
    if channel.y2 == 0 || channel.y3 == 0 {
        return Err(Error::Boundary(format!(
            "saturated fit needs y2 > 0 and y3 > 0 (got y2 = {}, y3 = {})",
            channel.y2, channel.y3
        )));
    }
    let beta = channel.y2 as f64 / channel.t;
    let gamma = channel.y3 as f64 / channel.u;
    let pair = NuisancePair::from_natural(beta, gamma);
    let psi = if channel.y1 == 0 {
        -pair.zeta()
    } else {
        (channel.y1 as f64 - beta) / gamma
    };
    Ok(ModelParams::new(psi, vec![pair]))
}

fn moment_start(ch: &ChannelData, psi: f64) -> NuisancePair {
    let gamma = (ch.y3 as f64).max(0.5) / ch.u;
    let mut beta = (ch.y2 as f64).max(0.5) / ch.t;
    if beta + psi * gamma <= 0.0 {
        beta = -psi * gamma + (ch.y1 as f64).max(0.5);
    }
    NuisancePair::from_natural(beta, gamma)
}

fn project(p: NuisancePair) -> NuisancePair {
    let lambda2 = p.lambda2.max(LOG_FLOOR);
    // log gamma = lambda2 - lambda1 >= LOG_FLOOR
    let lambda1 = p.lambda1.min(lambda2 - LOG_FLOOR);
    NuisancePair { lambda1, lambda2 }
}

fn feasible(ch: &ChannelData, psi: f64, p: &NuisancePair) -> bool {
    let m1 = signal_mean(psi, p);
    if ch.y1 == 0 {
        m1 >= 0.0
    } else {
        m1 > 0.0 && p.zeta() > -psi + CONSTRAINT_MARGIN * psi.abs()
    }
}

fn is_clamped(p: &NuisancePair) -> bool {
    p.lambda2 < BOUNDARY_LOG || p.log_gamma() < BOUNDARY_LOG || p.lambda1 < BOUNDARY_LOG
}

/// Exact constrained fit for a channel with `y1 = 0`, where the main count
/// only enters through its mean.
fn fit_channel_zero_main(ch: &ChannelData, psi: f64) -> ChannelFit {
    let (_, y2, y3) = ch.counts();
    let floor = LOG_FLOOR.exp();
    let gamma_free = if ch.y3 > 0 && psi + ch.u > 0.0 { y3 / (psi + ch.u) } else { floor };
    let beta_free = if ch.y2 > 0 { y2 / (1.0 + ch.t) } else { floor };
    let (pair, constrained) = if beta_free + psi * gamma_free >= 0.0 {
        (NuisancePair::from_natural(beta_free, gamma_free), false)
    } else {
        // supremum on beta = -psi * gamma
        let s = (ch.total() as f64).max(0.0);
        let gamma = if s > 0.0 { s / (ch.u - ch.t * psi) } else { floor };
        let log_gamma = gamma.ln().max(LOG_FLOOR);
        let lambda1 = (-psi).ln() + CONSTRAINT_MARGIN;
        (
            NuisancePair {
                lambda1,
                lambda2: log_gamma + lambda1,
            },
            true,
        )
    };
    ChannelFit {
        loglik: channel_loglik(ch, psi, &pair),
        pair,
        iterations: 0,
        converged: true,
        clamped: is_clamped(&pair),
        constrained,
    }
}

/// Rounding error of `channel_loglik` near `p`, from the size of its terms.
fn rounding(ch: &ChannelData, psi: f64, p: &NuisancePair) -> f64 {
    let (y1, y2, y3) = ch.counts();
    let m1 = signal_mean(psi, p).abs();
    let logs = if ch.y1 > 0 { y1 * m1.ln().abs() } else { 0.0 };
    let size = logs + y2 * p.lambda2.abs() + y3 * p.log_gamma().abs() + (psi + ch.u).abs() * p.gamma() + (1.0 + ch.t) * p.beta();
    8.0 * f64::EPSILON * size.max(1.0)
}

fn grad_norm(ch: &ChannelData, psi: f64, p: &NuisancePair) -> f64 {
    channel_nuisance_gradient(ch, psi, p).amax()
}

fn fit_channel(ch: &ChannelData, psi: f64, init: Option<NuisancePair>) -> ChannelFit {
    if ch.y1 == 0 {
        return fit_channel_zero_main(ch, psi);
    }
    let cold = moment_start(ch, psi);
    let warm = match init {
        Some(p) if feasible(ch, psi, &p) && p.lambda1.is_finite() && p.lambda2.is_finite() && !is_clamped(&p) => p,
        _ => return fit_channel_from(ch, psi, cold),
    };
    let first = fit_channel_from(ch, psi, warm);
    if first.converged && !first.clamped {
        return first;
    }
    // near a zero rate the log-scale score vanishes, so confirm from a cold start
    let second = fit_channel_from(ch, psi, cold);
    match (first.converged, second.converged) {
        (true, false) => first,
        (false, true) => second,
        _ if second.loglik > first.loglik => second,
        _ => first,
    }
}

fn fit_channel_from(ch: &ChannelData, psi: f64, start: NuisancePair) -> ChannelFit {
    let mut p = project(start);
    if !feasible(ch, psi, &p) {
        p = moment_start(ch, psi);
    }
    let mut ll = channel_loglik(ch, psi, &p);
    let mut iterations = 0;

    // damped Newton
    let mut newton_ok = true;
    while iterations < NEWTON_MAX_ITER {
        if grad_norm(ch, psi, &p) < GRAD_TOL {
            break;
        }
        iterations += 1;
        let g = channel_nuisance_gradient(ch, psi, &p);
        let h = channel_nuisance_hessian(ch, psi, &p);
        let step = newton_direction(&h, &g);
        let scale = step.amax();
        let step = if scale > MAX_LOG_STEP { step * (MAX_LOG_STEP / scale) } else { step };
        let mut accepted = false;
        let mut alpha = 1.0;
        for _ in 0..60 {
            let cand = project(NuisancePair {
                lambda1: p.lambda1 + alpha * step[0],
                lambda2: p.lambda2 + alpha * step[1],
            });
            if feasible(ch, psi, &cand) {
                let lc = channel_loglik(ch, psi, &cand);
                if lc.is_finite()
                    && (lc > ll
                        || (lc >= ll - rounding(ch, psi, &p)
                            && grad_norm(ch, psi, &cand) < grad_norm(ch, psi, &p)))
                {
                    p = cand;
                    ll = lc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            newton_ok = false;
            break;
        }
    }

    if !newton_ok || grad_norm(ch, psi, &p) >= GRAD_TOL {
        let (q, lq, it) = coordinate_ascent(ch, psi, p, ll);
        p = q;
        ll = lq;
        iterations += it;
    }

    let converged = grad_norm(ch, psi, &p) < GRAD_TOL;
    ChannelFit {
        pair: p,
        loglik: ll,
        iterations,
        converged,
        clamped: is_clamped(&p),
        constrained: false,
    }
}

/// Newton ascent direction, regularized when the Hessian is not negative definite.
fn newton_direction(h: &nalgebra::Matrix2<f64>, g: &nalgebra::Vector2<f64>) -> nalgebra::Vector2<f64> {
    let tr = h[(0, 0)] + h[(1, 1)];
    let det = h.determinant();
    let disc = (0.25 * tr * tr - det).max(0.0).sqrt();
    let max_eig = 0.5 * tr + disc;
    let shift = if max_eig < 0.0 {
        0.0
    } else {
        max_eig + 1e-3 * (h.amax() + 1.0)
    };
    let hm = h - nalgebra::Matrix2::identity() * shift;
    match hm.try_inverse() {
        Some(inv) => -(inv * g),
        None => g / (h.amax() + 1.0),
    }
}

fn coordinate_ascent(ch: &ChannelData, psi: f64, mut p: NuisancePair, mut ll: f64) -> (NuisancePair, f64, usize) {
    let mut it = 0;
    while it < COORD_MAX_ITER {
        if grad_norm(ch, psi, &p) < GRAD_TOL {
            break;
        }
        it += 1;
        for coord in 0..2 {
            let g = channel_nuisance_gradient(ch, psi, &p)[coord];
            let h = channel_nuisance_hessian(ch, psi, &p)[(coord, coord)];
            let mut step = if h < 0.0 { -g / h } else { g.signum() };
            step = step.clamp(-MAX_LOG_STEP, MAX_LOG_STEP);
            for _ in 0..60 {
                let mut cand = p;
                if coord == 0 {
                    cand.lambda1 += step;
                } else {
                    cand.lambda2 += step;
                }
                let cand = project(cand);
                if feasible(ch, psi, &cand) {
                    let lc = channel_loglik(ch, psi, &cand);
                    let g_new = channel_nuisance_gradient(ch, psi, &cand)[coord];
                    if lc.is_finite()
                        && (lc > ll || (lc >= ll - rounding(ch, psi, &p) && g_new.abs() < g.abs()))
                    {
                        p = cand;
                        ll = lc;
                        break;
                    }
                }
                step *= 0.5;
            }
        }
    }
    (p, ll, it)
}

fn assemble(data: &Dataset, psi: f64, fits: Vec<ChannelFit>) -> Result<FitResult> {
    let loglik: f64 = fits.iter().map(|f| f.loglik).sum();
    let iterations = fits.iter().map(|f| f.iterations).max().unwrap_or(0);
    let converged = fits.iter().all(|f| f.converged);
    let clamped_channels = (1..=fits.len()).filter(|&k| fits[k - 1].clamped).collect();
    let constraint_channels = (1..=fits.len()).filter(|&k| fits[k - 1].constrained).collect();
    let params = ModelParams::new(psi, fits.iter().map(|f| f.pair).collect());
    if !loglik.is_finite() {
        return Err(Error::Domain(format!("profile log likelihood non-finite at psi = {psi}")));
    }
    if !converged {
        return Err(Error::NotConverged {
            psi,
            iterations,
            loglik,
        });
    }
    debug_assert_eq!(params.lambda.len(), data.n_channels());
    Ok(FitResult {
        params,
        loglik,
        converged,
        iterations,
        clamped_channels,
        constraint_channels,
    })
}

/// Maximizes the log likelihood over the nuisance parameters at fixed `psi`.
/// The returned `loglik` is the profile log likelihood `l_p(psi)`.
pub fn constrained_mle(data: &Dataset, psi: f64, init: Option<&ModelParams>) -> Result<FitResult> {
    if !psi.is_finite() {
        return Err(Error::Domain(format!("psi = {psi}")));
    }
    let fits: Vec<ChannelFit> = data
        .channels()
        .iter()
        .enumerate()
        .map(|(k, ch)| fit_channel(ch, psi, init.and_then(|p| p.lambda.get(k).copied())))
        .collect();
    assemble(data, psi, fits)
}

/// As [`constrained_mle`], with channels fitted on the rayon pool. Output is
/// identical to the sequential version.
pub fn constrained_mle_par(data: &Dataset, psi: f64, init: Option<&ModelParams>) -> Result<FitResult> {
    if !psi.is_finite() {
        return Err(Error::Domain(format!("psi = {psi}")));
    }
    let fits: Vec<ChannelFit> = data
        .channels()
        .par_iter()
        .enumerate()
        .map(|(k, ch)| fit_channel(ch, psi, init.and_then(|p| p.lambda.get(k).copied())))
        .collect();
    assemble(data, psi, fits)
}

/// Derivative of the profile log likelihood, `dl_p/dpsi`, from the score at a
/// constrained optimum. Valid when no channel has an active constraint.
pub fn profile_score(data: &Dataset, fit: &FitResult) -> f64 {
    data.channels()
        .iter()
        .zip(&fit.params.lambda)
        .map(|(ch, p)| channel_gradient(ch, fit.params.psi, p)[0])
        .sum()
}

/// Maximum likelihood estimate of the full parameter.
pub fn global_mle(data: &Dataset) -> Result<FitResult> {
    if data.channels().iter().all(|c| c.y3 == 0) {
        return Err(Error::Boundary(
            "every channel has y3 = 0; the acceptance gamma is not identified".into(),
        ));
    }
    if data.n_channels() == 1 {
        return global_single(&data.channels()[0], data);
    }
    if data.channels().iter().all(|c| c.y1 == 0) {
        return Err(Error::Boundary(
            "every channel has y1 = 0; psi-hat lies on the boundary of the extended space".into(),
        ));
    }
    global_profile(data)
}

fn global_single(ch: &ChannelData, data: &Dataset) -> Result<FitResult> {
    let floor = LOG_FLOOR.exp();
    let beta = if ch.y2 > 0 { ch.y2 as f64 / ch.t } else { floor };
    let gamma = ch.y3 as f64 / ch.u;
    let pair = NuisancePair::from_natural(beta, gamma);
    let psi = if ch.y1 == 0 { -pair.zeta() } else { (ch.y1 as f64 - beta) / gamma };
    let params = ModelParams::new(psi, vec![pair]);
    let loglik = channel_loglik(ch, psi, &pair);
    if !loglik.is_finite() {
        return Err(Error::Domain(format!("log likelihood non-finite at psi-hat = {psi}")));
    }
    let _ = data;
    Ok(FitResult {
        params,
        loglik,
        converged: true,
        iterations: 0,
        clamped_channels: if ch.y2 == 0 { vec![1] } else { vec![] },
        constraint_channels: if ch.y1 == 0 { vec![1] } else { vec![] },
    })
}

fn global_profile(data: &Dataset) -> Result<FitResult> {
    // moment-based starting value
    let (num, den) = data.channels().iter().fold((0.0, 0.0), |(a, b), c| {
        let beta = (c.y2 as f64).max(0.5) / c.t;
        let gamma = (c.y3 as f64).max(0.5) / c.u;
        (a + c.y1 as f64 - beta, b + gamma)
    });
    let psi0 = num / den;
    let mut warm: Option<ModelParams> = None;
    let mut evals = 0usize;
    let mut profile = |psi: f64| -> Result<f64> {
        evals += 1;
        let fit = constrained_mle(data, psi, warm.as_ref())?;
        let ll = fit.loglik;
        warm = Some(fit.params);
        Ok(ll)
    };

    // downhill bracket search on -l_p
    let mut a = psi0;
    let mut fa = profile(a)?;
    let mut b = psi0 + 0.5 * psi0.abs().max(1.0);
    let mut fb = profile(b)?;
    if fb < fa {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    const GOLD: f64 = 1.618_033_988_749_895;
    let mut c = b + GOLD * (b - a);
    let mut fc = profile(c)?;
    let mut expansions = 0;
    while fc > fb {
        expansions += 1;
        if expansions > 80 {
            return Err(Error::Boundary(format!(
                "profile log likelihood keeps increasing towards psi = {c}"
            )));
        }
        a = b;
        fa = fc.min(fb);
        b = c;
        fb = fc;
        c = b + GOLD * (b - a);
        fc = profile(c)?;
    }
    let _ = fa;
    let (mut psi_hat, _) = brent_maximize(&mut profile, a, b, c, fb, 1e-10, 500)?;

    // Newton polish on the profile score
    let mut fit = constrained_mle(data, psi_hat, None)?;
    if fit.constraint_channels.is_empty() {
        for _ in 0..4 {
            let s = profile_score(data, &fit);
            let h = 1e-5 * psi_hat.abs().max(1.0);
            let up = constrained_mle(data, psi_hat + h, Some(&fit.params))?;
            let dn = constrained_mle(data, psi_hat - h, Some(&fit.params))?;
            let ds = (profile_score(data, &up) - profile_score(data, &dn)) / (2.0 * h);
            if !(ds < 0.0) {
                break;
            }
            let cand = psi_hat - s / ds;
            let cfit = constrained_mle(data, cand, Some(&fit.params))?;
            if cfit.loglik + 1e-12 < fit.loglik {
                break;
            }
            let done = (cand - psi_hat).abs() < 1e-12 * psi_hat.abs().max(1.0);
            psi_hat = cand;
            fit = cfit;
            if done {
                break;
            }
        }
    }
    fit.iterations = fit.iterations.max(evals);
    Ok(fit)
}
