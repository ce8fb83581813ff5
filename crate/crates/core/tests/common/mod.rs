#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use signalroot::bayes::{
    orthogonal_xi, orthogonal_zeta_slope, prior_multi, prior_single, trinomial_fisher, trinomial_loglik,
    TrinomialChannel,
};
use signalroot::higher_order::CanonicalMap;
use signalroot::inference::{linspace, std_normal};
use signalroot::information::{determinant, nuisance_information, observed_information};
use signalroot::roots::{brent_root, RootOptions};
use signalroot::simulation::{covers, default_levels, evaluate_replicate};
use signalroot::*;
use statrs::distribution::{ContinuousCDF, Discrete, Poisson};
use statrs::function::gamma::ln_gamma;

/// Outcome of one check: a short summary, or what went wrong.
pub type Check = std::result::Result<String, String>;

pub fn single() -> Dataset {
    Dataset::single(ChannelData::new(1, 8, 14, 27.0, 80.0).unwrap()).unwrap()
}

pub fn ten() -> Dataset {
    let rows = [
        (1, 7, 5, 15.0, 50.0),
        (1, 5, 12, 17.0, 55.0),
        (2, 4, 2, 19.0, 60.0),
        (2, 7, 9, 21.0, 65.0),
        (1, 9, 6, 23.0, 70.0),
        (1, 3, 5, 25.0, 75.0),
        (2, 10, 10, 27.0, 80.0),
        (3, 6, 12, 29.0, 85.0),
        (2, 9, 7, 31.0, 90.0),
        (1, 13, 13, 33.0, 95.0),
    ];
    Dataset::new(
        rows.iter()
            .map(|&(y1, y2, y3, t, u)| ChannelData::new(y1, y2, y3, t, u).unwrap())
            .collect(),
    )
    .unwrap()
}

pub fn three() -> Dataset {
    Dataset::new(vec![
        ChannelData::new(1, 7, 5, 15.0, 50.0).unwrap(),
        ChannelData::new(2, 7, 9, 21.0, 65.0).unwrap(),
        ChannelData::new(3, 6, 12, 29.0, 85.0).unwrap(),
    ])
    .unwrap()
}

pub fn single_design(replications: usize, seed: u64, threads: usize) -> CoverageConfig {
    CoverageConfig {
        replications,
        seed,
        threads,
        ..CoverageConfig::single(1.0, 1.1f64.exp(), 1.0, 33.0, 100.0)
    }
}

pub fn ten_design(replications: usize, seed: u64, threads: usize) -> CoverageConfig {
    CoverageConfig {
        psi_true: 2.0,
        beta: (0..10).map(|i| 0.2 + 0.1 * i as f64).collect(),
        gamma: (0..10).map(|i| 0.2 + 0.05 * i as f64).collect(),
        t: (0..10).map(|i| 15.0 + 2.0 * i as f64).collect(),
        u: (0..10).map(|i| 50.0 + 5.0 * i as f64).collect(),
        replications,
        levels: default_levels(),
        methods: Method::ALL.to_vec(),
        seed,
        threads,
    }
}

pub fn threads() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

/// `q` from an arbitrary map `theta -> phi`, differentiated independently.
pub fn q_generic<F>(data: &Dataset, mle: &FitResult, fit: &FitResult, phi: F) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    // five-point stencil
    let jac = |theta: &DVector<f64>| {
        let d = theta.len();
        let mut m = DMatrix::zeros(d, d);
        for c in 0..d {
            let h = f64::EPSILON.powf(0.2) * theta[c].abs().max(1.0);
            let at = |k: f64| {
                let mut v = theta.clone();
                v[c] += k * h;
                phi(&v)
            };
            m.set_column(c, &((at(-2.0) - at(2.0) + (at(1.0) - at(-1.0)) * 8.0) / (12.0 * h)));
        }
        m
    };
    q_with_jacobian(data, mle, fit, &phi, &jac)
}

/// `q` from a map and its Jacobian.
pub fn q_with_jacobian<F, J>(data: &Dataset, mle: &FitResult, fit: &FitResult, phi: &F, jac: &J) -> f64
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    J: Fn(&DVector<f64>) -> DMatrix<f64>,
{
    let th = mle.params.to_vector();
    let tp = fit.params.to_vector();
    let d = th.len();
    let jp = jac(&tp);
    let mut num = DMatrix::zeros(d, d);
    num.set_column(0, &(phi(&th) - phi(&tp)));
    for c in 1..d {
        num.set_column(c, &jp.column(c));
    }
    let det_j = determinant(&observed_information(data, &mle.params).unwrap());
    let det_jll = determinant(&nuisance_information(data, &fit.params).unwrap());
    determinant(&num) / determinant(&jac(&th)) * (det_j / det_jll).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AffineJacobian {
    /// Differentiate `A phi + b` numerically.
    Differenced,
    /// Use `A` times the Jacobian of `phi`.
    ChainRule,
}

/// `q` is unchanged when the canonical parameter is replaced by `A phi + b`.
pub fn affine_invariance(data: &Dataset, seed: u64, tol: f64, how: AffineJacobian) -> Check {
    let engine = PivotEngine::new(data.clone()).map_err(|e| e.to_string())?;
    if !engine.higher_order_available() {
        return Err("higher-order terms unavailable".into());
    }
    let mle = engine.mle();
    let map = CanonicalMap::new(data, &mle.params);
    let se = engine.standard_error();
    let d = data.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for k in [-1.5, 1.5, 3.0] {
        let fit = engine.fit_at(engine.psi_hat() + k * se).map_err(|e| e.to_string())?;
        let base = engine.q_at(&fit).map_err(|e| e.to_string())?;
        for _ in 0..10 {
            let a = DMatrix::from_fn(d, d, |i, j| rng.random_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 });
            let b = DVector::from_fn(d, |_, _| rng.random_range(-5.0..5.0));
            let phi = |t: &DVector<f64>| &a * map.eval(t).unwrap() + &b;
            let q = match how {
                AffineJacobian::Differenced => q_generic(data, mle, &fit, phi),
                AffineJacobian::ChainRule => {
                    q_with_jacobian(data, mle, &fit, &phi, &|t: &DVector<f64>| &a * map.jacobian(t).unwrap())
                }
            };
            worst = worst.max(rel(q, base));
        }
    }
    if worst <= tol {
        Ok(format!("max relative change {worst:.1e}"))
    } else {
        Err(format!("relative change {worst:.3e} exceeds {tol:e}"))
    }
}

/// Conditional maximizer of the trinomial likelihood in `zeta`, from the
/// quadratic `-T y3 z^2 + [c (y1 + y2) - T psi (y1 + y3)] z + c y2 psi = 0`
/// with `T = 1 + t`, `c = psi + u`.
pub fn trinomial_zeta_hat(ch: &ChannelData, psi: f64) -> f64 {
    let (y1, y2, y3) = (ch.y1 as f64, ch.y2 as f64, ch.y3 as f64);
    let tt = 1.0 + ch.t;
    let c = psi + ch.u;
    let a = -tt * y3;
    let b = c * (y1 + y2) - tt * psi * (y1 + y3);
    let c0 = c * y2 * psi;
    let disc = (b * b - 4.0 * a * c0).sqrt();
    let roots = [(-b + disc) / (2.0 * a), (-b - disc) / (2.0 * a)];
    roots
        .into_iter()
        .filter(|z| *z > 0.0 && psi + z > 0.0)
        .fold(f64::NAN, f64::max)
}

pub fn trinomial_profile(data: &Dataset, psi: f64) -> f64 {
    data.channels()
        .iter()
        .map(|ch| {
            let z = trinomial_zeta_hat(ch, psi);
            trinomial_loglik(&TrinomialChannel::new(ch, psi, z).unwrap()).unwrap()
        })
        .sum()
}

/// The Poisson and conditional trinomial profile log likelihoods differ by
/// a constant in `psi`.
pub fn profile_constancy(data: &Dataset, psis: &[f64], tol: f64) -> Check {
    let diffs: Vec<f64> = psis
        .iter()
        .map(|&psi| {
            let fit = constrained_mle(data, psi, None).map_err(|e| e.to_string())?;
            Ok(fit.loglik - trinomial_profile(data, psi))
        })
        .collect::<std::result::Result<_, String>>()?;
    let lo = diffs.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = diffs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= tol {
        Ok(format!("spread {:.1e} over {} points", hi - lo, psis.len()))
    } else {
        Err(format!("profile difference varies by {:.3e}", hi - lo))
    }
}

fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
    let h = 1e-5 * x.abs().max(1.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `xi(psi, zeta)` is constant along `dzeta/dpsi = slope(psi, zeta)`.
pub fn orthogonality_residual(points: &[(f64, f64, f64, f64)], tol: f64) -> Check {
    let mut worst: f64 = 0.0;
    for &(psi, zeta, t, u) in points {
        let xi_psi = central(|p| orthogonal_xi(p, zeta, t, u).unwrap(), psi);
        let xi_zeta = central(|z| orthogonal_xi(psi, z, t, u).unwrap(), zeta);
        let slope = orthogonal_zeta_slope(psi, zeta, t, u).unwrap();
        let scale = xi_psi.abs() + (xi_zeta * slope).abs();
        worst = worst.max((xi_psi + xi_zeta * slope).abs() / scale);
    }
    if worst <= tol {
        Ok(format!("max relative residual {worst:.1e}"))
    } else {
        Err(format!("residual {worst:.3e} exceeds {tol:e}"))
    }
}

pub fn orthogonality_grid() -> Vec<(f64, f64, f64, f64)> {
    let mut pts = Vec::new();
    for &(t, u) in &[(27.0, 80.0), (1.0, 1.0), (33.0, 100.0), (0.5, 7.0)] {
        for &psi in &[0.0, 0.3, 2.0, 11.0, 40.0] {
            for &zeta in &[0.05, 0.3, 1.0, 4.0] {
                pts.push((psi, zeta, t, u));
            }
        }
    }
    pts
}

/// Score of one trinomial observation in `(psi, zeta)`.
fn trinomial_score(y: [u64; 3], psi: f64, zeta: f64, t: f64, u: f64) -> [f64; 2] {
    let s = (y[0] + y[1] + y[2]) as f64;
    let pi = psi + zeta + u + zeta * t;
    let a = y[0] as f64 / (psi + zeta);
    [a - s / pi, a + y[1] as f64 / zeta - s * (1.0 + t) / pi]
}

/// All outcomes with total `s` and their probabilities.
fn trinomial_outcomes(s: u64, p: [f64; 3]) -> Vec<([u64; 3], f64)> {
    let mut out = Vec::new();
    let lf = |n: u64| ln_gamma(n as f64 + 1.0);
    for y1 in 0..=s {
        for y2 in 0..=s - y1 {
            let y3 = s - y1 - y2;
            let mut lp = lf(s) - lf(y1) - lf(y2) - lf(y3);
            for (y, pk) in [y1, y2, y3].iter().zip(p) {
                if *y > 0 {
                    lp += *y as f64 * pk.ln();
                }
            }
            out.push(([y1, y2, y3], lp.exp()));
        }
    }
    out
}

fn zeta_on_level_set(psi: f64, xi: f64, t: f64, u: f64, guess: f64) -> f64 {
    let f = |z: f64| orthogonal_xi(psi, z, t, u).map(|v| v - xi);
    let (mut lo, mut hi) = (guess / 2.0, guess * 2.0);
    while f(lo).unwrap() > 0.0 {
        lo /= 2.0;
    }
    while f(hi).unwrap() < 0.0 {
        hi *= 2.0;
    }
    let opts = RootOptions {
        xtol: 1e-15 * guess.max(1.0),
        max_iter: 400,
    };
    brent_root(f, lo, hi, opts).unwrap()
}

fn matrix_rel(a: &Matrix2<f64>, b: &Matrix2<f64>) -> f64 {
    (a - b).abs().max() / b.abs().max()
}

/// Expected information by enumeration against the closed forms, the
/// information identity, and the transformation to the orthogonal
/// parametrization `(psi, xi)` with `zeta(psi, xi)` found by root finding.
pub fn fisher_identities(tol: f64) -> Check {
    let mut worst: f64 = 0.0;
    let cases = [
        (1u64, 1.0, 0.5, 27.0, 80.0),
        (5, 0.0, 0.3, 1.0, 1.0),
        (12, 3.0, 0.2, 33.0, 100.0),
        (20, 0.5, 1.5, 2.0, 3.0),
        (20, 11.0, 0.1, 15.0, 50.0),
        (17, 0.2, 2.0, 0.5, 0.7),
    ];
    for &(s, psi, zeta, t, u) in &cases {
        let tc = TrinomialChannel {
            y1: s,
            y2: 0,
            y3: 0,
            zeta,
            psi,
            t,
            u,
        };
        let closed = trinomial_fisher(&tc).unwrap();
        let outcomes = trinomial_outcomes(s, tc.cell_probabilities());
        let mass: f64 = outcomes.iter().map(|o| o.1).sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(format!("outcome probabilities sum to {mass}"));
        }

        let mut outer = Matrix2::zeros();
        for (y, w) in &outcomes {
            let g = trinomial_score(*y, psi, zeta, t, u);
            outer += Matrix2::new(g[0] * g[0], g[0] * g[1], g[1] * g[0], g[1] * g[1]) * *w;
        }
        worst = worst.max(matrix_rel(&outer, &closed));

        // minus the expected Hessian of the log likelihood, by differences
        let mut hess = Matrix2::zeros();
        let (hp, hz) = (1e-4 * psi.abs().max(1.0), 1e-4 * zeta);
        for (y, w) in &outcomes {
            let ll = |p: f64, z: f64| {
                trinomial_loglik(&TrinomialChannel {
                    y1: y[0],
                    y2: y[1],
                    y3: y[2],
                    zeta: z,
                    psi: p,
                    t,
                    u,
                })
                .unwrap()
            };
            let f0 = ll(psi, zeta);
            let dpp = (ll(psi + hp, zeta) - 2.0 * f0 + ll(psi - hp, zeta)) / (hp * hp);
            let dzz = (ll(psi, zeta + hz) - 2.0 * f0 + ll(psi, zeta - hz)) / (hz * hz);
            let dpz = (ll(psi + hp, zeta + hz) - ll(psi + hp, zeta - hz) - ll(psi - hp, zeta + hz)
                + ll(psi - hp, zeta - hz))
                / (4.0 * hp * hz);
            hess -= Matrix2::new(dpp, dpz, dpz, dzz) * *w;
        }
        worst = worst.max(matrix_rel(&hess, &closed));

        // orthogonal parametrization
        let xi0 = orthogonal_xi(psi, zeta, t, u).unwrap();
        let h = 1e-4 * psi.abs().max(1.0);
        let dz_dpsi = (zeta_on_level_set(psi + h, xi0, t, u, zeta) - zeta_on_level_set(psi - h, xi0, t, u, zeta))
            / (2.0 * h);
        let hx = 1e-4 * xi0.abs().max(1.0);
        let dz_dxi = (zeta_on_level_set(psi, xi0 + hx, t, u, zeta) - zeta_on_level_set(psi, xi0 - hx, t, u, zeta))
            / (2.0 * hx);
        let mut orth = Matrix2::zeros();
        for (y, w) in &outcomes {
            let g = trinomial_score(*y, psi, zeta, t, u);
            let gp = g[0] + g[1] * dz_dpsi;
            let gx = g[1] * dz_dxi;
            orth += Matrix2::new(gp * gp, gp * gx, gx * gp, gx * gx) * *w;
        }
        let cross = orth[(0, 1)].abs() / (orth[(0, 0)] * orth[(1, 1)]).sqrt();
        worst = worst.max(cross);
        let schur = closed[(0, 0)] - closed[(0, 1)] * closed[(0, 1)] / closed[(1, 1)];
        worst = worst.max(rel(orth[(0, 0)], schur));
        worst = worst.max(rel(orth[(1, 1)], closed[(1, 1)] * dz_dxi * dz_dxi));
    }
    if worst <= tol {
        Ok(format!("max relative error {worst:.1e}"))
    } else {
        Err(format!("relative error {worst:.3e} exceeds {tol:e}"))
    }
}

/// The single-channel prior is `i_psipsi.xi^(1/2) |dxi/dzeta|` up to a
/// constant factor.
pub fn prior_matches_schur_complement(tol: f64) -> Check {
    let mut ratios = Vec::new();
    for &(psi, zeta, t, u) in &orthogonality_grid() {
        let tc = TrinomialChannel {
            y1: 1,
            y2: 0,
            y3: 0,
            zeta,
            psi,
            t,
            u,
        };
        let i = trinomial_fisher(&tc).unwrap();
        let schur = i[(0, 0)] - i[(0, 1)] * i[(0, 1)] / i[(1, 1)];
        let dxi = central(|z| orthogonal_xi(psi, z, t, u).unwrap(), zeta);
        let target = schur.sqrt() * dxi.abs();
        ratios.push((prior_single(psi, zeta, t, u).unwrap() / target, t, u));
    }
    // the constant may depend on (t, u) only
    let mut worst: f64 = 0.0;
    for chunk in ratios.chunks(20) {
        let r0 = chunk[0].0;
        for r in chunk {
            worst = worst.max(rel(r.0, r0));
        }
    }
    if worst <= tol {
        Ok(format!("ratio spread {worst:.1e}"))
    } else {
        Err(format!("prior ratio varies by {worst:.3e}"))
    }
}

/// `q_B` from the conditional trinomial model: score, profile information,
/// nuisance information and prior all in `(psi, zeta)`.
pub fn q_bayes_trinomial(data: &Dataset, psi_hat: f64, psi: f64) -> f64 {
    let chans = data.channels();
    let zeta_hat: Vec<f64> = chans.iter().map(|c| trinomial_zeta_hat(c, psi_hat)).collect();
    let zeta_psi: Vec<f64> = chans.iter().map(|c| trinomial_zeta_hat(c, psi)).collect();
    let hess = |ch: &ChannelData, p: f64, z: f64| {
        let (y1, y2) = (ch.y1 as f64, ch.y2 as f64);
        let s = ch.total() as f64;
        let tt = 1.0 + ch.t;
        let pi = p + ch.u + tt * z;
        let a = y1 / ((p + z) * (p + z));
        let jpp = a - s / (pi * pi);
        let jpz = a - s * tt / (pi * pi);
        let jzz = a + y2 / (z * z) - s * tt * tt / (pi * pi);
        (jpp, jpz, jzz)
    };
    let mut score = 0.0;
    let mut jp = 0.0;
    let mut log_ratio = 0.0;
    for (k, ch) in chans.iter().enumerate() {
        let s = ch.total() as f64;
        let z = zeta_psi[k];
        score += ch.y1 as f64 / (psi + z) - s / (psi + ch.u + (1.0 + ch.t) * z);
        let (jpp, jpz, jzz) = hess(ch, psi_hat, zeta_hat[k]);
        jp += jpp - jpz * jpz / jzz;
        let (_, _, jzz_psi) = hess(ch, psi, z);
        log_ratio += 0.5 * (jzz_psi.ln() - jzz.ln());
    }
    let consts: Vec<(f64, f64, f64)> = chans.iter().map(|c| (c.total() as f64, c.t, c.u)).collect();
    let prior_ratio = prior_multi(psi_hat, &zeta_hat, &consts).unwrap() / prior_multi(psi, &zeta_psi, &consts).unwrap();
    score / jp.sqrt() * log_ratio.exp() * prior_ratio
}

pub fn bayes_bridge(data: &Dataset, tol: f64) -> Check {
    let engine = PivotEngine::new(data.clone()).map_err(|e| e.to_string())?;
    let se = engine.standard_error();
    let mut worst: f64 = 0.0;
    for k in [-1.5, -0.7, 0.8, 2.0, 4.0] {
        let psi = engine.psi_hat() + k * se;
        if data.channels().iter().any(|c| trinomial_zeta_hat(c, psi).is_nan()) {
            continue;
        }
        let fit = engine.fit_at(psi).map_err(|e| e.to_string())?;
        let q = engine.q_bayes_at(&fit).map_err(|e| e.to_string())?;
        worst = worst.max(rel(q, q_bayes_trinomial(data, engine.psi_hat(), psi)));
    }
    if worst <= tol {
        Ok(format!("max relative error {worst:.1e}"))
    } else {
        Err(format!("q_B differs from the trinomial construction by {worst:.3e}"))
    }
}

/// Significance decreases strictly on a grid spanning the 0.001 bounds, and
/// evaluating at each bound returns its level.
pub fn monotone_and_round_trip(data: &Dataset, tol: f64) -> Check {
    let engine = Arc::new(PivotEngine::new(data.clone()).map_err(|e| e.to_string())?);
    let mut worst: f64 = 0.0;
    for m in Method::ALL {
        let sig = SignificanceFunction::new(engine.clone(), m);
        let lo = sig.bound(0.001, Side::Lower).map_err(|e| e.to_string())?.raw;
        let hi = sig.bound(0.001, Side::Upper).map_err(|e| e.to_string())?.raw;
        let grid = linspace(lo, hi, 200);
        let vals: Vec<f64> = grid
            .iter()
            .map(|&p| sig.evaluate(p))
            .collect::<Result<_>>()
            .map_err(|e| e.to_string())?;
        if let Some(i) = vals.windows(2).position(|w| w[1] >= w[0]) {
            return Err(format!("{m} significance not decreasing at psi = {}", grid[i + 1]));
        }
        for alpha in [0.001, 0.01, 0.05, 0.1, 0.25, 0.4] {
            for (side, target) in [(Side::Lower, 1.0 - alpha), (Side::Upper, alpha)] {
                let b = sig.bound(alpha, side).map_err(|e| e.to_string())?;
                let at = sig.evaluate(b.raw).map_err(|e| e.to_string())?;
                let p = sig.p_value(b.raw).map_err(|e| e.to_string())?;
                worst = worst.max((at - target).abs()).max((p - (1.0 - target)).abs());
            }
        }
    }
    if worst <= tol {
        Ok(format!("strictly decreasing on 200 points; round-trip error {worst:.1e}"))
    } else {
        Err(format!("round-trip error {worst:.3e} exceeds {tol:e}"))
    }
}

/// Coverage results do not depend on the thread count.
pub fn thread_determinism(config: &CoverageConfig, counts: &[usize]) -> Check {
    let runs: Vec<String> = counts
        .iter()
        .map(|&n| {
            let c = CoverageConfig {
                threads: n,
                ..config.clone()
            };
            coverage_study(&c).map(|r| serde_json::to_string(&r.cells).unwrap())
        })
        .collect::<Result<_>>()
        .map_err(|e| e.to_string())?;
    if runs.windows(2).all(|w| w[0] == w[1]) {
        Ok(format!("identical cells for threads {counts:?}"))
    } else {
        Err("coverage cells differ across thread counts".into())
    }
}

/// Coverage of the procedure under the exact sampling distribution, by
/// enumerating all counts up to `max_count` in a single-channel design.
/// Returns `(method, level, coverage)`; failed fits are excluded.
pub fn exact_single_coverage(config: &CoverageConfig, max_count: u64) -> Vec<(Method, f64, f64)> {
    let (b, g, psi) = (config.beta[0], config.gamma[0], config.psi_true);
    let (t, u) = (config.t[0], config.u[0]);
    let dists = [
        Poisson::new(g * psi + b).unwrap(),
        Poisson::new(b * t).unwrap(),
        Poisson::new(g * u).unwrap(),
    ];
    let cells: Vec<[u64; 3]> = (0..=max_count)
        .flat_map(|a| (0..=max_count).flat_map(move |c| (0..=max_count).map(move |d| [a, c, d])))
        .collect();
    let levels = &config.levels;
    let methods = &config.methods;
    // per method: evaluated mass, and covered mass per level
    type Tally = (Vec<f64>, Vec<Vec<f64>>);
    let tallies: Vec<Tally> = cells
        .par_iter()
        .map(|y| {
            let w = dists[0].pmf(y[0]) * dists[1].pmf(y[1]) * dists[2].pmf(y[2]);
            let data = Dataset::single(ChannelData::new(y[0], y[1], y[2], t, u).unwrap()).unwrap();
            let out = evaluate_replicate(&data, psi, methods);
            let mass = out.iter().map(|o| if o.is_some() { w } else { 0.0 }).collect();
            let hits = out
                .iter()
                .map(|o| {
                    levels
                        .iter()
                        .map(|&l| match o {
                            Some((s, _)) if covers(*s, l) => w,
                            _ => 0.0,
                        })
                        .collect()
                })
                .collect();
            (mass, hits)
        })
        .collect();
    let mut out = Vec::new();
    for (mi, &m) in methods.iter().enumerate() {
        let mass: f64 = tallies.iter().map(|t| t.0[mi]).sum();
        for (li, &l) in levels.iter().enumerate() {
            let hit: f64 = tallies.iter().map(|t| t.1[mi][li]).sum();
            out.push((m, l, hit / mass));
        }
    }
    out
}

/// Largest `|empirical - exact| / SE` with the SE taken at the exact value.
pub fn compare_to_exact(result: &CoverageResult, exact: &[(Method, f64, f64)]) -> f64 {
    exact
        .iter()
        .map(|&(m, l, p)| {
            let cell = result.cell(m, l).unwrap();
            let se = (p * (1.0 - p) / cell.evaluated as f64).sqrt();
            let diff = (cell.coverage - p).abs();
            if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

pub fn phi(x: f64) -> f64 {
    std_normal().cdf(x)
}
