//! Monte Carlo coverage of upper confidence bounds.
//!
//! Replicate `i` draws from a ChaCha8 stream keyed by `(seed, i)`, so results
//! do not depend on the number of worker threads. The bound at level `p`
//! solves `Phi(pivot) = 1 - p` and the pivot decreases in `psi`, so
//! `psi_true < bound` is decided by `Phi(pivot(psi_true)) > 1 - p` with one
//! constrained fit per replicate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::std_normal;
use crate::model::{ChannelData, Dataset};
use crate::pivot::{Method, PivotEngine};
use statrs::distribution::ContinuousCDF;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageConfig {
    pub psi_true: f64,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub t: Vec<f64>,
    pub u: Vec<f64>,
    pub replications: usize,
    pub levels: Vec<f64>,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub threads: usize,
}

/// Coverage of one `(method, level)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageCell {
    pub method: Method,
    pub level: f64,
    pub coverage: f64,
    pub standard_error: f64,
    pub successes: usize,
    /// Replicates in the denominator (failed fits excluded).
    pub evaluated: usize,
    /// Replicates where this method fell back to `r`.
    pub fallbacks: usize,
    /// Replicates where the fit itself failed.
    pub failures: usize,
    /// `|coverage - level| > 3 * standard_error`.
    pub bold: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageResult {
    pub config: CoverageConfig,
    pub cells: Vec<CoverageCell>,
}

impl CoverageResult {
    pub fn cell(&self, method: Method, level: f64) -> Option<&CoverageCell> {
        self.cells.iter().find(|c| c.method == method && c.level == level)
    }
}

impl CoverageConfig {
    /// Single-channel design with the given natural parameters.
    pub fn single(psi_true: f64, beta: f64, gamma: f64, t: f64, u: f64) -> Self {
        Self {
            psi_true,
            beta: vec![beta],
            gamma: vec![gamma],
            t: vec![t],
            u: vec![u],
            replications: 1000,
            levels: default_levels(),
            methods: Method::ALL.to_vec(),
            seed: 0,
            threads: 1,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.beta.len();
        if n == 0 {
            return Err(Error::Config("at least one channel is required".into()));
        }
        for (name, v) in [("gamma", &self.gamma), ("t", &self.t), ("u", &self.u)] {
            if v.len() != n {
                return Err(Error::Config(format!("{name} has {} entries, beta has {n}", v.len())));
            }
        }
        for (name, v) in [("beta", &self.beta), ("gamma", &self.gamma), ("t", &self.t), ("u", &self.u)] {
            if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return Err(Error::Config(format!("{name} entries must be positive and finite, found {x}")));
            }
        }
        if !self.psi_true.is_finite() {
            return Err(Error::Config("psi must be finite".into()));
        }
        for (k, (b, g)) in self.beta.iter().zip(&self.gamma).enumerate() {
            if g * self.psi_true + b <= 0.0 {
                return Err(Error::Config(format!("signal mean of channel {} is not positive", k + 1)));
            }
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.levels.is_empty() || self.levels.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Config("levels must lie in (0, 1)".into()));
        }
        if self.levels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("levels must be strictly increasing".into()));
        }
        Ok(())
    }

    fn means(&self) -> Vec<[f64; 3]> {
        (0..self.n_channels())
            .map(|k| {
                let (b, g) = (self.beta[k], self.gamma[k]);
                [g * self.psi_true + b, b * self.t[k], g * self.u[k]]
            })
            .collect()
    }
}

pub fn default_levels() -> Vec<f64> {
    vec![0.01, 0.025, 0.05, 0.1, 0.5, 0.9, 0.95, 0.975, 0.99]
}

/// Replicate `index` of the design.
pub fn generate_dataset(config: &CoverageConfig, index: u64) -> Result<Dataset> {
    config.validate()?;
    sample(config, &config.means(), index)
}

fn sample(config: &CoverageConfig, means: &[[f64; 3]], index: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index);
    let mut draw = |mean: f64| -> Result<u64> {
        let d = Poisson::new(mean).map_err(|e| Error::Config(format!("Poisson mean {mean}: {e}")))?;
        Ok(d.sample(&mut rng) as u64)
    };
    let mut channels = Vec::with_capacity(means.len());
    for (k, m) in means.iter().enumerate() {
        let (y1, y2, y3) = (draw(m[0])?, draw(m[1])?, draw(m[2])?);
        channels.push(ChannelData::new(y1, y2, y3, config.t[k], config.u[k])?);
    }
    Dataset::new(channels)
}

/// Per-method outcome of one replicate: `Phi(pivot(psi_true))` and the
/// fallback flag, or `None` when the fit failed.
pub type ReplicateOutcome = Vec<Option<(f64, bool)>>;

/// Evaluates every method at `psi_true` on one dataset.
pub fn evaluate_replicate(data: &Dataset, psi_true: f64, methods: &[Method]) -> ReplicateOutcome {
    let normal = std_normal();
    let engine = match PivotEngine::new(data.clone()) {
        Ok(e) => e,
        Err(_) => return vec![None; methods.len()],
    };
    let fit = match engine.fit_at(psi_true) {
        Ok(f) => f,
        Err(_) => return vec![None; methods.len()],
    };
    methods
        .iter()
        .map(|&m| {
            engine
                .pivot_from_fit(&fit, m)
                .ok()
                .map(|p| (normal.cdf(p.value), p.fallback))
        })
        .collect()
}

/// Whether the upper bound at `level` lies strictly above the truth.
pub fn covers(significance_at_truth: f64, level: f64) -> bool {
    significance_at_truth > 1.0 - level
}

pub fn coverage_study(config: &CoverageConfig) -> Result<CoverageResult> {
    config.validate()?;
    let means = config.means();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<ReplicateOutcome> = pool.install(|| {
        (0..config.replications as u64)
            .into_par_iter()
            .map(|i| match sample(config, &means, i) {
                Ok(data) => evaluate_replicate(&data, config.psi_true, &config.methods),
                Err(_) => vec![None; config.methods.len()],
            })
            .collect()
    });
    Ok(aggregate(config, &outcomes))
}

/// Tallies per-replicate outcomes in replicate order.
pub fn aggregate(config: &CoverageConfig, outcomes: &[ReplicateOutcome]) -> CoverageResult {
    let mut cells = Vec::new();
    for (mi, &method) in config.methods.iter().enumerate() {
        let ok: Vec<(f64, bool)> = outcomes.iter().filter_map(|o| o[mi]).collect();
        let failures = outcomes.len() - ok.len();
        let fallbacks = ok.iter().filter(|(_, f)| *f).count();
        for &level in &config.levels {
            let successes = ok.iter().filter(|(s, _)| covers(*s, level)).count();
            let evaluated = ok.len();
            let (coverage, se) = if evaluated == 0 {
                (f64::NAN, f64::NAN)
            } else {
                let p = successes as f64 / evaluated as f64;
                (p, (p * (1.0 - p) / evaluated as f64).sqrt())
            };
            cells.push(CoverageCell {
                method,
                level,
                coverage,
                standard_error: se,
                successes,
                evaluated,
                fallbacks,
                failures,
                bold: (coverage - level).abs() > 3.0 * se,
            });
        }
    }
    CoverageResult {
        config: config.clone(),
        cells,
    }
}

/// Coverage at each configuration; all must differ only in `psi_true`.
pub fn coverage_curve(configs: &[CoverageConfig]) -> Result<Vec<CoverageResult>> {
    if let Some(first) = configs.first() {
        for c in &configs[1..] {
            let aligned = CoverageConfig {
                psi_true: first.psi_true,
                ..c.clone()
            };
            if &aligned != first {
                return Err(Error::Config("coverage curve configurations differ beyond psi".into()));
            }
        }
    }
    configs.iter().map(coverage_study).collect()
}
