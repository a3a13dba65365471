//! Multiplier bootstrap on estimated influence functions: perturbation
//! laws, bootstrap draws of `√n(θ̂* - θ̂)`, and studentized simultaneous
//! confidence bands.
//!
//! Draw `b` is generated from its own ChaCha stream keyed by `(seed, b)`,
//! so results do not depend on how draws are scheduled across threads.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::stats::{quantile_sorted, NORMAL_IQR};

/// Mean-zero, unit-variance law of the multipliers `V`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MultiplierLaw {
    /// Two-point law with `P(V = 1 - κ) = κ/√5`, `P(V = κ) = 1 - κ/√5`,
    /// `κ = (√5 + 1)/2`.
    #[default]
    Mammen,
    /// `±1` with equal probability.
    Rademacher,
}

const SQRT5: f64 = 2.236_067_977_499_79;
const KAPPA: f64 = (SQRT5 + 1.0) / 2.0;

impl MultiplierLaw {
    pub fn sample<R: Rng>(self, rng: &mut R) -> f64 {
        match self {
            MultiplierLaw::Mammen => {
                if rng.random::<f64>() < KAPPA / SQRT5 {
                    1.0 - KAPPA
                } else {
                    KAPPA
                }
            }
            MultiplierLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MultiplierSpec {
    pub law: MultiplierLaw,
    /// Number of bootstrap draws `B`.
    pub draws: usize,
    pub seed: u64,
    /// Draw one multiplier per cluster instead of per unit.
    pub cluster: bool,
}

impl Default for MultiplierSpec {
    fn default() -> Self {
        MultiplierSpec {
            law: MultiplierLaw::Mammen,
            draws: 999,
            seed: 0,
            cluster: false,
        }
    }
}

/// Multiplier generator bound to a sample layout.
#[derive(Debug, Clone)]
pub struct MultiplierEngine {
    spec: MultiplierSpec,
    n_units: usize,
    groups: Option<(Vec<usize>, usize)>,
}

impl MultiplierEngine {
    /// Uses the panel's cluster labels when `spec.cluster` is set.
    pub fn new(spec: MultiplierSpec, panel: &Panel) -> Self {
        let groups = spec
            .cluster
            .then(|| (panel.clusters().to_vec(), panel.n_clusters()));
        MultiplierEngine {
            spec,
            n_units: panel.n_units(),
            groups,
        }
    }

    /// `assignment[i]` is unit `i`'s cluster in `0..n_clusters`.
    pub fn with_clusters(spec: MultiplierSpec, assignment: Vec<usize>, n_clusters: usize) -> Self {
        let n_units = assignment.len();
        MultiplierEngine {
            spec,
            n_units,
            groups: spec.cluster.then_some((assignment, n_clusters)),
        }
    }

    pub fn unclustered(spec: MultiplierSpec, n_units: usize) -> Self {
        MultiplierEngine {
            spec: MultiplierSpec {
                cluster: false,
                ..spec
            },
            n_units,
            groups: None,
        }
    }

    pub fn spec(&self) -> &MultiplierSpec {
        &self.spec
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    /// Multipliers of draw `b`, one per unit.
    pub fn draw(&self, b: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(b as u64);
        let law = self.spec.law;
        match &self.groups {
            None => (0..self.n_units).map(|_| law.sample(&mut rng)).collect(),
            Some((assignment, count)) => {
                let u: Vec<f64> = (0..*count).map(|_| law.sample(&mut rng)).collect();
                assignment.iter().map(|&s| u[s]).collect()
            }
        }
    }

    /// Applies `f` to the multipliers of every draw, returning results in
    /// draw order.
    pub fn map_draws<T, F>(&self, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(&[f64]) -> T + Sync + Send,
    {
        #[cfg(feature = "std")]
        {
            use rayon::prelude::*;
            (0..self.spec.draws)
                .into_par_iter()
                .map(|b| f(&self.draw(b)))
                .collect()
        }
        #[cfg(not(feature = "std"))]
        {
            (0..self.spec.draws).map(|b| f(&self.draw(b))).collect()
        }
    }

    /// `B x m` matrix whose row `b` is `n^{-1/2} Σ_i V_{b,i} Ψ_i`.
    pub fn bootstrap_draws(&self, influence: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(influence.nrows(), self.n_units, "influence rows must match units");
        let m = influence.ncols();
        let scale = 1.0 / libm::sqrt(self.n_units as f64);
        let rows = self.map_draws(|v| {
            let v = DVector::from_column_slice(v);
            influence.tr_mul(&v) * scale
        });
        let mut out = DMatrix::zeros(rows.len(), m);
        for (b, r) in rows.iter().enumerate() {
            out.set_row(b, &r.transpose());
        }
        out
    }
}

pub fn draw_multipliers(spec: &MultiplierSpec, panel: &Panel, b: usize) -> Vec<f64> {
    MultiplierEngine::new(*spec, panel).draw(b)
}

pub fn bootstrap_draws(influence: &DMatrix<f64>, spec: &MultiplierSpec, panel: &Panel) -> DMatrix<f64> {
    MultiplierEngine::new(*spec, panel).bootstrap_draws(influence)
}

/// Simultaneous confidence band for a vector of parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct BandResult {
    pub estimates: Vec<f64>,
    /// IQR-based bootstrap scale of `√n(θ̂ - θ)` per parameter.
    pub sigma_half: Vec<f64>,
    pub c_hat: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub alpha: f64,
    pub draws_used: usize,
    /// Parameters whose draws had zero IQR and fell back to unit scale.
    pub fallback: Vec<bool>,
}

impl BandResult {
    /// Scale-based standard errors `sigma_half / √n`.
    pub fn standard_errors(&self, n_units: usize) -> Vec<f64> {
        let r = libm::sqrt(n_units as f64);
        self.sigma_half.iter().map(|s| s / r).collect()
    }
}

/// Band from precomputed draws `R*` (`B x m`) for a sample of `n_units`.
pub fn band_from_draws(
    estimates: &[f64],
    draws: &DMatrix<f64>,
    n_units: usize,
    alpha: f64,
) -> Result<BandResult> {
    let m = estimates.len();
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if m == 0 || draws.ncols() != m {
        return Err(Error::InvalidArgument(alloc::format!(
            "{} draw columns for {m} parameters",
            draws.ncols()
        )));
    }
    let b = draws.nrows();
    if b == 0 {
        return Err(Error::InvalidArgument("no bootstrap draws".into()));
    }
    let mut sigma_half = Vec::with_capacity(m);
    let mut fallback = Vec::with_capacity(m);
    for col in draws.column_iter() {
        let mut v: Vec<f64> = col.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        let iqr = quantile_sorted(&v, 0.75) - quantile_sorted(&v, 0.25);
        if iqr > 0.0 && iqr.is_finite() {
            sigma_half.push(iqr / NORMAL_IQR);
            fallback.push(false);
        } else {
            sigma_half.push(1.0);
            fallback.push(true);
        }
    }
    let mut tstats: Vec<f64> = draws
        .row_iter()
        .map(|r| {
            r.iter()
                .zip(&sigma_half)
                .map(|(x, s)| x.abs() / s)
                .fold(0.0, f64::max)
        })
        .collect();
    tstats.sort_by(f64::total_cmp);
    let c_hat = quantile_sorted(&tstats, 1.0 - alpha);
    let root_n = libm::sqrt(n_units as f64);
    let half: Vec<f64> = sigma_half.iter().map(|s| c_hat * s / root_n).collect();
    Ok(BandResult {
        estimates: estimates.to_vec(),
        lower: estimates.iter().zip(&half).map(|(e, h)| e - h).collect(),
        upper: estimates.iter().zip(&half).map(|(e, h)| e + h).collect(),
        sigma_half,
        c_hat,
        alpha,
        draws_used: b,
        fallback,
    })
}

/// Studentized simultaneous band from estimates and their influence matrix.
pub fn simultaneous_band_with(
    engine: &MultiplierEngine,
    estimates: &[f64],
    influence: &DMatrix<f64>,
    alpha: f64,
) -> Result<BandResult> {
    if engine.spec().draws == 0 {
        return Err(Error::InvalidArgument("need at least one bootstrap draw".into()));
    }
    if influence.ncols() != estimates.len() {
        return Err(Error::InvalidArgument("influence columns must match estimates".into()));
    }
    let draws = engine.bootstrap_draws(influence);
    band_from_draws(estimates, &draws, engine.n_units(), alpha)
}

pub fn simultaneous_band(
    estimates: &[f64],
    influence: &DMatrix<f64>,
    alpha: f64,
    spec: &MultiplierSpec,
    panel: &Panel,
) -> Result<BandResult> {
    simultaneous_band_with(&MultiplierEngine::new(*spec, panel), estimates, influence, alpha)
}
