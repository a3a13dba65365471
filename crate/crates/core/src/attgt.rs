//! Group-time average treatment effects with Hájek-normalized inverse
//! probability weights, and their per-unit influence functions.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::{CellIndex, Cohort, Panel};
use crate::propensity::{check_overlap, fit_all, xi_pi, FitOptions, OverlapReport, PropensityFit};

/// Normalized weights `w^G`, `w^C` and the pieces of the propensity-score
/// correction for one cohort. Every mean is over the full sample of `n`
/// units; weights vanish outside the cohort-plus-controls subsample.
#[derive(Debug, Clone)]
pub struct CohortWeights {
    pub g: u32,
    /// `G_g / E_n[G_g]`.
    pub treated: Vec<f64>,
    /// `(p̂C/(1-p̂)) / E_n[p̂C/(1-p̂)]`.
    pub control: Vec<f64>,
    /// `C ṗ / (1-p̂)^2 / E_n[p̂C/(1-p̂)]`, so that `M = E_n[X · m · (ΔY - θ^C)]`.
    pub correction: Vec<f64>,
    /// `ξ^π_g`, `n x k`.
    pub xi: DMatrix<f64>,
}

impl CohortWeights {
    pub fn new(panel: &Panel, fit: &PropensityFit) -> Result<Self> {
        let g = fit.g;
        if !panel.cohorts().contains(&g) {
            return Err(Error::UnknownCohort(g));
        }
        let n = panel.n_units();
        let nf = n as f64;
        let mut treated = alloc::vec![0.0; n];
        let mut odds = alloc::vec![0.0; n];
        let mut n_g = 0usize;
        for i in 0..n {
            match panel.cohort_of(i) {
                Cohort::FirstTreated(h) if h == g => {
                    treated[i] = 1.0;
                    n_g += 1;
                }
                Cohort::Never => {
                    let p = fit.fitted[i];
                    odds[i] = p / (1.0 - p);
                }
                Cohort::FirstTreated(_) => {}
            }
        }
        let mean_g = n_g as f64 / nf;
        let mean_odds = odds.iter().sum::<f64>() / nf;
        if !(mean_odds > 0.0) || !mean_odds.is_finite() {
            return Err(Error::NoControls { g });
        }
        for w in &mut treated {
            *w /= mean_g;
        }
        let control = odds.iter().map(|o| o / mean_odds).collect();
        let correction = (0..n)
            .map(|i| {
                if panel.cohort_of(i).is_never() {
                    let q = 1.0 - fit.fitted[i];
                    fit.derivative[i] / (q * q) / mean_odds
                } else {
                    0.0
                }
            })
            .collect();
        Ok(CohortWeights {
            g,
            treated,
            control,
            correction,
            xi: xi_pi(fit, panel),
        })
    }

    /// Influence of a weighted-difference functional
    /// `E_n[(w^G - w^C) · h]` for an arbitrary per-unit response `h`.
    /// Returns the estimate and the influence vector.
    pub fn difference_influence(&self, panel: &Panel, response: &[f64]) -> (f64, Vec<f64>) {
        let n = response.len();
        let nf = n as f64;
        let theta_g = self.treated.iter().zip(response).map(|(w, h)| w * h).sum::<f64>() / nf;
        let theta_c = self.control.iter().zip(response).map(|(w, h)| w * h).sum::<f64>() / nf;
        let k = self.xi.ncols();
        let mut m = alloc::vec![0.0; k];
        for i in 0..n {
            let c = self.correction[i];
            if c == 0.0 {
                continue;
            }
            let s = c * (response[i] - theta_c);
            for (a, x) in panel.x_row(i).iter().enumerate() {
                m[a] += x * s;
            }
        }
        for v in &mut m {
            *v /= nf;
        }
        let influence = (0..n)
            .map(|i| {
                let psi_g = self.treated[i] * (response[i] - theta_g);
                let mut psi_c = self.control[i] * (response[i] - theta_c);
                for a in 0..k {
                    psi_c += m[a] * self.xi[(i, a)];
                }
                psi_g - psi_c
            })
            .collect();
        (theta_g - theta_c, influence)
    }
}

/// Outcome difference `Y_t - Y_anchor` for every unit.
pub fn outcome_change(panel: &Panel, cell: CellIndex) -> Vec<f64> {
    let base = cell.anchor();
    (0..panel.n_units())
        .map(|i| panel.outcome(i, cell.t) - panel.outcome(i, base))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellEstimate {
    pub cell: CellIndex,
    pub estimate: f64,
    pub influence: Vec<f64>,
}

fn check_cell(panel: &Panel, cell: CellIndex) -> Result<()> {
    let tt = panel.n_periods() as u32;
    if !panel.cohorts().contains(&cell.g) || cell.t < 2 || cell.t > tt {
        return Err(Error::MissingCell(cell));
    }
    Ok(())
}

fn estimate_with(panel: &Panel, weights: &CohortWeights, cell: CellIndex) -> Result<CellEstimate> {
    check_cell(panel, cell)?;
    let dy = outcome_change(panel, cell);
    let (estimate, influence) = weights.difference_influence(panel, &dy);
    if !estimate.is_finite() {
        return Err(Error::Cell {
            cell,
            source: Box::new(Error::InvalidArgument("non-finite estimate".into())),
        });
    }
    Ok(CellEstimate {
        cell,
        estimate,
        influence,
    })
}

/// `ATT(g, t)` and its influence column for one cell.
pub fn att_gt(panel: &Panel, fit: &PropensityFit, cell: CellIndex) -> Result<CellEstimate> {
    if fit.g != cell.g {
        return Err(Error::InvalidArgument(alloc::format!(
            "propensity fit for cohort {} used for cell {cell}",
            fit.g
        )));
    }
    let weights = CohortWeights::new(panel, fit)?;
    estimate_with(panel, &weights, cell)
}

/// Estimates for a grid of cells, with the `n x m` influence matrix `Ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttGtResult {
    pub cells: Vec<CellIndex>,
    pub estimates: Vec<f64>,
    pub influence: DMatrix<f64>,
}

impl AttGtResult {
    pub fn n_units(&self) -> usize {
        self.influence.nrows()
    }

    pub fn index_of(&self, cell: CellIndex) -> Option<usize> {
        self.cells.iter().position(|&c| c == cell)
    }

    pub fn estimate(&self, cell: CellIndex) -> Option<f64> {
        self.index_of(cell).map(|j| self.estimates[j])
    }

    /// `Σ̂ = Ψ'Ψ / n`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.influence.tr_mul(&self.influence) / self.n_units() as f64
    }

    /// `sqrt(Σ̂_jj / n)` per cell.
    pub fn plugin_se(&self) -> Vec<f64> {
        let n = self.n_units() as f64;
        self.influence
            .column_iter()
            .map(|c| libm::sqrt(c.dot(&c) / n / n))
            .collect()
    }

    /// Sub-result restricted to the cells selected by `keep`.
    pub fn select(&self, keep: impl Fn(CellIndex) -> bool) -> AttGtResult {
        let idx: Vec<usize> = (0..self.cells.len()).filter(|&j| keep(self.cells[j])).collect();
        AttGtResult {
            cells: idx.iter().map(|&j| self.cells[j]).collect(),
            estimates: idx.iter().map(|&j| self.estimates[j]).collect(),
            influence: self.influence.select_columns(idx.iter()),
        }
    }
}

/// Estimates every cell of the grid given one fit per cohort.
pub fn att_from_fits(
    panel: &Panel,
    fits: &[PropensityFit],
    include_placebo: bool,
) -> Result<AttGtResult> {
    let cells = panel.cell_grid(include_placebo);
    let n = panel.n_units();
    let mut estimates = Vec::with_capacity(cells.len());
    let mut influence = DMatrix::zeros(n, cells.len());
    let mut current: Option<CohortWeights> = None;
    for (j, &cell) in cells.iter().enumerate() {
        let wrap = |e: Error| Error::Cell {
            cell,
            source: Box::new(e),
        };
        if current.as_ref().map(|w| w.g) != Some(cell.g) {
            let fit = fits
                .iter()
                .find(|f| f.g == cell.g)
                .ok_or_else(|| wrap(Error::UnknownCohort(cell.g)))?;
            current = Some(CohortWeights::new(panel, fit).map_err(wrap)?);
        }
        let est = estimate_with(panel, current.as_ref().unwrap(), cell).map_err(wrap)?;
        estimates.push(est.estimate);
        influence.set_column(j, &nalgebra::DVector::from_vec(est.influence));
    }
    Ok(AttGtResult {
        cells,
        estimates,
        influence,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OverlapPolicy {
    /// Report units above the trim threshold and proceed.
    #[default]
    Warn,
    /// Fail when any unit exceeds the trim threshold.
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttOptions {
    pub include_placebo: bool,
    pub fit: FitOptions,
    pub trim: f64,
    pub overlap: OverlapPolicy,
}

impl Default for AttOptions {
    fn default() -> Self {
        AttOptions {
            include_placebo: true,
            fit: FitOptions::default(),
            trim: 0.999,
            overlap: OverlapPolicy::Warn,
        }
    }
}

/// Propensity fits, overlap diagnostics and cell estimates for a panel.
#[derive(Debug, Clone)]
pub struct Estimation {
    pub att: AttGtResult,
    pub fits: Vec<PropensityFit>,
    pub overlap: Vec<OverlapReport>,
}

pub fn att_all(panel: &Panel, opts: &AttOptions) -> Result<Estimation> {
    let fits = fit_all(panel, &opts.fit)?;
    let overlap = fits
        .iter()
        .map(|f| check_overlap(f, panel, opts.trim))
        .collect::<Result<Vec<_>>>()?;
    if opts.overlap == OverlapPolicy::Error {
        if let Some(r) = overlap.iter().find(|r| r.n_violations() > 0) {
            return Err(Error::OverlapViolation {
                g: r.g,
                count: r.n_violations(),
                trim: r.trim,
            });
        }
    }
    let att = att_from_fits(panel, &fits, opts.include_placebo)?;
    Ok(Estimation { att, fits, overlap })
}
