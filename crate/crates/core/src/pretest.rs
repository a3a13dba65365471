//! Integrated conditional moment pre-test of conditional parallel trends,
//! and a Wald test on the placebo `ATT(g, t)`.
//!
//! The process `Ĵ(u) = E_n[(w^G - w^C) 1{X ≤ u} ΔY]` is evaluated at every
//! sample covariate point. All sums of the form `Σ_i v_i 1{X_i ≤ X_j}` go
//! through [`DominanceIndex`], which is `O(n log n)` for up to two
//! covariates. The bootstrap draw of `Σ_i V_i ψ_i(u)` decomposes into one
//! such sum plus terms that are fixed across draws.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::attgt::{outcome_change, AttGtResult, CohortWeights};
use crate::error::{Error, Result};
use crate::mboot::{band_from_draws, BandResult, MultiplierEngine};
use crate::panel::{CellIndex, CellKind, Panel};
use crate::propensity::PropensityFit;
use crate::stats::{add_one_p_value, quantile_sorted};

/// Sums `S_j = Σ_i v_i 1{x_i ≤ x_j}` (componentwise) over a fixed point set.
#[derive(Debug, Clone)]
pub struct DominanceIndex {
    points: Vec<Vec<f64>>,
    plan: Plan,
}

#[derive(Debug, Clone)]
enum Plan {
    Total,
    /// Points in ascending order, and the end of each point's tie group.
    Sorted { order: Vec<usize>, group_end: Vec<usize> },
    /// Order and tie groups on the first coordinate; dense ranks of the
    /// second.
    Fenwick {
        order: Vec<usize>,
        group_end: Vec<usize>,
        rank: Vec<usize>,
        n_ranks: usize,
    },
    Naive,
}

fn sorted_groups(key: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let n = key.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key[a].total_cmp(&key[b]));
    let mut group_end = vec![0; n];
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && key[order[end]] == key[order[start]] {
            end += 1;
        }
        for slot in &mut group_end[start..end] {
            *slot = end;
        }
        start = end;
    }
    (order, group_end)
}

impl DominanceIndex {
    /// `points[i]` is unit `i`'s coordinate vector; all of equal length.
    pub fn new(points: Vec<Vec<f64>>) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        assert!(points.iter().all(|p| p.len() == dim), "ragged points");
        let plan = match dim {
            0 => Plan::Total,
            1 => {
                let key: Vec<f64> = points.iter().map(|p| p[0]).collect();
                let (order, group_end) = sorted_groups(&key);
                Plan::Sorted { order, group_end }
            }
            2 => {
                let key: Vec<f64> = points.iter().map(|p| p[0]).collect();
                let (order, group_end) = sorted_groups(&key);
                let second: Vec<f64> = points.iter().map(|p| p[1]).collect();
                let (by_second, ends) = sorted_groups(&second);
                let mut rank = vec![0; points.len()];
                let mut r = 0;
                let mut k = 0;
                while k < by_second.len() {
                    let end = ends[k];
                    for &i in &by_second[k..end] {
                        rank[i] = r;
                    }
                    r += 1;
                    k = end;
                }
                Plan::Fenwick {
                    order,
                    group_end,
                    rank,
                    n_ranks: r,
                }
            }
            _ => Plan::Naive,
        };
        DominanceIndex { points, plan }
    }

    /// Index over the non-intercept covariates of a panel.
    pub fn from_panel(panel: &Panel) -> Self {
        Self::new((0..panel.n_units()).map(|i| panel.x_row(i)[1..].to_vec()).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, j: usize) -> &[f64] {
        &self.points[j]
    }

    pub fn sums(&self, values: &[f64]) -> Vec<f64> {
        let n = self.points.len();
        assert_eq!(values.len(), n);
        match &self.plan {
            Plan::Total => vec![values.iter().sum(); n],
            Plan::Sorted { order, group_end } => {
                let mut out = vec![0.0; n];
                let mut acc = 0.0;
                let mut k = 0;
                while k < n {
                    let end = group_end[k];
                    for &i in &order[k..end] {
                        acc += values[i];
                    }
                    for &i in &order[k..end] {
                        out[i] = acc;
                    }
                    k = end;
                }
                out
            }
            Plan::Fenwick {
                order,
                group_end,
                rank,
                n_ranks,
            } => {
                let mut tree = vec![0.0; n_ranks + 1];
                let mut out = vec![0.0; n];
                let mut k = 0;
                while k < n {
                    let end = group_end[k];
                    for &i in &order[k..end] {
                        let mut p = rank[i] + 1;
                        while p <= *n_ranks {
                            tree[p] += values[i];
                            p += p & p.wrapping_neg();
                        }
                    }
                    for &i in &order[k..end] {
                        let mut p = rank[i] + 1;
                        let mut s = 0.0;
                        while p > 0 {
                            s += tree[p];
                            p -= p & p.wrapping_neg();
                        }
                        out[i] = s;
                    }
                    k = end;
                }
                out
            }
            Plan::Naive => self.naive_sums(values),
        }
    }

    /// Direct `O(n²)` evaluation.
    pub fn naive_sums(&self, values: &[f64]) -> Vec<f64> {
        self.points
            .iter()
            .map(|u| {
                self.points
                    .iter()
                    .zip(values)
                    .filter(|(x, _)| dominated(x, u))
                    .map(|(_, v)| v)
                    .sum()
            })
            .collect()
    }
}

fn dominated(x: &[f64], u: &[f64]) -> bool {
    x.iter().zip(u).all(|(a, b)| a <= b)
}

fn find_fit(fits: &[PropensityFit], g: u32) -> Result<&PropensityFit> {
    fits.iter().find(|f| f.g == g).ok_or(Error::UnknownCohort(g))
}

fn check_placebo(cell: CellIndex) -> Result<()> {
    if cell.kind() != CellKind::Placebo || cell.t < 2 {
        return Err(Error::InvalidArgument(alloc::format!("{cell} is not a pre-treatment cell")));
    }
    Ok(())
}

fn indicator_response(panel: &Panel, cell: CellIndex, u: &[f64]) -> Result<Vec<f64>> {
    if u.len() + 1 != panel.n_covariates() {
        return Err(Error::InvalidArgument(alloc::format!(
            "evaluation point has {} coordinates, panel has {} covariates",
            u.len(),
            panel.n_covariates() - 1
        )));
    }
    let dy = outcome_change(panel, cell);
    Ok((0..panel.n_units())
        .map(|i| if dominated(&panel.x_row(i)[1..], u) { dy[i] } else { 0.0 })
        .collect())
}

/// `Ĵ(u)` for placebo cell `cell`, with `u` over the non-intercept
/// covariates.
pub fn j_hat(panel: &Panel, fit: &PropensityFit, cell: CellIndex, u: &[f64]) -> Result<f64> {
    check_placebo(cell)?;
    if fit.g != cell.g {
        return Err(Error::InvalidArgument(alloc::format!("fit for cohort {} used for {cell}", fit.g)));
    }
    let w = CohortWeights::new(panel, fit)?;
    let h = indicator_response(panel, cell, u)?;
    Ok(w.difference_influence(panel, &h).0)
}

/// Influence function of `Ĵ(u)`.
pub fn psi_test(panel: &Panel, fit: &PropensityFit, cell: CellIndex, u: &[f64]) -> Result<Vec<f64>> {
    check_placebo(cell)?;
    if fit.g != cell.g {
        return Err(Error::InvalidArgument(alloc::format!("fit for cohort {} used for {cell}", fit.g)));
    }
    let w = CohortWeights::new(panel, fit)?;
    let h = indicator_response(panel, cell, u)?;
    Ok(w.difference_influence(panel, &h).1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellContribution {
    pub cell: CellIndex,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvmResult {
    pub statistic: f64,
    pub per_cell: Vec<CellContribution>,
    /// Present after bootstrapping.
    pub critical_value: Option<f64>,
    pub p_value: Option<f64>,
    pub draws: Vec<f64>,
    pub alpha: Option<f64>,
    pub reject: Option<bool>,
}

/// Per-cell quantities shared by the statistic and its bootstrap.
struct CellProcess {
    cell: CellIndex,
    weights: CohortWeights,
    /// `(w^G - w^C) ΔY`
    signal: Vec<f64>,
    j: Vec<f64>,
}

fn placebo_processes(panel: &Panel, fits: &[PropensityFit], index: &DominanceIndex) -> Result<Vec<CellProcess>> {
    let cells: Vec<CellIndex> = panel
        .cell_grid(true)
        .into_iter()
        .filter(|c| c.kind() == CellKind::Placebo)
        .collect();
    if cells.is_empty() {
        return Err(Error::PretestUndefined);
    }
    let nf = panel.n_units() as f64;
    cells
        .into_iter()
        .map(|cell| {
            let weights = CohortWeights::new(panel, find_fit(fits, cell.g)?)?;
            let dy = outcome_change(panel, cell);
            let signal: Vec<f64> = (0..dy.len())
                .map(|i| (weights.treated[i] - weights.control[i]) * dy[i])
                .collect();
            let j = index.sums(&signal).into_iter().map(|s| s / nf).collect();
            Ok(CellProcess { cell, weights, signal, j })
        })
        .collect()
}

fn assemble(processes: &[CellProcess]) -> CvmResult {
    let per_cell: Vec<CellContribution> = processes
        .iter()
        .map(|p| CellContribution {
            cell: p.cell,
            contribution: p.j.iter().map(|v| v * v).sum(),
        })
        .collect();
    CvmResult {
        statistic: per_cell.iter().map(|c| c.contribution).sum(),
        per_cell,
        critical_value: None,
        p_value: None,
        draws: Vec::new(),
        alpha: None,
        reject: None,
    }
}

/// `CvM_n = Σ_cells Σ_j Ĵ(X_j)²`, integrating over the full-sample
/// covariate distribution.
pub fn cvm_statistic(panel: &Panel, fits: &[PropensityFit]) -> Result<CvmResult> {
    let index = DominanceIndex::from_panel(panel);
    Ok(assemble(&placebo_processes(panel, fits, &index)?))
}

/// Draw-invariant pieces of `Σ_i V_i ψ_i(u)` for one cell.
struct BootCell {
    treated_part: Vec<f64>,
    control_part: Vec<f64>,
    /// `M(u)` for every evaluation point, row-major `n x k`.
    m: Vec<f64>,
}

fn boot_cell(p: &CellProcess, panel: &Panel, index: &DominanceIndex) -> BootCell {
    let n = panel.n_units();
    let nf = n as f64;
    let k = panel.n_covariates();
    let dy = outcome_change(panel, p.cell);
    let w = &p.weights;
    let jg: Vec<f64> = index
        .sums(&(0..n).map(|i| w.treated[i] * dy[i]).collect::<Vec<_>>())
        .into_iter()
        .map(|s| s / nf)
        .collect();
    let jc: Vec<f64> = index
        .sums(&(0..n).map(|i| w.control[i] * dy[i]).collect::<Vec<_>>())
        .into_iter()
        .map(|s| s / nf)
        .collect();
    let mut m = vec![0.0; n * k];
    for a in 0..k {
        let xm: Vec<f64> = (0..n).map(|i| panel.x_row(i)[a] * w.correction[i]).collect();
        let mean_xm = xm.iter().sum::<f64>() / nf;
        let dom = index.sums(&(0..n).map(|i| xm[i] * dy[i]).collect::<Vec<_>>());
        for j in 0..n {
            m[j * k + a] = dom[j] / nf - jc[j] * mean_xm;
        }
    }
    BootCell {
        treated_part: jg,
        control_part: jc,
        m,
    }
}

/// `Ĵ*(X_j) = E_n[V ψ(X_j)]` at every evaluation point for multipliers `v`.
fn bootstrap_process(p: &CellProcess, bc: &BootCell, index: &DominanceIndex, v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let nf = n as f64;
    let w = &p.weights;
    let k = w.xi.ncols();
    let scaled: Vec<f64> = v.iter().zip(&p.signal).map(|(a, b)| a * b).collect();
    let dom = index.sums(&scaled);
    let vg: f64 = v.iter().zip(&w.treated).map(|(a, b)| a * b).sum();
    let vc: f64 = v.iter().zip(&w.control).map(|(a, b)| a * b).sum();
    let mut vxi = vec![0.0; k];
    for (i, vi) in v.iter().enumerate() {
        for (a, s) in vxi.iter_mut().enumerate() {
            *s += vi * w.xi[(i, a)];
        }
    }
    (0..n)
        .map(|j| {
            let mut s = dom[j] - bc.treated_part[j] * vg + bc.control_part[j] * vc;
            for a in 0..k {
                s -= bc.m[j * k + a] * vxi[a];
            }
            s / nf
        })
        .collect()
}

/// Multiplier bootstrap of the CvM statistic. Rejects when the statistic
/// strictly exceeds the critical value.
pub fn cvm_bootstrap(
    panel: &Panel,
    fits: &[PropensityFit],
    engine: &MultiplierEngine,
    alpha: f64,
) -> Result<CvmResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if engine.spec().draws == 0 {
        return Err(Error::InvalidArgument("need at least one bootstrap draw".into()));
    }
    if engine.n_units() != panel.n_units() {
        return Err(Error::InvalidArgument("multiplier engine and panel disagree on sample size".into()));
    }
    let index = DominanceIndex::from_panel(panel);
    let processes = placebo_processes(panel, fits, &index)?;
    let mut result = assemble(&processes);
    let boots: Vec<BootCell> = processes.iter().map(|p| boot_cell(p, panel, &index)).collect();

    let draws = engine.map_draws(|v| {
        let mut total = 0.0;
        for (p, bc) in processes.iter().zip(&boots) {
            total += bootstrap_process(p, bc, &index, v).iter().map(|j| j * j).sum::<f64>();
        }
        total
    });

    let mut sorted = draws.clone();
    sorted.sort_by(f64::total_cmp);
    let critical = quantile_sorted(&sorted, 1.0 - alpha);
    result.p_value = Some(add_one_p_value(&draws, result.statistic));
    result.reject = Some(result.statistic > critical);
    result.critical_value = Some(critical);
    result.alpha = Some(alpha);
    result.draws = draws;
    Ok(result)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaldReport {
    pub cells: Vec<CellIndex>,
    pub statistic: f64,
    /// Rank of the bootstrap covariance.
    pub df: usize,
    pub p_value: f64,
    pub reduced_rank: bool,
    /// Joint simultaneous band over every cell, pre and post.
    pub band: BandResult,
}

/// Moore-Penrose inverse of a symmetric PSD matrix and its numerical rank.
fn pseudo_inverse(s: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let eig = SymmetricEigen::new(s.clone());
    let top = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
    let tol = top * 1e-10 * s.nrows() as f64;
    let inv = DVector::from_iterator(
        s.nrows(),
        eig.eigenvalues.iter().map(|&l| if l > tol { 1.0 / l } else { 0.0 }),
    );
    let rank = inv.iter().filter(|&&x| x != 0.0).count();
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&inv) * q.transpose(), rank)
}

/// Wald test that every placebo `ATT(g, t)` is zero, with covariance and
/// p-value from the multiplier bootstrap.
pub fn placebo_wald(att: &AttGtResult, engine: &MultiplierEngine, alpha: f64) -> Result<WaldReport> {
    let placebo: Vec<usize> = (0..att.cells.len())
        .filter(|&j| att.cells[j].kind() == CellKind::Placebo)
        .collect();
    if placebo.is_empty() {
        return Err(Error::PretestUndefined);
    }
    if engine.spec().draws == 0 {
        return Err(Error::InvalidArgument("need at least one bootstrap draw".into()));
    }
    let n = att.n_units();
    let all = engine.bootstrap_draws(&att.influence);
    let band = band_from_draws(&att.estimates, &all, n, alpha)?;
    let r = all.select_columns(&placebo);
    let b = r.nrows() as f64;
    let cov = r.transpose() * &r / b;
    let (pinv, rank) = pseudo_inverse(&cov);
    let theta = DVector::from_iterator(placebo.len(), placebo.iter().map(|&j| att.estimates[j]));
    let statistic = n as f64 * (theta.transpose() * &pinv * &theta)[(0, 0)];
    let star: Vec<f64> = r
        .row_iter()
        .map(|row| {
            let x = row.transpose();
            (x.transpose() * &pinv * &x)[(0, 0)]
        })
        .collect();
    Ok(WaldReport {
        cells: placebo.iter().map(|&j| att.cells[j]).collect(),
        statistic,
        df: rank,
        p_value: add_one_p_value(&star, statistic),
        reduced_rank: rank < placebo.len(),
        band,
    })
}
