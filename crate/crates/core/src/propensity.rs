//! Generalized propensity score `p_g(X) = P(G_g = 1 | X, G_g + C = 1)`,
//! fitted by maximum likelihood on the cohort-`g`-plus-controls subsample.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::{Cohort, Panel};
use crate::stats::{normal_cdf, normal_pdf};

/// Binary-response link `Λ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Link {
    #[default]
    Logit,
    Probit,
}

impl Link {
    pub fn cdf(self, u: f64) -> f64 {
        match self {
            Link::Logit => {
                if u >= 0.0 {
                    1.0 / (1.0 + libm::exp(-u))
                } else {
                    let e = libm::exp(u);
                    e / (1.0 + e)
                }
            }
            Link::Probit => normal_cdf(u),
        }
    }

    /// Derivative `Λ'(u)`.
    pub fn pdf(self, u: f64) -> f64 {
        match self {
            Link::Logit => {
                let p = self.cdf(u);
                p * (1.0 - p)
            }
            Link::Probit => normal_pdf(u),
        }
    }

    /// `ln Λ(u)` and `ln(1 - Λ(u))`, computed without cancellation.
    fn log_probs(self, u: f64) -> (f64, f64) {
        match self {
            Link::Logit => {
                // ln Λ(u) = -ln(1 + e^{-u})
                let softplus = |z: f64| {
                    if z > 0.0 {
                        z + libm::log1p(libm::exp(-z))
                    } else {
                        libm::log1p(libm::exp(z))
                    }
                };
                (-softplus(-u), -softplus(u))
            }
            Link::Probit => (libm::log(normal_cdf(u)), libm::log(normal_cdf(-u))),
        }
    }

    /// `Λ'(u) / (Λ(u)(1 - Λ(u)))`: identically one for the logit.
    fn score_factor(self, u: f64) -> f64 {
        match self {
            Link::Logit => 1.0,
            Link::Probit => {
                let p = normal_cdf(u);
                normal_pdf(u) / (p * (1.0 - p))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub link: Link,
    pub max_iterations: usize,
    /// Stop when the score max-norm falls below this.
    pub gradient_tolerance: f64,
    /// Stop when the relative log-likelihood change falls below this.
    pub relative_tolerance: f64,
    /// Coefficient max-norm beyond which separation is declared.
    pub separation_bound: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            link: Link::Logit,
            max_iterations: 100,
            gradient_tolerance: 1e-8,
            relative_tolerance: 1e-12,
            separation_bound: 30.0,
        }
    }
}

/// Fitted propensity model for one cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit {
    pub g: u32,
    pub link: Link,
    pub coefficients: Vec<f64>,
    /// `p̂_g(X_i)` for every unit of the panel.
    pub fitted: Vec<f64>,
    /// `Λ'(X_i'π̂)` for every unit.
    pub derivative: Vec<f64>,
    /// Inverse of `E_n[(G_g + C) ṗ² XX' / (p(1 - p))]`, row-major `k x k`.
    pub score_outer_inv: Vec<f64>,
    pub loglik: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl PropensityFit {
    pub fn k(&self) -> usize {
        self.coefficients.len()
    }

    pub fn score_outer_inv_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_row_slice(k, k, &self.score_outer_inv)
    }
}

fn linear_index(x: &[f64], coef: &[f64]) -> f64 {
    x.iter().zip(coef).map(|(a, b)| a * b).sum()
}

fn subsample(panel: &Panel, g: u32) -> Result<Vec<(usize, f64)>> {
    if !panel.cohorts().contains(&g) {
        return Err(Error::UnknownCohort(g));
    }
    Ok((0..panel.n_units())
        .filter(|&i| panel.in_subsample(i, g))
        .map(|i| {
            let y = if panel.cohort_of(i) == Cohort::FirstTreated(g) { 1.0 } else { 0.0 };
            (i, y)
        })
        .collect())
}

/// Binomial log-likelihood of the cohort-`g` propensity model at `coef`.
pub fn log_likelihood(panel: &Panel, g: u32, link: Link, coef: &[f64]) -> Result<f64> {
    let sub = subsample(panel, g)?;
    Ok(loglik_on(panel, &sub, link, coef))
}

fn loglik_on(panel: &Panel, sub: &[(usize, f64)], link: Link, coef: &[f64]) -> f64 {
    sub.iter()
        .map(|&(i, y)| {
            let (lp, lq) = link.log_probs(linear_index(panel.x_row(i), coef));
            y * lp + (1.0 - y) * lq
        })
        .sum()
}

/// Analytic gradient of [`log_likelihood`].
pub fn score(panel: &Panel, g: u32, link: Link, coef: &[f64]) -> Result<Vec<f64>> {
    let sub = subsample(panel, g)?;
    let (grad, _) = score_and_information(panel, &sub, link, coef);
    Ok(grad.iter().copied().collect())
}

fn score_and_information(
    panel: &Panel,
    sub: &[(usize, f64)],
    link: Link,
    coef: &[f64],
) -> (DVector<f64>, DMatrix<f64>) {
    let k = coef.len();
    let mut grad = DVector::zeros(k);
    let mut info = DMatrix::zeros(k, k);
    for &(i, y) in sub {
        let x = panel.x_row(i);
        let u = linear_index(x, coef);
        let p = link.cdf(u);
        let dp = link.pdf(u);
        let (r, w) = match link {
            Link::Logit => (y - p, p * (1.0 - p)),
            Link::Probit => {
                let v = p * (1.0 - p);
                ((y - p) * dp / v, dp * dp / v)
            }
        };
        for a in 0..k {
            grad[a] += x[a] * r;
            for b in 0..=a {
                info[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            info[(b, a)] = info[(a, b)];
        }
    }
    (grad, info)
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton-Raphson (Fisher scoring for the probit) with step halving.
pub fn fit_propensity(panel: &Panel, g: u32, opts: &FitOptions) -> Result<PropensityFit> {
    let sub = subsample(panel, g)?;
    let k = panel.n_covariates();
    let link = opts.link;
    let n_g = sub.iter().filter(|s| s.1 == 1.0).count() as f64;
    let n_c = sub.len() as f64 - n_g;

    let mut coef = vec![0.0; k];
    if link == Link::Logit {
        coef[0] = libm::log(n_g / n_c);
    }
    let mut ll = loglik_on(panel, &sub, link, &coef);
    let mut converged = false;
    let mut iterations = 0;
    let mut grad_norm;

    loop {
        let (grad, info) = score_and_information(panel, &sub, link, &coef);
        grad_norm = max_abs(grad.iter().copied());
        if grad_norm < opts.gradient_tolerance {
            converged = true;
            break;
        }
        if iterations >= opts.max_iterations {
            break;
        }
        let chol = info.cholesky().ok_or(Error::RankDeficient { g })?;
        let step = chol.solve(&grad);
        iterations += 1;

        // near the optimum the gain of a Newton step is below the rounding
        // error of the summed likelihood
        let slack = 8.0 * f64::EPSILON * ll.abs().max(1.0);
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + scale * s).collect();
            let trial_ll = loglik_on(panel, &sub, link, &trial);
            if trial_ll.is_finite() && trial_ll >= ll - slack {
                accepted = Some((trial, trial_ll));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, next_ll)) = accepted else {
            // no ascent direction left at machine precision
            converged = grad_norm < libm::sqrt(opts.gradient_tolerance);
            break;
        };
        let norm = max_abs(next.iter().copied());
        if norm > opts.separation_bound {
            return Err(Error::Separation { g, norm });
        }
        let change = (next_ll - ll).abs();
        coef = next;
        let prev = ll;
        ll = next_ll;
        if change <= opts.relative_tolerance * prev.abs() && scale == 1.0 {
            let (grad, _) = score_and_information(panel, &sub, link, &coef);
            grad_norm = max_abs(grad.iter().copied());
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NotConverged {
            g,
            iterations,
            gradient_norm: grad_norm,
            last: coef,
        });
    }

    // A finite maximizer never classifies every unit correctly; if the
    // iterate does, the tolerance was met on the way to infinity.
    let separated = sub.iter().all(|&(i, y)| {
        let u = linear_index(panel.x_row(i), &coef);
        (y == 1.0 && u > 0.0) || (y == 0.0 && u < 0.0)
    });
    if separated {
        return Err(Error::Separation {
            g,
            norm: max_abs(coef.iter().copied()),
        });
    }

    let n = panel.n_units();
    let mut fitted = Vec::with_capacity(n);
    let mut derivative = Vec::with_capacity(n);
    for i in 0..n {
        let u = linear_index(panel.x_row(i), &coef);
        fitted.push(link.cdf(u));
        derivative.push(link.pdf(u));
    }
    let (_, info) = score_and_information(panel, &sub, link, &coef);
    let a = info / n as f64;
    let a_inv = a
        .cholesky()
        .ok_or(Error::RankDeficient { g })?
        .inverse();
    let mut score_outer_inv = Vec::with_capacity(k * k);
    for r in 0..k {
        for c in 0..k {
            score_outer_inv.push(0.5 * (a_inv[(r, c)] + a_inv[(c, r)]));
        }
    }

    Ok(PropensityFit {
        g,
        link,
        coefficients: coef,
        fitted,
        derivative,
        score_outer_inv,
        loglik: ll,
        gradient_norm: grad_norm,
        converged,
        iterations,
    })
}

/// Fits every cohort of the panel, in cohort order.
pub fn fit_all(panel: &Panel, opts: &FitOptions) -> Result<Vec<PropensityFit>> {
    panel
        .cohorts()
        .iter()
        .map(|&g| fit_propensity(panel, g, opts))
        .collect()
}

/// Per-unit influence of `π̂_g`: an `n x k` matrix whose rows vanish outside
/// the cohort-plus-controls subsample.
pub fn xi_pi(fit: &PropensityFit, panel: &Panel) -> DMatrix<f64> {
    let n = panel.n_units();
    let k = fit.k();
    let a_inv = fit.score_outer_inv_matrix();
    let mut out = DMatrix::zeros(n, k);
    for i in 0..n {
        let y = match panel.cohort_of(i) {
            Cohort::Never => 0.0,
            Cohort::FirstTreated(h) if h == fit.g => 1.0,
            Cohort::FirstTreated(_) => continue,
        };
        let x = panel.x_row(i);
        let u = linear_index(x, &fit.coefficients);
        let r = (y - fit.fitted[i]) * fit.link.score_factor(u);
        for a in 0..k {
            let mut v = 0.0;
            for b in 0..k {
                v += a_inv[(a, b)] * x[b];
            }
            out[(i, a)] = v * r;
        }
    }
    out
}

/// Overlap diagnostics on the cohort-plus-controls subsample.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapReport {
    pub g: u32,
    pub trim: f64,
    pub max_fitted: f64,
    /// Unit indices with `p̂_g(X) > trim`.
    pub violations: Vec<usize>,
}

impl OverlapReport {
    pub fn n_violations(&self) -> usize {
        self.violations.len()
    }
}

pub fn check_overlap(fit: &PropensityFit, panel: &Panel, trim: f64) -> Result<OverlapReport> {
    if !(trim > 0.0 && trim < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "trim threshold must lie in (0, 1), got {trim}"
        )));
    }
    let mut max_fitted = 0.0_f64;
    let mut violations = Vec::new();
    for i in 0..panel.n_units() {
        if !panel.in_subsample(i, fit.g) {
            continue;
        }
        let p = fit.fitted[i];
        if p >= 1.0 - 1e-12 {
            return Err(Error::DegenerateOverlap { g: fit.g, unit: i });
        }
        max_fitted = max_fitted.max(p);
        if p > trim {
            violations.push(i);
        }
    }
    Ok(OverlapReport {
        g: fit.g,
        trim,
        max_fitted,
        violations,
    })
}
