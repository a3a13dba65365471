//! JSON artifacts. Cohorts and periods are reported as the input's period
//! labels; every document carries `schema_version`.

use cohortdid_core::aggregate::{AggResult, AggScheme, Parameter, ParameterKey};
use cohortdid_core::attgt::Estimation;
use cohortdid_core::mboot::{BandResult, MultiplierLaw, MultiplierSpec};
use cohortdid_core::pretest::{CvmResult, WaldReport};
use cohortdid_core::propensity::Link;
use cohortdid_core::{CellIndex, CellKind, Panel};
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

fn kind(cell: CellIndex) -> &'static str {
    match cell.kind() {
        CellKind::Post => "post",
        CellKind::Placebo => "placebo",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSize {
    pub g: i64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub g: i64,
    pub converged: bool,
    pub iterations: usize,
    pub loglik: f64,
    pub coefficients: Vec<Coefficient>,
    pub max_fitted: f64,
    pub n_trim_violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub g: i64,
    pub t: i64,
    pub kind: String,
    pub estimate: f64,
    pub plugin_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttReport {
    pub schema_version: u32,
    pub n_units: usize,
    pub n_control: usize,
    pub periods: Vec<i64>,
    pub cohorts: Vec<CohortSize>,
    pub covariates: Vec<String>,
    pub link: String,
    pub propensity: Vec<FitDiagnostics>,
    pub cells: Vec<CellRow>,
}

impl AttReport {
    pub fn new(panel: &Panel, est: &Estimation) -> Self {
        let names: Vec<String> = std::iter::once("(intercept)".to_string())
            .chain(panel.covariate_names().iter().cloned())
            .collect();
        let se = est.att.plugin_se();
        AttReport {
            schema_version: SCHEMA_VERSION,
            n_units: panel.n_units(),
            n_control: panel.n_control(),
            periods: panel.period_labels().to_vec(),
            cohorts: panel
                .cohorts()
                .iter()
                .map(|&g| CohortSize {
                    g: panel.period_label(g),
                    size: panel.cohort_size(g),
                })
                .collect(),
            covariates: panel.covariate_names().to_vec(),
            link: match est.fits.first().map(|f| f.link) {
                Some(Link::Probit) => "probit",
                _ => "logit",
            }
            .into(),
            propensity: est
                .fits
                .iter()
                .zip(&est.overlap)
                .map(|(f, o)| FitDiagnostics {
                    g: panel.period_label(f.g),
                    converged: f.converged,
                    iterations: f.iterations,
                    loglik: f.loglik,
                    coefficients: names
                        .iter()
                        .zip(&f.coefficients)
                        .map(|(name, &value)| Coefficient {
                            name: name.clone(),
                            value,
                        })
                        .collect(),
                    max_fitted: o.max_fitted,
                    n_trim_violations: o.n_violations(),
                })
                .collect(),
            cells: est
                .att
                .cells
                .iter()
                .zip(&est.att.estimates)
                .zip(se)
                .map(|((&c, &estimate), plugin_se)| CellRow {
                    g: panel.period_label(c.g),
                    t: panel.period_label(c.t),
                    kind: kind(c).into(),
                    estimate,
                    plugin_se,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub g: i64,
    pub t: i64,
    pub kind: String,
    pub estimate: f64,
    pub sigma_half: f64,
    pub lower: f64,
    pub upper: f64,
    pub fallback_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub schema_version: u32,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub draws: usize,
    pub law: String,
    pub seed: u64,
    pub clustered: bool,
    pub c_hat: f64,
    pub cells: Vec<BandRow>,
}

fn law_name(law: MultiplierLaw) -> String {
    match law {
        MultiplierLaw::Mammen => "mammen",
        MultiplierLaw::Rademacher => "rademacher",
    }
    .into()
}

impl BandReport {
    pub fn new(panel: &Panel, cells: &[CellIndex], band: &BandResult, spec: &MultiplierSpec) -> Self {
        BandReport {
            schema_version: SCHEMA_VERSION,
            alpha: band.alpha,
            draws: band.draws_used,
            law: law_name(spec.law),
            seed: spec.seed,
            clustered: spec.cluster,
            c_hat: band.c_hat,
            cells: cells
                .iter()
                .enumerate()
                .map(|(j, &c)| BandRow {
                    g: panel.period_label(c.g),
                    t: panel.period_label(c.t),
                    kind: kind(c).into(),
                    estimate: band.estimates[j],
                    sigma_half: band.sigma_half[j],
                    lower: band.lower[j],
                    upper: band.upper[j],
                    fallback_flag: band.fallback[j],
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartialRow {
    pub label: String,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub g: i64,
    pub t: i64,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggRow {
    pub scheme: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub e_prime: Option<u32>,
    pub value: f64,
    pub se: f64,
    pub partials: Vec<PartialRow>,
    pub weights: Vec<WeightRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggReport {
    pub schema_version: u32,
    pub results: Vec<AggRow>,
}

pub fn parameter_label(panel: &Panel, key: ParameterKey) -> String {
    match key {
        ParameterKey::Overall => "overall".into(),
        ParameterKey::Cohort(g) => format!("g={}", panel.period_label(g)),
        ParameterKey::Exposure(e) => format!("e={e}"),
        ParameterKey::Period(t) => format!("t={}", panel.period_label(t)),
    }
}

impl AggRow {
    pub fn new(panel: &Panel, r: &AggResult) -> Self {
        let partial = |p: &Parameter| PartialRow {
            label: parameter_label(panel, p.key),
            value: p.value,
            se: p.se(),
        };
        AggRow {
            scheme: r.scheme.name().into(),
            e_prime: match r.scheme {
                AggScheme::SelectivityDynamics { e_prime } => Some(e_prime),
                _ => None,
            },
            value: r.overall.value,
            se: r.overall.se(),
            partials: r.partials.iter().map(partial).collect(),
            weights: r
                .overall
                .weights
                .iter()
                .map(|&(c, w)| WeightRow {
                    g: panel.period_label(c.g),
                    t: panel.period_label(c.t),
                    w,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContributionRow {
    pub g: i64,
    pub t: i64,
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaldRow {
    pub stat: f64,
    pub df: usize,
    pub p_value: f64,
    pub reduced_rank: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretestReport {
    pub schema_version: u32,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub draws: usize,
    pub cvm_stat: Option<f64>,
    pub c_critical: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    pub per_cell: Vec<ContributionRow>,
    pub wald: Option<WaldRow>,
}

impl PretestReport {
    pub fn new(panel: &Panel, alpha: f64, draws: usize, cvm: Option<&CvmResult>, wald: Option<&WaldReport>) -> Self {
        PretestReport {
            schema_version: SCHEMA_VERSION,
            alpha,
            draws,
            cvm_stat: cvm.map(|c| c.statistic),
            c_critical: cvm.and_then(|c| c.critical_value),
            p_value: cvm.and_then(|c| c.p_value),
            reject: cvm.and_then(|c| c.reject),
            per_cell: cvm
                .map(|c| {
                    c.per_cell
                        .iter()
                        .map(|p| ContributionRow {
                            g: panel.period_label(p.cell.g),
                            t: panel.period_label(p.cell.t),
                            contribution: p.contribution,
                        })
                        .collect()
                })
                .unwrap_or_default(),
            wald: wald.map(|w| WaldRow {
                stat: w.statistic,
                df: w.df,
                p_value: w.p_value,
                reduced_rank: w.reduced_rank,
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub g: u32,
    pub t: u32,
    pub true_att: f64,
}

/// Population cell values of a simulated panel, in period indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthReport {
    pub schema_version: u32,
    pub cells: Vec<TruthRow>,
}

impl TruthReport {
    pub fn new(truth: &[(CellIndex, f64)]) -> Self {
        TruthReport {
            schema_version: SCHEMA_VERSION,
            cells: truth
                .iter()
                .map(|&(c, v)| TruthRow {
                    g: c.g,
                    t: c.t,
                    true_att: v,
                })
                .collect(),
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}
