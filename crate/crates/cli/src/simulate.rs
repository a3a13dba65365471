//! Monte Carlo harness: runs replications of a simulation design through
//! the full pipeline and summarizes bias, standard-error accuracy, band
//! coverage and pre-test rejection rates.

use cohortdid_core::aggregate::{aggregate, AggScheme, ParameterKey};
use cohortdid_core::attgt::{att_all, AttOptions, OverlapPolicy};
use cohortdid_core::dgp::{generate, split_seed, DgpSpec};
use cohortdid_core::mboot::{simultaneous_band_with, MultiplierEngine, MultiplierSpec};
use cohortdid_core::pretest::{cvm_bootstrap, placebo_wald};
use cohortdid_core::propensity::FitOptions;
use cohortdid_core::{CellIndex, CellKind};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Mode, RunConfig};
use crate::report::SCHEMA_VERSION;

#[derive(Debug, Clone)]
pub struct SimOptions {
    pub dgp: DgpSpec,
    pub replications: usize,
    pub seed: u64,
    pub bootstrap: MultiplierSpec,
    pub alpha: f64,
    pub band: bool,
    pub cvm: bool,
    pub wald: bool,
    pub schemes: Vec<AggScheme>,
    pub fit: FitOptions,
    pub unconditional: bool,
}

impl SimOptions {
    pub fn from_config(cfg: &RunConfig) -> SimOptions {
        SimOptions {
            dgp: cfg.dgp.spec(),
            replications: cfg.simulate.replications,
            seed: cfg.simulate.seed,
            bootstrap: MultiplierSpec {
                cluster: false,
                ..cfg.bootstrap.spec()
            },
            alpha: cfg.bootstrap.alpha,
            band: cfg.simulate.band,
            cvm: cfg.simulate.cvm,
            wald: cfg.simulate.wald,
            schemes: cfg.aggregate.schemes(),
            fit: cfg.att_options().fit,
            unconditional: cfg.mode == Mode::Unconditional,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimCell {
    pub g: u32,
    pub t: u32,
    pub kind: String,
    pub truth: f64,
    pub mean: f64,
    pub bias: f64,
    /// Monte Carlo standard error of `mean`.
    pub mc_se: f64,
    /// `bias / mc_se`.
    pub z: f64,
    pub sd: f64,
    pub mean_plugin_se: f64,
    /// `mean_plugin_se / sd`.
    pub se_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAggregate {
    pub scheme: String,
    pub label: String,
    /// Average over replications of the cell truths under the estimated
    /// weights.
    pub truth: f64,
    pub mean: f64,
    pub mc_se: f64,
    pub z: f64,
    pub mean_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub schema_version: u32,
    pub replications: usize,
    pub completed: usize,
    /// Messages of the first few failed replications.
    pub failures: Vec<String>,
    pub n_units: usize,
    pub n_periods: usize,
    pub alpha: f64,
    #[serde(rename = "B")]
    pub draws: usize,
    pub cells: Vec<SimCell>,
    /// Share of replications whose simultaneous band covers every post cell.
    pub band_coverage: Option<f64>,
    pub mean_c_hat: Option<f64>,
    pub aggregates: Vec<SimAggregate>,
    pub cvm_rejection_rate: Option<f64>,
    pub wald_rejection_rate: Option<f64>,
}

struct Replication {
    estimates: Vec<f64>,
    plugin_se: Vec<f64>,
    covered: Option<(bool, f64)>,
    cvm_reject: Option<bool>,
    wald_reject: Option<bool>,
    /// `(value, truth, se)` per reported parameter.
    aggregates: Vec<(f64, f64, f64)>,
}

fn label(key: ParameterKey) -> String {
    match key {
        ParameterKey::Overall => "overall".into(),
        ParameterKey::Cohort(g) => format!("g={g}"),
        ParameterKey::Exposure(e) => format!("e={e}"),
        ParameterKey::Period(t) => format!("t={t}"),
    }
}

fn replicate(
    opts: &SimOptions,
    r: usize,
    truth: &[(CellIndex, f64)],
) -> cohortdid_core::Result<(Replication, Vec<(String, String)>)> {
    let sim = generate(&DgpSpec {
        seed: split_seed(opts.seed, r as u64),
        ..opts.dgp.clone()
    })?;
    let panel = if opts.unconditional {
        sim.panel.intercept_only()
    } else {
        sim.panel
    };
    let est = att_all(
        &panel,
        &AttOptions {
            include_placebo: true,
            fit: opts.fit,
            trim: 0.999,
            overlap: OverlapPolicy::Warn,
        },
    )?;
    let att = est.att;
    debug_assert_eq!(att.cells, truth.iter().map(|t| t.0).collect::<Vec<_>>());
    let engine = MultiplierEngine::unclustered(
        MultiplierSpec {
            seed: split_seed(opts.bootstrap.seed, r as u64),
            ..opts.bootstrap
        },
        panel.n_units(),
    );

    let covered = if opts.band {
        let post = att.select(|c| c.kind() == CellKind::Post);
        let band = simultaneous_band_with(&engine, &post.estimates, &post.influence, opts.alpha)?;
        let ok = post.cells.iter().enumerate().all(|(j, c)| {
            let tv = truth.iter().find(|t| t.0 == *c).map_or(f64::NAN, |t| t.1);
            band.lower[j] <= tv && tv <= band.upper[j]
        });
        Some((ok, band.c_hat))
    } else {
        None
    };
    let cvm_reject = if opts.cvm {
        cvm_bootstrap(&panel, &est.fits, &engine, opts.alpha)?.reject
    } else {
        None
    };
    let wald_reject = if opts.wald {
        Some(placebo_wald(&att, &engine, opts.alpha)?.p_value <= opts.alpha)
    } else {
        None
    };

    let mut aggregates = Vec::new();
    let mut labels = Vec::new();
    for &scheme in &opts.schemes {
        let res = aggregate(&att, &panel, scheme)?;
        for p in std::iter::once(&res.overall).chain(&res.partials) {
            let tv: f64 = p
                .weights
                .iter()
                .map(|(c, w)| w * truth.iter().find(|t| t.0 == *c).map_or(f64::NAN, |t| t.1))
                .sum();
            aggregates.push((p.value, tv, p.se()));
            labels.push((scheme.name().to_string(), label(p.key)));
        }
    }
    Ok((
        Replication {
            estimates: att.estimates.clone(),
            plugin_se: att.plugin_se(),
            covered,
            cvm_reject,
            wald_reject,
            aggregates,
        },
        labels,
    ))
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

fn sd(xs: &[f64]) -> f64 {
    let m = mean(xs.iter().copied());
    let n = xs.len() as f64;
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn rate(flags: impl Iterator<Item = Option<bool>>) -> Option<f64> {
    let v: Option<Vec<bool>> = flags.collect();
    v.filter(|v| !v.is_empty())
        .map(|v| v.iter().filter(|&&b| b).count() as f64 / v.len() as f64)
}

pub fn run(opts: &SimOptions) -> anyhow::Result<SimReport> {
    if opts.replications == 0 {
        anyhow::bail!("simulate.replications must be at least 1");
    }
    let truth = opts.dgp.truth(true);
    let outcomes: Vec<_> = (0..opts.replications)
        .into_par_iter()
        .map(|r| replicate(opts, r, &truth).map_err(|e| format!("replication {r}: {e}")))
        .collect();
    let mut failures = Vec::new();
    let mut reps = Vec::new();
    let mut labels = Vec::new();
    for o in outcomes {
        match o {
            Ok((rep, l)) => {
                labels = l;
                reps.push(rep);
            }
            Err(msg) => failures.push(msg),
        }
    }
    let completed = reps.len();
    if completed == 0 {
        anyhow::bail!("every replication failed; first error: {}", failures[0]);
    }
    let root = (completed as f64).sqrt();

    let cells = truth
        .iter()
        .enumerate()
        .map(|(j, &(c, tv))| {
            let est: Vec<f64> = reps.iter().map(|r| r.estimates[j]).collect();
            let m = mean(est.iter().copied());
            let s = sd(&est);
            let mse = mean(reps.iter().map(|r| r.plugin_se[j]));
            SimCell {
                g: c.g,
                t: c.t,
                kind: match c.kind() {
                    CellKind::Post => "post",
                    CellKind::Placebo => "placebo",
                }
                .into(),
                truth: tv,
                mean: m,
                bias: m - tv,
                mc_se: s / root,
                z: (m - tv) / (s / root),
                sd: s,
                mean_plugin_se: mse,
                se_ratio: mse / s,
            }
        })
        .collect();

    let aggregates = labels
        .iter()
        .enumerate()
        .map(|(k, (scheme, lab))| {
            let vals: Vec<f64> = reps.iter().map(|r| r.aggregates[k].0).collect();
            let tv = mean(reps.iter().map(|r| r.aggregates[k].1));
            let m = mean(vals.iter().copied());
            let mc_se = sd(&vals) / root;
            SimAggregate {
                scheme: scheme.clone(),
                label: lab.clone(),
                truth: tv,
                mean: m,
                mc_se,
                z: (m - tv) / mc_se,
                mean_se: mean(reps.iter().map(|r| r.aggregates[k].2)),
            }
        })
        .collect();

    failures.truncate(10);
    Ok(SimReport {
        schema_version: SCHEMA_VERSION,
        replications: opts.replications,
        completed,
        failures,
        n_units: opts.dgp.n_units,
        n_periods: opts.dgp.n_periods,
        alpha: opts.alpha,
        draws: opts.bootstrap.draws,
        cells,
        band_coverage: rate(reps.iter().map(|r| r.covered.map(|c| c.0))),
        mean_c_hat: opts
            .band
            .then(|| mean(reps.iter().filter_map(|r| r.covered.map(|c| c.1)))),
        aggregates,
        cvm_rejection_rate: rate(reps.iter().map(|r| r.cvm_reject)),
        wald_rejection_rate: rate(reps.iter().map(|r| r.wald_reject)),
    })
}
