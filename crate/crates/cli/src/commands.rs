//! Subcommand bodies. Each writes its artifacts into the configured output
//! directory and returns the paths written.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use cohortdid_core::aggregate::aggregate as aggregate_att;
use cohortdid_core::attgt::{att_all, AttOptions, Estimation};
use cohortdid_core::dgp::generate as generate_panel;
use cohortdid_core::mboot::{simultaneous_band_with, MultiplierEngine};
use cohortdid_core::pretest::{cvm_bootstrap, placebo_wald};
use cohortdid_core::Panel;

use crate::config::RunConfig;
use crate::ingest::{read_panel_file, write_panel_file, Layout};
use crate::plot::event_study_svg;
use crate::report::{to_json, AggReport, AggRow, AttReport, BandReport, PretestReport, TruthReport, SCHEMA_VERSION};
use crate::simulate::{run as run_simulation, SimOptions};

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
    written.push(path);
    Ok(())
}

fn estimate_panel(cfg: &RunConfig, opts: &AttOptions) -> Result<(Panel, Estimation)> {
    let panel = read_panel_file(cfg.input()?, &Layout::from_config(cfg))?;
    let est = att_all(&panel, opts).context("estimating ATT(g, t)")?;
    for r in est.overlap.iter().filter(|r| r.n_violations() > 0) {
        eprintln!(
            "warning: cohort {}: {} units with propensity score above {} (max {:.6})",
            panel.period_label(r.g),
            r.n_violations(),
            r.trim,
            r.max_fitted
        );
    }
    Ok((panel, est))
}

/// `attgt.json`, `bands.json` and, when plotting, one event-study SVG per
/// cohort.
pub fn estimate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (panel, est) = estimate_panel(cfg, &cfg.att_options())?;
    let mut written = Vec::new();
    let dir = &cfg.output_dir;
    write(dir, "attgt.json", &to_json(&AttReport::new(&panel, &est)), &mut written)?;

    let spec = cfg.bootstrap.spec();
    let engine = MultiplierEngine::new(spec, &panel);
    let band = simultaneous_band_with(&engine, &est.att.estimates, &est.att.influence, cfg.bootstrap.alpha)
        .context("building simultaneous band")?;
    let bands = BandReport::new(&panel, &est.att.cells, &band, &spec);
    write(dir, "bands.json", &to_json(&bands), &mut written)?;
    if cfg.plot {
        for &g in panel.cohorts() {
            let label = panel.period_label(g);
            if let Some(svg) = event_study_svg(&bands, label) {
                write(dir, &format!("event_study_g{label}.svg"), &svg, &mut written)?;
            }
        }
    }
    Ok(written)
}

/// `agg.json` with every configured aggregation scheme.
pub fn aggregate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let opts = AttOptions {
        include_placebo: false,
        ..cfg.att_options()
    };
    let (panel, est) = estimate_panel(cfg, &opts)?;
    let results = cfg
        .aggregate
        .schemes()
        .into_iter()
        .map(|s| {
            aggregate_att(&est.att, &panel, s)
                .map(|r| AggRow::new(&panel, &r))
                .with_context(|| format!("aggregating with scheme {}", s.name()))
        })
        .collect::<Result<Vec<_>>>()?;
    let report = AggReport {
        schema_version: SCHEMA_VERSION,
        results,
    };
    let mut written = Vec::new();
    write(&cfg.output_dir, "agg.json", &to_json(&report), &mut written)?;
    Ok(written)
}

/// `pretest.json` with the CvM test and the placebo Wald test.
pub fn pretest(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let opts = AttOptions {
        include_placebo: true,
        ..cfg.att_options()
    };
    let (panel, est) = estimate_panel(cfg, &opts)?;
    let alpha = cfg.bootstrap.alpha;
    let engine = MultiplierEngine::new(cfg.bootstrap.spec(), &panel);
    let cvm = if cfg.pretest.cvm {
        Some(cvm_bootstrap(&panel, &est.fits, &engine, alpha)?)
    } else {
        None
    };
    let wald = if cfg.pretest.wald {
        Some(placebo_wald(&est.att, &engine, alpha)?)
    } else {
        None
    };
    let report = PretestReport::new(&panel, alpha, cfg.bootstrap.draws, cvm.as_ref(), wald.as_ref());
    let mut written = Vec::new();
    write(&cfg.output_dir, "pretest.json", &to_json(&report), &mut written)?;
    Ok(written)
}

/// `simulation.json` from the Monte Carlo harness.
pub fn simulate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let report = run_simulation(&SimOptions::from_config(cfg))?;
    for f in &report.failures {
        eprintln!("warning: {f}");
    }
    let mut written = Vec::new();
    write(&cfg.output_dir, "simulation.json", &to_json(&report), &mut written)?;
    Ok(written)
}

/// `panel.csv` and `truth.json` drawn from the configured design.
pub fn generate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let sim = generate_panel(&cfg.dgp.spec()).context("generating panel")?;
    let mut written = Vec::new();
    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("panel.csv");
    write_panel_file(&sim.panel, &path)?;
    written.push(path);
    write(&cfg.output_dir, "truth.json", &to_json(&TruthReport::new(&sim.truth)), &mut written)?;
    Ok(written)
}
