//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use cohortdid::config::RunConfig;
use cohortdid::simulate::{run, SimOptions, SimReport};
use cohortdid_core::aggregate::{aggregate, AggScheme, ParameterKey};
use cohortdid_core::attgt::{att_all, AttGtResult, AttOptions};
use cohortdid_core::dgp::{generate, split_seed, DgpSpec, EffectDesign, Violation};
use cohortdid_core::mboot::{simultaneous_band, MultiplierEngine, MultiplierLaw, MultiplierSpec};
use cohortdid_core::propensity::{fit_propensity, log_likelihood, score, FitOptions, Link};
use cohortdid_core::{CellKind, Cohort, Panel, PanelInput, UnitRecord};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Deterministic uniform on [0, 1) from a seed and counter.
fn uniform(seed: u64, i: u64) -> f64 {
    (split_seed(seed, i) >> 11) as f64 / (1u64 << 53) as f64
}

fn sim_options(dgp: DgpSpec, replications: usize, seed: u64, draws: usize) -> SimOptions {
    let mut opts = SimOptions::from_config(&RunConfig::default());
    opts.dgp = dgp;
    opts.replications = replications;
    opts.seed = seed;
    opts.bootstrap.draws = draws;
    opts.bootstrap.seed = seed ^ 0xB007;
    opts.band = false;
    opts.cvm = false;
    opts.wald = false;
    opts.schemes = Vec::new();
    opts
}

fn run_sim(opts: &SimOptions) -> Result<SimReport, String> {
    let r = run(opts).map_err(|e| format!("{e:#}"))?;
    ensure(r.completed == r.replications, || {
        format!("{} of {} replications failed: {:?}", r.replications - r.completed, r.replications, r.failures)
    })?;
    Ok(r)
}

/// n = 8, three periods, cohorts 2 and 3, one covariate.
fn hand_panel() -> Panel {
    let rows: [(&str, Cohort, [f64; 3], f64); 8] = [
        ("1", Cohort::FirstTreated(2), [1.0, 2.6, 3.1], 0.3),
        ("2", Cohort::FirstTreated(2), [0.4, 1.9, 2.5], 1.2),
        ("3", Cohort::FirstTreated(2), [2.2, 3.0, 4.4], -0.4),
        ("4", Cohort::FirstTreated(3), [1.7, 2.0, 3.9], 0.9),
        ("5", Cohort::FirstTreated(3), [0.2, 0.9, 2.6], -1.1),
        ("6", Cohort::Never, [0.0, 0.5, 0.8], 0.5),
        ("7", Cohort::Never, [1.1, 1.4, 2.0], -0.2),
        ("8", Cohort::Never, [0.6, 1.3, 1.5], 1.5),
    ];
    Panel::new(PanelInput {
        period_labels: vec![1, 2, 3],
        covariate_names: vec!["x".into()],
        units: rows
            .iter()
            .map(|(id, cohort, ys, x)| UnitRecord {
                id: id.to_string(),
                cohort: *cohort,
                cluster: None,
                outcomes: ys.to_vec(),
                covariates: vec![*x],
            })
            .collect(),
    })
    .unwrap()
}

fn criterion_1() -> Result<String, String> {
    let start = Instant::now();
    let panel = hand_panel();
    let est = att_all(&panel, &AttOptions::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (j, cell) in est.att.cells.iter().enumerate() {
        let fit = est.fits.iter().find(|f| f.g == cell.g).unwrap();
        // the fitted scores must solve the likelihood equations
        let mut grad = [0.0; 2];
        for i in 0..panel.n_units() {
            let c = panel.cohort_of(i);
            if c == Cohort::FirstTreated(cell.g) || c == Cohort::Never {
                let y = if c.is_never() { 0.0 } else { 1.0 };
                let x = panel.x_row(i);
                grad[0] += y - fit.fitted[i];
                grad[1] += x[1] * (y - fit.fitted[i]);
            }
        }
        ensure(grad.iter().all(|g| g.abs() < 1e-8), || format!("score {grad:?} at the fit"))?;
        let anchor = if cell.t >= cell.g { cell.g - 1 } else { cell.t - 1 };
        let (mut sg, mut sgy, mut so, mut soy) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..panel.n_units() {
            let dy = panel.outcome(i, cell.t) - panel.outcome(i, anchor);
            match panel.cohort_of(i) {
                Cohort::FirstTreated(h) if h == cell.g => {
                    sg += 1.0;
                    sgy += dy;
                }
                Cohort::Never => {
                    let p = fit.fitted[i];
                    let odds = p / (1.0 - p);
                    so += odds;
                    soy += odds * dy;
                }
                _ => {}
            }
        }
        let oracle = sgy / sg - soy / so;
        worst = worst.max((est.att.estimates[j] - oracle).abs());
    }
    ensure(worst <= 1e-12, || format!("conditional ATT off by {worst:e}"))?;

    let flat = panel.intercept_only();
    let unc = att_all(&flat, &AttOptions::default()).map_err(|e| e.to_string())?;
    let mut worst_did: f64 = 0.0;
    for (j, cell) in unc.att.cells.iter().enumerate() {
        let anchor = if cell.t >= cell.g { cell.g - 1 } else { cell.t - 1 };
        let mean_change = |want: Cohort| {
            let v: Vec<f64> = (0..flat.n_units())
                .filter(|&i| flat.cohort_of(i) == want)
                .map(|i| flat.outcome(i, cell.t) - flat.outcome(i, anchor))
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        let did = mean_change(Cohort::FirstTreated(cell.g)) - mean_change(Cohort::Never);
        worst_did = worst_did.max((unc.att.estimates[j] - did).abs());
    }
    ensure(worst_did <= 1e-12, || format!("unconditional ATT differs from DID of means by {worst_did:e}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, || format!("took {secs:.3}s"))?;
    Ok(format!(
        "{} cells, max |ATT - plug-in| = {worst:.1e}, max |ATT - DID| = {worst_did:.1e}, {secs:.3}s",
        est.att.cells.len()
    ))
}

fn criterion_2() -> Result<String, String> {
    let panel = generate(&DgpSpec {
        seed: 2,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?
    .panel;
    let flat = panel.intercept_only();
    let mut worst_share: f64 = 0.0;
    for &g in flat.cohorts() {
        let fit = fit_propensity(&flat, g, &FitOptions::default()).map_err(|e| e.to_string())?;
        let (ng, nc) = (flat.cohort_size(g) as f64, flat.n_control() as f64);
        worst_share = worst_share.max(fit.fitted.iter().map(|p| (p - ng / (ng + nc)).abs()).fold(0.0, f64::max));
        worst_share = worst_share.max((fit.coefficients[0] - (ng / nc).ln()).abs());
    }
    ensure(worst_share < 1e-12, || format!("intercept-only fit off closed form by {worst_share:e}"))?;

    let mut worst_rel: f64 = 0.0;
    for point in 0..5u64 {
        let coef: Vec<f64> = (0..3).map(|a| 2.0 * uniform(77 + point, a) - 1.0).collect();
        let an = score(&panel, 3, Link::Logit, &coef).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let fd: Vec<f64> = (0..3)
            .map(|a| {
                let mut up = coef.clone();
                let mut down = coef.clone();
                up[a] += h;
                down[a] -= h;
                (log_likelihood(&panel, 3, Link::Logit, &up).unwrap()
                    - log_likelihood(&panel, 3, Link::Logit, &down).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let scale = an.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = an.iter().zip(&fd).fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
        worst_rel = worst_rel.max(err / scale);
    }
    ensure(worst_rel <= 1e-6, || format!("gradient relative error {worst_rel:e}"))?;
    Ok(format!(
        "closed-form share error {worst_share:.1e}; gradient vs finite differences, max relative error {worst_rel:.1e} over 5 points"
    ))
}

fn criterion_3() -> Result<String, String> {
    let dgp = DgpSpec {
        effect: EffectDesign::Constant(1.0),
        ..Default::default()
    };
    let r = run_sim(&sim_options(dgp, 500, 3, 1))?;
    let worst = r.cells.iter().map(|c| c.z.abs()).fold(0.0, f64::max);
    for c in &r.cells {
        let want = if c.kind == "post" { 1.0 } else { 0.0 };
        ensure(c.truth == want, || format!("({}, {}) truth {}", c.g, c.t, c.truth))?;
        ensure(c.z.abs() <= 3.0, || {
            format!("({}, {}) mean {:.4} vs {} is {:.2} MC SEs away", c.g, c.t, c.mean, c.truth, c.z)
        })?;
    }
    Ok(format!(
        "{} cells over {} replications, max |bias| / MC SE = {worst:.2}",
        r.cells.len(),
        r.completed
    ))
}

fn criterion_4() -> Result<String, String> {
    let dgp = DgpSpec {
        effect: EffectDesign::Exposure { base: 0.5, slope: 0.5 },
        ..Default::default()
    };
    let mut opts = sim_options(dgp, 1000, 4, 999);
    opts.band = true;
    let r = run_sim(&opts)?;
    let cov = r.band_coverage.unwrap();
    let post = r.cells.iter().filter(|c| c.kind == "post").count();
    ensure((0.92..=0.98).contains(&cov), || format!("joint coverage {cov:.3} over {post} cells"))?;
    Ok(format!(
        "joint coverage of {post} post cells = {cov:.3}, mean c_hat = {:.3}",
        r.mean_c_hat.unwrap()
    ))
}

fn criterion_5() -> Result<String, String> {
    let mut null = sim_options(DgpSpec::default(), 500, 5, 499);
    null.cvm = true;
    null.wald = true;
    let r0 = run_sim(&null)?;
    let size = r0.cvm_rejection_rate.unwrap();
    let wald_size = r0.wald_rejection_rate.unwrap();
    ensure((0.03..=0.08).contains(&size), || format!("CvM size {size:.3}"))?;
    ensure((0.02..=0.09).contains(&wald_size), || format!("Wald size {wald_size:.3}"))?;

    let alt_dgp = DgpSpec {
        n_units: 2000,
        violation: Violation::ConditionalOffsetting(1.0),
        ..Default::default()
    };
    let mut alt = sim_options(alt_dgp, 200, 55, 499);
    alt.cvm = true;
    alt.wald = true;
    let r1 = run_sim(&alt)?;
    let power = r1.cvm_rejection_rate.unwrap();
    let wald_power = r1.wald_rejection_rate.unwrap();
    ensure(power >= 0.9, || format!("CvM power {power:.3}"))?;
    ensure(wald_power < 0.15, || format!("Wald rejection under offsetting alternative {wald_power:.3}"))?;
    Ok(format!(
        "null (n=1000, 500 reps): CvM size {size:.3}, Wald size {wald_size:.3}; offsetting (n=2000, 200 reps): CvM power {power:.3}, Wald {wald_power:.3}"
    ))
}

fn criterion_6() -> Result<String, String> {
    let dgp = DgpSpec {
        effect: EffectDesign::Exposure { base: 0.0, slope: 1.0 },
        ..Default::default()
    };
    let mut opts = sim_options(dgp.clone(), 500, 6, 1);
    opts.schemes = vec![AggScheme::Dynamic];
    let r = run_sim(&opts)?;
    let mut worst: f64 = 0.0;
    for a in r.aggregates.iter().filter(|a| a.label.starts_with("e=")) {
        let e: f64 = a.label[2..].parse().unwrap();
        ensure(a.truth == e, || format!("{} truth {}", a.label, a.truth))?;
        ensure(a.z.abs() <= 3.0, || format!("{}: mean {:.4} is {:.2} MC SEs from {e}", a.label, a.mean, a.z))?;
        worst = worst.max(a.z.abs());
    }

    let sim = generate(&DgpSpec { seed: 66, ..dgp }).map_err(|e| e.to_string())?;
    let panel = &sim.panel;
    let est = att_all(panel, &AttOptions::default()).map_err(|e| e.to_string())?;
    let schemes = [
        AggScheme::SimpleAvg,
        AggScheme::WeightedAvg,
        AggScheme::Selective,
        AggScheme::Dynamic,
        AggScheme::Calendar,
        AggScheme::SelectivityDynamics { e_prime: 1 },
        AggScheme::SelectivityDynamics { e_prime: 2 },
        AggScheme::SelectivityDynamics { e_prime: 3 },
    ];
    let mut worst_sum: f64 = 0.0;
    for s in schemes {
        let res = aggregate(&est.att, panel, s).map_err(|e| e.to_string())?;
        for p in std::iter::once(&res.overall).chain(&res.partials) {
            worst_sum = worst_sum.max((p.weights.iter().map(|w| w.1).sum::<f64>() - 1.0).abs());
        }
    }
    ensure(worst_sum <= 1e-12, || format!("weights sum off by {worst_sum:e}"))?;

    let constant = 0.731;
    let flat = AttGtResult {
        estimates: vec![constant; est.att.cells.len()],
        ..est.att.clone()
    };
    for s in schemes {
        let res = aggregate(&flat, panel, s).map_err(|e| e.to_string())?;
        for p in std::iter::once(&res.overall).chain(&res.partials) {
            ensure(p.value == constant, || format!("{} {:?} returned {}", s.name(), p.key, p.value))?;
        }
        ensure(res.overall.key == ParameterKey::Overall, || "overall key".into())?;
    }
    Ok(format!(
        "theta_D(e) max |bias| / MC SE = {worst:.2}; weight sums within {worst_sum:.1e}; constant input reproduced exactly by {} schemes",
        schemes.len()
    ))
}

fn criterion_7() -> Result<String, String> {
    let n = 1_000_000;
    let engine = MultiplierEngine::unclustered(
        MultiplierSpec {
            law: MultiplierLaw::Mammen,
            draws: 1,
            seed: 7,
            cluster: false,
        },
        n,
    );
    let v = engine.draw(0);
    let nf = n as f64;
    let mut line = Vec::new();
    for (power, target) in [(1, 0.0), (2, 1.0), (3, 1.0)] {
        let xs: Vec<f64> = v.iter().map(|x| x.powi(power)).collect();
        let m = xs.iter().sum::<f64>() / nf;
        let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (nf - 1.0);
        let se = (var / nf).sqrt();
        ensure((m - target).abs() <= 3.0 * se, || format!("moment {power}: {m} vs {target} (MC SE {se:e})"))?;
        line.push(format!("E[V^{power}] = {m:.4} ({:.2} SE)", (m - target) / se));
    }

    let base = generate(&DgpSpec {
        n_units: 300,
        seed: 70,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?
    .panel;
    let mut input = base.to_input();
    for u in &mut input.units {
        u.cluster = Some(u.id.clone());
    }
    let clustered_panel = Panel::new(input).map_err(|e| e.to_string())?;
    let spec = MultiplierSpec {
        draws: 200,
        seed: 71,
        ..Default::default()
    };
    let clustered = MultiplierEngine::new(MultiplierSpec { cluster: true, ..spec }, &clustered_panel);
    let plain = MultiplierEngine::new(spec, &base);
    for b in 0..spec.draws {
        ensure(clustered.draw(b) == plain.draw(b), || format!("draw {b} differs"))?;
    }
    Ok(format!("{}; singleton clusters identical over {} draws", line.join(", "), spec.draws))
}

fn criterion_8() -> Result<String, String> {
    let sim = generate(&DgpSpec {
        n_units: 2000,
        seed: 8,
        ..Default::default()
    })
    .map_err(|e| e.to_string())?;
    let panel = &sim.panel;
    let est = att_all(panel, &AttOptions::default()).map_err(|e| e.to_string())?;
    let spec = MultiplierSpec {
        draws: 4999,
        seed: 88,
        ..Default::default()
    };
    let band = simultaneous_band(&est.att.estimates, &est.att.influence, 0.05, &spec, panel).map_err(|e| e.to_string())?;
    let boot = band.standard_errors(panel.n_units());
    let plug = est.att.plugin_se();
    let mut worst: f64 = 0.0;
    for (j, cell) in est.att.cells.iter().enumerate() {
        let rel = (boot[j] - plug[j]).abs() / plug[j];
        ensure(rel <= 0.15, || format!("{cell}: bootstrap {:.5} vs plug-in {:.5}", boot[j], plug[j]))?;
        worst = worst.max(rel);
    }
    let post = est.att.cells.iter().filter(|c| c.kind() == CellKind::Post).count();
    Ok(format!(
        "{} cells ({post} post), max relative gap between IQR scale and plug-in SE = {worst:.3}",
        est.att.cells.len()
    ))
}

fn cli(args: &[&str], dir: &Path) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_cohortdid"))
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn criterion_9() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    std::fs::write(
        dir.join("run.toml"),
        "input = \"data/panel.csv\"\n\
         [bootstrap]\ndraws = 299\nseed = 9\n\
         [aggregate]\nschemes = [\"simple_avg\", \"weighted_avg\", \"selective\", \"dynamic\", \"calendar\", \"selectivity_dynamics\"]\ne_prime = 2\n\
         [dgp]\nn_units = 600\nseed = 90\n\
         [simulate]\nreplications = 8\nseed = 91\ncvm = true\nwald = true\n",
    )
    .map_err(|e| e.to_string())?;
    cli(&["generate", "-c", "run.toml", "-o", "data"], dir)?;
    let commands = ["estimate", "aggregate", "pretest", "simulate"];
    let runs = [("a", "1"), ("b", "4"), ("c", "4")];
    for (out, threads) in runs {
        for cmd in commands {
            cli(&[cmd, "-c", "run.toml", "-o", out, "--threads", threads], dir)?;
        }
    }
    let mut files = 0;
    for entry in std::fs::read_dir(dir.join("a")).map_err(|e| e.to_string())? {
        let name = entry.map_err(|e| e.to_string())?.file_name();
        let a = std::fs::read(dir.join("a").join(&name)).map_err(|e| e.to_string())?;
        for other in ["b", "c"] {
            let b = std::fs::read(dir.join(other).join(&name)).map_err(|e| e.to_string())?;
            ensure(a == b, || format!("{} differs between runs", name.to_string_lossy()))?;
        }
        files += 1;
    }
    ensure(files >= 5, || format!("only {files} artifacts written"))?;
    Ok(format!("{files} artifacts byte-identical across 1 and 4 threads and a repeated run"))
}

fn main() {
    let checks: [(u8, &str, Check); 9] = [
        (1, "oracle exactness", criterion_1),
        (2, "MLE correctness", criterion_2),
        (3, "unbiasedness", criterion_3),
        (4, "simultaneous coverage", criterion_4),
        (5, "CvM size and power", criterion_5),
        (6, "aggregation truth recovery", criterion_6),
        (7, "multiplier-law moments", criterion_7),
        (8, "influence/bootstrap agreement", criterion_8),
        (9, "determinism", criterion_9),
    ];
    let mut failed = 0;
    for (id, name, check) in checks {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("criterion {id} FAIL {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
