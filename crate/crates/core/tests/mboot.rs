use cohortdid_core::attgt::{att_all, AttOptions};
use cohortdid_core::dgp::{generate, DgpSpec};
use cohortdid_core::mboot::{
    band_from_draws, bootstrap_draws, simultaneous_band, MultiplierEngine, MultiplierLaw, MultiplierSpec,
};
use nalgebra::DMatrix;

#[test]
fn single_parameter_critical_value_is_normal_quantile() {
    let n = 2000;
    // centred, roughly normal influence values
    let psi = DMatrix::from_fn(n, 1, |i, _| ((i as f64 + 0.5) / n as f64 - 0.5) * 12f64.sqrt());
    for law in [MultiplierLaw::Mammen, MultiplierLaw::Rademacher] {
        let engine = MultiplierEngine::unclustered(
            MultiplierSpec {
                law,
                draws: 9999,
                seed: 31,
                cluster: false,
            },
            n,
        );
        let draws = engine.bootstrap_draws(&psi);
        let band = band_from_draws(&[0.0], &draws, n, 0.05).unwrap();
        assert!((band.c_hat - 1.96).abs() < 0.06, "{law:?}: c_hat {}", band.c_hat);
    }
}

#[test]
fn draw_variance_matches_influence_variance() {
    let panel = generate(&DgpSpec {
        n_units: 2000,
        seed: 32,
        ..Default::default()
    })
    .unwrap()
    .panel;
    let est = att_all(&panel, &AttOptions::default()).unwrap();
    let spec = MultiplierSpec {
        draws: 4999,
        seed: 34,
        ..Default::default()
    };
    let draws = bootstrap_draws(&est.att.influence, &spec, &panel);
    let sigma = est.att.covariance();
    for j in 0..draws.ncols() {
        let col = draws.column(j);
        let var = col.iter().map(|x| x * x).sum::<f64>() / col.len() as f64;
        assert!((var / sigma[(j, j)] - 1.0).abs() <= 0.05, "cell {j}: {var} vs {}", sigma[(j, j)]);
    }
}

#[test]
fn joint_critical_value_dominates_pointwise() {
    let panel = generate(&DgpSpec { seed: 34, ..Default::default() }).unwrap().panel;
    let est = att_all(&panel, &AttOptions::default()).unwrap();
    let spec = MultiplierSpec {
        draws: 999,
        seed: 35,
        ..Default::default()
    };
    let band = simultaneous_band(&est.att.estimates, &est.att.influence, 0.05, &spec, &panel).unwrap();
    assert!(band.c_hat >= 1.96 - 0.1);
    let single = simultaneous_band(&est.att.estimates[..1], &est.att.influence.columns(0, 1).into_owned(), 0.05, &spec, &panel).unwrap();
    assert!(band.c_hat >= single.c_hat - 1e-6);
    for j in 0..band.lower.len() {
        assert!(band.lower[j] <= band.estimates[j] && band.estimates[j] <= band.upper[j]);
    }
}

#[test]
fn draws_are_reproducible_and_seed_dependent() {
    let spec = MultiplierSpec {
        draws: 10,
        seed: 36,
        ..Default::default()
    };
    let a = MultiplierEngine::unclustered(spec, 50);
    let b = MultiplierEngine::unclustered(spec, 50);
    let c = MultiplierEngine::unclustered(MultiplierSpec { seed: 37, ..spec }, 50);
    assert_eq!(a.draw(3), b.draw(3));
    assert_ne!(a.draw(3), a.draw(4));
    assert_ne!(a.draw(3), c.draw(3));
}
