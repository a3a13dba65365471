//! Summary parameters built as weighted averages of `ATT(g, t)`, with
//! influence functions that account for estimated cohort-share weights.
//!
//! Every parameter is a fixed linear combination of *components*. A
//! component averages a set of post cells with weights proportional to
//! `a_c · P̂(G = g_c)` (share-based) or to `a_c` alone (deterministic).
//! Share-based weights are ratios of sample means of cohort indicators, so
//! their influence follows from the delta method.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::attgt::AttGtResult;
use crate::error::{Error, Result};
use crate::panel::{CellIndex, CellKind, Cohort, Panel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggScheme {
    /// Unweighted mean of all post cells.
    SimpleAvg,
    /// Post cells weighted by cohort size.
    WeightedAvg,
    /// Per-cohort time averages, combined by cohort size.
    Selective,
    /// Per-exposure averages `θ̃_D(e)`, then their mean.
    Dynamic,
    /// Per-period averages `θ̃_C(t)`, then their mean.
    Calendar,
    /// Exposure averages over cohorts observed for at least `e_prime`
    /// post periods, for `e = 1..=e_prime`.
    SelectivityDynamics { e_prime: u32 },
}

impl AggScheme {
    pub fn name(self) -> &'static str {
        match self {
            AggScheme::SimpleAvg => "simple_avg",
            AggScheme::WeightedAvg => "weighted_avg",
            AggScheme::Selective => "selective",
            AggScheme::Dynamic => "dynamic",
            AggScheme::Calendar => "calendar",
            AggScheme::SelectivityDynamics { .. } => "selectivity_dynamics",
        }
    }
}

/// What a reported parameter averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParameterKey {
    Overall,
    Cohort(u32),
    Exposure(u32),
    Period(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub key: ParameterKey,
    pub value: f64,
    /// Nonzero cell weights, summing to one.
    pub weights: Vec<(CellIndex, f64)>,
    /// `l^w(W_i)` per unit.
    pub influence: Vec<f64>,
}

impl Parameter {
    /// Plug-in standard error `sqrt(E_n[l²] / n)`.
    pub fn se(&self) -> f64 {
        let n = self.influence.len() as f64;
        libm::sqrt(self.influence.iter().map(|v| v * v).sum::<f64>() / n / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggResult {
    pub scheme: AggScheme,
    pub overall: Parameter,
    pub partials: Vec<Parameter>,
}

impl AggResult {
    /// `n x m` influence matrix of the partial parameters.
    pub fn partial_influence(&self) -> DMatrix<f64> {
        let n = self.overall.influence.len();
        DMatrix::from_fn(n, self.partials.len(), |i, j| self.partials[j].influence[i])
    }
}

/// Cohort shares among treated units, in cohort order.
pub fn group_shares(panel: &Panel) -> Vec<(u32, f64)> {
    let treated = panel.n_units() - panel.n_control();
    panel
        .cohorts()
        .iter()
        .map(|&g| (g, panel.cohort_size(g) as f64 / treated as f64))
        .collect()
}

#[derive(Debug, Clone)]
pub(crate) struct Component {
    /// `(column in the ATT result, a_c)`.
    pub(crate) terms: Vec<(usize, f64)>,
    pub(crate) share_based: bool,
}

impl Component {
    /// Weights given cohort means `share(g)`; these need not be normalized.
    pub(crate) fn weights(&self, cells: &[CellIndex], share: impl Fn(u32) -> f64) -> Vec<f64> {
        let raw: Vec<f64> = self
            .terms
            .iter()
            .map(|&(j, a)| if self.share_based { a * share(cells[j].g) } else { a })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.iter().map(|r| r / total).collect()
    }

    /// Influence of each weight at unit `i`.
    fn weight_influence(
        &self,
        cells: &[CellIndex],
        share: &impl Fn(u32) -> f64,
        cohort: Cohort,
    ) -> Vec<f64> {
        if !self.share_based {
            return vec![0.0; self.terms.len()];
        }
        let centered = |g: u32| {
            let ind = if cohort == Cohort::FirstTreated(g) { 1.0 } else { 0.0 };
            ind - share(g)
        };
        let denom: f64 = self.terms.iter().map(|&(j, a)| a * share(cells[j].g)).sum();
        let denom_infl: f64 = self.terms.iter().map(|&(j, a)| a * centered(cells[j].g)).sum();
        self.terms
            .iter()
            .map(|&(j, a)| {
                let g = cells[j].g;
                a / denom * (centered(g) - share(g) / denom * denom_infl)
            })
            .collect()
    }
}

fn build_parameter(
    key: ParameterKey,
    parts: &[(f64, &Component)],
    att: &AttGtResult,
    panel: &Panel,
) -> Parameter {
    let n = panel.n_units();
    let nf = n as f64;
    let sizes: Vec<(u32, f64)> = panel
        .cohorts()
        .iter()
        .map(|&g| (g, panel.cohort_size(g) as f64 / nf))
        .collect();
    let share = |g: u32| sizes.iter().find(|s| s.0 == g).map_or(0.0, |s| s.1);
    let m = att.cells.len();

    let mut cell_w = vec![0.0; m];
    for &(b, comp) in parts {
        for (&(j, _), w) in comp.terms.iter().zip(comp.weights(&att.cells, share)) {
            cell_w[j] += b * w;
        }
    }
    let used: Vec<usize> = (0..m).filter(|&j| cell_w[j] != 0.0).collect();
    // centring at one cell keeps the value exact when all cells agree
    let reference = att.estimates[used[0]];
    let value = reference
        + used
            .iter()
            .map(|&j| cell_w[j] * (att.estimates[j] - reference))
            .sum::<f64>();

    // the weight term depends on a unit only through its cohort
    let weight_term = |cohort: Cohort| {
        let mut acc = 0.0;
        for &(b, comp) in parts.iter().filter(|p| p.1.share_based) {
            let xi = comp.weight_influence(&att.cells, &share, cohort);
            for (&(j, _), x) in comp.terms.iter().zip(xi) {
                acc += b * x * att.estimates[j];
            }
        }
        acc
    };
    let never = weight_term(Cohort::Never);
    let treated: Vec<f64> = sizes.iter().map(|&(g, _)| weight_term(Cohort::FirstTreated(g))).collect();

    let mut influence = vec![0.0; n];
    for (i, l) in influence.iter_mut().enumerate() {
        let mut acc = 0.0;
        for &j in &used {
            acc += cell_w[j] * att.influence[(i, j)];
        }
        acc += match panel.cohort_of(i) {
            Cohort::Never => never,
            Cohort::FirstTreated(g) => treated[sizes.iter().position(|s| s.0 == g).unwrap()],
        };
        *l = acc;
    }

    Parameter {
        key,
        value,
        weights: used.iter().map(|&j| (att.cells[j], cell_w[j])).collect(),
        influence,
    }
}

fn post_columns(att: &AttGtResult, panel: &Panel) -> Result<Vec<usize>> {
    let tt = panel.n_periods() as u32;
    let mut cols = Vec::new();
    for &g in panel.cohorts() {
        for t in g..=tt {
            let cell = CellIndex::new(g, t);
            cols.push(att.index_of(cell).ok_or(Error::MissingCell(cell))?);
        }
    }
    if att.n_units() != panel.n_units() {
        return Err(Error::InvalidArgument("ATT result and panel disagree on sample size".into()));
    }
    Ok(cols)
}

fn average(key: ParameterKey, comps: &[Component], att: &AttGtResult, panel: &Panel) -> Parameter {
    let b = 1.0 / comps.len() as f64;
    let parts: Vec<(f64, &Component)> = comps.iter().map(|c| (b, c)).collect();
    build_parameter(key, &parts, att, panel)
}

pub fn aggregate(att: &AttGtResult, panel: &Panel, scheme: AggScheme) -> Result<AggResult> {
    let cols = post_columns(att, panel)?;
    let cells = &att.cells;
    debug_assert!(cols.iter().all(|&j| cells[j].kind() == CellKind::Post));
    let tt = panel.n_periods() as u32;
    let select = |pred: &dyn Fn(CellIndex) -> bool, share_based: bool| Component {
        terms: cols
            .iter()
            .filter(|&&j| pred(cells[j]))
            .map(|&j| (j, 1.0))
            .collect(),
        share_based,
    };
    let param = |key, comp: &Component| build_parameter(key, &[(1.0, comp)], att, panel);

    let (overall, partials) = match scheme {
        AggScheme::SimpleAvg => (param(ParameterKey::Overall, &select(&|_| true, false)), vec![]),
        AggScheme::WeightedAvg => (param(ParameterKey::Overall, &select(&|_| true, true)), vec![]),
        AggScheme::Selective => {
            let partials = panel
                .cohorts()
                .iter()
                .map(|&g| param(ParameterKey::Cohort(g), &select(&|c| c.g == g, false)))
                .collect();
            let overall = Component {
                terms: cols
                    .iter()
                    .map(|&j| (j, 1.0 / (tt - cells[j].g + 1) as f64))
                    .collect(),
                share_based: true,
            };
            (param(ParameterKey::Overall, &overall), partials)
        }
        AggScheme::Dynamic => {
            let exposures: BTreeSet<u32> = cols.iter().map(|&j| cells[j].exposure() as u32).collect();
            let comps: Vec<(u32, Component)> = exposures
                .iter()
                .map(|&e| (e, select(&|c| c.exposure() == e as i64, true)))
                .collect();
            let partials = comps.iter().map(|(e, c)| param(ParameterKey::Exposure(*e), c)).collect();
            let only: Vec<Component> = comps.into_iter().map(|c| c.1).collect();
            (average(ParameterKey::Overall, &only, att, panel), partials)
        }
        AggScheme::Calendar => {
            let periods: BTreeSet<u32> = cols.iter().map(|&j| cells[j].t).collect();
            let comps: Vec<(u32, Component)> = periods
                .iter()
                .map(|&t| (t, select(&|c| c.t == t, true)))
                .collect();
            let partials = comps.iter().map(|(t, c)| param(ParameterKey::Period(*t), c)).collect();
            let only: Vec<Component> = comps.into_iter().map(|c| c.1).collect();
            (average(ParameterKey::Overall, &only, att, panel), partials)
        }
        AggScheme::SelectivityDynamics { e_prime } => {
            if e_prime < 1 || e_prime > tt - 1 {
                return Err(Error::InvalidArgument(alloc::format!(
                    "e_prime must lie in 1..={}, got {e_prime}",
                    tt - 1
                )));
            }
            let eligible = |g: u32| tt + 1 - g >= e_prime;
            if !panel.cohorts().iter().any(|&g| eligible(g)) {
                return Err(Error::InvalidArgument(alloc::format!(
                    "no cohort has {e_prime} post-treatment periods"
                )));
            }
            let comps: Vec<(u32, Component)> = (1..=e_prime)
                .map(|e| {
                    (
                        e,
                        select(&|c| c.exposure() == e as i64 && eligible(c.g), true),
                    )
                })
                .collect();
            let partials = comps.iter().map(|(e, c)| param(ParameterKey::Exposure(*e), c)).collect();
            let only: Vec<Component> = comps.into_iter().map(|c| c.1).collect();
            (average(ParameterKey::Overall, &only, att, panel), partials)
        }
    };
    Ok(AggResult {
        scheme,
        overall,
        partials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{generate, DgpSpec};
    use crate::panel::tests::unit;
    use crate::panel::PanelInput;
    use alloc::string::ToString;

    const ALL: [AggScheme; 6] = [
        AggScheme::SimpleAvg,
        AggScheme::WeightedAvg,
        AggScheme::Selective,
        AggScheme::Dynamic,
        AggScheme::Calendar,
        AggScheme::SelectivityDynamics { e_prime: 2 },
    ];

    /// Panel with cohort sizes `sizes[g - 2]` over `T` periods and two
    /// controls; outcomes are irrelevant for weight checks.
    fn sized_panel(sizes: &[usize], tt: usize) -> Panel {
        let mut units = Vec::new();
        let mut id = 0;
        for (j, &s) in sizes.iter().enumerate() {
            for _ in 0..s {
                units.push(unit(&id.to_string(), Cohort::FirstTreated(j as u32 + 2), &vec![0.0; tt], &[]));
                id += 1;
            }
        }
        for _ in 0..2 {
            units.push(unit(&id.to_string(), Cohort::Never, &vec![0.0; tt], &[]));
            id += 1;
        }
        Panel::new(PanelInput {
            period_labels: (1..=tt as i64).collect(),
            covariate_names: vec![],
            units,
        })
        .unwrap()
    }

    fn synthetic_att(panel: &Panel, value: impl Fn(CellIndex) -> f64) -> AttGtResult {
        let cells = panel.cell_grid(false);
        let n = panel.n_units();
        let mut influence = DMatrix::from_fn(n, cells.len(), |i, j| ((i * 7 + j * 3) % 5) as f64);
        for mut col in influence.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        AttGtResult {
            estimates: cells.iter().map(|&c| value(c)).collect(),
            influence,
            cells,
        }
    }

    #[test]
    fn shares() {
        let p = sized_panel(&[10, 30], 3);
        assert_eq!(group_shares(&p), vec![(2, 0.25), (3, 0.75)]);
        let p = sized_panel(&[4], 3);
        assert_eq!(group_shares(&p), vec![(2, 1.0)]);
    }

    #[test]
    fn constant_cells_give_the_constant_exactly() {
        let p = sized_panel(&[3, 5, 2], 4);
        let att = synthetic_att(&p, |_| 0.37);
        for scheme in ALL {
            let r = aggregate(&att, &p, scheme).unwrap();
            assert_eq!(r.overall.value, 0.37, "{scheme:?}");
            for q in &r.partials {
                assert_eq!(q.value, 0.37, "{scheme:?} {:?}", q.key);
            }
        }
    }

    #[test]
    fn weights_are_convex() {
        let p = sized_panel(&[3, 5, 2], 4);
        let att = synthetic_att(&p, |c| c.g as f64 + 0.1 * c.t as f64);
        for scheme in ALL {
            let r = aggregate(&att, &p, scheme).unwrap();
            for q in core::iter::once(&r.overall).chain(&r.partials) {
                let s: f64 = q.weights.iter().map(|w| w.1).sum();
                assert!((s - 1.0).abs() < 1e-12, "{scheme:?} {:?}", q.key);
                assert!(q.weights.iter().all(|w| w.1 > 0.0));
                let direct: f64 = q.weights.iter().map(|(c, w)| w * att.estimate(*c).unwrap()).sum();
                assert!((direct - q.value).abs() < 1e-12);
                let mean = q.influence.iter().sum::<f64>() / q.influence.len() as f64;
                assert!(mean.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn hand_computed_weights() {
        // T = 4, cohorts 2, 3, 4 with sizes 3, 5, 2 (shares .3, .5, .2)
        let p = sized_panel(&[3, 5, 2], 4);
        let att = synthetic_att(&p, |c| (c.g * 10 + c.t) as f64);
        let w = |r: &Parameter, g, t| {
            r.weights
                .iter()
                .find(|(c, _)| *c == CellIndex::new(g, t))
                .map_or(0.0, |x| x.1)
        };
        let simple = aggregate(&att, &p, AggScheme::SimpleAvg).unwrap().overall;
        assert!((w(&simple, 3, 4) - 2.0 / 12.0).abs() < 1e-15);

        // κ = 3(.3) + 2(.5) + .2 = 2.1
        let weighted = aggregate(&att, &p, AggScheme::WeightedAvg).unwrap().overall;
        assert!((w(&weighted, 2, 3) - 0.3 / 2.1).abs() < 1e-14);
        assert!((w(&weighted, 4, 4) - 0.2 / 2.1).abs() < 1e-14);

        let sel = aggregate(&att, &p, AggScheme::Selective).unwrap();
        assert!((w(&sel.overall, 2, 2) - 0.3 / 3.0).abs() < 1e-14);
        assert!((w(&sel.overall, 3, 4) - 0.5 / 2.0).abs() < 1e-14);
        assert!((w(&sel.overall, 4, 4) - 0.2).abs() < 1e-14);
        assert_eq!(sel.partials.len(), 3);

        // θ̃_D(1) uses all three cohorts; θ̃_D(3) only cohort 2
        let dynamic = aggregate(&att, &p, AggScheme::Dynamic).unwrap();
        assert_eq!(dynamic.partials.len(), 3);
        assert!((w(&dynamic.partials[0], 3, 3) - 0.5).abs() < 1e-14);
        assert!((dynamic.partials[2].value - 24.0).abs() < 1e-12);
        assert!((w(&dynamic.overall, 2, 4) - 1.0 / 3.0).abs() < 1e-14);

        let cal = aggregate(&att, &p, AggScheme::Calendar).unwrap();
        assert_eq!(cal.partials.len(), 3);
        assert!((cal.partials[0].value - 22.0).abs() < 1e-12);
        assert!((w(&cal.partials[1], 3, 3) - 0.5 / 0.8).abs() < 1e-14);

        // e' = 2: cohorts 2 and 3 qualify (T - g + 1 >= 2)
        let sd = aggregate(&att, &p, AggScheme::SelectivityDynamics { e_prime: 2 }).unwrap();
        assert_eq!(sd.partials.len(), 2);
        assert_eq!(w(&sd.overall, 4, 4), 0.0);
        assert!((w(&sd.partials[0], 2, 2) - 0.3 / 0.8).abs() < 1e-14);
        assert!((w(&sd.partials[1], 3, 4) - 0.5 / 0.8).abs() < 1e-14);
        assert!(aggregate(&att, &p, AggScheme::SelectivityDynamics { e_prime: 4 }).is_err());
    }

    #[test]
    fn equal_shares_and_periods_make_selective_match_weighted() {
        // one cohort: every cohort trivially has the same post periods
        let p = sized_panel(&[6], 4);
        let att = synthetic_att(&p, |c| c.t as f64 * 1.3);
        let a = aggregate(&att, &p, AggScheme::Selective).unwrap().overall.value;
        let b = aggregate(&att, &p, AggScheme::WeightedAvg).unwrap().overall.value;
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn missing_cell_is_named() {
        let p = sized_panel(&[3, 5], 3);
        let att = synthetic_att(&p, |_| 1.0).select(|c| c != CellIndex::new(2, 3));
        assert_eq!(
            aggregate(&att, &p, AggScheme::Dynamic),
            Err(Error::MissingCell(CellIndex::new(2, 3)))
        );
    }

    /// The weight influence equals the Gateaux derivative of the weights
    /// in the direction of a point mass at each unit.
    #[test]
    fn weight_influence_matches_numerical_derivative() {
        let sim = generate(&DgpSpec {
            n_units: 2000,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let p = sim.panel;
        let att = synthetic_att(&p, |c| c.t as f64 - 0.5 * c.g as f64);
        let nf = p.n_units() as f64;
        let base = |g: u32| p.cohort_size(g) as f64 / nf;
        let cols: Vec<usize> = (0..att.cells.len()).collect();
        let comps = [
            Component { terms: cols.iter().map(|&j| (j, 1.0)).collect(), share_based: true },
            Component {
                terms: cols
                    .iter()
                    .filter(|&&j| att.cells[j].exposure() == 1)
                    .map(|&j| (j, 1.0))
                    .collect(),
                share_based: true,
            },
            Component {
                terms: cols.iter().map(|&j| (j, 1.0 / (5 - att.cells[j].g) as f64)).collect(),
                share_based: true,
            },
        ];
        let eps = 1e-6;
        for comp in &comps {
            for i in [0usize, 17, 400, 1999] {
                let cohort = p.cohort_of(i);
                let moved = |s: f64| {
                    move |g: u32| {
                        let ind = if cohort == Cohort::FirstTreated(g) { 1.0 } else { 0.0 };
                        (1.0 - s) * base(g) + s * ind
                    }
                };
                let up = comp.weights(&att.cells, moved(eps));
                let down = comp.weights(&att.cells, moved(-eps));
                let analytic = comp.weight_influence(&att.cells, &base, cohort);
                for k in 0..up.len() {
                    let numeric = (up[k] - down[k]) / (2.0 * eps);
                    assert!((numeric - analytic[k]).abs() < 1e-7, "{numeric} vs {}", analytic[k]);
                }
            }
        }
    }
}
