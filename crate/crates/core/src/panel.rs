//! Balanced panel container, cohort structure and the (g, t) cell grid.
//!
//! Periods are addressed by 1-based index `1..=T` throughout the crate; the
//! original time labels are kept only for reporting. Units are stored in a
//! deterministic order that depends on unit ids alone.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;
use core::fmt;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// First-treatment period of a unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Cohort {
    /// Never treated within the sample window: the comparison group.
    Never,
    /// First treated in the given 1-based period index.
    FirstTreated(u32),
}

impl Cohort {
    pub fn period(self) -> Option<u32> {
        match self {
            Cohort::Never => None,
            Cohort::FirstTreated(g) => Some(g),
        }
    }

    pub fn is_never(self) -> bool {
        matches!(self, Cohort::Never)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellKind {
    /// `g <= t`: a treatment effect.
    Post,
    /// `g > t`: a pre-treatment cell that should be zero under parallel trends.
    Placebo,
}

impl CellKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CellKind::Post => "post",
            CellKind::Placebo => "placebo",
        }
    }
}

/// A (cohort, period) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub g: u32,
    pub t: u32,
}

impl CellIndex {
    pub fn new(g: u32, t: u32) -> Self {
        CellIndex { g, t }
    }

    pub fn kind(self) -> CellKind {
        if self.g <= self.t {
            CellKind::Post
        } else {
            CellKind::Placebo
        }
    }

    /// Base period of the outcome difference: `g - 1` for post cells (long
    /// difference), `t - 1` for placebo cells (one-period difference).
    pub fn anchor(self) -> u32 {
        match self.kind() {
            CellKind::Post => self.g - 1,
            CellKind::Placebo => self.t - 1,
        }
    }

    /// Exposure length `e = t - g + 1`; non-positive for placebo cells.
    pub fn exposure(self) -> i64 {
        self.t as i64 - self.g as i64 + 1
    }
}

impl fmt::Display for CellIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.g, self.t)
    }
}

/// One unit's data as handed to [`Panel::new`].
#[derive(Debug, Clone, PartialEq)]
pub struct UnitRecord {
    pub id: String,
    pub cohort: Cohort,
    pub cluster: Option<String>,
    /// One outcome per period, in period order.
    pub outcomes: Vec<f64>,
    /// Time-invariant user covariates (no intercept).
    pub covariates: Vec<f64>,
}

/// Unvalidated panel contents.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelInput {
    pub period_labels: Vec<i64>,
    pub covariate_names: Vec<String>,
    pub units: Vec<UnitRecord>,
}

/// Validated balanced panel. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    unit_ids: Vec<String>,
    period_labels: Vec<i64>,
    covariate_names: Vec<String>,
    /// Row-major `n x T`.
    outcomes: Vec<f64>,
    /// Row-major `n x k`; column 0 is the intercept.
    covariates: Vec<f64>,
    k: usize,
    cohort: Vec<Cohort>,
    cohorts: Vec<u32>,
    cluster: Vec<usize>,
    cluster_labels: Vec<String>,
    explicit_clusters: bool,
}

/// Orders ids numerically when both parse as integers, otherwise
/// lexicographically; integers sort before non-integers.
pub fn compare_unit_ids(a: &str, b: &str) -> Ordering {
    match (a.parse::<i64>(), b.parse::<i64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

impl Panel {
    pub fn new(input: PanelInput) -> Result<Panel> {
        let PanelInput {
            period_labels,
            covariate_names,
            mut units,
        } = input;
        let n_periods = period_labels.len();
        if n_periods < 2 {
            return Err(Error::InvalidPanel(format!(
                "need at least two periods, got {n_periods}"
            )));
        }
        if period_labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPanel(
                "period labels must be strictly increasing".into(),
            ));
        }
        if units.is_empty() {
            return Err(Error::InvalidPanel("panel has no units".into()));
        }
        let n_cov = covariate_names.len();

        units.sort_by(|a, b| compare_unit_ids(&a.id, &b.id));
        if let Some(w) = units.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::InvalidPanel(format!("duplicate unit id {}", w[0].id)));
        }

        let mut unbalanced = Vec::new();
        for u in &units {
            if u.outcomes.len() != n_periods {
                unbalanced.push(u.id.clone());
                continue;
            }
            if u.outcomes.iter().any(|y| !y.is_finite()) {
                return Err(Error::InvalidPanel(format!(
                    "unit {} has a non-finite outcome",
                    u.id
                )));
            }
            if u.covariates.len() != n_cov || u.covariates.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidPanel(format!(
                    "unit {} has missing or non-finite covariates",
                    u.id
                )));
            }
            match u.cohort {
                Cohort::FirstTreated(1) => return Err(Error::TreatedInFirstPeriod(u.id.clone())),
                Cohort::FirstTreated(g) if g == 0 || g as usize > n_periods => {
                    return Err(Error::InvalidPanel(format!(
                        "unit {} has first-treatment period index {g} outside 1..={n_periods}",
                        u.id
                    )))
                }
                _ => {}
            }
        }
        if !unbalanced.is_empty() {
            return Err(Error::InvalidPanel(format!(
                "unbalanced panel; units without exactly {n_periods} periods: {}",
                unbalanced.join(", ")
            )));
        }

        for (j, name) in covariate_names.iter().enumerate() {
            if units.iter().all(|u| u.covariates[j] == 1.0) {
                return Err(Error::InvalidPanel(format!(
                    "covariate {name} is constant 1; the intercept is added automatically"
                )));
            }
        }

        let explicit_clusters = units.iter().any(|u| u.cluster.is_some());
        if explicit_clusters && units.iter().any(|u| u.cluster.is_none()) {
            return Err(Error::InvalidPanel(
                "cluster labels must be given for all units or none".into(),
            ));
        }

        let n = units.len();
        let k = n_cov + 1;
        let mut outcomes = Vec::with_capacity(n * n_periods);
        let mut covariates = Vec::with_capacity(n * k);
        let mut cohort = Vec::with_capacity(n);
        let mut unit_ids = Vec::with_capacity(n);
        let mut cluster = Vec::with_capacity(n);
        let mut cluster_labels: Vec<String> = Vec::new();
        let mut cluster_lookup: BTreeMap<String, usize> = BTreeMap::new();
        for u in units {
            outcomes.extend_from_slice(&u.outcomes);
            covariates.push(1.0);
            covariates.extend_from_slice(&u.covariates);
            cohort.push(u.cohort);
            let label = u.cluster.unwrap_or_else(|| u.id.clone());
            let next = cluster_labels.len();
            let idx = *cluster_lookup.entry(label.clone()).or_insert_with(|| {
                cluster_labels.push(label);
                next
            });
            cluster.push(idx);
            unit_ids.push(u.id);
        }

        let mut cohorts: Vec<u32> = cohort.iter().filter_map(|c| c.period()).collect();
        cohorts.sort_unstable();
        cohorts.dedup();
        if cohorts.is_empty() {
            return Err(Error::InvalidPanel("no treated cohort".into()));
        }
        if !cohort.iter().any(|c| c.is_never()) {
            return Err(Error::InvalidPanel("no never-treated control units".into()));
        }

        let panel = Panel {
            unit_ids,
            period_labels,
            covariate_names,
            outcomes,
            covariates,
            k,
            cohort,
            cohorts,
            cluster,
            cluster_labels,
            explicit_clusters,
        };
        for &g in &panel.cohorts {
            panel.check_rank(g)?;
        }
        Ok(panel)
    }

    fn check_rank(&self, g: u32) -> Result<()> {
        let k = self.k;
        let mut xtx = DMatrix::<f64>::zeros(k, k);
        let mut count = 0usize;
        for i in 0..self.n_units() {
            if !self.in_subsample(i, g) {
                continue;
            }
            count += 1;
            let x = self.x_row(i);
            for a in 0..k {
                for b in 0..k {
                    xtx[(a, b)] += x[a] * x[b];
                }
            }
        }
        if count < k {
            return Err(Error::RankDeficient { g });
        }
        let eig = SymmetricEigen::new(xtx);
        let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min <= 1e-10 * max {
            return Err(Error::RankDeficient { g });
        }
        Ok(())
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_periods(&self) -> usize {
        self.period_labels.len()
    }

    /// Number of columns of `X`, intercept included.
    pub fn n_covariates(&self) -> usize {
        self.k
    }

    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    pub fn period_labels(&self) -> &[i64] {
        &self.period_labels
    }

    /// Label of 1-based period index `t`.
    pub fn period_label(&self, t: u32) -> i64 {
        self.period_labels[t as usize - 1]
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Outcome of unit `i` in 1-based period `t`.
    #[inline]
    pub fn outcome(&self, i: usize, t: u32) -> f64 {
        self.outcomes[i * self.n_periods() + t as usize - 1]
    }

    pub fn outcome_row(&self, i: usize) -> &[f64] {
        let tt = self.n_periods();
        &self.outcomes[i * tt..(i + 1) * tt]
    }

    /// Covariate row of unit `i`, intercept first.
    #[inline]
    pub fn x_row(&self, i: usize) -> &[f64] {
        &self.covariates[i * self.k..(i + 1) * self.k]
    }

    pub fn cohort_of(&self, i: usize) -> Cohort {
        self.cohort[i]
    }

    pub fn unit_cohorts(&self) -> &[Cohort] {
        &self.cohort
    }

    /// Treatment cohorts present in the panel, ascending.
    pub fn cohorts(&self) -> &[u32] {
        &self.cohorts
    }

    pub fn cohort_size(&self, g: u32) -> usize {
        self.cohort
            .iter()
            .filter(|&&c| c == Cohort::FirstTreated(g))
            .count()
    }

    pub fn n_control(&self) -> usize {
        self.cohort.iter().filter(|c| c.is_never()).count()
    }

    /// Per-unit cluster index; clusters are numbered by first appearance in
    /// unit order, so singleton clusters number units `0..n`.
    pub fn clusters(&self) -> &[usize] {
        &self.cluster
    }

    pub fn n_clusters(&self) -> usize {
        self.cluster_labels.len()
    }

    pub fn cluster_labels(&self) -> &[String] {
        &self.cluster_labels
    }

    pub fn has_explicit_clusters(&self) -> bool {
        self.explicit_clusters
    }

    /// Unit `i` belongs to cohort `g` or to the never-treated group.
    #[inline]
    pub fn in_subsample(&self, i: usize, g: u32) -> bool {
        match self.cohort[i] {
            Cohort::Never => true,
            Cohort::FirstTreated(h) => h == g,
        }
    }

    /// Indicators `G_g` and `C`.
    pub fn cohort_masks(&self, g: u32) -> Result<CohortMasks> {
        if !self.cohorts.contains(&g) {
            return Err(Error::UnknownCohort(g));
        }
        Ok(CohortMasks {
            treated: self
                .cohort
                .iter()
                .map(|&c| c == Cohort::FirstTreated(g))
                .collect(),
            control: self.cohort.iter().map(|c| c.is_never()).collect(),
        })
    }

    /// All estimable cells in (g ascending, t ascending) order. Post cells
    /// satisfy `g <= t`; placebo cells `2 <= t < g`.
    pub fn cell_grid(&self, include_placebo: bool) -> Vec<CellIndex> {
        let tt = self.n_periods() as u32;
        let mut cells = Vec::new();
        for &g in &self.cohorts {
            for t in 2..=tt {
                let cell = CellIndex::new(g, t);
                if cell.kind() == CellKind::Post || include_placebo {
                    cells.push(cell);
                }
            }
        }
        cells
    }

    /// Same units and outcomes with covariates reduced to the intercept.
    pub fn intercept_only(&self) -> Panel {
        let n = self.n_units();
        let mut p = self.clone();
        p.covariates = alloc::vec![1.0; n];
        p.k = 1;
        p.covariate_names.clear();
        p
    }

    /// Inverse of [`Panel::new`] up to unit ordering.
    pub fn to_input(&self) -> PanelInput {
        let units = (0..self.n_units())
            .map(|i| UnitRecord {
                id: self.unit_ids[i].clone(),
                cohort: self.cohort[i],
                cluster: self
                    .explicit_clusters
                    .then(|| self.cluster_labels[self.cluster[i]].clone()),
                outcomes: self.outcome_row(i).to_vec(),
                covariates: self.x_row(i)[1..].to_vec(),
            })
            .collect();
        PanelInput {
            period_labels: self.period_labels.clone(),
            covariate_names: self.covariate_names.clone(),
            units,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CohortMasks {
    pub treated: Vec<bool>,
    pub control: Vec<bool>,
}

/// Recovers first-treatment cohorts from an explicit `n x T` treatment
/// indicator matrix, rejecting paths that switch treatment off or start
/// treated in period 1.
pub fn cohorts_from_treatment_paths(paths: &[Vec<bool>]) -> Result<Vec<Cohort>> {
    paths
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let mut first = None;
            for (s, &treated) in d.iter().enumerate() {
                match (first, treated) {
                    (None, true) => first = Some(s),
                    (Some(f), false) => {
                        return Err(Error::TreatmentReversal {
                            unit: i,
                            from: f + 1,
                            to: s + 1,
                        })
                    }
                    _ => {}
                }
            }
            match first {
                None => Ok(Cohort::Never),
                Some(0) => Err(Error::TreatedInFirstPeriod(format!("{i}"))),
                Some(s) => Ok(Cohort::FirstTreated(s as u32 + 1)),
            }
        })
        .collect()
}
