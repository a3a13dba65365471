//! Long-format panel CSV: one row per unit and period.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use cohortdid_core::{Cohort, Panel, PanelInput, UnitRecord};

use crate::config::{Mode, RunConfig, Schema};

/// Column layout of an input file.
#[derive(Debug, Clone, Default)]
pub struct Layout {
    pub schema: Schema,
    /// `None` takes every column outside the schema and cluster column.
    pub covariates: Option<Vec<String>>,
    pub cluster: Option<String>,
}

impl Layout {
    pub fn from_config(cfg: &RunConfig) -> Layout {
        Layout {
            schema: cfg.schema.clone(),
            covariates: match cfg.mode {
                Mode::Unconditional => Some(Vec::new()),
                Mode::Conditional => cfg.covariates.clone(),
            },
            cluster: cfg.bootstrap.cluster.clone(),
        }
    }
}

struct UnitRows {
    group: String,
    cluster: Option<String>,
    covariates: Vec<f64>,
    outcomes: BTreeMap<i64, f64>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| anyhow!("missing column '{name}'"))
}

fn number(field: &str, what: &str, line: u64) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .with_context(|| format!("line {line}: {what} '{field}' is not a number"))
}

pub fn read_panel<R: Read>(reader: R, layout: &Layout) -> Result<Panel> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let s = &layout.schema;
    let unit_col = column(&headers, &s.unit)?;
    let period_col = column(&headers, &s.period)?;
    let outcome_col = column(&headers, &s.outcome)?;
    let group_col = column(&headers, &s.group)?;
    let cluster_col = layout.cluster.as_deref().map(|c| column(&headers, c)).transpose()?;
    let covariate_names: Vec<String> = match &layout.covariates {
        Some(names) => names.clone(),
        None => headers
            .iter()
            .enumerate()
            .filter(|(j, _)| ![unit_col, period_col, outcome_col, group_col].contains(j) && Some(*j) != cluster_col)
            .map(|(_, h)| h.to_string())
            .collect(),
    };
    let covariate_cols: Vec<usize> = covariate_names
        .iter()
        .map(|c| column(&headers, c))
        .collect::<Result<_>>()?;

    let mut units: BTreeMap<String, UnitRows> = BTreeMap::new();
    let mut periods = BTreeSet::new();
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row[unit_col].to_string();
        let period: i64 = row[period_col]
            .parse()
            .with_context(|| format!("line {line}: period '{}' is not an integer", &row[period_col]))?;
        let y = number(&row[outcome_col], "outcome", line)?;
        let group = match row[group_col].trim() {
            "" => "0".to_string(),
            g => g.to_string(),
        };
        let cluster = cluster_col.map(|j| row[j].to_string());
        let xs: Vec<f64> = covariate_cols
            .iter()
            .zip(&covariate_names)
            .map(|(&j, name)| number(&row[j], name, line))
            .collect::<Result<_>>()?;
        periods.insert(period);
        let entry = units.entry(id.clone()).or_insert_with(|| UnitRows {
            group: group.clone(),
            cluster: cluster.clone(),
            covariates: xs.clone(),
            outcomes: BTreeMap::new(),
        });
        if entry.group != group {
            bail!("line {line}: unit {id} changes first-treatment period from '{}' to '{group}'", entry.group);
        }
        if entry.cluster != cluster {
            bail!("line {line}: unit {id} changes cluster");
        }
        if let Some(j) = (0..xs.len()).find(|&j| xs[j] != entry.covariates[j]) {
            bail!(
                "line {line}: covariate '{}' of unit {id} varies over time; covariates must be time-invariant",
                covariate_names[j]
            );
        }
        if entry.outcomes.insert(period, y).is_some() {
            bail!("line {line}: duplicate row for unit {id}, period {period}");
        }
    }
    if units.is_empty() {
        bail!("input has no rows");
    }

    let period_labels: Vec<i64> = periods.into_iter().collect();
    let last = *period_labels.last().unwrap();
    let mut records = Vec::with_capacity(units.len());
    for (id, rows) in units {
        let group = rows.group.as_str();
        let cohort = if group == "0" {
            Cohort::Never
        } else {
            let label: i64 = group
                .parse()
                .with_context(|| format!("unit {id}: first-treatment period '{group}' is not an integer"))?;
            match period_labels.iter().position(|&p| p == label) {
                Some(j) => Cohort::FirstTreated(j as u32 + 1),
                None if label > last => bail!(
                    "unit {id}: first treated in {label}, after the last observed period {last}; \
                     recode it as never treated or extend the panel"
                ),
                None => bail!("unit {id}: first-treatment period {label} is not an observed period"),
            }
        };
        records.push(UnitRecord {
            id,
            cohort,
            cluster: rows.cluster,
            outcomes: rows.outcomes.into_values().collect(),
            covariates: rows.covariates,
        });
    }
    Ok(Panel::new(PanelInput {
        period_labels,
        covariate_names,
        units: records,
    })?)
}

pub fn read_panel_file(path: &Path, layout: &Layout) -> Result<Panel> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_panel(std::io::BufReader::new(file), layout).with_context(|| format!("reading {}", path.display()))
}

/// Writes `panel` in the default layout, with a `cluster` column when the
/// panel carries explicit clusters.
pub fn write_panel<W: Write>(panel: &Panel, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let s = Schema::default();
    let clustered = panel.has_explicit_clusters();
    let mut header = vec![s.unit, s.period, s.outcome, s.group];
    if clustered {
        header.push("cluster".into());
    }
    header.extend(panel.covariate_names().iter().cloned());
    w.write_record(&header)?;
    for i in 0..panel.n_units() {
        let group = match panel.cohort_of(i) {
            Cohort::Never => "0".to_string(),
            Cohort::FirstTreated(g) => panel.period_label(g).to_string(),
        };
        let xs: Vec<String> = panel.x_row(i)[1..].iter().map(f64::to_string).collect();
        for t in 1..=panel.n_periods() as u32 {
            let mut rec = vec![
                panel.unit_ids()[i].clone(),
                panel.period_label(t).to_string(),
                panel.outcome(i, t).to_string(),
                group.clone(),
            ];
            if clustered {
                rec.push(panel.cluster_labels()[panel.clusters()[i]].clone());
            }
            rec.extend(xs.iter().cloned());
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_panel_file(panel: &Panel, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_panel(panel, std::io::BufWriter::new(file))
}
