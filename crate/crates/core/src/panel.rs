//! Canonical long-format panel data model: CSV ingestion, validation,
//! partition diagnostics, and subsample / two-period extraction.
//!
//! A dataset is a list of `(unit, time)` observations carrying the design
//! indicators `s` (treatment stratum), `g` (target group), `i` (interference
//! group) and an optional covariate vector. Indicators are unit attributes:
//! they must be constant over time, and a unit can never be target and
//! interference at once.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

/// A single row of a long-format panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub unit: String,
    pub time: i64,
    pub outcome: f64,
    /// Treatment stratum indicator.
    pub s: u8,
    /// Target group indicator.
    pub g: u8,
    /// Interference group indicator.
    pub i: u8,
    /// Covariate vector; length must match the dataset's covariate names.
    pub covariates: Vec<f64>,
    /// Cluster id for robust inference; never empty (defaults to the unit id).
    pub cluster: String,
}

/// Maps CSV columns onto the panel schema.
#[derive(Debug, Clone)]
pub struct ColumnMapping {
    pub unit: String,
    pub time: String,
    pub outcome: String,
    pub s: String,
    pub g: String,
    /// Interference column; when absent every unit gets `i = 0`.
    pub i: Option<String>,
    pub covariates: Vec<String>,
    /// Cluster column; when absent the unit id is used.
    pub cluster: Option<String>,
    /// First treated period, carried along for estimators that need it.
    pub post_from: Option<i64>,
}

impl ColumnMapping {
    pub fn new(unit: &str, time: &str, outcome: &str, s: &str, g: &str) -> Self {
        ColumnMapping {
            unit: unit.to_string(),
            time: time.to_string(),
            outcome: outcome.to_string(),
            s: s.to_string(),
            g: g.to_string(),
            i: None,
            covariates: Vec::new(),
            cluster: None,
            post_from: None,
        }
    }

    pub fn with_interference(mut self, i: &str) -> Self {
        self.i = Some(i.to_string());
        self
    }

    pub fn with_covariates<S: AsRef<str>>(mut self, names: &[S]) -> Self {
        self.covariates = names.iter().map(|s| s.as_ref().to_string()).collect();
        self
    }

    pub fn with_cluster(mut self, cluster: &str) -> Self {
        self.cluster = Some(cluster.to_string());
        self
    }

    pub fn with_post_from(mut self, t: i64) -> Self {
        self.post_from = Some(t);
        self
    }

    fn mapped_names(&self) -> Vec<&str> {
        let mut names = vec![
            self.unit.as_str(),
            self.time.as_str(),
            self.outcome.as_str(),
            self.s.as_str(),
            self.g.as_str(),
        ];
        if let Some(i) = &self.i {
            names.push(i);
        }
        if let Some(c) = &self.cluster {
            names.push(c);
        }
        names.extend(self.covariates.iter().map(String::as_str));
        names
    }
}

/// Validated, immutable long-format panel.
///
/// Construction enforces the invariants; afterwards the dataset is safe to
/// share across threads.
#[derive(Debug, Clone)]
pub struct PanelDataset {
    rows: Vec<Observation>,
    covariate_names: Vec<String>,
    time_values: Vec<i64>,
    source: String,
    /// Distinct unit ids in first-appearance order.
    unit_ids: Vec<String>,
    /// For each row, the index of its unit in `unit_ids`.
    unit_of_row: Vec<usize>,
}

impl PanelDataset {
    /// Build a dataset from raw rows, validating every invariant.
    ///
    /// Rows with an empty cluster id get the unit id as their cluster.
    pub fn from_rows(
        mut rows: Vec<Observation>,
        covariate_names: Vec<String>,
        source: &str,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySubset);
        }
        let p = covariate_names.len();
        let mut unit_index: HashMap<String, usize> = HashMap::new();
        let mut unit_ids: Vec<String> = Vec::new();
        let mut unit_of_row: Vec<usize> = Vec::with_capacity(rows.len());
        // (s, g, i) per unit, fixed by its first row.
        let mut membership: Vec<(u8, u8, u8)> = Vec::new();
        let mut seen_times: HashMap<(usize, i64), ()> = HashMap::new();
        let mut time_values: Vec<i64> = Vec::new();

        for row in rows.iter_mut() {
            if row.covariates.len() != p {
                return Err(Error::InvalidConfig(format!(
                    "unit `{}` at time {} has {} covariates, expected {}",
                    row.unit,
                    row.time,
                    row.covariates.len(),
                    p
                )));
            }
            if !row.outcome.is_finite() {
                return Err(Error::Parse {
                    column: "outcome".to_string(),
                    value: row.outcome.to_string(),
                    record: 0,
                });
            }
            for (name, v) in [("s", row.s), ("g", row.g), ("i", row.i)] {
                if v > 1 {
                    return Err(Error::NonBinaryIndicator {
                        column: name.to_string(),
                        value: v.to_string(),
                        record: 0,
                    });
                }
            }
            if row.g == 1 && row.i == 1 {
                return Err(Error::OverlappingGroups {
                    unit: row.unit.clone(),
                });
            }
            if row.cluster.is_empty() {
                row.cluster = row.unit.clone();
            }
            let uid = match unit_index.get(&row.unit) {
                Some(&idx) => {
                    let (s, g, i) = membership[idx];
                    let indicator = if s != row.s {
                        Some("s")
                    } else if g != row.g {
                        Some("g")
                    } else if i != row.i {
                        Some("i")
                    } else {
                        None
                    };
                    if let Some(indicator) = indicator {
                        return Err(Error::VaryingMembership {
                            unit: row.unit.clone(),
                            indicator,
                        });
                    }
                    idx
                }
                None => {
                    let idx = unit_ids.len();
                    unit_index.insert(row.unit.clone(), idx);
                    unit_ids.push(row.unit.clone());
                    membership.push((row.s, row.g, row.i));
                    idx
                }
            };
            if seen_times.insert((uid, row.time), ()).is_some() {
                return Err(Error::DuplicateObservation {
                    unit: row.unit.clone(),
                    time: row.time,
                });
            }
            unit_of_row.push(uid);
            time_values.push(row.time);
        }
        time_values.sort_unstable();
        time_values.dedup();

        Ok(PanelDataset {
            rows,
            covariate_names,
            time_values,
            source: source.to_string(),
            unit_ids,
            unit_of_row,
        })
    }

    /// Rebuild from rows already known to satisfy the invariants
    /// (subsampling an existing dataset preserves them).
    fn from_validated_rows(
        rows: Vec<Observation>,
        covariate_names: Vec<String>,
        source: &str,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptySubset);
        }
        let mut unit_index: HashMap<String, usize> = HashMap::new();
        let mut unit_ids: Vec<String> = Vec::new();
        let mut unit_of_row: Vec<usize> = Vec::with_capacity(rows.len());
        let mut time_values: Vec<i64> = Vec::with_capacity(rows.len());
        for row in &rows {
            let uid = match unit_index.get(&row.unit) {
                Some(&idx) => idx,
                None => {
                    let idx = unit_ids.len();
                    unit_index.insert(row.unit.clone(), idx);
                    unit_ids.push(row.unit.clone());
                    idx
                }
            };
            unit_of_row.push(uid);
            time_values.push(row.time);
        }
        time_values.sort_unstable();
        time_values.dedup();
        Ok(PanelDataset {
            rows,
            covariate_names,
            time_values,
            source: source.to_string(),
            unit_ids,
            unit_of_row,
        })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    /// Sorted distinct time values.
    pub fn time_values(&self) -> &[i64] {
        &self.time_values
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn n_obs(&self) -> usize {
        self.rows.len()
    }

    pub fn n_units(&self) -> usize {
        self.unit_ids.len()
    }

    /// Distinct unit ids in first-appearance order.
    pub fn unit_ids(&self) -> &[String] {
        &self.unit_ids
    }

    /// For each row, the dense index of its unit.
    pub fn unit_of_row(&self) -> &[usize] {
        &self.unit_of_row
    }

    /// Dense labels 0..C for the cluster column, in first-appearance order.
    pub fn cluster_of_row(&self) -> Vec<usize> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut out = Vec::with_capacity(self.rows.len());
        for row in &self.rows {
            let next = index.len();
            let id = *index.entry(row.cluster.as_str()).or_insert(next);
            out.push(id);
        }
        out
    }

    /// Rows satisfying a predicate over `(s, g, i)`.
    pub fn subset<F>(&self, selector: F) -> Result<PanelDataset>
    where
        F: Fn(u8, u8, u8) -> bool,
    {
        let rows: Vec<Observation> = self
            .rows
            .iter()
            .filter(|r| selector(r.s, r.g, r.i))
            .cloned()
            .collect();
        Self::from_validated_rows(rows, self.covariate_names.clone(), &self.source)
    }

    /// Rows whose time satisfies a predicate. Used to carve out pre-policy
    /// windows for the diagnostic tests.
    pub fn filter_times<F>(&self, keep: F) -> Result<PanelDataset>
    where
        F: Fn(i64) -> bool,
    {
        let rows: Vec<Observation> = self
            .rows
            .iter()
            .filter(|r| keep(r.time))
            .cloned()
            .collect();
        Self::from_validated_rows(rows, self.covariate_names.clone(), &self.source)
    }

    /// Column values by name; `outcome` or any covariate.
    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        if name == "outcome" {
            return Ok(self.rows.iter().map(|r| r.outcome).collect());
        }
        match self.covariate_names.iter().position(|c| c == name) {
            Some(j) => Ok(self.rows.iter().map(|r| r.covariates[j]).collect()),
            None => Err(Error::UnknownColumn(name.to_string())),
        }
    }
}

/// Read a long-format CSV into a validated panel.
///
/// Indicators are parsed strictly as `"0"`/`"1"`, times as integers, the
/// outcome and covariates as decimal or scientific reals.
pub fn load_panel_csv<P: AsRef<Path>>(path: P, mapping: &ColumnMapping) -> Result<PanelDataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;

    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };

    {
        let names = mapping.mapped_names();
        let mut sorted = names.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != names.len() {
            return Err(Error::InvalidConfig(
                "column mapping assigns the same column twice".to_string(),
            ));
        }
    }

    let unit_c = col(&mapping.unit)?;
    let time_c = col(&mapping.time)?;
    let outcome_c = col(&mapping.outcome)?;
    let s_c = col(&mapping.s)?;
    let g_c = col(&mapping.g)?;
    let i_c = mapping.i.as_deref().map(col).transpose()?;
    let cluster_c = mapping.cluster.as_deref().map(col).transpose()?;
    let cov_c: Vec<usize> = mapping
        .covariates
        .iter()
        .map(|c| col(c))
        .collect::<Result<_>>()?;

    let parse_real = |column: &str, value: &str, record: usize| -> Result<f64> {
        value.parse::<f64>().map_err(|_| Error::Parse {
            column: column.to_string(),
            value: value.to_string(),
            record,
        })
    };
    let parse_indicator = |column: &str, value: &str, record: usize| -> Result<u8> {
        match value {
            "0" => Ok(0),
            "1" => Ok(1),
            other => Err(Error::NonBinaryIndicator {
                column: column.to_string(),
                value: other.to_string(),
                record,
            }),
        }
    };

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let line = idx + 2; // header is line 1
        let get = |c: usize| record.get(c).unwrap_or("");
        let time = get(time_c).parse::<i64>().map_err(|_| Error::Parse {
            column: mapping.time.clone(),
            value: get(time_c).to_string(),
            record: line,
        })?;
        let outcome = parse_real(&mapping.outcome, get(outcome_c), line)?;
        if !outcome.is_finite() {
            return Err(Error::Parse {
                column: mapping.outcome.clone(),
                value: get(outcome_c).to_string(),
                record: line,
            });
        }
        let s = parse_indicator(&mapping.s, get(s_c), line)?;
        let g = parse_indicator(&mapping.g, get(g_c), line)?;
        let i = match i_c {
            Some(c) => parse_indicator(mapping.i.as_deref().unwrap(), get(c), line)?,
            None => 0,
        };
        let covariates = mapping
            .covariates
            .iter()
            .zip(&cov_c)
            .map(|(name, &c)| parse_real(name, get(c), line))
            .collect::<Result<Vec<f64>>>()?;
        let cluster = cluster_c.map(|c| get(c).to_string()).unwrap_or_default();
        rows.push(Observation {
            unit: get(unit_c).to_string(),
            time,
            outcome,
            s,
            g,
            i,
            covariates,
            cluster,
        });
    }

    PanelDataset::from_rows(
        rows,
        mapping.covariates.clone(),
        &path.as_ref().display().to_string(),
    )
}

/// Unit counts for the three groups of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CellCounts {
    pub target: usize,
    pub interference: usize,
    pub pure_control: usize,
}

impl CellCounts {
    fn is_dtd_complete(&self) -> bool {
        self.target > 0 && self.interference > 0 && self.pure_control > 0
    }
}

/// Diagnostic summary of the six-cell partition.
#[derive(Debug, Clone, Serialize)]
pub struct PartitionSummary {
    pub stratum1: CellCounts,
    pub stratum0: CellCounts,
    /// Interference share |I_s| / (|I_s| + |C_s|) per stratum; NaN when the
    /// stratum has no control units at all.
    pub rho1: f64,
    pub rho0: f64,
    /// All four S x G cells populated (controls pooled over i).
    pub td_ok: bool,
    /// All six S x (G, I) cells populated.
    pub dtd_ok: bool,
    pub missing_cells: Vec<String>,
}

/// Count units per cell and flag the cells each model requires.
pub fn validate_partition(data: &PanelDataset) -> PartitionSummary {
    let mut counted = vec![false; data.n_units()];
    let mut counts = [[0usize; 3]; 2]; // [stratum][target/interference/pure]
    for (row, &uid) in data.rows().iter().zip(data.unit_of_row()) {
        if counted[uid] {
            continue;
        }
        counted[uid] = true;
        let group = if row.g == 1 {
            0
        } else if row.i == 1 {
            1
        } else {
            2
        };
        counts[row.s as usize][group] += 1;
    }
    let cells = |s: usize| CellCounts {
        target: counts[s][0],
        interference: counts[s][1],
        pure_control: counts[s][2],
    };
    let stratum1 = cells(1);
    let stratum0 = cells(0);
    let rho = |c: &CellCounts| {
        let denom = c.interference + c.pure_control;
        if denom == 0 {
            f64::NAN
        } else {
            c.interference as f64 / denom as f64
        }
    };
    let td_ok = stratum1.target > 0
        && stratum0.target > 0
        && stratum1.interference + stratum1.pure_control > 0
        && stratum0.interference + stratum0.pure_control > 0;
    let dtd_ok = stratum1.is_dtd_complete() && stratum0.is_dtd_complete();
    let mut missing_cells = Vec::new();
    for (s, c) in [(1u8, &stratum1), (0u8, &stratum0)] {
        if c.target == 0 {
            missing_cells.push(format!("S={s},G=1,I=0"));
        }
        if c.interference == 0 {
            missing_cells.push(format!("S={s},G=0,I=1"));
        }
        if c.pure_control == 0 {
            missing_cells.push(format!("S={s},G=0,I=0"));
        }
    }
    PartitionSummary {
        stratum1,
        stratum0,
        rho1: rho(&stratum1),
        rho0: rho(&stratum0),
        td_ok,
        dtd_ok,
        missing_cells,
    }
}

impl fmt::Display for PartitionSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "stratum S=1: target={} interference={} pure_control={} (rho={:.4})",
            self.stratum1.target, self.stratum1.interference, self.stratum1.pure_control, self.rho1
        )?;
        writeln!(
            f,
            "stratum S=0: target={} interference={} pure_control={} (rho={:.4})",
            self.stratum0.target, self.stratum0.interference, self.stratum0.pure_control, self.rho0
        )?;
        write!(f, "td cells ok: {}; dtd cells ok: {}", self.td_ok, self.dtd_ok)?;
        if !self.missing_cells.is_empty() {
            write!(f, "; missing: {}", self.missing_cells.join(", "))?;
        }
        Ok(())
    }
}

/// Result of collapsing a multi-period panel to two periods.
#[derive(Debug, Clone)]
pub struct TwoPeriodReduction {
    pub data: PanelDataset,
    /// Units dropped because they were not observed in both windows.
    pub dropped_units: usize,
}

/// Collapse to two periods by averaging the outcome within each window.
///
/// Units missing either window are dropped (the count is surfaced, never
/// imputed). Covariates come from the earliest pre-period row; they are
/// time-invariant by contract. The result has times `{0, 1}`.
pub fn to_two_period(
    data: &PanelDataset,
    pre: &[i64],
    post: &[i64],
) -> Result<TwoPeriodReduction> {
    if pre.is_empty() || !data.time_values().iter().any(|t| pre.contains(t)) {
        return Err(Error::EmptyWindow("pre"));
    }
    if post.is_empty() || !data.time_values().iter().any(|t| post.contains(t)) {
        return Err(Error::EmptyWindow("post"));
    }
    if pre.iter().any(|t| post.contains(t)) {
        return Err(Error::InvalidConfig(
            "pre and post windows overlap".to_string(),
        ));
    }

    struct Acc {
        pre_sum: f64,
        pre_n: usize,
        post_sum: f64,
        post_n: usize,
        first_pre_time: i64,
        first_pre_row: usize,
    }
    let n_units = data.n_units();
    let mut acc: Vec<Option<Acc>> = (0..n_units).map(|_| None).collect();
    for (ridx, (row, &uid)) in data.rows().iter().zip(data.unit_of_row()).enumerate() {
        let in_pre = pre.contains(&row.time);
        let in_post = post.contains(&row.time);
        if !in_pre && !in_post {
            continue;
        }
        let entry = acc[uid].get_or_insert(Acc {
            pre_sum: 0.0,
            pre_n: 0,
            post_sum: 0.0,
            post_n: 0,
            first_pre_time: i64::MAX,
            first_pre_row: usize::MAX,
        });
        if in_pre {
            entry.pre_sum += row.outcome;
            entry.pre_n += 1;
            if row.time < entry.first_pre_time {
                entry.first_pre_time = row.time;
                entry.first_pre_row = ridx;
            }
        } else {
            entry.post_sum += row.outcome;
            entry.post_n += 1;
        }
    }

    let mut rows = Vec::new();
    let mut dropped = 0usize;
    for entry in &acc {
        match entry {
            Some(a) if a.pre_n > 0 && a.post_n > 0 => {
                let template = &data.rows()[a.first_pre_row];
                let mut pre_row = template.clone();
                pre_row.time = 0;
                pre_row.outcome = a.pre_sum / a.pre_n as f64;
                let mut post_row = pre_row.clone();
                post_row.time = 1;
                post_row.outcome = a.post_sum / a.post_n as f64;
                rows.push(pre_row);
                rows.push(post_row);
            }
            _ => dropped += 1,
        }
    }
    if rows.is_empty() {
        return Err(Error::NoCompleteUnits);
    }
    let data = PanelDataset::from_validated_rows(
        rows,
        data.covariate_names().to_vec(),
        data.source(),
    )?;
    Ok(TwoPeriodReduction {
        data,
        dropped_units: dropped,
    })
}
