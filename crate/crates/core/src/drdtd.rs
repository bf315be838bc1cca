//! Doubly-robust estimators under conditional parallel trend-in-trends.
//!
//! The target contrast compares one cell's outcome change against three
//! comparison cells, each adjusted by a pairwise generalized propensity
//! score (a two-cell logit of target-vs-comparison membership on the
//! covariates) and an outcome regression of the change on the covariates.
//! Each estimator is consistent when either working model is correct.
//!
//! * `dr_att`: target (S=1, G=1, I=0) on the I=0 subsample.
//! * `dr_asu`: target (S=1, G=0, I=1) on the G=0 subsample.
//! * `dr_td`: target (S=1, G=1) with controls pooled over I, for
//!   comparison against the spillover-robust variants.
//!
//! Inference is a stratified nonparametric bootstrap over units; the
//! reported standard error is the tail-robust normalized interquartile
//! range of the replicate estimates.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::{Observation, PanelDataset};
use crate::regress::{logit_fit, ols_fit, DesignMatrix, FitResult};
use crate::rng::substream;
use crate::tdiff::{Estimand, Estimate};

/// One cell of the S x (G, I) partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Cell {
    pub s: u8,
    pub g: u8,
    pub i: u8,
}

impl Cell {
    pub const fn new(s: u8, g: u8, i: u8) -> Self {
        Cell { s, g, i }
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "S={},G={},I={}", self.s, self.g, self.i)
    }
}

/// Bootstrap settings for the doubly-robust estimators.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapOptions {
    pub b: usize,
    pub seed: u64,
}

/// Tuning knobs shared by the doubly-robust estimators.
#[derive(Debug, Clone)]
pub struct DrOptions {
    /// Covariates entering the propensity models; `None` means all.
    pub gps_covariates: Option<Vec<String>>,
    /// Covariates entering the outcome regressions; `None` means all.
    pub outcome_covariates: Option<Vec<String>>,
    /// Largest share of the total weight one unit may carry before the
    /// estimator reports an overlap failure.
    pub weight_cap: f64,
    /// Fitted pairwise probabilities are winsorized into
    /// [floor, 1 - floor]; the clamp count is surfaced on the model.
    pub prob_floor: f64,
    /// When set, a stratified unit bootstrap provides the SE and CI.
    /// When `None` the estimate carries NaN inference fields.
    pub bootstrap: Option<BootstrapOptions>,
}

impl Default for DrOptions {
    fn default() -> Self {
        DrOptions {
            gps_covariates: None,
            outcome_covariates: None,
            weight_cap: 0.05,
            prob_floor: 0.001,
            bootstrap: None,
        }
    }
}

/// One pairwise target-vs-comparison propensity fit.
#[derive(Debug, Clone)]
pub struct PairwiseGps {
    pub comparison: Cell,
    pub fit: FitResult,
    /// Winsorized fitted probability for every unit of the subsample.
    pub probabilities: Vec<f64>,
    /// How many fitted values hit the winsor bounds.
    pub winsorized: usize,
}

/// Generalized propensity score model: one pairwise logit per comparison
/// cell.
#[derive(Debug, Clone)]
pub struct GpsModel {
    pub target: Cell,
    pub pairs: Vec<PairwiseGps>,
}

/// Linear model of the outcome change within one comparison cell.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub cell: Cell,
    pub fit: FitResult,
    /// Prediction for every unit of the subsample.
    pub predictions: Vec<f64>,
}

/// The weight families entering the doubly-robust contrast. Every family
/// averages to one over the subsample by construction.
#[derive(Debug, Clone)]
pub struct DrWeights {
    pub target: Vec<f64>,
    pub comparisons: Vec<(Cell, Vec<f64>)>,
}

/// One unit of a collapsed two-period sample.
#[derive(Debug, Clone)]
struct UnitDiff {
    dy: f64,
    x: Vec<f64>,
    cell: Cell,
}

/// Collapse a two-period panel to one record per unit observed in both
/// periods; units missing a period are dropped.
fn collapse_two_period(data: &PanelDataset) -> Result<Vec<UnitDiff>> {
    let times = data.time_values();
    if times.len() != 2 {
        return Err(Error::NotTwoPeriod(times.len()));
    }
    let (pre, post) = (times[0], times[1]);
    let n_units = data.n_units();
    let mut pre_y = vec![f64::NAN; n_units];
    let mut post_y = vec![f64::NAN; n_units];
    let mut info: Vec<Option<(Vec<f64>, Cell)>> = vec![None; n_units];
    for (row, &uid) in data.rows().iter().zip(data.unit_of_row()) {
        if row.time == pre {
            pre_y[uid] = row.outcome;
            if info[uid].is_none() {
                info[uid] = Some((row.covariates.clone(), Cell::new(row.s, row.g, row.i)));
            }
        } else if row.time == post {
            post_y[uid] = row.outcome;
            if info[uid].is_none() {
                info[uid] = Some((row.covariates.clone(), Cell::new(row.s, row.g, row.i)));
            }
        }
    }
    let mut units = Vec::with_capacity(n_units);
    for uid in 0..n_units {
        if pre_y[uid].is_nan() || post_y[uid].is_nan() {
            continue;
        }
        let (x, cell) = info[uid].clone().expect("observed unit has info");
        units.push(UnitDiff {
            dy: post_y[uid] - pre_y[uid],
            x,
            cell,
        });
    }
    if units.is_empty() {
        return Err(Error::NoCompleteUnits);
    }
    Ok(units)
}

fn covariate_indices(names: &[String], selected: Option<&[String]>) -> Result<Vec<usize>> {
    match selected {
        None => Ok((0..names.len()).collect()),
        Some(list) => list
            .iter()
            .map(|want| {
                names
                    .iter()
                    .position(|n| n == want)
                    .ok_or_else(|| Error::UnknownColumn(want.clone()))
            })
            .collect(),
    }
}

/// Design matrix of intercept plus selected covariates over a row subset.
fn build_design(
    units: &[UnitDiff],
    rows: &[usize],
    cov_idx: &[usize],
    names: &[String],
) -> DesignMatrix {
    let mut x = DesignMatrix::new(rows.len());
    x.push_intercept();
    for &j in cov_idx {
        x.push(
            names[j].clone(),
            rows.iter().map(|&r| units[r].x[j]).collect(),
        );
    }
    x
}

/// Evaluate a fitted linear predictor at every unit, looking coefficients
/// up by column name (pruned columns simply drop out).
fn linear_predictor(fit: &FitResult, units: &[UnitDiff], names: &[String]) -> Vec<f64> {
    let mut eta = vec![0.0; units.len()];
    for (k, name) in fit.names().iter().enumerate() {
        let beta = fit.coefficients()[k];
        if name == "const" {
            for e in eta.iter_mut() {
                *e += beta;
            }
        } else {
            let j = names.iter().position(|n| n == name).expect("known column");
            for (e, u) in eta.iter_mut().zip(units) {
                *e += beta * u.x[j];
            }
        }
    }
    eta
}

/// The comparison legs of one doubly-robust contrast, with their signs in
/// the three-term decomposition: same-stratum control, other-stratum
/// analogue of the target, other-stratum control.
fn comparison_legs(target: Cell) -> [(Cell, f64); 3] {
    if target.g == 1 {
        [
            (Cell::new(1, 0, target.i), 1.0),
            (Cell::new(0, 1, target.i), 1.0),
            (Cell::new(0, 0, target.i), -1.0),
        ]
    } else {
        [
            (Cell::new(1, 0, 0), 1.0),
            (Cell::new(0, 0, target.i), 1.0),
            (Cell::new(0, 0, 0), -1.0),
        ]
    }
}

struct DrProblem<'a> {
    units: &'a [UnitDiff],
    names: &'a [String],
    target: Cell,
    comparisons: [(Cell, f64); 3],
    /// Treat cells as (S, G) only, pooling the interference indicator.
    pool_interference: bool,
    gps_idx: Vec<usize>,
    out_idx: Vec<usize>,
    weight_cap: f64,
    prob_floor: f64,
}

impl<'a> DrProblem<'a> {
    fn key(&self, cell: Cell) -> Cell {
        if self.pool_interference {
            Cell::new(cell.s, cell.g, 0)
        } else {
            cell
        }
    }

    fn rows_in(&self, cell: Cell) -> Vec<usize> {
        (0..self.units.len())
            .filter(|&r| self.key(self.units[r].cell) == cell)
            .collect()
    }

    fn check_cell_sizes(&self) -> Result<()> {
        let min_gps = self.gps_idx.len() + 2;
        let min_out = self.out_idx.len() + 2;
        let min = min_gps.max(min_out);
        for cell in std::iter::once(self.target).chain(self.comparisons.iter().map(|c| c.0)) {
            let n = self.rows_in(cell).len();
            if n == 0 {
                return Err(Error::EmptyCell(cell.to_string()));
            }
            if n < min {
                return Err(Error::TooFewUnits {
                    cell: cell.to_string(),
                    n,
                    min,
                });
            }
        }
        Ok(())
    }

    /// Fit the pairwise logit of target-vs-`comp` membership and return the
    /// winsorized probability for every unit.
    fn fit_pair(&self, comp: Cell) -> Result<PairwiseGps> {
        let target_rows = self.rows_in(self.target);
        let comp_rows = self.rows_in(comp);
        let mut rows = target_rows.clone();
        rows.extend_from_slice(&comp_rows);
        let x = build_design(self.units, &rows, &self.gps_idx, self.names);
        let y: Vec<f64> = rows
            .iter()
            .map(|&r| {
                if self.key(self.units[r].cell) == self.target {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let fit = logit_fit(&x, &y)?;
        let eta = linear_predictor(&fit, self.units, self.names);
        let lo = self.prob_floor;
        let hi = 1.0 - self.prob_floor;
        let mut winsorized = 0usize;
        let probabilities: Vec<f64> = eta
            .iter()
            .map(|&e| {
                let p = 1.0 / (1.0 + (-e).exp());
                if p < lo || p > hi {
                    winsorized += 1;
                    p.clamp(lo, hi)
                } else {
                    p
                }
            })
            .collect();
        Ok(PairwiseGps {
            comparison: comp,
            fit,
            probabilities,
            winsorized,
        })
    }

    fn fit_outcome(&self, cell: Cell) -> Result<OutcomeModel> {
        let rows = self.rows_in(cell);
        let x = build_design(self.units, &rows, &self.out_idx, self.names);
        let y: Vec<f64> = rows.iter().map(|&r| self.units[r].dy).collect();
        let clusters: Vec<usize> = (0..rows.len()).collect();
        let fit = ols_fit(&x, &y, &clusters)?;
        let predictions = linear_predictor(&fit, self.units, self.names);
        Ok(OutcomeModel {
            cell,
            fit,
            predictions,
        })
    }

    fn weights_for(&self, pair: &PairwiseGps) -> Result<Vec<f64>> {
        let n = self.units.len();
        let mut w = vec![0.0; n];
        let mut total = 0.0;
        for r in self.rows_in(pair.comparison) {
            let p = pair.probabilities[r];
            let odds = p / (1.0 - p);
            w[r] = odds;
            total += odds;
        }
        let mean = total / n as f64;
        for v in w.iter_mut() {
            *v /= mean;
        }
        let max_share = w.iter().cloned().fold(0.0f64, f64::max) / n as f64;
        if max_share > self.weight_cap {
            return Err(Error::ExtremeWeight {
                share: max_share,
                cap: self.weight_cap,
            });
        }
        Ok(w)
    }

    fn target_weights(&self) -> Vec<f64> {
        let n = self.units.len();
        let rows = self.rows_in(self.target);
        let mean = rows.len() as f64 / n as f64;
        let mut w = vec![0.0; n];
        for r in rows {
            w[r] = 1.0 / mean;
        }
        w
    }

    /// The three-term sample analogue of the doubly-robust contrast.
    fn point(&self) -> Result<f64> {
        self.check_cell_sizes()?;
        let n = self.units.len() as f64;
        let w_target = self.target_weights();
        let mut estimate = 0.0;
        for (comp, sign) in self.comparisons {
            let pair = self.fit_pair(comp)?;
            let w_comp = self.weights_for(&pair)?;
            let outcome = self.fit_outcome(comp)?;
            let term: f64 = self
                .units
                .iter()
                .enumerate()
                .map(|(r, u)| (w_target[r] - w_comp[r]) * (u.dy - outcome.predictions[r]))
                .sum::<f64>()
                / n;
            estimate += sign * term;
        }
        Ok(estimate)
    }
}

fn make_problem<'a>(
    units: &'a [UnitDiff],
    names: &'a [String],
    target: Cell,
    pool_interference: bool,
    opts: &DrOptions,
) -> Result<DrProblem<'a>> {
    Ok(DrProblem {
        units,
        names,
        target,
        comparisons: comparison_legs(target),
        pool_interference,
        gps_idx: covariate_indices(names, opts.gps_covariates.as_deref())?,
        out_idx: covariate_indices(names, opts.outcome_covariates.as_deref())?,
        weight_cap: opts.weight_cap,
        prob_floor: opts.prob_floor,
    })
}

/// Stratified unit resample: within every (S, G, I) cell, draw that cell's
/// unit count with replacement.
fn stratified_resample(
    units: &[UnitDiff],
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Vec<UnitDiff> {
    use rand::Rng;
    let mut by_cell: Vec<(Cell, Vec<usize>)> = Vec::new();
    for (idx, u) in units.iter().enumerate() {
        match by_cell.iter_mut().find(|(c, _)| *c == u.cell) {
            Some((_, rows)) => rows.push(idx),
            None => by_cell.push((u.cell, vec![idx])),
        }
    }
    let mut out = Vec::with_capacity(units.len());
    for (_, rows) in &by_cell {
        for _ in 0..rows.len() {
            let pick = rows[rng.random_range(0..rows.len())];
            out.push(units[pick].clone());
        }
    }
    out
}

fn dr_estimate(
    data: &PanelDataset,
    target: Cell,
    pool_interference: bool,
    estimand: Estimand,
    subsample: impl Fn(u8, u8, u8) -> bool,
    opts: &DrOptions,
) -> Result<Estimate> {
    let sub = data.subset(subsample)?;
    let units = collapse_two_period(&sub)?;
    let names = sub.covariate_names().to_vec();
    let problem = make_problem(&units, &names, target, pool_interference, opts)?;
    let point = problem.point()?;

    let (se, n_units) = match &opts.bootstrap {
        None => (f64::NAN, units.len()),
        Some(bs) => {
            if bs.b < 50 {
                return Err(Error::InvalidConfig(
                    "bootstrap needs at least 50 replicates".to_string(),
                ));
            }
            let replicates: Vec<Result<f64>> = (0..bs.b)
                .into_par_iter()
                .map(|rep| {
                    let mut rng = substream(bs.seed, "bootstrap", rep as u64);
                    let resampled = stratified_resample(&units, &mut rng);
                    let prob =
                        make_problem(&resampled, &names, target, pool_interference, opts)?;
                    prob.point()
                })
                .collect();
            let ok: Vec<f64> = replicates.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            let failed = bs.b - ok.len();
            if failed * 10 > bs.b {
                return Err(Error::BootstrapFailures {
                    failed,
                    total: bs.b,
                });
            }
            (robust_se(&ok), units.len())
        }
    };
    Ok(Estimate::new(estimand, point, se, sub.n_obs(), n_units))
}

fn sd(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if values.len() < 2 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() as f64 - 1.0) * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Interquartile range of the replicates scaled to the normal sd
/// (IQR / 1.349). The replicate distribution inherits heavy tails from the
/// winsorized odds weights; the plain standard deviation over-covers.
fn robust_se(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = quantile(&sorted, 0.75) - quantile(&sorted, 0.25);
    iqr / 1.348_979_500_392_164
}

/// Doubly-robust ATT: target cell (S=1, G=1, I=0) against the three I=0
/// comparison cells.
pub fn dr_att(data: &PanelDataset, opts: &DrOptions) -> Result<Estimate> {
    dr_estimate(
        data,
        Cell::new(1, 1, 0),
        false,
        Estimand::DrDelta,
        |_, _, i| i == 0,
        opts,
    )
}

/// Doubly-robust spillover effect: target cell (S=1, G=0, I=1) against the
/// three G=0 comparison cells.
pub fn dr_asu(data: &PanelDataset, opts: &DrOptions) -> Result<Estimate> {
    dr_estimate(
        data,
        Cell::new(1, 0, 1),
        false,
        Estimand::DrPhi,
        |_, g, _| g == 0,
        opts,
    )
}

/// Doubly-robust TD contrast with controls pooled over the interference
/// indicator. Biased by the average spillover when interference is real.
pub fn dr_td(data: &PanelDataset, opts: &DrOptions) -> Result<Estimate> {
    dr_estimate(
        data,
        Cell::new(1, 1, 0),
        true,
        Estimand::DrDelta,
        |_, _, _| true,
        opts,
    )
}

/// Pairwise generalized propensity scores of `target` against every other
/// cell present in the two-period subsample.
pub fn fit_gps(sub: &PanelDataset, target: Cell, opts: &DrOptions) -> Result<GpsModel> {
    let units = collapse_two_period(sub)?;
    let names = sub.covariate_names().to_vec();
    let gps_idx = covariate_indices(&names, opts.gps_covariates.as_deref())?;
    let mut cells: Vec<Cell> = Vec::new();
    for u in &units {
        if u.cell != target && !cells.contains(&u.cell) {
            cells.push(u.cell);
        }
    }
    if !units.iter().any(|u| u.cell == target) {
        return Err(Error::EmptyCell(target.to_string()));
    }
    cells.sort_by_key(|c| std::cmp::Reverse((c.s, c.g, c.i)));
    let problem = DrProblem {
        units: &units,
        names: &names,
        target,
        comparisons: comparison_legs(target),
        pool_interference: false,
        gps_idx,
        out_idx: vec![],
        weight_cap: opts.weight_cap,
        prob_floor: opts.prob_floor,
    };
    let min = problem.gps_idx.len() + 2;
    let target_n = problem.rows_in(target).len();
    if target_n < min {
        return Err(Error::TooFewUnits {
            cell: target.to_string(),
            n: target_n,
            min,
        });
    }
    let mut pairs = Vec::new();
    for cell in cells {
        let n = problem.rows_in(cell).len();
        if n < min {
            return Err(Error::TooFewUnits {
                cell: cell.to_string(),
                n,
                min,
            });
        }
        pairs.push(problem.fit_pair(cell)?);
    }
    Ok(GpsModel { target, pairs })
}

/// Outcome regression of the two-period change on the covariates within
/// one cell, with predictions for every unit of the subsample.
pub fn fit_outcome_reg(sub: &PanelDataset, cell: Cell, opts: &DrOptions) -> Result<OutcomeModel> {
    let units = collapse_two_period(sub)?;
    let names = sub.covariate_names().to_vec();
    let out_idx = covariate_indices(&names, opts.outcome_covariates.as_deref())?;
    let problem = DrProblem {
        units: &units,
        names: &names,
        target: cell,
        comparisons: comparison_legs(cell),
        pool_interference: false,
        gps_idx: vec![],
        out_idx,
        weight_cap: opts.weight_cap,
        prob_floor: opts.prob_floor,
    };
    let rows = problem.rows_in(cell);
    if rows.is_empty() {
        return Err(Error::EmptyCell(cell.to_string()));
    }
    let min = problem.out_idx.len() + 2;
    if rows.len() < min {
        return Err(Error::TooFewUnits {
            cell: cell.to_string(),
            n: rows.len(),
            min,
        });
    }
    problem.fit_outcome(cell)
}

/// The self-normalized weight families implied by a fitted GPS model.
pub fn dr_weights(sub: &PanelDataset, gps: &GpsModel) -> Result<DrWeights> {
    let units = collapse_two_period(sub)?;
    let names = sub.covariate_names().to_vec();
    let problem = DrProblem {
        units: &units,
        names: &names,
        target: gps.target,
        comparisons: comparison_legs(gps.target),
        pool_interference: false,
        gps_idx: vec![],
        out_idx: vec![],
        weight_cap: f64::INFINITY,
        prob_floor: 0.0,
    };
    let target = problem.target_weights();
    let mut comparisons = Vec::new();
    for pair in &gps.pairs {
        comparisons.push((pair.comparison, problem.weights_for(pair)?));
    }
    Ok(DrWeights {
        target,
        comparisons,
    })
}

/// Summary of a nonparametric bootstrap run.
#[derive(Debug, Clone, Copy)]
pub struct BootstrapSummary {
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub replicates: usize,
    pub failures: usize,
}

/// Stratified nonparametric bootstrap of an arbitrary scalar estimator.
///
/// Units are resampled with replacement within their (S, G, I) cell;
/// resampled copies get fresh unit and cluster ids. Replicates run
/// concurrently on substreams of `(seed, replicate index)` and reduce in
/// index order, so results do not depend on the thread count.
pub fn bootstrap_ci<F>(
    data: &PanelDataset,
    point: f64,
    b: usize,
    seed: u64,
    estimator: F,
) -> Result<BootstrapSummary>
where
    F: Fn(&PanelDataset) -> Result<f64> + Sync,
{
    use rand::Rng;
    if b < 50 {
        return Err(Error::InvalidConfig(
            "bootstrap needs at least 50 replicates".to_string(),
        ));
    }
    // Group row indices by unit, units by cell.
    let n_units = data.n_units();
    let mut rows_of_unit: Vec<Vec<usize>> = vec![Vec::new(); n_units];
    for (ridx, &uid) in data.unit_of_row().iter().enumerate() {
        rows_of_unit[uid].push(ridx);
    }
    let mut by_cell: Vec<(Cell, Vec<usize>)> = Vec::new();
    for (uid, rows) in rows_of_unit.iter().enumerate() {
        let r = &data.rows()[rows[0]];
        let cell = Cell::new(r.s, r.g, r.i);
        match by_cell.iter_mut().find(|(c, _)| *c == cell) {
            Some((_, list)) => list.push(uid),
            None => by_cell.push((cell, vec![uid])),
        }
    }

    let replicates: Vec<Result<f64>> = (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = substream(seed, "bootstrap", rep as u64);
            let mut rows: Vec<Observation> = Vec::with_capacity(data.n_obs());
            for (_, uids) in &by_cell {
                for copy in 0..uids.len() {
                    let pick = uids[rng.random_range(0..uids.len())];
                    for &ridx in &rows_of_unit[pick] {
                        let mut row = data.rows()[ridx].clone();
                        row.unit = format!("{}#{copy}", row.unit);
                        row.cluster = row.unit.clone();
                        rows.push(row);
                    }
                }
            }
            let resampled = PanelDataset::from_rows(
                rows,
                data.covariate_names().to_vec(),
                data.source(),
            )?;
            estimator(&resampled)
        })
        .collect();

    let ok: Vec<f64> = replicates.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let failures = b - ok.len();
    if failures * 10 > b {
        return Err(Error::BootstrapFailures { failed: failures, total: b });
    }
    let se = sd(&ok);
    Ok(BootstrapSummary {
        se,
        ci_low: point - 1.96 * se,
        ci_high: point + 1.96 * se,
        replicates: ok.len(),
        failures,
    })
}
