//! Triple-difference (TD) and double-triple-difference (DTD) estimators.
//!
//! Two forms of each: saturated two-period regressions, and three-way
//! fixed-effects panel specifications that absorb unit effects and interact
//! year dummies with the stratum and group indicators. A signed cell-mean
//! evaluator provides an independent oracle for the identification
//! contrasts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::regress::{ols_fit, within_demean_matrix, within_demean_values, DesignMatrix};

/// Which estimand an `Estimate` carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Estimand {
    #[serde(rename = "ATT_delta")]
    AttDelta,
    #[serde(rename = "Spillover_psi")]
    SpilloverPsi,
    #[serde(rename = "DR_delta")]
    DrDelta,
    #[serde(rename = "DR_phi")]
    DrPhi,
}

impl std::fmt::Display for Estimand {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Estimand::AttDelta => "ATT_delta",
            Estimand::SpilloverPsi => "Spillover_psi",
            Estimand::DrDelta => "DR_delta",
            Estimand::DrPhi => "DR_phi",
        };
        f.write_str(s)
    }
}

/// A named point estimate with its 95% normal interval.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Estimate {
    pub estimand: Estimand,
    pub point: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_obs: usize,
    pub n_units: usize,
}

impl Estimate {
    pub fn new(estimand: Estimand, point: f64, se: f64, n_obs: usize, n_units: usize) -> Self {
        Estimate {
            estimand,
            point,
            se,
            ci_low: point - 1.96 * se,
            ci_high: point + 1.96 * se,
            n_obs,
            n_units,
        }
    }
}

/// The pair of estimates a TD/DTD fit produces.
#[derive(Debug, Clone, Copy)]
pub struct TdEstimates {
    pub delta: Estimate,
    pub psi: Estimate,
}

/// One signed cell-mean term of an identification contrast.
#[derive(Debug, Clone, Copy)]
pub struct CellTerm {
    pub s: u8,
    pub g: u8,
    /// `None` pools over the interference indicator.
    pub i: Option<u8>,
    pub post: bool,
    pub sign: f64,
}

impl CellTerm {
    fn label(&self) -> String {
        let i = match self.i {
            Some(v) => v.to_string(),
            None => "*".to_string(),
        };
        format!(
            "S={},G={},I={} at t={}",
            self.s,
            self.g,
            i,
            if self.post { 1 } else { 0 }
        )
    }
}

/// A signed difference-of-differences-of-differences over cell means.
#[derive(Debug, Clone)]
pub struct ContrastSpec {
    terms: Vec<CellTerm>,
}

impl ContrastSpec {
    /// Signs must balance: as many +1 as -1 terms.
    pub fn new(terms: Vec<CellTerm>) -> Result<Self> {
        let plus = terms.iter().filter(|t| t.sign > 0.0).count();
        let minus = terms.iter().filter(|t| t.sign < 0.0).count();
        let sum: f64 = terms.iter().map(|t| t.sign).sum();
        if plus != minus || sum.abs() > 1e-12 {
            return Err(Error::InvalidConfig(
                "contrast signs must balance (equal +1 and -1 counts)".to_string(),
            ));
        }
        Ok(ContrastSpec { terms })
    }

    pub fn terms(&self) -> &[CellTerm] {
        &self.terms
    }

    fn did(s: u8, g: u8, i: Option<u8>, sign: f64) -> [CellTerm; 2] {
        [
            CellTerm {
                s,
                g,
                i,
                post: true,
                sign,
            },
            CellTerm {
                s,
                g,
                i,
                post: false,
                sign: -sign,
            },
        ]
    }

    /// TD delta: the S x G x T contrast with controls pooled over I.
    pub fn td_delta() -> Self {
        let mut terms = Vec::new();
        terms.extend(Self::did(1, 1, None, 1.0));
        terms.extend(Self::did(1, 0, None, -1.0));
        terms.extend(Self::did(0, 1, None, -1.0));
        terms.extend(Self::did(0, 0, None, 1.0));
        ContrastSpec { terms }
    }

    /// TD psi: the S x T difference between untreated groups across strata.
    pub fn td_psi() -> Self {
        let mut terms = Vec::new();
        terms.extend(Self::did(1, 0, None, 1.0));
        terms.extend(Self::did(0, 0, None, -1.0));
        ContrastSpec { terms }
    }

    /// DTD delta: target vs pure control, differenced across strata.
    pub fn dtd_delta() -> Self {
        let mut terms = Vec::new();
        terms.extend(Self::did(1, 1, Some(0), 1.0));
        terms.extend(Self::did(1, 0, Some(0), -1.0));
        terms.extend(Self::did(0, 1, Some(0), -1.0));
        terms.extend(Self::did(0, 0, Some(0), 1.0));
        ContrastSpec { terms }
    }

    /// DTD psi: interference vs pure control, differenced across strata.
    pub fn dtd_psi() -> Self {
        let mut terms = Vec::new();
        terms.extend(Self::did(1, 0, Some(1), 1.0));
        terms.extend(Self::did(1, 0, Some(0), -1.0));
        terms.extend(Self::did(0, 0, Some(1), -1.0));
        terms.extend(Self::did(0, 0, Some(0), 1.0));
        ContrastSpec { terms }
    }
}

/// Brute-force evaluation of a signed cell-mean contrast on two-period data.
///
/// Independent of the regression path; used to verify the fitted
/// coefficients.
pub fn cell_mean_oracle(data: &PanelDataset, spec: &ContrastSpec) -> Result<f64> {
    let (pre, post) = two_period_times(data)?;
    let mut total = 0.0;
    for term in spec.terms() {
        let want_time = if term.post { post } else { pre };
        let mut sum = 0.0;
        let mut count = 0usize;
        for row in data.rows() {
            if row.time != want_time || row.s != term.s || row.g != term.g {
                continue;
            }
            if let Some(i) = term.i {
                if row.i != i {
                    continue;
                }
            }
            sum += row.outcome;
            count += 1;
        }
        if count == 0 {
            return Err(Error::EmptyCell(term.label()));
        }
        total += term.sign * sum / count as f64;
    }
    Ok(total)
}

fn two_period_times(data: &PanelDataset) -> Result<(i64, i64)> {
    let times = data.time_values();
    if times.len() != 2 {
        return Err(Error::NotTwoPeriod(times.len()));
    }
    Ok((times[0], times[1]))
}

fn require_cells(data: &PanelDataset, cells: &[(u8, u8, Option<u8>)]) -> Result<()> {
    let (pre, post) = two_period_times(data)?;
    for &(s, g, i) in cells {
        for t in [pre, post] {
            let found = data.rows().iter().any(|r| {
                r.time == t && r.s == s && r.g == g && i.is_none_or(|want| r.i == want)
            });
            if !found {
                let term = CellTerm {
                    s,
                    g,
                    i,
                    post: t == post,
                    sign: 1.0,
                };
                return Err(Error::EmptyCell(term.label()));
            }
        }
    }
    Ok(())
}

fn indicator_columns(data: &PanelDataset, post_time: i64) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = data.n_obs();
    let mut s = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    let mut i = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    for row in data.rows() {
        s.push(f64::from(row.s));
        g.push(f64::from(row.g));
        i.push(f64::from(row.i));
        t.push(if row.time == post_time { 1.0 } else { 0.0 });
    }
    (s, g, i, t)
}

fn product(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

fn product3(a: &[f64], b: &[f64], c: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b.iter().zip(c))
        .map(|(x, (y, z))| x * y * z)
        .collect()
}

/// Saturated two-period TD regression.
///
/// Returns the S x G x T coefficient (delta) and the S x T coefficient
/// (psi) with unit-clustered CR0 standard errors. The interference
/// indicator is ignored: controls are pooled.
pub fn td_two_period(data: &PanelDataset) -> Result<TdEstimates> {
    let (_, post) = two_period_times(data)?;
    require_cells(data, &[(1, 1, None), (1, 0, None), (0, 1, None), (0, 0, None)])?;
    let (s, g, _, t) = indicator_columns(data, post);
    let mut x = DesignMatrix::new(data.n_obs());
    x.push_intercept();
    x.push("s", s.clone());
    x.push("g", g.clone());
    x.push("t", t.clone());
    x.push("s_g", product(&s, &g));
    x.push("g_t", product(&g, &t));
    x.push("s_t", product(&s, &t));
    x.push("s_g_t", product3(&s, &g, &t));
    let y: Vec<f64> = data.rows().iter().map(|r| r.outcome).collect();
    let fit = ols_fit(&x, &y, &data.cluster_of_row())?;
    let delta = Estimate::new(
        Estimand::AttDelta,
        fit.coef("s_g_t")?,
        fit.se("s_g_t")?,
        data.n_obs(),
        data.n_units(),
    );
    let psi = Estimate::new(
        Estimand::SpilloverPsi,
        fit.coef("s_t")?,
        fit.se("s_t")?,
        data.n_obs(),
        data.n_units(),
    );
    Ok(TdEstimates { delta, psi })
}

/// Saturated two-period DTD regression.
///
/// All six S x (G, I) cells must be populated in both periods. Delta is
/// the S x G x T coefficient, psi the S x I x T coefficient.
pub fn dtd_two_period(data: &PanelDataset) -> Result<TdEstimates> {
    let (_, post) = two_period_times(data)?;
    require_cells(
        data,
        &[
            (1, 1, Some(0)),
            (1, 0, Some(1)),
            (1, 0, Some(0)),
            (0, 1, Some(0)),
            (0, 0, Some(1)),
            (0, 0, Some(0)),
        ],
    )?;
    let (s, g, i, t) = indicator_columns(data, post);
    let mut x = DesignMatrix::new(data.n_obs());
    x.push_intercept();
    x.push("s", s.clone());
    x.push("t", t.clone());
    x.push("g", g.clone());
    x.push("i", i.clone());
    x.push("s_g", product(&s, &g));
    x.push("s_t", product(&s, &t));
    x.push("g_t", product(&g, &t));
    x.push("s_i", product(&s, &i));
    x.push("i_t", product(&i, &t));
    x.push("s_g_t", product3(&s, &g, &t));
    x.push("s_i_t", product3(&s, &i, &t));
    let y: Vec<f64> = data.rows().iter().map(|r| r.outcome).collect();
    let fit = ols_fit(&x, &y, &data.cluster_of_row())?;
    let delta = Estimate::new(
        Estimand::AttDelta,
        fit.coef("s_g_t")?,
        fit.se("s_g_t")?,
        data.n_obs(),
        data.n_units(),
    );
    let psi = Estimate::new(
        Estimand::SpilloverPsi,
        fit.coef("s_i_t")?,
        fit.se("s_i_t")?,
        data.n_obs(),
        data.n_units(),
    );
    Ok(TdEstimates { delta, psi })
}

/// Options for the three-way fixed-effects specifications.
#[derive(Debug, Clone, Copy, Default)]
pub struct ThreeWayOptions {
    /// Omitted year for the year-interaction dummies; defaults to the
    /// earliest period. Changes reported year coefficients, not delta/psi.
    pub base_period: Option<i64>,
    /// Add year x I interactions to the DTD specification. Off by default;
    /// sensitivity option only, not part of the default model.
    pub interference_time_trends: bool,
}

fn threeway_design(
    data: &PanelDataset,
    post_from: i64,
    options: &ThreeWayOptions,
    with_interference: bool,
) -> Result<(DesignMatrix, Vec<f64>)> {
    let times = data.time_values();
    if times.len() < 2 {
        return Err(Error::NotTwoPeriod(times.len()));
    }
    let (min_t, max_t) = (times[0], times[times.len() - 1]);
    if post_from <= min_t || post_from > max_t {
        return Err(Error::InvalidConfig(format!(
            "post_from {post_from} must leave at least one pre and one post period in [{min_t}, {max_t}]"
        )));
    }
    let base = options.base_period.unwrap_or(min_t);
    if !times.contains(&base) {
        return Err(Error::InvalidConfig(format!(
            "base period {base} is not observed"
        )));
    }

    let n = data.n_obs();
    let mut x = DesignMatrix::new(n);
    let rows = data.rows();
    for &t in times.iter().filter(|&&t| t != base) {
        x.push(
            format!("y{t}"),
            rows.iter()
                .map(|r| if r.time == t { 1.0 } else { 0.0 })
                .collect(),
        );
    }
    for &t in times.iter().filter(|&&t| t != base) {
        x.push(
            format!("s_y{t}"),
            rows.iter()
                .map(|r| if r.time == t { f64::from(r.s) } else { 0.0 })
                .collect(),
        );
    }
    for &t in times.iter().filter(|&&t| t != base) {
        x.push(
            format!("g_y{t}"),
            rows.iter()
                .map(|r| if r.time == t { f64::from(r.g) } else { 0.0 })
                .collect(),
        );
    }
    if with_interference && options.interference_time_trends {
        for &t in times.iter().filter(|&&t| t != base) {
            x.push(
                format!("i_y{t}"),
                rows.iter()
                    .map(|r| if r.time == t { f64::from(r.i) } else { 0.0 })
                    .collect(),
            );
        }
    }
    let post = |t: i64| t >= post_from;
    x.push(
        "s_g_t",
        rows.iter()
            .map(|r| {
                if post(r.time) {
                    f64::from(r.s) * f64::from(r.g)
                } else {
                    0.0
                }
            })
            .collect(),
    );
    if with_interference {
        x.push(
            "s_i_t",
            rows.iter()
                .map(|r| {
                    if post(r.time) {
                        f64::from(r.s) * f64::from(r.i)
                    } else {
                        0.0
                    }
                })
                .collect(),
        );
    }

    let units = data.unit_of_row();
    let demeaned = within_demean_matrix(&x, units);
    let y: Vec<f64> = rows.iter().map(|r| r.outcome).collect();
    let y_dm = within_demean_values(&y, units);
    Ok((demeaned, y_dm))
}

/// Three-way fixed-effects TD: unit effects absorbed, year dummies plus
/// year x S and year x G interactions, and the S x G x T term.
pub fn td_threeway_fe(data: &PanelDataset, post_from: i64) -> Result<Estimate> {
    td_threeway_fe_with(data, post_from, &ThreeWayOptions::default())
}

pub fn td_threeway_fe_with(
    data: &PanelDataset,
    post_from: i64,
    options: &ThreeWayOptions,
) -> Result<Estimate> {
    let (x, y) = threeway_design(data, post_from, options, false)?;
    let fit = ols_fit(&x, &y, &data.cluster_of_row())?;
    Ok(Estimate::new(
        Estimand::AttDelta,
        fit.coef("s_g_t")?,
        fit.se("s_g_t")?,
        data.n_obs(),
        data.n_units(),
    ))
}

/// Three-way fixed-effects DTD: the TD specification plus the S x I x T
/// term. Deliberately omits year x I interactions in its default form.
pub fn dtd_threeway_fe(data: &PanelDataset, post_from: i64) -> Result<TdEstimates> {
    dtd_threeway_fe_with(data, post_from, &ThreeWayOptions::default())
}

pub fn dtd_threeway_fe_with(
    data: &PanelDataset,
    post_from: i64,
    options: &ThreeWayOptions,
) -> Result<TdEstimates> {
    let (x, y) = threeway_design(data, post_from, options, true)?;
    let fit = ols_fit(&x, &y, &data.cluster_of_row())?;
    let delta = Estimate::new(
        Estimand::AttDelta,
        fit.coef("s_g_t")?,
        fit.se("s_g_t")?,
        data.n_obs(),
        data.n_units(),
    );
    let psi = Estimate::new(
        Estimand::SpilloverPsi,
        fit.coef("s_i_t")?,
        fit.se("s_i_t")?,
        data.n_obs(),
        data.n_units(),
    );
    Ok(TdEstimates { delta, psi })
}
