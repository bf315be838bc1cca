//! Pre-policy diagnostics: event-study lead coefficients and joint Wald
//! tests for parallel trends and parallel trend-in-trends.
//!
//! `did_leads` interacts pre-policy year dummies with the stratum
//! indicator; `tt_leads` adds the group (or interference) dimension and
//! tests the top-order interaction family. Both absorb unit effects and
//! cluster by the dataset's cluster column.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::panel::PanelDataset;
use crate::regress::{
    joint_wald, normal_p_value, ols_fit, within_demean_matrix, within_demean_values,
    DesignMatrix, TestResult,
};

/// Second interaction dimension of the trend-in-trends test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeadGroup {
    /// Target-group indicator (tests the assumption behind the ATT).
    G,
    /// Interference indicator on the G=0 subsample (tests the assumption
    /// behind the spillover effect).
    I,
}

impl LeadGroup {
    fn label(&self) -> &'static str {
        match self {
            LeadGroup::G => "g",
            LeadGroup::I => "i",
        }
    }
}

/// One lead coefficient.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct LeadCoef {
    pub period: i64,
    pub coef: f64,
    pub se: f64,
    pub p_value: f64,
}

/// One interaction family (e.g. the S x lead coefficients).
#[derive(Debug, Clone, Serialize)]
pub struct LeadFamily {
    pub label: String,
    pub leads: Vec<LeadCoef>,
}

/// Lead coefficients for every requested family plus the joint test on
/// the top-order family.
#[derive(Debug, Clone, Serialize)]
pub struct LeadsResult {
    pub base_period: i64,
    pub families: Vec<LeadFamily>,
    pub joint: TestResult,
}

/// Joint Wald on one coefficient family, degrading gracefully on
/// degenerate (noise-free) fits: nonzero leads with a singular covariance
/// are a certain rejection, reported as an infinite statistic with p = 0.
fn family_joint(fit: &crate::regress::FitResult, names: &[String]) -> Result<TestResult> {
    let name_refs: Vec<&str> = names.iter().map(String::as_str).collect();
    match joint_wald(fit, &name_refs) {
        Ok(t) => Ok(t),
        Err(Error::SingularVcov(_)) => Ok(TestResult {
            statistic: f64::INFINITY,
            df: names.len(),
            p_value: 0.0,
        }),
        Err(e) => Err(e),
    }
}

fn check_base(data: &PanelDataset, base: i64) -> Result<Vec<i64>> {
    let times = data.time_values().to_vec();
    if times.len() < 2 {
        return Err(Error::NotTwoPeriod(times.len()));
    }
    if !times.contains(&base) {
        return Err(Error::InvalidConfig(format!(
            "base period {base} is not observed"
        )));
    }
    Ok(times)
}

fn lead_column(data: &PanelDataset, t: i64, weight: impl Fn(&crate::panel::Observation) -> f64) -> Vec<f64> {
    data.rows()
        .iter()
        .map(|r| if r.time == t { weight(r) } else { 0.0 })
        .collect()
}

fn collect_family(
    fit: &crate::regress::FitResult,
    prefix: &str,
    leads: &[i64],
) -> Result<LeadFamily> {
    let mut out = Vec::new();
    for &t in leads {
        let name = format!("{prefix}{t}");
        let coef = fit.coef(&name)?;
        let se = fit.se(&name)?;
        out.push(LeadCoef {
            period: t,
            coef,
            se,
            p_value: normal_p_value(coef, se),
        });
    }
    Ok(LeadFamily {
        label: prefix.trim_end_matches("_y").to_string(),
        leads: out,
    })
}

/// Event-study test of parallel trends: unit and year effects plus
/// S x lead interactions over the pre-policy window; joint Wald on the
/// S x lead family.
pub fn did_leads(data: &PanelDataset, base: i64) -> Result<LeadsResult> {
    let times = check_base(data, base)?;
    let leads: Vec<i64> = times.iter().copied().filter(|&t| t != base).collect();

    let mut x = DesignMatrix::new(data.n_obs());
    for &t in &leads {
        x.push(format!("y{t}"), lead_column(data, t, |_| 1.0));
    }
    for &t in &leads {
        x.push(format!("s_y{t}"), lead_column(data, t, |r| f64::from(r.s)));
    }
    let units = data.unit_of_row();
    let x_dm = within_demean_matrix(&x, units);
    let y: Vec<f64> = data.rows().iter().map(|r| r.outcome).collect();
    let y_dm = within_demean_values(&y, units);
    let fit = ols_fit(&x_dm, &y_dm, &data.cluster_of_row())?;

    let family = collect_family(&fit, "s_y", &leads)?;
    let names: Vec<String> = leads.iter().map(|t| format!("s_y{t}")).collect();
    let joint = family_joint(&fit, &names)?;
    Ok(LeadsResult {
        base_period: base,
        families: vec![family],
        joint,
    })
}

/// Event-study test of parallel trend-in-trends: S x lead, group x lead,
/// and S x group x lead interactions; joint Wald on the triple family.
///
/// With `LeadGroup::I` the caller must pass the G=0 subsample; the
/// analogous ATT-side test runs on the I=0 subsample with `LeadGroup::G`.
pub fn tt_leads(data: &PanelDataset, base: i64, group: LeadGroup) -> Result<LeadsResult> {
    if group == LeadGroup::I && data.rows().iter().any(|r| r.g == 1) {
        return Err(Error::InvalidConfig(
            "interference-dimension test expects the g=0 subsample".to_string(),
        ));
    }
    let times = check_base(data, base)?;
    let leads: Vec<i64> = times.iter().copied().filter(|&t| t != base).collect();
    let gval = |r: &crate::panel::Observation| match group {
        LeadGroup::G => f64::from(r.g),
        LeadGroup::I => f64::from(r.i),
    };

    let mut x = DesignMatrix::new(data.n_obs());
    for &t in &leads {
        x.push(format!("y{t}"), lead_column(data, t, |_| 1.0));
    }
    for &t in &leads {
        x.push(format!("s_y{t}"), lead_column(data, t, |r| f64::from(r.s)));
    }
    let glabel = group.label();
    for &t in &leads {
        x.push(format!("{glabel}_y{t}"), lead_column(data, t, gval));
    }
    for &t in &leads {
        x.push(
            format!("s_{glabel}_y{t}"),
            lead_column(data, t, |r| f64::from(r.s) * gval(r)),
        );
    }
    let units = data.unit_of_row();
    let x_dm = within_demean_matrix(&x, units);
    let y: Vec<f64> = data.rows().iter().map(|r| r.outcome).collect();
    let y_dm = within_demean_values(&y, units);
    let fit = ols_fit(&x_dm, &y_dm, &data.cluster_of_row())?;

    let families = vec![
        collect_family(&fit, "s_y", &leads)?,
        collect_family(&fit, &format!("{glabel}_y"), &leads)?,
        collect_family(&fit, &format!("s_{glabel}_y"), &leads)?,
    ];
    let names: Vec<String> = leads.iter().map(|t| format!("s_{glabel}_y{t}")).collect();
    let joint = family_joint(&fit, &names)?;
    Ok(LeadsResult {
        base_period: base,
        families,
        joint,
    })
}

/// Serialize leads plus the joint-test row to CSV. The joint row stores
/// the degrees of freedom in the period column and leaves the se blank.
pub fn leads_to_csv(result: &LeadsResult) -> String {
    let mut out = String::from("family,period,coef,se,p\n");
    for family in &result.families {
        for lead in &family.leads {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                family.label, lead.period, lead.coef, lead.se, lead.p_value
            ));
        }
    }
    out.push_str(&format!(
        "joint,{},{},,{}\n",
        result.joint.df, result.joint.statistic, result.joint.p_value
    ));
    out
}
