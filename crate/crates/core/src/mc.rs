//! Monte Carlo study driver: generate, estimate, and score across a grid
//! of scenarios and models.
//!
//! Every iteration runs on a pre-derived substream of the master seed, and
//! aggregation reduces in iteration order, so a study reproduces the same
//! report at any parallelism level.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dgp::{gen_sim1, gen_sim2, GeneratedPanel, Sim1Config, Sim1Scenario, Sim2Config, Sim2Scenario};
use crate::drdtd::{dr_asu, dr_att, dr_td, BootstrapOptions, DrOptions};
use crate::error::{Error, Result};
use crate::panel::{to_two_period, PanelDataset};
use crate::rng::stream_seed;
use crate::tdiff::{dtd_threeway_fe, dtd_two_period, td_threeway_fe, td_two_period, Estimand};

/// Estimators the harness can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "TD_3FE")]
    Td3fe,
    #[serde(rename = "DTD_3FE")]
    Dtd3fe,
    #[serde(rename = "TD_2P")]
    Td2p,
    #[serde(rename = "DTD_2P")]
    Dtd2p,
    #[serde(rename = "DR_TD")]
    DrTd,
    #[serde(rename = "DR_DTD")]
    DrDtd,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ModelKind::Td3fe => "TD_3FE",
            ModelKind::Dtd3fe => "DTD_3FE",
            ModelKind::Td2p => "TD_2P",
            ModelKind::Dtd2p => "DTD_2P",
            ModelKind::DrTd => "DR_TD",
            ModelKind::DrDtd => "DR_DTD",
        };
        f.write_str(s)
    }
}

/// One scenario of the grid: a design plus its spillover regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum DesignSpec {
    #[serde(rename = "sim1")]
    Sim1 {
        scenario: Sim1Scenario,
        config: Sim1Config,
    },
    #[serde(rename = "sim2")]
    Sim2 {
        scenario: Sim2Scenario,
        config: Sim2Config,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    /// Scenario label used in report rows.
    pub id: String,
    #[serde(flatten)]
    pub design: DesignSpec,
}

fn default_bootstrap_b() -> usize {
    400
}

fn default_weight_cap() -> f64 {
    0.05
}

/// Full study configuration; serializes to/from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub grid: Vec<GridPoint>,
    pub models: Vec<ModelKind>,
    pub k: usize,
    pub master_seed: u64,
    /// Worker threads; 0 means all cores.
    #[serde(default)]
    pub threads: usize,
    /// Bootstrap replicates for the doubly-robust models; 0 skips
    /// bootstrap inference (their coverage is then reported as 0).
    #[serde(default = "default_bootstrap_b")]
    pub bootstrap_b: usize,
    /// Extreme-weight guard passed to the doubly-robust estimators. The
    /// estimator default (0.05) can bind on small subsamples with
    /// heavy-tailed covariates even under genuine overlap; studies on such
    /// designs should raise it explicitly.
    #[serde(default = "default_weight_cap")]
    pub weight_cap: f64,
    /// Keep per-iteration estimates in the report.
    #[serde(default)]
    pub dump_raw: bool,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::InvalidConfig("grid must be non-empty".to_string()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidConfig(
                "models must be non-empty".to_string(),
            ));
        }
        if self.k < 2 {
            return Err(Error::InvalidConfig("k must be at least 2".to_string()));
        }
        Ok(())
    }
}

/// Scored performance of one (scenario, model, estimand) cell.
#[derive(Debug, Clone, Serialize)]
pub struct MetricRow {
    pub scenario: String,
    pub model: ModelKind,
    pub estimand: Estimand,
    pub bias: f64,
    pub mse: f64,
    pub coverage: f64,
    pub k_effective: usize,
}

/// One stored iteration estimate (raw dump).
#[derive(Debug, Clone, Serialize)]
pub struct RawRecord {
    pub scenario: String,
    pub model: ModelKind,
    pub estimand: Estimand,
    pub iteration: usize,
    pub point: f64,
    pub se: f64,
    pub truth: f64,
}

/// Study output: one row per (scenario, model, estimand).
#[derive(Debug, Clone, Serialize)]
pub struct StudyReport {
    pub rows: Vec<MetricRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub raw: Option<Vec<RawRecord>>,
    pub config: StudyConfig,
    /// Wall time is observational, never part of the serialized report.
    #[serde(skip)]
    pub wall_time: std::time::Duration,
}

/// The three performance measures over one estimate list.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub bias: f64,
    pub mse: f64,
    pub coverage: f64,
}

/// bias = mean(est - truth); mse = mean((est - truth)^2);
/// coverage = share of estimates with |est - truth| <= 1.96 se.
pub fn summarize(estimates: &[(f64, f64)], truth: f64) -> Result<Summary> {
    if estimates.is_empty() {
        return Err(Error::InvalidConfig(
            "cannot summarize an empty estimate list".to_string(),
        ));
    }
    if estimates.iter().any(|&(_, se)| se < 0.0) {
        return Err(Error::InvalidConfig(
            "standard errors must be non-negative".to_string(),
        ));
    }
    let k = estimates.len() as f64;
    let bias = estimates.iter().map(|&(p, _)| p - truth).sum::<f64>() / k;
    let mse = estimates
        .iter()
        .map(|&(p, _)| (p - truth).powi(2))
        .sum::<f64>()
        / k;
    let covered = estimates
        .iter()
        .filter(|&&(p, se)| (p - truth).abs() <= 1.96 * se)
        .count();
    Ok(Summary {
        bias,
        mse,
        coverage: covered as f64 / k,
    })
}

struct IterationEstimate {
    estimand: Estimand,
    point: f64,
    se: f64,
    truth: f64,
}

fn truth_for(panel: &GeneratedPanel, estimand: Estimand) -> f64 {
    match estimand {
        Estimand::AttDelta | Estimand::DrDelta => panel.truth.delta,
        Estimand::SpilloverPsi | Estimand::DrPhi => panel.truth.psi1,
    }
}

fn reduce_for_cross_section(
    panel: &GeneratedPanel,
    design: &DesignSpec,
) -> Result<PanelDataset> {
    let times = panel.data.time_values();
    if times.len() == 2 {
        return Ok(panel.data.clone());
    }
    match design {
        DesignSpec::Sim1 { config, .. } => {
            let pre: Vec<i64> = times
                .iter()
                .copied()
                .filter(|&t| t < config.treat_from)
                .collect();
            let post: Vec<i64> = times
                .iter()
                .copied()
                .filter(|&t| t >= config.treat_from)
                .collect();
            Ok(to_two_period(&panel.data, &pre, &post)?.data)
        }
        DesignSpec::Sim2 { .. } => Err(Error::NotTwoPeriod(times.len())),
    }
}

fn run_model(
    model: ModelKind,
    panel: &GeneratedPanel,
    design: &DesignSpec,
    bootstrap: Option<BootstrapOptions>,
    weight_cap: f64,
) -> Result<Vec<IterationEstimate>> {
    let post_from = match design {
        DesignSpec::Sim1 { config, .. } => config.treat_from,
        DesignSpec::Sim2 { .. } => 1,
    };
    let mut out = Vec::new();
    match model {
        ModelKind::Td3fe => {
            let est = td_threeway_fe(&panel.data, post_from)?;
            out.push(IterationEstimate {
                estimand: est.estimand,
                point: est.point,
                se: est.se,
                truth: truth_for(panel, est.estimand),
            });
        }
        ModelKind::Dtd3fe => {
            let fit = dtd_threeway_fe(&panel.data, post_from)?;
            for est in [fit.delta, fit.psi] {
                out.push(IterationEstimate {
                    estimand: est.estimand,
                    point: est.point,
                    se: est.se,
                    truth: truth_for(panel, est.estimand),
                });
            }
        }
        ModelKind::Td2p => {
            let data = reduce_for_cross_section(panel, design)?;
            let fit = td_two_period(&data)?;
            out.push(IterationEstimate {
                estimand: fit.delta.estimand,
                point: fit.delta.point,
                se: fit.delta.se,
                truth: truth_for(panel, fit.delta.estimand),
            });
        }
        ModelKind::Dtd2p => {
            let data = reduce_for_cross_section(panel, design)?;
            let fit = dtd_two_period(&data)?;
            for est in [fit.delta, fit.psi] {
                out.push(IterationEstimate {
                    estimand: est.estimand,
                    point: est.point,
                    se: est.se,
                    truth: truth_for(panel, est.estimand),
                });
            }
        }
        ModelKind::DrTd => {
            let data = reduce_for_cross_section(panel, design)?;
            let opts = DrOptions {
                bootstrap,
                weight_cap,
                ..DrOptions::default()
            };
            let est = dr_td(&data, &opts)?;
            out.push(IterationEstimate {
                estimand: est.estimand,
                point: est.point,
                se: if est.se.is_nan() { 0.0 } else { est.se },
                truth: truth_for(panel, est.estimand),
            });
        }
        ModelKind::DrDtd => {
            let data = reduce_for_cross_section(panel, design)?;
            let opts = DrOptions {
                bootstrap,
                weight_cap,
                ..DrOptions::default()
            };
            for est in [dr_att(&data, &opts)?, dr_asu(&data, &opts)?] {
                out.push(IterationEstimate {
                    estimand: est.estimand,
                    point: est.point,
                    se: if est.se.is_nan() { 0.0 } else { est.se },
                    truth: truth_for(panel, est.estimand),
                });
            }
        }
    }
    Ok(out)
}

type IterationOutcome = Vec<(ModelKind, Result<Vec<IterationEstimate>>)>;
/// (estimand, truth, per-iteration (point, se) pairs).
type EstimandSeries = (Estimand, f64, Vec<(f64, f64)>);

fn run_iteration(cfg: &StudyConfig, grid_idx: usize, iter: usize) -> IterationOutcome {
    let point = &cfg.grid[grid_idx];
    let tag = ((grid_idx as u64) << 32) | iter as u64;
    let dgp_seed = stream_seed(cfg.master_seed, "mc/dgp", tag);
    let bs_seed = stream_seed(cfg.master_seed, "mc/bootstrap", tag);
    let bootstrap = if cfg.bootstrap_b == 0 {
        None
    } else {
        Some(BootstrapOptions {
            b: cfg.bootstrap_b,
            seed: bs_seed,
        })
    };

    let panel = match &point.design {
        DesignSpec::Sim1 { scenario, config } => {
            let mut config = config.clone();
            config.seed = dgp_seed;
            gen_sim1(&config, *scenario)
        }
        DesignSpec::Sim2 { scenario, config } => {
            let mut config = config.clone();
            config.seed = dgp_seed;
            gen_sim2(&config, *scenario)
        }
    };
    match panel {
        Err(e) => cfg
            .models
            .iter()
            .map(|&m| (m, Err(clone_error(&e))))
            .collect(),
        Ok(panel) => cfg
            .models
            .iter()
            .map(|&m| (m, run_model(m, &panel, &point.design, bootstrap, cfg.weight_cap)))
            .collect(),
    }
}

/// Errors are not `Clone`; carry the message when one error must fan out
/// to several model slots.
fn clone_error(e: &Error) -> Error {
    Error::InvalidConfig(e.to_string())
}

/// Run the full study. Iterations that fail inside an estimator are
/// excluded from that cell's metrics; any (scenario, model) cell with more
/// than 5% failures aborts the study.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyReport> {
    cfg.validate()?;
    let started = std::time::Instant::now();

    let tasks: Vec<(usize, usize)> = (0..cfg.grid.len())
        .flat_map(|g| (0..cfg.k).map(move |k| (g, k)))
        .collect();

    let run_all = || -> Vec<IterationOutcome> {
        tasks
            .par_iter()
            .map(|&(g, k)| run_iteration(cfg, g, k))
            .collect()
    };
    let outcomes: Vec<IterationOutcome> = if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(run_all)
    } else {
        run_all()
    };

    let mut rows = Vec::new();
    let mut raw = if cfg.dump_raw { Some(Vec::new()) } else { None };
    for (g, point) in cfg.grid.iter().enumerate() {
        for &model in &cfg.models {
            // Collect per-estimand series in iteration order.
            let mut series: Vec<EstimandSeries> = Vec::new();
            let mut failures = 0usize;
            for k in 0..cfg.k {
                let outcome = &outcomes[g * cfg.k + k];
                let (_, result) = outcome
                    .iter()
                    .find(|(m, _)| *m == model)
                    .expect("model present in iteration outcome");
                match result {
                    Err(_) => failures += 1,
                    Ok(estimates) => {
                        for est in estimates {
                            let entry = match series
                                .iter_mut()
                                .find(|(e, _, _)| *e == est.estimand)
                            {
                                Some(entry) => entry,
                                None => {
                                    series.push((est.estimand, est.truth, Vec::new()));
                                    series.last_mut().unwrap()
                                }
                            };
                            entry.2.push((est.point, est.se));
                            if let Some(raw) = raw.as_mut() {
                                raw.push(RawRecord {
                                    scenario: point.id.clone(),
                                    model,
                                    estimand: est.estimand,
                                    iteration: k,
                                    point: est.point,
                                    se: est.se,
                                    truth: est.truth,
                                });
                            }
                        }
                    }
                }
            }
            if failures * 20 > cfg.k {
                return Err(Error::StudyCellFailures {
                    cell: format!("{}/{}", point.id, model),
                    failed: failures,
                    total: cfg.k,
                });
            }
            for (estimand, truth, estimates) in series {
                let summary = summarize(&estimates, truth)?;
                rows.push(MetricRow {
                    scenario: point.id.clone(),
                    model,
                    estimand,
                    bias: summary.bias,
                    mse: summary.mse,
                    coverage: summary.coverage,
                    k_effective: estimates.len(),
                });
            }
        }
    }

    Ok(StudyReport {
        rows,
        raw,
        config: cfg.clone(),
        wall_time: started.elapsed(),
    })
}

/// The report table as CSV, one metric row per line.
pub fn report_to_csv(report: &StudyReport) -> String {
    let mut out = String::from("scenario,model,type,bias,mse,coverage,k\n");
    for row in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            row.scenario, row.model, row.estimand, row.bias, row.mse, row.coverage, row.k_effective
        ));
    }
    out
}

/// The raw per-iteration dump as CSV; empty when the study did not keep it.
pub fn raw_to_csv(report: &StudyReport) -> String {
    let mut out = String::from("scenario,model,type,iteration,point,se,truth\n");
    if let Some(raw) = &report.raw {
        for r in raw {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.scenario, r.model, r.estimand, r.iteration, r.point, r.se, r.truth
            ));
        }
    }
    out
}
