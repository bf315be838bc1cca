//! Seeded data-generating processes for the two simulation designs.
//!
//! Design 1 is a balanced multi-period panel with unit fixed effects,
//! random-walk time effects, and spillover terms switched on by scenario.
//! Design 2 is a two-period cross-section with Kang-Schafer covariates,
//! softmax subgroup assignment, and linear outcome trends that differ by
//! stratum, so that parallel trend-in-trends holds only conditionally on
//! the covariates.
//!
//! Every draw comes from a substream derived as (seed, purpose label), so
//! a given `(config, seed)` reproduces the same panel byte for byte.

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{Observation, PanelDataset};
use crate::rng::substream;

/// Configuration of the multi-period panel design.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Sim1Config {
    pub n_units: usize,
    pub n_periods: usize,
    /// First period with the treatment in place.
    pub treat_from: i64,
    pub delta: f64,
    pub psi1: f64,
    pub psi2: f64,
    /// Share of each stratum's control group assigned to interference.
    pub interference_share: f64,
    pub mu_u: f64,
    pub sigma_u: f64,
    pub sigma_t: f64,
    pub sigma_eps: f64,
    pub seed: u64,
}

impl Default for Sim1Config {
    fn default() -> Self {
        Sim1Config {
            n_units: 2000,
            n_periods: 10,
            treat_from: 6,
            delta: 0.20,
            psi1: 0.0,
            psi2: 0.0,
            interference_share: 0.10,
            mu_u: 0.90,
            sigma_u: 1.0,
            sigma_t: 0.05,
            sigma_eps: 0.50,
            seed: 0,
        }
    }
}

impl Sim1Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_units == 0 || !self.n_units.is_multiple_of(4) {
            return Err(Error::InvalidConfig(
                "n_units must be a positive multiple of 4".to_string(),
            ));
        }
        if self.n_periods < 2 {
            return Err(Error::InvalidConfig(
                "n_periods must be at least 2".to_string(),
            ));
        }
        if self.treat_from <= 1 || self.treat_from > self.n_periods as i64 {
            return Err(Error::InvalidConfig(format!(
                "treat_from {} must leave at least one pre period within 1..={}",
                self.treat_from, self.n_periods
            )));
        }
        if !(self.interference_share > 0.0 && self.interference_share < 1.0) {
            return Err(Error::InvalidConfig(
                "interference_share must lie in (0, 1)".to_string(),
            ));
        }
        for (name, v) in [
            ("sigma_u", self.sigma_u),
            ("sigma_t", self.sigma_t),
            ("sigma_eps", self.sigma_eps),
        ] {
            if v < 0.0 || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }
}

/// Spillover scenario for design 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sim1Scenario {
    #[serde(rename = "SUTVA")]
    Sutva,
    /// Spillover psi1 on the interference group of the treated stratum.
    S1,
    /// Additionally psi2 on the interference group of the placebo stratum.
    S2,
}

/// Softmax predictor coefficients for subgroup assignment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GammaTable {
    pub g00: [f64; 4],
    pub g01: [f64; 4],
    pub g10: [f64; 4],
    /// Constant predictor of the (S=1, G=1) cell.
    pub f11: f64,
}

impl Default for GammaTable {
    fn default() -> Self {
        GammaTable {
            g00: [-1.0, 0.5, -0.25, -0.1],
            g01: [-0.5, 2.0, 0.5, -0.2],
            g10: [3.0, -1.5, 0.75, -0.3],
            f11: 1.0,
        }
    }
}

/// Configuration of the two-period conditional design.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Sim2Config {
    pub n_units: usize,
    pub delta: f64,
    pub psi: f64,
    /// Share of each stratum's untreated pool assigned to interference.
    pub interference_share: f64,
    pub gammas: GammaTable,
    pub beta1: [f64; 4],
    pub beta0: [f64; 4],
    pub seed: u64,
}

impl Default for Sim2Config {
    fn default() -> Self {
        let beta1 = [27.4, 13.7, 13.7, 13.7];
        let beta0 = [13.7, 6.85, 6.85, 6.85];
        Sim2Config {
            n_units: 2000,
            delta: 50.0,
            psi: 25.0,
            interference_share: 0.5,
            gammas: GammaTable::default(),
            beta1,
            beta0,
            seed: 0,
        }
    }
}

impl Sim2Config {
    pub fn validate(&self) -> Result<()> {
        if self.n_units < 2 {
            return Err(Error::InvalidConfig("n_units must be >= 2".to_string()));
        }
        if !(self.interference_share > 0.0 && self.interference_share < 1.0) {
            return Err(Error::InvalidConfig(
                "interference_share must lie in (0, 1)".to_string(),
            ));
        }
        Ok(())
    }
}

/// Spillover scenario for design 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sim2Scenario {
    #[serde(rename = "SUTVA")]
    Sutva,
    #[serde(rename = "SPILL")]
    Spill,
}

/// Ground-truth parameter values behind a generated panel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TruthValues {
    pub delta: f64,
    pub psi1: f64,
    pub psi2: f64,
}

/// A generated panel together with its ground truth.
#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub data: PanelDataset,
    pub truth: TruthValues,
}

fn draw_normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        mean
    } else {
        Normal::new(mean, sd).expect("valid normal").sample(rng)
    }
}

/// Random walk of length `n`: initial N(0, sd^2), steps N(prev, sd^2).
fn random_walk(rng: &mut ChaCha8Rng, n: usize, sd: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(n);
    let mut level = draw_normal(rng, 0.0, sd);
    out.push(level);
    for _ in 1..n {
        level = draw_normal(rng, level, sd);
        out.push(level);
    }
    out
}

/// Generate a design-1 panel.
///
/// Units are split into four equal stratum x group cells; interference
/// units are drawn without replacement from each stratum's control group.
/// Scenario adders consume no extra randomness, so subtracting the known
/// psi terms from a spillover panel reproduces the same-seed SUTVA panel.
pub fn gen_sim1(cfg: &Sim1Config, scenario: Sim1Scenario) -> Result<GeneratedPanel> {
    cfg.validate()?;
    if scenario == Sim1Scenario::S1 && cfg.psi2 != 0.0 {
        return Err(Error::InvalidConfig(
            "scenario S1 requires psi2 = 0".to_string(),
        ));
    }
    let (psi1, psi2) = match scenario {
        Sim1Scenario::Sutva => (0.0, 0.0),
        Sim1Scenario::S1 => (cfg.psi1, 0.0),
        Sim1Scenario::S2 => (cfg.psi1, cfg.psi2),
    };

    let n = cfg.n_units;
    let quarter = n / 4;

    // Assignment: random permutation, exact cell counts.
    let mut assign_rng = substream(cfg.seed, "sim1/assign", 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut assign_rng);
    let mut s = vec![0u8; n];
    let mut g = vec![0u8; n];
    for (pos, &u) in order.iter().enumerate() {
        if pos < n / 2 {
            s[u] = 1;
        }
        if pos % (n / 2) < quarter {
            g[u] = 1;
        }
    }
    // Interference: the configured share of each stratum's control group.
    let mut i = vec![0u8; n];
    let n_interf = (cfg.interference_share * quarter as f64).round() as usize;
    for stratum in [1u8, 0u8] {
        let pool: Vec<usize> = (0..n).filter(|&u| s[u] == stratum && g[u] == 0).collect();
        for idx in sample(&mut assign_rng, pool.len(), n_interf) {
            i[pool[idx]] = 1;
        }
    }

    let mut unit_rng = substream(cfg.seed, "sim1/unit_effects", 0);
    let beta_unit: Vec<f64> = (0..n)
        .map(|_| draw_normal(&mut unit_rng, cfg.mu_u, cfg.sigma_u))
        .collect();

    let mut walk_rng = substream(cfg.seed, "sim1/time_walks", 0);
    let beta_t = random_walk(&mut walk_rng, cfg.n_periods, cfg.sigma_t);
    let beta_gt = random_walk(&mut walk_rng, cfg.n_periods, cfg.sigma_t);
    let beta_st = random_walk(&mut walk_rng, cfg.n_periods, cfg.sigma_t);

    let mut noise_rng = substream(cfg.seed, "sim1/noise", 0);
    let width = (n as f64).log10().ceil().max(1.0) as usize;
    let mut rows = Vec::with_capacity(n * cfg.n_periods);
    for u in 0..n {
        let unit_id = format!("u{:0width$}", u, width = width);
        for t in 1..=cfg.n_periods as i64 {
            let tt = if t >= cfg.treat_from { 1.0 } else { 0.0 };
            let ti = (t - 1) as usize;
            let su = f64::from(s[u]);
            let gu = f64::from(g[u]);
            let iu = f64::from(i[u]);
            let eps = draw_normal(&mut noise_rng, 0.0, cfg.sigma_eps);
            let mut y = beta_unit[u]
                + beta_t[ti]
                + beta_gt[ti] * gu
                + beta_st[ti] * su
                + cfg.delta * su * gu * tt
                + eps;
            y += psi1 * su * iu * tt;
            y += psi2 * (1.0 - su) * iu * tt;
            rows.push(Observation {
                unit: unit_id.clone(),
                time: t,
                outcome: y,
                s: s[u],
                g: g[u],
                i: i[u],
                covariates: vec![],
                cluster: unit_id.clone(),
            });
        }
    }
    let data = PanelDataset::from_rows(rows, vec![], "sim1")?;
    Ok(GeneratedPanel {
        data,
        truth: TruthValues {
            delta: cfg.delta,
            psi1,
            psi2,
        },
    })
}

/// Covariates in the Kang-Schafer style: nonlinear transforms of
/// independent standard normals, then standardized over the sample.
pub fn kang_schafer_covariates(n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut rng = substream(seed, "sim2/covariates", 0);
    kang_schafer_with(n, &mut rng)
}

fn kang_schafer_with(n: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 4]> {
    assert!(n >= 2, "need at least 2 rows to standardize");
    let mut raw = Vec::with_capacity(n);
    for _ in 0..n {
        let z1: f64 = StandardNormal.sample(rng);
        let z2: f64 = StandardNormal.sample(rng);
        let z3: f64 = StandardNormal.sample(rng);
        let z4: f64 = StandardNormal.sample(rng);
        raw.push(kang_schafer_transform(z1, z2, z3, z4));
    }
    standardize_columns(&mut raw);
    raw
}

/// The raw (pre-standardization) transform of one normal draw.
pub fn kang_schafer_transform(z1: f64, z2: f64, z3: f64, z4: f64) -> [f64; 4] {
    [
        (0.5 * z1).exp(),
        10.0 + z2 / (1.0 + z1.exp()),
        (0.6 + z1 * z3 / 25.0).powi(3),
        (20.0 + z1 + z4).powi(2),
    ]
}

/// Standardize each column to mean 0 and sample standard deviation 1.
fn standardize_columns(x: &mut [[f64; 4]]) {
    let n = x.len() as f64;
    for j in 0..4 {
        let mean = x.iter().map(|r| r[j]).sum::<f64>() / n;
        let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        for r in x.iter_mut() {
            r[j] = (r[j] - mean) / sd;
        }
    }
}

fn dot4(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

/// Assignment probabilities for the four (S, G) cells at one covariate row,
/// in the order (0,0), (0,1), (1,0), (1,1).
pub fn subgroup_probabilities(x: &[f64; 4], gammas: &GammaTable) -> [f64; 4] {
    // Predictor scale differs by stratum: 0.2 X'gamma for S=0 cells,
    // 0.05 X'gamma for (1,0); the (1,1) predictor is a constant.
    let f = [
        0.2 * dot4(x, &gammas.g00),
        0.2 * dot4(x, &gammas.g01),
        0.05 * dot4(x, &gammas.g10),
        gammas.f11,
    ];
    let max = f.iter().cloned().fold(f64::MIN, f64::max);
    let mut e = [0.0; 4];
    let mut total = 0.0;
    for (out, fv) in e.iter_mut().zip(&f) {
        *out = (fv - max).exp();
        total += *out;
    }
    for v in e.iter_mut() {
        *v /= total;
    }
    e
}

/// Draw (S, G) labels from the softmax probabilities via the cumulative
/// rule over the cell order (0,0), (0,1), (1,0), (1,1).
pub fn assign_subgroups(x: &[[f64; 4]], gammas: &GammaTable, seed: u64) -> Vec<(u8, u8)> {
    let mut rng = substream(seed, "sim2/assign", 0);
    assign_subgroups_with(x, gammas, &mut rng)
}

fn assign_subgroups_with(
    x: &[[f64; 4]],
    gammas: &GammaTable,
    rng: &mut ChaCha8Rng,
) -> Vec<(u8, u8)> {
    x.iter()
        .map(|row| {
            let p = subgroup_probabilities(row, gammas);
            let u: f64 = rng.random();
            if u <= p[0] {
                (0, 0)
            } else if u <= p[0] + p[1] {
                (0, 1)
            } else if u <= p[0] + p[1] + p[2] {
                (1, 0)
            } else {
                (1, 1)
            }
        })
        .collect()
}

/// Generate a design-2 two-period panel.
pub fn gen_sim2(cfg: &Sim2Config, scenario: Sim2Scenario) -> Result<GeneratedPanel> {
    cfg.validate()?;
    let psi = match scenario {
        Sim2Scenario::Sutva => 0.0,
        Sim2Scenario::Spill => cfg.psi,
    };
    let n = cfg.n_units;

    let mut cov_rng = substream(cfg.seed, "sim2/covariates", 0);
    let x = kang_schafer_with(n, &mut cov_rng);

    let mut assign_rng = substream(cfg.seed, "sim2/assign", 0);
    let sg = assign_subgroups_with(&x, &cfg.gammas, &mut assign_rng);

    // Interference: a share of each stratum's untreated pool.
    let mut interf_rng = substream(cfg.seed, "sim2/interference", 0);
    let mut i = vec![0u8; n];
    for stratum in [1u8, 0u8] {
        let pool: Vec<usize> = (0..n)
            .filter(|&u| sg[u].0 == stratum && sg[u].1 == 0)
            .collect();
        let k = (cfg.interference_share * pool.len() as f64).round() as usize;
        for idx in sample(&mut interf_rng, pool.len(), k) {
            i[pool[idx]] = 1;
        }
    }

    let mut nu_rng = substream(cfg.seed, "sim2/nu", 0);
    let mut noise_rng = substream(cfg.seed, "sim2/noise", 0);
    let width = (n as f64).log10().ceil().max(1.0) as usize;
    let mut rows = Vec::with_capacity(2 * n);
    for u in 0..n {
        let (su8, gu8) = sg[u];
        let su = f64::from(su8);
        let gu = f64::from(gu8);
        let iu = f64::from(i[u]);
        let beta = if su8 == 1 { &cfg.beta1 } else { &cfg.beta0 };
        let f_reg = 2010.0 + dot4(&x[u], beta);
        let nu_mean = 2010.0 * gu + su * gu * dot4(&x[u], &cfg.beta1)
            + (1.0 - su) * gu * dot4(&x[u], &cfg.beta0);
        let nu = draw_normal(&mut nu_rng, nu_mean, 1.0);
        let unit_id = format!("u{:0width$}", u, width = width);
        for t in [0i64, 1i64] {
            let tt = t as f64;
            let eps = draw_normal(&mut noise_rng, 0.0, 1.0);
            let y = f_reg + f_reg * tt + nu + cfg.delta * su * gu * tt + psi * su * iu * tt + eps;
            rows.push(Observation {
                unit: unit_id.clone(),
                time: t,
                outcome: y,
                s: su8,
                g: gu8,
                i: i[u],
                covariates: x[u].to_vec(),
                cluster: unit_id.clone(),
            });
        }
    }
    let names = vec!["x1".into(), "x2".into(), "x3".into(), "x4".into()];
    let data = PanelDataset::from_rows(rows, names, "sim2")?;
    Ok(GeneratedPanel {
        data,
        truth: TruthValues {
            delta: cfg.delta,
            psi1: psi,
            psi2: 0.0,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn noise_free_panel_is_exact() {
        let cfg = Sim1Config {
            n_units: 40,
            mu_u: 0.0,
            sigma_u: 0.0,
            sigma_t: 0.0,
            sigma_eps: 0.0,
            ..Sim1Config::default()
        };
        let panel = gen_sim1(&cfg, Sim1Scenario::Sutva).unwrap();
        for row in panel.data.rows() {
            let expect = if row.s == 1 && row.g == 1 && row.time >= cfg.treat_from {
                0.2
            } else {
                0.0
            };
            assert_abs_diff_eq!(row.outcome, expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn default_design_has_paper_cell_counts() {
        for (share, expect) in [(0.10, 50usize), (0.50, 250)] {
            let cfg = Sim1Config {
                interference_share: share,
                seed: 4,
                ..Sim1Config::default()
            };
            let panel = gen_sim1(&cfg, Sim1Scenario::Sutva).unwrap();
            let summary = crate::panel::validate_partition(&panel.data);
            assert_eq!(summary.stratum1.target, 500);
            assert_eq!(summary.stratum0.target, 500);
            assert_eq!(summary.stratum1.interference, expect);
            assert_eq!(summary.stratum0.interference, expect);
            assert_eq!(
                summary.stratum1.interference + summary.stratum1.pure_control,
                500
            );
            assert_abs_diff_eq!(summary.rho1, share, epsilon = 1e-12);
        }
    }

    #[test]
    fn same_seed_reproduces_bitwise_identical_panels() {
        let cfg = Sim1Config {
            n_units: 80,
            seed: 11,
            ..Sim1Config::default()
        };
        let a = gen_sim1(&cfg, Sim1Scenario::Sutva).unwrap();
        let b = gen_sim1(&cfg, Sim1Scenario::Sutva).unwrap();
        assert_eq!(a.data.rows(), b.data.rows());

        let other = gen_sim1(
            &Sim1Config {
                seed: 12,
                ..cfg.clone()
            },
            Sim1Scenario::Sutva,
        )
        .unwrap();
        assert_ne!(a.data.rows(), other.data.rows());
    }

    #[test]
    fn subtracting_scenario_adders_recovers_sutva_panel() {
        let cfg = Sim1Config {
            n_units: 80,
            psi1: 0.3,
            psi2: -0.2,
            interference_share: 0.5,
            seed: 21,
            ..Sim1Config::default()
        };
        let spill = gen_sim1(&cfg, Sim1Scenario::S2).unwrap();
        let sutva = gen_sim1(&cfg, Sim1Scenario::Sutva).unwrap();
        for (a, b) in spill.data.rows().iter().zip(sutva.data.rows()) {
            let tt = if a.time >= cfg.treat_from { 1.0 } else { 0.0 };
            let adder = cfg.psi1 * f64::from(a.s) * f64::from(a.i) * tt
                + cfg.psi2 * (1.0 - f64::from(a.s)) * f64::from(a.i) * tt;
            assert_abs_diff_eq!(a.outcome - adder, b.outcome, epsilon = 1e-12);
        }
    }

    #[test]
    fn s1_rejects_nonzero_psi2() {
        let cfg = Sim1Config {
            psi2: 0.1,
            ..Sim1Config::default()
        };
        assert!(gen_sim1(&cfg, Sim1Scenario::S1).is_err());
        assert!(gen_sim1(
            &Sim1Config {
                interference_share: 1.5,
                ..Sim1Config::default()
            },
            Sim1Scenario::Sutva
        )
        .is_err());
    }

    #[test]
    fn kang_schafer_transform_at_origin() {
        let row = kang_schafer_transform(0.0, 0.0, 0.0, 0.0);
        assert_abs_diff_eq!(row[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(row[1], 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(row[2], 0.216, epsilon = 1e-12);
        assert_abs_diff_eq!(row[3], 400.0, epsilon = 1e-12);
    }

    #[test]
    fn covariates_are_standardized() {
        let x = kang_schafer_covariates(500, 3);
        for j in 0..4 {
            let mean = x.iter().map(|r| r[j]).sum::<f64>() / 500.0;
            let var = x.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / 499.0;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
            assert_abs_diff_eq!(var.sqrt(), 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn fourth_covariate_is_right_skewed_before_standardization() {
        // The squared shifted normal stays skewed after standardization.
        let x = kang_schafer_covariates(10_000, 9);
        let skew: f64 = x.iter().map(|r| r[3].powi(3)).sum::<f64>() / 10_000.0;
        assert!(skew > 0.0, "skewness {skew}");
    }

    #[test]
    fn softmax_probabilities_at_origin() {
        let p = subgroup_probabilities(&[0.0; 4], &GammaTable::default());
        assert_abs_diff_eq!(p[0], 0.1749, epsilon = 5e-5);
        assert_abs_diff_eq!(p[1], 0.1749, epsilon = 5e-5);
        assert_abs_diff_eq!(p[2], 0.1749, epsilon = 5e-5);
        assert_abs_diff_eq!(p[3], 0.4754, epsilon = 5e-5);
        // Implied pairwise probability of (1,1) against any other cell.
        let pair = p[3] / (p[3] + p[2]);
        assert_abs_diff_eq!(pair, std::f64::consts::E / (1.0 + std::f64::consts::E), epsilon = 1e-10);
        let total: f64 = p.iter().sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zeroed_predictors_give_uniform_cells() {
        let gammas = GammaTable {
            g00: [0.0; 4],
            g01: [0.0; 4],
            g10: [0.0; 4],
            f11: 0.0,
        };
        let p = subgroup_probabilities(&[0.3, -0.2, 1.0, 0.5], &gammas);
        for v in p {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn empirical_cell_shares_match_softmax_means() {
        let cfg = Sim2Config {
            n_units: 10_000,
            seed: 5,
            ..Sim2Config::default()
        };
        let panel = gen_sim2(&cfg, Sim2Scenario::Sutva).unwrap();
        let x = kang_schafer_covariates(cfg.n_units, cfg.seed);
        let mut expected = [0.0f64; 4];
        for row in &x {
            let p = subgroup_probabilities(row, &cfg.gammas);
            for (e, v) in expected.iter_mut().zip(&p) {
                *e += v;
            }
        }
        for e in expected.iter_mut() {
            *e /= cfg.n_units as f64;
        }
        let mut counts = [0usize; 4];
        let mut seen = std::collections::HashSet::new();
        for row in panel.data.rows() {
            if !seen.insert(row.unit.clone()) {
                continue;
            }
            let cell = (row.s * 2 + row.g) as usize;
            counts[cell] += 1;
        }
        // Cell order here: index 0 = (0,0), 1 = (0,1), 2 = (1,0), 3 = (1,1).
        for (idx, &count) in counts.iter().enumerate() {
            let share = count as f64 / cfg.n_units as f64;
            let p = expected[idx];
            let se = (p * (1.0 - p) / cfg.n_units as f64).sqrt();
            assert!(
                (share - p).abs() <= 2.0 * se + 0.01,
                "cell {idx}: share {share} vs expected {p}"
            );
        }
    }

    #[test]
    fn sim2_interference_is_half_of_untreated_per_stratum() {
        let cfg = Sim2Config {
            n_units: 4000,
            seed: 8,
            ..Sim2Config::default()
        };
        let panel = gen_sim2(&cfg, Sim2Scenario::Spill).unwrap();
        let summary = crate::panel::validate_partition(&panel.data);
        for cells in [&summary.stratum1, &summary.stratum0] {
            let pool = cells.interference + cells.pure_control;
            let expect = (0.5 * pool as f64).round() as usize;
            assert_eq!(cells.interference, expect);
        }
        assert_eq!(panel.truth.psi1, 25.0);
        assert_eq!(panel.data.time_values(), &[0, 1]);
    }

    #[test]
    fn randomized_assignment_recovers_delta_in_cell_means() {
        // With all softmax predictors zeroed, assignment ignores X and the
        // cell-mean DTD contrast recovers delta up to noise.
        let cfg = Sim2Config {
            n_units: 20_000,
            gammas: GammaTable {
                g00: [0.0; 4],
                g01: [0.0; 4],
                g10: [0.0; 4],
                f11: 0.0,
            },
            seed: 13,
            ..Sim2Config::default()
        };
        let panel = gen_sim2(&cfg, Sim2Scenario::Sutva).unwrap();
        let est = crate::tdiff::dtd_two_period(&panel.data).unwrap();
        // Monte Carlo tolerance: 3 standard errors of the contrast.
        assert!(
            (est.delta.point - 50.0).abs() <= 3.0 * est.delta.se,
            "delta {} (se {})",
            est.delta.point,
            est.delta.se
        );
    }
}
