//! Numerical engine: least squares with cluster-robust covariance,
//! within-unit demeaning for fixed-effects absorption, binary logistic
//! fitting via IRLS, and joint Wald tests.
//!
//! All operations are pure functions of their inputs; fits can run
//! concurrently without shared state.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

/// Relative threshold below which a column is treated as linearly
/// dependent on its predecessors and pruned (last-in loses).
const PRUNE_TOL: f64 = 1e-8;
/// Max absolute score component at which IRLS is declared converged.
const LOGIT_SCORE_TOL: f64 = 1e-8;
const LOGIT_MAX_ITER: usize = 100;
/// Coefficient sup-norm beyond which the logit is treated as separated.
const SEPARATION_LIMIT: f64 = 1e3;
/// Condition bound for the Wald sub-block inversion.
const WALD_CONDITION_LIMIT: f64 = 1e10;

/// Named, column-major design matrix.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    n: usize,
    names: Vec<String>,
    cols: Vec<Vec<f64>>,
}

impl DesignMatrix {
    pub fn new(n_rows: usize) -> Self {
        DesignMatrix {
            n: n_rows,
            names: Vec::new(),
            cols: Vec::new(),
        }
    }

    /// Append a named column; its length must equal the row count.
    pub fn push(&mut self, name: impl Into<String>, values: Vec<f64>) {
        assert_eq!(values.len(), self.n, "column length mismatch");
        self.names.push(name.into());
        self.cols.push(values);
    }

    /// Append a column of ones named `const`.
    pub fn push_intercept(&mut self) {
        self.push("const", vec![1.0; self.n]);
    }

    pub fn n_rows(&self) -> usize {
        self.n
    }

    pub fn n_cols(&self) -> usize {
        self.cols.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|c| c == name)
            .map(|j| self.cols[j].as_slice())
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.cols
    }

    fn has_intercept(&self) -> bool {
        self.cols.iter().any(|col| {
            let first = col.first().copied().unwrap_or(0.0);
            first != 0.0 && col.iter().all(|&v| v == first)
        })
    }
}

/// Regression fit: coefficients, cluster-robust covariance, residuals.
#[derive(Debug, Clone)]
pub struct FitResult {
    names: Vec<String>,
    coefficients: DVector<f64>,
    vcov: DMatrix<f64>,
    residuals: Vec<f64>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub df: usize,
    /// Columns dropped as linearly dependent, in drop order.
    pub pruned: Vec<String>,
}

impl FitResult {
    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    pub fn vcov(&self) -> &DMatrix<f64> {
        &self.vcov
    }

    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::UnknownCoefficient(name.to_string()))
    }

    pub fn coef(&self, name: &str) -> Result<f64> {
        Ok(self.coefficients[self.index_of(name)?])
    }

    pub fn se(&self, name: &str) -> Result<f64> {
        let j = self.index_of(name)?;
        Ok(self.vcov[(j, j)].max(0.0).sqrt())
    }
}

/// A Wald-type test outcome.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct OlsOptions {
    /// Apply the CR1 small-sample factor G/(G-1) * (N-1)/(N-K).
    /// Off by default: CR0 keeps the singleton-cluster = HC0 identity exact.
    pub cr1: bool,
}

/// Thin QR factorization by modified Gram-Schmidt with reorthogonalization.
///
/// Columns that fail to add rank are pruned deterministically in input
/// order (last-in loses).
struct ThinQr {
    /// Orthonormal columns, one per kept design column.
    q: Vec<Vec<f64>>,
    /// Upper-triangular factor over the kept columns.
    r: DMatrix<f64>,
    kept: Vec<usize>,
    pruned: Vec<usize>,
}

fn thin_qr(x: &DesignMatrix) -> ThinQr {
    let k = x.n_cols();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut r_entries: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut kept = Vec::with_capacity(k);
    let mut pruned = Vec::new();

    for j in 0..k {
        let col = &x.columns()[j];
        let orig_norm = norm(col);
        let mut v = col.clone();
        let mut coeffs = vec![0.0; q.len()];
        // Two MGS passes for numerical stability.
        for _ in 0..2 {
            for (qi, qcol) in q.iter().enumerate() {
                let c = dot(qcol, &v);
                coeffs[qi] += c;
                axpy(&mut v, -c, qcol);
            }
        }
        let nv = norm(&v);
        if orig_norm == 0.0 || nv <= PRUNE_TOL * orig_norm {
            pruned.push(j);
            continue;
        }
        let inv = 1.0 / nv;
        for val in v.iter_mut() {
            *val *= inv;
        }
        coeffs.push(nv);
        q.push(v);
        r_entries.push(coeffs);
        kept.push(j);
    }

    let rank = kept.len();
    let mut r = DMatrix::zeros(rank, rank);
    for (jj, coeffs) in r_entries.iter().enumerate() {
        for (ii, &c) in coeffs.iter().enumerate() {
            r[(ii, jj)] = c;
        }
    }
    ThinQr { q, r, kept, pruned }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Solve R b = rhs by back substitution (R upper triangular).
fn back_substitute(r: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let k = r.nrows();
    let mut b = DVector::zeros(k);
    for ii in (0..k).rev() {
        let mut acc = rhs[ii];
        for jj in (ii + 1)..k {
            acc -= r[(ii, jj)] * b[jj];
        }
        b[ii] = acc / r[(ii, ii)];
    }
    b
}

/// (X'X)^-1 from the R factor: R^-1 R^-T.
fn xtx_inverse(r: &DMatrix<f64>) -> DMatrix<f64> {
    let k = r.nrows();
    let mut rinv = DMatrix::zeros(k, k);
    for col in 0..k {
        let mut e = DVector::zeros(k);
        e[col] = 1.0;
        let b = back_substitute(r, &e);
        rinv.set_column(col, &b);
    }
    &rinv * rinv.transpose()
}

fn count_clusters(clusters: &[usize]) -> usize {
    let max = clusters.iter().copied().max().unwrap_or(0);
    let mut seen = vec![false; max + 1];
    let mut count = 0;
    for &c in clusters {
        if !seen[c] {
            seen[c] = true;
            count += 1;
        }
    }
    count
}

/// Map arbitrary hashable labels to dense indices 0..C in first-appearance order.
pub fn dense_labels<T: std::hash::Hash + Eq>(labels: &[T]) -> Vec<usize> {
    let mut index = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = index.len();
            *index.entry(l).or_insert(next)
        })
        .collect()
}

/// OLS with the CR0 cluster sandwich covariance
/// (X'X)^-1 [ sum_c X_c' e_c e_c' X_c ] (X'X)^-1.
pub fn ols_fit(x: &DesignMatrix, y: &[f64], clusters: &[usize]) -> Result<FitResult> {
    ols_fit_with(x, y, clusters, &OlsOptions::default())
}

pub fn ols_fit_with(
    x: &DesignMatrix,
    y: &[f64],
    clusters: &[usize],
    options: &OlsOptions,
) -> Result<FitResult> {
    let n = x.n_rows();
    if y.len() != n || clusters.len() != n {
        return Err(Error::InvalidConfig(
            "design, response, and clusters must have the same row count".to_string(),
        ));
    }
    let n_clusters = count_clusters(clusters);
    if n_clusters < 2 {
        return Err(Error::TooFewClusters(n_clusters));
    }

    let qr = thin_qr(x);
    if qr.kept.is_empty() {
        return Err(Error::RankDeficient(
            "no independent columns remain".to_string(),
        ));
    }
    let rank = qr.kept.len();
    if n < rank {
        return Err(Error::RankDeficient(format!(
            "{n} rows cannot identify {rank} coefficients"
        )));
    }

    let qty = DVector::from_iterator(rank, qr.q.iter().map(|qc| dot(qc, y)));
    let beta = back_substitute(&qr.r, &qty);

    // Residuals over the kept columns.
    let mut residuals = y.to_vec();
    for (kidx, &j) in qr.kept.iter().enumerate() {
        axpy(&mut residuals, -beta[kidx], &x.columns()[j]);
    }

    // Cluster score sums u_c = X_c' e_c.
    let n_max = clusters.iter().copied().max().unwrap_or(0) + 1;
    let mut scores = vec![0.0f64; n_max * rank];
    for (kidx, &j) in qr.kept.iter().enumerate() {
        let col = &x.columns()[j];
        for (row, &c) in clusters.iter().enumerate() {
            scores[c * rank + kidx] += col[row] * residuals[row];
        }
    }
    let mut meat = DMatrix::zeros(rank, rank);
    for c in 0..n_max {
        let u = &scores[c * rank..(c + 1) * rank];
        for a in 0..rank {
            if u[a] == 0.0 {
                continue;
            }
            for b in a..rank {
                meat[(a, b)] += u[a] * u[b];
            }
        }
    }
    for a in 0..rank {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }

    let bread = xtx_inverse(&qr.r);
    let mut vcov = &bread * meat * &bread;
    if options.cr1 {
        let g = n_clusters as f64;
        let nn = n as f64;
        let kk = rank as f64;
        let factor = (g / (g - 1.0)) * ((nn - 1.0) / (nn - kk));
        vcov.scale_mut(factor);
    }
    symmetrize(&mut vcov);

    Ok(FitResult {
        names: qr.kept.iter().map(|&j| x.names()[j].clone()).collect(),
        coefficients: beta,
        vcov,
        residuals,
        n_obs: n,
        n_clusters,
        df: n - rank,
        pruned: qr.pruned.iter().map(|&j| x.names()[j].clone()).collect(),
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let k = m.nrows();
    for a in 0..k {
        for b in (a + 1)..k {
            let v = 0.5 * (m[(a, b)] + m[(b, a)]);
            m[(a, b)] = v;
            m[(b, a)] = v;
        }
    }
}

/// Subtract the per-group mean from `values`.
pub fn within_demean_values(values: &[f64], groups: &[usize]) -> Vec<f64> {
    assert_eq!(values.len(), groups.len());
    let n_groups = groups.iter().copied().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0f64; n_groups];
    let mut counts = vec![0usize; n_groups];
    for (&v, &g) in values.iter().zip(groups) {
        sums[g] += v;
        counts[g] += 1;
    }
    for g in 0..n_groups {
        if counts[g] > 0 {
            sums[g] /= counts[g] as f64;
        }
    }
    values
        .iter()
        .zip(groups)
        .map(|(&v, &g)| v - sums[g])
        .collect()
}

/// Demean every column of a design matrix within groups.
pub fn within_demean_matrix(x: &DesignMatrix, groups: &[usize]) -> DesignMatrix {
    let mut out = DesignMatrix::new(x.n_rows());
    for (name, col) in x.names().iter().zip(x.columns()) {
        out.push(name.clone(), within_demean_values(col, groups));
    }
    out
}

/// Demean named panel columns (the outcome or covariates) within units,
/// absorbing unit fixed effects.
pub fn within_demean(data: &PanelDataset, columns: &[&str]) -> Result<DesignMatrix> {
    let groups = data.unit_of_row();
    let mut out = DesignMatrix::new(data.n_obs());
    for &name in columns {
        let values = data.column(name)?;
        out.push(name, within_demean_values(&values, groups));
    }
    Ok(out)
}

fn bernoulli_loglik(y: &[f64], eta: &[f64]) -> f64 {
    // log p = eta*y - log(1 + exp(eta)), written stably.
    y.iter()
        .zip(eta)
        .map(|(&yi, &e)| {
            let log1p = if e > 0.0 {
                e + (1.0 + (-e).exp()).ln()
            } else {
                (1.0 + e.exp()).ln()
            };
            yi * e - log1p
        })
        .sum()
}

/// Binary logit by iteratively reweighted least squares.
///
/// Converges when the score sup-norm drops below 1e-8 (at most 100
/// iterations); the covariance is the inverse observed information.
/// Perfect separation is reported as a distinct error once the coefficient
/// norm diverges past 1e3, so callers can trim covariates.
pub fn logit_fit(x: &DesignMatrix, y: &[f64]) -> Result<FitResult> {
    let n = x.n_rows();
    if y.len() != n {
        return Err(Error::InvalidConfig(
            "design and response must have the same row count".to_string(),
        ));
    }
    if y.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::NonBinaryResponse);
    }
    let ones = y.iter().filter(|&&v| v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(Error::NonBinaryResponse);
    }
    if !x.has_intercept() {
        return Err(Error::InvalidConfig(
            "logit design must include an intercept column".to_string(),
        ));
    }

    let qr = thin_qr(x);
    let rank = qr.kept.len();
    if rank == 0 {
        return Err(Error::RankDeficient(
            "no independent columns remain".to_string(),
        ));
    }
    let kept_cols: Vec<&Vec<f64>> = qr.kept.iter().map(|&j| &x.columns()[j]).collect();

    let mut beta = DVector::<f64>::zeros(rank);
    let mut eta = vec![0.0f64; n];
    let mut prob = vec![0.5f64; n];
    let mut loglik = bernoulli_loglik(y, &eta);

    for _ in 0..LOGIT_MAX_ITER {
        // Score X'(y - p).
        let score = DVector::from_iterator(
            rank,
            kept_cols.iter().map(|col| {
                col.iter()
                    .zip(y.iter().zip(&prob))
                    .map(|(&xij, (&yi, &pi))| xij * (yi - pi))
                    .sum::<f64>()
            }),
        );
        if score.amax() < LOGIT_SCORE_TOL {
            break;
        }

        // Observed information X'WX with W = p(1-p); the tiny floor keeps
        // the solve alive on the way to a separation diagnosis.
        let mut info = DMatrix::zeros(rank, rank);
        for a in 0..rank {
            for b in a..rank {
                let mut acc = 0.0;
                let ca = kept_cols[a];
                let cb = kept_cols[b];
                for r in 0..n {
                    let w = (prob[r] * (1.0 - prob[r])).max(1e-10);
                    acc += ca[r] * w * cb[r];
                }
                info[(a, b)] = acc;
                info[(b, a)] = acc;
            }
        }
        let chol = nalgebra::Cholesky::new(info.clone()).ok_or_else(|| {
            Error::RankDeficient("information matrix not positive definite".to_string())
        })?;
        let full_step = chol.solve(&score);

        // Step-halving guard against overshoot.
        let mut step = 1.0f64;
        let mut accepted = false;
        for _ in 0..25 {
            let candidate = &beta + step * &full_step;
            let cand_eta: Vec<f64> = (0..n)
                .map(|r| {
                    kept_cols
                        .iter()
                        .enumerate()
                        .map(|(kidx, col)| candidate[kidx] * col[r])
                        .sum()
                })
                .collect();
            let cand_ll = bernoulli_loglik(y, &cand_eta);
            if cand_ll >= loglik - 1e-10 {
                beta = candidate;
                eta = cand_eta;
                loglik = cand_ll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
        for r in 0..n {
            prob[r] = 1.0 / (1.0 + (-eta[r]).exp());
        }
        if beta.amax() > SEPARATION_LIMIT {
            return Err(Error::Separation { norm: beta.amax() });
        }
    }

    // A separable sample has no maximizer: the score only vanished because
    // the probabilities saturated. That state is exactly a strictly perfect
    // in-sample classification.
    let perfectly_classified = y
        .iter()
        .zip(&prob)
        .all(|(&yi, &pi)| if yi == 1.0 { pi > 0.5 } else { pi < 0.5 });
    if perfectly_classified {
        return Err(Error::Separation { norm: beta.amax() });
    }

    // Covariance: inverse observed information at the final estimate.
    let mut info = DMatrix::zeros(rank, rank);
    for a in 0..rank {
        for b in a..rank {
            let mut acc = 0.0;
            for r in 0..n {
                let w = (prob[r] * (1.0 - prob[r])).max(1e-10);
                acc += kept_cols[a][r] * w * kept_cols[b][r];
            }
            info[(a, b)] = acc;
            info[(b, a)] = acc;
        }
    }
    let vcov = nalgebra::Cholesky::new(info)
        .ok_or_else(|| {
            Error::RankDeficient("information matrix not positive definite".to_string())
        })?
        .inverse();

    let residuals: Vec<f64> = y.iter().zip(&prob).map(|(&yi, &pi)| yi - pi).collect();
    Ok(FitResult {
        names: qr.kept.iter().map(|&j| x.names()[j].clone()).collect(),
        coefficients: beta,
        vcov,
        residuals,
        n_obs: n,
        n_clusters: n,
        df: n - rank,
        pruned: qr.pruned.iter().map(|&j| x.names()[j].clone()).collect(),
    })
}

/// Linear-predictor evaluation for a fitted logit/OLS over a design with
/// the same column naming.
pub fn predict_linear(fit: &FitResult, x: &DesignMatrix) -> Result<Vec<f64>> {
    let mut eta = vec![0.0f64; x.n_rows()];
    for (kidx, name) in fit.names().iter().enumerate() {
        let col = x
            .column(name)
            .ok_or_else(|| Error::UnknownColumn(name.clone()))?;
        axpy(&mut eta, fit.coefficients()[kidx], col);
    }
    Ok(eta)
}

/// Joint Wald test that the named coefficients are all zero.
///
/// W = c' V^-1 c against chi-square with df = |subset|. An exactly-zero
/// coefficient vector short-circuits to (0, p = 1) so that saturated
/// noise-free fits (where V is singular) still test cleanly.
pub fn joint_wald(fit: &FitResult, coefficient_names: &[&str]) -> Result<TestResult> {
    if coefficient_names.is_empty() {
        return Err(Error::InvalidConfig(
            "joint test needs at least one coefficient".to_string(),
        ));
    }
    let idx: Vec<usize> = coefficient_names
        .iter()
        .map(|name| fit.index_of(name))
        .collect::<Result<_>>()?;
    let df = idx.len();
    let c = DVector::from_iterator(df, idx.iter().map(|&j| fit.coefficients()[j]));
    if c.amax() <= 1e-10 {
        return Ok(TestResult {
            statistic: 0.0,
            df,
            p_value: 1.0,
        });
    }
    let mut v = DMatrix::zeros(df, df);
    for (a, &ja) in idx.iter().enumerate() {
        for (b, &jb) in idx.iter().enumerate() {
            v[(a, b)] = fit.vcov()[(ja, jb)];
        }
    }
    let eigen = v.symmetric_eigen();
    let max_l = eigen.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
    let min_l = eigen.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
    if min_l <= 0.0 || max_l / min_l > WALD_CONDITION_LIMIT {
        return Err(Error::SingularVcov(WALD_CONDITION_LIMIT));
    }
    // W = sum_j (u_j' c)^2 / lambda_j.
    let mut statistic = 0.0;
    for j in 0..df {
        let proj = eigen.eigenvectors.column(j).dot(&c);
        statistic += proj * proj / eigen.eigenvalues[j];
    }
    let dist = ChiSquared::new(df as f64).expect("df >= 1");
    let p_value = (1.0 - dist.cdf(statistic)).clamp(0.0, 1.0);
    Ok(TestResult {
        statistic,
        df,
        p_value,
    })
}

/// Two-sided normal p-value for a coefficient/se pair.
pub fn normal_p_value(coef: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return if coef == 0.0 { 1.0 } else { 0.0 };
    }
    let z = (coef / se).abs();
    let normal = statrs::distribution::Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - normal.cdf(z))).clamp(0.0, 1.0)
}
