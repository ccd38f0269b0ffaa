//! Numerical kernels shared by the analyses: quantiles, OLS with HC1 robust
//! standard errors, variance inflation factors, logistic regression by IRLS,
//! and the Mann–Whitney U test.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Linear-interpolation quantile (type 7): `h = q * (n - 1)`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    let mut sorted = values.to_vec();
    quantile_in_place(&mut sorted, q)
}

/// As [`quantile`], reordering `values` instead of copying.
pub fn quantile_in_place(values: &mut [f64], q: f64) -> Result<f64> {
    check_quantile_args(values, q)?;
    let n = values.len();
    let h = q * (n - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    let (_, lo_val, upper) = values.select_nth_unstable_by(lo, f64::total_cmp);
    let lo_val = *lo_val;
    if frac == 0.0 || upper.is_empty() {
        return Ok(lo_val);
    }
    let hi_val = upper.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(lo_val + frac * (hi_val - lo_val))
}

/// Quantile of an already ascending-sorted slice.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    check_quantile_args(sorted, q)?;
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if frac == 0.0 || lo + 1 >= sorted.len() {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]))
}

fn check_quantile_args(values: &[f64], q: f64) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Invalid("quantile of an empty sequence".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Invalid(format!("quantile level {q} outside [0, 1]")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("quantile of non-finite values".into()));
    }
    Ok(())
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_std(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    if values.iter().all(|&v| v == values[0]) {
        return Some(0.0);
    }
    let m = mean(values)?;
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    Some((ss / (values.len() - 1) as f64).sqrt())
}

pub fn sample_var(values: &[f64]) -> Option<f64> {
    sample_std(values).map(|s| s * s)
}

/// `std / mean`; `None` when the mean is zero or fewer than two values.
pub fn coefficient_of_variation(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    let s = sample_std(values)?;
    if m == 0.0 {
        None
    } else {
        Some(s / m)
    }
}

/// Significance stars: `***` p<0.01, `**` p<0.05, `*` p<0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Named design matrix, observations in rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    data: DMatrix<f64>,
}

impl DesignMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Invalid(format!(
                "{} column names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Invalid(format!("duplicate column name `{n}`")));
            }
        }
        let nrows = columns.first().map_or(0, Vec::len);
        if let Some((i, _)) = columns.iter().enumerate().find(|(_, c)| c.len() != nrows) {
            return Err(Error::Invalid(format!(
                "column `{}` has a different length",
                names[i]
            )));
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(
                "design matrix has non-finite entries".into(),
            ));
        }
        let data = DMatrix::from_fn(nrows, columns.len(), |i, j| columns[j][i]);
        Ok(DesignMatrix { names, data })
    }

    pub fn nrows(&self) -> usize {
        self.data.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.data.ncols()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.column(j).iter().copied().collect()
    }

    /// A column is treated as an intercept if every entry is exactly 1.
    pub fn is_intercept(&self, j: usize) -> bool {
        self.data.nrows() > 0 && self.data.column(j).iter().all(|&v| v == 1.0)
    }

    pub fn has_intercept(&self) -> bool {
        (0..self.ncols()).any(|j| self.is_intercept(j))
    }

    /// Keep only the given rows, in order.
    pub fn select_rows(&self, rows: &[usize]) -> DesignMatrix {
        let data = DMatrix::from_fn(rows.len(), self.ncols(), |i, j| self.data[(rows[i], j)]);
        DesignMatrix {
            names: self.names.clone(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub robust_se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub r_squared: f64,
    pub n_obs: usize,
    /// How `robust_se` was computed, for output labelling.
    pub se_kind: &'static str,
}

impl FitResult {
    fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.coefficients[i])
    }

    pub fn std_error(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.robust_se[i])
    }

    pub fn p_value(&self, name: &str) -> Option<f64> {
        self.position(name).map(|i| self.p_values[i])
    }
}

#[derive(Debug, Clone)]
pub struct OlsFit {
    pub result: FitResult,
    pub fitted: Vec<f64>,
    pub residuals: Vec<f64>,
}

/// Orthonormal basis of the columns of `x`, skipping columns that lie in the
/// span of earlier ones. Returns the basis and the indices of skipped columns.
fn orthonormal_basis(x: &DMatrix<f64>, cols: &[usize]) -> (Vec<DVector<f64>>, Vec<usize>) {
    const TOL: f64 = 1e-10;
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for &j in cols {
        let original = x.column(j).into_owned();
        let norm0 = original.norm();
        let mut v = original;
        // two passes of modified Gram-Schmidt for stability
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= TOL * norm0 {
            dependent.push(j);
        } else {
            basis.push(v / norm);
        }
    }
    (basis, dependent)
}

fn residual_after_projection(basis: &[DVector<f64>], target: &DVector<f64>) -> DVector<f64> {
    let mut r = target.clone();
    for _ in 0..2 {
        for q in basis {
            let proj = q.dot(&r);
            r.axpy(-proj, q, 1.0);
        }
    }
    r
}

/// Least squares with HC1 heteroskedasticity-robust standard errors.
pub fn ols_robust(x: &DesignMatrix, y: &[f64]) -> Result<OlsFit> {
    let (n, k) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Invalid(format!(
            "{} responses for {n} rows",
            y.len()
        )));
    }
    if n <= k {
        return Err(Error::Invalid(format!(
            "need more observations ({n}) than columns ({k})"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite response".into()));
    }
    let all: Vec<usize> = (0..k).collect();
    let (_, dependent) = orthonormal_basis(x.matrix(), &all);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(
            dependent.iter().map(|&j| x.names[j].clone()).collect(),
        ));
    }

    let xm = x.matrix();
    let yv = DVector::from_column_slice(y);
    let qr = xm.clone().qr();
    let (q, r) = (qr.q(), qr.r());
    let beta = r
        .solve_upper_triangular(&(q.transpose() * &yv))
        .ok_or_else(|| Error::RankDeficient(x.names.clone()))?;
    let fitted = xm * &beta;
    let resid = &yv - &fitted;

    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficient(x.names.clone()))?;
    let bread = &r_inv * r_inv.transpose();
    let mut scaled = xm.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= resid[i];
    }
    let meat = scaled.transpose() * &scaled;
    let cov = (&bread * meat * &bread) * (n as f64 / (n - k) as f64);
    let se: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();

    let ssr = resid.norm_squared();
    let y_mean = yv.mean();
    let sst: f64 = y.iter().map(|v| (v - y_mean).powi(2)).sum();
    let r_squared = if sst > 0.0 {
        (1.0 - ssr / sst).clamp(0.0, 1.0)
    } else {
        0.0
    };

    let t_dist = StudentsT::new(0.0, 1.0, (n - k) as f64).expect("positive degrees of freedom");
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let p_values = coefficients
        .iter()
        .zip(&se)
        .map(|(&b, &s)| two_sided_p(b, s, |t| t_dist.cdf(t)))
        .collect();

    Ok(OlsFit {
        result: FitResult {
            names: x.names.clone(),
            coefficients,
            robust_se: se,
            p_values,
            r_squared,
            n_obs: n,
            se_kind: "HC1",
        },
        fitted: fitted.iter().copied().collect(),
        residuals: resid.iter().copied().collect(),
    })
}

fn two_sided_p(estimate: f64, se: f64, cdf: impl Fn(f64) -> f64) -> f64 {
    if se == 0.0 || !se.is_finite() {
        return if estimate == 0.0 { 1.0 } else { 0.0 };
    }
    let t = (estimate / se).abs();
    (2.0 * (1.0 - cdf(t))).clamp(0.0, 1.0)
}

/// Variance inflation factors for every non-intercept column.
///
/// Perfectly collinear columns get `f64::INFINITY`.
pub fn vif(x: &DesignMatrix) -> Result<Vec<(String, f64)>> {
    let k = x.ncols();
    let xm = x.matrix();
    let intercept = x.has_intercept();
    let mut out = Vec::new();
    for j in 0..k {
        if x.is_intercept(j) {
            continue;
        }
        let others: Vec<usize> = (0..k).filter(|&c| c != j).collect();
        let (basis, _) = orthonormal_basis(xm, &others);
        let target = xm.column(j).into_owned();
        let resid = residual_after_projection(&basis, &target);
        let ss_total = if intercept {
            let m = target.mean();
            target.iter().map(|v| (v - m).powi(2)).sum::<f64>()
        } else {
            target.norm_squared()
        };
        let value = if ss_total == 0.0 {
            f64::INFINITY
        } else {
            let tolerance = resid.norm_squared() / ss_total;
            if tolerance <= 1e-12 {
                f64::INFINITY
            } else {
                1.0 / tolerance.min(1.0)
            }
        };
        out.push((x.names[j].clone(), value));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct LogitFit {
    /// Standard errors are model-based (inverse Fisher information);
    /// `r_squared` is McFadden's pseudo R².
    pub result: FitResult,
    pub probabilities: Vec<f64>,
    pub log_likelihood: f64,
    pub iterations: usize,
}

const LOGIT_MAX_ITER: usize = 100;
const LOGIT_TOL: f64 = 1e-8;

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

fn bernoulli_loglik(y: &[f64], p: &[f64]) -> f64 {
    y.iter()
        .zip(p)
        .map(|(&yi, &pi)| {
            let pi = pi.clamp(1e-300, 1.0 - 1e-16);
            yi * pi.ln() + (1.0 - yi) * (1.0 - pi).ln()
        })
        .sum()
}

fn solve_spd(a: DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let k = a.nrows();
    let chol = a.clone().cholesky().or_else(|| {
        // ridge fallback for near-singular weighted normal matrices
        (a + DMatrix::identity(k, k) * 1e-8).cholesky()
    })?;
    Some((chol.solve(b), chol.inverse()))
}

/// Maximum-likelihood logistic regression by iteratively reweighted least squares.
pub fn logit_fit(x: &DesignMatrix, y: &[bool]) -> Result<LogitFit> {
    let (n, k) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::Invalid(format!("{} outcomes for {n} rows", y.len())));
    }
    let positives = y.iter().filter(|&&v| v).count();
    if positives == 0 || positives == n {
        return Err(Error::Invalid("logit needs both outcome classes".into()));
    }
    let all: Vec<usize> = (0..k).collect();
    let (_, dependent) = orthonormal_basis(x.matrix(), &all);
    if !dependent.is_empty() {
        return Err(Error::RankDeficient(
            dependent.iter().map(|&j| x.names[j].clone()).collect(),
        ));
    }
    let xm = x.matrix();
    let yf: Vec<f64> = y.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
    let mut beta = DVector::zeros(k);
    let mut converged = false;
    let mut iterations = 0;
    let mut cov = DMatrix::zeros(k, k);
    for it in 1..=LOGIT_MAX_ITER {
        iterations = it;
        let eta = xm * &beta;
        let p: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
        let w: Vec<f64> = p.iter().map(|&pi| (pi * (1.0 - pi)).max(1e-12)).collect();
        let mut xw = xm.clone();
        for (i, mut row) in xw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let info = xm.transpose() * &xw;
        // Newton step on the score: (X'WX) delta = X'(y - p)
        let score =
            xm.transpose() * DVector::from_iterator(n, yf.iter().zip(&p).map(|(a, b)| a - b));
        let (delta, inv) = solve_spd(info, &score)
            .ok_or_else(|| Error::Separation("weighted normal matrix is singular".into()))?;
        beta += &delta;
        cov = inv;
        let change = delta.amax();
        if !change.is_finite() || beta.amax() > 1e6 {
            return Err(Error::Separation("coefficients diverged".into()));
        }
        if change < LOGIT_TOL {
            converged = true;
            break;
        }
    }
    let eta = xm * &beta;
    let probabilities: Vec<f64> = eta.iter().map(|&e| sigmoid(e)).collect();
    if !converged {
        return Err(Error::Separation(format!(
            "no convergence after {LOGIT_MAX_ITER} iterations"
        )));
    }
    if eta.amax() > 30.0 {
        return Err(Error::Separation(
            "fitted probabilities saturated at 0 or 1".into(),
        ));
    }
    // final information at the converged estimate
    let w: Vec<f64> = probabilities.iter().map(|&pi| pi * (1.0 - pi)).collect();
    let mut xw = xm.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    if let Some((_, inv)) = solve_spd(xm.transpose() * &xw, &DVector::zeros(k)) {
        cov = inv;
    }
    let se: Vec<f64> = (0..k).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
    let ll = bernoulli_loglik(&yf, &probabilities);
    let ybar = positives as f64 / n as f64;
    let ll0 = bernoulli_loglik(&yf, &vec![ybar; n]);
    let r_squared = if ll0 < 0.0 {
        (1.0 - ll / ll0).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let normal = Normal::standard();
    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let p_values = coefficients
        .iter()
        .zip(&se)
        .map(|(&b, &s)| two_sided_p(b, s, |t| normal.cdf(t)))
        .collect();
    Ok(LogitFit {
        result: FitResult {
            names: x.names.clone(),
            coefficients,
            robust_se: se,
            p_values,
            r_squared,
            n_obs: n,
            se_kind: "model",
        },
        probabilities,
        log_likelihood: ll,
        iterations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UTestResult {
    /// U for the first sample.
    pub u_statistic: f64,
    /// U for the second sample; `u_statistic + u_other = n1 * n2`.
    pub u_other: f64,
    pub z: f64,
    /// Two-sided p value.
    pub p_value: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled sample `a ++ b`, plus the tie groups' sizes.
fn pooled_midranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let n = pooled.len();
    let mut ranks = vec![0.0; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        for item in &pooled[i..j] {
            ranks[item.1] = mid;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn check_samples(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Invalid(
            "Mann-Whitney test needs two non-empty samples".into(),
        ));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Invalid(
            "Mann-Whitney test on non-finite values".into(),
        ));
    }
    Ok(())
}

/// Mann–Whitney U test, normal approximation with tie-corrected variance and
/// continuity correction.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    check_samples(a, b)?;
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let (ranks, ties) = pooled_midranks(a, b);
    let rank_sum_a: f64 = ranks[..a.len()].iter().sum();
    let u_a = rank_sum_a - n1 * (n1 + 1.0) / 2.0;
    let u_b = n1 * n2 - u_a;
    let mu = n1 * n2 / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)).max(1.0));
    if var <= 0.0 {
        return Ok(UTestResult {
            u_statistic: u_a,
            u_other: u_b,
            z: 0.0,
            p_value: 1.0,
            exact: false,
        });
    }
    let dev = (u_a - mu).abs();
    let z_abs = (dev - 0.5).max(0.0) / var.sqrt();
    let z = if u_a >= mu { z_abs } else { -z_abs };
    let p = (2.0 * (1.0 - Normal::standard().cdf(z_abs))).clamp(0.0, 1.0);
    Ok(UTestResult {
        u_statistic: u_a,
        u_other: u_b,
        z,
        p_value: p,
        exact: false,
    })
}

/// Largest pooled sample size accepted by [`mann_whitney_u_exact`].
pub const EXACT_MAX_N: usize = 60;

/// Mann–Whitney U test with the exact permutation distribution of the
/// midrank sum (ties handled by conditioning on the observed ranks).
pub fn mann_whitney_u_exact(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    check_samples(a, b)?;
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    if n > EXACT_MAX_N {
        return Err(Error::Invalid(format!(
            "exact Mann-Whitney limited to {EXACT_MAX_N} observations, got {n}"
        )));
    }
    let approx = mann_whitney_u(a, b)?;
    let (ranks, _) = pooled_midranks(a, b);
    // doubled midranks are integers
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // counts[k][s]: subsets of size k with doubled rank sum s
    let mut counts = vec![vec![0u128; max_sum + 1]; n1 + 1];
    counts[0][0] = 1;
    for &r in &doubled {
        for k in (1..=n1).rev() {
            let (lower, upper) = counts.split_at_mut(k);
            let (prev, cur) = (&lower[k - 1], &mut upper[0]);
            for s in (r..=max_sum).rev() {
                cur[s] += prev[s - r];
            }
        }
    }
    let observed: usize = doubled[..n1].iter().sum();
    // 2U = doubled_sum - n1 (n1 + 1); deviation from the mean n1 n2 in the same units
    let base = n1 * (n1 + 1);
    let center = n1 * n2;
    let dev = |s: usize| (s as i64 - base as i64 - center as i64).unsigned_abs();
    let observed_dev = dev(observed);
    let total: u128 = counts[n1].iter().sum();
    let extreme: u128 = counts[n1]
        .iter()
        .enumerate()
        .filter(|&(s, &c)| c > 0 && dev(s) >= observed_dev)
        .map(|(_, &c)| c)
        .sum();
    Ok(UTestResult {
        p_value: (extreme as f64 / total as f64).min(1.0),
        exact: true,
        ..approx
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design(names: &[&str], cols: Vec<Vec<f64>>) -> DesignMatrix {
        DesignMatrix::from_columns(names.iter().map(|s| s.to_string()).collect(), cols).unwrap()
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(quantile(&[4.2], 0.3).unwrap(), 4.2);
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert!((quantile(&v, 0.9).unwrap() - 9.1).abs() < 1e-12);
        assert_eq!(quantile(&[4.0, 1.0, 3.0, 2.0], 0.5).unwrap(), 2.5);
        assert!(quantile(&[], 0.5).is_err());
        assert!(quantile(&[1.0], 1.5).is_err());
        let mut sorted = v.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(
            quantile_sorted(&sorted, 0.9).unwrap(),
            quantile(&v, 0.9).unwrap()
        );
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 10.0);
    }

    #[test]
    fn ols_exact_line() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let d = design(&["_cons", "x"], vec![vec![1.0; 20], x]);
        let fit = ols_robust(&d, &y).unwrap().result;
        assert!((fit.coefficient("_cons").unwrap() - 3.0).abs() < 1e-10);
        assert!((fit.coefficient("x").unwrap() - 2.0).abs() < 1e-10);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ols_constant_response() {
        let x: Vec<f64> = (0..20).map(f64::from).collect();
        let d = design(&["_cons", "x"], vec![vec![1.0; 20], x]);
        let fit = ols_robust(&d, &[5.0; 20]).unwrap().result;
        assert!(fit.coefficient("x").unwrap().abs() < 1e-12);
        assert_eq!(fit.r_squared, 0.0);
    }

    #[test]
    fn ols_rank_deficiency_names_columns() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let d = design(&["_cons", "x", "x_copy"], vec![vec![1.0; 10], x.clone(), x]);
        match ols_robust(&d, &[1.0; 10]) {
            Err(Error::RankDeficient(cols)) => assert_eq!(cols, vec!["x_copy".to_string()]),
            other => panic!("expected rank deficiency, got {other:?}"),
        }
    }

    /// Independent route: normal equations solved by Gaussian elimination.
    fn normal_equations(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let k = cols.len();
        let mut a = vec![vec![0.0; k + 1]; k];
        for i in 0..k {
            for j in 0..k {
                a[i][j] = cols[i].iter().zip(&cols[j]).map(|(p, q)| p * q).sum();
            }
            a[i][k] = cols[i].iter().zip(y).map(|(p, q)| p * q).sum();
        }
        for c in 0..k {
            let piv = (c..k)
                .max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs()))
                .unwrap();
            a.swap(c, piv);
            for r in 0..k {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for j in c..=k {
                        a[r][j] -= f * a[c][j];
                    }
                }
            }
        }
        (0..k).map(|i| a[i][k] / a[i][i]).collect()
    }

    #[test]
    fn ols_planted_recovery_against_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 200;
        let x1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                0.5 - 1.5 * x1[i] + 0.8 * x2[i] + 0.3 * rng.random_range(-1.0..1.0) * (1.0 + x2[i])
            })
            .collect();
        let cols = vec![vec![1.0; n], x1, x2];
        let d = design(&["_cons", "x1", "x2"], cols.clone());
        let fit = ols_robust(&d, &y).unwrap();
        let oracle = normal_equations(&cols, &y);
        for (b, o) in fit.result.coefficients.iter().zip(&oracle) {
            assert!((b - o).abs() < 1e-8, "{b} vs {o}");
        }
        for (j, planted) in [0.5, -1.5, 0.8].iter().enumerate() {
            let b = fit.result.coefficients[j];
            assert!((b - planted).abs() < 3.0 * fit.result.robust_se[j]);
        }
        // residuals orthogonal to every column
        for c in &cols {
            let dot: f64 = c.iter().zip(&fit.residuals).map(|(a, b)| a * b).sum();
            let norm: f64 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(dot.abs() / norm < 1e-8);
        }
    }

    #[test]
    fn hc1_matches_hand_computation() {
        // y = [1, 2, 4], x = [0, 1, 2]; HC1 via explicit sandwich
        let d = design(&["_cons", "x"], vec![vec![1.0; 3], vec![0.0, 1.0, 2.0]]);
        let y = [1.0, 2.0, 4.0];
        let fit = ols_robust(&d, &y).unwrap();
        // beta = (5/6, 3/2); residuals = (1/6, -1/3, 1/6)
        let e = [1.0 / 6.0, -1.0 / 3.0, 1.0 / 6.0];
        for (a, b) in fit.residuals.iter().zip(e) {
            assert!((a - b).abs() < 1e-12);
        }
        // (X'X)^-1 = [[5/6, -1/2], [-1/2, 1/2]]; meat = sum e^2 x x'
        let xs = [0.0, 1.0, 2.0];
        let mut meat = [[0.0; 2]; 2];
        for i in 0..3 {
            let row = [1.0, xs[i]];
            for a in 0..2 {
                for b in 0..2 {
                    meat[a][b] += e[i] * e[i] * row[a] * row[b];
                }
            }
        }
        let bread = [[5.0 / 6.0, -0.5], [-0.5, 0.5]];
        let mut v = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                for c in 0..2 {
                    for d2 in 0..2 {
                        v[a][b] += bread[a][c] * meat[c][d2] * bread[d2][b];
                    }
                }
            }
        }
        let scale = 3.0 / 1.0;
        assert!((fit.result.robust_se[0] - (v[0][0] * scale).sqrt()).abs() < 1e-12);
        assert!((fit.result.robust_se[1] - (v[1][1] * scale).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn vif_cases() {
        // centered orthogonal columns
        let a = vec![1.0, -1.0, 1.0, -1.0];
        let b = vec![1.0, 1.0, -1.0, -1.0];
        let d = design(&["_cons", "a", "b"], vec![vec![1.0; 4], a.clone(), b]);
        for (_, v) in vif(&d).unwrap() {
            assert!((v - 1.0).abs() < 1e-9);
        }
        let dup = design(&["_cons", "a", "a2"], vec![vec![1.0; 4], a.clone(), a]);
        assert!(vif(&dup).unwrap().iter().all(|(_, v)| v.is_infinite()));
    }

    #[test]
    fn vif_two_predictor_closed_form() {
        // build x2 with sample correlation exactly 0.6 to x1 via orthogonal construction
        let u = [1.0, -1.0, 1.0, -1.0, 0.0, 0.0];
        let w = [1.0, 1.0, -1.0, -1.0, 1.0, -1.0];
        let nu = u.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let nw = w.iter().map(|v: &f64| v * v).sum::<f64>().sqrt();
        let x1: Vec<f64> = u.iter().map(|v| v / nu).collect();
        let x2: Vec<f64> = u
            .iter()
            .zip(&w)
            .map(|(a, b)| 0.6 * a / nu + 0.8 * b / nw)
            .collect();
        let d = design(&["_cons", "x1", "x2"], vec![vec![1.0; 6], x1, x2]);
        for (_, v) in vif(&d).unwrap() {
            assert!((v - 1.5625).abs() < 1e-9, "{v}");
        }
    }

    #[test]
    fn logit_intercept_only_matches_mean() {
        let y: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
        let d = design(&["_cons"], vec![vec![1.0; 40]]);
        let fit = logit_fit(&d, &y).unwrap();
        for p in &fit.probabilities {
            assert!((p - 0.25).abs() < 1e-10);
        }
    }

    #[test]
    fn logit_symmetric_fixture_zero_slope() {
        let x = vec![-2.0, -1.0, 1.0, 2.0, -2.0, -1.0, 1.0, 2.0];
        let y = [true, false, true, false, false, true, false, true];
        let d = design(&["_cons", "x"], vec![vec![1.0; 8], x]);
        let fit = logit_fit(&d, &y).unwrap();
        assert!(fit.result.coefficient("x").unwrap().abs() < 1e-10);
    }

    #[test]
    fn logit_separation_errors() {
        let x = vec![-3.0, -2.0, -1.0, 1.0, 2.0, 3.0];
        let y = [false, false, false, true, true, true];
        let d = design(&["_cons", "x"], vec![vec![1.0; 6], x]);
        assert!(matches!(logit_fit(&d, &y), Err(Error::Separation(_))));
        let d1 = design(&["_cons"], vec![vec![1.0; 3]]);
        assert!(logit_fit(&d1, &[true, true, true]).is_err());
    }

    #[test]
    fn logit_planted_recovery_and_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 500;
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (a, b) = (-0.4, 1.2);
        let y: Vec<bool> = x
            .iter()
            .map(|&xi| rng.random::<f64>() < sigmoid(a + b * xi))
            .collect();
        let d = design(&["_cons", "x"], vec![vec![1.0; n], x.clone()]);
        let fit = logit_fit(&d, &y).unwrap();
        let r = &fit.result;
        assert!((r.coefficients[0] - a).abs() < 3.0 * r.robust_se[0]);
        assert!((r.coefficients[1] - b).abs() < 3.0 * r.robust_se[1]);
        // score equation: mean fitted probability equals mean outcome
        let ybar = y.iter().filter(|&&v| v).count() as f64 / n as f64;
        let pbar = fit.probabilities.iter().sum::<f64>() / n as f64;
        assert!((ybar - pbar).abs() < 1e-8);
        // coarse-to-fine grid search on the log-likelihood
        let yf: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();
        let ll = |a: f64, b: f64| {
            let p: Vec<f64> = x.iter().map(|&xi| sigmoid(a + b * xi)).collect();
            bernoulli_loglik(&yf, &p)
        };
        let (mut ca, mut cb, mut step) = (0.0, 0.0, 1.0);
        for _ in 0..40 {
            let mut best = (ll(ca, cb), ca, cb);
            for da in -4..=4 {
                for db in -4..=4 {
                    let (ta, tb) = (ca + da as f64 * step / 4.0, cb + db as f64 * step / 4.0);
                    let v = ll(ta, tb);
                    if v > best.0 {
                        best = (v, ta, tb);
                    }
                }
            }
            (ca, cb) = (best.1, best.2);
            step *= 0.6;
        }
        assert!((ll(ca, cb) - fit.log_likelihood).abs() < 1e-6);
        assert!(fit.log_likelihood >= ll(ca, cb) - 1e-9);
    }

    #[test]
    fn mwu_basic_cases() {
        let a = [1.0, 2.0, 3.0];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.u_statistic, 4.5);
        assert!((r.p_value - 1.0).abs() < 1e-12);
        let hi = mann_whitney_u(&[10.0, 11.0, 12.0], &[1.0, 2.0]).unwrap();
        assert_eq!(hi.u_statistic, 6.0);
        let ex = mann_whitney_u_exact(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(ex.u_statistic, 0.0);
        assert!((ex.p_value - 1.0 / 3.0).abs() < 1e-12);
        let same = mann_whitney_u(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert_eq!(same.p_value, 1.0);
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
    }

    #[test]
    fn mwu_matches_scipy_reference() {
        // scipy.stats.mannwhitneyu(a, b, method="asymptotic", use_continuity=True)
        let a = [1.0, 4.0, 2.0, 8.0, 5.0, 5.0];
        let b = [3.0, 7.0, 9.0, 6.0, 10.0, 5.0, 11.0];
        let r = mann_whitney_u(&a, &b).unwrap();
        assert_eq!(r.u_statistic, 8.0);
        // one tie group of three: var = 42/12 * (14 - 24/(13*12)), z = (|8-21|-0.5)/sd
        let var = 42.0 / 12.0 * (14.0 - 24.0 / 156.0);
        let z = (13.0 - 0.5) / f64::sqrt(var);
        let p = 2.0 * (1.0 - Normal::standard().cdf(z));
        assert!((r.p_value - p).abs() < 1e-12);
        assert!((r.p_value - 0.072556959803).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn quantile_monotone_and_bracketed(v in proptest::collection::vec(-100.0f64..100.0, 1..40), q1 in 0.0f64..1.0, q2 in 0.0f64..1.0) {
                let (lo, hi) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
                let a = quantile(&v, lo).unwrap();
                let b = quantile(&v, hi).unwrap();
                prop_assert!(a <= b + 1e-12);
                let min = v.iter().copied().fold(f64::INFINITY, f64::min);
                let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(a >= min && b <= max);
            }

            #[test]
            fn u_statistics_sum(a in proptest::collection::vec(0u8..6, 1..12), b in proptest::collection::vec(0u8..6, 1..12)) {
                let a: Vec<f64> = a.into_iter().map(f64::from).collect();
                let b: Vec<f64> = b.into_iter().map(f64::from).collect();
                let r = mann_whitney_u(&a, &b).unwrap();
                prop_assert_eq!(r.u_statistic + r.u_other, (a.len() * b.len()) as f64);
                prop_assert!(r.u_statistic >= 0.0 && r.u_statistic <= (a.len() * b.len()) as f64);
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }

            #[test]
            fn ols_row_order_invariant(seed in 0u64..1000) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = 30;
                let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y: Vec<f64> = x.iter().map(|v| 1.0 + v + rng.random_range(-0.2..0.2)).collect();
                let d = design(&["_cons", "x"], vec![vec![1.0; n], x.clone()]);
                let f1 = ols_robust(&d, &y).unwrap().result;
                let perm: Vec<usize> = (0..n).rev().collect();
                let y2: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
                let f2 = ols_robust(&d.select_rows(&perm), &y2).unwrap().result;
                for (a, b) in f1.coefficients.iter().zip(&f2.coefficients) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}
