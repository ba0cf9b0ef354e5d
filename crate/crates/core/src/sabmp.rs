//! Greedy Bayesian matching pursuit over nested dominant supports.
//!
//! For a support `S` the log-posterior metric is
//!
//! ```text
//! ν(S) = -‖P⊥_S y‖² / (2σ²) + Σ_{i∈S} ln λ_i + Σ_{j∉S} ln(1 - λ_j)
//! ```
//!
//! The Gaussian likelihood normalizer is omitted: it does not depend on `S`
//! and cancels once posteriors are normalized over the dominant set.
//! Conditional means are replaced by least-squares (BLUE) fits, so nothing
//! is assumed about the amplitude distribution of the active taps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMat, IncrementalQr};
use crate::scalar::{czero, dot_conj, log_sum_exp, norm_sqr, Cplx, Real};

/// Bernoulli activity probabilities are kept inside `[ε, 1 - ε]`.
pub const PRIOR_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Noise variance initial guess as a fraction of the observation variance.
    pub noise_scale: f64,
    /// Standard-normal quantile used to size `T_max` above the expected
    /// number of active taps.
    pub tmax_z: f64,
    /// Candidates whose addition would push the Gram matrix past this
    /// condition number are skipped.
    pub cond_limit: f64,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            noise_scale: 0.3,
            tmax_z: 2.0,
            cond_limit: 1e12,
        }
    }
}

impl SolverSettings {
    fn rel_tol<T: Real>(&self) -> T {
        T::lit(1.0 / self.cond_limit)
    }
}

/// Independent, non-identical Bernoulli prior on tap activity.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliPrior<T> {
    lambdas: Vec<T>,
    log_odds: Vec<T>,
    log_off_total: T,
}

impl<T: Real> BernoulliPrior<T> {
    /// Clamps every probability into `[ε, 1 - ε]`.
    pub fn new(values: impl IntoIterator<Item = T>) -> Self {
        let eps = T::lit(PRIOR_EPS);
        let lambdas: Vec<T> = values
            .into_iter()
            .map(|v| if v.is_nan() { eps } else { v.max(eps).min(T::one() - eps) })
            .collect();
        let log_odds = lambdas.iter().map(|&l| (l / (T::one() - l)).ln()).collect();
        let log_off_total = lambdas.iter().map(|&l| (T::one() - l).ln()).sum();
        Self {
            lambdas,
            log_odds,
            log_off_total,
        }
    }

    pub fn uniform(len: usize, lambda: T) -> Self {
        Self::new(std::iter::repeat_n(lambda, len))
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambdas(&self) -> &[T] {
        &self.lambdas
    }

    /// `ln p(S)` for the given support.
    pub fn log_prior(&self, support: &[usize]) -> T {
        self.log_off_total + support.iter().map(|&i| self.log_odds[i]).sum::<T>()
    }
}

/// Output of the parameter initialization step.
#[derive(Debug, Clone)]
pub struct InitParams<T> {
    pub prior: BernoulliPrior<T>,
    pub lambda_init: T,
    pub noise_var: T,
    pub t_max: usize,
    /// `T_max` was reduced to the number of observations.
    pub t_max_capped: bool,
}

/// `min(L, ⌈Lλ + z √(Lλ(1-λ))⌉)`, at least one.
pub fn tmax_for_activity(channel_len: usize, lambda: f64, z: f64) -> usize {
    let l = channel_len as f64;
    let mean = l * lambda;
    let t = (mean + z * (mean * (1.0 - lambda)).max(0.0).sqrt()).ceil();
    (t.max(1.0) as usize).min(channel_len)
}

pub fn init_params<T: Real>(
    a: &CMat<T>,
    y: &[Cplx<T>],
    settings: &SolverSettings,
) -> Result<InitParams<T>> {
    let (k, l) = (a.rows(), a.cols());
    if k == 0 || l == 0 {
        return Err(Error::Shape(format!("empty {k}x{l} sensing matrix")));
    }
    let corr = a.adjoint_mul_vec(y)?;
    let mags: Vec<T> = corr.iter().map(|c| c.norm()).collect();
    let peak = mags.iter().copied().fold(T::zero(), T::max);
    let eps = T::lit(PRIOR_EPS);
    if peak <= T::zero() {
        return Ok(InitParams {
            prior: BernoulliPrior::uniform(l, eps),
            lambda_init: eps,
            noise_var: T::lit(1e-12),
            t_max: 1,
            t_max_capped: false,
        });
    }
    let half = peak / T::lit(2.0);
    let count = mags.iter().filter(|&&m| m >= half).count();
    let lambda_init = (T::from_count(count) / T::from_count(l)).max(eps).min(T::one() - eps);

    let n = T::from_count(y.len());
    let mean = y.iter().fold(czero::<T>(), |acc, v| acc + v) / n;
    let var = y.iter().map(|v| (v - mean).norm_sqr()).sum::<T>() / n;
    let noise_var = (T::lit(settings.noise_scale) * var).max(T::lit(1e-12));

    let t_full = tmax_for_activity(l, lambda_init.to_f64_lossy(), settings.tmax_z);
    let t_max = t_full.min(k);
    Ok(InitParams {
        prior: BernoulliPrior::uniform(l, lambda_init),
        lambda_init,
        noise_var,
        t_max,
        t_max_capped: t_max < t_full,
    })
}

fn check_support(support: &[usize], l: usize) -> Result<()> {
    if let Some(&bad) = support.iter().find(|&&i| i >= l) {
        return Err(Error::Index { index: bad, bound: l });
    }
    Ok(())
}

/// Order-recursive factorization of `A_S` built column by column.
pub(crate) fn factor_support<T: Real>(
    a: &CMat<T>,
    y: &[Cplx<T>],
    support: &[usize],
    rel_tol: T,
) -> Result<IncrementalQr<T>> {
    check_support(support, a.cols())?;
    if support.len() > a.rows() {
        return Err(Error::IllConditioned {
            support: support.to_vec(),
        });
    }
    let mut qr = IncrementalQr::new(y);
    for &i in support {
        qr.push(&a.column(i), rel_tol).map_err(|_| Error::IllConditioned {
            support: support.to_vec(),
        })?;
    }
    Ok(qr)
}

/// `ν(S)` evaluated from scratch.
pub fn support_metric<T: Real>(
    support: &[usize],
    y: &[Cplx<T>],
    a: &CMat<T>,
    prior: &BernoulliPrior<T>,
    noise_var: T,
    settings: &SolverSettings,
) -> Result<T> {
    if y.len() != a.rows() || prior.len() != a.cols() {
        return Err(Error::Shape("observation, matrix and prior disagree".into()));
    }
    let qr = factor_support(a, y, support, settings.rel_tol())?;
    Ok(metric_value(qr.residual_norm_sqr(), noise_var, prior.log_prior(support)))
}

#[inline]
fn metric_value<T: Real>(residual: T, noise_var: T, log_prior: T) -> T {
    -residual / (T::lit(2.0) * noise_var) + log_prior
}

/// `(A_S^H A_S)^{-1} A_S^H y` for a matrix already restricted to the support.
pub fn blue_estimate<T: Real>(a_s: &CMat<T>, y: &[Cplx<T>]) -> Result<Vec<Cplx<T>>> {
    if y.len() != a_s.rows() {
        return Err(Error::Shape("observation length differs from matrix rows".into()));
    }
    let support: Vec<usize> = (0..a_s.cols()).collect();
    let qr = factor_support(a_s, y, &support, T::lit(1e-12))?;
    Ok(qr.solve())
}

/// One member of the nested dominant-support chain.
#[derive(Debug, Clone)]
pub struct DominantSupport<T> {
    /// Tap indices in detection order.
    pub indices: Vec<usize>,
    pub log_metric: T,
    /// Posterior normalized over the chain.
    pub posterior: T,
    /// BLUE coefficients aligned with `indices`.
    pub cond_mean: Vec<Cplx<T>>,
    /// `(A_S^H A_S)^{-1}`, row-major, aligned with `indices`.
    pub gram_inverse: Vec<Cplx<T>>,
}

#[derive(Debug, Clone)]
pub struct SparseEstimate<T> {
    pub channel_len: usize,
    /// Requested chain length.
    pub t_max: usize,
    pub supports: Vec<DominantSupport<T>>,
    /// `stage_metrics[i][α] = ν(S_i ∪ {α})` for every candidate evaluated at
    /// stage `i + 1` (`S_0 = ∅`); `-inf` where not evaluated.
    pub stage_metrics: Vec<Vec<T>>,
    pub h_ammse: Vec<Cplx<T>>,
    /// Posteriors were not finite and uniform weights were used.
    pub uniform_fallback: bool,
    /// The chain stopped before `t_max` because no admissible candidate remained.
    pub truncated: bool,
    pub noise_var: T,
}

impl<T: Real> SparseEstimate<T> {
    /// Detected taps `T = {α_1, …}` in detection order.
    pub fn detected(&self) -> &[usize] {
        self.supports
            .last()
            .map(|s| s.indices.as_slice())
            .unwrap_or(&[])
    }

    pub fn posteriors(&self) -> Vec<T> {
        self.supports.iter().map(|s| s.posterior).collect()
    }

    /// An all-zero estimate with an empty chain.
    pub fn empty(channel_len: usize, noise_var: T) -> Self {
        Self {
            channel_len,
            t_max: 0,
            supports: Vec::new(),
            stage_metrics: Vec::new(),
            h_ammse: vec![czero(); channel_len],
            uniform_fallback: false,
            truncated: true,
            noise_var,
        }
    }
}

/// Normalized posteriors from log-metrics; uniform weights (and `true`) when
/// the metrics are not usable.
pub fn normalize_log_metrics<T: Real>(log_metrics: &[T]) -> (Vec<T>, bool) {
    let lse = log_sum_exp(log_metrics);
    if lse.is_finite() && log_metrics.iter().all(|m| !m.is_nan()) {
        let p: Vec<T> = log_metrics.iter().map(|&m| (m - lse).exp()).collect();
        let total: T = p.iter().copied().sum();
        if total.is_finite() && total > T::zero() {
            return (p.into_iter().map(|x| x / total).collect(), false);
        }
    }
    let n = T::from_count(log_metrics.len().max(1));
    (vec![T::one() / n; log_metrics.len()], true)
}

/// Builds the nested chain `S_1 ⊂ S_2 ⊂ … ⊂ S_{T_max}`, each stage extending
/// the previous one by the single index that maximizes `ν`.
pub fn greedy_search<T: Real>(
    a: &CMat<T>,
    y: &[Cplx<T>],
    prior: &BernoulliPrior<T>,
    noise_var: T,
    t_max: usize,
    settings: &SolverSettings,
) -> Result<SparseEstimate<T>> {
    let (k, l) = (a.rows(), a.cols());
    if y.len() != k || prior.len() != l {
        return Err(Error::Shape(format!(
            "observation {} / prior {} against a {k}x{l} matrix",
            y.len(),
            prior.len()
        )));
    }
    if t_max == 0 || t_max > k.min(l) {
        return Err(Error::config(format!(
            "T_max = {t_max} must lie in 1..={}",
            k.min(l)
        )));
    }
    if !(noise_var > T::zero()) || !noise_var.is_finite() {
        return Err(Error::config("noise variance must be positive and finite"));
    }
    let rel_tol: T = settings.rel_tol();
    let two_var = T::lit(2.0) * noise_var;
    let cols = a.columns();
    let energy: Vec<T> = cols.iter().map(|c| norm_sqr(c)).collect();
    let mut proj = cols.clone();
    let mut qr = IncrementalQr::new(y);
    let mut chosen = vec![false; l];
    let mut indices: Vec<usize> = Vec::with_capacity(t_max);
    let mut supports: Vec<DominantSupport<T>> = Vec::with_capacity(t_max);
    let mut stage_metrics = Vec::with_capacity(t_max);
    let mut truncated = false;

    for _stage in 0..t_max {
        let resid = qr.residual().to_vec();
        let rn = norm_sqr(&resid);
        let base_prior = prior.log_prior(&indices);
        let mut metrics = vec![T::neg_infinity(); l];
        for j in 0..l {
            if chosen[j] {
                continue;
            }
            let pe = norm_sqr(&proj[j]);
            if !(pe > rel_tol * energy[j]) {
                continue;
            }
            let c = dot_conj(&proj[j], &resid);
            let res_j = (rn - c.norm_sqr() / pe).max(T::zero());
            metrics[j] = -res_j / two_var + base_prior + prior.log_odds[j];
        }
        // Highest metric wins; ties go to the smallest index.
        let mut pick = None;
        let mut ranked: Vec<usize> = (0..l).filter(|&j| metrics[j].is_finite()).collect();
        ranked.sort_by(|&x, &y| metrics[y].partial_cmp(&metrics[x]).unwrap().then(x.cmp(&y)));
        for j in ranked {
            if qr.push(&cols[j], rel_tol).is_ok() {
                pick = Some(j);
                break;
            }
            metrics[j] = T::neg_infinity();
        }
        let Some(best) = pick else {
            truncated = true;
            break;
        };
        chosen[best] = true;
        indices.push(best);
        let q = qr.last_basis().expect("column just appended").to_vec();
        for (j, pj) in proj.iter_mut().enumerate() {
            if chosen[j] {
                continue;
            }
            let c = dot_conj(&q, pj);
            for (v, qi) in pj.iter_mut().zip(&q) {
                *v -= qi * c;
            }
        }
        let log_metric = metric_value(qr.residual_norm_sqr(), noise_var, prior.log_prior(&indices));
        metrics[best] = log_metric;
        stage_metrics.push(metrics);
        supports.push(DominantSupport {
            indices: indices.clone(),
            log_metric,
            posterior: T::zero(),
            cond_mean: qr.solve(),
            gram_inverse: qr.gram_inverse(),
        });
    }

    let logs: Vec<T> = supports.iter().map(|s| s.log_metric).collect();
    let (post, uniform_fallback) = normalize_log_metrics(&logs);
    for (s, p) in supports.iter_mut().zip(post) {
        s.posterior = p;
    }
    let mut est = SparseEstimate {
        channel_len: l,
        t_max,
        supports,
        stage_metrics,
        h_ammse: Vec::new(),
        uniform_fallback,
        truncated,
        noise_var,
    };
    est.h_ammse = ammse_combine(&mut est);
    Ok(est)
}

/// Posterior-weighted sum of zero-padded conditional means. Posteriors are
/// renormalized over the chain first.
pub fn ammse_combine<T: Real>(est: &mut SparseEstimate<T>) -> Vec<Cplx<T>> {
    let logs: Vec<T> = est.supports.iter().map(|s| s.log_metric).collect();
    let (post, fallback) = normalize_log_metrics(&logs);
    est.uniform_fallback |= fallback;
    let mut h = vec![czero(); est.channel_len];
    for (s, p) in est.supports.iter_mut().zip(post) {
        s.posterior = p;
        for (&i, &v) in s.indices.iter().zip(&s.cond_mean) {
            h[i] += v * p;
        }
    }
    h
}

/// Initializes parameters from the observation and runs the greedy search.
pub fn estimate_with_init<T: Real>(
    a: &CMat<T>,
    y: &[Cplx<T>],
    settings: &SolverSettings,
) -> Result<(InitParams<T>, SparseEstimate<T>)> {
    let init = init_params(a, y, settings)?;
    let est = greedy_search(a, y, &init.prior, init.noise_var, init.t_max, settings)?;
    Ok((init, est))
}
