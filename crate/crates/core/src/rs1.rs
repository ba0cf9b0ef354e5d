//! Error covariance and per-tap marginal activity probabilities on top of
//! the greedy chain.

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::sabmp::{normalize_log_metrics, support_metric, BernoulliPrior, SolverSettings, SparseEstimate};
use crate::scalar::{Cplx, Real};

/// Largest detected set the subset lattice is enumerated for.
pub const MAX_LATTICE_TAPS: usize = 20;

/// `R = σ² Σ_S p(S|y) (A_S^H A_S)^{-1}` embedded in the full `L x L` frame.
#[derive(Debug, Clone)]
pub struct ErrorCovariance<T> {
    pub matrix: CMat<T>,
    pub mmse_trace: T,
    /// Indices with a nonzero row/column.
    pub support: Vec<usize>,
}

impl<T: Real> ErrorCovariance<T> {
    /// `x^H R x` restricted to the nonzero block.
    pub fn quadratic_form(&self, x: &[Cplx<T>]) -> T {
        let mut acc = Cplx::new(T::zero(), T::zero());
        for &r in &self.support {
            for &c in &self.support {
                acc += x[r].conj() * self.matrix.get(r, c) * x[c];
            }
        }
        acc.re
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            matrix: CMat::zeros(len, len),
            mmse_trace: T::zero(),
            support: Vec::new(),
        }
    }
}

/// Reuses the Gram inverses cached on each dominant support.
pub fn error_covariance<T: Real>(est: &SparseEstimate<T>, noise_var: T) -> ErrorCovariance<T> {
    let l = est.channel_len;
    let mut m = CMat::zeros(l, l);
    for s in &est.supports {
        let n = s.indices.len();
        let w = s.posterior * noise_var;
        for (a, &ra) in s.indices.iter().enumerate() {
            for (b, &rb) in s.indices.iter().enumerate() {
                m.add_at(ra, rb, s.gram_inverse[a * n + b] * w);
            }
        }
    }
    let mut support = est.detected().to_vec();
    support.sort_unstable();
    let mmse_trace = m.trace().re;
    ErrorCovariance {
        matrix: m,
        mmse_trace,
        support,
    }
}

/// All nonempty subsets of `positions` (`0..t`), by size then lexicographically.
fn position_subsets(t: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::with_capacity((1usize << t) - 1);
    for size in 1..=t {
        let mut comb: Vec<usize> = (0..size).collect();
        loop {
            out.push(comb.clone());
            // Advance to the next combination in lexicographic order.
            let mut i = size;
            while i > 0 && comb[i - 1] == t - size + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            comb[i - 1] += 1;
            for j in i..size {
                comb[j] = comb[j - 1] + 1;
            }
        }
    }
    out
}

/// The `2^T - 1` nonempty subsets of the detected taps, ordered by size and
/// then lexicographically by detection rank.
pub fn enumerate_marginal_supports(detected: &[usize]) -> Result<Vec<Vec<usize>>> {
    if detected.len() > MAX_LATTICE_TAPS {
        return Err(Error::config(format!(
            "{} detected taps exceed the lattice limit of {MAX_LATTICE_TAPS}",
            detected.len()
        )));
    }
    Ok(position_subsets(detected.len())
        .into_iter()
        .map(|p| p.into_iter().map(|i| detected[i]).collect())
        .collect())
}

#[derive(Debug, Clone)]
pub struct LatticeEntry<T> {
    pub taps: Vec<usize>,
    pub log_metric: T,
    pub posterior: T,
    /// Metric taken from the greedy run rather than recomputed.
    pub reused: bool,
}

#[derive(Debug, Clone)]
pub struct MarginalSet<T> {
    /// Detected taps in detection order.
    pub detected: Vec<usize>,
    /// `λ(α_i)` aligned with `detected`.
    pub marginals: Vec<T>,
    pub lattice: Vec<LatticeEntry<T>>,
}

impl<T: Real> MarginalSet<T> {
    /// Marginals scattered into a length-`len` vector (zero off the detected set).
    pub fn dense(&self, len: usize) -> Vec<T> {
        let mut v = vec![T::zero(); len];
        for (&i, &m) in self.detected.iter().zip(&self.marginals) {
            v[i] = m;
        }
        v
    }
}

/// Posteriors over the detected-tap lattice and the per-tap marginals.
///
/// Subsets of the form `S_{s-1} ∪ {α_j}` were scored during the greedy run
/// and are reused; only the remaining subsets are factorized afresh.
pub fn compute_marginals<T: Real>(
    est: &SparseEstimate<T>,
    a: &CMat<T>,
    y: &[Cplx<T>],
    prior: &BernoulliPrior<T>,
    noise_var: T,
    settings: &SolverSettings,
) -> Result<MarginalSet<T>> {
    let detected = est.detected().to_vec();
    if detected.len() > MAX_LATTICE_TAPS {
        return Err(Error::config(format!(
            "{} detected taps exceed the lattice limit of {MAX_LATTICE_TAPS}",
            detected.len()
        )));
    }
    let mut lattice = Vec::new();
    for pos in position_subsets(detected.len()) {
        let s = pos.len();
        let taps: Vec<usize> = pos.iter().map(|&p| detected[p]).collect();
        let on_chain_prefix = pos[..s - 1].iter().enumerate().all(|(i, &p)| i == p);
        let cached = if on_chain_prefix {
            est.stage_metrics
                .get(s - 1)
                .map(|m| m[detected[pos[s - 1]]])
                .filter(|m| m.is_finite())
        } else {
            None
        };
        let (log_metric, reused) = match cached {
            Some(m) => (m, true),
            None => {
                let m = support_metric(&taps, y, a, prior, noise_var, settings)
                    .unwrap_or(T::neg_infinity());
                (m, false)
            }
        };
        lattice.push(LatticeEntry {
            taps,
            log_metric,
            posterior: T::zero(),
            reused,
        });
    }
    finish_marginals(detected, lattice)
}

fn finish_marginals<T: Real>(detected: Vec<usize>, mut lattice: Vec<LatticeEntry<T>>) -> Result<MarginalSet<T>> {
    let logs: Vec<T> = lattice.iter().map(|e| e.log_metric).collect();
    let (post, _) = normalize_log_metrics(&logs);
    for (e, p) in lattice.iter_mut().zip(post) {
        e.posterior = p;
    }
    let marginals = detected
        .iter()
        .map(|t| {
            lattice
                .iter()
                .filter(|e| e.taps.contains(t))
                .map(|e| e.posterior)
                .sum()
        })
        .collect();
    Ok(MarginalSet {
        detected,
        marginals,
        lattice,
    })
}

/// Exhaustive references for small problems (`L ≤ 10`).
pub mod exhaustive {
    use super::*;
    use crate::sabmp::blue_estimate;
    use crate::scalar::czero;

    pub const MAX_EXHAUSTIVE_LEN: usize = 10;

    /// Every support of `0..L` with size `1..=max_size`, scored and normalized.
    pub fn all_supports<T: Real>(
        a: &CMat<T>,
        y: &[Cplx<T>],
        prior: &BernoulliPrior<T>,
        noise_var: T,
        max_size: usize,
        settings: &SolverSettings,
    ) -> Result<Vec<LatticeEntry<T>>> {
        let l = a.cols();
        if l > MAX_EXHAUSTIVE_LEN {
            return Err(Error::config(format!(
                "exhaustive enumeration limited to L <= {MAX_EXHAUSTIVE_LEN}"
            )));
        }
        let mut entries: Vec<LatticeEntry<T>> = position_subsets(l)
            .into_iter()
            .filter(|s| s.len() <= max_size)
            .map(|taps| {
                let log_metric = support_metric(&taps, y, a, prior, noise_var, settings)
                    .unwrap_or(T::neg_infinity());
                LatticeEntry {
                    taps,
                    log_metric,
                    posterior: T::zero(),
                    reused: false,
                }
            })
            .collect();
        let logs: Vec<T> = entries.iter().map(|e| e.log_metric).collect();
        let (post, _) = normalize_log_metrics(&logs);
        for (e, p) in entries.iter_mut().zip(post) {
            e.posterior = p;
        }
        Ok(entries)
    }

    /// Per-tap marginals over all supports up to `max_size`.
    pub fn marginals<T: Real>(
        a: &CMat<T>,
        y: &[Cplx<T>],
        prior: &BernoulliPrior<T>,
        noise_var: T,
        max_size: usize,
        settings: &SolverSettings,
    ) -> Result<Vec<T>> {
        let entries = all_supports(a, y, prior, noise_var, max_size, settings)?;
        let mut m = vec![T::zero(); a.cols()];
        for e in &entries {
            for &t in &e.taps {
                m[t] += e.posterior;
            }
        }
        Ok(m)
    }

    /// Posterior-weighted BLUE over all supports up to `max_size`.
    pub fn ammse<T: Real>(
        a: &CMat<T>,
        y: &[Cplx<T>],
        prior: &BernoulliPrior<T>,
        noise_var: T,
        max_size: usize,
        settings: &SolverSettings,
    ) -> Result<Vec<Cplx<T>>> {
        let entries = all_supports(a, y, prior, noise_var, max_size, settings)?;
        let mut h = vec![czero(); a.cols()];
        for e in entries.iter().filter(|e| e.posterior > T::zero()) {
            let x = blue_estimate(&a.select_cols(&e.taps)?, y)?;
            for (&t, v) in e.taps.iter().zip(x) {
                h[t] += v * e.posterior;
            }
        }
        Ok(h)
    }
}
