//! Re-estimation from pilots plus data carriers whose hard decisions are
//! both locally reliable and unanimous across the closed neighborhood.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::AntennaGrid;
use crate::coordination::{solve_with_prior, AntennaEstimate, CoordinationOutcome, PilotObservation};
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::rs1::ErrorCovariance;
use crate::sabmp::SolverSettings;
use crate::scalar::{log_sum_exp, Cplx, Real};
use crate::signal_model::{equalize_and_slice, frequency_response, sensing_rows, truncated_dft, QamAlphabet};

/// Upper bound returned for reliabilities whose ratio overflows.
pub const RELIABILITY_CAP: f64 = 1e300;

/// Per-carrier variance of the combined distortion `A R_h̃ A^H + σ² I`.
///
/// Only the diagonal is formed; the reliability metric treats carriers
/// independently.
#[derive(Debug, Clone, PartialEq)]
pub struct ReliabilityContext<T> {
    pub per_carrier_var: Vec<T>,
}

pub fn distortion_covariance<T: Real>(
    a_full: &CMat<T>,
    cov: &ErrorCovariance<T>,
    noise_var: T,
) -> Result<ReliabilityContext<T>> {
    if a_full.cols() != cov.matrix.rows() {
        return Err(Error::Shape(format!(
            "{}-column sensing matrix against a {}x{} covariance",
            a_full.cols(),
            cov.matrix.rows(),
            cov.matrix.cols()
        )));
    }
    let per_carrier_var = (0..a_full.rows())
        .map(|i| {
            let x: Vec<Cplx<T>> = a_full.row(i).iter().map(|v| v.conj()).collect();
            cov.quadratic_form(&x).max(T::zero()) + noise_var
        })
        .collect();
    Ok(ReliabilityContext { per_carrier_var })
}

/// Gaussian posterior of the nearest constellation point against all
/// others, computed in the log domain and capped at [`RELIABILITY_CAP`].
pub fn carrier_reliability<T: Real>(x_hat: Cplx<T>, variance: T, alphabet: &QamAlphabet<T>) -> Result<T> {
    if !(variance > T::zero()) {
        return Err(Error::InvalidContext(variance.to_f64_lossy()));
    }
    let nearest = alphabet.slice(x_hat);
    let log_num = -(x_hat - alphabet.point(nearest)).norm_sqr() / variance;
    let others: Vec<T> = alphabet
        .points()
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != nearest)
        .map(|(_, p)| -(x_hat - p).norm_sqr() / variance)
        .collect();
    let cap = T::lit(RELIABILITY_CAP).min(T::max_value());
    if others.is_empty() {
        return Ok(cap);
    }
    let log_ratio = log_num - log_sum_exp(&others);
    if log_ratio >= cap.ln() {
        return Ok(cap);
    }
    Ok(log_ratio.exp())
}

/// Reliability and hard decision of every decodable data carrier at one antenna.
#[derive(Debug, Clone, Default)]
pub struct CarrierReliability<T> {
    pub carriers: Vec<usize>,
    pub reliability: Vec<T>,
    pub decisions: Vec<usize>,
}

impl<T: Real> CarrierReliability<T> {
    /// Top-`u` carriers by reliability (ties to the lower carrier), sorted by carrier.
    pub fn top(&self, u: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.carriers.len()).collect();
        order.sort_by(|&a, &b| {
            self.reliability[b]
                .partial_cmp(&self.reliability[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(self.carriers[a].cmp(&self.carriers[b]))
        });
        let mut top: Vec<usize> = order.into_iter().take(u).map(|i| self.carriers[i]).collect();
        top.sort_unstable();
        top
    }

    fn decision(&self, carrier: usize) -> Option<usize> {
        self.carriers
            .binary_search(&carrier)
            .ok()
            .map(|i| self.decisions[i])
    }
}

/// Reliable carriers seen from one central antenna.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReliableSet {
    /// This antenna's own top-`U` carriers.
    pub local: Vec<usize>,
    /// Carriers in every neighborhood member's top-`U` set.
    pub common: Vec<usize>,
    /// Carriers of `common` with unanimous decisions.
    pub consensus: Vec<usize>,
    /// Agreed alphabet index for each carrier of `consensus`.
    pub symbols: Vec<usize>,
}

/// Two synchronous exchanges: top-`U` index sets, then hard decisions.
pub fn select_and_agree<T: Real>(
    grid: &AntennaGrid,
    per_antenna: &[CarrierReliability<T>],
    u: usize,
) -> Result<Vec<ReliableSet>> {
    if per_antenna.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} reliability sets for a {}-antenna grid",
            per_antenna.len(),
            grid.len()
        )));
    }
    let local: Vec<Vec<usize>> = per_antenna.par_iter().map(|r| r.top(u)).collect();
    Ok((0..grid.len())
        .into_par_iter()
        .map(|c| {
            let nb = grid.closed_neighborhood(c);
            let common: Vec<usize> = local[c]
                .iter()
                .copied()
                .filter(|k| nb.iter().all(|&j| local[j].binary_search(k).is_ok()))
                .collect();
            let mut consensus = Vec::new();
            let mut symbols = Vec::new();
            for &k in &common {
                let mine = per_antenna[c].decision(k);
                if mine.is_some() && nb.iter().all(|&j| per_antenna[j].decision(k) == mine) {
                    consensus.push(k);
                    symbols.push(mine.unwrap());
                }
            }
            ReliableSet {
                local: local[c].clone(),
                common,
                consensus,
                symbols,
            }
        })
        .collect())
}

/// Pilot layout and symbols shared by every antenna.
#[derive(Debug, Clone)]
pub struct FrameLayout<T> {
    pub n_carriers: usize,
    pub channel_len: usize,
    /// Sorted pilot carriers.
    pub pilots: Vec<usize>,
    /// Pilot symbol per entry of `pilots`.
    pub pilot_symbols: Vec<Cplx<T>>,
}

impl<T: Real> FrameLayout<T> {
    pub fn pilot_observation(&self, received: &[Cplx<T>]) -> PilotObservation<T> {
        let rows: Vec<(usize, Cplx<T>)> = self.pilots.iter().copied().zip(self.pilot_symbols.iter().copied()).collect();
        PilotObservation {
            sensing: sensing_rows(self.n_carriers, self.channel_len, &rows),
            received: self.pilots.iter().map(|&p| received[p]).collect(),
        }
    }

    fn is_pilot(&self) -> Vec<bool> {
        let mut mask = vec![false; self.n_carriers];
        for &p in &self.pilots {
            mask[p] = true;
        }
        mask
    }
}

/// Equalizes with the base estimate and scores every decodable data carrier.
pub fn antenna_reliability<T: Real>(
    layout: &FrameLayout<T>,
    dft: &CMat<T>,
    received: &[Cplx<T>],
    base: &AntennaEstimate<T>,
    alphabet: &QamAlphabet<T>,
) -> Result<CarrierReliability<T>> {
    let h_freq = frequency_response(&base.estimate.h_ammse, layout.n_carriers);
    let det = equalize_and_slice(received, &h_freq, alphabet)?;
    let ctx = distortion_covariance(dft, &base.covariance, base.estimate.noise_var)?;
    let pilot = layout.is_pilot();
    let mut out = CarrierReliability::default();
    for i in 0..layout.n_carriers {
        let Some(d) = det.decisions[i] else { continue };
        if pilot[i] {
            continue;
        }
        // Distortion seen after zero-forcing division by Ĥ(i).
        let v = ctx.per_carrier_var[i] / h_freq[i].norm_sqr();
        out.carriers.push(i);
        out.reliability.push(carrier_reliability(det.equalized[i], v, alphabet)?);
        out.decisions.push(d);
    }
    Ok(out)
}

/// Default share of data carriers each antenna ranks as reliable.
pub const DEFAULT_RELIABLE_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataAidedConfig {
    /// `U`. When unset, `⌈reliable_fraction · (N - K)⌉`.
    pub reliable_count: Option<usize>,
    pub reliable_fraction: f64,
    pub settings: SolverSettings,
}

impl Default for DataAidedConfig {
    fn default() -> Self {
        Self {
            reliable_count: None,
            reliable_fraction: DEFAULT_RELIABLE_FRACTION,
            settings: SolverSettings::default(),
        }
    }
}

#[derive(Debug)]
pub struct DataAidedOutcome<T> {
    pub estimates: Vec<Result<AntennaEstimate<T>>>,
    pub reliable: Vec<ReliableSet>,
    /// `true` where the consensus set was empty and the base estimate was kept.
    pub empty_consensus: Vec<bool>,
}

/// Pilot-plus-reliable-carrier re-estimation on top of a coordinated base
/// run. Each antenna re-solves with its base prior, noise variance and `T_max`.
pub fn run_data_aided<T: Real>(
    grid: &AntennaGrid,
    layout: &FrameLayout<T>,
    received: &[Vec<Cplx<T>>],
    base: &CoordinationOutcome<T>,
    alphabet: &QamAlphabet<T>,
    config: &DataAidedConfig,
) -> Result<DataAidedOutcome<T>> {
    if received.len() != grid.len() || base.estimates.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} received frames and {} base estimates for a {}-antenna grid",
            received.len(),
            base.estimates.len(),
            grid.len()
        )));
    }
    if received.iter().any(|r| r.len() != layout.n_carriers) {
        return Err(Error::Shape("received frame length differs from N".into()));
    }
    let data_carriers = layout.n_carriers.saturating_sub(layout.pilots.len());
    let u = config.reliable_count.unwrap_or_else(|| {
        let f = config.reliable_fraction.clamp(0.0, 1.0);
        (f * data_carriers as f64).ceil() as usize
    });
    let dft = truncated_dft::<T>(layout.n_carriers, layout.channel_len);
    let reliabilities: Vec<CarrierReliability<T>> = base
        .estimates
        .par_iter()
        .zip(received.par_iter())
        .map(|(b, y)| match b {
            Ok(b) => antenna_reliability(layout, &dft, y, b, alphabet),
            Err(_) => Ok(CarrierReliability::default()),
        })
        .collect::<Result<_>>()?;
    let reliable = select_and_agree(grid, &reliabilities, u)?;

    let (estimates, empty_consensus): (Vec<_>, Vec<_>) = base
        .estimates
        .par_iter()
        .zip(received.par_iter())
        .zip(reliable.par_iter())
        .map(|((b, y), set)| {
            let b = match b {
                Ok(b) => b,
                Err(e) => return (Err(Error::config(format!("base estimate unavailable: {e}"))), false),
            };
            if set.consensus.is_empty() {
                return (Ok(b.clone()), true);
            }
            let mut rows: Vec<(usize, Cplx<T>)> =
                layout.pilots.iter().copied().zip(layout.pilot_symbols.iter().copied()).collect();
            rows.extend(set.consensus.iter().zip(&set.symbols).map(|(&k, &s)| (k, alphabet.point(s))));
            rows.sort_by_key(|r| r.0);
            let obs = PilotObservation {
                sensing: sensing_rows(layout.n_carriers, layout.channel_len, &rows),
                received: rows.iter().map(|&(k, _)| y[k]).collect(),
            };
            (solve_with_prior(&obs, &b.setup, b.prior.clone(), &config.settings), false)
        })
        .unzip();
    Ok(DataAidedOutcome {
        estimates,
        reliable,
        empty_consensus,
    })
}
