use crate::scalar::{Cplx, Real};
use crate::signal_model::{bit_errors, equalize_and_slice, frequency_response, OfdmFrame, QamAlphabet};

/// Lowest reported NMSE.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// Error ratio below which a CIR estimate counts as a success (-10 dB).
pub const SUCCESS_RATIO: f64 = 0.1;

/// Error statistics of one trial for one algorithm. Every antenna's CIR
/// is one NMSE sample.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrialMetrics {
    /// Sum of `‖ĥ - h‖² / ‖h‖²` over antennas with a nonzero channel.
    pub ratio_sum: f64,
    /// Antennas with a nonzero channel.
    pub cirs: u64,
    /// Antennas whose ratio is below [`SUCCESS_RATIO`].
    pub successes: u64,
    /// Antennas skipped because their channel is zero.
    pub zero_channels: u64,
    pub bit_errors: u64,
    pub bits: u64,
    /// Antennas whose solver failed (their estimate counts as zero).
    pub failures: usize,
}

/// Aggregate over trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSummary {
    pub nmse_db: f64,
    pub ber: f64,
    pub success_rate: f64,
    /// CIRs dropped because the true channel was zero.
    pub excluded: u64,
}

/// `‖ĥ - h‖² / ‖h‖²`, or `None` for a zero channel.
pub fn error_ratio<T: Real>(truth: &[Cplx<T>], estimate: &[Cplx<T>]) -> Option<f64> {
    let energy: f64 = truth.iter().map(|v| v.norm_sqr().to_f64_lossy()).sum();
    if energy <= 0.0 {
        return None;
    }
    let err: f64 = truth
        .iter()
        .zip(estimate)
        .map(|(h, e)| (e - h).norm_sqr().to_f64_lossy())
        .sum();
    Some(err / energy)
}

/// Bit errors on the data carriers after zero-forcing with `estimate`.
/// Undecodable carriers count every bit as wrong.
pub fn count_bit_errors<T: Real>(
    received: &[Cplx<T>],
    estimate: &[Cplx<T>],
    frame: &OfdmFrame<T>,
    alphabet: &QamAlphabet<T>,
) -> (u64, u64) {
    let h = frequency_response(estimate, frame.n_carriers());
    let det = equalize_and_slice(received, &h, alphabet).expect("frame and response share N");
    let bps = alphabet.bits_per_symbol() as u64;
    let mut errors = 0;
    let mut bits = 0;
    for i in frame.data_indices() {
        bits += bps;
        errors += match det.decisions[i] {
            Some(d) => bit_errors(alphabet.label(d), alphabet.label(frame.symbol_indices[i])) as u64,
            None => bps,
        };
    }
    (errors, bits)
}

/// Metrics of one trial over the grid. `estimates[r]` is `None` where the
/// solver failed.
pub fn trial_metrics<T: Real>(
    truth: &[Vec<Cplx<T>>],
    estimates: &[Option<Vec<Cplx<T>>>],
    received: &[Vec<Cplx<T>>],
    frame: &OfdmFrame<T>,
    alphabet: &QamAlphabet<T>,
) -> TrialMetrics {
    let zero = vec![Cplx::new(T::zero(), T::zero()); truth.first().map_or(0, |h| h.len())];
    let mut out = TrialMetrics::default();
    for ((h, est), y) in truth.iter().zip(estimates).zip(received) {
        let e = match est {
            Some(e) => e,
            None => {
                out.failures += 1;
                &zero
            }
        };
        match error_ratio(h, e) {
            Some(r) => {
                out.ratio_sum += r;
                out.cirs += 1;
                out.successes += u64::from(r < SUCCESS_RATIO);
            }
            None => out.zero_channels += 1,
        }
        let (errs, bits) = count_bit_errors(y, e, frame, alphabet);
        out.bit_errors += errs;
        out.bits += bits;
    }
    out
}

impl TrialMetrics {
    /// Mean error ratio over the grid, `None` when every channel is zero.
    pub fn mean_ratio(&self) -> Option<f64> {
        (self.cirs > 0).then(|| self.ratio_sum / self.cirs as f64)
    }
}

/// NMSE over the ratio averaged across every CIR of every trial, pooled
/// BER and the fraction of CIRs estimated below -10 dB.
pub fn compute_metrics(trials: &[TrialMetrics]) -> MetricSummary {
    let mut total = TrialMetrics::default();
    for t in trials {
        total.ratio_sum += t.ratio_sum;
        total.cirs += t.cirs;
        total.successes += t.successes;
        total.zero_channels += t.zero_channels;
        total.bit_errors += t.bit_errors;
        total.bits += t.bits;
    }
    if total.zero_channels > 0 {
        log::warn!("{} all-zero channel(s) excluded from NMSE", total.zero_channels);
    }
    let nmse_db = match total.mean_ratio() {
        Some(mean) => (10.0 * mean.log10()).max(NMSE_FLOOR_DB),
        None => f64::NAN,
    };
    let success_rate = if total.cirs == 0 {
        0.0
    } else {
        total.successes as f64 / total.cirs as f64
    };
    let ber = if total.bits == 0 {
        0.0
    } else {
        total.bit_errors as f64 / total.bits as f64
    };
    MetricSummary {
        nmse_db,
        ber,
        success_rate,
        excluded: total.zero_channels,
    }
}
