use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::{generate_channels, ArrayKind, ChannelRealization};
use crate::coordination::{run_integer_based, run_marginal_based, CoordinationConfig, CoordinationOutcome, PilotObservation};
use crate::data_aided::{run_data_aided, DataAidedConfig, FrameLayout};
use crate::error::{Error, Result};
use crate::rng::{complex_gaussian, derive_seed, stream};
use crate::scalar::Cplx;
use crate::signal_model::{build_qam_alphabet, frequency_response, modulate_frame, place_pilots, OfdmConfig, OfdmFrame, QamAlphabet};

use super::baselines::{oracle_ls_estimate, somp_baseline};
use super::metrics::{compute_metrics, trial_metrics, TrialMetrics};
use super::spec::{Algorithm, ExperimentSpec, SweepPoint};

type C = Cplx<f64>;

const CHANNEL_STREAM: u64 = 1;
const PILOT_STREAM: u64 = 2;
const DATA_STREAM: u64 = 3;
const NOISE_STREAM: u64 = 4;

/// Noise variance for an SNR of `E‖Ah‖² / (N σ²)` with unit-energy
/// channels and unit-energy symbols.
pub fn noise_variance(snr_db: f64, n_carriers: usize) -> f64 {
    1.0 / (n_carriers as f64 * 10f64.powf(snr_db / 10.0))
}

/// Everything drawn for one trial at one sweep point.
#[derive(Debug, Clone)]
pub struct TrialData {
    pub channels: ChannelRealization<f64>,
    pub frame: OfdmFrame<f64>,
    pub layout: FrameLayout<f64>,
    /// Received frame (all `N` carriers) per antenna.
    pub received: Vec<Vec<C>>,
    pub observations: Vec<PilotObservation<f64>>,
    pub noise_var: f64,
}

/// Draws channels, pilots, data and noise for trial `trial`.
///
/// Channels and data depend only on the trial and sparsity, pilot positions
/// on the trial and `K`, and the unit noise realization on the trial and
/// antenna, so sweeps over SNR and `D` are paired.
pub fn simulate_trial(
    spec: &ExperimentSpec,
    point: &SweepPoint,
    trial: u64,
    channels: Option<ChannelRealization<f64>>,
) -> Result<TrialData> {
    let grid = spec.grid();
    let channels = match channels {
        Some(c) => {
            if c.taps.len() != grid.len() || c.channel_len != spec.channel_len {
                return Err(Error::Shape(format!(
                    "channel file holds {} antennas of length {}; expected {} of length {}",
                    c.taps.len(),
                    c.channel_len,
                    grid.len(),
                    spec.channel_len
                )));
            }
            c
        }
        None => {
            let mut rng = stream(spec.seed, &[CHANNEL_STREAM, trial, point.sparsity as u64]);
            generate_channels(&grid, &spec.channel_spec(point.sparsity), &mut rng)?
        }
    };
    let noise_var = noise_variance(point.snr_db, spec.n_carriers);
    let config = OfdmConfig {
        n_carriers: spec.n_carriers,
        n_pilots: point.pilots,
        qam_order: spec.qam_order,
        channel_len: spec.channel_len,
        noise_var,
        seed: spec.seed,
    };
    let alphabet = build_qam_alphabet::<f64>(spec.qam_order)?;
    let pilots = place_pilots(
        spec.n_carriers,
        point.pilots,
        derive_seed(spec.seed, &[PILOT_STREAM, trial, point.pilots as u64]),
    )?;
    let mut data_rng = stream(spec.seed, &[DATA_STREAM, trial]);
    let frame = modulate_frame(&config, &alphabet, &pilots, &mut data_rng)?;
    let sigma = noise_var.sqrt();
    let received: Vec<Vec<C>> = channels
        .taps
        .iter()
        .enumerate()
        .map(|(r, h)| {
            let mut rng = stream(spec.seed, &[NOISE_STREAM, trial, r as u64]);
            frequency_response(h, spec.n_carriers)
                .iter()
                .zip(&frame.freq_symbols)
                .map(|(hk, xk)| xk * hk + complex_gaussian::<f64, _>(&mut rng, 1.0) * sigma)
                .collect()
        })
        .collect();
    let layout = FrameLayout {
        n_carriers: spec.n_carriers,
        channel_len: spec.channel_len,
        pilot_symbols: pilots.iter().map(|&p| frame.freq_symbols[p]).collect(),
        pilots,
    };
    let observations = received.iter().map(|y| layout.pilot_observation(y)).collect();
    Ok(TrialData {
        channels,
        frame,
        layout,
        received,
        observations,
        noise_var,
    })
}

/// Estimates and metrics of one algorithm on one trial.
#[derive(Debug, Clone)]
pub struct AlgorithmRun {
    pub algorithm: Algorithm,
    /// Per-antenna estimate, `None` where the solver failed.
    pub estimates: Vec<Option<Vec<C>>>,
    pub metrics: TrialMetrics,
    pub elapsed: Duration,
}

fn coordinated_estimates(outcome: &Result<CoordinationOutcome<f64>>, antennas: usize) -> Vec<Option<Vec<C>>> {
    match outcome {
        Ok(o) => o
            .estimates
            .iter()
            .map(|e| e.as_ref().ok().map(|e| e.estimate.h_ammse.clone()))
            .collect(),
        Err(_) => vec![None; antennas],
    }
}

/// Runs the requested algorithms on one trial. Pilot-only and data-aided
/// variants of the same sharing scheme share one coordinated run.
pub fn evaluate_trial(
    spec: &ExperimentSpec,
    point: &SweepPoint,
    data: &TrialData,
    algorithms: &[Algorithm],
) -> Result<Vec<AlgorithmRun>> {
    let grid = spec.grid();
    let alphabet: QamAlphabet<f64> = build_qam_alphabet(spec.qam_order)?;
    let antennas = grid.len();
    let coord = CoordinationConfig {
        depth: point.depth,
        lambda_small: spec.lambda_small,
        t_max: spec.t_max_for(point),
        lambda_init: spec.lambda_init_for(point),
        settings: spec.settings,
        record_trace: false,
    };
    let da_config = DataAidedConfig {
        reliable_count: spec.reliable_count,
        reliable_fraction: spec.reliable_fraction,
        settings: spec.settings,
    };
    let wants = |a: Algorithm| algorithms.contains(&a);

    let mut runs: Vec<(Algorithm, Vec<Option<Vec<C>>>, Duration)> = Vec::new();
    for (pilot_only, aided, integer) in [
        (Algorithm::MbP, Algorithm::MbR, false),
        (Algorithm::IbP, Algorithm::IbR, true),
    ] {
        if !wants(pilot_only) && !wants(aided) {
            continue;
        }
        let start = Instant::now();
        let base = if integer {
            run_integer_based(&grid, &data.observations, &coord)
        } else {
            run_marginal_based(&grid, &data.observations, &coord)
        };
        let base_time = start.elapsed();
        if let Err(e) = &base {
            log::warn!("{pilot_only} failed on the whole grid: {e}");
        }
        if wants(pilot_only) {
            runs.push((pilot_only, coordinated_estimates(&base, antennas), base_time));
        }
        if wants(aided) {
            let start = Instant::now();
            let est = match &base {
                Ok(b) => match run_data_aided(&grid, &data.layout, &data.received, b, &alphabet, &da_config) {
                    Ok(out) => out
                        .estimates
                        .iter()
                        .map(|e| e.as_ref().ok().map(|e| e.estimate.h_ammse.clone()))
                        .collect(),
                    Err(e) => {
                        log::warn!("{aided} failed on the whole grid: {e}");
                        vec![None; antennas]
                    }
                },
                Err(_) => vec![None; antennas],
            };
            runs.push((aided, est, base_time + start.elapsed()));
        }
    }
    if wants(Algorithm::OracleLs) {
        let start = Instant::now();
        let est = data
            .observations
            .iter()
            .zip(&data.channels.supports)
            .map(|(o, s)| oracle_ls_estimate(&o.sensing, &o.received, s).ok())
            .collect();
        runs.push((Algorithm::OracleLs, est, start.elapsed()));
    }
    if wants(Algorithm::Somp) {
        let start = Instant::now();
        let est = match somp_baseline(&grid, &data.observations, point.sparsity, spec.mode) {
            Ok(out) => out.estimates.into_iter().map(Some).collect(),
            Err(_) => vec![None; antennas],
        };
        runs.push((Algorithm::Somp, est, start.elapsed()));
    }

    Ok(algorithms
        .iter()
        .filter_map(|a| runs.iter().find(|r| r.0 == *a))
        .map(|(algorithm, estimates, elapsed)| AlgorithmRun {
            algorithm: *algorithm,
            metrics: trial_metrics(&data.channels.taps, estimates, &data.received, &data.frame, &alphabet),
            estimates: estimates.clone(),
            elapsed: *elapsed,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub algorithm: Algorithm,
    #[serde(rename = "K")]
    pub pilots: usize,
    pub snr_db: f64,
    #[serde(rename = "D")]
    pub depth: usize,
    pub mode: ArrayKind,
    pub nmse_db: f64,
    pub ber: f64,
    pub success_rate: f64,
    pub wall_time_s: f64,
    pub trials: usize,
    #[serde(skip)]
    pub sparsity: usize,
}

impl ResultRow {
    /// Equality on everything except the informational wall time; NaN
    /// matches NaN.
    pub fn same_outcome(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        self.algorithm == other.algorithm
            && self.pilots == other.pilots
            && eq(self.snr_db, other.snr_db)
            && self.depth == other.depth
            && self.mode == other.mode
            && eq(self.nmse_db, other.nmse_db)
            && eq(self.ber, other.ber)
            && eq(self.success_rate, other.success_rate)
            && self.trials == other.trials
            && self.sparsity == other.sparsity
    }
}

/// Runs one sweep point for all trials and aggregates per algorithm.
pub fn run_point(spec: &ExperimentSpec, point: &SweepPoint) -> Result<Vec<ResultRow>> {
    let per_trial: Vec<Vec<AlgorithmRun>> = (0..spec.trials as u64)
        .into_par_iter()
        .map(|t| {
            let data = simulate_trial(spec, point, t, None)?;
            evaluate_trial(spec, point, &data, &spec.algorithms)
        })
        .collect::<Result<_>>()?;
    Ok(spec
        .algorithms
        .iter()
        .enumerate()
        .map(|(i, &algorithm)| {
            let metrics: Vec<TrialMetrics> = per_trial.iter().map(|runs| runs[i].metrics).collect();
            let failures: usize = metrics.iter().map(|m| m.failures).sum();
            if failures > 0 {
                log::warn!("{algorithm}: {failures} antenna solve(s) failed and counted as zero estimates");
            }
            let summary = compute_metrics(&metrics);
            let wall: f64 = per_trial.iter().map(|runs| runs[i].elapsed.as_secs_f64()).sum();
            ResultRow {
                algorithm,
                pilots: point.pilots,
                snr_db: point.snr_db,
                depth: point.depth,
                mode: spec.mode,
                nmse_db: summary.nmse_db,
                ber: summary.ber,
                success_rate: summary.success_rate,
                wall_time_s: wall,
                trials: spec.trials,
                sparsity: point.sparsity,
            }
        })
        .collect())
}

/// Full sweep: every point times every algorithm, `Θ` trials each.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    for w in spec.depth_warnings() {
        log::warn!("{w}");
    }
    let mut rows = Vec::new();
    for point in spec.points() {
        log::info!(
            "experiment {}: n = {}, K = {}, SNR = {} dB, D = {}",
            spec.id,
            point.sparsity,
            point.pilots,
            point.snr_db,
            point.depth
        );
        rows.extend(run_point(spec, &point)?);
    }
    Ok(rows)
}
