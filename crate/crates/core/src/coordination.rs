//! Neighbor sharing over the antenna grid.
//!
//! Every round is bulk-synchronous: round `t + 1` is computed entirely from
//! the round-`t` buffers of each antenna's closed neighborhood, so the result
//! does not depend on the order in which antennas are visited.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel_model::AntennaGrid;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::rs1::{compute_marginals, error_covariance, ErrorCovariance};
use crate::sabmp::{greedy_search, init_params, BernoulliPrior, InitParams, SolverSettings, SparseEstimate, PRIOR_EPS};
use crate::scalar::{Cplx, Real};

pub const DEFAULT_LAMBDA_SMALL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BeliefKind {
    Marginal,
    Score,
}

/// Per-antenna shared state: marginals `λ` or integer scores `ψ`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState<T> {
    pub kind: BeliefKind,
    pub values: Vec<T>,
    /// Taps detected somewhere in the information this antenna has received.
    pub detected: Vec<bool>,
    pub round: usize,
}

impl<T: Real> BeliefState<T> {
    /// Round-0 state; `values` off the detected set are ignored.
    pub fn new(kind: BeliefKind, values: Vec<T>, detected: &[usize]) -> Self {
        let mut mask = vec![false; values.len()];
        for &i in detected {
            mask[i] = true;
        }
        let values = values
            .into_iter()
            .zip(&mask)
            .map(|(v, &m)| if m { v } else { T::zero() })
            .collect();
        Self {
            kind,
            values,
            detected: mask,
            round: 0,
        }
    }

    /// State of an antenna that contributes nothing.
    pub fn silent(kind: BeliefKind, len: usize) -> Self {
        Self::new(kind, vec![T::zero(); len], &[])
    }
}

/// Detected taps ranked by `|ĥ_AMMSE|`: the strongest gets `T_max`, the next
/// `T_max - 1`, and so on; everything else scores zero. Ties go to the lower
/// index.
pub fn assign_scores<T: Real>(est: &SparseEstimate<T>) -> Vec<T> {
    let mut taps = est.detected().to_vec();
    let mag = |i: usize| est.h_ammse[i].norm();
    taps.sort_by(|&i, &j| {
        mag(j)
            .partial_cmp(&mag(i))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut scores = vec![T::zero(); est.channel_len];
    for (rank, &i) in taps.iter().enumerate() {
        scores[i] = T::from_count(est.t_max.saturating_sub(rank));
    }
    scores
}

fn check_states<T>(grid: &AntennaGrid, states: &[BeliefState<T>]) -> Result<()> {
    if states.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} belief states for a {}-antenna grid",
            states.len(),
            grid.len()
        )));
    }
    Ok(())
}

fn neighborhood_round<T: Real>(
    grid: &AntennaGrid,
    states: &[BeliefState<T>],
    absent: T,
    finish: impl Fn(T) -> T + Sync,
) -> Vec<BeliefState<T>> {
    (0..states.len())
        .into_par_iter()
        .map(|c| {
            let nb = grid.closed_neighborhood(c);
            let size = T::from_count(nb.len());
            let me = &states[c];
            let l = me.values.len();
            let mut values = vec![absent; l];
            let mut detected = vec![false; l];
            for i in 0..l {
                if nb.iter().any(|&j| states[j].detected[i]) {
                    let sum: T = nb
                        .iter()
                        .filter(|&&j| states[j].detected[i])
                        .map(|&j| states[j].values[i])
                        .sum();
                    values[i] = finish(sum / size);
                    detected[i] = true;
                }
            }
            BeliefState {
                kind: me.kind,
                values,
                detected,
                round: me.round + 1,
            }
        })
        .collect()
}

/// One synchronous marginal-averaging round. Members that have not detected
/// a tap contribute zero; taps nobody in the neighborhood detected fall back
/// to `λ_small`.
pub fn average_marginals_round<T: Real>(
    grid: &AntennaGrid,
    states: &[BeliefState<T>],
    lambda_small: T,
) -> Result<Vec<BeliefState<T>>> {
    check_states(grid, states)?;
    Ok(neighborhood_round(grid, states, lambda_small, |v| v))
}

/// One synchronous score-averaging round, rounded up unless `final_round`.
pub fn average_scores_round<T: Real>(
    grid: &AntennaGrid,
    states: &[BeliefState<T>],
    final_round: bool,
) -> Result<Vec<BeliefState<T>>> {
    check_states(grid, states)?;
    Ok(neighborhood_round(grid, states, T::zero(), |v| {
        if final_round {
            v
        } else {
            v.ceil()
        }
    }))
}

/// `b = ψ / T_max`, clamped into `[λ_small, 1 - ε]`.
pub fn scores_to_beliefs<T: Real>(scores: &[T], t_max: usize, lambda_small: T) -> Vec<T> {
    let t = T::from_count(t_max.max(1));
    let hi = T::one() - T::lit(PRIOR_EPS);
    scores
        .iter()
        .map(|&s| (s / t).max(lambda_small).min(hi))
        .collect()
}

/// Prior used for the final pass after marginal sharing.
fn marginal_prior<T: Real>(state: &BeliefState<T>, lambda_small: T) -> BernoulliPrior<T> {
    BernoulliPrior::new(
        state
            .values
            .iter()
            .zip(&state.detected)
            .map(|(&v, &d)| if d { v } else { lambda_small }),
    )
}

/// Pilot-only observation at one antenna.
#[derive(Debug, Clone)]
pub struct PilotObservation<T> {
    /// `A(P)`, the sensing rows at the pilot carriers.
    pub sensing: CMat<T>,
    pub received: Vec<Cplx<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinationConfig {
    pub depth: usize,
    pub lambda_small: f64,
    /// Grid-wide `T_max`. `None` keeps each antenna's own initialization.
    pub t_max: Option<usize>,
    /// Grid-wide initial activity probability. `None` keeps each antenna's
    /// own initialization.
    pub lambda_init: Option<f64>,
    pub settings: SolverSettings,
    pub record_trace: bool,
}

impl Default for CoordinationConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            lambda_small: DEFAULT_LAMBDA_SMALL,
            t_max: None,
            lambda_init: None,
            settings: SolverSettings::default(),
            record_trace: false,
        }
    }
}

impl CoordinationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_small > 0.0 && self.lambda_small < 1.0) {
            return Err(Error::config("lambda_small must lie in (0, 1)"));
        }
        if let Some(l) = self.lambda_init {
            if !(l > 0.0 && l < 1.0) {
                return Err(Error::config("lambda_init must lie in (0, 1)"));
            }
        }
        if self.t_max == Some(0) {
            return Err(Error::config("T_max must be positive"));
        }
        Ok(())
    }
}

/// Initialization carried from the first pass into every later solve.
#[derive(Debug, Clone)]
pub struct AntennaSetup<T> {
    pub init: InitParams<T>,
    pub t_max: usize,
}

/// Final estimate at one antenna.
#[derive(Debug, Clone)]
pub struct AntennaEstimate<T> {
    pub setup: AntennaSetup<T>,
    pub prior: BernoulliPrior<T>,
    pub estimate: SparseEstimate<T>,
    pub covariance: ErrorCovariance<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub round: usize,
    pub antenna: usize,
    pub tap: usize,
    pub value: f64,
}

#[derive(Debug)]
pub struct CoordinationOutcome<T> {
    /// First-pass estimates (before any sharing).
    pub initial: Vec<Option<SparseEstimate<T>>>,
    pub estimates: Vec<Result<AntennaEstimate<T>>>,
    /// States after the last round.
    pub beliefs: Vec<BeliefState<T>>,
    /// Detected-entry values of every round, when tracing is enabled.
    pub trace: Vec<TraceRecord>,
}

fn setup_antenna<T: Real>(obs: &PilotObservation<T>, config: &CoordinationConfig) -> Result<AntennaSetup<T>> {
    let mut init = init_params(&obs.sensing, &obs.received, &config.settings)?;
    if let Some(l) = config.lambda_init {
        init.lambda_init = T::lit(l);
        init.prior = BernoulliPrior::uniform(obs.sensing.cols(), init.lambda_init);
    }
    let cap = obs.sensing.rows().min(obs.sensing.cols());
    let t_max = config.t_max.map_or(init.t_max, |t| t.min(cap));
    Ok(AntennaSetup { init, t_max })
}

fn first_pass<T: Real>(
    obs: &PilotObservation<T>,
    config: &CoordinationConfig,
    kind: BeliefKind,
) -> Result<(AntennaSetup<T>, SparseEstimate<T>, BeliefState<T>)> {
    let setup = setup_antenna(obs, config)?;
    let est = greedy_search(
        &obs.sensing,
        &obs.received,
        &setup.init.prior,
        setup.init.noise_var,
        setup.t_max,
        &config.settings,
    )?;
    let state = match kind {
        BeliefKind::Marginal => {
            let m = compute_marginals(
                &est,
                &obs.sensing,
                &obs.received,
                &setup.init.prior,
                setup.init.noise_var,
                &config.settings,
            )?;
            BeliefState::new(kind, m.dense(est.channel_len), &m.detected)
        }
        BeliefKind::Score => BeliefState::new(kind, assign_scores(&est), est.detected()),
    };
    Ok((setup, est, state))
}

/// Solver pass with a given prior, reusing the first-pass noise variance and `T_max`.
pub fn solve_with_prior<T: Real>(
    obs: &PilotObservation<T>,
    setup: &AntennaSetup<T>,
    prior: BernoulliPrior<T>,
    settings: &SolverSettings,
) -> Result<AntennaEstimate<T>> {
    let t_max = setup.t_max.min(obs.sensing.rows().min(obs.sensing.cols()));
    let estimate = greedy_search(&obs.sensing, &obs.received, &prior, setup.init.noise_var, t_max, settings)?;
    let covariance = error_covariance(&estimate, setup.init.noise_var);
    Ok(AntennaEstimate {
        setup: setup.clone(),
        prior,
        estimate,
        covariance,
    })
}

fn trace_round<T: Real>(out: &mut Vec<TraceRecord>, states: &[BeliefState<T>], round: usize) {
    for (antenna, s) in states.iter().enumerate() {
        for (tap, (&v, &d)) in s.values.iter().zip(&s.detected).enumerate() {
            if d {
                out.push(TraceRecord {
                    round,
                    antenna,
                    tap,
                    value: v.to_f64_lossy(),
                });
            }
        }
    }
}

fn run<T: Real>(
    grid: &AntennaGrid,
    observations: &[PilotObservation<T>],
    config: &CoordinationConfig,
    kind: BeliefKind,
) -> Result<CoordinationOutcome<T>> {
    grid.validate()?;
    config.validate()?;
    if observations.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} observations for a {}-antenna grid",
            observations.len(),
            grid.len()
        )));
    }
    let l = observations.first().map_or(0, |o| o.sensing.cols());
    if observations.iter().any(|o| o.sensing.cols() != l) {
        return Err(Error::Shape("antennas disagree on channel length".into()));
    }
    let lambda_small = T::lit(config.lambda_small);

    let first: Vec<_> = observations
        .par_iter()
        .map(|obs| first_pass(obs, config, kind))
        .collect();
    let mut states = Vec::with_capacity(first.len());
    let mut initial = Vec::with_capacity(first.len());
    let mut setups = Vec::with_capacity(first.len());
    for r in first {
        match r {
            Ok((setup, est, state)) => {
                states.push(state);
                initial.push(Some(est));
                setups.push(Ok(setup));
            }
            Err(e) => {
                states.push(BeliefState::silent(kind, l));
                initial.push(None);
                setups.push(Err(e));
            }
        }
    }

    let mut trace = Vec::new();
    if config.record_trace {
        trace_round(&mut trace, &states, 0);
    }
    for round in 1..=config.depth {
        states = match kind {
            BeliefKind::Marginal => average_marginals_round(grid, &states, lambda_small)?,
            BeliefKind::Score => average_scores_round(grid, &states, round == config.depth)?,
        };
        if config.record_trace {
            trace_round(&mut trace, &states, round);
        }
    }

    let estimates = setups
        .into_par_iter()
        .zip(observations.par_iter())
        .zip(states.par_iter())
        .map(|((setup, obs), state)| {
            let setup = setup?;
            let prior = match kind {
                BeliefKind::Marginal => marginal_prior(state, lambda_small),
                BeliefKind::Score => BernoulliPrior::new(scores_to_beliefs(&state.values, setup.t_max, lambda_small)),
            };
            solve_with_prior(obs, &setup, prior, &config.settings)
        })
        .collect();

    Ok(CoordinationOutcome {
        initial,
        estimates,
        beliefs: states,
        trace,
    })
}

/// Marginal sharing: first-pass marginals, `D` averaging rounds, then a
/// final solve per antenna with the shared marginals as its prior.
pub fn run_marginal_based<T: Real>(
    grid: &AntennaGrid,
    observations: &[PilotObservation<T>],
    config: &CoordinationConfig,
) -> Result<CoordinationOutcome<T>> {
    run(grid, observations, config, BeliefKind::Marginal)
}

/// Integer score sharing: only integers leave an antenna until the final
/// round, whose average is kept real.
pub fn run_integer_based<T: Real>(
    grid: &AntennaGrid,
    observations: &[PilotObservation<T>],
    config: &CoordinationConfig,
) -> Result<CoordinationOutcome<T>> {
    run(grid, observations, config, BeliefKind::Score)
}

pub fn write_trace_csv<W: Write>(trace: &[TraceRecord], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for rec in trace {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace_csv(trace: &[TraceRecord], path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_trace_csv(trace, file).map_err(|source| Error::Csv {
        path: path.to_path_buf(),
        source,
    })
}
