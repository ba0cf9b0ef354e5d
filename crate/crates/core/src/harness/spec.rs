use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::channel_model::{lower_bound_depth, AntennaGrid, ArrayKind, ChannelSpec, SupportModel, TapDistribution};
use crate::coordination::DEFAULT_LAMBDA_SMALL;
use crate::data_aided::DEFAULT_RELIABLE_FRACTION;
use crate::error::{Error, Result};
use crate::rs1::MAX_LATTICE_TAPS;
use crate::sabmp::{tmax_for_activity, SolverSettings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "MB-P")]
    MbP,
    #[serde(rename = "IB-P")]
    IbP,
    #[serde(rename = "MB-R")]
    MbR,
    #[serde(rename = "IB-R")]
    IbR,
    #[serde(rename = "oracle-LS")]
    OracleLs,
    #[serde(rename = "SOMP")]
    Somp,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::MbP,
        Algorithm::IbP,
        Algorithm::MbR,
        Algorithm::IbR,
        Algorithm::OracleLs,
        Algorithm::Somp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::MbP => "MB-P",
            Algorithm::IbP => "IB-P",
            Algorithm::MbR => "MB-R",
            Algorithm::IbR => "IB-R",
            Algorithm::OracleLs => "oracle-LS",
            Algorithm::Somp => "SOMP",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown algorithm {s:?}")))
    }
}

/// How the grid-wide `T_max` is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TmaxPolicy {
    /// Sized from the nominal activity `n / L`, capped at `K / 2`.
    #[default]
    Nominal,
    /// Each antenna keeps the value from its own initialization.
    PerAntenna,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub id: u32,
    pub rows: usize,
    pub cols: usize,
    pub channel_len: usize,
    /// Sparsity sweep.
    pub sparsity: Vec<usize>,
    pub n_carriers: usize,
    /// Pilot count sweep.
    pub pilots: Vec<usize>,
    pub qam_order: usize,
    pub snr_db: Vec<f64>,
    /// Coordination depth sweep.
    pub depth: Vec<usize>,
    pub mode: ArrayKind,
    pub drift: f64,
    pub taps: TapDistribution,
    pub support_model: SupportModel,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub seed: u64,
    /// Reliable carriers per antenna; overrides `reliable_fraction`.
    pub reliable_count: Option<usize>,
    /// Share of data carriers each antenna ranks as reliable.
    pub reliable_fraction: f64,
    pub lambda_small: f64,
    pub t_max: TmaxPolicy,
    pub settings: SolverSettings,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub sparsity: usize,
    pub pilots: usize,
    pub snr_db: f64,
    pub depth: usize,
}

impl ExperimentSpec {
    fn base(id: u32) -> Self {
        Self {
            id,
            rows: 20,
            cols: 20,
            channel_len: 64,
            sparsity: vec![3],
            n_carriers: 512,
            pilots: vec![16],
            qam_order: 4,
            snr_db: (0..=6).map(|i| 5.0 * i as f64).collect(),
            depth: vec![3],
            mode: ArrayKind::Sia,
            drift: 0.05,
            taps: TapDistribution::Gaussian,
            support_model: SupportModel::RandomWalk,
            algorithms: vec![Algorithm::MbP, Algorithm::IbP, Algorithm::MbR, Algorithm::IbR],
            trials: 100,
            seed: 1,
            reliable_count: None,
            reliable_fraction: DEFAULT_RELIABLE_FRACTION,
            lambda_small: DEFAULT_LAMBDA_SMALL,
            t_max: TmaxPolicy::Nominal,
            settings: SolverSettings::default(),
        }
    }

    /// Built-in experiment definitions at full scale (20 x 20 grid).
    pub fn preset(id: u32) -> Result<Self> {
        let mut s = Self::base(id);
        match id {
            1 => {
                s.pilots = (1..=21).map(|i| 2 * i).collect();
                s.snr_db = vec![10.0];
            }
            2 => {}
            3 => {
                s.channel_len = 32;
                s.pilots = vec![8];
                s.snr_db = (0..=7).map(|i| 5.0 * i as f64).collect();
                s.algorithms.extend([Algorithm::OracleLs, Algorithm::Somp]);
            }
            4 => {
                s.sparsity = vec![3, 5, 7];
                s.algorithms = vec![Algorithm::MbR, Algorithm::IbR];
            }
            5 => {
                s.channel_len = 32;
                s.pilots = vec![8];
                s.depth = (1..=5).collect();
                s.algorithms = vec![Algorithm::IbP];
            }
            _ => return Err(Error::config(format!("no experiment {id}; expected 1-5"))),
        }
        Ok(s)
    }

    pub fn grid(&self) -> AntennaGrid {
        AntennaGrid::lte(self.rows, self.cols)
    }

    pub fn channel_spec(&self, sparsity: usize) -> ChannelSpec {
        ChannelSpec {
            channel_len: self.channel_len,
            sparsity,
            mode: self.mode,
            drift: self.drift,
            taps: self.taps,
            support_model: self.support_model,
        }
    }

    /// Sweep points in row-major order: sparsity, pilots, SNR, depth.
    pub fn points(&self) -> Vec<SweepPoint> {
        let mut out = Vec::new();
        for &sparsity in &self.sparsity {
            for &pilots in &self.pilots {
                for &snr_db in &self.snr_db {
                    for &depth in &self.depth {
                        out.push(SweepPoint {
                            sparsity,
                            pilots,
                            snr_db,
                            depth,
                        });
                    }
                }
            }
        }
        out
    }

    /// Grid-wide initial activity `n / L` under the nominal policy.
    pub fn lambda_init_for(&self, point: &SweepPoint) -> Option<f64> {
        match self.t_max {
            TmaxPolicy::Nominal => Some(point.sparsity as f64 / self.channel_len as f64),
            _ => None,
        }
    }

    /// Grid-wide `T_max` for a sweep point, or `None` for per-antenna values.
    pub fn t_max_for(&self, point: &SweepPoint) -> Option<usize> {
        let cap = point.pilots.min(self.channel_len);
        match self.t_max {
            TmaxPolicy::PerAntenna => None,
            TmaxPolicy::Fixed(t) => Some(t.min(cap)),
            TmaxPolicy::Nominal => {
                let lambda = point.sparsity as f64 / self.channel_len as f64;
                let t = tmax_for_activity(self.channel_len, lambda, self.settings.tmax_z);
                Some(t.min((point.pilots / 2).max(1)).min(cap).min(MAX_LATTICE_TAPS))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid().validate()?;
        let nonempty = [
            ("sparsity", self.sparsity.is_empty()),
            ("pilots", self.pilots.is_empty()),
            ("snr_db", self.snr_db.is_empty()),
            ("depth", self.depth.is_empty()),
            ("algorithms", self.algorithms.is_empty()),
        ];
        if let Some((name, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(Error::config(format!("sweep {name} is empty")));
        }
        if self.trials == 0 {
            return Err(Error::config("at least one trial is required"));
        }
        if self.channel_len == 0 || self.channel_len > self.n_carriers {
            return Err(Error::config("channel length must lie in 1..=N"));
        }
        if let Some(&k) = self.pilots.iter().find(|&&k| k == 0 || k > self.n_carriers) {
            return Err(Error::config(format!("pilot count {k} must lie in 1..=N")));
        }
        if let Some(&n) = self.sparsity.iter().find(|&&n| n == 0 || n > self.channel_len) {
            return Err(Error::config(format!("sparsity {n} must lie in 1..=L")));
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return Err(Error::config("SNR values must be finite"));
        }
        if !(0.0..=1.0).contains(&self.drift) {
            return Err(Error::config("drift must lie in [0, 1]"));
        }
        if !(self.lambda_small > 0.0 && self.lambda_small < 1.0) {
            return Err(Error::config("lambda_small must lie in (0, 1)"));
        }
        if !(self.reliable_fraction > 0.0 && self.reliable_fraction <= 1.0) {
            return Err(Error::config("reliable_fraction must lie in (0, 1]"));
        }
        if self.t_max == TmaxPolicy::Fixed(0) {
            return Err(Error::config("fixed T_max must be positive"));
        }
        crate::signal_model::build_qam_alphabet::<f64>(self.qam_order)?;
        Ok(())
    }

    /// Depths below the uniqueness bound `2D(D+1)+1 > 2n - K`, as warnings.
    pub fn depth_warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        for &n in &self.sparsity {
            for &k in &self.pilots {
                let need = lower_bound_depth(n, k);
                for &d in &self.depth {
                    if d < need {
                        out.push(format!("D = {d} is below the uniqueness bound {need} for n = {n}, K = {k}"));
                    }
                }
            }
        }
        out
    }

    /// Overlays the keys of a TOML document onto this spec.
    pub fn with_overrides(&self, text: &str) -> Result<Self> {
        let patch: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let mut base = toml::Table::try_from(self).map_err(|e| Error::Parse(e.to_string()))?;
        merge(&mut base, patch);
        let spec: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_override_file(&self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.with_overrides(&text)
    }
}

fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (key, value) in patch {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}
