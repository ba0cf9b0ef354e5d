//! Antenna grid topology and sparse multipath channel synthesis.
//!
//! Space-invariant arrays share one support across the whole grid. For
//! space-variant arrays the default generator is a separable random walk:
//! every path delay is `base + row_shift(m) + col_shift(g)`, and each step
//! along a row or a column moves at most one path by one delay bin. This
//! keeps any two 4-neighbors within one migrated index of each other.

use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::complex_gaussian;
use crate::scalar::{czero, Cplx, Real};

/// Propagation speed in m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Smallest accepted magnitude for an on-support tap.
const MIN_TAP_MAGNITUDE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AntennaGrid {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    pub bandwidth_hz: f64,
    pub center_freq_hz: f64,
}

impl AntennaGrid {
    /// LTE-like grid (20 MHz at 2.6 GHz, half-wavelength spacing).
    pub fn lte(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            spacing_m: 0.058,
            bandwidth_hz: 20e6,
            center_freq_hz: 2.6e9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::config("grid needs at least one row and column"));
        }
        if !(self.spacing_m > 0.0) || !(self.bandwidth_hz > 0.0) {
            return Err(Error::config("spacing and bandwidth must be positive"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major linear index.
    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn position(&self, idx: usize) -> (usize, usize) {
        (idx / self.cols, idx % self.cols)
    }

    pub fn manhattan(&self, a: usize, b: usize) -> usize {
        let (ra, ca) = self.position(a);
        let (rb, cb) = self.position(b);
        ra.abs_diff(rb) + ca.abs_diff(cb)
    }

    /// Antenna itself followed by its in-grid 4-neighbors.
    pub fn closed_neighborhood(&self, idx: usize) -> Vec<usize> {
        let (r, c) = self.position(idx);
        let mut out = vec![idx];
        out.extend(neighbors(self, (r, c)).expect("position inside grid"));
        out
    }
}

/// In-grid 4-neighbors in up, right, down, left order.
pub fn neighbors(grid: &AntennaGrid, at: (usize, usize)) -> Result<Vec<usize>> {
    let (r, c) = at;
    if r >= grid.rows {
        return Err(Error::Index {
            index: r,
            bound: grid.rows,
        });
    }
    if c >= grid.cols {
        return Err(Error::Index {
            index: c,
            bound: grid.cols,
        });
    }
    let mut out = Vec::with_capacity(4);
    if r > 0 {
        out.push(grid.index(r - 1, c));
    }
    if c + 1 < grid.cols {
        out.push(grid.index(r, c + 1));
    }
    if r + 1 < grid.rows {
        out.push(grid.index(r + 1, c));
    }
    if c > 0 {
        out.push(grid.index(r, c - 1));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ArrayKind {
    #[serde(rename = "SIA")]
    Sia,
    #[serde(rename = "SVA")]
    Sva,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArrayClass {
    pub kind: ArrayKind,
    pub d_max_m: f64,
}

/// Delay-resolution distance `C / (10 BW)`.
pub fn resolvable_distance(bandwidth_hz: f64) -> f64 {
    SPEED_OF_LIGHT / (10.0 * bandwidth_hz)
}

/// Classifies by the far-end distance along the longer grid dimension.
pub fn classify_array(grid: &AntennaGrid) -> ArrayClass {
    let d_max_m = (grid.rows.max(grid.cols) - 1) as f64 * grid.spacing_m;
    let kind = if d_max_m <= resolvable_distance(grid.bandwidth_hz) {
        ArrayKind::Sia
    } else {
        ArrayKind::Sva
    };
    ArrayClass { kind, d_max_m }
}

/// Largest sharing depth that stays inside one resolvable distance.
pub fn recommended_depth(spacing_m: f64, bandwidth_hz: f64) -> usize {
    (SPEED_OF_LIGHT / (20.0 * spacing_m * bandwidth_hz)).floor().max(0.0) as usize
}

/// Antennas reached after `depth` sharing rounds, center included.
pub fn tier_population(depth: usize) -> usize {
    2 * depth * (depth + 1) + 1
}

/// Smallest depth whose tier population exceeds `2n - K`, i.e. the
/// smallest integer `D > sqrt(n - K/2 - 1/4) - 1/2` (zero when vacuous).
pub fn lower_bound_depth(sparsity: usize, n_pilots: usize) -> usize {
    let need = 2 * sparsity as i64 - n_pilots as i64;
    (0..)
        .find(|&d| tier_population(d) as i64 > need)
        .expect("tier population is unbounded")
}

/// Distribution of the nonzero tap amplitudes. Each has unit variance
/// before the `1/n` scaling that gives `E‖h‖² = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TapDistribution {
    /// Complex Gaussian (Rayleigh magnitude).
    #[default]
    Gaussian,
    /// Unit magnitude, uniform phase.
    ConstantMagnitude,
    /// Complex Student-t with 3 degrees of freedom.
    HeavyTailed,
}

impl TapDistribution {
    fn sample<T: Real, R: Rng + ?Sized>(self, rng: &mut R, var: f64) -> Cplx<T> {
        loop {
            let z: Cplx<f64> = match self {
                TapDistribution::Gaussian => complex_gaussian(rng, var),
                TapDistribution::ConstantMagnitude => {
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    Cplx::from_polar(var.sqrt(), phase)
                }
                TapDistribution::HeavyTailed => {
                    let g: Cplx<f64> = complex_gaussian(rng, var);
                    let chi: f64 = ChiSquared::new(3.0).expect("valid dof").sample(rng);
                    // t_3 has variance 3.
                    g * (3.0 / chi).sqrt() / 3f64.sqrt()
                }
            };
            if z.norm() >= MIN_TAP_MAGNITUDE {
                return Cplx::new(T::lit(z.re), T::lit(z.im));
            }
        }
    }
}

/// How supports vary over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SupportModel {
    /// Separable random walk controlled by the drift probability.
    #[default]
    RandomWalk,
    /// Point scatterers with per-antenna path delays quantized to bins of
    /// `1 / (10 BW)`.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub channel_len: usize,
    pub sparsity: usize,
    pub mode: ArrayKind,
    /// Per-step support migration probability (SVA random walk only).
    pub drift: f64,
    #[serde(default)]
    pub taps: TapDistribution,
    #[serde(default)]
    pub support_model: SupportModel,
}

impl ChannelSpec {
    pub fn new(channel_len: usize, sparsity: usize, mode: ArrayKind) -> Self {
        Self {
            channel_len,
            sparsity,
            mode,
            drift: 0.05,
            taps: TapDistribution::Gaussian,
            support_model: SupportModel::RandomWalk,
        }
    }
}

/// Per-antenna channel impulse responses over the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization<T> {
    pub rows: usize,
    pub cols: usize,
    pub channel_len: usize,
    pub sparsity: usize,
    /// `taps[r]` is the length-L impulse response at antenna `r`.
    pub taps: Vec<Vec<Cplx<T>>>,
    /// Sorted nonzero positions per antenna.
    pub supports: Vec<Vec<usize>>,
}

pub fn generate_channels<T: Real, R: Rng + ?Sized>(
    grid: &AntennaGrid,
    spec: &ChannelSpec,
    rng: &mut R,
) -> Result<ChannelRealization<T>> {
    grid.validate()?;
    let (l, n) = (spec.channel_len, spec.sparsity);
    if l == 0 {
        return Err(Error::config("channel length must be positive"));
    }
    if n > l {
        return Err(Error::config(format!("sparsity {n} exceeds channel length {l}")));
    }
    if !(0.0..=1.0).contains(&spec.drift) {
        return Err(Error::config(format!("drift {} outside [0, 1]", spec.drift)));
    }
    let supports = match (spec.mode, spec.support_model) {
        (ArrayKind::Sia, _) => {
            let s = sorted_subset(rng, l, n);
            vec![s; grid.len()]
        }
        (ArrayKind::Sva, SupportModel::RandomWalk) => random_walk_supports(grid, l, n, spec.drift, rng),
        (ArrayKind::Sva, SupportModel::Geometric) => geometric_supports(grid, l, n, rng),
    };
    let var = if n == 0 { 0.0 } else { 1.0 / n as f64 };
    let taps = supports
        .iter()
        .map(|s| {
            let mut h = vec![czero::<T>(); l];
            for &i in s {
                h[i] = spec.taps.sample(rng, var);
            }
            h
        })
        .collect();
    Ok(ChannelRealization {
        rows: grid.rows,
        cols: grid.cols,
        channel_len: l,
        sparsity: n,
        taps,
        supports,
    })
}

fn sorted_subset<R: Rng + ?Sized>(rng: &mut R, l: usize, n: usize) -> Vec<usize> {
    let mut s = index::sample(rng, l, n).into_vec();
    s.sort_unstable();
    s
}

fn valid_delays(d: &[i64], l: usize) -> bool {
    if d.iter().any(|&x| x < 0 || x >= l as i64) {
        return false;
    }
    let mut s = d.to_vec();
    s.sort_unstable();
    s.windows(2).all(|w| w[0] != w[1])
}

fn random_walk_supports<R: Rng + ?Sized>(
    grid: &AntennaGrid,
    l: usize,
    n: usize,
    drift: f64,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let base: Vec<i64> = sorted_subset(rng, l, n).into_iter().map(|x| x as i64).collect();
    let compose = |row: &[i64], col: &[i64]| -> Vec<i64> {
        base.iter().zip(row).zip(col).map(|((b, r), c)| b + r + c).collect()
    };
    let propose = |rng: &mut R| -> Option<(usize, i64)> {
        if n == 0 || !rng.random_bool(drift) {
            return None;
        }
        let k = rng.random_range(0..n);
        let step = if rng.random_bool(0.5) { 1 } else { -1 };
        Some((k, step))
    };

    let zero = vec![0i64; n];
    let mut row_shift = vec![zero.clone()];
    for _ in 1..grid.rows {
        let mut next = row_shift.last().expect("nonempty").clone();
        if let Some((k, step)) = propose(rng) {
            next[k] += step;
            if !valid_delays(&compose(&next, &zero), l) {
                next[k] -= step;
            }
        }
        row_shift.push(next);
    }
    let mut col_shift = vec![zero.clone()];
    for _ in 1..grid.cols {
        let mut next = col_shift.last().expect("nonempty").clone();
        if let Some((k, step)) = propose(rng) {
            next[k] += step;
            if !row_shift.iter().all(|r| valid_delays(&compose(r, &next), l)) {
                next[k] -= step;
            }
        }
        col_shift.push(next);
    }
    (0..grid.len())
        .map(|idx| {
            let (m, g) = grid.position(idx);
            let mut s: Vec<usize> = compose(&row_shift[m], &col_shift[g])
                .into_iter()
                .map(|x| x as usize)
                .collect();
            s.sort_unstable();
            s
        })
        .collect()
}

fn geometric_supports<R: Rng + ?Sized>(
    grid: &AntennaGrid,
    l: usize,
    n: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let bin_rate = 10.0 * grid.bandwidth_hz / SPEED_OF_LIGHT; // bins per meter
    let center = (
        (grid.rows - 1) as f64 * grid.spacing_m / 2.0,
        (grid.cols - 1) as f64 * grid.spacing_m / 2.0,
    );
    // Each scatterer: excess path length at the array center, direction, range.
    let scatterers: Vec<(f64, [f64; 3], f64)> = (0..n)
        .map(|_| {
            let excess = rng.random_range(0.0..(l as f64 - 1.0).max(0.0)) / bin_rate;
            let az = rng.random_range(0.0..std::f64::consts::TAU);
            let el: f64 = rng.random_range(0.1..1.4);
            let dir = [el.cos() * az.cos(), el.cos() * az.sin(), el.sin()];
            let range = rng.random_range(20.0..200.0);
            (excess, dir, range)
        })
        .collect();
    (0..grid.len())
        .map(|idx| {
            let (m, g) = grid.position(idx);
            let ant = [m as f64 * grid.spacing_m, g as f64 * grid.spacing_m, 0.0];
            let mut taken = vec![false; l];
            let mut s = Vec::with_capacity(n);
            for (excess, dir, range) in &scatterers {
                let pos = [
                    center.0 + dir[0] * range,
                    center.1 + dir[1] * range,
                    dir[2] * range,
                ];
                let dist = ((pos[0] - ant[0]).powi(2) + (pos[1] - ant[1]).powi(2) + pos[2].powi(2)).sqrt();
                let raw = ((excess + dist - range) * bin_rate).floor().clamp(0.0, (l - 1) as f64) as usize;
                let bin = nearest_free(&taken, raw);
                taken[bin] = true;
                s.push(bin);
            }
            s.sort_unstable();
            s
        })
        .collect()
}

fn nearest_free(taken: &[bool], at: usize) -> usize {
    (0..taken.len())
        .flat_map(|off| [at.checked_add(off), at.checked_sub(off)])
        .flatten()
        .find(|&i| i < taken.len() && !taken[i])
        .expect("fewer paths than delay bins")
}

#[derive(Debug, Serialize, Deserialize)]
struct TapRecord {
    antenna: usize,
    row: usize,
    col: usize,
    tap: usize,
    re: f64,
    im: f64,
}

impl<T: Real> ChannelRealization<T> {
    /// Writes nonzero taps as CSV: `antenna,row,col,tap,re,im`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        for (a, h) in self.taps.iter().enumerate() {
            for &tap in &self.supports[a] {
                w.serialize(TapRecord {
                    antenna: a,
                    row: a / self.cols,
                    col: a % self.cols,
                    tap,
                    re: h[tap].re.to_f64_lossy(),
                    im: h[tap].im.to_f64_lossy(),
                })?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV form back; grid shape and channel length come from the caller.
    pub fn read_csv<Rd: Read>(input: Rd, grid: &AntennaGrid, channel_len: usize) -> Result<Self> {
        let mut taps = vec![vec![czero::<T>(); channel_len]; grid.len()];
        let mut supports = vec![Vec::new(); grid.len()];
        let mut rdr = csv::Reader::from_reader(input);
        for rec in rdr.deserialize::<TapRecord>() {
            let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
            if rec.antenna >= grid.len() {
                return Err(Error::Index {
                    index: rec.antenna,
                    bound: grid.len(),
                });
            }
            if rec.tap >= channel_len {
                return Err(Error::Index {
                    index: rec.tap,
                    bound: channel_len,
                });
            }
            taps[rec.antenna][rec.tap] = Cplx::new(T::lit(rec.re), T::lit(rec.im));
            supports[rec.antenna].push(rec.tap);
        }
        for s in supports.iter_mut() {
            s.sort_unstable();
            s.dedup();
        }
        let sparsity = supports.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            rows: grid.rows,
            cols: grid.cols,
            channel_len,
            sparsity,
            taps,
            supports,
        })
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f)).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })
    }
}
