//! OFDM frame construction, pilot placement, sensing matrices, received
//! signal synthesis and zero-forcing detection.
//!
//! Everything works directly on frequency-domain subcarriers (after cyclic
//! prefix removal). The unitary DFT convention is
//! `F(k, l) = exp(-j 2π k l / N) / √N`.
//!
//! QAM bit labels are Gray coded per axis. For a `Q = M²` constellation the
//! in-phase level `i ∈ 0..M` sits at amplitude `2i - M + 1` (scaled to unit
//! average energy) and carries the Gray code `i ^ (i >> 1)` in its upper
//! `log2 M` bits; the quadrature level does the same in the lower bits. For
//! 4-QAM this gives `00 → (-1-j)/√2`, `01 → (-1+j)/√2`, `10 → (1-j)/√2`,
//! `11 → (1+j)/√2`.

use std::f64::consts::PI;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::rng::{complex_gaussian, stream};
use crate::scalar::{czero, Cplx, Real};

/// Stream tag for the grid-wide pilot symbol values.
const PILOT_SYMBOL_STREAM: u64 = 0x5049_4c4f_54;

/// Magnitude below which a channel frequency response is treated as a null.
pub const NULL_RESPONSE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfdmConfig {
    pub n_carriers: usize,
    pub n_pilots: usize,
    pub qam_order: usize,
    pub channel_len: usize,
    pub noise_var: f64,
    pub seed: u64,
}

impl OfdmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_carriers == 0 || self.n_pilots == 0 || self.channel_len == 0 {
            return Err(Error::config("N, K and L must be positive"));
        }
        if self.n_pilots > self.n_carriers {
            return Err(Error::config(format!(
                "{} pilots exceed {} carriers",
                self.n_pilots, self.n_carriers
            )));
        }
        if self.channel_len > self.n_carriers {
            return Err(Error::config(format!(
                "channel length {} exceeds {} carriers",
                self.channel_len, self.n_carriers
            )));
        }
        if !(self.noise_var >= 0.0) {
            return Err(Error::config("noise variance must be nonnegative"));
        }
        qam_side(self.qam_order).map(|_| ())
    }
}

fn qam_side(order: usize) -> Result<usize> {
    let side = (order as f64).sqrt().round() as usize;
    if order < 4 || side * side != order || !side.is_power_of_two() {
        return Err(Error::config(format!(
            "QAM order {order} is not a square power of two"
        )));
    }
    Ok(side)
}

/// Square Gray-mapped QAM constellation with unit average energy.
#[derive(Debug, Clone)]
pub struct QamAlphabet<T> {
    order: usize,
    side: usize,
    scale: T,
    points: Vec<Cplx<T>>,
    labels: Vec<u32>,
}

#[inline]
fn gray(i: usize) -> u32 {
    (i ^ (i >> 1)) as u32
}

pub fn build_qam_alphabet<T: Real>(order: usize) -> Result<QamAlphabet<T>> {
    let side = qam_side(order)?;
    let bits_axis = side.trailing_zeros();
    // Mean energy of the unscaled grid {±1, ±3, ...}².
    let raw_energy = 2.0 * ((side * side) as f64 - 1.0) / 3.0;
    let scale = T::lit(1.0 / raw_energy.sqrt());
    let level = |i: usize| T::lit((2 * i) as f64 - side as f64 + 1.0) * scale;
    let mut points = Vec::with_capacity(order);
    let mut labels = Vec::with_capacity(order);
    for i in 0..side {
        for q in 0..side {
            points.push(Cplx::new(level(i), level(q)));
            labels.push((gray(i) << bits_axis) | gray(q));
        }
    }
    Ok(QamAlphabet {
        order,
        side,
        scale,
        points,
        labels,
    })
}

impl<T: Real> QamAlphabet<T> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn points(&self) -> &[Cplx<T>] {
        &self.points
    }

    pub fn point(&self, idx: usize) -> Cplx<T> {
        self.points[idx]
    }

    pub fn bits_per_symbol(&self) -> u32 {
        self.order.trailing_zeros()
    }

    /// Gray bit label of a point.
    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    fn slice_axis(&self, x: T) -> usize {
        // Continuous level coordinate; halfway values go to the lower level.
        let u = (x / self.scale + T::from_count(self.side) - T::one()) / T::lit(2.0);
        let lower = u.floor();
        let frac = u - lower;
        let lvl = if frac > T::lit(0.5) { lower + T::one() } else { lower };
        let max = T::from_count(self.side - 1);
        lvl.max(T::zero()).min(max).to_usize().unwrap_or(0)
    }

    /// Index of the nearest constellation point; ties resolve toward the
    /// lexicographically smaller `(re, im)`.
    pub fn slice(&self, x: Cplx<T>) -> usize {
        self.slice_axis(x.re) * self.side + self.slice_axis(x.im)
    }

    /// Points with energy closest to one, used as pilot symbols.
    fn unit_like_points(&self) -> Vec<usize> {
        let dev = |i: usize| (self.points[i].norm_sqr() - T::one()).abs();
        let best = (0..self.order).map(dev).fold(T::infinity(), T::min);
        (0..self.order)
            .filter(|&i| dev(i) <= best + T::lit(1e-9))
            .collect()
    }
}

/// Number of bit positions in which two labels differ.
pub fn bit_errors(a: u32, b: u32) -> u32 {
    (a ^ b).count_ones()
}

/// Draws `n_pilots` distinct carrier indices uniformly, returned sorted.
pub fn place_pilots(n_carriers: usize, n_pilots: usize, seed: u64) -> Result<Vec<usize>> {
    if n_pilots > n_carriers {
        return Err(Error::config(format!(
            "{n_pilots} pilots exceed {n_carriers} carriers"
        )));
    }
    let mut rng = crate::rng::rng_from_seed(seed);
    let mut idx = index::sample(&mut rng, n_carriers, n_pilots).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

#[derive(Debug, Clone)]
pub struct OfdmFrame<T> {
    /// Transmitted symbol per carrier.
    pub freq_symbols: Vec<Cplx<T>>,
    /// Alphabet index per carrier.
    pub symbol_indices: Vec<usize>,
    /// Sorted pilot carriers.
    pub pilot_indices: Vec<usize>,
}

impl<T: Real> OfdmFrame<T> {
    pub fn n_carriers(&self) -> usize {
        self.freq_symbols.len()
    }

    /// Carriers that carry payload.
    pub fn data_indices(&self) -> Vec<usize> {
        let mut is_pilot = vec![false; self.n_carriers()];
        for &p in &self.pilot_indices {
            is_pilot[p] = true;
        }
        (0..self.n_carriers()).filter(|&i| !is_pilot[i]).collect()
    }

    /// A frame with explicit symbols (e.g. all ones), bypassing the alphabet.
    pub fn from_symbols(freq_symbols: Vec<Cplx<T>>, pilot_indices: Vec<usize>) -> Self {
        let n = freq_symbols.len();
        Self {
            freq_symbols,
            symbol_indices: vec![0; n],
            pilot_indices,
        }
    }
}

/// Random data on non-pilot carriers; pilot carriers hold grid-wide fixed
/// symbols derived from `config.seed`.
pub fn modulate_frame<T: Real, R: Rng + ?Sized>(
    config: &OfdmConfig,
    alphabet: &QamAlphabet<T>,
    pilots: &[usize],
    rng: &mut R,
) -> Result<OfdmFrame<T>> {
    config.validate()?;
    if alphabet.order() != config.qam_order {
        return Err(Error::config("alphabet order differs from configuration"));
    }
    let n = config.n_carriers;
    if pilots.len() != config.n_pilots {
        return Err(Error::config(format!(
            "{} pilot indices for K = {}",
            pilots.len(),
            config.n_pilots
        )));
    }
    if pilots.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::config("pilot indices must be strictly increasing"));
    }
    if let Some(&p) = pilots.iter().find(|&&p| p >= n) {
        return Err(Error::Index { index: p, bound: n });
    }
    let candidates = alphabet.unit_like_points();
    let mut pilot_rng = stream(config.seed, &[PILOT_SYMBOL_STREAM]);
    let mut symbol_indices = vec![0usize; n];
    let mut pilot_iter = pilots.iter().peekable();
    for (i, slot) in symbol_indices.iter_mut().enumerate() {
        if pilot_iter.peek() == Some(&&i) {
            pilot_iter.next();
            *slot = candidates[pilot_rng.random_range(0..candidates.len())];
        } else {
            *slot = rng.random_range(0..alphabet.order());
        }
    }
    let freq_symbols = symbol_indices.iter().map(|&s| alphabet.point(s)).collect();
    Ok(OfdmFrame {
        freq_symbols,
        symbol_indices,
        pilot_indices: pilots.to_vec(),
    })
}

#[inline]
fn dft_entry<T: Real>(n: usize, k: usize, l: usize) -> Cplx<T> {
    let phase = -2.0 * PI * ((k * l) % n) as f64 / n as f64;
    let s = 1.0 / (n as f64).sqrt();
    Cplx::new(T::lit(phase.cos() * s), T::lit(phase.sin() * s))
}

/// First `cols` columns of the unitary `n`-point DFT matrix.
pub fn truncated_dft<T: Real>(n: usize, cols: usize) -> CMat<T> {
    CMat::from_fn(n, cols, |k, l| dft_entry(n, k, l))
}

/// `H = F̲ h`, the channel frequency response on all `n` carriers.
pub fn frequency_response<T: Real>(h: &[Cplx<T>], n: usize) -> Vec<Cplx<T>> {
    (0..n)
        .map(|k| {
            h.iter()
                .enumerate()
                .filter(|(_, v)| v.re != T::zero() || v.im != T::zero())
                .fold(czero(), |acc, (l, v)| acc + dft_entry::<T>(n, k, l) * v)
        })
        .collect()
}

/// `A = diag(X) F̲`, optionally restricted to a row subset.
#[derive(Debug, Clone)]
pub struct SensingMatrix<T> {
    pub matrix: CMat<T>,
    /// Carrier index of every row.
    pub carriers: Vec<usize>,
}

pub fn build_sensing_matrix<T: Real>(
    frame: &OfdmFrame<T>,
    channel_len: usize,
    restrict_to: Option<&[usize]>,
) -> Result<SensingMatrix<T>> {
    let n = frame.n_carriers();
    if channel_len > n {
        return Err(Error::config(format!(
            "channel length {channel_len} exceeds {n} carriers"
        )));
    }
    let carriers: Vec<usize> = match restrict_to {
        Some(idx) => {
            if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
                return Err(Error::Index { index: bad, bound: n });
            }
            idx.to_vec()
        }
        None => (0..n).collect(),
    };
    let matrix = CMat::from_fn(carriers.len(), channel_len, |r, l| {
        let k = carriers[r];
        frame.freq_symbols[k] * dft_entry::<T>(n, k, l)
    });
    Ok(SensingMatrix { matrix, carriers })
}

/// Builds rows `symbol × F̲(carrier, :)` for explicit (carrier, symbol) pairs.
pub fn sensing_rows<T: Real>(
    n_carriers: usize,
    channel_len: usize,
    rows: &[(usize, Cplx<T>)],
) -> CMat<T> {
    CMat::from_fn(rows.len(), channel_len, |r, l| {
        let (k, x) = rows[r];
        x * dft_entry::<T>(n_carriers, k, l)
    })
}

/// `Y = A h + W` with `W ~ CN(0, σ² I)`.
pub fn synthesize_received<T: Real, R: Rng + ?Sized>(
    a: &CMat<T>,
    h: &[Cplx<T>],
    noise_var: f64,
    rng: &mut R,
) -> Result<Vec<Cplx<T>>> {
    let mut y = a.mul_vec(h)?;
    if noise_var > 0.0 {
        for v in y.iter_mut() {
            *v += complex_gaussian::<T, _>(rng, noise_var);
        }
    }
    Ok(y)
}

/// Zero-forcing output for a set of carriers.
#[derive(Debug, Clone)]
pub struct Detection<T> {
    /// `Y(i) / Ĥ(i)`; zero where the carrier is undecodable.
    pub equalized: Vec<Cplx<T>>,
    /// Alphabet index of the nearest point, `None` when `|Ĥ(i)|` is below
    /// [`NULL_RESPONSE_TOL`].
    pub decisions: Vec<Option<usize>>,
}

pub fn equalize_and_slice<T: Real>(
    y: &[Cplx<T>],
    h_hat: &[Cplx<T>],
    alphabet: &QamAlphabet<T>,
) -> Result<Detection<T>> {
    if y.len() != h_hat.len() {
        return Err(Error::Shape(format!(
            "{} received carriers against {} channel coefficients",
            y.len(),
            h_hat.len()
        )));
    }
    let tol = T::lit(NULL_RESPONSE_TOL);
    let mut equalized = Vec::with_capacity(y.len());
    let mut decisions = Vec::with_capacity(y.len());
    for (yi, hi) in y.iter().zip(h_hat) {
        if hi.norm() < tol {
            equalized.push(czero());
            decisions.push(None);
        } else {
            let x = yi / hi;
            equalized.push(x);
            decisions.push(Some(alphabet.slice(x)));
        }
    }
    Ok(Detection {
        equalized,
        decisions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use proptest::prelude::*;

    type C = Cplx<f64>;

    fn config(n: usize, k: usize, q: usize) -> OfdmConfig {
        OfdmConfig {
            n_carriers: n,
            n_pilots: k,
            qam_order: q,
            channel_len: 8.min(n),
            noise_var: 0.0,
            seed: 11,
        }
    }

    #[test]
    fn qam4_points() {
        let a = build_qam_alphabet::<f64>(4).unwrap();
        let s = 1.0 / 2f64.sqrt();
        for p in a.points() {
            assert!((p.re.abs() - s).abs() < 1e-15 && (p.im.abs() - s).abs() < 1e-15);
        }
        let e: f64 = a.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / 4.0;
        assert!((e - 1.0).abs() < 1e-12);
        // Gray labels: (1+j)/√2 carries 11.
        assert_eq!(a.label(a.slice(C::new(0.9, 0.8))), 0b11);
    }

    #[test]
    fn qam16_grid_and_energy() {
        let a = build_qam_alphabet::<f64>(16).unwrap();
        let s = 1.0 / 10f64.sqrt();
        let e: f64 = a.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert!((e - 1.0).abs() < 1e-12);
        for p in a.points() {
            let lv = (p.re / s).round();
            assert!([-3.0, -1.0, 1.0, 3.0].contains(&lv));
            assert!((p.re - lv * s).abs() < 1e-14);
        }
        // Adjacent points differ in exactly one bit.
        for i in 0..16 {
            for j in 0..16 {
                let d = (a.point(i) - a.point(j)).norm();
                if (d - 2.0 * s).abs() < 1e-12 {
                    assert_eq!(bit_errors(a.label(i), a.label(j)), 1);
                }
            }
        }
    }

    #[test]
    fn non_square_orders_rejected() {
        for q in [2, 8, 32, 12, 0] {
            assert!(build_qam_alphabet::<f64>(q).is_err(), "order {q}");
        }
        assert!(build_qam_alphabet::<f32>(64).is_ok());
    }

    #[test]
    fn slicing_examples_and_ties() {
        let a = build_qam_alphabet::<f64>(4).unwrap();
        let p = a.point(a.slice(C::new(0.9, 0.8)));
        let s = 1.0 / 2f64.sqrt();
        assert!((p - C::new(s, s)).norm() < 1e-15);
        // Origin is equidistant from all four points: smallest (re, im) wins.
        let p0 = a.point(a.slice(C::new(0.0, 0.0)));
        assert!((p0 - C::new(-s, -s)).norm() < 1e-15);
    }

    #[test]
    fn pilot_placement() {
        let p = place_pilots(512, 16, 3).unwrap();
        assert_eq!(p.len(), 16);
        assert!(p.windows(2).all(|w| w[0] < w[1]));
        assert!(p.iter().all(|&i| i < 512));
        assert_eq!(p, place_pilots(512, 16, 3).unwrap());
        assert_eq!(place_pilots(512, 8, 3).unwrap().len(), 8);
        assert!(matches!(place_pilots(4, 5, 0), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn frames_are_deterministic_and_shaped() {
        let cfg = config(512, 16, 16);
        let a = build_qam_alphabet::<f64>(16).unwrap();
        let pilots = place_pilots(512, 16, 1).unwrap();
        let f1 = modulate_frame(&cfg, &a, &pilots, &mut rng_from_seed(5)).unwrap();
        let f2 = modulate_frame(&cfg, &a, &pilots, &mut rng_from_seed(5)).unwrap();
        assert_eq!(f1.freq_symbols.len(), 512);
        assert_eq!(f1.symbol_indices, f2.symbol_indices);
        for (x, &s) in f1.freq_symbols.iter().zip(&f1.symbol_indices) {
            assert_eq!(*x, a.point(s));
        }
        // Pilot symbols depend only on the config seed, not the data stream.
        let f3 = modulate_frame(&cfg, &a, &pilots, &mut rng_from_seed(99)).unwrap();
        for &p in &pilots {
            assert_eq!(f1.freq_symbols[p], f3.freq_symbols[p]);
            assert!((f1.freq_symbols[p].norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn all_pilot_frame() {
        let cfg = config(8, 8, 4);
        let a = build_qam_alphabet::<f64>(4).unwrap();
        let pilots: Vec<usize> = (0..8).collect();
        let f = modulate_frame(&cfg, &a, &pilots, &mut rng_from_seed(1)).unwrap();
        assert!(f.data_indices().is_empty());
    }

    #[test]
    fn sensing_matrix_structure() {
        let n = 16;
        let ones = OfdmFrame::from_symbols(vec![C::new(1.0, 0.0); n], vec![]);
        let a = build_sensing_matrix(&ones, 4, None).unwrap();
        assert_eq!(a.matrix, truncated_dft::<f64>(n, 4));

        let cfg = config(512, 16, 4);
        let alpha = build_qam_alphabet::<f64>(4).unwrap();
        let pilots = place_pilots(512, 16, 2).unwrap();
        let frame = modulate_frame(&cfg, &alpha, &pilots, &mut rng_from_seed(2)).unwrap();
        let full = build_sensing_matrix(&frame, 64, None).unwrap();
        let restricted = build_sensing_matrix(&frame, 64, Some(&pilots)).unwrap();
        assert_eq!((restricted.matrix.rows(), restricted.matrix.cols()), (16, 64));
        assert_eq!(restricted.matrix, full.matrix.select_rows(&pilots).unwrap());
        let f = truncated_dft::<f64>(512, 64);
        for i in [0, 7, 300] {
            for l in 0..64 {
                assert_eq!(full.matrix.get(i, l), frame.freq_symbols[i] * f.get(i, l));
            }
        }
        assert!(matches!(
            build_sensing_matrix(&frame, 64, Some(&[3, 512])),
            Err(Error::Index { index: 512, .. })
        ));
    }

    #[test]
    fn dft_is_unitary() {
        let n = 32;
        let f = truncated_dft::<f64>(n, n);
        let x: Vec<C> = (0..n).map(|i| C::new((i as f64).sin(), (i as f64 * 0.3).cos())).collect();
        let big_x = f.mul_vec(&x).unwrap();
        let back = f.adjoint_mul_vec(&big_x).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).norm() < 1e-10);
        }
        let nx: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let nbx: f64 = big_x.iter().map(|z| z.norm_sqr()).sum();
        assert!((nx - nbx).abs() < 1e-10);
        let h: Vec<C> = x[..5].to_vec();
        let direct = truncated_dft::<f64>(n, 5).mul_vec(&h).unwrap();
        for (a, b) in direct.iter().zip(frequency_response(&h, n)) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn received_signal() {
        let a = truncated_dft::<f64>(64, 8);
        let h: Vec<C> = (0..8).map(|i| C::new(i as f64, -1.0)).collect();
        let y = synthesize_received(&a, &h, 0.0, &mut rng_from_seed(0)).unwrap();
        assert_eq!(y, a.mul_vec(&h).unwrap());
        assert!(matches!(
            synthesize_received(&a, &h[..3], 0.1, &mut rng_from_seed(0)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn noise_only_variance() {
        // h = 0: empirical per-entry variance of 1e5 draws within 5% of σ².
        let a = truncated_dft::<f64>(1000, 4);
        let mut rng = rng_from_seed(17);
        let var = 0.3;
        let mut acc = 0.0;
        let mut count = 0usize;
        for _ in 0..100 {
            let y = synthesize_received(&a, &[C::new(0.0, 0.0); 4], var, &mut rng).unwrap();
            acc += y.iter().map(|z| z.norm_sqr()).sum::<f64>();
            count += y.len();
        }
        let est = acc / count as f64;
        assert!((est - var).abs() / var < 0.05, "{est}");
    }

    #[test]
    fn zero_forcing_detection() {
        let cfg = config(64, 4, 16);
        let alpha = build_qam_alphabet::<f64>(16).unwrap();
        let pilots = place_pilots(64, 4, 0).unwrap();
        let frame = modulate_frame(&cfg, &alpha, &pilots, &mut rng_from_seed(3)).unwrap();
        let h: Vec<C> = vec![C::new(0.8, 0.1), C::new(0.0, 0.0), C::new(-0.3, 0.4)];
        let big_h = frequency_response(&h, 64);
        let a = build_sensing_matrix(&frame, 3, None).unwrap();
        let y = synthesize_received(&a.matrix, &h, 0.0, &mut rng_from_seed(0)).unwrap();
        let det = equalize_and_slice(&y, &big_h, &alpha).unwrap();
        for (d, &s) in det.decisions.iter().zip(&frame.symbol_indices) {
            assert_eq!(*d, Some(s));
        }
        let mut nulled = big_h.clone();
        nulled[5] = C::new(0.0, 0.0);
        let det = equalize_and_slice(&y, &nulled, &alpha).unwrap();
        assert_eq!(det.decisions[5], None);
        assert!(det.decisions[6].is_some());
    }

    proptest! {
        #[test]
        fn slicing_is_nearest_and_idempotent(re in -2.0f64..2.0, im in -2.0f64..2.0, q in prop::sample::select(vec![4usize, 16, 64])) {
            let a = build_qam_alphabet::<f64>(q).unwrap();
            let x = C::new(re, im);
            let idx = a.slice(x);
            let best = a.points().iter().map(|p| (p - x).norm()).fold(f64::INFINITY, f64::min);
            prop_assert!(((a.point(idx) - x).norm() - best).abs() < 1e-12);
            prop_assert_eq!(a.slice(a.point(idx)), idx);
        }
    }
}
