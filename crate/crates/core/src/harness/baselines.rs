use rayon::prelude::*;

use crate::channel_model::{AntennaGrid, ArrayKind};
use crate::coordination::PilotObservation;
use crate::error::{Error, Result};
use crate::linalg::{CMat, IncrementalQr};
use crate::sabmp::blue_estimate;
use crate::scalar::{czero, dot_conj, norm_sqr, Cplx, Real};

/// Least squares on the known true support, zero elsewhere.
pub fn oracle_ls_estimate<T: Real>(a: &CMat<T>, y: &[Cplx<T>], support: &[usize]) -> Result<Vec<Cplx<T>>> {
    if support.len() > a.rows() {
        return Err(Error::config(format!(
            "support of {} taps exceeds {} observations",
            support.len(),
            a.rows()
        )));
    }
    let mut h = vec![czero(); a.cols()];
    if support.is_empty() {
        return Ok(h);
    }
    let x = blue_estimate(&a.select_cols(support)?, y)?;
    for (&i, v) in support.iter().zip(x) {
        h[i] = v;
    }
    Ok(h)
}

#[derive(Debug, Clone)]
pub struct SompOutput<T> {
    pub estimates: Vec<Vec<Cplx<T>>>,
    /// Set when the grid is space-variant and the common-support
    /// assumption does not hold.
    pub assumption_violated: bool,
}

/// Simultaneous OMP over one closed neighborhood sharing the sensing
/// matrix; returns the selected support and the central member's LS fit.
pub fn somp_neighborhood<T: Real>(a: &CMat<T>, ys: &[&[Cplx<T>]], atoms: usize) -> (Vec<usize>, Vec<Cplx<T>>) {
    let l = a.cols();
    let cols = a.columns();
    let energy: Vec<T> = cols.iter().map(|c| norm_sqr(c)).collect();
    let mut qrs: Vec<IncrementalQr<T>> = ys.iter().map(|y| IncrementalQr::new(y)).collect();
    let mut blocked = vec![false; l];
    let mut support = Vec::new();
    let tol = T::lit(1e-12);
    while support.len() < atoms.min(a.rows()) {
        let score = |j: usize| -> T {
            qrs.iter()
                .map(|q| dot_conj(&cols[j], q.residual()).norm_sqr())
                .sum::<T>()
                / energy[j]
        };
        let mut ranked: Vec<(usize, T)> = (0..l)
            .filter(|&j| !blocked[j] && energy[j] > T::zero())
            .map(|j| (j, score(j)))
            .collect();
        ranked.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal).then(x.0.cmp(&y.0)));
        let mut picked = None;
        for (j, _) in ranked {
            blocked[j] = true;
            if qrs[0].push(&cols[j], tol).is_ok() {
                for q in qrs.iter_mut().skip(1) {
                    q.push(&cols[j], tol).expect("same column space as the first member");
                }
                picked = Some(j);
                break;
            }
        }
        match picked {
            Some(j) => support.push(j),
            None => break,
        }
    }
    let mut h = vec![czero(); l];
    for (&i, v) in support.iter().zip(qrs[0].solve()) {
        h[i] = v;
    }
    (support, h)
}

/// SOMP with `atoms` selections per neighborhood, LS-debiased for the
/// central antenna. Every antenna must share the same sensing matrix.
pub fn somp_baseline<T: Real>(
    grid: &AntennaGrid,
    observations: &[PilotObservation<T>],
    atoms: usize,
    mode: ArrayKind,
) -> Result<SompOutput<T>> {
    if observations.len() != grid.len() {
        return Err(Error::Shape(format!(
            "{} observations for a {}-antenna grid",
            observations.len(),
            grid.len()
        )));
    }
    let assumption_violated = mode == ArrayKind::Sva;
    if assumption_violated {
        log::warn!("SOMP assumes a common support; the grid is space-variant");
    }
    let estimates = (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let nb = grid.closed_neighborhood(c);
            let ys: Vec<&[Cplx<T>]> = nb.iter().map(|&j| observations[j].received.as_slice()).collect();
            somp_neighborhood(&observations[c].sensing, &ys, atoms).1
        })
        .collect();
    Ok(SompOutput {
        estimates,
        assumption_violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{complex_gaussian, rng_from_seed};

    type C = Cplx<f64>;

    fn matrix(k: usize, l: usize, seed: u64) -> CMat<f64> {
        let mut rng = rng_from_seed(seed);
        CMat::from_fn(k, l, |_, _| complex_gaussian(&mut rng, 1.0 / k as f64))
    }

    #[test]
    fn oracle_recovers_noiseless_channel() {
        let a = matrix(8, 20, 1);
        let mut h = vec![C::new(0.0, 0.0); 20];
        h[3] = C::new(0.4, -1.0);
        h[12] = C::new(1.5, 0.2);
        let y = a.mul_vec(&h).unwrap();
        let est = oracle_ls_estimate(&a, &y, &[3, 12]).unwrap();
        for (e, t) in est.iter().zip(&h) {
            assert!((e - t).norm() < 1e-10);
        }
        let too_many: Vec<usize> = (0..9).collect();
        assert!(oracle_ls_estimate(&a, &y, &too_many).is_err());
    }

    #[test]
    fn single_atom_matched_filter() {
        let a = matrix(10, 16, 2);
        let mut h = vec![C::new(0.0, 0.0); 16];
        h[9] = C::new(0.0, 2.0);
        let y = a.mul_vec(&h).unwrap();
        let (support, est) = somp_neighborhood(&a, &[&y], 1);
        assert_eq!(support, vec![9]);
        assert!((est[9] - h[9]).norm() < 1e-10);
    }

    #[test]
    fn sva_flagged() {
        let g = AntennaGrid::lte(1, 2);
        let a = matrix(6, 8, 3);
        let obs = vec![
            PilotObservation {
                sensing: a.clone(),
                received: vec![C::new(1.0, 0.0); 6]
            };
            2
        ];
        assert!(somp_baseline(&g, &obs, 2, ArrayKind::Sva).unwrap().assumption_violated);
        assert!(!somp_baseline(&g, &obs, 2, ArrayKind::Sia).unwrap().assumption_violated);
    }
}
