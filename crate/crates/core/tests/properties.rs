//! Simulation-level properties checked against brute-force references.

mod common;

use sparse_chanest::coordination::{run_integer_based, run_marginal_based, CoordinationConfig};
use sparse_chanest::harness::{somp_neighborhood, simulate_trial, ExperimentSpec, SweepPoint};
use sparse_chanest::linalg::CMat;
use sparse_chanest::rng::{complex_gaussian, stream};
use sparse_chanest::sabmp::{greedy_search, BernoulliPrior, SolverSettings};
use sparse_chanest::Complex64 as C;

use common::*;

fn random_support(l: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut rng = stream(seed, &[1]);
    let mut s = rand::seq::index::sample(&mut rng, l, n).into_vec();
    s.sort_unstable();
    s
}

/// The only size-`n` support that fits every observation exactly.
fn brute_force_support(cols: &[Vec<C>], ys: &[Vec<C>], n: usize) -> Option<Vec<usize>> {
    let all: Vec<usize> = (0..cols.len()).collect();
    let energy: f64 = ys.iter().flatten().map(|v| v.norm_sqr()).sum();
    let fits: Vec<Vec<usize>> = subsets(&all, n)
        .into_iter()
        .filter(|s| s.len() == n)
        .filter(|s| {
            let sc: Vec<Vec<C>> = s.iter().map(|&i| cols[i].clone()).collect();
            let res: f64 = ys.iter().map(|y| least_squares(&sc, y).1).sum();
            res <= 1e-18 * energy
        })
        .collect();
    (fits.len() == 1).then(|| fits[0].clone())
}

#[test]
fn noiseless_chain_contains_true_support_as_prefix() {
    let (k, l, n, trials) = (6, 8, 2, 500u64);
    let prior = BernoulliPrior::uniform(l, n as f64 / l as f64);
    let mut hits = 0;
    let mut unique = 0;
    for seed in 0..trials {
        let mut rng = stream(seed, &[2]);
        let cols: Vec<Vec<C>> = (0..l)
            .map(|_| (0..k).map(|_| complex_gaussian(&mut rng, 1.0 / k as f64)).collect())
            .collect();
        let a = CMat::from_fn(k, l, |r, c| cols[c][r]);
        let support = random_support(l, n, seed);
        let mut h = vec![C::new(0.0, 0.0); l];
        for &i in &support {
            h[i] = complex_gaussian(&mut rng, 1.0 / n as f64);
        }
        let y = a.mul_vec(&h).unwrap();
        if brute_force_support(&cols, std::slice::from_ref(&y), n).as_ref() == Some(&support) {
            unique += 1;
        }
        let est = greedy_search(&a, &y, &prior, 1e-8, 3, &SolverSettings::default()).unwrap();
        let mut prefix = est.supports[n - 1].indices.clone();
        prefix.sort_unstable();
        hits += usize::from(prefix == support);
    }
    assert_eq!(unique, trials as usize, "brute force finds a unique exact support");
    assert!(hits as f64 >= 0.95 * trials as f64, "{hits}/{trials}");
}

#[test]
fn sharing_does_not_lower_detection_rate() {
    let mut spec = ExperimentSpec::preset(2).unwrap();
    spec.rows = 5;
    spec.cols = 5;
    let point = SweepPoint {
        sparsity: 3,
        pilots: 8,
        snr_db: 200.0,
        depth: 3,
    };
    let config = CoordinationConfig {
        depth: point.depth,
        t_max: spec.t_max_for(&point),
        lambda_init: spec.lambda_init_for(&point),
        settings: spec.settings,
        ..Default::default()
    };
    let grid = spec.grid();
    let rate = |detected: &[usize], truth: &[usize]| truth.iter().filter(|t| detected.contains(t)).count();
    for integer in [false, true] {
        let (mut before, mut after, mut total) = (0, 0, 0);
        for trial in 0..100 {
            let data = simulate_trial(&spec, &point, trial, None).unwrap();
            let out = if integer {
                run_integer_based(&grid, &data.observations, &config)
            } else {
                run_marginal_based(&grid, &data.observations, &config)
            }
            .unwrap();
            for r in 0..grid.len() {
                let truth = &data.channels.supports[r];
                before += rate(out.initial[r].as_ref().unwrap().detected(), truth);
                after += rate(out.estimates[r].as_ref().unwrap().estimate.detected(), truth);
                total += truth.len();
            }
        }
        assert!(after >= before, "integer={integer}: {after} vs {before} of {total}");
    }
}

#[test]
fn somp_recovers_common_support_noiseless() {
    let (k, l, n, trials) = (10, 32, 3, 200u64);
    let mut exact = 0;
    for seed in 0..trials {
        let mut rng = stream(seed, &[3]);
        let cols: Vec<Vec<C>> = (0..l)
            .map(|_| (0..k).map(|_| complex_gaussian(&mut rng, 1.0 / k as f64)).collect())
            .collect();
        let a = CMat::from_fn(k, l, |r, c| cols[c][r]);
        let support = random_support(l, n, seed);
        let ys: Vec<Vec<C>> = (0..5)
            .map(|_| {
                let mut h = vec![C::new(0.0, 0.0); l];
                for &i in &support {
                    h[i] = complex_gaussian(&mut rng, 1.0 / n as f64);
                }
                a.mul_vec(&h).unwrap()
            })
            .collect();
        let refs: Vec<&[C]> = ys.iter().map(|y| y.as_slice()).collect();
        let (mut found, _) = somp_neighborhood(&a, &refs, n);
        found.sort_unstable();
        if found == support && brute_force_support(&cols, &ys, n).as_ref() == Some(&support) {
            exact += 1;
        }
    }
    assert!(exact as f64 >= 0.95 * trials as f64, "{exact}/{trials}");
}
