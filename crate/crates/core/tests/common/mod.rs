//! Reference linear algebra written independently of the crate's QR code.
#![allow(dead_code)]

use sparse_chanest::Complex64 as C;

/// Solves `G x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut g: Vec<Vec<C>>, mut b: Vec<C>) -> Vec<C> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| g[i][col].norm().partial_cmp(&g[j][col].norm()).unwrap())
            .unwrap();
        g.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = g[r][col] / g[col][col];
            for c in col..n {
                let v = g[col][c];
                g[r][c] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = vec![C::new(0.0, 0.0); n];
    for r in (0..n).rev() {
        let mut acc = b[r];
        for c in r + 1..n {
            acc -= g[r][c] * x[c];
        }
        x[r] = acc / g[r][r];
    }
    x
}

/// `A_S^H A_S` for columns given explicitly.
pub fn gram(cols: &[Vec<C>]) -> Vec<Vec<C>> {
    cols.iter()
        .map(|ci| cols.iter().map(|cj| ci.iter().zip(cj).map(|(a, b)| a.conj() * b).sum()).collect())
        .collect()
}

/// Inverse of a small matrix, column by column.
pub fn inverse(g: &[Vec<C>]) -> Vec<Vec<C>> {
    let n = g.len();
    let cols: Vec<Vec<C>> = (0..n)
        .map(|j| {
            let e: Vec<C> = (0..n).map(|i| C::new(f64::from(u8::from(i == j)), 0.0)).collect();
            solve(g.to_vec(), e)
        })
        .collect();
    (0..n).map(|i| (0..n).map(|j| cols[j][i]).collect()).collect()
}

/// Least squares on the given columns through the normal equations, with
/// the residual formed explicitly so its error is second order in the
/// coefficient error.
pub fn least_squares(cols: &[Vec<C>], y: &[C]) -> (Vec<C>, f64) {
    if cols.is_empty() {
        return (Vec::new(), y.iter().map(|v| v.norm_sqr()).sum());
    }
    let rhs: Vec<C> = cols.iter().map(|c| c.iter().zip(y).map(|(a, b)| a.conj() * b).sum()).collect();
    let x = solve(gram(cols), rhs);
    let mut r = y.to_vec();
    for (c, xi) in cols.iter().zip(&x) {
        for (ri, ci) in r.iter_mut().zip(c) {
            *ri -= ci * xi;
        }
    }
    (x, r.iter().map(|v| v.norm_sqr()).sum())
}

/// Unnormalized log posterior of a support under an independent Bernoulli
/// prior: `-‖P⊥ y‖² / (2σ²) + Σ_{i∈S} ln λ_i + Σ_{j∉S} ln(1 - λ_j)`.
pub fn log_metric(residual: f64, noise_var: f64, lambdas: &[f64], support: &[usize]) -> f64 {
    let prior: f64 = lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| if support.contains(&i) { l.ln() } else { (1.0 - l).ln() })
        .sum();
    -residual / (2.0 * noise_var) + prior
}

/// Every subset of `items` with size in `1..=max_size`, smallest first.
pub fn subsets(items: &[usize], max_size: usize) -> Vec<Vec<usize>> {
    fn extend(items: &[usize], start: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for i in start..items.len() {
            cur.push(items[i]);
            extend(items, i + 1, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    for size in 1..=max_size.min(items.len()) {
        extend(items, 0, size, &mut Vec::new(), &mut out);
    }
    out
}

/// Pilot rows `x_k e^{-j2πkl/N} / √N` for the given carriers.
pub fn pilot_matrix(n: usize, carriers: &[usize], symbols: &[C], l: usize) -> Vec<Vec<C>> {
    (0..l)
        .map(|col| {
            carriers
                .iter()
                .zip(symbols)
                .map(|(&k, &x)| {
                    let phase = -2.0 * std::f64::consts::PI * ((k * col) % n) as f64 / n as f64;
                    x * C::from_polar(1.0 / (n as f64).sqrt(), phase)
                })
                .collect()
        })
        .collect()
}

pub fn ratio_db(truth: &[C], est: &[C]) -> f64 {
    let e: f64 = truth.iter().zip(est).map(|(a, b)| (a - b).norm_sqr()).sum();
    let h: f64 = truth.iter().map(|v| v.norm_sqr()).sum();
    10.0 * (e / h).log10()
}
