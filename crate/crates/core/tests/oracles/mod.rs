//! Independent reference implementations used by the integration and
//! acceptance tests. Each one takes a different route from the library code
//! it checks: brute force, explicit dummy-variable algebra, or iterative
//! optimisation.
#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub mod checks;
pub mod grad;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Share of treated/control pairs the treated unit wins, ties counting one
/// half, by enumerating every pair.
pub fn auc_pairs(scores: &[f64], labels: &[u8]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj != 0 {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// OLS by the normal equations `(X'WX)⁻¹X'Wy`; returns coefficients and
/// adjusted R² (the first column is the intercept).
pub fn normal_equations(x: &DMatrix<f64>, y: &[f64], w: Option<&[f64]>) -> (Vec<f64>, f64) {
    let n = x.nrows();
    let k = x.ncols();
    let w: Vec<f64> = w.map(<[f64]>::to_vec).unwrap_or_else(|| vec![1.0; n]);
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    let mut xty = DVector::<f64>::zeros(k);
    for i in 0..n {
        for a in 0..k {
            xty[a] += w[i] * x[(i, a)] * y[i];
            for b in 0..k {
                xtx[(a, b)] += w[i] * x[(i, a)] * x[(i, b)];
            }
        }
    }
    let beta = xtx.lu().solve(&xty).expect("full-rank design");
    let wsum: f64 = w.iter().sum();
    let ybar = w.iter().zip(y).map(|(a, b)| a * b).sum::<f64>() / wsum;
    let mut ssr = 0.0;
    let mut sst = 0.0;
    for i in 0..n {
        let fit: f64 = (0..k).map(|a| x[(i, a)] * beta[a]).sum();
        ssr += w[i] * (y[i] - fit).powi(2);
        sst += w[i] * (y[i] - ybar).powi(2);
    }
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let adj = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / (n - k) as f64;
    (beta.iter().copied().collect(), adj)
}

/// Two-way FE by least squares on the full dummy design (treatment, one
/// dummy per unit, one per non-reference period) with the sandwich
/// `(X'X)⁻¹ (Σ_g X_g'u_g u_g'X_g) (X'X)⁻¹ · G/(G−1)`. Returns (β, se).
pub fn twfe_dummies(y: &[f64], a: &[f64], units: &[String], periods: &[usize], clusters: &[String]) -> (f64, f64) {
    let index = |labels: Vec<String>| {
        let mut m: BTreeMap<String, usize> = BTreeMap::new();
        for l in &labels {
            let next = m.len();
            m.entry(l.clone()).or_insert(next);
        }
        let idx: Vec<usize> = labels.iter().map(|l| m[l]).collect();
        (idx, m.len())
    };
    let (ui, nu) = index(units.to_vec());
    let (pi, np) = index(periods.iter().map(|p| format!("{p:08}")).collect());
    let (ci, nc) = index(clusters.to_vec());
    let n = y.len();
    let k = 1 + nu + np - 1;
    let x = DMatrix::from_fn(n, k, |i, j| {
        if j == 0 {
            a[i]
        } else if j <= nu {
            f64::from(u8::from(ui[i] == j - 1))
        } else {
            f64::from(u8::from(pi[i] == j - nu))
        }
    });
    let xtx = x.transpose() * &x;
    let inv = xtx.try_inverse().expect("identified design");
    let yv = DVector::from_column_slice(y);
    let beta = &inv * x.transpose() * &yv;
    let u = &yv - &x * &beta;
    let mut meat = DMatrix::<f64>::zeros(k, k);
    for g in 0..nc {
        let mut s = DVector::<f64>::zeros(k);
        for i in (0..n).filter(|&i| ci[i] == g) {
            s += x.row(i).transpose() * u[i];
        }
        meat += &s * s.transpose();
    }
    let g = nc as f64;
    let v = &inv * meat * &inv * (g / (g - 1.0));
    (beta[0], v[(0, 0)].sqrt())
}

/// Centre each column and divide by its population sd; constant columns
/// become zero.
pub fn zscore(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for j in 0..m.ncols() {
        let mean = m.column(j).sum() / n;
        let var = m.column(j).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        for i in 0..m.nrows() {
            out[(i, j)] = if var > 0.0 {
                (m[(i, j)] - mean) / var.sqrt()
            } else {
                0.0
            };
        }
    }
    out
}

/// Leading canonical correlation by Riemannian gradient ascent on
/// `a'Σ_AB b` over the ellipsoids `a'(Σ_AA+λI)a = 1`, `b'(Σ_BB+λI)b = 1`,
/// best of several random starts.
pub fn cca_projected_gradient(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64, rng: &mut ChaCha8Rng) -> f64 {
    let n = a.nrows() as f64;
    let za = zscore(a);
    let zb = zscore(b);
    let caa = za.transpose() * &za / n + DMatrix::identity(a.ncols(), a.ncols()) * ridge;
    let cbb = zb.transpose() * &zb / n + DMatrix::identity(b.ncols(), b.ncols()) * ridge;
    let cab = za.transpose() * &zb / n;
    let project = |v: DVector<f64>, c: &DMatrix<f64>| {
        let q = (v.transpose() * c * &v)[(0, 0)];
        if q > 0.0 {
            v / q.sqrt()
        } else {
            v
        }
    };
    let mut best: f64 = 0.0;
    for _ in 0..8 {
        let mut u = project(DVector::from_fn(a.ncols(), |_, _| normal(rng)), &caa);
        let mut v = project(DVector::from_fn(b.ncols(), |_, _| normal(rng)), &cbb);
        let step = 0.1;
        for _ in 0..20_000 {
            // Gradient of a'Σ_AB b minus its component normal to each ellipsoid.
            let rho = (u.transpose() * &cab * &v)[(0, 0)];
            let gu = &cab * &v - &caa * &u * rho;
            let gv = cab.transpose() * &u - &cbb * &v * rho;
            u = project(&u + gu * step, &caa);
            v = project(&v + gv * step, &cbb);
        }
        best = best.max((u.transpose() * &cab * &v)[(0, 0)].abs());
    }
    best
}

/// Median of a slice by sorting a copy; even counts average the middle two.
pub fn sorted_median(values: &[f32]) -> f32 {
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        ((v[n / 2 - 1] as f64 + v[n / 2] as f64) / 2.0) as f32
    }
}

/// Relative disagreement used by the gradient probes.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Directional gradient probe: compares `g·v` against the central difference
/// of `f` along a random unit direction `v`. Returns the largest relative
/// error over `probes` directions.
pub fn directional_probes(
    f: &mut dyn FnMut(&[f32]) -> f64,
    grad: &[f32],
    x: &[f32],
    probes: usize,
    eps: f64,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..probes {
        let mut v: Vec<f64> = (0..x.len()).map(|_| normal(rng)).collect();
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        v.iter_mut().for_each(|t| *t /= norm);
        let shifted = |s: f64| -> Vec<f32> { x.iter().zip(&v).map(|(&xi, &vi)| (xi as f64 + s * vi) as f32).collect() };
        let (xp, xm) = (shifted(eps), shifted(-eps));
        let numeric = (f(&xp) - f(&xm)) / (2.0 * eps);
        // Directional derivative along the step actually taken after f32 rounding.
        let analytic: f64 = grad
            .iter()
            .zip(xp.iter().zip(&xm))
            .map(|(&g, (&p, &m))| g as f64 * (p as f64 - m as f64) / (2.0 * eps))
            .sum();
        worst = worst.max(rel_err(analytic, numeric));
    }
    worst
}
