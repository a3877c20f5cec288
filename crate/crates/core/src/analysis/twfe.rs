use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Z_95;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwfeResult {
    pub beta: f64,
    pub clustered_se: f64,
    pub ci: (f64, f64),
    pub n_units: usize,
    pub n_switchers: usize,
    pub cluster_count: usize,
    pub n_obs: usize,
    pub iterations: usize,
}

const MAX_SWEEPS: usize = 10_000;
const TOLERANCE: f64 = 1e-10;

fn index<S: AsRef<str>>(labels: &[S]) -> (Vec<usize>, usize) {
    let mut map: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        let next = map.len();
        map.entry(l.as_ref()).or_insert(next);
    }
    let idx = labels.iter().map(|l| map[l.as_ref()]).collect();
    (idx, map.len())
}

/// Removes unit and period means by alternating projections until no
/// entry moves by more than 1e-10. Returns the number of sweeps.
fn demean(v: &mut [f64], unit: &[usize], nu: usize, period: &[usize], np: usize) -> usize {
    let mut sums = vec![0.0; nu.max(np)];
    let mut counts = vec![0usize; nu.max(np)];
    for sweep in 1..=MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for (groups, ng) in [(unit, nu), (period, np)] {
            sums[..ng].iter_mut().for_each(|s| *s = 0.0);
            counts[..ng].iter_mut().for_each(|c| *c = 0);
            for (&g, &x) in groups.iter().zip(v.iter()) {
                sums[g] += x;
                counts[g] += 1;
            }
            for (x, &g) in v.iter_mut().zip(groups) {
                let m = sums[g] / counts[g] as f64;
                *x -= m;
                change = change.max(m.abs());
            }
        }
        if change < TOLERANCE {
            return sweep;
        }
    }
    MAX_SWEEPS
}

/// Two-way fixed-effects regression `Y = αᵢ + λₜ + βA + ε` with
/// cluster-robust standard errors (G/(G−1) small-sample factor).
pub fn twfe<S: AsRef<str>>(y: &[f64], a: &[f64], units: &[S], periods: &[usize], clusters: &[S]) -> Result<TwfeResult> {
    let n = y.len();
    if a.len() != n || units.len() != n || periods.len() != n || clusters.len() != n {
        return Err(Error::Input("twfe inputs differ in length".into()));
    }
    if y.iter().chain(a).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite value in twfe inputs".into()));
    }
    let (u_idx, nu) = index(units);
    let period_labels: Vec<String> = periods.iter().map(|p| p.to_string()).collect();
    let (p_idx, np) = index(&period_labels);
    let (c_idx, nc) = index(clusters);
    if np < 2 {
        return Err(Error::InsufficientData("twfe needs at least 2 periods".into()));
    }
    if nc < 2 {
        return Err(Error::Clustering(format!("twfe needs at least 2 clusters, found {nc}")));
    }
    let mut status: Vec<BTreeSet<u64>> = vec![BTreeSet::new(); nu];
    for (&u, &t) in u_idx.iter().zip(a) {
        status[u].insert(t.to_bits());
    }
    let n_switchers = status.iter().filter(|s| s.len() > 1).count();
    if n_switchers == 0 {
        return Err(Error::NoIdentification(
            "no unit changes treatment status across periods".into(),
        ));
    }
    let mut yt = y.to_vec();
    let mut at = a.to_vec();
    let it_y = demean(&mut yt, &u_idx, nu, &p_idx, np);
    let it_a = demean(&mut at, &u_idx, nu, &p_idx, np);
    let saa: f64 = at.iter().map(|v| v * v).sum();
    if saa <= 1e-12 {
        return Err(Error::NoIdentification(
            "treatment is absorbed by the fixed effects".into(),
        ));
    }
    let beta = at.iter().zip(&yt).map(|(x, z)| x * z).sum::<f64>() / saa;
    let mut score = vec![0.0; nc];
    for ((&c, &x), &z) in c_idx.iter().zip(&at).zip(&yt) {
        score[c] += x * (z - beta * x);
    }
    let g = nc as f64;
    let meat: f64 = score.iter().map(|s| s * s).sum();
    let var = g / (g - 1.0) * meat / (saa * saa);
    let se = var.sqrt();
    Ok(TwfeResult {
        beta,
        clustered_se: se,
        ci: (beta - Z_95 * se, beta + Z_95 * se),
        n_units: nu,
        n_switchers,
        cluster_count: nc,
        n_obs: n,
        iterations: it_y.max(it_a),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    type Fixture = (Vec<f64>, Vec<f64>, Vec<String>, Vec<usize>, Vec<String>);

    fn fixture(beta: f64) -> Fixture {
        let alpha = [1.0, -2.0, 0.5, 4.0];
        let lambda = [0.0, 3.0, -1.0];
        let treat = [[0, 1, 1], [0, 0, 1], [0, 0, 0], [1, 0, 1]];
        let (mut y, mut a, mut u, mut p, mut c) = (vec![], vec![], vec![], vec![], vec![]);
        for i in 0..4 {
            for t in 0..3 {
                let at = treat[i][t] as f64;
                y.push(alpha[i] + lambda[t] + beta * at);
                a.push(at);
                u.push(format!("u{i}"));
                p.push(t);
                c.push(format!("c{}", i / 2));
            }
        }
        (y, a, u, p, c)
    }

    #[test]
    fn recovers_constructed_beta() {
        let (y, a, u, p, c) = fixture(2.0);
        let r = twfe(&y, &a, &u, &p, &c).unwrap();
        assert!((r.beta - 2.0).abs() < 1e-8);
        assert_eq!(r.n_switchers, 3);
        let shifted: Vec<f64> = y
            .iter()
            .zip(&p)
            .map(|(v, &t)| if t == 1 { v + 7.0 } else { *v })
            .collect();
        let r2 = twfe(&shifted, &a, &u, &p, &c).unwrap();
        assert!((r2.beta - r.beta).abs() < 1e-9);
    }

    #[test]
    fn constant_treatment_is_not_identified() {
        let (y, _, u, p, c) = fixture(2.0);
        let a: Vec<f64> = u.iter().map(|s| if s == "u0" { 1.0 } else { 0.0 }).collect();
        assert!(matches!(twfe(&y, &a, &u, &p, &c), Err(Error::NoIdentification(_))));
    }
}
