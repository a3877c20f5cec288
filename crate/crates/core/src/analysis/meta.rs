use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::AteEstimate;
use crate::panel::Funder;

/// Ordinary (or weighted) least squares fit with aliased columns removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub names: Vec<String>,
    pub coef: Vec<f64>,
    pub se: Vec<f64>,
    pub dropped: Vec<String>,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
    pub df_resid: usize,
    pub residuals: Vec<f64>,
}

impl OlsFit {
    pub fn coefficient(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.coef[i])
    }
}

/// Least squares of `y` on the columns of `x`. The first column is taken to
/// be the intercept for R². Columns that are linear combinations of earlier
/// ones are dropped and listed in `dropped`. `weights` are observation
/// weights (the fit minimises Σwᵢeᵢ²).
pub fn ols(names: &[String], x: &DMatrix<f64>, y: &[f64], weights: Option<&[f64]>) -> Result<OlsFit> {
    let n = x.nrows();
    if y.len() != n || names.len() != x.ncols() || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::shape("ols", &[n, x.ncols()], &[y.len(), names.len()]));
    }
    let sw: Vec<f64> = match weights {
        Some(w) => {
            if w.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::Input("regression weights must be positive".into()));
            }
            w.iter().map(|v| v.sqrt()).collect()
        }
        None => vec![1.0; n],
    };
    let xw = DMatrix::from_fn(n, x.ncols(), |i, j| x[(i, j)] * sw[i]);
    let yw = DVector::from_fn(n, |i, _| y[i] * sw[i]);

    // Gram–Schmidt pass to find a maximal independent prefix-ordered set.
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let col = xw.column(j).into_owned();
        let scale = col.norm().max(1.0);
        let mut r = col.clone();
        for _ in 0..2 {
            for q in &basis {
                let d = q.dot(&r);
                r.axpy(-d, q, 1.0);
            }
        }
        let norm = r.norm();
        if norm > 1e-10 * scale {
            basis.push(r / norm);
            kept.push(j);
        } else {
            log::info!("dropping aliased regressor `{name}`");
            dropped.push(name.clone());
        }
    }
    let p = kept.len();
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} observations for {p} regressors leaves no residual degrees of freedom"
        )));
    }
    let xk = xw.select_columns(&kept);
    let qr = xk.clone().qr();
    let r = qr.r();
    let qty = qr.q().transpose() * &yw;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::NoIdentification("singular design after alias removal".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::NoIdentification("singular design after alias removal".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let fitted = &xk * &coef;
    let resid_w = &yw - fitted;
    let ssr = resid_w.norm_squared();
    let wsum: f64 = sw.iter().map(|s| s * s).sum();
    let ybar = yw.iter().zip(&sw).map(|(v, s)| v * s).sum::<f64>() / wsum;
    let sst: f64 = y.iter().zip(&sw).map(|(v, s)| (s * (v - ybar)).powi(2)).sum();
    let df = n - p;
    let sigma2 = ssr / df as f64;
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let adj_r2 = 1.0 - (1.0 - r2) * (n as f64 - 1.0) / df as f64;
    let residuals = resid_w.iter().zip(&sw).map(|(e, s)| e / s).collect();
    Ok(OlsFit {
        names: kept.iter().map(|&j| names[j].clone()).collect(),
        coef: coef.iter().copied().collect(),
        se: (0..p).map(|k| (sigma2 * xtx_inv[(k, k)]).sqrt()).collect(),
        dropped,
        r2,
        adj_r2,
        n,
        df_resid: df,
        residuals,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaWeighting {
    Unweighted,
    InverseVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaRegression {
    /// ATE on has_X, has_FE, has_M and funder intercepts.
    pub model1: OlsFit,
    /// ATE on specification-combination dummies and funder intercepts.
    pub model2: OlsFit,
    pub weighting: MetaWeighting,
}

fn combo_label(x: bool, fe: bool, m: bool) -> Option<&'static str> {
    match (m, x, fe) {
        (false, false, false) => None,
        (false, true, false) => Some("X"),
        (false, false, true) => Some("FE"),
        (false, true, true) => Some("X+FE"),
        (true, false, false) => Some("M"),
        (true, true, false) => Some("M+X"),
        (true, false, true) => Some("M+FE"),
        (true, true, true) => Some("M+X+FE"),
    }
}

const COMBO_ORDER: [&str; 7] = ["X", "FE", "X+FE", "M", "M+X", "M+FE", "M+X+FE"];

/// Regresses ATE levels on specification indicators with funder intercepts
/// (reference funder absorbed by the constant).
pub fn meta_regress_ate(rows: &[AteEstimate], weighting: MetaWeighting) -> Result<MetaRegression> {
    let mut per_pair: BTreeMap<(Funder, u32), BTreeSet<_>> = BTreeMap::new();
    for r in rows {
        per_pair
            .entry((r.funder, r.sector_code))
            .or_default()
            .insert(r.specification);
    }
    if let Some(((f, s), _)) = per_pair.iter().find(|(_, specs)| specs.len() < 2) {
        return Err(Error::InsufficientData(format!(
            "{f} sector {s} has fewer than 2 specifications"
        )));
    }
    let funders: Vec<Funder> = rows
        .iter()
        .map(|r| r.funder)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let funder_cols: Vec<Funder> = funders.iter().skip(1).copied().collect();
    let y: Vec<f64> = rows.iter().map(|r| r.ate).collect();
    let weights: Option<Vec<f64>> = match weighting {
        MetaWeighting::Unweighted => None,
        MetaWeighting::InverseVariance => Some(
            rows.iter()
                .map(|r| 1.0 / (r.std_error * r.std_error).max(1e-12))
                .collect(),
        ),
    };
    let funder_dummies = |r: &AteEstimate| -> Vec<f64> {
        funder_cols
            .iter()
            .map(|&f| f64::from(u8::from(r.funder == f)))
            .collect()
    };
    let funder_names: Vec<String> = funder_cols.iter().map(|f| format!("funder_{f}")).collect();

    let mut names1: Vec<String> = ["intercept", "has_X", "has_FE", "has_M"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names1.extend(funder_names.iter().cloned());
    let x1 = DMatrix::from_fn(rows.len(), names1.len(), |i, j| {
        let r = &rows[i];
        let s = r.specification;
        match j {
            0 => 1.0,
            1 => f64::from(u8::from(s.has_x())),
            2 => f64::from(u8::from(s.has_fe())),
            3 => f64::from(u8::from(s.has_m())),
            k => funder_dummies(r)[k - 4],
        }
    });
    let model1 = ols(&names1, &x1, &y, weights.as_deref())?;

    let labels: Vec<Option<&str>> = rows
        .iter()
        .map(|r| {
            let s = r.specification;
            combo_label(s.has_x(), s.has_fe(), s.has_m())
        })
        .collect();
    let present: Vec<&str> = COMBO_ORDER
        .iter()
        .copied()
        .filter(|c| labels.contains(&Some(*c)))
        .collect();
    let mut names2 = vec!["intercept".to_string()];
    names2.extend(present.iter().map(|c| c.to_string()));
    names2.extend(funder_names.iter().cloned());
    let x2 = DMatrix::from_fn(rows.len(), names2.len(), |i, j| {
        if j == 0 {
            1.0
        } else if j <= present.len() {
            f64::from(u8::from(labels[i] == Some(present[j - 1])))
        } else {
            funder_dummies(&rows[i])[j - 1 - present.len()]
        }
    });
    let model2 = ols(&names2, &x2, &y, weights.as_deref())?;
    Ok(MetaRegression {
        model1,
        model2,
        weighting,
    })
}

impl MetaRegression {
    /// Aligned plain-text coefficient tables.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (title, fit) in [
            ("Model 1: indicators", &self.model1),
            ("Model 2: combinations", &self.model2),
        ] {
            let _ = writeln!(s, "{title} ({:?}, n = {})", self.weighting, fit.n);
            let _ = writeln!(s, "{:<16} {:>12} {:>12}", "term", "coef", "se");
            for ((name, c), se) in fit.names.iter().zip(&fit.coef).zip(&fit.se) {
                let _ = writeln!(s, "{name:<16} {c:>12.4} {se:>12.4}");
            }
            if !fit.dropped.is_empty() {
                let _ = writeln!(s, "dropped (aliased): {}", fit.dropped.join(", "));
            }
            let _ = writeln!(s, "R2 = {:.4}, adjusted R2 = {:.4}\n", fit.r2, fit.adj_r2);
        }
        s
    }
}
