use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::SalienceMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcaResult {
    pub value: f64,
    pub lambda: f64,
    pub sectors_used: Vec<u32>,
}

/// Centres each column and scales it to unit population sd; constant
/// columns become zero.
pub fn standardize_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows() as f64;
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
        let sd = (col.norm_squared() / n).sqrt();
        if sd > 1e-12 {
            col /= sd;
        } else {
            col.fill(0.0);
        }
    }
    out
}

fn inv_sqrt(c: DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(c);
    let d = eig.eigenvalues.map(|v| 1.0 / v.max(f64::MIN_POSITIVE).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Leading canonical correlation between the column spaces of `a` and `b`
/// (same rows). Columns are standardised and `ridge` is added to both
/// within-set covariances before whitening.
pub fn leading_canonical_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>, ridge: f64) -> Result<f64> {
    if a.nrows() != b.nrows() {
        return Err(Error::shape("cca", &[a.nrows(), a.ncols()], &[b.nrows(), b.ncols()]));
    }
    if a.nrows() < 3 {
        return Err(Error::InsufficientData(format!(
            "canonical correlation needs at least 3 shared rows, found {}",
            a.nrows()
        )));
    }
    if !(ridge >= 0.0) {
        return Err(Error::Config(format!("ridge {ridge} must be non-negative")));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Input("non-finite entry in CCA input".into()));
    }
    let n = a.nrows() as f64;
    let za = standardize_columns(a);
    let zb = standardize_columns(b);
    let caa = za.transpose() * &za / n + DMatrix::identity(a.ncols(), a.ncols()) * ridge;
    let cbb = zb.transpose() * &zb / n + DMatrix::identity(b.ncols(), b.ncols()) * ridge;
    let cab = za.transpose() * &zb / n;
    let m = inv_sqrt(caa) * cab * inv_sqrt(cbb);
    let sv = m.singular_values();
    let top = sv.iter().copied().fold(0.0, f64::max);
    Ok(top.clamp(0.0, 1.0))
}

/// Canonical correlation between two salience matrices over their shared
/// sectors, each arranged as sectors × covariates.
pub fn salience_cca(a: &SalienceMatrix, b: &SalienceMatrix, ridge: f64) -> Result<CcaResult> {
    let shared: Vec<u32> = a.cols.iter().copied().filter(|c| b.cols.contains(c)).collect();
    if shared.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "canonical correlation needs at least 3 shared sectors, found {}",
            shared.len()
        )));
    }
    let arrange = |m: &SalienceMatrix| {
        DMatrix::from_fn(shared.len(), m.rows.len(), |i, j| {
            let c = m.cols.iter().position(|&s| s == shared[i]).unwrap();
            m.get(j, c)
        })
    };
    let value = leading_canonical_correlation(&arrange(a), &arrange(b), ridge)?;
    Ok(CcaResult {
        value,
        lambda: ridge,
        sectors_used: shared,
    })
}
