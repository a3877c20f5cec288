//! Assignment-mechanism diagnostics: AUC, salience comparisons, canonical
//! correlation, ATE meta-regression and the two-way fixed-effects model.

mod cca;
mod meta;
mod twfe;

pub use cca::{leading_canonical_correlation, salience_cca, standardize_columns, CcaResult};
pub use meta::{meta_regress_ate, ols, MetaRegression, MetaWeighting, OlsFit};
pub use twfe::{twfe, TwfeResult};

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Specification;
use crate::panel::Funder;

/// Area under the ROC curve as the Mann–Whitney statistic: the share of
/// treated/control pairs where the treated score is higher, ties counting ½.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("NaN score".into()));
    }
    let n1 = labels.iter().filter(|&&l| l == 1).count();
    let n0 = labels.len() - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::DegenerateArm(format!(
            "AUC needs both classes ({n1} treated, {n0} control)"
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| scores[i].total_cmp(&scores[j]));
    // Sum of midranks of the treated scores.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        let treated = order[i..=j].iter().filter(|&&k| labels[k] == 1).count();
        rank_sum += midrank * treated as f64;
        i = j + 1;
    }
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;
    Ok(u / (n1 as f64 * n0 as f64))
}

/// Signed mean sensitivities: rows are covariates, columns sectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceMatrix {
    pub funder: Funder,
    pub specification: Specification,
    pub rows: Vec<String>,
    pub cols: Vec<u32>,
    /// Row-major `rows.len() × cols.len()`.
    pub values: Vec<f64>,
}

impl SalienceMatrix {
    pub fn new(
        funder: Funder,
        specification: Specification,
        rows: Vec<String>,
        cols: Vec<u32>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.len() != rows.len() * cols.len() {
            return Err(Error::shape(
                "salience matrix",
                &[rows.len(), cols.len()],
                &[values.len()],
            ));
        }
        if rows.iter().collect::<BTreeSet<_>>().len() != rows.len()
            || cols.iter().collect::<BTreeSet<_>>().len() != cols.len()
        {
            return Err(Error::Validation("salience labels must be unique".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("salience entries must be finite".into()));
        }
        Ok(Self {
            funder,
            specification,
            rows,
            cols,
            values,
        })
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols.len() + c]
    }
}

/// Entrywise `|a| − |b|`; positive where a covariate matters more once
/// images are included.
pub fn salience_delta(with_images: &SalienceMatrix, tabular_only: &SalienceMatrix) -> Result<Vec<f64>> {
    if with_images.rows != tabular_only.rows || with_images.cols != tabular_only.cols {
        let rows_a: BTreeSet<_> = with_images.rows.iter().collect();
        let rows_b: BTreeSet<_> = tabular_only.rows.iter().collect();
        let cols_a: BTreeSet<_> = with_images.cols.iter().collect();
        let cols_b: BTreeSet<_> = tabular_only.cols.iter().collect();
        return Err(Error::Alignment(format!(
            "rows only in first {:?}, only in second {:?}; cols only in first {:?}, only in second {:?}{}",
            rows_a.difference(&rows_b).collect::<Vec<_>>(),
            rows_b.difference(&rows_a).collect::<Vec<_>>(),
            cols_a.difference(&cols_b).collect::<Vec<_>>(),
            cols_b.difference(&cols_a).collect::<Vec<_>>(),
            if rows_a == rows_b && cols_a == cols_b {
                " (order differs)"
            } else {
                ""
            },
        )));
    }
    Ok(with_images
        .values
        .iter()
        .zip(&tabular_only.values)
        .map(|(a, b)| a.abs() - b.abs())
        .collect())
}
