//! Tabular covariate transforms, period aggregation, indicator rules,
//! fold-local standardization and fixed-effect dummies.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First year of each three-year commitment period in the study window.
pub const STUDY_PERIOD_STARTS: [i32; 4] = [2002, 2005, 2008, 2011];

/// A three-year commitment period.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Period {
    pub index: usize,
    pub start_year: i32,
}

impl Period {
    pub fn study(index: usize) -> Option<Period> {
        STUDY_PERIOD_STARTS
            .get(index)
            .map(|&start_year| Period { index, start_year })
    }

    pub fn all_study() -> Vec<Period> {
        (0..STUDY_PERIOD_STARTS.len()).filter_map(Period::study).collect()
    }

    pub fn of_year(year: i32) -> Option<Period> {
        STUDY_PERIOD_STARTS
            .iter()
            .position(|&s| (s..s + 3).contains(&year))
            .and_then(Period::study)
    }

    pub fn years(&self) -> [i32; 3] {
        [self.start_year, self.start_year + 1, self.start_year + 2]
    }

    /// The three years immediately before the period.
    pub fn prior_years(&self) -> [i32; 3] {
        [self.start_year - 3, self.start_year - 2, self.start_year - 1]
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start_year..self.start_year + 3).contains(&year)
    }

    pub fn label(&self) -> String {
        format!("{}-{}", self.start_year, self.start_year + 2)
    }
}

pub fn log1p_transform(x: f64) -> Result<f64> {
    if !(x >= 0.0) {
        return Err(Error::Domain(format!("log1p transform needs x >= 0, got {x}")));
    }
    Ok(x.ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Stock-like quantities (nightlights, density, governance, Gini).
    Mean,
    /// Flow-like quantities (conflict deaths, disasters).
    Sum,
    /// Indicator set when any year is nonzero.
    Any,
    /// Smallest value over the years (distance to known deposits).
    Min,
    /// Single value without a year dimension.
    TimeInvariant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Aggregated {
    Value(f64),
    Missing { reason: String },
}

impl Aggregated {
    pub fn value(&self) -> Option<f64> {
        match self {
            Aggregated::Value(v) => Some(*v),
            Aggregated::Missing { .. } => None,
        }
    }
}

/// Aggregates the three years preceding `period` from a yearly series.
/// Any of those years missing (or non-finite) gives [`Aggregated::Missing`].
pub fn aggregate_period(series: &BTreeMap<i32, f64>, period: Period, mode: Aggregation) -> Aggregated {
    if mode == Aggregation::TimeInvariant {
        return match series.values().next() {
            Some(&v) if v.is_finite() => Aggregated::Value(v),
            _ => Aggregated::Missing {
                reason: "no time-invariant value".into(),
            },
        };
    }
    let years = period.prior_years();
    let missing: Vec<i32> = years
        .iter()
        .copied()
        .filter(|y| !series.get(y).is_some_and(|v| v.is_finite()))
        .collect();
    if !missing.is_empty() {
        log::debug!("period {} lacks years {missing:?}", period.label());
        return Aggregated::Missing {
            reason: format!("missing years {missing:?}"),
        };
    }
    let vals = years.map(|y| series[&y]);
    let v = match mode {
        Aggregation::Mean => vals.iter().sum::<f64>() / 3.0,
        Aggregation::Sum => vals.iter().sum(),
        Aggregation::Any => f64::from(vals.iter().any(|&v| v != 0.0)),
        Aggregation::Min => vals.iter().copied().fold(f64::INFINITY, f64::min),
        Aggregation::TimeInvariant => unreachable!(),
    };
    Aggregated::Value(v)
}

/// One year of Security Council status for a country.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnscYear {
    pub member: bool,
    pub deviating_votes: u32,
}

/// `(aligned, nonaligned)` over the years supplied: aligned when a member in
/// some year and never voting against the U.S., nonaligned when a member
/// with at least one deviating vote.
pub fn unsc_indicators(years: &[UnscYear]) -> (u8, u8) {
    let member = years.iter().any(|y| y.member);
    if !member {
        return (0, 0);
    }
    let deviating: u32 = years.iter().filter(|y| y.member).map(|y| y.deviating_votes).sum();
    if deviating == 0 {
        (1, 0)
    } else {
        (0, 1)
    }
}

/// Rejects externally supplied indicator pairs that claim both statuses.
pub fn validate_unsc(unit: &str, aligned: u8, nonaligned: u8) -> Result<()> {
    if aligned > 1 || nonaligned > 1 || aligned + nonaligned > 1 {
        return Err(Error::Validation(format!(
            "unit {unit}: UNSC aligned={aligned} and nonaligned={nonaligned} are contradictory"
        )));
    }
    Ok(())
}

/// Leader-birthplace and election-year flags: 1 if set in any of the years.
pub fn any_year(flags: &[bool]) -> u8 {
    u8::from(flags.iter().any(|&f| f))
}

/// Column statistics fitted on a training fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub names: Vec<String>,
    pub kept: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub dropped: Vec<String>,
}

const SD_FLOOR: f64 = 1e-8;

impl Standardizer {
    /// Fits population mean and sd per column of row-major `rows`. Columns
    /// without variation are dropped.
    pub fn fit(names: &[String], rows: &[Vec<f64>]) -> Result<Self> {
        let width = names.len();
        if let Some(r) = rows.iter().find(|r| r.len() != width) {
            return Err(Error::shape("standardize", &[width], &[r.len()]));
        }
        if rows.is_empty() {
            return Err(Error::InsufficientData("cannot standardize zero rows".into()));
        }
        let n = rows.len() as f64;
        let mut out = Standardizer {
            names: Vec::new(),
            kept: Vec::new(),
            means: Vec::new(),
            sds: Vec::new(),
            dropped: Vec::new(),
        };
        for j in 0..width {
            if rows.iter().any(|r| !r[j].is_finite()) {
                return Err(Error::Input(format!("non-finite value in column `{}`", names[j])));
            }
            let first = rows[0][j];
            if rows.iter().all(|r| r[j] == first) {
                log::info!("dropping covariate `{}`: no variation", names[j]);
                out.dropped.push(names[j].clone());
                continue;
            }
            let mean = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / n;
            out.names.push(names[j].clone());
            out.kept.push(j);
            out.means.push(mean);
            out.sds.push(var.sqrt().max(SD_FLOOR));
        }
        Ok(out)
    }

    pub fn width(&self) -> usize {
        self.kept.len()
    }

    pub fn transform_row(&self, row: &[f64]) -> Vec<f64> {
        self.kept
            .iter()
            .enumerate()
            .map(|(k, &j)| (row[j] - self.means[k]) / self.sds[k])
            .collect()
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}

type Rows = Vec<Vec<f64>>;

/// Fits on `train` and applies the same statistics to both inputs.
pub fn standardize_fit_transform(
    names: &[String],
    train: &[Vec<f64>],
    apply: &[Vec<f64>],
) -> Result<(Rows, Rows, Standardizer)> {
    let s = Standardizer::fit(names, train)?;
    Ok((s.transform(train), s.transform(apply), s))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeLevel {
    Adm2,
    Period,
}

/// Label of the pooled bucket for rare categories.
pub const OTHER_CATEGORY: &str = "__other__";

/// One-hot dummies for a fixed-effect level. Categories with fewer than
/// `min_count` units share an "other" column; the first retained category
/// (in sorted order) is the omitted reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectEncoding {
    pub level: FeLevel,
    pub reference: String,
    pub columns: Vec<String>,
    pub merged: Vec<String>,
    pub min_count: usize,
}

impl FixedEffectEncoding {
    pub fn fit<S: AsRef<str>>(level: FeLevel, ids: &[S], min_count: usize) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for id in ids {
            *counts.entry(id.as_ref()).or_default() += 1;
        }
        let mut retained = Vec::new();
        let mut merged = Vec::new();
        for (id, c) in counts {
            if c >= min_count {
                retained.push(id.to_string());
            } else {
                merged.push(id.to_string());
            }
        }
        if retained.is_empty() && merged.is_empty() {
            return Err(Error::InsufficientData("no categories to encode".into()));
        }
        let (reference, mut columns) = if retained.is_empty() {
            (OTHER_CATEGORY.to_string(), Vec::new())
        } else {
            let reference = retained.remove(0);
            let mut cols = retained;
            if !merged.is_empty() {
                cols.push(OTHER_CATEGORY.to_string());
            }
            (reference, cols)
        };
        columns.shrink_to_fit();
        Ok(Self {
            level,
            reference,
            columns,
            merged,
            min_count,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    pub fn column_names(&self) -> Vec<String> {
        let prefix = match self.level {
            FeLevel::Adm2 => "fe_adm2",
            FeLevel::Period => "fe_period",
        };
        self.columns.iter().map(|c| format!("{prefix}_{c}")).collect()
    }

    /// Dummy row for `id`. The reference category and categories unseen at
    /// fit time encode as all zeros.
    pub fn encode(&self, id: &str) -> Vec<f64> {
        let mut row = vec![0.0; self.columns.len()];
        let key = if self.merged.binary_search_by(|m| m.as_str().cmp(id)).is_ok() {
            OTHER_CATEGORY
        } else {
            id
        };
        if let Some(j) = self.columns.iter().position(|c| c == key) {
            row[j] = 1.0;
        }
        row
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Log1p,
}

/// Audit record for one covariate column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub transform: Transform,
    pub aggregation: Aggregation,
    pub source: String,
}

impl CovariateSpec {
    pub fn apply(&self, series: &BTreeMap<i32, f64>, period: Period) -> Result<Option<f64>> {
        match aggregate_period(series, period, self.aggregation) {
            Aggregated::Value(v) => match self.transform {
                Transform::Identity => Ok(Some(v)),
                Transform::Log1p => log1p_transform(v).map(Some),
            },
            Aggregated::Missing { .. } => Ok(None),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CovariateSchema {
    pub covariates: Vec<CovariateSpec>,
}

impl CovariateSchema {
    pub fn names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }
}

/// An ordered covariate row with its column names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateVector {
    pub values: Vec<f64>,
    pub schema: Vec<String>,
    pub standardized: bool,
}

impl CovariateVector {
    pub fn new(values: Vec<f64>, schema: Vec<String>, standardized: bool) -> Result<Self> {
        if values.len() != schema.len() {
            return Err(Error::shape("covariate vector", &[schema.len()], &[values.len()]));
        }
        Ok(Self {
            values,
            schema,
            standardized,
        })
    }
}
