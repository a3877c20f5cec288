//! Inverse-probability-weighted ATE estimation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{csv_io, Funder};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Specification {
    #[serde(rename = "a_diffmeans")]
    DiffMeans,
    #[serde(rename = "b_x_fe")]
    XFe,
    #[serde(rename = "c1_m")]
    M,
    #[serde(rename = "c2_m_x_fe")]
    MXFe,
}

impl Specification {
    pub const ALL: [Specification; 4] = [
        Specification::DiffMeans,
        Specification::XFe,
        Specification::M,
        Specification::MXFe,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Specification::DiffMeans => "a_diffmeans",
            Specification::XFe => "b_x_fe",
            Specification::M => "c1_m",
            Specification::MXFe => "c2_m_x_fe",
        }
    }

    pub fn has_x(self) -> bool {
        matches!(self, Specification::XFe | Specification::MXFe)
    }

    pub fn has_fe(self) -> bool {
        self.has_x()
    }

    pub fn has_m(self) -> bool {
        matches!(self, Specification::M | Specification::MXFe)
    }

    pub fn needs_model(self) -> bool {
        self != Specification::DiffMeans
    }
}

impl fmt::Display for Specification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Specification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Specification::ALL
            .into_iter()
            .find(|sp| sp.tag() == s || sp.tag().split('_').next() == Some(s))
            .ok_or_else(|| Error::Config(format!("unknown specification `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Weights normalised to sum to one within each arm.
    Hajek,
    /// Unnormalised inverse-probability sums divided by `n`.
    HorvitzThompson,
}

fn check_inputs(y: &[f64], a: &[u8], p: Option<&[f64]>) -> Result<(usize, usize)> {
    let n = y.len();
    if a.len() != n || p.is_some_and(|p| p.len() != n) {
        return Err(Error::Input(format!(
            "length mismatch: y {n}, a {}, p {}",
            a.len(),
            p.map_or(n, <[f64]>::len)
        )));
    }
    if let Some(i) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Input(format!("non-finite outcome at row {i}")));
    }
    if let Some(i) = a.iter().position(|&v| v > 1) {
        return Err(Error::Input(format!("treatment at row {i} is not 0/1")));
    }
    if let Some(p) = p {
        if let Some(i) = p.iter().position(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::Input(format!("propensity {} at row {i} outside (0, 1)", p[i])));
        }
    }
    let n1 = a.iter().filter(|&&v| v == 1).count();
    let n0 = n - n1;
    if n1 == 0 || n0 == 0 {
        return Err(Error::DegenerateArm(format!("{n1} treated and {n0} control units")));
    }
    Ok((n1, n0))
}

/// Arm means and normalised weights of the Hájek estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct HajekFit {
    pub ate: f64,
    pub mu1: f64,
    pub mu0: f64,
    /// Per-unit normalised weight within its own arm.
    pub weights: Vec<f64>,
}

pub fn hajek_fit(y: &[f64], a: &[u8], p: &[f64]) -> Result<HajekFit> {
    check_inputs(y, a, Some(p))?;
    let raw: Vec<f64> = a
        .iter()
        .zip(p)
        .map(|(&ai, &pi)| if ai == 1 { 1.0 / pi } else { 1.0 / (1.0 - pi) })
        .collect();
    let (mut s1, mut s0) = (0.0, 0.0);
    for (&ai, &w) in a.iter().zip(&raw) {
        if ai == 1 {
            s1 += w;
        } else {
            s0 += w;
        }
    }
    let weights: Vec<f64> = a
        .iter()
        .zip(&raw)
        .map(|(&ai, &w)| if ai == 1 { w / s1 } else { w / s0 })
        .collect();
    let (mut mu1, mut mu0) = (0.0, 0.0);
    for ((&ai, &w), &yi) in a.iter().zip(&weights).zip(y) {
        if ai == 1 {
            mu1 += w * yi;
        } else {
            mu0 += w * yi;
        }
    }
    Ok(HajekFit {
        ate: mu1 - mu0,
        mu1,
        mu0,
        weights,
    })
}

/// Σ(AY/p)/Σ(A/p) − Σ((1−A)Y/(1−p))/Σ((1−A)/(1−p)).
pub fn hajek_ate(y: &[f64], a: &[u8], p: &[f64]) -> Result<f64> {
    hajek_fit(y, a, p).map(|f| f.ate)
}

/// (1/n)·Σ[AY/p − (1−A)Y/(1−p)].
pub fn horvitz_thompson_ate(y: &[f64], a: &[u8], p: &[f64]) -> Result<f64> {
    check_inputs(y, a, Some(p))?;
    let s: f64 = y
        .iter()
        .zip(a)
        .zip(p)
        .map(|((&yi, &ai), &pi)| if ai == 1 { yi / pi } else { -yi / (1.0 - pi) })
        .sum();
    Ok(s / y.len() as f64)
}

pub fn diff_in_means(y: &[f64], a: &[u8]) -> Result<f64> {
    let (n1, n0) = check_inputs(y, a, None)?;
    let (mut s1, mut s0) = (0.0, 0.0);
    for (&yi, &ai) in y.iter().zip(a) {
        if ai == 1 {
            s1 += yi;
        } else {
            s0 += yi;
        }
    }
    Ok(s1 / n1 as f64 - s0 / n0 as f64)
}

/// Influence-function variance of the Hájek estimator,
/// (1/n²)·Σψᵢ² with ψᵢ = Aᵢ(Yᵢ−μ̂₁)/pᵢ − (1−Aᵢ)(Yᵢ−μ̂₀)/(1−pᵢ).
/// With `clusters`, ψ is summed within each cluster before squaring and the
/// sum is scaled by G/(G−1).
pub fn ate_variance(y: &[f64], a: &[u8], p: &[f64], clusters: Option<&[String]>) -> Result<f64> {
    let fit = hajek_fit(y, a, p)?;
    let n = y.len() as f64;
    let psi: Vec<f64> = y
        .iter()
        .zip(a)
        .zip(p)
        .map(|((&yi, &ai), &pi)| {
            if ai == 1 {
                (yi - fit.mu1) / pi
            } else {
                -(yi - fit.mu0) / (1.0 - pi)
            }
        })
        .collect();
    match clusters {
        None => Ok(psi.iter().map(|v| v * v).sum::<f64>() / (n * n)),
        Some(c) => {
            if c.len() != psi.len() {
                return Err(Error::Input("cluster labels do not match outcomes".into()));
            }
            let mut sums: BTreeMap<&str, f64> = BTreeMap::new();
            for (g, v) in c.iter().zip(&psi) {
                *sums.entry(g.as_str()).or_default() += v;
            }
            let g = sums.len() as f64;
            if sums.len() < 2 {
                return Err(Error::Clustering(format!(
                    "cluster-robust variance needs at least 2 clusters, found {}",
                    sums.len()
                )));
            }
            let ss: f64 = sums.values().map(|v| v * v).sum();
            Ok(g / (g - 1.0) * ss / (n * n))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMethod {
    InfluenceFunction,
    InfluenceFunctionClustered,
}

impl VarianceMethod {
    pub fn label(self) -> &'static str {
        match self {
            VarianceMethod::InfluenceFunction => "influence_function",
            VarianceMethod::InfluenceFunctionClustered => "influence_function_adm2_cluster",
        }
    }
}

/// One funder×sector×specification estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteEstimate {
    pub funder: Funder,
    pub sector_code: u32,
    pub specification: Specification,
    pub ate: f64,
    pub std_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub n_treated: usize,
    pub n_control: usize,
    pub clip_bounds: (f64, f64),
    pub variance_method: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    pub weighting: Weighting,
    pub cluster: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            weighting: Weighting::Hajek,
            cluster: true,
        }
    }
}

/// Outcomes, treatments and clusters for the cells entering the ATE sum.
#[derive(Debug, Clone, Default)]
pub struct EstimationSample {
    pub y: Vec<f64>,
    pub a: Vec<u8>,
    pub clusters: Vec<String>,
}

/// Estimate for one specification from propensities (constant p = n₁/n for
/// the difference in means).
pub fn estimate(
    funder: Funder,
    sector_code: u32,
    spec: Specification,
    sample: &EstimationSample,
    propensities: Option<&[f64]>,
    clip: (f64, f64),
    cfg: &EstimatorConfig,
) -> Result<AteEstimate> {
    let n = sample.y.len();
    let (n1, n0) = check_inputs(&sample.y, &sample.a, propensities)?;
    let share = n1 as f64 / n as f64;
    let constant;
    let p: &[f64] = match propensities {
        Some(p) => p,
        None => {
            constant = vec![share; n];
            &constant
        }
    };
    let ate = match (propensities, cfg.weighting) {
        (None, _) => diff_in_means(&sample.y, &sample.a)?,
        (Some(_), Weighting::Hajek) => hajek_ate(&sample.y, &sample.a, p)?,
        (Some(_), Weighting::HorvitzThompson) => horvitz_thompson_ate(&sample.y, &sample.a, p)?,
    };
    let (var, method) = if cfg.cluster {
        (
            ate_variance(&sample.y, &sample.a, p, Some(&sample.clusters))?,
            VarianceMethod::InfluenceFunctionClustered,
        )
    } else {
        (
            ate_variance(&sample.y, &sample.a, p, None)?,
            VarianceMethod::InfluenceFunction,
        )
    };
    let se = var.sqrt();
    Ok(AteEstimate {
        funder,
        sector_code,
        specification: spec,
        ate,
        std_error: se,
        ci_low: ate - Z_95 * se,
        ci_high: ate + Z_95 * se,
        n_treated: n1,
        n_control: n0,
        clip_bounds: clip,
        variance_method: method.label().to_string(),
    })
}

/// Result for one requested specification.
#[derive(Debug, Clone, PartialEq)]
pub enum SpecOutcome {
    Estimated(AteEstimate),
    Skipped {
        specification: Specification,
        reason: String,
    },
}

/// Runs each requested specification on the same sample. Specifications
/// without propensities are reported as skipped.
pub fn run_specifications(
    funder: Funder,
    sector_code: u32,
    sample: &EstimationSample,
    propensities: &BTreeMap<Specification, Vec<f64>>,
    specs: &[Specification],
    clip: (f64, f64),
    cfg: &EstimatorConfig,
) -> Result<Vec<SpecOutcome>> {
    let mut out = Vec::with_capacity(specs.len());
    for &spec in specs {
        if !spec.needs_model() {
            out.push(SpecOutcome::Estimated(estimate(
                funder,
                sector_code,
                spec,
                sample,
                None,
                clip,
                cfg,
            )?));
            continue;
        }
        match propensities.get(&spec) {
            Some(p) => out.push(SpecOutcome::Estimated(estimate(
                funder,
                sector_code,
                spec,
                sample,
                Some(p),
                clip,
                cfg,
            )?)),
            None => {
                log::warn!("{funder} sector {sector_code}: no propensities for {spec}, skipped");
                out.push(SpecOutcome::Skipped {
                    specification: spec,
                    reason: "no trained propensity model".into(),
                });
            }
        }
    }
    Ok(out)
}

const ESTIMATE_HEADER: [&str; 12] = [
    "funder",
    "sector",
    "spec",
    "ate",
    "se",
    "ci_low",
    "ci_high",
    "n_t",
    "n_c",
    "clip_lo",
    "clip_hi",
    "variance_method",
];

pub fn write_estimates(path: &Path, rows: &[AteEstimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record(ESTIMATE_HEADER)?;
    for r in rows {
        w.write_record([
            r.funder.to_string(),
            r.sector_code.to_string(),
            r.specification.tag().to_string(),
            r.ate.to_string(),
            r.std_error.to_string(),
            r.ci_low.to_string(),
            r.ci_high.to_string(),
            r.n_treated.to_string(),
            r.n_control.to_string(),
            r.clip_bounds.0.to_string(),
            r.clip_bounds.1.to_string(),
            r.variance_method.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_estimates(path: &Path) -> Result<Vec<AteEstimate>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = |what: &str| Error::Format {
            path: path.display().to_string(),
            reason: format!("row {}: bad {what}", i + 1),
        };
        if rec.len() != ESTIMATE_HEADER.len() {
            return Err(bad("column count"));
        }
        let f = |j: usize, what: &str| rec[j].parse::<f64>().map_err(|_| bad(what));
        out.push(AteEstimate {
            funder: rec[0].parse()?,
            sector_code: rec[1].parse().map_err(|_| bad("sector"))?,
            specification: rec[2].parse()?,
            ate: f(3, "ate")?,
            std_error: f(4, "se")?,
            ci_low: f(5, "ci_low")?,
            ci_high: f(6, "ci_high")?,
            n_treated: rec[7].parse().map_err(|_| bad("n_t"))?,
            n_control: rec[8].parse().map_err(|_| bad("n_c"))?,
            clip_bounds: (f(9, "clip_lo")?, f(10, "clip_hi")?),
            variance_method: rec[11].to_string(),
        });
    }
    Ok(out)
}
