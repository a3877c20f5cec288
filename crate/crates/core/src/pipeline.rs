//! Glue from a panel slice to propensity fits and ATE estimates for each
//! specification.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::analysis::auc;
use crate::covariates::{FeLevel, FixedEffectEncoding};
use crate::error::{Error, Result};
use crate::estimator::{run_specifications, EstimationSample, EstimatorConfig, SpecOutcome, Specification};
use crate::panel::PanelSlice;
use crate::tile::ImageTile;
use crate::vit::{train_propensity, CrossFit, FoldAssignment, ModelConfig, PropensityData, TrainConfig};

/// Categories with fewer cells than this share one fixed-effect column.
pub const FE_MIN_COUNT: usize = 5;

/// Model inputs for `spec`: tiles when it uses images; covariates plus ADM2
/// and period dummies when it uses tabular data.
pub fn propensity_data(spec: Specification, slice: &PanelSlice, tiles: Option<&[ImageTile]>) -> Result<PropensityData> {
    if !spec.needs_model() {
        return Err(Error::Unsupported(format!("{spec} has no propensity model")));
    }
    let n = slice.cells.len();
    let tiles = if spec.has_m() {
        let t = tiles.ok_or_else(|| Error::Input(format!("{spec} needs image tiles")))?;
        if t.len() != n {
            return Err(Error::Input(format!("{} tiles for {n} panel cells", t.len())));
        }
        Some(t.to_vec())
    } else {
        None
    };
    let (tabular_names, tabular) = if spec.has_x() {
        let adm2: Vec<&str> = slice.cells.iter().map(|c| c.adm2_id.as_str()).collect();
        let periods: Vec<String> = slice.cells.iter().map(|c| c.period.to_string()).collect();
        let fe_adm2 = FixedEffectEncoding::fit(FeLevel::Adm2, &adm2, FE_MIN_COUNT)?;
        let fe_period = FixedEffectEncoding::fit(FeLevel::Period, &periods, 1)?;
        let mut names = slice.covariate_names.clone();
        names.extend(fe_adm2.column_names());
        names.extend(fe_period.column_names());
        let rows = slice
            .cells
            .iter()
            .zip(&periods)
            .map(|(c, p)| {
                let mut row = c.covariates.clone();
                row.extend(fe_adm2.encode(&c.adm2_id));
                row.extend(fe_period.encode(p));
                row
            })
            .collect();
        (names, rows)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(PropensityData {
        labels: slice.treatments(),
        groups: slice.cells.iter().map(|c| c.adm2_id.clone()).collect(),
        tiles,
        tabular_names,
        tabular,
    })
}

/// Cells with an observed outcome, as an estimation sample, and their
/// positions in the slice.
pub fn estimation_sample(slice: &PanelSlice) -> (EstimationSample, Vec<usize>) {
    let mut sample = EstimationSample::default();
    let mut rows = Vec::new();
    for (i, c) in slice.cells.iter().enumerate() {
        if let Some(y) = c.outcome_lead {
            sample.y.push(y);
            sample.a.push(c.treated);
            sample.clusters.push(c.adm2_id.clone());
            rows.push(i);
        }
    }
    (sample, rows)
}

/// Per-specification diagnostics of a cross-fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub specification: Specification,
    pub auc: f64,
    pub n_out_of_sample: usize,
    pub n_clipped: usize,
    pub final_losses: Vec<f64>,
}

/// Everything one slice produces.
#[derive(Debug, Clone)]
pub struct SliceRun {
    pub outcomes: Vec<SpecOutcome>,
    pub fits: BTreeMap<Specification, CrossFit>,
    pub summaries: Vec<FitSummary>,
}

/// Settings shared by every specification of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub estimator: EstimatorConfig,
}

/// Fitted propensity models for one slice.
#[derive(Debug, Clone)]
pub struct SliceFits {
    pub fits: BTreeMap<Specification, CrossFit>,
    pub data: BTreeMap<Specification, PropensityData>,
    pub summaries: Vec<FitSummary>,
}

/// Cross-fits each requested model specification. Folds depend only on the
/// ADM2 ids and `train.seed`, so every specification shares them. Image
/// specifications are skipped with a warning when `tiles` is `None`.
pub fn fit_slice(
    slice: &PanelSlice,
    tiles: Option<&[ImageTile]>,
    specs: &[Specification],
    model: &ModelConfig,
    train: &TrainConfig,
) -> Result<SliceFits> {
    let groups: Vec<&str> = slice.cells.iter().map(|c| c.adm2_id.as_str()).collect();
    let folds = FoldAssignment::grouped(&groups, train.folds, train.seed)?;
    let labels = slice.treatments();
    let mut out = SliceFits {
        fits: BTreeMap::new(),
        data: BTreeMap::new(),
        summaries: Vec::new(),
    };
    for &spec in specs.iter().filter(|s| s.needs_model()) {
        if spec.has_m() && tiles.is_none() {
            log::warn!("{spec}: no tiles available, skipped");
            continue;
        }
        log::info!("{} sector {}: fitting {spec}", slice.funder, slice.sector_code);
        let data = propensity_data(spec, slice, tiles)?;
        let fit = train_propensity(model, &data, &folds, train)?;
        out.summaries.push(FitSummary {
            specification: spec,
            auc: auc(&fit.p_raw, &labels)?,
            n_out_of_sample: fit.p_raw.len(),
            n_clipped: fit.n_clipped,
            final_losses: fit
                .folds
                .iter()
                .filter_map(|f| f.epoch_losses.last().copied())
                .collect(),
        });
        out.fits.insert(spec, fit);
        out.data.insert(spec, data);
    }
    Ok(out)
}

/// Cross-fits the model specifications and estimates all of `specs` on the
/// same cells.
pub fn run_slice(
    slice: &PanelSlice,
    tiles: Option<&[ImageTile]>,
    specs: &[Specification],
    cfg: &PipelineConfig,
) -> Result<SliceRun> {
    let SliceFits { fits, summaries, .. } = fit_slice(slice, tiles, specs, &cfg.model, &cfg.train)?;
    let (sample, rows) = estimation_sample(slice);
    let propensities: BTreeMap<Specification, Vec<f64>> = fits
        .iter()
        .map(|(&s, f)| (s, rows.iter().map(|&i| f.p_hat[i]).collect()))
        .collect();
    let outcomes = run_specifications(
        slice.funder,
        slice.sector_code,
        &sample,
        &propensities,
        specs,
        (cfg.train.clip_lo, cfg.train.clip_hi),
        &cfg.estimator,
    )?;
    Ok(SliceRun {
        outcomes,
        fits,
        summaries,
    })
}
