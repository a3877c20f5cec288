//! The pipeline stages. Each reads upstream artifacts through the manifest,
//! writes its outputs under the run directory and records them.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use geocausal_core::analysis::{meta_regress_ate, salience_cca, salience_delta, twfe, SalienceMatrix};
use geocausal_core::estimator::{
    read_estimates, run_specifications, write_estimates, AteEstimate, SpecOutcome, Specification,
};
use geocausal_core::geo::{adjacency, parse_adm2_geojson, ADJACENCY_TOLERANCE_DEG};
use geocausal_core::panel::{
    build_panel, finalize_panel, read_neighborhoods, read_outcomes, read_projects, read_yearly_covariates,
    validate_units, Funder, PanelInputs, PanelReport, PanelSlice,
};
use geocausal_core::pipeline::{estimation_sample, fit_slice, FitSummary};
use geocausal_core::simulator::generate_world;
use geocausal_core::tile::ImageTile;
use geocausal_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{key_for, InputRef, Manifest};
use crate::{plot, report};

pub const STAGES: [&str; 7] = [
    "simulate",
    "build-panel",
    "train",
    "estimate",
    "analyze",
    "plot",
    "report",
];

/// An open run directory.
pub struct Run {
    pub cfg: RunConfig,
    pub root: PathBuf,
    pub manifest: Manifest,
}

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Core(Error::io(path, e))
}

fn stem(funder: Funder, sector: u32) -> String {
    format!("{}_{sector}", funder.slug())
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v}")
    } else {
        "NA".into()
    }
}

/// One row of the out-of-fold propensity table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityRow {
    pub unit_id: String,
    pub period: usize,
    pub fold: usize,
    pub p_hat: f64,
    pub specification: Specification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceRow {
    pub funder: Funder,
    pub sector: u32,
    pub specification: Specification,
    pub covariate: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SkippedRow {
    funder: Funder,
    sector: u32,
    specification: Specification,
    reason: String,
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::Core(Error::Csv(e)))?;
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io(path))?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize() {
        out.push(rec?);
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io(path))?;
    Ok(())
}

impl Run {
    /// Creates the run directory if needed and loads its manifest.
    pub fn open(cfg: RunConfig) -> CliResult<Self> {
        let root = cfg.output_dir.clone();
        std::fs::create_dir_all(&root).map_err(io(&root))?;
        let manifest = Manifest::load(&root)?;
        Ok(Self { cfg, root, manifest })
    }

    fn dir(&self, rel: &str) -> CliResult<PathBuf> {
        let d = self.root.join(rel);
        std::fs::create_dir_all(&d).map_err(io(&d))?;
        Ok(d)
    }

    fn finish(&mut self, stage: &str, inputs: &[InputRef], mut outputs: Vec<PathBuf>) -> CliResult<()> {
        let configs = self.dir("configs")?;
        let archived = configs.join(format!("{stage}.toml"));
        std::fs::write(&archived, self.cfg.to_toml()?).map_err(io(&archived))?;
        outputs.push(archived);
        outputs.sort();
        outputs.dedup();
        self.manifest.record(&self.root, stage, inputs, &outputs)?;
        self.manifest.save(&self.root)?;
        log::info!("{stage}: {} outputs recorded", outputs.len());
        Ok(())
    }

    /// Verifies `stage` when it has run; `None` otherwise.
    fn optional(&self, stage: &str) -> CliResult<Option<InputRef>> {
        if self.manifest.has_stage(stage) {
            self.manifest.verify_stage(&self.root, stage)?;
            Ok(Some(InputRef::Stage(stage.into())))
        } else {
            Ok(None)
        }
    }

    fn required(&self, stage: &str) -> CliResult<InputRef> {
        self.manifest.verify_stage(&self.root, stage)?;
        Ok(InputRef::Stage(stage.into()))
    }

    pub fn run_stage(&mut self, stage: &str) -> CliResult<()> {
        match stage {
            "simulate" => self.simulate(),
            "build-panel" => self.build_panel(),
            "train" => self.train(),
            "estimate" => self.estimate(),
            "analyze" => self.analyze(),
            "plot" => self.plot(),
            "report" => self.report(),
            other => Err(CliError::Config(format!("unknown stage `{other}`"))),
        }
    }

    pub fn simulate(&mut self) -> CliResult<()> {
        let world_dir = self.dir("world")?;
        let sim = &self.cfg.simulate;
        let mut outputs = Vec::new();
        let mut seen = BTreeSet::new();
        for k in 0..sim.slices.len() {
            let wc = sim.world_for(k, self.cfg.seed);
            if !seen.insert((wc.funder, wc.sector_code)) {
                return Err(CliError::Config(format!(
                    "simulate.slices lists {} sector {} twice",
                    wc.funder, wc.sector_code
                )));
            }
            let world = generate_world(&wc)?;
            if world.truth.clip_rate > 0.01 {
                log::warn!(
                    "{} sector {}: {:.1}% of true propensities fall outside the clip bounds",
                    wc.funder,
                    wc.sector_code,
                    100.0 * world.truth.clip_rate
                );
            }
            if k == 0 {
                outputs.extend(world.write_shared(&world_dir)?);
            }
            outputs.extend(world.write_slice(&world_dir.join("slices"))?);
        }
        self.finish("simulate", &[], outputs)
    }

    fn tiles_dir(&self) -> Option<PathBuf> {
        match &self.cfg.inputs.tiles_dir {
            Some(d) => Some(d.clone()),
            None if self.manifest.has_stage("simulate") => Some(self.root.join("world").join("tiles")),
            None => None,
        }
    }

    pub fn build_panel(&mut self) -> CliResult<()> {
        let panels = self.dir("panels")?;
        let mut inputs = Vec::new();
        let mut slices = Vec::new();
        let mut reports: Vec<PanelReport> = Vec::new();
        if self.cfg.inputs.projects.is_some() {
            let (built, used) = self.assemble_real()?;
            inputs.extend(used);
            for b in built {
                reports.push(b.report);
                slices.extend(b.slice);
            }
        } else {
            let dir = match &self.cfg.inputs.panel_dir {
                Some(d) => {
                    inputs.push(InputRef::Dir(d.clone()));
                    d.clone()
                }
                None => {
                    inputs.push(self.required("simulate").map_err(|e| {
                        match e {
                            CliError::MissingStage(_) => CliError::MissingStage(
                                "no inputs configured: set inputs.projects (with the other raw inputs), \
                             inputs.panel_dir, or run `simulate` first"
                                    .into(),
                            ),
                            e => e,
                        }
                    })?);
                    self.root.join("world").join("slices")
                }
            };
            for slice in read_panel_dir(&dir)? {
                if !self.cfg.selection.wants(slice.funder, slice.sector_code) {
                    continue;
                }
                let mut report = PanelReport {
                    funder: slice.funder.to_string(),
                    sector: slice.sector_code,
                    notes: vec![format!("prebuilt panel from {}", key_for(&self.root, &dir))],
                    ..PanelReport::default()
                };
                let done = finalize_panel(slice, self.cfg.panel.min_treated, &mut report);
                reports.push(report);
                slices.extend(done);
            }
        }
        if slices.is_empty() {
            log::warn!("build-panel: no funder×sector panel passed the build rules");
        }
        let mut outputs = Vec::new();
        let mut columns = BTreeMap::new();
        for s in &slices {
            let path = panels.join(format!("panel_{}.csv", stem(s.funder, s.sector_code)));
            s.write_csv(&path)?;
            outputs.push(path);
            columns.insert(stem(s.funder, s.sector_code), s.covariate_names.clone());
        }
        let report_path = panels.join("report.json");
        write_json(&report_path, &reports)?;
        outputs.push(report_path);
        let schema_path = panels.join("covariates.json");
        write_json(&schema_path, &columns)?;
        outputs.push(schema_path);
        self.finish("build-panel", &inputs, outputs)
    }

    fn assemble_real(&self) -> CliResult<(Vec<geocausal_core::panel::PanelBuild>, Vec<InputRef>)> {
        let i = &self.cfg.inputs;
        let need = |p: &Option<PathBuf>, name: &str| {
            p.clone()
                .ok_or_else(|| CliError::Config(format!("inputs.{name} is required with inputs.projects")))
        };
        let projects_path = need(&i.projects, "projects")?;
        let units_path = need(&i.neighborhoods, "neighborhoods")?;
        let adm2_path = need(&i.adm2, "adm2")?;
        let outcomes_path = need(&i.outcomes, "outcomes")?;
        let yearly_path = need(&i.yearly_covariates, "yearly_covariates")?;
        let schema_path = need(&i.covariate_schema, "covariate_schema")?;
        let tiles_dir = need(&i.tiles_dir, "tiles_dir")?;

        let units = read_neighborhoods(&units_path)?;
        let text = std::fs::read_to_string(&adm2_path).map_err(io(&adm2_path))?;
        let areas = parse_adm2_geojson(&text)?;
        validate_units(&units, &areas)?;
        let schema_text = std::fs::read_to_string(&schema_path).map_err(io(&schema_path))?;
        let projects = read_projects(&projects_path)?;
        let inputs = PanelInputs {
            adjacency: adjacency(&areas, ADJACENCY_TOLERANCE_DEG),
            units,
            areas,
            outcomes: read_outcomes(&outcomes_path)?,
            tiles: scan_tiles(&tiles_dir)?,
            yearly: read_yearly_covariates(&yearly_path)?,
            schema: serde_json::from_str(&schema_text)?,
            projects,
        };
        let pairs: BTreeSet<(Funder, u32)> = inputs
            .projects
            .iter()
            .map(|p| (p.funder, p.sector_code))
            .filter(|&(f, s)| self.cfg.selection.wants(f, s))
            .collect();
        let mut built = Vec::new();
        for (f, s) in pairs {
            built.push(build_panel(&inputs, f, s, &self.cfg.panel)?);
        }
        let used = [
            projects_path,
            units_path,
            adm2_path,
            outcomes_path,
            yearly_path,
            schema_path,
        ]
        .into_iter()
        .map(InputRef::File)
        .chain([InputRef::Dir(tiles_dir)])
        .collect();
        Ok((built, used))
    }

    fn load_panels(&self) -> CliResult<Vec<PanelSlice>> {
        let mut out = Vec::new();
        for key in self.manifest.outputs_of("build-panel") {
            if key.starts_with("panels/panel_") && key.ends_with(".csv") {
                out.push(PanelSlice::read_csv(&self.root.join(&key))?);
            }
        }
        Ok(out)
    }

    fn load_tiles(dir: &Path, slice: &PanelSlice) -> CliResult<Vec<ImageTile>> {
        slice
            .cells
            .iter()
            .map(|c| {
                if c.tile_ref.is_empty() {
                    return Err(CliError::Core(Error::Input(format!(
                        "cell {} period {} has no tile reference",
                        c.unit_id, c.period
                    ))));
                }
                Ok(ImageTile::load(
                    c.tile_ref.clone(),
                    &dir.join(format!("{}.gctl", c.tile_ref)),
                )?)
            })
            .collect()
    }

    pub fn train(&mut self) -> CliResult<()> {
        let mut inputs = vec![self.required("build-panel")?];
        let slices = self.load_panels()?;
        let specs: Vec<Specification> = self
            .cfg
            .selection
            .specs()?
            .into_iter()
            .filter(|s| s.needs_model())
            .collect();
        if specs.is_empty() {
            log::warn!("train: no model specification selected");
        }
        let tiles_dir = if specs.iter().any(|s| s.has_m()) {
            match self.tiles_dir() {
                Some(d) if d.is_dir() => {
                    if self.cfg.inputs.tiles_dir.is_some() {
                        inputs.push(InputRef::Dir(d.clone()));
                    } else {
                        inputs.push(self.required("simulate")?);
                    }
                    Some(d)
                }
                _ => {
                    log::warn!("train: no tiles directory; image specifications are skipped");
                    None
                }
            }
        } else {
            None
        };
        let parallel_slices = self.cfg.workers > 1 && slices.len() > 1;
        let mut train = self.cfg.train.clone();
        train.workers = if parallel_slices { 1 } else { self.cfg.workers };
        let model = self.cfg.model.clone();
        let job = |slice: &PanelSlice| -> CliResult<_> {
            let tiles = tiles_dir.as_deref().map(|d| Self::load_tiles(d, slice)).transpose()?;
            let fits = fit_slice(slice, tiles.as_deref(), &specs, &model, &train)?;
            let mut salience = Vec::new();
            for (&spec, fit) in &fits.fits {
                if spec.has_x() {
                    let values = fit.salience(&fits.data[&spec], train.eval_batch)?;
                    for (name, v) in fits.data[&spec].tabular_names.iter().zip(values) {
                        salience.push(SalienceRow {
                            funder: slice.funder,
                            sector: slice.sector_code,
                            specification: spec,
                            covariate: name.clone(),
                            value: v,
                        });
                    }
                }
            }
            Ok((fits, salience))
        };
        let results: Vec<_> = if parallel_slices {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(self.cfg.workers)
                .build()
                .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
            pool.install(|| slices.par_iter().map(job).collect::<CliResult<Vec<_>>>())?
        } else {
            slices.iter().map(job).collect::<CliResult<Vec<_>>>()?
        };

        let models = self.dir("models")?;
        let props = self.dir("propensities")?;
        let sal_dir = self.dir("salience")?;
        let mut outputs = Vec::new();
        for (slice, (fits, salience)) in slices.iter().zip(results) {
            let st = stem(slice.funder, slice.sector_code);
            let mut rows = Vec::new();
            for (&spec, fit) in &fits.fits {
                let dir = models.join(&st).join(spec.tag());
                std::fs::create_dir_all(&dir).map_err(io(&dir))?;
                for fm in &fit.folds {
                    outputs.extend(fm.save(&dir, &format!("fold{}", fm.fold))?);
                }
                for (i, c) in slice.cells.iter().enumerate() {
                    rows.push(PropensityRow {
                        unit_id: c.unit_id.clone(),
                        period: c.period,
                        fold: fit.fold_of_cell[i],
                        p_hat: fit.p_hat[i],
                        specification: spec,
                    });
                }
            }
            let summary = models.join(format!("{st}_fit_summary.json"));
            write_json(&summary, &fits.summaries)?;
            outputs.push(summary);
            let p = props.join(format!("propensities_{st}.csv"));
            write_rows(&p, &rows, &["unit_id", "period", "fold", "p_hat", "specification"])?;
            outputs.push(p);
            let s = sal_dir.join(format!("salience_{st}.csv"));
            write_rows(
                &s,
                &salience,
                &["funder", "sector", "specification", "covariate", "value"],
            )?;
            outputs.push(s);
        }
        self.finish("train", &inputs, outputs)
    }

    pub fn estimate(&mut self) -> CliResult<()> {
        let mut inputs = vec![self.required("build-panel")?];
        let trained = self.optional("train")?;
        if trained.is_none() {
            log::warn!("estimate: no trained models; only specifications without a propensity model are estimated");
        }
        inputs.extend(trained.clone());
        let specs = self.cfg.selection.specs()?;
        let clip = (self.cfg.train.clip_lo, self.cfg.train.clip_hi);
        let mut estimates = Vec::new();
        let mut skipped = Vec::new();
        for slice in self.load_panels()? {
            let st = stem(slice.funder, slice.sector_code);
            let (sample, rows) = estimation_sample(&slice);
            let mut propensities = BTreeMap::new();
            let p_path = self.root.join("propensities").join(format!("propensities_{st}.csv"));
            if trained.is_some() && p_path.exists() {
                let mut lookup: BTreeMap<(Specification, String, usize), f64> = BTreeMap::new();
                for r in read_rows::<PropensityRow>(&p_path)? {
                    lookup.insert((r.specification, r.unit_id, r.period), r.p_hat);
                }
                let available: BTreeSet<Specification> = lookup.keys().map(|k| k.0).collect();
                for spec in available {
                    let p = rows
                        .iter()
                        .map(|&i| {
                            let c = &slice.cells[i];
                            lookup
                                .get(&(spec, c.unit_id.clone(), c.period))
                                .copied()
                                .ok_or_else(|| {
                                    CliError::Core(Error::Alignment(format!(
                                        "{}: no {spec} propensity for {} period {}",
                                        key_for(&self.root, &p_path),
                                        c.unit_id,
                                        c.period
                                    )))
                                })
                        })
                        .collect::<CliResult<Vec<f64>>>()?;
                    propensities.insert(spec, p);
                }
            }
            for o in run_specifications(
                slice.funder,
                slice.sector_code,
                &sample,
                &propensities,
                &specs,
                clip,
                &self.cfg.estimator,
            )? {
                match o {
                    SpecOutcome::Estimated(e) => estimates.push(e),
                    SpecOutcome::Skipped { specification, reason } => skipped.push(SkippedRow {
                        funder: slice.funder,
                        sector: slice.sector_code,
                        specification,
                        reason,
                    }),
                }
            }
        }
        let dir = self.dir("estimates")?;
        let est = dir.join("estimates.csv");
        write_estimates(&est, &estimates)?;
        let sk = dir.join("skipped.csv");
        write_rows(&sk, &skipped, &["funder", "sector", "specification", "reason"])?;
        self.finish("estimate", &inputs, vec![est, sk])
    }

    pub fn analyze(&mut self) -> CliResult<()> {
        let mut inputs = vec![self.required("estimate")?, self.required("build-panel")?];
        let trained = self.optional("train")?;
        inputs.extend(trained.clone());
        let dir = self.dir("analysis")?;
        let estimates = read_estimates(&self.root.join("estimates").join("estimates.csv"))?;
        let slices = self.load_panels()?;
        let mut outputs = Vec::new();

        let mut auc_rows = Vec::new();
        let mut salience = Vec::new();
        if trained.is_some() {
            for s in &slices {
                let st = stem(s.funder, s.sector_code);
                let summary_path = self.root.join("models").join(format!("{st}_fit_summary.json"));
                let text = std::fs::read_to_string(&summary_path).map_err(io(&summary_path))?;
                let summaries: Vec<FitSummary> = serde_json::from_str(&text)?;
                for f in summaries {
                    auc_rows.push(AucRow {
                        funder: s.funder,
                        sector: s.sector_code,
                        spec: f.specification,
                        auc: f.auc,
                        n_out_of_sample: f.n_out_of_sample,
                    });
                }
                let sal_path = self.root.join("salience").join(format!("salience_{st}.csv"));
                salience.extend(read_rows::<SalienceRow>(&sal_path)?);
            }
        } else {
            log::warn!("analyze: no trained models; AUC, salience and canonical correlation are empty");
        }
        let auc_path = dir.join("auc.csv");
        write_rows(
            &auc_path,
            &auc_rows,
            &["funder", "sector", "spec", "auc", "n_out_of_sample"],
        )?;
        outputs.push(auc_path);

        salience.retain(|r| !r.covariate.starts_with("fe_"));
        let sal_path = dir.join("salience.csv");
        write_rows(
            &sal_path,
            &salience,
            &["funder", "sector", "specification", "covariate", "value"],
        )?;
        outputs.push(sal_path);

        let mut delta_rows = Vec::new();
        for funder in [Funder::WorldBank, Funder::China] {
            let b = salience_matrix(&salience, funder, Specification::XFe);
            let c2 = salience_matrix(&salience, funder, Specification::MXFe);
            if let (Some(b), Some(c2)) = (b, c2) {
                let (b, c2) = align(&b, &c2)?;
                for (k, d) in salience_delta(&c2, &b)?.into_iter().enumerate() {
                    let (r, c) = (k / c2.cols.len(), k % c2.cols.len());
                    delta_rows.push(DeltaRow {
                        funder,
                        sector: c2.cols[c],
                        covariate: c2.rows[r].clone(),
                        delta: d,
                    });
                }
            }
        }
        let delta_path = dir.join("salience_delta.csv");
        write_rows(&delta_path, &delta_rows, &["funder", "sector", "covariate", "delta"])?;
        outputs.push(delta_path);

        let lambda = self.cfg.analysis.cca_ridge;
        let cca = match (
            salience_matrix(&salience, Funder::WorldBank, Specification::MXFe),
            salience_matrix(&salience, Funder::China, Specification::MXFe),
        ) {
            (Some(a), Some(b)) => match salience_cca(&a, &b, lambda) {
                Ok(r) => CcaOut {
                    value: Some(r.value),
                    lambda: r.lambda,
                    sectors_used: r.sectors_used,
                    note: None,
                },
                Err(e) => cca_missing(lambda, e.to_string()),
            },
            _ => cca_missing(lambda, "salience for both funders is required".into()),
        };
        if let Some(n) = &cca.note {
            log::warn!("analyze: canonical correlation not computed: {n}");
        }
        let cca_path = dir.join("cca.json");
        write_json(&cca_path, &cca)?;
        outputs.push(cca_path);

        let meta_text = match meta_regress_ate(&estimates, self.cfg.analysis.meta_weighting) {
            Ok(m) => m.to_text(),
            Err(e) => {
                log::warn!("analyze: meta-regression not estimable: {e}");
                format!("meta-regression not estimable: {e}\n")
            }
        };
        let meta_path = dir.join("meta_regression.txt");
        std::fs::write(&meta_path, meta_text).map_err(io(&meta_path))?;
        outputs.push(meta_path);

        let mut twfe_rows = Vec::new();
        for s in &slices {
            let cells: Vec<_> = s.cells.iter().filter(|c| c.outcome_lead.is_some()).collect();
            let y: Vec<f64> = cells.iter().map(|c| c.outcome_lead.unwrap_or(f64::NAN)).collect();
            let a: Vec<f64> = cells.iter().map(|c| f64::from(c.treated)).collect();
            let units: Vec<&str> = cells.iter().map(|c| c.unit_id.as_str()).collect();
            let periods: Vec<usize> = cells.iter().map(|c| c.period).collect();
            let clusters: Vec<&str> = cells.iter().map(|c| c.adm2_id.as_str()).collect();
            let mut row = TwfeRow {
                funder: s.funder,
                sector: s.sector_code,
                beta: f64::NAN,
                se: f64::NAN,
                ci_low: f64::NAN,
                ci_high: f64::NAN,
                n_units: 0,
                n_switchers: 0,
                clusters: 0,
                n_obs: cells.len(),
                status: "ok".into(),
            };
            match twfe(&y, &a, &units, &periods, &clusters) {
                Ok(r) => {
                    row.beta = r.beta;
                    row.se = r.clustered_se;
                    row.ci_low = r.ci.0;
                    row.ci_high = r.ci.1;
                    row.n_units = r.n_units;
                    row.n_switchers = r.n_switchers;
                    row.clusters = r.cluster_count;
                }
                Err(e) => {
                    log::warn!(
                        "analyze: {} sector {}: two-way FE not estimable: {e}",
                        s.funder,
                        s.sector_code
                    );
                    row.status = e.to_string();
                }
            }
            twfe_rows.push(row);
        }
        let twfe_path = dir.join("twfe.csv");
        let mut w = csv::Writer::from_path(&twfe_path)?;
        w.write_record([
            "funder",
            "sector",
            "beta",
            "se",
            "ci_low",
            "ci_high",
            "n_units",
            "n_switchers",
            "clusters",
            "n_obs",
            "status",
        ])?;
        for r in &twfe_rows {
            w.write_record([
                r.funder.to_string(),
                r.sector.to_string(),
                fmt_f64(r.beta),
                fmt_f64(r.se),
                fmt_f64(r.ci_low),
                fmt_f64(r.ci_high),
                r.n_units.to_string(),
                r.n_switchers.to_string(),
                r.clusters.to_string(),
                r.n_obs.to_string(),
                r.status.clone(),
            ])?;
        }
        w.flush().map_err(io(&twfe_path))?;
        outputs.push(twfe_path);

        self.finish("analyze", &inputs, outputs)
    }

    pub fn plot(&mut self) -> CliResult<()> {
        let mut inputs = vec![self.required("estimate")?];
        let analyzed = self.optional("analyze")?;
        inputs.extend(analyzed.clone());
        let estimates = read_estimates(&self.root.join("estimates").join("estimates.csv"))?;
        let dir = self.dir("plots")?;
        let ate = dir.join("ate_intervals.svg");
        std::fs::write(&ate, plot::ate_intervals(&estimates)).map_err(io(&ate))?;
        let mut outputs = vec![ate];
        if analyzed.is_some() {
            let rows: Vec<AucRow> = read_rows(&self.root.join("analysis").join("auc.csv"))?;
            let auc = dir.join("auc.svg");
            std::fs::write(&auc, plot::auc_bars(&rows)).map_err(io(&auc))?;
            outputs.push(auc);
        } else {
            log::warn!("plot: analyze has not run; the AUC figure is skipped");
        }
        self.finish("plot", &inputs, outputs)
    }

    pub fn report(&mut self) -> CliResult<()> {
        let mut inputs = vec![self.required("estimate")?];
        let mut sections = report::Sections::default();
        let estimates = read_estimates(&self.root.join("estimates").join("estimates.csv"))?;
        sections.estimates = estimates;
        if let Some(i) = self.optional("analyze")? {
            inputs.push(i);
            let a = self.root.join("analysis");
            sections.auc = read_rows(&a.join("auc.csv"))?;
            sections.twfe = read_text(&a.join("twfe.csv"))?;
            sections.salience_delta = read_text(&a.join("salience_delta.csv"))?;
            sections.meta = read_text(&a.join("meta_regression.txt"))?;
            sections.cca = read_text(&a.join("cca.json"))?;
        }
        if let Some(i) = self.optional("plot")? {
            inputs.push(i);
            for key in self.manifest.outputs_of("plot") {
                if key.ends_with(".svg") {
                    sections.figures.push((key.clone(), read_text(&self.root.join(&key))?));
                }
            }
        }
        if let Some(i) = self.optional("build-panel")? {
            inputs.push(i);
            sections.panels = read_text(&self.root.join("panels").join("report.json"))?;
        }
        sections.config = self.cfg.to_toml()?;
        let path = self.root.join("report.html");
        std::fs::write(&path, report::render(&sections)).map_err(io(&path))?;
        self.finish("report", &inputs, vec![path])
    }
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(io(path))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub funder: Funder,
    pub sector: u32,
    pub spec: Specification,
    pub auc: f64,
    pub n_out_of_sample: usize,
}

#[derive(Debug, Clone, Serialize)]
struct DeltaRow {
    funder: Funder,
    sector: u32,
    covariate: String,
    delta: f64,
}

struct TwfeRow {
    funder: Funder,
    sector: u32,
    beta: f64,
    se: f64,
    ci_low: f64,
    ci_high: f64,
    n_units: usize,
    n_switchers: usize,
    clusters: usize,
    n_obs: usize,
    status: String,
}

#[derive(Debug, Clone, Serialize)]
struct CcaOut {
    value: Option<f64>,
    lambda: f64,
    sectors_used: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

fn cca_missing(lambda: f64, note: String) -> CcaOut {
    CcaOut {
        value: None,
        lambda,
        sectors_used: Vec::new(),
        note: Some(note),
    }
}

/// Covariates × sectors matrix for one funder and specification, over the
/// covariates every one of its sectors reports.
fn salience_matrix(rows: &[SalienceRow], funder: Funder, spec: Specification) -> Option<SalienceMatrix> {
    let mut by_sector: BTreeMap<u32, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.funder == funder && r.specification == spec) {
        by_sector.entry(r.sector).or_default().insert(&r.covariate, r.value);
    }
    let first = by_sector.values().next()?;
    let names: Vec<String> = first
        .keys()
        .filter(|k| by_sector.values().all(|m| m.contains_key(*k)))
        .map(|k| k.to_string())
        .collect();
    if names.is_empty() {
        return None;
    }
    let cols: Vec<u32> = by_sector.keys().copied().collect();
    let mut values = Vec::with_capacity(names.len() * cols.len());
    for n in &names {
        for c in &cols {
            values.push(by_sector[c][n.as_str()]);
        }
    }
    SalienceMatrix::new(funder, spec, names, cols, values).ok()
}

/// Restricts both matrices to their shared covariates and sectors.
fn align(a: &SalienceMatrix, b: &SalienceMatrix) -> CliResult<(SalienceMatrix, SalienceMatrix)> {
    let rows: Vec<String> = a.rows.iter().filter(|r| b.rows.contains(r)).cloned().collect();
    let cols: Vec<u32> = a.cols.iter().copied().filter(|c| b.cols.contains(c)).collect();
    let pick = |m: &SalienceMatrix| {
        let mut v = Vec::new();
        for r in &rows {
            let i = m.rows.iter().position(|x| x == r).unwrap_or(0);
            for c in &cols {
                let j = m.cols.iter().position(|x| x == c).unwrap_or(0);
                v.push(m.get(i, j));
            }
        }
        SalienceMatrix::new(m.funder, m.specification, rows.clone(), cols.clone(), v)
    };
    Ok((pick(a)?, pick(b)?))
}

/// Every `panel_*.csv` directly inside `dir`, in name order.
pub fn read_panel_dir(dir: &Path) -> CliResult<Vec<PanelSlice>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("panel_") && name.ends_with(".csv")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Core(Error::Input(format!(
            "no panel_*.csv files in {}",
            dir.display()
        ))));
    }
    paths.iter().map(|p| Ok(PanelSlice::read_csv(p)?)).collect()
}

/// Tile ids by `(unit_id, period)` from files named `{unit_id}_p{period}.gctl`.
pub fn scan_tiles(dir: &Path) -> CliResult<BTreeMap<(String, usize), String>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(io(dir))? {
        let path = entry.map_err(io(dir))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("gctl") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        let parsed = id
            .rsplit_once("_p")
            .and_then(|(u, p)| p.parse::<usize>().ok().map(|p| (u.to_string(), p)));
        match parsed {
            Some(key) => {
                out.insert(key, id.to_string());
            }
            None => log::warn!("tile file {} does not follow {{unit}}_p{{period}}.gctl", path.display()),
        }
    }
    Ok(out)
}

/// Estimates grouped by funder and sector, in file order.
pub fn group_estimates(rows: &[AteEstimate]) -> BTreeMap<(Funder, u32), Vec<&AteEstimate>> {
    let mut out: BTreeMap<(Funder, u32), Vec<&AteEstimate>> = BTreeMap::new();
    for r in rows {
        out.entry((r.funder, r.sector_code)).or_default().push(r);
    }
    out
}
