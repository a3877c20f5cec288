//! Neighborhoods, project records, treatment assignment and panel assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariates::{log1p_transform, CovariateSchema, Period};
use crate::error::{Error, Result};
use crate::geo::{haversine_km, in_local_square, locate_adm2, AdminArea, LatLon};

/// Side of a neighborhood square in kilometres.
pub const SQUARE_SIDE_KM: f64 = 6.7;
/// Buffer radius for near (precision 2) project locations.
pub const NEAR_RADIUS_KM: f64 = 25.0;
/// Smallest treated-cell count for a funder×sector panel.
pub const MIN_TREATED: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Funder {
    WorldBank,
    China,
}

impl Funder {
    pub fn other(self) -> Funder {
        match self {
            Funder::WorldBank => Funder::China,
            Funder::China => Funder::WorldBank,
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            Funder::WorldBank => "worldbank",
            Funder::China => "china",
        }
    }
}

impl fmt::Display for Funder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Funder::WorldBank => "WorldBank",
            Funder::China => "China",
        })
    }
}

impl FromStr for Funder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', ' ', '-'], "").as_str() {
            "worldbank" | "wb" => Ok(Funder::WorldBank),
            "china" | "cn" => Ok(Funder::China),
            _ => Err(Error::Input(format!("unknown funder `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    Exact = 1,
    Near = 2,
    Adm2 = 3,
}

impl Precision {
    pub fn from_code(code: u8) -> Option<Precision> {
        match code {
            1 => Some(Precision::Exact),
            2 => Some(Precision::Near),
            3 => Some(Precision::Adm2),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighborhood {
    pub unit_id: String,
    pub centroid: LatLon,
    pub country_code: String,
    pub adm1_id: String,
    pub adm2_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRecord {
    pub project_id: String,
    pub funder: Funder,
    pub sector_code: u32,
    pub location: LatLon,
    pub precision: Precision,
    pub adm2_id: Option<String>,
    pub commitment_year: i32,
}

/// 1 when any project covers the unit: an exact location inside its square,
/// a near location within 25 km of its centroid, or an ADM2-level location
/// in its ADM2.
pub fn assign_treatment<'a, I>(unit: &Neighborhood, projects: I) -> Result<u8>
where
    I: IntoIterator<Item = &'a ProjectRecord>,
{
    let mut treated = false;
    for p in projects {
        let hit = match p.precision {
            Precision::Exact => in_local_square(unit.centroid, p.location, SQUARE_SIDE_KM),
            Precision::Near => haversine_km(unit.centroid, p.location) <= NEAR_RADIUS_KM,
            Precision::Adm2 => match &p.adm2_id {
                Some(a) if !a.is_empty() => *a == unit.adm2_id,
                _ => {
                    return Err(Error::RecordInvalid {
                        id: p.project_id.clone(),
                        reason: "precision-3 project without adm2_id".into(),
                    })
                }
            },
        };
        treated |= hit;
    }
    Ok(u8::from(treated))
}

/// One neighborhood×period observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelCell {
    pub unit_id: String,
    pub period: usize,
    pub country_code: String,
    pub adm2_id: String,
    pub treated: u8,
    pub outcome_lead: Option<f64>,
    pub covariates: Vec<f64>,
    pub tile_ref: String,
}

/// All retained cells for one funder×sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelSlice {
    pub funder: Funder,
    pub sector_code: u32,
    pub covariate_names: Vec<String>,
    pub cells: Vec<PanelCell>,
}

impl PanelSlice {
    pub fn n_treated(&self) -> usize {
        self.cells.iter().filter(|c| c.treated == 1).count()
    }

    pub fn n_control(&self) -> usize {
        self.cells.len() - self.n_treated()
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.cells.iter().map(|c| c.treated).collect()
    }

    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        self.cells.iter().map(|c| c.covariates.clone()).collect()
    }

    /// Removes covariates that take a single value across all cells and
    /// returns their names.
    pub fn drop_constant_covariates(&mut self) -> Vec<String> {
        let width = self.covariate_names.len();
        let keep: Vec<bool> = (0..width)
            .map(|j| {
                let mut vals = self.cells.iter().map(|c| c.covariates[j]);
                match vals.next() {
                    Some(first) => vals.any(|v| v != first),
                    None => true,
                }
            })
            .collect();
        let dropped: Vec<String> = (0..width)
            .filter(|&j| !keep[j])
            .map(|j| self.covariate_names[j].clone())
            .collect();
        for name in &dropped {
            log::info!(
                "{} sector {}: dropping covariate `{name}` without variation",
                self.funder,
                self.sector_code
            );
        }
        if !dropped.is_empty() {
            let filter = |v: &[f64]| -> Vec<f64> { v.iter().zip(&keep).filter(|(_, &k)| k).map(|(&x, _)| x).collect() };
            for c in &mut self.cells {
                c.covariates = filter(&c.covariates);
            }
            self.covariate_names = self
                .covariate_names
                .iter()
                .zip(&keep)
                .filter(|(_, &k)| k)
                .map(|(n, _)| n.clone())
                .collect();
        }
        dropped
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        let mut header: Vec<String> = [
            "funder",
            "sector",
            "unit_id",
            "period",
            "country_code",
            "adm2_id",
            "treated",
            "outcome_lead",
            "tile_ref",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.covariate_names.iter().cloned());
        w.write_record(&header)?;
        for c in &self.cells {
            let mut rec = vec![
                self.funder.to_string(),
                self.sector_code.to_string(),
                c.unit_id.clone(),
                c.period.to_string(),
                c.country_code.clone(),
                c.adm2_id.clone(),
                c.treated.to_string(),
                c.outcome_lead.map(fmt_f64).unwrap_or_default(),
                c.tile_ref.clone(),
            ];
            rec.extend(c.covariates.iter().map(|&v| fmt_f64(v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
        let header = r.headers()?.clone();
        const FIXED: usize = 9;
        if header.len() < FIXED || &header[0] != "funder" || &header[8] != "tile_ref" {
            return Err(Error::Format {
                path: path.display().to_string(),
                reason: "unexpected panel header".into(),
            });
        }
        let covariate_names: Vec<String> = header.iter().skip(FIXED).map(String::from).collect();
        let mut funder = None;
        let mut sector = None;
        let mut cells = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = |what: &str| Error::Format {
                path: path.display().to_string(),
                reason: format!("row {}: bad {what}", line + 1),
            };
            let f: Funder = rec[0].parse()?;
            let s: u32 = rec[1].parse().map_err(|_| bad("sector"))?;
            if funder.is_some_and(|x| x != f) || sector.is_some_and(|x| x != s) {
                return Err(bad("funder/sector (mixed panel)"));
            }
            funder = Some(f);
            sector = Some(s);
            let outcome_lead = if rec[7].is_empty() {
                None
            } else {
                Some(rec[7].parse::<f64>().map_err(|_| bad("outcome_lead"))?)
            };
            let covariates = rec
                .iter()
                .skip(FIXED)
                .map(|v| v.parse::<f64>().map_err(|_| bad("covariate")))
                .collect::<Result<Vec<_>>>()?;
            let treated: u8 = rec[6].parse().map_err(|_| bad("treated"))?;
            if treated > 1 {
                return Err(bad("treated"));
            }
            cells.push(PanelCell {
                unit_id: rec[2].to_string(),
                period: rec[3].parse().map_err(|_| bad("period"))?,
                country_code: rec[4].to_string(),
                adm2_id: rec[5].to_string(),
                treated,
                outcome_lead,
                covariates,
                tile_ref: rec[8].to_string(),
            });
        }
        Ok(PanelSlice {
            funder: funder.ok_or_else(|| Error::InsufficientData(format!("empty panel {}", path.display())))?,
            sector_code: sector.unwrap_or_default(),
            covariate_names,
            cells,
        })
    }
}

pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        _ => Error::Csv(e),
    }
}

/// Everything panel assembly consumes.
#[derive(Debug, Clone, Default)]
pub struct PanelInputs {
    pub units: Vec<Neighborhood>,
    pub projects: Vec<ProjectRecord>,
    /// IWI by `(unit_id, period index)` of measurement.
    pub outcomes: BTreeMap<(String, usize), f64>,
    /// Tile id by `(unit_id, commitment period index)`; the tile holds the
    /// composite for the three years before that period.
    pub tiles: BTreeMap<(String, usize), String>,
    /// Yearly source series by `(unit_id, variable)`.
    pub yearly: BTreeMap<(String, String), BTreeMap<i32, f64>>,
    pub schema: CovariateSchema,
    pub areas: Vec<AdminArea>,
    pub adjacency: BTreeMap<String, BTreeSet<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PanelOptions {
    pub first_year: i32,
    pub last_year: i32,
    pub min_treated: usize,
}

impl Default for PanelOptions {
    fn default() -> Self {
        Self {
            first_year: 2002,
            last_year: 2013,
            min_treated: MIN_TREATED,
        }
    }
}

/// Counts and decisions recorded while building one panel.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PanelReport {
    pub funder: String,
    pub sector: u32,
    pub status: String,
    pub reason: Option<String>,
    pub n_cells: usize,
    pub n_treated: usize,
    pub n_control: usize,
    pub dropped_controls_no_project_country: usize,
    pub countries_without_projects: Vec<String>,
    pub missing_outcome: usize,
    pub missing_tile: usize,
    pub missing_covariates: usize,
    pub dropped_covariates: Vec<String>,
    pub notes: Vec<String>,
}

/// Built panel, or `None` with the rejection reason in the report.
#[derive(Debug, Clone)]
pub struct PanelBuild {
    pub slice: Option<PanelSlice>,
    pub report: PanelReport,
}

pub const PROJECT_COUNT_COVARIATES: [&str; 3] = [
    "adjacent_adm2_projects_log",
    "funder_other_sector_projects_log",
    "other_funder_projects_log",
];

fn project_adm2(p: &ProjectRecord, areas: &[AdminArea]) -> Option<String> {
    match &p.adm2_id {
        Some(a) if !a.is_empty() => Some(a.clone()),
        _ => locate_adm2(areas, p.location).map(|a| a.id.clone()),
    }
}

/// Applies the minimum-treated and no-variation rules to an assembled slice.
pub fn finalize_panel(mut slice: PanelSlice, min_treated: usize, report: &mut PanelReport) -> Option<PanelSlice> {
    report.n_treated = slice.n_treated();
    report.n_control = slice.n_control();
    report.n_cells = slice.cells.len();
    if report.n_treated < min_treated {
        report.status = "rejected".into();
        report.reason = Some("min-treated".into());
        log::warn!(
            "{} sector {} rejected: {} treated cells (< {min_treated})",
            slice.funder,
            slice.sector_code,
            report.n_treated
        );
        return None;
    }
    report.dropped_covariates = slice.drop_constant_covariates();
    report.status = "built".into();
    Some(slice)
}

/// Assembles the lagged panel for one funder×sector.
pub fn build_panel(inputs: &PanelInputs, funder: Funder, sector: u32, opts: &PanelOptions) -> Result<PanelBuild> {
    let periods: Vec<Period> = Period::all_study()
        .into_iter()
        .filter(|p| p.start_year >= opts.first_year && p.start_year + 2 <= opts.last_year)
        .collect();
    let in_window = |y: i32| y >= opts.first_year && y <= opts.last_year;
    let mut report = PanelReport {
        funder: funder.to_string(),
        sector,
        notes: vec![
            "near (precision 2) projects matched on centroid distance <= 25 km".into(),
            "treatment assigned in the commitment period only".into(),
        ],
        ..Default::default()
    };

    let adm2_of: Vec<Option<String>> = inputs.projects.iter().map(|p| project_adm2(p, &inputs.areas)).collect();

    let sector_projects: Vec<&ProjectRecord> = inputs
        .projects
        .iter()
        .filter(|p| p.funder == funder && p.sector_code == sector && in_window(p.commitment_year))
        .collect();
    let mut project_countries: BTreeSet<String> = BTreeSet::new();
    let country_of_adm2: BTreeMap<&str, &str> = inputs
        .units
        .iter()
        .map(|u| (u.adm2_id.as_str(), u.country_code.as_str()))
        .chain(inputs.areas.iter().map(|a| (a.id.as_str(), a.country.as_str())))
        .collect();
    for (p, a) in inputs.projects.iter().zip(&adm2_of) {
        if p.funder == funder && p.sector_code == sector && in_window(p.commitment_year) {
            if let Some(c) = a.as_deref().and_then(|a| country_of_adm2.get(a)) {
                project_countries.insert(c.to_string());
            }
        }
    }
    // Precision 1/2 projects outside any known ADM2 still mark the country
    // of every unit they treat.
    let all_countries: BTreeSet<String> = inputs.units.iter().map(|u| u.country_code.clone()).collect();

    // Project counts per (adm2, period) for the concurrent-activity covariates.
    let mut counts: BTreeMap<(String, usize), [usize; 3]> = BTreeMap::new();
    for (p, a) in inputs.projects.iter().zip(&adm2_of) {
        let (Some(a), Some(per)) = (a, Period::of_year(p.commitment_year)) else {
            continue;
        };
        let e = counts.entry((a.clone(), per.index)).or_default();
        e[0] += 1;
        if p.funder == funder && p.sector_code != sector {
            e[1] += 1;
        }
        if p.funder != funder {
            e[2] += 1;
        }
    }
    // Multi-sector duplicates share an id; adjacent counts use distinct ids.
    let mut distinct: BTreeMap<(String, usize), BTreeSet<&str>> = BTreeMap::new();
    for (p, a) in inputs.projects.iter().zip(&adm2_of) {
        if let (Some(a), Some(per)) = (a, Period::of_year(p.commitment_year)) {
            distinct
                .entry((a.clone(), per.index))
                .or_default()
                .insert(&p.project_id);
        }
    }

    let mut names = inputs.schema.names();
    names.extend(PROJECT_COUNT_COVARIATES.iter().map(|s| s.to_string()));

    let mut cells = Vec::new();
    let mut treated_countries = BTreeSet::new();
    for period in &periods {
        let active: Vec<&ProjectRecord> = sector_projects
            .iter()
            .copied()
            .filter(|p| period.contains(p.commitment_year))
            .collect();
        for unit in &inputs.units {
            let treated = assign_treatment(unit, active.iter().copied())?;
            if treated == 1 {
                treated_countries.insert(unit.country_code.clone());
            }
            let Some(tile_ref) = inputs.tiles.get(&(unit.unit_id.clone(), period.index)) else {
                report.missing_tile += 1;
                continue;
            };
            let mut covariates = Vec::with_capacity(names.len());
            let mut complete = true;
            for spec in &inputs.schema.covariates {
                let series = inputs
                    .yearly
                    .get(&(unit.unit_id.clone(), spec.source.clone()))
                    .cloned()
                    .unwrap_or_default();
                match spec.apply(&series, *period)? {
                    Some(v) => covariates.push(v),
                    None => {
                        complete = false;
                        break;
                    }
                }
            }
            if !complete {
                report.missing_covariates += 1;
                continue;
            }
            let key = |a: &str| (a.to_string(), period.index);
            let adjacent: usize = inputs
                .adjacency
                .get(&unit.adm2_id)
                .map(|nb| nb.iter().map(|a| distinct.get(&key(a)).map_or(0, BTreeSet::len)).sum())
                .unwrap_or(0);
            let own = counts.get(&key(&unit.adm2_id)).copied().unwrap_or_default();
            for c in [adjacent, own[1], own[2]] {
                covariates.push(log1p_transform(c as f64)?);
            }
            let outcome_lead = inputs.outcomes.get(&(unit.unit_id.clone(), period.index + 1)).copied();
            if let Some(y) = outcome_lead {
                if !(0.0..=100.0).contains(&y) {
                    return Err(Error::RecordInvalid {
                        id: unit.unit_id.clone(),
                        reason: format!("outcome {y} outside [0, 100]"),
                    });
                }
            } else {
                report.missing_outcome += 1;
            }
            cells.push(PanelCell {
                unit_id: unit.unit_id.clone(),
                period: period.index,
                country_code: unit.country_code.clone(),
                adm2_id: unit.adm2_id.clone(),
                treated,
                outcome_lead,
                covariates,
                tile_ref: tile_ref.clone(),
            });
        }
    }
    project_countries.extend(treated_countries);
    report.countries_without_projects = all_countries.difference(&project_countries).cloned().collect();
    let before = cells.len();
    cells.retain(|c| c.treated == 1 || project_countries.contains(&c.country_code));
    report.dropped_controls_no_project_country = before - cells.len();
    report.missing_outcome = cells.iter().filter(|c| c.outcome_lead.is_none()).count();

    let slice = PanelSlice {
        funder,
        sector_code: sector,
        covariate_names: names,
        cells,
    };
    let slice = finalize_panel(slice, opts.min_treated, &mut report);
    Ok(PanelBuild { slice, report })
}

#[derive(Debug, Deserialize)]
struct ProjectRow {
    project_id: String,
    funder: String,
    sector_code: String,
    lat: f64,
    lon: f64,
    precision: u8,
    #[serde(default)]
    adm2_id: Option<String>,
    year: i32,
}

/// Reads projects; a `sector_code` field listing several codes separated by
/// `|` or `;` yields one record per code.
pub fn read_projects(path: &Path) -> Result<Vec<ProjectRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<ProjectRow>() {
        let row = row?;
        let invalid = |reason: String| Error::RecordInvalid {
            id: row.project_id.clone(),
            reason,
        };
        let precision = Precision::from_code(row.precision)
            .ok_or_else(|| invalid(format!("precision {} not in 1..=3", row.precision)))?;
        let location = LatLon::new(row.lat, row.lon);
        if !location.is_valid() {
            return Err(invalid("coordinates out of range".into()));
        }
        let funder: Funder = row.funder.parse()?;
        for code in row
            .sector_code
            .split(['|', ';'])
            .map(str::trim)
            .filter(|s| !s.is_empty())
        {
            let sector_code = code.parse().map_err(|_| invalid(format!("bad sector code `{code}`")))?;
            out.push(ProjectRecord {
                project_id: row.project_id.clone(),
                funder,
                sector_code,
                location,
                precision,
                adm2_id: row.adm2_id.clone().filter(|s| !s.is_empty()),
                commitment_year: row.year,
            });
        }
    }
    Ok(out)
}

pub fn write_projects(path: &Path, projects: &[ProjectRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    w.write_record([
        "project_id",
        "funder",
        "sector_code",
        "lat",
        "lon",
        "precision",
        "adm2_id",
        "year",
    ])?;
    for p in projects {
        w.write_record([
            p.project_id.clone(),
            p.funder.to_string(),
            p.sector_code.to_string(),
            fmt_f64(p.location.lat),
            fmt_f64(p.location.lon),
            (p.precision as u8).to_string(),
            p.adm2_id.clone().unwrap_or_default(),
            p.commitment_year.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct NeighborhoodRow {
    unit_id: String,
    lat: f64,
    lon: f64,
    country_code: String,
    adm1_id: String,
    adm2_id: String,
}

pub fn read_neighborhoods(path: &Path) -> Result<Vec<Neighborhood>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = Vec::new();
    for row in r.deserialize::<NeighborhoodRow>() {
        let row = row?;
        let centroid = LatLon::new(row.lat, row.lon);
        if !centroid.is_valid() {
            return Err(Error::RecordInvalid {
                id: row.unit_id,
                reason: "centroid out of range".into(),
            });
        }
        out.push(Neighborhood {
            unit_id: row.unit_id,
            centroid,
            country_code: row.country_code,
            adm1_id: row.adm1_id,
            adm2_id: row.adm2_id,
        });
    }
    Ok(out)
}

pub fn write_neighborhoods(path: &Path, units: &[Neighborhood]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for u in units {
        w.serialize(NeighborhoodRow {
            unit_id: u.unit_id.clone(),
            lat: u.centroid.lat,
            lon: u.centroid.lon,
            country_code: u.country_code.clone(),
            adm1_id: u.adm1_id.clone(),
            adm2_id: u.adm2_id.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Checks that every unit's ADM2 resolves to exactly one loaded area.
pub fn validate_units(units: &[Neighborhood], areas: &[AdminArea]) -> Result<()> {
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for a in areas {
        *seen.entry(a.id.as_str()).or_default() += 1;
    }
    for u in units {
        match seen.get(u.adm2_id.as_str()) {
            Some(1) => {}
            Some(n) => {
                return Err(Error::RecordInvalid {
                    id: u.unit_id.clone(),
                    reason: format!("adm2 `{}` matches {n} polygons", u.adm2_id),
                })
            }
            None => {
                return Err(Error::RecordInvalid {
                    id: u.unit_id.clone(),
                    reason: format!("adm2 `{}` not in boundary set", u.adm2_id),
                })
            }
        }
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct OutcomeRow {
    unit_id: String,
    period: usize,
    iwi: f64,
}

pub fn read_outcomes(path: &Path) -> Result<BTreeMap<(String, usize), f64>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<OutcomeRow>() {
        let row = row?;
        out.insert((row.unit_id, row.period), row.iwi);
    }
    Ok(out)
}

pub fn write_outcomes(path: &Path, outcomes: &BTreeMap<(String, usize), f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for ((unit_id, period), &iwi) in outcomes {
        w.serialize(OutcomeRow {
            unit_id: unit_id.clone(),
            period: *period,
            iwi,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Deserialize)]
struct YearlyRow {
    unit_id: String,
    year: i32,
    variable: String,
    value: f64,
}

/// Long-format yearly covariates: `unit_id, year, variable, value`.
pub fn read_yearly_covariates(path: &Path) -> Result<BTreeMap<(String, String), BTreeMap<i32, f64>>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_io(path, e))?;
    let mut out: BTreeMap<(String, String), BTreeMap<i32, f64>> = BTreeMap::new();
    for row in r.deserialize::<YearlyRow>() {
        let row = row?;
        out.entry((row.unit_id, row.variable))
            .or_default()
            .insert(row.year, row.value);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::destination;

    fn unit(id: &str, lat: f64, lon: f64, country: &str, adm2: &str) -> Neighborhood {
        Neighborhood {
            unit_id: id.into(),
            centroid: LatLon::new(lat, lon),
            country_code: country.into(),
            adm1_id: format!("{country}-1"),
            adm2_id: adm2.into(),
        }
    }

    fn project(id: &str, loc: LatLon, precision: Precision, adm2: Option<&str>, year: i32) -> ProjectRecord {
        ProjectRecord {
            project_id: id.into(),
            funder: Funder::WorldBank,
            sector_code: 110,
            location: loc,
            precision,
            adm2_id: adm2.map(String::from),
            commitment_year: year,
        }
    }

    #[test]
    fn treatment_rules() {
        let u = unit("u", 5.0, 30.0, "AA", "d1");
        let at = project("p", u.centroid, Precision::Exact, None, 2003);
        assert_eq!(assign_treatment(&u, [&at]).unwrap(), 1);
        let near = project("p", destination(u.centroid, 60.0, 24.9), Precision::Near, None, 2003);
        let far = project("p", destination(u.centroid, 60.0, 25.1), Precision::Near, None, 2003);
        assert_eq!(assign_treatment(&u, [&near]).unwrap(), 1);
        assert_eq!(assign_treatment(&u, [&far]).unwrap(), 0);
        let other = project("p", u.centroid, Precision::Adm2, Some("d2"), 2003);
        assert_eq!(assign_treatment(&u, [&other]).unwrap(), 0);
        let same = project("p", u.centroid, Precision::Adm2, Some("d1"), 2003);
        assert_eq!(assign_treatment(&u, [&same]).unwrap(), 1);
        let broken = project("p", u.centroid, Precision::Adm2, None, 2003);
        assert!(matches!(
            assign_treatment(&u, [&broken]),
            Err(Error::RecordInvalid { .. })
        ));
    }

    #[test]
    fn funder_parsing() {
        assert_eq!("World Bank".parse::<Funder>().unwrap(), Funder::WorldBank);
        assert_eq!("china".parse::<Funder>().unwrap(), Funder::China);
        assert!("usaid".parse::<Funder>().is_err());
    }

    #[test]
    fn period_timestamps_bracket_commitment() {
        for p in Period::all_study() {
            let next = Period {
                index: p.index + 1,
                start_year: p.start_year + 3,
            };
            assert!(p.prior_years().iter().all(|&y| y < p.start_year));
            assert!(next.years().iter().all(|&y| y > p.years()[2]));
        }
    }
}
