//! Synthetic worlds with known treatment effects.
//!
//! Each unit carries two latent confounders drawn as smooth spatial fields:
//! `u_visible`, which is rendered into the unit's image tiles as texture
//! (blob density with a band signature, stripe frequency), and
//! `u_invisible`, which never appears in any input. Treatment follows
//! `A ~ Bernoulli(σ(a₀ + γᵥ·u_visible + γᵢ·u_invisible + γₜ·market_access))` and
//! outcomes `Y = b₀ + τ·A + κ·(γᵥ·u_visible + γᵢ·u_invisible + γₜ·market_access) + ε`,
//! clipped to [0, 100].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::Specification;
use crate::geo::{adm2_to_geojson, AdminArea, LatLon, Polygon};
use crate::panel::{write_neighborhoods, write_outcomes, Funder, Neighborhood, PanelCell, PanelSlice};
use crate::tensor::sigmoid;
use crate::tile::{median_composite, Band, ImageTile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldConfig {
    pub n_units: usize,
    pub n_adm2: usize,
    pub n_countries: usize,
    pub n_periods: usize,
    pub tau_true: f64,
    /// Heterogeneity: Y(1) − Y(0) = τ + h·u_visible.
    pub tau_heterogeneity: f64,
    pub gamma_visible: f64,
    pub gamma_invisible: f64,
    /// Confounding through the tabular `market_access` covariate.
    pub gamma_tabular: f64,
    /// Share of the visible confounder that the tabular proxy does not see;
    /// the proxy correlates with `u_visible` at `1 − share_visible`.
    pub share_visible: f64,
    /// Outcome loading κ of the confounding index.
    pub outcome_loading: f64,
    pub baseline: f64,
    pub noise_sd: f64,
    /// Fraction of latent variance that is spatially smooth.
    pub spatial_share: f64,
    /// Treatment intercept; solved for `treated_share` when absent.
    pub intercept: Option<f64>,
    pub treated_share: f64,
    pub image_side: usize,
    pub bands: usize,
    /// Expected blob count per tile at `u_visible = 0`.
    pub blob_rate: f64,
    /// Log-rate slope of blob count in `u_visible`.
    pub texture_gain: f64,
    pub scenes_per_composite: usize,
    pub cloud_probability: f64,
    pub funder: Funder,
    pub sector_code: u32,
    /// Distinguishes assignment draws of several slices that share one
    /// geography, latent fields and imagery.
    pub slice: u64,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_units: 2000,
            n_adm2: 20,
            n_countries: 2,
            n_periods: 4,
            tau_true: 5.0,
            tau_heterogeneity: 0.0,
            gamma_visible: 2.0,
            gamma_invisible: 0.1,
            gamma_tabular: 1.5,
            share_visible: 0.8,
            outcome_loading: 6.0,
            baseline: 45.0,
            noise_sd: 5.0,
            spatial_share: 0.5,
            intercept: None,
            treated_share: 0.3,
            image_side: 64,
            bands: 5,
            blob_rate: 8.0,
            texture_gain: 0.5,
            scenes_per_composite: 3,
            cloud_probability: 0.2,
            funder: Funder::WorldBank,
            sector_code: 110,
            slice: 0,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_adm2 == 0 || self.n_units < 2 * self.n_adm2 {
            return bad(format!(
                "n_units {} must be at least twice n_adm2 {}",
                self.n_units, self.n_adm2
            ));
        }
        if self.n_countries == 0 || self.n_countries > self.n_adm2 {
            return bad("n_countries must be in 1..=n_adm2".into());
        }
        if self.n_periods == 0 || self.n_periods > 4 {
            return bad("n_periods must be in 1..=4".into());
        }
        for (name, v) in [
            ("tau_true", self.tau_true),
            ("gamma_visible", self.gamma_visible),
            ("gamma_invisible", self.gamma_invisible),
            ("gamma_tabular", self.gamma_tabular),
            ("noise_sd", self.noise_sd),
            ("outcome_loading", self.outcome_loading),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        if !(0.0..=1.0).contains(&self.share_visible) || !(0.0..=1.0).contains(&self.spatial_share) {
            return bad("share_visible and spatial_share must lie in [0, 1]".into());
        }
        if !(0.0 < self.treated_share && self.treated_share < 1.0) {
            return bad("treated_share must lie in (0, 1)".into());
        }
        if self.bands == 0 || self.bands > Band::ALL.len() || self.image_side < 4 {
            return bad("bands must be in 1..=5 and image_side at least 4".into());
        }
        if !(self.blob_rate > 0.0) || !self.texture_gain.is_finite() {
            return bad("blob_rate must be positive and texture_gain finite".into());
        }
        if self.scenes_per_composite == 0 || !(0.0..1.0).contains(&self.cloud_probability) {
            return bad("scenes_per_composite must be positive and cloud_probability in [0, 1)".into());
        }
        Ok(())
    }
}

/// Ground truth kept apart from the observable panel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldTruth {
    pub tau_true: f64,
    /// Mean of Y(1) − Y(0) over cells, before clipping.
    pub sample_ate: f64,
    pub intercept: f64,
    pub u_visible: Vec<f64>,
    pub u_invisible: Vec<f64>,
    /// True propensity per panel cell.
    pub propensity: Vec<f64>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// Share of observed outcomes hit by the [0, 100] clip.
    pub clip_rate: f64,
}

/// A generated world: geography, panel and truth.
#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub units: Vec<Neighborhood>,
    pub areas: Vec<AdminArea>,
    pub panel: PanelSlice,
    pub truth: WorldTruth,
    /// Index into `units` for each panel cell.
    pub unit_of_cell: Vec<usize>,
}

/// Covariate columns emitted by the simulator.
pub const SIM_COVARIATES: [&str; 5] = [
    "visible_proxy",
    "market_access",
    "pop_density_log",
    "conflict_deaths_log",
    "election_year",
];

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    // splitmix64 over the combined words
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn stream(seed: u64, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, a, b))
}

const STREAM_FIELD: u64 = 1;
const STREAM_UNIT: u64 = 2;
const STREAM_CELL: u64 = 3;
const STREAM_TILE: u64 = 4;
const STREAM_ASSIGN: u64 = 5;

/// Smooth random field on the unit square: a sum of Gaussian bumps.
struct Field {
    centers: Vec<(f64, f64, f64)>,
    width: f64,
}

impl Field {
    fn new(rng: &mut ChaCha8Rng, bumps: usize, width: f64) -> Self {
        let centers = (0..bumps)
            .map(|_| (rng.gen::<f64>(), rng.gen::<f64>(), rng.sample::<f64, _>(StandardNormal)))
            .collect();
        Self { centers, width }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.centers
            .iter()
            .map(|&(cx, cy, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * self.width.powi(2))).exp())
            .sum()
    }
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
        .sqrt()
        .max(1e-12);
    v.iter_mut().for_each(|x| *x = (*x - mean) / sd);
}

/// Intercept giving mean σ(a₀ + ηᵢ) = `share`, by bisection.
pub fn solve_intercept(eta: &[f64], share: f64) -> f64 {
    let mean_p = |a: f64| eta.iter().map(|&e| sigmoid(a + e)).sum::<f64>() / eta.len() as f64;
    let (mut lo, mut hi) = (-50.0, 50.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_p(mid) < share {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

const LON0: f64 = 20.0;
const LAT0: f64 = -5.0;
const ADM2_DEG: f64 = 0.5;

fn grid_dims(n_adm2: usize) -> (usize, usize) {
    let cols = (n_adm2 as f64).sqrt().ceil() as usize;
    let rows = n_adm2.div_ceil(cols);
    (rows, cols)
}

/// Draws a world from `config`.
pub fn generate_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let seed = config.seed;
    let (rows, cols) = grid_dims(config.n_adm2);

    let mut areas = Vec::with_capacity(config.n_adm2);
    for a in 0..config.n_adm2 {
        let (r, c) = (a / cols, a % cols);
        let x0 = LON0 + c as f64 * ADM2_DEG;
        let y0 = LAT0 + r as f64 * ADM2_DEG;
        let ring = vec![
            (x0, y0),
            (x0 + ADM2_DEG, y0),
            (x0 + ADM2_DEG, y0 + ADM2_DEG),
            (x0, y0 + ADM2_DEG),
            (x0, y0),
        ];
        let id = format!("D{a:03}");
        let country = country_code(c * config.n_countries / cols);
        areas.push(AdminArea {
            parts: vec![Polygon::new(&id, vec![ring])?],
            id,
            country,
        });
    }

    // Unit placement and spatially smooth latent fields.
    let mut field_rng = stream(seed, STREAM_FIELD, 0);
    let fields: Vec<Field> = (0..4).map(|_| Field::new(&mut field_rng, 12, 0.18)).collect();
    let n = config.n_units;
    let mut units = Vec::with_capacity(n);
    let mut xy = Vec::with_capacity(n);
    let mut raw: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    let mut idio: Vec<Vec<f64>> = (0..4).map(|_| Vec::with_capacity(n)).collect();
    for i in 0..n {
        let mut rng = stream(seed, STREAM_UNIT, i as u64);
        let a = i % config.n_adm2;
        let (r, c) = (a / cols, a % cols);
        let fx = (c as f64 + rng.gen_range(0.05..0.95)) / cols as f64;
        let fy = (r as f64 + rng.gen_range(0.05..0.95)) / rows as f64;
        xy.push((fx, fy));
        for k in 0..4 {
            raw[k].push(fields[k].at(fx, fy));
            idio[k].push(rng.sample::<f64, _>(StandardNormal));
        }
        let lon = LON0 + fx * cols as f64 * ADM2_DEG;
        let lat = LAT0 + fy * rows as f64 * ADM2_DEG;
        units.push(Neighborhood {
            unit_id: format!("U{i:05}"),
            centroid: LatLon::new(lat, lon),
            country_code: areas[a].country.clone(),
            adm1_id: format!("{}-R{}", areas[a].country, r / 2),
            adm2_id: areas[a].id.clone(),
        });
    }
    let ws = config.spatial_share.sqrt();
    let wi = (1.0 - config.spatial_share).sqrt();
    let mut latent: Vec<Vec<f64>> = Vec::with_capacity(4);
    for k in 0..4 {
        let mut f = raw[k].clone();
        standardize(&mut f);
        let mut e = idio[k].clone();
        standardize(&mut e);
        let mut v: Vec<f64> = f.iter().zip(&e).map(|(a, b)| ws * a + wi * b).collect();
        standardize(&mut v);
        latent.push(v);
    }
    let u_visible = latent[0].clone();
    let u_invisible = latent[1].clone();
    let market_access = latent[2].clone();
    let density = latent[3].clone();

    // Cells.
    let corr = 1.0 - config.share_visible;
    let proxy_noise = (1.0 - corr * corr).max(0.0).sqrt();
    let mut cells = Vec::with_capacity(n * config.n_periods);
    let mut unit_of_cell = Vec::with_capacity(n * config.n_periods);
    let mut eta = Vec::with_capacity(n * config.n_periods);
    let mut noise = Vec::with_capacity(n * config.n_periods);
    let mut draws = Vec::with_capacity(n * config.n_periods);
    let mut covariates = Vec::with_capacity(n * config.n_periods);
    let election: BTreeMap<(String, usize), bool> = (0..config.n_countries)
        .flat_map(|c| (0..config.n_periods).map(move |t| (c, t)))
        .map(|(c, t)| {
            let mut rng = stream(seed, STREAM_CELL, (1 << 40) + (c * 8 + t) as u64);
            ((country_code(c), t), rng.gen_bool(0.4))
        })
        .collect();
    for t in 0..config.n_periods {
        for i in 0..n {
            let mut rng = stream(seed, STREAM_CELL, (t * n + i) as u64);
            let index = config.gamma_visible * u_visible[i]
                + config.gamma_invisible * u_invisible[i]
                + config.gamma_tabular * market_access[i];
            eta.push(index);
            noise.push(rng.sample::<f64, _>(StandardNormal) * config.noise_sd);
            let mut assign = stream(
                seed ^ mix(config.slice, STREAM_ASSIGN, 0),
                STREAM_ASSIGN,
                (t * n + i) as u64,
            );
            draws.push(assign.gen::<f64>());
            let proxy = corr * u_visible[i] + proxy_noise * rng.sample::<f64, _>(StandardNormal);
            let conflict: f64 = Poisson::new(2.0 + (density[i] + 1.0).max(0.0))
                .expect("positive rate")
                .sample(&mut rng);
            covariates.push(vec![
                proxy,
                market_access[i] + 0.1 * rng.sample::<f64, _>(StandardNormal),
                (2.0 + density[i]).max(0.0).ln_1p(),
                conflict.ln_1p(),
                f64::from(u8::from(election[&(units[i].country_code.clone(), t)])),
            ]);
            unit_of_cell.push(i);
        }
    }
    let solved = solve_intercept(&eta, config.treated_share);
    let intercept = match config.intercept {
        Some(a0) => {
            let mean_p = eta.iter().map(|&e| sigmoid(a0 + e)).sum::<f64>() / eta.len() as f64;
            if !(0.01..=0.99).contains(&mean_p) {
                return Err(Error::Config(format!(
                    "intercept {a0} gives mean treatment probability {mean_p:.4}; try intercept = {solved:.4}"
                )));
            }
            a0
        }
        None => solved,
    };
    let mut propensity = Vec::with_capacity(eta.len());
    let (mut y0s, mut y1s) = (Vec::with_capacity(eta.len()), Vec::with_capacity(eta.len()));
    let mut clipped = 0usize;
    let mut effect_sum = 0.0;
    for (c, &e) in eta.iter().enumerate() {
        let i = unit_of_cell[c];
        let t = c / n;
        let p = sigmoid(intercept + e);
        propensity.push(p);
        let a = u8::from(draws[c] < p);
        let y0 = config.baseline + config.outcome_loading * e + noise[c];
        let effect = config.tau_true + config.tau_heterogeneity * u_visible[i];
        let y1 = y0 + effect;
        effect_sum += effect;
        let y = if a == 1 { y1 } else { y0 };
        let y_obs = y.clamp(0.0, 100.0);
        if y_obs != y {
            clipped += 1;
        }
        y0s.push(y0);
        y1s.push(y1);
        cells.push(PanelCell {
            unit_id: units[i].unit_id.clone(),
            period: t,
            country_code: units[i].country_code.clone(),
            adm2_id: units[i].adm2_id.clone(),
            treated: a,
            outcome_lead: Some(y_obs),
            covariates: covariates[c].clone(),
            tile_ref: tile_id(&units[i].unit_id, t),
        });
    }
    let n_cells = cells.len();
    Ok(World {
        config: config.clone(),
        units,
        areas,
        panel: PanelSlice {
            funder: config.funder,
            sector_code: config.sector_code,
            covariate_names: SIM_COVARIATES.iter().map(|s| s.to_string()).collect(),
            cells,
        },
        truth: WorldTruth {
            tau_true: config.tau_true,
            sample_ate: effect_sum / n_cells as f64,
            intercept,
            u_visible,
            u_invisible,
            propensity,
            y0: y0s,
            y1: y1s,
            clip_rate: clipped as f64 / n_cells as f64,
        },
        unit_of_cell,
    })
}

fn country_code(c: usize) -> String {
    let a = b'A' + (c % 26) as u8;
    String::from_utf8(vec![a, a]).expect("ascii")
}

pub fn tile_id(unit_id: &str, period: usize) -> String {
    format!("{unit_id}_p{period}")
}

/// Per-band response of a blob; sums to zero so blobs leave the band-mean
/// brightness unchanged.
const BLOB_SIGNATURE: [f32; 5] = [0.45, 0.25, 0.1, -0.6, -0.2];

impl World {
    /// Renders the pre-period composite for panel cell `cell`: several
    /// cloud-masked scenes of the same texture, median-composited.
    pub fn render_tile(&self, cell: usize) -> Result<ImageTile> {
        let cfg = &self.config;
        let i = self.unit_of_cell[cell];
        let period = self.panel.cells[cell].period;
        let u = self.truth.u_visible[i];
        let side = cfg.image_side;
        let plane = side * side;
        let bands: Vec<Band> = Band::ALL[..cfg.bands].to_vec();
        let scale = side as f64 / 64.0;

        // Scene-invariant ground texture for this unit and period.
        let mut rng = stream(cfg.seed, STREAM_TILE, (period * cfg.n_units + i) as u64);
        let mut ground = vec![0.0f32; bands.len() * plane];
        let lambda = cfg.blob_rate * (cfg.texture_gain * u).exp();
        let count: f64 = Poisson::new(lambda.max(1e-3)).expect("positive rate").sample(&mut rng);
        for _ in 0..count as usize {
            let cx = rng.gen_range(0.0..side as f64);
            let cy = rng.gen_range(0.0..side as f64);
            let radius = (rng.gen_range(1.5..3.0) * scale).max(1.0);
            let amp = rng.gen_range(0.7..1.3) as f32;
            let reach = (3.0 * radius).ceil() as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (px, py) = (cx as isize + dx, cy as isize + dy);
                    if px < 0 || py < 0 || px >= side as isize || py >= side as isize {
                        continue;
                    }
                    let d2 = (px as f64 + 0.5 - cx).powi(2) + (py as f64 + 0.5 - cy).powi(2);
                    let w = amp * (-d2 / (2.0 * radius * radius)).exp() as f32;
                    let at = py as usize * side + px as usize;
                    for b in 0..bands.len() {
                        ground[b * plane + at] += w * BLOB_SIGNATURE[b];
                    }
                }
            }
        }
        let freq = (0.08 + 0.05 * u.tanh()) / scale;
        let theta = rng.gen_range(0.0..std::f64::consts::PI);
        let phase = rng.gen_range(0.0..std::f64::consts::TAU);
        let (ct, st) = (theta.cos(), theta.sin());
        let offsets: Vec<f32> = (0..bands.len())
            .map(|_| 0.15 * rng.sample::<f32, _>(StandardNormal))
            .collect();
        for y in 0..side {
            for x in 0..side {
                let s = (std::f64::consts::TAU * freq * (x as f64 * ct + y as f64 * st) + phase).sin() as f32;
                for (b, &off) in offsets.iter().enumerate() {
                    ground[b * plane + y * side + x] += 0.25 * s + off + 0.2 * b as f32;
                }
            }
        }

        let pixel_noise = Normal::new(0.0f32, 0.1).expect("valid normal");
        let mut scenes = Vec::with_capacity(cfg.scenes_per_composite);
        for _ in 0..cfg.scenes_per_composite {
            let mut px = ground.clone();
            px.iter_mut().for_each(|v| *v += pixel_noise.sample(&mut rng));
            let mut mask = vec![true; plane];
            if rng.gen_bool(cfg.cloud_probability) {
                let w = rng.gen_range(side / 8..=side / 2).max(1);
                let h = rng.gen_range(side / 8..=side / 2).max(1);
                let x0 = rng.gen_range(0..=side - w);
                let y0 = rng.gen_range(0..=side - h);
                for y in y0..y0 + h {
                    for x in x0..x0 + w {
                        mask[y * side + x] = false;
                    }
                }
            }
            // Scan-line gaps, one pixel wide, on a diagonal.
            if rng.gen_bool(0.3) {
                let k = rng.gen_range(0..8);
                for y in 0..side {
                    for x in 0..side {
                        if (x + y + k) % 11 == 0 {
                            mask[y * side + x] = false;
                        }
                    }
                }
            }
            scenes.push(ImageTile::new("scene", bands.clone(), side, px, mask)?);
        }
        median_composite(self.panel.cells[cell].tile_ref.clone(), &scenes)
    }

    /// Writes `neighborhoods.csv`, `adm2.geojson` and one GCTL file per
    /// panel cell under `tiles/`. These depend only on the seed, not on the
    /// slice.
    pub fn write_shared(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        let tiles_dir = dir.join("tiles");
        std::fs::create_dir_all(&tiles_dir).map_err(|e| Error::io(&tiles_dir, e))?;
        let mut out = Vec::new();
        let units = dir.join("neighborhoods.csv");
        write_neighborhoods(&units, &self.units)?;
        out.push(units);
        let adm2 = dir.join("adm2.geojson");
        let text = serde_json::to_string_pretty(&adm2_to_geojson(&self.areas))?;
        std::fs::write(&adm2, text).map_err(|e| Error::io(&adm2, e))?;
        out.push(adm2);
        for cell in 0..self.panel.cells.len() {
            let tile = self.render_tile(cell)?;
            let path = tiles_dir.join(format!("{}.gctl", tile.tile_id));
            tile.save(&path)?;
            out.push(path);
        }
        Ok(out)
    }

    /// Writes the slice's panel CSV, outcomes CSV and truth JSON.
    pub fn write_slice(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = format!("{}_{}", self.panel.funder.slug(), self.panel.sector_code);
        let panel = dir.join(format!("panel_{stem}.csv"));
        self.panel.write_csv(&panel)?;
        let outcomes = dir.join(format!("outcomes_{stem}.csv"));
        write_outcomes(&outcomes, &self.outcomes())?;
        let truth = dir.join(format!("truth_{stem}.json"));
        std::fs::write(&truth, serde_json::to_string(&self.truth)?).map_err(|e| Error::io(&truth, e))?;
        Ok(vec![panel, outcomes, truth])
    }

    /// Outcomes keyed as geo-panel reads them: measurement period `t + 1`.
    pub fn outcomes(&self) -> BTreeMap<(String, usize), f64> {
        self.panel
            .cells
            .iter()
            .filter_map(|c| c.outcome_lead.map(|y| ((c.unit_id.clone(), c.period + 1), y)))
            .collect()
    }
}

/// Mean absolute bias per specification over repeated worlds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasLadder {
    pub tau_true: f64,
    pub seeds: usize,
    pub rows: Vec<BiasRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRow {
    pub specification: Specification,
    pub mean_estimate: f64,
    pub mean_bias: f64,
    pub mean_abs_bias: f64,
    pub sd_estimate: f64,
    pub coverage: Option<f64>,
    pub runs: usize,
}

/// One run's estimate and interval for a specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunEstimate {
    pub ate: f64,
    pub ci: Option<(f64, f64)>,
}

/// Summarises per-seed estimates against `tau_true`.
pub fn bias_ladder(tau_true: f64, runs: &[BTreeMap<Specification, RunEstimate>]) -> BiasLadder {
    let mut rows = Vec::new();
    for spec in Specification::ALL {
        let est: Vec<&RunEstimate> = runs.iter().filter_map(|r| r.get(&spec)).collect();
        if est.is_empty() {
            continue;
        }
        let k = est.len() as f64;
        let mean = est.iter().map(|e| e.ate).sum::<f64>() / k;
        let sd = if est.len() > 1 {
            (est.iter().map(|e| (e.ate - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
        } else {
            0.0
        };
        let with_ci: Vec<(f64, f64)> = est.iter().filter_map(|e| e.ci).collect();
        let coverage = (!with_ci.is_empty()).then(|| {
            with_ci
                .iter()
                .filter(|(lo, hi)| *lo <= tau_true && tau_true <= *hi)
                .count() as f64
                / with_ci.len() as f64
        });
        rows.push(BiasRow {
            specification: spec,
            mean_estimate: mean,
            mean_bias: mean - tau_true,
            mean_abs_bias: est.iter().map(|e| (e.ate - tau_true).abs()).sum::<f64>() / k,
            sd_estimate: sd,
            coverage,
            runs: est.len(),
        });
    }
    BiasLadder {
        tau_true,
        seeds: runs.len(),
        rows,
    }
}

impl BiasLadder {
    pub fn row(&self, spec: Specification) -> Option<&BiasRow> {
        self.rows.iter().find(|r| r.specification == spec)
    }
}
