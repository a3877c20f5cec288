use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Batch, Mode, ModelConfig, PropensityModel};
use crate::covariates::Standardizer;
use crate::error::{Error, Result};
use crate::tensor::{read_checkpoint, sigmoid, write_checkpoint, Sgd, SgdConfig, Tape};
use crate::tile::ImageTile;

/// Per-band affine normalisation fitted on valid pixels of training tiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageNormalizer {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

impl ImageNormalizer {
    pub fn fit<'a, I>(tiles: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a ImageTile>,
    {
        let mut sums: Vec<(f64, f64, f64)> = Vec::new();
        for t in tiles {
            if sums.is_empty() {
                sums = vec![(0.0, 0.0, 0.0); t.bands.len()];
            }
            if t.bands.len() != sums.len() {
                return Err(Error::shape("image normalizer", &[sums.len()], &[t.bands.len()]));
            }
            for (b, acc) in sums.iter_mut().enumerate() {
                for (&v, &m) in t.band(b).iter().zip(t.mask()) {
                    if m {
                        acc.0 += 1.0;
                        acc.1 += v as f64;
                        acc.2 += (v as f64) * (v as f64);
                    }
                }
            }
        }
        if sums.is_empty() || sums.iter().any(|s| s.0 == 0.0) {
            return Err(Error::InsufficientData("no valid pixels to normalise".into()));
        }
        let means: Vec<f64> = sums.iter().map(|s| s.1 / s.0).collect();
        let sds = sums
            .iter()
            .zip(&means)
            .map(|(s, m)| (s.2 / s.0 - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(Self { means, sds })
    }

    /// Normalised pixels, band-major; masked positions become 0.
    pub fn apply(&self, tile: &ImageTile) -> Vec<f32> {
        let plane = tile.side * tile.side;
        let mut out = vec![0.0f32; tile.pixels().len()];
        for b in 0..tile.bands.len() {
            for (i, (&v, &m)) in tile.band(b).iter().zip(tile.mask()).enumerate() {
                if m {
                    out[b * plane + i] = ((v as f64 - self.means[b]) / self.sds[b]) as f32;
                }
            }
        }
        out
    }
}

/// Rearranges a band-major `[bands, side, side]` image into row-major
/// patches `[num_patches, bands·patch·patch]`.
pub fn patchify(image: &[f32], bands: usize, side: usize, patch: usize) -> Result<Vec<f32>> {
    if image.len() != bands * side * side || patch == 0 || !side.is_multiple_of(patch) {
        return Err(Error::shape("patchify", &[bands, side, side, patch], &[image.len()]));
    }
    let per_row = side / patch;
    let mut out = Vec::with_capacity(image.len());
    for pr in 0..per_row {
        for pc in 0..per_row {
            for b in 0..bands {
                for y in 0..patch {
                    let row = (b * side + pr * patch + y) * side + pc * patch;
                    out.extend_from_slice(&image[row..row + patch]);
                }
            }
        }
    }
    Ok(out)
}

/// ADM2-grouped cross-fitting folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub fold_of_group: BTreeMap<String, usize>,
}

impl FoldAssignment {
    /// Shuffles the distinct groups with `seed` and deals them round-robin
    /// into `k` folds.
    pub fn grouped<S: AsRef<str>>(groups: &[S], k: usize, seed: u64) -> Result<Self> {
        let mut distinct: Vec<String> = groups
            .iter()
            .map(|g| g.as_ref().to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        if k < 2 || k > distinct.len() {
            return Err(Error::Config(format!(
                "fold count {k} must be in 2..={} (distinct groups)",
                distinct.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        distinct.shuffle(&mut rng);
        let fold_of_group = distinct.into_iter().enumerate().map(|(i, g)| (g, i % k)).collect();
        Ok(Self { k, fold_of_group })
    }

    pub fn fold_of(&self, group: &str) -> Option<usize> {
        self.fold_of_group.get(group).copied()
    }

    pub fn groups_in(&self, fold: usize) -> BTreeSet<&str> {
        self.fold_of_group
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(g, _)| g.as_str())
            .collect()
    }
}

/// Class-balanced minibatch sampler: each batch takes half its rows from
/// treated units and half from controls, cycling through reshuffled
/// per-class orders.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    classes: [Vec<usize>; 2],
    cursor: [usize; 2],
    batch_size: usize,
    batches_per_epoch: usize,
    rng: ChaCha8Rng,
}

impl BalancedSampler {
    pub fn new(indices: &[usize], labels: &[u8], batch_size: usize, seed: u64) -> Result<Self> {
        let mut classes = [Vec::new(), Vec::new()];
        for &i in indices {
            classes[usize::from(labels[i] == 1)].push(i);
        }
        if classes[0].is_empty() || classes[1].is_empty() {
            return Err(Error::InsufficientData("balanced sampling needs both classes".into()));
        }
        let batch_size = batch_size.max(2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for c in classes.iter_mut() {
            c.shuffle(&mut rng);
        }
        Ok(Self {
            classes,
            cursor: [0, 0],
            batch_size,
            batches_per_epoch: indices.len().div_ceil(batch_size),
            rng,
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.batches_per_epoch
    }

    fn draw(&mut self, class: usize) -> usize {
        if self.cursor[class] == self.classes[class].len() {
            self.classes[class].shuffle(&mut self.rng);
            self.cursor[class] = 0;
        }
        let v = self.classes[class][self.cursor[class]];
        self.cursor[class] += 1;
        v
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let treated = self.batch_size / 2;
        let mut out = Vec::with_capacity(self.batch_size);
        for _ in 0..treated {
            out.push(self.draw(1));
        }
        for _ in treated..self.batch_size {
            out.push(self.draw(0));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub momentum: f32,
    pub weight_decay: f32,
    pub clip_lo: f64,
    pub clip_hi: f64,
    pub seed: u64,
    pub folds: usize,
    /// Shift logits from the balanced training prior back to the fold's
    /// treated share before reporting probabilities.
    pub prior_correction: bool,
    /// Number of folds trained concurrently.
    pub workers: usize,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 64,
            learning_rate: 1e-3,
            momentum: 0.9,
            weight_decay: 0.0,
            clip_lo: 0.01,
            clip_hi: 0.99,
            seed: 0,
            folds: 10,
            prior_correction: true,
            workers: 1,
            eval_batch: 128,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.clip_lo && self.clip_lo < self.clip_hi && self.clip_hi < 1.0) {
            return Err(Error::Config(format!(
                "clip bounds [{}, {}] must satisfy 0 < lo < hi < 1",
                self.clip_lo, self.clip_hi
            )));
        }
        if self.epochs == 0 || self.batch_size < 2 || self.eval_batch == 0 {
            return Err(Error::Config(
                "epochs, batch_size and eval_batch must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("learning_rate must be > 0 and momentum in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Raw inputs for propensity fitting, one entry per panel cell.
#[derive(Debug, Clone, Default)]
pub struct PropensityData {
    pub labels: Vec<u8>,
    pub groups: Vec<String>,
    pub tiles: Option<Vec<ImageTile>>,
    pub tabular_names: Vec<String>,
    /// Unstandardised rows; empty when the model has no tabular token.
    pub tabular: Vec<Vec<f64>>,
}

impl PropensityData {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.groups.len() != n
            || self.tiles.as_ref().is_some_and(|t| t.len() != n)
            || (!self.tabular.is_empty() && self.tabular.len() != n)
        {
            return Err(Error::Input("propensity inputs have mismatched lengths".into()));
        }
        if self.tiles.is_none() && self.tabular.is_empty() {
            return Err(Error::Input(
                "propensity inputs have neither images nor covariates".into(),
            ));
        }
        Ok(())
    }
}

/// One fold's fitted model with the preprocessing it was trained under.
#[derive(Debug, Clone)]
pub struct FoldModel {
    pub fold: usize,
    pub model: PropensityModel,
    pub standardizer: Option<Standardizer>,
    pub normalizer: Option<ImageNormalizer>,
    pub train_groups: BTreeSet<String>,
    pub logit_offset: f64,
    pub epoch_losses: Vec<f64>,
    pub held_out: Vec<usize>,
}

/// Out-of-fold propensities and the fold models that produced them.
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub p_hat: Vec<f64>,
    pub p_raw: Vec<f64>,
    pub fold_of_cell: Vec<usize>,
    pub folds: Vec<FoldModel>,
    pub clip: (f64, f64),
    pub n_clipped: usize,
}

/// Preprocessed model inputs for a set of cells under one fold's statistics.
struct Prepared {
    patches: Option<Vec<f32>>,
    patch_len: usize,
    tabular: Vec<f32>,
    width: usize,
}

impl Prepared {
    fn batch(&self, rows: &[usize]) -> Batch {
        Batch {
            size: rows.len(),
            patches: self.patches.as_ref().map(|p| {
                let mut out = Vec::with_capacity(rows.len() * self.patch_len);
                for &r in rows {
                    out.extend_from_slice(&p[r * self.patch_len..(r + 1) * self.patch_len]);
                }
                out
            }),
            tabular: (self.width > 0).then(|| {
                let mut out = Vec::with_capacity(rows.len() * self.width);
                for &r in rows {
                    out.extend_from_slice(&self.tabular[r * self.width..(r + 1) * self.width]);
                }
                out
            }),
        }
    }
}

fn prepare(
    data: &PropensityData,
    cfg: &ModelConfig,
    normalizer: Option<&ImageNormalizer>,
    standardizer: Option<&Standardizer>,
) -> Result<Prepared> {
    let n = data.len();
    let patches = match (&data.tiles, normalizer) {
        (Some(tiles), Some(norm)) => {
            let mut all = Vec::with_capacity(n * cfg.num_patches() * cfg.patch_dim());
            for t in tiles {
                if t.side != cfg.image_side || t.bands.len() != cfg.image_bands {
                    return Err(Error::shape(
                        "fuse_inputs",
                        &[cfg.image_bands, cfg.image_side],
                        &[t.bands.len(), t.side],
                    ));
                }
                all.extend(patchify(
                    &norm.apply(t),
                    cfg.image_bands,
                    cfg.image_side,
                    cfg.patch_size,
                )?);
            }
            Some(all)
        }
        _ => None,
    };
    let (tabular, width) = match standardizer {
        Some(s) => {
            let mut out = Vec::with_capacity(n * s.width());
            for row in &data.tabular {
                out.extend(s.transform_row(row).into_iter().map(|v| v as f32));
            }
            (out, s.width())
        }
        None => (Vec::new(), 0),
    };
    Ok(Prepared {
        patches,
        patch_len: cfg.num_patches() * cfg.patch_dim(),
        tabular,
        width,
    })
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn train_fold(
    data: &PropensityData,
    base: &ModelConfig,
    hyper: &TrainConfig,
    folds: &FoldAssignment,
    fold: usize,
) -> Result<FoldModel> {
    let n = data.len();
    let cell_fold: Vec<usize> = data
        .groups
        .iter()
        .map(|g| folds.fold_of(g).expect("every group assigned"))
        .collect();
    let train: Vec<usize> = (0..n).filter(|&i| cell_fold[i] != fold).collect();
    let held_out: Vec<usize> = (0..n).filter(|&i| cell_fold[i] == fold).collect();
    let n_treated = train.iter().filter(|&&i| data.labels[i] == 1).count();
    if n_treated == 0 || n_treated == train.len() {
        return Err(Error::FoldDegenerate {
            fold,
            reason: format!(
                "training split has {n_treated} treated of {} cells; both classes are required",
                train.len()
            ),
        });
    }
    let normalizer = match &data.tiles {
        Some(tiles) if base.use_images => Some(ImageNormalizer::fit(train.iter().map(|&i| &tiles[i]))?),
        _ => None,
    };
    let standardizer = if data.tabular.is_empty() {
        None
    } else {
        let rows: Vec<Vec<f64>> = train.iter().map(|&i| data.tabular[i].clone()).collect();
        Some(Standardizer::fit(&data.tabular_names, &rows)?)
    };
    let mut cfg = base.clone();
    cfg.tabular_width = standardizer.as_ref().map_or(0, Standardizer::width);
    if !cfg.use_images && cfg.tabular_width == 0 {
        return Err(Error::FoldDegenerate {
            fold,
            reason: "no covariate varies within the training split".into(),
        });
    }
    let prepared = prepare(data, &cfg, normalizer.as_ref(), standardizer.as_ref())?;
    let seed = hyper.seed.wrapping_add(fold as u64);
    let mut model = PropensityModel::new(cfg, seed)?;
    let mut sgd = Sgd::new(
        SgdConfig {
            learning_rate: hyper.learning_rate,
            momentum: hyper.momentum,
            weight_decay: hyper.weight_decay,
        },
        &model.params,
    );
    let mut sampler = BalancedSampler::new(&train, &data.labels, hyper.batch_size, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_d50f);
    let mut epoch_losses = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        let mut total = 0.0;
        for _ in 0..sampler.batches_per_epoch() {
            let rows = sampler.next_batch();
            let targets: Vec<f32> = rows.iter().map(|&r| f32::from(data.labels[r])).collect();
            let batch = prepared.batch(&rows);
            let mut tape = Tape::new();
            let bound = model.params.bind(&mut tape);
            let tab = model.tabular_input(&mut tape, &batch)?;
            let z = model.logits(&mut tape, &bound, &batch, tab, Mode::Train(&mut rng))?;
            let loss = tape.bce_with_logits(z, &targets)?;
            let lv = tape.value(loss)[0] as f64;
            if !lv.is_finite() {
                return Err(Error::Divergence {
                    step: sgd.steps(),
                    fold,
                });
            }
            total += lv;
            tape.backward(loss)?;
            model.params.collect_grads(&tape, &bound);
            sgd.step(&mut model.params)?;
        }
        epoch_losses.push(total / sampler.batches_per_epoch() as f64);
    }
    let logit_offset = if hyper.prior_correction {
        logit(n_treated as f64 / train.len() as f64)
    } else {
        0.0
    };
    let train_groups = train.iter().map(|&i| data.groups[i].clone()).collect();
    Ok(FoldModel {
        fold,
        model,
        standardizer,
        normalizer,
        train_groups,
        logit_offset,
        epoch_losses,
        held_out,
    })
}

#[derive(Serialize, Deserialize)]
struct FoldMeta {
    fold: usize,
    config: ModelConfig,
    standardizer: Option<Standardizer>,
    normalizer: Option<ImageNormalizer>,
    train_groups: BTreeSet<String>,
    logit_offset: f64,
    epoch_losses: Vec<f64>,
    held_out: Vec<usize>,
}

impl FoldModel {
    /// Writes `{stem}.gctn` (parameters) and `{stem}.json` (preprocessing
    /// and bookkeeping) into `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<PathBuf>> {
        let ckpt = dir.join(format!("{stem}.gctn"));
        let meta = dir.join(format!("{stem}.json"));
        let f = File::create(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        write_checkpoint(BufWriter::new(f), &self.model.params).map_err(|e| Error::io(&ckpt, e))?;
        let m = FoldMeta {
            fold: self.fold,
            config: self.model.config.clone(),
            standardizer: self.standardizer.clone(),
            normalizer: self.normalizer.clone(),
            train_groups: self.train_groups.clone(),
            logit_offset: self.logit_offset,
            epoch_losses: self.epoch_losses.clone(),
            held_out: self.held_out.clone(),
        };
        let text = serde_json::to_string_pretty(&m)?;
        std::fs::write(&meta, text).map_err(|e| Error::io(&meta, e))?;
        Ok(vec![ckpt, meta])
    }

    pub fn load(dir: &Path, stem: &str) -> Result<Self> {
        let ckpt = dir.join(format!("{stem}.gctn"));
        let meta = dir.join(format!("{stem}.json"));
        let text = std::fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        let m: FoldMeta = serde_json::from_str(&text)?;
        let f = File::open(&ckpt).map_err(|e| Error::io(&ckpt, e))?;
        let records = read_checkpoint(BufReader::new(f))?;
        let mut model = PropensityModel::new(m.config, 0)?;
        model.params.load_values(records)?;
        Ok(Self {
            fold: m.fold,
            model,
            standardizer: m.standardizer,
            normalizer: m.normalizer,
            train_groups: m.train_groups,
            logit_offset: m.logit_offset,
            epoch_losses: m.epoch_losses,
            held_out: m.held_out,
        })
    }

    /// Eval-mode probabilities for the given cells.
    pub fn predict(&self, data: &PropensityData, rows: &[usize], eval_batch: usize) -> Result<Vec<f64>> {
        let sub = subset(data, rows);
        let prepared = prepare(
            &sub,
            &self.model.config,
            self.normalizer.as_ref(),
            self.standardizer.as_ref(),
        )?;
        let idx: Vec<usize> = (0..rows.len()).collect();
        let mut out = Vec::with_capacity(rows.len());
        for chunk in idx.chunks(eval_batch.max(1)) {
            let z = self.model.predict_logits(&prepared.batch(chunk))?;
            out.extend(z.into_iter().map(|z| sigmoid(z + self.logit_offset)));
        }
        Ok(out)
    }

    /// Mean over `rows` of ∂p/∂x for each standardised covariate, in the
    /// order of `data.tabular_names` (zero for columns this fold dropped).
    pub fn salience(&self, data: &PropensityData, rows: &[usize], eval_batch: usize) -> Result<Vec<f64>> {
        let width = self.model.config.tabular_width;
        let std = self
            .standardizer
            .as_ref()
            .filter(|_| width > 0)
            .ok_or_else(|| Error::Unsupported("salience needs a model with a tabular token".into()))?;
        let sub = subset(data, rows);
        let prepared = prepare(&sub, &self.model.config, self.normalizer.as_ref(), Some(std))?;
        let idx: Vec<usize> = (0..rows.len()).collect();
        let mut sums = vec![0.0f64; width];
        for chunk in idx.chunks(eval_batch.max(1)) {
            let batch = prepared.batch(chunk);
            let g = input_gradients(&self.model, &batch, self.logit_offset)?;
            for r in 0..chunk.len() {
                for j in 0..width {
                    sums[j] += g[r * width + j] as f64;
                }
            }
        }
        let mut out = vec![0.0; data.tabular_names.len()];
        for (k, &j) in std.kept.iter().enumerate() {
            out[j] = sums[k] / rows.len().max(1) as f64;
        }
        Ok(out)
    }
}

/// ∂σ(z_i + offset)/∂x_ij for every row of `batch`, eval mode.
pub fn input_gradients(model: &PropensityModel, batch: &Batch, offset: f64) -> Result<Vec<f32>> {
    let width = model.config.tabular_width;
    if width == 0 {
        return Err(Error::Unsupported("salience needs a model with a tabular token".into()));
    }
    let data = batch
        .tabular
        .clone()
        .ok_or_else(|| Error::Input("salience needs tabular inputs".into()))?;
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let x = tape.variable(vec![batch.size, width], data)?;
    let z = model.logits(&mut tape, &bound, batch, Some(x), Mode::Eval)?;
    let shift = tape.constant(vec![batch.size], vec![offset as f32; batch.size])?;
    let z = tape.add(z, shift)?;
    let p = tape.sigmoid(z);
    let total = tape.sum(p);
    tape.backward(total)?;
    Ok(tape
        .grad(x)
        .map(<[f32]>::to_vec)
        .unwrap_or_else(|| vec![0.0; batch.size * width]))
}

fn subset(data: &PropensityData, rows: &[usize]) -> PropensityData {
    PropensityData {
        labels: rows.iter().map(|&r| data.labels[r]).collect(),
        groups: rows.iter().map(|&r| data.groups[r].clone()).collect(),
        tiles: data
            .tiles
            .as_ref()
            .map(|t| rows.iter().map(|&r| t[r].clone()).collect()),
        tabular_names: data.tabular_names.clone(),
        tabular: if data.tabular.is_empty() {
            Vec::new()
        } else {
            rows.iter().map(|&r| data.tabular[r].clone()).collect()
        },
    }
}

/// Cross-fitted training: one model per fold, each trained on the other
/// folds' ADM2s and scored on its own. Probabilities are clipped to
/// `[clip_lo, clip_hi]`.
pub fn train_propensity(
    base: &ModelConfig,
    data: &PropensityData,
    folds: &FoldAssignment,
    hyper: &TrainConfig,
) -> Result<CrossFit> {
    hyper.validate()?;
    data.validate()?;
    let mut base = base.clone();
    base.use_images = data.tiles.is_some();
    if let Some(g) = data.groups.iter().find(|g| folds.fold_of(g).is_none()) {
        return Err(Error::Input(format!("group `{g}` has no fold")));
    }
    let run = |fold: usize| -> Result<FoldModel> {
        log::info!("training fold {}/{}", fold + 1, folds.k);
        train_fold(data, &base, hyper, folds, fold)
    };
    let fitted: Vec<FoldModel> = if hyper.workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(hyper.workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..folds.k).into_par_iter().map(run).collect::<Result<Vec<_>>>())?
    } else {
        (0..folds.k).map(run).collect::<Result<Vec<_>>>()?
    };
    let n = data.len();
    let mut p_raw = vec![f64::NAN; n];
    let mut fold_of_cell = vec![usize::MAX; n];
    for fm in &fitted {
        if fm.held_out.is_empty() {
            continue;
        }
        let p = fm.predict(data, &fm.held_out, hyper.eval_batch)?;
        for (&i, v) in fm.held_out.iter().zip(p) {
            p_raw[i] = v;
            fold_of_cell[i] = fm.fold;
        }
    }
    let mut n_clipped = 0;
    let p_hat = p_raw
        .iter()
        .map(|&p| {
            let c = p.clamp(hyper.clip_lo, hyper.clip_hi);
            if c != p {
                n_clipped += 1;
            }
            c
        })
        .collect();
    Ok(CrossFit {
        p_hat,
        p_raw,
        fold_of_cell,
        folds: fitted,
        clip: (hyper.clip_lo, hyper.clip_hi),
        n_clipped,
    })
}

impl CrossFit {
    /// Out-of-fold salience: each fold model is differentiated on its own
    /// held-out cells and the fold means are pooled by cell count.
    pub fn salience(&self, data: &PropensityData, eval_batch: usize) -> Result<Vec<f64>> {
        let mut total = vec![0.0; data.tabular_names.len()];
        let mut count = 0usize;
        for fm in &self.folds {
            if fm.held_out.is_empty() {
                continue;
            }
            let s = fm.salience(data, &fm.held_out, eval_batch)?;
            for (t, v) in total.iter_mut().zip(s) {
                *t += v * fm.held_out.len() as f64;
            }
            count += fm.held_out.len();
        }
        Ok(total.into_iter().map(|t| t / count.max(1) as f64).collect())
    }
}
