use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};

const LN_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
    Relu,
}

/// Which positions feed the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Cls,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_ratio: usize,
    pub dropout_rate: f32,
    pub drop_path_rate: f32,
    /// Width of the tabular input; zero disables the tabular token.
    pub tabular_width: usize,
    /// When false the sequence holds only the summary and tabular tokens.
    pub use_images: bool,
    pub image_bands: usize,
    pub image_side: usize,
    pub activation: Activation,
    pub pooling: Pooling,
    pub final_norm: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 64,
            num_layers: 8,
            num_heads: 4,
            mlp_ratio: 4,
            dropout_rate: 0.1,
            drop_path_rate: 0.1,
            tabular_width: 0,
            use_images: true,
            image_bands: 5,
            image_side: 64,
            activation: Activation::Gelu,
            pooling: Pooling::Cls,
            final_norm: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim < 2 {
            return bad(format!("embed_dim {} must be at least 2", self.embed_dim));
        }
        if self.num_heads == 0 || !self.embed_dim.is_multiple_of(self.num_heads) {
            return bad(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.use_images {
            if self.patch_size == 0 || !self.image_side.is_multiple_of(self.patch_size) {
                return bad(format!(
                    "image_side {} not divisible by patch_size {}",
                    self.image_side, self.patch_size
                ));
            }
            if self.image_bands == 0 {
                return bad("image_bands must be positive".into());
            }
        } else if self.tabular_width == 0 {
            return bad("model needs images or tabular inputs".into());
        }
        for (name, r) in [
            ("dropout_rate", self.dropout_rate),
            ("drop_path_rate", self.drop_path_rate),
        ] {
            if !(0.0..1.0).contains(&r) {
                return bad(format!("{name} {r} outside [0, 1)"));
            }
        }
        if self.mlp_ratio == 0 {
            return bad("mlp_ratio must be positive".into());
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        if self.use_images {
            (self.image_side / self.patch_size).pow(2)
        } else {
            0
        }
    }

    pub fn patch_dim(&self) -> usize {
        self.image_bands * self.patch_size * self.patch_size
    }

    /// Patches, plus the summary token, plus the tabular token when present.
    pub fn sequence_len(&self) -> usize {
        self.num_patches() + 1 + usize::from(self.tabular_width > 0)
    }
}

/// Forward-pass mode. Training draws dropout and drop-path masks from `rng`.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut ChaCha8Rng),
}

/// Model inputs for a minibatch, already normalised.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub size: usize,
    /// `[size, num_patches, patch_dim]`.
    pub patches: Option<Vec<f32>>,
    /// `[size, tabular_width]`.
    pub tabular: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
struct Linear {
    weight: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Block {
    norm1: Norm,
    qkv: Linear,
    proj: Linear,
    norm2: Norm,
    fc1: Linear,
    fc2: Linear,
}

/// The fused image/tabular transformer classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    patch: Option<Linear>,
    tabular: Option<Linear>,
    cls: ParamId,
    pos: ParamId,
    blocks: Vec<Block>,
    norm: Option<Norm>,
    head: Linear,
}

fn xavier(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Vec<f32> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..fan_in * fan_out).map(|_| rng.gen_range(-a..a) as f32).collect()
}

fn linear(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Linear {
    let w = Tensor::new(vec![fan_in, fan_out], xavier(rng, fan_in, fan_out)).expect("shape");
    Linear {
        weight: store.add(format!("{name}.weight"), w),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![fan_out])),
    }
}

fn norm(store: &mut ParamStore, name: &str, width: usize) -> Norm {
    Norm {
        gain: store.add(
            format!("{name}.gain"),
            Tensor::new(vec![width], vec![1.0; width]).expect("shape"),
        ),
        bias: store.add(format!("{name}.bias"), Tensor::zeros(vec![width])),
    }
}

impl PropensityModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let e = config.embed_dim;
        let small = Normal::new(0.0f32, 0.02).expect("valid normal");
        let patch = config
            .use_images
            .then(|| linear(&mut store, &mut rng, "patch", config.patch_dim(), e));
        let tabular =
            (config.tabular_width > 0).then(|| linear(&mut store, &mut rng, "tabular", config.tabular_width, e));
        let cls_vals: Vec<f32> = (0..e).map(|_| small.sample(&mut rng)).collect();
        let cls = store.add("cls", Tensor::new(vec![1, e], cls_vals).expect("shape"));
        let s = config.sequence_len();
        let pos_vals: Vec<f32> = (0..s * e).map(|_| small.sample(&mut rng)).collect();
        let pos = store.add("pos", Tensor::new(vec![s, e], pos_vals).expect("shape"));
        let hidden = e * config.mlp_ratio;
        let blocks = (0..config.num_layers)
            .map(|i| Block {
                norm1: norm(&mut store, &format!("layers.{i}.norm1"), e),
                qkv: linear(&mut store, &mut rng, &format!("layers.{i}.qkv"), e, 3 * e),
                proj: linear(&mut store, &mut rng, &format!("layers.{i}.proj"), e, e),
                norm2: norm(&mut store, &format!("layers.{i}.norm2"), e),
                fc1: linear(&mut store, &mut rng, &format!("layers.{i}.fc1"), e, hidden),
                fc2: linear(&mut store, &mut rng, &format!("layers.{i}.fc2"), hidden, e),
            })
            .collect();
        let norm = config.final_norm.then(|| norm(&mut store, "norm", e));
        let head = Linear {
            weight: store.add("head.weight", Tensor::zeros(vec![e, 1])),
            bias: store.add("head.bias", Tensor::zeros(vec![1])),
        };
        Ok(Self {
            config,
            params: store,
            patch,
            tabular,
            cls,
            pos,
            blocks,
            norm,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn apply_linear(&self, tape: &mut Tape, bound: &BoundParams, lin: &Linear, x: Var) -> Result<Var> {
        let y = tape.matmul(x, bound.var(lin.weight))?;
        tape.add_broadcast(y, bound.var(lin.bias))
    }

    fn apply_norm(&self, tape: &mut Tape, bound: &BoundParams, n: &Norm, x: Var) -> Result<Var> {
        tape.layer_norm(x, bound.var(n.gain), bound.var(n.bias), LN_EPS)
    }

    /// Builds the token sequence `[CLS, patches…, tabular]` plus positional
    /// embeddings, shape `[batch, sequence_len, embed_dim]`. `tabular` must be
    /// a `[batch, tabular_width]` node when the model has a tabular token.
    pub fn embed(&self, tape: &mut Tape, bound: &BoundParams, batch: &Batch, tabular: Option<Var>) -> Result<Var> {
        let cfg = &self.config;
        let b = batch.size;
        let e = cfg.embed_dim;
        let cls = tape.expand_leading(bound.var(self.cls), b);
        let mut parts = vec![cls];
        if let Some(lin) = &self.patch {
            let data = batch
                .patches
                .as_ref()
                .ok_or_else(|| Error::Input("model expects image patches".into()))?;
            let want = b * cfg.num_patches() * cfg.patch_dim();
            if data.len() != want {
                return Err(Error::shape(
                    "fuse_inputs",
                    &[b, cfg.num_patches(), cfg.patch_dim()],
                    &[data.len()],
                ));
            }
            let x = tape.constant(vec![b, cfg.num_patches(), cfg.patch_dim()], data.clone())?;
            parts.push(self.apply_linear(tape, bound, lin, x)?);
        }
        if let Some(lin) = &self.tabular {
            let t = tabular.ok_or_else(|| Error::Input("model expects tabular inputs".into()))?;
            if tape.shape(t) != [b, cfg.tabular_width] {
                return Err(Error::shape("fuse_inputs", &[b, cfg.tabular_width], tape.shape(t)));
            }
            let y = self.apply_linear(tape, bound, lin, t)?;
            parts.push(tape.reshape(y, vec![b, 1, e])?);
        }
        let seq = tape.concat(&parts, 1)?;
        tape.add_broadcast(seq, bound.var(self.pos))
    }

    fn dropout(&self, tape: &mut Tape, x: Var, rate: f32, mode: &mut Mode) -> Result<Var> {
        let Mode::Train(rng) = mode else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f32> = (0..tape.value(x).len())
            .map(|_| if rng.gen::<f32>() < rate { 0.0 } else { keep })
            .collect();
        tape.mul_const(x, mask)
    }

    /// Zeroes whole residual branches per sample.
    fn drop_path(&self, tape: &mut Tape, x: Var, mode: &mut Mode) -> Result<Var> {
        let rate = self.config.drop_path_rate;
        let Mode::Train(rng) = mode else {
            return Ok(x);
        };
        if rate == 0.0 {
            return Ok(x);
        }
        let shape = tape.shape(x).to_vec();
        let per = tape.value(x).len() / shape[0];
        let keep = 1.0 / (1.0 - rate);
        let mut mask = Vec::with_capacity(per * shape[0]);
        for _ in 0..shape[0] {
            let f = if rng.gen::<f32>() < rate { 0.0 } else { keep };
            mask.extend(std::iter::repeat_n(f, per));
        }
        tape.mul_const(x, mask)
    }

    fn attention(&self, tape: &mut Tape, bound: &BoundParams, blk: &Block, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let (b, s, e) = (shape[0], shape[1], shape[2]);
        let h = self.config.num_heads;
        let dh = e / h;
        let qkv = self.apply_linear(tape, bound, &blk.qkv, x)?;
        let qkv = tape.reshape(qkv, vec![b, s, 3, h, dh])?;
        let qkv = tape.permute(qkv, &[2, 0, 3, 1, 4])?;
        let mut heads = Vec::with_capacity(3);
        for i in 0..3 {
            let t = tape.select(qkv, 0, i)?;
            heads.push(tape.reshape(t, vec![b * h, s, dh])?);
        }
        let scores = tape.bmm(heads[0], heads[1], true)?;
        let scores = tape.scale(scores, 1.0 / (dh as f32).sqrt());
        let attn = tape.softmax(scores, 2)?;
        let ctx = tape.bmm(attn, heads[2], false)?;
        let ctx = tape.reshape(ctx, vec![b, h, s, dh])?;
        let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = tape.reshape(ctx, vec![b, s, e])?;
        self.apply_linear(tape, bound, &blk.proj, ctx)
    }

    fn block(&self, tape: &mut Tape, bound: &BoundParams, blk: &Block, x: Var, mode: &mut Mode) -> Result<Var> {
        let rate = self.config.dropout_rate;
        let h = self.apply_norm(tape, bound, &blk.norm1, x)?;
        let h = self.attention(tape, bound, blk, h)?;
        let h = self.dropout(tape, h, rate, mode)?;
        let h = self.drop_path(tape, h, mode)?;
        let x = tape.add(x, h)?;
        let h = self.apply_norm(tape, bound, &blk.norm2, x)?;
        let h = self.apply_linear(tape, bound, &blk.fc1, h)?;
        let h = match self.config.activation {
            Activation::Gelu => tape.gelu(h),
            Activation::Relu => tape.relu(h),
        };
        let h = self.apply_linear(tape, bound, &blk.fc2, h)?;
        let h = self.dropout(tape, h, rate, mode)?;
        let h = self.drop_path(tape, h, mode)?;
        tape.add(x, h)
    }

    /// Classifier logits, shape `[batch]`.
    pub fn logits(
        &self,
        tape: &mut Tape,
        bound: &BoundParams,
        batch: &Batch,
        tabular: Option<Var>,
        mut mode: Mode,
    ) -> Result<Var> {
        let b = batch.size;
        let e = self.config.embed_dim;
        let mut x = self.embed(tape, bound, batch, tabular)?;
        x = self.dropout(tape, x, self.config.dropout_rate, &mut mode)?;
        for blk in &self.blocks {
            x = self.block(tape, bound, blk, x, &mut mode)?;
        }
        if let Some(n) = &self.norm {
            x = self.apply_norm(tape, bound, n, x)?;
        }
        let pooled = match self.config.pooling {
            Pooling::Cls => tape.select(x, 1, 0)?,
            Pooling::Mean => {
                let s = self.config.sequence_len();
                let w = tape.constant(vec![b, 1, s], vec![1.0 / s as f32; b * s])?;
                let m = tape.bmm(w, x, false)?;
                tape.reshape(m, vec![b, e])?
            }
        };
        let z = self.apply_linear(tape, bound, &self.head, pooled)?;
        tape.reshape(z, vec![b])
    }

    /// Tabular input node for `batch` (constant).
    pub fn tabular_input(&self, tape: &mut Tape, batch: &Batch) -> Result<Option<Var>> {
        if self.config.tabular_width == 0 {
            return Ok(None);
        }
        let data = batch
            .tabular
            .as_ref()
            .ok_or_else(|| Error::Input("model expects tabular inputs".into()))?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite tabular covariate".into()));
        }
        tape.constant(vec![batch.size, self.config.tabular_width], data.clone())
            .map(Some)
    }

    /// Eval-mode logits as plain numbers.
    pub fn predict_logits(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let tab = self.tabular_input(&mut tape, batch)?;
        let z = self.logits(&mut tape, &bound, batch, tab, Mode::Eval)?;
        Ok(tape.value(z).iter().map(|&v| v as f64).collect())
    }

    /// Token sequence for one sample, `[sequence_len, embed_dim]`.
    pub fn fuse_inputs(&self, patches: Option<&[f32]>, tabular: Option<&[f32]>) -> Result<Tensor> {
        let batch = Batch {
            size: 1,
            patches: patches.map(<[f32]>::to_vec),
            tabular: tabular.map(<[f32]>::to_vec),
        };
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let tab = self.tabular_input(&mut tape, &batch)?;
        let x = self.embed(&mut tape, &bound, &batch, tab)?;
        let t = tape.tensor(x);
        Tensor::new(t.shape()[1..].to_vec(), t.values().to_vec())
    }

    /// Treatment probability for one sample. In train mode dropout and
    /// drop-path masks are drawn from `seed`.
    pub fn forward_propensity(
        &self,
        patches: Option<&[f32]>,
        tabular: Option<&[f32]>,
        train_mode: bool,
        seed: u64,
    ) -> Result<f64> {
        let batch = Batch {
            size: 1,
            patches: patches.map(<[f32]>::to_vec),
            tabular: tabular.map(<[f32]>::to_vec),
        };
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape);
        let tab = self.tabular_input(&mut tape, &batch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mode = if train_mode { Mode::Train(&mut rng) } else { Mode::Eval };
        let z = self.logits(&mut tape, &bound, &batch, tab, mode)?;
        Ok(crate::tensor::sigmoid(tape.value(z)[0] as f64))
    }

    pub fn head_ids(&self) -> (ParamId, ParamId) {
        (self.head.weight, self.head.bias)
    }

    pub fn tabular_ids(&self) -> Option<(ParamId, ParamId)> {
        self.tabular.as_ref().map(|l| (l.weight, l.bias))
    }

    pub fn patch_ids(&self) -> Option<(ParamId, ParamId)> {
        self.patch.as_ref().map(|l| (l.weight, l.bias))
    }

    pub fn cls_id(&self) -> ParamId {
        self.cls
    }

    pub fn pos_id(&self) -> ParamId {
        self.pos
    }
}
