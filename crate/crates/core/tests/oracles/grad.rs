//! Finite-difference checks of tape gradients, per op and for the full
//! propensity model.

use geocausal_core::tensor::{Tape, Var};
use geocausal_core::vit::{Batch, Mode, ModelConfig, PropensityModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{directional_probes, normal};

type Build = Box<dyn Fn(&mut Tape, &[Var]) -> Var>;

struct OpCase {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    /// Keeps inputs at least this far from zero (for kinks).
    min_abs: f64,
    build: Build,
}

fn case(name: &'static str, shapes: Vec<Vec<usize>>, build: impl Fn(&mut Tape, &[Var]) -> Var + 'static) -> OpCase {
    OpCase {
        name,
        shapes,
        min_abs: 0.0,
        build: Box::new(build),
    }
}

fn cases() -> Vec<OpCase> {
    let mut v = vec![
        case("matmul", vec![vec![2, 3, 4], vec![4, 5]], |t, x| {
            t.matmul(x[0], x[1]).unwrap()
        }),
        case("bmm", vec![vec![2, 3, 4], vec![2, 4, 5]], |t, x| {
            t.bmm(x[0], x[1], false).unwrap()
        }),
        case("bmm_transposed", vec![vec![2, 3, 4], vec![2, 5, 4]], |t, x| {
            t.bmm(x[0], x[1], true).unwrap()
        }),
        case("add", vec![vec![3, 4], vec![3, 4]], |t, x| t.add(x[0], x[1]).unwrap()),
        case("add_broadcast", vec![vec![2, 3, 4], vec![4]], |t, x| {
            t.add_broadcast(x[0], x[1]).unwrap()
        }),
        case("mul", vec![vec![3, 4], vec![3, 4]], |t, x| t.mul(x[0], x[1]).unwrap()),
        case("mul_const", vec![vec![3, 4]], |t, x| {
            let f: Vec<f32> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.25 }).collect();
            t.mul_const(x[0], f).unwrap()
        }),
        case("scale", vec![vec![5]], |t, x| t.scale(x[0], -1.7)),
        case("gelu", vec![vec![4, 3]], |t, x| t.gelu(x[0])),
        case("sigmoid", vec![vec![4, 3]], |t, x| t.sigmoid(x[0])),
        case("softmax_last", vec![vec![3, 4]], |t, x| t.softmax(x[0], 1).unwrap()),
        case("softmax_first", vec![vec![3, 4]], |t, x| t.softmax(x[0], 0).unwrap()),
        case("layer_norm", vec![vec![3, 5], vec![5], vec![5]], |t, x| {
            t.layer_norm(x[0], x[1], x[2], 1e-5).unwrap()
        }),
        case("reshape", vec![vec![2, 6]], |t, x| {
            let r = t.reshape(x[0], vec![3, 4]).unwrap();
            t.gelu(r)
        }),
        case("permute", vec![vec![2, 3, 4]], |t, x| {
            t.permute(x[0], &[2, 0, 1]).unwrap()
        }),
        case("concat", vec![vec![2, 3], vec![2, 2]], |t, x| {
            t.concat(&[x[0], x[1]], 1).unwrap()
        }),
        case("select", vec![vec![2, 3, 4]], |t, x| t.select(x[0], 1, 2).unwrap()),
        case("expand_leading", vec![vec![3, 2]], |t, x| t.expand_leading(x[0], 4)),
        case("sum", vec![vec![3, 4]], |t, x| {
            let g = t.gelu(x[0]);
            t.sum(g)
        }),
        case("mean", vec![vec![3, 4]], |t, x| {
            let g = t.sigmoid(x[0]);
            t.mean(g)
        }),
        case("bce_with_logits", vec![vec![6]], |t, x| {
            t.bce_with_logits(x[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]).unwrap()
        }),
    ];
    let mut relu = case("relu", vec![vec![4, 3]], |t, x| t.relu(x[0]));
    relu.min_abs = 0.2;
    v.push(relu);
    v
}

fn split(x: &[f32], shapes: &[Vec<usize>]) -> Vec<Vec<f32>> {
    let mut out = Vec::new();
    let mut at = 0;
    for s in shapes {
        let n: usize = s.iter().product();
        out.push(x[at..at + n].to_vec());
        at += n;
    }
    out
}

fn run_case(c: &OpCase, x: &[f32], weights: &[f32], grad: bool) -> (f64, Vec<f32>) {
    let mut t = Tape::new();
    let vars: Vec<Var> = split(x, &c.shapes)
        .into_iter()
        .zip(&c.shapes)
        .map(|(v, s)| t.variable(s.clone(), v).unwrap())
        .collect();
    let out = (c.build)(&mut t, &vars);
    let value: f64 = t
        .value(out)
        .iter()
        .zip(weights)
        .map(|(&o, &w)| o as f64 * w as f64)
        .sum();
    if !grad {
        return (value, Vec::new());
    }
    let weighted = t.mul_const(out, weights.to_vec()).unwrap();
    let loss = t.sum(weighted);
    t.backward(loss).unwrap();
    let g = vars
        .iter()
        .flat_map(|&v| {
            let n = t.value(v).len();
            t.grad(v).map(<[f32]>::to_vec).unwrap_or_else(|| vec![0.0; n])
        })
        .collect();
    (value, g)
}

/// Worst relative error of `probes` directional probes for every op.
pub fn op_errors(probes: usize, seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases()
        .iter()
        .map(|c| {
            let n: usize = c.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
            let x: Vec<f32> = (0..n)
                .map(|_| {
                    let z = normal(&mut rng);
                    (z.signum() * (c.min_abs + z.abs())) as f32
                })
                .collect();
            let mut t = Tape::new();
            let vars: Vec<Var> = split(&x, &c.shapes)
                .into_iter()
                .zip(&c.shapes)
                .map(|(v, s)| t.constant(s.clone(), v).unwrap())
                .collect();
            let out_len = {
                let o = (c.build)(&mut t, &vars);
                t.value(o).len()
            };
            let weights: Vec<f32> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let (_, g) = run_case(c, &x, &weights, true);
            let mut f = |xs: &[f32]| run_case(c, xs, &weights, false).0;
            (c.name, directional_probes(&mut f, &g, &x, probes, 1e-2, &mut rng))
        })
        .collect()
}

/// Model used by the full-model check: 64×64×5 tiles, embed 32, 2 layers,
/// with a tabular token and active dropout and drop-path.
pub fn check_model_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 32,
        num_layers: 2,
        num_heads: 4,
        patch_size: 16,
        image_side: 64,
        image_bands: 5,
        tabular_width: 6,
        ..ModelConfig::default()
    }
}

fn flatten(model: &PropensityModel) -> Vec<f32> {
    model.params.iter().flat_map(|p| p.tensor.values().to_vec()).collect()
}

fn assign(model: &mut PropensityModel, x: &[f32]) {
    let mut at = 0;
    for p in model.params.iter_mut() {
        let n = p.tensor.numel();
        p.tensor.values_mut().copy_from_slice(&x[at..at + n]);
        at += n;
    }
}

fn model_loss(model: &PropensityModel, batch: &Batch, labels: &[f32], grad: bool) -> (f64, Vec<f32>) {
    let mut tape = Tape::new();
    let bound = model.params.bind(&mut tape);
    let tab = model.tabular_input(&mut tape, batch).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let z = model
        .logits(&mut tape, &bound, batch, tab, Mode::Train(&mut rng))
        .unwrap();
    let loss = tape.bce_with_logits(z, labels).unwrap();
    let value = tape.value(loss)[0] as f64;
    if !grad {
        return (value, Vec::new());
    }
    tape.backward(loss).unwrap();
    let mut m = model.clone();
    m.params.collect_grads(&tape, &bound);
    let g = m
        .params
        .iter()
        .flat_map(|p| {
            p.tensor
                .grad()
                .map(<[f32]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.tensor.numel()])
        })
        .collect();
    (value, g)
}

/// Worst relative error of directional probes through the whole model
/// (all parameters at once) on a batch of 4.
pub fn model_error(probes: usize, seed: u64) -> f64 {
    let cfg = check_model_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = PropensityModel::new(cfg.clone(), seed).unwrap();
    let size = 4;
    let batch = Batch {
        size,
        patches: Some(
            (0..size * cfg.num_patches() * cfg.patch_dim())
                .map(|_| normal(&mut rng) as f32)
                .collect(),
        ),
        tabular: Some((0..size * cfg.tabular_width).map(|_| normal(&mut rng) as f32).collect()),
    };
    let labels = [1.0, 0.0, 0.0, 1.0];
    let x = flatten(&model);
    let (_, g) = model_loss(&model, &batch, &labels, true);
    let mut scratch = model.clone();
    let mut f = |xs: &[f32]| {
        assign(&mut scratch, xs);
        model_loss(&scratch, &batch, &labels, false).0
    };
    directional_probes(&mut f, &g, &x, probes, 1e-2, &mut rng)
}
