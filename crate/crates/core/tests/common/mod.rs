//! Central finite-difference gradient checks shared by the gradient tests and
//! the acceptance target.

#![allow(dead_code)]

use mgsgan::autodiff::{Graph, Param, Tensor, Var};
use mgsgan::nn::{BatchNorm, BnMode, Conv1d, ConvTranspose1d, Dense};
use mgsgan::rng::{seeded, Rng};
use mgsgan::Result;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

pub const STEP: f64 = 1e-5;
pub const CASES_PER_OP: usize = 20;

/// Relative error of two gradient vectors, `|a - n| / max(|a|, |n|)` in the
/// Euclidean norm, with a floor so all-zero gradients compare as equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    norm(&diff) / norm(analytic).max(norm(numeric)).max(1e-8)
}

/// Compares backprop against central differences for every entry of every
/// parameter `params(model)` exposes. `loss` must build a scalar.
pub fn check_model<M>(
    model: &mut M,
    params: impl Fn(&mut M) -> Vec<&mut Param>,
    loss: impl Fn(&mut M, &mut Graph) -> Result<Var>,
) -> Result<f64> {
    let mut g = Graph::new();
    let out = loss(model, &mut g)?;
    let grads = g.backward(out)?;
    let ids: Vec<_> = params(model).iter().map(|p| (p.id(), p.value.len())).collect();
    let mut worst: f64 = 0.0;
    for (i, (id, len)) in ids.into_iter().enumerate() {
        let analytic = grads.param(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len]);
        let mut numeric = vec![0.0; len];
        for (k, slot) in numeric.iter_mut().enumerate() {
            let eval = |delta: f64, model: &mut M| -> Result<f64> {
                let orig = params(model)[i].value.data()[k];
                params(model)[i].value.data_mut()[k] = orig + delta;
                let mut g = Graph::new();
                let v = loss(model, &mut g).map(|v| g.value(v).item());
                params(model)[i].value.data_mut()[k] = orig;
                v
            };
            *slot = (eval(STEP, model)? - eval(-STEP, model)?) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    Ok(worst)
}

/// Gradient check of a graph function of free tensors. The output is reduced
/// with fixed random weights so every output entry contributes.
pub fn check_fn(
    inputs: Vec<Tensor>,
    projection_seed: u64,
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<f64> {
    let mut params: Vec<Param> = inputs.into_iter().map(Param::new).collect();
    let out_len = {
        let mut g = Graph::new();
        let vars: Vec<Var> = params.iter().map(|p| g.param(p, true)).collect();
        let out = f(&mut g, &vars)?;
        g.value(out).len()
    };
    let mut rng = seeded(projection_seed, 99);
    let weights: Vec<f64> = (0..out_len).map(|_| StandardNormal.sample(&mut rng)).collect();
    check_model(
        &mut params,
        |ps| ps.iter_mut().collect(),
        |ps, g| {
            let vars: Vec<Var> = ps.iter().map(|p| g.param(p, true)).collect();
            let out = f(g, &vars)?;
            g.weighted_sum(out, &weights)
        },
    )
}

pub fn normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Values whose magnitude is at least `gap`, keeping finite differences off
/// the kink of piecewise-linear ops.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(gap..1.5);
            if rng.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

fn positive(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.2..3.0)).collect()).unwrap()
}

fn dim(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    rng.random_range(lo..=hi)
}

/// Random conv geometry `(batch, c_in, c_out, len, k, stride, pad)`.
fn conv_geometry(rng: &mut Rng) -> (usize, usize, usize, usize, usize, usize, usize) {
    let k = dim(rng, 1, 5);
    let stride = dim(rng, 1, 3);
    let pad = dim(rng, 0, k / 2);
    let len = dim(rng, k.max(2), 9);
    (dim(rng, 1, 3), dim(rng, 1, 3), dim(rng, 1, 3), len, k, stride, pad)
}

type CaseResult = Result<f64>;

/// One random case of the named op, seeded by `seed`.
pub fn run_case(op: &str, seed: u64) -> CaseResult {
    let mut r = seeded(seed, 1000);
    let rng = &mut r;
    let (b, c) = (dim(rng, 1, 4), dim(rng, 1, 5));
    match op {
        "add" | "sub" | "mul" => {
            let (x, y) = (normal(rng, &[b, c]), normal(rng, &[b, c]));
            check_fn(vec![x, y], seed, |g, v| match op {
                "add" => g.add(v[0], v[1]),
                "sub" => g.sub(v[0], v[1]),
                _ => g.mul(v[0], v[1]),
            })
        }
        "affine" => {
            let (s, t) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.affine(v[0], s, t))
        }
        "scale" => {
            let s = rng.random_range(-3.0..3.0);
            check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.scale(v[0], s))
        }
        "neg" => check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.neg(v[0])),
        "add_bias" => check_fn(vec![normal(rng, &[b, c]), normal(rng, &[c])], seed, |g, v| {
            g.add_bias(v[0], v[1])
        }),
        "matmul" => {
            let (m, k, n) = (dim(rng, 1, 4), dim(rng, 1, 5), dim(rng, 1, 4));
            check_fn(vec![normal(rng, &[m, k]), normal(rng, &[k, n])], seed, |g, v| g.matmul(v[0], v[1]))
        }
        "conv1d" => {
            let (bt, ci, co, len, k, s, p) = conv_geometry(rng);
            let bias = rng.random_bool(0.5);
            let inputs = vec![normal(rng, &[bt, ci, len]), normal(rng, &[co, ci, k]), normal(rng, &[co])];
            check_fn(inputs, seed, |g, v| g.conv1d(v[0], v[1], bias.then_some(v[2]), s, p))
        }
        "conv_transpose1d" => {
            let (bt, ci, co, len, k, s, p) = conv_geometry(rng);
            // Output length (len-1)*s + k - 2p is at least 1 since pad <= k/2.
            let bias = rng.random_bool(0.5);
            let inputs = vec![normal(rng, &[bt, ci, len]), normal(rng, &[ci, co, k]), normal(rng, &[co])];
            check_fn(inputs, seed, |g, v| g.conv_transpose1d(v[0], v[1], bias.then_some(v[2]), s, p))
        }
        "leaky_relu" => {
            let slope = rng.random_range(0.0..0.5);
            check_fn(vec![away_from_zero(rng, &[b, c], 0.05)], seed, |g, v| g.leaky_relu(v[0], slope))
        }
        "relu" => check_fn(vec![away_from_zero(rng, &[b, c], 0.05)], seed, |g, v| g.relu(v[0])),
        "sigmoid" => check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.sigmoid(v[0])),
        "tanh" => check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.tanh(v[0])),
        "log" => check_fn(vec![positive(rng, &[b, c])], seed, |g, v| g.log(v[0])),
        "softmax" => {
            let shape = if rng.random_bool(0.5) { vec![b, c] } else { vec![b, 2, c] };
            check_fn(vec![normal(rng, &shape)], seed, |g, v| g.softmax(v[0]))
        }
        "reshape" => check_fn(vec![normal(rng, &[b, c, 2])], seed, |g, v| {
            let r = g.reshape(v[0], &[b * 2, c])?;
            g.tanh(r)
        }),
        "concat" => {
            let axis = dim(rng, 0, 2);
            let mut shape_a = vec![b, c, 3];
            let mut shape_b = shape_a.clone();
            shape_b[axis] = dim(rng, 1, 3);
            shape_a[axis] = dim(rng, 1, 3);
            check_fn(vec![normal(rng, &shape_a), normal(rng, &shape_b)], seed, |g, v| g.concat(&[v[0], v[1]], axis))
        }
        "batch_mean" => check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.batch_mean(v[0])),
        "batch_var" => check_fn(vec![normal(rng, &[b + 1, c])], seed, |g, v| g.batch_var(v[0])),
        "batch_norm" => {
            let len = dim(rng, 1, 4);
            let inputs = vec![normal(rng, &[b + 1, c, len]), normal(rng, &[c]), normal(rng, &[c])];
            check_fn(inputs, seed, |g, v| g.batch_norm(v[0], v[1], v[2], 1e-5).map(|r| r.0))
        }
        "batch_norm_fixed" => {
            let mean: Vec<f64> = normal(rng, &[c]).into_data();
            let var: Vec<f64> = positive(rng, &[c]).into_data();
            let inputs = vec![normal(rng, &[b, c, 3]), normal(rng, &[c]), normal(rng, &[c])];
            check_fn(inputs, seed, |g, v| g.batch_norm_fixed(v[0], v[1], v[2], &mean, &var, 1e-5))
        }
        "clamp" => {
            // Bounds at +-0.5, inputs at least 0.05 from either bound.
            let data = (0..b * c)
                .map(|_| match rng.random_range(0..3) {
                    0 => rng.random_range(-1.5..-0.55),
                    1 => rng.random_range(0.55..1.5),
                    _ => rng.random_range(-0.45..0.45),
                })
                .collect();
            let x = Tensor::new(vec![b, c], data).unwrap();
            check_fn(vec![x], seed, |g, v| g.clamp(v[0], -0.5, 0.5))
        }
        "clamp_box" => {
            let lower: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..0.0)).collect();
            let upper: Vec<f64> = lower.iter().map(|l| l + rng.random_range(0.3..1.5)).collect();
            let mut data = Vec::new();
            for _ in 0..b {
                for j in 0..c {
                    let v = match rng.random_range(0..3) {
                        0 => lower[j] - rng.random_range(0.05..0.5),
                        1 => upper[j] + rng.random_range(0.05..0.5),
                        _ => rng.random_range(lower[j] + 0.05..upper[j] - 0.05),
                    };
                    data.push(v);
                }
            }
            let x = Tensor::new(vec![b, c], data).unwrap();
            check_fn(vec![x], seed, |g, v| g.clamp_box(v[0], &lower, &upper))
        }
        "sum" => check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.sum(v[0])),
        "mean" => check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.mean(v[0])),
        "weighted_sum" => {
            let w = normal(rng, &[b * c]).into_data();
            check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.weighted_sum(v[0], &w))
        }
        "pick" => {
            let index: Vec<usize> = (0..b).map(|_| rng.random_range(0..c)).collect();
            check_fn(vec![normal(rng, &[b, c])], seed, |g, v| g.pick(v[0], &index))
        }
        "dense" => {
            let (fan_in, fan_out) = (dim(rng, 1, 5), dim(rng, 1, 4));
            let mut layer = Dense::new(fan_in, fan_out, rng)?;
            layer.bias.value = normal(rng, &[fan_out]);
            let x = normal(rng, &[b, fan_in]);
            check_model(&mut layer, |l| l.params_mut(), |l, g| {
                let xv = g.constant(x.clone());
                let y = l.forward(g, xv, true)?;
                g.sum(y)
            })
        }
        "conv1d_layer" => {
            let (bt, ci, co, len, k, s, p) = conv_geometry(rng);
            let mut layer = Conv1d::new(ci, co, k, s, p, rng)?;
            let x = normal(rng, &[bt, ci, len]);
            let w = normal(rng, &[bt * co * 16]).into_data();
            check_model(&mut layer, |l| l.params_mut(), |l, g| {
                let xv = g.constant(x.clone());
                let y = l.forward(g, xv, true)?;
                let n = g.value(y).len();
                g.weighted_sum(y, &w[..n])
            })
        }
        "conv_transpose1d_layer" => {
            let (bt, ci, co, len, k, s, p) = conv_geometry(rng);
            let mut layer = ConvTranspose1d::new(ci, co, k, s, p, rng)?;
            let x = normal(rng, &[bt, ci, len]);
            let out = (len - 1) * s + k - 2 * p;
            let w = normal(rng, &[bt * co * out]).into_data();
            check_model(&mut layer, |l| l.params_mut(), |l, g| {
                let xv = g.constant(x.clone());
                let y = l.forward(g, xv, true)?;
                g.weighted_sum(y, &w)
            })
        }
        "batch_norm_layer" => {
            let mut layer = BatchNorm::new(c);
            layer.gamma.value = normal(rng, &[c]);
            let x = normal(rng, &[b + 1, c, 3]);
            let w = normal(rng, &[(b + 1) * c * 3]).into_data();
            let mode = if rng.random_bool(0.5) { BnMode::Train } else { BnMode::Eval };
            check_model(&mut layer, |l| l.params_mut(), |l, g| {
                let xv = g.constant(x.clone());
                let y = l.forward(g, xv, mode, true)?;
                g.weighted_sum(y, &w)
            })
        }
        "conv_net" => {
            // Three conv layers with leaky activations, every leaf a free input.
            let len = dim(rng, 6, 12);
            let (c1, c2) = (dim(rng, 1, 3), dim(rng, 1, 3));
            let inputs = vec![
                normal(rng, &[2, 1, len]),
                normal(rng, &[c1, 1, 3]),
                normal(rng, &[c1]),
                normal(rng, &[c2, c1, 3]),
                normal(rng, &[c2]),
                normal(rng, &[1, c2, 2]),
            ];
            check_fn(inputs, seed, |g, v| {
                let h = g.conv1d(v[0], v[1], Some(v[2]), 1, 1)?;
                let h = g.leaky_relu(h, 0.2)?;
                let h = g.conv1d(h, v[3], Some(v[4]), 2, 1)?;
                let h = g.tanh(h)?;
                let h = g.conv1d(h, v[5], None, 1, 0)?;
                g.sigmoid(h)
            })
        }
        other => panic!("unknown op {other}"),
    }
}

pub const OPS: &[&str] = &[
    "add",
    "sub",
    "mul",
    "affine",
    "scale",
    "neg",
    "add_bias",
    "matmul",
    "conv1d",
    "conv_transpose1d",
    "leaky_relu",
    "relu",
    "sigmoid",
    "tanh",
    "log",
    "softmax",
    "reshape",
    "concat",
    "batch_mean",
    "batch_var",
    "batch_norm",
    "batch_norm_fixed",
    "clamp",
    "clamp_box",
    "sum",
    "mean",
    "weighted_sum",
    "pick",
    "dense",
    "conv1d_layer",
    "conv_transpose1d_layer",
    "batch_norm_layer",
    "conv_net",
];

/// Worst relative error over `CASES_PER_OP` seeds of `op`.
pub fn worst_for_op(op: &str) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for case in 0..CASES_PER_OP as u64 {
        worst = worst.max(run_case(op, case)?);
    }
    Ok(worst)
}
