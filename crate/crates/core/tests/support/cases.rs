//! Randomized gradient-check cases: one per differentiable op, plus the
//! end-to-end model loss.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stutter_core::model::{compute_loss, Mode, ModelConfig, StutterTts};
use stutter_core::{Elementwise, GradBuffer, Graph, GruWeights, ParamStore, Tensor, Var};

use super::{check_inputs, check_params, Report};

pub const TOL: f64 = 1e-5;
pub const SEEDS: u64 = 24;

pub type Body = Box<dyn Fn(&mut Graph<'_, f64>, &[Var]) -> Var>;
pub type Build = Box<dyn Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Body)>;

pub struct OpCase {
    pub name: &'static str,
    pub build: Build,
}

fn case(name: &'static str, build: impl Fn(&mut ChaCha8Rng) -> (Vec<Tensor<f64>>, Body) + 'static) -> OpCase {
    OpCase {
        name,
        build: Box::new(build),
    }
}

pub fn rand_t(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values bounded away from zero so kinks (relu, |x|) are not straddled.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.5);
            if rng.random::<bool>() { m } else { -m }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (rng.random_range(1..6), rng.random_range(1..6), rng.random_range(1..6))
}

/// Prediction at a fixed nonzero offset from the target, so L1 kinks are avoided.
fn offset_pair(rng: &mut ChaCha8Rng, m: usize, n: usize) -> (Tensor<f64>, Tensor<f64>) {
    let target = rand_t(rng, &[m, n], -1.0, 1.0);
    let offset = away_from_zero(rng, &[m, n]);
    let pred = Tensor::new(&[m, n], target.data().iter().zip(offset.data()).map(|(a, b)| a + b).collect()).unwrap();
    (pred, target)
}

type Op = fn() -> Elementwise<f64>;

/// Every differentiable op of the tape.
pub fn op_cases() -> Vec<OpCase> {
    let mut cases = vec![
        case("matmul", |rng| {
            let (m, k, n) = dims(rng);
            (vec![rand_t(rng, &[m, k], -1.0, 1.0), rand_t(rng, &[k, n], -1.0, 1.0)], Box::new(|g, v| g.matmul(v[0], v[1]).unwrap()))
        }),
        case("matmul_nt", |rng| {
            let (m, k, n) = dims(rng);
            (vec![rand_t(rng, &[m, k], -1.0, 1.0), rand_t(rng, &[n, k], -1.0, 1.0)], Box::new(|g, v| g.matmul_nt(v[0], v[1]).unwrap()))
        }),
        case("transpose", |rng| {
            let (m, n, _) = dims(rng);
            (vec![rand_t(rng, &[m, n], -1.0, 1.0)], Box::new(|g, v| g.transpose(v[0]).unwrap()))
        }),
    ];
    let binary: [(&'static str, Op); 3] = [("add", || Elementwise::Add), ("sub", || Elementwise::Sub), ("mul", || Elementwise::Mul)];
    for (name, op) in binary {
        cases.push(case(name, move |rng| {
            let (m, n, _) = dims(rng);
            (
                vec![rand_t(rng, &[m, n], -2.0, 2.0), rand_t(rng, &[m, n], -2.0, 2.0)],
                Box::new(move |g, v| g.elementwise(op(), &[v[0], v[1]]).unwrap()),
            )
        }));
    }
    let unary: [(&'static str, Op); 4] = [
        ("relu", || Elementwise::Relu),
        ("tanh", || Elementwise::Tanh),
        ("sigmoid", || Elementwise::Sigmoid),
        ("scale", || Elementwise::Scale(-1.7)),
    ];
    for (name, op) in unary {
        cases.push(case(name, move |rng| {
            let (m, n, _) = dims(rng);
            (vec![away_from_zero(rng, &[m, n])], Box::new(move |g, v| g.elementwise(op(), &[v[0]]).unwrap()))
        }));
    }
    cases.extend([
        case("exp", |rng| {
            let (m, n, _) = dims(rng);
            (vec![rand_t(rng, &[m, n], -2.0, 2.0)], Box::new(|g, v| g.exp(v[0])))
        }),
        case("add_row", |rng| {
            let (m, n, _) = dims(rng);
            (vec![rand_t(rng, &[m, n], -1.0, 1.0), rand_t(rng, &[n], -1.0, 1.0)], Box::new(|g, v| g.add_row(v[0], v[1]).unwrap()))
        }),
        case("scale_by", |rng| {
            let (m, n, _) = dims(rng);
            (vec![rand_t(rng, &[m, n], -1.0, 1.0), rand_t(rng, &[1], -2.0, 2.0)], Box::new(|g, v| g.scale_by(v[0], v[1]).unwrap()))
        }),
        case("softmax", |rng| {
            let (m, n, _) = dims(rng);
            (vec![rand_t(rng, &[m, n], -3.0, 3.0)], Box::new(|g, v| g.softmax(v[0]).unwrap()))
        }),
        case("layer_norm", |rng| {
            let m = rng.random_range(1..5);
            let n = rng.random_range(2..7);
            (
                vec![rand_t(rng, &[m, n], -2.0, 2.0), rand_t(rng, &[n], 0.5, 1.5), rand_t(rng, &[n], -0.5, 0.5)],
                Box::new(|g, v| g.layer_norm(v[0], v[1], v[2], 1e-5).unwrap()),
            )
        }),
        case("dropout", |rng| {
            // fixed mask: the op is linear given its seed
            let (m, n, _) = dims(rng);
            let seed = rng.random::<u64>();
            (
                vec![rand_t(rng, &[m, n], -1.0, 1.0)],
                Box::new(move |g, v| {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    g.dropout(v[0], 0.6, true, &mut r).unwrap()
                }),
            )
        }),
        case("conv1d", |rng| {
            let t = rng.random_range(1..8);
            let cin = rng.random_range(1..4);
            let cout = rng.random_range(1..4);
            let width = [1, 3, 5][rng.random_range(0..3)];
            (
                vec![
                    rand_t(rng, &[t, cin], -1.0, 1.0),
                    rand_t(rng, &[width, cin, cout], -1.0, 1.0),
                    rand_t(rng, &[cout], -1.0, 1.0),
                ],
                Box::new(|g, v| g.conv1d(v[0], v[1], v[2]).unwrap()),
            )
        }),
        case("gru", |rng| {
            let input = rng.random_range(1..4);
            let h = rng.random_range(1..4);
            (
                vec![
                    rand_t(rng, &[3, input], -1.0, 1.0),
                    rand_t(rng, &[1, h], -0.5, 0.5),
                    rand_t(rng, &[input, 3 * h], -1.0, 1.0),
                    rand_t(rng, &[h, 3 * h], -1.0, 1.0),
                    rand_t(rng, &[3 * h], -0.5, 0.5),
                    rand_t(rng, &[3 * h], -0.5, 0.5),
                ],
                Box::new(|g, v| {
                    let w = GruWeights {
                        w_input: v[2],
                        w_hidden: v[3],
                        b_input: v[4],
                        b_hidden: v[5],
                    };
                    let mut h = v[1];
                    for t in 0..3 {
                        let x = g.slice_rows(v[0], t, 1).unwrap();
                        h = g.gru_cell(x, h, &w).unwrap();
                    }
                    h
                }),
            )
        }),
        case("slice_cols", |rng| {
            let (m, n, _) = dims(rng);
            let start = rng.random_range(0..n);
            let len = rng.random_range(1..=n - start);
            (vec![rand_t(rng, &[m, n], -1.0, 1.0)], Box::new(move |g, v| g.slice_cols(v[0], start, len).unwrap()))
        }),
        case("slice_rows", |rng| {
            let (m, n, _) = dims(rng);
            let start = rng.random_range(0..m);
            let len = rng.random_range(1..=m - start);
            (vec![rand_t(rng, &[m, n], -1.0, 1.0)], Box::new(move |g, v| g.slice_rows(v[0], start, len).unwrap()))
        }),
        case("concat", |rng| {
            let (m, a, b) = dims(rng);
            (
                vec![rand_t(rng, &[m, a], -1.0, 1.0), rand_t(rng, &[m, b], -1.0, 1.0), rand_t(rng, &[a, m], -1.0, 1.0)],
                Box::new(move |g, v| {
                    let c = g.concat_cols(&[v[0], v[1], v[0]]).unwrap();
                    let t = g.transpose(v[2]).unwrap();
                    let r = g.concat_cols(&[t, t]).unwrap();
                    let x = g.slice_cols(c, 0, 2 * a).unwrap();
                    let stacked = g.concat_rows(&[x, r]).unwrap();
                    g.tanh(stacked)
                }),
            )
        }),
        case("gather_rows", |rng| {
            let (m, n, k) = dims(rng);
            let ids: Vec<usize> = (0..k + 1).map(|_| rng.random_range(0..m)).collect();
            (vec![rand_t(rng, &[m, n], -1.0, 1.0)], Box::new(move |g, v| g.gather_rows(v[0], &ids).unwrap()))
        }),
        case("reshape", |rng| {
            let (m, n, _) = dims(rng);
            (
                vec![rand_t(rng, &[m, n], -1.0, 1.0)],
                Box::new(move |g, v| {
                    let r = g.reshape(v[0], &[n * m]).unwrap();
                    g.sigmoid(r)
                }),
            )
        }),
        case("sum_mean", |rng| {
            let (m, n, _) = dims(rng);
            (
                vec![rand_t(rng, &[m, n], -1.0, 1.0)],
                Box::new(|g, v| {
                    let s = g.sum(v[0]);
                    let t = g.tanh(v[0]);
                    let mn = g.mean(t);
                    g.add(s, mn).unwrap()
                }),
            )
        }),
        case("l1", |rng| {
            let (m, n, _) = dims(rng);
            let (pred, target) = offset_pair(rng, m, n);
            (vec![pred, target], Box::new(|g, v| g.l1_loss(v[0], v[1]).unwrap()))
        }),
        case("l1_masked", |rng| {
            let (m, n, _) = dims(rng);
            let (pred, target) = offset_pair(rng, m, n);
            let mut w: Vec<f64> = (0..m).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            w[0] = 1.0;
            (vec![pred, target], Box::new(move |g, v| g.l1_loss_masked(v[0], v[1], &w).unwrap()))
        }),
        case("bce", |rng| {
            let n = rng.random_range(1..8);
            let y: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..2u8))).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.5)).collect();
            let pos = rng.random_range(0.5..4.0);
            (vec![rand_t(rng, &[n], -4.0, 4.0)], Box::new(move |g, v| g.bce_with_logits(v[0], &y, &w, pos).unwrap()))
        }),
    ]);
    cases
}

/// Runs one op over `SEEDS` random instances; returns the merged report.
pub fn check_op(c: &OpCase) -> Result<Report, String> {
    let mut total = Report::default();
    for seed in 0..SEEDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed * 7919 + c.name.len() as u64);
        let (inputs, f) = (c.build)(&mut rng);
        let r = check_inputs(&inputs, f.as_ref(), TOL).map_err(|e| format!("{} seed {seed}: {e}", c.name))?;
        total.checked += r.checked;
        if r.worst >= total.worst {
            total.worst = r.worst;
            total.worst_at = format!("{} {}", c.name, r.worst_at);
        }
    }
    if total.checked == 0 {
        return Err(format!("{}: nothing checked", c.name));
    }
    Ok(total)
}

/// A small model covering every module; dropout off so the loss is a
/// deterministic function of the parameters.
pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        n_symbols: 10,
        d_model: 8,
        n_heads: 2,
        n_encoder_layers: 1,
        n_decoder_layers: 1,
        ff_width: 12,
        feature_dim: 4,
        prenet_hidden: 6,
        prenet_bottleneck: 3,
        postnet_layers: 3,
        postnet_width: 5,
        postnet_kernel: 3,
        reference_frames: 3,
        reference_width: 4,
        dropout_prenet: 0.0,
        max_positions: 64,
        ..ModelConfig::default()
    }
}

pub fn features(rng: &mut ChaCha8Rng, t: usize, d: usize) -> Tensor<f64> {
    Tensor::new(&[t, d], (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Zero-initialized pieces (postnet tail, biases) would hide gradient
/// paths, so every parameter is jittered before checking.
pub fn perturbed(model: &StutterTts<f64>, seed: u64) -> StutterTts<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = model.clone();
    let ids: Vec<_> = m.params().iter().map(|(id, _, _)| id).collect();
    for id in ids {
        for x in m.params_mut().get_mut(id).data_mut() {
            *x += rng.random_range(-0.2..0.2);
        }
    }
    m
}

struct Utterance {
    ids: Vec<usize>,
    target: Tensor<f64>,
    reference: Tensor<f64>,
    stop: Vec<f64>,
}

fn full_loss(model: &StutterTts<f64>, params: &ParamStore<f64>, u: &Utterance, seed: u64, grads: Option<&mut GradBuffer<f64>>) -> f64 {
    let mut g = Graph::with_params(params);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let enc = model.encode(&mut g, &u.ids, Mode::Train, &mut rng).unwrap();
    let r = model.reference_embed(&mut g, &u.reference, &mut rng).unwrap();
    let out = model.decode_teacher_forced(&mut g, enc, &u.target, r, None, &mut rng).unwrap();
    let tv = g.constant(u.target.clone());
    let weights = vec![1.0; u.stop.len()];
    let parts = compute_loss(&mut g, out.pre, out.post, out.stop, tv, &u.stop, &weights, 1.0, 1.0).unwrap();
    let value = g.value(parts.total).item();
    if let Some(buf) = grads {
        g.backward(parts.total).unwrap();
        g.accumulate_param_grads(buf);
    }
    value
}

/// Backprop through encoder, reference GRU, prenet, decoder, postnet and
/// the full loss against central differences on every parameter element.
pub fn check_end_to_end(seed: u64, frames_per_step: usize) -> Result<Report, String> {
    let cfg = ModelConfig {
        frames_per_step,
        ..tiny_model()
    };
    let model = perturbed(&StutterTts::<f64>::new(cfg, seed).unwrap(), 100 + seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = 4;
    let mut stop = vec![0.0; t];
    stop[t - 1] = 1.0;
    let u = Utterance {
        ids: vec![0, 4, 7],
        target: features(&mut rng, t, 4),
        reference: features(&mut rng, 6, 4),
        stop,
    };
    let mut grads = GradBuffer::for_params(model.params());
    full_loss(&model, model.params(), &u, seed, Some(&mut grads));
    let f = |p: &ParamStore<f64>| full_loss(&model, p, &u, seed, None);
    let report = check_params(model.params(), &f, &grads, TOL, 1)?;
    if report.checked != model.parameter_count() {
        return Err(format!("checked {} of {} parameters", report.checked, model.parameter_count()));
    }
    Ok(report)
}
