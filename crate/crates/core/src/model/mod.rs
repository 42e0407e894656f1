//! The acoustic model: Gaussian phoneme embeddings, transformer encoder and
//! decoder, GRU reference encoder, always-on-dropout prenet, convolutional
//! postnet and stop head.

mod config;
mod forward;

pub use config::ModelConfig;
pub use forward::{compute_loss, guided_attention_loss, DecoderOutput, LossParts, Mode};

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::TensorError;
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
enum Init {
    Xavier { fan_in: usize, fan_out: usize },
    Normal(f64),
    Const(f64),
}

/// Name, shape and initializer of every parameter, in registration order.
fn param_specs(c: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let mut out = Vec::new();
    let d = c.d_model;
    let mut push = |name: String, shape: Vec<usize>, init: Init| out.push((name, shape, init));
    let affine = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: &str, i: usize, o: usize| {
        push(format!("{name}.w"), vec![i, o], Init::Xavier { fan_in: i, fan_out: o });
        push(format!("{name}.b"), vec![o], Init::Const(0.0));
    };
    let norm = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: &str| {
        push(format!("{name}.gain"), vec![d], Init::Const(1.0));
        push(format!("{name}.bias"), vec![d], Init::Const(0.0));
    };
    let attention = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: &str| {
        for p in ["q", "k", "v", "o"] {
            affine(push, &format!("{name}.{p}"), d, d);
        }
    };
    let ff = |push: &mut dyn FnMut(String, Vec<usize>, Init), name: &str| {
        affine(push, &format!("{name}.1"), d, c.ff_width);
        affine(push, &format!("{name}.2"), c.ff_width, d);
    };

    push("embed.mu".into(), vec![c.n_symbols, d], Init::Normal(1.0));
    push("embed.logvar".into(), vec![c.n_symbols, d], Init::Const(c.logvar_init));
    push("encoder.alpha".into(), vec![1], Init::Const(1.0));
    norm(&mut push, "encoder.pos_norm");
    for i in 0..c.n_encoder_layers {
        norm(&mut push, &format!("encoder.{i}.norm1"));
        attention(&mut push, &format!("encoder.{i}.self_attn"));
        norm(&mut push, &format!("encoder.{i}.norm2"));
        ff(&mut push, &format!("encoder.{i}.ff"));
    }
    norm(&mut push, "encoder.final_norm");

    let (fd, h) = (c.feature_dim, c.reference_width);
    push("reference.gru.w_input".into(), vec![fd, 3 * h], Init::Xavier { fan_in: fd, fan_out: 3 * h });
    push("reference.gru.w_hidden".into(), vec![h, 3 * h], Init::Xavier { fan_in: h, fan_out: 3 * h });
    push("reference.gru.b_input".into(), vec![3 * h], Init::Const(0.0));
    push("reference.gru.b_hidden".into(), vec![3 * h], Init::Const(0.0));

    affine(&mut push, "prenet.1", fd, c.prenet_hidden);
    affine(&mut push, "prenet.2", c.prenet_hidden, c.prenet_bottleneck);
    affine(&mut push, "decoder.input", c.prenet_bottleneck, d);
    affine(&mut push, "decoder.reference", h, d);
    push("decoder.alpha".into(), vec![1], Init::Const(1.0));
    norm(&mut push, "decoder.pos_norm");
    for i in 0..c.n_decoder_layers {
        norm(&mut push, &format!("decoder.{i}.norm1"));
        attention(&mut push, &format!("decoder.{i}.self_attn"));
        norm(&mut push, &format!("decoder.{i}.norm2"));
        attention(&mut push, &format!("decoder.{i}.cross_attn"));
        norm(&mut push, &format!("decoder.{i}.norm3"));
        ff(&mut push, &format!("decoder.{i}.ff"));
    }
    norm(&mut push, "decoder.final_norm");
    affine(&mut push, "output.mel", d, c.step_width());
    affine(&mut push, "output.stop", d, c.frames_per_step);

    let k = c.postnet_kernel;
    for j in 0..c.postnet_layers {
        let cin = if j == 0 { fd } else { c.postnet_width };
        let last = j + 1 == c.postnet_layers;
        let cout = if last { fd } else { c.postnet_width };
        // The last layer starts at zero so the postnet begins as the identity residual.
        let init = if last {
            Init::Const(0.0)
        } else {
            Init::Xavier {
                fan_in: k * cin,
                fan_out: k * cout,
            }
        };
        push(format!("postnet.{j}.kernel"), vec![k, cin, cout], init);
        push(format!("postnet.{j}.bias"), vec![cout], Init::Const(0.0));
    }
    out
}

/// Number of scalar parameters implied by a config.
pub fn parameter_count(config: &ModelConfig) -> usize {
    param_specs(config)
        .iter()
        .map(|(_, s, _)| s.iter().product::<usize>())
        .sum()
}

#[derive(Clone, Copy, Debug)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Attention {
    q: Affine,
    k: Affine,
    v: Affine,
    o: Affine,
}

#[derive(Clone, Copy, Debug)]
struct EncoderLayer {
    norm1: Norm,
    attn: Attention,
    norm2: Norm,
    ff: [Affine; 2],
}

#[derive(Clone, Copy, Debug)]
struct DecoderLayer {
    norm1: Norm,
    self_attn: Attention,
    norm2: Norm,
    cross_attn: Attention,
    norm3: Norm,
    ff: [Affine; 2],
}

#[derive(Clone, Copy, Debug)]
struct Gru {
    w_input: ParamId,
    w_hidden: ParamId,
    b_input: ParamId,
    b_hidden: ParamId,
}

/// Parameter ids resolved once so the forward pass never looks up names.
#[derive(Clone, Debug)]
struct Layout {
    embed_mu: ParamId,
    embed_logvar: ParamId,
    encoder_alpha: ParamId,
    encoder_pos_norm: Norm,
    encoder: Vec<EncoderLayer>,
    encoder_final: Norm,
    gru: Gru,
    prenet: [Affine; 2],
    decoder_input: Affine,
    decoder_reference: Affine,
    decoder_alpha: ParamId,
    decoder_pos_norm: Norm,
    decoder: Vec<DecoderLayer>,
    decoder_final: Norm,
    mel_out: Affine,
    stop_out: Affine,
    postnet: Vec<Affine>,
}

impl Layout {
    fn resolve<S: Real>(c: &ModelConfig, p: &ParamStore<S>) -> Self {
        let id = |name: &str| p.id(name).unwrap_or_else(|| panic!("missing parameter {name}"));
        let affine = |name: &str| Affine {
            w: id(&format!("{name}.w")),
            b: id(&format!("{name}.b")),
        };
        let norm = |name: &str| Norm {
            gain: id(&format!("{name}.gain")),
            bias: id(&format!("{name}.bias")),
        };
        let attention = |name: &str| Attention {
            q: affine(&format!("{name}.q")),
            k: affine(&format!("{name}.k")),
            v: affine(&format!("{name}.v")),
            o: affine(&format!("{name}.o")),
        };
        let ff = |name: &str| [affine(&format!("{name}.1")), affine(&format!("{name}.2"))];
        Self {
            embed_mu: id("embed.mu"),
            embed_logvar: id("embed.logvar"),
            encoder_alpha: id("encoder.alpha"),
            encoder_pos_norm: norm("encoder.pos_norm"),
            encoder: (0..c.n_encoder_layers)
                .map(|i| EncoderLayer {
                    norm1: norm(&format!("encoder.{i}.norm1")),
                    attn: attention(&format!("encoder.{i}.self_attn")),
                    norm2: norm(&format!("encoder.{i}.norm2")),
                    ff: ff(&format!("encoder.{i}.ff")),
                })
                .collect(),
            encoder_final: norm("encoder.final_norm"),
            gru: Gru {
                w_input: id("reference.gru.w_input"),
                w_hidden: id("reference.gru.w_hidden"),
                b_input: id("reference.gru.b_input"),
                b_hidden: id("reference.gru.b_hidden"),
            },
            prenet: [affine("prenet.1"), affine("prenet.2")],
            decoder_input: affine("decoder.input"),
            decoder_reference: affine("decoder.reference"),
            decoder_alpha: id("decoder.alpha"),
            decoder_pos_norm: norm("decoder.pos_norm"),
            decoder: (0..c.n_decoder_layers)
                .map(|i| DecoderLayer {
                    norm1: norm(&format!("decoder.{i}.norm1")),
                    self_attn: attention(&format!("decoder.{i}.self_attn")),
                    norm2: norm(&format!("decoder.{i}.norm2")),
                    cross_attn: attention(&format!("decoder.{i}.cross_attn")),
                    norm3: norm(&format!("decoder.{i}.norm3")),
                    ff: ff(&format!("decoder.{i}.ff")),
                })
                .collect(),
            decoder_final: norm("decoder.final_norm"),
            mel_out: affine("output.mel"),
            stop_out: affine("output.stop"),
            postnet: (0..c.postnet_layers)
                .map(|j| Affine {
                    w: id(&format!("postnet.{j}.kernel")),
                    b: id(&format!("postnet.{j}.bias")),
                })
                .collect(),
        }
    }
}

/// Sinusoidal table, `rows × d`, interleaving sin and cos.
pub fn sinusoid_table<S: Real>(rows: usize, d: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(rows * d);
    for pos in 0..rows {
        for i in 0..d {
            let rate = libm::pow(10_000.0, (2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / rate;
            out.push(S::of(if i % 2 == 0 { libm::sin(a) } else { libm::cos(a) }));
        }
    }
    out
}

/// The full network: config, parameters and resolved layout.
#[derive(Clone, Debug)]
pub struct StutterTts<S: Real> {
    config: ModelConfig,
    params: ParamStore<S>,
    layout: Layout,
    positions: Vec<S>,
}

/// Models are equal when config and weights are; the layout and position
/// table derive from those.
impl<S: Real> PartialEq for StutterTts<S> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.params == other.params
    }
}

impl<S: Real> StutterTts<S> {
    /// Freshly initialized model; identical seeds give identical weights.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, TensorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, init) in param_specs(&config) {
            let n: usize = shape.iter().product();
            let data: Vec<S> = match init {
                Init::Const(v) => vec![S::of(v); n],
                Init::Normal(sd) => (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        S::of(z * sd)
                    })
                    .collect(),
                Init::Xavier { fan_in, fan_out } => {
                    let a = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
                    (0..n).map(|_| S::of(rng.random_range(-a..a))).collect()
                }
            };
            params.insert(&name, Tensor::new(&shape, data)?);
        }
        Ok(Self::assemble(config, params))
    }

    /// Wraps loaded parameters after checking names and shapes against the config.
    pub fn from_params(config: ModelConfig, params: ParamStore<S>) -> Result<Self, TensorError> {
        config.validate()?;
        let specs = param_specs(&config);
        if specs.len() != params.len() {
            return Err(TensorError::Parameter(format!(
                "config implies {} tensors, store holds {}",
                specs.len(),
                params.len()
            )));
        }
        for (name, shape, _) in &specs {
            match params.by_name(name) {
                Some(t) if t.shape() == shape.as_slice() => {}
                Some(t) => {
                    return Err(TensorError::Parameter(format!(
                        "{name}: shape {:?}, expected {:?}",
                        t.shape(),
                        shape
                    )))
                }
                None => return Err(TensorError::Parameter(format!("missing parameter {name}"))),
            }
        }
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: ModelConfig, params: ParamStore<S>) -> Self {
        let layout = Layout::resolve(&config, &params);
        let positions = sinusoid_table(config.max_positions, config.d_model);
        Self {
            config,
            params,
            layout,
            positions,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<S> {
        self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.numel()
    }

    /// Same architecture at another precision.
    pub fn cast<T: Real>(&self) -> StutterTts<T> {
        StutterTts::assemble(self.config.clone(), self.params.cast())
    }

    /// Mean embedding row of a symbol.
    pub fn embedding_mean(&self, id: usize) -> &[S] {
        let d = self.config.d_model;
        &self.params.get(self.layout.embed_mu).data()[id * d..(id + 1) * d]
    }
}
