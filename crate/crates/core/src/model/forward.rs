use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Affine, Attention, Norm, StutterTts};
use crate::autograd::{Graph, GruWeights, Var};
use crate::error::TensorError;
use crate::tensor::{Real, Tensor};

/// Whether phoneme embeddings are sampled (training) or taken at their mean.
/// The prenet dropout is live in both modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// Teacher-forced decoder results for one utterance.
#[derive(Clone, Debug)]
pub struct DecoderOutput {
    /// `T×D` decoder prediction.
    pub pre: Var,
    /// `T×D`, `pre` plus the postnet residual.
    pub post: Var,
    /// `T` stop logits.
    pub stop: Var,
    /// Cross-attention weights, one `steps×L` matrix per layer and head.
    pub cross_attention: Vec<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    pub pre: Var,
    pub post: Var,
    pub stop: Var,
}

type G<'a, 'p, S> = &'a mut Graph<'p, S>;

impl<S: Real> StutterTts<S> {
    fn affine(&self, g: G<'_, '_, S>, x: Var, a: Affine) -> Result<Var, TensorError> {
        let w = g.param(a.w);
        let y = g.matmul(x, w)?;
        let b = g.param(a.b);
        g.add_row(y, b)
    }

    fn norm(&self, g: G<'_, '_, S>, x: Var, n: Norm) -> Result<Var, TensorError> {
        let gain = g.param(n.gain);
        let bias = g.param(n.bias);
        g.layer_norm(x, gain, bias, S::of(self.config.layer_norm_eps))
    }

    /// Gaussian embedding lookup: `μ + exp(ℓ/2)·ε` in training, `μ` otherwise.
    pub fn embed_phonemes<R: Rng + ?Sized>(
        &self,
        g: G<'_, '_, S>,
        ids: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        let mu = g.param(self.layout.embed_mu);
        let mean = g.gather_rows(mu, ids)?;
        if mode == Mode::Infer {
            return Ok(mean);
        }
        let lv = g.param(self.layout.embed_logvar);
        let lv = g.gather_rows(lv, ids)?;
        let half = g.scale(lv, S::of(0.5));
        let sd = g.exp(half);
        let d = self.config.d_model;
        let eps: Vec<S> = (0..ids.len() * d)
            .map(|_| S::of(StandardNormal.sample(rng)))
            .collect();
        let eps = g.constant(Tensor::new(&[ids.len(), d], eps)?);
        let noise = g.mul(sd, eps)?;
        g.add(mean, noise)
    }

    fn positions(&self, g: G<'_, '_, S>, len: usize) -> Result<Var, TensorError> {
        let max = self.config.max_positions;
        if len > max {
            return Err(TensorError::Length { len, max });
        }
        let d = self.config.d_model;
        Ok(g.constant(Tensor::new(&[len, d], self.positions[..len * d].to_vec())?))
    }

    fn add_positions(&self, g: G<'_, '_, S>, x: Var, alpha: Var, norm: Norm) -> Result<Var, TensorError> {
        let pe = self.positions(g, g.value(x).rows())?;
        let pe = g.scale_by(pe, alpha)?;
        let y = g.add(x, pe)?;
        self.norm(g, y, norm)
    }

    /// `LayerNorm(x + α·PE)` with the encoder's `α`.
    pub fn positional_encode(&self, g: G<'_, '_, S>, x: Var) -> Result<Var, TensorError> {
        let alpha = g.param(self.layout.encoder_alpha);
        self.add_positions(g, x, alpha, self.layout.encoder_pos_norm)
    }

    /// Multi-head scaled dot-product attention. Pushes each head's weight
    /// matrix into `probs` when given.
    fn attention(
        &self,
        g: G<'_, '_, S>,
        xq: Var,
        xkv: Var,
        a: Attention,
        mask: Option<Var>,
        mut probs: Option<&mut Vec<Var>>,
    ) -> Result<Var, TensorError> {
        let q = self.affine(g, xq, a.q)?;
        let k = self.affine(g, xkv, a.k)?;
        let v = self.affine(g, xkv, a.v)?;
        let dk = self.config.head_dim();
        let scale = S::one() / S::of(dk as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.n_heads);
        for h in 0..self.config.n_heads {
            let (qh, kh, vh) = if self.config.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    g.slice_cols(q, h * dk, dk)?,
                    g.slice_cols(k, h * dk, dk)?,
                    g.slice_cols(v, h * dk, dk)?,
                )
            };
            let s = g.matmul_nt(qh, kh)?;
            let mut s = g.scale(s, scale);
            if let Some(m) = mask {
                s = g.add(s, m)?;
            }
            let p = g.softmax(s)?;
            if let Some(out) = probs.as_deref_mut() {
                out.push(p);
            }
            heads.push(g.matmul(p, vh)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        self.affine(g, cat, a.o)
    }

    fn feed_forward(&self, g: G<'_, '_, S>, x: Var, ff: [Affine; 2]) -> Result<Var, TensorError> {
        let h = self.affine(g, x, ff[0])?;
        let h = g.relu(h);
        self.affine(g, h, ff[1])
    }

    /// Phoneme ids to `L×d_model` encoder states.
    pub fn encode<R: Rng + ?Sized>(
        &self,
        g: G<'_, '_, S>,
        ids: &[usize],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        if ids.is_empty() {
            return Err(TensorError::Parameter("empty phoneme sequence".into()));
        }
        let e = self.embed_phonemes(g, ids, mode, rng)?;
        let mut x = self.positional_encode(g, e)?;
        for layer in &self.layout.encoder {
            let h = self.norm(g, x, layer.norm1)?;
            let h = self.attention(g, h, h, layer.attn, None, None)?;
            x = g.add(x, h)?;
            let h = self.norm(g, x, layer.norm2)?;
            let h = self.feed_forward(g, h, layer.ff)?;
            x = g.add(x, h)?;
        }
        self.norm(g, x, self.layout.encoder_final)
    }

    /// Speaker embedding `1×reference_width` from `K` frames drawn with
    /// replacement and kept in time order.
    pub fn reference_embed<R: Rng + ?Sized>(
        &self,
        g: G<'_, '_, S>,
        reference: &Tensor<S>,
        rng: &mut R,
    ) -> Result<Var, TensorError> {
        let (t, d) = (reference.rows(), reference.cols());
        if t == 0 {
            return Err(TensorError::Parameter("empty reference".into()));
        }
        if d != self.config.feature_dim {
            return Err(TensorError::Dimension {
                op: "reference_embed",
                left: reference.shape().to_vec(),
                right: vec![self.config.feature_dim],
            });
        }
        let k = self.config.reference_frames;
        let mut picks: Vec<usize> = (0..k).map(|_| rng.random_range(0..t)).collect();
        picks.sort_unstable();
        let mut frames = Vec::with_capacity(k * d);
        for &i in &picks {
            frames.extend_from_slice(reference.row(i));
        }
        let x = g.constant(Tensor::new(&[k, d], frames)?);
        let w = GruWeights {
            w_input: g.param(self.layout.gru.w_input),
            w_hidden: g.param(self.layout.gru.w_hidden),
            b_input: g.param(self.layout.gru.b_input),
            b_hidden: g.param(self.layout.gru.b_hidden),
        };
        let xp = g.matmul(x, w.w_input)?;
        let xp = g.add_row(xp, w.b_input)?;
        let mut h = g.constant(Tensor::zeros(&[1, self.config.reference_width]));
        for i in 0..k {
            let row = g.slice_rows(xp, i, 1)?;
            h = g.gru_step(row, h, &w)?;
        }
        Ok(h)
    }

    /// Two affine+ReLU layers, each followed by dropout that stays active
    /// outside training too. `frames` is `n×D`. Each layer draws its mask
    /// from its own sub-stream, so row `i`'s mask does not depend on how many
    /// rows follow it (padding cannot perturb real frames).
    pub fn prenet<R: Rng + ?Sized>(&self, g: G<'_, '_, S>, frames: Var, rng: &mut R) -> Result<Var, TensorError> {
        let p = S::of(self.config.dropout_prenet);
        let mut x = frames;
        for a in self.layout.prenet {
            let mut sub = ChaCha8Rng::seed_from_u64(rng.random());
            x = self.affine(g, x, a)?;
            x = g.relu(x);
            x = g.dropout(x, p, true, &mut sub)?;
        }
        Ok(x)
    }

    /// Decoder input frames for teacher forcing: a zero go frame followed by
    /// the last target frame of each preceding step.
    pub fn shifted_inputs(&self, targets: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
        let r = self.config.frames_per_step;
        let (t, d) = (targets.rows(), targets.cols());
        if t == 0 || t % r != 0 || d != self.config.feature_dim {
            return Err(TensorError::Dimension {
                op: "decode",
                left: targets.shape().to_vec(),
                right: vec![r, self.config.feature_dim],
            });
        }
        let steps = t / r;
        let mut data = vec![S::zero(); steps * d];
        for s in 1..steps {
            data[s * d..(s + 1) * d].copy_from_slice(targets.row(s * r - 1));
        }
        Tensor::new(&[steps, d], data)
    }

    /// Decoder stack over already-computed prenet outputs (`steps×bottleneck`).
    /// Returns `steps×d_model` states and the cross-attention weights.
    pub fn decoder_states(
        &self,
        g: G<'_, '_, S>,
        encoded: Var,
        prenet_out: Var,
        reference: Var,
    ) -> Result<(Var, Vec<Var>), TensorError> {
        let steps = g.value(prenet_out).rows();
        let x = self.affine(g, prenet_out, self.layout.decoder_input)?;
        let r = self.affine(g, reference, self.layout.decoder_reference)?;
        let x = g.add_row(x, r)?;
        let alpha = g.param(self.layout.decoder_alpha);
        let mut x = self.add_positions(g, x, alpha, self.layout.decoder_pos_norm)?;
        let mask = if steps > 1 {
            let neg = S::of(-1e9);
            let m = Tensor::from_fn(steps, steps, |i, j| if j > i { neg } else { S::zero() });
            Some(g.constant(m))
        } else {
            None
        };
        let mut attn = Vec::new();
        for layer in &self.layout.decoder {
            let h = self.norm(g, x, layer.norm1)?;
            let h = self.attention(g, h, h, layer.self_attn, mask, None)?;
            x = g.add(x, h)?;
            let h = self.norm(g, x, layer.norm2)?;
            let h = self.attention(g, h, encoded, layer.cross_attn, None, Some(&mut attn))?;
            x = g.add(x, h)?;
            let h = self.norm(g, x, layer.norm3)?;
            let h = self.feed_forward(g, h, layer.ff)?;
            x = g.add(x, h)?;
        }
        Ok((self.norm(g, x, self.layout.decoder_final)?, attn))
    }

    /// Frame predictions `(steps·r)×D` and stop logits `steps·r` from decoder states.
    pub fn project(&self, g: G<'_, '_, S>, states: Var) -> Result<(Var, Var), TensorError> {
        let steps = g.value(states).rows();
        let r = self.config.frames_per_step;
        let mel = self.affine(g, states, self.layout.mel_out)?;
        let mel = g.reshape(mel, &[steps * r, self.config.feature_dim])?;
        let stop = self.affine(g, states, self.layout.stop_out)?;
        let stop = g.reshape(stop, &[steps * r])?;
        Ok((mel, stop))
    }

    /// Residual convolutional refinement. `row_mask` zeroes padded frames in
    /// front of every layer so they cannot leak into real frames.
    pub fn postnet(&self, g: G<'_, '_, S>, pre: Var, row_mask: Option<&[S]>) -> Result<Var, TensorError> {
        let rows = g.value(pre).rows();
        let mask = |g: &mut Graph<'_, S>, width: usize| -> Result<Option<Var>, TensorError> {
            match row_mask {
                Some(m) if m.iter().any(|&w| w == S::zero()) => {
                    if m.len() != rows {
                        return Err(TensorError::Dimension {
                            op: "postnet",
                            left: vec![rows],
                            right: vec![m.len()],
                        });
                    }
                    let t = Tensor::from_fn(rows, width, |i, _| m[i]);
                    Ok(Some(g.constant(t)))
                }
                _ => Ok(None),
            }
        };
        let n = self.layout.postnet.len();
        let mut x = pre;
        for (j, a) in self.layout.postnet.iter().enumerate() {
            let width = g.value(x).cols();
            if let Some(m) = mask(g, width)? {
                x = g.mul(x, m)?;
            }
            let k = g.param(a.w);
            let b = g.param(a.b);
            x = g.conv1d(x, k, b)?;
            if j + 1 < n {
                x = g.tanh(x);
            }
        }
        g.add(pre, x)
    }

    /// Teacher-forced pass: the decoder sees the previous target frames.
    /// `targets` must hold a multiple of `frames_per_step` rows.
    pub fn decode_teacher_forced<R: Rng + ?Sized>(
        &self,
        g: G<'_, '_, S>,
        encoded: Var,
        targets: &Tensor<S>,
        reference: Var,
        row_mask: Option<&[S]>,
        rng: &mut R,
    ) -> Result<DecoderOutput, TensorError> {
        let inputs = self.shifted_inputs(targets)?;
        let inputs = g.constant(inputs);
        let pn = self.prenet(g, inputs, rng)?;
        let (states, cross_attention) = self.decoder_states(g, encoded, pn, reference)?;
        let (pre, stop) = self.project(g, states)?;
        let post = self.postnet(g, pre, row_mask)?;
        Ok(DecoderOutput {
            pre,
            post,
            stop,
            cross_attention,
        })
    }
}

/// `L1(pre) + L1(post) + λ·BCE(stop)` with mean reductions over the rows
/// whose weight is non-zero.
#[allow(clippy::too_many_arguments)]
pub fn compute_loss<S: Real>(
    g: &mut Graph<'_, S>,
    pre: Var,
    post: Var,
    stop: Var,
    targets: Var,
    stop_targets: &[S],
    row_weights: &[S],
    lambda_stop: S,
    pos_weight: S,
) -> Result<LossParts, TensorError> {
    let l_pre = g.l1_loss_masked(pre, targets, row_weights)?;
    let l_post = g.l1_loss_masked(post, targets, row_weights)?;
    let l_stop = g.bce_with_logits(stop, stop_targets, row_weights, pos_weight)?;
    let mel = g.add(l_pre, l_post)?;
    let total = if lambda_stop == S::zero() {
        mel
    } else {
        let s = g.scale(l_stop, lambda_stop);
        g.add(mel, s)?
    };
    Ok(LossParts {
        total,
        pre: l_pre,
        post: l_post,
        stop: l_stop,
    })
}

/// Diagonal prior on cross-attention: penalizes weight far from
/// `n/N ≈ s/S`. Only the first `valid_steps` rows count.
pub fn guided_attention_loss<S: Real>(
    g: &mut Graph<'_, S>,
    attention: &[Var],
    valid_steps: usize,
    width: f64,
) -> Result<Var, TensorError> {
    let Some(&first) = attention.first() else {
        return Err(TensorError::Usage("no attention maps"));
    };
    let (steps, len) = (g.value(first).rows(), g.value(first).cols());
    let valid = valid_steps.clamp(1, steps);
    let w = Tensor::from_fn(steps, len, |s, n| {
        if s >= valid {
            return S::zero();
        }
        let a = (n as f64 + 0.5) / len as f64 - (s as f64 + 0.5) / valid as f64;
        S::of(1.0 - libm::exp(-(a * a) / (2.0 * width * width)))
    });
    let w = g.constant(w);
    let mut acc: Option<Var> = None;
    for &a in attention {
        let m = g.mul(a, w)?;
        let s = g.sum(m);
        acc = Some(match acc {
            Some(prev) => g.add(prev, s)?,
            None => s,
        });
    }
    let total = acc.expect("non-empty");
    Ok(g.scale(total, S::of(1.0 / (attention.len() * valid) as f64)))
}
