//! Trainable parameter store with a fixed visit order.
//!
//! Everything that touches parameters in sequence (init, Adam state,
//! checkpoint io) relies on `for_each`/`for_each_mut` visiting arrays in
//! one deterministic order.

use super::config::ModelConfig;
use crate::autodiff::{Array, Real};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Shared-encoder baseline vs the dual-encoder architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Shared,
    Dual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams<F> {
    pub wq: Array<F>,
    pub bq: Array<F>,
    pub wk: Array<F>,
    pub bk: Array<F>,
    pub wv: Array<F>,
    pub bv: Array<F>,
    pub wo: Array<F>,
    pub bo: Array<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FftBlockParams<F> {
    pub attn: AttentionParams<F>,
    pub ln1_gain: Array<F>,
    pub ln1_bias: Array<F>,
    pub conv1_w: Array<F>,
    pub conv1_b: Array<F>,
    pub conv2_w: Array<F>,
    pub conv2_b: Array<F>,
    pub proj_w: Array<F>,
    pub proj_b: Array<F>,
    pub ln2_gain: Array<F>,
    pub ln2_bias: Array<F>,
}

/// Two conv layers (ReLU + layer norm each) and a linear head; used by the
/// length predictor and the pitch classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStackParams<F> {
    pub conv1_w: Array<F>,
    pub conv1_b: Array<F>,
    pub ln1_gain: Array<F>,
    pub ln1_bias: Array<F>,
    pub conv2_w: Array<F>,
    pub conv2_b: Array<F>,
    pub ln2_gain: Array<F>,
    pub ln2_bias: Array<F>,
    pub out_w: Array<F>,
    pub out_b: Array<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub arch: Arch,
    pub phoneme_emb: Array<F>,
    pub pitch_emb: Array<F>,
    pub dur_emb: Array<F>,
    /// Phoneme encoder; for [`Arch::Shared`] this is the single encoder.
    pub encoder_pho: Vec<FftBlockParams<F>>,
    /// Pitch encoder; empty for [`Arch::Shared`].
    pub encoder_pit: Vec<FftBlockParams<F>>,
    pub decoder: Vec<FftBlockParams<F>>,
    pub mel_w: Array<F>,
    pub mel_b: Array<F>,
    pub predictor: ConvStackParams<F>,
    /// Present for dual models only.
    pub classifier: Option<ConvStackParams<F>>,
}

enum Kind {
    Weight { fan_in: usize },
    Bias { fan_in: usize },
    Gain,
    Embedding,
}

trait Maker<F: Real> {
    fn make(&mut self, shape: &[usize], kind: Kind) -> Array<F>;
}

struct ZeroMaker;
impl<F: Real> Maker<F> for ZeroMaker {
    fn make(&mut self, shape: &[usize], _kind: Kind) -> Array<F> {
        Array::zeros(shape)
    }
}

/// Weights and biases uniform in +-sqrt(1/fan_in); embeddings N(0, 0.02^2);
/// layer norm gains 1 and biases 0.
struct RandomMaker {
    rng: ChaCha8Rng,
}

impl<F: Real> Maker<F> for RandomMaker {
    fn make(&mut self, shape: &[usize], kind: Kind) -> Array<F> {
        let n: usize = shape.iter().product();
        let data: Vec<F> = match kind {
            Kind::Weight { fan_in } | Kind::Bias { fan_in } => {
                let bound = (1.0 / fan_in as f64).sqrt();
                (0..n).map(|_| F::from_f64(self.rng.gen_range(-bound..bound))).collect()
            }
            Kind::Gain => vec![F::one(); n],
            Kind::Embedding => (0..n)
                .map(|_| {
                    // Box-Muller from two uniforms keeps the stream portable.
                    let u1: f64 = self.rng.gen_range(f64::MIN_POSITIVE..1.0);
                    let u2: f64 = self.rng.gen_range(0.0..1.0);
                    let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                    F::from_f64(0.02 * z)
                })
                .collect(),
        };
        Array::new(shape.to_vec(), data)
    }
}

fn make_block<F: Real>(cfg: &ModelConfig, heads: usize, mk: &mut dyn Maker<F>) -> FftBlockParams<F> {
    let d = cfg.embed_dim;
    let hd = heads * cfg.head_size;
    let k = cfg.conv_kernel;
    let (c1, c2) = cfg.conv_hidden;
    FftBlockParams {
        attn: AttentionParams {
            wq: mk.make(&[d, hd], Kind::Weight { fan_in: d }),
            bq: mk.make(&[hd], Kind::Bias { fan_in: d }),
            wk: mk.make(&[d, hd], Kind::Weight { fan_in: d }),
            bk: mk.make(&[hd], Kind::Bias { fan_in: d }),
            wv: mk.make(&[d, hd], Kind::Weight { fan_in: d }),
            bv: mk.make(&[hd], Kind::Bias { fan_in: d }),
            wo: mk.make(&[hd, d], Kind::Weight { fan_in: hd }),
            bo: mk.make(&[d], Kind::Bias { fan_in: hd }),
        },
        ln1_gain: mk.make(&[d], Kind::Gain),
        ln1_bias: mk.make(&[d], Kind::Bias { fan_in: d }),
        conv1_w: mk.make(&[k * d, c1], Kind::Weight { fan_in: k * d }),
        conv1_b: mk.make(&[c1], Kind::Bias { fan_in: k * d }),
        conv2_w: mk.make(&[k * c1, c2], Kind::Weight { fan_in: k * c1 }),
        conv2_b: mk.make(&[c2], Kind::Bias { fan_in: k * c1 }),
        proj_w: mk.make(&[c2, d], Kind::Weight { fan_in: c2 }),
        proj_b: mk.make(&[d], Kind::Bias { fan_in: c2 }),
        ln2_gain: mk.make(&[d], Kind::Gain),
        ln2_bias: mk.make(&[d], Kind::Bias { fan_in: d }),
    }
}

fn make_conv_stack<F: Real>(
    in_dim: usize,
    hidden: (usize, usize),
    kernel: usize,
    out_dim: usize,
    mk: &mut dyn Maker<F>,
) -> ConvStackParams<F> {
    let (c1, c2) = hidden;
    ConvStackParams {
        conv1_w: mk.make(&[kernel * in_dim, c1], Kind::Weight { fan_in: kernel * in_dim }),
        conv1_b: mk.make(&[c1], Kind::Bias { fan_in: kernel * in_dim }),
        ln1_gain: mk.make(&[c1], Kind::Gain),
        ln1_bias: mk.make(&[c1], Kind::Bias { fan_in: c1 }),
        conv2_w: mk.make(&[kernel * c1, c2], Kind::Weight { fan_in: kernel * c1 }),
        conv2_b: mk.make(&[c2], Kind::Bias { fan_in: kernel * c1 }),
        ln2_gain: mk.make(&[c2], Kind::Gain),
        ln2_bias: mk.make(&[c2], Kind::Bias { fan_in: c2 }),
        out_w: mk.make(&[c2, out_dim], Kind::Weight { fan_in: c2 }),
        out_b: mk.make(&[out_dim], Kind::Bias { fan_in: c2 }),
    }
}

impl<F: Real> ModelParams<F> {
    fn build(cfg: &ModelConfig, arch: Arch, mk: &mut dyn Maker<F>) -> Self {
        let d = cfg.embed_dim;
        let phoneme_emb = mk.make(&[cfg.phoneme_vocab, d], Kind::Embedding);
        let pitch_emb = mk.make(&[cfg.pitch_vocab, d], Kind::Embedding);
        let dur_emb = mk.make(&[cfg.duration_buckets, d], Kind::Embedding);
        let encoder_pho: Vec<_> = (0..cfg.encoder_blocks).map(|_| make_block(cfg, cfg.encoder_heads, mk)).collect();
        let encoder_pit: Vec<_> = match arch {
            Arch::Dual => (0..cfg.encoder_blocks).map(|_| make_block(cfg, cfg.encoder_heads, mk)).collect(),
            Arch::Shared => Vec::new(),
        };
        let decoder: Vec<_> = (0..cfg.decoder_blocks).map(|_| make_block(cfg, cfg.decoder_heads, mk)).collect();
        let mel_w = mk.make(&[d, cfg.mel_dim], Kind::Weight { fan_in: d });
        let mel_b = mk.make(&[cfg.mel_dim], Kind::Bias { fan_in: d });
        let predictor = make_conv_stack(d, (cfg.predictor_hidden, cfg.predictor_hidden), cfg.predictor_kernel, 1, mk);
        let classifier = match arch {
            Arch::Dual => Some(make_conv_stack(
                d,
                cfg.classifier_hidden,
                cfg.classifier_kernel,
                cfg.classifier_classes,
                mk,
            )),
            Arch::Shared => None,
        };
        ModelParams {
            arch,
            phoneme_emb,
            pitch_emb,
            dur_emb,
            encoder_pho,
            encoder_pit,
            decoder,
            mel_w,
            mel_b,
            predictor,
            classifier,
        }
    }

    /// Fresh random initialization, deterministic in `seed`.
    pub fn init(cfg: &ModelConfig, arch: Arch, seed: u64) -> Self {
        let mut mk = RandomMaker { rng: rng::stream(seed, "params") };
        Self::build(cfg, arch, &mut mk)
    }

    /// All-zero parameter set with the right shapes (checkpoint loading).
    pub fn zeros(cfg: &ModelConfig, arch: Arch) -> Self {
        Self::build(cfg, arch, &mut ZeroMaker)
    }

    pub fn convert<G: Real>(&self) -> ModelParams<G> {
        let mut out = ModelParams::<G>::zeros_like(self);
        let mut srcs: Vec<Array<G>> = Vec::new();
        self.for_each(&mut |_, a| srcs.push(a.convert()));
        let mut it = srcs.into_iter();
        out.for_each_mut(&mut |_, a| *a = it.next().expect("same visit order"));
        out
    }

    fn zeros_like<G: Real>(&self) -> ModelParams<G> {
        let zero = |a: &Array<F>| Array::<G>::zeros(a.shape());
        ModelParams {
            arch: self.arch,
            phoneme_emb: zero(&self.phoneme_emb),
            pitch_emb: zero(&self.pitch_emb),
            dur_emb: zero(&self.dur_emb),
            encoder_pho: self.encoder_pho.iter().map(|b| zero_block(b)).collect(),
            encoder_pit: self.encoder_pit.iter().map(|b| zero_block(b)).collect(),
            decoder: self.decoder.iter().map(|b| zero_block(b)).collect(),
            mel_w: zero(&self.mel_w),
            mel_b: zero(&self.mel_b),
            predictor: zero_stack(&self.predictor),
            classifier: self.classifier.as_ref().map(|c| zero_stack(c)),
        }
    }

    /// Visits every array as (name, array) in the fixed global order.
    pub fn for_each(&self, f: &mut dyn FnMut(&str, &Array<F>)) {
        f("phoneme_emb", &self.phoneme_emb);
        f("pitch_emb", &self.pitch_emb);
        f("dur_emb", &self.dur_emb);
        for (i, b) in self.encoder_pho.iter().enumerate() {
            visit_block(&format!("enc_pho.{i}"), b, f);
        }
        for (i, b) in self.encoder_pit.iter().enumerate() {
            visit_block(&format!("enc_pit.{i}"), b, f);
        }
        for (i, b) in self.decoder.iter().enumerate() {
            visit_block(&format!("dec.{i}"), b, f);
        }
        f("mel.w", &self.mel_w);
        f("mel.b", &self.mel_b);
        visit_stack("predictor", &self.predictor, f);
        if let Some(c) = &self.classifier {
            visit_stack("classifier", c, f);
        }
    }

    pub fn for_each_mut(&mut self, f: &mut dyn FnMut(&str, &mut Array<F>)) {
        f("phoneme_emb", &mut self.phoneme_emb);
        f("pitch_emb", &mut self.pitch_emb);
        f("dur_emb", &mut self.dur_emb);
        for (i, b) in self.encoder_pho.iter_mut().enumerate() {
            visit_block_mut(&format!("enc_pho.{i}"), b, f);
        }
        for (i, b) in self.encoder_pit.iter_mut().enumerate() {
            visit_block_mut(&format!("enc_pit.{i}"), b, f);
        }
        for (i, b) in self.decoder.iter_mut().enumerate() {
            visit_block_mut(&format!("dec.{i}"), b, f);
        }
        f("mel.w", &mut self.mel_w);
        f("mel.b", &mut self.mel_b);
        visit_stack_mut("predictor", &mut self.predictor, f);
        if let Some(c) = &mut self.classifier {
            visit_stack_mut("classifier", c, f);
        }
    }

    pub fn n_arrays(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, _| n += 1);
        n
    }

    pub fn n_values(&self) -> usize {
        let mut n = 0;
        self.for_each(&mut |_, a| n += a.numel());
        n
    }

    /// Finiteness check; names the first offending array.
    pub fn check_finite(&self) -> Result<()> {
        let mut bad: Option<String> = None;
        self.for_each(&mut |name, a| {
            if bad.is_none() && a.data().iter().any(|v| !v.into_f64().is_finite()) {
                bad = Some(name.to_string());
            }
        });
        match bad {
            Some(name) => Err(Error::Divergence(format!("parameter {name} contains non-finite values"))),
            None => Ok(()),
        }
    }
}

fn zero_block<F: Real, G: Real>(b: &FftBlockParams<F>) -> FftBlockParams<G> {
    let z = |a: &Array<F>| Array::<G>::zeros(a.shape());
    FftBlockParams {
        attn: AttentionParams {
            wq: z(&b.attn.wq),
            bq: z(&b.attn.bq),
            wk: z(&b.attn.wk),
            bk: z(&b.attn.bk),
            wv: z(&b.attn.wv),
            bv: z(&b.attn.bv),
            wo: z(&b.attn.wo),
            bo: z(&b.attn.bo),
        },
        ln1_gain: z(&b.ln1_gain),
        ln1_bias: z(&b.ln1_bias),
        conv1_w: z(&b.conv1_w),
        conv1_b: z(&b.conv1_b),
        conv2_w: z(&b.conv2_w),
        conv2_b: z(&b.conv2_b),
        proj_w: z(&b.proj_w),
        proj_b: z(&b.proj_b),
        ln2_gain: z(&b.ln2_gain),
        ln2_bias: z(&b.ln2_bias),
    }
}

fn zero_stack<F: Real, G: Real>(c: &ConvStackParams<F>) -> ConvStackParams<G> {
    let z = |a: &Array<F>| Array::<G>::zeros(a.shape());
    ConvStackParams {
        conv1_w: z(&c.conv1_w),
        conv1_b: z(&c.conv1_b),
        ln1_gain: z(&c.ln1_gain),
        ln1_bias: z(&c.ln1_bias),
        conv2_w: z(&c.conv2_w),
        conv2_b: z(&c.conv2_b),
        ln2_gain: z(&c.ln2_gain),
        ln2_bias: z(&c.ln2_bias),
        out_w: z(&c.out_w),
        out_b: z(&c.out_b),
    }
}

fn visit_block<F: Real>(prefix: &str, b: &FftBlockParams<F>, f: &mut dyn FnMut(&str, &Array<F>)) {
    f(&format!("{prefix}.attn.wq"), &b.attn.wq);
    f(&format!("{prefix}.attn.bq"), &b.attn.bq);
    f(&format!("{prefix}.attn.wk"), &b.attn.wk);
    f(&format!("{prefix}.attn.bk"), &b.attn.bk);
    f(&format!("{prefix}.attn.wv"), &b.attn.wv);
    f(&format!("{prefix}.attn.bv"), &b.attn.bv);
    f(&format!("{prefix}.attn.wo"), &b.attn.wo);
    f(&format!("{prefix}.attn.bo"), &b.attn.bo);
    f(&format!("{prefix}.ln1.gain"), &b.ln1_gain);
    f(&format!("{prefix}.ln1.bias"), &b.ln1_bias);
    f(&format!("{prefix}.conv1.w"), &b.conv1_w);
    f(&format!("{prefix}.conv1.b"), &b.conv1_b);
    f(&format!("{prefix}.conv2.w"), &b.conv2_w);
    f(&format!("{prefix}.conv2.b"), &b.conv2_b);
    f(&format!("{prefix}.proj.w"), &b.proj_w);
    f(&format!("{prefix}.proj.b"), &b.proj_b);
    f(&format!("{prefix}.ln2.gain"), &b.ln2_gain);
    f(&format!("{prefix}.ln2.bias"), &b.ln2_bias);
}

fn visit_block_mut<F: Real>(prefix: &str, b: &mut FftBlockParams<F>, f: &mut dyn FnMut(&str, &mut Array<F>)) {
    f(&format!("{prefix}.attn.wq"), &mut b.attn.wq);
    f(&format!("{prefix}.attn.bq"), &mut b.attn.bq);
    f(&format!("{prefix}.attn.wk"), &mut b.attn.wk);
    f(&format!("{prefix}.attn.bk"), &mut b.attn.bk);
    f(&format!("{prefix}.attn.wv"), &mut b.attn.wv);
    f(&format!("{prefix}.attn.bv"), &mut b.attn.bv);
    f(&format!("{prefix}.attn.wo"), &mut b.attn.wo);
    f(&format!("{prefix}.attn.bo"), &mut b.attn.bo);
    f(&format!("{prefix}.ln1.gain"), &mut b.ln1_gain);
    f(&format!("{prefix}.ln1.bias"), &mut b.ln1_bias);
    f(&format!("{prefix}.conv1.w"), &mut b.conv1_w);
    f(&format!("{prefix}.conv1.b"), &mut b.conv1_b);
    f(&format!("{prefix}.conv2.w"), &mut b.conv2_w);
    f(&format!("{prefix}.conv2.b"), &mut b.conv2_b);
    f(&format!("{prefix}.proj.w"), &mut b.proj_w);
    f(&format!("{prefix}.proj.b"), &mut b.proj_b);
    f(&format!("{prefix}.ln2.gain"), &mut b.ln2_gain);
    f(&format!("{prefix}.ln2.bias"), &mut b.ln2_bias);
}

fn visit_stack<F: Real>(prefix: &str, c: &ConvStackParams<F>, f: &mut dyn FnMut(&str, &Array<F>)) {
    f(&format!("{prefix}.conv1.w"), &c.conv1_w);
    f(&format!("{prefix}.conv1.b"), &c.conv1_b);
    f(&format!("{prefix}.ln1.gain"), &c.ln1_gain);
    f(&format!("{prefix}.ln1.bias"), &c.ln1_bias);
    f(&format!("{prefix}.conv2.w"), &c.conv2_w);
    f(&format!("{prefix}.conv2.b"), &c.conv2_b);
    f(&format!("{prefix}.ln2.gain"), &c.ln2_gain);
    f(&format!("{prefix}.ln2.bias"), &c.ln2_bias);
    f(&format!("{prefix}.out.w"), &c.out_w);
    f(&format!("{prefix}.out.b"), &c.out_b);
}

fn visit_stack_mut<F: Real>(prefix: &str, c: &mut ConvStackParams<F>, f: &mut dyn FnMut(&str, &mut Array<F>)) {
    f(&format!("{prefix}.conv1.w"), &mut c.conv1_w);
    f(&format!("{prefix}.conv1.b"), &mut c.conv1_b);
    f(&format!("{prefix}.ln1.gain"), &mut c.ln1_gain);
    f(&format!("{prefix}.ln1.bias"), &mut c.ln1_bias);
    f(&format!("{prefix}.conv2.w"), &mut c.conv2_w);
    f(&format!("{prefix}.conv2.b"), &mut c.conv2_b);
    f(&format!("{prefix}.ln2.gain"), &mut c.ln2_gain);
    f(&format!("{prefix}.ln2.bias"), &mut c.ln2_bias);
    f(&format!("{prefix}.out.w"), &mut c.out_w);
    f(&format!("{prefix}.out.b"), &mut c.out_b);
}
