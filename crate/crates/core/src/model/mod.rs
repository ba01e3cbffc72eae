//! The acoustic network: twin FFT-block encoders over phoneme and pitch
//! ids, a length regulator driven by phoneme durations, an FFT-block mel
//! decoder, a conv length predictor, and the GRL-fronted pitch classifier.

mod checkpoint;
mod config;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use params::{Arch, AttentionParams, ConvStackParams, FftBlockParams, ModelParams};

use crate::autodiff::{Array, Graph, Real, Tensor, ATTN_MASK_VALUE};
use crate::error::{Error, Result};
use std::collections::HashMap;

/// Sinusoidal positional table for `n` positions of width `d`.
pub fn sinusoidal_pe<F: Real>(n: usize, d: usize) -> Array<F> {
    let mut out = Array::zeros(&[n, d]);
    let data = out.data_mut();
    for pos in 0..n {
        for i in 0..d {
            let exponent = 2.0 * (i / 2) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            data[pos * d + i] = F::from_f64(v);
        }
    }
    out
}

/// Dropout layer-id allocator; ids follow graph construction order, which
/// is fixed for a given config, so masks are reproducible step to step.
struct LayerIds {
    next: u64,
}

impl LayerIds {
    fn new() -> Self {
        LayerIds { next: 0 }
    }

    fn next(&mut self) -> u64 {
        self.next += 1;
        self.next
    }
}

// ---------------------------------------------------------------------------
// Parameters staged into a graph
// ---------------------------------------------------------------------------

pub struct GpAttention {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

pub struct GpBlock {
    pub attn: GpAttention,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
}

pub struct GpStack {
    pub conv1_w: Tensor,
    pub conv1_b: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub conv2_w: Tensor,
    pub conv2_b: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub out_w: Tensor,
    pub out_b: Tensor,
}

/// Model parameters inserted into a graph, plus the flat tensor list in
/// parameter visit order (the trainer reads gradients through it).
pub struct GraphParams {
    pub arch: Arch,
    pub phoneme_emb: Tensor,
    pub pitch_emb: Tensor,
    pub dur_emb: Tensor,
    pub encoder_pho: Vec<GpBlock>,
    pub encoder_pit: Vec<GpBlock>,
    pub decoder: Vec<GpBlock>,
    pub mel_w: Tensor,
    pub mel_b: Tensor,
    pub predictor: GpStack,
    pub classifier: Option<GpStack>,
    pub ordered: Vec<Tensor>,
}

impl GraphParams {
    /// Rebuilds the structured view from tensors listed in parameter visit
    /// order (the order `ModelParams::for_each` uses).
    pub fn from_ordered(
        arch: Arch,
        n_encoder_blocks: usize,
        n_decoder_blocks: usize,
        has_classifier: bool,
        ordered: Vec<Tensor>,
    ) -> Result<Self> {
        let mut cur = ordered.iter().copied();
        let mut next = || cur.next().ok_or_else(|| Error::contract("parameter tensor list too short"));
        let mut block = |next: &mut dyn FnMut() -> Result<Tensor>| -> Result<GpBlock> {
            Ok(GpBlock {
                attn: GpAttention {
                    wq: next()?,
                    bq: next()?,
                    wk: next()?,
                    bk: next()?,
                    wv: next()?,
                    bv: next()?,
                    wo: next()?,
                    bo: next()?,
                },
                ln1_gain: next()?,
                ln1_bias: next()?,
                conv1_w: next()?,
                conv1_b: next()?,
                conv2_w: next()?,
                conv2_b: next()?,
                proj_w: next()?,
                proj_b: next()?,
                ln2_gain: next()?,
                ln2_bias: next()?,
            })
        };
        let stack = |next: &mut dyn FnMut() -> Result<Tensor>| -> Result<GpStack> {
            Ok(GpStack {
                conv1_w: next()?,
                conv1_b: next()?,
                ln1_gain: next()?,
                ln1_bias: next()?,
                conv2_w: next()?,
                conv2_b: next()?,
                ln2_gain: next()?,
                ln2_bias: next()?,
                out_w: next()?,
                out_b: next()?,
            })
        };

        let phoneme_emb = next()?;
        let pitch_emb = next()?;
        let dur_emb = next()?;
        let encoder_pho = (0..n_encoder_blocks).map(|_| block(&mut next)).collect::<Result<Vec<_>>>()?;
        let encoder_pit = match arch {
            Arch::Dual => (0..n_encoder_blocks).map(|_| block(&mut next)).collect::<Result<Vec<_>>>()?,
            Arch::Shared => Vec::new(),
        };
        let decoder = (0..n_decoder_blocks).map(|_| block(&mut next)).collect::<Result<Vec<_>>>()?;
        let mel_w = next()?;
        let mel_b = next()?;
        let predictor = stack(&mut next)?;
        let classifier = if has_classifier { Some(stack(&mut next)?) } else { None };
        if cur.next().is_some() {
            return Err(Error::contract("parameter tensor list too long"));
        }
        Ok(GraphParams {
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
            ordered,
        })
    }
}

/// Inserts every parameter array into the graph, as leaves when
/// `trainable`, in the same order `ModelParams::for_each` visits them.
pub fn stage_params<F: Real>(g: &mut Graph<F>, p: &ModelParams<F>, trainable: bool) -> GraphParams {
    let mut ordered = Vec::new();
    p.for_each(&mut |_, a| {
        let t = if trainable { g.leaf(a.clone()) } else { g.constant(a.clone()) };
        ordered.push(t);
    });
    GraphParams::from_ordered(
        p.arch,
        p.encoder_pho.len(),
        p.decoder.len(),
        p.classifier.is_some(),
        ordered,
    )
    .expect("visit order matches structure")
}

// ---------------------------------------------------------------------------
// Sequence masks
// ---------------------------------------------------------------------------

/// Per-position padding state of a (possibly batched) sequence, with cached
/// multiplicative mask tensors per channel width.
struct SeqMask {
    b: usize,
    n: usize,
    mask: Vec<bool>,
    all_real: bool,
    batched: bool,
    cache: HashMap<usize, Tensor>,
    attn: Option<Tensor>,
}

impl SeqMask {
    fn new<F: Real>(g: &mut Graph<F>, b: usize, n: usize, mask: &[bool], batched: bool) -> Result<Self> {
        assert_eq!(mask.len(), b * n);
        let all_real = mask.iter().all(|&m| m);
        let attn = if all_real {
            None
        } else {
            // Additive attention mask: 0 on real keys, -1e9 on padded keys,
            // identical for every query row.
            let shape = if batched { vec![b, n, n] } else { vec![n, n] };
            let mut a = Array::zeros(&shape);
            let data = a.data_mut();
            let neg = F::from_f64(ATTN_MASK_VALUE);
            for bi in 0..b {
                for q in 0..n {
                    for k in 0..n {
                        if !mask[bi * n + k] {
                            data[(bi * n + q) * n + k] = neg;
                        }
                    }
                }
            }
            Some(g.constant(a))
        };
        Ok(SeqMask { b, n, mask: mask.to_vec(), all_real, batched, cache: HashMap::new(), attn })
    }

    fn unmasked<F: Real>(_g: &mut Graph<F>, b: usize, n: usize, batched: bool) -> Self {
        SeqMask { b, n, mask: vec![true; b * n], all_real: true, batched, cache: HashMap::new(), attn: None }
    }

    /// Multiplicative zero mask with `channels` trailing width, or None when
    /// nothing is padded.
    fn zero_mask<F: Real>(&mut self, g: &mut Graph<F>, channels: usize) -> Option<Tensor> {
        if self.all_real {
            return None;
        }
        if let Some(&t) = self.cache.get(&channels) {
            return Some(t);
        }
        let shape = if self.batched { vec![self.b, self.n, channels] } else { vec![self.n, channels] };
        let mut a = Array::zeros(&shape);
        for (i, &real) in self.mask.iter().enumerate() {
            if real {
                a.data_mut()[i * channels..(i + 1) * channels].fill(F::one());
            }
        }
        let t = g.constant(a);
        self.cache.insert(channels, t);
        Some(t)
    }

    fn apply<F: Real>(&mut self, g: &mut Graph<F>, x: Tensor) -> Result<Tensor> {
        let channels = *g.shape(x).last().expect("masked tensors have a channel axis");
        match self.zero_mask(g, channels) {
            Some(m) => g.mul(x, m),
            None => Ok(x),
        }
    }
}

// ---------------------------------------------------------------------------
// Building blocks
// ---------------------------------------------------------------------------

fn attention<F: Real>(
    g: &mut Graph<F>,
    x: Tensor,
    p: &GpAttention,
    heads: usize,
    head_size: usize,
    mask: &SeqMask,
    dropout_attn: f64,
    layers: &mut LayerIds,
) -> Result<Tensor> {
    let q = g.linear(x, p.wq, p.bq)?;
    let k = g.linear(x, p.wk, p.bk)?;
    let v = g.linear(x, p.wv, p.bv)?;
    let scale = F::from_f64(1.0 / (head_size as f64).sqrt());
    let mut ctx = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_size, (h + 1) * head_size);
        let qh = g.slice_last(q, lo, hi)?;
        let kh = g.slice_last(k, lo, hi)?;
        let vh = g.slice_last(v, lo, hi)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let mut scores = g.scalar_mul(scores, scale);
        if let Some(am) = mask.attn {
            scores = g.add(scores, am)?;
        }
        let probs = g.softmax(scores);
        let probs = g.dropout(probs, dropout_attn, layers.next());
        ctx.push(g.matmul(probs, vh)?);
    }
    let cat = if ctx.len() == 1 { ctx[0] } else { g.concat(&ctx)? };
    g.linear(cat, p.wo, p.bo)
}

/// One FFT block: self-attention and a conv sublayer, each with residual
/// connection and post layer norm. Conv inputs are zero-masked so padded
/// rows reproduce the "same" zero padding an unpadded run would see.
fn fft_block<F: Real>(
    g: &mut Graph<F>,
    x: Tensor,
    blk: &GpBlock,
    cfg: &ModelConfig,
    heads: usize,
    mask: &mut SeqMask,
    layers: &mut LayerIds,
) -> Result<Tensor> {
    let att = attention(g, x, &blk.attn, heads, cfg.head_size, mask, cfg.dropout_attn, layers)?;
    let att = g.dropout(att, cfg.dropout_rest, layers.next());
    let res = g.add(x, att)?;
    let x1 = g.layer_norm(res, blk.ln1_gain, blk.ln1_bias)?;

    let xc = mask.apply(g, x1)?;
    let c1 = g.conv1d(xc, blk.conv1_w, blk.conv1_b, cfg.conv_kernel)?;
    let r1 = g.relu(c1);
    let r1 = mask.apply(g, r1)?;
    let c2 = g.conv1d(r1, blk.conv2_w, blk.conv2_b, cfg.conv_kernel)?;
    let proj = g.linear(c2, blk.proj_w, blk.proj_b)?;
    let proj = g.dropout(proj, cfg.dropout_rest, layers.next());
    let res2 = g.add(x1, proj)?;
    g.layer_norm(res2, blk.ln2_gain, blk.ln2_bias)
}

fn run_blocks<F: Real>(
    g: &mut Graph<F>,
    mut x: Tensor,
    blocks: &[GpBlock],
    cfg: &ModelConfig,
    heads: usize,
    mask: &mut SeqMask,
    layers: &mut LayerIds,
) -> Result<Tensor> {
    for blk in blocks {
        x = fft_block(g, x, blk, cfg, heads, mask, layers)?;
    }
    Ok(x)
}

/// Two conv layers (ReLU + layer norm + dropout after each) and a linear
/// head. The length predictor and the pitch classifier share this shape.
fn conv_stack<F: Real>(
    g: &mut Graph<F>,
    x: Tensor,
    p: &GpStack,
    kernel: usize,
    dropout: f64,
    mask: &mut SeqMask,
    layers: &mut LayerIds,
) -> Result<Tensor> {
    let xm = mask.apply(g, x)?;
    let c1 = g.conv1d(xm, p.conv1_w, p.conv1_b, kernel)?;
    let r1 = g.relu(c1);
    let n1 = g.layer_norm(r1, p.ln1_gain, p.ln1_bias)?;
    let n1 = g.dropout(n1, dropout, layers.next());
    let n1 = mask.apply(g, n1)?;
    let c2 = g.conv1d(n1, p.conv2_w, p.conv2_b, kernel)?;
    let r2 = g.relu(c2);
    let n2 = g.layer_norm(r2, p.ln2_gain, p.ln2_bias)?;
    let n2 = g.dropout(n2, dropout, layers.next());
    g.linear(n2, p.out_w, p.out_b)
}

fn embed_with_pe<F: Real>(
    g: &mut Graph<F>,
    table: Tensor,
    ids: &[u32],
    lead: &[usize],
    d: usize,
) -> Result<Tensor> {
    let e = g.embedding(table, ids, lead)?;
    let n = *lead.last().expect("sequence axis");
    let pe = g.constant(sinusoidal_pe::<F>(n, d));
    g.add(e, pe)
}

// ---------------------------------------------------------------------------
// Public per-sample operations
// ---------------------------------------------------------------------------

/// Phoneme encoder over one unpadded sequence: `[N] -> [N, embed_dim]`.
pub fn encode_phoneme<F: Real>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    p: &GraphParams,
    phoneme_ids: &[u32],
) -> Result<Tensor> {
    let mut layers = LayerIds::new();
    let mut mask = SeqMask::unmasked(g, 1, phoneme_ids.len(), false);
    let x = embed_with_pe(g, p.phoneme_emb, phoneme_ids, &[phoneme_ids.len()], cfg.embed_dim)?;
    run_blocks(g, x, &p.encoder_pho, cfg, cfg.encoder_heads, &mut mask, &mut layers)
}

/// Pitch encoder over one unpadded sequence: `[N] -> [N, embed_dim]`.
pub fn encode_pitch<F: Real>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    p: &GraphParams,
    pitch_ids: &[u32],
) -> Result<Tensor> {
    if p.encoder_pit.is_empty() {
        return Err(Error::contract("shared-encoder model has no pitch encoder"));
    }
    let mut layers = LayerIds::new();
    layers.next = 1_000; // separate dropout stream from the phoneme encoder
    let mut mask = SeqMask::unmasked(g, 1, pitch_ids.len(), false);
    let x = embed_with_pe(g, p.pitch_emb, pitch_ids, &[pitch_ids.len()], cfg.embed_dim)?;
    run_blocks(g, x, &p.encoder_pit, cfg, cfg.encoder_heads, &mut mask, &mut layers)
}

/// Repeats row i of `x` `frames[i]` times, preserving order.
pub fn length_regulate<F: Real>(g: &mut Graph<F>, x: Tensor, frames: &[u32]) -> Result<Tensor> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[0] != frames.len() {
        return Err(Error::Shape { op: "length_regulate", lhs: shape, rhs: vec![frames.len()] });
    }
    if let Some(pos) = frames.iter().position(|&f| f == 0) {
        return Err(Error::contract(format!("length_regulate: frame count at position {pos} must be >= 1")));
    }
    let mut idx = Vec::new();
    for (i, &f) in frames.iter().enumerate() {
        idx.extend(std::iter::repeat(i).take(f as usize));
    }
    let t = idx.len();
    g.gather_rows(x, &idx, t)
}

/// Length predictor: log-frame count per position from
/// `phoneme_repr + duration_embedding`.
pub fn predict_durations<F: Real>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    p: &GraphParams,
    phoneme_repr: Tensor,
    duration_emb: Tensor,
) -> Result<Tensor> {
    let shape = g.shape(phoneme_repr).to_vec();
    if g.shape(duration_emb) != shape.as_slice() {
        return Err(Error::Shape { op: "predict_durations", lhs: shape, rhs: g.shape(duration_emb).to_vec() });
    }
    let mut layers = LayerIds::new();
    layers.next = 2_000;
    let batched = shape.len() == 3;
    let (b, n) = if batched { (shape[0], shape[1]) } else { (1, shape[0]) };
    let mut mask = SeqMask::unmasked(g, b, n, batched);
    let x = g.add(phoneme_repr, duration_emb)?;
    let out = conv_stack(g, x, &p.predictor, cfg.predictor_kernel, cfg.dropout_predictor, &mut mask, &mut layers)?;
    let lead = if batched { vec![b, n] } else { vec![n] };
    g.reshape(out, &lead)
}

/// Mel decoder over one frame-level sequence: `[T, embed_dim] -> [T, mel]`.
pub fn decode_mel<F: Real>(g: &mut Graph<F>, cfg: &ModelConfig, p: &GraphParams, frame_repr: Tensor) -> Result<Tensor> {
    let shape = g.shape(frame_repr).to_vec();
    if shape.len() != 2 {
        return Err(Error::Shape { op: "decode_mel", lhs: shape, rhs: vec![cfg.embed_dim] });
    }
    let mut layers = LayerIds::new();
    layers.next = 3_000;
    let mut mask = SeqMask::unmasked(g, 1, shape[0], false);
    let pe = g.constant(sinusoidal_pe::<F>(shape[0], cfg.embed_dim));
    let x = g.add(frame_repr, pe)?;
    let y = run_blocks(g, x, &p.decoder, cfg, cfg.decoder_heads, &mut mask, &mut layers)?;
    g.linear(y, p.mel_w, p.mel_b)
}

/// Adversarial pitch classifier: GRL, two conv layers, linear to class
/// logits (softmax lives in the loss).
pub fn classify_pitch<F: Real>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    p: &GraphParams,
    phoneme_repr: Tensor,
) -> Result<Tensor> {
    let cls = p.classifier.as_ref().ok_or_else(|| Error::contract("model has no pitch classifier"))?;
    let shape = g.shape(phoneme_repr).to_vec();
    let batched = shape.len() == 3;
    let (b, n) = if batched { (shape[0], shape[1]) } else { (1, shape[0]) };
    let mut layers = LayerIds::new();
    layers.next = 4_000;
    let mut mask = SeqMask::unmasked(g, b, n, batched);
    let rev = g.grl(phoneme_repr);
    conv_stack(g, rev, cls, cfg.classifier_kernel, 0.0, &mut mask, &mut layers)
}

/// Converts predicted log-durations to frame counts:
/// `clamp(round(exp(x)), 1, max_frames_per_phoneme)`.
pub fn frames_from_log_dur(log_dur: &[f64], max_frames: usize) -> Vec<u32> {
    log_dur
        .iter()
        .map(|&v| (v.exp().round() as i64).clamp(1, max_frames as i64) as u32)
        .collect()
}

// ---------------------------------------------------------------------------
// Batched forward
// ---------------------------------------------------------------------------

/// Padded model inputs. All slices are row-major `[b, n]`; padded positions
/// carry id 0 / frame 0 / false mask.
pub struct BatchInputs<'a> {
    pub b: usize,
    pub n: usize,
    pub phoneme_ids: &'a [u32],
    pub pitch_ids: &'a [u8],
    pub dur_seconds: &'a [f64],
    pub frames: Option<&'a [u32]>,
    pub phoneme_mask: &'a [bool],
}

impl BatchInputs<'_> {
    fn validate(&self) -> Result<()> {
        let want = self.b * self.n;
        if self.b == 0
            || self.n == 0
            || self.phoneme_ids.len() != want
            || self.pitch_ids.len() != want
            || self.dur_seconds.len() != want
            || self.phoneme_mask.len() != want
            || self.frames.is_some_and(|f| f.len() != want)
        {
            return Err(Error::contract("batch inputs are not consistently shaped"));
        }
        Ok(())
    }
}

/// Everything the losses and evaluation need from one forward pass.
pub struct ForwardOutput {
    /// `[b, t_max, mel]` frame-level spectrogram.
    pub mel: Tensor,
    /// `[b, n]` predicted log frame counts.
    pub log_dur: Tensor,
    /// `[b, n, classes]`, present when the classifier branch ran.
    pub pitch_logits: Option<Tensor>,
    /// `[b, n, d]` pitch encoder output (dual architecture only).
    pub pitch_repr: Option<Tensor>,
    /// `[b, n, d]` phoneme (or shared) encoder output.
    pub phoneme_repr: Tensor,
    /// Frames actually fed to the length regulator, `[b, n]`.
    pub frames_used: Vec<u32>,
    /// Real-frame mask `[b, t_max]`.
    pub frame_mask: Vec<bool>,
    pub t_max: usize,
}

/// Runs the full acoustic model on a padded batch.
///
/// With `use_predicted_durations` the length regulator consumes
/// `clamp(round(exp(log_dur)), 1, max)`; otherwise ground-truth frames must
/// be present. The classifier branch runs only when `want_classifier` and
/// the architecture has one.
pub fn forward<F: Real>(
    g: &mut Graph<F>,
    cfg: &ModelConfig,
    p: &GraphParams,
    batch: &BatchInputs<'_>,
    use_predicted_durations: bool,
    want_classifier: bool,
) -> Result<ForwardOutput> {
    batch.validate()?;
    let (b, n, d) = (batch.b, batch.n, cfg.embed_dim);
    let mut layers = LayerIds::new();
    let mut mask = SeqMask::new(g, b, n, batch.phoneme_mask, true)?;

    let dur_buckets: Vec<u32> = batch.dur_seconds.iter().map(|&s| cfg.duration_bucket(s)).collect();
    let dur_e = g.embedding(p.dur_emb, &dur_buckets, &[b, n])?;

    let (phoneme_repr, pitch_repr) = match p.arch {
        Arch::Dual => {
            let pho = embed_with_pe(g, p.phoneme_emb, batch.phoneme_ids, &[b, n], d)?;
            let pho = run_blocks(g, pho, &p.encoder_pho, cfg, cfg.encoder_heads, &mut mask, &mut layers)?;
            let pit_ids: Vec<u32> = batch.pitch_ids.iter().map(|&x| u32::from(x)).collect();
            let pit = embed_with_pe(g, p.pitch_emb, &pit_ids, &[b, n], d)?;
            let pit = run_blocks(g, pit, &p.encoder_pit, cfg, cfg.encoder_heads, &mut mask, &mut layers)?;
            (pho, Some(pit))
        }
        Arch::Shared => {
            let pho_e = g.embedding(p.phoneme_emb, batch.phoneme_ids, &[b, n])?;
            let pit_ids: Vec<u32> = batch.pitch_ids.iter().map(|&x| u32::from(x)).collect();
            let pit_e = g.embedding(p.pitch_emb, &pit_ids, &[b, n])?;
            let summed = g.add(pho_e, pit_e)?;
            let summed = g.add(summed, dur_e)?;
            let pe = g.constant(sinusoidal_pe::<F>(n, d));
            let x = g.add(summed, pe)?;
            let repr = run_blocks(g, x, &p.encoder_pho, cfg, cfg.encoder_heads, &mut mask, &mut layers)?;
            (repr, None)
        }
    };

    let log_dur = {
        let x = g.add(phoneme_repr, dur_e)?;
        let mut pl = LayerIds::new();
        pl.next = 2_000;
        let out = conv_stack(g, x, &p.predictor, cfg.predictor_kernel, cfg.dropout_predictor, &mut mask, &mut pl)?;
        g.reshape(out, &[b, n])?
    };

    let frames_used: Vec<u32> = if use_predicted_durations {
        let vals: Vec<f64> = g.value(log_dur).data().iter().map(|v| v.into_f64()).collect();
        let pred = frames_from_log_dur(&vals, cfg.max_frames_per_phoneme);
        pred.iter()
            .zip(batch.phoneme_mask)
            .map(|(&f, &real)| if real { f } else { 0 })
            .collect()
    } else {
        let frames = batch
            .frames
            .ok_or_else(|| Error::contract("teacher-forced forward needs ground-truth durations"))?;
        for i in 0..b * n {
            if batch.phoneme_mask[i] && frames[i] == 0 {
                return Err(Error::contract(format!("ground-truth frame count at position {i} must be >= 1")));
            }
        }
        frames.to_vec()
    };

    // Length regulation: frame t of sample bi reads its phoneme's row.
    let t_per: Vec<usize> = (0..b)
        .map(|bi| (0..n).filter(|&i| batch.phoneme_mask[bi * n + i]).map(|i| frames_used[bi * n + i] as usize).sum())
        .collect();
    let t_max = t_per.iter().copied().max().unwrap_or(0);
    if t_max == 0 {
        return Err(Error::contract("batch expands to zero frames"));
    }
    let mut gather_idx = vec![0usize; b * t_max];
    let mut frame_mask = vec![false; b * t_max];
    for bi in 0..b {
        let mut t = 0usize;
        for i in 0..n {
            if !batch.phoneme_mask[bi * n + i] {
                continue;
            }
            for _ in 0..frames_used[bi * n + i] {
                gather_idx[bi * t_max + t] = i;
                frame_mask[bi * t_max + t] = true;
                t += 1;
            }
        }
    }

    let summed = match pitch_repr {
        Some(pit) => g.add(phoneme_repr, pit)?,
        None => phoneme_repr,
    };
    let frame_repr = g.gather_rows(summed, &gather_idx, t_max)?;
    let pe = g.constant(sinusoidal_pe::<F>(t_max, d));
    let dec_in = g.add(frame_repr, pe)?;
    let mut frame_seq = SeqMask::new(g, b, t_max, &frame_mask, true)?;
    let mut dl = LayerIds::new();
    dl.next = 3_000;
    let dec = run_blocks(g, dec_in, &p.decoder, cfg, cfg.decoder_heads, &mut frame_seq, &mut dl)?;
    let mel = g.linear(dec, p.mel_w, p.mel_b)?;

    let pitch_logits = match (&p.classifier, want_classifier) {
        (Some(cls), true) => {
            let mut cl = LayerIds::new();
            cl.next = 4_000;
            let rev = g.grl(phoneme_repr);
            Some(conv_stack(g, rev, cls, cfg.classifier_kernel, 0.0, &mut mask, &mut cl)?)
        }
        _ => None,
    };

    Ok(ForwardOutput {
        mel,
        log_dur,
        pitch_logits,
        pitch_repr,
        phoneme_repr,
        frames_used,
        frame_mask,
        t_max,
    })
}

#[cfg(test)]
mod tests;
