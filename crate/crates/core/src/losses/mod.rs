//! Training objectives: masked mel L1, duration L2 in log-frames, the
//! pitch metric loss, the prior-weighted adversarial pitch classifier
//! cross entropy, and their weighted combination.
//!
//! All losses are built on the autodiff graph so one `backward` covers the
//! whole objective. Batched losses average per sample first and then over
//! the batch, so a padded batch reproduces the mean of the per-sample
//! unpadded losses exactly.

use crate::autodiff::{Array, Graph, Real, Tensor};
use crate::error::{Error, Result};
use crate::pitch::freq_ratio;

/// Weights of the pitch metric and pitch classifier terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    pub fn new(lambda1: f64, lambda2: f64) -> Result<Self> {
        if !(lambda1.is_finite() && lambda2.is_finite() && lambda1 >= 0.0 && lambda2 >= 0.0) {
            return Err(Error::domain(format!("loss weights ({lambda1}, {lambda2}) must be finite and >= 0")));
        }
        Ok(LossWeights { lambda1, lambda2 })
    }
}

/// Inverse-frequency class weights `lambda_j = O / O_j`, fixed before
/// training; classes that never occur get weight zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeightTable {
    counts: Vec<u64>,
    weights: Vec<f64>,
    total: u64,
}

impl ClassWeightTable {
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::contract("class weights need at least one observed sample"));
        }
        let weights = counts
            .iter()
            .map(|&c| if c > 0 { total as f64 / c as f64 } else { 0.0 })
            .collect();
        Ok(ClassWeightTable { counts: counts.to_vec(), weights, total })
    }

    pub fn n_classes(&self) -> usize {
        self.weights.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn count(&self, class: usize) -> u64 {
        self.counts[class]
    }

    /// Weight of 0-based class index.
    pub fn weight(&self, class: usize) -> f64 {
        self.weights[class]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// (batch, rows-per-sample) of a `[B, N, ...]` or `[N, ...]` tensor.
fn batch_rows(shape: &[usize], rank_unbatched: usize) -> (usize, usize) {
    if shape.len() == rank_unbatched + 1 {
        (shape[0], shape[1])
    } else {
        (1, shape[0])
    }
}

/// Per-sample real-position counts from a row mask; errors when a sample is
/// entirely padding.
fn real_counts(mask: &[bool], b: usize, n: usize, what: &str) -> Result<Vec<usize>> {
    if mask.len() != b * n {
        return Err(Error::contract(format!("{what}: mask length {} != {b}x{n}", mask.len())));
    }
    let mut counts = Vec::with_capacity(b);
    for row in mask.chunks(n) {
        let c = row.iter().filter(|&&m| m).count();
        if c == 0 {
            return Err(Error::contract(format!("{what}: a batch sample has no unmasked positions")));
        }
        counts.push(c);
    }
    Ok(counts)
}

/// Mean absolute mel error over unmasked frame/bin entries.
///
/// `pred` and `target` are `[T, M]` or `[B, T, M]`; `frame_mask` has one
/// entry per (sample, frame), true at real frames.
pub fn mel_l1<F: Real>(g: &mut Graph<F>, pred: Tensor, target: Tensor, frame_mask: &[bool]) -> Result<Tensor> {
    let shape = g.shape(pred).to_vec();
    if g.shape(target) != shape.as_slice() {
        return Err(Error::Shape { op: "mel_l1", lhs: shape, rhs: g.shape(target).to_vec() });
    }
    let (b, t) = batch_rows(&shape, 2);
    let m = *shape.last().unwrap();
    let counts = real_counts(frame_mask, b, t, "mel_l1")?;
    let mut w = Array::zeros(&shape);
    for (i, chunk) in w.data_mut().chunks_mut(m).enumerate() {
        let (bi, _ti) = (i / t, i % t);
        if frame_mask[i] {
            let v = F::from_f64(1.0 / (b as f64 * counts[bi] as f64 * m as f64));
            chunk.fill(v);
        }
    }
    let w = g.constant(w);
    let diff = g.sub(pred, target)?;
    let a = g.abs(diff);
    let weighted = g.mul(a, w)?;
    Ok(g.sum(weighted))
}

/// Mean squared error between predicted log-durations and `ln(frames)`.
///
/// `log_dur_pred` is `[N]` or `[B, N]`; `true_frames` holds one frame count
/// per (sample, position), which must be >= 1 wherever the mask is true.
pub fn duration_l2<F: Real>(
    g: &mut Graph<F>,
    log_dur_pred: Tensor,
    true_frames: &[f64],
    phoneme_mask: &[bool],
) -> Result<Tensor> {
    let shape = g.shape(log_dur_pred).to_vec();
    let (b, n) = batch_rows(&shape, 1);
    if true_frames.len() != b * n {
        return Err(Error::Shape { op: "duration_l2", lhs: shape, rhs: vec![true_frames.len()] });
    }
    let counts = real_counts(phoneme_mask, b, n, "duration_l2")?;
    let mut target = Array::zeros(&shape);
    let mut w = Array::zeros(&shape);
    for i in 0..b * n {
        if phoneme_mask[i] {
            if !(true_frames[i] >= 1.0) {
                return Err(Error::contract(format!("duration_l2: frame count {} at position {i} must be >= 1", true_frames[i])));
            }
            target.data_mut()[i] = F::from_f64(true_frames[i].ln());
            w.data_mut()[i] = F::from_f64(1.0 / (b as f64 * counts[i / n] as f64));
        }
    }
    let target = g.constant(target);
    let w = g.constant(w);
    let diff = g.sub(log_dur_pred, target)?;
    let sq = g.mul(diff, diff)?;
    let weighted = g.mul(sq, w)?;
    Ok(g.sum(weighted))
}

/// Pitch metric loss: every position is contrasted with its k neighbours on
/// each side; each pair contributes the mean over embedding dims of
/// `|E(p_i) - r_ij * E(p_j)|` with `r_ij = 2^((p_i - p_j)/12)`.
///
/// Positions average over their present neighbours (edges have fewer), a
/// sample averages over its real positions, and the batch averages over
/// samples. Padding never contributes.
pub fn pitch_metric_loss<F: Real>(
    g: &mut Graph<F>,
    pitch_repr: Tensor,
    pitch_ids: &[u8],
    phoneme_mask: &[bool],
    k: usize,
) -> Result<Tensor> {
    if k == 0 {
        return Err(Error::contract("pitch_metric_loss needs k >= 1"));
    }
    let shape = g.shape(pitch_repr).to_vec();
    let (b, n) = batch_rows(&shape, 2);
    let d = *shape.last().unwrap();
    if pitch_ids.len() != b * n {
        return Err(Error::Shape { op: "pitch_metric_loss", lhs: shape, rhs: vec![pitch_ids.len()] });
    }
    let counts = real_counts(phoneme_mask, b, n, "pitch_metric_loss")?;

    // Present-neighbour count per position.
    let mut neighbors = vec![0usize; b * n];
    for bi in 0..b {
        for i in 0..n {
            if !phoneme_mask[bi * n + i] {
                continue;
            }
            let mut c = 0;
            for off in 1..=k {
                if i >= off && phoneme_mask[bi * n + i - off] {
                    c += 1;
                }
                if i + off < n && phoneme_mask[bi * n + i + off] {
                    c += 1;
                }
            }
            neighbors[bi * n + i] = c;
        }
    }

    let mut total: Option<Tensor> = None;
    for off in 1..=k {
        for dir in [-1isize, 1] {
            let delta = dir * off as isize;
            let mut idx = vec![0usize; b * n];
            let mut ratio = Array::zeros(&shape);
            let mut w = Array::zeros(&shape);
            let mut any = false;
            for bi in 0..b {
                for i in 0..n {
                    let flat = bi * n + i;
                    let j = i as isize + delta;
                    idx[flat] = i; // dummy self-gather unless the pair is valid
                    if !phoneme_mask[flat] || j < 0 || j >= n as isize {
                        continue;
                    }
                    let jflat = bi * n + j as usize;
                    if !phoneme_mask[jflat] {
                        continue;
                    }
                    idx[flat] = j as usize;
                    any = true;
                    let r = freq_ratio(pitch_ids[flat], pitch_ids[jflat]);
                    let wv = 1.0 / (b as f64 * counts[bi] as f64 * neighbors[flat] as f64 * d as f64);
                    let row = flat * d..(flat + 1) * d;
                    ratio.data_mut()[row.clone()].fill(F::from_f64(r));
                    w.data_mut()[row].fill(F::from_f64(wv));
                }
            }
            if !any {
                continue;
            }
            let gathered = g.gather_rows(pitch_repr, &idx, n)?;
            let ratio = g.constant(ratio);
            let w = g.constant(w);
            let scaled = g.mul(gathered, ratio)?;
            let diff = g.sub(pitch_repr, scaled)?;
            let a = g.abs(diff);
            let weighted = g.mul(a, w)?;
            let s = g.sum(weighted);
            total = Some(match total {
                None => s,
                Some(t) => g.add(t, s)?,
            });
        }
    }
    Ok(match total {
        Some(t) => t,
        // Degenerate but legal: every sample is a single phoneme.
        None => g.constant(Array::scalar(F::zero())),
    })
}

/// Prior-weighted softmax cross entropy behind the gradient reversal layer.
///
/// `logits` are `[N, C]` or `[B, N, C]` with class j (0-based) standing for
/// pitch id j + 1. Real positions contribute
/// `lambda_{y} * -log softmax(logits)[y - 1]`; zero-weight classes
/// contribute nothing but still count toward the mean.
pub fn pitch_classifier_loss<F: Real>(
    g: &mut Graph<F>,
    pitch_logits: Tensor,
    pitch_ids: &[u8],
    weights: &ClassWeightTable,
    phoneme_mask: &[bool],
) -> Result<Tensor> {
    let shape = g.shape(pitch_logits).to_vec();
    let (b, n) = batch_rows(&shape, 2);
    let c = *shape.last().unwrap();
    if pitch_ids.len() != b * n {
        return Err(Error::Shape { op: "pitch_classifier_loss", lhs: shape, rhs: vec![pitch_ids.len()] });
    }
    if weights.n_classes() != c {
        return Err(Error::Shape { op: "pitch_classifier_loss", lhs: vec![c], rhs: vec![weights.n_classes()] });
    }
    let counts = real_counts(phoneme_mask, b, n, "pitch_classifier_loss")?;
    let mut w = Array::zeros(&shape);
    for i in 0..b * n {
        if !phoneme_mask[i] {
            continue;
        }
        let id = pitch_ids[i] as usize;
        if id == 0 || id > c {
            return Err(Error::domain(format!("pitch id {id} outside classifier classes 1..={c}")));
        }
        w.data_mut()[i * c + id - 1] = F::from_f64(weights.weight(id - 1) / (b as f64 * counts[i / n] as f64));
    }
    let w = g.constant(w);
    let p = g.softmax(pitch_logits);
    let lp = g.log(p);
    let neg = g.scalar_mul(lp, -F::one());
    let weighted = g.mul(neg, w)?;
    Ok(g.sum(weighted))
}

/// `L_mel + L_dur + lambda1 * L_pm + lambda2 * L_pc`; with both lambdas
/// zero this is exactly the joint mel/duration objective.
pub fn total_loss<F: Real>(
    g: &mut Graph<F>,
    mel: Tensor,
    dur: Tensor,
    pm: Option<Tensor>,
    pc: Option<Tensor>,
    weights: &LossWeights,
) -> Result<Tensor> {
    for (name, t) in [("mel", Some(mel)), ("dur", Some(dur)), ("pm", pm), ("pc", pc)] {
        if let Some(t) = t {
            if !g.value(t).item().into_f64().is_finite() {
                return Err(Error::Divergence(format!("loss component {name} is not finite")));
            }
        }
    }
    let mut total = g.add(mel, dur)?;
    if let Some(pm) = pm {
        if weights.lambda1 != 0.0 {
            let scaled = g.scalar_mul(pm, F::from_f64(weights.lambda1));
            total = g.add(total, scaled)?;
        }
    }
    if let Some(pc) = pc {
        if weights.lambda2 != 0.0 {
            let scaled = g.scalar_mul(pc, F::from_f64(weights.lambda2));
            total = g.add(total, scaled)?;
        }
    }
    if !g.value(total).item().into_f64().is_finite() {
        return Err(Error::Divergence("total loss is not finite".to_string()));
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
