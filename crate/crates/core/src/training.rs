//! Metric learning of the encoder with a cosine-distance triplet loss,
//! batch-hard mining over P identities × Q segments, and SGD with a
//! step-decayed learning rate.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{segment_tensors, Descriptor, EncoderConfig, TwoStreamEncoder};
use crate::error::{Error, Result};
use crate::skeleton::{segment_video, SkeletonSequence, Topology, SEGMENT_LEN, SEGMENT_STRIDE};
use crate::tensor::{sgd_nesterov_step, OptimConfig, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub margin: f64,
    /// Identities per batch (P).
    pub identities_per_batch: usize,
    /// Segments per identity in a batch (Q).
    pub segments_per_identity: usize,
    pub seed: u64,
    pub segment_len: usize,
    pub segment_stride: usize,
    pub channels: Vec<usize>,
    pub optim: OptimConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            margin: 0.3,
            identities_per_batch: 8,
            segments_per_identity: 4,
            seed: 0,
            segment_len: SEGMENT_LEN,
            segment_stride: SEGMENT_STRIDE,
            channels: EncoderConfig::default().channels,
            optim: OptimConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be positive".into()));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidArgument("margin must be positive".into()));
        }
        if self.identities_per_batch < 2 || self.segments_per_identity < 2 {
            return Err(Error::InvalidArgument(
                "batches need at least 2 identities with at least 2 segments each".into(),
            ));
        }
        if self.segment_len == 0 || self.segment_stride == 0 || self.segment_stride > self.segment_len {
            return Err(Error::InvalidArgument("need 0 < segment_stride <= segment_len".into()));
        }
        EncoderConfig::new(self.channels.clone())?;
        self.optim.validate()
    }
}

/// Cosine distance `1 − x·y / (‖x‖‖y‖)`; 1 when either vector is zero.
pub fn cosine_distance(x: &[f64], y: &[f64]) -> f64 {
    let (dot, nx, ny) = dot_norms(x, y);
    if nx == 0.0 || ny == 0.0 {
        return 1.0;
    }
    1.0 - dot / (nx * ny)
}

fn dot_norms(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut xx = 0.0;
    let mut yy = 0.0;
    for (a, b) in x.iter().zip(y) {
        dot += a * b;
        xx += a * a;
        yy += b * b;
    }
    (dot, xx.sqrt(), yy.sqrt())
}

/// Gradients of [`cosine_distance`] with respect to `x` and `y`.
pub fn cosine_distance_grad(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (dot, nx, ny) = dot_norms(x, y);
    if nx == 0.0 || ny == 0.0 {
        return (vec![0.0; x.len()], vec![0.0; y.len()]);
    }
    let inv = 1.0 / (nx * ny);
    let sim = dot * inv;
    let dx = x.iter().zip(y).map(|(a, b)| -(b * inv - sim * a / (nx * nx))).collect();
    let dy = x.iter().zip(y).map(|(a, b)| -(a * inv - sim * b / (ny * ny))).collect();
    (dx, dy)
}

/// `max(0, d(a, p) − d(a, n) + margin)` with cosine distance.
pub fn triplet_loss(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    (cosine_distance(anchor, positive) - cosine_distance(anchor, negative) + margin).max(0.0)
}

/// Indices into a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Batch-hard mining: for every anchor with at least one positive, the
/// farthest positive and the closest negative, ties to the lowest index.
pub fn mine_triplets<L: PartialEq>(descriptors: &[Descriptor], labels: &[L]) -> Result<Vec<Triplet>> {
    if descriptors.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} descriptors for {} labels",
            descriptors.len(),
            labels.len()
        )));
    }
    if labels.iter().all(|l| *l == labels[0]) {
        return Err(Error::InvalidArgument(
            "triplet mining needs at least two identities".into(),
        ));
    }
    let n = descriptors.len();
    let mut triplets = Vec::new();
    for a in 0..n {
        let mut hardest_pos: Option<(usize, f64)> = None;
        let mut hardest_neg: Option<(usize, f64)> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let d = cosine_distance(descriptors[a].as_slice(), descriptors[j].as_slice());
            if labels[j] == labels[a] {
                if hardest_pos.is_none_or(|(_, best)| d > best) {
                    hardest_pos = Some((j, d));
                }
            } else if hardest_neg.is_none_or(|(_, best)| d < best) {
                hardest_neg = Some((j, d));
            }
        }
        if let (Some((p, _)), Some((neg, _))) = (hardest_pos, hardest_neg) {
            triplets.push(Triplet {
                anchor: a,
                positive: p,
                negative: neg,
            });
        }
    }
    Ok(triplets)
}

/// Mean batch-hard triplet loss and its gradient for every descriptor.
pub fn batch_hard_loss<L: PartialEq>(
    descriptors: &[Descriptor],
    labels: &[L],
    margin: f64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let triplets = mine_triplets(descriptors, labels)?;
    let dim = descriptors.first().map_or(0, Descriptor::len);
    let mut grads = vec![vec![0.0; dim]; descriptors.len()];
    if triplets.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / triplets.len() as f64;
    let mut total = 0.0;
    for t in &triplets {
        let a = descriptors[t.anchor].as_slice();
        let p = descriptors[t.positive].as_slice();
        let n = descriptors[t.negative].as_slice();
        let loss = triplet_loss(a, p, n, margin);
        total += loss;
        if loss <= 0.0 {
            continue;
        }
        let (da_p, dp) = cosine_distance_grad(a, p);
        let (da_n, dn) = cosine_distance_grad(a, n);
        for i in 0..dim {
            grads[t.anchor][i] += scale * (da_p[i] - da_n[i]);
            grads[t.positive][i] += scale * dp[i];
            grads[t.negative][i] -= scale * dn[i];
        }
    }
    Ok((total * scale, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
}

/// Writes `epoch,mean_loss,lr` rows.
pub fn write_loss_csv<W: Write>(mut writer: W, history: &[EpochLog]) -> Result<()> {
    writeln!(writer, "epoch,mean_loss,lr")?;
    for log in history {
        writeln!(writer, "{},{},{}", log.epoch, log.mean_loss, log.lr)?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: TwoStreamEncoder,
    pub history: Vec<EpochLog>,
}

struct TrainingSegment {
    identity: usize,
    joints: Tensor,
    bones: Tensor,
}

/// One epoch of P×Q batches. Each identity's segments are shuffled and cut
/// into groups of Q (the incomplete remainder is dropped for the epoch);
/// batches draw P distinct identities that still hold a group.
fn epoch_batches(by_identity: &[Vec<usize>], p: usize, q: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups: Vec<Vec<Vec<usize>>> = by_identity
        .iter()
        .map(|segs| {
            let mut segs = segs.clone();
            segs.shuffle(rng);
            segs.chunks_exact(q).map(<[usize]>::to_vec).collect()
        })
        .collect();
    let mut batches = Vec::new();
    loop {
        let mut available: Vec<usize> = (0..groups.len()).filter(|&i| !groups[i].is_empty()).collect();
        if available.len() < p {
            break;
        }
        available.shuffle(rng);
        // Prefer identities with the most remaining groups so few are wasted.
        available.sort_by_key(|&i| std::cmp::Reverse(groups[i].len()));
        let batch = available[..p].iter().flat_map(|&i| groups[i].pop().unwrap()).collect();
        batches.push(batch);
    }
    batches
}

/// Trains a fresh encoder on every segment of `dataset`.
///
/// `on_epoch` observes each epoch's log as it completes.
pub fn train_with_progress<F>(
    dataset: &[SkeletonSequence],
    topology: &Topology,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<TrainOutcome>
where
    F: FnMut(&EpochLog),
{
    cfg.validate()?;
    let mut identity_index: BTreeMap<&str, usize> = BTreeMap::new();
    for seq in dataset {
        let next = identity_index.len();
        identity_index.entry(seq.person_id.as_str()).or_insert(next);
    }
    let mut segments = Vec::new();
    for seq in dataset {
        seq.validate(topology)?;
        let identity = identity_index[seq.person_id.as_str()];
        for seg in segment_video(seq, cfg.segment_len, cfg.segment_stride)? {
            let (joints, bones) = segment_tensors(&seg.frames, topology)?;
            segments.push(TrainingSegment {
                identity,
                joints,
                bones,
            });
        }
    }
    let mut by_identity = vec![Vec::new(); identity_index.len()];
    for (i, s) in segments.iter().enumerate() {
        by_identity[s.identity].push(i);
    }
    let eligible = by_identity
        .iter()
        .filter(|s| s.len() >= cfg.segments_per_identity)
        .count();
    if eligible < cfg.identities_per_batch {
        return Err(Error::InvalidArgument(format!(
            "dataset has {eligible} identities with at least {} segments; batches need {}",
            cfg.segments_per_identity, cfg.identities_per_batch
        )));
    }

    let mut encoder = TwoStreamEncoder::new(EncoderConfig::new(cfg.channels.clone())?, topology.clone(), cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5a3b_1e00_0001);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.optim.learning_rate_at(epoch);
        let batches = epoch_batches(
            &by_identity,
            cfg.identities_per_batch,
            cfg.segments_per_identity,
            &mut rng,
        );
        let mut loss_sum = 0.0;
        for batch in &batches {
            encoder.zero_grad();
            let mut descriptors = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                let seg = &segments[i];
                descriptors.push(encoder.forward_train(&seg.joints, &seg.bones)?);
                labels.push(seg.identity);
            }
            let (loss, grads) = batch_hard_loss(&descriptors, &labels, cfg.margin)?;
            encoder.backward(&grads)?;
            sgd_nesterov_step(encoder.params_mut(), lr, &cfg.optim);
            loss_sum += loss;
        }
        let mean_loss = loss_sum / batches.len() as f64;
        if !mean_loss.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged at epoch {epoch}: mean loss {mean_loss}"
            )));
        }
        let log = EpochLog { epoch, mean_loss, lr };
        log::info!("epoch {epoch:>3}  loss {mean_loss:.6}  lr {lr:e}");
        on_epoch(&log);
        history.push(log);
    }
    Ok(TrainOutcome { encoder, history })
}

pub fn train(dataset: &[SkeletonSequence], topology: &Topology, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_progress(dataset, topology, cfg, |_| {})
}
