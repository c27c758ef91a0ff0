//! Small deterministic inputs shared by the integration tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelreid::encoder::{segment_tensors, EncoderConfig, TwoStreamEncoder};
use skelreid::skeleton::{Joint, SkeletonFrame, Topology};
use skelreid::training::batch_hard_loss;

use super::dd;

/// Five joints: a root with two chains of two.
pub fn small_topology() -> Topology {
    Topology::new(5, 0, vec![(0, 1), (1, 2), (0, 3), (3, 4)]).unwrap()
}

pub fn random_frames(rng: &mut ChaCha8Rng, joints: usize, frames: usize) -> Vec<SkeletonFrame> {
    (0..frames)
        .map(|_| {
            SkeletonFrame::new(
                (0..joints)
                    .map(|_| {
                        Joint::new(
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(-1.0..1.0),
                            rng.random_range(0.5..1.0),
                        )
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Maximum of `|a − n| / max(1e-12, |a| + |n|)`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / (a.abs() + n.abs()).max(1e-12))
        .fold(0.0, f64::max)
}

pub struct GradientCase {
    pub max_error: f64,
    pub forward_error: f64,
    pub params: usize,
    pub loss: f64,
}

/// End-to-end gradient check of the reduced encoder under the batch-hard
/// triplet loss: 2 blocks, channels [4, 8, 16], 5 joints, 8 frames, a batch
/// of two identities with two segments each.
pub fn reduced_gradient_case(seed: u64) -> GradientCase {
    let topo = small_topology();
    let enc_seed = seed;
    let mut enc = TwoStreamEncoder::new(EncoderConfig::new(vec![4, 8, 16]).unwrap(), topo.clone(), enc_seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
    let labels = vec![0usize, 0, 1, 1];
    let margin = 0.3;
    let inputs: Vec<_> = labels
        .iter()
        .map(|_| segment_tensors(&random_frames(&mut rng, 5, 8), &topo).unwrap())
        .collect();

    let descs: Vec<_> = inputs.iter().map(|(j, b)| enc.forward_train(j, b).unwrap()).collect();
    let (loss, dgrads) = batch_hard_loss(&descs, &labels, margin).unwrap();
    enc.backward(&dgrads).unwrap();
    let analytic = enc.grad_vector();

    let graph = dd::Graph::new(5, &topo.edges);
    let model = dd::Model::from_encoder(&enc);
    let batch = dd::Batch {
        graph: &graph,
        inputs: inputs
            .iter()
            .map(|(j, b)| [j.data().to_vec(), b.data().to_vec()])
            .collect(),
        frames: 8,
        labels,
        margin,
    };
    let forward_error = batch
        .descriptors(&model)
        .iter()
        .zip(&descs)
        .flat_map(|(r, d)| {
            r.iter()
                .zip(d.as_slice())
                .map(|(a, b)| (a - b).abs() / a.abs().max(1e-300))
        })
        .fold(0.0, f64::max);
    let numeric = batch.numeric_gradient(&model, 1e-9);
    GradientCase {
        max_error: max_relative_error(&analytic, &numeric),
        forward_error,
        params: analytic.len(),
        loss,
    }
}
