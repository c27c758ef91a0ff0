//! Seeded synthetic gait generator.
//!
//! Each identity is a set of body proportions plus a periodic walking
//! pattern (frequency, per-limb phases and amplitudes). Videos render that
//! pattern on the 33-joint topology, walking in place, with the nose as the
//! root and `y` pointing up, `z` forward and `+x` towards the body's left.
//! Clothes and camera ids are attached as labels only and never influence
//! the coordinates.
//!
//! Parameter ranges (lengths in metres, angles in radians):
//!
//! | parameter            | range          |
//! |----------------------|----------------|
//! | height scale         | 0.85 – 1.15    |
//! | limb proportion      | ×0.85 – ×1.15  |
//! | frequency (Hz)       | 0.75 – 1.25    |
//! | phase offsets        | −0.6 – 0.6     |
//! | hip swing            | 0.25 – 0.55    |
//! | knee flexion         | 0.35 – 1.05    |
//! | shoulder swing       | 0.15 – 0.65    |
//! | elbow flexion        | 0.10 – 0.70    |
//! | torso twist          | 0.02 – 0.15    |
//! | vertical bob         | 0.005 – 0.04   |
//! | lateral sway         | 0.005 – 0.04   |

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{Joint, SkeletonFrame, SkeletonSequence};

pub const JOINT_COUNT: usize = 33;
pub const FPS: f64 = 16.0;

pub const HEAD: usize = 0;
pub const NECK: usize = 1;
pub const SHOULDER_WIDTH: usize = 2;
pub const UPPER_ARM: usize = 3;
pub const FOREARM: usize = 4;
pub const HAND: usize = 5;
pub const TORSO: usize = 6;
pub const HIP_WIDTH: usize = 7;
pub const THIGH: usize = 8;
pub const SHANK: usize = 9;
pub const FOOT: usize = 10;
pub const LIMB_COUNT: usize = 11;

const BASE_LIMBS: [f64; LIMB_COUNT] = [0.10, 0.20, 0.36, 0.30, 0.26, 0.09, 0.50, 0.26, 0.44, 0.42, 0.20];

pub const PHASE_LEGS: usize = 0;
pub const PHASE_ASYMMETRY: usize = 1;
pub const PHASE_ARMS: usize = 2;
pub const PHASE_KNEE: usize = 3;
pub const PHASE_ELBOW: usize = 4;
pub const PHASE_TORSO: usize = 5;
pub const PHASE_COUNT: usize = 6;

pub const AMP_HIP: usize = 0;
pub const AMP_KNEE: usize = 1;
pub const AMP_SHOULDER: usize = 2;
pub const AMP_ELBOW: usize = 3;
pub const AMP_TWIST: usize = 4;
pub const AMP_BOB: usize = 5;
pub const AMP_SWAY: usize = 6;
pub const AMP_COUNT: usize = 7;

pub const SCALE_RANGE: (f64, f64) = (0.85, 1.15);
pub const PROPORTION_RANGE: (f64, f64) = (0.85, 1.15);
pub const FREQUENCY_RANGE: (f64, f64) = (0.75, 1.25);
pub const PHASE_RANGE: (f64, f64) = (-0.6, 0.6);
pub const AMP_RANGES: [(f64, f64); AMP_COUNT] = [
    (0.25, 0.55),
    (0.35, 1.05),
    (0.15, 0.65),
    (0.10, 0.70),
    (0.02, 0.15),
    (0.005, 0.04),
    (0.005, 0.04),
];

/// Minimum distance between the normalised parameter vectors of two
/// identities drawn from the same seed.
pub const MIN_SEPARATION: f64 = 0.05;

const GOLDEN: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitIdentity {
    pub id: usize,
    pub limb_lengths: [f64; LIMB_COUNT],
    pub frequency: f64,
    pub phases: [f64; PHASE_COUNT],
    pub amplitudes: [f64; AMP_COUNT],
}

impl GaitIdentity {
    /// All parameters mapped to `[0, 1]` by their documented ranges. Limb
    /// lengths are normalised against the widest possible range of
    /// scale × proportion.
    pub fn normalized(&self) -> Vec<f64> {
        let unit = |v: f64, (lo, hi): (f64, f64)| (v - lo) / (hi - lo);
        let lo = SCALE_RANGE.0 * PROPORTION_RANGE.0;
        let hi = SCALE_RANGE.1 * PROPORTION_RANGE.1;
        let mut out = Vec::with_capacity(LIMB_COUNT + 1 + PHASE_COUNT + AMP_COUNT);
        out.extend(
            self.limb_lengths
                .iter()
                .zip(BASE_LIMBS)
                .map(|(l, b)| unit(l / b, (lo, hi))),
        );
        out.push(unit(self.frequency, FREQUENCY_RANGE));
        out.extend(self.phases.iter().map(|&p| unit(p, PHASE_RANGE)));
        out.extend(self.amplitudes.iter().zip(AMP_RANGES).map(|(&a, r)| unit(a, r)));
        out
    }

    pub fn mean_limb_length(&self) -> f64 {
        self.limb_lengths.iter().sum::<f64>() / LIMB_COUNT as f64
    }

    /// Pose at time `t` seconds, confidence 1.
    pub fn pose(&self, t: f64) -> Vec<[f64; 3]> {
        render_pose(self, TAU * self.frequency * t)
    }
}

/// SplitMix64 finaliser, used to derive independent sub-seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sub_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x5157_4e7d_ca11_0000, |acc, &p| mix(acc ^ mix(p)))
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

/// Deterministic identity parameters.
///
/// The frequency is stratified along a golden-ratio sequence shared by all
/// ids of a seed, which keeps any two ids apart in parameter space; the
/// remaining parameters are drawn independently per id.
pub fn generate_identity(seed: u64, id: usize) -> GaitIdentity {
    let offset = ChaCha8Rng::seed_from_u64(sub_seed(&[seed, 0xf0])).random::<f64>();
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(&[seed, 1, id as u64]));
    let scale = draw(&mut rng, SCALE_RANGE);
    let mut limb_lengths = BASE_LIMBS;
    for l in &mut limb_lengths {
        *l *= scale * draw(&mut rng, PROPORTION_RANGE);
    }
    let strat = (offset + id as f64 * GOLDEN).fract();
    let frequency = FREQUENCY_RANGE.0 + (FREQUENCY_RANGE.1 - FREQUENCY_RANGE.0) * strat;
    let mut phases = [0.0; PHASE_COUNT];
    for p in &mut phases {
        *p = draw(&mut rng, PHASE_RANGE);
    }
    let mut amplitudes = [0.0; AMP_COUNT];
    for (a, r) in amplitudes.iter_mut().zip(AMP_RANGES) {
        *a = draw(&mut rng, r);
    }
    GaitIdentity {
        id,
        limb_lengths,
        frequency,
        phases,
        amplitudes,
    }
}

fn add(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Rotates about the lateral axis: positive angles swing a downward
/// vector forward.
fn pitch(v: [f64; 3], a: f64) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [v[0], v[1] * c - v[2] * s, v[1] * s + v[2] * c]
}

/// Rotates about the vertical axis.
fn yaw(v: [f64; 3], a: f64) -> [f64; 3] {
    let (s, c) = a.sin_cos();
    [v[0] * c + v[2] * s, v[1], -v[0] * s + v[2] * c]
}

fn render_pose(g: &GaitIdentity, theta: f64) -> Vec<[f64; 3]> {
    let l = &g.limb_lengths;
    let ph = &g.phases;
    let amp = &g.amplitudes;
    let h = l[HEAD];
    let mut p = vec![[0.0; 3]; JOINT_COUNT];

    let nose = [amp[AMP_SWAY] * theta.sin(), amp[AMP_BOB] * (2.0 * theta).cos(), 0.0];
    p[0] = nose;
    let face = [
        (1, [0.15, 0.2, -0.05]),
        (2, [0.3, 0.2, -0.07]),
        (3, [0.42, 0.2, -0.12]),
        (7, [0.6, 0.1, -0.5]),
        (9, [0.15, -0.3, -0.05]),
    ];
    for (j, [x, y, z]) in face {
        p[j] = add(nose, [x * h, y * h, z * h]);
        let mirror = if j == 1 || j == 2 || j == 3 { j + 3 } else { j + 1 };
        p[mirror] = add(nose, [-x * h, y * h, z * h]);
    }

    let twist = amp[AMP_TWIST] * (theta + ph[PHASE_TORSO]).sin();
    let neck = add(nose, [0.0, -(l[NECK] + 0.5 * h), -0.3 * h]);
    let pelvis = add(neck, [0.0, -l[TORSO], 0.0]);

    for (side, s) in [(0usize, 1.0), (1usize, -1.0)] {
        let leg_phase = theta + ph[PHASE_LEGS] + side as f64 * (PI + ph[PHASE_ASYMMETRY]);
        let hip = add(pelvis, yaw([s * l[HIP_WIDTH] / 2.0, 0.0, 0.0], -twist));
        let thigh_a = amp[AMP_HIP] * leg_phase.sin();
        let knee_flex = amp[AMP_KNEE] * 0.5 * (1.0 + (leg_phase + ph[PHASE_KNEE]).sin());
        let knee = add(hip, pitch([0.0, -l[THIGH], 0.0], thigh_a));
        let shank_a = thigh_a - knee_flex;
        let ankle = add(knee, pitch([0.0, -l[SHANK], 0.0], shank_a));
        let heel = add(ankle, pitch([0.0, -0.3 * l[FOOT], -0.25 * l[FOOT]], 0.5 * shank_a));
        let toe = add(ankle, pitch([0.0, -0.3 * l[FOOT], 0.9 * l[FOOT]], 0.5 * shank_a));
        p[23 + side] = hip;
        p[25 + side] = knee;
        p[27 + side] = ankle;
        p[29 + side] = heel;
        p[31 + side] = toe;

        // Each arm swings against the leg on its own side.
        let arm_phase = leg_phase + PI + ph[PHASE_ARMS];
        let shoulder = add(neck, yaw([s * l[SHOULDER_WIDTH] / 2.0, 0.0, 0.0], twist));
        let upper_a = amp[AMP_SHOULDER] * arm_phase.sin();
        let elbow_flex = 0.15 + amp[AMP_ELBOW] * 0.5 * (1.0 + (arm_phase + ph[PHASE_ELBOW]).sin());
        let elbow = add(shoulder, pitch([s * 0.05 * l[UPPER_ARM], -l[UPPER_ARM], 0.0], upper_a));
        let fore_a = upper_a + elbow_flex;
        let wrist = add(elbow, pitch([0.0, -l[FOREARM], 0.0], fore_a));
        let hand = l[HAND];
        p[11 + side] = shoulder;
        p[13 + side] = elbow;
        p[15 + side] = wrist;
        p[17 + side] = add(wrist, pitch([s * 0.3 * hand, -hand, -0.1 * hand], fore_a));
        p[19 + side] = add(wrist, pitch([-s * 0.1 * hand, -1.1 * hand, 0.2 * hand], fore_a));
        p[21 + side] = add(wrist, pitch([-s * 0.3 * hand, -0.6 * hand, 0.3 * hand], fore_a));
    }
    p
}

/// Renders `frames` frames of an identity walking in place.
///
/// The phase origin is drawn from `seed`; so is the Gaussian jitter of
/// standard deviation `noise_level` × mean limb length. The confidence of each
/// joint is `1 − noise_level·|z|` for a standard normal `z`, clamped to
/// `[0, 1]`.
pub fn generate_video(
    identity: &GaitIdentity,
    clothes_id: &str,
    camera_id: &str,
    frames: usize,
    noise_level: f64,
    seed: u64,
) -> SkeletonSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(&[seed, 2]));
    let t0 = rng.random::<f64>() / identity.frequency;
    let sigma = noise_level * identity.mean_limb_length();
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let pose = identity.pose(t0 + f as f64 / FPS);
        let joints = pose
            .into_iter()
            .map(|[x, y, z]| {
                let nx: f64 = rng.sample(StandardNormal);
                let ny: f64 = rng.sample(StandardNormal);
                let nz: f64 = rng.sample(StandardNormal);
                let nc: f64 = rng.sample(StandardNormal);
                Joint::new(
                    x + sigma * nx,
                    y + sigma * ny,
                    z + sigma * nz,
                    (1.0 - noise_level * nc.abs()).clamp(0.0, 1.0),
                )
            })
            .collect();
        out.push(SkeletonFrame::new(joints));
    }
    SkeletonSequence {
        video_id: format!("{}_{clothes_id}_{camera_id}", person_label(identity.id)),
        person_id: person_label(identity.id),
        camera_id: camera_id.to_string(),
        clothes_id: clothes_id.to_string(),
        frames: out,
    }
}

pub fn person_label(id: usize) -> String {
    format!("p{id:03}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub identities: usize,
    pub clothes: usize,
    /// Videos per (identity, clothes); the last goes to the gallery, the one
    /// before it to the queries and the rest to training.
    pub videos_per_outfit: usize,
    pub min_frames: usize,
    pub max_frames: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            identities: 10,
            clothes: 2,
            videos_per_outfit: 4,
            min_frames: 60,
            max_frames: 160,
            noise: 0.02,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.identities == 0 || self.clothes == 0 {
            return bad("identities and clothes must be positive");
        }
        if self.videos_per_outfit < 3 {
            return bad("videos_per_outfit must be at least 3 (train, query, gallery)");
        }
        if self.min_frames == 0 || self.min_frames > self.max_frames {
            return bad("frame range must satisfy 1 <= min_frames <= max_frames");
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return bad("noise must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthBenchmark {
    pub train: Vec<SkeletonSequence>,
    pub query: Vec<SkeletonSequence>,
    pub gallery: Vec<SkeletonSequence>,
}

/// Generates the train/query/gallery split. Every video of every outfit gets
/// its own camera id (`cam0`, `cam1`, ...) and its own seed.
pub fn generate_benchmark(cfg: &SynthConfig) -> Result<SynthBenchmark> {
    cfg.validate()?;
    let mut bench = SynthBenchmark {
        train: Vec::new(),
        query: Vec::new(),
        gallery: Vec::new(),
    };
    let n = cfg.videos_per_outfit;
    for id in 0..cfg.identities {
        let identity = generate_identity(cfg.seed, id);
        for c in 0..cfg.clothes {
            for v in 0..n {
                let video_seed = sub_seed(&[cfg.seed, 3, id as u64, c as u64, v as u64]);
                let mut rng = ChaCha8Rng::seed_from_u64(video_seed);
                let frames = rng.random_range(cfg.min_frames..=cfg.max_frames);
                let seq = generate_video(
                    &identity,
                    &format!("c{c}"),
                    &format!("cam{v}"),
                    frames,
                    cfg.noise,
                    video_seed,
                );
                match n - 1 - v {
                    0 => bench.gallery.push(seq),
                    1 => bench.query.push(seq),
                    _ => bench.train.push(seq),
                }
            }
        }
    }
    Ok(bench)
}
