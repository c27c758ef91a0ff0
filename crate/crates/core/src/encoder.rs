//! Two-stream spatio-temporal graph convolution encoder.
//!
//! Each stream is a stack of blocks. A block applies the spatial graph
//! convolution `Σ_k W_k · f · A_k` over the three static adjacency matrices,
//! a ReLU, a width-9 stride-2 temporal convolution with bias, and a second
//! ReLU. The final feature map is reduced per channel with an L3 norm over
//! all remaining positions, and the joints and bones outputs are concatenated.
//!
//! Gradients are chained by hand in block order; there is no autodiff tape.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skeleton::{build_adjacency, derive_bones, AdjacencySet, Segment, SkeletonFrame, Topology};
use crate::tensor::{
    conv_temporal, conv_temporal_backward, l3_pool, l3_pool_backward, matmul, matmul_a_bt, matmul_at_b, relu,
    relu_backward, ParamTensor, Tensor, TEMPORAL_KERNEL,
};

/// Input channels per node: `(x, y, z, confidence)`.
pub const INPUT_CHANNELS: usize = 4;
pub const DEFAULT_CHANNELS: [usize; 6] = [4, 16, 32, 64, 128, 256];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Channel plan including the input channels; one block per step.
    pub channels: Vec<usize>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: DEFAULT_CHANNELS.to_vec(),
        }
    }
}

impl EncoderConfig {
    pub fn new(channels: Vec<usize>) -> Result<Self> {
        let cfg = Self { channels };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(Error::InvalidArgument("channel plan needs at least one block".into()));
        }
        if self.channels[0] != INPUT_CHANNELS {
            return Err(Error::InvalidArgument(format!(
                "channel plan must start at {INPUT_CHANNELS} input channels"
            )));
        }
        if self.channels.contains(&0) {
            return Err(Error::InvalidArgument("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn block_count(&self) -> usize {
        self.channels.len() - 1
    }

    pub fn stream_dim(&self) -> usize {
        *self.channels.last().unwrap()
    }

    pub fn descriptor_dim(&self) -> usize {
        2 * self.stream_dim()
    }
}

/// Segment embedding: joints-stream features followed by bones-stream features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Descriptor(pub Vec<f64>);

impl Descriptor {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnBlock {
    /// `W_0, W_1, W_2`, each `C_out × C_in`.
    pub spatial: [ParamTensor; 3],
    /// `C_out × C_out × 9`.
    pub temporal: ParamTensor,
    /// `C_out`, added after the temporal convolution.
    pub bias: ParamTensor,
}

impl GcnBlock {
    pub fn zeros(c_in: usize, c_out: usize) -> Self {
        let w = || ParamTensor::new(Tensor::zeros(&[c_out, c_in]));
        Self {
            spatial: [w(), w(), w()],
            temporal: ParamTensor::new(Tensor::zeros(&[c_out, c_out, TEMPORAL_KERNEL])),
            bias: ParamTensor::new(Tensor::zeros(&[c_out])),
        }
    }

    /// He-style uniform fan-in initialisation, zero bias.
    fn init(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut block = Self::zeros(c_in, c_out);
        let spatial_bound = (6.0 / (3 * c_in) as f64).sqrt();
        let temporal_bound = (6.0 / (TEMPORAL_KERNEL * c_out) as f64).sqrt();
        let spatial = Uniform::new_inclusive(-spatial_bound, spatial_bound).unwrap();
        let temporal = Uniform::new_inclusive(-temporal_bound, temporal_bound).unwrap();
        for w in &mut block.spatial {
            w.value.data_mut().iter_mut().for_each(|v| *v = spatial.sample(rng));
        }
        block
            .temporal
            .value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = temporal.sample(rng));
        block
    }

    pub fn in_channels(&self) -> usize {
        self.spatial[0].value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.spatial[0].value.shape()[0]
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor> {
        self.spatial.iter().chain([&self.temporal, &self.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.spatial.iter_mut().chain([&mut self.temporal, &mut self.bias])
    }
}

/// Adjacency matrices as `(row, col, weight)` triples.
#[derive(Debug, Clone, PartialEq)]
struct SparseAdjacency {
    joints: usize,
    entries: [Vec<(usize, usize, f64)>; 3],
}

impl From<&AdjacencySet> for SparseAdjacency {
    fn from(adj: &AdjacencySet) -> Self {
        Self {
            joints: adj.joint_count(),
            entries: [adj.nonzeros(0), adj.nonzeros(1), adj.nonzeros(2)],
        }
    }
}

/// `g[c,t,:] = f[c,t,:] · A`.
fn aggregate(f: &Tensor, entries: &[(usize, usize, f64)]) -> Tensor {
    let joints = f.shape()[2];
    let mut g = Tensor::zeros(f.shape());
    let out = g.data_mut();
    for (row, src) in out.chunks_mut(joints).zip(f.data().chunks(joints)) {
        for &(i, j, w) in entries {
            row[j] += src[i] * w;
        }
    }
    g
}

/// `df[c,t,:] += dg[c,t,:] · Aᵀ`.
fn aggregate_backward(dg: &Tensor, entries: &[(usize, usize, f64)], df: &mut Tensor) {
    let joints = dg.shape()[2];
    for (row, src) in df.data_mut().chunks_mut(joints).zip(dg.data().chunks(joints)) {
        for &(i, j, w) in entries {
            row[i] += src[j] * w;
        }
    }
}

fn as_matrix(t: &Tensor) -> Tensor {
    let c = t.shape()[0];
    let rest = t.len() / c.max(1);
    t.clone().reshape(&[c, rest]).expect("element count preserved")
}

fn check_input(f: &Tensor, block: &GcnBlock, joints: usize) -> Result<(usize, usize)> {
    match f.shape() {
        &[c, t, j] if c == block.in_channels() && j == joints => Ok((t, j)),
        s => Err(Error::Shape(format!(
            "block expects [{} × T × {joints}], got {s:?}",
            block.in_channels()
        ))),
    }
}

fn spatial_sparse(f: &Tensor, block: &GcnBlock, adj: &SparseAdjacency) -> Result<(Tensor, [Tensor; 3])> {
    let (frames, joints) = check_input(f, block, adj.joints)?;
    let g = [0, 1, 2].map(|k| aggregate(f, &adj.entries[k]));
    let c_out = block.out_channels();
    let mut s = Tensor::zeros(&[c_out, frames * joints]);
    for (w, gk) in block.spatial.iter().zip(&g) {
        s.add_assign(&matmul(&w.value, &as_matrix(gk))?);
    }
    Ok((s.reshape(&[c_out, frames, joints])?, g))
}

/// Pre-activation spatial graph convolution `Σ_k W_k · f · A_k`, per frame.
pub fn spatial_gcn(f: &Tensor, block: &GcnBlock, adj: &AdjacencySet) -> Result<Tensor> {
    Ok(spatial_sparse(f, block, &SparseAdjacency::from(adj))?.0)
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Tensor,
    aggregated: [Tensor; 3],
    hidden: Tensor,
    output: Tensor,
}

fn block_forward_cached(f: &Tensor, block: &GcnBlock, adj: &SparseAdjacency) -> Result<BlockCache> {
    let (s, aggregated) = spatial_sparse(f, block, adj)?;
    let hidden = relu(&s);
    let mut z = conv_temporal(&hidden, &block.temporal.value)?;
    let per_channel = z.len() / block.out_channels();
    for (chunk, b) in z.data_mut().chunks_mut(per_channel.max(1)).zip(block.bias.value.data()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Ok(BlockCache {
        input: f.clone(),
        aggregated,
        hidden,
        output: relu(&z),
    })
}

/// Accumulates parameter gradients into `block` and returns `d input`.
fn block_backward(block: &mut GcnBlock, cache: &BlockCache, dout: &Tensor, adj: &SparseAdjacency) -> Result<Tensor> {
    let dz = relu_backward(&cache.output, dout);
    let per_channel = dz.len() / block.out_channels();
    if per_channel > 0 {
        for (gb, chunk) in block.bias.grad.data_mut().iter_mut().zip(dz.data().chunks(per_channel)) {
            *gb += chunk.iter().sum::<f64>();
        }
    }
    let (dhidden, dkernel) = conv_temporal_backward(&cache.hidden, &block.temporal.value, &dz)?;
    block.temporal.grad.add_assign(&dkernel);
    let ds = as_matrix(&relu_backward(&cache.hidden, &dhidden));
    let mut dinput = Tensor::zeros(cache.input.shape());
    for k in 0..3 {
        let g = as_matrix(&cache.aggregated[k]);
        block.spatial[k].grad.add_assign(&matmul_a_bt(&ds, &g)?);
        let dg = matmul_at_b(&block.spatial[k].value, &ds)?.reshape(cache.input.shape())?;
        aggregate_backward(&dg, &adj.entries[k], &mut dinput);
    }
    Ok(dinput)
}

/// Spatial convolution, ReLU, temporal convolution plus bias, ReLU.
pub fn block_forward(f: &Tensor, block: &GcnBlock, adj: &AdjacencySet) -> Result<Tensor> {
    Ok(block_forward_cached(f, block, &SparseAdjacency::from(adj))?.output)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamEncoder {
    pub blocks: Vec<GcnBlock>,
}

#[derive(Debug, Clone)]
struct StreamCache {
    blocks: Vec<BlockCache>,
    pooled_input: Tensor,
}

impl StreamCache {
    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes: Vec<Vec<usize>> = self.blocks.iter().map(|b| b.input.shape().to_vec()).collect();
        if let Some(last) = self.blocks.last() {
            shapes.push(last.output.shape().to_vec());
        }
        shapes
    }
}

impl StreamEncoder {
    fn init(cfg: &EncoderConfig, rng: &mut ChaCha8Rng) -> Self {
        Self {
            blocks: cfg
                .channels
                .windows(2)
                .map(|w| GcnBlock::init(w[0], w[1], rng))
                .collect(),
        }
    }

    fn zeros(cfg: &EncoderConfig) -> Self {
        Self {
            blocks: cfg.channels.windows(2).map(|w| GcnBlock::zeros(w[0], w[1])).collect(),
        }
    }

    fn forward_cached(&self, x: &Tensor, adj: &SparseAdjacency) -> Result<(Tensor, StreamCache)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut current = x.clone();
        for block in &self.blocks {
            let cache = block_forward_cached(&current, block, adj)?;
            current = cache.output.clone();
            caches.push(cache);
        }
        let pooled_input = as_matrix(&current);
        let out = l3_pool(&pooled_input)?;
        Ok((
            out,
            StreamCache {
                blocks: caches,
                pooled_input,
            },
        ))
    }

    fn backward(&mut self, cache: &StreamCache, dout: &Tensor, adj: &SparseAdjacency) -> Result<()> {
        let dpool = l3_pool_backward(&cache.pooled_input, dout)?;
        let mut grad = match cache.blocks.last() {
            Some(last) => dpool.reshape(last.output.shape())?,
            None => return Ok(()),
        };
        for (block, bcache) in self.blocks.iter_mut().zip(&cache.blocks).rev() {
            grad = block_backward(block, bcache, &grad, adj)?;
        }
        Ok(())
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor> {
        self.blocks.iter().flat_map(|b| b.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.blocks.iter_mut().flat_map(|b| b.params_mut())
    }
}

/// Blocks then L3 pooling over every remaining (time, node) position.
pub fn encode_stream(x: &Tensor, stream: &StreamEncoder, adj: &AdjacencySet) -> Result<Tensor> {
    Ok(stream.forward_cached(x, &SparseAdjacency::from(adj))?.0)
}

/// Feature-map shapes visited by a stream: the input, then each block output.
pub fn stream_shapes(x: &Tensor, stream: &StreamEncoder, adj: &AdjacencySet) -> Result<Vec<Vec<usize>>> {
    Ok(stream.forward_cached(x, &SparseAdjacency::from(adj))?.1.shapes())
}

/// `[4 × K × J]` input tensors for the joints and bones streams.
pub fn segment_tensors(frames: &[SkeletonFrame], topo: &Topology) -> Result<(Tensor, Tensor)> {
    let joints = topo.joint_count;
    let t = frames.len();
    let mut jt = Tensor::zeros(&[INPUT_CHANNELS, t, joints]);
    let mut bt = Tensor::zeros(&[INPUT_CHANNELS, t, joints]);
    for (ti, frame) in frames.iter().enumerate() {
        if frame.len() != joints {
            return Err(Error::Shape(format!(
                "frame {ti} has {} joints, topology has {joints}",
                frame.len()
            )));
        }
        let bones = derive_bones(frame, topo);
        for j in 0..joints {
            let jc = frame.joints[j].channels();
            let bc = bones.joints[j].channels();
            for c in 0..INPUT_CHANNELS {
                jt.data_mut()[(c * t + ti) * joints + j] = jc[c];
                bt.data_mut()[(c * t + ti) * joints + j] = bc[c];
            }
        }
    }
    Ok((jt, bt))
}

#[derive(Debug, Clone)]
struct SegmentCache {
    joints: StreamCache,
    bones: StreamCache,
}

/// The full model: joints stream, bones stream and the shared graph.
#[derive(Debug, Clone)]
pub struct TwoStreamEncoder {
    config: EncoderConfig,
    topology: Topology,
    adjacency: AdjacencySet,
    sparse: SparseAdjacency,
    pub joints: StreamEncoder,
    pub bones: StreamEncoder,
    cache: Vec<SegmentCache>,
}

impl PartialEq for TwoStreamEncoder {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.topology == other.topology
            && self.joints == other.joints
            && self.bones == other.bones
    }
}

impl TwoStreamEncoder {
    /// Randomly initialised encoder, deterministic in `seed`.
    pub fn new(config: EncoderConfig, topology: Topology, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let joints = StreamEncoder::init(&config, &mut rng);
        let bones = StreamEncoder::init(&config, &mut rng);
        Self::assemble(config, topology, joints, bones)
    }

    /// Encoder with every parameter zero.
    pub fn zeros(config: EncoderConfig, topology: Topology) -> Result<Self> {
        config.validate()?;
        let joints = StreamEncoder::zeros(&config);
        let bones = StreamEncoder::zeros(&config);
        Self::assemble(config, topology, joints, bones)
    }

    fn assemble(
        config: EncoderConfig,
        topology: Topology,
        joints: StreamEncoder,
        bones: StreamEncoder,
    ) -> Result<Self> {
        let adjacency = build_adjacency(&topology)?;
        let sparse = SparseAdjacency::from(&adjacency);
        Ok(Self {
            config,
            topology,
            adjacency,
            sparse,
            joints,
            bones,
            cache: Vec::new(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn topology(&self) -> &Topology {
        &self.topology
    }

    pub fn adjacency(&self) -> &AdjacencySet {
        &self.adjacency
    }

    pub fn descriptor_dim(&self) -> usize {
        self.config.descriptor_dim()
    }

    fn forward_tensors_cached(&self, joints: &Tensor, bones: &Tensor) -> Result<(Descriptor, SegmentCache)> {
        let (fj, cj) = self.joints.forward_cached(joints, &self.sparse)?;
        let (fb, cb) = self.bones.forward_cached(bones, &self.sparse)?;
        let mut values = fj.into_data();
        values.extend_from_slice(fb.data());
        Ok((Descriptor(values), SegmentCache { joints: cj, bones: cb }))
    }

    /// Encodes precomputed joints and bones input tensors.
    pub fn encode_tensors(&self, joints: &Tensor, bones: &Tensor) -> Result<Descriptor> {
        Ok(self.forward_tensors_cached(joints, bones)?.0)
    }

    pub fn encode_segment(&self, segment: &Segment) -> Result<Descriptor> {
        self.encode_frames(&segment.frames)
    }

    pub fn encode_frames(&self, frames: &[SkeletonFrame]) -> Result<Descriptor> {
        let (j, b) = segment_tensors(frames, &self.topology)?;
        self.encode_tensors(&j, &b)
    }

    /// Forward pass that keeps activations for a later [`Self::backward`].
    /// Caches accumulate until `backward` consumes them.
    pub fn forward_train(&mut self, joints: &Tensor, bones: &Tensor) -> Result<Descriptor> {
        let (d, cache) = self.forward_tensors_cached(joints, bones)?;
        self.cache.push(cache);
        Ok(d)
    }

    pub fn cached_passes(&self) -> usize {
        self.cache.len()
    }

    pub fn clear_cache(&mut self) {
        self.cache.clear();
    }

    /// Accumulates parameter gradients for every cached forward pass, given
    /// the loss gradient with respect to each descriptor, in forward order.
    pub fn backward(&mut self, descriptor_grads: &[Vec<f64>]) -> Result<()> {
        if self.cache.is_empty() {
            return Err(Error::MissingForwardCache);
        }
        if descriptor_grads.len() != self.cache.len() {
            return Err(Error::Shape(format!(
                "{} descriptor gradients for {} cached passes",
                descriptor_grads.len(),
                self.cache.len()
            )));
        }
        let half = self.config.stream_dim();
        let caches = std::mem::take(&mut self.cache);
        for (cache, grad) in caches.iter().zip(descriptor_grads) {
            if grad.len() != 2 * half {
                return Err(Error::Shape(format!(
                    "descriptor gradient of length {}, expected {}",
                    grad.len(),
                    2 * half
                )));
            }
            let gj = Tensor::from_vec(vec![half], grad[..half].to_vec())?;
            let gb = Tensor::from_vec(vec![half], grad[half..].to_vec())?;
            self.joints.backward(&cache.joints, &gj, &self.sparse)?;
            self.bones.backward(&cache.bones, &gb, &self.sparse)?;
        }
        Ok(())
    }

    /// Parameters in a fixed order: joints stream blocks, then bones stream.
    pub fn params(&self) -> impl Iterator<Item = &ParamTensor> {
        self.joints.params().chain(self.bones.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.joints.params_mut().chain(self.bones.params_mut())
    }

    /// `(name, parameter)` pairs, e.g. `joints.block0.spatial1`.
    pub fn named_params(&self) -> Vec<(String, &ParamTensor)> {
        let mut out = Vec::new();
        for (stream_name, stream) in [("joints", &self.joints), ("bones", &self.bones)] {
            for (b, block) in stream.blocks.iter().enumerate() {
                for (k, w) in block.spatial.iter().enumerate() {
                    out.push((format!("{stream_name}.block{b}.spatial{k}"), w));
                }
                out.push((format!("{stream_name}.block{b}.temporal"), &block.temporal));
                out.push((format!("{stream_name}.block{b}.bias"), &block.bias));
            }
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(ParamTensor::zero_grad);
    }

    pub fn param_count(&self) -> usize {
        self.params().map(|p| p.value.len()).sum()
    }

    pub fn param_vector(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn grad_vector(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.grad.data().iter().copied()).collect()
    }

    pub fn set_param_vector(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}
