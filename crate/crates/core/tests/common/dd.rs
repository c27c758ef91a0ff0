//! Naive double-double reference of the two-stream encoder and the
//! batch-hard triplet loss, written from the definitions without reusing any
//! library kernels. Finite differences through it are free of the f64
//! round-off floor, so they can check small gradients to a tight relative
//! tolerance.

use skelreid::encoder::TwoStreamEncoder;
use twofloat::TwoFloat as F;

const WIDTH: usize = 9;
const STRIDE: usize = 2;
const PAD: usize = 3;

fn zero() -> F {
    F::from(0.0)
}

/// Reciprocal by Newton steps on exact double-double products; the crate's
/// own quotient forms its residual in plain f64.
fn recip(x: F) -> F {
    let one = F::from(1.0);
    let mut r = F::from(1.0 / x.hi());
    for _ in 0..2 {
        r += r * (one - x * r);
    }
    r
}

/// Column-normalised adjacency as `(source, destination, weight)` triples;
/// node `dst` gathers `weight · f[src]`.
pub struct Graph {
    pub nodes: usize,
    pub adj: [Vec<(usize, usize, f64)>; 3],
}

impl Graph {
    pub fn new(nodes: usize, edges: &[(usize, usize)]) -> Self {
        let mut in_deg = vec![0usize; nodes];
        let mut out_deg = vec![0usize; nodes];
        for &(p, c) in edges {
            in_deg[c] += 1;
            out_deg[p] += 1;
        }
        let incoming = edges.iter().map(|&(p, c)| (p, c, 1.0 / in_deg[c] as f64)).collect();
        let outgoing = edges.iter().map(|&(p, c)| (c, p, 1.0 / out_deg[p] as f64)).collect();
        let identity = (0..nodes).map(|i| (i, i, 1.0)).collect();
        Self {
            nodes,
            adj: [incoming, outgoing, identity],
        }
    }
}

#[derive(Clone)]
pub struct Block {
    pub c_in: usize,
    pub c_out: usize,
    pub spatial: [Vec<F>; 3],
    pub temporal: Vec<F>,
    pub bias: Vec<F>,
}

/// Where a scalar parameter lives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Slot {
    Spatial(usize, usize),
    Temporal(usize),
    Bias(usize),
}

#[derive(Clone)]
pub struct Model {
    pub streams: [Vec<Block>; 2],
}

/// Parameter coordinates in the encoder's flat parameter order.
#[derive(Clone, Copy, Debug)]
pub struct Coord {
    pub stream: usize,
    pub block: usize,
    pub slot: Slot,
}

impl Model {
    pub fn from_encoder(enc: &TwoStreamEncoder) -> Self {
        let lift = |v: &[f64]| v.iter().map(|&x| F::from(x)).collect::<Vec<_>>();
        let convert = |blocks: &[skelreid::encoder::GcnBlock]| {
            blocks
                .iter()
                .map(|b| Block {
                    c_in: b.in_channels(),
                    c_out: b.out_channels(),
                    spatial: [0, 1, 2].map(|k| lift(b.spatial[k].value.data())),
                    temporal: lift(b.temporal.value.data()),
                    bias: lift(b.bias.value.data()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            streams: [convert(&enc.joints.blocks), convert(&enc.bones.blocks)],
        }
    }

    pub fn coords(&self) -> Vec<Coord> {
        let mut out = Vec::new();
        for (stream, blocks) in self.streams.iter().enumerate() {
            for (block, b) in blocks.iter().enumerate() {
                for k in 0..3 {
                    for i in 0..b.spatial[k].len() {
                        out.push(Coord {
                            stream,
                            block,
                            slot: Slot::Spatial(k, i),
                        });
                    }
                }
                for i in 0..b.temporal.len() {
                    out.push(Coord {
                        stream,
                        block,
                        slot: Slot::Temporal(i),
                    });
                }
                for i in 0..b.bias.len() {
                    out.push(Coord {
                        stream,
                        block,
                        slot: Slot::Bias(i),
                    });
                }
            }
        }
        out
    }

    pub fn get_mut(&mut self, c: Coord) -> &mut F {
        let b = &mut self.streams[c.stream][c.block];
        match c.slot {
            Slot::Spatial(k, i) => &mut b.spatial[k][i],
            Slot::Temporal(i) => &mut b.temporal[i],
            Slot::Bias(i) => &mut b.bias[i],
        }
    }
}

/// Activations of one block: input, post-ReLU spatial output, block output.
#[derive(Clone)]
pub struct Act {
    pub input: Vec<F>,
    pub t_in: usize,
    pub hidden: Vec<F>,
    pub out: Vec<F>,
    pub t_out: usize,
}

fn spatial(b: &Block, x: &[F], t: usize, g: &Graph) -> Vec<F> {
    let n = g.nodes;
    let mut h = vec![zero(); b.c_out * t * n];
    for k in 0..3 {
        let mut agg = vec![zero(); b.c_in * t * n];
        for c in 0..b.c_in {
            for tt in 0..t {
                let base = (c * t + tt) * n;
                for &(src, dst, w) in &g.adj[k] {
                    agg[base + dst] += x[base + src] * w;
                }
            }
        }
        for o in 0..b.c_out {
            for c in 0..b.c_in {
                let w = b.spatial[k][o * b.c_in + c];
                for p in 0..t * n {
                    h[o * t * n + p] += w * agg[c * t * n + p];
                }
            }
        }
    }
    for v in &mut h {
        if *v < 0.0 {
            *v = zero();
        }
    }
    h
}

fn temporal_channel(b: &Block, h: &[F], t_in: usize, n: usize, o: usize) -> Vec<F> {
    let t_out = t_in / 2;
    let mut z = vec![b.bias[o]; t_out * n];
    for c in 0..b.c_out {
        for tap in 0..WIDTH {
            let w = b.temporal[(o * b.c_out + c) * WIDTH + tap];
            for t in 0..t_out {
                let pos = STRIDE * t + tap;
                if pos < PAD || pos - PAD >= t_in {
                    continue;
                }
                let src = pos - PAD;
                for j in 0..n {
                    z[t * n + j] += w * h[(c * t_in + src) * n + j];
                }
            }
        }
    }
    for v in &mut z {
        if *v < 0.0 {
            *v = zero();
        }
    }
    z
}

fn block_forward(b: &Block, x: Vec<F>, t_in: usize, g: &Graph) -> Act {
    let n = g.nodes;
    let hidden = spatial(b, &x, t_in, g);
    let out = (0..b.c_out)
        .flat_map(|o| temporal_channel(b, &hidden, t_in, n, o))
        .collect();
    Act {
        input: x,
        t_in,
        hidden,
        out,
        t_out: t_in / 2,
    }
}

fn pool(out: &[F], channels: usize) -> Vec<F> {
    let per = out.len() / channels;
    (0..channels)
        .map(|c| {
            let s = out[c * per..(c + 1) * per]
                .iter()
                .fold(zero(), |acc, &v| acc + v * v * v);
            if s == 0.0 {
                zero()
            } else {
                s.cbrt()
            }
        })
        .collect()
}

/// Stream forward keeping every block's activations.
pub fn stream_forward(blocks: &[Block], x: &[f64], t: usize, g: &Graph) -> (Vec<Act>, Vec<F>) {
    let mut acts = Vec::with_capacity(blocks.len());
    let mut cur: Vec<F> = x.iter().map(|&v| F::from(v)).collect();
    let mut t_cur = t;
    for b in blocks {
        let act = block_forward(b, cur, t_cur, g);
        cur = act.out.clone();
        t_cur = act.t_out;
        acts.push(act);
    }
    let pooled = pool(&cur, blocks.last().unwrap().c_out);
    (acts, pooled)
}

/// Re-runs a stream after the parameter at `coord` changed, reusing every
/// activation that does not depend on it.
pub fn stream_refresh(blocks: &[Block], acts: &[Act], coord: Coord, g: &Graph) -> Vec<F> {
    let n = g.nodes;
    let b = coord.block;
    let blk = &blocks[b];
    let a = &acts[b];
    let out = match coord.slot {
        Slot::Spatial(..) => block_forward(blk, a.input.clone(), a.t_in, g).out,
        Slot::Temporal(i) | Slot::Bias(i) => {
            let o = match coord.slot {
                Slot::Temporal(_) => i / (blk.c_out * WIDTH),
                _ => i,
            };
            let mut out = a.out.clone();
            let per = a.t_out * n;
            out[o * per..(o + 1) * per].copy_from_slice(&temporal_channel(blk, &a.hidden, a.t_in, n, o));
            out
        }
    };
    let mut cur = out;
    let mut t_cur = a.t_out;
    for blk in &blocks[b + 1..] {
        let act = block_forward(blk, cur, t_cur, g);
        cur = act.out;
        t_cur = act.t_out;
    }
    pool(&cur, blocks.last().unwrap().c_out)
}

pub fn cosine_distance(x: &[F], y: &[F]) -> F {
    let (mut dot, mut xx, mut yy) = (zero(), zero(), zero());
    for (&a, &b) in x.iter().zip(y) {
        dot += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return F::from(1.0);
    }
    F::from(1.0) - dot * recip(xx.sqrt() * yy.sqrt())
}

/// Mean over anchors of `max(0, m + max_pos d − min_neg d)`.
pub fn batch_hard(descs: &[Vec<F>], labels: &[usize], margin: f64) -> F {
    let mut total = zero();
    let mut count = 0usize;
    for a in 0..descs.len() {
        let mut pos: Option<F> = None;
        let mut neg: Option<F> = None;
        for j in 0..descs.len() {
            if j == a {
                continue;
            }
            let d = cosine_distance(&descs[a], &descs[j]);
            if labels[j] == labels[a] {
                pos = Some(pos.map_or(d, |p| if d > p { d } else { p }));
            } else {
                neg = Some(neg.map_or(d, |q| if d < q { d } else { q }));
            }
        }
        if let (Some(p), Some(q)) = (pos, neg) {
            let l = p - q + margin;
            if l > 0.0 {
                total += l;
            }
            count += 1;
        }
    }
    total * recip(F::from(count as f64))
}

pub fn to_f64(x: F) -> f64 {
    x.hi() + x.lo()
}

/// A batch of segments with precomputed stream activations.
pub struct Batch<'a> {
    pub graph: &'a Graph,
    pub inputs: Vec<[Vec<f64>; 2]>,
    pub frames: usize,
    pub labels: Vec<usize>,
    pub margin: f64,
}

impl Batch<'_> {
    fn descriptor(j: &[F], b: &[F]) -> Vec<F> {
        j.iter().chain(b).copied().collect()
    }

    /// Central-difference gradient of the batch loss for every parameter, in
    /// the encoder's flat parameter order.
    pub fn numeric_gradient(&self, model: &Model, h: f64) -> Vec<f64> {
        let fwd: Vec<[(Vec<Act>, Vec<F>); 2]> = self
            .inputs
            .iter()
            .map(|inp| [0, 1].map(|s| stream_forward(&model.streams[s], &inp[s], self.frames, self.graph)))
            .collect();
        let mut probe = model.clone();
        let mut grads = Vec::new();
        for coord in model.coords() {
            let original = *probe.get_mut(coord);
            let mut eval = |delta: f64| {
                *probe.get_mut(coord) = original + delta;
                let descs: Vec<Vec<F>> = fwd
                    .iter()
                    .map(|f| {
                        let fresh = stream_refresh(&probe.streams[coord.stream], &f[coord.stream].0, coord, self.graph);
                        if coord.stream == 0 {
                            Self::descriptor(&fresh, &f[1].1)
                        } else {
                            Self::descriptor(&f[0].1, &fresh)
                        }
                    })
                    .collect();
                batch_hard(&descs, &self.labels, self.margin)
            };
            let plus = eval(h);
            let minus = eval(-h);
            *probe.get_mut(coord) = original;
            grads.push(to_f64((plus - minus) * recip(F::from(2.0 * h))));
        }
        grads
    }

    /// Descriptors at the model's current parameters.
    pub fn descriptors(&self, model: &Model) -> Vec<Vec<f64>> {
        self.inputs
            .iter()
            .map(|inp| {
                let j = stream_forward(&model.streams[0], &inp[0], self.frames, self.graph).1;
                let b = stream_forward(&model.streams[1], &inp[1], self.frames, self.graph).1;
                Self::descriptor(&j, &b).into_iter().map(to_f64).collect()
            })
            .collect()
    }
}
