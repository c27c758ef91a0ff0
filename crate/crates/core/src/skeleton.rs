//! Skeleton datasets: joints, frames, labelled videos, body topology,
//! adjacency matrices and fixed-length segmentation.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default segment length in frames.
pub const SEGMENT_LEN: usize = 50;
/// Default hop between consecutive segment starts.
pub const SEGMENT_STRIDE: usize = 25;

/// One body landmark: position plus detector confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Joint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub c: f64,
}

impl Joint {
    pub const fn new(x: f64, y: f64, z: f64, c: f64) -> Self {
        Self { x, y, z, c }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && (0.0..=1.0).contains(&self.c)
    }

    pub fn channels(&self) -> [f64; 4] {
        [self.x, self.y, self.z, self.c]
    }
}

impl From<[f64; 4]> for Joint {
    fn from(v: [f64; 4]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

impl From<Joint> for [f64; 4] {
    fn from(j: Joint) -> Self {
        j.channels()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SkeletonFrame {
    pub joints: Vec<Joint>,
}

impl SkeletonFrame {
    pub fn new(joints: Vec<Joint>) -> Self {
        Self { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }
}

/// Identity labels carried by a video and every segment cut from it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Labels {
    pub person_id: String,
    pub camera_id: String,
    pub clothes_id: String,
}

/// One tracklet: an ordered list of skeletons of a single person.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkeletonSequence {
    pub video_id: String,
    pub person_id: String,
    pub camera_id: String,
    pub clothes_id: String,
    pub frames: Vec<SkeletonFrame>,
}

impl SkeletonSequence {
    pub fn labels(&self) -> Labels {
        Labels {
            person_id: self.person_id.clone(),
            camera_id: self.camera_id.clone(),
            clothes_id: self.clothes_id.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Checks frame count and joint validity against `topo`.
    pub fn validate(&self, topo: &Topology) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Schema(format!("video {} has no frames", self.video_id)));
        }
        for (t, frame) in self.frames.iter().enumerate() {
            if frame.len() != topo.joint_count {
                return Err(Error::Schema(format!(
                    "video {} frame {t}: expected {} joints, found {}",
                    self.video_id,
                    topo.joint_count,
                    frame.len()
                )));
            }
            if let Some(j) = frame.joints.iter().position(|j| !j.is_valid()) {
                return Err(Error::Schema(format!(
                    "video {} frame {t} joint {j}: non-finite coordinate or confidence outside [0,1]",
                    self.video_id
                )));
            }
        }
        Ok(())
    }

    /// Translates every frame so the root joint sits at the origin.
    pub fn center_on_root(&mut self, topo: &Topology) {
        for frame in &mut self.frames {
            let root = frame.joints[topo.root];
            for j in &mut frame.joints {
                j.x -= root.x;
                j.y -= root.y;
                j.z -= root.z;
            }
        }
    }
}

/// Kinematic tree over the skeleton's joints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub joint_count: usize,
    pub root: usize,
    /// `(parent, child)` pairs.
    pub edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Builds and validates a topology.
    pub fn new(joint_count: usize, root: usize, edges: Vec<(usize, usize)>) -> Result<Self> {
        let topo = Self {
            joint_count,
            root,
            edges,
        };
        topo.validate()?;
        Ok(topo)
    }

    /// The bundled 33-landmark body topology, rooted at the nose.
    ///
    /// Landmark order: 0 nose, 1-3 left eye (inner, centre, outer), 4-6 right
    /// eye, 7-8 ears, 9-10 mouth corners, 11-12 shoulders, 13-14 elbows,
    /// 15-16 wrists, 17-18 pinkies, 19-20 index fingers, 21-22 thumbs,
    /// 23-24 hips, 25-26 knees, 27-28 ankles, 29-30 heels, 31-32 foot tips.
    /// Odd indices past 10 are left-side.
    pub fn blazepose33() -> Self {
        let edges = vec![
            (0, 1),
            (1, 2),
            (2, 3),
            (3, 7),
            (0, 4),
            (4, 5),
            (5, 6),
            (6, 8),
            (0, 9),
            (0, 10),
            (0, 11),
            (0, 12),
            (11, 13),
            (13, 15),
            (15, 17),
            (15, 19),
            (15, 21),
            (12, 14),
            (14, 16),
            (16, 18),
            (16, 20),
            (16, 22),
            (11, 23),
            (12, 24),
            (23, 25),
            (25, 27),
            (27, 29),
            (27, 31),
            (24, 26),
            (26, 28),
            (28, 30),
            (28, 32),
        ];
        Self {
            joint_count: 33,
            root: 0,
            edges,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joint_count;
        if n == 0 {
            return Err(Error::Topology("joint_count must be positive".into()));
        }
        if self.root >= n {
            return Err(Error::Topology(format!("root {} out of range", self.root)));
        }
        if self.edges.len() != n - 1 {
            return Err(Error::Topology(format!(
                "a tree over {n} joints needs {} edges, found {}",
                n - 1,
                self.edges.len()
            )));
        }
        let mut parent = vec![None; n];
        for &(p, c) in &self.edges {
            if p >= n || c >= n {
                return Err(Error::Topology(format!("edge ({p}, {c}) out of range")));
            }
            if c == self.root {
                return Err(Error::Topology(format!("root {c} has a parent")));
            }
            if parent[c].replace(p).is_some() {
                return Err(Error::Topology(format!("joint {c} has two parents")));
            }
        }
        // n-1 edges with unique parents: connected iff every joint reaches the root.
        let children = self.children();
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([self.root]);
        seen[self.root] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &children[u] {
                if seen[v] {
                    return Err(Error::Topology("cycle detected".into()));
                }
                seen[v] = true;
                queue.push_back(v);
            }
        }
        if let Some(j) = seen.iter().position(|s| !s) {
            return Err(Error::Topology(format!("joint {j} is not reachable from the root")));
        }
        Ok(())
    }

    pub fn parents(&self) -> Vec<Option<usize>> {
        let mut parent = vec![None; self.joint_count];
        for &(p, c) in &self.edges {
            parent[c] = Some(p);
        }
        parent
    }

    pub fn children(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.joint_count];
        for &(p, c) in &self.edges {
            children[p].push(c);
        }
        children
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.children()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_empty())
            .map(|(i, _)| i)
            .collect()
    }

    /// Reads a topology JSON object `{joint_count, root, edges: [[p, c], ...]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        let topo: Topology = serde_json::from_str(text)?;
        topo.validate()?;
        Ok(topo)
    }
}

impl Default for Topology {
    fn default() -> Self {
        Self::blazepose33()
    }
}

/// The three spatial adjacency matrices driving the graph convolution.
///
/// Convention: features propagate as `f × A`, so column `j` of a matrix lists
/// the nodes aggregated into node `j`.
/// * `A0` (incoming): column of a child holds its parent, normalised to sum 1.
/// * `A1` (outgoing): column of a parent holds its children, normalised to sum 1.
/// * `A2`: identity.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencySet {
    pub matrices: [Tensor; 3],
}

impl AdjacencySet {
    pub fn joint_count(&self) -> usize {
        self.matrices[2].shape()[0]
    }

    pub fn incoming(&self) -> &Tensor {
        &self.matrices[0]
    }

    pub fn outgoing(&self) -> &Tensor {
        &self.matrices[1]
    }

    pub fn self_loop(&self) -> &Tensor {
        &self.matrices[2]
    }

    /// Non-zero entries `(row, col, weight)` of matrix `k`, row-major order.
    pub fn nonzeros(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let m = &self.matrices[k];
        let n = m.shape()[0];
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = m.data()[i * n + j];
                if w != 0.0 {
                    out.push((i, j, w));
                }
            }
        }
        out
    }
}

pub fn build_adjacency(topo: &Topology) -> Result<AdjacencySet> {
    topo.validate()?;
    let n = topo.joint_count;
    let mut a_in = vec![0.0; n * n];
    let mut a_out = vec![0.0; n * n];
    let mut in_deg = vec![0usize; n];
    let mut out_deg = vec![0usize; n];
    for &(p, c) in &topo.edges {
        in_deg[c] += 1;
        out_deg[p] += 1;
    }
    for &(p, c) in &topo.edges {
        a_in[p * n + c] = 1.0 / in_deg[c] as f64;
        a_out[c * n + p] = 1.0 / out_deg[p] as f64;
    }
    let mut eye = vec![0.0; n * n];
    for i in 0..n {
        eye[i * n + i] = 1.0;
    }
    Ok(AdjacencySet {
        matrices: [
            Tensor::from_vec(vec![n, n], a_in)?,
            Tensor::from_vec(vec![n, n], a_out)?,
            Tensor::from_vec(vec![n, n], eye)?,
        ],
    })
}

/// Bone features: each node becomes its joint minus its parent joint, with
/// the larger of the two confidences. The root maps to a zero bone carrying
/// the root's confidence, so both streams share one node set.
pub fn derive_bones(frame: &SkeletonFrame, topo: &Topology) -> SkeletonFrame {
    let mut bones = vec![Joint::new(0.0, 0.0, 0.0, frame.joints[topo.root].c); frame.len()];
    for &(p, c) in &topo.edges {
        let child = frame.joints[c];
        let parent = frame.joints[p];
        bones[c] = Joint::new(
            child.x - parent.x,
            child.y - parent.y,
            child.z - parent.z,
            child.c.max(parent.c),
        );
    }
    SkeletonFrame::new(bones)
}

/// A fixed-length window of a video.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub video_id: String,
    pub start: usize,
    pub labels: Labels,
    pub frames: Vec<SkeletonFrame>,
}

impl Segment {
    pub fn segment_id(&self) -> String {
        format!("{}#{}", self.video_id, self.start)
    }
}

/// Window start frames for a video of `len` frames.
///
/// Regular starts `0, stride, 2*stride, ...` while the window fits, plus a
/// tail window at `len - window` when the last regular one stops short.
/// Videos shorter than the window yield the single start `0`.
pub fn segment_starts(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if len <= window {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..=len - window).step_by(stride).collect();
    if *starts.last().unwrap() != len - window {
        starts.push(len - window);
    }
    starts
}

/// Cuts `seq` into overlapping windows of exactly `window` frames. Videos
/// shorter than `window` are padded by cyclic repetition.
pub fn segment_video(seq: &SkeletonSequence, window: usize, stride: usize) -> Result<Vec<Segment>> {
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::InvalidArgument(format!(
            "segment length {window} and stride {stride} must satisfy 0 < stride <= length"
        )));
    }
    if seq.frames.is_empty() {
        return Err(Error::InvalidArgument(format!("video {} has no frames", seq.video_id)));
    }
    let len = seq.frames.len();
    let labels = seq.labels();
    Ok(segment_starts(len, window, stride)
        .into_iter()
        .map(|start| Segment {
            video_id: seq.video_id.clone(),
            start,
            labels: labels.clone(),
            frames: (0..window).map(|i| seq.frames[(start + i) % len].clone()).collect(),
        })
        .collect())
}

/// Reads a JSON Lines dataset, one video per non-blank line.
pub fn parse_dataset<R: BufRead>(reader: R, topo: &Topology) -> Result<Vec<SkeletonSequence>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let seq: SkeletonSequence = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        seq.validate(topo)?;
        out.push(seq);
    }
    Ok(out)
}

pub fn write_dataset<W: Write>(mut writer: W, seqs: &[SkeletonSequence]) -> Result<()> {
    for seq in seqs {
        serde_json::to_writer(&mut writer, seq)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}
