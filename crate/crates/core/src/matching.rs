//! Test-time matching: segment distances, k-reciprocal re-ranking, per-segment
//! identity rankings and positional re-voting across the segments of a query
//! video.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::encoder::TwoStreamEncoder;
use crate::error::{Error, Result};
use crate::skeleton::{segment_video, Labels, SkeletonSequence};
use crate::training::cosine_distance;

/// One embedded segment with its provenance and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingEntry {
    pub segment_id: String,
    pub video_id: String,
    pub person_id: String,
    pub camera_id: String,
    pub clothes_id: String,
    pub vector: Vec<f64>,
}

impl EmbeddingEntry {
    pub fn labels(&self) -> Labels {
        Labels {
            person_id: self.person_id.clone(),
            camera_id: self.camera_id.clone(),
            clothes_id: self.clothes_id.clone(),
        }
    }
}

/// Segments every video and embeds each segment, in dataset order.
pub fn embed_sequences(
    encoder: &TwoStreamEncoder,
    sequences: &[SkeletonSequence],
    segment_len: usize,
    segment_stride: usize,
) -> Result<EmbeddingSet> {
    let mut entries = Vec::new();
    for seq in sequences {
        seq.validate(encoder.topology())?;
        for seg in segment_video(seq, segment_len, segment_stride)? {
            let vector = encoder.encode_segment(&seg)?.0;
            entries.push(EmbeddingEntry {
                segment_id: seg.segment_id(),
                video_id: seq.video_id.clone(),
                person_id: seq.person_id.clone(),
                camera_id: seq.camera_id.clone(),
                clothes_id: seq.clothes_id.clone(),
                vector,
            });
        }
    }
    EmbeddingSet::new(entries)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub entries: Vec<EmbeddingEntry>,
}

impl EmbeddingSet {
    pub fn new(entries: Vec<EmbeddingEntry>) -> Result<Self> {
        let set = Self { entries };
        set.validate()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> Option<usize> {
        self.entries.first().map(|e| e.vector.len())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let dim = self.dim();
        for e in &self.entries {
            if Some(e.vector.len()) != dim {
                return Err(Error::Schema(format!(
                    "segment {} has dimension {}, expected {}",
                    e.segment_id,
                    e.vector.len(),
                    dim.unwrap_or(0)
                )));
            }
            if e.vector.iter().any(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("segment {} has non-finite values", e.segment_id)));
            }
            if !seen.insert(e.segment_id.as_str()) {
                return Err(Error::Schema(format!("duplicate segment id {}", e.segment_id)));
            }
        }
        Ok(())
    }

    /// Reads JSON Lines, one entry per non-blank line.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            entries.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?);
        }
        Self::new(entries)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for e in &self.entries {
            serde_json::to_writer(&mut writer, e)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Video ids in first-appearance order with the indices of their segments.
    pub fn videos(&self) -> Vec<(String, Vec<usize>)> {
        let mut order: Vec<(String, Vec<usize>)> = Vec::new();
        let mut index: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            match index.get(e.video_id.as_str()) {
                Some(&v) => order[v].1.push(i),
                None => {
                    index.insert(&e.video_id, order.len());
                    order.push((e.video_id.clone(), vec![i]));
                }
            }
        }
        order
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            entries: indices.iter().map(|&i| self.entries[i].clone()).collect(),
        }
    }
}

/// Query rows × gallery columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}×{cols} distance matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("distances must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            rows: rows.len(),
            cols: self.cols,
            data: rows.iter().flat_map(|&r| self.row(r).iter().copied()).collect(),
        }
    }

    /// Header row of gallery ids, then one row per query id.
    pub fn write_csv<W: Write>(&self, mut writer: W, row_ids: &[String], col_ids: &[String]) -> Result<()> {
        write!(writer, "query")?;
        for c in col_ids {
            write!(writer, ",{c}")?;
        }
        writeln!(writer)?;
        for (i, r) in row_ids.iter().enumerate() {
            write!(writer, "{r}")?;
            for v in self.row(i) {
                write!(writer, ",{v}")?;
            }
            writeln!(writer)?;
        }
        Ok(())
    }
}

fn check_dims(a: &EmbeddingSet, b: &EmbeddingSet) -> Result<()> {
    match (a.dim(), b.dim()) {
        (Some(x), Some(y)) if x != y => Err(Error::Shape(format!("embedding dimensions differ: {x} vs {y}"))),
        _ => Ok(()),
    }
}

/// Cosine distance between every query and gallery entry.
pub fn pairwise_distances(queries: &EmbeddingSet, gallery: &EmbeddingSet) -> Result<DistanceMatrix> {
    check_dims(queries, gallery)?;
    let data = queries
        .entries
        .iter()
        .flat_map(|q| {
            gallery
                .entries
                .iter()
                .map(move |g| cosine_distance(&q.vector, &g.vector))
        })
        .collect();
    DistanceMatrix::from_vec(queries.len(), gallery.len(), data)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankParams {
    pub k1: usize,
    pub k2: usize,
    pub lambda: f64,
}

impl Default for RerankParams {
    fn default() -> Self {
        Self {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankParams {
    pub fn validate(&self) -> Result<()> {
        if self.k2 == 0 || self.k1 < self.k2 {
            return Err(Error::InvalidArgument(format!(
                "re-ranking needs k1 >= k2 >= 1, got k1={} k2={}",
                self.k1, self.k2
            )));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidArgument(format!("lambda {} outside [0, 1]", self.lambda)));
        }
        Ok(())
    }
}

fn argsort_rows(dist: &[f64], n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let row = &dist[i * n..(i + 1) * n];
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
            idx
        })
        .collect()
}

/// Members of `forward(i, k)` whose own `k + 1` nearest neighbours contain `i`.
fn reciprocal_neighbours(rank: &[Vec<usize>], i: usize, k: usize) -> Vec<usize> {
    rank[i][..=k]
        .iter()
        .copied()
        .filter(|&c| rank[c][..=k].contains(&i))
        .collect()
}

/// k-reciprocal re-ranking over the joint query ∪ gallery neighbourhood graph.
///
/// For every point, its k1-reciprocal neighbours are expanded with the
/// ½k1-reciprocal sets of members that overlap by more than two thirds,
/// weighted by `exp(−d)` and normalised into a sparse encoding vector,
/// which is then averaged over the k2 nearest neighbours. The Jaccard distance
/// between encodings is blended with the original cosine distance:
/// `λ·d + (1 − λ)·d_J`. With `λ = 1` the original matrix is returned as is.
pub fn k_reciprocal_rerank(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    params: RerankParams,
) -> Result<DistanceMatrix> {
    params.validate()?;
    let original = pairwise_distances(queries, gallery)?;
    if params.lambda == 1.0 || queries.is_empty() || gallery.is_empty() {
        return Ok(original);
    }
    let all: Vec<&[f64]> = queries
        .entries
        .iter()
        .chain(&gallery.entries)
        .map(|e| e.vector.as_slice())
        .collect();
    let n = all.len();
    let nq = queries.len();
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = cosine_distance(all[i], all[j]);
            dist[i * n + j] = d;
            dist[j * n + i] = d;
        }
    }
    let mut k1 = params.k1;
    let mut k2 = params.k2;
    if k1 > n - 1 {
        log::warn!("k1={k1} exceeds the {} available neighbours; clamping", n - 1);
        k1 = n - 1;
        k2 = k2.min(n);
    }
    let half = (k1 as f64 / 2.0).round_ties_even() as usize;
    let rank = argsort_rows(&dist, n);

    let mut encoding = vec![0.0; n * n];
    for i in 0..n {
        let recip = reciprocal_neighbours(&rank, i, k1);
        let recip_set: HashSet<usize> = recip.iter().copied().collect();
        let mut expanded: Vec<usize> = recip.clone();
        for &c in &recip {
            let candidate = reciprocal_neighbours(&rank, c, half);
            let overlap = candidate.iter().filter(|x| recip_set.contains(x)).count();
            if overlap as f64 > 2.0 / 3.0 * candidate.len() as f64 {
                expanded.extend(candidate);
            }
        }
        expanded.sort_unstable();
        expanded.dedup();
        let weights: Vec<f64> = expanded.iter().map(|&j| (-dist[i * n + j]).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (&j, w) in expanded.iter().zip(&weights) {
            encoding[i * n + j] = w / total;
        }
    }
    if k2 > 1 {
        let mut expanded = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut expanded[i * n..(i + 1) * n];
            for &nb in &rank[i][..k2] {
                for (r, v) in row.iter_mut().zip(&encoding[nb * n..(nb + 1) * n]) {
                    *r += v;
                }
            }
            row.iter_mut().for_each(|v| *v /= k2 as f64);
        }
        encoding = expanded;
    }

    let ng = gallery.len();
    let lambda = params.lambda;
    let mut out = Vec::with_capacity(nq * ng);
    for q in 0..nq {
        let vq = &encoding[q * n..(q + 1) * n];
        let support: Vec<usize> = (0..n).filter(|&k| vq[k] != 0.0).collect();
        for g in 0..ng {
            let vg = &encoding[(nq + g) * n..(nq + g + 1) * n];
            let shared: f64 = support.iter().map(|&k| vq[k].min(vg[k])).sum();
            let jaccard = 1.0 - shared / (2.0 - shared);
            out.push(lambda * original.get(q, g) + (1.0 - lambda) * jaccard);
        }
    }
    DistanceMatrix::from_vec(nq, ng, out)
}

/// Gallery identities in label order and the identity of each gallery entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    pub identities: Vec<String>,
    pub identity_of: Vec<usize>,
}

impl GalleryIndex {
    pub fn new(gallery: &EmbeddingSet) -> Self {
        Self::from_labels(gallery.entries.iter().map(|e| e.person_id.as_str()))
    }

    pub fn from_labels<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> Self {
        let labels: Vec<&str> = labels.into_iter().collect();
        let mut identities: Vec<String> = labels.iter().map(|s| s.to_string()).collect();
        identities.sort();
        identities.dedup();
        let identity_of = labels
            .iter()
            .map(|l| identities.binary_search_by(|x| x.as_str().cmp(l)).unwrap())
            .collect();
        Self {
            identities,
            identity_of,
        }
    }
}

/// `ranks[i][j]`: 1-based rank of gallery identity `j` for query segment `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RankMatrix {
    pub identities: Vec<String>,
    pub ranks: Vec<Vec<usize>>,
}

impl RankMatrix {
    pub fn new(identities: Vec<String>, ranks: Vec<Vec<usize>>) -> Result<Self> {
        let g = identities.len();
        for row in &ranks {
            let mut sorted = row.clone();
            sorted.sort_unstable();
            if sorted != (1..=g).collect::<Vec<_>>() {
                return Err(Error::InvalidArgument(format!(
                    "rank row {row:?} is not a permutation of 1..={g}"
                )));
            }
        }
        Ok(Self { identities, ranks })
    }

    pub fn segments(&self) -> usize {
        self.ranks.len()
    }
}

/// Identity distance per gallery identity: the minimum over its entries.
fn identity_distances(row: &[f64], index: &GalleryIndex) -> Vec<f64> {
    let mut best = vec![f64::INFINITY; index.identities.len()];
    for (d, &id) in row.iter().zip(&index.identity_of) {
        best[id] = best[id].min(*d);
    }
    best
}

/// Ranks every gallery identity for one query segment by its closest gallery
/// entry; ties fall back to label order.
pub fn segment_id_ranks(row: &[f64], index: &GalleryIndex) -> Vec<usize> {
    let dist = identity_distances(row, index);
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
    let mut ranks = vec![0; dist.len()];
    for (pos, &id) in order.iter().enumerate() {
        ranks[id] = pos + 1;
    }
    ranks
}

pub fn rank_matrix(rows: &[&[f64]], index: &GalleryIndex) -> RankMatrix {
    RankMatrix {
        identities: index.identities.clone(),
        ranks: rows.iter().map(|r| segment_id_ranks(r, index)).collect(),
    }
}

/// Identity scores after re-voting and the resulting orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteResult {
    pub identities: Vec<String>,
    /// Score per identity, indexed like `identities`.
    pub scores: Vec<f64>,
    /// Identity indices, best first.
    pub order: Vec<usize>,
    /// Gallery entry indices, best first; empty unless produced by matching.
    pub gallery_order: Vec<usize>,
}

impl VoteResult {
    pub fn ranked_identities(&self) -> Vec<&str> {
        self.order.iter().map(|&i| self.identities[i].as_str()).collect()
    }
}

/// Scores closer than this relative gap count as tied, so mathematically
/// equal vote totals summed in different orders still reach the tie-break.
const SCORE_TIE: f64 = 1e-9;

fn scores_tied(a: f64, b: f64) -> bool {
    (a - b).abs() <= SCORE_TIE * a.abs().max(b.abs()).max(1.0)
}

/// Descending score, then best single-segment rank, then label order.
fn vote_order(scores: &[f64], ranks: &RankMatrix) -> Vec<usize> {
    let g = scores.len();
    let best_rank: Vec<usize> = (0..g)
        .map(|j| ranks.ranks.iter().map(|r| r[j]).min().unwrap_or(usize::MAX))
        .collect();
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by(|&a, &b| {
        let by_score = if scores_tied(scores[a], scores[b]) {
            std::cmp::Ordering::Equal
        } else {
            scores[b].total_cmp(&scores[a])
        };
        by_score.then(best_rank[a].cmp(&best_rank[b])).then(a.cmp(&b))
    });
    order
}

fn positional_vote<F: Fn(usize) -> f64>(ranks: &RankMatrix, weight: F) -> VoteResult {
    let g = ranks.identities.len();
    let mut scores = vec![0.0; g];
    for row in &ranks.ranks {
        for (s, &r) in scores.iter_mut().zip(row) {
            *s += weight(r);
        }
    }
    let order = vote_order(&scores, ranks);
    VoteResult {
        identities: ranks.identities.clone(),
        scores,
        order,
        gallery_order: Vec::new(),
    }
}

/// Dowdall system: rank `r` contributes `1 / r`.
pub fn dowdall_vote(ranks: &RankMatrix) -> VoteResult {
    positional_vote(ranks, |r| 1.0 / r as f64)
}

/// Truncated Borda count: rank `r` contributes `K − r` when `r < K`, else 0.
pub fn borda_vote(ranks: &RankMatrix, k: usize) -> VoteResult {
    positional_vote(ranks, |r| if r < k { (k - r) as f64 } else { 0.0 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "method")]
pub enum VoteMethod {
    /// Nearest neighbour over all query segments, no voting.
    None,
    Dowdall,
    Borda {
        k: usize,
    },
}

impl VoteMethod {
    pub fn name(&self) -> String {
        match self {
            VoteMethod::None => "none".into(),
            VoteMethod::Dowdall => "dowdall".into(),
            VoteMethod::Borda { k } => format!("borda{k}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub rerank: Option<RerankParams>,
    pub vote: VoteMethod,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self {
            rerank: Some(RerankParams::default()),
            vote: VoteMethod::Dowdall,
        }
    }
}

/// Fuses the distance rows of one query video's segments into identity
/// scores and a gallery entry order.
///
/// Gallery entries inherit their identity's position; within an identity they
/// are ordered by their smallest distance to any query segment, then index.
/// With [`VoteMethod::None`] identities score by negated minimum distance and
/// gallery entries are ordered purely by distance.
pub fn vote_rows(rows: &[&[f64]], index: &GalleryIndex, vote: VoteMethod) -> Result<VoteResult> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("query video has no segments".into()));
    }
    let n_gallery = index.identity_of.len();
    if n_gallery == 0 {
        return Err(Error::InvalidArgument("gallery is empty".into()));
    }
    let min_dist: Vec<f64> = (0..n_gallery)
        .map(|g| rows.iter().map(|r| r[g]).fold(f64::INFINITY, f64::min))
        .collect();
    let ranks = rank_matrix(rows, index);
    let mut result = match vote {
        VoteMethod::None => {
            let dist = identity_distances(&min_dist, index);
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(a.cmp(&b)));
            VoteResult {
                identities: index.identities.clone(),
                scores: dist.iter().map(|d| -d).collect(),
                order,
                gallery_order: Vec::new(),
            }
        }
        VoteMethod::Dowdall => dowdall_vote(&ranks),
        VoteMethod::Borda { k } => borda_vote(&ranks, k),
    };
    let mut position = vec![0; index.identities.len()];
    for (pos, &id) in result.order.iter().enumerate() {
        position[id] = pos;
    }
    let mut gallery_order: Vec<usize> = (0..n_gallery).collect();
    match vote {
        VoteMethod::None => {
            gallery_order.sort_by(|&a, &b| min_dist[a].total_cmp(&min_dist[b]).then(a.cmp(&b)));
        }
        _ => gallery_order.sort_by(|&a, &b| {
            position[index.identity_of[a]]
                .cmp(&position[index.identity_of[b]])
                .then(min_dist[a].total_cmp(&min_dist[b]))
                .then(a.cmp(&b))
        }),
    }
    result.gallery_order = gallery_order;
    Ok(result)
}

/// Distances used for matching: cosine, optionally re-ranked.
pub fn match_distances(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    rerank: Option<RerankParams>,
) -> Result<DistanceMatrix> {
    match rerank {
        Some(p) => k_reciprocal_rerank(queries, gallery, p),
        None => pairwise_distances(queries, gallery),
    }
}

/// Ranking result for one query video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMatch {
    pub video_id: String,
    pub labels: Labels,
    pub segments: usize,
    pub result: VoteResult,
}

/// Matches every query video against the gallery. Re-ranking, when enabled,
/// sees all query segments at once.
pub fn match_all(queries: &EmbeddingSet, gallery: &EmbeddingSet, opts: &MatchOptions) -> Result<Vec<VideoMatch>> {
    if gallery.is_empty() {
        return Err(Error::InvalidArgument("gallery is empty".into()));
    }
    let dist = match_distances(queries, gallery, opts.rerank)?;
    let index = GalleryIndex::new(gallery);
    queries
        .videos()
        .into_iter()
        .map(|(video_id, segs)| {
            let rows: Vec<&[f64]> = segs.iter().map(|&s| dist.row(s)).collect();
            Ok(VideoMatch {
                labels: queries.entries[segs[0]].labels(),
                video_id,
                segments: segs.len(),
                result: vote_rows(&rows, &index, opts.vote)?,
            })
        })
        .collect()
}

/// Matches the segments of a single query video.
pub fn match_video(segments: &[EmbeddingEntry], gallery: &EmbeddingSet, opts: &MatchOptions) -> Result<VoteResult> {
    if segments.is_empty() {
        return Err(Error::InvalidArgument("query video has no segments".into()));
    }
    if gallery.is_empty() {
        return Err(Error::InvalidArgument("gallery is empty".into()));
    }
    let queries = EmbeddingSet::new(segments.to_vec())?;
    let dist = match_distances(&queries, gallery, opts.rerank)?;
    let rows: Vec<&[f64]> = (0..dist.rows()).map(|i| dist.row(i)).collect();
    vote_rows(&rows, &GalleryIndex::new(gallery), opts.vote)
}
