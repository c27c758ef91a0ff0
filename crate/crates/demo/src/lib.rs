//! Browser demo: synthetic gait playback, a re-voting explorer and a
//! re-ranking heatmap. The plain functions are usable natively; the
//! `wasm_bindgen` wrappers expose them to the page in `www/`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use skelreid::matching::{
    borda_vote, dowdall_vote, k_reciprocal_rerank, pairwise_distances, EmbeddingEntry, EmbeddingSet, RankMatrix,
    RerankParams,
};
use skelreid::skeleton::Topology;
use skelreid::synth::{generate_identity, generate_video};

const MAX_FRAMES: usize = 2000;

/// `frames × joints × 3` coordinates of one synthetic walker.
pub fn gait_frames(seed: u64, identity: usize, frames: usize, noise: f64) -> Result<Vec<f64>, String> {
    if frames == 0 || frames > MAX_FRAMES {
        return Err(format!("frames must be in 1..={MAX_FRAMES}"));
    }
    if !(0.0..=0.5).contains(&noise) {
        return Err("noise must be in [0, 0.5]".into());
    }
    let video = generate_video(
        &generate_identity(seed, identity),
        "c0",
        "cam0",
        frames,
        noise,
        seed ^ identity as u64,
    );
    Ok(video
        .frames
        .iter()
        .flat_map(|f| f.joints.iter().flat_map(|j| [j.x, j.y, j.z]))
        .collect())
}

/// Flattened `(parent, child)` pairs of the body model.
pub fn skeleton_edges() -> Vec<u32> {
    Topology::blazepose33()
        .edges
        .iter()
        .flat_map(|&(p, c)| [p as u32, c as u32])
        .collect()
}

#[derive(Debug, Serialize)]
pub struct VoteSummary {
    pub identities: Vec<String>,
    pub scores: Vec<f64>,
    /// Identity indices, best first.
    pub order: Vec<usize>,
}

/// Fuses per-segment identity ranks. `ranks` is row-major, one row of
/// 1-based ranks per segment; identities are labelled `A`, `B`, ...
pub fn explore_votes(ranks: &[u32], identities: usize, method: &str, borda_k: usize) -> Result<VoteSummary, String> {
    if identities == 0 || identities > 26 || ranks.is_empty() || ranks.len() % identities != 0 {
        return Err(format!(
            "{} ranks do not form rows of {identities} identities",
            ranks.len()
        ));
    }
    let names = (0..identities)
        .map(|i| char::from(b'A' + i as u8).to_string())
        .collect();
    let rows = ranks
        .chunks(identities)
        .map(|r| r.iter().map(|&x| x as usize).collect())
        .collect();
    let matrix = RankMatrix::new(names, rows).map_err(|e| e.to_string())?;
    let result = match method {
        "dowdall" => dowdall_vote(&matrix),
        "borda" if borda_k > 0 => borda_vote(&matrix, borda_k),
        "borda" => return Err("borda K must be positive".into()),
        other => return Err(format!("unknown method {other}")),
    };
    Ok(VoteSummary {
        identities: result.identities,
        scores: result.scores,
        order: result.order,
    })
}

#[derive(Debug, Serialize)]
pub struct Heatmap {
    pub rows: usize,
    pub cols: usize,
    /// Cluster of each query row and gallery column.
    pub row_cluster: Vec<usize>,
    pub col_cluster: Vec<usize>,
    pub original: Vec<f64>,
    pub reranked: Vec<f64>,
}

/// Random points around `clusters` directions, alternately assigned to the
/// query and gallery side, with plain and re-ranked cosine distances.
pub fn rerank_heatmap(
    clusters: usize,
    per_cluster: usize,
    spread: f64,
    params: RerankParams,
    seed: u64,
) -> Result<Heatmap, String> {
    if !(1..=8).contains(&clusters) || !(2..=16).contains(&per_cluster) {
        return Err("need 1-8 clusters of 2-16 points".into());
    }
    if !(spread.is_finite() && spread >= 0.0) {
        return Err("spread must be a non-negative number".into());
    }
    params.validate().map_err(|e| e.to_string())?;
    let dim = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<Vec<f64>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let (mut q, mut g) = (Vec::new(), Vec::new());
    let (mut row_cluster, mut col_cluster) = (Vec::new(), Vec::new());
    for i in 0..clusters * per_cluster {
        let c = i % clusters;
        let vector = centres[c]
            .iter()
            .map(|x| x + spread * rng.random_range(-1.0..1.0))
            .collect();
        let entry = EmbeddingEntry {
            segment_id: format!("p{i}"),
            video_id: format!("p{i}"),
            person_id: format!("cluster{c}"),
            camera_id: "0".into(),
            clothes_id: "0".into(),
            vector,
        };
        if (i / clusters) % 2 == 0 {
            q.push(entry);
            row_cluster.push(c);
        } else {
            g.push(entry);
            col_cluster.push(c);
        }
    }
    let q = EmbeddingSet::new(q).map_err(|e| e.to_string())?;
    let g = EmbeddingSet::new(g).map_err(|e| e.to_string())?;
    let original = pairwise_distances(&q, &g).map_err(|e| e.to_string())?;
    let reranked = k_reciprocal_rerank(&q, &g, params).map_err(|e| e.to_string())?;
    Ok(Heatmap {
        rows: original.rows(),
        cols: original.cols(),
        row_cluster,
        col_cluster,
        original: original.data().to_vec(),
        reranked: reranked.data().to_vec(),
    })
}

fn to_js<T: Serialize>(value: &T) -> Result<String, JsError> {
    serde_json::to_string(value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = gaitFrames)]
pub fn gait_frames_js(seed: u32, identity: u32, frames: u32, noise: f64) -> Result<Vec<f64>, JsError> {
    gait_frames(seed as u64, identity as usize, frames as usize, noise).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = skeletonEdges)]
pub fn skeleton_edges_js() -> Vec<u32> {
    skeleton_edges()
}

/// JSON `{identities, scores, order}`.
#[wasm_bindgen(js_name = exploreVotes)]
pub fn explore_votes_js(ranks: Vec<u32>, identities: u32, method: &str, borda_k: u32) -> Result<String, JsError> {
    let summary = explore_votes(&ranks, identities as usize, method, borda_k as usize).map_err(|e| JsError::new(&e))?;
    to_js(&summary)
}

/// JSON `{rows, cols, row_cluster, col_cluster, original, reranked}`.
#[wasm_bindgen(js_name = rerankHeatmap)]
#[allow(clippy::too_many_arguments)]
pub fn rerank_heatmap_js(
    clusters: u32,
    per_cluster: u32,
    spread: f64,
    k1: u32,
    k2: u32,
    lambda: f64,
    seed: u32,
) -> Result<String, JsError> {
    let params = RerankParams {
        k1: k1 as usize,
        k2: k2 as usize,
        lambda,
    };
    let map = rerank_heatmap(clusters as usize, per_cluster as usize, spread, params, seed as u64)
        .map_err(|e| JsError::new(&e))?;
    to_js(&map)
}
