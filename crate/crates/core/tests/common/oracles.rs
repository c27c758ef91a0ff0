//! Brute-force reference implementations, written from the definitions
//! without sharing code with the library.

use std::collections::BTreeSet;

/// Identity order under a positional vote with exact integer scores.
///
/// `ranks[i][j]` is the 1-based rank of identity `j` in segment `i`.
/// Identity `a` precedes `b` when it scores more, or scores the same with a
/// better best single rank, or ties on both and has the smaller index. The
/// position of an identity is the number of identities preceding it.
pub fn vote_order(ranks: &[Vec<usize>], weight: impl Fn(usize) -> i64) -> Vec<usize> {
    let g = ranks[0].len();
    let score: Vec<i64> = (0..g).map(|j| ranks.iter().map(|r| weight(r[j])).sum()).collect();
    let best: Vec<usize> = (0..g).map(|j| ranks.iter().map(|r| r[j]).min().unwrap()).collect();
    let precedes = |a: usize, b: usize| {
        score[a] > score[b] || (score[a] == score[b] && (best[a] < best[b] || (best[a] == best[b] && a < b)))
    };
    let mut order = vec![usize::MAX; g];
    for a in 0..g {
        let pos = (0..g).filter(|&b| b != a && precedes(b, a)).count();
        order[pos] = a;
    }
    order
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Least common multiple of `1..=n`.
pub fn lcm_upto(n: usize) -> i64 {
    (1..=n as i64).fold(1, |acc, x| acc / gcd(acc, x) * x)
}

/// Dowdall order: rank `r` is worth `L / r` with `L` divisible by every rank.
pub fn dowdall_order(ranks: &[Vec<usize>]) -> Vec<usize> {
    let l = lcm_upto(ranks[0].len());
    vote_order(ranks, |r| l / r as i64)
}

/// Truncated Borda order: rank `r` is worth `max(K − r, 0)`.
pub fn borda_order(ranks: &[Vec<usize>], k: usize) -> Vec<usize> {
    vote_order(ranks, |r| (k as i64 - r as i64).max(0))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub person: u8,
    pub clothes: u8,
    pub camera: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub rank: [f64; 3],
    pub map: f64,
    pub scored: usize,
}

/// Rank-1/5/10 and mAP straight from the definitions: drop discarded
/// gallery samples from each ranking, skip queries without a correct match,
/// then count hits and average precision at every correct position.
pub fn metrics(
    queries: &[Sample],
    gallery: &[Sample],
    rankings: &[Vec<usize>],
    cc: bool,
    camera_filter: bool,
) -> Metrics {
    let mut rank_hits = [0usize; 3];
    let mut ap_sum = 0.0;
    let mut scored = 0usize;
    for (q, ranking) in queries.iter().zip(rankings) {
        let kept: Vec<&Sample> = ranking
            .iter()
            .map(|&g| &gallery[g])
            .filter(|g| {
                let same = g.person == q.person;
                !(cc && same && g.clothes == q.clothes) && !(camera_filter && same && g.camera == q.camera)
            })
            .collect();
        let correct: Vec<bool> = kept.iter().map(|g| g.person == q.person).collect();
        let total = correct.iter().filter(|&&c| c).count();
        if total == 0 {
            continue;
        }
        scored += 1;
        for (slot, k) in [1usize, 5, 10].into_iter().enumerate() {
            if correct.iter().take(k).any(|&c| c) {
                rank_hits[slot] += 1;
            }
        }
        let mut ap = 0.0;
        for i in 0..correct.len() {
            if correct[i] {
                let hits_so_far = correct[..=i].iter().filter(|&&c| c).count();
                ap += hits_so_far as f64 / (i + 1) as f64;
            }
        }
        ap_sum += ap / total as f64;
    }
    let frac = |n: usize| if scored == 0 { 0.0 } else { n as f64 / scored as f64 };
    Metrics {
        rank: [frac(rank_hits[0]), frac(rank_hits[1]), frac(rank_hits[2])],
        map: if scored == 0 { 0.0 } else { ap_sum / scored as f64 },
        scored,
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

pub struct Rerank {
    /// Query × gallery Jaccard distances.
    pub jaccard: Vec<Vec<f64>>,
    /// Query × gallery blended distances.
    pub fused: Vec<Vec<f64>>,
}

/// k-reciprocal re-ranking by explicit neighbour-set enumeration over the
/// first `nq` points as queries and the rest as gallery.
pub fn rerank(points: &[Vec<f64>], nq: usize, k1: usize, k2: usize, lambda: f64) -> Rerank {
    let n = points.len();
    let d: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| if i == j { 0.0 } else { cosine(&points[i], &points[j]) })
                .collect()
        })
        .collect();
    let k1 = k1.min(n - 1);
    let k2 = k2.min(n);
    let nearest = |i: usize, k: usize| -> BTreeSet<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| d[i][a].partial_cmp(&d[i][b]).unwrap().then(a.cmp(&b)));
        idx.into_iter().take(k + 1).collect()
    };
    let reciprocal = |i: usize, k: usize| -> BTreeSet<usize> {
        nearest(i, k)
            .into_iter()
            .filter(|&j| nearest(j, k).contains(&i))
            .collect()
    };
    let half = (k1 as f64 / 2.0).round_ties_even() as usize;
    let mut v = vec![vec![0.0; n]; n];
    for i in 0..n {
        let r = reciprocal(i, k1);
        let mut set = r.clone();
        for &c in &r {
            let cand = reciprocal(c, half);
            if 3 * cand.intersection(&r).count() > 2 * cand.len() {
                set.extend(cand);
            }
        }
        let total: f64 = set.iter().map(|&j| (-d[i][j]).exp()).sum();
        for &j in &set {
            v[i][j] = (-d[i][j]).exp() / total;
        }
    }
    let v: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let nb = nearest(i, k2 - 1);
            (0..n)
                .map(|j| nb.iter().map(|&m| v[m][j]).sum::<f64>() / nb.len() as f64)
                .collect()
        })
        .collect();
    let mut jaccard = Vec::new();
    let mut fused = Vec::new();
    for q in 0..nq {
        let mut jr = Vec::new();
        let mut fr = Vec::new();
        for g in nq..n {
            let min: f64 = (0..n).map(|j| v[q][j].min(v[g][j])).sum();
            let max: f64 = (0..n).map(|j| v[q][j].max(v[g][j])).sum();
            let dj = 1.0 - min / max;
            jr.push(dj);
            fr.push(lambda * d[q][g] + (1.0 - lambda) * dj);
        }
        jaccard.push(jr);
        fused.push(fr);
    }
    Rerank { jaccard, fused }
}
