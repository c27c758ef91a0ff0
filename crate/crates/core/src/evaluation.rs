//! CMC Rank-k and mAP under the Clothes-Changing and Standard protocols, and
//! the re-ranking × re-voting ablation grid.

use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matching::{match_distances, vote_rows, EmbeddingSet, GalleryIndex, RerankParams, VoteMethod};
use crate::skeleton::Labels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Protocol {
    /// Every query against every gallery sample.
    Standard,
    /// Only cross-clothes matches count; same-person same-clothes gallery
    /// samples are discarded.
    ClothesChanging,
}

impl Protocol {
    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Standard => "standard",
            Protocol::ClothesChanging => "cc",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub mode: Protocol,
    /// Also discard same-person same-camera gallery samples.
    pub same_camera_filter: bool,
}

impl ProtocolConfig {
    pub fn new(mode: Protocol) -> Self {
        Self {
            mode,
            same_camera_filter: false,
        }
    }
}

/// Per-query gallery masks produced by a protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolMasks {
    /// Queries retained by the protocol.
    pub keep_query: Vec<bool>,
    /// `valid[q][g]`: gallery sample `g` is not discarded for query `q`.
    pub valid: Vec<Vec<bool>>,
    /// `relevant[q][g]`: valid and a correct identity.
    pub relevant: Vec<Vec<bool>>,
}

pub fn apply_protocol(queries: &[Labels], gallery: &[Labels], cfg: ProtocolConfig) -> ProtocolMasks {
    let mut keep_query = Vec::with_capacity(queries.len());
    let mut valid = Vec::with_capacity(queries.len());
    let mut relevant = Vec::with_capacity(queries.len());
    for q in queries {
        let v: Vec<bool> = gallery
            .iter()
            .map(|g| {
                let same_person = g.person_id == q.person_id;
                let clothes_junk = cfg.mode == Protocol::ClothesChanging && same_person && g.clothes_id == q.clothes_id;
                let camera_junk = cfg.same_camera_filter && same_person && g.camera_id == q.camera_id;
                !(clothes_junk || camera_junk)
            })
            .collect();
        let r: Vec<bool> = gallery
            .iter()
            .zip(&v)
            .map(|(g, &ok)| ok && g.person_id == q.person_id)
            .collect();
        keep_query.push(match cfg.mode {
            Protocol::Standard => true,
            Protocol::ClothesChanging => r.iter().any(|&x| x),
        });
        valid.push(v);
        relevant.push(r);
    }
    ProtocolMasks {
        keep_query,
        valid,
        relevant,
    }
}

/// Queries that count: retained by the protocol with at least one relevant
/// gallery sample.
fn scored_queries(masks: &ProtocolMasks) -> impl Iterator<Item = usize> + '_ {
    (0..masks.keep_query.len()).filter(|&q| masks.keep_query[q] && masks.relevant[q].iter().any(|&r| r))
}

/// Relevance flags of the valid gallery samples, in ranked order.
fn filtered_hits<'a>(ranking: &'a [usize], masks: &'a ProtocolMasks, q: usize) -> impl Iterator<Item = bool> + 'a {
    ranking
        .iter()
        .filter(move |&&g| masks.valid[q][g])
        .map(move |&g| masks.relevant[q][g])
}

/// Fraction of scored queries with a relevant sample among the top `k`
/// valid gallery samples. 0 when no query is scored.
pub fn cmc_rank_k(rankings: &[Vec<usize>], masks: &ProtocolMasks, k: usize) -> f64 {
    let mut total = 0usize;
    let mut hits = 0usize;
    for q in scored_queries(masks) {
        total += 1;
        if filtered_hits(&rankings[q], masks, q).take(k).any(|h| h) {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Average precision of one filtered ranking.
fn average_precision<I: Iterator<Item = bool>>(hits: I) -> f64 {
    let mut found = 0usize;
    let mut sum = 0.0;
    for (pos, hit) in hits.enumerate() {
        if hit {
            found += 1;
            sum += found as f64 / (pos + 1) as f64;
        }
    }
    if found == 0 {
        0.0
    } else {
        sum / found as f64
    }
}

/// Mean average precision over scored queries, with each scored query's AP.
pub fn mean_ap(rankings: &[Vec<usize>], masks: &ProtocolMasks) -> (f64, Vec<f64>) {
    let aps: Vec<f64> = scored_queries(masks)
        .map(|q| average_precision(filtered_hits(&rankings[q], masks, q)))
        .collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };
    (map, aps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
    pub per_query_ap: Vec<f64>,
    pub n_queries: usize,
    /// Gallery samples valid for at least one scored query.
    pub n_gallery: usize,
}

pub fn evaluate(rankings: &[Vec<usize>], masks: &ProtocolMasks) -> Result<EvalReport> {
    if rankings.len() != masks.keep_query.len() {
        return Err(Error::Shape(format!(
            "{} rankings for {} queries",
            rankings.len(),
            masks.keep_query.len()
        )));
    }
    let n_gallery_total = masks.valid.first().map_or(0, Vec::len);
    for (q, r) in rankings.iter().enumerate() {
        let mut seen = vec![false; n_gallery_total];
        for &g in r {
            if g >= n_gallery_total || std::mem::replace(&mut seen[g], true) {
                return Err(Error::InvalidArgument(format!(
                    "ranking {q} is not a permutation of the gallery"
                )));
            }
        }
        if seen.iter().zip(&masks.valid[q]).any(|(s, v)| *v && !s) {
            return Err(Error::InvalidArgument(format!(
                "ranking {q} omits valid gallery samples"
            )));
        }
    }
    let scored: Vec<usize> = scored_queries(masks).collect();
    let n_gallery = (0..n_gallery_total)
        .filter(|&g| scored.iter().any(|&q| masks.valid[q][g]))
        .count();
    let (map, per_query_ap) = mean_ap(rankings, masks);
    Ok(EvalReport {
        rank1: cmc_rank_k(rankings, masks, 1),
        rank5: cmc_rank_k(rankings, masks, 5),
        rank10: cmc_rank_k(rankings, masks, 10),
        map,
        per_query_ap,
        n_queries: scored.len(),
        n_gallery,
    })
}

/// One cell of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub rerank: bool,
    pub vote: VoteMethod,
}

impl AblationConfig {
    pub fn name(&self) -> String {
        let mut s = String::from("nn");
        if self.rerank {
            s.push_str("+rr");
        }
        match self.vote {
            VoteMethod::None => {}
            VoteMethod::Dowdall => s.push_str("+rv"),
            VoteMethod::Borda { k } => {
                let _ = write!(s, "+rv-borda{k}");
            }
        }
        s
    }
}

/// Re-ranking off/on × no voting, Dowdall, Borda(`borda_k`).
pub fn default_grid(borda_k: usize) -> Vec<AblationConfig> {
    let mut grid = Vec::new();
    for rerank in [false, true] {
        for vote in [VoteMethod::None, VoteMethod::Dowdall, VoteMethod::Borda { k: borda_k }] {
            grid.push(AblationConfig { rerank, vote });
        }
    }
    grid
}

/// Evaluates one matching configuration.
///
/// Without voting every query segment is scored on its own, nearest neighbour
/// style. With voting the query unit is the video, fusing all its segments.
/// Gallery samples are gallery segments in both cases.
pub fn evaluate_matching(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    rerank: Option<RerankParams>,
    vote: VoteMethod,
    protocol: ProtocolConfig,
) -> Result<EvalReport> {
    if gallery.is_empty() {
        return Err(Error::InvalidArgument("gallery is empty".into()));
    }
    let dist = match_distances(queries, gallery, rerank)?;
    evaluate_distances(queries, gallery, &dist, vote, protocol)
}

fn evaluate_distances(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    dist: &crate::matching::DistanceMatrix,
    vote: VoteMethod,
    protocol: ProtocolConfig,
) -> Result<EvalReport> {
    let index = GalleryIndex::new(gallery);
    let units: Vec<Vec<usize>> = match vote {
        VoteMethod::None => (0..queries.len()).map(|i| vec![i]).collect(),
        _ => queries.videos().into_iter().map(|(_, s)| s).collect(),
    };
    let mut rankings = Vec::with_capacity(units.len());
    let mut labels = Vec::with_capacity(units.len());
    for segs in &units {
        let rows: Vec<&[f64]> = segs.iter().map(|&s| dist.row(s)).collect();
        rankings.push(vote_rows(&rows, &index, vote)?.gallery_order);
        labels.push(queries.entries[segs[0]].labels());
    }
    let gallery_labels: Vec<Labels> = gallery.entries.iter().map(|e| e.labels()).collect();
    evaluate(&rankings, &apply_protocol(&labels, &gallery_labels, protocol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub protocol: Protocol,
    pub report: EvalReport,
}

/// Runs every configuration under every protocol. Distance matrices are
/// computed once per re-ranking setting.
pub fn run_ablation(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    grid: &[AblationConfig],
    protocols: &[ProtocolConfig],
    rerank: RerankParams,
) -> Result<Vec<AblationRow>> {
    if gallery.is_empty() {
        return Err(Error::InvalidArgument("gallery is empty".into()));
    }
    let plain = match_distances(queries, gallery, None)?;
    let reranked = if grid.iter().any(|c| c.rerank) {
        Some(match_distances(queries, gallery, Some(rerank))?)
    } else {
        None
    };
    let mut rows = Vec::new();
    for protocol in protocols {
        for cfg in grid {
            let dist = if cfg.rerank { reranked.as_ref().unwrap() } else { &plain };
            rows.push(AblationRow {
                config: cfg.name(),
                protocol: protocol.mode,
                report: evaluate_distances(queries, gallery, dist, cfg.vote, *protocol)?,
            });
        }
    }
    Ok(rows)
}

/// Aligned text table with metrics in percent at one decimal.
pub fn render_table(rows: &[AblationRow]) -> String {
    let width = rows.iter().map(|r| r.config.len()).max().unwrap_or(6).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:<8}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}  {:>7}",
        "config", "protocol", "R-1", "R-5", "R-10", "mAP", "queries", "gallery"
    );
    for r in rows {
        let p = &r.report;
        let _ = writeln!(
            out,
            "{:<width$}  {:<8}  {:>6.1}  {:>6.1}  {:>6.1}  {:>6.1}  {:>7}  {:>7}",
            r.config,
            r.protocol.name(),
            100.0 * p.rank1,
            100.0 * p.rank5,
            100.0 * p.rank10,
            100.0 * p.map,
            p.n_queries,
            p.n_gallery
        );
    }
    out
}

pub fn write_report_csv<W: Write>(mut writer: W, rows: &[AblationRow]) -> Result<()> {
    writeln!(writer, "config,protocol,rank1,rank5,rank10,mAP,n_queries,n_gallery")?;
    for r in rows {
        let p = &r.report;
        writeln!(
            writer,
            "{},{},{},{},{},{},{},{}",
            r.config,
            r.protocol.name(),
            p.rank1,
            p.rank5,
            p.rank10,
            p.map,
            p.n_queries,
            p.n_gallery
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(person: &str, clothes: &str) -> Labels {
        Labels {
            person_id: person.into(),
            camera_id: "0".into(),
            clothes_id: clothes.into(),
        }
    }

    #[test]
    fn cc_protocol_discards_same_clothes() {
        let q = [lab("A", "1")];
        let g = [lab("A", "1"), lab("A", "2"), lab("B", "1")];
        let m = apply_protocol(&q, &g, ProtocolConfig::new(Protocol::ClothesChanging));
        assert_eq!(m.valid[0], vec![false, true, true]);
        assert_eq!(m.relevant[0], vec![false, true, false]);
        assert!(m.keep_query[0]);

        let g = [lab("A", "1"), lab("B", "2")];
        let m = apply_protocol(&q, &g, ProtocolConfig::new(Protocol::ClothesChanging));
        assert!(!m.keep_query[0]);

        let m = apply_protocol(&q, &g, ProtocolConfig::new(Protocol::Standard));
        assert!(m.keep_query[0] && m.valid[0].iter().all(|&v| v));
    }

    #[test]
    fn camera_filter_is_opt_in() {
        let q = [lab("A", "1")];
        let mut g = lab("A", "2");
        g.camera_id = "0".into();
        let cfg = ProtocolConfig {
            mode: Protocol::Standard,
            same_camera_filter: true,
        };
        assert_eq!(apply_protocol(&q, &[g.clone()], cfg).valid[0], vec![false]);
        assert_eq!(
            apply_protocol(&q, &[g], ProtocolConfig::new(Protocol::Standard)).valid[0],
            vec![true]
        );
    }

    #[test]
    fn metric_examples() {
        let q = [lab("A", "1")];
        let g = [lab("B", "1"), lab("A", "2")];
        let m = apply_protocol(&q, &g, ProtocolConfig::new(Protocol::Standard));
        let perfect = vec![vec![1, 0]];
        assert_eq!(cmc_rank_k(&perfect, &m, 1), 1.0);
        assert_eq!(mean_ap(&perfect, &m).0, 1.0);
        let second = vec![vec![0, 1]];
        assert_eq!(cmc_rank_k(&second, &m, 1), 0.0);
        assert_eq!(cmc_rank_k(&second, &m, 5), 1.0);
        assert_eq!(mean_ap(&second, &m).0, 0.5);
    }

    #[test]
    fn queries_without_relevant_gallery_are_excluded() {
        let q = [lab("A", "1"), lab("Z", "1")];
        let g = [lab("A", "2"), lab("B", "1")];
        let m = apply_protocol(&q, &g, ProtocolConfig::new(Protocol::Standard));
        let report = evaluate(&[vec![0, 1], vec![0, 1]], &m).unwrap();
        assert_eq!(report.n_queries, 1);
        assert_eq!(report.map, 1.0);
        assert_eq!(report.per_query_ap, vec![1.0]);
    }

    #[test]
    fn evaluate_rejects_bad_rankings() {
        let q = [lab("A", "1")];
        let g = [lab("A", "2"), lab("B", "1")];
        let m = apply_protocol(&q, &g, ProtocolConfig::new(Protocol::Standard));
        assert!(evaluate(&[vec![0, 0]], &m).is_err());
        assert!(evaluate(&[vec![0]], &m).is_err());
    }

    #[test]
    fn grid_has_six_named_cells() {
        let names: Vec<String> = default_grid(5).iter().map(AblationConfig::name).collect();
        assert_eq!(
            names,
            ["nn", "nn+rv", "nn+rv-borda5", "nn+rr", "nn+rr+rv", "nn+rr+rv-borda5"]
        );
    }

    #[test]
    fn table_and_csv_render() {
        let row = AblationRow {
            config: "nn".into(),
            protocol: Protocol::ClothesChanging,
            report: EvalReport {
                rank1: 0.5481,
                rank5: 1.0,
                rank10: 1.0,
                map: 0.302,
                per_query_ap: vec![],
                n_queries: 3,
                n_gallery: 4,
            },
        };
        let table = render_table(std::slice::from_ref(&row));
        assert!(table.contains("54.8") && table.contains("30.2"), "{table}");
        let mut csv = Vec::new();
        write_report_csv(&mut csv, &[row]).unwrap();
        let csv = String::from_utf8(csv).unwrap();
        assert!(csv.starts_with("config,protocol,rank1,rank5,rank10,mAP,n_queries,n_gallery\nnn,cc,0.5481,"));
    }
}
