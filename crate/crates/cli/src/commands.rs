use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use skelreid::checkpoint;
use skelreid::evaluation::{
    apply_protocol, default_grid, evaluate, evaluate_matching, render_table, run_ablation, write_report_csv,
    EvalReport, Protocol, ProtocolConfig,
};
use skelreid::matching::{
    embed_sequences, match_all, match_distances, EmbeddingSet, MatchOptions, RerankParams, VideoMatch, VoteMethod,
};
use skelreid::skeleton::{parse_dataset, write_dataset, Labels, SkeletonSequence, Topology};
use skelreid::synth::{generate_benchmark, SynthConfig};
use skelreid::training::{train_with_progress, write_loss_csv, TrainConfig};

use crate::{
    AblateArgs, EmbedArgs, EvalArgs, GraphArgs, MatchArgs, MatchFlags, ProtocolArg, RerankFlags, SynthArgs, TrainArgs,
    VoteArg,
};

/// 2 for bad inputs (missing or malformed files, invalid configuration),
/// 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<skelreid::Error>() {
            return match err {
                skelreid::Error::Shape(_) | skelreid::Error::MissingForwardCache => 1,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<toml::de::Error>() || cause.is::<serde_json::Error>() {
            return 2;
        }
        if cause.is::<InvalidInput>() {
            return 2;
        }
    }
    1
}

#[derive(Debug)]
struct InvalidInput(String);

impl std::fmt::Display for InvalidInput {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InvalidInput {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    InvalidInput(msg.into()).into()
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Reads a whole input file and logs its digest.
fn read_input(path: &Path) -> Result<Vec<u8>> {
    let bytes = fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    info!("input {} sha256={}", path.display(), sha256_hex(&bytes));
    Ok(bytes)
}

fn log_config<T: Serialize>(what: &str, cfg: &T) -> Result<()> {
    let json = serde_json::to_vec(cfg)?;
    info!(
        "{what} config sha256={} {}",
        sha256_hex(&json),
        String::from_utf8_lossy(&json)
    );
    Ok(())
}

fn log_output(path: &Path) -> Result<()> {
    let bytes = fs::read(path)?;
    info!("wrote {} sha256={}", path.display(), sha256_hex(&bytes));
    Ok(())
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().with_context(|| format!("cannot write {}", path.display()))?;
    drop(w);
    log_output(path)
}

fn load_topology(path: Option<&Path>) -> Result<Topology> {
    match path {
        Some(p) => {
            let bytes = read_input(p)?;
            let text = String::from_utf8(bytes).map_err(|_| invalid(format!("{} is not UTF-8", p.display())))?;
            Topology::from_json(&text).with_context(|| format!("invalid topology {}", p.display()))
        }
        None => Ok(Topology::blazepose33()),
    }
}

fn load_dataset(path: &Path, topo: &Topology, center: bool) -> Result<Vec<SkeletonSequence>> {
    let bytes = read_input(path)?;
    let mut data =
        parse_dataset(bytes.as_slice(), topo).with_context(|| format!("invalid dataset {}", path.display()))?;
    if data.is_empty() {
        return Err(invalid(format!("dataset {} holds no videos", path.display())));
    }
    if center {
        data.iter_mut().for_each(|s| s.center_on_root(topo));
    }
    info!("loaded {} videos from {}", data.len(), path.display());
    Ok(data)
}

fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let bytes = read_input(path)?;
    let set =
        EmbeddingSet::read_jsonl(bytes.as_slice()).with_context(|| format!("invalid embeddings {}", path.display()))?;
    info!("loaded {} embeddings from {}", set.len(), path.display());
    Ok(set)
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg = SynthConfig::default();
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v; })* };
    }
    set!(
        identities,
        clothes,
        videos_per_outfit,
        min_frames,
        max_frames,
        noise,
        seed
    );
    cfg.validate()?;
    info!("seed {}", cfg.seed);
    log_config("synth", &cfg)?;
    let bench = generate_benchmark(&cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    for (name, seqs) in [
        ("train", &bench.train),
        ("query", &bench.query),
        ("gallery", &bench.gallery),
    ] {
        let path = a.out_dir.join(format!("{name}.jsonl"));
        let mut w = create(&path)?;
        write_dataset(&mut w, seqs)?;
        finish(w, &path)?;
    }
    Ok(())
}

fn default_loss_path(out: &Path) -> PathBuf {
    out.with_extension("loss.csv")
}

#[derive(Serialize)]
struct TrainRun<'a> {
    train: &'a TrainConfig,
    topology: &'a Topology,
    center: bool,
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => {
            let bytes = read_input(path)?;
            let text = String::from_utf8(bytes).map_err(|_| invalid(format!("{} is not UTF-8", path.display())))?;
            toml::from_str::<TrainConfig>(&text).with_context(|| format!("invalid config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.channels.clone() {
        cfg.channels = v;
    }
    if let Some(v) = a.margin {
        cfg.margin = v;
    }
    if let Some(v) = a.lr {
        cfg.optim.learning_rate = v;
    }
    if let Some(v) = a.identities_per_batch {
        cfg.identities_per_batch = v;
    }
    if let Some(v) = a.segments_per_identity {
        cfg.segments_per_identity = v;
    }
    cfg.validate().context("invalid training configuration")?;
    let GraphArgs { topology, center } = &a.graph;
    let topo = load_topology(topology.as_deref())?;
    info!("seed {}", cfg.seed);
    log_config(
        "train",
        &TrainRun {
            train: &cfg,
            topology: &topo,
            center: *center,
        },
    )?;
    let data = load_dataset(&a.data, &topo, *center)?;

    let outcome = train_with_progress(&data, &topo, &cfg, |_| {})?;
    let mut w = create(&a.out)?;
    checkpoint::save(&outcome.encoder, &mut w)?;
    finish(w, &a.out)?;
    let loss_path = a.loss_csv.clone().unwrap_or_else(|| default_loss_path(&a.out));
    let mut w = create(&loss_path)?;
    write_loss_csv(&mut w, &outcome.history)?;
    finish(w, &loss_path)
}

pub fn embed(a: EmbedArgs) -> Result<()> {
    let bytes = read_input(&a.checkpoint)?;
    let encoder =
        checkpoint::load(bytes.as_slice()).with_context(|| format!("invalid checkpoint {}", a.checkpoint.display()))?;
    if a.segment_len == 0 || a.segment_stride == 0 || a.segment_stride > a.segment_len {
        bail!(invalid("need 0 < segment-stride <= segment-len"));
    }
    log_config(
        "embed",
        &serde_json::json!({"segment_len": a.segment_len, "segment_stride": a.segment_stride, "center": a.center}),
    )?;
    let data = load_dataset(&a.data, encoder.topology(), a.center)?;
    let set = embed_sequences(&encoder, &data, a.segment_len, a.segment_stride)?;
    let mut w = create(&a.out)?;
    set.write_jsonl(&mut w)?;
    info!("embedded {} segments", set.len());
    finish(w, &a.out)
}

fn rerank_params(f: &RerankFlags) -> Result<RerankParams> {
    let p = RerankParams {
        k1: f.k1,
        k2: f.k2,
        lambda: f.lambda,
    };
    p.validate()?;
    Ok(p)
}

fn match_options(f: &MatchFlags) -> Result<MatchOptions> {
    let vote = match f.vote {
        VoteArg::None => VoteMethod::None,
        VoteArg::Dowdall => VoteMethod::Dowdall,
        VoteArg::Borda if f.borda_k == 0 => return Err(invalid("borda-k must be positive")),
        VoteArg::Borda => VoteMethod::Borda { k: f.borda_k },
    };
    let rerank = if f.no_rerank {
        None
    } else {
        Some(rerank_params(&f.rerank)?)
    };
    Ok(MatchOptions { rerank, vote })
}

fn check_compatible(q: &EmbeddingSet, g: &EmbeddingSet) -> Result<()> {
    if g.is_empty() {
        return Err(invalid("gallery embeddings are empty"));
    }
    if q.is_empty() {
        return Err(invalid("query embeddings are empty"));
    }
    if q.dim() != g.dim() {
        return Err(invalid(format!(
            "query dimension {:?} differs from gallery dimension {:?}",
            q.dim(),
            g.dim()
        )));
    }
    Ok(())
}

pub fn match_cmd(a: MatchArgs) -> Result<()> {
    let opts = match_options(&a.flags)?;
    log_config("match", &opts)?;
    let q = load_embeddings(&a.query)?;
    let g = load_embeddings(&a.gallery)?;
    check_compatible(&q, &g)?;
    let matches = match_all(&q, &g, &opts)?;
    let mut w = create(&a.out)?;
    for m in &matches {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n")?;
    }
    finish(w, &a.out)?;
    if let Some(path) = &a.dist_csv {
        let dist = match_distances(&q, &g, opts.rerank)?;
        let rows: Vec<String> = q.entries.iter().map(|e| e.segment_id.clone()).collect();
        let cols: Vec<String> = g.entries.iter().map(|e| e.segment_id.clone()).collect();
        let mut w = create(path)?;
        dist.write_csv(&mut w, &rows, &cols)?;
        finish(w, path)?;
    }
    Ok(())
}

fn protocol(p: ProtocolArg, same_camera_filter: bool) -> ProtocolConfig {
    ProtocolConfig {
        mode: match p {
            ProtocolArg::Cc => Protocol::ClothesChanging,
            ProtocolArg::Standard => Protocol::Standard,
        },
        same_camera_filter,
    }
}

fn read_rankings(path: &Path) -> Result<Vec<VideoMatch>> {
    let bytes = read_input(path)?;
    let text = String::from_utf8(bytes).map_err(|_| invalid(format!("{} is not UTF-8", path.display())))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

fn print_report(p: &ProtocolConfig, r: &EvalReport) {
    println!(
        "protocol {}  queries {}  gallery {}",
        p.mode.name(),
        r.n_queries,
        r.n_gallery
    );
    println!(
        "R-1 {:.1}  R-5 {:.1}  R-10 {:.1}  mAP {:.1}",
        100.0 * r.rank1,
        100.0 * r.rank5,
        100.0 * r.rank10,
        100.0 * r.map
    );
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let proto = protocol(a.protocol, a.same_camera_filter);
    let g = load_embeddings(&a.gallery)?;
    let report = match (&a.query, &a.rankings) {
        (Some(qpath), None) => {
            let opts = match_options(&a.flags)?;
            log_config("eval", &serde_json::json!({"protocol": proto, "match": opts}))?;
            let q = load_embeddings(qpath)?;
            check_compatible(&q, &g)?;
            evaluate_matching(&q, &g, opts.rerank, opts.vote, proto)?
        }
        (None, Some(rpath)) => {
            log_config("eval", &serde_json::json!({"protocol": proto}))?;
            let matches = read_rankings(rpath)?;
            if matches.is_empty() {
                return Err(invalid("rankings file holds no records"));
            }
            for m in &matches {
                if m.result.gallery_order.len() != g.len() {
                    return Err(invalid(format!(
                        "ranking for {} covers {} gallery entries, gallery has {}",
                        m.video_id,
                        m.result.gallery_order.len(),
                        g.len()
                    )));
                }
            }
            let labels: Vec<Labels> = matches.iter().map(|m| m.labels.clone()).collect();
            let gallery_labels: Vec<Labels> = g.entries.iter().map(|e| e.labels()).collect();
            let rankings: Vec<Vec<usize>> = matches.into_iter().map(|m| m.result.gallery_order).collect();
            evaluate(&rankings, &apply_protocol(&labels, &gallery_labels, proto))?
        }
        _ => return Err(invalid("pass exactly one of --query or --rankings")),
    };
    print_report(&proto, &report);
    if let Some(path) = &a.out {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &report)?;
        w.write_all(b"\n")?;
        finish(w, path)?;
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    if a.borda_k == 0 {
        return Err(invalid("borda-k must be positive"));
    }
    if a.protocols.is_empty() {
        return Err(invalid("no protocol selected"));
    }
    let rerank = rerank_params(&a.rerank)?;
    let protocols: Vec<ProtocolConfig> = a.protocols.iter().map(|&p| protocol(p, a.same_camera_filter)).collect();
    let grid = default_grid(a.borda_k);
    log_config(
        "ablate",
        &serde_json::json!({"grid": grid, "protocols": protocols, "rerank": rerank}),
    )?;
    let q = load_embeddings(&a.query)?;
    let g = load_embeddings(&a.gallery)?;
    check_compatible(&q, &g)?;
    let rows = run_ablation(&q, &g, &grid, &protocols, rerank)?;
    print!("{}", render_table(&rows));
    if let Some(path) = &a.csv {
        let mut w = create(path)?;
        write_report_csv(&mut w, &rows)?;
        finish(w, path)?;
    }
    Ok(())
}
