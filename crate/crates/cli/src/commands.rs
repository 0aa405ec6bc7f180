use std::collections::BTreeMap;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use cvgl::dist::{equivalence_report, random_features};
use cvgl::embed_store::{cosine_topk, read_embeddings, write_embeddings, EmbeddingSet};
use cvgl::mixer::{expand_mix, mix as mix_corpora, CorpusManifest, MixSpec};
use cvgl::numerics::{LossConfig, DEFAULT_LABEL_SMOOTHING, DEFAULT_LOGIT_SCALE};
use cvgl::retrieval::{evaluate as evaluate_metrics, GroundTruth, QueryTruth};
use cvgl::trainer::{
    base_corpus, encode, generate_world, initial_encoder, load_checkpoint, merged_corpus, save_checkpoint, train_phase,
    Encoder, PhaseResult, SyntheticWorld, TrainConfig, ViewPairs, WorldSpec,
};
use cvgl::xbench::{self, Language};
use cvgl::Matrix;

use crate::output::{load_config, OutDir};
use crate::{EvalRetrievalArgs, EvalXArgs, GenWorldArgs, LossCheckArgs, MixArgs, Phase, TrainArgs, UsageError};

fn ids(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}/{i}")).collect()
}

/// Ground truth pairing row `i` of the queries with row `i` of the gallery.
fn diagonal_truth(queries: &[String], gallery: &[String]) -> Vec<QueryTruth> {
    queries
        .iter()
        .zip(gallery)
        .map(|(q, g)| QueryTruth { query_id: q.clone(), positives: vec![g.clone()], covering: vec![] })
        .collect()
}

/// Writes a split as query/reference `.emb` files plus matching ground truth.
fn write_split(out: &mut OutDir, stem: &str, queries: EmbeddingSet, refs: EmbeddingSet) -> Result<()> {
    let truth = diagonal_truth(queries.ids(), refs.ids());
    write_embeddings(&queries, out.file(&format!("{stem}.query.emb")))?;
    write_embeddings(&refs, out.file(&format!("{stem}.ref.emb")))?;
    cvgl::jsonl::write_jsonl(&truth, out.file(&format!("{stem}.gt.jsonl")))?;
    Ok(())
}

fn raw_views(m: &Matrix, prefix: &str) -> Result<EmbeddingSet> {
    Ok(EmbeddingSet::new(ids(prefix, m.rows()), m.clone())?)
}

pub fn gen_world(args: GenWorldArgs) -> Result<()> {
    let mut spec: WorldSpec = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Some(n) = args.n_locations {
        spec.n_locations = n;
    }
    if let Some(s) = args.sigma {
        spec.noise_sigma = s;
    }
    let world = generate_world(&spec)?;
    let mut out = OutDir::create(&args.common.out_dir, "gen-world")?;
    out.write_config(&spec)?;
    for m in &world.modalities {
        for (split, pairs) in [("train", &m.train), ("test", &m.test)] {
            let stem = format!("{}.{split}", m.name);
            let q = raw_views(&pairs.queries, &format!("{}/{split}", m.name))?;
            let r = raw_views(&pairs.refs, &format!("sat/{}/{split}", m.name))?;
            write_split(&mut out, &stem, q, r)?;
        }
    }
    println!(
        "world: {} locations x {} modalities x 2 splits, input dim {}, sigma {}",
        spec.n_locations,
        spec.modalities.len(),
        spec.input_dim,
        spec.noise_sigma
    );
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct TrainParams {
    phase: Phase,
    world: WorldSpec,
    train: TrainConfig,
    /// Settings for the merged phase; defaults to `train`.
    phase2: Option<TrainConfig>,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self { phase: Phase::Both, world: WorldSpec::default(), train: TrainConfig::desk(), phase2: None }
    }
}

fn phase_summary(name: &str, r: &PhaseResult) -> serde_json::Value {
    let last = r.epochs.last();
    serde_json::json!({
        "phase": name,
        "epochs": r.epochs.len(),
        "initial_loss": r.initial_loss,
        "final_loss": last.map(|e| e.mean_loss),
        "final_r1": last.map(|e| e.r1.clone()),
        "final_mean_r1": last.map(|e| e.mean_r1),
    })
}

fn write_embeddings_for(out: &mut OutDir, enc: &Encoder, world: &SyntheticWorld) -> Result<()> {
    for m in &world.modalities {
        let test: &ViewPairs = &m.test;
        let q = encode(enc, &test.queries, "")?;
        let r = encode(enc, &test.refs, "")?;
        let q = EmbeddingSet::new_normalized(ids(&format!("{}/test", m.name), q.len()), q.matrix().clone())?;
        let r = EmbeddingSet::new_normalized(ids(&format!("sat/{}/test", m.name), r.len()), r.matrix().clone())?;
        write_split(out, &format!("embeddings.{}.test", m.name), q, r)?;
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let mut p: TrainParams = load_config(args.common.config.as_deref())?;
    let mut p2 = p.phase2.clone().unwrap_or_else(|| p.train.clone());
    if let Some(phase) = args.phase {
        p.phase = phase;
    }
    for cfg in [&mut p.train, &mut p2] {
        if let Some(e) = args.epochs {
            cfg.epochs = e;
        }
        if let Some(w) = args.world_size {
            cfg.world_size = w;
        }
        if let Some(lr) = args.lr {
            cfg.learning_rate = lr;
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
    }
    if let Some(s) = args.seed {
        p.world.seed = s;
    }
    p.phase2 = Some(p2.clone());
    p.train.validate().map_err(|e| UsageError(e.to_string()))?;
    p2.validate().map_err(|e| UsageError(e.to_string()))?;

    let world = generate_world(&p.world)?;
    let init = match &args.init {
        Some(path) => {
            let (enc, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
            if enc.input_dim() != p.world.input_dim {
                bail!("checkpoint expects input dim {}, world has {}", enc.input_dim(), p.world.input_dim);
            }
            enc
        }
        None => initial_encoder(&world, &p.train),
    };

    let mut phases: Vec<(&str, PhaseResult)> = Vec::new();
    match p.phase {
        Phase::One => phases.push(("phase1", train_phase(init, &base_corpus(&world), &world, &p.train, "phase1")?)),
        Phase::Two => phases.push(("phase2", train_phase(init, &merged_corpus(&world), &world, &p2, "phase2")?)),
        Phase::Scratch => phases.push(("scratch", train_phase(init, &merged_corpus(&world), &world, &p.train, "scratch")?)),
        Phase::Both => {
            let first = train_phase(init, &base_corpus(&world), &world, &p.train, "phase1")?;
            let second = train_phase(first.encoder.clone(), &merged_corpus(&world), &world, &p2, "phase2")?;
            phases.push(("phase1", first));
            phases.push(("phase2", second));
        }
    }
    let final_encoder = &phases.last().expect("at least one phase").1.encoder;

    let mut out = OutDir::create(&args.common.out_dir, "train")?;
    out.write_config(&p)?;
    let names: Vec<&str> = phases.iter().map(|(n, _)| *n).collect();
    save_checkpoint(final_encoder, &out.file("encoder.emb"), &names.join("+"))?;
    out.file("encoder.json");
    let metrics: Vec<_> = phases.iter().flat_map(|(_, r)| r.epochs.iter().cloned()).collect();
    cvgl::jsonl::write_jsonl(&metrics, out.file("metrics.jsonl"))?;
    let summary = serde_json::json!({
        "chance_r1": 1.0 / p.world.n_locations as f64,
        "phases": phases.iter().map(|(n, r)| phase_summary(n, r)).collect::<Vec<_>>(),
    });
    out.write_json("summary.json", &summary)?;
    write_embeddings_for(&mut out, final_encoder, &world)?;

    for m in &metrics {
        let r1: Vec<String> = m.r1.iter().map(|(k, v)| format!("{k} {v:.3}")).collect();
        println!("{} epoch {:>2}  loss {:.4}  R@1 {}", m.phase, m.epoch, m.mean_loss, r1.join("  "));
    }
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct RetrievalParams {
    ks: Vec<usize>,
    top_percent: f64,
}

impl Default for RetrievalParams {
    fn default() -> Self {
        Self { ks: vec![1, 5, 10], top_percent: 1.0 }
    }
}

pub fn eval_retrieval(args: EvalRetrievalArgs) -> Result<()> {
    let mut p: RetrievalParams = load_config(args.common.config.as_deref())?;
    if let Some(ks) = args.ks {
        p.ks = ks;
    }
    if let Some(t) = args.top_percent {
        p.top_percent = t;
    }
    let queries = read_embeddings(&args.queries).with_context(|| format!("reading {}", args.queries.display()))?;
    let gallery = read_embeddings(&args.gallery).with_context(|| format!("reading {}", args.gallery.display()))?;
    let truth = GroundTruth::load(&args.gt).with_context(|| format!("reading {}", args.gt.display()))?;
    let resolved = truth.resolve(queries.ids(), gallery.ids())?;
    let ranking = cosine_topk(&queries, &gallery, gallery.len())?;
    let report = evaluate_metrics(&ranking, &resolved, &p.ks, p.top_percent)?;

    let mut out = OutDir::create(&args.common.out_dir, "eval-retrieval")?;
    out.write_config(&p)?;
    out.write_json("report.json", &report)?;
    let table = report.to_table();
    out.write("report.txt", &table)?;
    print!("{table}");
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
struct LossCheckParams {
    batch: usize,
    dim: usize,
    world_sizes: Vec<usize>,
    seed: u64,
    logit_scale: f64,
    label_smoothing: f64,
    tolerance: f64,
}

impl Default for LossCheckParams {
    fn default() -> Self {
        Self {
            batch: 20,
            dim: 8,
            world_sizes: vec![1, 2, 4, 5],
            seed: 0,
            logit_scale: DEFAULT_LOGIT_SCALE,
            label_smoothing: DEFAULT_LABEL_SMOOTHING,
            tolerance: 1e-9,
        }
    }
}

pub fn loss_check(args: LossCheckArgs) -> Result<()> {
    let mut p: LossCheckParams = load_config(args.common.config.as_deref())?;
    if let Some(b) = args.batch {
        p.batch = b;
    }
    if let Some(d) = args.dim {
        p.dim = d;
    }
    if let Some(w) = args.world_sizes {
        p.world_sizes = w;
    }
    if let Some(s) = args.seed {
        p.seed = s;
    }
    if let Some(e) = args.label_smoothing {
        p.label_smoothing = e;
    }
    if let Some(t) = args.tolerance {
        p.tolerance = t;
    }
    let loss = LossConfig::new(p.logit_scale, p.label_smoothing).map_err(|e| UsageError(e.to_string()))?;
    let (f1, f2) = random_features(p.batch, p.dim, p.seed);
    let rows = equivalence_report(&f1, &f2, &p.world_sizes, &loss)?;

    let mut out = OutDir::create(&args.common.out_dir, "loss-check")?;
    out.write_config(&p)?;
    out.write_json("report.json", &rows)?;
    println!("{:>3}  {:>12}  {:>10}  {:>10}  {:>6}  {:>12}  {:>12}", "W", "loss", "loss dev", "grad dev", "1/W", "DDP bytes", "DP bytes");
    for r in &rows {
        println!(
            "{:>3}  {:>12.9}  {:>10.2e}  {:>10.2e}  {:>6.3}  {:>12}  {:>12}",
            r.world_size,
            r.reference_loss,
            r.max_loss_deviation,
            r.max_grad_deviation,
            r.param_grad_average_factor,
            r.ddp_bytes_per_rank,
            r.dp_bytes_at_hub
        );
    }
    out.finish()?;
    for r in &rows {
        let dev = r.max_loss_deviation.max(r.max_grad_deviation);
        if dev > p.tolerance {
            bail!("world size {} deviates by {dev:e}, above tolerance {:e}", r.world_size, p.tolerance);
        }
    }
    Ok(())
}

pub fn eval_x(args: EvalXArgs) -> Result<()> {
    let vectors = match (&args.prediction_vectors, &args.reference_vectors, args.fallback_embedder) {
        (Some(p), Some(r), false) => Some((p.as_path(), r.as_path())),
        (None, None, true) => None,
        _ => {
            return Err(UsageError("pass either --fallback-embedder or both --prediction-vectors and --reference-vectors".into()).into())
        }
    };
    let report = xbench::evaluate(&args.predictions, &args.references, vectors)?;
    let mut out = OutDir::create(&args.common.out_dir, "eval-x")?;
    let text = report.to_text();
    out.write("report.txt", &text)?;
    out.write("report.json", &report.to_json())?;
    print!("{text}");
    out.finish()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct MixParams {
    #[serde(flatten)]
    spec: MixSpec,
    expand: Vec<Language>,
}

pub fn mix(args: MixArgs) -> Result<()> {
    let mut p: MixParams = load_config(args.common.config.as_deref())?;
    if let Some(s) = args.seed {
        p.spec.seed = s;
    }
    if let Some(langs) = &args.expand {
        p.expand = langs
            .iter()
            .map(|l| l.parse::<Language>().map_err(UsageError))
            .collect::<Result<_, _>>()?;
    }
    let corpora = args
        .manifests
        .iter()
        .map(|m| CorpusManifest::load(m).with_context(|| format!("reading {}", m.display())))
        .collect::<Result<Vec<_>>>()?;
    let merged = mix_corpora(&corpora, &p.spec)?;

    let mut out = OutDir::create(&args.common.out_dir, "mix")?;
    out.write_config(&p)?;
    merged.save(out.file("merged.jsonl"))?;
    let counts = merged.counts_by_dataset();
    let mut summary = serde_json::json!({ "datasets": counts, "total": merged.len() });
    println!("{:<20} {:>10}", "dataset", "records");
    for (tag, n) in &counts {
        println!("{tag:<20} {n:>10}");
    }
    println!("{:<20} {:>10}", "total", merged.len());
    if !p.expand.is_empty() {
        let pairs = expand_mix(&corpora, &p.spec, &p.expand)?;
        let mut per: BTreeMap<&str, usize> = BTreeMap::new();
        for pair in &pairs {
            *per.entry(pair.dataset.as_str()).or_insert(0) += 1;
        }
        println!("expanded pairs: {} ({})", pairs.len(), per.iter().map(|(k, v)| format!("{k} {v}")).collect::<Vec<_>>().join(", "));
        summary["pairs"] = serde_json::json!({ "datasets": per, "total": pairs.len() });
        cvgl::jsonl::write_jsonl(&pairs, out.file("pairs.jsonl"))?;
    }
    out.write_json("summary.json", &summary)?;
    out.finish()
}
