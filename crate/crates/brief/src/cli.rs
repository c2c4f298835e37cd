//! Command-line entry point.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, LevelFilter};
use serde::{Deserialize, Serialize};

use brief_core::evaluator::{gen_synthetic, SurrogateEvaluator, SurrogateSpec, SyntheticConfig, TrainEvaluator};
use brief_core::features::{Discretization, TimeCourses, FISHER_Z_CLIP};
use brief_core::graph::{GraphDoc, LayerGraph};
use brief_core::ncs::{run_search_timed, Evaluator, SearchConfig};
use brief_core::nn::templates::dense_chain;
use brief_core::nn::TrainConfig;
use brief_core::pipeline::{
    extract_all, optimize_encoder, rank_importance, template_for, test_split, train_brief, BriefConfig, BriefData, EncoderSearch, FeatureParams, Provenance,
    Rankings, Stream, StreamFlags, SubjectFeatures,
};

use crate::checkpoint::Checkpoint;
use crate::corpus::{load_corpus, write_corpus};
use crate::dot::to_dot;
use crate::io::{read_json, read_matrix_csv, write_json, write_jsonl, write_matrix_csv, write_table_csv};
use crate::manifest::RunManifest;
use crate::parallel::par_map;

#[derive(Debug, Parser)]
#[command(name = "brief", version, about = "Connection search, temporal features and fused classification for brain time courses")]
struct Cli {
    /// Seed for every stochastic component; overrides seeds in --config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON configuration for the subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true, default_value = "warn")]
    log_level: LevelFilter,
    /// Worker threads for per-subject and per-stream work.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Feature extraction.
    Features {
        #[command(subcommand)]
        action: FeaturesCmd,
    },
    /// Connection search.
    Search {
        #[command(subcommand)]
        action: SearchCmd,
    },
    /// Model training.
    Train {
        #[command(subcommand)]
        action: TrainCmd,
    },
    /// Region and stream rankings from a trained model.
    Rank(RankArgs),
    /// Synthetic two-class corpus with planted structure.
    GenData(GenDataArgs),
    /// Graphviz rendering of a graph document.
    GraphRender(RenderArgs),
}

#[derive(Debug, Subcommand)]
enum FeaturesCmd {
    /// TC, FNC, dFNC and MsDE for one CSV or every subject of a corpus.
    Extract(ExtractArgs),
}

#[derive(Debug, Subcommand)]
enum SearchCmd {
    Run(SearchArgs),
}

#[derive(Debug, Subcommand)]
enum TrainCmd {
    /// Four-stream fused classifier.
    Brief(TrainArgs),
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// Time-course CSV (rows = time points) or corpus directory.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    tc: bool,
    #[arg(long)]
    fnc: bool,
    /// Window length and step.
    #[arg(long, num_args = 2, value_names = ["W", "S"])]
    dfnc: Option<Vec<usize>>,
    #[arg(long)]
    msde: bool,
    /// Dispersion classes.
    #[arg(long)]
    classes: Option<u32>,
    /// Embedding dimension.
    #[arg(long)]
    embedding: Option<usize>,
    #[arg(long)]
    delay: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    scales: Option<Vec<usize>>,
    /// Min-max discretisation instead of the normal CDF.
    #[arg(long)]
    minmax: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvaluatorKind {
    Surrogate,
    Train,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StreamArg {
    Tc,
    Fnc,
    Dfnc,
    Msde,
}

impl From<StreamArg> for Stream {
    fn from(s: StreamArg) -> Self {
        match s {
            StreamArg::Tc => Stream::Tc,
            StreamArg::Fnc => Stream::Fnc,
            StreamArg::Dfnc => Stream::Dfnc,
            StreamArg::Msde => Stream::Msde,
        }
    }
}

#[derive(Debug, Args)]
struct SearchArgs {
    /// Graph document to search over. Defaults to the six-node dense chain
    /// (surrogate) or the stream's template encoder (train).
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = EvaluatorKind::Surrogate)]
    evaluator: EvaluatorKind,
    /// Surrogate specification JSON.
    #[arg(long)]
    surrogate: Option<PathBuf>,
    /// Corpus directory for the train evaluator.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = StreamArg::Fnc)]
    stream: StreamArg,
    #[command(flatten)]
    search: SearchFlags,
}

/// Overrides for every search setting.
#[derive(Debug, Args)]
struct SearchFlags {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    /// Defaults to the length of the exploration schedule.
    #[arg(long)]
    iterations: Option<usize>,
    /// Exploration schedule as comma-separated `epsilon:iterations` stages.
    #[arg(long, value_delimiter = ',')]
    schedule: Option<Vec<String>>,
    #[arg(long)]
    replay_capacity: Option<usize>,
    #[arg(long)]
    replay_samples: Option<usize>,
    /// Training epochs per candidate (train evaluator).
    #[arg(long)]
    eval_epochs: Option<usize>,
    #[arg(long)]
    start_node: Option<u32>,
    #[arg(long)]
    decoupled_type_draw: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Enabled streams; defaults to the configuration.
    #[arg(long, value_enum, value_delimiter = ',')]
    streams: Option<Vec<StreamArg>>,
    /// Streams whose encoders are searched before training.
    #[arg(long, value_enum, value_delimiter = ',')]
    optimize: Option<Vec<StreamArg>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// Checkpoint written by `train brief`.
    #[arg(long)]
    model: PathBuf,
    /// Corpus directory.
    #[arg(long)]
    data: PathBuf,
    /// Rank over every subject instead of the checkpoint's test subjects.
    #[arg(long)]
    all: bool,
}

#[derive(Debug, Args)]
struct GenDataArgs {
    /// Same generator with no class difference.
    #[arg(long)]
    chance: bool,
    #[arg(long)]
    subjects_per_class: Option<usize>,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    graph: PathBuf,
}

/// Settings for `search run` and `train brief`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub brief: BriefConfig,
    pub search: SearchConfig,
    /// Streams whose encoders are searched before training.
    pub optimize: Vec<Stream>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

struct Session {
    args: Vec<String>,
    seed: Option<u64>,
    config: Option<PathBuf>,
    out_dir: PathBuf,
    jobs: usize,
}

impl Session {
    fn config<T: Default + serde::de::DeserializeOwned>(&self) -> Result<T> {
        match &self.config {
            Some(p) => read_json(p),
            None => Ok(T::default()),
        }
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out_dir).with_context(|| format!("cannot create {}", self.out_dir.display()))?;
        Ok(&self.out_dir)
    }
}

/// Runs the CLI on `argv` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let _ = env_logger::Builder::new().filter_level(cli.log_level).format_timestamp(None).is_test(cfg!(test)).try_init();
    let ctx = Session {
        args: argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect(),
        seed: cli.seed,
        config: cli.config,
        out_dir: cli.out_dir,
        jobs: usize::from(cli.jobs),
    };
    let outcome = match cli.command {
        Command::Features { action: FeaturesCmd::Extract(a) } => features_extract(&ctx, a),
        Command::Search { action: SearchCmd::Run(a) } => search_run(&ctx, a),
        Command::Train { action: TrainCmd::Brief(a) } => train(&ctx, a),
        Command::Rank(a) => rank(&ctx, a),
        Command::GenData(a) => gen_data(&ctx, a),
        Command::GraphRender(a) => graph_render(&ctx, a),
    };
    match outcome {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            2
        }
    }
}

fn features_extract(ctx: &Session, a: ExtractArgs) -> Result<(), Failure> {
    let mut params: FeatureParams = ctx.config()?;
    let any = a.tc || a.fnc || a.dfnc.is_some() || a.msde;
    let streams = if any { StreamFlags { tc: a.tc, fnc: a.fnc, dfnc: a.dfnc.is_some(), msde: a.msde } } else { StreamFlags::default() };
    if let Some(ws) = &a.dfnc {
        (params.window, params.step) = (ws[0], ws[1]);
    }
    let m = &mut params.msde;
    m.classes = a.classes.unwrap_or(m.classes);
    m.embedding = a.embedding.unwrap_or(m.embedding);
    m.delay = a.delay.unwrap_or(m.delay);
    if let Some(s) = a.scales {
        m.scales = s;
    }
    if a.minmax {
        m.discretization = Discretization::MinMax;
    }
    if !a.input.exists() {
        return Err(usage(format!("--in {} does not exist", a.input.display())));
    }
    let out = ctx.out_dir()?;
    let mut manifest = RunManifest::new("features extract", &ctx.args, ctx.seed.unwrap_or(0), &(&params, streams))?;
    if a.input.is_dir() {
        let subjects = load_corpus(&a.input)?;
        let results = par_map(&subjects, ctx.jobs, |s| extract_all(&s.tc, &params, streams));
        for (s, f) in subjects.iter().zip(results) {
            let f = f.map_err(anyhow::Error::from)?;
            let dir = out.join(&s.tc.subject_id);
            fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
            for name in write_features(&dir, &f)? {
                manifest.outputs.push(format!("{}/{name}", s.tc.subject_id));
            }
        }
        info!("extracted features for {} subjects", subjects.len());
    } else {
        let id = a.input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let tc = TimeCourses::new(id, read_matrix_csv(&a.input)?).map_err(anyhow::Error::from)?;
        let f = extract_all(&tc, &params, streams).map_err(anyhow::Error::from)?;
        manifest.outputs.extend(write_features(out, &f)?);
    }
    manifest.write(out)?;
    Ok(())
}

#[derive(Serialize)]
struct FeatureSidecar<'a> {
    #[serde(flatten)]
    provenance: &'a Provenance,
    fisher_z_clip_margin: f64,
}

fn write_features(dir: &Path, f: &SubjectFeatures) -> Result<Vec<String>> {
    let mut written = Vec::new();
    for s in Stream::ALL {
        if let Some(m) = f.matrix(s) {
            let name = format!("{}.csv", s.name());
            write_matrix_csv(&dir.join(&name), m)?;
            written.push(name);
        }
    }
    write_json(&dir.join("features.json"), &FeatureSidecar { provenance: &f.provenance, fisher_z_clip_margin: FISHER_Z_CLIP })?;
    written.push("features.json".into());
    Ok(written)
}

impl SearchFlags {
    fn apply(&self, cfg: &mut SearchConfig) -> Result<(), Failure> {
        cfg.alpha = self.alpha.unwrap_or(cfg.alpha);
        cfg.gamma = self.gamma.unwrap_or(cfg.gamma);
        cfg.k_max = self.k_max.unwrap_or(cfg.k_max);
        cfg.iterations = self.iterations.or(cfg.iterations);
        cfg.replay_capacity = self.replay_capacity.unwrap_or(cfg.replay_capacity);
        cfg.replay_samples_per_iter = self.replay_samples.unwrap_or(cfg.replay_samples_per_iter);
        cfg.eval_epochs = self.eval_epochs.unwrap_or(cfg.eval_epochs);
        cfg.start_node = self.start_node.or(cfg.start_node);
        cfg.decoupled_type_draw |= self.decoupled_type_draw;
        if let Some(stages) = &self.schedule {
            let parsed = stages
                .iter()
                .map(|s| {
                    let (e, n) = s.split_once(':')?;
                    Some((e.trim().parse().ok()?, n.trim().parse().ok()?))
                })
                .collect::<Option<Vec<(f64, usize)>>>()
                .ok_or_else(|| usage("--schedule expects stages like 1.0:100,0.5:10"))?;
            cfg.schedule = brief_core::EpsilonSchedule::new(parsed).map_err(|e| usage(format!("--schedule: {e}")))?;
        }
        Ok(())
    }
}

fn experiment(ctx: &Session, flags: &SearchFlags) -> Result<ExperimentConfig, Failure> {
    let mut cfg: ExperimentConfig = ctx.config()?;
    if let Some(seed) = ctx.seed {
        cfg.brief.seed = seed;
        cfg.search.seed = seed;
    }
    flags.apply(&mut cfg.search)?;
    Ok(cfg)
}

fn load_data(dir: &Path, cfg: &BriefConfig, jobs: usize) -> Result<BriefData> {
    let subjects = load_corpus(dir)?;
    let features = par_map(&subjects, jobs, |s| extract_all(&s.tc, &cfg.features, cfg.streams));
    let features = features.into_iter().collect::<Result<Vec<_>, _>>()?;
    let labels: Vec<usize> = subjects.iter().map(|s| s.label).collect();
    Ok(BriefData::from_features(&features, &labels, cfg.streams)?)
}

#[derive(Serialize)]
struct SearchSummary<'a> {
    best: Option<&'a brief_core::Episode>,
    best_reward: Option<f64>,
    iterations: usize,
    qtable: Vec<brief_core::ncs::QEntry>,
}

fn search_run(ctx: &Session, a: SearchArgs) -> Result<(), Failure> {
    let mut cfg = experiment(ctx, &a.search)?;
    let stream = Stream::from(a.stream);
    cfg.search.validate().map_err(|e| usage(format!("search settings: {e}")))?;
    let data = match (a.evaluator, &a.data) {
        (EvaluatorKind::Train, None) => return Err(usage("--evaluator train needs --data <corpus dir>")),
        (EvaluatorKind::Train, Some(dir)) => {
            cfg.brief.streams = StreamFlags::only(stream);
            Some(load_data(dir, &cfg.brief, ctx.jobs)?)
        }
        (EvaluatorKind::Surrogate, _) => None,
    };
    let dataset = data.as_ref().map(|d| d.stream_dataset(stream, &(0..d.labels.len()).collect::<Vec<_>>()).expect("stream was extracted"));
    let graph = match (&a.graph, &dataset) {
        (Some(p), _) => LayerGraph::from_doc(read_json::<GraphDoc>(p)?).map_err(anyhow::Error::from)?,
        (None, Some(ds)) => template_for(stream, ds.shape, &cfg.brief).map_err(anyhow::Error::from)?,
        (None, None) => dense_chain(4, 4, 8).map_err(anyhow::Error::from)?,
    };
    let spec: SurrogateSpec = match &a.surrogate {
        Some(p) => read_json(p)?,
        None => SurrogateSpec::default(),
    };
    let mut evaluator: Box<dyn Evaluator + '_> = match &dataset {
        Some(ds) => Box::new(TrainEvaluator::new(ds, TrainConfig { epochs: cfg.search.eval_epochs, seed: cfg.search.seed, ..cfg.brief.training.clone() })),
        None => {
            spec.validate().map_err(|e| usage(format!("surrogate spec: {e}")))?;
            Box::new(SurrogateEvaluator { spec: spec.clone() })
        }
    };
    let started = Instant::now();
    let mut clock = || started.elapsed().as_millis() as u64;
    let result = run_search_timed(&graph, evaluator.as_mut(), &cfg.search, &mut clock);
    let out = ctx.out_dir()?;
    let log = match &result {
        Ok(r) => &r.log,
        Err(f) => &f.log,
    };
    write_jsonl(&out.join("search.jsonl"), log)?;
    let result = result.map_err(anyhow::Error::from)?;
    let mut manifest = RunManifest::new("search run", &ctx.args, cfg.search.seed, &cfg)?;
    manifest.outputs.extend(["search.jsonl", "result.json"].map(String::from));
    let summary = SearchSummary {
        best: result.best.as_ref(),
        best_reward: result.best.as_ref().and_then(|e| e.reward),
        iterations: result.log.len(),
        qtable: result.qtable.iter().collect(),
    };
    write_json(&out.join("result.json"), &summary)?;
    if let Some(g) = &result.best_graph {
        write_json(&out.join("best_graph.json"), &g.to_doc())?;
        fs::write(out.join("best_graph.dot"), to_dot(g)).context("cannot write best_graph.dot")?;
        manifest.outputs.extend(["best_graph.json", "best_graph.dot"].map(String::from));
    }
    info!("search finished: best reward {:?}", summary.best_reward);
    manifest.write(out)?;
    Ok(())
}

fn train(ctx: &Session, a: TrainArgs) -> Result<(), Failure> {
    let mut cfg = experiment(ctx, &a.search)?;
    if let Some(s) = &a.streams {
        let mut flags = StreamFlags { tc: false, fnc: false, dfnc: false, msde: false };
        s.iter().for_each(|s| flags.set((*s).into(), true));
        cfg.brief.streams = flags;
    }
    if let Some(o) = &a.optimize {
        cfg.optimize = o.iter().map(|s| (*s).into()).collect();
    }
    if let Some(e) = a.epochs {
        cfg.brief.training.epochs = e;
    }
    cfg.brief.validate().map_err(|e| usage(format!("configuration: {e}")))?;
    if !cfg.optimize.is_empty() {
        cfg.search.validate().map_err(|e| usage(format!("search settings: {e}")))?;
    }
    if let Some(s) = cfg.optimize.iter().find(|s| !cfg.brief.streams.get(**s)) {
        return Err(usage(format!("--optimize {s} names a disabled stream")));
    }
    let data = load_data(&a.data, &cfg.brief, ctx.jobs)?;
    let out = ctx.out_dir()?;
    let mut outputs: Vec<String> = Vec::new();

    let (train_idx, _) = test_split(&data.labels, &cfg.brief);
    let started = Instant::now();
    let searches = par_map(&cfg.optimize, ctx.jobs, |&s| {
        let mut clock = || started.elapsed().as_millis() as u64;
        optimize_encoder(s, &data, &train_idx, &cfg.brief, &cfg.search, &mut clock)
    });
    let mut brief = cfg.brief.clone();
    for s in searches {
        let s: EncoderSearch = s.map_err(anyhow::Error::from)?;
        let name = s.stream.name();
        write_jsonl(&out.join(format!("search_{name}.jsonl")), &s.log)?;
        write_json(&out.join(format!("encoder_{name}.json")), &s.graph.to_doc())?;
        fs::write(out.join(format!("encoder_{name}.dot")), to_dot(&s.graph)).context("cannot write DOT")?;
        outputs.extend([format!("search_{name}.jsonl"), format!("encoder_{name}.json"), format!("encoder_{name}.dot")]);
        info!("{name}: template reward {:.3}, best searched {:.3}", s.baseline_reward, s.best_reward);
        brief.encoders.insert(s.stream, s.graph.to_doc());
    }

    let (model, report) = train_brief(&data, &brief).map_err(anyhow::Error::from)?;
    info!("test accuracy {:.3}", report.metrics.accuracy);
    write_json(&out.join("metrics.json"), &report.metrics)?;
    write_table_csv(&out.join("loss_curve.csv"), &["epoch", "loss"], report.loss_curve.iter().enumerate().map(|(i, l)| [(i + 1).to_string(), l.to_string()]))?;
    let selected = data.select(brief.streams).map_err(anyhow::Error::from)?;
    let rankings = rank_importance(&model, &selected, &report.test).map_err(anyhow::Error::from)?;
    write_rankings(out, &rankings)?;
    let ids = |idx: &[usize]| idx.iter().map(|&i| data.subject_ids[i].clone()).collect();
    let ckpt = Checkpoint { config: brief, train_subjects: ids(&report.train), test_subjects: ids(&report.test), model };
    write_json(&out.join("model.json"), &ckpt)?;
    outputs.extend(["metrics.json", "loss_curve.csv", "model.json", "rankings.csv", "streams.csv"].map(String::from));
    let mut manifest = RunManifest::new("train brief", &ctx.args, cfg.brief.seed, &cfg)?;
    manifest.outputs = outputs;
    manifest.write(out)?;
    Ok(())
}

fn write_rankings(out: &Path, r: &Rankings) -> Result<()> {
    write_table_csv(
        &out.join("rankings.csv"),
        &["stream", "rank", "region", "weight"],
        r.regions.iter().flat_map(|rr| {
            rr.ranking
                .iter()
                .enumerate()
                .map(move |(i, &region)| [rr.stream.name().to_string(), (i + 1).to_string(), region.to_string(), rr.weights[region - 1].to_string()])
        }),
    )?;
    write_table_csv(
        &out.join("streams.csv"),
        &["rank", "stream", "mass"],
        r.streams.iter().enumerate().map(|(i, s)| [(i + 1).to_string(), s.stream.name().to_string(), s.mass.to_string()]),
    )
}

fn rank(ctx: &Session, a: RankArgs) -> Result<(), Failure> {
    let ckpt: Checkpoint = read_json(&a.model)?;
    let data = load_data(&a.data, &ckpt.config, ctx.jobs)?;
    if data.streams != ckpt.model.streams() {
        return Err(Failure::Runtime(anyhow::anyhow!("corpus streams {:?} do not match the model's {:?}", data.streams, ckpt.model.streams())));
    }
    let idx: Vec<usize> = if a.all {
        (0..data.labels.len()).collect()
    } else {
        let idx: Vec<usize> = (0..data.labels.len()).filter(|&i| ckpt.test_subjects.contains(&data.subject_ids[i])).collect();
        if idx.is_empty() {
            return Err(usage("none of the checkpoint's test subjects are in --data; pass --all to rank every subject"));
        }
        idx
    };
    let rankings = rank_importance(&ckpt.model, &data, &idx).map_err(anyhow::Error::from)?;
    let out = ctx.out_dir()?;
    write_rankings(out, &rankings)?;
    write_json(&out.join("rankings.json"), &rankings)?;
    let mut manifest = RunManifest::new("rank", &ctx.args, ckpt.config.seed, &ckpt.config)?;
    manifest.outputs.extend(["rankings.csv", "streams.csv", "rankings.json"].map(String::from));
    manifest.write(out)?;
    Ok(())
}

fn gen_data(ctx: &Session, a: GenDataArgs) -> Result<(), Failure> {
    let mut cfg: SyntheticConfig = ctx.config()?;
    if let Some(seed) = ctx.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.subjects_per_class {
        cfg.subjects_per_class = n;
    }
    if a.chance {
        cfg = cfg.chance();
    }
    cfg.validate().map_err(|e| usage(format!("generator settings: {e}")))?;
    let subjects = gen_synthetic(&cfg).map_err(anyhow::Error::from)?;
    let out = ctx.out_dir()?;
    let corpus = write_corpus(out, &cfg, &subjects)?;
    let mut manifest = RunManifest::new("gen-data", &ctx.args, cfg.seed, &cfg)?;
    manifest.outputs.push(crate::corpus::MANIFEST.into());
    manifest.outputs.extend(corpus.subjects.into_iter().map(|e| e.file));
    manifest.write(out)?;
    info!("wrote {} subjects", subjects.len());
    Ok(())
}

fn graph_render(ctx: &Session, a: RenderArgs) -> Result<(), Failure> {
    let doc: GraphDoc = read_json(&a.graph)?;
    let graph = LayerGraph::from_doc(doc.clone()).map_err(anyhow::Error::from)?;
    let name = format!("{}.dot", a.graph.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "graph".into()));
    let out = ctx.out_dir()?;
    fs::write(out.join(&name), to_dot(&graph)).with_context(|| format!("cannot write {name}"))?;
    let mut manifest = RunManifest::new("graph-render", &ctx.args, ctx.seed.unwrap_or(0), &doc)?;
    manifest.outputs.push(name);
    manifest.write(out)?;
    Ok(())
}
