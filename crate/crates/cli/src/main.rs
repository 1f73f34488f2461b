use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use qig_core::config::PipelineConfig;
use qig_core::error::{Error, Result};
use qig_core::pipeline::{self, Artifacts, DiscoveryReport};
use qig_core::qig::write_jsonl;
use qig_core::synth::{self, SynthSpec};
use qig_core::KnowledgeBase;

#[derive(Parser, Debug)]
#[command(name = "qig", version, about = "Mine rare temporal interactions from multivariate time series")]
struct Cli {
    /// Master random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for per-object stages (default: available parallelism).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Directory that receives the command's artifacts.
    #[arg(long, global = true, default_value = ".")]
    output_dir: PathBuf,

    /// `key = value` configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// More diagnostics on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Abstract raw samples into pattern templates (templates.jsonl).
    Abstract {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build one interaction graph per object (graphs.jsonl).
    BuildGraphs {
        /// templates.jsonl from `abstract`.
        #[arg(long)]
        templates: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Build the lexicon and rank interpretations (lexicon.json, discovery.json).
    Discover {
        /// graphs.jsonl from `build-graphs`.
        #[arg(long)]
        graphs: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Prevalence of the reported interpretations in each cohort.
    Prevalence {
        #[arg(long)]
        graphs: PathBuf,
        /// discovery.json from `discover`.
        #[arg(long)]
        discovery: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Export the pattern-indicator feature matrix (features.csv).
    Featurize {
        #[arg(long)]
        graphs: PathBuf,
        #[arg(long)]
        discovery: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic cohort with planted interactions.
    Synth(SynthArgs),
    /// Run every stage and write a run manifest.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    #[arg(long)]
    knowledge_base: Option<PathBuf>,
    /// Long-format samples: object_id,variable,timestamp,value.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Outcome labels: object_id,label.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Outcome times: object_id,outcome_time.
    #[arg(long)]
    outcomes: Option<PathBuf>,
    /// Drop samples within this many seconds of the outcome.
    #[arg(long)]
    window_cutoff: Option<f64>,
    #[arg(long)]
    max_sampling_gap: Option<f64>,
    #[arg(long)]
    max_gap: Option<f64>,
    #[arg(long)]
    k_max: Option<usize>,
    #[arg(long)]
    lexicon_cap: Option<usize>,
    /// `observed` or `full`.
    #[arg(long)]
    universe: Option<String>,
    #[arg(long)]
    min_support: Option<f64>,
    /// Three comma-separated initial λ values.
    #[arg(long)]
    lambda_init: Option<String>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long)]
    lambda_cap: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    symmetric: Option<bool>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    max_clusters: Option<usize>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    sampling_rate: Option<f64>,
    #[arg(long)]
    d_max: Option<u32>,
    #[arg(long)]
    w_slack: Option<u32>,
    #[arg(long)]
    max_features: Option<usize>,
    #[arg(long)]
    feature_counts: Option<bool>,
}

impl ConfigArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        fn s<T: ToString>(out: &mut Vec<(&'static str, String)>, k: &'static str, v: &Option<T>) {
            if let Some(v) = v {
                out.push((k, v.to_string()));
            }
        }
        let p = |v: &Option<PathBuf>| v.as_ref().map(|p| p.display().to_string());
        let mut out = Vec::new();
        s(&mut out, "knowledge_base", &p(&self.knowledge_base));
        s(&mut out, "input", &p(&self.input));
        s(&mut out, "labels", &p(&self.labels));
        s(&mut out, "outcomes", &p(&self.outcomes));
        s(&mut out, "window_cutoff", &self.window_cutoff);
        s(&mut out, "max_sampling_gap", &self.max_sampling_gap);
        s(&mut out, "max_gap", &self.max_gap);
        s(&mut out, "k_max", &self.k_max);
        s(&mut out, "lexicon_cap", &self.lexicon_cap);
        s(&mut out, "universe", &self.universe);
        s(&mut out, "min_support", &self.min_support);
        s(&mut out, "lambda_init", &self.lambda_init);
        s(&mut out, "tol", &self.tol);
        s(&mut out, "max_iter", &self.max_iter);
        s(&mut out, "lambda_cap", &self.lambda_cap);
        s(&mut out, "epsilon", &self.epsilon);
        s(&mut out, "symmetric", &self.symmetric);
        s(&mut out, "k_neighbors", &self.k_neighbors);
        s(&mut out, "max_clusters", &self.max_clusters);
        s(&mut out, "restarts", &self.restarts);
        s(&mut out, "sampling_rate", &self.sampling_rate);
        s(&mut out, "d_max", &self.d_max);
        s(&mut out, "w_slack", &self.w_slack);
        s(&mut out, "max_features", &self.max_features);
        s(&mut out, "feature_counts", &self.feature_counts);
        out
    }
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// JSON cohort specification; defaults to the built-in preset.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    /// Use the built-in preset (the default when no spec is given).
    #[arg(long)]
    preset: bool,
    #[arg(long)]
    n_pos: Option<usize>,
    #[arg(long)]
    n_neg: Option<usize>,
    #[arg(long)]
    plant_rate: Option<f64>,
    #[arg(long)]
    knowledge_base: Option<PathBuf>,
}

/// Defaults, then the config file, then flags.
fn resolve(cli: &Cli, args: &ConfigArgs) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        cfg.apply_text(&text, &path.display().to_string())?;
    }
    for (k, v) in args.pairs() {
        cfg.set(k, &v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs `body` against a fresh artifact set, removing whatever it wrote if
/// it fails.
fn with_artifacts(dir: &Path, stage: &'static str, body: impl FnOnce(&mut Artifacts) -> Result<()>) -> Result<()> {
    let mut out = Artifacts::new(dir)?;
    let result = body(&mut out).map_err(|e| e.in_stage(stage));
    if result.is_err() {
        out.discard();
    } else {
        for a in out.written() {
            log::info!("wrote {} ({} bytes)", out.path(&a.name).display(), a.bytes);
        }
    }
    result
}

fn labels_of(cfg: &PipelineConfig) -> Result<Option<BTreeMap<String, bool>>> {
    pipeline::load_labels(cfg)
}

fn synth(cli: &Cli, args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_reader(std::io::BufReader::new(f))?
        }
        None => SynthSpec::preset(cli.seed.unwrap_or(0)),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    if args.n_pos.is_some() || args.n_neg.is_some() {
        let (n_pos, n_neg) = (args.n_pos.unwrap_or(spec.n_pos), args.n_neg.unwrap_or(spec.n_neg));
        spec = spec.with_sizes(n_pos, n_neg);
    }
    if let Some(rate) = args.plant_rate {
        spec.plant_rate = rate;
    }
    let kb = match &args.knowledge_base {
        Some(p) => KnowledgeBase::load(p)?,
        None => KnowledgeBase::default_icu(),
    };
    let cohort = synth::generate(&spec, &kb)?;
    with_artifacts(&cli.output_dir, "synth", |out| {
        out.write_with("samples.csv", |b| cohort.write_csv(b))?;
        out.write_with("labels.csv", |b| cohort.write_labels(b))?;
        out.write_json("truth.json", &cohort.truth)
    })
}

fn execute(cli: &Cli) -> Result<()> {
    let dir = cli.output_dir.as_path();
    match &cli.command {
        Command::Abstract { cfg } => {
            let cfg = resolve(cli, cfg)?;
            let kb = pipeline::load_kb(&cfg).map_err(|e| e.in_stage("ingest"))?;
            let objects = pipeline::load_objects(&cfg, &kb).map_err(|e| e.in_stage("ingest"))?;
            let templates = pipeline::abstract_cohort(&objects, &kb, &cfg).map_err(|e| e.in_stage("abstract"))?;
            with_artifacts(dir, "abstract", |out| {
                out.write_with(pipeline::TEMPLATES_FILE, |b| pipeline::write_templates(b, &templates))
            })
        }
        Command::BuildGraphs { templates, cfg } => {
            let cfg = resolve(cli, cfg)?;
            let templates = pipeline::read_templates(templates).map_err(|e| e.in_stage("build-graphs"))?;
            let graphs = pipeline::build_graphs(&templates, &cfg);
            with_artifacts(dir, "build-graphs", |out| {
                out.write_with(pipeline::GRAPHS_FILE, |b| write_jsonl(b, &graphs))
            })
        }
        Command::Discover { graphs, cfg } => {
            let cfg = resolve(cli, cfg)?;
            let graphs = pipeline::read_graphs(graphs).map_err(|e| e.in_stage("discover"))?;
            let labels = labels_of(&cfg).map_err(|e| e.in_stage("discover"))?;
            let cohort = pipeline::discovery_cohort(&graphs, labels.as_ref()).map_err(|e| e.in_stage("discover"))?;
            let lex = pipeline::build_run_lexicon(&cohort, &cfg).map_err(|e| e.in_stage("lexicon"))?;
            let report = pipeline::run_discovery(&cohort, &lex, &cfg).map_err(|e| e.in_stage("discover"))?;
            with_artifacts(dir, "discover", |out| {
                out.write_with(pipeline::LEXICON_FILE, |b| pipeline::write_lexicon(b, &lex))?;
                out.write_json(pipeline::DISCOVERY_FILE, &report)
            })
        }
        Command::Prevalence { graphs, discovery, cfg } => {
            let cfg = resolve(cli, cfg)?;
            let graphs = pipeline::read_graphs(graphs).map_err(|e| e.in_stage("prevalence"))?;
            let mut report = DiscoveryReport::load(discovery).map_err(|e| e.in_stage("prevalence"))?;
            let labels = labels_of(&cfg)
                .and_then(|l| l.ok_or_else(|| Error::Config("`labels` is required for prevalence".into())))
                .map_err(|e| e.in_stage("prevalence"))?;
            let prev = pipeline::report_prevalence(&mut report, &graphs, &labels, &cfg).map_err(|e| e.in_stage("prevalence"))?;
            with_artifacts(dir, "prevalence", |out| {
                out.write_json(pipeline::PREVALENCE_FILE, &prev)?;
                out.write(pipeline::PREVALENCE_TABLE_FILE, prev.to_table().as_bytes())?;
                out.write_json(pipeline::DISCOVERY_FILE, &report)
            })
        }
        Command::Featurize { graphs, discovery, cfg } => {
            let cfg = resolve(cli, cfg)?;
            let graphs = pipeline::read_graphs(graphs).map_err(|e| e.in_stage("featurize"))?;
            let report = DiscoveryReport::load(discovery).map_err(|e| e.in_stage("featurize"))?;
            let labels = labels_of(&cfg).map_err(|e| e.in_stage("featurize"))?;
            let matrix = pipeline::report_features(&report, &graphs, labels.as_ref(), &cfg).map_err(|e| e.in_stage("featurize"))?;
            with_artifacts(dir, "featurize", |out| {
                out.write_with(pipeline::FEATURES_FILE, |b| matrix.write_csv(b))
            })
        }
        Command::Synth(args) => synth(cli, args),
        Command::Run { cfg } => {
            let cfg = resolve(cli, cfg)?;
            let manifest = pipeline::run_pipeline(&cfg, dir)?;
            for a in &manifest.artifacts {
                log::info!("{}  {}", a.sha256, a.name);
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start {n} workers: {e}");
            return ExitCode::from(2);
        }
    }
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(u8::try_from(e.exit_code()).unwrap_or(1))
        }
    }
}
