//! End-to-end driver: ingest, abstract, build graphs, discover, report
//! prevalence and export features, persisting every intermediate.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{abstract_object, AbstractionOptions, ObjectSeries, PatternTemplate};
use crate::config::{PipelineConfig, UniverseMode};
use crate::discovery::{discover, sample_significant, ClusterSummary, EmStep, ModelParams, RankedInterpretation};
use crate::error::{Error, Result};
use crate::features::{featurize, prevalence, FeatureMatrix, PatternRef, PrevalenceReport};
use crate::ingest::{self, IngestOptions};
use crate::kb::KnowledgeBase;
use crate::lexicon::{full_universe, observed_universe, SubgraphLexicon};
use crate::qig::{build_qig_with, read_jsonl, write_jsonl, Qig};

pub const TEMPLATES_FILE: &str = "templates.jsonl";
pub const GRAPHS_FILE: &str = "graphs.jsonl";
pub const LEXICON_FILE: &str = "lexicon.json";
pub const DISCOVERY_FILE: &str = "discovery.json";
pub const PREVALENCE_FILE: &str = "prevalence.json";
pub const PREVALENCE_TABLE_FILE: &str = "prevalence.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "run_manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectTemplates {
    pub object_id: String,
    pub templates: Vec<PatternTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedInterpretation {
    #[serde(flatten)]
    pub ranked: RankedInterpretation,
    pub labels: Vec<String>,
    /// Filled once prevalence has been computed against labelled cohorts.
    pub positive_prevalence: Option<f64>,
    pub negative_prevalence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryReport {
    pub seed: u64,
    pub sampling_rate: f64,
    pub params: ModelParams,
    pub q_initial: f64,
    pub converged: bool,
    pub trace: Vec<EmStep>,
    pub n_clusters: usize,
    pub clusters: Vec<ClusterSummary>,
    pub total_candidates: usize,
    /// The significant interpretations, best first.
    pub interpretations: Vec<ReportedInterpretation>,
}

impl DiscoveryReport {
    pub fn patterns(&self, limit: Option<usize>) -> Vec<PatternRef> {
        let n = limit.map_or(self.interpretations.len(), |l| l.min(self.interpretations.len()));
        self.interpretations[..n].iter().map(|r| PatternRef::from_ranked(&r.ranked)).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactDigest {
    pub name: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub artifacts: Vec<ArtifactDigest>,
}

/// Files written during one invocation. On failure, [`Artifacts::discard`]
/// removes them so no partial run is left behind.
#[derive(Debug)]
pub struct Artifacts {
    dir: PathBuf,
    created: bool,
    written: Vec<ArtifactDigest>,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let created = !dir.exists();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self {
            dir,
            created,
            written: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(name);
        self.written.retain(|a| a.name != name);
        self.written.push(ArtifactDigest {
            name: name.to_owned(),
            sha256: hex::encode(Sha256::digest(bytes)),
            bytes: bytes.len() as u64,
        });
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write_with(name, |buf| {
            serde_json::to_writer_pretty(&mut *buf, value)?;
            buf.push(b'\n');
            Ok(())
        })
    }

    pub fn written(&self) -> &[ArtifactDigest] {
        &self.written
    }

    pub fn discard(&mut self) {
        for a in self.written.drain(..) {
            let path = self.dir.join(&a.name);
            if let Err(e) = std::fs::remove_file(&path) {
                log::warn!("could not remove {}: {e}", path.display());
            }
        }
        if self.created {
            // Only succeeds if nothing else was put there meanwhile.
            let _ = std::fs::remove_dir(&self.dir);
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("`{key}` is required")))
}

pub fn load_kb(cfg: &PipelineConfig) -> Result<KnowledgeBase> {
    match &cfg.knowledge_base {
        Some(p) => KnowledgeBase::load(p),
        None => Ok(KnowledgeBase::default_icu()),
    }
}

pub fn load_objects(cfg: &PipelineConfig, kb: &KnowledgeBase) -> Result<Vec<ObjectSeries>> {
    let input = require(&cfg.input, "input")?;
    let mut options = IngestOptions {
        cutoff: cfg.window_cutoff,
        ..IngestOptions::default()
    };
    match (&cfg.outcomes, cfg.window_cutoff) {
        (Some(p), _) => options.outcome_times = ingest::read_outcome_times(p)?,
        (None, Some(_)) => return Err(Error::Config("`window_cutoff` needs `outcomes`".into())),
        (None, None) => {}
    }
    ingest::ingest(input, kb, &options)
}

pub fn load_labels(cfg: &PipelineConfig) -> Result<Option<BTreeMap<String, bool>>> {
    cfg.labels.as_ref().map(ingest::read_labels).transpose()
}

pub fn abstract_cohort(objects: &[ObjectSeries], kb: &KnowledgeBase, cfg: &PipelineConfig) -> Result<Vec<ObjectTemplates>> {
    let options = AbstractionOptions {
        max_sampling_gap: cfg.max_sampling_gap,
    };
    objects
        .par_iter()
        .map(|o| {
            Ok(ObjectTemplates {
                object_id: o.object_id.clone(),
                templates: abstract_object(o, kb, &options)?,
            })
        })
        .collect()
}

pub fn build_graphs(templates: &[ObjectTemplates], cfg: &PipelineConfig) -> Vec<Qig> {
    let options = cfg.qig_options();
    templates
        .par_iter()
        .map(|t| build_qig_with(t.object_id.clone(), &t.templates, &options))
        .collect()
}

/// The cohort discovery runs on: the positives when labels are known,
/// otherwise everyone.
pub fn discovery_cohort(graphs: &[Qig], labels: Option<&BTreeMap<String, bool>>) -> Result<Vec<Qig>> {
    let Some(labels) = labels else {
        return Ok(graphs.to_vec());
    };
    let mut out = Vec::new();
    for g in graphs {
        match labels.get(g.object_id()) {
            Some(true) => out.push(g.clone()),
            Some(false) => {}
            None => return Err(Error::Config(format!("no label for object `{}`", g.object_id()))),
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyInput("positive cohort".into()));
    }
    Ok(out)
}

/// Lexicon over the labels observed in `graphs`, or over every label of the
/// variables they mention.
pub fn build_run_lexicon(graphs: &[Qig], cfg: &PipelineConfig) -> Result<SubgraphLexicon> {
    let observed = observed_universe(graphs);
    let universe = match cfg.universe {
        UniverseMode::Observed => observed,
        UniverseMode::Full => {
            let vars: std::collections::BTreeSet<&str> = observed.iter().map(|l| l.variable()).collect();
            full_universe(vars)
        }
    };
    SubgraphLexicon::from_universe(universe, cfg.lexicon_options())
}

pub fn run_discovery(graphs: &[Qig], lex: &SubgraphLexicon, cfg: &PipelineConfig) -> Result<DiscoveryReport> {
    let result = discover(graphs, lex, &cfg.discovery_options())?;
    let sampled = sample_significant(&result, cfg.sampling_rate)?;
    Ok(DiscoveryReport {
        seed: cfg.seed,
        sampling_rate: cfg.sampling_rate,
        params: result.params,
        q_initial: result.q_initial,
        converged: result.converged,
        trace: result.trace.clone(),
        n_clusters: result.clustering.n_clusters,
        clusters: result.clusters.clone(),
        total_candidates: result.ranked.len(),
        interpretations: sampled
            .iter()
            .map(|r| ReportedInterpretation {
                labels: r.interpretation.labels().iter().map(ToString::to_string).collect(),
                ranked: r.clone(),
                positive_prevalence: None,
                negative_prevalence: None,
            })
            .collect(),
    })
}

fn split_cohorts(graphs: &[Qig], labels: &BTreeMap<String, bool>) -> Result<(Vec<Qig>, Vec<Qig>)> {
    let (mut pos, mut neg) = (Vec::new(), Vec::new());
    for g in graphs {
        match labels.get(g.object_id()) {
            Some(true) => pos.push(g.clone()),
            Some(false) => neg.push(g.clone()),
            None => return Err(Error::Config(format!("no label for object `{}`", g.object_id()))),
        }
    }
    Ok((pos, neg))
}

/// Prevalence of every reported interpretation; also fills the report's
/// per-cohort placeholders.
pub fn report_prevalence(
    report: &mut DiscoveryReport,
    graphs: &[Qig],
    labels: &BTreeMap<String, bool>,
    cfg: &PipelineConfig,
) -> Result<PrevalenceReport> {
    let (pos, neg) = split_cohorts(graphs, labels)?;
    let prev = prevalence(&report.patterns(None), &pos, &neg, cfg.tolerance())?;
    for (r, p) in report.interpretations.iter_mut().zip(&prev.patterns) {
        r.positive_prevalence = (prev.n_positive > 0).then_some(p.positive_prevalence);
        r.negative_prevalence = (prev.n_negative > 0).then_some(p.negative_prevalence);
    }
    Ok(prev)
}

pub fn report_features(
    report: &DiscoveryReport,
    graphs: &[Qig],
    labels: Option<&BTreeMap<String, bool>>,
    cfg: &PipelineConfig,
) -> Result<FeatureMatrix> {
    featurize(graphs, &report.patterns(cfg.max_features), labels, cfg.tolerance(), cfg.feature_counts)
}

pub fn write_templates(w: &mut impl Write, templates: &[ObjectTemplates]) -> Result<()> {
    for t in templates {
        serde_json::to_writer(&mut *w, t)?;
        w.write_all(b"\n").map_err(|e| Error::io("<templates>", e))?;
    }
    Ok(())
}

pub fn read_templates(path: impl AsRef<Path>) -> Result<Vec<ObjectTemplates>> {
    let path = path.as_ref();
    let source = path.display().to_string();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: source.clone(),
            line: n + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_graphs(path: impl AsRef<Path>) -> Result<Vec<Qig>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(f), &path.display().to_string())
}

/// The lexicon manifest as compact JSON; it runs to millions of labels.
pub fn write_lexicon(w: &mut impl Write, lex: &SubgraphLexicon) -> Result<()> {
    serde_json::to_writer(&mut *w, &lex.manifest())?;
    w.write_all(b"\n").map_err(|e| Error::io("<lexicon>", e))
}

fn stages(cfg: &PipelineConfig, out: &mut Artifacts) -> Result<()> {
    out.write(CONFIG_FILE, cfg.to_text().as_bytes()).map_err(|e| e.in_stage("config"))?;
    let kb = load_kb(cfg).map_err(|e| e.in_stage("ingest"))?;
    let objects = load_objects(cfg, &kb).map_err(|e| e.in_stage("ingest"))?;
    let labels = load_labels(cfg).map_err(|e| e.in_stage("ingest"))?;
    log::info!("ingested {} objects", objects.len());

    let templates = abstract_cohort(&objects, &kb, cfg).map_err(|e| e.in_stage("abstract"))?;
    out.write_with(TEMPLATES_FILE, |b| write_templates(b, &templates))
        .map_err(|e| e.in_stage("abstract"))?;
    drop(objects);

    let graphs = build_graphs(&templates, cfg);
    out.write_with(GRAPHS_FILE, |b| write_jsonl(b, &graphs))
        .map_err(|e| e.in_stage("build-graphs"))?;
    drop(templates);

    let cohort = discovery_cohort(&graphs, labels.as_ref()).map_err(|e| e.in_stage("discover"))?;
    let lex = build_run_lexicon(&cohort, cfg).map_err(|e| e.in_stage("lexicon"))?;
    out.write_with(LEXICON_FILE, |b| write_lexicon(b, &lex))
        .map_err(|e| e.in_stage("lexicon"))?;
    log::info!("lexicon of {} entries over {} labels", lex.len(), lex.universe().len());

    let mut report = run_discovery(&cohort, &lex, cfg).map_err(|e| e.in_stage("discover"))?;
    drop((cohort, lex));
    if let Some(labels) = &labels {
        let prev = report_prevalence(&mut report, &graphs, labels, cfg).map_err(|e| e.in_stage("prevalence"))?;
        out.write_json(PREVALENCE_FILE, &prev).map_err(|e| e.in_stage("prevalence"))?;
        out.write(PREVALENCE_TABLE_FILE, prev.to_table().as_bytes())
            .map_err(|e| e.in_stage("prevalence"))?;
    }
    out.write_json(DISCOVERY_FILE, &report).map_err(|e| e.in_stage("discover"))?;

    let matrix = report_features(&report, &graphs, labels.as_ref(), cfg).map_err(|e| e.in_stage("featurize"))?;
    out.write_with(FEATURES_FILE, |b| matrix.write_csv(b))
        .map_err(|e| e.in_stage("featurize"))?;
    Ok(())
}

/// Runs every stage into `output_dir` and writes the run manifest. On error
/// the files this run wrote are removed.
pub fn run_pipeline(cfg: &PipelineConfig, output_dir: impl AsRef<Path>) -> Result<RunManifest> {
    cfg.validate()?;
    let mut out = Artifacts::new(output_dir.as_ref())?;
    let result = stages(cfg, &mut out).and_then(|()| {
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_owned(),
            seed: cfg.seed,
            config: cfg.clone(),
            artifacts: out.written().to_vec(),
        };
        out.write_json(MANIFEST_FILE, &manifest).map_err(|e| e.in_stage("manifest"))?;
        Ok(manifest)
    });
    if result.is_err() {
        out.discard();
    }
    result
}
