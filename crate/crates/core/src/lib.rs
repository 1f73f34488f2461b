//! Qualitative temporal abstraction, interaction graphs and rare-interaction
//! discovery over multivariate, irregularly sampled time series.

pub mod abstraction;
pub mod allen;
pub mod cluster;
pub mod config;
pub mod discovery;
pub mod error;
pub mod features;
pub mod ingest;
pub mod kb;
pub mod lexicon;
pub mod pipeline;
pub mod qig;
pub mod similarity;
pub mod synth;

pub use abstraction::{
    abstract_object, abstract_patterns, gradient_abstract, make_patterns, make_templates, state_abstract,
    AbstractionOptions, GradientLabel, ObjectSeries, PatternTemplate, QualitativePattern, Sample, StateLabel,
    TemplateLabel,
};
pub use allen::{classify_relation, neighborhood_distance, AllenRelation, Interval, NeighborhoodGraph};
pub use error::{Error, Result};
pub use kb::{KnowledgeBase, Rule};
pub use qig::{build_qig, MatchTolerance, Qig, QigEdge, QigNode, QigOptions};
pub use cluster::{cluster_population, ClusterOptions, Clustering};
pub use config::{PipelineConfig, UniverseMode};
pub use discovery::{discover, DiscoveryOptions, DiscoveryResult, EmOptions, Interpretation, ModelParams, RankedInterpretation, Scores};
pub use features::{featurize, matches, prevalence, FeatureMatrix, PatternRef, PrevalenceReport};
pub use ingest::{ingest, IngestOptions};
pub use lexicon::{LexiconOptions, SubgraphLexicon};
pub use pipeline::{run_pipeline, DiscoveryReport, RunManifest};
pub use similarity::{graph_similarity, subgraph_similarity, SimilarityOptions};
pub use synth::{generate, GroundTruth, PlantedPattern, SynthCohort, SynthSpec};
