//! Stage functions shared by the CLI subcommands and the one-shot `run`
//! command, plus the report they assemble. Each stage reads and writes the
//! artifact formats of the owning modules, so running the subcommands by
//! hand produces the same files as `run`.

mod config;
mod dot;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{AnnotatorSpec, EmbeddingSpec, PipelineConfig, RiskBands};
pub use dot::export_dot;

use crate::cpg::{load_cpg, CpgGraph};
use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::fingerprint::{match_and_alert, Fingerprint, MatchResult};
use crate::graphormer::{embedding_set, EmbeddingSet, ModelConfig, ModelParams};
use crate::io;
use crate::lattice::Lattice;
use crate::lifting::{build_corpus, read_corpus, write_corpus, Annotator, VerifiedCorpus};
use crate::risk::{inherent_risks, normalize_weights, propagate_with, ranking, PropagationConfig, RiskEntry};
use crate::ssckg::{build_ssckg, stats_from_counts, ConstructionStats, CveEntry, CveRecord, SsckgConfig, SsckgGraph};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// File names inside a per-binary work directory.
pub mod artifacts {
    pub const CPG: &str = "cpg.json";
    pub const CORPUS: &str = "corpus.jsonl";
    pub const TEXT_EMBEDDINGS: &str = "text_embeddings.json";
    pub const KG: &str = "kg.json";
    pub const NODE_EMBEDDINGS: &str = "node_embeddings.json";
    pub const RISK: &str = "risk.json";
    pub const ALERTS: &str = "alerts.json";
    pub const REPORT: &str = "report.json";
    pub const DOT: &str = "kg.dot";
}

/// Parses and validates a CPG; the canonical re-serialization is the
/// `ingest` artifact.
pub fn ingest(path: &Path) -> Result<CpgGraph> {
    load_cpg(path)
}

/// Annotates and verifies every function of the graph.
pub fn lift(g: &CpgGraph, annotator: &dyn Annotator, lattice: &Lattice) -> Result<VerifiedCorpus> {
    let functions: Vec<_> = g.function_ids().collect();
    build_corpus(g, &functions, annotator, lattice)
}

/// Text → vector table for every accepted summary, every CVE description
/// and the empty summary of unlabeled entities, keyed in sorted order.
pub fn text_embeddings(
    corpus: &VerifiedCorpus,
    cves: &[CveEntry],
    provider: &dyn EmbeddingProvider,
) -> Result<BTreeMap<String, EmbeddingVector>> {
    let mut texts: Vec<&str> = vec![""];
    texts.extend(corpus.accepted.iter().map(|e| e.annotation.summary.as_str()));
    texts.extend(cves.iter().map(|c| c.description.as_str()));
    texts.sort_unstable();
    texts.dedup();
    texts
        .into_par_iter()
        .map(|t| Ok((t.to_string(), provider.embed(t)?)))
        .collect()
}

pub fn build_kg(
    g: &CpgGraph,
    corpus: &VerifiedCorpus,
    cves: &[CveRecord],
    lattice: &Lattice,
    provider: &dyn EmbeddingProvider,
    cfg: &SsckgConfig,
) -> Result<SsckgGraph> {
    build_ssckg(g, corpus, cves, lattice, provider, cfg)
}

pub fn forward(kg: &SsckgGraph, params: &ModelParams, model: &ModelConfig) -> Result<EmbeddingSet> {
    embedding_set(kg, params, model)
}

/// Output of the scoring stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScores {
    pub source_binary: String,
    pub beta: f64,
    pub iterations: usize,
    pub residual: f64,
    /// Descending by composite risk.
    pub ranking: Vec<RiskEntry>,
}

impl RiskScores {
    /// Composite risk indexed by entity id.
    pub fn by_entity(&self) -> Vec<f64> {
        let n = self.ranking.iter().map(|e| e.entity_id as usize + 1).max().unwrap_or(0);
        let mut out = vec![0.0; n];
        for e in &self.ranking {
            out[e.entity_id as usize] = e.rho;
        }
        out
    }
}

pub fn score(kg: &SsckgGraph, cves: &[CveRecord], cfg: &PropagationConfig) -> Result<RiskScores> {
    let inherent = inherent_risks(kg, cves)?;
    let weights = normalize_weights(kg, cfg)?;
    let risk = propagate_with(&weights, &inherent, cfg)?;
    Ok(RiskScores {
        source_binary: kg.source_binary.clone(),
        beta: cfg.beta,
        iterations: risk.iterations,
        residual: risk.residual,
        ranking: ranking(kg, &weights, &inherent, &risk, cfg.beta),
    })
}

/// Output of the matching stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub source_binary: String,
    pub tau: f64,
    pub results: Vec<MatchResult>,
}

impl MatchReport {
    pub fn alerts(&self) -> Vec<String> {
        self.results
            .iter()
            .filter(|r| r.alert)
            .map(|r| r.fingerprint.clone())
            .collect()
    }
}

pub fn match_fingerprints(set: &EmbeddingSet, repo: &[Fingerprint], tau: f64) -> Result<MatchReport> {
    Ok(MatchReport {
        source_binary: set.source_binary.clone(),
        tau,
        results: match_and_alert(&set.embeddings, repo, tau)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSummary {
    pub total: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub failed: usize,
    pub rejection_rate: f64,
}

impl CorpusSummary {
    pub fn of(corpus: &VerifiedCorpus) -> Self {
        Self {
            total: corpus.total,
            accepted: corpus.accepted.len(),
            rejected: corpus.rejected_count,
            failed: corpus.failed.len(),
            rejection_rate: corpus.rejection_rate(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub tool: String,
    pub version: String,
    pub binary_id: String,
    pub corpus: CorpusSummary,
    pub stats: ConstructionStats,
    pub risk: RiskScores,
    pub matches: Vec<MatchResult>,
    pub alerts: Vec<String>,
    pub config: PipelineConfig,
}

impl RiskReport {
    pub fn has_alerts(&self) -> bool {
        !self.alerts.is_empty()
    }
}

pub fn report(
    cfg: &PipelineConfig,
    cpg_nodes: usize,
    corpus: &VerifiedCorpus,
    kg: &SsckgGraph,
    risk: RiskScores,
    matches: MatchReport,
) -> RiskReport {
    RiskReport {
        tool: "binrisk".into(),
        version: TOOL_VERSION.into(),
        binary_id: kg.source_binary.clone(),
        corpus: CorpusSummary::of(corpus),
        stats: stats_from_counts(cpg_nodes, kg.entities.len(), &kg.clustering, &kg.relations),
        alerts: matches.alerts(),
        matches: matches.results,
        risk,
        config: cfg.clone(),
    }
}

/// Everything loaded once from the config and shared across binaries.
pub struct Resources {
    pub lattice: Lattice,
    pub provider: Box<dyn EmbeddingProvider>,
    pub annotator: Box<dyn Annotator>,
    pub cve_entries: Vec<CveEntry>,
    pub cves: Vec<CveRecord>,
    pub repository: Vec<Fingerprint>,
    pub model: ModelConfig,
    pub params: ModelParams,
}

impl Resources {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let lattice = cfg.lattice()?;
        let provider = cfg.provider()?;
        let annotator = cfg.annotator(&lattice)?;
        let cve_entries = cfg.cve_entries()?;
        let cves = crate::ssckg::cve_records(&cve_entries, provider.as_ref())?;
        let repository = cfg.repository()?;
        let model = cfg.model_config(provider.dimension());
        let params = cfg.model_params(&model)?;
        Ok(Self {
            lattice,
            provider,
            annotator,
            cve_entries,
            cves,
            repository,
            model,
            params,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryOutcome {
    pub work_dir: PathBuf,
    pub report: RiskReport,
}

fn work_dir_name(binary_id: &str) -> String {
    let name: String = binary_id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    match name.trim_matches('.') {
        "" => "binary".into(),
        _ => name,
    }
}

/// All stages for one binary, writing every intermediate artifact into
/// `work_dir`.
pub fn run_binary(cfg: &PipelineConfig, res: &Resources, g: &CpgGraph, work_dir: &Path) -> Result<RiskReport> {
    io::write_atomic(&work_dir.join(artifacts::CPG), g.to_json_string()?.as_bytes())?;

    let corpus = lift(g, res.annotator.as_ref(), &res.lattice)?;
    write_corpus(&work_dir.join(artifacts::CORPUS), &corpus)?;
    // later stages consume the corpus exactly as a separate invocation would
    let corpus = read_corpus(&work_dir.join(artifacts::CORPUS))?;

    let table = text_embeddings(&corpus, &res.cve_entries, res.provider.as_ref())?;
    io::write_json(&work_dir.join(artifacts::TEXT_EMBEDDINGS), &table)?;

    let kg = build_kg(g, &corpus, &res.cves, &res.lattice, res.provider.as_ref(), &cfg.ssckg)?;
    kg.save(&work_dir.join(artifacts::KG))?;

    let set = forward(&kg, &res.params, &res.model)?;
    set.save(&work_dir.join(artifacts::NODE_EMBEDDINGS))?;

    let risk = score(&kg, &res.cves, &cfg.risk)?;
    io::write_json(&work_dir.join(artifacts::RISK), &risk)?;

    let matches = match_fingerprints(&set, &res.repository, cfg.tau)?;
    io::write_json(&work_dir.join(artifacts::ALERTS), &matches)?;

    io::write_atomic(
        &work_dir.join(artifacts::DOT),
        export_dot(&kg, Some(&risk.by_entity()), &cfg.risk_bands).as_bytes(),
    )?;

    let report = report(cfg, g.node_count(), &corpus, &kg, risk, matches);
    io::write_json(&work_dir.join(artifacts::REPORT), &report)?;
    Ok(report)
}

/// Runs every binary, `jobs` at a time, each in `out_dir/<binary id>`.
/// Results come back in input order.
pub fn run_pipeline(cfg: &PipelineConfig, cpg_paths: &[PathBuf], out_dir: &Path, jobs: usize) -> Result<Vec<BinaryOutcome>> {
    let res = Resources::load(cfg)?;
    let graphs: Vec<CpgGraph> = cpg_paths.iter().map(|p| ingest(p)).collect::<Result<_>>()?;
    let mut seen = std::collections::HashSet::new();
    let dirs: Vec<PathBuf> = graphs
        .iter()
        .map(|g| {
            let name = work_dir_name(g.binary_id());
            if !seen.insert(name.clone()) {
                return Err(Error::Pipeline(format!("two inputs map to work directory `{name}`")));
            }
            Ok(out_dir.join(name))
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Pipeline(e.to_string()))?;
    pool.install(|| {
        graphs
            .par_iter()
            .zip(dirs.par_iter())
            .map(|(g, dir)| {
                let report = run_binary(cfg, &res, g, dir)
                    .map_err(|e| Error::Pipeline(format!("{}: {e}", g.binary_id())))?;
                Ok(BinaryOutcome {
                    work_dir: dir.clone(),
                    report,
                })
            })
            .collect()
    })
}
