use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use binrisk::error::{Error, Result};
use binrisk::fingerprint::{extract_fingerprint, load_repository, load_scores, roc_auc, select_threshold};
use binrisk::graphormer::{save_params, EmbeddingSet};
use binrisk::io;
use binrisk::lattice::{evr, load_golden_set, EvrMode};
use binrisk::lifting::{read_corpus, write_corpus};
use binrisk::metrics::{classification_metrics, ConfusionCounts};
use binrisk::pipeline::{self, MatchReport, PipelineConfig, RiskScores};
use binrisk::ssckg::{construction_stats, EntityId, SsckgGraph};

#[derive(Parser)]
#[command(name = "binrisk", version, about = "Risk analysis over code property graphs of stripped binaries")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Pipeline configuration (TOML). Built-in defaults when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a CPG and write it in canonical form.
    Ingest {
        #[arg(long)]
        cpg: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Annotate every function and keep the annotations whose claims verify.
    Lift {
        #[arg(long)]
        cpg: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed corpus summaries and CVE descriptions into a text -> vector table.
    Embed {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        cves: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collapse a CPG into the knowledge graph.
    BuildSsckg {
        #[arg(long)]
        cpg: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        cves: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write construction statistics here.
        #[arg(long)]
        stats: Option<PathBuf>,
    },
    /// Entity embeddings from the graph transformer.
    Forward {
        #[arg(long)]
        kg: PathBuf,
        /// Parameter file; seeded initialization when absent.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Write the parameters used.
        #[arg(long)]
        save_params: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Inherent and composite risk per entity.
    Score {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        cves: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fingerprint utilities.
    Fingerprint {
        #[command(subcommand)]
        action: FingerprintAction,
    },
    /// Match entity embeddings against a fingerprint repository. Exits 2 on alerts.
    Match {
        #[arg(long)]
        kg_embeddings: PathBuf,
        #[arg(long)]
        repo: Option<PathBuf>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Choose the alert threshold from labeled similarity scores.
    Threshold {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        fpr_cap: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Assemble the report from stage artifacts. Exits 2 on alerts.
    Report {
        #[arg(long)]
        cpg: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        risk: PathBuf,
        #[arg(long)]
        alerts: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the knowledge graph as Graphviz DOT.
    ExportDot {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        risk: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classification metrics from confusion counts.
    Metrics {
        /// tp,fp,tn,fn
        #[arg(long)]
        confusion: ConfusionCounts,
    },
    /// Violation rate of predicted labels against a golden set.
    Evr {
        #[arg(long)]
        golden: PathBuf,
        #[arg(long, value_enum, default_value_t = EvrArg::Cover)]
        mode: EvrArg,
    },
    /// All stages for each CPG. Exits 2 when any binary raises an alert.
    Run {
        #[arg(long)]
        out_dir: PathBuf,
        /// Binaries processed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(required = true)]
        cpgs: Vec<PathBuf>,
    },
}

#[derive(Subcommand)]
enum FingerprintAction {
    /// Build a fingerprint from selected entities of an embedding set.
    Extract {
        #[arg(long)]
        kg_embeddings: PathBuf,
        /// Comma-separated entity ids.
        #[arg(long, value_delimiter = ',', required = true)]
        entities: Vec<EntityId>,
        #[arg(long)]
        name: String,
        #[arg(long, default_value = "")]
        provenance: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EvrArg {
    Cover,
    Exact,
}

enum Outcome {
    Ok,
    Alerts,
}

fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn with_cves(mut cfg: PipelineConfig, cves: &Option<PathBuf>) -> PipelineConfig {
    if let Some(p) = cves {
        cfg.cves = Some(absolute(p));
    }
    cfg
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    print!("{}", io::to_json_pretty(value)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<Outcome> {
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Ingest { cpg, out } => {
            let g = pipeline::ingest(&cpg)?;
            io::write_atomic(&out, g.to_json_string()?.as_bytes())?;
        }
        Command::Lift { cpg, out } => {
            let g = pipeline::ingest(&cpg)?;
            let lattice = cfg.lattice()?;
            let annotator = cfg.annotator(&lattice)?;
            let corpus = pipeline::lift(&g, annotator.as_ref(), &lattice)?;
            write_corpus(&out, &corpus)?;
            eprintln!(
                "lift: {} accepted, {} rejected, {} failed of {}",
                corpus.accepted.len(),
                corpus.rejected_count,
                corpus.failed.len(),
                corpus.total
            );
        }
        Command::Embed { corpus, cves, out } => {
            let cfg = with_cves(cfg, &cves);
            let corpus = read_corpus(&corpus)?;
            let provider = cfg.provider()?;
            let table = pipeline::text_embeddings(&corpus, &cfg.cve_entries()?, provider.as_ref())?;
            io::write_json(&out, &table)?;
        }
        Command::BuildSsckg {
            cpg,
            corpus,
            cves,
            out,
            stats,
        } => {
            let cfg = with_cves(cfg, &cves);
            let g = pipeline::ingest(&cpg)?;
            let corpus = read_corpus(&corpus)?;
            let lattice = cfg.lattice()?;
            let provider = cfg.provider()?;
            let records = cfg.cve_records(provider.as_ref())?;
            let kg = pipeline::build_kg(&g, &corpus, &records, &lattice, provider.as_ref(), &cfg.ssckg)?;
            kg.save(&out)?;
            if let Some(stats) = stats {
                io::write_json(&stats, &construction_stats(&g, &kg))?;
            }
        }
        Command::Forward {
            kg,
            params,
            save_params: save_to,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(p) = params {
                cfg.model_params = Some(absolute(&p));
            }
            let kg = SsckgGraph::load(&kg)?;
            let dim = kg
                .entities
                .first()
                .map(|e| e.embedding.dimension())
                .ok_or(Error::EmptyGraph)?;
            let model = cfg.model_config(dim);
            let params = cfg.model_params(&model)?;
            if let Some(path) = save_to {
                save_params(&path, &model, &params)?;
            }
            pipeline::forward(&kg, &params, &model)?.save(&out)?;
        }
        Command::Score { kg, cves, beta, out } => {
            let mut cfg = with_cves(cfg, &cves);
            if let Some(b) = beta {
                cfg.risk.beta = b;
            }
            let kg = SsckgGraph::load(&kg)?;
            let provider = cfg.provider()?;
            let records = cfg.cve_records(provider.as_ref())?;
            io::write_json(&out, &pipeline::score(&kg, &records, &cfg.risk)?)?;
        }
        Command::Fingerprint {
            action:
                FingerprintAction::Extract {
                    kg_embeddings,
                    entities,
                    name,
                    provenance,
                    out,
                },
        } => {
            let set = EmbeddingSet::load(&kg_embeddings)?;
            extract_fingerprint(&set, &entities, &name, &provenance)?.save(&out)?;
        }
        Command::Match {
            kg_embeddings,
            repo,
            tau,
            out,
        } => {
            let set = EmbeddingSet::load(&kg_embeddings)?;
            let repository = match repo {
                Some(dir) => load_repository(&dir)?,
                None => cfg.repository()?,
            };
            let report = pipeline::match_fingerprints(&set, &repository, tau.unwrap_or(cfg.tau))?;
            io::write_json(&out, &report)?;
            if !report.alerts().is_empty() {
                eprintln!("match: alerts raised for {}", report.alerts().join(", "));
                return Ok(Outcome::Alerts);
            }
        }
        Command::Threshold { scores, fpr_cap, out } => {
            let samples = load_scores(&scores)?;
            let report = select_threshold(&samples, &cfg.grid, fpr_cap.unwrap_or(cfg.fpr_cap))?;
            let auc = roc_auc(&samples)?;
            io::write_json(&out, &serde_json::json!({ "threshold": report, "roc_auc": auc }))?;
            eprintln!(
                "threshold: tau {} tpr {:.3} fpr {:.3} auc {:.3}",
                report.tau, report.tpr, report.fpr, auc
            );
        }
        Command::Report {
            cpg,
            corpus,
            kg,
            risk,
            alerts,
            out,
        } => {
            let g = pipeline::ingest(&cpg)?;
            let corpus = read_corpus(&corpus)?;
            let kg = SsckgGraph::load(&kg)?;
            let risk: RiskScores = io::read_json(&risk)?;
            let matches: MatchReport = io::read_json(&alerts)?;
            let report = pipeline::report(&cfg, g.node_count(), &corpus, &kg, risk, matches);
            io::write_json(&out, &report)?;
            if report.has_alerts() {
                return Ok(Outcome::Alerts);
            }
        }
        Command::ExportDot { kg, risk, out } => {
            let kg = SsckgGraph::load(&kg)?;
            let values = match risk {
                Some(p) => Some(io::read_json::<RiskScores>(&p)?.by_entity()),
                None => None,
            };
            let dot = pipeline::export_dot(&kg, values.as_deref(), &cfg.risk_bands);
            io::write_atomic(&out, dot.as_bytes())?;
        }
        Command::Metrics { confusion } => {
            print_json(&classification_metrics(&confusion)?)?;
        }
        Command::Evr { golden, mode } => {
            let lattice = cfg.lattice()?;
            let records = load_golden_set(&golden)?;
            let mode = match mode {
                EvrArg::Cover => EvrMode::LatticeCover,
                EvrArg::Exact => EvrMode::ExactTierMatch,
            };
            print_json(&serde_json::json!({
                "records": records.len(),
                "evr": evr(&lattice, &records, mode)?,
            }))?;
        }
        Command::Run { out_dir, jobs, cpgs } => {
            let outcomes = pipeline::run_pipeline(&cfg, &cpgs, &out_dir, jobs)?;
            let mut alerted = false;
            for o in &outcomes {
                let top = o.report.risk.ranking.first();
                eprintln!(
                    "run: {} -> {} ({} entities, top risk {})",
                    o.report.binary_id,
                    o.work_dir.display(),
                    o.report.stats.entities,
                    top.map(|e| format!("{} {:.4}", e.name, e.rho)).unwrap_or_default()
                );
                for a in &o.report.alerts {
                    eprintln!("run: ALERT {} matches fingerprint {a}", o.report.binary_id);
                    alerted = true;
                }
            }
            if alerted {
                return Ok(Outcome::Alerts);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Alerts) => ExitCode::from(2),
        Err(e) => {
            eprintln!("binrisk: {e}");
            ExitCode::from(1)
        }
    }
}
