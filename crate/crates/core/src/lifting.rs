//! Verifier-gated corpus construction.
//!
//! An [`Annotator`] proposes a behavior label, a free-text summary and a set
//! of data-flow claims for each function. Every claim is checked against the
//! PDG; an annotation is accepted only when all of its claims hold.
//! Annotator errors are a third outcome and are never counted as rejections.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpg::{verify_claims, CpgEdge, CpgGraph, CpgNode, DataFlowClaim, EdgeKind, FunctionId, NodeKind, VerifyResult};
use crate::error::{Error, Result};
use crate::io;
use crate::lattice::{Label, Lattice};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    #[serde(default)]
    pub function_id: String,
    pub label: Label,
    #[serde(default)]
    pub summary: String,
    #[serde(default)]
    pub claims: Vec<DataFlowClaim>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationContext {
    pub binary_id: String,
    /// Callee names of the function's call sites, sorted and deduplicated.
    pub callees: Vec<String>,
    /// Names of functions with an AST or CFG edge into this one.
    pub callers: Vec<String>,
}

/// Everything an annotator sees about one function. This is also the JSON
/// request written to external annotator processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRequest {
    pub function_id: String,
    pub nodes: Vec<CpgNode>,
    /// PDG edges leaving the function's nodes, in file order.
    pub pdg_edges: Vec<CpgEdge>,
    pub context: AnnotationContext,
}

impl AnnotationRequest {
    pub fn build(g: &CpgGraph, fid: FunctionId) -> Result<Self> {
        let name = g.function_name(fid).ok_or(Error::UnknownFunction(fid))?;
        let indices = g.function_node_indices(fid);
        let nodes: Vec<CpgNode> = indices.iter().map(|&i| g.nodes()[i].clone()).collect();

        let mut edge_ids = BTreeSet::new();
        let mut callers = BTreeSet::new();
        for &i in indices {
            edge_ids.extend(
                g.out_edge_indices(i)
                    .iter()
                    .copied()
                    .filter(|&e| g.edges()[e].kind == EdgeKind::Pdg),
            );
            for &e in g.in_edge_indices(i) {
                let edge = &g.edges()[e];
                if edge.kind == EdgeKind::Pdg {
                    continue;
                }
                let (src, _) = g.endpoint_indices(edge);
                let caller = g.nodes()[src].function_id;
                if caller != fid {
                    callers.insert(g.function_name(caller).unwrap_or_default().to_string());
                }
            }
        }
        let callees: BTreeSet<String> = nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Call)
            .filter_map(|n| n.attr("callee").map(str::to_string))
            .collect();

        Ok(Self {
            function_id: name.to_string(),
            nodes,
            pdg_edges: edge_ids.into_iter().map(|e| g.edges()[e].clone()).collect(),
            context: AnnotationContext {
                binary_id: g.binary_id().to_string(),
                callees: callees.into_iter().collect(),
                callers: callers.into_iter().collect(),
            },
        })
    }
}

/// Source of behavioral annotations. Implementations are invoked from
/// several threads at once; the built-in ones are deterministic.
pub trait Annotator: Send + Sync {
    fn annotate(&self, request: &AnnotationRequest) -> Result<Annotation>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusEntry {
    pub function_id: String,
    pub annotation: Annotation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedAnnotation {
    pub function_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct VerifiedCorpus {
    pub accepted: Vec<CorpusEntry>,
    pub rejected_count: usize,
    pub failed: Vec<FailedAnnotation>,
    pub total: usize,
}

impl VerifiedCorpus {
    /// Rejections over verified annotations (annotator failures excluded).
    pub fn rejection_rate(&self) -> f64 {
        let verified = self.accepted.len() + self.rejected_count;
        if verified == 0 {
            0.0
        } else {
            self.rejected_count as f64 / verified as f64
        }
    }

    pub fn get(&self, function_id: &str) -> Option<&Annotation> {
        self.accepted
            .iter()
            .find(|e| e.function_id == function_id)
            .map(|e| &e.annotation)
    }

    pub fn by_function(&self) -> IndexMap<&str, &Annotation> {
        self.accepted
            .iter()
            .map(|e| (e.function_id.as_str(), &e.annotation))
            .collect()
    }
}

/// Annotates each function (possibly in parallel), then verifies and
/// accumulates strictly in input order.
///
/// Claims naming nodes absent from the graph count as hallucinations and
/// reject the annotation; labels outside the lattice count as annotator
/// failures.
pub fn build_corpus(
    g: &CpgGraph,
    functions: &[FunctionId],
    annotator: &dyn Annotator,
    lattice: &Lattice,
) -> Result<VerifiedCorpus> {
    for &fid in functions {
        if !g.has_function(fid) {
            return Err(Error::UnknownFunction(fid));
        }
    }
    let outcomes: Vec<(String, Result<Annotation>)> = functions
        .par_iter()
        .map(|&fid| {
            let name = g.function_name(fid).unwrap_or_default().to_string();
            let result = AnnotationRequest::build(g, fid).and_then(|req| annotator.annotate(&req));
            (name, result)
        })
        .collect();

    let mut corpus = VerifiedCorpus {
        total: functions.len(),
        ..Default::default()
    };
    for (function_id, outcome) in outcomes {
        let annotation = match outcome.and_then(|a| lattice.validate(&a.label).map(|_| a)) {
            Ok(a) => a,
            Err(e) => {
                let reason = match e {
                    Error::AnnotatorFailure { reason, .. } => reason,
                    other => other.to_string(),
                };
                corpus.failed.push(FailedAnnotation { function_id, reason });
                continue;
            }
        };
        match verify_claims(g, &annotation.claims) {
            Ok(VerifyResult::Sat) => corpus.accepted.push(CorpusEntry {
                function_id,
                annotation,
            }),
            Ok(VerifyResult::Unsat(_)) | Err(Error::UnknownNode(_)) => corpus.rejected_count += 1,
            Err(e) => return Err(e),
        }
    }
    Ok(corpus)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    /// Literal name, or a prefix when it ends in `*`.
    pub pattern: String,
    pub label: Label,
    /// Summary text for matched functions; derived from the label when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

impl Rule {
    fn matches(&self, candidate: &str) -> bool {
        match self.pattern.strip_suffix('*') {
            Some(prefix) => candidate.starts_with(prefix),
            None => candidate == self.pattern,
        }
    }
}

/// Labels a function by the first rule whose pattern matches its own name or
/// one of its callee names or opcodes. Claims are the function's own PDG edges, so
/// every emitted annotation passes verification.
#[derive(Debug, Clone)]
pub struct RuleAnnotator {
    rules: Vec<Rule>,
}

pub fn rule_annotator(rules: Vec<Rule>, lattice: &Lattice) -> Result<RuleAnnotator> {
    for r in &rules {
        if r.pattern.is_empty() {
            return Err(Error::InvalidRule {
                pattern: r.pattern.clone(),
                reason: "empty pattern".into(),
            });
        }
        if !lattice.contains(&r.label) {
            return Err(Error::InvalidRule {
                pattern: r.pattern.clone(),
                reason: format!("unknown label `{}`", r.label),
            });
        }
    }
    Ok(RuleAnnotator { rules })
}

pub fn load_rules(path: &Path) -> Result<Vec<Rule>> {
    io::read_json(path)
}

/// `Hardware/Register_Read` → `hardware register read`; top → empty.
pub fn label_summary(label: &Label) -> String {
    label
        .segments()
        .iter()
        .map(|s| s.replace('_', " ").to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

impl Annotator for RuleAnnotator {
    fn annotate(&self, request: &AnnotationRequest) -> Result<Annotation> {
        let mut candidates: Vec<&str> = vec![&request.function_id];
        for n in &request.nodes {
            if let Some(callee) = n.attr("callee") {
                candidates.push(callee);
            }
            if !n.opcode.is_empty() {
                candidates.push(&n.opcode);
            }
        }
        let hit = self
            .rules
            .iter()
            .find(|r| candidates.iter().any(|c| r.matches(c)));
        let (label, summary) = match hit {
            Some(r) => (
                r.label.clone(),
                r.summary.clone().unwrap_or_else(|| label_summary(&r.label)),
            ),
            None => (Label::top(), String::new()),
        };
        let mut seen = BTreeSet::new();
        let claims = request
            .pdg_edges
            .iter()
            .map(|e| DataFlowClaim {
                source_node: e.src,
                sink_node: e.dst,
            })
            .filter(|c| seen.insert(*c))
            .collect();
        Ok(Annotation {
            function_id: request.function_id.clone(),
            label,
            summary,
            claims,
        })
    }
}

/// Replays stored annotations (e.g. captured model output) keyed by
/// function name.
#[derive(Debug, Clone)]
pub struct ReplayAnnotator {
    table: IndexMap<String, Annotation>,
}

pub fn replay_annotator(path: &Path) -> Result<ReplayAnnotator> {
    let table: IndexMap<String, Annotation> = io::read_json(path)?;
    Ok(ReplayAnnotator::from_table(table))
}

impl ReplayAnnotator {
    pub fn from_table(mut table: IndexMap<String, Annotation>) -> Self {
        for (key, a) in table.iter_mut() {
            if a.function_id.is_empty() {
                a.function_id = key.clone();
            }
        }
        Self { table }
    }
}

impl Annotator for ReplayAnnotator {
    fn annotate(&self, request: &AnnotationRequest) -> Result<Annotation> {
        self.table
            .get(&request.function_id)
            .cloned()
            .ok_or_else(|| Error::MissingAnnotation(request.function_id.clone()))
    }
}

/// Spawns `program args...` once per function, writes the
/// [`AnnotationRequest`] JSON to its stdin and parses an [`Annotation`] from
/// its stdout. A non-zero exit status is an annotator failure.
#[derive(Debug, Clone)]
pub struct CommandAnnotator {
    program: PathBuf,
    args: Vec<String>,
}

impl CommandAnnotator {
    pub fn new(program: impl Into<PathBuf>, args: Vec<String>) -> Self {
        Self {
            program: program.into(),
            args,
        }
    }
}

impl Annotator for CommandAnnotator {
    fn annotate(&self, request: &AnnotationRequest) -> Result<Annotation> {
        let fail = |reason: String| Error::AnnotatorFailure {
            function_id: request.function_id.clone(),
            reason,
        };
        let payload = serde_json::to_vec(request).map_err(|e| fail(e.to_string()))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("spawn {}: {e}", self.program.display())))?;
        {
            let mut stdin = child.stdin.take().expect("stdin is piped");
            // a child that exits without reading its input surfaces below via its status
            let _ = stdin.write_all(&payload);
        }
        let output = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(fail(format!("exit status {}: {}", output.status, stderr.trim())));
        }
        let mut a: Annotation =
            serde_json::from_slice(&output.stdout).map_err(|e| fail(format!("bad response: {e}")))?;
        if a.function_id.is_empty() {
            a.function_id = request.function_id.clone();
        }
        Ok(a)
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CorpusLine {
    Accepted {
        function_id: String,
        annotation: Annotation,
    },
    Trailer {
        accepted: usize,
        rejected: usize,
        failed: Vec<FailedAnnotation>,
        total: usize,
    },
}

/// JSON lines: one `accepted` record per line, then a `trailer` with totals.
pub fn corpus_to_jsonl(corpus: &VerifiedCorpus) -> Result<String> {
    let mut out = String::new();
    let mut push = |line: &CorpusLine| -> Result<()> {
        out.push_str(
            &serde_json::to_string(line).map_err(|e| Error::Pipeline(e.to_string()))?,
        );
        out.push('\n');
        Ok(())
    };
    for e in &corpus.accepted {
        push(&CorpusLine::Accepted {
            function_id: e.function_id.clone(),
            annotation: e.annotation.clone(),
        })?;
    }
    push(&CorpusLine::Trailer {
        accepted: corpus.accepted.len(),
        rejected: corpus.rejected_count,
        failed: corpus.failed.clone(),
        total: corpus.total,
    })?;
    Ok(out)
}

pub fn write_corpus(path: &Path, corpus: &VerifiedCorpus) -> Result<()> {
    io::write_atomic(path, corpus_to_jsonl(corpus)?.as_bytes())
}

pub fn read_corpus(path: &Path) -> Result<VerifiedCorpus> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut corpus = VerifiedCorpus::default();
    let mut trailer_seen = false;
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: CorpusLine = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        match parsed {
            CorpusLine::Accepted {
                function_id,
                annotation,
            } => corpus.accepted.push(CorpusEntry {
                function_id,
                annotation,
            }),
            CorpusLine::Trailer {
                accepted,
                rejected,
                failed,
                total,
            } => {
                if accepted != corpus.accepted.len() || accepted + rejected + failed.len() != total {
                    return Err(Error::Parse(format!(
                        "{}: trailer totals do not match the records",
                        path.display()
                    )));
                }
                corpus.rejected_count = rejected;
                corpus.failed = failed;
                corpus.total = total;
                trailer_seen = true;
            }
        }
    }
    if !trailer_seen {
        return Err(Error::Parse(format!("{}: missing trailer record", path.display())));
    }
    Ok(corpus)
}
