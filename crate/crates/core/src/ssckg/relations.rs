use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::{Entity, EntityId, Relation, RelationTarget, RelationType};
use crate::cpg::{CpgGraph, EdgeKind, NodeKind};
use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::lattice::Label;
use crate::ssckg::CveRecord;

/// Per-type relation weight `w`. Only the ordering is meaningful: data-flow
/// hazards outweigh plain structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationWeights {
    pub calls: f64,
    pub depends_on: f64,
    pub imports: f64,
    pub reads_from: f64,
    pub writes_to: f64,
    pub taints: f64,
    pub reaches: f64,
    pub vulnerable_to: f64,
}

impl Default for RelationWeights {
    fn default() -> Self {
        Self {
            calls: 0.3,
            depends_on: 0.2,
            imports: 0.2,
            reads_from: 0.4,
            writes_to: 0.6,
            taints: 1.0,
            reaches: 0.8,
            vulnerable_to: 1.0,
        }
    }
}

impl RelationWeights {
    pub fn get(&self, t: RelationType) -> f64 {
        match t {
            RelationType::Calls => self.calls,
            RelationType::DependsOn => self.depends_on,
            RelationType::Imports => self.imports,
            RelationType::ReadsFrom => self.reads_from,
            RelationType::WritesTo => self.writes_to,
            RelationType::Taints => self.taints,
            RelationType::Reaches => self.reaches,
            RelationType::VulnerableTo => self.vulnerable_to,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for t in RelationType::ALL {
            let w = self.get(t);
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Ssckg(format!("weight for {} must be positive, got {w}", t.as_str())));
            }
        }
        Ok(())
    }
}

fn labels(names: &[&str]) -> Vec<Label> {
    names.iter().map(|n| n.parse().expect("static label")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RelationConfig {
    pub weights: RelationWeights,
    /// Entities labeled at or below one of these carry attacker-controlled input.
    pub taint_sources: Vec<Label>,
    /// Entities labeled at or below one of these perform sensitive operations.
    pub taint_sinks: Vec<Label>,
    pub read_actions: Vec<Label>,
    pub write_actions: Vec<Label>,
    /// AST edge labels (case-insensitive) that become `imports`.
    pub import_labels: Vec<String>,
    /// AST edge labels (case-insensitive) that become `depends_on`.
    pub depends_labels: Vec<String>,
    /// AST edge labels treated as calls in addition to edges leaving a call node.
    pub call_labels: Vec<String>,
    pub cve_match_threshold: f64,
}

impl Default for RelationConfig {
    fn default() -> Self {
        Self {
            weights: RelationWeights::default(),
            taint_sources: labels(&["Network/Protocol_Parse"]),
            taint_sinks: labels(&[
                "Hardware/Coil_Write",
                "Hardware/Register_Write",
                "Hardware/Firmware_Update",
            ]),
            read_actions: labels(&["Hardware/Register_Read"]),
            write_actions: labels(&[
                "Hardware/Coil_Write",
                "Hardware/Register_Write",
                "Hardware/Firmware_Update",
            ]),
            import_labels: vec!["imports".into(), "import".into()],
            depends_labels: vec!["depends_on".into(), "links".into()],
            call_labels: vec!["call".into(), "calls".into()],
            cve_match_threshold: 0.85,
        }
    }
}

fn under_any(label: &Label, roots: &[Label]) -> bool {
    !label.is_top() && roots.iter().any(|r| r.is_prefix_of(label))
}

fn label_in(label: &str, set: &[String]) -> bool {
    set.iter().any(|s| s.eq_ignore_ascii_case(label))
}

fn reachable_from(adj: &[BTreeSet<usize>], start: usize) -> Vec<bool> {
    let mut seen = vec![false; adj.len()];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                queue.push_back(v);
            }
        }
    }
    seen
}

/// Lifts inter-entity CPG edges into typed relations.
///
/// * AST edges become `imports` / `depends_on` by label, otherwise `calls`
///   when they leave a call node or carry a call label.
/// * A PDG edge `u → v` yields `writes_to(u, v)` when `v` is a write
///   action and `reads_from(v, u)` when `u` is a read action.
/// * `taints(s, t)` for every taint source `s` with a PDG path to a sink `t`.
/// * Every entity PDG-reachable from a source is tainted; `reaches(e, t)`
///   holds for tainted `e` with any AST/PDG path to a sink `t`.
/// * `vulnerable_to(e, c)` for every CVE whose description embedding has
///   cosine at least `cve_match_threshold` with the entity's summary.
///
/// Edges inside one entity produce nothing. Output is deduplicated on
/// `(src, type, dst)` and sorted.
pub fn extract_relations(
    g: &CpgGraph,
    entities: &[Entity],
    cves: &[CveRecord],
    cfg: &RelationConfig,
) -> Result<Vec<Relation>> {
    cfg.weights.validate()?;
    let n = entities.len();
    let mut entity_of = vec![usize::MAX; g.node_count()];
    for (ei, e) in entities.iter().enumerate() {
        for &m in &e.members {
            let idx = g
                .node_index(m)
                .ok_or_else(|| Error::Ssckg(format!("entity {} names absent node {m}", e.id)))?;
            if entity_of[idx] != usize::MAX {
                return Err(Error::Ssckg(format!("node {m} belongs to two entities")));
            }
            entity_of[idx] = ei;
        }
    }
    if let Some(idx) = entity_of.iter().position(|&e| e == usize::MAX) {
        return Err(Error::Ssckg(format!(
            "node {} is not covered by any entity",
            g.nodes()[idx].id
        )));
    }

    let mut triples: BTreeSet<(EntityId, RelationType, RelationTarget)> = BTreeSet::new();
    let mut add = |src: usize, t: RelationType, dst: usize| {
        triples.insert((src as EntityId, t, RelationTarget::Entity(dst as EntityId)));
    };
    let mut pdg_adj = vec![BTreeSet::new(); n];
    let mut reach_adj = vec![BTreeSet::new(); n];

    for edge in g.edges() {
        let (si, di) = g.endpoint_indices(edge);
        let (es, ed) = (entity_of[si], entity_of[di]);
        if es == ed {
            continue;
        }
        match edge.kind {
            EdgeKind::Ast => {
                reach_adj[es].insert(ed);
                if label_in(&edge.label, &cfg.import_labels) {
                    add(es, RelationType::Imports, ed);
                } else if label_in(&edge.label, &cfg.depends_labels) {
                    add(es, RelationType::DependsOn, ed);
                } else if g.nodes()[si].kind == NodeKind::Call
                    || label_in(&edge.label, &cfg.call_labels)
                {
                    add(es, RelationType::Calls, ed);
                }
            }
            EdgeKind::Pdg => {
                reach_adj[es].insert(ed);
                pdg_adj[es].insert(ed);
                if under_any(&entities[ed].label, &cfg.write_actions) {
                    add(es, RelationType::WritesTo, ed);
                }
                if under_any(&entities[es].label, &cfg.read_actions) {
                    add(ed, RelationType::ReadsFrom, es);
                }
            }
            EdgeKind::Cfg => {}
        }
    }

    let is_sink: Vec<bool> = entities
        .iter()
        .map(|e| under_any(&e.label, &cfg.taint_sinks))
        .collect();
    let mut tainted = vec![false; n];
    for (s, e) in entities.iter().enumerate() {
        if !under_any(&e.label, &cfg.taint_sources) {
            continue;
        }
        let seen = reachable_from(&pdg_adj, s);
        for t in 0..n {
            if seen[t] {
                tainted[t] = true;
                if t != s && is_sink[t] {
                    add(s, RelationType::Taints, t);
                }
            }
        }
    }
    for e in (0..n).filter(|&e| tainted[e]) {
        let seen = reachable_from(&reach_adj, e);
        for t in 0..n {
            if seen[t] && t != e && is_sink[t] {
                add(e, RelationType::Reaches, t);
            }
        }
    }

    for (ei, e) in entities.iter().enumerate() {
        for c in cves {
            if cosine(&e.embedding, &c.embedding)? >= cfg.cve_match_threshold {
                triples.insert((
                    ei as EntityId,
                    RelationType::VulnerableTo,
                    RelationTarget::Cve(c.cve_id.clone()),
                ));
            }
        }
    }

    Ok(triples
        .into_iter()
        .map(|(src, rel_type, dst)| Relation {
            src,
            rel_type,
            dst,
            weight: cfg.weights.get(rel_type),
        })
        .collect())
}
