//! The compressed entity/relation knowledge graph built from a CPG.
//!
//! Construction runs three passes: [`structural_collapse`] groups CPG nodes
//! by function (or basic block), [`semantic_clustering`] merges external
//! entities whose behavior summaries are close in embedding space, and
//! [`extract_relations`] lifts inter-entity CPG edges into the eight typed
//! relations.

mod collapse;
mod dbscan;
mod relations;

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cpg::{CpgGraph, NodeId};
use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::io;
use crate::lattice::{Label, Lattice};
use crate::lifting::VerifiedCorpus;

pub use collapse::{semantic_clustering, structural_collapse, Granularity};
pub use dbscan::{cosine_distance, dbscan, dbscan_with, NOISE};
pub use relations::{extract_relations, RelationConfig, RelationWeights};

pub type EntityId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RelationType {
    Calls,
    DependsOn,
    Imports,
    ReadsFrom,
    WritesTo,
    Taints,
    Reaches,
    VulnerableTo,
}

impl RelationType {
    pub const ALL: [RelationType; 8] = [
        RelationType::Calls,
        RelationType::DependsOn,
        RelationType::Imports,
        RelationType::ReadsFrom,
        RelationType::WritesTo,
        RelationType::Taints,
        RelationType::Reaches,
        RelationType::VulnerableTo,
    ];

    /// Position in [`RelationType::ALL`]; indexes the edge-type bias table.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_vulnerability(self) -> bool {
        matches!(
            self,
            RelationType::Taints | RelationType::Reaches | RelationType::VulnerableTo
        )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RelationType::Calls => "calls",
            RelationType::DependsOn => "depends_on",
            RelationType::Imports => "imports",
            RelationType::ReadsFrom => "reads_from",
            RelationType::WritesTo => "writes_to",
            RelationType::Taints => "taints",
            RelationType::Reaches => "reaches",
            RelationType::VulnerableTo => "vulnerable_to",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStatus {
    /// Not eligible for semantic clustering (internal code).
    #[default]
    NotCandidate,
    /// Clustered but found no dense neighborhood.
    Noise,
    /// Result of (or member of) a semantic cluster.
    Clustered,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entity {
    pub id: EntityId,
    pub name: String,
    pub label: Label,
    /// Sorted CPG node ids.
    pub members: Vec<NodeId>,
    pub summary: String,
    pub embedding: EmbeddingVector,
    #[serde(default)]
    pub external: bool,
    #[serde(default)]
    pub cluster: ClusterStatus,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RelationTarget {
    Entity(EntityId),
    Cve(String),
}

impl RelationTarget {
    pub fn entity(&self) -> Option<EntityId> {
        match self {
            RelationTarget::Entity(e) => Some(*e),
            RelationTarget::Cve(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relation {
    pub src: EntityId,
    pub rel_type: RelationType,
    pub dst: RelationTarget,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusteringSummary {
    /// Entities handed to DBSCAN.
    pub points: usize,
    /// Clusters with at least two members.
    pub clusters: usize,
    pub noise: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsckgGraph {
    pub source_binary: String,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
    #[serde(default)]
    pub clustering: ClusteringSummary,
}

impl SsckgGraph {
    /// Checks that entity ids equal their positions, member sets are
    /// disjoint and every relation endpoint resolves.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entities.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Ssckg(format!("entity at position {i} has id {}", e.id)));
            }
            if e.members.is_empty() {
                return Err(Error::Ssckg(format!("entity {} has no members", e.id)));
            }
            for m in &e.members {
                if !seen.insert(*m) {
                    return Err(Error::Ssckg(format!("node {m} belongs to two entities")));
                }
            }
        }
        let n = self.entities.len() as EntityId;
        for r in &self.relations {
            let dst_ok = match &r.dst {
                RelationTarget::Entity(d) => *d < n && r.rel_type != RelationType::VulnerableTo,
                RelationTarget::Cve(_) => r.rel_type == RelationType::VulnerableTo,
            };
            if r.src >= n || !dst_ok {
                return Err(Error::Ssckg(format!(
                    "relation {} {} {:?} does not resolve",
                    r.src,
                    r.rel_type.as_str(),
                    r.dst
                )));
            }
            if !(r.weight > 0.0 && r.weight.is_finite()) {
                return Err(Error::Ssckg(format!("relation weight {} is not positive", r.weight)));
            }
        }
        Ok(())
    }

    /// Directed entity-to-entity adjacency over all relations except
    /// `vulnerable_to`, deduplicated and sorted.
    pub fn entity_adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.entities.len()];
        for r in &self.relations {
            if let Some(d) = r.dst.entity() {
                adj[r.src as usize].push(d as usize);
            }
        }
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
        }
        adj
    }

    pub fn load(path: &Path) -> Result<Self> {
        let kg: SsckgGraph = io::read_json(path)?;
        kg.validate()?;
        Ok(kg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CveRecord {
    pub cve_id: String,
    pub description: String,
    pub embedding: EmbeddingVector,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CveEntry {
    pub cve_id: String,
    pub description: String,
}

/// Embeds each description with `provider`; ids must be unique.
pub fn cve_records(entries: &[CveEntry], provider: &dyn EmbeddingProvider) -> Result<Vec<CveRecord>> {
    let mut ids = HashSet::new();
    entries
        .iter()
        .map(|c| {
            if !ids.insert(c.cve_id.as_str()) {
                return Err(Error::Ssckg(format!("duplicate CVE id {}", c.cve_id)));
            }
            Ok(CveRecord {
                cve_id: c.cve_id.clone(),
                description: c.description.clone(),
                embedding: provider.embed(&c.description)?,
            })
        })
        .collect()
}

pub fn load_cves(path: &Path, provider: &dyn EmbeddingProvider) -> Result<Vec<CveRecord>> {
    let entries: Vec<CveEntry> = io::read_json(path)?;
    cve_records(&entries, provider)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsckgConfig {
    pub granularity: Granularity,
    pub eps: f64,
    pub min_samples: usize,
    pub relations: RelationConfig,
}

impl Default for SsckgConfig {
    fn default() -> Self {
        Self {
            granularity: Granularity::Function,
            eps: 0.3,
            min_samples: 2,
            relations: RelationConfig::default(),
        }
    }
}

/// Full transformation from a CPG plus its verified annotations.
pub fn build_ssckg(
    g: &CpgGraph,
    corpus: &VerifiedCorpus,
    cves: &[CveRecord],
    lattice: &Lattice,
    provider: &dyn EmbeddingProvider,
    cfg: &SsckgConfig,
) -> Result<SsckgGraph> {
    let entities = structural_collapse(g, cfg.granularity, corpus, lattice, provider)?;
    let (entities, clustering) =
        semantic_clustering(entities, lattice, provider, cfg.eps, cfg.min_samples)?;
    let relations = extract_relations(g, &entities, cves, &cfg.relations)?;
    let kg = SsckgGraph {
        source_binary: g.binary_id().to_string(),
        entities,
        relations,
        clustering,
    };
    kg.validate()?;
    Ok(kg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructionStats {
    pub cpg_nodes: usize,
    pub entities: usize,
    pub compression_ratio: f64,
    pub semantic_clusters: usize,
    /// Noise points over points handed to DBSCAN (0 when none were).
    pub noise_fraction: f64,
    pub relation_count: usize,
    /// Share of taints / reaches / vulnerable_to relations.
    pub vuln_relation_fraction: f64,
}

pub fn construction_stats(g: &CpgGraph, kg: &SsckgGraph) -> ConstructionStats {
    stats_from_counts(
        g.node_count(),
        kg.entities.len(),
        &kg.clustering,
        &kg.relations,
    )
}

pub fn stats_from_counts(
    cpg_nodes: usize,
    entities: usize,
    clustering: &ClusteringSummary,
    relations: &[Relation],
) -> ConstructionStats {
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let vuln = relations.iter().filter(|r| r.rel_type.is_vulnerability()).count();
    ConstructionStats {
        cpg_nodes,
        entities,
        compression_ratio: ratio(cpg_nodes, entities),
        semantic_clusters: clustering.clusters,
        noise_fraction: ratio(clustering.noise, clustering.points),
        relation_count: relations.len(),
        vuln_relation_fraction: ratio(vuln, relations.len()),
    }
}
