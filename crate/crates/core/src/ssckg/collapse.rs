use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use super::dbscan::{dbscan, NOISE};
use super::{ClusterStatus, ClusteringSummary, Entity, EntityId};
use crate::cpg::{CpgGraph, FunctionId, NodeId};
use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::lattice::{Label, Lattice};
use crate::lifting::VerifiedCorpus;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    Block,
    #[default]
    Function,
}

struct EmbedCache<'a> {
    provider: &'a dyn EmbeddingProvider,
    cache: HashMap<String, EmbeddingVector>,
}

impl<'a> EmbedCache<'a> {
    fn new(provider: &'a dyn EmbeddingProvider) -> Self {
        Self {
            provider,
            cache: HashMap::new(),
        }
    }

    fn embed(&mut self, text: &str) -> Result<EmbeddingVector> {
        if let Some(v) = self.cache.get(text) {
            return Ok(v.clone());
        }
        let v = self.provider.embed(text)?;
        self.cache.insert(text.to_string(), v.clone());
        Ok(v)
    }
}

/// One entity per function (or per basic block within a function). Labels
/// and summaries come from the accepted annotation of the covering function;
/// functions without one get top and an empty summary. Entities are ordered
/// by (function id, block id).
pub fn structural_collapse(
    g: &CpgGraph,
    granularity: Granularity,
    corpus: &VerifiedCorpus,
    lattice: &Lattice,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Entity>> {
    let annotations = corpus.by_function();
    let mut groups: BTreeMap<(FunctionId, u64), Vec<NodeId>> = BTreeMap::new();
    for n in g.nodes() {
        let block = match granularity {
            Granularity::Function => 0,
            Granularity::Block => n.block_id,
        };
        groups.entry((n.function_id, block)).or_default().push(n.id);
    }

    let mut cache = EmbedCache::new(provider);
    let mut entities = Vec::with_capacity(groups.len());
    for (i, ((fid, block), mut members)) in groups.into_iter().enumerate() {
        members.sort_unstable();
        let fname = g.function_name(fid).unwrap_or_default();
        let name = match granularity {
            Granularity::Function => fname.to_string(),
            Granularity::Block => format!("{fname}#b{block}"),
        };
        let (label, summary) = match annotations.get(fname) {
            Some(a) => {
                lattice.validate(&a.label)?;
                (a.label.clone(), a.summary.clone())
            }
            None => (Label::top(), String::new()),
        };
        let embedding = cache.embed(&summary)?;
        entities.push(Entity {
            id: i as EntityId,
            name,
            label,
            members,
            summary,
            embedding,
            external: g.is_external(fid),
            cluster: ClusterStatus::NotCandidate,
        });
    }
    Ok(entities)
}

// Precomputed embedding files rarely hold the joined summary of a merged
// entity; the normalized mean of the member vectors stands in for it.
fn centroid(group: &[Entity]) -> EmbeddingVector {
    let dim = group[0].embedding.dimension();
    let mut acc = vec![0.0; dim];
    for e in group {
        let norm = e.embedding.norm();
        if norm > 0.0 {
            for (a, v) in acc.iter_mut().zip(e.embedding.values()) {
                *a += v / norm;
            }
        }
    }
    let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm == 0.0 {
        return EmbeddingVector::basis(dim, 0);
    }
    EmbeddingVector::new(acc.into_iter().map(|v| v / norm).collect()).unwrap_or_else(|_| EmbeddingVector::basis(dim, 0))
}

/// Merges external entities whose summary embeddings fall in the same
/// DBSCAN cluster (cosine distance). A merged entity takes the union of the
/// members, the join of the labels, the distinct summaries joined by `"; "`,
/// and the lexicographically smallest member name suffixed with
/// `~cluster<k>`. Its embedding is the provider's vector for the joined
/// summary, or the normalized member centroid when the provider has none. It sits at the position of its first member; ids are
/// renumbered afterwards.
pub fn semantic_clustering(
    entities: Vec<Entity>,
    lattice: &Lattice,
    provider: &dyn EmbeddingProvider,
    eps: f64,
    min_samples: usize,
) -> Result<(Vec<Entity>, ClusteringSummary)> {
    let candidates: Vec<usize> = entities
        .iter()
        .enumerate()
        .filter(|(_, e)| e.external)
        .map(|(i, _)| i)
        .collect();
    let points: Vec<EmbeddingVector> = candidates
        .iter()
        .map(|&i| entities[i].embedding.clone())
        .collect();
    let labels = dbscan(&points, eps, min_samples);

    let mut cluster_of: HashMap<usize, i32> = HashMap::new();
    let mut clusters: BTreeMap<i32, Vec<usize>> = BTreeMap::new();
    for (&idx, &c) in candidates.iter().zip(&labels) {
        cluster_of.insert(idx, c);
        if c != NOISE {
            clusters.entry(c).or_default().push(idx);
        }
    }
    let summary = ClusteringSummary {
        points: candidates.len(),
        clusters: clusters.values().filter(|m| m.len() >= 2).count(),
        noise: labels.iter().filter(|&&c| c == NOISE).count(),
    };

    let mut slots: Vec<Option<Entity>> = entities.into_iter().map(Some).collect();
    let mut out = Vec::with_capacity(slots.len());
    for i in 0..slots.len() {
        let Some(entity) = slots[i].take() else {
            continue;
        };
        match cluster_of.get(&i) {
            None => out.push(entity),
            Some(&NOISE) => out.push(Entity {
                cluster: ClusterStatus::Noise,
                ..entity
            }),
            Some(&c) => {
                let member_idx = &clusters[&c];
                if member_idx.len() == 1 {
                    out.push(Entity {
                        cluster: ClusterStatus::Clustered,
                        ..entity
                    });
                    continue;
                }
                let mut group = vec![entity];
                for &j in &member_idx[1..] {
                    group.push(slots[j].take().expect("cluster member consumed once"));
                }
                out.push(merge(group, c, lattice, provider)?);
            }
        }
    }
    for (i, e) in out.iter_mut().enumerate() {
        e.id = i as EntityId;
    }
    Ok((out, summary))
}

fn merge(
    group: Vec<Entity>,
    cluster: i32,
    lattice: &Lattice,
    provider: &dyn EmbeddingProvider,
) -> Result<Entity> {
    let label = lattice.join_all(group.iter().map(|e| &e.label))?;
    let base = group
        .iter()
        .map(|e| e.name.as_str())
        .min()
        .unwrap_or_default()
        .to_string();
    let mut summaries: Vec<&str> = Vec::new();
    for e in &group {
        if !e.summary.is_empty() && !summaries.contains(&e.summary.as_str()) {
            summaries.push(&e.summary);
        }
    }
    let summary = summaries.join("; ");
    let embedding = match summaries.len() {
        0 | 1 => group[0].embedding.clone(),
        _ => match provider.embed(&summary) {
            Err(Error::MissingEmbedding(_)) => centroid(&group),
            other => other?,
        },
    };
    let mut members: Vec<NodeId> = group.iter().flat_map(|e| e.members.iter().copied()).collect();
    members.sort_unstable();
    Ok(Entity {
        id: group[0].id,
        name: format!("{base}~cluster{cluster}"),
        label,
        members,
        summary,
        embedding,
        external: true,
        cluster: ClusterStatus::Clustered,
    })
}
