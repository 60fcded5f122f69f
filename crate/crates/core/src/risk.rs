//! Inherent risk from CVE similarity and the damped fixed point
//!
//! ```text
//! rho(v) = beta * rho_inh(v) + (1 - beta) * (1/|N(v)|) * sum_{u in N(v)} w~(u, v) * rho(u)
//! ```
//!
//! solved by synchronous power iteration from `rho = rho_inh`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::cosine;
use crate::error::{Error, Result};
use crate::lattice::Label;
use crate::ssckg::{CveRecord, Entity, EntityId, RelationType, SsckgGraph};

pub const DEFAULT_BETA: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NeighborDirection {
    /// `N(v)` holds the sources of relations pointing at `v`.
    #[default]
    Incoming,
    /// `N(v)` holds the targets of relations leaving `v`.
    Outgoing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PropagationConfig {
    pub beta: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub relation_types: Vec<RelationType>,
    pub direction: NeighborDirection,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            tolerance: 1e-6,
            max_iterations: 100,
            relation_types: RelationType::ALL
                .into_iter()
                .filter(|&t| t != RelationType::VulnerableTo)
                .collect(),
            direction: NeighborDirection::Incoming,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidPropagation(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.tolerance > 0.0 && self.tolerance.is_finite()) {
            return Err(Error::InvalidPropagation(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidPropagation("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// Largest cosine between the entity's summary embedding and any CVE
/// description, clamped at 0. No CVEs means no inherent risk.
pub fn inherent_risk(entity: &Entity, cves: &[CveRecord]) -> Result<f64> {
    let mut best = 0.0f64;
    for c in cves {
        best = best.max(cosine(&entity.embedding, &c.embedding)?);
    }
    Ok(best.clamp(0.0, 1.0))
}

pub fn inherent_risks(kg: &SsckgGraph, cves: &[CveRecord]) -> Result<Vec<f64>> {
    kg.entities.par_iter().map(|e| inherent_risk(e, cves)).collect()
}

/// Per-entity neighbor coefficients. Row `v` lists `(u, w~)` with
/// `w~ = |N(v)| * w(u, v) / sum_u w(u, v)`, parallel relations between the
/// same pair summed first, so that `sum_u w~ / |N(v)| = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborWeights {
    rows: Vec<Vec<(usize, f64)>>,
}

impl NeighborWeights {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.rows[v]
    }

    pub fn is_isolated(&self, v: usize) -> bool {
        self.rows[v].is_empty()
    }

    /// Row `v` of `P`: `P[v][u] = w~(u, v) / |N(v)|`. Isolated rows are zero.
    pub fn transition_matrix(&self) -> Vec<Vec<f64>> {
        let n = self.rows.len();
        let mut p = vec![vec![0.0; n]; n];
        for (v, row) in self.rows.iter().enumerate() {
            let k = row.len() as f64;
            for &(u, w) in row {
                p[v][u] += w / k;
            }
        }
        p
    }
}

pub fn normalize_weights(kg: &SsckgGraph, cfg: &PropagationConfig) -> Result<NeighborWeights> {
    let n = kg.entities.len();
    let mut raw: Vec<std::collections::BTreeMap<usize, f64>> = vec![Default::default(); n];
    for r in &kg.relations {
        if !cfg.relation_types.contains(&r.rel_type) {
            continue;
        }
        let Some(dst) = r.dst.entity() else { continue };
        let (src, dst) = (r.src as usize, dst as usize);
        if src >= n || dst >= n {
            return Err(Error::Ssckg(format!("relation {src}->{dst} outside {n} entities")));
        }
        if !(r.weight > 0.0 && r.weight.is_finite()) {
            return Err(Error::InvalidPropagation(format!(
                "relation {src}->{dst} has non-positive weight {}",
                r.weight
            )));
        }
        let (v, u) = match cfg.direction {
            NeighborDirection::Incoming => (dst, src),
            NeighborDirection::Outgoing => (src, dst),
        };
        *raw[v].entry(u).or_insert(0.0) += r.weight;
    }
    let rows = raw
        .into_iter()
        .map(|m| {
            let k = m.len() as f64;
            let total: f64 = m.values().sum();
            m.into_iter().map(|(u, w)| (u, k * w / total)).collect()
        })
        .collect();
    Ok(NeighborWeights { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskVector {
    /// Indexed by entity id.
    pub values: Vec<f64>,
    pub iterations: usize,
    /// L1 change one more update would make to `values`.
    pub residual: f64,
}

/// One synchronous update of every entity.
pub fn step(weights: &NeighborWeights, inherent: &[f64], rho: &[f64], beta: f64) -> Vec<f64> {
    (0..rho.len())
        .into_par_iter()
        .map(|v| {
            let row = weights.neighbors(v);
            if row.is_empty() {
                return inherent[v];
            }
            let mean = row.iter().map(|&(u, w)| w * rho[u]).sum::<f64>() / row.len() as f64;
            (beta * inherent[v] + (1.0 - beta) * mean).clamp(0.0, 1.0)
        })
        .collect()
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Iterates until the next update would move the vector by less than the
/// tolerance in L1, and returns the vector that update was measured from.
pub fn propagate(kg: &SsckgGraph, inherent: &[f64], cfg: &PropagationConfig) -> Result<RiskVector> {
    cfg.validate()?;
    if inherent.len() != kg.entities.len() {
        return Err(Error::InvalidPropagation(format!(
            "{} inherent values for {} entities",
            inherent.len(),
            kg.entities.len()
        )));
    }
    if let Some(v) = inherent.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::InvalidPropagation(format!("inherent risk {v} outside [0, 1]")));
    }
    let weights = normalize_weights(kg, cfg)?;
    propagate_with(&weights, inherent, cfg)
}

pub fn propagate_with(weights: &NeighborWeights, inherent: &[f64], cfg: &PropagationConfig) -> Result<RiskVector> {
    cfg.validate()?;
    let mut rho = inherent.to_vec();
    let mut residual = f64::INFINITY;
    for t in 1..=cfg.max_iterations {
        let next = step(weights, inherent, &rho, cfg.beta);
        residual = l1(&next, &rho);
        if residual < cfg.tolerance {
            return Ok(RiskVector {
                values: rho,
                iterations: t,
                residual,
            });
        }
        rho = next;
    }
    Err(Error::NonConvergence {
        residual,
        iterations: cfg.max_iterations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskEntry {
    pub entity_id: EntityId,
    pub name: String,
    pub label: Label,
    pub rho: f64,
    pub inherent: f64,
    /// `beta * rho_inh`, or all of `rho_inh` for isolated entities.
    pub inherent_share: f64,
    pub propagated_share: f64,
}

/// Entities by descending `rho`, ties by id.
pub fn ranking(
    kg: &SsckgGraph,
    weights: &NeighborWeights,
    inherent: &[f64],
    risk: &RiskVector,
    beta: f64,
) -> Vec<RiskEntry> {
    let mut out: Vec<RiskEntry> = kg
        .entities
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let inherent_share = if weights.is_isolated(i) {
                inherent[i]
            } else {
                beta * inherent[i]
            };
            RiskEntry {
                entity_id: e.id,
                name: e.name.clone(),
                label: e.label.clone(),
                rho: risk.values[i],
                inherent: inherent[i],
                inherent_share,
                propagated_share: risk.values[i] - inherent_share,
            }
        })
        .collect();
    out.sort_by(|a, b| b.rho.total_cmp(&a.rho).then(a.entity_id.cmp(&b.entity_id)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingVector;
    use crate::ssckg::{ClusterStatus, ClusteringSummary, Relation, RelationTarget};

    fn entity(id: u32) -> Entity {
        Entity {
            id,
            name: format!("e{id}"),
            label: Label::top(),
            members: vec![id as u64],
            summary: String::new(),
            embedding: EmbeddingVector::basis(2, 0),
            external: false,
            cluster: ClusterStatus::NotCandidate,
        }
    }

    fn graph(n: u32, edges: &[(u32, RelationType, u32, f64)]) -> SsckgGraph {
        SsckgGraph {
            source_binary: "t".into(),
            entities: (0..n).map(entity).collect(),
            relations: edges
                .iter()
                .map(|&(s, t, d, w)| Relation {
                    src: s,
                    rel_type: t,
                    dst: RelationTarget::Entity(d),
                    weight: w,
                })
                .collect(),
            clustering: ClusteringSummary::default(),
        }
    }

    #[test]
    fn single_neighbor_normalizes_to_one() {
        let kg = graph(2, &[(0, RelationType::Calls, 1, 0.3)]);
        let w = normalize_weights(&kg, &PropagationConfig::default()).unwrap();
        assert_eq!(w.neighbors(1), &[(0, 1.0)]);
        assert!(w.is_isolated(0));
    }

    #[test]
    fn equal_weights_split_evenly() {
        let kg = graph(
            3,
            &[(0, RelationType::Taints, 2, 1.0), (1, RelationType::Taints, 2, 1.0)],
        );
        let w = normalize_weights(&kg, &PropagationConfig::default()).unwrap();
        let p = w.transition_matrix();
        assert_eq!(p[2], vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn vulnerable_to_does_not_propagate() {
        let mut kg = graph(1, &[]);
        kg.relations.push(Relation {
            src: 0,
            rel_type: RelationType::VulnerableTo,
            dst: RelationTarget::Cve("CVE-1".into()),
            weight: 1.0,
        });
        let w = normalize_weights(&kg, &PropagationConfig::default()).unwrap();
        assert!(w.is_isolated(0));
    }

    #[test]
    fn isolated_keeps_inherent() {
        let kg = graph(1, &[]);
        let r = propagate(&kg, &[0.7], &PropagationConfig::default()).unwrap();
        assert_eq!(r.values, vec![0.7]);
    }

    #[test]
    fn two_node_closed_form() {
        let kg = graph(
            2,
            &[(0, RelationType::Calls, 1, 0.3), (1, RelationType::Calls, 0, 0.3)],
        );
        let cfg = PropagationConfig {
            tolerance: 1e-14,
            max_iterations: 1000,
            ..PropagationConfig::default()
        };
        let r = propagate(&kg, &[1.0, 0.0], &cfg).unwrap();
        // rho0 = 0.15 + 0.85 rho1, rho1 = 0.85 rho0
        let rho0 = 0.15 / (1.0 - 0.85 * 0.85);
        assert!((r.values[0] - rho0).abs() < 1e-9);
        assert!((r.values[1] - 0.85 * rho0).abs() < 1e-9);
    }

    #[test]
    fn beta_one_is_inherent() {
        let kg = graph(
            3,
            &[(0, RelationType::Calls, 1, 0.3), (1, RelationType::Reaches, 2, 0.8)],
        );
        let cfg = PropagationConfig {
            beta: 1.0,
            ..PropagationConfig::default()
        };
        let inh = [0.2, 0.9, 0.4];
        assert_eq!(propagate(&kg, &inh, &cfg).unwrap().values, inh.to_vec());
    }

    #[test]
    fn exhausted_iterations_error() {
        let kg = graph(
            2,
            &[(0, RelationType::Calls, 1, 0.3), (1, RelationType::Calls, 0, 0.3)],
        );
        let cfg = PropagationConfig {
            max_iterations: 2,
            ..PropagationConfig::default()
        };
        assert!(matches!(
            propagate(&kg, &[1.0, 0.0], &cfg),
            Err(Error::NonConvergence { iterations: 2, .. })
        ));
    }

    #[test]
    fn bad_config_rejected() {
        let kg = graph(1, &[]);
        for beta in [0.0, -0.1, 1.5] {
            let cfg = PropagationConfig { beta, ..PropagationConfig::default() };
            assert!(matches!(propagate(&kg, &[0.1], &cfg), Err(Error::InvalidPropagation(_))));
        }
    }
}
