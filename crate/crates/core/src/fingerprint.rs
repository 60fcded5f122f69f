//! Behavioral fingerprints matched in embedding space.
//!
//! The similarity of a target to a fingerprint is the mean, over fingerprint
//! nodes, of the best cosine any target entity achieves. It is asymmetric:
//! every fingerprint node needs a counterpart, extra target entities cost
//! nothing.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{cosine, EmbeddingVector};
use crate::error::{Error, Result};
use crate::graphormer::{EmbeddingSet, NodeEmbedding};
use crate::io;
use crate::ssckg::EntityId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub name: String,
    #[serde(default)]
    pub provenance: String,
    pub embeddings: Vec<EmbeddingVector>,
}

impl Fingerprint {
    pub fn new(name: impl Into<String>, provenance: impl Into<String>, embeddings: Vec<EmbeddingVector>) -> Result<Self> {
        let fp = Self {
            name: name.into(),
            provenance: provenance.into(),
            embeddings,
        };
        fp.validate()?;
        Ok(fp)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.embeddings.first() else {
            return Err(Error::InvalidFingerprint(format!("`{}` has no nodes", self.name)));
        };
        if let Some(e) = self.embeddings.iter().find(|e| e.dimension() != first.dimension()) {
            return Err(Error::DimensionMismatch {
                expected: first.dimension(),
                found: e.dimension(),
            });
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.embeddings[0].dimension()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let fp: Fingerprint = io::read_json(path)?;
        fp.validate()?;
        Ok(fp)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// Every `*.json` file in `dir`, in file-name order.
pub fn load_repository(dir: &Path) -> Result<Vec<Fingerprint>> {
    let mut paths = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths.iter().map(|p| Fingerprint::load(p)).collect()
}

/// Copies the embeddings of the allowlisted entities, in allowlist order.
pub fn extract_fingerprint(
    set: &EmbeddingSet,
    entity_ids: &[EntityId],
    name: &str,
    provenance: &str,
) -> Result<Fingerprint> {
    let embeddings = entity_ids
        .iter()
        .map(|id| {
            set.embeddings
                .iter()
                .find(|e| e.entity_id == *id)
                .map(|e| e.z.clone())
                .ok_or_else(|| Error::InvalidFingerprint(format!("entity {id} not in embedding set")))
        })
        .collect::<Result<Vec<_>>>()?;
    Fingerprint::new(name, provenance, embeddings)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestMatch {
    pub fingerprint_node: usize,
    pub target_entity: EntityId,
    pub cosine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub fingerprint: String,
    pub similarity: f64,
    pub matches: Vec<BestMatch>,
    pub alert: bool,
}

/// Best-match pairs and their mean. Negative cosines count as 0; among equal
/// cosines the lowest target entity id wins.
pub fn best_matches(target: &[NodeEmbedding], fp: &Fingerprint) -> Result<(f64, Vec<BestMatch>)> {
    if target.is_empty() {
        return Err(Error::EmptyTarget);
    }
    fp.validate()?;
    let mut matches = Vec::with_capacity(fp.embeddings.len());
    for (k, v) in fp.embeddings.iter().enumerate() {
        let mut best: Option<(f64, EntityId)> = None;
        for u in target {
            let c = cosine(&u.z, v)?.max(0.0);
            let better = match best {
                None => true,
                Some((bc, bid)) => c > bc || (c == bc && u.entity_id < bid),
            };
            if better {
                best = Some((c, u.entity_id));
            }
        }
        let (c, id) = best.expect("target is non-empty");
        matches.push(BestMatch {
            fingerprint_node: k,
            target_entity: id,
            cosine: c,
        });
    }
    let sim = matches.iter().map(|m| m.cosine).sum::<f64>() / matches.len() as f64;
    Ok((sim.clamp(0.0, 1.0), matches))
}

pub fn similarity(target: &[NodeEmbedding], fp: &Fingerprint) -> Result<f64> {
    best_matches(target, fp).map(|(s, _)| s)
}

pub fn is_alert(similarity: f64, tau: f64) -> bool {
    similarity > tau
}

/// One result per fingerprint, in repository order.
pub fn match_and_alert(target: &[NodeEmbedding], repo: &[Fingerprint], tau: f64) -> Result<Vec<MatchResult>> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidScore(format!("tau {tau} outside [0, 1]")));
    }
    repo.par_iter()
        .map(|fp| {
            let (similarity, matches) = best_matches(target, fp)?;
            Ok(MatchResult {
                fingerprint: fp.name.clone(),
                similarity,
                matches,
                alert: is_alert(similarity, tau),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleLabel {
    Benign,
    Malicious,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredSample {
    pub score: f64,
    pub label: SampleLabel,
}

impl ScoredSample {
    pub fn new(score: f64, malicious: bool) -> Self {
        Self {
            score,
            label: if malicious {
                SampleLabel::Malicious
            } else {
                SampleLabel::Benign
            },
        }
    }

    pub fn is_malicious(&self) -> bool {
        self.label == SampleLabel::Malicious
    }
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoredSample>> {
    io::read_json(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThresholdGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Default for ThresholdGrid {
    fn default() -> Self {
        Self {
            lo: 0.50,
            hi: 0.95,
            step: 0.01,
        }
    }
}

impl ThresholdGrid {
    /// Grid points rounded to 1e-9 so decimal steps land on their nominal
    /// values.
    pub fn points(&self) -> Result<Vec<f64>> {
        let ok = self.lo.is_finite()
            && self.hi.is_finite()
            && self.step.is_finite()
            && self.step > 0.0
            && (0.0..=1.0).contains(&self.lo)
            && (0.0..=1.0).contains(&self.hi)
            && self.lo <= self.hi;
        if !ok {
            return Err(Error::InvalidGrid(format!(
                "lo {} hi {} step {}",
                self.lo, self.hi, self.step
            )));
        }
        let count = ((self.hi - self.lo) / self.step + 1e-9).floor() as usize;
        if count > 1_000_000 {
            return Err(Error::InvalidGrid(format!("{count} points")));
        }
        Ok((0..=count)
            .map(|k| ((self.lo + k as f64 * self.step) * 1e9).round() / 1e9)
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub tau: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub j: f64,
    pub tp: usize,
    pub fp: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub tau: f64,
    pub j_statistic: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub fpr_cap: f64,
    /// False when no grid point met the cap and the lowest-FPR point was taken.
    pub cap_satisfied: bool,
    pub positives: usize,
    pub negatives: usize,
    pub grid: Vec<ThresholdRow>,
}

fn class_counts(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    if let Some(s) = samples.iter().find(|s| !(0.0..=1.0).contains(&s.score)) {
        return Err(Error::InvalidScore(format!("score {} outside [0, 1]", s.score)));
    }
    let pos = samples.iter().filter(|s| s.is_malicious()).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassInput);
    }
    Ok((pos, neg))
}

/// Youden-J selection over the grid subject to `FPR <= fpr_cap`, with a
/// sample predicted malicious when its score exceeds `tau`. Ties go to the
/// smaller `tau`.
pub fn select_threshold(samples: &[ScoredSample], grid: &ThresholdGrid, fpr_cap: f64) -> Result<ThresholdReport> {
    let (pos, neg) = class_counts(samples)?;
    if !(0.0..=1.0).contains(&fpr_cap) {
        return Err(Error::InvalidGrid(format!("fpr cap {fpr_cap} outside [0, 1]")));
    }
    let mut sorted: Vec<(f64, bool)> = samples.iter().map(|s| (s.score, s.is_malicious())).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    // suffix counts: samples at index >= i
    let mut tp_suffix = vec![0usize; sorted.len() + 1];
    let mut fp_suffix = vec![0usize; sorted.len() + 1];
    for i in (0..sorted.len()).rev() {
        tp_suffix[i] = tp_suffix[i + 1] + sorted[i].1 as usize;
        fp_suffix[i] = fp_suffix[i + 1] + !sorted[i].1 as usize;
    }

    let rows: Vec<ThresholdRow> = grid
        .points()?
        .into_iter()
        .map(|tau| {
            let first_above = sorted.partition_point(|s| s.0 <= tau);
            let (tp, fp) = (tp_suffix[first_above], fp_suffix[first_above]);
            let tpr = tp as f64 / pos as f64;
            let fpr = fp as f64 / neg as f64;
            ThresholdRow {
                tau,
                tpr,
                fpr,
                j: tpr - fpr,
                tp,
                fp,
            }
        })
        .collect();

    // J compared exactly as tp*neg - fp*pos over the common denominator
    let j_num = |r: &ThresholdRow| r.tp as i128 * neg as i128 - r.fp as i128 * pos as i128;
    let feasible = |r: &ThresholdRow| r.fpr <= fpr_cap;
    let mut best: Option<&ThresholdRow> = None;
    for r in rows.iter().filter(|r| feasible(r)) {
        if best.is_none_or(|b| j_num(r) > j_num(b)) {
            best = Some(r);
        }
    }
    let cap_satisfied = best.is_some();
    if best.is_none() {
        for r in &rows {
            let better = best.is_none_or(|b| r.fp < b.fp || (r.fp == b.fp && j_num(r) > j_num(b)));
            if better {
                best = Some(r);
            }
        }
    }
    let chosen = *best.expect("grid is non-empty");
    Ok(ThresholdReport {
        tau: chosen.tau,
        j_statistic: chosen.j,
        tpr: chosen.tpr,
        fpr: chosen.fpr,
        fpr_cap,
        cap_satisfied,
        positives: pos,
        negatives: neg,
        grid: rows,
    })
}

/// Probability that a random malicious score beats a random benign one,
/// ties counting one half. Computed from midranks.
pub fn roc_auc(samples: &[ScoredSample]) -> Result<f64> {
    let (pos, neg) = class_counts_unbounded(samples)?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.sort_by(|&a, &b| samples[a].score.total_cmp(&samples[b].score));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && samples[order[j + 1]].score == samples[order[i]].score {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if samples[k].is_malicious() {
                rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (pos as f64, neg as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

fn class_counts_unbounded(samples: &[ScoredSample]) -> Result<(usize, usize)> {
    if let Some(s) = samples.iter().find(|s| !s.score.is_finite()) {
        return Err(Error::InvalidScore(format!("score {} is not finite", s.score)));
    }
    let pos = samples.iter().filter(|s| s.is_malicious()).count();
    let neg = samples.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClassInput);
    }
    Ok((pos, neg))
}
