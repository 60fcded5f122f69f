//! The three-tier security behavior lattice: category → action → risk
//! context, with an implicit top element above every category.
//!
//! `a ⊑ b` holds when `b` is an ancestor of (or equal to) `a` in the tree;
//! join is the deepest common ancestor. A prediction *covers* a ground truth
//! when the truth sits below it.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::io;

pub const TOP_NAME: &str = "TOP";

/// A lattice element, written as a `/`-joined path (`Hardware/Coil_Write`)
/// or `TOP`. The tier of a label is its path length; top has tier 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Label {
    path: Vec<String>,
}

impl Label {
    pub fn top() -> Self {
        Self { path: Vec::new() }
    }

    pub fn from_segments<I, S>(segments: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let path: Vec<String> = segments.into_iter().map(Into::into).collect();
        if path.len() > 3 || path.iter().any(|s| s.is_empty() || s.contains('/')) {
            return Err(Error::UnknownLabel(path.join("/")));
        }
        Ok(Self { path })
    }

    pub fn is_top(&self) -> bool {
        self.path.is_empty()
    }

    pub fn tier(&self) -> usize {
        self.path.len()
    }

    pub fn segments(&self) -> &[String] {
        &self.path
    }

    pub fn category(&self) -> Option<&str> {
        self.path.first().map(String::as_str)
    }

    /// True when `self` is an ancestor of, or equal to, `other`. Purely
    /// structural; does not consult any lattice.
    pub fn is_prefix_of(&self, other: &Label) -> bool {
        other.path.len() >= self.path.len() && other.path[..self.path.len()] == self.path[..]
    }

    fn common_prefix(&self, other: &Label) -> Label {
        let path = self
            .path
            .iter()
            .zip(&other.path)
            .take_while(|(a, b)| a == b)
            .map(|(a, _)| a.clone())
            .collect();
        Label { path }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_top() {
            f.write_str(TOP_NAME)
        } else {
            f.write_str(&self.path.join("/"))
        }
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == TOP_NAME {
            return Ok(Label::top());
        }
        if s.is_empty() {
            return Err(Error::UnknownLabel(String::new()));
        }
        Label::from_segments(s.split('/')).map_err(|_| Error::UnknownLabel(s.to_string()))
    }
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

type Tree = IndexMap<String, IndexMap<String, Vec<String>>>;

/// A finite forest of depth ≤ 3 under an implicit top.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Lattice {
    tree: Tree,
}

impl<'de> Deserialize<'de> for Lattice {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let tree = Tree::deserialize(deserializer)?;
        Lattice::from_tree(tree).map_err(serde::de::Error::custom)
    }
}

impl Default for Lattice {
    fn default() -> Self {
        Self::default_ics()
    }
}

impl Lattice {
    fn from_tree(tree: Tree) -> Result<Self> {
        for (cat, actions) in &tree {
            check_name(cat)?;
            for (action, risks) in actions {
                check_name(action)?;
                let mut seen = std::collections::HashSet::new();
                for r in risks {
                    check_name(r)?;
                    if !seen.insert(r) {
                        return Err(Error::InvalidLattice(format!(
                            "duplicate risk context `{r}` under {cat}/{action}"
                        )));
                    }
                }
            }
        }
        Ok(Self { tree })
    }

    /// The shipped ICS lattice: five categories and every concrete action or
    /// risk context with a published name. Extend it through a config file.
    pub fn default_ics() -> Self {
        let mut tree = Tree::new();
        let mut network = IndexMap::new();
        network.insert("Socket_Init".to_string(), vec![]);
        network.insert(
            "Protocol_Parse".to_string(),
            vec!["Unbounded_Protocol_Parse".to_string()],
        );
        network.insert("DNS_Resolve".to_string(), vec![]);
        let mut hardware = IndexMap::new();
        hardware.insert("Register_Read".to_string(), vec![]);
        hardware.insert("Register_Write".to_string(), vec![]);
        hardware.insert(
            "Coil_Write".to_string(),
            vec!["Unauthenticated_Coil_Write".to_string()],
        );
        hardware.insert("Firmware_Update".to_string(), vec![]);
        let mut crypto = IndexMap::new();
        crypto.insert("Hardcoded_Key".to_string(), vec![]);

        tree.insert("Network".to_string(), network);
        tree.insert("Memory".to_string(), IndexMap::new());
        tree.insert("Hardware".to_string(), hardware);
        tree.insert("FileSystem".to_string(), IndexMap::new());
        tree.insert("Cryptography".to_string(), crypto);
        Self { tree }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let tree: Tree =
            serde_json::from_str(text).map_err(|e| Error::InvalidLattice(e.to_string()))?;
        Self::from_tree(tree)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&io::read_to_string(path)?)
    }

    /// (categories, actions, risk contexts)
    pub fn counts(&self) -> (usize, usize, usize) {
        let actions = self.tree.values().map(IndexMap::len).sum();
        let risks = self
            .tree
            .values()
            .flat_map(|a| a.values())
            .map(Vec::len)
            .sum();
        (self.tree.len(), actions, risks)
    }

    /// Every element including top, in tree order.
    pub fn labels(&self) -> Vec<Label> {
        let mut out = vec![Label::top()];
        for (cat, actions) in &self.tree {
            out.push(Label { path: vec![cat.clone()] });
            for (action, risks) in actions {
                out.push(Label {
                    path: vec![cat.clone(), action.clone()],
                });
                for r in risks {
                    out.push(Label {
                        path: vec![cat.clone(), action.clone(), r.clone()],
                    });
                }
            }
        }
        out
    }

    pub fn contains(&self, label: &Label) -> bool {
        match label.path.as_slice() {
            [] => true,
            [c] => self.tree.contains_key(c),
            [c, a] => self.tree.get(c).is_some_and(|x| x.contains_key(a)),
            [c, a, r] => self
                .tree
                .get(c)
                .and_then(|x| x.get(a))
                .is_some_and(|x| x.contains(r)),
            _ => false,
        }
    }

    pub fn validate(&self, label: &Label) -> Result<()> {
        if self.contains(label) {
            Ok(())
        } else {
            Err(Error::UnknownLabel(label.to_string()))
        }
    }

    /// Parses and validates in one step.
    pub fn parse(&self, text: &str) -> Result<Label> {
        let label: Label = text.parse()?;
        self.validate(&label)?;
        Ok(label)
    }

    /// `a ⊑ b`: `b` is an ancestor of `a` or equal to it.
    pub fn leq(&self, a: &Label, b: &Label) -> Result<bool> {
        self.validate(a)?;
        self.validate(b)?;
        Ok(b.is_prefix_of(a))
    }

    /// Least upper bound; labels from different categories join to top.
    pub fn join(&self, a: &Label, b: &Label) -> Result<Label> {
        self.validate(a)?;
        self.validate(b)?;
        Ok(a.common_prefix(b))
    }

    /// Joins a non-empty sequence; returns top for an empty one.
    pub fn join_all<'a, I>(&self, labels: I) -> Result<Label>
    where
        I: IntoIterator<Item = &'a Label>,
    {
        let mut iter = labels.into_iter();
        let Some(first) = iter.next() else {
            return Ok(Label::top());
        };
        self.validate(first)?;
        let mut acc = first.clone();
        for l in iter {
            acc = self.join(&acc, l)?;
        }
        Ok(acc)
    }

    /// Soundness check: `predicted` covers `truth` iff `truth ⊑ predicted`.
    pub fn covers(&self, predicted: &Label, truth: &Label) -> Result<bool> {
        self.leq(truth, predicted)
    }
}

fn check_name(name: &str) -> Result<()> {
    if name.is_empty() || name.contains('/') || name == TOP_NAME {
        return Err(Error::InvalidLattice(format!("invalid element name `{name}`")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldenRecord {
    pub function_id: String,
    #[serde(rename = "truth")]
    pub ground_truth: Label,
    pub predicted: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvrMode {
    /// Violation iff the prediction fails to cover the truth.
    LatticeCover,
    /// Also counts covering-but-coarser predictions as violations.
    ExactTierMatch,
}

pub fn load_golden_set(path: &Path) -> Result<Vec<GoldenRecord>> {
    io::read_json(path)
}

/// Empirical violation rate over a golden set.
pub fn evr(lattice: &Lattice, records: &[GoldenRecord], mode: EvrMode) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::EmptyGoldenSet);
    }
    let mut violations = 0usize;
    for r in records {
        let covered = lattice.covers(&r.predicted, &r.ground_truth)?;
        let violated = match mode {
            EvrMode::LatticeCover => !covered,
            EvrMode::ExactTierMatch => !covered || r.predicted != r.ground_truth,
        };
        if violated {
            violations += 1;
        }
    }
    Ok(violations as f64 / records.len() as f64)
}
