//! Code property graphs: loading, validation, claim verification and
//! shortest-path distances.
//!
//! The exchange format is a single JSON document:
//!
//! ```json
//! { "binary_id": "fw.bin",
//!   "nodes": [{"id": 0, "kind": "call", "opcode": "bl", "function_id": 1,
//!              "block_id": 3, "attrs": {"callee": "socket_open"}}],
//!   "edges": [{"src": 0, "dst": 1, "kind": "pdg", "label": "reaching_def"}] }
//! ```
//!
//! Node kinds are `instruction`, `call`, `param`, `return`, `literal`; edge
//! kinds are `ast`, `cfg`, `pdg`. `opcode`, `attrs` and `label` may be
//! omitted. Two node attributes carry meaning downstream: `function_name`
//! names the enclosing function and `external` (`"true"`) marks library or
//! cross-module code.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

pub type NodeId = u64;
pub type FunctionId = u64;

/// Default clamp for hop distances fed to the spatial attention bias.
pub const DEFAULT_MAX_DIST: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Instruction,
    Call,
    Param,
    Return,
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Ast,
    Cfg,
    Pdg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpgNode {
    pub id: NodeId,
    pub kind: NodeKind,
    #[serde(default)]
    pub opcode: String,
    pub function_id: FunctionId,
    pub block_id: u64,
    #[serde(default)]
    pub attrs: BTreeMap<String, String>,
}

impl CpgNode {
    pub fn attr(&self, key: &str) -> Option<&str> {
        self.attrs.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CpgEdge {
    pub src: NodeId,
    pub dst: NodeId,
    pub kind: EdgeKind,
    #[serde(default)]
    pub label: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DataFlowClaim {
    pub source_node: NodeId,
    pub sink_node: NodeId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyResult {
    Sat,
    /// The first claim, in input order, whose sink is not PDG-reachable.
    Unsat(DataFlowClaim),
}

impl VerifyResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, VerifyResult::Sat)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCpg {
    #[serde(default)]
    binary_id: String,
    nodes: Vec<CpgNode>,
    edges: Vec<CpgEdge>,
}

#[derive(Serialize)]
struct RawCpgRef<'a> {
    binary_id: &'a str,
    nodes: &'a [CpgNode],
    edges: &'a [CpgEdge],
}

#[derive(Debug, Clone)]
struct FunctionInfo {
    name: String,
    external: bool,
    nodes: Vec<usize>,
}

/// A validated, immutable code property graph.
#[derive(Debug, Clone)]
pub struct CpgGraph {
    binary_id: String,
    nodes: Vec<CpgNode>,
    edges: Vec<CpgEdge>,
    index: HashMap<NodeId, usize>,
    pdg_out: Vec<Vec<usize>>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
    functions: BTreeMap<FunctionId, FunctionInfo>,
    by_name: HashMap<String, FunctionId>,
}

impl PartialEq for CpgGraph {
    fn eq(&self, other: &Self) -> bool {
        self.binary_id == other.binary_id && self.nodes == other.nodes && self.edges == other.edges
    }
}

impl Serialize for CpgGraph {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        RawCpgRef {
            binary_id: &self.binary_id,
            nodes: &self.nodes,
            edges: &self.edges,
        }
        .serialize(serializer)
    }
}

impl CpgGraph {
    /// Validates referential integrity and id uniqueness and builds the
    /// lookup tables used by the query operations.
    pub fn new(binary_id: impl Into<String>, nodes: Vec<CpgNode>, edges: Vec<CpgEdge>) -> Result<Self> {
        let mut index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if index.insert(n.id, i).is_some() {
                return Err(Error::Schema(format!("duplicate node id {}", n.id)));
            }
        }
        let mut pdg_out = vec![Vec::new(); nodes.len()];
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut in_edges = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            let src = *index.get(&e.src).ok_or_else(|| {
                Error::Schema(format!("edge #{i} references absent node {}", e.src))
            })?;
            let dst = *index.get(&e.dst).ok_or_else(|| {
                Error::Schema(format!("edge #{i} references absent node {}", e.dst))
            })?;
            if e.kind == EdgeKind::Pdg {
                pdg_out[src].push(dst);
            }
            out_edges[src].push(i);
            in_edges[dst].push(i);
        }

        let mut functions: BTreeMap<FunctionId, FunctionInfo> = BTreeMap::new();
        for (i, n) in nodes.iter().enumerate() {
            let info = functions.entry(n.function_id).or_insert_with(|| FunctionInfo {
                name: String::new(),
                external: false,
                nodes: Vec::new(),
            });
            info.nodes.push(i);
            if info.name.is_empty() {
                if let Some(name) = n.attr("function_name") {
                    info.name = name.to_string();
                }
            }
            if n.attr("external") == Some("true") {
                info.external = true;
            }
        }
        let mut by_name = HashMap::with_capacity(functions.len());
        for (fid, info) in functions.iter_mut() {
            if info.name.is_empty() {
                info.name = format!("fn_{fid}");
            }
            if let Some(prev) = by_name.insert(info.name.clone(), *fid) {
                return Err(Error::Schema(format!(
                    "function name `{}` used by functions {prev} and {fid}",
                    info.name
                )));
            }
        }

        Ok(Self {
            binary_id: binary_id.into(),
            nodes,
            edges,
            index,
            pdg_out,
            out_edges,
            in_edges,
            functions,
            by_name,
        })
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        let raw: RawCpg = serde_json::from_value(value).map_err(|e| Error::Schema(e.to_string()))?;
        Self::new(raw.binary_id, raw.nodes, raw.edges)
    }

    pub fn to_json_string(&self) -> Result<String> {
        io::to_json_pretty(self)
    }

    pub fn binary_id(&self) -> &str {
        &self.binary_id
    }

    pub fn nodes(&self) -> &[CpgNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[CpgEdge] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn node(&self, id: NodeId) -> Option<&CpgNode> {
        self.node_index(id).map(|i| &self.nodes[i])
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.index.contains_key(&id)
    }

    /// Function ids in ascending order.
    pub fn function_ids(&self) -> impl Iterator<Item = FunctionId> + '_ {
        self.functions.keys().copied()
    }

    pub fn has_function(&self, fid: FunctionId) -> bool {
        self.functions.contains_key(&fid)
    }

    /// `function_name` attribute of the function's first node, or `fn_<id>`.
    pub fn function_name(&self, fid: FunctionId) -> Option<&str> {
        self.functions.get(&fid).map(|f| f.name.as_str())
    }

    pub fn function_by_name(&self, name: &str) -> Option<FunctionId> {
        self.by_name.get(name).copied()
    }

    pub fn is_external(&self, fid: FunctionId) -> bool {
        self.functions.get(&fid).is_some_and(|f| f.external)
    }

    /// Node indices (positions in [`CpgGraph::nodes`]) of a function, in file order.
    pub fn function_node_indices(&self, fid: FunctionId) -> &[usize] {
        self.functions.get(&fid).map(|f| f.nodes.as_slice()).unwrap_or(&[])
    }

    /// PDG successors by node index.
    pub fn pdg_successors(&self, idx: usize) -> &[usize] {
        &self.pdg_out[idx]
    }

    /// Indices into [`CpgGraph::edges`] of every edge leaving node `idx`.
    pub fn out_edge_indices(&self, idx: usize) -> &[usize] {
        &self.out_edges[idx]
    }

    /// Indices into [`CpgGraph::edges`] of every edge entering node `idx`.
    pub fn in_edge_indices(&self, idx: usize) -> &[usize] {
        &self.in_edges[idx]
    }

    /// Position of an edge endpoint in the node list; endpoints always
    /// resolve because the graph was validated on construction.
    pub fn endpoint_indices(&self, edge: &CpgEdge) -> (usize, usize) {
        (self.index[&edge.src], self.index[&edge.dst])
    }

    pub fn pdg_reachable(&self, from: NodeId, to: NodeId) -> Result<bool> {
        let s = self.node_index(from).ok_or(Error::UnknownNode(from))?;
        let t = self.node_index(to).ok_or(Error::UnknownNode(to))?;
        Ok(self.reachable_idx(s, t))
    }

    fn reachable_idx(&self, s: usize, t: usize) -> bool {
        if s == t {
            return true;
        }
        let mut seen = HashSet::from([s]);
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &v in &self.pdg_out[u] {
                if v == t {
                    return true;
                }
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        false
    }
}

pub fn load_cpg(path: &Path) -> Result<CpgGraph> {
    let text = io::read_to_string(path)?;
    CpgGraph::from_json_str(&text)
}

pub fn save_cpg(g: &CpgGraph, path: &Path) -> Result<()> {
    io::write_json(path, g)
}

/// Structural verification of data-flow claims: every claim's sink must be
/// reachable from its source over directed PDG edges. A claim whose source
/// and sink coincide is trivially satisfied.
pub fn verify_claims(g: &CpgGraph, claims: &[DataFlowClaim]) -> Result<VerifyResult> {
    let mut resolved = Vec::with_capacity(claims.len());
    for c in claims {
        let s = g.node_index(c.source_node).ok_or(Error::UnknownNode(c.source_node))?;
        let t = g.node_index(c.sink_node).ok_or(Error::UnknownNode(c.sink_node))?;
        resolved.push((s, t));
    }
    for (c, (s, t)) in claims.iter().zip(resolved) {
        if !g.reachable_idx(s, t) {
            return Ok(VerifyResult::Unsat(*c));
        }
    }
    Ok(VerifyResult::Sat)
}

/// Clamped all-pairs hop distances over a directed adjacency list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMatrix {
    n: usize,
    max_dist: u32,
    data: Vec<u32>,
}

impl DistanceMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn max_dist(&self) -> u32 {
        self.max_dist
    }

    /// Bucket used for unreachable pairs.
    pub fn unreachable(&self) -> u32 {
        self.max_dist + 1
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[u32] {
        &self.data[i * self.n..(i + 1) * self.n]
    }
}

/// BFS from every node. Entry `(i, j)` is the directed hop count clamped to
/// `max_dist`; unreachable pairs map to `max_dist + 1`.
pub fn shortest_path_matrix(adjacency: &[Vec<usize>], max_dist: u32) -> DistanceMatrix {
    assert!(max_dist >= 1, "max_dist must be at least 1");
    let n = adjacency.len();
    let sentinel = max_dist + 1;
    let mut data = vec![sentinel; n * n];
    let mut queue = VecDeque::new();
    let mut hops = vec![u32::MAX; n];
    for s in 0..n {
        hops.fill(u32::MAX);
        hops[s] = 0;
        queue.clear();
        queue.push_back(s);
        while let Some(u) = queue.pop_front() {
            for &v in &adjacency[u] {
                if hops[v] == u32::MAX {
                    hops[v] = hops[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        let row = &mut data[s * n..(s + 1) * n];
        for (cell, &h) in row.iter_mut().zip(&hops) {
            if h != u32::MAX {
                *cell = h.min(max_dist);
            }
        }
    }
    DistanceMatrix { n, max_dist, data }
}
