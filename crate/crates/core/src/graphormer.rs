//! Forward pass of a graph transformer whose attention logits carry a
//! shortest-path bias and a relation-type bias scaled by the relation's
//! semantic weight:
//!
//! ```text
//! A_ij = (z_i W_Q)(z_j W_K)^T / sqrt(d) + b_spatial[dist(i,j)] + sum_r b_edge[type(r)] * w(r)
//! z'   = LayerNorm(z + FFN(MultiHeadAttn(z)))
//! ```
//!
//! The sum runs over relations directed from `i` to `j`; the reverse
//! direction only sees the spatial term. There is no training code: weights
//! come from a seeded initializer or a parameter file.

use std::io::Read;
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cpg::{shortest_path_matrix, DistanceMatrix, DEFAULT_MAX_DIST};
use crate::embedding::{EmbeddingVector, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::io;
use crate::ssckg::{EntityId, RelationType, SsckgGraph};

pub const PARAMS_VERSION: u32 = 1;
const PARAMS_MAGIC: &[u8; 4] = b"BRGP";
const LAYER_NORM_EPS: f64 = 1e-12;
/// Top plus three tiers.
pub const TIER_COUNT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MultiRelation {
    /// Parallel relations between one pair add their bias terms.
    #[default]
    Sum,
    /// Only the largest bias term among parallel relations counts.
    Max,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub layers: usize,
    pub heads: usize,
    pub hidden_dim: usize,
    /// Dimension of the entity summary embeddings fed in.
    pub input_dim: usize,
    pub max_dist: u32,
    pub edge_types: usize,
    pub seed: u64,
    pub multi_relation: MultiRelation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 8,
            hidden_dim: 256,
            input_dim: DEFAULT_DIMENSION,
            max_dist: DEFAULT_MAX_DIST,
            edge_types: RelationType::ALL.len(),
            seed: 0,
            multi_relation: MultiRelation::Sum,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.hidden_dim == 0 || self.input_dim == 0 {
            return Err(Error::Config(
                "layers, heads, hidden_dim and input_dim must be positive".into(),
            ));
        }
        if !self.hidden_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "hidden_dim {} is not divisible by heads {}",
                self.hidden_dim, self.heads
            )));
        }
        if self.max_dist == 0 {
            return Err(Error::Config("max_dist must be at least 1".into()));
        }
        if self.edge_types != RelationType::ALL.len() {
            return Err(Error::Config(format!(
                "edge_types must be {}, got {}",
                RelationType::ALL.len(),
                self.edge_types
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.heads
    }

    /// Spatial buckets: distances 0..=max_dist plus the unreachable bucket.
    pub fn spatial_buckets(&self) -> usize {
        self.max_dist as usize + 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub b_o: Array1<f64>,
    pub ffn_w1: Array2<f64>,
    pub ffn_b1: Array1<f64>,
    pub ffn_w2: Array2<f64>,
    pub ffn_b2: Array1<f64>,
    pub ln_gain: Array1<f64>,
    pub ln_bias: Array1<f64>,
    /// `heads × spatial_buckets`
    pub spatial_bias: Array2<f64>,
    /// `heads × 8`, indexed by [`RelationType::index`]
    pub edge_bias: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub input_proj: Array2<f64>,
    pub input_bias: Array1<f64>,
    /// `TIER_COUNT × hidden_dim`, row = label tier.
    pub tier_embedding: Array2<f64>,
    pub layers: Vec<LayerParams>,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Seeded initialization: weight matrices uniform in ±1/√fan_in, bias
/// tables uniform in ±1/√head_dim, additive biases zero, layer-norm gain one.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let h = cfg.hidden_dim;
    let ff = 4 * h;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let fan = |n: usize| 1.0 / (n as f64).sqrt();
    let input_proj = uniform(&mut rng, cfg.input_dim, h, fan(cfg.input_dim));
    let tier_embedding = uniform(&mut rng, TIER_COUNT, h, fan(h));
    let bias_scale = fan(cfg.head_dim());
    let layers = (0..cfg.layers)
        .map(|_| LayerParams {
            w_q: uniform(&mut rng, h, h, fan(h)),
            w_k: uniform(&mut rng, h, h, fan(h)),
            w_v: uniform(&mut rng, h, h, fan(h)),
            w_o: uniform(&mut rng, h, h, fan(h)),
            b_o: Array1::zeros(h),
            ffn_w1: uniform(&mut rng, h, ff, fan(h)),
            ffn_b1: Array1::zeros(ff),
            ffn_w2: uniform(&mut rng, ff, h, fan(ff)),
            ffn_b2: Array1::zeros(h),
            ln_gain: Array1::ones(h),
            ln_bias: Array1::zeros(h),
            spatial_bias: uniform(&mut rng, cfg.heads, cfg.spatial_buckets(), bias_scale),
            edge_bias: uniform(&mut rng, cfg.heads, cfg.edge_types, bias_scale),
        })
        .collect();
    Ok(ModelParams {
        input_proj,
        input_bias: Array1::zeros(h),
        tier_embedding,
        layers,
    })
}

impl ModelParams {
    /// All-zero parameters of the right shapes (layer-norm gain included).
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_dim;
        let layer = LayerParams {
            w_q: Array2::zeros((h, h)),
            w_k: Array2::zeros((h, h)),
            w_v: Array2::zeros((h, h)),
            w_o: Array2::zeros((h, h)),
            b_o: Array1::zeros(h),
            ffn_w1: Array2::zeros((h, 4 * h)),
            ffn_b1: Array1::zeros(4 * h),
            ffn_w2: Array2::zeros((4 * h, h)),
            ffn_b2: Array1::zeros(h),
            ln_gain: Array1::zeros(h),
            ln_bias: Array1::zeros(h),
            spatial_bias: Array2::zeros((cfg.heads, cfg.spatial_buckets())),
            edge_bias: Array2::zeros((cfg.heads, cfg.edge_types)),
        };
        Ok(Self {
            input_proj: Array2::zeros((cfg.input_dim, h)),
            input_bias: Array1::zeros(h),
            tier_embedding: Array2::zeros((TIER_COUNT, h)),
            layers: vec![layer; cfg.layers],
        })
    }

    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        fn t2(name: String, a: &Array2<f64>) -> (String, Vec<usize>, &[f64]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        fn t1(name: String, a: &Array1<f64>) -> (String, Vec<usize>, &[f64]) {
            (name, a.shape().to_vec(), a.as_slice().expect("standard layout"))
        }
        let mut out = vec![
            t2("input_proj".into(), &self.input_proj),
            t1("input_bias".into(), &self.input_bias),
            t2("tier_embedding".into(), &self.tier_embedding),
        ];
        for (l, p) in self.layers.iter().enumerate() {
            let n = |s: &str| format!("layers.{l}.{s}");
            out.extend([
                t2(n("w_q"), &p.w_q),
                t2(n("w_k"), &p.w_k),
                t2(n("w_v"), &p.w_v),
                t2(n("w_o"), &p.w_o),
                t1(n("b_o"), &p.b_o),
                t2(n("ffn_w1"), &p.ffn_w1),
                t1(n("ffn_b1"), &p.ffn_b1),
                t2(n("ffn_w2"), &p.ffn_w2),
                t1(n("ffn_b2"), &p.ffn_b2),
                t1(n("ln_gain"), &p.ln_gain),
                t1(n("ln_bias"), &p.ln_bias),
                t2(n("spatial_bias"), &p.spatial_bias),
                t2(n("edge_bias"), &p.edge_bias),
            ]);
        }
        out
    }

    /// Checks every tensor shape against `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let reference = ModelParams::zeros(cfg)?;
        let expected = reference.tensors();
        let actual = self.tensors();
        if expected.len() != actual.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} tensors, found {}",
                expected.len(),
                actual.len()
            )));
        }
        for ((name, want, _), (_, got, values)) in expected.iter().zip(&actual) {
            if want != got {
                return Err(Error::ShapeMismatch(format!("{name}: expected {want:?}, found {got:?}")));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::CorruptFile(format!("{name} holds non-finite values")));
            }
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

/// Binary container: magic `BRGP`, version, JSON config, then named tensors
/// with explicit shapes and little-endian `f64` data.
pub fn encode_params(cfg: &ModelConfig, params: &ModelParams) -> Result<Vec<u8>> {
    params.check_shapes(cfg)?;
    let mut out = Vec::new();
    out.extend_from_slice(PARAMS_MAGIC);
    put_u32(&mut out, PARAMS_VERSION);
    let cfg_json = serde_json::to_vec(cfg).map_err(|e| Error::Config(e.to_string()))?;
    put_u32(&mut out, cfg_json.len() as u32);
    out.extend_from_slice(&cfg_json);
    let tensors = params.tensors();
    put_u32(&mut out, tensors.len() as u32);
    for (name, shape, data) in tensors {
        put_u32(&mut out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, shape.len() as u32);
        for d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::CorruptFile(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<(ModelConfig, ModelParams)> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != PARAMS_MAGIC {
        return Err(Error::CorruptFile("bad magic".into()));
    }
    let version = c.u32()?;
    if version != PARAMS_VERSION {
        return Err(Error::VersionMismatch {
            expected: PARAMS_VERSION,
            found: version,
        });
    }
    let cfg_len = c.u32()? as usize;
    let cfg: ModelConfig = serde_json::from_slice(c.take(cfg_len)?)
        .map_err(|e| Error::CorruptFile(format!("config: {e}")))?;
    cfg.validate()?;
    let mut params = ModelParams::zeros(&cfg)?;
    let count = c.u32()? as usize;
    let mut stored: Vec<(String, Vec<usize>, Vec<f64>)> = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = c.u32()? as usize;
        let name = String::from_utf8(c.take(name_len)?.to_vec())
            .map_err(|_| Error::CorruptFile("tensor name is not UTF-8".into()))?;
        let ndim = c.u32()? as usize;
        if ndim > 2 {
            return Err(Error::CorruptFile(format!("{name}: {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(c.u64()? as usize);
        }
        let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let len = len.ok_or_else(|| Error::CorruptFile(format!("{name}: shape overflow")))?;
        let raw = c.take(len.checked_mul(8).ok_or_else(|| Error::CorruptFile("size overflow".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        stored.push((name, shape, data));
    }
    if c.pos != bytes.len() {
        return Err(Error::CorruptFile("trailing bytes".into()));
    }

    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|(n, s, _)| (n, s))
        .collect();
    if expected.len() != stored.len() {
        return Err(Error::ShapeMismatch(format!(
            "expected {} tensors, found {}",
            expected.len(),
            stored.len()
        )));
    }
    for ((want_name, want_shape), (name, shape, _)) in expected.iter().zip(&stored) {
        if want_name != name {
            return Err(Error::CorruptFile(format!("expected tensor {want_name}, found {name}")));
        }
        if want_shape != shape {
            return Err(Error::ShapeMismatch(format!(
                "{name}: config implies {want_shape:?}, file holds {shape:?}"
            )));
        }
    }
    let mut data = stored.into_iter().map(|(_, _, d)| d);
    let mut next = || data.next().expect("count checked");
    fn fill2(dst: &mut Array2<f64>, v: Vec<f64>) {
        dst.as_slice_mut().expect("standard layout").copy_from_slice(&v);
    }
    fn fill1(dst: &mut Array1<f64>, v: Vec<f64>) {
        dst.as_slice_mut().expect("standard layout").copy_from_slice(&v);
    }
    fill2(&mut params.input_proj, next());
    fill1(&mut params.input_bias, next());
    fill2(&mut params.tier_embedding, next());
    for p in &mut params.layers {
        fill2(&mut p.w_q, next());
        fill2(&mut p.w_k, next());
        fill2(&mut p.w_v, next());
        fill2(&mut p.w_o, next());
        fill1(&mut p.b_o, next());
        fill2(&mut p.ffn_w1, next());
        fill1(&mut p.ffn_b1, next());
        fill2(&mut p.ffn_w2, next());
        fill1(&mut p.ffn_b2, next());
        fill1(&mut p.ln_gain, next());
        fill1(&mut p.ln_bias, next());
        fill2(&mut p.spatial_bias, next());
        fill2(&mut p.edge_bias, next());
    }
    params.check_shapes(&cfg)?;
    Ok((cfg, params))
}

pub fn save_params(path: &Path, cfg: &ModelConfig, params: &ModelParams) -> Result<()> {
    io::write_atomic(path, &encode_params(cfg, params)?)
}

pub fn load_params(path: &Path) -> Result<(ModelConfig, ModelParams)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_params(&bytes)
}

/// Loads and requires the stored model dimensions to equal `cfg`'s.
pub fn load_params_for(path: &Path, cfg: &ModelConfig) -> Result<ModelParams> {
    let (stored, params) = load_params(path)?;
    if (stored.layers, stored.heads, stored.hidden_dim, stored.input_dim, stored.max_dist)
        != (cfg.layers, cfg.heads, cfg.hidden_dim, cfg.input_dim, cfg.max_dist)
    {
        return Err(Error::ShapeMismatch(format!(
            "file holds layers={} heads={} hidden_dim={} input_dim={} max_dist={}, expected layers={} heads={} hidden_dim={} input_dim={} max_dist={}",
            stored.layers, stored.heads, stored.hidden_dim, stored.input_dim, stored.max_dist,
            cfg.layers, cfg.heads, cfg.hidden_dim, cfg.input_dim, cfg.max_dist
        )));
    }
    Ok(params)
}

/// A directed entity-to-entity relation as seen by attention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionEdge {
    pub src: usize,
    pub dst: usize,
    pub rel_type: RelationType,
    pub weight: f64,
}

pub fn attention_edges(kg: &SsckgGraph) -> Vec<AttentionEdge> {
    kg.relations
        .iter()
        .filter_map(|r| {
            r.dst.entity().map(|d| AttentionEdge {
                src: r.src as usize,
                dst: d as usize,
                rel_type: r.rel_type,
                weight: r.weight,
            })
        })
        .collect()
}

/// Edge-type bias term per ordered pair for one (layer, head).
fn edge_terms(
    n: usize,
    edges: &[AttentionEdge],
    table: ArrayView2<f64>,
    head: usize,
    mode: MultiRelation,
) -> Array2<f64> {
    let mut out = Array2::zeros((n, n));
    let mut seen = Array2::from_elem((n, n), false);
    for e in edges {
        if e.src == e.dst {
            continue;
        }
        let term = table[[head, e.rel_type.index()]] * e.weight;
        let cell = &mut out[[e.src, e.dst]];
        match mode {
            MultiRelation::Sum => *cell += term,
            MultiRelation::Max => {
                let first = !seen[[e.src, e.dst]];
                if first || term > *cell {
                    *cell = term;
                }
            }
        }
        seen[[e.src, e.dst]] = true;
    }
    out
}

fn softmax_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    m
}

/// Row-stochastic attention for one head of one layer over node features `z`.
pub fn attention_matrix(
    z: ArrayView2<f64>,
    dist: &DistanceMatrix,
    edges: &[AttentionEdge],
    params: &ModelParams,
    cfg: &ModelConfig,
    layer: usize,
    head: usize,
) -> Result<Array2<f64>> {
    let n = z.nrows();
    if dist.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "distance matrix is {0}x{0} for {n} nodes",
            dist.len()
        )));
    }
    if z.ncols() != cfg.hidden_dim {
        return Err(Error::ShapeMismatch(format!(
            "features have {} columns, hidden_dim is {}",
            z.ncols(),
            cfg.hidden_dim
        )));
    }
    if dist.max_dist() != cfg.max_dist {
        return Err(Error::ShapeMismatch(format!(
            "distances clamped at {}, model expects {}",
            dist.max_dist(),
            cfg.max_dist
        )));
    }
    let p = params
        .layers
        .get(layer)
        .ok_or_else(|| Error::ShapeMismatch(format!("no layer {layer}")))?;
    if head >= cfg.heads {
        return Err(Error::ShapeMismatch(format!("no head {head}")));
    }
    if let Some(e) = edges.iter().find(|e| e.src >= n || e.dst >= n) {
        return Err(Error::ShapeMismatch(format!("edge {}->{} outside {n} nodes", e.src, e.dst)));
    }
    let d = cfg.head_dim();
    let cols = s![.., head * d..(head + 1) * d];
    let q = z.dot(&p.w_q.slice(cols));
    let k = z.dot(&p.w_k.slice(cols));
    let mut scores = q.dot(&k.t()) / (d as f64).sqrt();
    let edge = edge_terms(n, edges, p.edge_bias.view(), head, cfg.multi_relation);
    for i in 0..n {
        for j in 0..n {
            scores[[i, j]] += p.spatial_bias[[head, dist.get(i, j) as usize]] + edge[[i, j]];
        }
    }
    Ok(softmax_rows(scores))
}

/// Zero-mean, unit-variance rows (population variance).
pub fn normalize_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044_715 * x * x * x)).tanh())
}

/// Input features: projected summary embedding plus the label-tier embedding.
pub fn input_features(kg: &SsckgGraph, params: &ModelParams, cfg: &ModelConfig) -> Result<Array2<f64>> {
    let n = kg.entities.len();
    let mut x = Array2::zeros((n, cfg.input_dim));
    for (i, e) in kg.entities.iter().enumerate() {
        if e.embedding.dimension() != cfg.input_dim {
            return Err(Error::ShapeMismatch(format!(
                "entity {} embedding has dimension {}, model input_dim is {}",
                e.id,
                e.embedding.dimension(),
                cfg.input_dim
            )));
        }
        x.row_mut(i).assign(&ndarray::ArrayView1::from(e.embedding.values()));
    }
    let mut z = x.dot(&params.input_proj) + &params.input_bias;
    for (i, e) in kg.entities.iter().enumerate() {
        let tier = e.label.tier().min(TIER_COUNT - 1);
        let mut row = z.row_mut(i);
        row += &params.tier_embedding.row(tier);
    }
    Ok(z)
}

/// One encoder layer: `LayerNorm(z + FFN(MultiHeadAttn(z)))`.
pub fn encoder_layer(
    z: &Array2<f64>,
    dist: &DistanceMatrix,
    edges: &[AttentionEdge],
    params: &ModelParams,
    cfg: &ModelConfig,
    layer: usize,
) -> Result<Array2<f64>> {
    let p = &params.layers[layer];
    let d = cfg.head_dim();
    let mut concat = Array2::zeros((z.nrows(), cfg.hidden_dim));
    for head in 0..cfg.heads {
        let a = attention_matrix(z.view(), dist, edges, params, cfg, layer, head)?;
        let v = z.dot(&p.w_v.slice(s![.., head * d..(head + 1) * d]));
        concat.slice_mut(s![.., head * d..(head + 1) * d]).assign(&a.dot(&v));
    }
    let attn = concat.dot(&p.w_o) + &p.b_o;
    let hidden = (attn.dot(&p.ffn_w1) + &p.ffn_b1).mapv(gelu);
    let ffn = hidden.dot(&p.ffn_w2) + &p.ffn_b2;
    let normed = normalize_rows(&(z + &ffn));
    Ok(normed * p.ln_gain.view().insert_axis(Axis(0)) + &p.ln_bias)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbedding {
    pub entity_id: EntityId,
    #[serde(default)]
    pub name: String,
    pub z: EmbeddingVector,
}

/// Output file of the forward stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingSet {
    pub source_binary: String,
    pub dimension: usize,
    pub embeddings: Vec<NodeEmbedding>,
}

impl EmbeddingSet {
    pub fn load(path: &Path) -> Result<Self> {
        let set: EmbeddingSet = io::read_json(path)?;
        if let Some(e) = set.embeddings.iter().find(|e| e.z.dimension() != set.dimension) {
            return Err(Error::DimensionMismatch {
                expected: set.dimension,
                found: e.z.dimension(),
            });
        }
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }
}

/// Runs every layer over the knowledge graph and returns one embedding per
/// entity, in entity order.
pub fn forward(kg: &SsckgGraph, params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<NodeEmbedding>> {
    cfg.validate()?;
    params.check_shapes(cfg)?;
    if kg.entities.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let dist = shortest_path_matrix(&kg.entity_adjacency(), cfg.max_dist);
    let edges = attention_edges(kg);
    let mut z = input_features(kg, params, cfg)?;
    for layer in 0..cfg.layers {
        z = encoder_layer(&z, &dist, &edges, params, cfg, layer)?;
    }
    kg.entities
        .iter()
        .zip(z.rows())
        .map(|(e, row)| {
            Ok(NodeEmbedding {
                entity_id: e.id,
                name: e.name.clone(),
                z: EmbeddingVector::new(row.to_vec())?,
            })
        })
        .collect()
}

pub fn embedding_set(kg: &SsckgGraph, params: &ModelParams, cfg: &ModelConfig) -> Result<EmbeddingSet> {
    Ok(EmbeddingSet {
        source_binary: kg.source_binary.clone(),
        dimension: cfg.hidden_dim,
        embeddings: forward(kg, params, cfg)?,
    })
}
