#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use binrisk::cpg::shortest_path_matrix;
use binrisk::embedding::EmbeddingVector;
use binrisk::graphormer::*;
use binrisk::lattice::Label;
use binrisk::ssckg::{ClusterStatus, Entity, Relation, RelationTarget, RelationType, SsckgGraph};
use rand::{Rng, SeedableRng};
use ndarray::{arr2, Array2};
use rand_chacha::ChaCha8Rng;

pub fn fixture(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(rel)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vector(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if v.iter().any(|x| x.abs() > 1e-3) {
            return EmbeddingVector::new(v).unwrap();
        }
    }
}

pub fn unit(rng: &mut impl Rng, dim: usize) -> EmbeddingVector {
    let v = vector(rng, dim);
    let n = v.norm();
    v.scaled(1.0 / n)
}

pub fn entity(id: u32, label: &str, embedding: EmbeddingVector) -> Entity {
    Entity {
        id,
        name: format!("e{id}"),
        label: label.parse::<Label>().unwrap(),
        members: vec![id as u64],
        summary: String::new(),
        embedding,
        external: false,
        cluster: ClusterStatus::NotCandidate,
    }
}

pub fn relation(src: u32, rel_type: RelationType, dst: u32, weight: f64) -> Relation {
    Relation {
        src,
        rel_type,
        dst: RelationTarget::Entity(dst),
        weight,
    }
}

pub fn graph(entities: Vec<Entity>, relations: Vec<Relation>) -> SsckgGraph {
    let kg = SsckgGraph {
        source_binary: "test.bin".into(),
        entities,
        relations,
        clustering: Default::default(),
    };
    kg.validate().unwrap();
    kg
}

const LABELS: [&str; 5] = ["TOP", "Network", "Hardware/Coil_Write", "Network/Socket_Init", "Memory"];

/// `n` entities with random embeddings and labels; each ordered pair gets a
/// relation of random type with probability `p`, sometimes two.
pub fn random_graph(rng: &mut impl Rng, n: usize, dim: usize, p: f64) -> SsckgGraph {
    let entities = (0..n as u32)
        .map(|i| entity(i, LABELS[rng.random_range(0..LABELS.len())], vector(rng, dim)))
        .collect();
    let mut relations = Vec::new();
    for s in 0..n as u32 {
        for d in 0..n as u32 {
            if s == d || !rng.random_bool(p) {
                continue;
            }
            let parallel = if rng.random_bool(0.2) { 2 } else { 1 };
            for _ in 0..parallel {
                let t = RelationType::ALL[rng.random_range(0..7)];
                relations.push(relation(s, t, d, rng.random_range(0.1..1.0)));
            }
        }
    }
    graph(entities, relations)
}

/// Neighbor graph over core points, connected components, then each border
/// point joins the adjacent component whose smallest core index is lowest.
pub fn dbscan_oracle(n: usize, eps: f64, min_samples: usize, d: &dyn Fn(usize, usize) -> f64) -> Vec<Option<usize>> {
    let near = |i: usize, j: usize| i == j || d(i, j) <= eps;
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_samples).collect();
    let mut comp = vec![usize::MAX; n];
    for s in 0..n {
        if !core[s] || comp[s] != usize::MAX {
            continue;
        }
        comp[s] = s;
        let mut stack = vec![s];
        while let Some(u) = stack.pop() {
            for v in 0..n {
                if core[v] && comp[v] == usize::MAX && near(u, v) {
                    comp[v] = s;
                    stack.push(v);
                }
            }
        }
    }
    (0..n)
        .map(|i| {
            if core[i] {
                Some(comp[i])
            } else {
                (0..n).filter(|&j| core[j] && near(i, j)).map(|j| comp[j]).min()
            }
        })
        .collect()
}

pub fn same_partition(labels: &[i32], oracle: &[Option<usize>]) -> bool {
    let mut fwd: HashMap<i32, usize> = HashMap::new();
    let mut back: HashMap<usize, i32> = HashMap::new();
    labels.iter().zip(oracle).all(|(&l, o)| match (l, o) {
        (binrisk::ssckg::NOISE, None) => true,
        (binrisk::ssckg::NOISE, Some(_)) | (_, None) => false,
        (l, Some(c)) => *fwd.entry(l).or_insert(*c) == *c && *back.entry(*c).or_insert(l) == l,
    })
}

/// Same graph with entity `perm[k]` moved to position `k`.
pub fn permute_graph(kg: &SsckgGraph, perm: &[usize]) -> SsckgGraph {
    let mut inv = vec![0u32; perm.len()];
    for (k, &old) in perm.iter().enumerate() {
        inv[old] = k as u32;
    }
    let entities = perm
        .iter()
        .enumerate()
        .map(|(k, &old)| Entity {
            id: k as u32,
            ..kg.entities[old].clone()
        })
        .collect();
    let relations = kg
        .relations
        .iter()
        .map(|r| Relation {
            src: inv[r.src as usize],
            dst: match &r.dst {
                RelationTarget::Entity(d) => RelationTarget::Entity(inv[*d as usize]),
                c => c.clone(),
            },
            ..r.clone()
        })
        .collect();
    graph(entities, relations)
}

pub fn shuffled(rng: &mut impl Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    perm
}

/// Attention for one head written out element by element.
pub struct ScalarAttention<'a> {
    pub z: &'a [Vec<f64>],
    pub w_q: &'a [Vec<f64>],
    pub w_k: &'a [Vec<f64>],
    pub dist: &'a [Vec<usize>],
    pub spatial: &'a [f64],
    pub edge_bias: &'a [f64],
    /// `(src, dst, relation index, weight)`
    pub edges: &'a [(usize, usize, usize, f64)],
    pub head: usize,
    pub head_dim: usize,
}

impl ScalarAttention<'_> {
    pub fn logit(&self, i: usize, j: usize) -> f64 {
        let cols = self.head * self.head_dim..(self.head + 1) * self.head_dim;
        let mut dot = 0.0;
        for c in cols {
            let mut q = 0.0;
            let mut k = 0.0;
            for r in 0..self.z[i].len() {
                q += self.z[i][r] * self.w_q[r][c];
                k += self.z[j][r] * self.w_k[r][c];
            }
            dot += q * k;
        }
        let mut s = dot / (self.head_dim as f64).sqrt() + self.spatial[self.dist[i][j]];
        for &(a, b, t, w) in self.edges {
            if a == i && b == j && a != b {
                s += self.edge_bias[t] * w;
            }
        }
        s
    }

    pub fn matrix(&self) -> Vec<Vec<f64>> {
        let n = self.z.len();
        (0..n)
            .map(|i| {
                let logits: Vec<f64> = (0..n).map(|j| self.logit(i, j)).collect();
                let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect()
            })
            .collect()
    }
}

pub fn tanh_gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn vec_mat(v: &[f64], m: &[Vec<f64>]) -> Vec<f64> {
    let cols = m[0].len();
    (0..cols).map(|c| v.iter().zip(m).map(|(x, row)| x * row[c]).sum()).collect()
}

pub fn layer_norm(v: &[f64]) -> Vec<f64> {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    v.iter().map(|x| (x - mean) / (var + 1e-12).sqrt()).collect()
}

/// Fingerprint similarity as a double loop with the negative clamp.
pub fn sim_brute_force(target: &[Vec<f64>], fp: &[Vec<f64>]) -> f64 {
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        (dot / (na * nb)).clamp(-1.0, 1.0)
    };
    let mut total = 0.0;
    for v in fp {
        let mut best = f64::NEG_INFINITY;
        for u in target {
            best = best.max(cos(u, v));
        }
        total += best.max(0.0);
    }
    total / fp.len() as f64
}

/// `P(malicious > benign) + ½ P(tie)` over all pairs.
pub fn auc_pairwise(scores: &[(f64, bool)]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for &(m, lm) in scores {
        if !lm {
            continue;
        }
        for &(b, lb) in scores {
            if lb {
                continue;
            }
            den += 1.0;
            if m > b {
                num += 1.0;
            } else if m == b {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Exhaustive threshold choice over `taus`: feasible points maximize
/// `TPR - FPR`, ties to the smaller threshold; with no feasible point, the
/// lowest FPR, then the highest J, then the smaller threshold. Returns
/// `(tau, tpr, fpr, feasible)`.
pub fn threshold_by_enumeration(scores: &[(f64, bool)], taus: &[f64], cap: f64) -> (f64, f64, f64, bool) {
    let pos = scores.iter().filter(|s| s.1).count() as f64;
    let neg = scores.len() as f64 - pos;
    let rows: Vec<(f64, f64, f64)> = taus
        .iter()
        .map(|&t| {
            let tp = scores.iter().filter(|s| s.1 && s.0 > t).count() as f64;
            let fp = scores.iter().filter(|s| !s.1 && s.0 > t).count() as f64;
            (t, tp / pos, fp / neg)
        })
        .collect();
    let feasible: Vec<&(f64, f64, f64)> = rows.iter().filter(|r| r.2 <= cap).collect();
    let better = |a: &(f64, f64, f64), b: &(f64, f64, f64)| {
        let (ja, jb) = (a.1 - a.2, b.1 - b.2);
        (ja - jb).abs() > 1e-12 && ja > jb
    };
    if !feasible.is_empty() {
        let mut best = feasible[0];
        for r in &feasible[1..] {
            if better(r, best) {
                best = r;
            }
        }
        return (best.0, best.1, best.2, true);
    }
    let mut best = &rows[0];
    for r in &rows[1..] {
        if r.2 < best.2 || (r.2 == best.2 && better(r, best)) {
            best = r;
        }
    }
    (best.0, best.1, best.2, false)
}

/// Dense solve of `(I - (1 - beta) P) rho = beta rho_inh` with isolated rows
/// pinned to `rho_inh`.
pub fn dense_risk(p: &[Vec<f64>], isolated: &[bool], inherent: &[f64], beta: f64) -> Vec<f64> {
    let n = inherent.len();
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    for v in 0..n {
        a[(v, v)] = 1.0;
        if isolated[v] {
            b[v] = inherent[v];
            continue;
        }
        for u in 0..n {
            a[(v, u)] -= (1.0 - beta) * p[v][u];
        }
        b[v] = beta * inherent[v];
    }
    let x = a.lu().solve(&b).expect("nonsingular");
    x.iter().copied().collect()
}

fn rows(a: &Array2<f64>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Largest gap between the library's attention and the scalar evaluation on
/// a fixed 3-node, 2-head instance.
pub fn hand_attention_gap() -> f64 {
    let mut gap = 0.0f64;
    let c = ModelConfig {
        layers: 1,
        heads: 2,
        hidden_dim: 4,
        input_dim: 4,
        max_dist: 3,
        ..ModelConfig::default()
    };
    let mut p = ModelParams::zeros(&c).unwrap();
    let l = &mut p.layers[0];
    // per head a 2x2 block on the diagonal, plus some cross terms
    l.w_q = arr2(&[[0.5, -0.2, 0.1, 0.0], [0.3, 0.8, 0.0, 0.2], [0.0, 0.1, -0.4, 0.6], [0.2, 0.0, 0.7, 0.3]]);
    l.w_k = arr2(&[[0.9, 0.1, -0.3, 0.0], [-0.5, 0.4, 0.2, 0.1], [0.1, 0.0, 0.6, -0.2], [0.0, 0.3, 0.1, 0.8]]);
    l.spatial_bias = arr2(&[[0.25, -0.1, 0.05, 0.0, -0.7], [0.1, 0.3, -0.2, 0.15, -0.4]]);
    l.edge_bias = arr2(&[
        [0.1, 0.2, 0.3, 0.4, 0.5, 1.2, 0.7, 0.9],
        [-0.1, 0.0, 0.2, 0.1, -0.3, 0.6, 0.4, 0.0],
    ]);
    let z = arr2(&[[1.0, 0.5, -0.3, 0.2], [0.0, -1.0, 0.4, 0.8], [0.6, 0.1, 0.9, -0.5]]);
    let edges = [
        AttentionEdge { src: 0, dst: 1, rel_type: RelationType::Taints, weight: 1.0 },
        AttentionEdge { src: 1, dst: 2, rel_type: RelationType::Calls, weight: 0.3 },
        AttentionEdge { src: 1, dst: 2, rel_type: RelationType::WritesTo, weight: 0.6 },
    ];
    let adj = vec![vec![1], vec![2], vec![]];
    let dist = shortest_path_matrix(&adj, 3);
    let scalar_dist = vec![vec![0, 1, 2], vec![4, 0, 1], vec![4, 4, 0]];
    let scalar_edges = [(0, 1, 5, 1.0), (1, 2, 0, 0.3), (1, 2, 4, 0.6)];
    for head in 0..2 {
        let got = attention_matrix(z.view(), &dist, &edges, &p, &c, 0, head).unwrap();
        let oracle = ScalarAttention {
            z: &rows(&z),
            w_q: &rows(&p.layers[0].w_q),
            w_k: &rows(&p.layers[0].w_k),
            dist: &scalar_dist,
            spatial: p.layers[0].spatial_bias.row(head).as_slice().unwrap(),
            edge_bias: p.layers[0].edge_bias.row(head).as_slice().unwrap(),
            edges: &scalar_edges,
            head,
            head_dim: 2,
        }
        .matrix();
        for i in 0..3 {
            for j in 0..3 {
                gap = gap.max((got[[i, j]] - oracle[i][j]).abs());
            }
        }
    }
    gap
}

fn single_entity(dim: usize, seed: u64) -> SsckgGraph {
    let mut rng = rng(seed);
    graph(vec![entity(0, "Hardware/Coil_Write", vector(&mut rng, dim))], vec![])
}

/// Largest gap between `forward` on one isolated entity and a straight-line
/// evaluation of the same layers.
pub fn single_entity_gap(seed: u64) -> f64 {
    let c = ModelConfig {
        layers: 3,
        heads: 2,
        hidden_dim: 8,
        input_dim: 6,
        max_dist: 6,
        seed,
        ..ModelConfig::default()
    };
    let p = init_params(&c).unwrap();
    let kg = single_entity(6, seed);
    let out = forward(&kg, &p, &c).unwrap();

    let m = |a: &Array2<f64>| rows(a);
    let x = kg.entities[0].embedding.values().to_vec();
    let tier = kg.entities[0].label.tier();
    let mut z: Vec<f64> = vec_mat(&x, &m(&p.input_proj))
        .iter()
        .zip(p.input_bias.iter())
        .zip(p.tier_embedding.row(tier))
        .map(|((a, b), t)| a + b + t)
        .collect();
    for l in &p.layers {
        let v = vec_mat(&z, &m(&l.w_v));
        let attn: Vec<f64> = vec_mat(&v, &m(&l.w_o)).iter().zip(&l.b_o).map(|(a, b)| a + b).collect();
        let hidden: Vec<f64> = vec_mat(&attn, &m(&l.ffn_w1))
            .iter()
            .zip(&l.ffn_b1)
            .map(|(a, b)| tanh_gelu(a + b))
            .collect();
        let ffn: Vec<f64> = vec_mat(&hidden, &m(&l.ffn_w2)).iter().zip(&l.ffn_b2).map(|(a, b)| a + b).collect();
        let resid: Vec<f64> = z.iter().zip(&ffn).map(|(a, b)| a + b).collect();
        z = layer_norm(&resid)
            .iter()
            .zip(l.ln_gain.iter().zip(&l.ln_bias))
            .map(|(v, (g, b))| v * g + b)
            .collect();
    }
    out[0].z.values().iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
