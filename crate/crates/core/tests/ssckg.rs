mod common;

use std::collections::{BTreeMap, BTreeSet};

use binrisk::cpg::{CpgEdge, CpgGraph, CpgNode, EdgeKind, NodeKind};
use binrisk::embedding::{hash_embedder, EmbeddingProvider, EmbeddingVector};
use binrisk::lattice::Lattice;
use binrisk::lifting::VerifiedCorpus;
use binrisk::pipeline::{self, PipelineConfig, Resources};
use binrisk::ssckg::*;
use proptest::prelude::*;
use rand::Rng;

fn fixture_kg(dir: &str) -> (CpgGraph, SsckgGraph) {
    let cfg = PipelineConfig::load(&common::fixture(&format!("{dir}/config.toml"))).unwrap();
    let res = Resources::load(&cfg).unwrap();
    let g = pipeline::ingest(&common::fixture(&format!("{dir}/cpg.json"))).unwrap();
    let corpus = pipeline::lift(&g, res.annotator.as_ref(), &res.lattice).unwrap();
    let kg = pipeline::build_kg(&g, &corpus, &res.cves, &res.lattice, res.provider.as_ref(), &cfg.ssckg).unwrap();
    (g, kg)
}

#[test]
fn dbscan_examples() {
    let v = |x: &[f64]| EmbeddingVector::new(x.to_vec()).unwrap();
    assert_eq!(dbscan(&[v(&[1.0, 0.0]), v(&[1.0, 0.0])], 0.3, 2), vec![0, 0]);
    assert_eq!(dbscan(&[v(&[1.0, 0.0]), v(&[1.0, 0.01]), v(&[-1.0, 0.0])], 0.3, 2), vec![0, 0, NOISE]);
    // point 1 is a border point of both clusters; discovery order decides
    let line = |i: usize, j: usize| (i as f64 - j as f64).abs();
    assert_eq!(dbscan_with(5, 1.0, 2, |i, j| line([0, 1, 2, 9, 9][i], [0, 1, 2, 9, 9][j])), vec![0, 0, 0, 1, 1]);
    // point 0 is a border point of both the 1..=4 group and the 5..=8 group
    let group = |i: usize| match i {
        0 => 0,
        1..=4 => 1,
        _ => 2,
    };
    let d = |i: usize, j: usize| match (i.min(j), i.max(j)) {
        (0, 4) | (0, 5) => 1.0,
        (a, b) if a > 0 && group(a) == group(b) => 0.5,
        _ => 9.0,
    };
    assert_eq!(dbscan_with(9, 1.0, 4, d), vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
    let mirrored = |i: usize, j: usize| d((9 - i) % 9, (9 - j) % 9);
    assert_eq!(dbscan_with(9, 1.0, 4, mirrored), vec![0, 0, 0, 0, 0, 1, 1, 1, 1]);
}

#[test]
fn thirty_random_points_match_oracle() {
    let mut rng = common::rng(30);
    let pts: Vec<EmbeddingVector> = (0..30).map(|_| common::vector(&mut rng, 3)).collect();
    let labels = dbscan(&pts, 0.3, 2);
    let oracle = common::dbscan_oracle(30, 0.3, 2, &|i, j| cosine_distance(&pts[i], &pts[j]));
    assert!(common::same_partition(&labels, &oracle), "{labels:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dbscan_matches_oracle(seed in any::<u64>(), n in 1usize..50, eps in 0.02f64..0.6, ms in 1usize..5) {
        let mut rng = common::rng(seed);
        let pts: Vec<EmbeddingVector> = (0..n).map(|_| common::vector(&mut rng, 3)).collect();
        let labels = dbscan(&pts, eps, ms);
        let oracle = common::dbscan_oracle(n, eps, ms, &|i, j| cosine_distance(&pts[i], &pts[j]));
        prop_assert!(common::same_partition(&labels, &oracle));
    }

    #[test]
    fn all_core_clustering_is_order_free(seed in any::<u64>(), n in 2usize..30) {
        let mut rng = common::rng(seed);
        let pts: Vec<EmbeddingVector> = (0..n).map(|_| common::vector(&mut rng, 3)).collect();
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<EmbeddingVector> = perm.iter().map(|&i| pts[i].clone()).collect();
        let a = dbscan(&pts, 0.25, 1);
        let b = dbscan(&shuffled, 0.25, 1);
        let unshuffled: Vec<i32> = {
            let mut out = vec![0; n];
            for (k, &i) in perm.iter().enumerate() {
                out[i] = b[k];
            }
            out
        };
        let as_oracle: Vec<Option<usize>> = unshuffled.iter().map(|&l| Some(l as usize)).collect();
        prop_assert!(common::same_partition(&a, &as_oracle));
    }
}

#[test]
fn one_function_one_entity() {
    let nodes = (0..12)
        .map(|i| CpgNode {
            id: i,
            kind: NodeKind::Instruction,
            opcode: String::new(),
            function_id: 3,
            block_id: i % 3,
            attrs: BTreeMap::new(),
        })
        .collect();
    let g = CpgGraph::new("one", nodes, vec![]).unwrap();
    let lat = Lattice::default_ics();
    let h = hash_embedder(16, 0).unwrap();
    let es = structural_collapse(&g, Granularity::Function, &VerifiedCorpus::default(), &lat, &h).unwrap();
    assert_eq!(es.len(), 1);
    assert_eq!(es[0].members.len(), 12);
    assert!(es[0].label.is_top() && es[0].summary.is_empty());
    let blocks = structural_collapse(&g, Granularity::Block, &VerifiedCorpus::default(), &lat, &h).unwrap();
    assert_eq!(blocks.len(), 3);
}

#[test]
fn toy_fixture_collapses_to_functions_and_partitions_nodes() {
    let (g, kg) = fixture_kg("toy_modbus");
    assert_eq!(kg.entities.len(), 7);
    let mut all: Vec<u64> = kg.entities.iter().flat_map(|e| e.members.clone()).collect();
    all.sort_unstable();
    let mut nodes: Vec<u64> = g.nodes().iter().map(|n| n.id).collect();
    nodes.sort_unstable();
    assert_eq!(all, nodes);
    let internal = kg.entities.iter().filter(|e| !e.external).count();
    assert_eq!(internal, 4);
}

#[test]
fn identical_summaries_of_external_entities_merge() {
    let h = hash_embedder(32, 0).unwrap();
    let lat = Lattice::default_ics();
    let summary = "read holding register request";
    let mut a = common::entity(0, "Hardware/Register_Read", h.embed(summary).unwrap());
    a.name = "s7_read_req".into();
    let mut b = common::entity(1, "Hardware/Register_Read/Unauthenticated_Read", h.embed(summary).unwrap());
    b.name = "read_modbus_register".into();
    let mut c = common::entity(2, "Network/Socket_Init", h.embed("open socket").unwrap());
    c.name = "socket".into();
    for e in [&mut a, &mut b, &mut c] {
        e.summary = if e.id == 2 { "open socket".into() } else { summary.into() };
        e.external = true;
    }
    if !lat.contains(&b.label) {
        b.label = "Hardware/Register_Read".parse().unwrap();
    }
    let (out, stats) = semantic_clustering(vec![a.clone(), b.clone(), c.clone()], &lat, &h, 0.3, 2).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].name, "read_modbus_register~cluster0");
    assert_eq!(out[0].members, vec![0, 1]);
    assert_eq!(out[0].label, lat.join(&a.label, &b.label).unwrap());
    assert_eq!(out[1].name, "socket");
    assert_eq!((stats.points, stats.clusters, stats.noise), (3, 1, 1));
    assert_eq!(out.iter().map(|e| e.id).collect::<Vec<_>>(), vec![0, 1]);

    let far = vec![c.clone(), {
        let mut d = a.clone();
        d.id = 1;
        d
    }];
    let (out, _) = semantic_clustering(far.clone(), &lat, &h, 0.3, 2).unwrap();
    assert_eq!(out.iter().map(|e| &e.name).collect::<Vec<_>>(), far.iter().map(|e| &e.name).collect::<Vec<_>>());
}

#[test]
fn planted_taint_relations_are_exact() {
    let (_, kg) = fixture_kg("planted_taint");
    let names: Vec<&str> = kg.entities.iter().map(|e| e.name.as_str()).collect();
    assert_eq!(names, ["parse_packet", "dispatch", "write_coil_handler", "log_event", "read_reg_status"]);
    let got: BTreeSet<(u32, &str, String)> = kg
        .relations
        .iter()
        .map(|r| {
            let dst = match &r.dst {
                RelationTarget::Entity(d) => d.to_string(),
                RelationTarget::Cve(c) => c.clone(),
            };
            (r.src, r.rel_type.as_str(), dst)
        })
        .collect();
    let expected: BTreeSet<(u32, &str, String)> = [
        (0, "taints", "2"),
        (0, "reaches", "2"),
        (1, "reaches", "2"),
        (1, "writes_to", "2"),
        (1, "reads_from", "4"),
        (1, "calls", "2"),
        (1, "calls", "3"),
        (2, "calls", "3"),
        (3, "calls", "1"),
        (2, "vulnerable_to", "CVE-2099-0201"),
    ]
    .into_iter()
    .map(|(s, t, d)| (s, t, d.to_string()))
    .collect();
    assert_eq!(got, expected);
    assert_eq!(got.len(), kg.relations.len(), "duplicates survived");
    let w = RelationWeights::default();
    for r in &kg.relations {
        assert_eq!(r.weight, w.get(r.rel_type));
    }
}

#[test]
fn taints_are_reaches_and_build_is_deterministic() {
    for dir in ["toy_modbus", "planted_taint"] {
        let (g, kg) = fixture_kg(dir);
        let (_, again) = fixture_kg(dir);
        assert_eq!(serde_json::to_string(&kg).unwrap(), serde_json::to_string(&again).unwrap());
        let reaches: BTreeSet<(u32, RelationTarget)> = kg
            .relations
            .iter()
            .filter(|r| r.rel_type == RelationType::Reaches)
            .map(|r| (r.src, r.dst.clone()))
            .collect();
        for r in kg.relations.iter().filter(|r| r.rel_type == RelationType::Taints) {
            assert!(reaches.contains(&(r.src, r.dst.clone())));
        }
        let s = construction_stats(&g, &kg);
        assert_eq!(s.cpg_nodes, g.node_count());
        assert_eq!(s.compression_ratio, g.node_count() as f64 / kg.entities.len() as f64);
    }
}

#[test]
fn intra_entity_edges_produce_nothing() {
    let mk = |id: u64, kind: NodeKind| CpgNode {
        id,
        kind,
        opcode: String::new(),
        function_id: 0,
        block_id: 0,
        attrs: BTreeMap::from([("callee".to_string(), "f".to_string())]),
    };
    let g = CpgGraph::new(
        "intra",
        vec![mk(0, NodeKind::Call), mk(1, NodeKind::Instruction)],
        vec![
            CpgEdge { src: 0, dst: 1, kind: EdgeKind::Ast, label: "call".into() },
            CpgEdge { src: 0, dst: 1, kind: EdgeKind::Pdg, label: String::new() },
        ],
    )
    .unwrap();
    let lat = Lattice::default_ics();
    let h = hash_embedder(8, 0).unwrap();
    let es = structural_collapse(&g, Granularity::Function, &VerifiedCorpus::default(), &lat, &h).unwrap();
    assert!(extract_relations(&g, &es, &[], &RelationConfig::default()).unwrap().is_empty());
}

#[test]
fn vulnerable_to_uses_threshold() {
    let h = hash_embedder(32, 0).unwrap();
    let g = CpgGraph::new(
        "v",
        vec![CpgNode {
            id: 0,
            kind: NodeKind::Instruction,
            opcode: String::new(),
            function_id: 0,
            block_id: 0,
            attrs: BTreeMap::new(),
        }],
        vec![],
    )
    .unwrap();
    let mut e = common::entity(0, "Memory", h.embed("heap overflow in parser").unwrap());
    e.members = vec![0];
    let cves = cve_records(
        &[
            CveEntry { cve_id: "CVE-A".into(), description: "heap overflow in parser".into() },
            CveEntry { cve_id: "CVE-B".into(), description: "weak crypto key".into() },
        ],
        &h,
    )
    .unwrap();
    let rels = extract_relations(&g, &[e], &cves, &RelationConfig::default()).unwrap();
    assert_eq!(rels.len(), 1);
    assert_eq!(rels[0].dst, RelationTarget::Cve("CVE-A".into()));
    assert_eq!(rels[0].rel_type, RelationType::VulnerableTo);
}

#[test]
fn stats_examples() {
    let s = stats_from_counts(324_000, 1_280, &ClusteringSummary::default(), &[]);
    assert_eq!(s.compression_ratio.round(), 253.0);
    assert_eq!(s.vuln_relation_fraction, 0.0);
    let s = stats_from_counts(9, 9, &ClusteringSummary::default(), &[]);
    assert_eq!(s.compression_ratio, 1.0);
}

#[test]
fn kg_file_round_trip() {
    let (_, kg) = fixture_kg("planted_taint");
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("kg.json");
    kg.save(&p).unwrap();
    assert_eq!(SsckgGraph::load(&p).unwrap(), kg);
    let mut broken = kg.clone();
    broken.relations[0].src = 99;
    broken.save(&p).unwrap();
    assert!(SsckgGraph::load(&p).is_err());
}

#[allow(dead_code)]
fn _provider_is_object_safe(_: &dyn EmbeddingProvider) {}
