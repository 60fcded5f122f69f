mod common;

use binrisk::risk::*;
use binrisk::ssckg::{CveRecord, RelationType, SsckgGraph};
use binrisk::Error;
use proptest::prelude::*;
use rand::Rng;

fn tight() -> PropagationConfig {
    PropagationConfig {
        tolerance: 1e-12,
        max_iterations: 2000,
        ..PropagationConfig::default()
    }
}

// P built straight from the relation list: P[v][u] = w(u,v) / sum_u w(u,v).
fn raw_transition(kg: &SsckgGraph, cfg: &PropagationConfig) -> (Vec<Vec<f64>>, Vec<bool>) {
    let n = kg.entities.len();
    let mut p = vec![vec![0.0; n]; n];
    for r in &kg.relations {
        if !cfg.relation_types.contains(&r.rel_type) {
            continue;
        }
        if let Some(d) = r.dst.entity() {
            p[d as usize][r.src as usize] += r.weight;
        }
    }
    let mut isolated = vec![false; n];
    for (v, row) in p.iter_mut().enumerate() {
        let total: f64 = row.iter().sum();
        if total == 0.0 {
            isolated[v] = true;
        } else {
            row.iter_mut().for_each(|x| *x /= total);
        }
    }
    (p, isolated)
}

fn random_inherent(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..=1.0)).collect()
}

#[test]
fn two_node_symmetric_closed_form() {
    let kg = common::graph(
        vec![
            common::entity(0, "Memory", common::vector(&mut common::rng(0), 4)),
            common::entity(1, "Memory", common::vector(&mut common::rng(1), 4)),
        ],
        vec![
            common::relation(0, RelationType::Calls, 1, 0.4),
            common::relation(1, RelationType::Calls, 0, 0.9),
        ],
    );
    let (a, b, beta) = (0.8, 0.2, 0.3);
    let cfg = PropagationConfig { beta, ..tight() };
    let r = propagate(&kg, &[a, b], &cfg).unwrap();
    // x = beta a + (1-beta) y, y = beta b + (1-beta) x
    let k = 1.0 - beta;
    let x = beta * (a + k * b) / (1.0 - k * k);
    let y = beta * (b + k * a) / (1.0 - k * k);
    assert!((r.values[0] - x).abs() < 1e-9 && (r.values[1] - y).abs() < 1e-9);
}

#[test]
fn planted_taint_fixed_point() {
    let inh = [0.0, 0.0, 0.15, 0.0, 0.3];
    let kg = common::graph(
        (0..5).map(|i| common::entity(i, "Memory", common::vector(&mut common::rng(i as u64), 4))).collect(),
        vec![
            common::relation(0, RelationType::Calls, 1, 1.0),
            common::relation(2, RelationType::Taints, 1, 1.0),
            common::relation(1, RelationType::Calls, 2, 0.0 + 1.0 / 35.0),
            common::relation(3, RelationType::WritesTo, 2, 34.0 / 35.0),
            common::relation(1, RelationType::Reaches, 3, 1.0),
            common::relation(2, RelationType::Reaches, 3, 1.0),
            common::relation(1, RelationType::Taints, 4, 1.0),
        ],
    );
    let r = propagate(&kg, &inh, &tight()).unwrap();
    let oracle = common::dense_risk(&raw_transition(&kg, &tight()).0, &[true, false, false, false, false], &inh, 0.15);
    for (a, b) in r.values.iter().zip(&oracle) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn full_weight_on_inherent_returns_inherent() {
    let mut rng = common::rng(9);
    let kg = common::random_graph(&mut rng, 10, 4, 0.3);
    let inh = random_inherent(&mut rng, 10);
    let r = propagate(&kg, &inh, &PropagationConfig { beta: 1.0, ..tight() }).unwrap();
    assert_eq!(r.values, inh);
    assert_eq!(r.iterations, 1);
}

#[test]
fn isolated_entity_keeps_its_inherent_risk() {
    let mut rng = common::rng(2);
    let mut kg = common::random_graph(&mut rng, 6, 4, 0.5);
    kg.relations.retain(|r| r.src != 5 && r.dst.entity() != Some(5));
    let mut inh = random_inherent(&mut rng, 6);
    inh[5] = 0.7;
    let w = normalize_weights(&kg, &tight()).unwrap();
    assert!(w.is_isolated(5));
    let r = propagate_with(&w, &inh, &tight()).unwrap();
    assert_eq!(r.values[5], 0.7);
    let rank = ranking(&kg, &w, &inh, &r, 0.15);
    let e = rank.iter().find(|e| e.entity_id == 5).unwrap();
    assert_eq!((e.inherent_share, e.propagated_share), (0.7, 0.0));
}

#[test]
fn transition_rows_sum_to_one() {
    let mut rng = common::rng(8);
    let kg = common::random_graph(&mut rng, 8, 4, 0.4);
    let w = normalize_weights(&kg, &tight()).unwrap();
    for (v, row) in w.transition_matrix().iter().enumerate() {
        if !w.is_isolated(v) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
    let (raw, _) = raw_transition(&kg, &tight());
    for (a, b) in w.transition_matrix().iter().flatten().zip(raw.iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn inherent_risk_is_best_cve_match() {
    let mut rng = common::rng(5);
    let cves: Vec<CveRecord> = (0..5)
        .map(|i| CveRecord {
            cve_id: format!("CVE-2020-{i:04}"),
            description: String::new(),
            embedding: common::vector(&mut rng, 6),
        })
        .collect();
    for _ in 0..20 {
        let e = common::entity(0, "Memory", common::vector(&mut rng, 6));
        let cos = |a: &[f64], b: &[f64]| {
            let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
        };
        let want = cves
            .iter()
            .map(|c| cos(e.embedding.values(), c.embedding.values()))
            .fold(0.0, f64::max);
        assert!((inherent_risk(&e, &cves).unwrap() - want).abs() < 1e-12);
    }
    let e = common::entity(0, "Memory", common::vector(&mut rng, 6));
    assert_eq!(inherent_risk(&e, &[]).unwrap(), 0.0);
}

#[test]
fn bad_configs_are_rejected() {
    let mut rng = common::rng(1);
    let kg = common::random_graph(&mut rng, 4, 4, 0.5);
    let inh = vec![0.5; 4];
    for beta in [0.0, -0.1, 1.5, f64::NAN] {
        let cfg = PropagationConfig { beta, ..tight() };
        assert!(matches!(propagate(&kg, &inh, &cfg), Err(Error::InvalidPropagation(_))));
    }
    assert!(matches!(propagate(&kg, &inh[..3], &tight()), Err(Error::InvalidPropagation(_))));
    assert!(matches!(propagate(&kg, &[0.5, 0.5, 1.2, 0.0], &tight()), Err(Error::InvalidPropagation(_))));
    let mut zero = kg.clone();
    if let Some(r) = zero.relations.first_mut() {
        r.weight = 0.0;
        assert!(matches!(propagate(&zero, &inh, &tight()), Err(Error::InvalidPropagation(_))));
    }
    let starve = PropagationConfig { max_iterations: 1, tolerance: 1e-300, beta: 0.01, ..tight() };
    let chain = common::graph(
        (0..3).map(|i| common::entity(i, "Memory", common::vector(&mut rng, 4))).collect(),
        vec![common::relation(0, RelationType::Calls, 1, 1.0), common::relation(1, RelationType::Calls, 2, 1.0)],
    );
    assert!(matches!(propagate(&chain, &[1.0, 0.0, 0.0], &starve), Err(Error::NonConvergence { .. })));
}

#[test]
fn default_settings_converge_within_the_iteration_cap() {
    let mut rng = common::rng(77);
    for _ in 0..20 {
        let n = rng.random_range(2..40);
        let kg = common::random_graph(&mut rng, n, 4, 0.2);
        let inh = random_inherent(&mut rng, n);
        let r = propagate(&kg, &inh, &PropagationConfig::default()).unwrap();
        assert!(r.iterations <= 100);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn agrees_with_dense_solve(seed in any::<u64>(), n in 1usize..30, beta in 0.05f64..1.0) {
        let mut rng = common::rng(seed);
        let kg = common::random_graph(&mut rng, n, 4, 0.2);
        let inh = random_inherent(&mut rng, n);
        let cfg = PropagationConfig { beta, ..tight() };
        let r = propagate(&kg, &inh, &cfg).unwrap();
        let (p, iso) = raw_transition(&kg, &cfg);
        let x = common::dense_risk(&p, &iso, &inh, beta);
        let l1: f64 = r.values.iter().zip(&x).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(l1 <= 1e-8, "l1 {l1}");
    }

    #[test]
    fn result_is_bounded_and_stationary(seed in any::<u64>(), n in 1usize..25, beta in 0.05f64..1.0) {
        let mut rng = common::rng(seed);
        let kg = common::random_graph(&mut rng, n, 4, 0.3);
        let inh = random_inherent(&mut rng, n);
        let cfg = PropagationConfig { beta, max_iterations: 2000, ..PropagationConfig::default() };
        let r = propagate(&kg, &inh, &cfg).unwrap();
        prop_assert!(r.values.iter().all(|v| (0.0..=1.0).contains(v)));
        let w = normalize_weights(&kg, &cfg).unwrap();
        let next = step(&w, &inh, &r.values, beta);
        let moved: f64 = next.iter().zip(&r.values).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(moved < cfg.tolerance);
        prop_assert!((moved - r.residual).abs() < 1e-15);
        let ranked = ranking(&kg, &w, &inh, &r, beta);
        prop_assert!(ranked.windows(2).all(|p| p[0].rho >= p[1].rho));
    }
}
