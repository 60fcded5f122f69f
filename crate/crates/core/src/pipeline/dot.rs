use std::collections::BTreeSet;
use std::fmt::Write;

use super::RiskBands;
use crate::ssckg::{RelationTarget, SsckgGraph};

const HIGH: &str = "#e06666";
const MEDIUM: &str = "#f6b26b";
const LOW: &str = "#93c47d";
const UNSCORED: &str = "#d9d9d9";

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

fn band_color(rho: Option<f64>, bands: &RiskBands) -> &'static str {
    match rho {
        None => UNSCORED,
        Some(r) if r >= bands.high => HIGH,
        Some(r) if r >= bands.medium => MEDIUM,
        Some(_) => LOW,
    }
}

/// Graphviz rendering of the knowledge graph. Entities are filled by risk
/// band when `risk` (indexed by entity id) is given; CVEs appear as boxes.
pub fn export_dot(kg: &SsckgGraph, risk: Option<&[f64]>, bands: &RiskBands) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph {} {{", quote(&kg.source_binary));
    out.push_str("  node [shape=ellipse, style=filled];\n");
    for e in &kg.entities {
        let rho = risk.and_then(|r| r.get(e.id as usize).copied());
        let mut label = format!("{}\n{}", e.name, e.label);
        if let Some(r) = rho {
            let _ = write!(label, "\nrho={r:.3}");
        }
        let _ = writeln!(
            out,
            "  e{} [label={}, fillcolor={}];",
            e.id,
            quote(&label),
            quote(band_color(rho, bands))
        );
    }
    let cves: BTreeSet<&str> = kg
        .relations
        .iter()
        .filter_map(|r| match &r.dst {
            RelationTarget::Cve(c) => Some(c.as_str()),
            RelationTarget::Entity(_) => None,
        })
        .collect();
    for c in &cves {
        let _ = writeln!(out, "  {} [shape=box, fillcolor=\"#ffffff\"];", quote(c));
    }
    for r in &kg.relations {
        let dst = match &r.dst {
            RelationTarget::Entity(d) => format!("e{d}"),
            RelationTarget::Cve(c) => quote(c),
        };
        let _ = writeln!(
            out,
            "  e{} -> {} [label={}];",
            r.src,
            dst,
            quote(r.rel_type.as_str())
        );
    }
    out.push_str("}\n");
    out
}
