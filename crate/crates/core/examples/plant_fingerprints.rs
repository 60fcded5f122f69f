//! Regenerates `fixtures/planted_fingerprint/fingerprints/`.
//!
//! Each fingerprint node is `c * z_i + sqrt(1 - c^2) * u` for a target
//! entity embedding `z_i` (unit-normalized) and a unit vector `u` orthogonal
//! to every target embedding. Its best cosine against the target is exactly
//! `c`, so the fingerprint's similarity is `c`.
//!
//! ```text
//! cargo run -p binrisk --example plant_fingerprints
//! ```

use std::path::Path;

use binrisk::embedding::EmbeddingVector;
use binrisk::fingerprint::Fingerprint;
use binrisk::graphormer::EmbeddingSet;
use binrisk::pipeline::{self, PipelineConfig, Resources};

fn orthogonal_unit(targets: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for t in targets {
        let mut v = t.clone();
        for b in &basis {
            let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    for k in 0..dim {
        let mut v = vec![0.0; dim];
        v[k] = 1.0;
        // two passes keep the residual orthogonal to working precision
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
    panic!("target embeddings span the whole space");
}

fn plant(set: &EmbeddingSet, names: &[&str], c: f64, u: &[f64]) -> Vec<EmbeddingVector> {
    names
        .iter()
        .map(|name| {
            let z = &set
                .embeddings
                .iter()
                .find(|e| e.name == *name)
                .unwrap_or_else(|| panic!("no entity named {name}"))
                .z;
            let n = z.norm();
            let s = (1.0 - c * c).sqrt();
            let values = z.values().iter().zip(u).map(|(x, y)| c * x / n + s * y).collect();
            EmbeddingVector::new(values).expect("finite")
        })
        .collect()
}

fn main() -> binrisk::Result<()> {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let mut cfg = PipelineConfig::load(&root.join("planted_fingerprint/config.toml"))?;
    cfg.fingerprints = None;
    let res = Resources::load(&cfg)?;
    let g = pipeline::ingest(&root.join("toy_modbus/cpg.json"))?;
    let corpus = pipeline::lift(&g, res.annotator.as_ref(), &res.lattice)?;
    let kg = pipeline::build_kg(&g, &corpus, &res.cves, &res.lattice, res.provider.as_ref(), &cfg.ssckg)?;
    let set = pipeline::forward(&kg, &res.params, &res.model)?;

    let targets: Vec<Vec<f64>> = set.embeddings.iter().map(|e| e.z.values().to_vec()).collect();
    let u = orthogonal_unit(&targets, set.dimension);

    let out = root.join("planted_fingerprint/fingerprints");
    Fingerprint::new(
        "stuxnet_like",
        "planted: coil-write chain from parsed network input, every node at cosine 0.94",
        plant(&set, &["modbus_parse_request", "handle_write", "modbus_write_bit"], 0.94, &u),
    )?
    .save(&out.join("stuxnet_like.json"))?;
    Fingerprint::new(
        "triton_like",
        "planted: register-read chain, every node at cosine 0.74",
        plant(&set, &["read_sensors", "modbus_read_registers"], 0.74, &u),
    )?
    .save(&out.join("triton_like.json"))?;
    println!("wrote {}", out.display());
    Ok(())
}
