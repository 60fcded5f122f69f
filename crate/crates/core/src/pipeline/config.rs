use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embedding::{hash_embedder, EmbeddingProvider, FileProvider, DEFAULT_DIMENSION};
use crate::error::{Error, Result};
use crate::fingerprint::{load_repository, Fingerprint, ThresholdGrid};
use crate::graphormer::{init_params, load_params_for, ModelConfig, ModelParams};
use crate::io;
use crate::lattice::Lattice;
use crate::lifting::{load_rules, replay_annotator, rule_annotator, Annotator, CommandAnnotator, Rule};
use crate::risk::PropagationConfig;
use crate::ssckg::{cve_records, CveEntry, CveRecord, SsckgConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorSpec {
    /// Pattern rules from a JSON file, or the built-in table when no path is given.
    Rules {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<PathBuf>,
    },
    /// Stored annotations keyed by function name.
    Replay { path: PathBuf },
    /// External process speaking JSON over stdin/stdout.
    Command {
        program: PathBuf,
        #[serde(default)]
        args: Vec<String>,
    },
}

impl Default for AnnotatorSpec {
    fn default() -> Self {
        AnnotatorSpec::Rules { path: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingSpec {
    Hash { dimension: usize },
    /// Text → vector table produced by an external encoder.
    File { path: PathBuf },
}

impl Default for EmbeddingSpec {
    fn default() -> Self {
        EmbeddingSpec::Hash {
            dimension: DEFAULT_DIMENSION,
        }
    }
}

/// Upper risk-band boundaries used to color DOT output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RiskBands {
    pub high: f64,
    pub medium: f64,
}

impl Default for RiskBands {
    fn default() -> Self {
        Self {
            high: 0.7,
            medium: 0.4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds the hash embedder and the model initializer.
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lattice: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cves: Option<PathBuf>,
    /// Directory of fingerprint JSON files.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fingerprints: Option<PathBuf>,
    pub annotator: AnnotatorSpec,
    pub embedding: EmbeddingSpec,
    pub ssckg: SsckgConfig,
    pub model: ModelConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model_params: Option<PathBuf>,
    pub risk: PropagationConfig,
    pub tau: f64,
    pub grid: ThresholdGrid,
    pub fpr_cap: f64,
    pub risk_bands: RiskBands,
    /// Relative paths resolve against this directory (the config file's).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lattice: None,
            cves: None,
            fingerprints: None,
            annotator: AnnotatorSpec::default(),
            embedding: EmbeddingSpec::default(),
            ssckg: SsckgConfig::default(),
            model: ModelConfig::default(),
            model_params: None,
            risk: PropagationConfig::default(),
            tau: 0.78,
            grid: ThresholdGrid::default(),
            fpr_cap: 0.05,
            risk_bands: RiskBands::default(),
            base_dir: PathBuf::new(),
        }
    }
}

fn builtin_rules() -> Vec<Rule> {
    let rule = |pattern: &str, label: &str| Rule {
        pattern: pattern.into(),
        label: label.parse().expect("static label"),
        summary: None,
    };
    vec![
        rule("modbus_write_bit*", "Hardware/Coil_Write"),
        rule("write_coil*", "Hardware/Coil_Write"),
        rule("modbus_write_register*", "Hardware/Register_Write"),
        rule("write_reg*", "Hardware/Register_Write"),
        rule("modbus_read*", "Hardware/Register_Read"),
        rule("read_reg*", "Hardware/Register_Read"),
        rule("flash_write*", "Hardware/Firmware_Update"),
        rule("fw_update*", "Hardware/Firmware_Update"),
        rule("modbus_parse*", "Network/Protocol_Parse"),
        rule("parse_*", "Network/Protocol_Parse"),
        rule("recv*", "Network/Protocol_Parse"),
        rule("getaddrinfo", "Network/DNS_Resolve"),
        rule("gethostbyname", "Network/DNS_Resolve"),
        rule("socket", "Network/Socket_Init"),
        rule("connect", "Network/Socket_Init"),
        rule("bind", "Network/Socket_Init"),
    ]
}

impl PipelineConfig {
    /// Reads a TOML file; a missing file is an error, an empty one yields defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_to_string(path)?;
        let mut cfg: PipelineConfig =
            toml::from_str(&text).map_err(|e| Error::Pipeline(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.risk.validate()?;
        self.ssckg.relations.weights.validate()?;
        self.grid.points()?;
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Pipeline(format!("tau {} outside [0, 1]", self.tau)));
        }
        if !(0.0..=1.0).contains(&self.fpr_cap) {
            return Err(Error::Pipeline(format!("fpr_cap {} outside [0, 1]", self.fpr_cap)));
        }
        if self.ssckg.eps < 0.0 || self.ssckg.min_samples == 0 {
            return Err(Error::Pipeline("dbscan needs eps >= 0 and min_samples >= 1".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn lattice(&self) -> Result<Lattice> {
        match &self.lattice {
            Some(p) => Lattice::load(&self.resolve(p)),
            None => Ok(Lattice::default_ics()),
        }
    }

    pub fn provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match &self.embedding {
            EmbeddingSpec::Hash { dimension } => Box::new(hash_embedder(*dimension, self.seed)?),
            EmbeddingSpec::File { path } => Box::new(FileProvider::load(&self.resolve(path))?),
        })
    }

    pub fn annotator(&self, lattice: &Lattice) -> Result<Box<dyn Annotator>> {
        Ok(match &self.annotator {
            AnnotatorSpec::Rules { path: None } => Box::new(rule_annotator(builtin_rules(), lattice)?),
            AnnotatorSpec::Rules { path: Some(p) } => {
                Box::new(rule_annotator(load_rules(&self.resolve(p))?, lattice)?)
            }
            AnnotatorSpec::Replay { path } => Box::new(replay_annotator(&self.resolve(path))?),
            AnnotatorSpec::Command { program, args } => {
                Box::new(CommandAnnotator::new(program.clone(), args.clone()))
            }
        })
    }

    pub fn cve_entries(&self) -> Result<Vec<CveEntry>> {
        match &self.cves {
            Some(p) => io::read_json(&self.resolve(p)),
            None => Ok(Vec::new()),
        }
    }

    pub fn cve_records(&self, provider: &dyn EmbeddingProvider) -> Result<Vec<CveRecord>> {
        cve_records(&self.cve_entries()?, provider)
    }

    pub fn repository(&self) -> Result<Vec<Fingerprint>> {
        match &self.fingerprints {
            Some(dir) => load_repository(&self.resolve(dir)),
            None => Ok(Vec::new()),
        }
    }

    /// The model section with the pipeline seed and the provider's dimension.
    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            seed: self.seed,
            input_dim,
            ..self.model.clone()
        }
    }

    pub fn model_params(&self, model: &ModelConfig) -> Result<ModelParams> {
        match &self.model_params {
            Some(p) => load_params_for(&self.resolve(p), model),
            None => init_params(model),
        }
    }
}
