//! Experiment configuration: one JSON document covering channel geometry,
//! feedback scheme, bit budget, thresholds, training hyper-parameters, and
//! evaluation options.
//!
//! Files may be partial: they are deep-merged onto the built-in defaults.
//! Command-line overrides address keys by dot path ("train_ad.epochs=50")
//! and are applied after the merge.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::ChannelConfig;
use crate::eval::{OverheadConfig, PhyConfig};
use crate::givens::num_angle_pairs;
use crate::pipeline::SelectionConfig;
use crate::refine::RefinerTrainConfig;
use crate::train::TrainConfig;
use crate::vqcodec::Variant;
use crate::{Error, Result};

/// Which feedback pipeline an experiment exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Grid quantization of the angle parameters.
    Standard,
    /// Learned codec, every frame coded independently.
    Initial,
    /// Angle-difference feedback, shared difference codebook.
    AdNaive,
    /// Angle-difference feedback with the two-stage residual codec.
    AdParallel,
    /// Angle-difference feedback trained through the whole chain.
    AdUnified,
}

impl Scheme {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scheme::Standard => "standard",
            Scheme::Initial => "initial",
            Scheme::AdNaive => "ad_naive",
            Scheme::AdParallel => "ad_parallel",
            Scheme::AdUnified => "ad_unified",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Scheme::Standard),
            "initial" => Ok(Scheme::Initial),
            "ad_naive" => Ok(Scheme::AdNaive),
            "ad_parallel" => Ok(Scheme::AdParallel),
            "ad_unified" => Ok(Scheme::AdUnified),
            other => Err(Error::InvalidConfig(format!("unknown scheme '{other}'"))),
        }
    }

    /// The trained-codec variant behind this scheme, if any.
    pub fn variant(&self) -> Option<Variant> {
        match self {
            Scheme::Standard => None,
            Scheme::Initial => Some(Variant::Initial),
            Scheme::AdNaive => Some(Variant::AdNaive),
            Scheme::AdParallel => Some(Variant::AdParallel),
            Scheme::AdUnified => Some(Variant::AdUnified),
        }
    }
}

/// How many sequences to generate per split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub train_sequences: usize,
    pub test_sequences: usize,
    pub master_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { train_sequences: 2000, test_sequences: 400, master_seed: 1 }
    }
}

/// Link-level evaluation knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalOptions {
    /// QPSK symbols simulated per evaluated subcarrier.
    pub symbols_per_channel: usize,
    /// Receive SNR for the symbol simulation; null = noiseless.
    pub snr_db: Option<f64>,
    pub phy: PhyConfig,
    pub overhead: OverheadConfig,
    /// Cap on evaluated test sequences (0 = all).
    pub max_sequences: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            symbols_per_channel: 100,
            snr_db: None,
            phy: PhyConfig::default(),
            overhead: OverheadConfig::default(),
            max_sequences: 0,
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub channel: ChannelConfig,
    pub dataset: DatasetConfig,
    pub scheme: Scheme,
    /// Train/apply the receiver-side refiner on top of the scheme.
    pub refined: bool,
    /// Refiner window length.
    pub window: usize,
    /// Grid bits per phi angle (standard scheme).
    pub bits_phi: u32,
    /// Grid bits per psi angle (standard scheme).
    pub bits_psi: u32,
    /// N: sub-vectors per latent.
    pub n_sub: usize,
    /// D: dimensions per sub-vector.
    pub dim: usize,
    /// B: bits per sub-vector.
    pub bits: u32,
    /// B_r: stage-2 bits of the two-stage codec.
    pub bits_residual: u32,
    /// Declared per-message payload budget; must equal N*B.
    pub budget_bits: usize,
    pub selection: SelectionConfig,
    pub train_initial: TrainConfig,
    pub train_ad: TrainConfig,
    pub refiner: RefinerTrainConfig,
    pub eval: EvalOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            channel: ChannelConfig::default(),
            dataset: DatasetConfig::default(),
            scheme: Scheme::AdUnified,
            refined: false,
            window: 3,
            bits_phi: 5,
            bits_psi: 3,
            n_sub: 8,
            dim: 16,
            bits: 8,
            bits_residual: 4,
            budget_bits: 64,
            selection: SelectionConfig { mu_th: 0.1 * std::f64::consts::PI, n_th: 8 },
            train_initial: TrainConfig::default(),
            train_ad: TrainConfig { epochs: 100, ..TrainConfig::default() },
            refiner: RefinerTrainConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl ExperimentConfig {
    /// Angle rows per subcarrier implied by the antenna geometry.
    pub fn n_a(&self) -> usize {
        num_angle_pairs(self.channel.n_t, self.channel.n_s)
    }

    /// VQ payload bits per message (excluding the mode indicator).
    pub fn payload_bits(&self) -> usize {
        self.n_sub * self.bits as usize
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.selection.validate()?;
        self.eval.phy.validate()?;
        self.eval.overhead.validate()?;
        if self.dataset.train_sequences == 0 || self.dataset.test_sequences == 0 {
            return Err(Error::InvalidConfig("need at least one sequence per split".into()));
        }
        if self.budget_bits != self.payload_bits() {
            return Err(Error::InvalidConfig(format!(
                "declared budget {} bits != N*B = {}*{} = {}",
                self.budget_bits,
                self.n_sub,
                self.bits,
                self.payload_bits()
            )));
        }
        let latent = self.n_sub * self.dim;
        if latent == 0 {
            return Err(Error::InvalidConfig("latent dimensions must be positive".into()));
        }
        match self.scheme {
            Scheme::Standard => {
                for (name, b) in [("bits_phi", self.bits_phi), ("bits_psi", self.bits_psi)] {
                    if b == 0 || b > 16 {
                        return Err(Error::InvalidConfig(format!("{name}={b} outside 1..=16")));
                    }
                }
            }
            Scheme::AdParallel => {
                if self.bits_residual == 0 || self.bits_residual >= self.bits {
                    return Err(Error::InvalidConfig(format!(
                        "two-stage split needs 0 < B_r < B, got B_r={} B={}",
                        self.bits_residual, self.bits
                    )));
                }
            }
            _ => {}
        }
        if self.refined && self.window == 0 {
            return Err(Error::InvalidConfig("refiner window must be positive".into()));
        }
        if self.eval.symbols_per_channel == 0 {
            return Err(Error::InvalidConfig("need at least one symbol per channel".into()));
        }
        Ok(())
    }
}

/// Recursively overlay `patch` onto `base`: objects merge key-by-key,
/// everything else replaces.
fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Set one dot-path key. The value text is parsed as JSON when possible
/// (numbers, booleans, null, arrays) and falls back to a plain string, so
/// `scheme=ad_unified` and `train_ad.epochs=50` both work.
pub fn apply_override(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::InvalidConfig(format!("override '{assignment}' is not of the form key.path=value"))
    })?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cursor = doc;
    let segments: Vec<&str> = path.split('.').collect();
    if segments.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidConfig(format!("override path '{path}' has an empty segment")));
    }
    for seg in &segments[..segments.len() - 1] {
        if !cursor.is_object() {
            return Err(Error::InvalidConfig(format!(
                "override path '{path}': '{seg}' does not address an object"
            )));
        }
        cursor = cursor
            .as_object_mut()
            .unwrap()
            .entry(seg.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let last = segments.last().unwrap();
    match cursor.as_object_mut() {
        Some(map) => {
            map.insert(last.to_string(), value);
            Ok(())
        }
        None => Err(Error::InvalidConfig(format!(
            "override path '{path}' does not address an object"
        ))),
    }
}

/// Build a config from an optional JSON document and dot-path overrides,
/// both overlaid on the defaults, then validated.
pub fn resolve_config(doc: Option<Value>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut merged = serde_json::to_value(ExperimentConfig::default())
        .expect("default config serializes");
    if let Some(doc) = doc {
        merge(&mut merged, doc);
    }
    for assignment in overrides {
        apply_override(&mut merged, assignment)?;
    }
    let cfg: ExperimentConfig = serde_json::from_value(merged)
        .map_err(|e| Error::InvalidConfig(format!("config schema: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Load a config file (deep-merged onto defaults) plus overrides.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let doc: Value = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
    resolve_config(Some(doc), overrides)
}
