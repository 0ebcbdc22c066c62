use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use hvfl_core::data::{load_csv, synth_classification_with, synth_regression, ClassificationSynth, FeatureSchema, SequenceDataset};
use hvfl_core::netsim::{ClockMode, NetworkProfile};
use hvfl_core::nn::{ArchitectureSpec, EncoderConfig, Task, Variant};

use crate::{BenchError, Result};

/// Environment variable overriding the artifact output directory.
pub const OUT_DIR_ENV: &str = "HVFL_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    E2e,
    VflMpc,
    Pphh,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::E2e, Method::VflMpc, Method::Pphh];
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::E2e => "e2e",
            Method::VflMpc => "vfl_mpc",
            Method::Pphh => "pphh",
        })
    }
}

impl FromStr for Method {
    type Err = BenchError;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s.to_ascii_lowercase().replace('-', "_"))
            .ok_or_else(|| BenchError::Config(format!("unknown method {s:?}; expected e2e, vfl_mpc or pphh")))
    }
}

/// Where records come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    SyntheticClassification { n_seqs: usize, seed: u64, min_len: usize, max_len: usize },
    SyntheticRegression { n_seqs: usize, seed: u64 },
    Csv { path: PathBuf, schema: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::SyntheticClassification { n_seqs: 512, seed: 0, min_len: 24, max_len: 96 }
    }
}

impl DatasetSource {
    pub fn load(&self, n_clients: usize) -> Result<SequenceDataset> {
        Ok(match self {
            DatasetSource::SyntheticClassification { n_seqs, seed, min_len, max_len } => {
                if *min_len < n_clients.max(3) || min_len > max_len {
                    return Err(BenchError::Config(format!(
                        "record lengths {min_len}..={max_len} must satisfy max(3, n_clients) <= min_len <= max_len with {n_clients} clients"
                    )));
                }
                synth_classification_with(*n_seqs, n_clients, *seed, ClassificationSynth { min_len: *min_len, max_len: *max_len })
            }
            DatasetSource::SyntheticRegression { n_seqs, seed } => synth_regression(*n_seqs, *seed),
            DatasetSource::Csv { path, schema } => load_csv(path, &FeatureSchema::load(schema)?)?,
        })
    }
}

/// Encoder size; the input width and maximum length come from the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self { d_model: 64, n_heads: 4, n_layers: 4, d_ff: 512 }
    }
}

impl EncoderDims {
    /// Largest encoder run end to end under MPC without the explicit opt-in.
    pub const E2E_TINY: EncoderDims = EncoderDims { d_model: 16, n_heads: 2, n_layers: 2, d_ff: 32 };

    pub fn config(&self, d_in: usize, max_len: usize) -> EncoderConfig {
        EncoderConfig { d_in, d_model: self.d_model, n_heads: self.n_heads, n_layers: self.n_layers, d_ff: self.d_ff, max_len }
    }

    fn within(&self, limit: &EncoderDims) -> bool {
        self.d_model <= limit.d_model && self.n_layers <= limit.n_layers && self.d_ff <= limit.d_ff
    }
}

/// Longest record run end to end under MPC without the explicit opt-in.
pub const E2E_TINY_LEN: usize = 16;
/// Most records per E2E timed run without the explicit opt-in.
pub const E2E_TINY_RECORDS: usize = 8;

/// One benchmark or training configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Head architecture; ignored by `e2e`, which uses the P1 widths.
    pub variant: Variant,
    pub n_clients: usize,
    pub batch_size: usize,
    /// Timed batches per repeat.
    pub batches: usize,
    pub profile: NetworkProfile,
    pub clock: ClockMode,
    pub repeats: usize,
    pub seeds: Vec<u64>,
    pub dataset: DatasetSource,
    pub encoder: EncoderDims,
    /// Loaded instead of a seeded initialisation when set.
    pub checkpoint: Option<PathBuf>,
    pub allow_huge: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            method: Method::Pphh,
            variant: Variant::H1,
            n_clients: 3,
            batch_size: 64,
            batches: 15,
            profile: NetworkProfile::wan(),
            clock: ClockMode::Simulated,
            repeats: 9,
            seeds: vec![0],
            dataset: DatasetSource::default(),
            encoder: EncoderDims::default(),
            checkpoint: None,
            allow_huge: false,
        }
    }
}

impl ExperimentConfig {
    /// E2E at its default tiny scale: 3 batches of one record.
    pub fn e2e_tiny() -> Self {
        Self {
            method: Method::E2e,
            variant: Variant::P1,
            batch_size: 1,
            batches: 3,
            encoder: EncoderDims::E2E_TINY,
            dataset: DatasetSource::SyntheticClassification { n_seqs: 64, seed: 0, min_len: 8, max_len: E2E_TINY_LEN },
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.repeats == 0 {
            return bad("repeats must be >= 1".into());
        }
        if self.batch_size == 0 || self.batches == 0 {
            return bad(format!("batch_size {} and batches {} must both be >= 1", self.batch_size, self.batches));
        }
        if self.n_clients < 2 {
            return bad(format!("n_clients must be >= 2, got {}", self.n_clients));
        }
        if self.seeds.is_empty() {
            return bad("seeds must name at least one seed".into());
        }
        let e = &self.encoder;
        if e.n_heads == 0 || e.d_model % e.n_heads != 0 {
            return bad(format!("d_model {} must be a positive multiple of n_heads {}", e.d_model, e.n_heads));
        }
        match self.method {
            Method::VflMpc if self.variant.is_hybrid() => return bad(format!("vfl_mpc runs P variants, got {}", self.variant)),
            Method::Pphh if !self.variant.is_hybrid() => return bad(format!("pphh runs H variants, got {}", self.variant)),
            Method::E2e if !self.allow_huge => {
                let len = match &self.dataset {
                    DatasetSource::SyntheticClassification { max_len, .. } => Some(*max_len),
                    _ => None,
                };
                if !e.within(&EncoderDims::E2E_TINY) || len.is_none_or(|l| l > E2E_TINY_LEN) || self.batch_size * self.batches > E2E_TINY_RECORDS {
                    return bad(format!(
                        "e2e beyond the tiny scale (d_model <= {}, n_layers <= {}, d_ff <= {}, synthetic records <= {E2E_TINY_LEN} steps, \
                         <= {E2E_TINY_RECORDS} records per repeat) needs --i-know-this-is-huge",
                        EncoderDims::E2E_TINY.d_model,
                        EncoderDims::E2E_TINY.n_layers,
                        EncoderDims::E2E_TINY.d_ff
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The split architecture for `dataset` under this config.
    pub fn architecture(&self, ds: &SequenceDataset) -> ArchitectureSpec {
        let variant = if self.method == Method::E2e { Variant::P1 } else { self.variant };
        ArchitectureSpec::new(variant, ds.task, self.n_clients, self.encoder.config(ds.feature_dim + 1, ds.max_len))
    }

    pub fn task(&self) -> Option<Task> {
        match self.dataset {
            DatasetSource::SyntheticClassification { .. } => Some(Task::Classification),
            DatasetSource::SyntheticRegression { .. } => Some(Task::Regression),
            DatasetSource::Csv { .. } => None,
        }
    }

    /// SHA-256 of the canonical JSON form; equal iff the configs are equal.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// One-line label for report rows.
    pub fn summary(&self) -> String {
        format!(
            "{} {} n={} b={}x{} {} {:?} r={}",
            self.method, self.variant, self.n_clients, self.batch_size, self.batches, self.profile.name, self.clock, self.repeats
        )
    }
}

/// Artifact directory: `explicit`, else `$HVFL_OUT`, else `./artifacts`.
pub fn output_dir(explicit: Option<&Path>) -> PathBuf {
    explicit.map(Path::to_path_buf).or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("artifacts"))
}
