//! Method × input evaluation grid and the sequence-length sweep.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adc::{adc_scores, build_luts, lookat_attention};
use crate::attention::{reference_attention, AttentionOutput};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, FidelityReport};
use crate::pq::{compression_stats, encode_keys, reconstruct, train_codebook, Codebook, PqConfig};
use crate::scalarquant::{quantize_keys, scalar_attention, scalar_storage, BitWidth};
use crate::tensorio::{generate_synthetic, load_dump, AttentionDump, SynthSpec};

/// Relative tolerance for the inline lookup-versus-reconstruction check.
pub const ADC_REL_TOLERANCE: f64 = 1e-4;

/// A key-compression method under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Fp16Reference,
    Int8,
    Int4,
    Lookat(usize),
}

impl Method {
    /// The seven configurations of the standard comparison table.
    pub fn table_methods() -> Vec<Method> {
        vec![
            Method::Fp16Reference,
            Method::Int8,
            Method::Int4,
            Method::Lookat(16),
            Method::Lookat(8),
            Method::Lookat(4),
            Method::Lookat(2),
        ]
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Fp16Reference => f.write_str("fp16-reference"),
            Method::Int8 => f.write_str("int8"),
            Method::Int4 => f.write_str("int4"),
            Method::Lookat(m) => write!(f, "lookat-{m}"),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp16-reference" | "fp16" => Ok(Method::Fp16Reference),
            "int8" => Ok(Method::Int8),
            "int4" => Ok(Method::Int4),
            other => other
                .strip_prefix("lookat-")
                .and_then(|m| m.parse().ok())
                .filter(|&m: &usize| m > 0)
                .map(Method::Lookat)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

impl Serialize for Method {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Method {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn default_samples() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSpec {
    Dumps(Vec<PathBuf>),
    Synthetic {
        #[serde(default)]
        spec: SynthSpec,
        /// Sample `i` uses seed `spec.seed + i`.
        #[serde(default = "default_samples")]
        samples: usize,
    },
}

impl Default for InputSpec {
    fn default() -> Self {
        InputSpec::Synthetic {
            spec: SynthSpec::default(),
            samples: default_samples(),
        }
    }
}

/// PQ settings applied to every LOOKAT method; `m` comes from the method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PqOverrides {
    pub num_centroids: usize,
    pub kmeans_iters: usize,
    pub tolerance: f64,
    /// Defaults to the experiment seed.
    pub kmeans_seed: Option<u64>,
}

impl Default for PqOverrides {
    fn default() -> Self {
        let d = PqConfig::default();
        Self {
            num_centroids: d.num_centroids,
            kmeans_iters: d.kmeans_iters,
            tolerance: d.tolerance,
            kmeans_seed: None,
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_check_rows() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub input: InputSpec,
    #[serde(default = "Method::table_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub pq: PqOverrides,
    #[serde(default)]
    pub seq_lengths: Option<Vec<usize>>,
    pub output_path: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Separate dump whose keys train the codebooks (cross-domain calibration).
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    /// Length sweep: retrain codebooks on each truncated dump (default) or
    /// train once on the full-length keys.
    #[serde(default = "default_true")]
    pub retrain_per_length: bool,
    /// (head, query) rows per LOOKAT cell checked against explicit reconstruction.
    #[serde(default = "default_check_rows")]
    pub adc_check_rows: usize,
}

impl ExperimentConfig {
    pub fn new(output_path: impl Into<PathBuf>) -> Self {
        Self {
            input: InputSpec::default(),
            methods: Method::table_methods(),
            pq: PqOverrides::default(),
            seq_lengths: None,
            output_path: output_path.into(),
            seed: 0,
            calibration: None,
            retrain_per_length: true,
            adc_check_rows: default_check_rows(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one method is required".into(),
            ));
        }
        if let InputSpec::Synthetic { spec, samples } = &self.input {
            spec.validate()?;
            if *samples == 0 {
                return Err(Error::InvalidConfig("samples must be positive".into()));
            }
        }
        if let InputSpec::Dumps(paths) = &self.input {
            if paths.is_empty() {
                return Err(Error::InvalidConfig("no input dumps".into()));
            }
        }
        if let Some(lengths) = &self.seq_lengths {
            if lengths.is_empty() || lengths.contains(&0) {
                return Err(Error::InvalidConfig(
                    "seq_lengths must be nonempty and positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn pq_config(&self, num_subspaces: usize) -> PqConfig {
        PqConfig {
            num_subspaces,
            num_centroids: self.pq.num_centroids,
            kmeans_iters: self.pq.kmeans_iters,
            kmeans_seed: self.pq.kmeans_seed.unwrap_or(self.seed),
            tolerance: self.pq.tolerance,
        }
    }
}

/// Loads or generates the inputs; a failed load is kept as an error so the
/// remaining inputs still run.
pub fn load_inputs(input: &InputSpec) -> Vec<(String, Result<AttentionDump>)> {
    match input {
        InputSpec::Dumps(paths) => paths
            .iter()
            .map(|p| (p.display().to_string(), load_dump(p)))
            .collect(),
        InputSpec::Synthetic { spec, samples } => (0..*samples)
            .map(|i| {
                let s = spec.with_seed(spec.seed.wrapping_add(i as u64));
                let d = generate_synthetic(&s);
                let label = d
                    .as_ref()
                    .map(|d| d.source_tag.clone())
                    .unwrap_or_else(|_| format!("synthetic-{i}"));
                (label, d)
            })
            .collect(),
    }
}

/// Storage columns of a result row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageColumns {
    /// Key bytes per token as tabulated (nominal for INT8/INT4).
    pub bytes_per_token: f64,
    pub ratio: f64,
    /// Physically packed key bytes per token.
    pub packed_bytes_per_token: f64,
    pub codebook_bytes: u64,
}

pub fn storage_columns(
    method: Method,
    head_dim: usize,
    num_centroids: usize,
) -> Result<StorageColumns> {
    let fp16 = 2.0 * head_dim as f64;
    Ok(match method {
        Method::Fp16Reference => StorageColumns {
            bytes_per_token: fp16,
            ratio: 1.0,
            packed_bytes_per_token: fp16,
            codebook_bytes: 0,
        },
        Method::Int8 | Method::Int4 => {
            let bw = if method == Method::Int8 {
                BitWidth::Int8
            } else {
                BitWidth::Int4
            };
            let s = scalar_storage(head_dim, bw);
            StorageColumns {
                bytes_per_token: s.nominal_bytes_per_token,
                ratio: s.nominal_ratio,
                packed_bytes_per_token: s.packed_bytes_per_token,
                codebook_bytes: 0,
            }
        }
        Method::Lookat(m) => {
            let s = compression_stats(head_dim, m, num_centroids, 2.0)?;
            StorageColumns {
                bytes_per_token: s.bytes_per_token_compressed,
                ratio: s.ratio,
                packed_bytes_per_token: s.bytes_per_token_compressed,
                codebook_bytes: s.codebook_bytes,
            }
        }
    })
}

/// Result of the sampled lookup-versus-reconstruction comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdcCheck {
    pub rows_checked: usize,
    pub scores_checked: usize,
    pub max_rel_error: f64,
}

/// `|a - b|` relative to the absolute dot-product mass `sum |q_i k_i|`.
pub fn dot_relative_error(adc: f32, query: &[f32], key: &[f32]) -> f64 {
    let exact: f64 = query
        .iter()
        .zip(key)
        .map(|(&q, &k)| q as f64 * k as f64)
        .sum();
    let mass: f64 = query
        .iter()
        .zip(key)
        .map(|(&q, &k)| (q as f64 * k as f64).abs())
        .sum();
    if mass == 0.0 {
        return (adc as f64 - exact).abs();
    }
    (adc as f64 - exact).abs() / mass
}

fn adc_check(dump: &AttentionDump, codebook: &Codebook, rows: usize) -> Result<AdcCheck> {
    let cache = encode_keys(&dump.keys, codebook)?;
    let recon = reconstruct(&cache, codebook)?;
    let total = dump.head_count() * dump.seq_len();
    let rows = rows.min(total);
    let mut max_rel_error = 0.0f64;
    let mut scores_checked = 0;
    for r in 0..rows {
        // Evenly spaced deterministic sample of (head, query) rows.
        let flat = r * total / rows.max(1);
        let (h, q) = (flat / dump.seq_len(), flat % dump.seq_len());
        let query = dump.queries.row(h, q);
        let luts = build_luts(query, codebook)?;
        let scores = adc_scores(&luts, &cache, h)?;
        for (j, &s) in scores.iter().enumerate() {
            max_rel_error = max_rel_error.max(dot_relative_error(s, query, recon.row(h, j)));
        }
        scores_checked += scores.len();
    }
    Ok(AdcCheck {
        rows_checked: rows,
        scores_checked,
        max_rel_error,
    })
}

/// Approximate attention for one method. LOOKAT trains on `calib_keys`
/// (`[N, d_k]`) when given, else on the dump's own keys.
pub fn run_method(
    dump: &AttentionDump,
    method: Method,
    config: &ExperimentConfig,
    calib_keys: Option<&[f32]>,
) -> Result<(AttentionOutput, Option<AdcCheck>)> {
    match method {
        Method::Fp16Reference => Ok((reference_attention(dump)?, None)),
        Method::Int8 => Ok((
            scalar_attention(dump, &quantize_keys(&dump.keys, BitWidth::Int8)?)?,
            None,
        )),
        Method::Int4 => Ok((
            scalar_attention(dump, &quantize_keys(&dump.keys, BitWidth::Int4)?)?,
            None,
        )),
        Method::Lookat(m) => {
            let pq = config.pq_config(m);
            let calib = calib_keys.unwrap_or(dump.keys.as_slice());
            let codebook = train_codebook(calib, dump.head_dim(), &pq)?;
            let cache = encode_keys(&dump.keys, &codebook)?;
            let out = lookat_attention(dump, &cache, &codebook)?;
            let check = adc_check(dump, &codebook, config.adc_check_rows)?;
            if check.max_rel_error > ADC_REL_TOLERANCE {
                return Err(Error::InvalidConfig(format!(
                    "lookup scores deviate from reconstructed dot products by {:.3e} (relative)",
                    check.max_rel_error
                )));
            }
            Ok((out, Some(check)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub input: String,
    pub method: Method,
    pub status: CellStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<FidelityReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub storage: Option<StorageColumns>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adc_check: Option<AdcCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Error,
}

/// Per-method aggregate over every successful input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub storage: StorageColumns,
    pub metrics: FidelityReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthRow {
    pub seq_len: usize,
    pub method: Method,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<FidelityReport>,
    pub failed_inputs: Vec<String>,
}

fn calibration_keys(config: &ExperimentConfig) -> Result<Option<AttentionDump>> {
    config.calibration.as_ref().map(load_dump).transpose()
}

fn evaluate_cell(
    label: &str,
    dump: &Result<AttentionDump>,
    reference: Option<&AttentionOutput>,
    method: Method,
    config: &ExperimentConfig,
    calib: Option<&AttentionDump>,
) -> CellReport {
    let attempt = || -> Result<(FidelityReport, StorageColumns, Option<AdcCheck>)> {
        let dump = dump
            .as_ref()
            .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let reference = reference.expect("reference exists for loaded dumps");
        if let Some(c) = calib {
            if c.head_dim() != dump.head_dim() {
                return Err(Error::DimensionMismatch {
                    expected: dump.head_dim(),
                    found: c.head_dim(),
                });
            }
        }
        let (approx, check) = run_method(dump, method, config, calib.map(|c| c.keys.as_slice()))?;
        let metrics = evaluate(reference, &approx)?;
        let storage = storage_columns(method, dump.head_dim(), config.pq.num_centroids)?;
        Ok((metrics, storage, check))
    };
    match attempt() {
        Ok((metrics, storage, adc_check)) => CellReport {
            input: label.to_owned(),
            method,
            status: CellStatus::Ok,
            error: None,
            metrics: Some(metrics),
            storage: Some(storage),
            adc_check,
        },
        Err(e) => CellReport {
            input: label.to_owned(),
            method,
            status: CellStatus::Error,
            error: Some(e.to_string()),
            metrics: None,
            storage: None,
            adc_check: None,
        },
    }
}

/// Evaluates every (input, method) cell. Cell failures are recorded, not raised.
pub fn run_grid(config: &ExperimentConfig) -> Result<(Vec<CellReport>, Vec<SummaryRow>)> {
    config.validate()?;
    let inputs = load_inputs(&config.input);
    let calib = calibration_keys(config)?;
    run_grid_on(&inputs, config, calib.as_ref())
}

fn run_grid_on(
    inputs: &[(String, Result<AttentionDump>)],
    config: &ExperimentConfig,
    calib: Option<&AttentionDump>,
) -> Result<(Vec<CellReport>, Vec<SummaryRow>)> {
    let references: Vec<Option<AttentionOutput>> = inputs
        .par_iter()
        .map(|(_, d)| d.as_ref().ok().and_then(|d| reference_attention(d).ok()))
        .collect();
    let grid: Vec<(usize, Method)> = (0..inputs.len())
        .flat_map(|i| config.methods.iter().map(move |&m| (i, m)))
        .collect();
    let cells: Vec<CellReport> = grid
        .par_iter()
        .map(|&(i, method)| {
            let (label, dump) = &inputs[i];
            evaluate_cell(label, dump, references[i].as_ref(), method, config, calib)
        })
        .collect();

    let head_dim = inputs
        .iter()
        .find_map(|(_, d)| d.as_ref().ok().map(|d| d.head_dim()));
    let mut summary = Vec::new();
    for &method in &config.methods {
        let samples: Vec<FidelityReport> = cells
            .iter()
            .filter(|c| c.method == method)
            .filter_map(|c| c.metrics.clone())
            .collect();
        if let (Some(metrics), Some(d)) = (FidelityReport::aggregate(&samples), head_dim) {
            if let Ok(storage) = storage_columns(method, d, config.pq.num_centroids) {
                summary.push(SummaryRow {
                    method,
                    storage,
                    metrics,
                });
            }
        }
    }
    Ok((cells, summary))
}

/// Evaluates each method on prefixes of every input, one row per (length, method).
pub fn run_length_sweep(config: &ExperimentConfig) -> Result<Vec<LengthRow>> {
    config.validate()?;
    let lengths = config
        .seq_lengths
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("seq_lengths is required for a length sweep".into()))?;
    let inputs = load_inputs(&config.input);
    let calib = calibration_keys(config)?;
    for (_, d) in &inputs {
        if let Ok(d) = d {
            if let Some(&too_long) = lengths.iter().find(|&&l| l > d.seq_len()) {
                return Err(Error::LengthOutOfRange {
                    requested: too_long,
                    available: d.seq_len(),
                });
            }
        }
    }
    let mut sorted = lengths.clone();
    sorted.sort_unstable();
    sorted.dedup();

    let mut rows = Vec::new();
    for &len in &sorted {
        let truncated: Vec<(String, Result<AttentionDump>)> = inputs
            .iter()
            .map(|(label, d)| {
                let t = match d {
                    Ok(d) => d.truncate(len),
                    Err(e) => Err(Error::InvalidConfig(e.to_string())),
                };
                (label.clone(), t)
            })
            .collect();
        let mut per_method = Vec::with_capacity(config.methods.len());
        if config.retrain_per_length || calib.is_some() {
            let (cells, _) = run_grid_on(&truncated, config, calib.as_ref())?;
            for &method in &config.methods {
                per_method.push((
                    method,
                    cells
                        .iter()
                        .filter(|c| c.method == method)
                        .cloned()
                        .collect::<Vec<_>>(),
                ));
            }
        } else {
            // Codebooks come from each input's full-length keys.
            let cells: Vec<CellReport> = config
                .methods
                .iter()
                .flat_map(|&m| (0..inputs.len()).map(move |i| (i, m)))
                .collect::<Vec<_>>()
                .par_iter()
                .map(|&(i, method)| {
                    let full = inputs[i].1.as_ref().ok();
                    let (label, dump) = &truncated[i];
                    let reference = dump.as_ref().ok().and_then(|d| reference_attention(d).ok());
                    evaluate_cell(label, dump, reference.as_ref(), method, config, full)
                })
                .collect();
            for &method in &config.methods {
                per_method.push((
                    method,
                    cells
                        .iter()
                        .filter(|c| c.method == method)
                        .cloned()
                        .collect(),
                ));
            }
        }
        for (method, cells) in per_method {
            let samples: Vec<FidelityReport> =
                cells.iter().filter_map(|c| c.metrics.clone()).collect();
            rows.push(LengthRow {
                seq_len: len,
                method,
                metrics: FidelityReport::aggregate(&samples),
                failed_inputs: cells
                    .iter()
                    .filter(|c| c.status == CellStatus::Error)
                    .map(|c| format!("{}: {}", c.input, c.error.as_deref().unwrap_or("")))
                    .collect(),
            });
        }
    }
    Ok(rows)
}
