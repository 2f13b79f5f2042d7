//! Persistence: datasets, checkpoints, CSV reports, run manifests.
//!
//! All writes go through a temp file in the target directory followed by a
//! rename, so partially written files never land under their final name.
//! Every file format carries a schema version and loads fail loudly on
//! mismatches, truncation, or non-finite parameters.

use crate::error::{Error, Result};
use crate::nn::{Activation, Layer, Mlp};
use crate::schedule::NoiseSchedule;
use crate::score::ScoreModel;
use crate::synth::ConformerSet;
use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

/// Writes `bytes` to `path` atomically (temp file + rename in the same
/// directory).
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)
        .map_err(|e| Error::Persistence(format!("renaming into {}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Persistence(format!("reading {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

// ---------------------------------------------------------------------------
// Dataset files: one JSON record per line, one line per molecule.

#[derive(Serialize, Deserialize)]
struct DatasetRecord {
    schema_version: u32,
    #[serde(flatten)]
    set: ConformerSet,
}

pub fn write_dataset(sets: &[ConformerSet], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    for set in sets {
        let rec = DatasetRecord {
            schema_version: SCHEMA_VERSION,
            set: set.clone(),
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::Persistence(format!("encoding dataset record: {e}")))?;
        buf.extend_from_slice(line.as_bytes());
        buf.push(b'\n');
    }
    atomic_write(path, &buf)
}

pub fn read_dataset(path: &Path) -> Result<Vec<ConformerSet>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Persistence(format!("reading {}: {e}", path.display())))?;
    let mut sets = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let ctx = |msg: String| {
            Error::Persistence(format!("{} line {lineno}: {msg}", path.display()))
        };
        let rec: DatasetRecord =
            serde_json::from_str(line).map_err(|e| ctx(e.to_string()))?;
        if rec.schema_version != SCHEMA_VERSION {
            return Err(ctx(format!(
                "schema version {} unsupported, expected {SCHEMA_VERSION}",
                rec.schema_version
            )));
        }
        rec.set
            .template
            .validate()
            .map_err(|e| ctx(format!("invalid template: {e}")))?;
        if rec.set.conformers.is_empty() {
            return Err(ctx("record has no conformers".into()));
        }
        for (ci, c) in rec.set.conformers.iter().enumerate() {
            if c.len() != rec.set.template.n_atoms {
                return Err(ctx(format!(
                    "conformer {ci} has {} atoms, template says {}",
                    c.len(),
                    rec.set.template.n_atoms
                )));
            }
            if !crate::geom::all_finite(c) {
                return Err(ctx(format!("conformer {ci} has non-finite coordinates")));
            }
        }
        sets.push(rec.set);
    }
    if sets.is_empty() {
        return Err(Error::Persistence(format!(
            "{} contains no records",
            path.display()
        )));
    }
    Ok(sets)
}

// ---------------------------------------------------------------------------
// Checkpoints: a single JSON document with the full network.

/// Training settings echoed into a checkpoint for provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainEcho {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub lambda_ip: f64,
    pub seed: u64,
    pub weighting: String,
    pub log_every: usize,
}

impl TrainEcho {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        TrainEcho {
            lr: cfg.lr,
            batch_size: cfg.batch_size,
            steps: cfg.steps,
            lambda_ip: cfg.lambda_ip,
            seed: cfg.seed,
            weighting: cfg.weighting.name().to_string(),
            log_every: cfg.log_every,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelDoc {
    n_atoms: usize,
    sigmas: Vec<f64>,
    center_input: bool,
    activation: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointDoc {
    schema_version: u32,
    model: ModelDoc,
    layers: Vec<LayerDoc>,
    train_config: Option<TrainEcho>,
    final_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CheckpointMeta {
    pub train_config: Option<TrainEcho>,
    pub final_loss: Option<f64>,
}

pub fn save_checkpoint(
    model: &ScoreModel,
    train_config: Option<&TrainEcho>,
    final_loss: Option<f64>,
    path: &Path,
) -> Result<()> {
    let doc = CheckpointDoc {
        schema_version: SCHEMA_VERSION,
        model: ModelDoc {
            n_atoms: model.n_atoms,
            sigmas: model.schedule.sigmas().to_vec(),
            center_input: model.center_input,
            activation: model.net.activation.name().to_string(),
        },
        layers: model
            .net
            .layers
            .iter()
            .map(|l| LayerDoc {
                rows: l.out_dim,
                cols: l.in_dim,
                weights: l.weights.clone(),
                bias: l.bias.clone(),
            })
            .collect(),
        train_config: train_config.cloned(),
        final_loss,
    };
    let text = serde_json::to_string(&doc)
        .map_err(|e| Error::Persistence(format!("encoding checkpoint: {e}")))?;
    atomic_write(path, text.as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<(ScoreModel, CheckpointMeta)> {
    let ctx = |msg: String| Error::Persistence(format!("{}: {msg}", path.display()));
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Persistence(format!("reading {}: {e}", path.display())))?;
    let doc: CheckpointDoc = serde_json::from_str(&text).map_err(|e| ctx(e.to_string()))?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(ctx(format!(
            "schema version {} unsupported, expected {SCHEMA_VERSION}",
            doc.schema_version
        )));
    }
    let activation =
        Activation::from_name(&doc.model.activation).map_err(|e| ctx(e.to_string()))?;
    let schedule = NoiseSchedule::from_sigmas(doc.model.sigmas.clone())
        .map_err(|e| ctx(format!("invalid schedule: {e}")))?;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.iter().enumerate() {
        if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
            return Err(ctx(format!(
                "layer {i}: expected {}x{} weights and {} biases, got {} and {}",
                l.rows,
                l.cols,
                l.rows,
                l.weights.len(),
                l.bias.len()
            )));
        }
        if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
            return Err(ctx(format!("layer {i}: non-finite parameter")));
        }
        layers.push(Layer {
            weights: l.weights.clone(),
            bias: l.bias.clone(),
            in_dim: l.cols,
            out_dim: l.rows,
        });
    }
    let net = Mlp::from_parts(layers, activation).map_err(|e| ctx(e.to_string()))?;
    let model = ScoreModel::new(net, doc.model.n_atoms, schedule, doc.model.center_input)
        .map_err(|e| ctx(e.to_string()))?;
    Ok((
        model,
        CheckpointMeta {
            train_config: doc.train_config,
            final_loss: doc.final_loss,
        },
    ))
}

// ---------------------------------------------------------------------------
// CSV reports. Every report names the manifest that produced it.

pub fn write_report_csv(
    path: &Path,
    manifest_digest: &str,
    header: &[&str],
    rows: &[Vec<String>],
) -> Result<()> {
    let mut buf = String::new();
    buf.push_str("# manifest: ");
    buf.push_str(manifest_digest);
    buf.push('\n');
    buf.push_str(&header.join(","));
    buf.push('\n');
    for (i, row) in rows.iter().enumerate() {
        if row.len() != header.len() {
            return Err(Error::Shape(format!(
                "report row {i} has {} fields, header has {}",
                row.len(),
                header.len()
            )));
        }
        buf.push_str(&row.join(","));
        buf.push('\n');
    }
    atomic_write(path, buf.as_bytes())
}

/// Reads a report back, skipping `#` comment lines; returns (header, rows).
pub fn read_report_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Persistence(format!("reading {}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| Error::Persistence(format!("{} has no header", path.display())))?
        .split(',')
        .map(str::to_string)
        .collect::<Vec<_>>();
    let mut rows = Vec::new();
    for line in lines {
        let row: Vec<String> = line.split(',').map(str::to_string).collect();
        if row.len() != header.len() {
            return Err(Error::Persistence(format!(
                "{}: row has {} fields, header has {}",
                path.display(),
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

// ---------------------------------------------------------------------------
// Run manifests.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub subcommand: String,
    /// Fully resolved configuration, seed included, as flat strings.
    pub config: BTreeMap<String, String>,
    /// Digests of the input files the run consumed.
    pub inputs: BTreeMap<String, String>,
    /// Digest over subcommand, config, and inputs; identical runs produce
    /// identical digests regardless of where or when they ran.
    pub digest: String,
}

pub fn build_manifest(
    subcommand: &str,
    config: BTreeMap<String, String>,
    inputs: BTreeMap<String, String>,
) -> Manifest {
    #[derive(Serialize)]
    struct Canonical<'a> {
        subcommand: &'a str,
        config: &'a BTreeMap<String, String>,
        inputs: &'a BTreeMap<String, String>,
    }
    let canonical = serde_json::to_string(&Canonical {
        subcommand,
        config: &config,
        inputs: &inputs,
    })
    .expect("string maps always encode");
    Manifest {
        schema_version: SCHEMA_VERSION,
        subcommand: subcommand.to_string(),
        config,
        inputs,
        digest: sha256_hex(canonical.as_bytes()),
    }
}

pub fn write_manifest(manifest: &Manifest, dir: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Persistence(format!("encoding manifest: {e}")))?;
    let mut bytes = text.into_bytes();
    bytes.push(b'\n');
    atomic_write(&dir.join("manifest.json"), &bytes)
}

// ---------------------------------------------------------------------------
// Flat key = value configuration files.

pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Persistence(format!("reading {}: {e}", path.display())))?;
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Usage(format!(
                "{} line {}: expected 'key = value', got {raw:?}",
                path.display(),
                idx + 1
            ))
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if key.is_empty() {
            return Err(Error::Usage(format!(
                "{} line {}: empty key",
                path.display(),
                idx + 1
            )));
        }
        if map.insert(key.clone(), value).is_some() {
            return Err(Error::Usage(format!(
                "{} line {}: duplicate key {key:?}",
                path.display(),
                idx + 1
            )));
        }
    }
    Ok(map)
}
