//! Dataset generation and persistence: a synthetic two-mode conformer
//! corpus, line-delimited dataset files, binary checkpoints, and run
//! manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read as _, Write as _};
use std::path::Path;

use nalgebra::{Matrix3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::denoiser::DenoiserConfig;
use crate::diffcore::{ParameterStore, Tensor};
use crate::error::{Error, Result};
use crate::geom::Conformation;
use crate::molgraph::{Bond, BondType, MolecularGraph};
use crate::objective::ObjectiveKind;

pub const DATASET_FORMAT: &str = "conformer-dataset";
pub const DATASET_MAJOR: u32 = 1;
pub const CHECKPOINT_FORMAT: &str = "denoiser-checkpoint";
pub const CHECKPOINT_MAJOR: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
    Test,
}

/// One molecule with its reference conformer ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub graph: MolecularGraph,
    pub conformers: Vec<Conformation>,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    major: u32,
    minor: u32,
}

/// Write records as one JSON document per line behind a version header.
pub fn write_dataset(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let header = DatasetHeader {
        format: DATASET_FORMAT.to_string(),
        major: DATASET_MAJOR,
        minor: 0,
    };
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(w)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| Error::invalid(e.to_string()))?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Vec<DatasetRecord>> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header_line = lines
        .next()
        .ok_or(Error::Parse { line: 1, message: "empty file".into() })??;
    let header: DatasetHeader = serde_json::from_str(&header_line)
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.format != DATASET_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected format '{}'", header.format),
        });
    }
    if header.major != DATASET_MAJOR {
        return Err(Error::Version { found: header.major, supported: DATASET_MAJOR });
    }
    let mut out = Vec::new();
    for (idx, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Parse { line: idx + 2, message: e.to_string() })?;
        out.push(record);
    }
    Ok(out)
}

/// Synthetic corpus recipe: a fixed zigzag chain whose tail flips between
/// discrete torsion modes, plus isotropic coordinate jitter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToySpec {
    pub num_molecules: usize,
    pub conformers_per_molecule: usize,
    /// Torsion angle of each mode, radians.
    pub mode_angles: Vec<f64>,
    pub jitter: f64,
    pub seed: u64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            num_molecules: 500,
            conformers_per_molecule: 5,
            mode_angles: vec![1.2217, -1.2217],
            jitter: 0.05,
            seed: 7,
        }
    }
}

/// Eight-atom zigzag chain shared by every toy molecule.
pub fn toy_template() -> (MolecularGraph, Conformation) {
    let n = 8;
    let bonds = (0..n - 1)
        .map(|i| Bond { i, j: i + 1, bond_type: BondType::Single })
        .collect();
    let graph = MolecularGraph::new(vec![0; n], bonds).unwrap();
    let mut coords = Vec::with_capacity(n);
    for i in 0..n {
        let y = if i % 2 == 0 { 0.0 } else { 1.1 };
        coords.push([1.4 * i as f64, y, 0.0]);
    }
    (graph, Conformation::new(coords).unwrap())
}

fn rotate_tail(template: &Conformation, angle: f64) -> Conformation {
    // Torsion about the bond 3-4: atoms 4..8 swing around that axis.
    let pivot = Vector3::from(template.coords()[3]);
    let axis = Unit::new_normalize(Vector3::from(template.coords()[4]) - pivot);
    let rot = Matrix3::from(nalgebra::Rotation3::from_axis_angle(&axis, angle));
    let coords = template
        .coords()
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if i < 4 {
                *row
            } else {
                let moved = rot * (Vector3::from(*row) - pivot) + pivot;
                [moved.x, moved.y, moved.z]
            }
        })
        .collect();
    Conformation::new(coords).unwrap()
}

/// The noiseless conformer of one mode.
pub fn toy_mode_conformer(mode: usize, spec: &ToySpec) -> Result<Conformation> {
    let angle = *spec
        .mode_angles
        .get(mode)
        .ok_or_else(|| Error::invalid(format!("mode {mode} out of range")))?;
    let (_, template) = toy_template();
    Ok(rotate_tail(&template, angle))
}

/// Deterministic toy corpus. Returns the records plus a sidecar of mode
/// labels, one per conformer, aligned with the record order.
pub fn generate_toy_dataset(spec: &ToySpec) -> Result<(Vec<DatasetRecord>, Vec<Vec<usize>>)> {
    if spec.num_molecules == 0 || spec.conformers_per_molecule == 0 {
        return Err(Error::invalid("toy dataset sizes must be positive"));
    }
    if spec.mode_angles.is_empty() {
        return Err(Error::invalid("at least one torsion mode required"));
    }
    let (graph, template) = toy_template();
    let modes: Vec<Conformation> = spec
        .mode_angles
        .iter()
        .map(|&a| rotate_tail(&template, a))
        .collect();
    let mut records = Vec::with_capacity(spec.num_molecules);
    let mut labels = Vec::with_capacity(spec.num_molecules);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for m in 0..spec.num_molecules {
        let mut conformers = Vec::with_capacity(spec.conformers_per_molecule);
        let mut mol_labels = Vec::with_capacity(spec.conformers_per_molecule);
        for _ in 0..spec.conformers_per_molecule {
            let mode = rng.gen_range(0..modes.len());
            let coords = modes[mode]
                .coords()
                .iter()
                .map(|row| {
                    let mut out = *row;
                    for v in &mut out {
                        let z: f64 = rng.sample(StandardNormal);
                        *v += spec.jitter * z;
                    }
                    out
                })
                .collect();
            conformers.push(Conformation::new(coords)?);
            mol_labels.push(mode);
        }
        records.push(DatasetRecord {
            id: format!("toy-{m:04}"),
            graph: graph.clone(),
            conformers,
            split: Split::Train,
        });
        labels.push(mol_labels);
    }
    Ok((records, labels))
}

/// Everything needed to resume training or to sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: DenoiserConfig,
    pub schedule: String,
    pub objective: ObjectiveKind,
    pub store: ParameterStore,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    major: u32,
    config: DenoiserConfig,
    schedule: String,
    objective: ObjectiveKind,
    step: u64,
    params: Vec<ParamEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Header as one JSON line, then for each parameter in name order the
/// value, first-moment, and second-moment buffers as little-endian f64.
/// The binary payload makes round-trips bit-exact.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut entries = Vec::new();
    for (name, slot) in &ckpt.store.slots {
        entries.push(ParamEntry {
            name: name.clone(),
            rows: slot.value.rows,
            cols: slot.value.cols,
        });
    }
    let header = CheckpointHeader {
        format: CHECKPOINT_FORMAT.to_string(),
        major: CHECKPOINT_MAJOR,
        config: ckpt.config.clone(),
        schedule: ckpt.schedule.clone(),
        objective: ckpt.objective,
        step: ckpt.store.step,
        params: entries,
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header).map_err(|e| Error::invalid(e.to_string()))?;
    writeln!(w)?;
    for slot in ckpt.store.slots.values() {
        for buf in [&slot.value.data, &slot.m, &slot.v] {
            for &x in buf {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_line = String::new();
    r.read_line(&mut header_line)?;
    let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())
        .map_err(|e| Error::Parse { line: 1, message: e.to_string() })?;
    if header.format != CHECKPOINT_FORMAT {
        return Err(Error::Parse {
            line: 1,
            message: format!("unexpected format '{}'", header.format),
        });
    }
    if header.major != CHECKPOINT_MAJOR {
        return Err(Error::Version { found: header.major, supported: CHECKPOINT_MAJOR });
    }
    let mut store = ParameterStore::new();
    store.step = header.step;
    let mut read_buf = |len: usize| -> Result<Vec<f64>> {
        let mut bytes = vec![0u8; len * 8];
        r.read_exact(&mut bytes).map_err(|_| {
            Error::Parse { line: 2, message: "truncated parameter payload".into() }
        })?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    for entry in &header.params {
        let len = entry.rows * entry.cols;
        let value = Tensor::new(entry.rows, entry.cols, read_buf(len)?)?;
        let m = read_buf(len)?;
        let v = read_buf(len)?;
        store.insert(&entry.name, value)?;
        let slot = store.slots.get_mut(&entry.name).unwrap();
        slot.m = m;
        slot.v = v;
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Parse { line: 2, message: "trailing bytes after payload".into() });
    }
    Ok(Checkpoint {
        config: header.config,
        schedule: header.schedule,
        objective: header.objective,
        store,
    })
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Summary of one training or sampling run, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub schedule: String,
    pub seed: u64,
    pub checkpoint: Option<String>,
    pub checkpoint_sha256: Option<String>,
    pub notes: Vec<String>,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    let text =
        serde_json::to_string_pretty(manifest).map_err(|e| Error::invalid(e.to_string()))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse { line: 1, message: e.to_string() })
}
