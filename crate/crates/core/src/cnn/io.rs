//! Model files.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! "QCNN" | version: u8 | n: u8 | widths: 4 x u32 | parameter count: u64
//! parameters: count x f64, layer by layer in stage order (weights, then biases)
//! ```
//!
//! `save_model` also writes a JSON sidecar next to the file (same stem,
//! `.json` extension) with the architecture, checksum and provenance.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::network::{build_template_network, NetworkSpec, Parameters};
use super::train::{TrainReport, TrainerConfig};
use crate::error::{format_err, Error, FormatErrorCode, Result};
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"QCNN";
pub const MODEL_FORMAT_VERSION: u8 = 1;

/// Lowercase hex SHA-256 of the parameters as little-endian f64.
pub fn parameter_checksum<S: Scalar>(params: &Parameters<S>) -> String {
    let mut h = Sha256::new();
    for v in params.as_slice() {
        h.update(v.as_f64().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub a: Option<u32>,
    pub unit: Option<u64>,
    pub dataset_records: Option<u64>,
    pub trainer: Option<TrainerConfig>,
    pub report: Option<TrainReport>,
    /// Measured false-rejection rate on a held-out in-control set.
    pub p_fr: Option<f64>,
    pub p_fr_sample_size: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub format_version: u8,
    pub n: usize,
    pub linear_widths: [usize; 4],
    pub parameter_count: usize,
    pub checksum: String,
    pub provenance: Provenance,
}

pub fn write_model<S: Scalar, W: Write>(mut out: W, spec: &NetworkSpec, params: &Parameters<S>) -> Result<()> {
    if params.len() != spec.parameter_count() {
        return Err(Error::Shape(format!(
            "{} parameters for a network with {}",
            params.len(),
            spec.parameter_count()
        )));
    }
    out.write_all(MODEL_MAGIC)?;
    out.write_all(&[MODEL_FORMAT_VERSION, spec.n() as u8])?;
    for w in spec.linear_widths() {
        out.write_all(&(w as u32).to_le_bytes())?;
    }
    out.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params.as_slice() {
        out.write_all(&v.as_f64().to_le_bytes())?;
    }
    Ok(())
}

fn read_bytes<R: Read>(input: &mut R, buf: &mut [u8]) -> Result<()> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(FormatErrorCode::Truncated, "unexpected end of model file"),
        _ => Error::Io(e),
    })
}

pub fn read_model<R: Read>(mut input: R) -> Result<(NetworkSpec, Parameters<f64>)> {
    let mut head = [0u8; 6];
    read_bytes(&mut input, &mut head)?;
    if &head[..4] != MODEL_MAGIC {
        return Err(format_err(FormatErrorCode::BadMagic, "not a QCNN model file"));
    }
    if head[4] != MODEL_FORMAT_VERSION {
        return Err(format_err(
            FormatErrorCode::UnsupportedVersion,
            format!("model version {} (expected {MODEL_FORMAT_VERSION})", head[4]),
        ));
    }
    let mut widths = [0usize; 4];
    let mut word = [0u8; 4];
    for w in &mut widths {
        read_bytes(&mut input, &mut word)?;
        *w = u32::from_le_bytes(word) as usize;
    }
    let spec = build_template_network(head[5] as usize, Some(widths))
        .map_err(|e| format_err(FormatErrorCode::Inconsistent, e.to_string()))?;
    let mut long = [0u8; 8];
    read_bytes(&mut input, &mut long)?;
    let count = u64::from_le_bytes(long);
    if count != spec.parameter_count() as u64 {
        return Err(format_err(
            FormatErrorCode::Inconsistent,
            format!("file holds {count} parameters, architecture needs {}", spec.parameter_count()),
        ));
    }
    let mut values = Vec::with_capacity(spec.parameter_count());
    for _ in 0..count {
        read_bytes(&mut input, &mut long)?;
        values.push(f64::from_le_bytes(long));
    }
    if input.read(&mut [0u8; 1])? != 0 {
        return Err(format_err(FormatErrorCode::Inconsistent, "trailing bytes after parameters"));
    }
    let params = Parameters::from_vec(&spec, values)?;
    Ok((spec, params))
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the model file and its JSON sidecar; returns the metadata written.
pub fn save_model<S: Scalar>(
    path: &Path,
    spec: &NetworkSpec,
    params: &Parameters<S>,
    provenance: Provenance,
) -> Result<ModelMetadata> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(&mut out, spec, params)?;
    out.flush()?;
    let meta = ModelMetadata {
        format_version: MODEL_FORMAT_VERSION,
        n: spec.n(),
        linear_widths: spec.linear_widths(),
        parameter_count: spec.parameter_count(),
        checksum: parameter_checksum(params),
        provenance,
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    std::fs::write(sidecar(path), text)?;
    Ok(meta)
}

pub fn load_model(path: &Path) -> Result<(NetworkSpec, Parameters<f64>)> {
    read_model(BufReader::new(File::open(path)?))
}

pub fn load_model_metadata(path: &Path) -> Result<ModelMetadata> {
    let text = std::fs::read_to_string(sidecar(path))?;
    Ok(serde_json::from_str(&text)?)
}
