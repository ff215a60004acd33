//! Parameter checkpoints: one JSON header line (model metadata plus layer
//! names and shapes in payload order), then the flat little-endian 64-bit
//! float payload.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cnn::{CnnArch, CnnParams, ConvLayer};
use super::lstm::{LstmClassifier, LstmParams};
use super::train::{MlpParams, ModelParams};
use super::{CandidateActivation, DenseLayer};
use crate::error::{Error, Result};
use ndarray::{Array1, Array2};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
enum ModelMeta {
    Lstm { hidden_size: usize, input_size: usize, candidate: CandidateActivation },
    Cnn { arch: CnnArch, input_size: usize },
    Mlp { input_size: usize, hidden_size: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LayerEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    meta: ModelMeta,
    layers: Vec<LayerEntry>,
}

fn meta_of(params: &ModelParams) -> ModelMeta {
    match params {
        ModelParams::Lstm(clf) => ModelMeta::Lstm {
            hidden_size: clf.cell.hidden_size,
            input_size: clf.cell.input_size(),
            candidate: clf.candidate,
        },
        ModelParams::Cnn(p) => ModelMeta::Cnn { arch: p.arch, input_size: p.input_size },
        ModelParams::Mlp(p) => ModelMeta::Mlp {
            input_size: p.fc1.weights.dim().1,
            hidden_size: p.fc1.weights.dim().0,
        },
    }
}

fn zeroed_params(meta: &ModelMeta) -> Result<ModelParams> {
    let dense_zeros = |outputs: usize, inputs: usize| DenseLayer {
        weights: Array2::zeros((outputs, inputs)),
        bias: Array1::zeros(outputs),
    };
    match meta {
        ModelMeta::Lstm { hidden_size, input_size, candidate } => {
            Ok(ModelParams::Lstm(LstmClassifier {
                cell: LstmParams::zeros(*hidden_size, *input_size),
                head: dense_zeros(2, *hidden_size),
                candidate: *candidate,
            }))
        }
        ModelMeta::Cnn { arch, input_size } => {
            let dims = arch.stage_dims(*input_size)?;
            let conv_zeros = |k: usize, cin: usize, cout: usize| ConvLayer {
                kernel: ndarray::Array4::zeros((k, k, cin, cout)),
                bias: Array1::zeros(cout),
            };
            Ok(ModelParams::Cnn(Box::new(CnnParams {
                arch: *arch,
                input_size: *input_size,
                conv1: conv_zeros(arch.conv1_kernel, 1, arch.conv1_channels),
                conv2: conv_zeros(arch.conv2_kernel, arch.conv1_channels, arch.conv2_channels),
                fc1: dense_zeros(arch.fc1_units, dims.flat),
                fc2: dense_zeros(arch.fc2_units, arch.fc1_units),
                fc3: dense_zeros(2, arch.fc2_units),
            })))
        }
        ModelMeta::Mlp { input_size, hidden_size } => Ok(ModelParams::Mlp(MlpParams {
            fc1: dense_zeros(*hidden_size, *input_size),
            fc2: dense_zeros(2, *hidden_size),
        })),
    }
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let header = CheckpointHeader {
        meta: meta_of(params),
        layers: params
            .layer_entries()
            .into_iter()
            .map(|(name, shape)| LayerEntry { name, shape })
            .collect(),
    };
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    let json = serde_json::to_string(&header).expect("header serialization");
    writer.write_all(json.as_bytes()).map_err(|e| Error::io(path, e))?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    for v in params.to_flat() {
        writer.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header_line = String::new();
    reader.read_line(&mut header_line).map_err(|e| Error::io(path, e))?;
    let header: CheckpointHeader = serde_json::from_str(header_line.trim_end())
        .map_err(|e| Error::MalformedHeader { path: path.to_path_buf(), detail: e.to_string() })?;

    let mut params = zeroed_params(&header.meta)?;
    let expected_layers = params.layer_entries();
    if expected_layers.len() != header.layers.len()
        || expected_layers
            .iter()
            .zip(header.layers.iter())
            .any(|((name, shape), entry)| *name != entry.name || *shape != entry.shape)
    {
        return Err(Error::MalformedHeader {
            path: path.to_path_buf(),
            detail: "layer list does not match the declared model".into(),
        });
    }

    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| Error::io(path, e))?;
    let count = params.num_params();
    if payload.len() != count * 8 {
        return Err(Error::DimensionMismatch {
            context: format!(
                "{}: payload {} bytes, expected {}",
                path.display(),
                payload.len(),
                count * 8
            ),
        });
    }
    let flat: Vec<f64> = payload
        .chunks_exact(8)
        .map(|chunk| f64::from_le_bytes(chunk.try_into().expect("chunk of 8")))
        .collect();
    params.assign_flat(&flat)?;
    Ok(params)
}
