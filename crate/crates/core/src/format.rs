//! `LGW1` weight files.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "LATGENW1"
//! 8       4     manifest length N, u32 little-endian
//! 12      N     UTF-8 JSON manifest
//! 12+N    ...   tensor payload: little-endian f32, contiguous, manifest order
//! ```
//!
//! The manifest carries `format_version` (must be 1), `input_dim`,
//! `input_space`, `output_shape`, `payload_bytes` and the ordered `layers`.
//! Each parameterised layer lists its tensors as `{name, shape, offset,
//! length}` with `offset`/`length` in bytes relative to the payload start.
//! Tensor layouts are row-major: fully-connected weights are `[out, in]`,
//! transposed-conv weights are `[in_ch, out_ch, kH, kW]`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::latent::LatentSpace;
use crate::layers::{Activation, BatchNormInfer, FullyConnected, LayerSpec, TransposedConv};
use crate::model::GeneratorModel;

pub const MAGIC: &[u8; 8] = b"LATGENW1";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format_version: u32,
    pub input_dim: usize,
    pub input_space: LatentSpace,
    pub output_shape: Vec<usize>,
    pub payload_bytes: u64,
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerEntry {
    FullyConnected {
        in_features: usize,
        out_features: usize,
        tensors: Vec<TensorEntry>,
    },
    TransposedConv {
        in_channels: usize,
        out_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
        tensors: Vec<TensorEntry>,
    },
    BatchNorm {
        channels: usize,
        epsilon: f64,
        tensors: Vec<TensorEntry>,
    },
    Activation {
        activation: Activation,
    },
    Reshape {
        target_shape: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub length: u64,
}

/// Encode a model as an `LGW1` byte stream.
pub fn to_bytes(model: &GeneratorModel) -> Vec<u8> {
    let mut payload: Vec<u8> = Vec::with_capacity(model.parameter_count() * 4);
    let mut layers = Vec::with_capacity(model.layers().len());
    for layer in model.layers() {
        let shapes = expected_shapes(layer);
        let tensors = layer
            .parameters()
            .into_iter()
            .zip(shapes)
            .map(|((name, values), (_, shape))| {
                let offset = payload.len() as u64;
                for v in values {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                TensorEntry {
                    name: name.to_string(),
                    shape,
                    offset,
                    length: values.len() as u64 * 4,
                }
            })
            .collect();
        layers.push(match layer {
            LayerSpec::FullyConnected(fc) => LayerEntry::FullyConnected {
                in_features: fc.in_features,
                out_features: fc.out_features,
                tensors,
            },
            LayerSpec::TransposedConv(tc) => LayerEntry::TransposedConv {
                in_channels: tc.in_channels,
                out_channels: tc.out_channels,
                kernel_h: tc.kernel_h,
                kernel_w: tc.kernel_w,
                stride: tc.stride,
                padding: tc.padding,
                output_padding: tc.output_padding,
                tensors,
            },
            LayerSpec::BatchNormInfer(bn) => LayerEntry::BatchNorm {
                channels: bn.channels(),
                epsilon: bn.epsilon,
                tensors,
            },
            LayerSpec::Activation(a) => LayerEntry::Activation { activation: *a },
            LayerSpec::Reshape { target_shape } => LayerEntry::Reshape {
                target_shape: target_shape.clone(),
            },
        });
    }
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        input_dim: model.input_dim(),
        input_space: model.input_space(),
        output_shape: model.output_shape().to_vec(),
        payload_bytes: payload.len() as u64,
        layers,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::with_capacity(HEADER_LEN + json.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&payload);
    out
}

/// Parse and fully validate an `LGW1` byte stream.
pub fn from_bytes(bytes: &[u8]) -> Result<GeneratorModel> {
    let manifest = read_manifest(bytes)?;
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let payload = &bytes[HEADER_LEN + json_len..];
    if payload.len() as u64 != manifest.payload_bytes {
        return Err(Error::Format(format!(
            "payload is {} bytes but manifest declares {}",
            payload.len(),
            manifest.payload_bytes
        )));
    }

    let mut cursor = 0u64;
    let mut take = |layer: usize, entry: &TensorEntry, want_name: &str, want_shape: &[usize]| {
        if entry.name != want_name {
            return Err(Error::validation(
                Some(layer),
                format!("expected tensor `{want_name}`, found `{}`", entry.name),
            ));
        }
        if entry.shape != want_shape {
            return Err(Error::validation(
                Some(layer),
                format!(
                    "tensor `{want_name}` has shape {:?}, layer hyperparameters imply {want_shape:?}",
                    entry.shape
                ),
            ));
        }
        let numel: u64 = want_shape.iter().map(|&d| d as u64).product();
        if entry.length != numel * 4 {
            return Err(Error::validation(
                Some(layer),
                format!(
                    "tensor `{want_name}` is {} bytes, shape {want_shape:?} needs {}",
                    entry.length,
                    numel * 4
                ),
            ));
        }
        if entry.offset != cursor {
            return Err(Error::Format(format!(
                "layer {layer} tensor `{want_name}` starts at {} but the previous tensor ended at {cursor}",
                entry.offset
            )));
        }
        let end = cursor
            .checked_add(entry.length)
            .filter(|e| *e <= payload.len() as u64)
            .ok_or_else(|| {
                Error::Format(format!(
                    "layer {layer} tensor `{want_name}` runs past the end of the payload"
                ))
            })?;
        let values: Vec<f32> = payload[cursor as usize..end as usize]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(
                Some(layer),
                format!("tensor `{want_name}` element {j} is not finite"),
            ));
        }
        cursor = end;
        Ok(values)
    };

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.iter().enumerate() {
        let layer = match entry {
            LayerEntry::FullyConnected {
                in_features,
                out_features,
                tensors,
            } => {
                let [w, b] = tensor_slots(i, tensors)?;
                LayerSpec::FullyConnected(FullyConnected {
                    in_features: *in_features,
                    out_features: *out_features,
                    weights: take(i, w, "weights", &[*out_features, *in_features])?,
                    bias: take(i, b, "bias", &[*out_features])?,
                })
            }
            LayerEntry::TransposedConv {
                in_channels,
                out_channels,
                kernel_h,
                kernel_w,
                stride,
                padding,
                output_padding,
                tensors,
            } => {
                let [w, b] = tensor_slots(i, tensors)?;
                LayerSpec::TransposedConv(TransposedConv {
                    in_channels: *in_channels,
                    out_channels: *out_channels,
                    kernel_h: *kernel_h,
                    kernel_w: *kernel_w,
                    stride: *stride,
                    padding: *padding,
                    output_padding: *output_padding,
                    weights: take(
                        i,
                        w,
                        "weights",
                        &[*in_channels, *out_channels, *kernel_h, *kernel_w],
                    )?,
                    bias: take(i, b, "bias", &[*out_channels])?,
                })
            }
            LayerEntry::BatchNorm {
                channels,
                epsilon,
                tensors,
            } => {
                let [g, b, m, v] = tensor_slots(i, tensors)?;
                let c = [*channels];
                LayerSpec::BatchNormInfer(BatchNormInfer {
                    gamma: take(i, g, "gamma", &c)?,
                    beta: take(i, b, "beta", &c)?,
                    running_mean: take(i, m, "running_mean", &c)?,
                    running_var: take(i, v, "running_var", &c)?,
                    epsilon: *epsilon,
                })
            }
            LayerEntry::Activation { activation } => LayerSpec::Activation(*activation),
            LayerEntry::Reshape { target_shape } => LayerSpec::Reshape {
                target_shape: target_shape.clone(),
            },
        };
        layers.push(layer);
    }
    if cursor != payload.len() as u64 {
        return Err(Error::Format(format!(
            "{} trailing payload bytes not claimed by any tensor",
            payload.len() as u64 - cursor
        )));
    }
    GeneratorModel::new(
        manifest.input_dim,
        manifest.input_space,
        layers,
        manifest.output_shape,
    )
    .map_err(|e| match e {
        Error::Shape { layer, message } => Error::Validation { layer, message },
        other => other,
    })
}

/// Decode just the header and manifest.
pub fn read_manifest(bytes: &[u8]) -> Result<Manifest> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "file is {} bytes, shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&bytes[..8]),
            std::str::from_utf8(MAGIC).unwrap()
        )));
    }
    let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let json = bytes
        .get(HEADER_LEN..HEADER_LEN.saturating_add(json_len))
        .ok_or_else(|| {
            Error::Format(format!(
                "manifest declares {json_len} bytes but only {} remain",
                bytes.len() - HEADER_LEN
            ))
        })?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::Format(format!("manifest JSON: {e}")))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Format(format!(
            "unsupported format_version {} (reader supports {FORMAT_VERSION})",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

fn tensor_slots<const N: usize>(
    layer: usize,
    tensors: &[TensorEntry],
) -> Result<[&TensorEntry; N]> {
    let refs: Vec<&TensorEntry> = tensors.iter().collect();
    refs.try_into().map_err(|v: Vec<&TensorEntry>| {
        Error::validation(
            Some(layer),
            format!("expected {N} tensors, manifest lists {}", v.len()),
        )
    })
}

fn expected_shapes(layer: &LayerSpec) -> Vec<(&'static str, Vec<usize>)> {
    match layer {
        LayerSpec::FullyConnected(fc) => vec![
            ("weights", vec![fc.out_features, fc.in_features]),
            ("bias", vec![fc.out_features]),
        ],
        LayerSpec::TransposedConv(tc) => vec![
            (
                "weights",
                vec![tc.in_channels, tc.out_channels, tc.kernel_h, tc.kernel_w],
            ),
            ("bias", vec![tc.out_channels]),
        ],
        LayerSpec::BatchNormInfer(bn) => ["gamma", "beta", "running_mean", "running_var"]
            .into_iter()
            .map(|n| (n, vec![bn.channels()]))
            .collect(),
        LayerSpec::Activation(_) | LayerSpec::Reshape { .. } => Vec::new(),
    }
}

pub fn save_model(model: &GeneratorModel, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &to_bytes(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GeneratorModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::dcgan64_architecture;

    fn tiny() -> GeneratorModel {
        dcgan64_architecture(1, 1.0 / 32.0).unwrap()
    }

    fn splice_manifest(bytes: &[u8], edit: impl FnOnce(&mut serde_json::Value)) -> Vec<u8> {
        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut v: serde_json::Value = serde_json::from_slice(&bytes[12..12 + json_len]).unwrap();
        edit(&mut v);
        let json = serde_json::to_vec(&v).unwrap();
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&bytes[12 + json_len..]);
        out
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = tiny();
        let bytes = to_bytes(&m);
        let back = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn truncation_is_a_format_error() {
        let bytes = to_bytes(&tiny());
        for cut in [0, 5, 11, 40, bytes.len() - 1] {
            assert!(
                matches!(from_bytes(&bytes[..cut]), Err(Error::Format(_))),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = to_bytes(&tiny());
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
        let bytes = splice_manifest(&to_bytes(&tiny()), |v| v["format_version"] = 2.into());
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn shape_lie_names_layer() {
        // last transposed conv declares 4 output channels while its tensors hold 3
        let m = tiny();
        let idx = m
            .layers()
            .iter()
            .rposition(|l| matches!(l, LayerSpec::TransposedConv(_)))
            .unwrap();
        let bytes = splice_manifest(&to_bytes(&m), |v| {
            v["layers"][idx]["out_channels"] = 4.into();
        });
        let err = from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, Error::Validation { .. }), "{err}");
        assert_eq!(err.layer(), Some(idx));
    }

    #[test]
    fn nan_weight_rejected() {
        let bytes = to_bytes(&tiny());
        let manifest = read_manifest(&bytes).unwrap();
        let json_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let mut bad = bytes.clone();
        let at = 12 + json_len + 8;
        bad[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = from_bytes(&bad).unwrap_err();
        assert!(
            matches!(err, Error::Validation { layer: Some(0), .. }),
            "{err}"
        );
        assert!(manifest.payload_bytes > 0);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bytes = splice_manifest(&to_bytes(&tiny()), |v| v["extra"] = 1.into());
        assert!(matches!(from_bytes(&bytes), Err(Error::Format(_))));
    }
}
