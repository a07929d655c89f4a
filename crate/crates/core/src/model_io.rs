//! The `GMPK1` weight container.
//!
//! Layout: the six magic bytes `GMPK1\n`, a UTF-8 JSON manifest, a single
//! `\0` separator, then one contiguous blob of little-endian `f32` values.
//! Each layer's `blob_offset` is relative to the blob start and its tensor is
//! stored row-major over `(out_channel, in_channel, ky, kx)`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filters::FilterMatrix;

pub const MAGIC: &[u8; 6] = b"GMPK1\n";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BundleError {
    #[error("MagicMismatch: file does not start with the GMPK1 header")]
    MagicMismatch,
    #[error("TruncatedBlob: layer `{layer}` claims bytes {offset}..{end} but {reason}")]
    TruncatedBlob {
        layer: String,
        offset: u64,
        end: u64,
        reason: String,
    },
    #[error("NonFiniteValue: layer `{layer}` flat index {index} is {value}")]
    NonFiniteValue { layer: String, index: usize, value: f64 },
    #[error("ManifestParse: {0}")]
    ManifestParse(String),
    #[error("IoFailure: {0}")]
    Io(#[from] std::io::Error),
}

impl BundleError {
    /// Stable error name, as printed first in the display string.
    pub fn name(&self) -> &'static str {
        match self {
            Self::MagicMismatch => "MagicMismatch",
            Self::TruncatedBlob { .. } => "TruncatedBlob",
            Self::NonFiniteValue { .. } => "NonFiniteValue",
            Self::ManifestParse(_) => "ManifestParse",
            Self::Io(_) => "IoFailure",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv2d,
    /// Fully-connected, stored as a convolution with `kernel = 1`.
    Dense,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub blob_offset: u64,
    pub blob_len: u64,
}

impl LayerSpec {
    /// Length of one flattened filter, `in_channels * kernel^2`.
    pub fn filter_len(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn element_count(&self) -> usize {
        self.out_channels * self.filter_len()
    }

    fn expected_blob_len(&self) -> u64 {
        self.element_count() as u64 * 4
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    layers: Vec<LayerSpec>,
}

/// Shape of a layer before it has a place in the blob.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerShape {
    pub name: String,
    pub kind: LayerKind,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel: usize,
}

impl LayerShape {
    pub fn conv2d(name: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Conv2d,
            out_channels,
            in_channels,
            kernel,
        }
    }

    pub fn dense(name: &str, in_channels: usize, out_channels: usize) -> Self {
        Self {
            name: name.to_string(),
            kind: LayerKind::Dense,
            out_channels,
            in_channels,
            kernel: 1,
        }
    }
}

/// Named layer tensors plus their manifest entries. Once validated it is
/// only mutated through methods that keep shapes and finiteness intact.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    format_version: u32,
    layers: Vec<LayerSpec>,
    tensors: Vec<FilterMatrix>,
}

impl ModelBundle {
    /// Lays the tensors out contiguously in order and validates the result.
    pub fn from_layers(layers: Vec<(LayerShape, FilterMatrix)>) -> Result<Self, BundleError> {
        let mut specs = Vec::with_capacity(layers.len());
        let mut tensors = Vec::with_capacity(layers.len());
        let mut offset = 0u64;
        for (shape, tensor) in layers {
            let spec = LayerSpec {
                name: shape.name,
                kind: shape.kind,
                out_channels: shape.out_channels,
                in_channels: shape.in_channels,
                kernel: shape.kernel,
                blob_offset: offset,
                blob_len: (shape.out_channels * shape.in_channels * shape.kernel * shape.kernel) as u64 * 4,
            };
            offset += spec.blob_len;
            specs.push(spec);
            tensors.push(tensor);
        }
        let bundle = Self {
            format_version: FORMAT_VERSION,
            layers: specs,
            tensors,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn empty() -> Self {
        Self {
            format_version: FORMAT_VERSION,
            layers: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn format_version(&self) -> u32 {
        self.format_version
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn tensors(&self) -> &[FilterMatrix] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.name == name)
    }

    pub fn tensor(&self, name: &str) -> Option<&FilterMatrix> {
        self.layer_index(name).map(|i| &self.tensors[i])
    }

    pub fn tensor_at(&self, i: usize) -> &FilterMatrix {
        &self.tensors[i]
    }

    /// Mutable tensor access; shape is fixed, values must stay finite.
    pub fn tensor_at_mut(&mut self, i: usize) -> &mut FilterMatrix {
        &mut self.tensors[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LayerSpec, &FilterMatrix)> {
        self.layers.iter().zip(&self.tensors)
    }

    /// Shapes of every layer, ready to rebuild a bundle.
    pub fn shapes(&self) -> Vec<LayerShape> {
        self.layers
            .iter()
            .map(|l| LayerShape {
                name: l.name.clone(),
                kind: l.kind,
                out_channels: l.out_channels,
                in_channels: l.in_channels,
                kernel: l.kernel,
            })
            .collect()
    }

    /// Checks every manifest and tensor invariant.
    pub fn validate(&self) -> Result<(), BundleError> {
        if self.format_version != FORMAT_VERSION {
            return Err(BundleError::ManifestParse(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.layers.len() != self.tensors.len() {
            return Err(BundleError::ManifestParse("layer and tensor counts differ".into()));
        }
        check_layer_specs(&self.layers)?;
        for (spec, tensor) in self.iter() {
            if tensor.rows() != spec.out_channels || tensor.cols() != spec.filter_len() {
                return Err(BundleError::ManifestParse(format!(
                    "layer `{}` tensor is {}x{}, manifest says {}x{}",
                    spec.name,
                    tensor.rows(),
                    tensor.cols(),
                    spec.out_channels,
                    spec.filter_len()
                )));
            }
            if let Some((index, &value)) = tensor.values().iter().enumerate().find(|(_, v)| !v.is_finite()) {
                return Err(BundleError::NonFiniteValue {
                    layer: spec.name.clone(),
                    index,
                    value,
                });
            }
        }
        Ok(())
    }

    /// Serializes to the container bytes. Values are narrowed to `f32`.
    pub fn to_bytes(&self) -> Result<Vec<u8>, BundleError> {
        self.validate()?;
        let blob_size = self
            .layers
            .iter()
            .map(|l| l.blob_offset + l.blob_len)
            .max()
            .unwrap_or(0) as usize;
        let mut blob = vec![0u8; blob_size];
        for (spec, tensor) in self.iter() {
            let start = spec.blob_offset as usize;
            for (i, &v) in tensor.values().iter().enumerate() {
                let narrow = v as f32;
                if !narrow.is_finite() {
                    return Err(BundleError::NonFiniteValue {
                        layer: spec.name.clone(),
                        index: i,
                        value: v,
                    });
                }
                blob[start + 4 * i..start + 4 * i + 4].copy_from_slice(&narrow.to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: self.format_version,
            layers: self.layers.clone(),
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| BundleError::ManifestParse(e.to_string()))?;
        let mut out = Vec::with_capacity(MAGIC.len() + json.len() + 1 + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&json);
        out.push(0);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        let rest = bytes.strip_prefix(MAGIC.as_slice()).ok_or(BundleError::MagicMismatch)?;
        let sep = rest
            .iter()
            .position(|&b| b == 0)
            .ok_or_else(|| BundleError::ManifestParse("missing NUL separator after manifest".into()))?;
        let manifest_text = std::str::from_utf8(&rest[..sep])
            .map_err(|e| BundleError::ManifestParse(format!("manifest is not UTF-8: {e}")))?;
        let manifest: Manifest =
            serde_json::from_str(manifest_text).map_err(|e| BundleError::ManifestParse(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(BundleError::ManifestParse(format!(
                "unsupported format_version {}",
                manifest.format_version
            )));
        }
        check_layer_specs(&manifest.layers)?;
        let blob = &rest[sep + 1..];

        let mut tensors = Vec::with_capacity(manifest.layers.len());
        for spec in &manifest.layers {
            let end = spec.blob_offset.checked_add(spec.blob_len);
            let end = match end {
                Some(end) if end <= blob.len() as u64 => end,
                _ => {
                    return Err(BundleError::TruncatedBlob {
                        layer: spec.name.clone(),
                        offset: spec.blob_offset,
                        end: spec.blob_offset.saturating_add(spec.blob_len),
                        reason: format!("the blob holds {} bytes", blob.len()),
                    })
                }
            };
            let bytes = &blob[spec.blob_offset as usize..end as usize];
            let mut values = Vec::with_capacity(spec.element_count());
            for (index, chunk) in bytes.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
                if !v.is_finite() {
                    return Err(BundleError::NonFiniteValue {
                        layer: spec.name.clone(),
                        index,
                        value: v as f64,
                    });
                }
                values.push(v as f64);
            }
            let tensor = FilterMatrix::new(spec.out_channels, spec.filter_len(), values)
                .map_err(|e| BundleError::ManifestParse(format!("layer `{}`: {e}", spec.name)))?;
            tensors.push(tensor);
        }
        Ok(Self {
            format_version: manifest.format_version,
            layers: manifest.layers,
            tensors,
        })
    }
}

fn check_layer_specs(layers: &[LayerSpec]) -> Result<(), BundleError> {
    let mut names = HashSet::new();
    for spec in layers {
        if !names.insert(spec.name.as_str()) {
            return Err(BundleError::ManifestParse(format!(
                "duplicate layer name `{}`",
                spec.name
            )));
        }
        if spec.out_channels == 0 || spec.in_channels == 0 || spec.kernel == 0 {
            return Err(BundleError::ManifestParse(format!(
                "layer `{}` has a zero dimension",
                spec.name
            )));
        }
        if spec.kind == LayerKind::Dense && spec.kernel != 1 {
            return Err(BundleError::ManifestParse(format!(
                "dense layer `{}` must have kernel 1, got {}",
                spec.name, spec.kernel
            )));
        }
        if spec.blob_len != spec.expected_blob_len() {
            return Err(BundleError::TruncatedBlob {
                layer: spec.name.clone(),
                offset: spec.blob_offset,
                end: spec.blob_offset.saturating_add(spec.blob_len),
                reason: format!(
                    "a {}x{}x{}x{} tensor needs {} bytes",
                    spec.out_channels,
                    spec.in_channels,
                    spec.kernel,
                    spec.kernel,
                    spec.expected_blob_len()
                ),
            });
        }
    }
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle, BundleError> {
    let bytes = fs::read(path)?;
    ModelBundle::from_bytes(&bytes)
}

/// Writes atomically enough for CLI use: all validation happens before the
/// file is created.
pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<(), BundleError> {
    let bytes = bundle.to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}
