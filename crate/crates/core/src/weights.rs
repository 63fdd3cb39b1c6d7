//! Whole-network weights and their on-disk snapshot: a flat little-endian
//! f32 blob plus a JSON manifest of named tensors.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbfp::BfaWeights;
use crate::bsst::LayerWeights;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::init::Initializer;
use crate::tensor::Tensor;

pub const SNAPSHOT_BLOB: &str = "weights.bin";
pub const SNAPSHOT_MANIFEST: &str = "weights.json";

/// Two 3×3 stride-2 convs taking RGB to `C` channels at quarter resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
}

/// Two upsample + 3×3 conv stages taking `C` channels back to an RGB
/// residual at full resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights {
    pub conv1_weight: Tensor,
    pub conv1_bias: Tensor,
    pub conv2_weight: Tensor,
    pub conv2_bias: Tensor,
}

impl EncoderWeights {
    pub fn zeros(c: usize) -> Self {
        EncoderWeights {
            conv1_weight: Tensor::zeros([c, 3, 3, 3]),
            conv1_bias: Tensor::zeros([c]),
            conv2_weight: Tensor::zeros([c, c, 3, 3]),
            conv2_bias: Tensor::zeros([c]),
        }
    }

    pub fn seeded(init: &mut Initializer, c: usize) -> Self {
        EncoderWeights {
            conv1_weight: init.uniform([c, 3, 3, 3], 27),
            conv1_bias: init.uniform([c], 27),
            conv2_weight: init.uniform([c, c, 3, 3], 9 * c),
            conv2_bias: init.uniform([c], 9 * c),
        }
    }

    fn named(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("conv1_weight", &self.conv1_weight),
            ("conv1_bias", &self.conv1_bias),
            ("conv2_weight", &self.conv2_weight),
            ("conv2_bias", &self.conv2_bias),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 4] {
        [
            ("conv1_weight", &mut self.conv1_weight),
            ("conv1_bias", &mut self.conv1_bias),
            ("conv2_weight", &mut self.conv2_weight),
            ("conv2_bias", &mut self.conv2_bias),
        ]
    }
}

impl DecoderWeights {
    pub fn zeros(c: usize) -> Self {
        DecoderWeights {
            conv1_weight: Tensor::zeros([c, c, 3, 3]),
            conv1_bias: Tensor::zeros([c]),
            conv2_weight: Tensor::zeros([3, c, 3, 3]),
            conv2_bias: Tensor::zeros([3]),
        }
    }

    /// The last conv is scaled down so a fresh network makes small
    /// corrections rather than saturating the clamp.
    pub fn seeded(init: &mut Initializer, c: usize) -> Self {
        let mut conv2_weight = init.uniform([3, c, 3, 3], 9 * c);
        conv2_weight.data_mut().iter_mut().for_each(|w| *w *= 0.1);
        DecoderWeights {
            conv1_weight: init.uniform([c, c, 3, 3], 9 * c),
            conv1_bias: init.uniform([c], 9 * c),
            conv2_weight,
            conv2_bias: Tensor::zeros([3]),
        }
    }

    fn named(&self) -> [(&'static str, &Tensor); 4] {
        [
            ("conv1_weight", &self.conv1_weight),
            ("conv1_bias", &self.conv1_bias),
            ("conv2_weight", &self.conv2_weight),
            ("conv2_bias", &self.conv2_bias),
        ]
    }

    fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 4] {
        [
            ("conv1_weight", &mut self.conv1_weight),
            ("conv1_bias", &mut self.conv1_bias),
            ("conv2_weight", &mut self.conv2_weight),
            ("conv2_bias", &mut self.conv2_bias),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub encoder: EncoderWeights,
    /// One set per propagation branch.
    pub propagation: Vec<BfaWeights>,
    /// One set per transformer layer.
    pub transformer: Vec<LayerWeights>,
    pub decoder: DecoderWeights,
}

impl NetworkWeights {
    /// Deterministic weights drawn from `config.seed`.
    pub fn seeded(config: &ModelConfig) -> Self {
        let mut init = Initializer::new(config.seed);
        let c = config.channels;
        let encoder = EncoderWeights::seeded(&mut init, c);
        let propagation = (0..config.branches)
            .map(|_| BfaWeights::seeded(&mut init, c))
            .collect();
        let transformer = (0..config.layers)
            .map(|_| LayerWeights::for_config(&mut init, config))
            .collect();
        let decoder = DecoderWeights::seeded(&mut init, c);
        NetworkWeights {
            encoder,
            propagation,
            transformer,
            decoder,
        }
    }

    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config.channels;
        NetworkWeights {
            encoder: EncoderWeights::zeros(c),
            propagation: (0..config.branches).map(|_| BfaWeights::zeros(c)).collect(),
            transformer: (0..config.layers)
                .map(|_| LayerWeights::zeros(config.token_dim(), config.ffn_hidden(), config.heads))
                .collect(),
            decoder: DecoderWeights::zeros(c),
        }
    }

    /// Zeroes the decoder's output conv, so the network returns its input.
    pub fn zero_output(&mut self) {
        for t in [&mut self.decoder.conv2_weight, &mut self.decoder.conv2_bias] {
            t.data_mut().fill(0.0);
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.encoder.named() {
            out.push((format!("encoder.{n}"), t));
        }
        for (j, b) in self.propagation.iter().enumerate() {
            for (n, t) in b.named_tensors() {
                out.push((format!("propagation.{j}.{n}"), t));
            }
        }
        for (l, layer) in self.transformer.iter().enumerate() {
            for (n, t) in layer.named_tensors() {
                out.push((format!("transformer.{l}.{n}"), t));
            }
        }
        for (n, t) in self.decoder.named() {
            out.push((format!("decoder.{n}"), t));
        }
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        for (n, t) in self.encoder.named_mut() {
            out.push((format!("encoder.{n}"), t));
        }
        for (j, b) in self.propagation.iter_mut().enumerate() {
            for (n, t) in b.named_tensors_mut() {
                out.push((format!("propagation.{j}.{n}"), t));
            }
        }
        for (l, layer) in self.transformer.iter_mut().enumerate() {
            for (n, t) in layer.named_tensors_mut() {
                out.push((format!("transformer.{l}.{n}"), t));
            }
        }
        for (n, t) in self.decoder.named_mut() {
            out.push((format!("decoder.{n}"), t));
        }
        out
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for (name, t) in self.named_tensors() {
            entries.push(SnapshotEntry {
                name,
                shape: t.shape().to_vec(),
                offset: blob.len() / 4,
                len: t.len(),
            });
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = SnapshotManifest {
            dtype: "f32le".into(),
            tensors: entries,
        };
        fs::File::create(dir.join(SNAPSHOT_BLOB))?.write_all(&blob)?;
        fs::write(
            dir.join(SNAPSHOT_MANIFEST),
            serde_json::to_vec_pretty(&manifest)?,
        )?;
        Ok(())
    }

    /// Loads a snapshot written by [`NetworkWeights::save`]. Every tensor
    /// the config needs must be present with its exact shape.
    pub fn load(dir: &Path, config: &ModelConfig) -> Result<Self> {
        let manifest: SnapshotManifest =
            serde_json::from_slice(&fs::read(dir.join(SNAPSHOT_MANIFEST))?)?;
        if manifest.dtype != "f32le" {
            return Err(Error::Snapshot(format!(
                "unsupported dtype {}",
                manifest.dtype
            )));
        }
        let blob = fs::read(dir.join(SNAPSHOT_BLOB))?;
        if blob.len() % 4 != 0 {
            return Err(Error::Snapshot(format!(
                "blob length {} is not a multiple of 4",
                blob.len()
            )));
        }
        let floats: Vec<f32> = blob
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();

        let mut weights = NetworkWeights::zeros(config);
        let mut slots = weights.named_tensors_mut();
        let mut filled = vec![false; slots.len()];
        for e in &manifest.tensors {
            let Some(i) = slots.iter().position(|(n, _)| *n == e.name) else {
                return Err(Error::Snapshot(format!("unexpected tensor {}", e.name)));
            };
            let slot = &mut slots[i].1;
            if slot.shape() != e.shape.as_slice() || e.shape.iter().product::<usize>() != e.len {
                return Err(Error::Snapshot(format!(
                    "{}: expected shape {:?}, found {:?}",
                    e.name,
                    slot.shape(),
                    e.shape
                )));
            }
            let src = floats.get(e.offset..e.offset + e.len).ok_or_else(|| {
                Error::Snapshot(format!(
                    "{}: range {}+{} past end of blob",
                    e.name, e.offset, e.len
                ))
            })?;
            slot.data_mut().copy_from_slice(src);
            filled[i] = true;
        }
        if let Some(i) = filled.iter().position(|f| !f) {
            return Err(Error::Snapshot(format!("missing tensor {}", slots[i].0)));
        }
        drop(slots);
        Ok(weights)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in f32 elements.
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub dtype: String,
    pub tensors: Vec<SnapshotEntry>,
}
