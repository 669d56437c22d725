//! Checkpoints: a JSON manifest naming every tensor and its byte offset in a
//! sibling `.bin` file of concatenated serialized tensors.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const FORMAT: &str = "eyemark-checkpoint/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum EntryKind {
    Param,
    Buffer,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: EntryKind,
    offset: u64,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format: String,
    model: ModelConfig,
    input_size: usize,
    tensors: String,
    entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelConfig,
    /// Side of the square input the parameters were trained on.
    pub input_size: usize,
    pub store: ParamStore,
}

/// The tensor file belonging to manifest `path`.
pub fn tensor_path(path: &Path) -> PathBuf {
    path.with_extension("bin")
}

impl Checkpoint {
    /// Writes the manifest at `path` and the tensors next to it.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bin_path = tensor_path(path);
        let mut bin = Vec::new();
        let mut entries = Vec::new();
        let groups = [
            (EntryKind::Param, self.store.params()),
            (EntryKind::Buffer, self.store.buffers()),
        ];
        for (kind, map) in groups {
            for (name, t) in map {
                entries.push(Entry {
                    name: name.clone(),
                    kind,
                    offset: bin.len() as u64,
                    shape: t.shape().to_vec(),
                });
                t.write_to(&mut bin)?;
            }
        }
        let manifest = Manifest {
            format: FORMAT.into(),
            model: self.model.clone(),
            input_size: self.input_size,
            tensors: bin_path
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default(),
            entries,
        };
        fs::write(&bin_path, bin)?;
        fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }

    /// Reads a checkpoint and verifies it against its own model configuration.
    pub fn load(path: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if manifest.format != FORMAT {
            return Err(Error::Format(format!(
                "{}: unsupported checkpoint format `{}`",
                path.display(),
                manifest.format
            )));
        }
        let bin_path = path.with_file_name(&manifest.tensors);
        let bin = fs::read(&bin_path)?;
        let mut store = ParamStore::default();
        for e in &manifest.entries {
            let start = usize::try_from(e.offset)
                .ok()
                .filter(|o| *o <= bin.len())
                .ok_or_else(|| Error::Format(format!("offset of `{}` lies past the end of {}", e.name, bin_path.display())))?;
            let t = Tensor::read_from(&mut Cursor::new(&bin[start..]))?;
            if t.shape() != e.shape.as_slice() {
                return Err(Error::Format(format!(
                    "tensor `{}` has shape {:?}, manifest says {:?}",
                    e.name,
                    t.shape(),
                    e.shape
                )));
            }
            match e.kind {
                EntryKind::Param => store.insert_param(e.name.clone(), t),
                EntryKind::Buffer => store.insert_buffer(e.name.clone(), t),
            }
        }
        let model = Model::new(manifest.model.clone())?;
        store.check_against(&model.specs())?;
        Ok(Self {
            model: manifest.model,
            input_size: manifest.input_size,
            store,
        })
    }
}
