//! Model checkpoints: one MGF1 file per tensor plus a JSON index.
//!
//! The index records the model architecture, every tensor's name, role and
//! shape in visiting order, and the Adam state (step count, configuration
//! and per-tensor moments) so training can resume exactly.

use std::path::Path;

use mgnma_core::model::{FrameModel, FrameModelConfig};
use mgnma_core::nn::{Adam, AdamConfig, Moments, Module, Slot};
use mgnma_core::video_level::{VideoLevelConfig, VideoLevelModel};
use mgnma_core::Matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::{read_raw, write_raw, RawTensor};
use crate::manifest::{read_json, write_json};

pub const INDEX_FILE: &str = "index.json";
const FORMAT: &str = "mgnma-checkpoint-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Frame {
        config: FrameModelConfig,
    },
    VideoLevel {
        config: VideoLevelConfig,
        image_dim: usize,
        audio_dim: usize,
        title_dim: usize,
    },
}

pub enum AnyModel {
    Frame(FrameModel<f32>),
    VideoLevel(VideoLevelModel<f32>),
}

impl AnyModel {
    pub fn spec(&self) -> ModelSpec {
        match self {
            AnyModel::Frame(m) => ModelSpec::Frame {
                config: m.config().clone(),
            },
            AnyModel::VideoLevel(m) => ModelSpec::VideoLevel {
                config: m.config().clone(),
                image_dim: m.image_pool.config().dim,
                audio_dim: m.audio_pool.config().dim,
                title_dim: m.fusion.config().dims[2],
            },
        }
    }

    pub fn module(&mut self) -> &mut dyn Module<f32> {
        match self {
            AnyModel::Frame(m) => m,
            AnyModel::VideoLevel(m) => m,
        }
    }

    /// Freshly initialized model of the given architecture.
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        // every tensor is overwritten on load, so the initializer is irrelevant
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(match spec {
            ModelSpec::Frame { config } => AnyModel::Frame(FrameModel::new(config.clone(), &mut rng)?),
            ModelSpec::VideoLevel {
                config,
                image_dim,
                audio_dim,
                title_dim,
            } => AnyModel::VideoLevel(VideoLevelModel::new(
                config.clone(),
                *image_dim,
                *audio_dim,
                *title_dim,
                &mut rng,
            )?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Param,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub role: Role,
    pub shape: [usize; 2],
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEntry {
    pub name: String,
    pub first: String,
    pub second: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerEntry {
    pub config: AdamConfig,
    pub step: u64,
    pub moments: Vec<MomentEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointIndex {
    pub format: String,
    pub model: ModelSpec,
    pub tensors: Vec<TensorEntry>,
    pub optimizer: Option<OptimizerEntry>,
}

pub struct Checkpoint {
    pub model: AnyModel,
    pub optimizer: Option<Adam<f32>>,
}

fn raw(name: &str, values: Matrix<f32>) -> RawTensor {
    RawTensor {
        name: name.to_owned(),
        rate: (1, 1),
        values,
    }
}

fn tensors(model: &mut dyn Module<f32>) -> Vec<(String, Role, Matrix<f32>)> {
    let mut out = Vec::new();
    model.visit("", &mut |name, slot| match slot {
        Slot::Param(p) => out.push((name.to_owned(), Role::Param, p.value.clone())),
        Slot::Buffer(b) => out.push((name.to_owned(), Role::Buffer, b.clone())),
    });
    out
}

pub fn save(dir: &Path, model: &mut AnyModel, optimizer: Option<&Adam<f32>>) -> Result<CheckpointIndex> {
    let spec = model.spec();
    let all = tensors(model.module());
    let mut entries = Vec::with_capacity(all.len());
    for (name, role, values) in &all {
        let file = format!("tensors/{name}.mgf");
        write_raw(&raw(name, values.clone()), &dir.join(&file))?;
        entries.push(TensorEntry {
            name: name.clone(),
            role: *role,
            shape: [values.rows(), values.cols()],
            file,
        });
    }
    let params: Vec<&(String, Role, Matrix<f32>)> = all.iter().filter(|t| t.1 == Role::Param).collect();
    let optimizer = match optimizer {
        None => None,
        Some(adam) => {
            if adam.moments.len() > params.len() {
                return Err(Error::Checkpoint(String::from("optimizer holds more moments than the model has parameters")));
            }
            let mut moments = Vec::with_capacity(adam.moments.len());
            for (m, (name, _, shape)) in adam.moments.iter().zip(params.iter().map(|t| (&t.0, t.1, &t.2))) {
                let (rows, cols) = shape.shape();
                let first = format!("optimizer/{name}.m.mgf");
                let second = format!("optimizer/{name}.v.mgf");
                write_raw(&raw(name, Matrix::new(rows, cols, m.first.clone())?), &dir.join(&first))?;
                write_raw(&raw(name, Matrix::new(rows, cols, m.second.clone())?), &dir.join(&second))?;
                moments.push(MomentEntry {
                    name: name.clone(),
                    first,
                    second,
                });
            }
            Some(OptimizerEntry {
                config: adam.config,
                step: adam.step,
                moments,
            })
        }
    };
    let index = CheckpointIndex {
        format: FORMAT.to_owned(),
        model: spec,
        tensors: entries,
        optimizer,
    };
    write_json(&index, &dir.join(INDEX_FILE))?;
    Ok(index)
}

fn read_shaped(dir: &Path, file: &str, name: &str, shape: (usize, usize)) -> Result<Matrix<f32>> {
    let t = read_raw(&dir.join(file))?;
    if t.name != name || t.values.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "{file}: expected {name} {}x{}, found {} {}x{}",
            shape.0,
            shape.1,
            t.name,
            t.values.rows(),
            t.values.cols()
        )));
    }
    Ok(t.values)
}

pub fn load(dir: &Path) -> Result<Checkpoint> {
    let index: CheckpointIndex = read_json(&dir.join(INDEX_FILE))?;
    if index.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", index.format)));
    }
    let mut model = AnyModel::build(&index.model)?;
    let expected = tensors(model.module());
    if expected.len() != index.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "index lists {} tensors, architecture has {}",
            index.tensors.len(),
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(expected.len());
    for ((name, role, value), entry) in expected.iter().zip(&index.tensors) {
        if &entry.name != name || entry.role != *role || entry.shape != [value.rows(), value.cols()] {
            return Err(Error::Checkpoint(format!("tensor {} does not match architecture slot {name}", entry.name)));
        }
        loaded.push(read_shaped(dir, &entry.file, name, value.shape())?);
    }
    let mut it = loaded.into_iter();
    model.module().visit("", &mut |_, slot| {
        let v = it.next().expect("count checked");
        match slot {
            Slot::Param(p) => p.value = v,
            Slot::Buffer(b) => *b = v,
        }
    });

    let optimizer = match &index.optimizer {
        None => None,
        Some(opt) => {
            let params: Vec<_> = expected.iter().filter(|t| t.1 == Role::Param).collect();
            if opt.moments.len() > params.len() {
                return Err(Error::Checkpoint(String::from("optimizer holds more moments than the model has parameters")));
            }
            let mut moments = Vec::with_capacity(opt.moments.len());
            for (m, (name, _, value)) in opt.moments.iter().zip(params) {
                if &m.name != name {
                    return Err(Error::Checkpoint(format!("moment {} does not match parameter {name}", m.name)));
                }
                moments.push(Moments {
                    first: read_shaped(dir, &m.first, name, value.shape())?.into_data(),
                    second: read_shaped(dir, &m.second, name, value.shape())?.into_data(),
                });
            }
            Some(Adam {
                config: opt.config,
                step: opt.step,
                moments,
            })
        }
    };
    Ok(Checkpoint { model, optimizer })
}
