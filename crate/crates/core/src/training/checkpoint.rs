use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::data::{predict_specs, Featurizer};
use super::TrainError;
use crate::audio::AudioClip;
use crate::eval::Predictor;
use crate::features::{MelParams, Normalization};
use crate::nn::{Network, NetworkConfig, NnError, Tensor};

pub const MAGIC: &[u8; 4] = b"CHKP";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("tensor shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("checkpoint i/o failed: {0}")]
    IoFailure(String),
}

impl From<std::io::Error> for CheckpointError {
    fn from(e: std::io::Error) -> Self {
        CheckpointError::IoFailure(e.to_string())
    }
}

/// Trained network plus everything needed to featurize raw audio for it.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub net: Network<f32>,
    pub class_names: Vec<String>,
    pub mel: MelParams,
    pub normalization: Normalization,
}

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    class_names: Vec<String>,
    mel: MelParams,
    normalization: Normalization,
}

impl Classifier {
    pub fn new(
        net: Network<f32>,
        class_names: Vec<String>,
        mel: MelParams,
        normalization: Normalization,
    ) -> Result<Self, TrainError> {
        let cfg = net.config();
        if cfg.n_classes != class_names.len() || cfg.in_mels != mel.n_mels {
            return Err(TrainError::InvalidConfig(format!(
                "network has {} classes and {} mels, metadata has {} and {}",
                cfg.n_classes,
                cfg.in_mels,
                class_names.len(),
                mel.n_mels
            )));
        }
        Ok(Self {
            net,
            class_names,
            mel,
            normalization,
        })
    }

    pub fn featurizer(&self) -> Result<Featurizer, TrainError> {
        Featurizer::new(self.mel.clone(), self.normalization, self.net.config().min_frames())
    }

    /// Every saved tensor keyed by name: parameters, then BN running statistics.
    pub fn named_tensors(&self) -> BTreeMap<String, Tensor<f32>> {
        let mut out = BTreeMap::new();
        for (n, p) in self.net.param_names().iter().zip(self.net.params()) {
            out.insert(n.clone(), p.clone());
        }
        for (n, s) in self.net.bn_names().iter().zip(self.net.bn_states()) {
            let len = s.running_mean.len();
            out.insert(
                format!("{n}.running_mean"),
                Tensor::from_vec(&[len], s.running_mean.clone()).expect("length matches"),
            );
            out.insert(
                format!("{n}.running_var"),
                Tensor::from_vec(&[len], s.running_var.clone()).expect("length matches"),
            );
        }
        out
    }
}

impl Predictor for Classifier {
    type Error = TrainError;

    fn class_names(&self) -> &[String] {
        &self.class_names
    }

    fn predict_proba(&self, clips: &[&AudioClip]) -> Result<Vec<Vec<f64>>, TrainError> {
        let f = self.featurizer()?;
        let specs = clips
            .par_iter()
            .map(|c| f.input(c))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(predict_specs(&self.net, &specs)?)
    }
}

pub fn write_checkpoint(model: &Classifier, w: &mut impl Write) -> Result<(), CheckpointError> {
    let header = Header {
        network: model.net.config().clone(),
        class_names: model.class_names.clone(),
        mel: model.mel.clone(),
        normalization: model.normalization,
    };
    let json = serde_json::to_vec(&header).map_err(|e| CheckpointError::IoFailure(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    let tensors = model.named_tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        w.write_all(&(name.len() as u16).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&[t.shape().len() as u8])?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u16(r: &mut impl Read) -> Result<u16, CheckpointError> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<Classifier, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u16(r)?;
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let len = read_u32(r)? as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| CheckpointError::IoFailure(format!("bad header: {e}")))?;
    let shape_err = |e: NnError| CheckpointError::ShapeMismatch(e.to_string());
    header.network.validate().map_err(shape_err)?;
    if header.network.n_classes != header.class_names.len() {
        return Err(CheckpointError::ShapeMismatch(format!(
            "{} class names for {} outputs",
            header.class_names.len(),
            header.network.n_classes
        )));
    }
    let net = Network::<f32>::zeroed(header.network.clone()).map_err(shape_err)?;
    let mut model = Classifier {
        net,
        class_names: header.class_names,
        mel: header.mel,
        normalization: header.normalization,
    };
    let mut expected = model.named_tensors();

    let count = read_u32(r)? as usize;
    let mut loaded = BTreeMap::new();
    for _ in 0..count {
        let n = read_u16(r)? as usize;
        let mut name = vec![0u8; n];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| CheckpointError::IoFailure("tensor name not utf-8".into()))?;
        let mut ndim = [0u8; 1];
        r.read_exact(&mut ndim)?;
        let dims = (0..ndim[0])
            .map(|_| read_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let want = expected
            .remove(&name)
            .ok_or_else(|| CheckpointError::ShapeMismatch(format!("unexpected tensor {name}")))?;
        if want.shape() != dims.as_slice() {
            return Err(CheckpointError::ShapeMismatch(format!(
                "{name}: file has {dims:?}, config implies {:?}",
                want.shape()
            )));
        }
        let mut bytes = vec![0u8; want.len() * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        loaded.insert(name, Tensor::from_vec(&dims, data).map_err(shape_err)?);
    }
    if let Some(name) = expected.keys().next() {
        return Err(CheckpointError::ShapeMismatch(format!("missing tensor {name}")));
    }

    let names = model.net.param_names().to_vec();
    for (n, p) in names.iter().zip(model.net.params_mut()) {
        *p = loaded.remove(n).expect("checked above");
    }
    let bn = model.net.bn_names().to_vec();
    for (n, s) in bn.iter().zip(model.net.bn_states_mut()) {
        s.running_mean = loaded.remove(&format!("{n}.running_mean")).expect("checked above").data;
        s.running_var = loaded.remove(&format!("{n}.running_var")).expect("checked above").data;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Classifier, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Classifier, CheckpointError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
