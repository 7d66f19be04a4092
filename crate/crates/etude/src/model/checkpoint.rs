//! Versioned binary checkpoint: config, named parameter tensors, optimizer
//! state and step count. Writing is deterministic, so save -> load -> save
//! produces bitwise-identical files.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use thiserror::Error;

use crate::tensor::optim::Adam;

use super::{Autoencoder, ModelConfig, ModelError};

const MAGIC: &[u8; 8] = b"ETUDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("config json: {0}")]
    ConfigJson(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A saved training state: the model plus optional optimizer state.
pub struct Checkpoint {
    pub model: Autoencoder,
    pub adam: Option<Adam>,
    pub step: u64,
}

pub fn save(path: &Path, model: &Autoencoder, adam: Option<&Adam>, step: u64) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let config = serde_json::to_vec(&model.config)?;
    write_bytes(&mut w, &config)?;
    w.write_all(&step.to_le_bytes())?;
    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for p in model.params.iter() {
        write_bytes(&mut w, p.name.as_bytes())?;
        write_tensor(&mut w, &p.value)?;
    }
    match adam {
        None => w.write_all(&[0u8])?,
        Some(a) => {
            w.write_all(&[1u8])?;
            for v in [a.beta1, a.beta2, a.eps, a.base_lr] {
                w.write_all(&v.to_le_bytes())?;
            }
            w.write_all(&(a.warmup as u64).to_le_bytes())?;
            w.write_all(&(a.step as u64).to_le_bytes())?;
            for m in &a.m {
                write_tensor(&mut w, m)?;
            }
            for v in &a.v {
                write_tensor(&mut w, v)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let config: ModelConfig = serde_json::from_slice(&read_bytes(&mut r)?)?;
    let step = read_u64(&mut r)?;
    let n_params = read_u64(&mut r)? as usize;

    // Rebuild the structure from the config, then overwrite every tensor,
    // verifying names and shapes as we go.
    let mut model = Autoencoder::new(config, 0)?;
    if n_params != model.params.len() {
        return Err(CheckpointError::Corrupt(format!(
            "config implies {} parameters, file has {n_params}",
            model.params.len()
        )));
    }
    for i in 0..n_params {
        let name = String::from_utf8(read_bytes(&mut r)?)
            .map_err(|_| CheckpointError::Corrupt("parameter name not utf-8".into()))?;
        let value = read_tensor(&mut r)?;
        let p = model.params.get_mut(i);
        if p.name != name {
            return Err(CheckpointError::Corrupt(format!(
                "parameter {i} is `{}` in the config layout but `{name}` in the file",
                p.name
            )));
        }
        if p.value.shape() != value.shape() {
            return Err(CheckpointError::Corrupt(format!(
                "parameter `{name}` shape {:?} does not match config layout {:?}",
                value.shape(),
                p.value.shape()
            )));
        }
        p.value = value;
    }

    let mut flag = [0u8; 1];
    r.read_exact(&mut flag)?;
    let adam = if flag[0] == 1 {
        let beta1 = read_f64(&mut r)?;
        let beta2 = read_f64(&mut r)?;
        let eps = read_f64(&mut r)?;
        let base_lr = read_f64(&mut r)?;
        let warmup = read_u64(&mut r)? as usize;
        let adam_step = read_u64(&mut r)? as usize;
        let mut adam = Adam::new(&model.params, base_lr, warmup);
        adam.beta1 = beta1;
        adam.beta2 = beta2;
        adam.eps = eps;
        adam.step = adam_step;
        for m in adam.m.iter_mut() {
            *m = read_tensor(&mut r)?;
        }
        for v in adam.v.iter_mut() {
            *v = read_tensor(&mut r)?;
        }
        Some(adam)
    } else {
        None
    };
    Ok(Checkpoint { model, adam, step })
}

fn write_bytes<W: Write>(w: &mut W, bytes: &[u8]) -> io::Result<()> {
    w.write_all(&(bytes.len() as u64).to_le_bytes())?;
    w.write_all(bytes)
}

fn write_tensor<W: Write>(w: &mut W, t: &ArrayD<f64>) -> io::Result<()> {
    w.write_all(&(t.ndim() as u64).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for &v in t.as_slice().expect("tensors are standard layout") {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_bytes<R: Read>(r: &mut R) -> Result<Vec<u8>, CheckpointError> {
    let len = read_u64(r)? as usize;
    if len > 1 << 30 {
        return Err(CheckpointError::Corrupt(format!("unreasonable field length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_tensor<R: Read>(r: &mut R) -> Result<ArrayD<f64>, CheckpointError> {
    let ndim = read_u64(r)? as usize;
    if ndim > 8 {
        return Err(CheckpointError::Corrupt(format!("unreasonable tensor rank {ndim}")));
    }
    let mut shape = Vec::with_capacity(ndim);
    for _ in 0..ndim {
        shape.push(read_u64(r)? as usize);
    }
    let len: usize = shape.iter().product();
    if len > 1 << 28 {
        return Err(CheckpointError::Corrupt(format!("unreasonable tensor size {len}")));
    }
    let mut data = vec![0f64; len];
    let mut buf = [0u8; 8];
    for v in data.iter_mut() {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    ArrayD::from_shape_vec(IxDyn(&shape), data)
        .map_err(|e| CheckpointError::Corrupt(e.to_string()))
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u64<R: Read>(r: &mut R) -> io::Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> io::Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}
