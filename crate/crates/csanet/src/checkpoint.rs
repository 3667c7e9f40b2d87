//! The CSAN model checkpoint.
//!
//! ```text
//! "CSAN" | version = 1 | config length | config text (key=value lines)
//! | n_params | per param: name length | name | ndim | dims | f32 data
//! ```
//!
//! Integers are little-endian `u32`. Parameters and batch-norm running
//! statistics are stored as `f32` whatever the training precision.

use std::path::Path;

use csanet_core::model::CsanetModel;
use csanet_core::{rng, Scalar, Tensor};

use crate::bytes::{put_f32s, put_u32, read_file, write_atomic, Reader};
use crate::config;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CSAN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: String,
    pub params: Vec<NamedBlob>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, VERSION as usize);
        put_u32(&mut out, self.config.len());
        out.extend_from_slice(self.config.as_bytes());
        put_u32(&mut out, self.params.len());
        for p in &self.params {
            put_u32(&mut out, p.name.len());
            out.extend_from_slice(p.name.as_bytes());
            put_u32(&mut out, p.shape.len());
            p.shape.iter().for_each(|&d| put_u32(&mut out, d));
            put_f32s(&mut out, &p.data);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(MAGIC)?;
        let at = r.pos();
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(at, format!("unsupported version {version}")));
        }
        let len = r.count("config length")?;
        let at = r.pos();
        let config = std::str::from_utf8(r.take(len, "config text")?)
            .map_err(|_| Error::format(at, "config text is not UTF-8"))?
            .to_owned();
        let n = r.count("parameter count")?;
        let mut params = Vec::new();
        for _ in 0..n {
            let len = r.count("name length")?;
            let at = r.pos();
            let name = std::str::from_utf8(r.take(len, "name")?)
                .map_err(|_| Error::format(at, "parameter name is not UTF-8"))?
                .to_owned();
            let ndim = r.count("rank")?;
            let at = r.pos();
            let shape = (0..ndim).map(|_| r.count("dimension")).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::format(at, "shape overflows"))?;
            let data = r.f32s(numel, &format!("data of {name}"))?;
            params.push(NamedBlob { name, shape, data });
        }
        r.finish()?;
        Ok(Checkpoint { config, params })
    }
}

/// Snapshot of every parameter and buffer of `model`.
pub fn from_model<T: Scalar>(model: &CsanetModel<T>) -> Checkpoint {
    let params = model
        .params()
        .iter()
        .map(|(_, p)| NamedBlob {
            name: p.name.clone(),
            shape: p.tensor.shape().to_vec(),
            data: p.tensor.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
        })
        .collect();
    Checkpoint { config: config::model_to_text(model.config()), params }
}

/// Rebuilds the model described by `ckpt`. Every parameter of the model must
/// be present exactly once, and nothing else.
pub fn to_model<T: Scalar>(ckpt: &Checkpoint) -> Result<CsanetModel<T>> {
    let cfg = config::model_from_text(&ckpt.config)?;
    let mut model = CsanetModel::<T>::new(cfg, &mut rng::stream(0, rng::INIT))?;
    let expected = model.params().len();
    let mut seen = std::collections::HashSet::new();
    for p in &ckpt.params {
        if !seen.insert(p.name.as_str()) {
            return Err(Error::Core(csanet_core::Error::Data(format!("duplicate parameter {}", p.name))));
        }
        let values = p.data.iter().map(|&v| T::from_f64_lossy(f64::from(v))).collect();
        model.load_named(&p.name, Tensor::new(&p.shape, values)?)?;
    }
    if seen.len() != expected {
        return Err(Error::Core(csanet_core::Error::Data(format!(
            "checkpoint holds {} of the model's {} parameters",
            seen.len(),
            expected
        ))));
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &CsanetModel<T>, path: &Path) -> Result<()> {
    write_atomic(path, &from_model(model).encode())
}

pub fn load<T: Scalar>(path: &Path) -> Result<CsanetModel<T>> {
    to_model(&Checkpoint::decode(&read_file(path)?)?)
}
