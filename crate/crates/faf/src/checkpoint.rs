//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! magic  "FAFCKPT1"            8 bytes
//! version u32                  currently 1
//! config  u32 len + JSON       ModelConfig
//! params  u32 count, then per parameter:
//!         u32 id len + id bytes
//!         u32 ndims + u64 dims...
//!         f64 data... (raw bits, bitwise-exact roundtrip)
//! adam    u8 flag; if 1, per parameter in the same order:
//!         u64 t, f64 lr/beta1/beta2/epsilon, f64 m..., f64 v...
//! norm    u8 flag; if 1: f64 mu/sigma/epsilon
//! splits  u8 flag; if 1: u32 len + JSON
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::data::{NormStats, SplitSpec};
use crate::error::{FafError, Result};
use crate::model::{FafModel, ModelConfig};
use crate::numerics::{AdamState, Tensor};

const MAGIC: &[u8; 8] = b"FAFCKPT1";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: FafModel,
    /// Optimizer states aligned with `model.params()` order.
    pub adam: Option<Vec<AdamState>>,
    pub norm: Option<NormStats>,
    pub splits: Option<SplitSpec>,
}

fn bad(msg: impl Into<String>) -> FafError {
    FafError::Checkpoint(msg.into())
}

fn write_json<W: Write, T: serde::Serialize>(w: &mut W, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec(value).map_err(|e| bad(format!("serialize: {e}")))?;
    w.write_u32::<LittleEndian>(bytes.len() as u32)?;
    w.write_all(&bytes)?;
    Ok(())
}

fn read_json<R: Read, T: serde::de::DeserializeOwned>(r: &mut R, what: &str) -> Result<T> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 64 << 20 {
        return Err(bad(format!("{what} block implausibly large ({len} bytes)")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    serde_json::from_slice(&buf).map_err(|e| bad(format!("{what}: {e}")))
}

fn write_f64s<W: Write>(w: &mut W, data: &[f64]) -> Result<()> {
    for v in data {
        w.write_u64::<LittleEndian>(v.to_bits())?;
    }
    Ok(())
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
    }
    Ok(out)
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_json(&mut w, &self.model.config)?;

        let params = self.model.params();
        w.write_u32::<LittleEndian>(params.len() as u32)?;
        for p in params {
            w.write_u32::<LittleEndian>(p.id.len() as u32)?;
            w.write_all(p.id.as_bytes())?;
            w.write_u32::<LittleEndian>(p.value.shape().len() as u32)?;
            for d in p.value.shape() {
                w.write_u64::<LittleEndian>(*d as u64)?;
            }
            write_f64s(&mut w, p.value.data())?;
        }

        match &self.adam {
            Some(states) => {
                if states.len() != params.len() {
                    return Err(bad("adam state count does not match parameter count"));
                }
                w.write_u8(1)?;
                for (st, p) in states.iter().zip(params) {
                    if st.m.len() != p.value.len() {
                        return Err(bad(format!("adam state shape mismatch for `{}`", p.id)));
                    }
                    w.write_u64::<LittleEndian>(st.t)?;
                    write_f64s(&mut w, &[st.lr, st.beta1, st.beta2, st.epsilon])?;
                    write_f64s(&mut w, st.m.data())?;
                    write_f64s(&mut w, st.v.data())?;
                }
            }
            None => w.write_u8(0)?,
        }

        match &self.norm {
            Some(n) => {
                w.write_u8(1)?;
                write_f64s(&mut w, &[n.mu, n.sigma, n.epsilon])?;
            }
            None => w.write_u8(0)?,
        }

        match &self.splits {
            Some(s) => {
                w.write_u8(1)?;
                write_json(&mut w, s)?;
            }
            None => w.write_u8(0)?,
        }

        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = BufReader::new(File::open(path)?);

        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| bad(format!("{}: file too short for header", path.display())))?;
        if &magic != MAGIC {
            return Err(bad(format!("{}: not a checkpoint (bad magic bytes)", path.display())));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(bad(format!(
                "{}: unsupported checkpoint version {version} (expected {VERSION})",
                path.display()
            )));
        }

        let config: ModelConfig = read_json(&mut r, "config")?;
        // Seed is irrelevant; every parameter is overwritten below.
        let mut model = FafModel::new(config, 0)?;

        let n_params = r.read_u32::<LittleEndian>()? as usize;
        if n_params != model.params().len() {
            return Err(bad(format!(
                "parameter count {n_params} does not match config ({})",
                model.params().len()
            )));
        }
        for i in 0..n_params {
            let id_len = r.read_u32::<LittleEndian>()? as usize;
            let mut id = vec![0u8; id_len];
            r.read_exact(&mut id)?;
            let id = String::from_utf8(id).map_err(|_| bad("parameter id is not UTF-8"))?;
            let ndims = r.read_u32::<LittleEndian>()? as usize;
            let mut shape = Vec::with_capacity(ndims);
            for _ in 0..ndims {
                shape.push(r.read_u64::<LittleEndian>()? as usize);
            }
            let expected = model.params()[i].value.shape().to_vec();
            if model.params()[i].id != id || expected != shape {
                return Err(bad(format!(
                    "parameter `{id}` {shape:?} is inconsistent with config (expected `{}` {expected:?})",
                    model.params()[i].id
                )));
            }
            let data = read_f64s(&mut r, shape.iter().product())?;
            model.params_mut()[i].value = Tensor::new(shape, data)?;
        }

        let adam = if r.read_u8()? == 1 {
            let mut states = Vec::with_capacity(n_params);
            for i in 0..n_params {
                let t = r.read_u64::<LittleEndian>()?;
                let scalars = read_f64s(&mut r, 4)?;
                let shape = model.params()[i].value.shape().to_vec();
                let n = model.params()[i].value.len();
                let m = Tensor::new(shape.clone(), read_f64s(&mut r, n)?)?;
                let v = Tensor::new(shape, read_f64s(&mut r, n)?)?;
                states.push(AdamState {
                    m,
                    v,
                    t,
                    lr: scalars[0],
                    beta1: scalars[1],
                    beta2: scalars[2],
                    epsilon: scalars[3],
                });
            }
            Some(states)
        } else {
            None
        };

        let norm = if r.read_u8()? == 1 {
            let s = read_f64s(&mut r, 3)?;
            Some(NormStats { mu: s[0], sigma: s[1], epsilon: s[2] })
        } else {
            None
        };

        let splits = if r.read_u8()? == 1 { Some(read_json(&mut r, "splits")?) } else { None };

        Ok(Checkpoint { model, adam, norm, splits })
    }

    /// Load and fail if the stored config differs from the expected one.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let ckpt = Self::load(path)?;
        if &ckpt.model.config != expected {
            return Err(bad(format!(
                "checkpoint config {:?} does not match expected config {:?}",
                ckpt.model.config, expected
            )));
        }
        Ok(ckpt)
    }
}
