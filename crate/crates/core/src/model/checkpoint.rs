//! Binary checkpoint format (all integers little-endian).
//!
//! ```text
//! magic        4 bytes  "VORA"
//! version      u32      1
//! config       n_llm n_vit d_model d_vit n_heads vit_heads d_ff d_vit_ff
//!              embed_hidden vocab patch rank: u32 each; alpha: f32; max_seq: u32
//! flags        u32      bit 0 = adapters merged
//! count        u32      number of tensors
//! per tensor   name_len u32, name (UTF-8), ndims u32, dims u32 × ndims,
//!              f32 × product(dims)
//! ```
//!
//! Tensors are written in name order, so equal checkpoints serialize to equal bytes.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, VoraError};
use crate::model::{Model, ModelConfig, ParamStore};
use crate::tensor::Tensor;
use crate::vision::Teacher;

pub const MAGIC: &[u8; 4] = b"VORA";
pub const VERSION: u32 = 1;
const FLAG_MERGED: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub merged: bool,
    pub tensors: ParamStore,
}

impl Checkpoint {
    pub fn from_model(model: &Model, teacher: Option<&Teacher>) -> Self {
        let mut tensors = model.params.clone();
        if let Some(t) = teacher {
            tensors.extend(t.params.clone());
        }
        Self {
            config: model.config.clone(),
            merged: model.is_merged(),
            tensors,
        }
    }

    /// Splits into the student and, when `teacher.*` tensors are present, the teacher.
    pub fn into_parts(mut self) -> (Model, Option<Teacher>) {
        let teacher_params = self.tensors.split_prefix("teacher.");
        let teacher = (!teacher_params.is_empty()).then(|| Teacher {
            config: self.config.clone(),
            params: teacher_params,
        });
        (Model::from_parts(self.config, self.tensors, self.merged), teacher)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let c = &self.config;
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        for v in [
            c.n_llm,
            c.n_vit,
            c.d_model,
            c.d_vit,
            c.n_heads,
            c.vit_heads,
            c.d_ff,
            c.d_vit_ff,
            c.embed_hidden,
            c.vocab,
            c.patch,
            c.rank,
        ] {
            put_len(w, v)?;
        }
        w.write_all(&c.alpha.to_le_bytes())?;
        put_len(w, c.max_seq)?;
        put_u32(w, if self.merged { FLAG_MERGED } else { 0 })?;
        put_len(w, self.tensors.len())?;
        for (name, t) in self.tensors.iter() {
            put_len(w, name.len())?;
            w.write_all(name.as_bytes())?;
            put_len(w, t.shape().len())?;
            for &d in t.shape() {
                put_len(w, d)?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(VoraError::Format(format!("bad magic {magic:?}")));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(VoraError::Format(format!("unsupported version {version}")));
        }
        let mut dims = [0usize; 12];
        for d in dims.iter_mut() {
            *d = get_u32(r)? as usize;
        }
        let alpha = f32::from_le_bytes(get_bytes::<4, _>(r)?);
        let max_seq = get_u32(r)? as usize;
        let [n_llm, n_vit, d_model, d_vit, n_heads, vit_heads, d_ff, d_vit_ff, embed_hidden, vocab, patch, rank] = dims;
        let config = ModelConfig {
            n_llm,
            n_vit,
            d_model,
            d_vit,
            n_heads,
            vit_heads,
            d_ff,
            d_vit_ff,
            embed_hidden,
            vocab,
            patch,
            rank,
            alpha,
            max_seq,
        };
        let flags = get_u32(r)?;
        let count = get_u32(r)? as usize;
        let mut tensors = ParamStore::new();
        for _ in 0..count {
            let name_len = get_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| VoraError::Format(e.to_string()))?;
            let ndims = get_u32(r)? as usize;
            let shape = (0..ndims).map(|_| get_u32(r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * 4];
            r.read_exact(&mut raw)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self {
            config,
            merged: flags & FLAG_MERGED != 0,
            tensors,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_len<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| VoraError::Format(format!("{v} does not fit in u32")))?;
    put_u32(w, v)
}

fn get_bytes<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b)?;
    Ok(b)
}

fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(get_bytes::<4, _>(r)?))
}
