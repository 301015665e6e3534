//! Versioned binary checkpoint.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic    8 bytes  "CTXLMCKP"
//! version  u32      1
//! header   u64 length + UTF-8 JSON {train_config, model_config, vocab, registry}
//! tensors  u32 count, then per tensor:
//!            u32 name length + name, u64 element count, f64 × count
//! hash     u8 present flag; when 1:
//!            table:  u64 seed, u64 size l, u64 r_0, u32 n, u64 × n (r_i),
//!                    f64 × l (H)
//!            filter: u64 seed, u64 bits m, u32 n, u64 × (n·16·2) multipliers,
//!                    u64 word count, u64 × words (bit array, bit b in word b/64)
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{ContextValueRegistry, Vocabulary};
use crate::error::{Error, Result};
use crate::hashbias::{HashedBias, HashedBiasTable, ObservedPairFilter, FILTER_HASHES};
use crate::model::{Model, ModelConfig, Params};
use crate::train::TrainConfig;

const MAGIC: &[u8; 8] = b"CTXLMCKP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub train_config: TrainConfig,
    pub vocab: Vocabulary,
    pub registry: ContextValueRegistry,
    pub model: Model,
}

#[derive(Serialize, Deserialize)]
struct Header {
    train_config: TrainConfig,
    model_config: ModelConfig,
    vocab: Vocabulary,
    registry: ContextValueRegistry,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(bad("truncated"));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).ok().filter(|&n| n <= self.buf.len()).ok_or_else(|| bad("length exceeds data"))
    }

    fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let bytes = self.take(n.checked_mul(8).ok_or_else(|| bad("overflow"))?)?;
        Ok(bytes.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f64s_into(&mut self, out: &mut [f64]) -> Result<()> {
        let bytes = self.take(out.len() * 8)?;
        for (o, c) in out.iter_mut().zip(bytes.chunks_exact(8)) {
            *o = f64::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

fn put_u64s(out: &mut Vec<u8>, xs: impl IntoIterator<Item = u64>) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn put_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&Header {
            train_config: self.train_config.clone(),
            model_config: self.model.config.clone(),
            vocab: self.vocab.clone(),
            registry: self.registry.clone(),
        })?;
        put_u64s(&mut out, [header.len() as u64]);
        out.extend_from_slice(&header);

        let tensors = self.model.params.tensors();
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, data) in tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_u64s(&mut out, [data.len() as u64]);
            put_f64s(&mut out, data);
        }

        match &self.model.hash {
            None => out.push(0),
            Some(hb) => {
                out.push(1);
                let t = &hb.table;
                put_u64s(&mut out, [t.seed, t.size(), t.word_multiplier]);
                out.extend_from_slice(&(t.num_variables() as u32).to_le_bytes());
                put_u64s(&mut out, t.context_multipliers.iter().copied());
                put_f64s(&mut out, &t.values);
                let f = &hb.filter;
                put_u64s(&mut out, [f.seed, f.num_bits()]);
                out.extend_from_slice(&(f.num_variables() as u32).to_le_bytes());
                put_u64s(
                    &mut out,
                    f.multipliers().iter().flat_map(|probes| probes.iter().flat_map(|&(a, b)| [a, b])),
                );
                put_u64s(&mut out, [f.words().len() as u64]);
                put_u64s(&mut out, f.words().iter().copied());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(8)? != MAGIC {
            return Err(bad("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let n = r.len()?;
        let mut header: Header = serde_json::from_slice(r.take(n)?)?;
        header.vocab.rebuild_index();
        header.registry.rebuild_index();
        let cfg = header.model_config;
        cfg.validate()?;

        let mut params = Params::zeros(&cfg);
        let count = r.u32()? as usize;
        let mut slots = params.tensors_mut();
        if count != slots.len() {
            return Err(bad(format!("expected {} tensors, found {count}", slots.len())));
        }
        for (expected, data) in slots.iter_mut() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| bad("tensor name not UTF-8"))?;
            if name != expected {
                return Err(bad(format!("expected tensor {expected}, found {name}")));
            }
            if r.u64()? != data.len() as u64 {
                return Err(bad(format!("tensor {name}: size mismatch")));
            }
            r.f64s_into(data)?;
        }
        drop(slots);

        let hash = match r.u8()? {
            0 => None,
            1 => {
                let (seed, size, word_multiplier) = (r.u64()?, r.u64()?, r.u64()?);
                let n = r.u32()? as usize;
                let context_multipliers = r.u64s(n)?;
                let size_usize = usize::try_from(size).map_err(|_| bad("table too large"))?;
                if size_usize.checked_mul(8).is_none_or(|b| b > r.buf.len()) {
                    return Err(bad("truncated hash table"));
                }
                let mut values = vec![0.0; size_usize];
                r.f64s_into(&mut values)?;
                let table = HashedBiasTable {
                    seed,
                    word_multiplier,
                    context_multipliers,
                    values,
                };
                let (fseed, bits) = (r.u64()?, r.u64()?);
                let fn_ = r.u32()? as usize;
                let flat = r.u64s(fn_ * FILTER_HASHES * 2)?;
                let multipliers = flat
                    .chunks_exact(FILTER_HASHES * 2)
                    .map(|c| {
                        let mut probes = [(0, 0); FILTER_HASHES];
                        for (p, pair) in probes.iter_mut().zip(c.chunks_exact(2)) {
                            *p = (pair[0], pair[1]);
                        }
                        probes
                    })
                    .collect();
                let words_len = r.len()?;
                let words = r.u64s(words_len)?;
                let filter = ObservedPairFilter::from_raw(fseed, bits, multipliers, words)
                    .ok_or_else(|| bad("inconsistent filter section"))?;
                if table.num_variables() != filter.num_variables() {
                    return Err(bad("table and filter disagree on variable count"));
                }
                Some(HashedBias::new(table, filter))
            }
            f => return Err(bad(format!("bad hash flag {f}"))),
        };
        if !r.buf.is_empty() {
            return Err(bad("trailing bytes"));
        }
        let model = Model::new(cfg, params, hash)?;
        Ok(Self {
            train_config: header.train_config,
            vocab: header.vocab,
            registry: header.registry,
            model,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|source| Error::Read {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&bytes)
    }
}
