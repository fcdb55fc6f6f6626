//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SXNC"            magic
//! u32               format version
//! u32               header length in bytes
//! header            UTF-8, one `key value...` record per line
//! tensor payloads   raw values, in header `tensor` order
//! adam m payloads   same order and shapes
//! adam v payloads   same order and shapes
//! rng state         32-byte seed, u64 stream, u128 word position
//! ```
//!
//! The header ends with a `checksum` line holding the FNV-1a hash of every
//! header byte before it, so any edit to the header is caught on load.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, Sharing, SwitchVariant};
use crate::optim::{AdamConfig, AdamState};
use crate::scalar::{DType, Scalar};
use crate::tasks::TaskKind;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SXNC";
pub const VERSION: u32 = 1;

/// Position of a ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos(),
        }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub task: TaskKind,
    pub model: ModelConfig,
    /// Length the body was built for; fixes the layer count when weights
    /// are not shared.
    pub instance_length: usize,
    pub step: u64,
    pub params: Vec<(String, Tensor<T>)>,
    pub adam: AdamState<T>,
    pub rng: RngState,
    /// Free-form settings of the run that produced the checkpoint.
    pub settings: BTreeMap<String, String>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Copies the stored values into `store`, which must hold exactly the
    /// same names and shapes.
    pub fn restore_params(&self, store: &mut ParamStore<T>) -> Result<()> {
        if store.len() != self.params.len() {
            let missing = store
                .iter()
                .map(|(_, p)| p.name.clone())
                .find(|n| self.param(n).is_none())
                .or_else(|| {
                    self.params
                        .iter()
                        .map(|(n, _)| n.clone())
                        .find(|n| store.find(n).is_none())
                })
                .unwrap_or_default();
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors but the model has {} (first difference: `{missing}`)",
                self.params.len(),
                store.len()
            )));
        }
        for (name, value) in &self.params {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` does not exist in the model")))?;
            let p = store.get_mut(id);
            if p.value.shape() != value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?} in the checkpoint but {:?} in the model",
                    value.shape(),
                    p.value.shape()
                )));
            }
            p.value = value.clone();
        }
        Ok(())
    }

    /// Optimizer state re-ordered to `store` order.
    pub fn adam_for(&self, store: &ParamStore<T>) -> Result<AdamState<T>> {
        let mut state = AdamState::new(store, self.adam.config);
        state.step = self.adam.step;
        for (i, (name, _)) in self.params.iter().enumerate() {
            let id = store
                .find(name)
                .ok_or_else(|| Error::Checkpoint(format!("tensor `{name}` does not exist in the model")))?;
            state.m[id.0] = self.adam.m[i].clone();
            state.v[id.0] = self.adam.v[i].clone();
        }
        Ok(state)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        let c = &self.model;
        let a = &self.adam.config;
        let _ = writeln!(header, "dtype {}", T::DTYPE);
        let _ = writeln!(header, "task {}", self.task);
        let _ = writeln!(header, "maps {}", c.maps);
        let _ = writeln!(header, "blocks {}", c.blocks);
        let _ = writeln!(header, "variant {}", c.variant);
        let _ = writeln!(header, "sharing {}", c.sharing);
        let _ = writeln!(header, "residual {}", c.residual);
        let _ = writeln!(header, "benes {}", c.benes);
        let _ = writeln!(header, "instance_length {}", self.instance_length);
        let _ = writeln!(header, "step {}", self.step);
        let _ = writeln!(
            header,
            "adam {:?} {:?} {:?} {:?} {}",
            a.lr, a.beta1, a.beta2, a.eps, self.adam.step
        );
        for (k, v) in &self.settings {
            let _ = writeln!(header, "setting {k} {v}");
        }
        for (name, t) in &self.params {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            let _ = writeln!(header, "tensor {name} {} {}", T::DTYPE, dims.join("x"));
        }
        let sum = fnv1a(header.as_bytes());
        let _ = writeln!(header, "checksum {sum:016x}");

        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        let tensors = self
            .params
            .iter()
            .map(|(_, t)| t)
            .chain(&self.adam.m)
            .chain(&self.adam.v);
        for t in tensors {
            for &v in t.data() {
                v.write_le(&mut out);
            }
        }
        out.extend_from_slice(&self.rng.seed);
        out.extend_from_slice(&self.rng.stream.to_le_bytes());
        out.extend_from_slice(&self.rng.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        if header.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "checkpoint stores {} values, expected {}",
                header.dtype,
                T::DTYPE
            )));
        }
        let mut reader = Reader {
            bytes,
            pos: header.payload_start,
        };
        let read_tensor = |reader: &mut Reader, name: &str, shape: &[usize]| -> Result<Tensor<T>> {
            let count: usize = shape.iter().product();
            let raw = reader.take(count * T::DTYPE.size_of(), name)?;
            let data = raw.chunks_exact(T::DTYPE.size_of()).map(T::read_le).collect();
            Ok(Tensor::from_vec(shape, data))
        };
        let mut params = Vec::with_capacity(header.tensors.len());
        for (name, shape) in &header.tensors {
            params.push((name.clone(), read_tensor(&mut reader, name, shape)?));
        }
        let mut m = Vec::with_capacity(params.len());
        for (name, shape) in &header.tensors {
            m.push(read_tensor(&mut reader, &format!("adam m of {name}"), shape)?);
        }
        let mut v = Vec::with_capacity(params.len());
        for (name, shape) in &header.tensors {
            v.push(read_tensor(&mut reader, &format!("adam v of {name}"), shape)?);
        }
        let seed: [u8; 32] = reader.take(32, "rng seed")?.try_into().unwrap();
        let stream = u64::from_le_bytes(reader.take(8, "rng stream")?.try_into().unwrap());
        let word_pos = u128::from_le_bytes(reader.take(16, "rng position")?.try_into().unwrap());
        if reader.pos != bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{} unexpected trailing bytes",
                bytes.len() - reader.pos
            )));
        }
        Ok(Checkpoint {
            task: header.task,
            model: header.model,
            instance_length: header.instance_length,
            step: header.step,
            params,
            adam: AdamState {
                config: header.adam,
                step: header.adam_step,
                m,
                v,
            },
            rng: RngState { seed, stream, word_pos },
            settings: header.settings,
        })
    }

    /// Writes atomically: a temporary sibling file is renamed into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}

/// Value type stored in a checkpoint file, read from its header.
pub fn peek_dtype(path: &Path) -> Result<DType> {
    let bytes = std::fs::read(path)?;
    Ok(parse_header(&bytes)?.dtype)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Checkpoint(format!(
                "file truncated while reading {what} ({} bytes needed at offset {}, {} available)",
                n,
                self.pos,
                self.bytes.len().saturating_sub(self.pos)
            ))),
        }
    }
}

struct Header {
    dtype: DType,
    task: TaskKind,
    model: ModelConfig,
    instance_length: usize,
    step: u64,
    adam: AdamConfig,
    adam_step: u64,
    settings: BTreeMap<String, String>,
    tensors: Vec<(String, Vec<usize>)>,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut reader = Reader { bytes, pos: 0 };
    if reader.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic bytes)".into()));
    }
    let version = u32::from_le_bytes(reader.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {VERSION})"
        )));
    }
    let len = u32::from_le_bytes(reader.take(4, "header length")?.try_into().unwrap()) as usize;
    let raw = reader.take(len, "header")?;
    let text = std::str::from_utf8(raw).map_err(|_| Error::Checkpoint("header is not valid UTF-8".into()))?;
    let body_end = text
        .trim_end_matches('\n')
        .rfind('\n')
        .map(|i| i + 1)
        .ok_or_else(|| Error::Checkpoint("header has no checksum line".into()))?;
    let (body, last) = text.split_at(body_end);
    let stored = last
        .trim_end()
        .strip_prefix("checksum ")
        .and_then(|h| u64::from_str_radix(h, 16).ok())
        .ok_or_else(|| Error::Checkpoint("header has no checksum line".into()))?;
    if stored != fnv1a(body.as_bytes()) {
        return Err(Error::Checkpoint("header checksum mismatch (file corrupted)".into()));
    }

    let bad = |line: &str| Error::Checkpoint(format!("malformed header line `{line}`"));
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    let mut settings = BTreeMap::new();
    let mut tensors = Vec::new();
    let mut dtype = None;
    for line in body.lines() {
        let (key, rest) = line.split_once(' ').ok_or_else(|| bad(line))?;
        match key {
            "setting" => {
                let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                settings.insert(k.to_string(), v.to_string());
            }
            "tensor" => {
                let parts: Vec<&str> = rest.split(' ').collect();
                let [name, ty, dims] = parts[..] else {
                    return Err(bad(line));
                };
                let ty: DType = ty.parse().map_err(|_| bad(line))?;
                if Some(ty) != dtype {
                    return Err(Error::Checkpoint(format!(
                        "tensor `{name}` has dtype {ty}, file declares {:?}",
                        dtype
                    )));
                }
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>().ok().filter(|&d| d > 0))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| bad(line))?;
                tensors.push((name.to_string(), shape));
            }
            "dtype" => dtype = Some(rest.parse().map_err(|_| bad(line))?),
            _ => {
                fields.insert(key, rest);
            }
        }
    }
    let field = |k: &str| {
        fields
            .get(k)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("header is missing `{k}`")))
    };
    fn parse<V: std::str::FromStr>(k: &str, v: &str) -> Result<V> {
        v.parse()
            .map_err(|_| Error::Checkpoint(format!("header field `{k}` has bad value `{v}`")))
    }
    let adam_parts: Vec<&str> = field("adam")?.split(' ').collect();
    if adam_parts.len() != 5 {
        return Err(bad(field("adam")?));
    }
    let model = ModelConfig {
        maps: parse("maps", field("maps")?)?,
        blocks: parse("blocks", field("blocks")?)?,
        variant: parse::<SwitchVariant>("variant", field("variant")?)?,
        sharing: parse::<Sharing>("sharing", field("sharing")?)?,
        residual: parse("residual", field("residual")?)?,
        benes: parse("benes", field("benes")?)?,
    };
    model
        .validate()
        .map_err(|e| Error::Checkpoint(format!("stored model configuration is invalid: {e}")))?;
    Ok(Header {
        dtype: dtype.ok_or_else(|| Error::Checkpoint("header is missing `dtype`".into()))?,
        task: parse("task", field("task")?)?,
        model,
        instance_length: parse("instance_length", field("instance_length")?)?,
        step: parse("step", field("step")?)?,
        adam: AdamConfig {
            lr: parse("adam", adam_parts[0])?,
            beta1: parse("adam", adam_parts[1])?,
            beta2: parse("adam", adam_parts[2])?,
            eps: parse("adam", adam_parts[3])?,
        },
        adam_step: parse("adam", adam_parts[4])?,
        settings,
        tensors,
        payload_start: reader.pos,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    #[test]
    fn rng_state_resumes_the_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        rng.set_stream(3);
        for _ in 0..7 {
            rng.next_u32();
        }
        let state = RngState::capture(&rng);
        let mut restored = state.restore();
        let a: Vec<u64> = (0..4).map(|_| rng.next_u64()).collect();
        let b: Vec<u64> = (0..4).map(|_| restored.next_u64()).collect();
        assert_eq!(a, b);
    }
}
