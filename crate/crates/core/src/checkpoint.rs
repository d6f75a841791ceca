//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "CLR1"  u32 version
//! u64 metadata length, metadata (UTF-8 JSON: encoder config, step, ...)
//! repeated: u64 name length, name, u64 rank, rank x u64 dims, f32 payload
//! u32 CRC-32 of the tensor records
//! ```
//!
//! Parameters are stored as `param.<name>`, Adam moments as `adam.m.<name>`
//! and `adam.v.<name>`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{EncoderConfig, ModelParameters, Tensor};
use crate::error::{Error, Result};
use crate::optim::OptimizerState;
use crate::text::Vocabulary;

pub const MAGIC: &[u8; 4] = b"CLR1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    encoder: EncoderConfig,
    step: u64,
    tensor_count: u64,
    has_optimizer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    vocabulary: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParameters<f32>,
    pub optimizer: Option<OptimizerState<f32>>,
    pub step: u64,
    pub vocabulary: Option<Vocabulary>,
}

/// Header and tensor directory, without materialising the model.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointSummary {
    pub version: u32,
    pub step: u64,
    pub config: EncoderConfig,
    pub vocabulary_size: Option<usize>,
    pub tensors: Vec<(String, Vec<usize>)>,
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor<f32>) {
    put_u64(out, name.len() as u64);
    out.extend_from_slice(name.as_bytes());
    put_u64(out, t.shape.len() as u64);
    for &d in &t.shape {
        put_u64(out, d as u64);
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises a checkpoint. `step` comes from the optimizer state when one is
/// given.
pub fn encode_checkpoint(
    params: &ModelParameters<f32>,
    optimizer: Option<&OptimizerState<f32>>,
    step: u64,
    vocabulary: Option<&Vocabulary>,
) -> Result<Vec<u8>> {
    let groups: Vec<(&str, &ModelParameters<f32>)> = match optimizer {
        Some(o) => vec![("param.", params), ("adam.m.", &o.m), ("adam.v.", &o.v)],
        None => vec![("param.", params)],
    };
    let meta = Metadata {
        encoder: params.config,
        step: optimizer.map_or(step, |o| o.t),
        tensor_count: groups.iter().map(|(_, p)| p.named().len() as u64).sum(),
        has_optimizer: optimizer.is_some(),
        vocabulary: vocabulary.map(|v| v.tokens().to_vec()),
    };
    let meta = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(16 + meta.len() + 4 * params.num_parameters() * groups.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u64(&mut out, meta.len() as u64);
    out.extend_from_slice(&meta);
    let body_start = out.len();
    for (prefix, p) in &groups {
        for (name, t) in p.named() {
            put_tensor(&mut out, &format!("{prefix}{name}"), t);
        }
    }
    let crc = crc32fast::hash(&out[body_start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

/// Writes atomically: the bytes go to a sibling temporary file that is then
/// renamed over `path`.
pub fn save_checkpoint(
    path: &Path,
    params: &ModelParameters<f32>,
    optimizer: Option<&OptimizerState<f32>>,
    step: u64,
    vocabulary: Option<&Vocabulary>,
) -> Result<()> {
    let bytes = encode_checkpoint(params, optimizer, step, vocabulary)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = self.u64(what)?;
        usize::try_from(v).map_err(|_| Error::Truncated(format!("{what} {v} too large")))
    }
}

struct Parsed {
    version: u32,
    meta: Metadata,
    tensors: Vec<(String, Tensor<f32>)>,
}

fn parse(bytes: &[u8]) -> Result<Parsed> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u32("format version")?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let meta_len = r.len("metadata length")?;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
    let body_start = r.pos;
    let mut tensors = Vec::new();
    for _ in 0..meta.tensor_count {
        let name_len = r.len("tensor name length")?;
        let name = String::from_utf8(r.take(name_len, "tensor name")?.to_vec())
            .map_err(|_| Error::Truncated("tensor name is not UTF-8".into()))?;
        let rank = r.len("tensor rank")?;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.len("tensor dimension")?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .and_then(|c| c.checked_mul(4))
            .ok_or_else(|| Error::Truncated(format!("{name}: shape {shape:?} overflows")))?;
        let payload = r.take(count, &name)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push((name, Tensor { shape, data }));
    }
    let body_end = r.pos;
    let stored = r.u32("checksum")?;
    if r.pos != bytes.len() {
        return Err(Error::Truncated(format!("{} unexpected trailing bytes", bytes.len() - r.pos)));
    }
    let computed = crc32fast::hash(&bytes[body_start..body_end]);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(Parsed { version, meta, tensors })
}

fn group(tensors: &mut Vec<(String, Tensor<f32>)>, prefix: &str) -> Vec<(String, Tensor<f32>)> {
    let mut out = Vec::new();
    let mut rest = Vec::new();
    for (name, t) in tensors.drain(..) {
        match name.strip_prefix(prefix) {
            Some(n) => out.push((n.to_string(), t)),
            None => rest.push((name, t)),
        }
    }
    *tensors = rest;
    out
}

/// Decodes a checkpoint. With `expected` set, a differing stored encoder
/// configuration is rejected.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&EncoderConfig>) -> Result<Checkpoint> {
    let Parsed { meta, mut tensors, .. } = parse(bytes)?;
    if let Some(cfg) = expected {
        if *cfg != meta.encoder {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {:?}, expected {:?}",
                meta.encoder, cfg
            )));
        }
    }
    let mut params = ModelParameters::<f32>::init(&meta.encoder, 0)?;
    params.assign_named(group(&mut tensors, "param."))?;
    let optimizer = if meta.has_optimizer {
        let mut m = params.zeros_like();
        m.assign_named(group(&mut tensors, "adam.m."))?;
        let mut v = params.zeros_like();
        v.assign_named(group(&mut tensors, "adam.v."))?;
        Some(OptimizerState { m, v, t: meta.step })
    } else {
        None
    };
    if let Some((name, _)) = tensors.first() {
        return Err(Error::ShapeMismatch(format!("unexpected tensor {name}")));
    }
    let vocabulary = meta.vocabulary.map(Vocabulary::from_tokens).transpose()?;
    if let Some(v) = &vocabulary {
        if v.len() != meta.encoder.vocab_size {
            return Err(Error::ConfigMismatch(format!(
                "vocabulary has {} entries, encoder expects {}",
                v.len(),
                meta.encoder.vocab_size
            )));
        }
    }
    Ok(Checkpoint {
        params,
        optimizer,
        step: meta.step,
        vocabulary,
    })
}

pub fn load_checkpoint(path: &Path, expected: Option<&EncoderConfig>) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, expected)
}

pub fn inspect_checkpoint(path: &Path) -> Result<CheckpointSummary> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let p = parse(&bytes)?;
    Ok(CheckpointSummary {
        version: p.version,
        step: p.meta.step,
        config: p.meta.encoder,
        vocabulary_size: p.meta.vocabulary.as_ref().map(Vec::len),
        tensors: p.tensors.into_iter().map(|(n, t)| (n, t.shape)).collect(),
    })
}

impl std::fmt::Display for CheckpointSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let c = &self.config;
        writeln!(f, "version: {}", self.version)?;
        writeln!(f, "step: {}", self.step)?;
        writeln!(
            f,
            "config: layers={} heads={} hidden={} ffn_dim={} vocab_size={} max_positions={} dropout={} projection_dim={}",
            c.layers, c.heads, c.hidden, c.ffn_dim, c.vocab_size, c.max_positions, c.dropout, c.projection_dim
        )?;
        if let Some(n) = self.vocabulary_size {
            writeln!(f, "vocabulary: {n} tokens")?;
        }
        writeln!(f, "tensors: {}", self.tensors.len())?;
        for (name, shape) in &self.tensors {
            let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
            writeln!(f, "  {name} [{}]", dims.join(", "))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;

    fn model() -> (ModelParameters<f32>, OptimizerState<f32>) {
        let p = ModelParameters::<f32>::init(&EncoderConfig::tiny(12), 9).unwrap();
        let mut st = OptimizerState::new(&p);
        let mut rng = CounterRng::new(1);
        for t in st.m.tensors_mut().chain(st.v.tensors_mut()) {
            t.data.iter_mut().for_each(|v| *v = rng.normal() as f32);
        }
        st.t = 42;
        (p, st)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (p, st) = model();
        let bytes = encode_checkpoint(&p, Some(&st), 0, None).unwrap();
        let ck = decode_checkpoint(&bytes, Some(&p.config)).unwrap();
        assert_eq!(ck.params, p);
        assert_eq!(ck.optimizer.as_ref(), Some(&st));
        assert_eq!(ck.step, 42);
        for ((_, a), (_, b)) in ck.params.named().into_iter().zip(p.named()) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(encode_checkpoint(&ck.params, ck.optimizer.as_ref(), 0, None).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let (p, _) = model();
        let bytes = encode_checkpoint(&p, None, 7, None).unwrap();
        assert_eq!(&bytes[..4], b"CLR1");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let meta: serde_json::Value = serde_json::from_slice(&bytes[16..16 + meta_len]).unwrap();
        assert_eq!(meta["step"], 7);
        let name_len = u64::from_le_bytes(bytes[16 + meta_len..24 + meta_len].try_into().unwrap()) as usize;
        assert_eq!(&bytes[24 + meta_len..24 + meta_len + name_len], b"param.embeddings.token");
    }

    #[test]
    fn corrupt_files_give_distinct_errors() {
        let (p, st) = model();
        let bytes = encode_checkpoint(&p, Some(&st), 0, None).unwrap();

        let mut flipped = bytes.clone();
        let payload_byte = bytes.len() - 4 - 10;
        flipped[payload_byte] ^= 0x01;
        assert!(matches!(decode_checkpoint(&flipped, None), Err(Error::Checksum { .. })));

        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode_checkpoint(&magic, None), Err(Error::BadMagic)));

        let mut version = bytes.clone();
        version[4] = 2;
        assert!(matches!(
            decode_checkpoint(&version, None),
            Err(Error::VersionMismatch { found: 2, expected: 1 })
        ));

        let truncated = &bytes[..bytes.len() - 100];
        assert!(matches!(decode_checkpoint(truncated, None), Err(Error::Truncated(_))));

        let mut other = p.config;
        other.dropout = 0.0;
        let err = decode_checkpoint(&bytes, Some(&other)).unwrap_err();
        assert!(matches!(err, Error::ConfigMismatch(_)));
        assert!(err.to_string().starts_with("config mismatch"));
    }

    #[test]
    fn vocabulary_travels_with_the_model() {
        let p = ModelParameters::<f32>::init(&EncoderConfig::tiny(7), 1).unwrap();
        let vocab = Vocabulary::from_tokens(
            ["[PAD]", "[UNK]", "[CLS]", "[MASK]", "[DEL]", "a", "b"].map(String::from).to_vec(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.clr");
        save_checkpoint(&path, &p, None, 3, Some(&vocab)).unwrap();
        let ck = load_checkpoint(&path, None).unwrap();
        assert_eq!(ck.vocabulary.as_ref(), Some(&vocab));
        assert!(ck.optimizer.is_none());
        assert_eq!(ck.step, 3);
        let s = inspect_checkpoint(&path).unwrap();
        assert_eq!(s.vocabulary_size, Some(7));
        assert_eq!(s.tensors.len(), p.named().len());
        assert!(!dir.path().join("m.clr.tmp").exists());
    }
}
