//! Checkpoint container: a single binary file holding named f64 arrays,
//! the config snapshot that produced them, the frozen-parameter manifest,
//! and the training RNG state, so a run can be resumed or inspected
//! bit-exactly. The layout is little-endian and length-prefixed throughout;
//! arrays are stored sorted by name, so byte output is independent of
//! parameter insertion order.

use crate::error::{Error, Result};
use byteorder::{ByteOrder, LittleEndian};
use fabseg_autograd::ParamSet;
use indexmap::IndexMap;
use ndarray::ArrayD;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

/// File signature; also versions the layout.
pub const MAGIC: &[u8; 8] = b"FABSAM01";
const DTYPE: &str = "f64";
/// 32-byte seed, 16-byte word position, 8-byte stream.
const RNG_STATE_LEN: usize = 56;

/// A deserialized checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// TOML snapshot of the config the run used.
    pub config_text: String,
    /// Name prefixes of parameters that were frozen during the run.
    pub frozen_manifest: Vec<String>,
    /// Serialized RNG state (seed, word position, stream).
    pub rng_state: Vec<u8>,
    /// Named parameter and buffer arrays, sorted by name.
    pub arrays: IndexMap<String, ArrayD<f64>>,
}

fn encode_rng(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut out = Vec::with_capacity(RNG_STATE_LEN);
    out.extend_from_slice(&rng.get_seed());
    out.extend_from_slice(&rng.get_word_pos().to_le_bytes());
    out.extend_from_slice(&rng.get_stream().to_le_bytes());
    out
}

fn check_prefixes(frozen: &[String], arrays: &IndexMap<String, ArrayD<f64>>) -> Result<()> {
    for prefix in frozen {
        if !arrays.keys().any(|n| n.starts_with(prefix.as_str())) {
            return Err(Error::SchemaError(format!(
                "frozen manifest prefix {prefix:?} matches no stored array"
            )));
        }
    }
    Ok(())
}

impl Checkpoint {
    /// Snapshots a parameter set (weights and buffers alike) together with
    /// its config text, frozen manifest, and RNG state.
    pub fn from_params(
        set: &ParamSet,
        config_text: &str,
        frozen_manifest: &[String],
        rng: &ChaCha8Rng,
    ) -> Result<Self> {
        let mut names: Vec<&String> = set.names().collect();
        names.sort();
        let mut arrays = IndexMap::with_capacity(names.len());
        for name in names {
            let value = set.value(name).expect("listed name resolves");
            if value.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericalError(format!(
                    "parameter {name} holds non-finite values; refusing to checkpoint"
                )));
            }
            arrays.insert(name.clone(), value);
        }
        let ckpt = Self {
            config_text: config_text.to_string(),
            frozen_manifest: frozen_manifest.to_vec(),
            rng_state: encode_rng(rng),
            arrays,
        };
        check_prefixes(&ckpt.frozen_manifest, &ckpt.arrays)?;
        Ok(ckpt)
    }

    /// One stored array by name.
    pub fn array(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.arrays.get(name)
    }

    /// Reconstructs the RNG at its saved position.
    pub fn rng(&self) -> Result<ChaCha8Rng> {
        if self.rng_state.len() != RNG_STATE_LEN {
            return Err(Error::CorruptCheckpoint(format!(
                "rng state must be {RNG_STATE_LEN} bytes, found {}",
                self.rng_state.len()
            )));
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&self.rng_state[..32]);
        let word_pos = u128::from_le_bytes(self.rng_state[32..48].try_into().expect("16 bytes"));
        let stream = u64::from_le_bytes(self.rng_state[48..56].try_into().expect("8 bytes"));
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        Ok(rng)
    }

    /// Writes every stored array into `set`. The checkpoint must cover the
    /// set exactly: missing arrays, extra arrays, and shape mismatches are
    /// schema errors, reported before anything is modified.
    pub fn install(&self, set: &ParamSet) -> Result<()> {
        for (name, entry) in set.iter() {
            let stored = self.arrays.get(name).ok_or_else(|| {
                Error::SchemaError(format!("checkpoint is missing parameter {name}"))
            })?;
            if stored.shape() != entry.shape() {
                return Err(Error::SchemaError(format!(
                    "parameter {name}: checkpoint shape {:?} does not match model shape {:?}",
                    stored.shape(),
                    entry.shape()
                )));
            }
        }
        for name in self.arrays.keys() {
            if !set.contains(name) {
                return Err(Error::SchemaError(format!(
                    "checkpoint carries unknown parameter {name}"
                )));
            }
        }
        for (name, value) in &self.arrays {
            set.set(name, value.clone());
        }
        Ok(())
    }

    /// Serializes to the length-prefixed binary layout.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_str(&mut out, &self.config_text);
        write_u64(&mut out, self.frozen_manifest.len() as u64);
        for entry in &self.frozen_manifest {
            write_str(&mut out, entry);
        }
        write_u64(&mut out, self.rng_state.len() as u64);
        out.extend_from_slice(&self.rng_state);
        let mut names: Vec<&String> = self.arrays.keys().collect();
        names.sort();
        write_u64(&mut out, names.len() as u64);
        for name in names {
            let array = &self.arrays[name.as_str()];
            write_str(&mut out, name);
            write_u64(&mut out, array.ndim() as u64);
            for &d in array.shape() {
                write_u64(&mut out, d as u64);
            }
            write_str(&mut out, DTYPE);
            write_u64(&mut out, (array.len() * 8) as u64);
            let mut buf = vec![0u8; array.len() * 8];
            for (chunk, &v) in buf.chunks_exact_mut(8).zip(array.iter()) {
                LittleEndian::write_f64(chunk, v);
            }
            out.extend_from_slice(&buf);
        }
        out
    }

    /// Parses the binary layout, validating structure, dtype, finiteness,
    /// and the frozen manifest.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::CorruptCheckpoint(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(magic),
                String::from_utf8_lossy(MAGIC)
            )));
        }
        let config_text = r.string("config")?;
        let manifest_len = r.u64("frozen manifest count")? as usize;
        if manifest_len > bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "frozen manifest count {manifest_len} exceeds file size"
            )));
        }
        let mut frozen_manifest = Vec::with_capacity(manifest_len);
        for _ in 0..manifest_len {
            frozen_manifest.push(r.string("frozen manifest entry")?);
        }
        let rng_len = r.u64("rng state length")? as usize;
        if rng_len != RNG_STATE_LEN {
            return Err(Error::CorruptCheckpoint(format!(
                "rng state must be {RNG_STATE_LEN} bytes, found {rng_len}"
            )));
        }
        let rng_state = r.take(rng_len)?.to_vec();
        let array_count = r.u64("array count")? as usize;
        if array_count > bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "array count {array_count} exceeds file size"
            )));
        }
        let mut arrays = IndexMap::with_capacity(array_count);
        for _ in 0..array_count {
            let name = r.string("array name")?;
            let ndim = r.u64("array rank")? as usize;
            if ndim > 8 {
                return Err(Error::CorruptCheckpoint(format!(
                    "array {name} claims rank {ndim}"
                )));
            }
            let mut dims = Vec::with_capacity(ndim);
            let mut count = 1usize;
            for _ in 0..ndim {
                let d = r.u64("array dimension")? as usize;
                count = count.checked_mul(d).ok_or_else(|| {
                    Error::CorruptCheckpoint(format!("array {name} dimensions overflow"))
                })?;
                dims.push(d);
            }
            let dtype = r.string("array dtype")?;
            if dtype != DTYPE {
                return Err(Error::CorruptCheckpoint(format!(
                    "array {name} has dtype {dtype:?}, only {DTYPE:?} is supported"
                )));
            }
            let byte_len = r.u64("array byte length")? as usize;
            if byte_len != count * 8 {
                return Err(Error::CorruptCheckpoint(format!(
                    "array {name}: {byte_len} bytes for shape {dims:?} (expected {})",
                    count * 8
                )));
            }
            let raw = r.take(byte_len)?;
            let mut values = Vec::with_capacity(count);
            for chunk in raw.chunks_exact(8) {
                let v = LittleEndian::read_f64(chunk);
                if !v.is_finite() {
                    return Err(Error::CorruptCheckpoint(format!(
                        "array {name} holds non-finite value {v}"
                    )));
                }
                values.push(v);
            }
            let array = ArrayD::from_shape_vec(ndarray::IxDyn(&dims), values)
                .map_err(|e| Error::CorruptCheckpoint(format!("array {name}: {e}")))?;
            if arrays.insert(name.clone(), array).is_some() {
                return Err(Error::CorruptCheckpoint(format!("duplicate array {name}")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{} trailing bytes after the last array",
                bytes.len() - r.pos
            )));
        }
        let ckpt = Self { config_text, frozen_manifest, rng_state, arrays };
        check_prefixes(&ckpt.frozen_manifest, &ckpt.arrays)?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::DataError(format!("cannot write checkpoint {}: {e}", path.display())))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::DataError(format!("cannot read checkpoint {}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

fn write_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn write_str(out: &mut Vec<u8>, s: &str) {
    write_u64(out, s.len() as u64);
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "truncated: wanted {n} bytes at offset {}, file has {}",
                self.pos,
                self.bytes.len()
            )));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let slice = self.take(8).map_err(|_| {
            Error::CorruptCheckpoint(format!("truncated reading {what} at offset {}", self.pos))
        })?;
        Ok(LittleEndian::read_u64(slice))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u64(what)? as usize;
        if len > self.bytes.len() {
            return Err(Error::CorruptCheckpoint(format!(
                "{what} length {len} exceeds file size"
            )));
        }
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::CorruptCheckpoint(format!("{what} is not valid UTF-8")))
    }
}
