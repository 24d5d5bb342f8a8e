//! `ICKP` tensor files and the `.cfg` sidecar.
//!
//! Layout: magic `ICKP`, u32 version, u32 tensor count, then per tensor a u16
//! name length, the UTF-8 name, u8 rank, u32 dims and f32 LE data. All
//! integers are little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{ForwardConfig, ModelState};
use crate::ingest::{read_u32, u32_of};
use crate::{Error, Real, Result};

const MAGIC: &[u8; 4] = b"ICKP";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::Shape(format!("tensor {name}: shape {shape:?} does not hold {} values", data.len())));
        }
        Ok(Self { name, shape, data })
    }
}

pub fn write_tensors<W: Write>(mut w: W, tensors: &[NamedTensor]) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&u32_of(tensors.len())?.to_le_bytes())?;
    for t in tensors {
        let name = t.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(name)?;
        let rank = u8::try_from(t.shape.len()).map_err(|_| Error::Format("tensor rank above 255".into()))?;
        w.write_all(&[rank])?;
        for &d in &t.shape {
            w.write_all(&u32_of(d)?.to_le_bytes())?;
        }
        for &x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<Vec<NamedTensor>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not an ICKP checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let mut name = vec![0u8; u16::from_le_bytes(b2) as usize];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)?;
        let shape = (0..rank[0]).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        out.push(NamedTensor { name, shape, data });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn state_tensors<F: Real>(state: &ModelState<F>) -> Vec<NamedTensor> {
    state
        .tensors()
        .into_iter()
        .map(|t| NamedTensor { name: t.name, shape: t.shape, data: t.data.iter().map(|x| x.as_f32()).collect() })
        .collect()
}

/// Rebuilds a model from tensors, requiring exactly the names and shapes
/// that `cfg` implies.
pub fn state_from_tensors<F: Real>(cfg: &ForwardConfig, tensors: &[NamedTensor]) -> Result<ModelState<F>> {
    let probe = tensors
        .iter()
        .find(|t| t.name == "probe")
        .ok_or_else(|| Error::Format("checkpoint has no probe tensor".into()))?;
    if probe.shape.len() != 2 {
        return Err(Error::Format("probe tensor must be rank 2".into()));
    }
    if probe.shape[1] != cfg.node_dim {
        return Err(Error::Shape(format!(
            "checkpoint node dimension {} does not match configuration {}",
            probe.shape[1], cfg.node_dim
        )));
    }
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
    let mut state = ModelState::<F>::init(cfg, probe.shape[0], &mut rng)?;
    let by_name: BTreeMap<&str, &NamedTensor> = tensors.iter().map(|t| (t.name.as_str(), t)).collect();
    if by_name.len() != tensors.len() {
        return Err(Error::Format("duplicate tensor names in checkpoint".into()));
    }
    let mut slots = state.tensors_mut();
    if slots.len() != tensors.len() {
        return Err(Error::Shape(format!(
            "checkpoint has {} tensors, configuration implies {}",
            tensors.len(),
            slots.len()
        )));
    }
    for slot in &mut slots {
        let t = by_name
            .get(slot.name.as_str())
            .ok_or_else(|| Error::Shape(format!("checkpoint lacks tensor {}", slot.name)))?;
        if t.shape != slot.shape {
            return Err(Error::Shape(format!(
                "tensor {}: checkpoint shape {:?}, configuration implies {:?}",
                slot.name, t.shape, slot.shape
            )));
        }
        for (d, &s) in slot.data.iter_mut().zip(&t.data) {
            *d = <F as Real>::from_f32(s);
        }
    }
    drop(slots);
    state.check_finite("parameter")?;
    Ok(state)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".cfg");
    PathBuf::from(s)
}

pub fn write_config<W: Write>(mut w: W, cfg: &ForwardConfig) -> Result<()> {
    for (k, v) in cfg.to_pairs() {
        writeln!(w, "{k}={v}")?;
    }
    Ok(())
}

pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value", lineno + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config(text: &str) -> Result<ForwardConfig> {
    let mut cfg = ForwardConfig::default();
    let pairs = parse_pairs(text)?;
    let unknown = cfg.apply_pairs(&pairs)?;
    if let Some(k) = unknown.first() {
        return Err(Error::Format(format!("unknown key {k:?} in model config")));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the model to `path` and its configuration to `path.cfg`.
pub fn save<F: Real>(path: impl AsRef<Path>, state: &ModelState<F>, cfg: &ForwardConfig) -> Result<()> {
    let path = path.as_ref();
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_tensors(file, &state_tensors(state))?;
    write_config(std::fs::File::create(sidecar_path(path))?, cfg)
}

pub fn load<F: Real>(path: impl AsRef<Path>) -> Result<(ModelState<F>, ForwardConfig)> {
    let path = path.as_ref();
    let cfg = read_config(&std::fs::read_to_string(sidecar_path(path))?)?;
    let tensors = read_tensors(std::io::BufReader::new(std::fs::File::open(path)?))?;
    Ok((state_from_tensors(&cfg, &tensors)?, cfg))
}

/// Hex SHA-256 of the checkpoint bytes.
pub fn fingerprint(path: impl AsRef<Path>) -> Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
