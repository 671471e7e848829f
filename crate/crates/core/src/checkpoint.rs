//! Checkpoint persistence.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic   8 bytes  "IMUSTRD1"
//! count   u32      number of parameter blocks
//! block:  u32 name length, name (UTF-8), u32 rank, rank x u32 dims,
//!         u64 value count, value count x f32
//! ```
//!
//! Next to `model.bin` sits `model.bin.manifest`, plain `key=value` lines
//! with the model config, parameter shapes, seed, epoch, validation loss,
//! init mode, free-form metrics and the SHA-256 of the binary file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ImuNet, ImuNetConfig, ModelError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"IMUSTRD1";
const FORMAT: &str = "imu-stride-checkpoint-1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: corrupt checkpoint: {msg}")]
    Corrupt { path: PathBuf, msg: String },
    #[error("config mismatch: checkpoint has `{found}`, expected `{expected}`")]
    ConfigMismatch { expected: String, found: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    Pretrained,
    Random,
}

impl InitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            InitMode::Pretrained => "pretrained",
            InitMode::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pretrained" => Some(InitMode::Pretrained),
            "random" => Some(InitMode::Random),
            _ => None,
        }
    }
}

impl fmt::Display for InitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub epoch: usize,
    pub val_loss: Option<f32>,
    pub init_mode: InitMode,
    pub metrics: BTreeMap<String, String>,
}

impl CheckpointMeta {
    pub fn new(seed: u64, init_mode: InitMode) -> Self {
        Self {
            seed,
            epoch: 0,
            val_loss: None,
            init_mode,
            metrics: BTreeMap::new(),
        }
    }
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest");
    PathBuf::from(s)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn encode_params(net: &ImuNet) -> Vec<u8> {
    let p = &net.params;
    let mut out = Vec::with_capacity(16 + 4 * p.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(p.len() as u32).to_le_bytes());
    for id in p.ids() {
        let name = p.name(id).as_bytes();
        let t = p.get(id);
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend_from_slice(&(t.len() as u64).to_le_bytes());
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or("truncated")?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses the binary blob into named tensors.
pub fn decode_params(buf: &[u8]) -> Result<Vec<(String, Tensor)>, String> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("bad magic".into());
    }
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?).map_err(|e| e.to_string())?.to_owned();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let len = r.u64()? as usize;
        if shape.iter().product::<usize>() != len {
            return Err(format!("{name}: shape {shape:?} does not hold {len} values"));
        }
        let bytes = r.take(len.checked_mul(4).ok_or("length overflow")?)?;
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        out.push((name, Tensor::new(shape, data).map_err(|e| e.to_string())?));
    }
    if r.pos != buf.len() {
        return Err(format!("{} trailing bytes", buf.len() - r.pos));
    }
    Ok(out)
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), CheckpointError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CheckpointError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    std::fs::write(path, bytes).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

fn read(path: &Path) -> Result<Vec<u8>, CheckpointError> {
    std::fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_owned(),
        source,
    })
}

pub fn save_checkpoint(net: &ImuNet, meta: &CheckpointMeta, path: &Path) -> Result<(), CheckpointError> {
    let bin = encode_params(net);
    let mut m = String::new();
    m.push_str(&format!("format={FORMAT}\n"));
    m.push_str(&format!("config={}\n", net.config().describe()));
    m.push_str(&format!("seed={}\n", meta.seed));
    m.push_str(&format!("epoch={}\n", meta.epoch));
    if let Some(v) = meta.val_loss {
        m.push_str(&format!("val_loss={v}\n"));
    }
    m.push_str(&format!("init_mode={}\n", meta.init_mode));
    m.push_str(&format!("num_params={}\n", net.params.num_scalars()));
    for id in net.params.ids() {
        let dims: Vec<String> = net.params.get(id).shape().iter().map(usize::to_string).collect();
        m.push_str(&format!("shape.{}={}\n", net.params.name(id), dims.join("x")));
    }
    for (k, v) in &meta.metrics {
        m.push_str(&format!("metric.{k}={v}\n"));
    }
    m.push_str(&format!("sha256={}\n", hex(&Sha256::digest(&bin))));
    write(path, &bin)?;
    write(&manifest_path(path), m.as_bytes())
}

/// Manifest fields that the loader interprets.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub config: ImuNetConfig,
    pub meta: CheckpointMeta,
    pub sha256: String,
}

pub fn read_manifest(path: &Path) -> Result<Manifest, CheckpointError> {
    let mpath = manifest_path(path);
    let text = String::from_utf8(read(&mpath)?).map_err(|e| corrupt(&mpath, e.to_string()))?;
    let mut kv = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| corrupt(&mpath, format!("line without `=`: {line}")))?;
        kv.insert(k.to_owned(), v.to_owned());
    }
    let get = |k: &str| kv.get(k).ok_or_else(|| corrupt(&mpath, format!("missing `{k}`")));
    if get("format")? != FORMAT {
        return Err(corrupt(&mpath, format!("unknown format `{}`", get("format")?)));
    }
    let num = |k: &str| get(k)?.parse::<u64>().map_err(|e| corrupt(&mpath, format!("{k}: {e}")));
    let config = ImuNetConfig::parse(get("config")?)?;
    let val_loss = match kv.get("val_loss") {
        Some(v) => Some(v.parse::<f32>().map_err(|e| corrupt(&mpath, format!("val_loss: {e}")))?),
        None => None,
    };
    let init_mode = InitMode::parse(get("init_mode")?).ok_or_else(|| corrupt(&mpath, "bad init_mode".into()))?;
    let metrics = kv
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("metric.").map(|k| (k.to_owned(), v.clone())))
        .collect();
    Ok(Manifest {
        config,
        meta: CheckpointMeta {
            seed: num("seed")?,
            epoch: num("epoch")? as usize,
            val_loss,
            init_mode,
            metrics,
        },
        sha256: get("sha256")?.clone(),
    })
}

fn corrupt(path: &Path, msg: String) -> CheckpointError {
    CheckpointError::Corrupt {
        path: path.to_owned(),
        msg,
    }
}

/// Loads a checkpoint, optionally requiring a specific model config.
pub fn load_checkpoint(path: &Path, expected: Option<&ImuNetConfig>) -> Result<(ImuNet, CheckpointMeta), CheckpointError> {
    let manifest = read_manifest(path)?;
    if let Some(exp) = expected {
        if *exp != manifest.config {
            return Err(CheckpointError::ConfigMismatch {
                expected: exp.describe(),
                found: manifest.config.describe(),
            });
        }
    }
    let bin = read(path)?;
    if hex(&Sha256::digest(&bin)) != manifest.sha256 {
        return Err(corrupt(path, "checksum mismatch".into()));
    }
    let tensors = decode_params(&bin).map_err(|m| corrupt(path, m))?;
    let mut net = ImuNet::new(manifest.config, 0)?;
    if tensors.len() != net.params.len() {
        return Err(corrupt(
            path,
            format!("{} parameter blocks, model has {}", tensors.len(), net.params.len()),
        ));
    }
    for (name, t) in tensors {
        let id = net
            .params
            .find(&name)
            .ok_or_else(|| corrupt(path, format!("unknown parameter `{name}`")))?;
        if t.shape() != net.params.get(id).shape() {
            return Err(corrupt(path, format!("{name}: shape {:?}", t.shape())));
        }
        net.params.set(id, t).map_err(ModelError::from)?;
    }
    Ok((net, manifest.meta))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ImuNetConfig {
        ImuNetConfig {
            channels: vec![4, 4, 8],
            hidden: 8,
            ..Default::default()
        }
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let net = ImuNet::new(small(), 9).unwrap();
        let mut meta = CheckpointMeta::new(9, InitMode::Pretrained);
        meta.epoch = 17;
        meta.val_loss = Some(0.123_456_79);
        meta.metrics.insert("val_accuracy".into(), "1".into());
        save_checkpoint(&net, &meta, &path).unwrap();
        let (back, meta2) = load_checkpoint(&path, Some(&small())).unwrap();
        assert_eq!(meta2, meta);
        for id in net.params.ids() {
            let a: Vec<u32> = net.params.get(id).data().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.params.get(id).data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(a, b);
        }
        assert_eq!(encode_params(&back), encode_params(&net));
    }

    #[test]
    fn config_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&ImuNet::new(small(), 1).unwrap(), &CheckpointMeta::new(1, InitMode::Random), &path).unwrap();
        let other = ImuNetConfig {
            channels: vec![8, 8, 8],
            ..small()
        };
        assert!(matches!(
            load_checkpoint(&path, Some(&other)),
            Err(CheckpointError::ConfigMismatch { .. })
        ));
    }

    #[test]
    fn corruption_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        save_checkpoint(&ImuNet::new(small(), 1).unwrap(), &CheckpointMeta::new(1, InitMode::Random), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let n = bytes.len();
        bytes[n - 1] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&path, None), Err(CheckpointError::Corrupt { .. })));
        assert!(decode_params(&bytes[..n - 3]).is_err());
        assert!(decode_params(b"NOTMAGIC").is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoint(&dir.path().join("none.bin"), None),
            Err(CheckpointError::Io { .. })
        ));
    }
}
