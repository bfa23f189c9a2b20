//! Binary checkpoints with a JSON manifest beside them.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "MATCKPT1"
//! config_len, config JSON
//! param_count
//! per parameter: name_len, name, rank, dims…, f32 values
//! CRC-32 of everything above
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{MattingNet, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{Parameter, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MATCKPT1";

/// Parameter-name prefixes per stage.
pub const ENCODER_PREFIX: &str = "enc.";
pub const DECODER_PREFIXES: [&str; 2] = ["dec.", "head."];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: Vec<Parameter<f32>>,
}

impl Checkpoint {
    pub fn from_net(net: &MattingNet<f32>) -> Self {
        Self {
            config: net.config,
            params: net.params.clone(),
        }
    }

    pub fn into_net(self) -> Result<MattingNet<f32>> {
        let expected = self.config.parameter_specs();
        if expected.len() != self.params.len()
            || expected
                .iter()
                .zip(&self.params)
                .any(|((n, s), p)| n != &p.name || s.as_slice() != p.tensor.shape())
        {
            return Err(Error::Checkpoint(
                "parameters do not match the stored model config".into(),
            ));
        }
        Ok(MattingNet {
            config: self.config,
            params: self.params,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        let config = serde_json::to_vec(&self.config)
            .map_err(|e| Error::Checkpoint(format!("config encode: {e}")))?;
        push_u32(&mut out, config.len())?;
        out.extend_from_slice(&config);
        push_u32(&mut out, self.params.len())?;
        for p in &self.params {
            push_u32(&mut out, p.name.len())?;
            out.extend_from_slice(p.name.as_bytes());
            push_u32(&mut out, p.tensor.shape().len())?;
            for &d in p.tensor.shape() {
                push_u32(&mut out, d)?;
            }
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 4 {
            return Err(Error::Decode {
                offset: bytes.len() as u64,
                message: "file too short for a checkpoint".into(),
            });
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Checkpoint(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        let mut r = Reader { buf: body, pos: 8 };
        let config_len = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(config_len)?)
            .map_err(|e| Error::Checkpoint(format!("config decode: {e}")))?;
        let count = r.u32()? as usize;
        let mut params = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let at = r.pos;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|_| Error::Decode {
                offset: at as u64,
                message: "parameter name is not UTF-8".into(),
            })?;
            let rank = r.u32()? as usize;
            if rank == 0 || rank > 4 {
                return Err(Error::Decode {
                    offset: r.pos as u64,
                    message: format!("parameter {name} has rank {rank}"),
                });
            }
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.push(Parameter::new(name, Tensor::new(shape, data)?));
        }
        if r.pos != body.len() {
            return Err(Error::Decode {
                offset: r.pos as u64,
                message: "trailing bytes after last parameter".into(),
            });
        }
        Ok(Self { config, params })
    }
}

fn push_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Decode {
                offset: self.pos as u64,
                message: format!("truncated: need {n} bytes, {} left", self.buf.len() - self.pos),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    stage: String,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    sha256: String,
    config: ModelConfig,
    parameter_count: usize,
    input_layout: String,
    stage_prefixes: serde_json::Value,
    parameters: Vec<ManifestEntry>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn stage_of(name: &str) -> &'static str {
    if name.starts_with(ENCODER_PREFIX) {
        "encoder"
    } else if name.starts_with("dec.") {
        "decoder"
    } else {
        "head"
    }
}

/// Writes the checkpoint and its `.manifest.json` sidecar.
pub fn save_checkpoint(path: &Path, net: &MattingNet<f32>) -> Result<()> {
    let bytes = Checkpoint::from_net(net).to_bytes()?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    let layout = if net.config.uses_trimap() {
        "rgb, trimap one-hot (background, unknown, foreground)"
    } else {
        "rgb"
    };
    let manifest = Manifest {
        format: String::from_utf8_lossy(CHECKPOINT_MAGIC).into_owned(),
        sha256: Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect(),
        config: net.config,
        parameter_count: net.parameter_count(),
        input_layout: layout.into(),
        stage_prefixes: serde_json::json!({
            "encoder": [ENCODER_PREFIX],
            "decoder": DECODER_PREFIXES,
        }),
        parameters: net
            .params
            .iter()
            .map(|p| ManifestEntry {
                name: p.name.clone(),
                shape: p.tensor.shape().to_vec(),
                stage: stage_of(&p.name).into(),
            })
            .collect(),
    };
    let mpath = manifest_path(path);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
    fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LoadStage {
    EncoderOnly,
    #[default]
    EncoderDecoder,
}

impl LoadStage {
    pub fn includes(&self, name: &str) -> bool {
        match self {
            LoadStage::EncoderOnly => name.starts_with(ENCODER_PREFIX),
            LoadStage::EncoderDecoder => {
                name.starts_with(ENCODER_PREFIX) || DECODER_PREFIXES.iter().any(|p| name.starts_with(p))
            }
        }
    }
}

impl std::str::FromStr for LoadStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "encoder_only" => Ok(Self::EncoderOnly),
            "encoder_decoder" => Ok(Self::EncoderDecoder),
            other => Err(Error::Config(format!(
                "unknown load stage {other:?}; expected encoder_only or encoder_decoder"
            ))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LoadReport {
    pub loaded: Vec<String>,
    /// First-layer weights whose input channels differ; the overlapping channels were copied.
    pub partial: Vec<String>,
    /// Model parameters outside the loaded stage, left at their fresh initialisation.
    pub kept_fresh: Vec<String>,
    /// Checkpoint parameters that the model does not have.
    pub unused: Vec<String>,
}

/// Copies the parameters of `stage` from `ckpt` into `net` by name.
///
/// A model parameter in the stage that is missing from the checkpoint or has a
/// different shape is an error listing every such name. When the checkpoint
/// was trained with a different number of input channels, the layers that
/// read the raw input (first encoder conv, full-resolution fuse conv) differ
/// only in dim 1; their overlapping channels are copied.
pub fn load_into(net: &mut MattingNet<f32>, ckpt: &Checkpoint, stage: LoadStage) -> Result<LoadReport> {
    let mut report = LoadReport::default();
    let mut problems = Vec::new();
    let channels_differ = ckpt.config.input_channels != net.config.input_channels;
    for p in net.params.iter_mut() {
        if !stage.includes(&p.name) {
            report.kept_fresh.push(p.name.clone());
            continue;
        }
        let Some(src) = ckpt.params.iter().find(|c| c.name == p.name) else {
            problems.push(format!("{} (missing from checkpoint)", p.name));
            continue;
        };
        if src.tensor.shape() == p.tensor.shape() {
            p.tensor = src.tensor.clone();
            report.loaded.push(p.name.clone());
        } else if channels_differ && same_except_dim1(src.tensor.shape(), p.tensor.shape()) {
            copy_input_channels(&src.tensor, &mut p.tensor);
            report.partial.push(p.name.clone());
        } else {
            problems.push(format!(
                "{} (checkpoint shape {:?}, model shape {:?})",
                p.name,
                src.tensor.shape(),
                p.tensor.shape()
            ));
        }
    }
    report.unused = ckpt
        .params
        .iter()
        .filter(|c| net.param(&c.name).is_none())
        .map(|c| c.name.clone())
        .collect();
    if !problems.is_empty() {
        return Err(Error::Checkpoint(format!(
            "unmatched parameters: {}",
            problems.join(", ")
        )));
    }
    Ok(report)
}

fn same_except_dim1(a: &[usize], b: &[usize]) -> bool {
    a.len() == 4 && b.len() == 4 && a[0] == b[0] && a[2] == b[2] && a[3] == b[3]
}

fn copy_input_channels(src: &Tensor<f32>, dst: &mut Tensor<f32>) {
    let s = src.shape().to_vec();
    let d = dst.shape().to_vec();
    let k = s[2] * s[3];
    let shared = s[1].min(d[1]);
    let src_data = src.data();
    let dst_data = dst.data_mut();
    for o in 0..s[0] {
        for c in 0..shared {
            let from = (o * s[1] + c) * k;
            let to = (o * d[1] + c) * k;
            dst_data[to..to + k].copy_from_slice(&src_data[from..from + k]);
        }
    }
}
