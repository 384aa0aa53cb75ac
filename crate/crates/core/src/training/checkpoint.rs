//! Versioned model checkpoints.
//!
//! Layout:
//!
//! ```text
//! MIDL-CHECKPOINT\n
//! version=1\n
//! epoch=<usize>\n
//! best_metric=<f64>\n
//! vocab_hash=<hex>\n
//! config.<key>=<value>\n        one line per training config key
//! users=<id>,<id>,...\n         user-table row order, row 0 excluded
//! arrays=<count>\n
//! end\n
//! ```
//!
//! followed by `count` binary records, each
//! `u32 name_len | name bytes | u32 rank | rank × u64 dims | f64 values`,
//! all little-endian. Floats in the header use Rust's shortest round-trip
//! formatting, so save → load → save is byte-identical.

use std::collections::HashMap;
use std::io::{BufRead, Read, Write};

use thiserror::Error;

use crate::embeddings::{EmbeddingTable, UserTable};
use crate::encoders::BiLstmEncoder;
use crate::mil_ntn::NtnParams;
use crate::numerics::{ParamSet, Tensor};

use super::{ModelParams, TrainConfig, CONFIG_KEYS};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "MIDL-CHECKPOINT";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file (missing {MAGIC} header)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {found} (this build reads version {FORMAT_VERSION})")]
    Version { found: String },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
    #[error("checkpoint array {name}: {message}")]
    Array { name: String, message: String },
    #[error("vocabulary hash mismatch: checkpoint was trained with {expected}, got {found}; use the vocab file the model was trained with")]
    VocabMismatch { expected: String, found: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: ModelParams,
    pub vocab_hash: String,
    pub epoch: usize,
    pub best_metric: f64,
}

impl Checkpoint {
    pub fn check_vocab(&self, vocab_hash: &str) -> Result<(), CheckpointError> {
        if self.vocab_hash != vocab_hash {
            return Err(CheckpointError::VocabMismatch {
                expected: self.vocab_hash.clone(),
                found: vocab_hash.to_string(),
            });
        }
        Ok(())
    }
}

pub fn save_checkpoint<W: Write>(cp: &Checkpoint, mut out: W) -> Result<(), CheckpointError> {
    let mut header = format!(
        "{MAGIC}\nversion={FORMAT_VERSION}\nepoch={}\nbest_metric={}\nvocab_hash={}\n",
        cp.epoch, cp.best_metric, cp.vocab_hash
    );
    for line in cp.config.to_lines().lines() {
        header.push_str("config.");
        header.push_str(line);
        header.push('\n');
    }
    let users: Vec<String> = cp.params.users.user_ids().iter().map(u64::to_string).collect();
    let tensors = cp.params.tensors();
    header.push_str(&format!("users={}\narrays={}\nend\n", users.join(","), tensors.len()));
    out.write_all(header.as_bytes())?;
    for (name, t) in tensors {
        out.write_all(&(name.len() as u32).to_le_bytes())?;
        out.write_all(name.as_bytes())?;
        out.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            out.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_line<R: BufRead>(input: &mut R, what: &str) -> Result<String, CheckpointError> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(CheckpointError::Truncated(what.to_string()));
    }
    if !line.ends_with('\n') {
        return Err(CheckpointError::Truncated(what.to_string()));
    }
    line.pop();
    Ok(line)
}

fn read_exact<R: Read>(input: &mut R, buf: &mut [u8], what: &str) -> Result<(), CheckpointError> {
    input.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => CheckpointError::Truncated(what.to_string()),
        _ => CheckpointError::Io(e),
    })
}

fn read_u32<R: Read>(input: &mut R, what: &str) -> Result<u32, CheckpointError> {
    let mut b = [0u8; 4];
    read_exact(input, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(input: &mut R, what: &str) -> Result<u64, CheckpointError> {
    let mut b = [0u8; 8];
    read_exact(input, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn field<'a>(line: &'a str, key: &str) -> Result<&'a str, CheckpointError> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix('='))
        .ok_or_else(|| CheckpointError::Header(format!("expected {key}=..., found {line:?}")))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CheckpointError> {
    value
        .parse()
        .map_err(|_| CheckpointError::Header(format!("bad value for {key}: {value:?}")))
}

pub fn load_checkpoint<R: BufRead>(mut input: R) -> Result<Checkpoint, CheckpointError> {
    let magic = read_line(&mut input, "header")?;
    if magic != MAGIC {
        return Err(CheckpointError::NotACheckpoint);
    }
    let version = read_line(&mut input, "version")?;
    let version = field(&version, "version")?;
    if version != FORMAT_VERSION.to_string() {
        return Err(CheckpointError::Version {
            found: version.to_string(),
        });
    }
    let epoch: usize = parse_num("epoch", field(&read_line(&mut input, "epoch")?, "epoch")?)?;
    let best_metric: f64 = parse_num(
        "best_metric",
        field(&read_line(&mut input, "best_metric")?, "best_metric")?,
    )?;
    let vocab_hash = field(&read_line(&mut input, "vocab_hash")?, "vocab_hash")?.to_string();

    let mut config = TrainConfig::default();
    for key in CONFIG_KEYS {
        let line = read_line(&mut input, "config")?;
        let value = field(&line, &format!("config.{key}"))?;
        config
            .set(key, value)
            .map_err(|e| CheckpointError::Header(e.to_string()))?;
    }
    let users_line = read_line(&mut input, "users")?;
    let users_field = field(&users_line, "users")?;
    let user_ids: Vec<u64> = if users_field.is_empty() {
        Vec::new()
    } else {
        users_field
            .split(',')
            .map(|u| parse_num("users", u))
            .collect::<Result<_, _>>()?
    };
    let count: usize = parse_num("arrays", field(&read_line(&mut input, "arrays")?, "arrays")?)?;
    if read_line(&mut input, "header end")? != "end" {
        return Err(CheckpointError::Header("missing end marker".into()));
    }

    let mut arrays: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for k in 0..count {
        let what = format!("array {k}");
        let name_len = read_u32(&mut input, &what)? as usize;
        if name_len > 4096 {
            return Err(CheckpointError::Header(format!("array {k} name length {name_len}")));
        }
        let mut name = vec![0u8; name_len];
        read_exact(&mut input, &mut name, &what)?;
        let name = String::from_utf8(name)
            .map_err(|_| CheckpointError::Header(format!("array {k} name is not UTF-8")))?;
        let rank = read_u32(&mut input, &name)? as usize;
        if rank > 8 {
            return Err(CheckpointError::Array {
                name,
                message: format!("rank {rank}"),
            });
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut input, &name)? as usize);
        }
        let len: usize = shape.iter().product();
        let mut bytes = vec![0u8; len * 8];
        read_exact(&mut input, &mut bytes, &name)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| CheckpointError::Array {
            name: name.clone(),
            message: e.to_string(),
        })?;
        arrays.insert(name, t);
    }
    let mut trailing = [0u8; 1];
    if input.read(&mut trailing)? != 0 {
        return Err(CheckpointError::Header("trailing bytes after the last array".into()));
    }

    let params = assemble(&config, &user_ids, &mut arrays)?;
    Ok(Checkpoint {
        config,
        params,
        vocab_hash,
        epoch,
        best_metric,
    })
}

fn assemble(
    config: &TrainConfig,
    user_ids: &[u64],
    arrays: &mut HashMap<String, Tensor>,
) -> Result<ModelParams, CheckpointError> {
    let take = |arrays: &mut HashMap<String, Tensor>, name: &str| {
        arrays.remove(name).ok_or_else(|| CheckpointError::Array {
            name: name.to_string(),
            message: "missing".into(),
        })
    };
    let embeddings = take(arrays, "embeddings.word")?;
    let users = take(arrays, "users.table")?;
    let d = config.dims;
    let mut params = ModelParams {
        embeddings: EmbeddingTable::new(Tensor::zeros(&[embeddings.rows(), d.word])),
        question_encoder: BiLstmEncoder::zeros(d.word, d.hidden),
        answer_encoder: BiLstmEncoder::zeros(d.word, d.hidden),
        users: UserTable::from_parts(Tensor::zeros(&[user_ids.len() + 1, d.user]), user_ids).map_err(|e| {
            CheckpointError::Array {
                name: "users.table".into(),
                message: e.to_string(),
            }
        })?,
        ntn: NtnParams::zeros(d.query(), d.answer(), d.slices),
    };
    arrays.insert("embeddings.word".into(), embeddings);
    arrays.insert("users.table".into(), users);
    for (name, slot) in params.tensors_mut() {
        let t = take(arrays, &name)?;
        if t.shape() != slot.shape() {
            return Err(CheckpointError::Array {
                message: format!("shape {:?}, expected {:?}", t.shape(), slot.shape()),
                name,
            });
        }
        *slot = t;
    }
    if let Some(extra) = arrays.keys().min() {
        return Err(CheckpointError::Array {
            name: extra.clone(),
            message: "unexpected array".into(),
        });
    }
    Ok(params)
}

pub fn save_checkpoint_file(cp: &Checkpoint, path: &std::path::Path) -> Result<(), CheckpointError> {
    let file = std::fs::File::create(path)?;
    save_checkpoint(cp, std::io::BufWriter::new(file))
}

pub fn load_checkpoint_file(path: &std::path::Path) -> Result<Checkpoint, CheckpointError> {
    let file = std::fs::File::open(path)?;
    load_checkpoint(std::io::BufReader::new(file))
}
