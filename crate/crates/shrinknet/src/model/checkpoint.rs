//! Self-describing binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      b"SHRK"
//! version    u32
//! config_len u32, then `config_len` bytes of key=value lines
//! count      u32 named tensors, each:
//!   name_len u16, name bytes
//!   rank     u8, then rank * u32 extents
//!   data     numel * f32
//! ```
//!
//! Tensors appear in a fixed order: every trainable parameter in creation
//! order, then batch-norm running statistics. Values are stored as 32-bit
//! floats; loading a saved file twice yields bitwise-identical models.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{build_cnn_baseline, build_drsn, ModelConfig, ShrinkNet};
use crate::nn::ThresholdMode;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"SHRK";

fn config_text(model: &ShrinkNet) -> String {
    let c = &model.config;
    let join = |v: &[usize]| {
        v.iter()
            .map(|x| x.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    format!(
        "input_channels={}\ninput_width={}\nstage_channels={}\nblocks_per_stage={}\nfc_hidden={}\nnum_classes={}\nmode={}\nseed={}\nshrinkage={}\n",
        c.input_channels,
        c.input_width,
        join(&c.stage_channels),
        join(&c.blocks_per_stage),
        c.fc_hidden.map_or_else(|| "auto".to_string(), |m| m.to_string()),
        c.num_classes,
        c.mode.as_str(),
        c.seed,
        model.shrinkage,
    )
}

fn parse_config(text: &str) -> Result<(ModelConfig, bool)> {
    let mut fields = std::collections::HashMap::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            fields.insert(k.to_string(), v.to_string());
        }
    }
    let get = |k: &str| -> Result<String> {
        fields
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Checkpoint(format!("config missing key `{k}`")))
    };
    let usize_of = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("config key `{k}` is not an integer")))
    };
    let list_of = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("config key `{k}` has a bad entry")))
            })
            .collect()
    };
    let fc_hidden = match get("fc_hidden")?.as_str() {
        "auto" => None,
        s => Some(
            s.parse()
                .map_err(|_| Error::Checkpoint("config key `fc_hidden` is invalid".into()))?,
        ),
    };
    let config = ModelConfig {
        input_channels: usize_of("input_channels")?,
        input_width: usize_of("input_width")?,
        stage_channels: list_of("stage_channels")?,
        blocks_per_stage: list_of("blocks_per_stage")?,
        fc_hidden,
        num_classes: usize_of("num_classes")?,
        mode: ThresholdMode::parse(&get("mode")?)?,
        seed: get("seed")?
            .parse()
            .map_err(|_| Error::Checkpoint("config key `seed` is invalid".into()))?,
    };
    let shrinkage = get("shrinkage")? == "true";
    Ok((config, shrinkage))
}

pub fn save_checkpoint(model: &ShrinkNet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e: std::io::Error| Error::io(path, e);

    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes()).map_err(io)?;
    let config = config_text(model);
    w.write_all(&(config.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(config.as_bytes()).map_err(io)?;

    let tensors = model.state_tensors();
    w.write_all(&(tensors.len() as u32).to_le_bytes()).map_err(io)?;
    for (name, shape, data) in &tensors {
        w.write_all(&(name.len() as u16).to_le_bytes()).map_err(io)?;
        w.write_all(name.as_bytes()).map_err(io)?;
        w.write_all(&[shape.len() as u8]).map_err(io)?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes()).map_err(io)?;
        }
        for &v in data {
            w.write_all(&(v as f32).to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ShrinkNet> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let corrupt = |what: &str| Error::Checkpoint(format!("corrupt file {}: {what}", path.display()));

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| corrupt("truncated header"))?;
    if &magic != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = read_u32(&mut r).ok_or_else(|| corrupt("truncated version"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let config_len = read_u32(&mut r).ok_or_else(|| corrupt("truncated config length"))? as usize;
    let mut config_bytes = vec![0u8; config_len];
    r.read_exact(&mut config_bytes)
        .map_err(|_| corrupt("truncated config"))?;
    let config_text =
        String::from_utf8(config_bytes).map_err(|_| corrupt("config is not UTF-8"))?;
    let (config, shrinkage) = parse_config(&config_text)?;

    let mut model = if shrinkage {
        build_drsn(config)?
    } else {
        build_cnn_baseline(config)?
    };

    let count = read_u32(&mut r).ok_or_else(|| corrupt("truncated tensor count"))? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let mut len_bytes = [0u8; 2];
        r.read_exact(&mut len_bytes)
            .map_err(|_| corrupt("truncated tensor name"))?;
        let name_len = u16::from_le_bytes(len_bytes) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)
            .map_err(|_| corrupt("truncated tensor name"))?;
        let name = String::from_utf8(name_bytes).map_err(|_| corrupt("tensor name not UTF-8"))?;
        let mut rank = [0u8; 1];
        r.read_exact(&mut rank)
            .map_err(|_| corrupt("truncated tensor rank"))?;
        let mut shape = Vec::with_capacity(rank[0] as usize);
        for _ in 0..rank[0] {
            shape.push(read_u32(&mut r).ok_or_else(|| corrupt("truncated tensor shape"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)
                .map_err(|_| corrupt("truncated tensor data"))?;
            data.push(f32::from_le_bytes(b) as f64);
        }
        entries.push((name, shape, data));
    }

    model.load_state(&entries)?;
    Ok(model)
}

fn read_u32(r: &mut impl Read) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}
