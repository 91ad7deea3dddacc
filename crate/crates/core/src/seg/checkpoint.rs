//! Checkpoint container: the weight-file magic at version 2, followed by
//! section-tagged, length-prefixed payloads. Unknown sections are skipped,
//! so the format can grow without breaking old readers.

use super::model::SegParams;
use super::SegConfig;
use crate::dam::{read_f64s, read_u32, write_f64s, WEIGHT_MAGIC};
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_VERSION: u16 = 2;
const SECTION_CONFIG: &[u8; 4] = b"SCFG";
const SECTION_PARAMS: &[u8; 4] = b"PARM";

fn write_section(w: &mut impl Write, tag: &[u8; 4], payload: &[u8]) -> Result<()> {
    w.write_all(tag)?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(payload)?;
    Ok(())
}

fn config_payload(cfg: &SegConfig) -> Vec<u8> {
    let fields = [
        cfg.image_size,
        cfg.patch_size,
        cfg.embed_dim,
        cfg.blocks,
        cfg.heads,
        cfg.classes,
        cfg.memory_slots,
        cfg.use_memory as usize,
    ];
    fields
        .iter()
        .flat_map(|&v| (v as u32).to_le_bytes())
        .collect()
}

fn parse_config(payload: &[u8]) -> Result<SegConfig> {
    let mut r = payload;
    let mut next = || read_u32(&mut r).map(|v| v as usize);
    let cfg = SegConfig {
        image_size: next()?,
        patch_size: next()?,
        embed_dim: next()?,
        blocks: next()?,
        heads: next()?,
        classes: next()?,
        memory_slots: next()?,
        use_memory: next()? != 0,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn params_payload(params: &SegParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend((params.entries().len() as u32).to_le_bytes());
    for (name, tensor) in params.entries() {
        out.extend((name.len() as u32).to_le_bytes());
        out.extend(name.as_bytes());
        out.extend((tensor.shape.len() as u32).to_le_bytes());
        for &d in &tensor.shape {
            out.extend((d as u32).to_le_bytes());
        }
        write_f64s(&mut out, &tensor.data)?;
    }
    Ok(out)
}

fn parse_params(payload: &[u8], cfg: &SegConfig) -> Result<SegParams> {
    let mut r = payload;
    let count = read_u32(&mut r)? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::Format(format!(
                "implausible parameter name length {name_len}"
            )));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Format("parameter name truncated".to_string()))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Format("parameter name is not UTF-8".to_string()))?;
        let ndim = read_u32(&mut r)? as usize;
        if ndim == 0 || ndim > 4 {
            return Err(Error::Format(format!(
                "parameter {name}: implausible rank {ndim}"
            )));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        if numel == 0 || numel > 1 << 28 {
            return Err(Error::Format(format!(
                "parameter {name}: implausible shape {shape:?}"
            )));
        }
        let data = read_f64s(&mut r, numel)?;
        entries.push((name, Tensor::new(shape, data)?));
    }
    SegParams::from_entries(cfg, entries)
}

pub fn write_checkpoint(
    cfg: &SegConfig,
    params: &SegParams,
    w: &mut impl Write,
) -> Result<()> {
    w.write_all(WEIGHT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    write_section(w, SECTION_CONFIG, &config_payload(cfg))?;
    write_section(w, SECTION_PARAMS, &params_payload(params)?)
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(SegConfig, SegParams)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint truncated".to_string()))?;
    if &magic != WEIGHT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}; expected {WEIGHT_MAGIC:?}"
        )));
    }
    let mut ver = [0u8; 2];
    r.read_exact(&mut ver)
        .map_err(|_| Error::Format("checkpoint truncated".to_string()))?;
    let version = u16::from_le_bytes(ver);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}; expected {CHECKPOINT_VERSION}"
        )));
    }

    let mut config: Option<SegConfig> = None;
    let mut params_payload_buf: Option<Vec<u8>> = None;
    loop {
        let mut first = [0u8; 1];
        match r.read(&mut first) {
            Ok(0) => break,
            Ok(_) => {}
            Err(e) => return Err(e.into()),
        }
        let mut rest = [0u8; 3];
        r.read_exact(&mut rest)
            .map_err(|_| Error::Format("section tag truncated".to_string()))?;
        let tag = [first[0], rest[0], rest[1], rest[2]];
        let mut len_bytes = [0u8; 8];
        r.read_exact(&mut len_bytes)
            .map_err(|_| Error::Format("section length truncated".to_string()))?;
        let len = u64::from_le_bytes(len_bytes) as usize;
        if len > 1 << 31 {
            return Err(Error::Format(format!("implausible section length {len}")));
        }
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload)
            .map_err(|_| Error::Format("section payload truncated".to_string()))?;
        match &tag {
            t if t == SECTION_CONFIG => config = Some(parse_config(&payload)?),
            t if t == SECTION_PARAMS => params_payload_buf = Some(payload),
            _ => {}
        }
    }
    let cfg = config.ok_or_else(|| Error::Format("missing configuration section".to_string()))?;
    let payload = params_payload_buf
        .ok_or_else(|| Error::Format("missing parameter section".to_string()))?;
    let params = parse_params(&payload, &cfg)?;
    Ok((cfg, params))
}

pub fn save_checkpoint(path: &Path, cfg: &SegConfig, params: &SegParams) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(cfg, params, &mut file)
}

pub fn load_checkpoint(path: &Path) -> Result<(SegConfig, SegParams)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut file)
}
